#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pefsl {

// Dtype codes as stored in the "PEFW" weight file.
enum class DType : uint8_t { Float32 = 0, Q8_8 = 1 };

// Dense row-major tensor. Exactly one of f32/q holds the payload,
// selected by dtype.
struct Tensor {
  DType dtype = DType::Float32;
  std::vector<uint32_t> dims;
  std::vector<float> f32;
  std::vector<int16_t> q;

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

Tensor make_f32(std::vector<uint32_t> dims);
Tensor make_q(std::vector<uint32_t> dims);

using WeightMap = std::map<std::string, Tensor>;

// "PEFW" little-endian container: magic, u32 version=1, u32 tensor count;
// per tensor: u16 name length, name bytes, u8 dtype, u8 ndim, u32 dims[],
// raw row-major payload.
void save_pefw(const std::string& path, const WeightMap& weights);
WeightMap load_pefw(const std::string& path);

// 64-bit FNV-1a over raw bytes.
uint64_t fnv1a64(const void* data, size_t bytes);
uint64_t tensor_checksum(const Tensor& t);

} // namespace pefsl
