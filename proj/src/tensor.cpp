#include "pefsl/tensor.hpp"

#include <cstring>
#include <fstream>

#include "pefsl/errors.hpp"

namespace pefsl {

Tensor make_f32(std::vector<uint32_t> dims) {
  Tensor t;
  t.dtype = DType::Float32;
  t.dims = std::move(dims);
  t.f32.assign(t.element_count(), 0.0f);
  return t;
}

Tensor make_q(std::vector<uint32_t> dims) {
  Tensor t;
  t.dtype = DType::Q8_8;
  t.dims = std::move(dims);
  t.q.assign(t.element_count(), 0);
  return t;
}

namespace {

constexpr char kMagic[4] = {'P', 'E', 'F', 'W'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw IoError("pefw: truncated file");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

} // namespace

void save_pefw(const std::string& path, const WeightMap& weights) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pefw: cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    write_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<uint8_t>(os, static_cast<uint8_t>(t.dtype));
    write_le<uint8_t>(os, static_cast<uint8_t>(t.dims.size()));
    for (uint32_t d : t.dims) write_le<uint32_t>(os, d);
    if (t.dtype == DType::Float32) {
      for (float v : t.f32) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_le<uint32_t>(os, bits);
      }
    } else {
      for (int16_t v : t.q) write_le<int16_t>(os, v);
    }
  }
  if (!os) throw IoError("pefw: write failed: " + path);
}

WeightMap load_pefw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pefw: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("pefw: bad magic");
  uint32_t version = read_le<uint32_t>(is);
  if (version != kVersion) throw IoError("pefw: unsupported version " + std::to_string(version));
  uint32_t count = read_le<uint32_t>(is);
  WeightMap out;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = read_le<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("pefw: truncated file");
    uint8_t dtype = read_le<uint8_t>(is);
    if (dtype > 1) throw IoError("pefw: unknown dtype code " + std::to_string(dtype));
    uint8_t ndim = read_le<uint8_t>(is);
    std::vector<uint32_t> dims(ndim);
    for (auto& d : dims) d = read_le<uint32_t>(is);
    Tensor t = dtype == 0 ? make_f32(dims) : make_q(dims);
    size_t n = t.element_count();
    if (dtype == 0) {
      for (size_t j = 0; j < n; ++j) {
        uint32_t bits = read_le<uint32_t>(is);
        std::memcpy(&t.f32[j], &bits, 4);
      }
    } else {
      for (size_t j = 0; j < n; ++j) t.q[j] = read_le<int16_t>(is);
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

uint64_t fnv1a64(const void* data, size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t tensor_checksum(const Tensor& t) {
  if (t.dtype == DType::Float32) return fnv1a64(t.f32.data(), t.f32.size() * sizeof(float));
  return fnv1a64(t.q.data(), t.q.size() * sizeof(int16_t));
}

} // namespace pefsl
