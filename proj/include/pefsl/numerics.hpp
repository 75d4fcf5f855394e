#pragma once

#include <cstdint>

#include "pefsl/nn_ir.hpp"
#include "pefsl/tensor.hpp"

namespace pefsl {

// Q8.8: 16-bit signed fixed point, 8 integer bits (sign-inclusive),
// 8 fractional bits. Range [-128, +127.99609375].
struct FixedFormat {
  int total_bits = 16;
  int integer_bits = 8;
  int fractional_bits = 8;

  int scale() const { return 1 << fractional_bits; }
  double min_value() const { return -static_cast<double>(1 << (integer_bits - 1)); }
  double max_value() const { return -min_value() - 1.0 / scale(); }
};

// Round-to-nearest-even, exact on halfway cases.
double round_half_even(double x);

// Rounds num/2^shift (resp. num/den) to nearest, ties to even.
int64_t round_shift_half_even(int64_t num, int shift);
int64_t round_div_half_even(int64_t num, int64_t den);

int16_t saturate16(int64_t v);

// round(x * 2^frac) saturated to int16. Throws on non-finite input.
int16_t quantize(double x, FixedFormat fmt = {});
double dequantize(int16_t raw, FixedFormat fmt = {});

Tensor quantize_tensor(const Tensor& t, FixedFormat fmt = {});
Tensor dequantize_tensor(const Tensor& t, FixedFormat fmt = {});
WeightMap quantize_weights(const WeightMap& w, FixedFormat fmt = {});

enum class ExecMode { Float, Fixed };

struct ExecStats {
  long long mac_count = 0;
};

// Trusted naive executor for a shape-inferred, BN-folded graph.
// Float mode: double accumulation per output element, sequential k order.
// Fixed mode: int64 accumulators, one round+saturate per output element.
// The input tensor dtype must match the mode; so must every weight tensor.
Tensor execute_reference(const Graph& graph, const WeightMap& weights, const Tensor& input,
                         ExecMode mode, ExecStats* stats = nullptr);

} // namespace pefsl
