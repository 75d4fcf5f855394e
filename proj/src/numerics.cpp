#include "pefsl/numerics.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "pefsl/errors.hpp"

namespace pefsl {

double round_half_even(double x) {
  const double f = std::floor(x);
  const double d = x - f;
  if (d < 0.5) return f;
  if (d > 0.5) return f + 1.0;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

int64_t round_shift_half_even(int64_t num, int shift) {
  if (shift == 0) return num;
  const int64_t q = num >> shift;           // floor
  const int64_t rem = num - (q << shift);   // in [0, 2^shift)
  const int64_t half = int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1))) return q + 1;
  return q;
}

int64_t round_div_half_even(int64_t num, int64_t den) {
  int64_t q = num / den;
  int64_t rem = num % den;
  if (rem < 0) { q -= 1; rem += den; } // floor division
  if (2 * rem > den || (2 * rem == den && (q & 1))) return q + 1;
  return q;
}

int16_t saturate16(int64_t v) {
  if (v > 32767) return 32767;
  if (v < -32768) return -32768;
  return static_cast<int16_t>(v);
}

int16_t quantize(double x, FixedFormat fmt) {
  if (!std::isfinite(x)) throw ValidationError("quantize: non-finite input");
  return saturate16(static_cast<int64_t>(round_half_even(x * fmt.scale())));
}

double dequantize(int16_t raw, FixedFormat fmt) {
  return static_cast<double>(raw) / fmt.scale();
}

Tensor quantize_tensor(const Tensor& t, FixedFormat fmt) {
  if (t.dtype == DType::Q8_8) return t;
  Tensor out = make_q(t.dims);
  for (size_t i = 0; i < t.f32.size(); ++i) out.q[i] = quantize(t.f32[i], fmt);
  return out;
}

Tensor dequantize_tensor(const Tensor& t, FixedFormat fmt) {
  if (t.dtype == DType::Float32) return t;
  Tensor out = make_f32(t.dims);
  for (size_t i = 0; i < t.q.size(); ++i) out.f32[i] = static_cast<float>(dequantize(t.q[i], fmt));
  return out;
}

WeightMap quantize_weights(const WeightMap& w, FixedFormat fmt) {
  WeightMap out;
  for (const auto& [name, t] : w) out[name] = quantize_tensor(t, fmt);
  return out;
}

namespace {

constexpr int kFrac = 8;

struct Executor {
  const Graph& graph;
  const WeightMap& weights;
  ExecMode mode;
  ExecStats* stats;
  std::map<int, Tensor> out;

  const Tensor& weight(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end()) throw ValidationError("missing weight tensor: " + name);
    const bool want_q = mode == ExecMode::Fixed;
    if ((it->second.dtype == DType::Q8_8) != want_q)
      throw ValidationError("weight dtype does not match execution mode: " + name);
    return it->second;
  }

  void conv(const Layer& n, const Tensor& in) {
    const Tensor& w = weight(n.weight_name);
    const Tensor* bias = nullptr;
    if (!n.bias_name.empty()) bias = &weight(n.bias_name);
    const int k = n.kernel, s = n.stride, pad = (k - 1) / 2;
    const int ih = static_cast<int>(in.dims[1]), iw = static_cast<int>(in.dims[2]);
    const int oc = n.out_channels, ic = n.in_channels;
    const int oh = n.out_shape.h, ow = n.out_shape.w;
    Tensor& o = out[n.id];
    o = mode == ExecMode::Fixed
            ? make_q({static_cast<uint32_t>(oc), static_cast<uint32_t>(oh), static_cast<uint32_t>(ow)})
            : make_f32({static_cast<uint32_t>(oc), static_cast<uint32_t>(oh), static_cast<uint32_t>(ow)});
    for (int c = 0; c < oc; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          if (mode == ExecMode::Float) {
            double acc = 0.0;
            for (int cc = 0; cc < ic; ++cc)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = y * s + ky - pad, ix = x * s + kx - pad;
                  if (stats) ++stats->mac_count; // padded taps still occupy the array
                  if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
                  acc += static_cast<double>(in.f32[(cc * ih + iy) * iw + ix]) *
                         w.f32[((c * ic + cc) * k + ky) * k + kx];
                }
            if (bias) acc += bias->f32[c];
            o.f32[(c * oh + y) * ow + x] = static_cast<float>(acc);
          } else {
            int64_t acc = 0;
            for (int cc = 0; cc < ic; ++cc)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = y * s + ky - pad, ix = x * s + kx - pad;
                  if (stats) ++stats->mac_count; // padded taps still occupy the array
                  if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
                  acc += static_cast<int64_t>(in.q[(cc * ih + iy) * iw + ix]) *
                         w.q[((c * ic + cc) * k + ky) * k + kx];
                }
            if (bias) acc += static_cast<int64_t>(bias->q[c]) << kFrac;
            o.q[(c * oh + y) * ow + x] = saturate16(round_shift_half_even(acc, kFrac));
          }
        }
  }

  void maxpool(const Layer& n, const Tensor& in) {
    const int c = static_cast<int>(in.dims[0]);
    const int ih = static_cast<int>(in.dims[1]), iw = static_cast<int>(in.dims[2]);
    const int oh = n.out_shape.h, ow = n.out_shape.w;
    Tensor& o = out[n.id];
    o = mode == ExecMode::Fixed
            ? make_q({static_cast<uint32_t>(c), static_cast<uint32_t>(oh), static_cast<uint32_t>(ow)})
            : make_f32({static_cast<uint32_t>(c), static_cast<uint32_t>(oh), static_cast<uint32_t>(ow)});
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          if (mode == ExecMode::Float) {
            float m = -std::numeric_limits<float>::infinity();
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = 2 * y + dy, ix = 2 * x + dx;
                if (iy < ih && ix < iw) m = std::max(m, in.f32[(cc * ih + iy) * iw + ix]);
              }
            o.f32[(cc * oh + y) * ow + x] = m;
          } else {
            int16_t m = std::numeric_limits<int16_t>::min();
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = 2 * y + dy, ix = 2 * x + dx;
                if (iy < ih && ix < iw) m = std::max(m, in.q[(cc * ih + iy) * iw + ix]);
              }
            o.q[(cc * oh + y) * ow + x] = m;
          }
        }
  }

  void run() {
    for (const auto& n : graph.nodes) {
      const Tensor& in0 = n.inputs.at(0) == kGraphInput ? out.at(kGraphInput) : out.at(n.inputs.at(0));
      switch (n.kind) {
        case LayerKind::BatchNorm:
          throw ValidationError("execute_reference requires a BN-folded graph");
        case LayerKind::Conv2D:
          conv(n, in0);
          break;
        case LayerKind::ReLU: {
          Tensor o = in0;
          if (mode == ExecMode::Float)
            for (auto& v : o.f32) v = std::max(v, 0.0f);
          else
            for (auto& v : o.q) v = std::max<int16_t>(v, 0);
          out[n.id] = std::move(o);
          break;
        }
        case LayerKind::MaxPool2x2:
          maxpool(n, in0);
          break;
        case LayerKind::Add: {
          const Tensor& in1 = out.at(n.inputs.at(1));
          Tensor o = in0;
          if (mode == ExecMode::Float)
            for (size_t i = 0; i < o.f32.size(); ++i) o.f32[i] += in1.f32[i];
          else
            for (size_t i = 0; i < o.q.size(); ++i)
              o.q[i] = saturate16(static_cast<int64_t>(o.q[i]) + in1.q[i]);
          out[n.id] = std::move(o);
          break;
        }
        case LayerKind::GlobalAvgPool: {
          const int c = static_cast<int>(in0.dims[0]);
          const long long count = static_cast<long long>(in0.dims[1]) * in0.dims[2];
          Tensor o = mode == ExecMode::Fixed ? make_q({static_cast<uint32_t>(c), 1, 1})
                                             : make_f32({static_cast<uint32_t>(c), 1, 1});
          for (int cc = 0; cc < c; ++cc) {
            if (mode == ExecMode::Float) {
              double sum = 0.0;
              for (long long i = 0; i < count; ++i) sum += in0.f32[cc * count + i];
              o.f32[cc] = static_cast<float>(sum / static_cast<double>(count));
            } else {
              int64_t sum = 0;
              for (long long i = 0; i < count; ++i) sum += in0.q[cc * count + i];
              o.q[cc] = saturate16(round_div_half_even(sum, count));
            }
          }
          out[n.id] = std::move(o);
          break;
        }
      }
    }
  }
};

} // namespace

Tensor execute_reference(const Graph& graph, const WeightMap& weights, const Tensor& input,
                         ExecMode mode, ExecStats* stats) {
  if (!graph.shapes_inferred) throw ValidationError("execute_reference requires shape inference");
  if (input.dims.size() != 3 || static_cast<int>(input.dims[0]) != graph.input_shape.c ||
      static_cast<int>(input.dims[1]) != graph.input_shape.h ||
      static_cast<int>(input.dims[2]) != graph.input_shape.w)
    throw ValidationError("shape-mismatch: input does not match graph input shape");
  if ((input.dtype == DType::Q8_8) != (mode == ExecMode::Fixed))
    throw ValidationError("input dtype does not match execution mode");
  Executor ex{graph, weights, mode, stats, {}};
  ex.out[kGraphInput] = input;
  ex.run();
  if (graph.nodes.empty()) return input;
  return ex.out.at(graph.nodes.back().id);
}

} // namespace pefsl
