#include "jqas/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "jqas/error.hpp"
#include "jqas/sigmoid.hpp"

namespace jqas::quant {

template <typename T>
NormParams norm_fit(std::span<const T> w) {
  if (w.empty()) throw ShapeError("norm_fit: empty tensor");
  const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  NormParams p;
  p.offset = static_cast<double>(*lo);
  p.scale = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (p.scale < kDegenerateScale) {
    p.degenerate = true;
    p.scale = 0.0;
  }
  return p;
}

double q_round(double x, int bits) {
  if (bits < 1 || bits > 30) {
    throw std::out_of_range("q_round: bit count " + std::to_string(bits) + " outside [1,30]");
  }
  if (!(x >= 0.0 && x <= 1.0)) {
    throw std::out_of_range("q_round: value " + std::to_string(x) + " outside [0,1]");
  }
  const double levels = std::ldexp(1.0, bits);
  const double scaled = x * levels;
  const double floor_v = std::floor(scaled);
  const double zeta = (scaled - floor_v) > 0.5 ? 1.0 : 0.0;
  return (floor_v + zeta) / levels;
}

namespace {

// Norm() of a value already covered by the fitted range may land a hair
// outside [0,1] after a float round trip.
double normalize_clamped(const NormParams& norm, double w) {
  return std::clamp(norm.normalize(w), 0.0, 1.0);
}

}  // namespace

template <typename T>
std::vector<T> quantize(std::span<const T> w, int bits, const NormParams& norm) {
  std::vector<T> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = static_cast<T>(norm.denormalize(q_round(normalize_clamped(norm, w[i]), bits)));
  }
  return out;
}

template <typename T>
std::vector<T> quantize(std::span<const T> w, int bits) {
  return quantize<T>(w, bits, norm_fit<T>(w));
}

template <typename T>
BitDecomposition decompose(std::span<const T> w) {
  BitDecomposition d;
  d.norm = norm_fit<T>(w);
  d.grid16.resize(w.size());
  d.residual_9_16.resize(w.size());
  d.residual_5_8.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = normalize_clamped(d.norm, w[i]);
    const double g16 = q_round(x, 16);
    const double g8 = q_round(x, 8);
    const double g4 = q_round(x, 4);
    d.grid16[i] = g16;
    d.residual_9_16[i] = g16 - g8;
    d.residual_5_8[i] = g8 - g4;
  }
  return d;
}

template <typename T>
std::vector<T> BitDecomposition::w16() const {
  std::vector<T> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<T>(norm.denormalize(grid16[i]));
  return out;
}

template <typename T>
std::vector<T> BitDecomposition::r_9_16() const {
  std::vector<T> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<T>(residual_9_16[i] * norm.scale);
  return out;
}

template <typename T>
std::vector<T> BitDecomposition::r_5_8() const {
  std::vector<T> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<T>(residual_5_8[i] * norm.scale);
  return out;
}

namespace {

double scaled_norm_sq(const std::vector<double>& r, double scale) {
  double acc = 0.0;
  for (double v : r) acc += v * v;
  return acc * scale * scale;
}

}  // namespace

double BitDecomposition::r_9_16_norm_sq() const { return scaled_norm_sq(residual_9_16, norm.scale); }
double BitDecomposition::r_5_8_norm_sq() const { return scaled_norm_sq(residual_5_8, norm.scale); }

BitMasks bit_masks(const QuantThresholds& t, const BitDecomposition& d, ComposeMode mode,
                   Rng* rng) {
  const double outer = drop_indicator(t.t_9_16, d.r_9_16_norm_sq());
  const double inner = drop_indicator(t.t_5_8, d.r_5_8_norm_sq());
  switch (mode) {
    case ComposeMode::Soft:
      return {sigmoid(outer), sigmoid(inner)};
    case ComposeMode::Hard:
      return {step01(outer), step01(inner)};
    case ComposeMode::Sampled: {
      if (!rng) throw std::invalid_argument("bit_masks: sampled mode needs an RNG");
      const bool drop_outer = bernoulli(*rng, sigmoid(outer));
      const bool drop_inner = bernoulli(*rng, sigmoid(inner));
      return {drop_outer ? 1.0 : 0.0, drop_inner ? 1.0 : 0.0};
    }
  }
  return {};
}

BitMasks masks_for_bits(int bits) {
  switch (bits) {
    case 16:
      return {0.0, 0.0};
    case 8:
      return {1.0, 0.0};
    case 4:
      return {1.0, 1.0};
    default:
      throw std::invalid_argument("unsupported bit width " + std::to_string(bits) +
                                  " (expected 4, 8 or 16)");
  }
}

template <typename T>
std::vector<T> bit_share(const BitDecomposition& d, const BitMasks& masks) {
  std::vector<T> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v =
        d.grid16[i] - masks.drop_9_16 * (d.residual_9_16[i] + masks.drop_5_8 * d.residual_5_8[i]);
    out[i] = static_cast<T>(d.norm.denormalize(v));
  }
  return out;
}

template <typename T>
std::vector<T> bit_share(const BitDecomposition& d, const QuantThresholds& t, ComposeMode mode,
                         Rng* rng) {
  return bit_share<T>(d, bit_masks(t, d, mode, rng));
}

int effective_bits(const BitMasks& hard) {
  if (hard.drop_9_16 < 0.5) return 16;
  return hard.drop_5_8 < 0.5 ? 8 : 4;
}

int effective_bits(const QuantThresholds& t, const BitDecomposition& d) {
  return effective_bits(bit_masks(t, d, ComposeMode::Hard));
}

bool is_search_bits(int bits) { return bits == 4 || bits == 8 || bits == 16; }

#define JQAS_INSTANTIATE_QUANT(T)                                                           \
  template NormParams norm_fit<T>(std::span<const T>);                                     \
  template std::vector<T> quantize<T>(std::span<const T>, int, const NormParams&);         \
  template std::vector<T> quantize<T>(std::span<const T>, int);                            \
  template BitDecomposition decompose<T>(std::span<const T>);                              \
  template std::vector<T> BitDecomposition::w16<T>() const;                                \
  template std::vector<T> BitDecomposition::r_9_16<T>() const;                             \
  template std::vector<T> BitDecomposition::r_5_8<T>() const;                              \
  template std::vector<T> bit_share<T>(const BitDecomposition&, const BitMasks&);          \
  template std::vector<T> bit_share<T>(const BitDecomposition&, const QuantThresholds&,    \
                                       ComposeMode, Rng*);

JQAS_INSTANTIATE_QUANT(float)
JQAS_INSTANTIATE_QUANT(double)

#undef JQAS_INSTANTIATE_QUANT

}  // namespace jqas::quant
