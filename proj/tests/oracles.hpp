#pragma once

// Direct loop implementations used as independent references. They share
// nothing with the library beyond the Tensor container.

#include <cmath>
#include <random>
#include <vector>

#include "jqas/tensor.hpp"

namespace oracle {

using jqas::Shape;
using jqas::Tensor;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& gen, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(d(gen));
  return t;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad, int groups) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int k = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  const int kpg = k / groups;
  Tensor<T> out(Shape{std::size_t(n), std::size_t(k), std::size_t(oh), std::size_t(ow)});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < k; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          const int g = o / kpg;
          for (int ci = 0; ci < cg; ++ci)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                const int iy = y * stride + dy - pad, ix = xx * stride + dx - pad;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                const int cin = g * cg + ci;
                acc += double(x[((b * c + cin) * h + iy) * wd + ix]) *
                       double(w[((o * cg + ci) * kh + dy) * kw + dx]);
              }
          out[((b * k + o) * oh + y) * ow + xx] = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(1);
  Tensor<T> out(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = bias[j];
      for (std::size_t q = 0; q < d; ++q) acc += double(x[i * d + q]) * double(w[q * k + j]);
      out[i * k + j] = static_cast<T>(acc);
    }
  return out;
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += x[i * hw + p];
    out[i] = static_cast<T>(acc / hw);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) mean += x[(b * c + ch) * hw + p];
    mean /= double(n * hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = x[(b * c + ch) * hw + p] - mean;
        var += d * d;
      }
    var /= double(n * hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (b * c + ch) * hw + p;
        out[i] = static_cast<T>(gamma[ch] * (x[i] - mean) / std::sqrt(var + eps) + beta[ch]);
      }
  }
  return out;
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, double(logits[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(double(logits[i * k + j]) - mx);
    total += -(double(logits[i * k + labels[i]]) - mx - std::log(z));
  }
  return total / double(n);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Eq.-free restatement of the rounding rule: nearest grid point with exact
// halves going down.
inline double round_half_down(double x, int bits) {
  const double s = std::ldexp(1.0, bits);
  const double y = x * s;
  const double f = std::floor(y);
  return (y - f > 0.5 ? f + 1.0 : f) / s;
}

}  // namespace oracle
