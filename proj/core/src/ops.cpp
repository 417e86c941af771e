#include "jqas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace jqas::ops {
namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(shape));
  }
}

struct ConvGeometry {
  int n, c, h, w;
  int k_out, k_in, kh, kw;
  int stride, pad, groups;
  int ho, wo;
};

// Output index range [lo, hi] such that 0 <= o*stride + offset < size.
std::pair<int, int> valid_range(int offset, int size, int stride, int out_size) {
  int lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  int last = size - 1 - offset;
  if (last < 0) return {0, -1};
  int hi = std::min(last / stride, out_size - 1);
  return {lo, hi};
}

ConvGeometry conv_geometry(const Shape& xs, const Shape& ks, int stride, int padding, int groups) {
  require_rank(xs, 4, "conv2d input");
  require_rank(ks, 4, "conv2d kernel");
  ConvGeometry g{};
  g.n = static_cast<int>(xs[0]);
  g.c = static_cast<int>(xs[1]);
  g.h = static_cast<int>(xs[2]);
  g.w = static_cast<int>(xs[3]);
  g.k_out = static_cast<int>(ks[0]);
  g.k_in = static_cast<int>(ks[1]);
  g.kh = static_cast<int>(ks[2]);
  g.kw = static_cast<int>(ks[3]);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (groups < 1) throw ShapeError("conv2d: groups must be >= 1");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (g.c % groups != 0) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(g.c) +
                     " not divisible by groups = " + std::to_string(groups));
  }
  if (g.k_out % groups != 0) {
    throw ShapeError("conv2d: kernel output channels (dim 0) = " + std::to_string(g.k_out) +
                     " not divisible by groups = " + std::to_string(groups));
  }
  if (g.k_in != g.c / groups) {
    throw ShapeError("conv2d: kernel input channels (dim 1) = " + std::to_string(g.k_in) +
                     ", expected C/groups = " + std::to_string(g.c / groups));
  }
  auto odd_size = [](int k) { return k == 1 || k == 3 || k == 5; };
  if (!odd_size(g.kh) || !odd_size(g.kw)) {
    throw ShapeError("conv2d: kernel spatial size (dims 2,3) must be 1, 3 or 5, got " +
                     shape_str(ks));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw || g.ho < 1 || g.wo < 1) {
    throw ShapeError("conv2d: input spatial size " + shape_str(xs) + " too small for kernel " +
                     shape_str(ks));
  }
  return g;
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* k, T* out) {
  const int ko_per_group = g.k_out / g.groups;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.k_out; ++oc) {
      const int group = oc / ko_per_group;
      T* o = out + (static_cast<std::size_t>(n) * g.k_out + oc) * out_plane;
      for (int icl = 0; icl < g.k_in; ++icl) {
        const int ic = group * g.k_in + icl;
        const T* xin = x + (static_cast<std::size_t>(n) * g.c + ic) * in_plane;
        const T* kk = k + (static_cast<std::size_t>(oc) * g.k_in + icl) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          const auto [oh_lo, oh_hi] = valid_range(ky - g.pad, g.h, g.stride, g.ho);
          for (int kx = 0; kx < g.kw; ++kx) {
            const T wv = kk[ky * g.kw + kx];
            if (wv == T{0}) continue;
            const auto [ow_lo, ow_hi] = valid_range(kx - g.pad, g.w, g.stride, g.wo);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              T* orow = o + static_cast<std::size_t>(oh) * g.wo;
              const T* xrow = xin + static_cast<std::size_t>(oh * g.stride + ky - g.pad) * g.w;
              const int xoff = kx - g.pad;
              if (g.stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[ow + xoff];
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                  orow[ow] += wv * xrow[ow * g.stride + xoff];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* k, const T* gout, T* gx, T* gk) {
  const int ko_per_group = g.k_out / g.groups;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.k_out; ++oc) {
      const int group = oc / ko_per_group;
      const T* go = gout + (static_cast<std::size_t>(n) * g.k_out + oc) * out_plane;
      for (int icl = 0; icl < g.k_in; ++icl) {
        const int ic = group * g.k_in + icl;
        const std::size_t in_base = (static_cast<std::size_t>(n) * g.c + ic) * in_plane;
        const std::size_t k_base = (static_cast<std::size_t>(oc) * g.k_in + icl) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
          const auto [oh_lo, oh_hi] = valid_range(ky - g.pad, g.h, g.stride, g.ho);
          for (int kx = 0; kx < g.kw; ++kx) {
            const auto [ow_lo, ow_hi] = valid_range(kx - g.pad, g.w, g.stride, g.wo);
            const T wv = k[k_base + ky * g.kw + kx];
            T kgrad{0};
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const T* grow = go + static_cast<std::size_t>(oh) * g.wo;
              const std::size_t xrow =
                  in_base + static_cast<std::size_t>(oh * g.stride + ky - g.pad) * g.w;
              for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                const std::size_t xi = xrow + ow * g.stride + kx - g.pad;
                if (gk) kgrad += x[xi] * grow[ow];
                if (gx) gx[xi] += wv * grow[ow];
              }
            }
            if (gk) gk[k_base + ky * g.kw + kx] += kgrad;
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int stride, int padding, int groups) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding, groups);
  Tensor<T> out(Shape{static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.k_out),
                      static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  conv_forward(g, input.value().raw(), kernel.value().raw(), out.raw());
  return make_op_result<T>(std::move(out), {input, kernel}, [g](Node<T>& self) {
    auto& in = *self.parents[0];
    auto& kn = *self.parents[1];
    T* gx = in.requires_grad ? in.grad_buffer().raw() : nullptr;
    T* gk = kn.requires_grad ? kn.grad_buffer().raw() : nullptr;
    conv_backward(g, in.value.raw(), kn.value.raw(), self.grad.raw(), gx, gk);
  });
}

template <typename T>
Var<T> batchnorm_batchstats(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                            double eps) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "batchnorm input");
  const std::size_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("batchnorm: gamma/beta length must equal channel dim 1 = " +
                     std::to_string(c));
  }
  const std::size_t m = n * plane;
  if (m < 2) {
    throw ShapeError("batchnorm: N*H*W = " + std::to_string(m) +
                     " per channel; batch statistics need at least 2 values");
  }
  const T* x = input.value().raw();
  const T* gm = gamma.value().raw();
  const T* bt = beta.value().raw();
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((x[base + i] - mean) * inv_std[ch]);
        xhat[base + i] = xh;
        out[base + i] = gm[ch] * xh + bt[ch];
      }
    }
  }
  return make_op_result<T>(
      std::move(out), {input, gamma, beta},
      [n, c, plane, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& gnode = *self.parents[1];
        auto& bnode = *self.parents[2];
        const T* dy = self.grad.raw();
        const T* gm = gnode.value.raw();
        T* dx = in.requires_grad ? in.grad_buffer().raw() : nullptr;
        T* dg = gnode.requires_grad ? gnode.grad_buffer().raw() : nullptr;
        T* db = bnode.requires_grad ? bnode.grad_buffer().raw() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[base + i];
              sum_dy_xhat += static_cast<double>(dy[base + i]) * xhat[base + i];
            }
          }
          if (dg) dg[ch] += static_cast<T>(sum_dy_xhat);
          if (db) db[ch] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const double md = static_cast<double>(m);
          const double coeff = gm[ch] * inv_std[ch] / md;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[base + i] += static_cast<T>(
                  coeff * (md * dy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat));
            }
          }
        }
      });
}

template <typename T>
Var<T> relu6(const Var<T>& input) {
  Tensor<T> out(input.shape());
  const auto in = input.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::min(std::max(in[i], T{0}), T{6});
  return make_op_result<T>(std::move(out), {input}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& gx = p.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = p.value[i];
      if (v > T{0} && v < T{6}) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "global_avg_pool input");
  const std::size_t nc = xs[0] * xs[1], plane = xs[2] * xs[3];
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial dims");
  Tensor<T> out(Shape{xs[0], xs[1]});
  const T* x = input.value().raw();
  for (std::size_t i = 0; i < nc; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < plane; ++j) sum += x[i * plane + j];
    out[i] = static_cast<T>(sum / static_cast<double>(plane));
  }
  return make_op_result<T>(std::move(out), {input}, [nc, plane](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const T inv = T{1} / static_cast<T>(plane);
    for (std::size_t i = 0; i < nc; ++i) {
      const T g = self.grad[i] * inv;
      for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += g;
    }
  });
}

template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  require_rank(input.shape(), 2, "dense input");
  require_rank(weight.shape(), 2, "dense weight");
  const std::size_t n = input.shape()[0], d = input.shape()[1], k = weight.shape()[1];
  if (weight.shape()[0] != d) {
    throw ShapeError("dense: weight dim 0 = " + std::to_string(weight.shape()[0]) +
                     " does not match input dim 1 = " + std::to_string(d));
  }
  if (bias.value().size() != k) {
    throw ShapeError("dense: bias length " + std::to_string(bias.value().size()) +
                     " does not match weight dim 1 = " + std::to_string(k));
  }
  Tensor<T> out(Shape{n, k});
  const T* x = input.value().raw();
  const T* w = weight.value().raw();
  const T* b = bias.value().raw();
  for (std::size_t r = 0; r < n; ++r) {
    T* o = out.raw() + r * k;
    for (std::size_t j = 0; j < k; ++j) o[j] = b[j];
    for (std::size_t i = 0; i < d; ++i) {
      const T xv = x[r * d + i];
      const T* wrow = w + i * k;
      for (std::size_t j = 0; j < k; ++j) o[j] += xv * wrow[j];
    }
  }
  return make_op_result<T>(std::move(out), {input, weight, bias}, [n, d, k](Node<T>& self) {
    auto& in = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const T* dy = self.grad.raw();
    if (in.requires_grad) {
      T* dx = in.grad_buffer().raw();
      const T* w = wn.value.raw();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
          T acc{0};
          for (std::size_t j = 0; j < k; ++j) acc += dy[r * k + j] * w[i * k + j];
          dx[r * d + i] += acc;
        }
    }
    if (wn.requires_grad) {
      T* dw = wn.grad_buffer().raw();
      const T* x = in.value.raw();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
          const T xv = x[r * d + i];
          for (std::size_t j = 0; j < k; ++j) dw[i * k + j] += xv * dy[r * k + j];
        }
    }
    if (bn.requires_grad) {
      T* db = bn.grad_buffer().raw();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j) db[j] += dy[r * k + j];
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch dim 0 = " + std::to_string(n));
  }
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  const T* z = logits.value().raw();
  Tensor<T> probs(Shape{n, k});
  std::vector<int> targets(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " at row " +
                       std::to_string(r) + " outside [0," + std::to_string(k) + ")");
    }
    const T* row = z + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = static_cast<T>(std::exp(row[j] - lse));
    total += lse - row[y];
  }
  Tensor<T> out(Shape{1}, static_cast<T>(total / static_cast<double>(n)));
  return make_op_result<T>(
      std::move(out), {logits},
      [n, k, probs = std::move(probs), targets = std::move(targets)](Node<T>& self) {
        T* dz = self.parents[0]->grad_buffer().raw();
        const T g = self.grad[0] / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            T p = probs[r * k + j];
            if (static_cast<int>(j) == targets[r]) p -= T{1};
            dz[r * k + j] += g * p;
          }
        }
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto& g = parent->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& input, T factor) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * input.value()[i];
  return make_op_result<T>(std::move(out), {input}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> channel_scale(const Var<T>& input, std::span<const T> factors) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "channel_scale input");
  if (factors.size() != xs[1]) {
    throw ShapeError("channel_scale: " + std::to_string(factors.size()) +
                     " factors for channel dim 1 = " + std::to_string(xs[1]));
  }
  const std::size_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  std::vector<T> f(factors.begin(), factors.end());
  Tensor<T> out(xs);
  const T* x = input.value().raw();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = f[ch] * x[base + i];
    }
  return make_op_result<T>(std::move(out), {input}, [n, c, plane, f = std::move(f)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) g[base + i] += f[ch] * self.grad[base + i];
      }
  });
}

template <typename T>
Var<T> straight_through(const Var<T>& source, Tensor<T> value, Tensor<T> grad_mask) {
  if (value.shape() != source.shape()) {
    throw ShapeError("straight_through: value shape " + shape_str(value.shape()) +
                     " differs from source " + shape_str(source.shape()));
  }
  if (!grad_mask.empty() && grad_mask.shape() != source.shape()) {
    throw ShapeError("straight_through: mask shape " + shape_str(grad_mask.shape()) +
                     " differs from source " + shape_str(source.shape()));
  }
  return make_op_result<T>(std::move(value), {source},
                           [mask = std::move(grad_mask)](Node<T>& self) {
                             auto& g = self.parents[0]->grad_buffer();
                             if (mask.empty()) {
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             } else {
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += mask[i] * self.grad[i];
                             }
                           });
}

template <typename T>
Var<T> sum_squares(const Var<T>& input) {
  double acc = 0.0;
  for (const T v : input.value().data()) acc += static_cast<double>(v) * v;
  return make_op_result<T>(Tensor<T>(Shape{1}, static_cast<T>(acc)), {input}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * p.value[i] * self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights) {
  if (weights.shape() != input.shape()) {
    throw ShapeError("weighted_sum: weights shape " + shape_str(weights.shape()) +
                     " differs from input " + shape_str(input.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    acc += static_cast<double>(input.value()[i]) * weights[i];
  return make_op_result<T>(Tensor<T>(Shape{1}, static_cast<T>(acc)), {input},
                           [weights](Node<T>& self) {
                             auto& g = self.parents[0]->grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += weights[i] * self.grad[0];
                           });
}

#define JQAS_INSTANTIATE_OPS(T)                                                          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int, int, int);               \
  template Var<T> batchnorm_batchstats<T>(const Var<T>&, const Var<T>&, const Var<T>&,  \
                                          double);                                      \
  template Var<T> relu6<T>(const Var<T>&);                                              \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                    \
  template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const int>);        \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                           \
  template Var<T> channel_scale<T>(const Var<T>&, std::span<const T>);                  \
  template Var<T> straight_through<T>(const Var<T>&, Tensor<T>, Tensor<T>);             \
  template Var<T> sum_squares<T>(const Var<T>&);                                        \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

JQAS_INSTANTIATE_OPS(float)
JQAS_INSTANTIATE_OPS(double)

#undef JQAS_INSTANTIATE_OPS

}  // namespace jqas::ops
