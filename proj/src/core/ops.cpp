#include "hypkit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (!x.defined() || x.rank() != 4)
    throw ShapeError(std::string(op) + " expects a rank-4 NCHW tensor, got " +
                     (x.defined() ? shape_str(x.shape()) : "undefined"));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Gradient buffer of a parent, or nullptr when it does not want one.
template <typename T>
T* grad_of(TensorNode<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

// col is [channels * k * k, h * w].
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::size_t hw = h * w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * hw;
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx, ++row) {
        T* dst = col + row * hw;
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - pad;
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pad;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          T* out = dst + y * W;
          const std::ptrdiff_t sy = y + oy;
          if (sy < 0 || sy >= H || x1 <= x0) {
            std::fill(out, out + W, T(0));
            continue;
          }
          std::fill(out, out + x0, T(0));
          std::memcpy(out + x0, plane + sy * W + x0 + ox,
                      static_cast<std::size_t>(x1 - x0) * sizeof(T));
          std::fill(out + x1, out + W, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h,
                std::size_t w, std::size_t k, T* x) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
  const std::size_t hw = h * w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * hw;
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx, ++row) {
        const T* src = col + row * hw;
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - pad;
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pad;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + oy;
          if (sy < 0 || sy >= H) continue;
          const T* in = src + y * W;
          T* out = plane + sy * W + ox;
          for (std::ptrdiff_t xx = x0; xx < x1; ++xx) out[xx] += in[xx];
        }
      }
    }
  }
}

struct Bilinear {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Bilinear bilinear_table(std::size_t in, std::size_t out) {
  Bilinear t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------- conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_rank4(x, "conv2d");
  require_rank4(weight, "conv2d weight");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d: kernel expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(cin));
  if (weight.dim(3) != k || k % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd extent");
  if (bias.defined() && (bias.numel() != cout))
    throw ShapeError("conv2d: bias length does not match output channels");

  const std::size_t hw = h * w, kk = cin * k * k;
  std::vector<T> out(n * cout * hw);
  std::vector<T> col(k == 1 ? 0 : kk * hw);
  ConstMapMat<T> wmat(weight.data().data(), cout, kk);
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = x.data().data() + b * cin * hw;
    if (k != 1) im2col(xb, cin, h, w, k, col.data());
    ConstMapMat<T> cmat(k == 1 ? xb : col.data(), kk, hw);
    MapMat<T> omat(out.data() + b * cout * hw, cout, hw);
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      const T* bd = bias.data().data();
      for (std::size_t c = 0; c < cout; ++c) omat.row(c).array() += bd[c];
    }
  }

  Shape shape{n, cout, h, w};
  std::vector<Tensor<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return autograd::make_result<T>(
      shape, std::move(out), parents,
      [n, cin, cout, h, w, k, hw, kk](TensorNode<T>& self) {
        const auto& xn = *self.parents[0];
        const auto& wn = *self.parents[1];
        T* gx = grad_of(self, 0);
        T* gw = grad_of(self, 1);
        T* gb = self.parents.size() > 2 ? grad_of(self, 2) : nullptr;
        std::vector<T> col(k == 1 ? 0 : kk * hw);
        std::vector<T> gcol(gx && k != 1 ? kk * hw : 0);
        ConstMapMat<T> wmat(wn.data.data(), cout, kk);
        for (std::size_t b = 0; b < n; ++b) {
          ConstMapMat<T> g(self.grad.data() + b * cout * hw, cout, hw);
          const T* xb = xn.data.data() + b * cin * hw;
          if (gw) {
            if (k != 1) im2col(xb, cin, h, w, k, col.data());
            ConstMapMat<T> cmat(k == 1 ? xb : col.data(), kk, hw);
            MapMat<T>(gw, cout, kk).noalias() += g * cmat.transpose();
          }
          if (gx) {
            if (k == 1) {
              MapMat<T>(gx + b * cin * hw, kk, hw).noalias() +=
                  wmat.transpose() * g;
            } else {
              MapMat<T> gc(gcol.data(), kk, hw);
              gc.noalias() = wmat.transpose() * g;
              col2im_add(gcol.data(), cin, h, w, k, gx + b * cin * hw);
            }
          }
          if (gb) {
            // Plain loop: Eigen's vectorized sum depends on buffer alignment.
            const T* gp = self.grad.data() + b * cout * hw;
            for (std::size_t c = 0; c < cout; ++c) {
              T acc = 0;
              for (std::size_t i = 0; i < hw; ++i) acc += gp[c * hw + i];
              gb[c] += acc;
            }
          }
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------- prelu

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  require_rank4(x, "prelu");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t ns = slope.numel();
  if (ns != 1 && ns != c)
    throw ShapeError("prelu: slope must be a scalar or per-channel");
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const T* sd = slope.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T a = sd[ns == 1 ? 0 : ch];
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T v = xd[off + i];
        out[off + i] = v > T(0) ? v : a * v;
      }
    }
  return autograd::make_result<T>(
      x.shape(), std::move(out), {x, slope},
      [n, c, hw, ns](TensorNode<T>& self) {
        const T* xd = self.parents[0]->data.data();
        const T* sd = self.parents[1]->data.data();
        T* gx = grad_of(self, 0);
        T* gs = grad_of(self, 1);
        const T* g = self.grad.data();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t si = ns == 1 ? 0 : ch;
            const T a = sd[si];
            const std::size_t off = (b * c + ch) * hw;
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) {
              const T v = xd[off + i];
              if (v > T(0)) {
                if (gx) gx[off + i] += g[off + i];
              } else {
                if (gx) gx[off + i] += a * g[off + i];
                acc += v * g[off + i];
              }
            }
            if (gs) gs[si] += acc;
          }
      },
      "prelu");
}

// ---------------------------------------------------------------- batchnorm

template <typename T>
BatchNormParams<T> BatchNormParams<T>::create(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean.assign(channels, T(0));
  p.running_var.assign(channels, T(1));
  return p;
}

template <typename T>
void BatchNormParams<T>::reset_running_stats() {
  std::fill(running_mean.begin(), running_mean.end(), T(0));
  std::fill(running_var.begin(), running_var.end(), T(1));
  running_initialized = true;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormParams<T>& p,
                      bool training) {
  require_rank4(x, "batchnorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (p.channels() != c || p.gamma.numel() != c || p.beta.numel() != c)
    throw ShapeError("batchnorm2d: parameter channels do not match input");
  if (!(p.eps > 0.0)) throw UsageError("batchnorm2d: eps must be positive");
  const std::size_t count = n * hw;
  if (training && count < 2)
    throw ShapeError("batchnorm2d: training needs more than one value per channel");
  if (!training && !p.running_initialized)
    throw StateError("batchnorm2d: eval mode with uninitialized running stats");

  const T* xd = x.data().data();
  const T* gd = p.gamma.data().data();
  const T* bd = p.beta.data().data();
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(c);

  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = xd + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = xd + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = src[i] - m;
          ss += d * d;
        }
      }
      const double v = ss / static_cast<double>(count);
      mu = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = ss / static_cast<double>(count - 1);
      p.running_mean[ch] = static_cast<T>((1.0 - p.momentum) * p.running_mean[ch] +
                                          p.momentum * m);
      p.running_var[ch] = static_cast<T>((1.0 - p.momentum) * p.running_var[ch] +
                                         p.momentum * unbiased);
    } else {
      mu = p.running_mean[ch];
      var = p.running_var[ch];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + p.eps));
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xd[off + i] - mu) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = gd[ch] * xh + bd[ch];
      }
    }
  }
  if (training) p.running_initialized = true;

  return autograd::make_result<T>(
      x.shape(), std::move(out), {x, p.gamma, p.beta},
      [n, c, hw, count, training, xhat, inv_std](TensorNode<T>& self) {
        T* gx = grad_of(self, 0);
        T* gg = grad_of(self, 1);
        T* gb = grad_of(self, 2);
        const T* gamma = self.parents[1]->data.data();
        const T* g = self.grad.data();
        const T* xh = xhat->data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[off + i];
              sum_gx += static_cast<double>(g[off + i]) * xh[off + i];
            }
          }
          if (gg) gg[ch] += static_cast<T>(sum_gx);
          if (gb) gb[ch] += static_cast<T>(sum_g);
          if (!gx) continue;
          const T scale_ = gamma[ch] * (*inv_std)[ch];
          if (training) {
            const T mg = static_cast<T>(sum_g / static_cast<double>(count));
            const T mgx = static_cast<T>(sum_gx / static_cast<double>(count));
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i)
                gx[off + i] += scale_ * (g[off + i] - mg - xh[off + i] * mgx);
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) gx[off + i] += scale_ * g[off + i];
            }
          }
        }
      },
      "batchnorm2d");
}

// ---------------------------------------------------------------- pooling

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x) {
  require_rank4(x, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  const std::size_t planes = n * c;
  std::vector<T> out(planes * oh * ow);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const T* xd = x.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = xd + pl * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        T bv = src[best];
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t yy = 2 * oy + dy, xx = 2 * ox + dx;
            if (yy >= h || xx >= w) continue;
            const std::size_t k = yy * w + xx;
            if (src[k] > bv) {
              bv = src[k];
              best = k;
            }
          }
        const std::size_t o = pl * oh * ow + oy * ow + ox;
        out[o] = bv;
        (*idx)[o] = static_cast<std::uint32_t>(best);
      }
  }
  PoolIndices pi{idx, h, w, oh, ow, n, c};
  auto values = autograd::make_result<T>(
      {n, c, oh, ow}, std::move(out), {x},
      [idx, planes, h, w, oh, ow](TensorNode<T>& self) {
        T* gx = grad_of(self, 0);
        if (!gx) return;
        for (std::size_t pl = 0; pl < planes; ++pl)
          for (std::size_t i = 0; i < oh * ow; ++i) {
            const std::size_t o = pl * oh * ow + i;
            gx[pl * h * w + (*idx)[o]] += self.grad[o];
          }
      },
      "maxpool2d");
  return {values, pi};
}

template <typename T>
Tensor<T> maxunpool2d(const Tensor<T>& y, const PoolIndices& pi) {
  require_rank4(y, "maxunpool2d");
  if (!pi.argmax || y.dim(0) != pi.batch || y.dim(1) != pi.channels ||
      y.dim(2) != pi.out_h || y.dim(3) != pi.out_w)
    throw ShapeError("maxunpool2d: input " + shape_str(y.shape()) +
                     " does not match recorded pooling indices");
  const std::size_t planes = pi.batch * pi.channels;
  const std::size_t in_hw = pi.in_h * pi.in_w, out_hw = pi.out_h * pi.out_w;
  const auto& idx = *pi.argmax;
  if (idx.size() != planes * out_hw)
    throw ShapeError("maxunpool2d: index table size mismatch");
  for (auto k : idx)
    if (k >= in_hw) throw ShapeError("maxunpool2d: index out of range");
  std::vector<T> out(planes * in_hw, T(0));
  const T* yd = y.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t i = 0; i < out_hw; ++i)
      out[pl * in_hw + idx[pl * out_hw + i]] = yd[pl * out_hw + i];
  auto argmax = pi.argmax;
  return autograd::make_result<T>(
      {pi.batch, pi.channels, pi.in_h, pi.in_w}, std::move(out), {y},
      [argmax, planes, in_hw, out_hw](TensorNode<T>& self) {
        T* gy = grad_of(self, 0);
        if (!gy) return;
        for (std::size_t pl = 0; pl < planes; ++pl)
          for (std::size_t i = 0; i < out_hw; ++i)
            gy[pl * out_hw + i] +=
                self.grad[pl * in_hw + (*argmax)[pl * out_hw + i]];
      },
      "maxunpool2d");
}

// ---------------------------------------------------------------- interp

std::size_t scaled_extent(std::size_t extent, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ShapeError("interpolation scale must be positive and finite");
  // The tolerance keeps products like 100 * 0.8 from flooring to 79.
  const double v = static_cast<double>(extent) * scale;
  const auto out = static_cast<std::size_t>(std::floor(v + 1e-9 * std::max(1.0, v)));
  if (out == 0)
    throw ShapeError("interpolation scale " + std::to_string(scale) +
                     " produces an empty output for extent " +
                     std::to_string(extent));
  return out;
}

template <typename T>
Tensor<T> interp2d(const Tensor<T>& x, double scale) {
  require_rank4(x, "interp2d");
  return interp2d_to(x, scaled_extent(x.dim(2), scale),
                     scaled_extent(x.dim(3), scale));
}

template <typename T>
Tensor<T> interp2d_to(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_rank4(x, "interp2d");
  if (oh == 0 || ow == 0) throw ShapeError("interp2d: empty output extent");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (oh == h && ow == w) {
    // Exact identity, kept in the graph so gradients still flow.
    return autograd::make_result<T>(
        x.shape(), std::vector<T>(x.data().begin(), x.data().end()), {x},
        [](TensorNode<T>& self) {
          T* gx = grad_of(self, 0);
          if (!gx) return;
          for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        },
        "interp2d");
  }
  auto ty = std::make_shared<Bilinear>(bilinear_table(h, oh));
  auto tx = std::make_shared<Bilinear>(bilinear_table(w, ow));
  const std::size_t planes = n * c;
  std::vector<T> out(planes * oh * ow);
  const T* xd = x.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = xd + pl * h * w;
    T* dst = out.data() + pl * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const T fy = static_cast<T>(ty->frac[i]);
      const T* r0 = src + ty->lo[i] * w;
      const T* r1 = src + ty->hi[i] * w;
      for (std::size_t j = 0; j < ow; ++j) {
        const T fx = static_cast<T>(tx->frac[j]);
        const std::size_t a = tx->lo[j], b = tx->hi[j];
        const T top = r0[a] + (r0[b] - r0[a]) * fx;
        const T bot = r1[a] + (r1[b] - r1[a]) * fx;
        dst[i * ow + j] = top + (bot - top) * fy;
      }
    }
  }
  return autograd::make_result<T>(
      {n, c, oh, ow}, std::move(out), {x},
      [ty, tx, planes, h, w, oh, ow](TensorNode<T>& self) {
        T* gx = grad_of(self, 0);
        if (!gx) return;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          T* dst = gx + pl * h * w;
          const T* g = self.grad.data() + pl * oh * ow;
          for (std::size_t i = 0; i < oh; ++i) {
            const T fy = static_cast<T>(ty->frac[i]);
            T* r0 = dst + ty->lo[i] * w;
            T* r1 = dst + ty->hi[i] * w;
            for (std::size_t j = 0; j < ow; ++j) {
              const T fx = static_cast<T>(tx->frac[j]);
              const T v = g[i * ow + j];
              const std::size_t a = tx->lo[j], b = tx->hi[j];
              r0[a] += v * (1 - fy) * (1 - fx);
              r0[b] += v * (1 - fy) * fx;
              r1[a] += v * fy * (1 - fx);
              r1[b] += v * fy * fx;
            }
          }
        }
      },
      "interp2d");
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](TensorNode<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
          if (T* g = grad_of(self, p))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](TensorNode<T>& self) {
        if (T* g = grad_of(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = grad_of(self, 1))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](TensorNode<T>& self) {
        const T* ad = self.parents[0]->data.data();
        const T* bd = self.parents[1]->data.data();
        if (T* g = grad_of(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
        if (T* g = grad_of(self, 1))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
      },
      "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a},
      [factor](TensorNode<T>& self) {
        if (T* g = grad_of(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
      },
      "scale");
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "maximum");
  std::vector<T> out(a.numel());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] >= bd[i] ? ad[i] : bd[i];
  return autograd::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](TensorNode<T>& self) {
        const T* ad = self.parents[0]->data.data();
        const T* bd = self.parents[1]->data.data();
        T* ga = grad_of(self, 0);
        T* gb = grad_of(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (ad[i] >= bd[i]) {
            if (ga) ga[i] += self.grad[i];
          } else if (gb) {
            gb[i] += self.grad[i];
          }
        }
      },
      "maximum");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double s = 0;
  for (T v : a.data()) s += v;
  return autograd::make_result<T>(
      {1}, {static_cast<T>(s)}, {a},
      [](TensorNode<T>& self) {
        if (T* g = grad_of(self, 0)) {
          const T v = self.grad[0];
          const std::size_t n = self.parents[0]->data.size();
          for (std::size_t i = 0; i < n; ++i) g[i] += v;
        }
      },
      "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  require_rank4(x, "softmax_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t base = b * c * hw + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t ch = 0; ch < c; ++ch) mx = std::max(mx, xd[base + ch * hw]);
      T z = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T e = std::exp(xd[base + ch * hw] - mx);
        out[base + ch * hw] = e;
        z += e;
      }
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * hw] /= z;
    }
  return autograd::make_result<T>(
      x.shape(), std::move(out), {x},
      [n, c, hw](TensorNode<T>& self) {
        T* gx = grad_of(self, 0);
        if (!gx) return;
        const T* p = self.data.data();
        const T* g = self.grad.data();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t base = b * c * hw + i;
            T dot = 0;
            for (std::size_t ch = 0; ch < c; ++ch)
              dot += g[base + ch * hw] * p[base + ch * hw];
            for (std::size_t ch = 0; ch < c; ++ch)
              gx[base + ch * hw] += p[base + ch * hw] * (g[base + ch * hw] - dot);
          }
      },
      "softmax_channels");
}

#define HYPKIT_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                \
                            const Tensor<T>&);                                 \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);                \
  template struct BatchNormParams<T>;                                          \
  template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNormParams<T>&, bool); \
  template PoolResult<T> maxpool2d(const Tensor<T>&);                          \
  template Tensor<T> maxunpool2d(const Tensor<T>&, const PoolIndices&);        \
  template Tensor<T> interp2d(const Tensor<T>&, double);                       \
  template Tensor<T> interp2d_to(const Tensor<T>&, std::size_t, std::size_t);  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale(const Tensor<T>&, T);                               \
  template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> sum(const Tensor<T>&);                                    \
  template Tensor<T> mean(const Tensor<T>&);                                   \
  template Tensor<T> softmax_channels(const Tensor<T>&);

HYPKIT_INSTANTIATE_OPS(float)
HYPKIT_INSTANTIATE_OPS(double)

}  // namespace hypkit
