#pragma once

#include <algorithm>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

enum class Padding { Valid, Same };
enum class Activation { ReLU, Linear };
enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

/// max(0, x). The subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation), NHWC
// ---------------------------------------------------------------------------

struct ConvParams {
  Tensor kernel;  // [kh, kw, cin, cout]
  Tensor bias;    // [cout]
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::Same;
};

namespace detail {

struct ConvGeom {
  std::size_t n, h, w, cin;
  std::size_t kh, kw, cout;
  std::size_t sh, sw, oh, ow;
  std::ptrdiff_t pad_h, pad_w;  // padding before the first row/column
};

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s,
                              Padding pad) {
  if (pad == Padding::Valid) {
    if (k > in)
      throw KernelTooLarge("window " + std::to_string(k) + " exceeds input extent " +
                           std::to_string(in) + " under Valid padding");
    return (in - k) / s + 1;
  }
  return (in + s - 1) / s;  // ceil(in / s)
}

// Total Same padding is split floor/ceil so the extra cell lands bottom/right.
inline std::ptrdiff_t pad_before(std::size_t in, std::size_t out, std::size_t k,
                                 std::size_t s, Padding pad) {
  if (pad == Padding::Valid) return 0;
  const std::ptrdiff_t total =
      std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((out - 1) * s + k) -
                                      static_cast<std::ptrdiff_t>(in));
  return total / 2;
}

inline ConvGeom conv_geometry(const Shape& x, const Shape& kernel, std::size_t sh,
                              std::size_t sw, Padding padding) {
  if (x.size() != 4) throw ShapeMismatch("conv2d input must be NHWC, got " + shape_str(x));
  if (kernel.size() != 4)
    throw ShapeMismatch("conv2d kernel must be [kh,kw,cin,cout], got " + shape_str(kernel));
  if (x[3] != kernel[2])
    throw ShapeMismatch("conv2d input channels " + std::to_string(x[3]) +
                        " vs kernel channels " + std::to_string(kernel[2]));
  if (sh == 0 || sw == 0) throw ShapeMismatch("conv2d stride must be positive");
  ConvGeom g;
  g.n = x[0]; g.h = x[1]; g.w = x[2]; g.cin = x[3];
  g.kh = kernel[0]; g.kw = kernel[1]; g.cout = kernel[3];
  g.sh = sh; g.sw = sw;
  g.oh = out_extent(g.h, g.kh, g.sh, padding);
  g.ow = out_extent(g.w, g.kw, g.sw, padding);
  g.pad_h = pad_before(g.h, g.oh, g.kh, g.sh, padding);
  g.pad_w = pad_before(g.w, g.ow, g.kw, g.sw, padding);
  return g;
}

// Gathers one sample's patches into [oh*ow, kh*kw*cin], zero-filled outside.
inline void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t patch = g.kh * g.kw * g.cin;
  std::memset(cols, 0, sizeof(double) * g.oh * g.ow * patch);
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      double* row = cols + (oy * g.ow + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) - g.pad_h;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) - g.pad_w;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          std::memcpy(row + (ky * g.kw + kx) * g.cin,
                      x + ((iy * static_cast<std::ptrdiff_t>(g.w)) + ix) * g.cin,
                      sizeof(double) * g.cin);
        }
      }
    }
  }
}

// Scatter-adds [oh*ow, kh*kw*cin] patch gradients back onto the input image.
inline void col2im(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t patch = g.kh * g.kw * g.cin;
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const double* row = cols + (oy * g.ow + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) - g.pad_h;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) - g.pad_w;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const double* src = row + (ky * g.kw + kx) * g.cin;
          double* dst = dx + ((iy * static_cast<std::ptrdiff_t>(g.w)) + ix) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation plus bias. Input [n,h,w,cin], output [n,oh,ow,cout].
inline Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const detail::ConvGeom g = detail::conv_geometry(x.shape(), p.kernel.shape(),
                                                   p.stride_h, p.stride_w, p.padding);
  if (p.bias.rank() != 1 || p.bias.dim(0) != g.cout)
    throw ShapeMismatch("conv2d bias " + shape_str(p.bias.shape()) + " for cout " +
                        std::to_string(g.cout));
  const std::size_t patch = g.kh * g.kw * g.cin;
  const std::size_t osize = g.oh * g.ow;
  std::vector<double> out(g.n * osize * g.cout);
  std::vector<double> cols(osize * patch);
  {
    detail::ECMap k2d(p.kernel.data().data(), patch, g.cout);
    for (std::size_t i = 0; i < g.n; ++i) {
      detail::im2col(x.data().data() + i * g.h * g.w * g.cin, g, cols.data());
      detail::EMap oi(out.data() + i * osize * g.cout, osize, g.cout);
      oi.noalias() = detail::ECMap(cols.data(), osize, patch) * k2d;
      for (std::size_t r = 0; r < osize; ++r)
        for (std::size_t c = 0; c < g.cout; ++c)
          out[(i * osize + r) * g.cout + c] += p.bias[c];
    }
  }
  auto px = x.node(), pk = p.kernel.node(), pb = p.bias.node();
  return wrap_result(
      {g.n, g.oh, g.ow, g.cout}, std::move(out), {x, p.kernel, p.bias},
      [g, patch, osize, px, pk, pb](detail::Node& self) {
        std::vector<double> cols(osize * patch);
        std::vector<double> dk, dxi, dcols;
        if (pk->requires_grad) dk.assign(patch * g.cout, 0.0);
        if (px->requires_grad) {
          dxi.resize(g.n * g.h * g.w * g.cin, 0.0);
          dcols.resize(osize * patch);
        }
        detail::ECMap k2d(pk->data.data(), patch, g.cout);
        for (std::size_t i = 0; i < g.n; ++i) {
          detail::ECMap go(self.grad.data() + i * osize * g.cout, osize, g.cout);
          if (pk->requires_grad || px->requires_grad)
            detail::im2col(px->data.data() + i * g.h * g.w * g.cin, g, cols.data());
          if (pk->requires_grad) {
            detail::EMap dkm(dk.data(), patch, g.cout);
            dkm.noalias() += detail::ECMap(cols.data(), osize, patch).transpose() * go;
          }
          if (px->requires_grad) {
            detail::EMap(dcols.data(), osize, patch).noalias() = go * k2d.transpose();
            detail::col2im(dcols.data(), g, dxi.data() + i * g.h * g.w * g.cin);
          }
        }
        if (px->requires_grad) px->accumulate(dxi);
        if (pk->requires_grad) pk->accumulate(dk);
        if (pb->requires_grad) {
          std::vector<double> db(g.cout, 0.0);
          for (std::size_t r = 0; r < g.n * osize; ++r)
            for (std::size_t c = 0; c < g.cout; ++c) db[c] += self.grad[r * g.cout + c];
          pb->accumulate(db);
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct BatchNormParams {
  Tensor gamma;         // [c], trainable
  Tensor beta;          // [c], trainable
  Tensor running_mean;  // [c], updated by Train-mode forward
  Tensor running_var;   // [c]
  double momentum = 0.99;
  double epsilon = 1e-3;
  Activation activation = Activation::ReLU;
};

namespace detail {

inline Tensor batchnorm_core(const Tensor& x, BatchNormParams& p, Mode mode) {
  if (x.rank() != 4)
    throw ShapeMismatch("batchnorm input must be NHWC, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(3);
  if (p.gamma.size() != c || p.beta.size() != c || p.running_mean.size() != c ||
      p.running_var.size() != c)
    throw ShapeMismatch("batchnorm parameter length vs " + std::to_string(c) + " channels");
  if (p.epsilon <= 0.0) throw ShapeMismatch("batchnorm epsilon must be positive");
  const std::size_t rows = x.size() / c;  // n*h*w

  std::vector<double> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    if (rows < 2)
      throw DegenerateBatch("batch normalization over " + std::to_string(rows) +
                            " positions; need at least 2");
    std::vector<double> var(c, 0.0);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += x[r * c + j];
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(rows);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + p.epsilon);
    // Exponential moving average of the batch statistics.
    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = p.momentum * rm[j] + (1.0 - p.momentum) * mean[j];
      rv[j] = p.momentum * rv[j] + (1.0 - p.momentum) * var[j];
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = p.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(p.running_var[j] + p.epsilon);
    }
  }

  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out[r * c + j] =
          p.gamma[j] * (x[r * c + j] - mean[j]) * inv_std[j] + p.beta[j];

  auto px = x.node(), pg = p.gamma.node(), pbt = p.beta.node();
  const bool train = mode == Mode::Train;
  return wrap_result(
      x.shape(), std::move(out), {x, p.gamma, p.beta},
      [c, rows, px, pg, pbt, train, mean, inv_std](detail::Node& self) {
        const double n = static_cast<double>(rows);
        std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
        // dgamma needs xhat; recompute from the saved statistics.
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (px->data[r * c + j] - mean[j]) * inv_std[j];
            dgamma[j] += self.grad[r * c + j] * xhat;
            dbeta[j] += self.grad[r * c + j];
          }
        if (pg->requires_grad) pg->accumulate(dgamma);
        if (pbt->requires_grad) pbt->accumulate(dbeta);
        if (!px->requires_grad) return;
        std::vector<double> dx(rows * c);
        if (!train) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j)
              dx[r * c + j] = self.grad[r * c + j] * pg->data[j] * inv_std[j];
          px->accumulate(dx);
          return;
        }
        // Batch statistics depend on x; full derivative through mean and var.
        std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xm(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double dxhat = self.grad[r * c + j] * pg->data[j];
            sum_dxhat[j] += dxhat;
            sum_dxhat_xm[j] += dxhat * (px->data[r * c + j] - mean[j]);
          }
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double xm = px->data[r * c + j] - mean[j];
            const double dxhat = self.grad[r * c + j] * pg->data[j];
            dx[r * c + j] =
                inv_std[j] *
                (dxhat - sum_dxhat[j] / n -
                 xm * inv_std[j] * inv_std[j] * sum_dxhat_xm[j] / n);
          }
        px->accumulate(dx);
      });
}

}  // namespace detail

/// Batch normalization over (n, h, w) per channel, then ReLU unless the
/// parameter set is marked Linear. Train mode also updates running statistics.
inline Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode) {
  Tensor y = detail::batchnorm_core(x, p, mode);
  return p.activation == Activation::ReLU ? relu(y) : y;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

struct DropoutParams {
  double keep_prob = 0.8;
  Mode mode = Mode::Train;
};

/// Inverted dropout: Train zeroes elements with probability 1-keep_prob and
/// scales survivors by 1/keep_prob; Eval is the identity.
inline Tensor dropout(const Tensor& x, const DropoutParams& p, Rng& rng) {
  if (!(p.keep_prob > 0.0 && p.keep_prob <= 1.0))
    throw ShapeMismatch("dropout keep_prob must lie in (0,1], got " +
                        std::to_string(p.keep_prob));
  if (p.mode == Mode::Eval) return x;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double inv_keep = 1.0 / p.keep_prob;
  for (std::size_t i = 0; i < x.size(); ++i)
    (*mask)[i] = rng.uniform() < p.keep_prob ? inv_keep : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (*mask)[i];
  auto px = x.node();
  return wrap_result(x.shape(), std::move(out), {x}, [px, mask](detail::Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (*mask)[i];
    px->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Channelwise max over spatial windows. Gradient routes to the argmax
/// position; ties go to the first cell in row-major window order.
inline Tensor maxpool(const Tensor& x, std::size_t win_h, std::size_t win_w,
                      std::size_t stride_h, std::size_t stride_w, Padding padding) {
  if (x.rank() != 4)
    throw ShapeMismatch("maxpool input must be NHWC, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = detail::out_extent(h, win_h, stride_h, padding);
  const std::size_t ow = detail::out_extent(w, win_w, stride_w, padding);
  const std::ptrdiff_t pad_h = detail::pad_before(h, oh, win_h, stride_h, padding);
  const std::ptrdiff_t pad_w = detail::pad_before(w, ow, win_w, stride_w, padding);
  std::vector<double> out(n * oh * ow * c, -std::numeric_limits<double>::infinity());
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * h * w * c;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ky = 0; ky < win_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_h + ky) - pad_h;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < win_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_w + kx) - pad_w;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t src = (static_cast<std::size_t>(iy) * w +
                                     static_cast<std::size_t>(ix)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t dst = ((i * oh + oy) * ow + ox) * c + ch;
              if (xi[src + ch] > out[dst]) {
                out[dst] = xi[src + ch];
                (*argmax)[dst] = i * h * w * c + src + ch;
              }
            }
          }
        }
  }
  auto px = x.node();
  return wrap_result({n, oh, ow, c}, std::move(out), {x},
                     [px, argmax](detail::Node& self) {
                       std::vector<double> dx(px->data.size(), 0.0);
                       for (std::size_t o = 0; o < self.grad.size(); ++o)
                         dx[(*argmax)[o]] += self.grad[o];
                       px->accumulate(dx);
                     });
}

/// Mean over the spatial grid: [n,h,w,c] -> [n,c].
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeMismatch("global_avg_pool input must be NHWC, got " +
                        shape_str(x.shape()));
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < hw; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[i * c + ch] += x[(i * hw + s) * c + ch];
  for (double& v : out) v /= static_cast<double>(hw);
  auto px = x.node();
  return wrap_result({n, c}, std::move(out), {x}, [n, hw, c, px](detail::Node& self) {
    std::vector<double> g(n * hw * c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < hw; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          g[(i * hw + s) * c + ch] = self.grad[i * c + ch] / static_cast<double>(hw);
    px->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Dense (fully connected)
// ---------------------------------------------------------------------------

struct DenseParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

inline Tensor dense(const Tensor& x, const DenseParams& p) {
  if (x.rank() != 2)
    throw ShapeMismatch("dense input must be [n,d], got " + shape_str(x.shape()));
  return bias_add(matmul(x, p.weight), p.bias);
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

/// Concatenates along the last dimension; all other dimensions must agree.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeMismatch("concat_channels of zero tensors");
  if (xs.size() == 1) return xs[0];
  const Shape& s0 = xs[0].shape();
  std::size_t total_last = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != s0.size())
      throw ShapeMismatch("concat_channels rank mismatch " + shape_str(t.shape()));
    for (std::size_t d = 0; d + 1 < s0.size(); ++d)
      if (t.dim(d) != s0[d])
        throw ShapeMismatch("concat_channels " + shape_str(t.shape()) + " vs " +
                            shape_str(s0));
    total_last += t.dim(t.rank() - 1);
  }
  Shape out_shape = s0;
  out_shape.back() = total_last;
  const std::size_t rows = shape_numel(out_shape) / total_last;
  std::vector<double> out(rows * total_last);
  std::vector<std::size_t> widths, offsets;
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    const std::size_t kw = t.dim(t.rank() - 1);
    widths.push_back(kw);
    offsets.push_back(off);
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * total_last + off, t.data().data() + r * kw,
                  sizeof(double) * kw);
    off += kw;
  }
  std::vector<detail::NodePtr> parents;
  for (const Tensor& t : xs) parents.push_back(t.node());
  return wrap_result(std::move(out_shape), std::move(out), xs,
                     [rows, total_last, widths, offsets, parents](detail::Node& self) {
                       for (std::size_t j = 0; j < parents.size(); ++j) {
                         if (!parents[j]->requires_grad) continue;
                         std::vector<double> g(rows * widths[j]);
                         for (std::size_t r = 0; r < rows; ++r)
                           std::memcpy(g.data() + r * widths[j],
                                       self.grad.data() + r * total_last + offsets[j],
                                       sizeof(double) * widths[j]);
                         parents[j]->accumulate(g);
                       }
                     });
}

}  // namespace affect
