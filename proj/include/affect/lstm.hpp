#pragma once

#include <atomic>
#include <cstring>
#include <vector>

#include "affect/layers.hpp"
#include "affect/tensor.hpp"

namespace affect {

namespace detail {

// Cell-invocation counter, for tests that assert the unroll length.
inline std::atomic<std::uint64_t> lstm_cell_invocations{0};

}  // namespace detail

/// Gate parameters of one LSTM. Each weight matrix acts on the concatenation
/// [h_{t-1}, x_t], so its row count is hidden + input.
struct LstmParams {
  Tensor W_f, W_i, W_o, W_C;  // [(hidden+input) x hidden]
  Tensor b_f, b_i, b_o, b_C;  // [hidden]
  std::size_t hidden = 200;

  /// Weights uniform in +-1/sqrt(hidden); forget-gate bias starts at 1 so the
  /// cell initially remembers, the other biases at 0.
  static LstmParams init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    LstmParams p;
    p.hidden = hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    const Shape wshape{hidden + input_dim, hidden};
    for (Tensor* w : {&p.W_f, &p.W_i, &p.W_o, &p.W_C}) {
      *w = Tensor::uniform(wshape, rng, -bound, bound);
      w->set_requires_grad(true);
    }
    p.b_f = Tensor::full({hidden}, 1.0);
    p.b_i = Tensor::zeros({hidden});
    p.b_o = Tensor::zeros({hidden});
    p.b_C = Tensor::zeros({hidden});
    for (Tensor* b : {&p.b_f, &p.b_i, &p.b_o, &p.b_C}) b->set_requires_grad(true);
    return p;
  }
};

/// Recurrent state: hidden output h and memory cell C, both [n x hidden].
struct LstmState {
  Tensor h;
  Tensor C;

  static LstmState zero(std::size_t batch, std::size_t hidden) {
    return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
  }
};

/// One LSTM update:
///   f = sigmoid(W_f . [h, x] + b_f)     i = sigmoid(W_i . [h, x] + b_i)
///   o = sigmoid(W_o . [h, x] + b_o)     g = tanh   (W_C . [h, x] + b_C)
///   C' = f * C + i * g                  h' = o * tanh(C')
/// with * the Hadamard product.
inline LstmState lstm_cell(const Tensor& x_t, const LstmState& state,
                           const LstmParams& p) {
  if (x_t.rank() != 2 || state.h.rank() != 2)
    throw ShapeMismatch("lstm_cell expects [n,d] input and [n,hidden] state");
  if (state.h.shape() != state.C.shape())
    throw ShapeMismatch("lstm state h " + shape_str(state.h.shape()) + " vs C " +
                        shape_str(state.C.shape()));
  if (p.W_f.shape() != p.W_i.shape() || p.W_f.shape() != p.W_o.shape() ||
      p.W_f.shape() != p.W_C.shape())
    throw ShapeMismatch("lstm gate weight shapes disagree");
  if (x_t.dim(1) + p.hidden != p.W_f.dim(0) || p.W_f.dim(1) != p.hidden)
    throw ShapeMismatch("lstm weights " + shape_str(p.W_f.shape()) + " for input " +
                        shape_str(x_t.shape()) + " and hidden " +
                        std::to_string(p.hidden));
  detail::lstm_cell_invocations.fetch_add(1, std::memory_order_relaxed);

  const Tensor z = concat_channels({state.h, x_t});
  const Tensor f = sigmoid(bias_add(matmul(z, p.W_f), p.b_f));
  const Tensor i = sigmoid(bias_add(matmul(z, p.W_i), p.b_i));
  const Tensor o = sigmoid(bias_add(matmul(z, p.W_o), p.b_o));
  const Tensor g = tanh(bias_add(matmul(z, p.W_C), p.b_C));
  LstmState next;
  next.C = add(mul(f, state.C), mul(i, g));
  next.h = mul(o, tanh(next.C));
  return next;
}

namespace detail {

// Gathers xs[:, t, :] from [n, T, d] into [n, d]; backward scatters.
inline Tensor slice_time(const Tensor& xs, std::size_t t) {
  const std::size_t n = xs.dim(0), steps = xs.dim(1), d = xs.dim(2);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * d, xs.data().data() + (i * steps + t) * d,
                sizeof(double) * d);
  auto px = xs.node();
  return wrap_result({n, d}, std::move(out), {xs},
                     [n, steps, d, t, px](Node& self) {
                       std::vector<double> g(px->data.size(), 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         std::memcpy(g.data() + (i * steps + t) * d,
                                     self.grad.data() + i * d, sizeof(double) * d);
                       px->accumulate(g);
                     });
}

// Column x of an NHWC map, flattened over (row, channel) into [n, h*c].
inline Tensor slice_map_column(const Tensor& fmap, std::size_t x) {
  const std::size_t n = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2), c = fmap.dim(3);
  std::vector<double> out(n * h * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (i * h + y) * c,
                  fmap.data().data() + ((i * h + y) * w + x) * c, sizeof(double) * c);
  auto pf = fmap.node();
  return wrap_result({n, h * c}, std::move(out), {fmap},
                     [n, h, w, c, x, pf](Node& self) {
                       std::vector<double> g(pf->data.size(), 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t y = 0; y < h; ++y)
                           std::memcpy(g.data() + ((i * h + y) * w + x) * c,
                                       self.grad.data() + (i * h + y) * c,
                                       sizeof(double) * c);
                       pf->accumulate(g);
                     });
}

// Row y of an NHWC map, flattened over (column, channel) into [n, w*c].
inline Tensor slice_map_row(const Tensor& fmap, std::size_t y) {
  const std::size_t n = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2), c = fmap.dim(3);
  std::vector<double> out(n * w * c);
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * w * c, fmap.data().data() + (i * h + y) * w * c,
                sizeof(double) * w * c);
  auto pf = fmap.node();
  return wrap_result({n, w * c}, std::move(out), {fmap},
                     [n, h, w, c, y, pf](Node& self) {
                       std::vector<double> g(pf->data.size(), 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         std::memcpy(g.data() + (i * h + y) * w * c,
                                     self.grad.data() + i * w * c,
                                     sizeof(double) * w * c);
                       pf->accumulate(g);
                     });
}

}  // namespace detail

/// Runs the cell over xs[:, t, :] for t = 0..T-1 from the zero state and
/// returns the final hidden state [n x hidden]. Backward through the tape is
/// full backpropagation through time.
inline Tensor run_sequence(const Tensor& xs, const LstmParams& p) {
  if (xs.rank() != 3)
    throw ShapeMismatch("run_sequence expects [n,T,d], got " + shape_str(xs.shape()));
  const std::size_t steps = xs.dim(1);
  if (steps == 0) throw EmptySequence("sequence of zero timesteps");
  LstmState state = LstmState::zero(xs.dim(0), p.hidden);
  for (std::size_t t = 0; t < steps; ++t)
    state = lstm_cell(detail::slice_time(xs, t), state, p);
  return state.h;
}

/// Scans the feature map once along its width (each step one flattened column)
/// and once along its height (each step one flattened row), left-to-right and
/// top-to-bottom, then concatenates the two final hidden states: [n x 2*hidden].
inline Tensor dual_direction_head(const Tensor& fmap, const LstmParams& width_lstm,
                                  const LstmParams& height_lstm) {
  if (fmap.rank() != 4)
    throw ShapeMismatch("dual_direction_head expects NHWC, got " +
                        shape_str(fmap.shape()));
  const std::size_t n = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  LstmState along_width = LstmState::zero(n, width_lstm.hidden);
  for (std::size_t x = 0; x < w; ++x)
    along_width = lstm_cell(detail::slice_map_column(fmap, x), along_width, width_lstm);
  LstmState along_height = LstmState::zero(n, height_lstm.hidden);
  for (std::size_t y = 0; y < h; ++y)
    along_height = lstm_cell(detail::slice_map_row(fmap, y), along_height, height_lstm);
  return concat_channels({along_width.h, along_height.h});
}

}  // namespace affect
