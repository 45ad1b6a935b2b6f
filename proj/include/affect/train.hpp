#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affect/blocks.hpp"
#include "affect/data.hpp"
#include "affect/metrics.hpp"

namespace affect {

// ---------------------------------------------------------------------------
// Loss and optimizer
// ---------------------------------------------------------------------------

/// Mean squared error over all elements of [n x 2] predictions and targets
/// (single loss shared by both output dimensions).
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeMismatch("mse_loss " + shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
  const Tensor diff = sub(pred, target);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(pred.size()));
}

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.0001;
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  double val_fraction = 0.10;      // used by callers that split themselves
  double stop_at_val_rmse = 0.0;   // >0: stop once both dimensions reach it
  std::size_t histogram_bins = 20;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidOverride("learning_rate must be positive");
    if (weight_decay < 0.0) throw InvalidOverride("weight_decay must be nonnegative");
    if (batch_size == 0) throw InvalidOverride("batch_size must be positive");
    if (max_steps == 0) throw InvalidOverride("max_steps must be positive");
    if (eval_every == 0) throw InvalidOverride("eval_every must be positive");
  }
};

/// p <- p - lr * (grad + weight_decay * p) for every trainable parameter.
/// Batchnorm running statistics are not trainable and are not touched.
inline void sgd_step(std::span<const std::pair<std::string, Tensor*>> params,
                     const TrainConfig& cfg) {
  for (const auto& [name, tensor] : params) {
    if (!tensor->has_grad())
      throw MissingGradient("parameter '" + name + "' has no gradient");
    const std::vector<double>& g = tensor->grad();
    auto data = tensor->mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] -= cfg.learning_rate * (g[i] + cfg.weight_decay * data[i]);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'A', 'F', 'F', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensor table plus the architecture config and training step. The
/// on-disk layout is little-endian and bit-exact across save/load cycles.
struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // canonical order
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw CorruptCheckpoint("unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw CorruptCheckpoint("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u64(os, ckpt.config_text.size());
  os.write(ckpt.config_text.data(),
           static_cast<std::streamsize>(ckpt.config_text.size()));
  detail::put_u64(os, ckpt.step);
  detail::put_u64(os, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(0);  // dtype 0 = f64
    detail::put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d = 0; d < tensor.rank(); ++d) detail::put_u64(os, tensor.dim(d));
    for (double x : tensor.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(x));
  }
  if (!os.flush()) throw IoFailure("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw CorruptCheckpoint("bad magic in " + path.string());
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw CorruptCheckpoint("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint64_t cfg_len = detail::get_u64(is);
  ckpt.config_text.resize(cfg_len);
  if (cfg_len && !is.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len)))
    throw CorruptCheckpoint("truncated config blob");
  ckpt.step = detail::get_u64(is);
  const std::uint64_t count = detail::get_u64(is);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len))
      throw CorruptCheckpoint("truncated tensor name");
    const int dtype = is.get();
    if (dtype != 0) throw CorruptCheckpoint("unknown dtype in tensor '" + name + "'");
    const std::uint32_t rank = detail::get_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    std::vector<double> data(shape_numel(shape));
    for (double& x : data) x = std::bit_cast<double>(detail::get_u64(is));
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

/// Deep-copies the network state (parameters plus running statistics) into a
/// checkpoint in canonical order.
inline Checkpoint snapshot(Network& net, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.config_text = net.config.to_text();
  ckpt.step = step;
  net.visit_state([&ckpt](const std::string& name, Tensor& t, bool) {
    ckpt.tensors.emplace_back(name, t.clone());
  });
  return ckpt;
}

/// Loads checkpoint state into a network of the same architecture; any
/// variant, name, or shape disagreement raises ArchMismatch.
inline void restore(Network& net, const Checkpoint& ckpt) {
  const NetConfig saved = NetConfig::from_text(ckpt.config_text);
  if (saved.variant != net.config.variant)
    throw ArchMismatch("checkpoint holds a " + std::string(variant_name(saved.variant)) +
                       " network, target is " + variant_name(net.config.variant));
  std::size_t i = 0;
  try {
    net.visit_state([&ckpt, &i](const std::string& name, Tensor& t, bool) {
      if (i >= ckpt.tensors.size())
        throw ArchMismatch("checkpoint has too few tensors");
      const auto& [saved_name, saved_tensor] = ckpt.tensors[i++];
      if (saved_name != name)
        throw ArchMismatch("tensor '" + saved_name + "' where '" + name + "' expected");
      if (saved_tensor.shape() != t.shape())
        throw ArchMismatch("tensor '" + name + "' shape " +
                           shape_str(saved_tensor.shape()) + " vs " + shape_str(t.shape()));
      std::copy(saved_tensor.data().begin(), saved_tensor.data().end(),
                t.mutable_data().begin());
      t.clear_grad();
    });
  } catch (const ArchMismatch&) {
    throw;
  }
  if (i != ckpt.tensors.size())
    throw ArchMismatch("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                       " tensors, network expects " + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Batching and prediction
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor assemble_images(std::span<const AnnotatedFrame> frames,
                              std::span<const std::size_t> ids) {
  Tensor batch({ids.size(), kImageSize, kImageSize, 3});
  auto out = batch.mutable_data();
  const std::size_t stride = kImageSize * kImageSize * 3;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto img = frames[ids[i]].image.data();
    std::copy(img.begin(), img.end(), out.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return batch;
}

inline Tensor assemble_labels(std::span<const AnnotatedFrame> frames,
                              std::span<const std::size_t> ids) {
  Tensor labels({ids.size(), 2});
  auto out = labels.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[2 * i] = frames[ids[i]].valence;
    out[2 * i + 1] = frames[ids[i]].arousal;
  }
  return labels;
}

}  // namespace detail

/// Deterministic Eval-mode predictions, clamped to [-1,1].
/// Returns per-frame (valence, arousal) pairs in frame order.
inline std::vector<std::pair<double, double>> predict(
    Network& net, std::span<const AnnotatedFrame> frames, std::size_t batch_size = 64) {
  NoGradGuard no_grad;
  std::vector<std::pair<double, double>> out;
  out.reserve(frames.size());
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < frames.size(); start += batch_size) {
    const std::size_t stop = std::min(frames.size(), start + batch_size);
    ids.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) ids[i - start] = i;
    const Tensor batch = detail::assemble_images(frames, ids);
    const Tensor pred = net.forward(batch, Mode::Eval);
    for (std::size_t i = 0; i + 1 < 2 * ids.size(); i += 2)
      out.emplace_back(std::clamp(pred[i], -1.0, 1.0), std::clamp(pred[i + 1], -1.0, 1.0));
  }
  return out;
}

/// Metrics of Eval-mode predictions against the frames' own labels.
inline EvalReport evaluate(Network& net, std::span<const AnnotatedFrame> frames,
                           std::size_t histogram_bins = 20) {
  if (frames.empty()) throw EmptyDataset("evaluate over zero frames");
  const auto preds = predict(net, frames);
  std::vector<std::string> video_ids;
  Series pv, pa, tv, ta;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    video_ids.push_back(frames[i].video_id);
    pv.push_back(preds[i].first);
    pa.push_back(preds[i].second);
    tv.push_back(frames[i].valence);
    ta.push_back(frames[i].arousal);
  }
  return build_eval_report(video_ids, pv, pa, tv, ta, histogram_bins);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EvalRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  MetricValues valence;
  MetricValues arousal;
};

struct TrainResult {
  std::vector<double> loss_curve;  // one entry per step
  std::vector<EvalRecord> evals;
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  Checkpoint best;  // best-validation snapshot (final state when no validation)
};

/// Called after each optimizer step with the frame indices (into split.train)
/// that formed the batch.
using StepCallback =
    std::function<void(std::size_t step, std::span<const std::size_t> batch_ids, double loss)>;

/// Called after each validation scoring pass.
using EvalCallback = std::function<void(const EvalRecord&)>;

/// Mini-batch SGD with MSE loss: shuffled epochs, Train-mode forwards, periodic
/// Eval-mode validation scoring, best-validation-RMSE snapshot retention.
/// Single-threaded and bit-reproducible for a fixed config.
inline TrainResult train(Network& net, const DatasetSplit& split, const TrainConfig& cfg,
                         const StepCallback& on_step = {},
                         const EvalCallback& on_eval = {}) {
  cfg.validate();
  if (split.train.empty()) throw EmptyDataset("training split is empty");
  Rng rng(cfg.seed);
  TrainResult result;
  const auto params = net.trainable_parameters();
  const std::span<const std::pair<std::string, Tensor*>> param_span(params);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto next_batch = [&](std::vector<std::size_t>& ids) {
    ids.clear();
    while (ids.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        if (!ids.empty()) break;  // partial batch at epoch end
        order = rng.permutation(split.train.size());
        cursor = 0;
      }
      ids.push_back(order[cursor++]);
    }
  };

  auto mean_val_rmse = [](const EvalRecord& r) {
    return 0.5 * (r.valence.rmse + r.arousal.rmse);
  };

  std::vector<std::size_t> ids;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    next_batch(ids);
    const Tensor batch = detail::assemble_images(split.train, ids);
    const Tensor labels = detail::assemble_labels(split.train, ids);
    const Tensor pred = net.forward(batch, Mode::Train, &rng);
    const Tensor loss = mse_loss(pred, labels);
    const double loss_value = loss.value();
    if (!std::isfinite(loss_value))
      throw DivergedLoss("loss " + std::to_string(loss_value) + " at step " +
                         std::to_string(step));
    loss.backward();
    sgd_step(param_span, cfg);
    for (const auto& [name, tensor] : params) tensor->clear_grad();
    result.loss_curve.push_back(loss_value);
    result.steps_run = step;
    if (on_step) on_step(step, ids, loss_value);

    const bool last_step = step == cfg.max_steps;
    if (!split.validation.empty() && (step % cfg.eval_every == 0 || last_step)) {
      const EvalReport report = evaluate(net, split.validation, cfg.histogram_bins);
      EvalRecord record;
      record.step = step;
      record.train_loss = loss_value;
      record.valence = report.valence;
      record.arousal = report.arousal;
      result.evals.push_back(record);
      if (on_eval) on_eval(record);
      if (mean_val_rmse(record) < result.best_val_rmse) {
        result.best_val_rmse = mean_val_rmse(record);
        result.best_step = step;
        result.best = snapshot(net, step);
      }
      if (cfg.stop_at_val_rmse > 0.0 && record.valence.rmse <= cfg.stop_at_val_rmse &&
          record.arousal.rmse <= cfg.stop_at_val_rmse)
        break;
    }
  }
  if (result.best.tensors.empty()) {
    result.best = snapshot(net, result.steps_run);
    result.best_step = result.steps_run;
  }
  return result;
}

}  // namespace affect
