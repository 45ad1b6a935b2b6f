#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "affect/errors.hpp"

namespace affect {

using Series = std::vector<double>;

namespace detail {

inline void check_lengths(std::span<const double> pred, std::span<const double> truth,
                          const char* op) {
  if (pred.size() != truth.size())
    throw LengthMismatch(std::string(op) + " on series of length " +
                         std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  if (pred.empty()) throw LengthMismatch(std::string(op) + " on empty series");
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population (1/n) variance, consistent with the CC/CCC intermediates.
inline double variance(std::span<const double> v, double mu) {
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size());
}

inline double covariance(std::span<const double> a, double mu_a,
                         std::span<const double> b, double mu_b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - mu_a) * (b[i] - mu_b);
  return s / static_cast<double>(a.size());
}

inline int sign3(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

}  // namespace detail

/// Root mean square error: sqrt(mean((pred - truth)^2)).
inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  detail::check_lengths(pred, truth, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Pearson correlation coefficient: cov(pred, truth) / (sigma_pred * sigma_truth).
/// A constant series has no defined correlation and raises ZeroVariance.
inline double cc(std::span<const double> pred, std::span<const double> truth) {
  detail::check_lengths(pred, truth, "cc");
  const double mp = detail::mean(pred), mt = detail::mean(truth);
  const double vp = detail::variance(pred, mp), vt = detail::variance(truth, mt);
  if (vp == 0.0 || vt == 0.0)
    throw ZeroVariance(std::string("correlation of a constant series (variance ") +
                       (vp == 0.0 ? "of predictions" : "of ground truth") + " is zero)");
  return detail::covariance(pred, mp, truth, mt) / std::sqrt(vp * vt);
}

/// Concordance correlation coefficient:
///   2*rho*sigma_p*sigma_t / (sigma_p^2 + sigma_t^2 + (mu_p - mu_t)^2)
/// computed through rho*sigma_p*sigma_t = cov(pred, truth).
inline double ccc(std::span<const double> pred, std::span<const double> truth) {
  detail::check_lengths(pred, truth, "ccc");
  const double mp = detail::mean(pred), mt = detail::mean(truth);
  const double vp = detail::variance(pred, mp), vt = detail::variance(truth, mt);
  const double denom = vp + vt + (mp - mt) * (mp - mt);
  if (denom == 0.0)
    throw ZeroDenominator("ccc of two constant series with equal means");
  return 2.0 * detail::covariance(pred, mp, truth, mt) / denom;
}

/// Sign agreement: mean Kronecker delta of the three-valued signs, so
/// sign(0) only agrees with sign(0).
inline double sagr(std::span<const double> pred, std::span<const double> truth) {
  detail::check_lengths(pred, truth, "sagr");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (detail::sign3(pred[i]) == detail::sign3(truth[i])) ++agree;
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

/// Counts over a bins x bins uniform grid on [-1,1]^2. The right edge of the
/// last bin is inclusive; out-of-range values clamp to the border bins.
/// Cell [i][j] covers the i-th valence and j-th arousal interval.
inline std::vector<std::vector<std::size_t>> histogram2d(
    std::span<const double> valence, std::span<const double> arousal,
    std::size_t bins) {
  detail::check_lengths(valence, arousal, "histogram2d");
  if (bins == 0) throw LengthMismatch("histogram2d with zero bins");
  std::vector<std::vector<std::size_t>> counts(bins, std::vector<std::size_t>(bins, 0));
  auto index = [bins](double x) {
    const auto raw = static_cast<long>(std::floor((x + 1.0) * 0.5 * static_cast<double>(bins)));
    return static_cast<std::size_t>(std::clamp<long>(raw, 0, static_cast<long>(bins) - 1));
  };
  for (std::size_t i = 0; i < valence.size(); ++i)
    ++counts[index(valence[i])][index(arousal[i])];
  return counts;
}

// ---------------------------------------------------------------------------
// Aggregate reports
// ---------------------------------------------------------------------------

/// Metrics for one output dimension; cc/ccc are absent when the series was
/// degenerate (constant) and the correlation is undefined.
struct MetricValues {
  double rmse = 0.0;
  double sagr = 0.0;
  std::optional<double> cc;
  std::optional<double> ccc;
};

inline MetricValues compute_metrics(std::span<const double> pred,
                                    std::span<const double> truth) {
  MetricValues m;
  m.rmse = rmse(pred, truth);
  m.sagr = sagr(pred, truth);
  try {
    m.cc = cc(pred, truth);
  } catch (const ZeroVariance&) {
  }
  try {
    m.ccc = ccc(pred, truth);
  } catch (const ZeroDenominator&) {
  }
  return m;
}

struct VideoMetrics {
  std::string video_id;
  std::size_t frames = 0;
  MetricValues valence;
  MetricValues arousal;
};

/// Per-set evaluation: headline metrics over the concatenation of all frames,
/// a per-video breakdown, and a 2-D histogram of the predictions.
struct EvalReport {
  std::size_t frames = 0;
  MetricValues valence;  // global, over all frames
  MetricValues arousal;
  std::vector<VideoMetrics> per_video;
  std::size_t undefined_series = 0;  // per-video cc/ccc that had no defined value
  std::size_t histogram_bins = 0;
  std::vector<std::vector<std::size_t>> histogram;  // over (pred valence, pred arousal)
};

/// video_ids[i] labels frame i; frames of one video need not be contiguous.
inline EvalReport build_eval_report(const std::vector<std::string>& video_ids,
                                    std::span<const double> pred_valence,
                                    std::span<const double> pred_arousal,
                                    std::span<const double> true_valence,
                                    std::span<const double> true_arousal,
                                    std::size_t histogram_bins = 20) {
  const std::size_t n = video_ids.size();
  if (pred_valence.size() != n || pred_arousal.size() != n ||
      true_valence.size() != n || true_arousal.size() != n)
    throw LengthMismatch("eval report series disagree with frame count " +
                         std::to_string(n));
  EvalReport report;
  report.frames = n;
  report.valence = compute_metrics(pred_valence, true_valence);
  report.arousal = compute_metrics(pred_arousal, true_arousal);
  report.histogram_bins = histogram_bins;
  report.histogram = histogram2d(pred_valence, pred_arousal, histogram_bins);

  std::vector<std::string> order;  // first-appearance order
  for (const auto& id : video_ids)
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
  for (const auto& id : order) {
    Series pv, pa, tv, ta;
    for (std::size_t i = 0; i < n; ++i) {
      if (video_ids[i] != id) continue;
      pv.push_back(pred_valence[i]);
      pa.push_back(pred_arousal[i]);
      tv.push_back(true_valence[i]);
      ta.push_back(true_arousal[i]);
    }
    VideoMetrics vm;
    vm.video_id = id;
    vm.frames = pv.size();
    vm.valence = compute_metrics(pv, tv);
    vm.arousal = compute_metrics(pa, ta);
    for (const MetricValues* m : {&vm.valence, &vm.arousal}) {
      if (!m->cc) ++report.undefined_series;
      if (!m->ccc) ++report.undefined_series;
    }
    report.per_video.push_back(std::move(vm));
  }
  return report;
}

namespace detail {

inline std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void append_metrics(std::ostringstream& os, const std::string& prefix,
                           const MetricValues& m) {
  os << prefix << ".rmse: " << fmt_double(m.rmse) << "\n";
  os << prefix << ".cc: " << (m.cc ? fmt_double(*m.cc) : "undefined") << "\n";
  os << prefix << ".ccc: " << (m.ccc ? fmt_double(*m.ccc) : "undefined") << "\n";
  os << prefix << ".sagr: " << fmt_double(m.sagr) << "\n";
}

}  // namespace detail

/// Structured "key: value" text; headline metrics first, per-video after.
inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "frames: " << r.frames << "\n";
  os << "videos: " << r.per_video.size() << "\n";
  detail::append_metrics(os, "valence", r.valence);
  detail::append_metrics(os, "arousal", r.arousal);
  os << "undefined.series: " << r.undefined_series << "\n";
  for (const VideoMetrics& vm : r.per_video) {
    const std::string prefix = "video." + vm.video_id;
    os << prefix << ".frames: " << vm.frames << "\n";
    detail::append_metrics(os, prefix + ".valence", vm.valence);
    detail::append_metrics(os, prefix + ".arousal", vm.arousal);
  }
  return os.str();
}

/// Histogram as a CSV matrix: row i = valence bin i, column j = arousal bin j.
inline std::string histogram_csv(const std::vector<std::vector<std::size_t>>& hist) {
  std::ostringstream os;
  for (const auto& row : hist) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << "\n";
  }
  return os.str();
}

}  // namespace affect
