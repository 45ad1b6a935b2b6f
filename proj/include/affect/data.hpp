#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "affect/image_png.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

inline constexpr std::size_t kImageSize = 49;  // face crops are 49x49x3

/// One face crop with its per-frame circumplex annotation.
struct AnnotatedFrame {
  Tensor image;  // [49,49,3], values in [0,1]
  double valence = 0.0;
  double arousal = 0.0;
  std::string subject_id;
  std::string video_id;
  std::int64_t frame_index = 0;
};

/// Subject-level train/validation partition; no subject appears on both sides.
struct DatasetSplit {
  std::vector<AnnotatedFrame> train;
  std::vector<AnnotatedFrame> validation;
  double validation_subject_fraction = 0.10;
};

namespace detail {

/// Bilinear resampling to 49x49, double precision, pixel-center aligned.
inline Tensor resize_bilinear(const Rgb8Image& src) {
  Tensor out({kImageSize, kImageSize, 3});
  auto o = out.mutable_data();
  const double sy = static_cast<double>(src.height) / kImageSize;
  const double sx = static_cast<double>(src.width) / kImageSize;
  for (std::size_t y = 0; y < kImageSize; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), src.height - 1);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), src.width - 1);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double p00 = src.pixels[(y0 * src.width + x0) * 3 + c];
        const double p01 = src.pixels[(y0 * src.width + x1) * 3 + c];
        const double p10 = src.pixels[(y1 * src.width + x0) * 3 + c];
        const double p11 = src.pixels[(y1 * src.width + x1) * 3 + c];
        const double v = (1 - wy) * ((1 - wx) * p00 + wx * p01) +
                         wy * ((1 - wx) * p10 + wx * p11);
        o[(y * kImageSize + x) * 3 + c] = v / 255.0;
      }
    }
  }
  return out;
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_label(const std::string& s, std::size_t row, const char* column) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw MalformedAnnotation("row " + std::to_string(row) + ": bad " + column +
                              " value '" + s + "'");
  }
  if (pos != s.size())
    throw MalformedAnnotation("row " + std::to_string(row) + ": bad " + column +
                              " value '" + s + "'");
  if (!(v >= -1.0 && v <= 1.0))
    throw LabelOutOfRange("row " + std::to_string(row) + ": " + column + " " + s +
                          " outside [-1,1]");
  return v;
}

inline std::string format_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kAnnotationHeader =
    "video_id,subject_id,frame_index,image_path,valence,arousal";

/// Loads frames from `annotations` (CSV, header above), resolving image paths
/// against `image_dir`. Images are rescaled to [0,1]; non-49x49 images are
/// resized bilinearly. Frame order equals annotation-file order.
inline std::vector<AnnotatedFrame> load_dataset(const std::filesystem::path& image_dir,
                                                const std::filesystem::path& annotations) {
  std::ifstream in(annotations);
  if (!in) throw IoFailure("cannot open annotations " + annotations.string());
  std::vector<AnnotatedFrame> frames;
  std::string line;
  std::size_t row = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    if (!saw_header) {
      // Header is optional so that concatenated shards also load.
      saw_header = true;
      if (line.rfind("video_id,", 0) == 0) continue;
    }
    const auto fields = detail::split_csv_row(line);
    if (fields.size() != 6)
      throw MalformedAnnotation("row " + std::to_string(row) + ": expected 6 fields, got " +
                                std::to_string(fields.size()));
    AnnotatedFrame f;
    f.video_id = fields[0];
    f.subject_id = fields[1];
    try {
      f.frame_index = std::stoll(fields[2]);
    } catch (const std::exception&) {
      throw MalformedAnnotation("row " + std::to_string(row) + ": bad frame_index '" +
                                fields[2] + "'");
    }
    const std::filesystem::path img_path = image_dir / fields[3];
    f.valence = detail::parse_label(fields[4], row, "valence");
    f.arousal = detail::parse_label(fields[5], row, "arousal");
    if (!std::filesystem::exists(img_path))
      throw MissingImage("row " + std::to_string(row) + ": " + img_path.string());
    const Rgb8Image img = read_png_rgb8(img_path);
    if (img.height == kImageSize && img.width == kImageSize) {
      std::vector<double> data(img.pixels.size());
      for (std::size_t i = 0; i < img.pixels.size(); ++i) data[i] = img.pixels[i] / 255.0;
      f.image = Tensor({kImageSize, kImageSize, 3}, std::move(data));
    } else {
      f.image = detail::resize_bilinear(img);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

/// Writes frames as `<out_dir>/<video_id>/<frame_index>.png` plus
/// `<out_dir>/annotations.csv`. Pixels quantize to 8 bits.
inline void save_dataset(const std::filesystem::path& out_dir,
                         std::span<const AnnotatedFrame> frames) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create " + out_dir.string() + ": " + ec.message());
  std::ofstream csv(out_dir / "annotations.csv", std::ios::binary);
  if (!csv) throw IoFailure("cannot write annotations.csv under " + out_dir.string());
  csv << kAnnotationHeader << "\n";
  for (const AnnotatedFrame& f : frames) {
    std::filesystem::create_directories(out_dir / f.video_id, ec);
    if (ec) throw IoFailure("cannot create video directory " + f.video_id);
    const std::string rel = f.video_id + "/" + std::to_string(f.frame_index) + ".png";
    Rgb8Image img;
    img.height = img.width = kImageSize;
    img.pixels.resize(kImageSize * kImageSize * 3);
    auto d = f.image.data();
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      const double v = std::clamp(d[i], 0.0, 1.0);
      img.pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    write_png_rgb8(out_dir / rel, img);
    csv << f.video_id << "," << f.subject_id << "," << f.frame_index << "," << rel << ","
        << detail::format_label(f.valence) << "," << detail::format_label(f.arousal)
        << "\n";
  }
  if (!csv.flush()) throw IoFailure("failed writing annotations.csv");
}

/// Shuffles the distinct subjects with `rng` and assigns the first
/// ceil(fraction * subjects) of them (at most subjects-1) to validation.
inline DatasetSplit split_by_subject(std::vector<AnnotatedFrame> frames, double fraction,
                                     Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw TooFewSubjects("validation fraction must lie in (0,1), got " +
                         std::to_string(fraction));
  std::vector<std::string> subjects;  // first-appearance order, then shuffled
  for (const AnnotatedFrame& f : frames)
    if (std::find(subjects.begin(), subjects.end(), f.subject_id) == subjects.end())
      subjects.push_back(f.subject_id);
  if (subjects.size() < 2)
    throw TooFewSubjects("subject-level split needs at least 2 subjects, got " +
                         std::to_string(subjects.size()));
  rng.shuffle(subjects);
  std::size_t n_val = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(subjects.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, subjects.size() - 1);
  const std::set<std::string> val_subjects(subjects.begin(), subjects.begin() + n_val);
  DatasetSplit split;
  split.validation_subject_fraction = fraction;
  for (AnnotatedFrame& f : frames) {
    if (val_subjects.count(f.subject_id))
      split.validation.push_back(std::move(f));
    else
      split.train.push_back(std::move(f));
  }
  return split;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Synthesizes a labeled dataset on the valence/arousal circumplex.
///
/// Labels: with probability `center_bias` a tight Gaussian at the origin
/// (sigma 0.05, truncated to [-1,1]^2), otherwise uniform on the unit disk.
/// Images encode the labels in the red/green channel means, plus a
/// subject-specific spatial texture and small pixel noise, so the labels are
/// learnable from pixels alone. One video per subject.
inline std::vector<AnnotatedFrame> synth_generate(std::size_t n_subjects,
                                                  std::size_t frames_per_subject,
                                                  double center_bias, Rng& rng) {
  if (n_subjects == 0 || frames_per_subject == 0)
    throw EmptyDataset("synth_generate needs at least one subject and one frame");
  if (!(center_bias >= 0.0 && center_bias <= 1.0))
    throw InvalidOverride("center_bias must lie in [0,1], got " +
                          std::to_string(center_bias));
  std::vector<AnnotatedFrame> frames;
  frames.reserve(n_subjects * frames_per_subject);
  for (std::size_t s = 0; s < n_subjects; ++s) {
    char sid[32], vid[32];
    std::snprintf(sid, sizeof(sid), "s%03llu", static_cast<unsigned long long>(s));
    std::snprintf(vid, sizeof(vid), "v%03llu", static_cast<unsigned long long>(s));
    // Subject texture derived from the id, not the rng stream.
    const std::uint64_t h = detail::fnv1a(sid);
    const double phase = 2.0 * M_PI * static_cast<double>(h % 1024) / 1024.0;
    const double freq = 1.0 + static_cast<double>((h >> 10) % 3);
    for (std::size_t k = 0; k < frames_per_subject; ++k) {
      double v, a;
      if (rng.uniform() < center_bias) {
        do {
          v = rng.normal(0.0, 0.05);
          a = rng.normal(0.0, 0.05);
        } while (std::fabs(v) > 1.0 || std::fabs(a) > 1.0);
      } else {
        do {
          v = rng.uniform(-1.0, 1.0);
          a = rng.uniform(-1.0, 1.0);
        } while (v * v + a * a > 1.0);
      }
      AnnotatedFrame f;
      f.subject_id = sid;
      f.video_id = vid;
      f.frame_index = static_cast<std::int64_t>(k);
      f.valence = v;
      f.arousal = a;
      f.image = Tensor({kImageSize, kImageSize, 3});
      auto img = f.image.mutable_data();
      for (std::size_t y = 0; y < kImageSize; ++y)
        for (std::size_t x = 0; x < kImageSize; ++x) {
          const double tex = 0.08 *
                             std::sin(2.0 * M_PI * freq * x / (kImageSize - 1) + phase) *
                             std::cos(2.0 * M_PI * freq * y / (kImageSize - 1) + phase);
          const double base[3] = {(v + 1.0) * 0.5, (a + 1.0) * 0.5, 0.5};
          for (std::size_t c = 0; c < 3; ++c) {
            const double noise = rng.uniform(-0.02, 0.02);
            img[(y * kImageSize + x) * 3 + c] = std::clamp(base[c] + tex + noise, 0.0, 1.0);
          }
        }
      frames.push_back(std::move(f));
    }
  }
  return frames;
}

}  // namespace affect
