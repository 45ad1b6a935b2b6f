#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "affect/layers.hpp"
#include "affect/lstm.hpp"
#include "affect/tensor.hpp"

namespace affect {

enum class Variant { Shallow, Deep, Lstm };

inline Variant parse_variant(const std::string& s) {
  if (s == "shallow") return Variant::Shallow;
  if (s == "deep") return Variant::Deep;
  if (s == "lstm") return Variant::Lstm;
  throw UnknownVariant("'" + s + "' (expected shallow, deep, or lstm)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Shallow: return "shallow";
    case Variant::Deep: return "deep";
    case Variant::Lstm: return "lstm";
  }
  throw UnknownVariant("invalid variant enum value");
}

/// Architecture hyperparameters. Channel widths scale from the default table;
/// the paper-level topology (stem -> A [-> Reduction -> B] -> dropout -> head)
/// is fixed per variant.
struct NetConfig {
  Variant variant = Variant::Shallow;
  double width_mult = 1.0;        // scales every channel count
  double stem_width_mult = 1.0;   // extra factor for stem convs
  double block_width_mult = 1.0;  // extra factor for Inception/Reduction branches
  double keep_prob = 0.8;         // dropout keep probability
  double residual_scale = 0.1;    // scaling of the residual branch before addition
  std::size_t lstm_hidden = 200;  // hidden units per directional LSTM

  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(width_mult) || !positive(stem_width_mult) || !positive(block_width_mult))
      throw InvalidOverride("width multipliers must be positive");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
      throw InvalidOverride("keep_prob must lie in (0,1], got " + std::to_string(keep_prob));
    if (!(residual_scale > 0.0 && residual_scale <= 1.0))
      throw InvalidOverride("residual_scale must lie in (0,1], got " +
                            std::to_string(residual_scale));
    if (lstm_hidden == 0) throw InvalidOverride("lstm_hidden must be positive");
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[32];
    auto f = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    os << "variant = " << variant_name(variant) << "\n"
       << "width_mult = " << f(width_mult) << "\n"
       << "stem_width_mult = " << f(stem_width_mult) << "\n"
       << "block_width_mult = " << f(block_width_mult) << "\n"
       << "keep_prob = " << f(keep_prob) << "\n"
       << "residual_scale = " << f(residual_scale) << "\n"
       << "lstm_hidden = " << lstm_hidden << "\n";
    return os.str();
  }

  /// Parses "key = value" lines; '#' starts a comment. Unknown keys or
  /// unparsable values raise InvalidOverride.
  static NetConfig from_text(const std::string& text) {
    NetConfig cfg;
    std::istringstream in(text);
    std::string line;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw InvalidOverride("line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      auto as_double = [&](double& out) {
        std::size_t pos = 0;
        try {
          out = std::stod(value, &pos);
        } catch (const std::exception&) {
          pos = std::string::npos;
        }
        if (pos != value.size())
          throw InvalidOverride("line " + std::to_string(lineno) + ": bad value '" +
                                value + "' for " + key);
      };
      if (key == "variant") {
        cfg.variant = parse_variant(value);
      } else if (key == "width_mult") {
        as_double(cfg.width_mult);
      } else if (key == "stem_width_mult") {
        as_double(cfg.stem_width_mult);
      } else if (key == "block_width_mult") {
        as_double(cfg.block_width_mult);
      } else if (key == "keep_prob") {
        as_double(cfg.keep_prob);
      } else if (key == "residual_scale") {
        as_double(cfg.residual_scale);
      } else if (key == "lstm_hidden") {
        double v = 0.0;
        as_double(v);
        if (v < 1.0 || v != std::floor(v))
          throw InvalidOverride("line " + std::to_string(lineno) +
                                ": lstm_hidden must be a positive integer");
        cfg.lstm_hidden = static_cast<std::size_t>(v);
      } else {
        throw InvalidOverride("line " + std::to_string(lineno) + ": unknown key '" +
                              key + "'");
      }
    }
    cfg.validate();
    return cfg;
  }

  static NetConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return from_text(os.str());
  }
};

// ---------------------------------------------------------------------------
// Parameter traversal
// ---------------------------------------------------------------------------

/// Called with (name, tensor, trainable); running statistics visit as
/// non-trainable state.
using ParamVisitor = std::function<void(const std::string&, Tensor&, bool)>;

// ---------------------------------------------------------------------------
// Composite blocks
// ---------------------------------------------------------------------------

/// Convolution + batchnorm unit; every convolution in these networks is
/// followed by a batchnorm, ReLU-activated unless marked Linear.
struct ConvBn {
  ConvParams conv;
  BatchNormParams bn;

  Tensor forward(const Tensor& x, Mode mode) { return batchnorm(conv2d(x, conv), bn, mode); }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    v(prefix + ".kernel", conv.kernel, true);
    v(prefix + ".bias", conv.bias, true);
    v(prefix + ".bn.gamma", bn.gamma, true);
    v(prefix + ".bn.beta", bn.beta, true);
    v(prefix + ".bn.running_mean", bn.running_mean, false);
    v(prefix + ".bn.running_var", bn.running_var, false);
  }
};

namespace detail {

inline ConvBn make_conv_bn(std::size_t kh, std::size_t kw, std::size_t cin,
                           std::size_t cout, std::size_t sh, std::size_t sw,
                           Padding padding, Activation act, Rng& rng) {
  ConvBn layer;
  const double sigma = std::sqrt(2.0 / static_cast<double>(kh * kw * cin));
  layer.conv.kernel = Tensor::truncated_normal({kh, kw, cin, cout}, rng, sigma);
  layer.conv.kernel.set_requires_grad(true);
  layer.conv.bias = Tensor::zeros({cout});
  layer.conv.bias.set_requires_grad(true);
  layer.conv.stride_h = sh;
  layer.conv.stride_w = sw;
  layer.conv.padding = padding;
  layer.bn.gamma = Tensor::full({cout}, 1.0);
  layer.bn.gamma.set_requires_grad(true);
  layer.bn.beta = Tensor::zeros({cout});
  layer.bn.beta.set_requires_grad(true);
  layer.bn.running_mean = Tensor::zeros({cout});
  layer.bn.running_var = Tensor::full({cout}, 1.0);
  layer.bn.activation = act;
  return layer;
}

inline std::size_t scaled(double mult, std::size_t base) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mult * base)));
}

}  // namespace detail

/// Downsampling stack ahead of the Inception modules. Layout:
///   conv3x3/2 -> conv3x3 -> maxpool3x3/2 -> conv1x1 -> conv3x3
/// The Shallow variant runs it with Valid padding, Deep and Lstm with Same
/// padding everywhere (49 -> 25 -> 13 ahead of the Reduction).
struct Stem {
  ConvBn c0, c1, c2, c3;
  Padding padding = Padding::Valid;

  Tensor forward(const Tensor& x, Mode mode) {
    Tensor y = c0.forward(x, mode);
    y = c1.forward(y, mode);
    y = maxpool(y, 3, 3, 2, 2, padding);
    y = c2.forward(y, mode);
    return c3.forward(y, mode);
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    c0.visit(prefix + ".c0", v);
    c1.visit(prefix + ".c1", v);
    c2.visit(prefix + ".c2", v);
    c3.visit(prefix + ".c3", v);
  }
};

/// Inception-ResNet-A: 1x1, 1x1-3x3 and 1x1-3x3-3x3 branches, concatenated,
/// projected back to the input channel count by a Linear-batchnorm 1x1
/// convolution, scaled, added to the input, then ReLU.
struct InceptionResA {
  ConvBn b0;
  ConvBn b1a, b1b;
  ConvBn b2a, b2b, b2c;
  ConvBn proj;  // Linear
  double residual_scale = 0.1;

  Tensor forward(const Tensor& x, Mode mode) {
    const Tensor r0 = b0.forward(x, mode);
    const Tensor r1 = b1b.forward(b1a.forward(x, mode), mode);
    const Tensor r2 = b2c.forward(b2b.forward(b2a.forward(x, mode), mode), mode);
    const Tensor residual = proj.forward(concat_channels({r0, r1, r2}), mode);
    return relu(add(x, scale(residual, residual_scale)));
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    b0.visit(prefix + ".b0", v);
    b1a.visit(prefix + ".b1a", v);
    b1b.visit(prefix + ".b1b", v);
    b2a.visit(prefix + ".b2a", v);
    b2b.visit(prefix + ".b2b", v);
    b2c.visit(prefix + ".b2c", v);
    proj.visit(prefix + ".proj", v);
  }
};

/// Grid-size reduction (13x13 -> 7x7 in the Deep trunk): stride-2 maxpool
/// passthrough, stride-2 3x3 convolution, and a 1x1-3x3-3x3/2 chain,
/// concatenated on channels.
struct ReductionBlock {
  ConvBn b1;
  ConvBn b2a, b2b, b2c;

  Tensor forward(const Tensor& x, Mode mode) {
    const Tensor pool = maxpool(x, 3, 3, 2, 2, Padding::Same);
    const Tensor r1 = b1.forward(x, mode);
    const Tensor r2 = b2c.forward(b2b.forward(b2a.forward(x, mode), mode), mode);
    return concat_channels({pool, r1, r2});
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    b1.visit(prefix + ".b1", v);
    b2a.visit(prefix + ".b2a", v);
    b2b.visit(prefix + ".b2b", v);
    b2c.visit(prefix + ".b2c", v);
  }
};

/// Inception-ResNet-B: 1x1 branch plus a 1x1 -> 1x7 -> 7x1 factorized branch,
/// concatenated, Linear 1x1 projection, scaled residual addition, ReLU.
struct InceptionResB {
  ConvBn b0;
  ConvBn b1a, b1b, b1c;
  ConvBn proj;  // Linear
  double residual_scale = 0.1;

  Tensor forward(const Tensor& x, Mode mode) {
    const Tensor r0 = b0.forward(x, mode);
    const Tensor r1 = b1c.forward(b1b.forward(b1a.forward(x, mode), mode), mode);
    const Tensor residual = proj.forward(concat_channels({r0, r1}), mode);
    return relu(add(x, scale(residual, residual_scale)));
  }

  void visit(const std::string& prefix, const ParamVisitor& v) {
    b0.visit(prefix + ".b0", v);
    b1a.visit(prefix + ".b1a", v);
    b1b.visit(prefix + ".b1b", v);
    b1c.visit(prefix + ".b1c", v);
    proj.visit(prefix + ".proj", v);
  }
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Named output shapes recorded along a forward pass.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> stages;

  const Shape* find(const std::string& name) const {
    for (const auto& [stage, shape] : stages)
      if (stage == name) return &shape;
    return nullptr;
  }
};

inline constexpr std::size_t kInputSize = 49;   // input faces are 49x49x3
inline constexpr std::size_t kOutputDim = 2;    // (valence, arousal) per frame

/// One of the three architectures, with its parameters. Inputs are
/// [n,49,49,3]; outputs are raw [n,2] predictions (clamping to the label
/// domain happens at evaluation time, not here).
class Network {
 public:
  NetConfig config;
  Stem stem;
  InceptionResA block_a;
  std::optional<ReductionBlock> reduction;
  std::optional<InceptionResB> block_b;
  std::optional<LstmParams> lstm_width;
  std::optional<LstmParams> lstm_height;
  DenseParams head;

  Tensor forward(const Tensor& batch, Mode mode, Rng* rng = nullptr,
                 ShapeTrace* trace = nullptr) {
    if (batch.rank() != 4 || batch.dim(1) != kInputSize || batch.dim(2) != kInputSize ||
        batch.dim(3) != 3)
      throw ShapeMismatch("network input must be [n,49,49,3], got " +
                          shape_str(batch.shape()));
    if (mode == Mode::Train && rng == nullptr)
      throw Error("Train-mode forward requires an Rng for dropout");
    auto record = [trace](const char* name, const Tensor& t) {
      if (trace) trace->stages.emplace_back(name, t.shape());
    };
    record("input", batch);
    Tensor x = stem.forward(batch, mode);
    record("stem", x);
    x = block_a.forward(x, mode);
    record("inception_a", x);
    if (reduction) {
      x = reduction->forward(x, mode);
      record("reduction", x);
    }
    if (block_b) {
      x = block_b->forward(x, mode);
      record("inception_b", x);
    }
    if (mode == Mode::Train) {
      x = dropout(x, DropoutParams{config.keep_prob, mode}, *rng);
    }
    record("dropout", x);
    if (lstm_width) {
      x = dual_direction_head(x, *lstm_width, *lstm_height);
      record("lstm_head", x);
    } else {
      x = global_avg_pool(x);
      record("global_avg_pool", x);
    }
    x = dense(x, head);
    record("head", x);
    return x;
  }

  /// Visits every named state tensor in canonical (checkpoint) order.
  void visit_state(const ParamVisitor& v) {
    stem.visit("stem", v);
    block_a.visit("block_a", v);
    if (reduction) reduction->visit("reduction", v);
    if (block_b) block_b->visit("block_b", v);
    auto visit_lstm = [&v](const std::string& prefix, LstmParams& p) {
      v(prefix + ".W_f", p.W_f, true);
      v(prefix + ".W_i", p.W_i, true);
      v(prefix + ".W_o", p.W_o, true);
      v(prefix + ".W_C", p.W_C, true);
      v(prefix + ".b_f", p.b_f, true);
      v(prefix + ".b_i", p.b_i, true);
      v(prefix + ".b_o", p.b_o, true);
      v(prefix + ".b_C", p.b_C, true);
    };
    if (lstm_width) visit_lstm("lstm_width", *lstm_width);
    if (lstm_height) visit_lstm("lstm_height", *lstm_height);
    v("head.weight", head.weight, true);
    v("head.bias", head.bias, true);
  }

  std::vector<std::pair<std::string, Tensor*>> trainable_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_state([&out](const std::string& name, Tensor& t, bool trainable) {
      if (trainable) out.emplace_back(name, &t);
    });
    return out;
  }

  /// Total count of trainable scalars.
  std::size_t parameter_count() {
    std::size_t n = 0;
    visit_state([&n](const std::string&, Tensor& t, bool trainable) {
      if (trainable) n += t.size();
    });
    return n;
  }

  /// Ordered block kinds, for architecture assertions.
  std::vector<std::string> block_kinds() const {
    std::vector<std::string> kinds{"stem", "inception_resnet_a"};
    if (reduction) kinds.push_back("reduction");
    if (block_b) kinds.push_back("inception_resnet_b");
    kinds.push_back("dropout");
    kinds.push_back(lstm_width ? "lstm_head" : "global_avg_pool");
    kinds.push_back("dense");
    return kinds;
  }
};

/// Builds and initializes one of the three architectures.
inline Network build_network(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Network net;
  net.config = cfg;
  const double sm = cfg.width_mult * cfg.stem_width_mult;
  const double bm = cfg.width_mult * cfg.block_width_mult;
  const Padding pad = cfg.variant == Variant::Shallow ? Padding::Valid : Padding::Same;
  auto ext = [pad](std::size_t in, std::size_t k, std::size_t s) {
    return detail::out_extent(in, k, s, pad);
  };

  // Stem: 49 -> 8 (Valid) or 49 -> 13 (Same).
  const std::size_t s0 = detail::scaled(sm, 16), s1 = detail::scaled(sm, 24);
  const std::size_t s2 = detail::scaled(sm, 24), s3 = detail::scaled(sm, 64);
  net.stem.padding = pad;
  net.stem.c0 = detail::make_conv_bn(3, 3, 3, s0, 2, 2, pad, Activation::ReLU, rng);
  net.stem.c1 = detail::make_conv_bn(3, 3, s0, s1, 1, 1, pad, Activation::ReLU, rng);
  net.stem.c2 = detail::make_conv_bn(1, 1, s1, s2, 1, 1, pad, Activation::ReLU, rng);
  net.stem.c3 = detail::make_conv_bn(3, 3, s2, s3, 1, 1, pad, Activation::ReLU, rng);
  std::size_t extent = ext(ext(ext(ext(kInputSize, 3, 2), 3, 1), 3, 2), 3, 1);
  std::size_t channels = s3;

  // Inception-ResNet-A (branch convs always Same so the residual shapes match).
  const std::size_t a = detail::scaled(bm, 16);
  net.block_a.residual_scale = cfg.residual_scale;
  net.block_a.b0 = detail::make_conv_bn(1, 1, channels, a, 1, 1, Padding::Same,
                                        Activation::ReLU, rng);
  net.block_a.b1a = detail::make_conv_bn(1, 1, channels, a, 1, 1, Padding::Same,
                                         Activation::ReLU, rng);
  net.block_a.b1b = detail::make_conv_bn(3, 3, a, a, 1, 1, Padding::Same,
                                         Activation::ReLU, rng);
  net.block_a.b2a = detail::make_conv_bn(1, 1, channels, a, 1, 1, Padding::Same,
                                         Activation::ReLU, rng);
  net.block_a.b2b = detail::make_conv_bn(3, 3, a, a, 1, 1, Padding::Same,
                                         Activation::ReLU, rng);
  net.block_a.b2c = detail::make_conv_bn(3, 3, a, a, 1, 1, Padding::Same,
                                         Activation::ReLU, rng);
  net.block_a.proj = detail::make_conv_bn(1, 1, 3 * a, channels, 1, 1, Padding::Same,
                                          Activation::Linear, rng);

  if (cfg.variant != Variant::Shallow) {
    // Reduction 13x13 -> 7x7.
    const std::size_t r1 = detail::scaled(bm, 32), r2a = detail::scaled(bm, 16);
    const std::size_t r2b = detail::scaled(bm, 16), r2c = detail::scaled(bm, 32);
    ReductionBlock red;
    red.b1 = detail::make_conv_bn(3, 3, channels, r1, 2, 2, Padding::Same,
                                  Activation::ReLU, rng);
    red.b2a = detail::make_conv_bn(1, 1, channels, r2a, 1, 1, Padding::Same,
                                   Activation::ReLU, rng);
    red.b2b = detail::make_conv_bn(3, 3, r2a, r2b, 1, 1, Padding::Same,
                                   Activation::ReLU, rng);
    red.b2c = detail::make_conv_bn(3, 3, r2b, r2c, 2, 2, Padding::Same,
                                   Activation::ReLU, rng);
    net.reduction = std::move(red);
    extent = detail::out_extent(extent, 3, 2, Padding::Same);
    channels = channels + r1 + r2c;

    // Inception-ResNet-B.
    const std::size_t b = detail::scaled(bm, 32);
    InceptionResB blk;
    blk.residual_scale = cfg.residual_scale;
    blk.b0 = detail::make_conv_bn(1, 1, channels, b, 1, 1, Padding::Same,
                                  Activation::ReLU, rng);
    blk.b1a = detail::make_conv_bn(1, 1, channels, b, 1, 1, Padding::Same,
                                   Activation::ReLU, rng);
    blk.b1b = detail::make_conv_bn(1, 7, b, b, 1, 1, Padding::Same,
                                   Activation::ReLU, rng);
    blk.b1c = detail::make_conv_bn(7, 1, b, b, 1, 1, Padding::Same,
                                   Activation::ReLU, rng);
    blk.proj = detail::make_conv_bn(1, 1, 2 * b, channels, 1, 1, Padding::Same,
                                    Activation::Linear, rng);
    net.block_b = std::move(blk);
  }

  std::size_t head_in = channels;  // global average pooling ahead of the head
  if (cfg.variant == Variant::Lstm) {
    net.lstm_width = LstmParams::init(extent * channels, cfg.lstm_hidden, rng);
    net.lstm_height = LstmParams::init(extent * channels, cfg.lstm_hidden, rng);
    head_in = 2 * cfg.lstm_hidden;
  }
  net.head.weight = Tensor::truncated_normal(
      {head_in, kOutputDim}, rng, std::sqrt(1.0 / static_cast<double>(head_in)));
  net.head.weight.set_requires_grad(true);
  net.head.bias = Tensor::zeros({kOutputDim});
  net.head.bias.set_requires_grad(true);
  return net;
}

}  // namespace affect
