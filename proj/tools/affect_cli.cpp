// Command-line front end: dataset synthesis, training, evaluation, prediction,
// and histogram emission for the Inception-ResNet valence/arousal estimators.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "affect/affect.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metric_or_undefined(const std::optional<double>& v) {
  return v ? fmt17(*v) : "undefined";
}

struct SynthArgs {
  std::string out;
  std::size_t subjects = 0;
  std::size_t frames = 0;
  double center_bias = 0.6;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& args) {
  affect::Rng rng(args.seed);
  const auto frames =
      affect::synth_generate(args.subjects, args.frames, args.center_bias, rng);
  affect::save_dataset(args.out, frames);
  std::cout << "wrote " << frames.size() << " frames for " << args.subjects
            << " subjects to " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string variant;
  std::string config_file;
  std::string out;
  std::string log_file;
  affect::TrainConfig cfg;
};

int run_train(const TrainArgs& args) {
  affect::NetConfig net_cfg;
  if (!args.config_file.empty())
    net_cfg = affect::NetConfig::from_file(args.config_file);
  if (!args.variant.empty()) net_cfg.variant = affect::parse_variant(args.variant);

  const auto frames =
      affect::load_dataset(args.data, fs::path(args.data) / "annotations.csv");
  if (frames.empty()) throw affect::EmptyDataset("no frames in " + args.data);
  affect::Rng split_rng(args.cfg.seed);
  const auto split =
      affect::split_by_subject(frames, args.cfg.val_fraction, split_rng);

  affect::Rng init_rng(args.cfg.seed);
  affect::Network net = affect::build_network(net_cfg, init_rng);
  std::cout << "variant: " << affect::variant_name(net_cfg.variant) << "\n"
            << "parameters: " << net.parameter_count() << "\n"
            << "train frames: " << split.train.size()
            << ", validation frames: " << split.validation.size() << "\n";
  if (net_cfg.variant == affect::Variant::Lstm) {
    // Probe the concatenated LSTM feature width on a single frame.
    affect::ShapeTrace trace;
    affect::NoGradGuard no_grad;
    std::vector<std::size_t> one{0};
    const affect::Tensor probe = affect::detail::assemble_images(split.train, one);
    net.forward(probe, affect::Mode::Eval, nullptr, &trace);
    if (const affect::Shape* s = trace.find("lstm_head"))
      std::cout << "lstm concatenated feature width: " << s->back() << "\n";
  }

  std::ofstream log;
  if (!args.log_file.empty()) {
    log.open(args.log_file);
    if (!log) throw affect::IoFailure("cannot open log file " + args.log_file);
  }
  auto on_eval = [&log](const affect::EvalRecord& r) {
    std::ostringstream os;
    os << "step=" << r.step << " loss=" << fmt17(r.train_loss)
       << " val.valence.rmse=" << fmt17(r.valence.rmse)
       << " val.arousal.rmse=" << fmt17(r.arousal.rmse)
       << " val.valence.cc=" << metric_or_undefined(r.valence.cc)
       << " val.arousal.cc=" << metric_or_undefined(r.arousal.cc)
       << " val.valence.ccc=" << metric_or_undefined(r.valence.ccc)
       << " val.arousal.ccc=" << metric_or_undefined(r.arousal.ccc)
       << " val.valence.sagr=" << fmt17(r.valence.sagr)
       << " val.arousal.sagr=" << fmt17(r.arousal.sagr);
    std::cout << os.str() << "\n";
    if (log.is_open()) log << os.str() << "\n";
  };
  const affect::TrainResult result = affect::train(net, split, args.cfg, {}, on_eval);
  affect::save_checkpoint(args.out, result.best);
  std::cout << "steps run: " << result.steps_run << "\n";
  if (!result.evals.empty())
    std::cout << "best step: " << result.best_step
              << " (mean validation rmse " << fmt17(result.best_val_rmse) << ")\n";
  std::cout << "checkpoint: " << args.out << "\n";
  return 0;
}

affect::Network network_from_checkpoint(const affect::Checkpoint& ckpt) {
  const affect::NetConfig cfg = affect::NetConfig::from_text(ckpt.config_text);
  affect::Rng rng(0);  // architecture only; weights come from the checkpoint
  affect::Network net = affect::build_network(cfg, rng);
  affect::restore(net, ckpt);
  return net;
}

int run_eval(const std::string& data, const std::string& ckpt_path,
             const std::string& out, const std::string& hist_out, std::size_t bins) {
  const affect::Checkpoint ckpt = affect::load_checkpoint(ckpt_path);
  affect::Network net = network_from_checkpoint(ckpt);
  const auto frames = affect::load_dataset(data, fs::path(data) / "annotations.csv");
  const affect::EvalReport report = affect::evaluate(net, frames, bins);
  std::ofstream os(out);
  if (!os) throw affect::IoFailure("cannot write report " + out);
  os << "variant: "
     << affect::variant_name(affect::NetConfig::from_text(ckpt.config_text).variant)
     << "\n"
     << "checkpoint_step: " << ckpt.step << "\n"
     << affect::format_report(report);
  if (!os.flush()) throw affect::IoFailure("failed writing report " + out);
  const std::string hist_path = hist_out.empty() ? out + ".hist.csv" : hist_out;
  std::ofstream hs(hist_path);
  if (!hs) throw affect::IoFailure("cannot write histogram " + hist_path);
  hs << affect::histogram_csv(report.histogram);
  std::cout << "report: " << out << "\nhistogram: " << hist_path << "\n";
  return 0;
}

int run_predict(const std::string& data, const std::string& ckpt_path,
                const std::string& out) {
  const affect::Checkpoint ckpt = affect::load_checkpoint(ckpt_path);
  affect::Network net = network_from_checkpoint(ckpt);
  const auto frames = affect::load_dataset(data, fs::path(data) / "annotations.csv");
  const auto preds = affect::predict(net, frames);
  std::ofstream os(out);
  if (!os) throw affect::IoFailure("cannot write predictions " + out);
  os << "video_id,frame_index,valence,arousal\n";
  for (std::size_t i = 0; i < frames.size(); ++i)
    os << frames[i].video_id << "," << frames[i].frame_index << ","
       << fmt17(preds[i].first) << "," << fmt17(preds[i].second) << "\n";
  if (!os.flush()) throw affect::IoFailure("failed writing predictions " + out);
  std::cout << "wrote " << frames.size() << " predictions to " << out << "\n";
  return 0;
}

int run_histogram(const std::string& pred_csv, std::size_t bins,
                  const std::string& out) {
  std::ifstream is(pred_csv);
  if (!is) throw affect::IoFailure("cannot open predictions " + pred_csv);
  affect::Series valence, arousal;
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    if (row == 1 && line.rfind("video_id,", 0) == 0) continue;
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
    if (fields.size() != 4)
      throw affect::MalformedAnnotation("row " + std::to_string(row) +
                                        ": expected 4 fields");
    try {
      valence.push_back(std::stod(fields[2]));
      arousal.push_back(std::stod(fields[3]));
    } catch (const std::exception&) {
      throw affect::MalformedAnnotation("row " + std::to_string(row) +
                                        ": bad prediction values");
    }
  }
  const auto hist = affect::histogram2d(valence, arousal, bins);
  std::ofstream os(out);
  if (!os) throw affect::IoFailure("cannot write histogram " + out);
  os << affect::histogram_csv(hist);
  std::cout << "histogram of " << valence.size() << " rows (" << bins << "x" << bins
            << ") written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inception-ResNet valence/arousal estimation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();
  synth_cmd->add_option("--subjects", synth.subjects, "number of subjects")
      ->required()
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--frames", synth.frames, "frames per subject")
      ->required()
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--center-bias", synth.center_bias,
                        "probability mass near the circumplex center")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--seed", synth.seed, "generator seed");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->add_option("--data", train_args.data, "dataset directory")->required();
  train_cmd->add_option("--variant", train_args.variant, "shallow, deep, or lstm")
      ->check(CLI::IsMember({"shallow", "deep", "lstm"}));
  train_cmd->add_option("--config", train_args.config_file, "architecture config file");
  train_cmd->add_option("--out", train_args.out, "checkpoint output path")->required();
  train_cmd->add_option("--steps", train_args.cfg.max_steps, "max optimizer steps");
  train_cmd->add_option("--batch", train_args.cfg.batch_size, "batch size");
  train_cmd->add_option("--lr", train_args.cfg.learning_rate, "learning rate");
  train_cmd->add_option("--wd", train_args.cfg.weight_decay, "weight decay");
  train_cmd->add_option("--seed", train_args.cfg.seed, "training seed");
  train_cmd->add_option("--eval-every", train_args.cfg.eval_every,
                        "steps between validation evals");
  train_cmd->add_option("--val-fraction", train_args.cfg.val_fraction,
                        "fraction of subjects held out for validation")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--stop-rmse", train_args.cfg.stop_at_val_rmse,
                        "stop once both validation RMSEs reach this value");
  train_cmd->add_option("--log", train_args.log_file, "also append eval lines here");

  std::string eval_data, eval_ckpt, eval_out, eval_hist;
  std::size_t eval_bins = 20;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--out", eval_out, "report output path")->required();
  eval_cmd->add_option("--bins", eval_bins, "histogram bins per axis")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--hist-out", eval_hist,
                       "histogram CSV path (default: <report>.hist.csv)");

  std::string pred_data, pred_ckpt, pred_out;
  CLI::App* pred_cmd = app.add_subcommand("predict", "write per-frame predictions");
  pred_cmd->add_option("--data", pred_data, "dataset directory")->required();
  pred_cmd->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
  pred_cmd->add_option("--out", pred_out, "predictions CSV path")->required();

  std::string hist_pred, hist_out;
  std::size_t hist_bins = 20;
  CLI::App* hist_cmd =
      app.add_subcommand("histogram", "bin a predictions CSV over [-1,1]^2");
  hist_cmd->add_option("--pred", hist_pred, "predictions CSV")->required();
  hist_cmd->add_option("--bins", hist_bins, "bins per axis")->check(CLI::PositiveNumber);
  hist_cmd->add_option("--out", hist_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed())
      return run_eval(eval_data, eval_ckpt, eval_out, eval_hist, eval_bins);
    if (pred_cmd->parsed()) return run_predict(pred_data, pred_ckpt, pred_out);
    if (hist_cmd->parsed()) return run_histogram(hist_pred, hist_bins, hist_out);
  } catch (const affect::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
