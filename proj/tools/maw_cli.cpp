// Command-line front end: gen-data, train, score, eval, sweep, theory.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// abort, 1 anything else. Failures print one JSON object on stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "maw/config.hpp"
#include "maw/errors.hpp"
#include "maw/eval.hpp"
#include "maw/model.hpp"
#include "maw/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void log_line(const std::string& line) {
  const std::string out = line + "\n";
  std::cerr << out << std::flush;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

/// Seed precedence: --seed flag, then MAW_SEED, then the config file.
std::optional<std::uint64_t> resolved_seed(const CommonOptions& opts) {
  if (opts.seed) return opts.seed;
  if (const char* env = std::getenv("MAW_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw maw::ConfigError("MAW_SEED is not an unsigned integer", "MAW_SEED");
    }
  }
  return std::nullopt;
}

maw::RunConfig load_config(const CommonOptions& opts) {
  maw::RunConfig cfg = opts.config_path.empty() ? maw::RunConfig{} : maw::RunConfig::load(opts.config_path);
  if (auto seed = resolved_seed(opts)) cfg.seeds = {*seed};
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw maw::FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw maw::FormatError("failed writing " + path.string());
}

std::string provenance_comment(const json& config, std::uint64_t seed) {
  return json{{"config", config}, {"seed", seed}}.dump();
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
  CommonOptions common;
  std::optional<int> dim, rank, inliers;
  std::optional<double> c, noise;
  std::string out;
};

int run_gen_data(const GenDataOptions& o) {
  maw::RunConfig cfg = load_config(o.common);
  if (o.dim) cfg.data.synthetic.dim = *o.dim;
  if (o.rank) cfg.data.synthetic.rank = *o.rank;
  if (o.noise) cfg.data.synthetic.noise = *o.noise;
  if (o.inliers) cfg.split.train_inliers = *o.inliers;
  if (o.c) cfg.c_values = {*o.c};
  const std::uint64_t seed = cfg.seeds.front();
  const auto& s = cfg.data.synthetic;
  if (s.rank < 1 || s.rank >= s.dim) throw maw::ConfigError("rank must satisfy 1 <= rank < dim", "data.rank");
  if (!(s.noise >= 0.0)) throw maw::ConfigError("noise must be non-negative", "data.noise");
  if (cfg.split.train_inliers < 1) throw maw::ConfigError("inliers must be positive", "split.train_inliers");
  if (!(cfg.c_values.front() >= 0.0)) throw maw::ConfigError("c must be non-negative", "split.c");
  const maw::eval::Dataset d =
      maw::eval::gen_synthetic(s.dim, s.rank, cfg.split.train_inliers, cfg.c_values.front(), s.noise, seed);
  std::ostringstream text;
  maw::eval::write_csv(d, text, provenance_comment(cfg.to_json(), seed));
  write_text(o.out, text.str());
  log_line("gen-data: wrote " + std::to_string(d.size()) + " rows to " + o.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  std::string data;
  std::string checkpoint = "model.json";
  std::string trace = "loss_trace.csv";
  std::optional<int> epochs, batch_size, latent_dim, feature_dim, samples;
  std::optional<std::string> variant;
};

maw::eval::Dataset training_data(const maw::RunConfig& cfg, const std::string& data_flag, std::uint64_t seed) {
  if (!data_flag.empty()) return maw::eval::load_csv(data_flag);
  if (cfg.data.source == maw::eval::Provenance::Csv) return maw::eval::load_csv(cfg.data.path);
  const auto& s = cfg.data.synthetic;
  return maw::eval::gen_synthetic(s.dim, s.rank, cfg.split.train_inliers, cfg.c_values.front(), s.noise, seed);
}

void apply_model_flags(maw::RunConfig& cfg, const TrainOptions& o) {
  if (o.epochs) cfg.model.epochs = *o.epochs;
  if (o.batch_size) cfg.model.batch_size = *o.batch_size;
  if (o.latent_dim) cfg.model.latent_dim = *o.latent_dim;
  if (o.feature_dim) cfg.model.feature_dim = *o.feature_dim;
  if (o.samples) cfg.model.samples = *o.samples;
  if (o.variant) {
    cfg.model.variant = maw::parse_variant(*o.variant);
    cfg.variants = {cfg.model.variant};
  }
}

int run_train(const TrainOptions& o) {
  maw::RunConfig cfg = load_config(o.common);
  apply_model_flags(cfg, o);
  cfg.model.validate();
  const std::uint64_t seed = cfg.seeds.front();
  const maw::eval::Dataset data = training_data(cfg, o.data, seed);

  std::ostringstream trace;
  trace << "# " << provenance_comment(cfg.to_json(), seed) << '\n';
  trace << "epoch,loss_vae,loss_w1,loss_gen\n";
  const maw::TrainResult result = maw::train(data.features, cfg.model, seed, [&](const maw::EpochLoss& e) {
    trace << e.epoch << ',' << fmt(e.vae) << ',' << fmt(e.critic) << ',' << fmt(e.gen) << '\n';
    log_line("train: epoch " + std::to_string(e.epoch) + " loss_vae=" + fmt(e.vae));
  });

  json ckpt = result.model.to_json();
  ckpt["run"] = {{"config", cfg.to_json()}, {"seed", seed}};
  write_text(o.checkpoint, ckpt.dump() + "\n");
  write_text(o.trace, trace.str());
  log_line("train: wrote " + o.checkpoint + " and " + o.trace);
  return 0;
}

// ---------------------------------------------------------------------------

struct ScoreOptions {
  CommonOptions common;
  std::string checkpoint = "model.json";
  std::string data;
  std::string out = "scores.csv";
  std::optional<int> samples;
};

int run_score(const ScoreOptions& o) {
  const std::optional<std::uint64_t> seed_override = resolved_seed(o.common);
  const maw::MawModel model = maw::MawModel::load(o.checkpoint);
  const std::uint64_t seed = seed_override.value_or(model.seed());
  const int samples = o.samples.value_or(model.hyperparams().samples);
  if (samples < 1) throw maw::ConfigError("samples must be at least 1", "samples");
  const maw::eval::Dataset data = maw::eval::load_csv(o.data);
  if (data.dim() != model.input_dim()) {
    throw maw::FormatError("data has " + std::to_string(data.dim()) + " features, model expects " +
                           std::to_string(model.input_dim()));
  }
  const std::vector<double> scores = maw::score_all(model, data.features, samples, maw::stream_seed(seed, 2));

  const json provenance = {{"checkpoint", o.checkpoint}, {"data", o.data}, {"samples", samples}};
  std::ostringstream out;
  out << "# " << provenance_comment(provenance, seed) << '\n';
  out << (data.has_labels ? "index,score,label\n" : "index,score\n");
  for (int i = 0; i < data.size(); ++i) {
    out << i << ',' << fmt(scores[static_cast<std::size_t>(i)]);
    if (data.has_labels) out << ',' << data.labels[static_cast<std::size_t>(i)];
    out << '\n';
  }
  write_text(o.out, out.str());
  log_line("score: wrote " + std::to_string(data.size()) + " scores to " + o.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  CommonOptions common;
  std::optional<std::string> data;
  std::optional<std::string> output_dir;
  std::optional<std::string> param;
  std::vector<double> values;
};

void write_reports(const maw::RunConfig& cfg, const std::string& stem,
                   const std::vector<maw::eval::MetricReport>& reports) {
  const fs::path dir = cfg.output_dir;
  const json doc = {{"config", cfg.to_json()}, {"seeds", cfg.seeds}, {"results", maw::eval::report_json(reports)}};
  write_text(dir / (stem + ".json"), doc.dump(2) + "\n");
  write_text(dir / (stem + ".csv"), "# " + json{{"config", cfg.to_json()}, {"seeds", cfg.seeds}}.dump() + "\n" +
                                        maw::eval::report_csv(reports));
  log_line(stem + ": wrote " + (dir / (stem + ".json")).string() + " and " + (dir / (stem + ".csv")).string());
}

void apply_eval_flags(maw::RunConfig& cfg, const EvalOptions& o) {
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.data) {
    cfg.data.source = maw::eval::Provenance::Csv;
    cfg.data.path = *o.data;
  }
}

int run_eval(const EvalOptions& o) {
  maw::RunConfig cfg = load_config(o.common);
  apply_eval_flags(cfg, o);
  cfg.validate();
  const auto reports = maw::eval::run_experiment(cfg.experiment(), log_line);
  for (const auto& r : reports) {
    log_line("eval: " + r.variant + " c=" + fmt(r.c) + " auc=" + fmt(r.auc_mean) + " ap=" + fmt(r.ap_mean));
  }
  write_reports(cfg, "report", reports);
  return 0;
}

int run_sweep(const EvalOptions& o) {
  maw::RunConfig cfg = load_config(o.common);
  apply_eval_flags(cfg, o);
  if (o.param) cfg.sweep_param = *o.param;
  if (!o.values.empty()) cfg.sweep_values = o.values;
  if (cfg.sweep_param.empty()) throw maw::ConfigError("sweep needs a parameter", "sweep.param");
  if (cfg.sweep_values.empty()) throw maw::ConfigError("sweep needs values", "sweep.values");
  cfg.validate();
  const auto reports = maw::eval::sweep(cfg.experiment(), cfg.sweep_param, cfg.sweep_values, log_line);
  write_reports(cfg, "sweep", reports);
  return 0;
}

// ---------------------------------------------------------------------------

struct TheoryOptions {
  CommonOptions common;
  std::string out = "theory_report.json";
};

int run_theory(const TheoryOptions& o) {
  const std::uint64_t seed = resolved_seed(o.common).value_or(0);
  json report = maw::theory::verification_report(seed);
  for (const auto& p : report.at("propositions")) {
    log_line("theory: " + p.at("name").get<std::string>() + " " + (p.at("pass").get<bool>() ? "pass" : "FAIL"));
  }
  write_text(o.out, report.dump(2) + "\n");
  log_line("theory: wrote " + o.out);
  return 0;
}

void fail(const char* kind, const std::string& message, json extra = json::object()) {
  json err = {{"error", kind}, {"message", message}};
  err.update(extra);
  std::cerr << err.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAW robust novelty detector"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "maw 1.0.0");

  auto add_common = [](CLI::App* sub, CommonOptions& c) {
    sub->add_option("--config", c.config_path, "Run configuration (JSON)");
    sub->add_option("--seed", c.seed, "Seed; overrides MAW_SEED and the config file");
  };

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--dim", gen.dim, "Ambient dimension D");
  gen_cmd->add_option("--rank", gen.rank, "Intrinsic inlier rank");
  gen_cmd->add_option("--inliers", gen.inliers, "Number of inliers");
  gen_cmd->add_option("--c", gen.c, "Outlier fraction relative to inliers");
  gen_cmd->add_option("--noise", gen.noise, "Inlier noise level");
  gen_cmd->add_option("-o,--out", gen.out, "Output CSV")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes a checkpoint and a loss trace");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--data", tr.data, "Training CSV (overrides the config data section)");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "Checkpoint output path")->capture_default_str();
  train_cmd->add_option("--trace", tr.trace, "Loss trace CSV output path")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
  train_cmd->add_option("--latent-dim", tr.latent_dim, "Latent dimension d");
  train_cmd->add_option("--feature-dim", tr.feature_dim, "Encoder feature dimension D'");
  train_cmd->add_option("--samples", tr.samples, "Latent samples per point T");
  train_cmd->add_option("--variant", tr.variant, "maw, maw-mse, maw-kl, maw-same-rank, maw-single-gaussian, "
                                                 "maw-diagonal-cov or vae");

  ScoreOptions sc;
  auto* score_cmd = app.add_subcommand("score", "Score points with a trained model (higher = more normal)");
  add_common(score_cmd, sc.common);
  score_cmd->add_option("--checkpoint", sc.checkpoint, "Checkpoint path")->capture_default_str();
  score_cmd->add_option("--data", sc.data, "CSV of points to score")->required();
  score_cmd->add_option("-o,--out", sc.out, "Score CSV output path")->capture_default_str();
  score_cmd->add_option("--samples", sc.samples, "Latent samples per point T");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Train and evaluate over splits, variants and seeds");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("--data", ev.data, "Labelled CSV pool (overrides the config data section)");
  eval_cmd->add_option("--output-dir", ev.output_dir, "Directory for report.json and report.csv");

  EvalOptions sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Repeat eval over values of one parameter");
  add_common(sweep_cmd, sw.common);
  sweep_cmd->add_option("--data", sw.data, "Labelled CSV pool (overrides the config data section)");
  sweep_cmd->add_option("--output-dir", sw.output_dir, "Directory for sweep.json and sweep.csv");
  sweep_cmd->add_option("--param", sw.param, "latent_dim, feature_dim, eta, samples, c, rank or noise");
  sweep_cmd->add_option("--values", sw.values, "Parameter values")->delimiter(',');

  TheoryOptions th;
  auto* theory_cmd = app.add_subcommand("theory", "Verify the Gaussian-mixture regularization results");
  add_common(theory_cmd, th.common);
  theory_cmd->add_option("-o,--out", th.out, "Report output path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("config", e.what(), {{"key", "argv"}});
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*score_cmd) return run_score(sc);
    if (*eval_cmd) return run_eval(ev);
    if (*sweep_cmd) return run_sweep(sw);
    if (*theory_cmd) return run_theory(th);
  } catch (const maw::ConfigError& e) {
    fail("config", e.what(), {{"key", e.key()}});
    return kExitConfig;
  } catch (const maw::ParseError& e) {
    fail("data", e.what(), {{"row", e.row()}, {"column", e.column()}});
    return kExitData;
  } catch (const maw::NumericalError& e) {
    fail("numerical", e.what());
    return kExitNumerical;
  } catch (const maw::Error& e) {
    fail("data", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    fail("data", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
