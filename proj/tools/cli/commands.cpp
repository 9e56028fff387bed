// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <regex>

#include "config_file.hpp"
#include "deltaquant/error.hpp"
#include "deltaquant/eval.hpp"
#include "deltaquant/format.hpp"
#include "deltaquant/quant.hpp"
#include "deltaquant/search.hpp"
#include "deltaquant/signals.hpp"
#include "deltaquant/tensor_store.hpp"
#include "deltaquant/toy_model.hpp"

namespace deltaquant::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSubcommands{"train-toy", "importance", "quantize",
                                            "eval",      "ablate",     "curve"};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::size_t threads = 1;
  std::string config;

  // train-toy
  std::string dims = "8,16,8";
  toy::TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t calib_rows = 128;
  std::uint64_t calib_seed = 42;

  // files
  std::string pre, post, calib, importance, artifact, out, report, run_dir;

  signals::MappingConfig mapping;
  std::string signal = "both-ends-zero";
  quant::QuantConfig quant;
  search::SearchConfig search;
  bool no_normalize = false;
  eval::EvalConfig eval;
  std::string signals_list = "magnitude,mid,both-ends,both-ends-zero,activation-sq";
  std::string fractions_list = "0.05,0.3";
};

std::size_t default_threads() {
  const char* env = std::getenv("DELTAQUANT_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const auto n = parse_uint(env);
    if (n >= 1) return static_cast<std::size_t>(n);
  } catch (const Error&) {
  }
  throw UsageError("DELTAQUANT_THREADS must be a positive integer, got '" + std::string(env) + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  f << text;
  if (!f) fail(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

void save(const store::TensorMap& map, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  store::save_container(map, path);
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  for (const auto& part : split(text, ',')) dims.push_back(static_cast<std::size_t>(parse_uint(part)));
  if (dims.size() < 2) fail(ErrorCode::kInvalidArgument, "--dims needs at least two sizes");
  return dims;
}

signals::MappingConfig mapping_from(const Options& o) {
  signals::MappingConfig m = o.mapping;
  m.signal = signals::parse_signal(o.signal);
  m.validate();
  return m;
}

search::SearchConfig search_from(const Options& o) {
  search::SearchConfig s = o.search;
  s.normalize_scale = !o.no_normalize;
  s.threads = o.threads;
  s.validate();
  return s;
}

quant::QuantConfig quant_from_meta(const store::TensorMap& map) {
  quant::QuantConfig q;
  q.bits = static_cast<unsigned>(parse_uint(map.meta.at("bits")));
  q.group_size = static_cast<std::size_t>(parse_uint(map.meta.at("group_size")));
  if (map.meta.count("protect_fraction")) q.protect_fraction = parse_double(map.meta.at("protect_fraction"));
  return q;
}

int cmd_train_toy(const Options& o, std::ostream& out) {
  o.train.validate();
  const auto dims = parse_dims(o.dims);
  if (o.calib_rows < 1) fail(ErrorCode::kInvalidArgument, "--calib-rows must be >= 1");
  const fs::path dir = o.out;
  fs::create_directories(dir);

  const toy::ToyModel model = toy::init_model(dims, o.seed);
  const toy::TrainResult result = toy::train(model, o.train);
  for (const auto& snap : result.snapshots) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu.dqt", snap.step);
    save(snap.checkpoint, dir / name);
  }
  save(result.snapshots.front().checkpoint, dir / "pre.dqt");
  save(toy::to_checkpoint(result.final_model, o.train.steps), dir / "post.dqt");

  const Matrix x = toy::random_inputs(o.calib_rows, dims.front(), o.calib_seed);
  const auto capture = toy::forward(result.final_model, x).capture;
  save(toy::calibration_to_container(capture), dir / "calib.dqt");

  std::string log = "step,batch_loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    log += std::to_string(i) + "," + format_number(result.loss_curve[i]) + "\n";
  }
  write_text(dir / "train_log.csv", log);
  out << "trained " << o.dims << " for " << o.train.steps << " steps: probe loss "
      << format_number(result.initial_loss) << " -> " << format_number(result.final_loss) << "\n";
  out << "wrote " << result.snapshots.size() << " snapshots to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_importance(const Options& o, std::ostream& out) {
  const auto mapping = mapping_from(o);
  const auto pre = store::load_container(o.pre);
  const auto post = store::load_container(o.post);
  std::optional<toy::CalibrationSet> calib;
  if (!o.calib.empty()) calib = toy::calibration_from_container(store::load_container(o.calib));
  const auto set = signals::importance_all(pre, post, mapping, calib ? &*calib : nullptr);
  save(signals::importance_to_container(set, mapping), o.out);
  out << "importance (" << signals::to_string(mapping.signal) << ") for " << set.modules.size()
      << " modules -> " << o.out << "\n";
  return kExitOk;
}

int cmd_quantize(const Options& o, std::ostream& out) {
  o.quant.validate();
  const auto scfg = search_from(o);
  const auto post = store::load_container(o.post);
  const auto importances = signals::importance_from_container(store::load_container(o.importance));
  const auto calib = toy::calibration_from_container(store::load_container(o.calib));
  const auto result = search::quantize_model(post, importances, calib, scfg, o.quant);
  save(quant::artifact_to_container(result.artifact, o.quant), o.out);
  const std::string report_path = o.report.empty() ? o.out + ".report.jsonl" : o.report;
  write_text(report_path, search::report_to_jsonl(result.report, scfg));
  for (const auto& r : result.report) {
    out << r.module << ": alpha* " << format_number(r.alpha_star) << ", loss "
        << format_number(r.best_loss) << " (rtn " << format_number(r.rtn_loss) << ")\n";
  }
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto post = store::load_container(o.post);
  const auto artifact_map = store::load_container(o.artifact);
  const auto artifact = quant::artifact_from_container(artifact_map);
  const auto calib = toy::calibration_from_container(store::load_container(o.calib));
  eval::EvalConfig cfg = o.eval;
  cfg.threads = o.threads;
  const auto report = eval::layer_report(post, artifact, quant_from_meta(artifact_map), calib, cfg);
  write_text(o.out, report.to_json());
  for (const auto& [m, e] : report.per_module) {
    out << m << ": rtn " << format_number(e.rtn_mse) << ", searched " << format_number(e.searched_mse)
        << ", protected " << format_number(e.protected_mse) << "\n";
  }
  out << "end-to-end output mse " << format_number(report.end_to_end.output_mse) << "\n";
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  std::vector<signals::MappingConfig> cfgs;
  for (const auto& name : split(o.signals_list, ',')) {
    signals::MappingConfig m = o.mapping;
    m.signal = signals::parse_signal(name);
    m.validate();
    cfgs.push_back(m);
  }
  if (cfgs.empty()) fail(ErrorCode::kInvalidArgument, "--signals is empty");
  std::vector<double> fractions;
  for (const auto& f : split(o.fractions_list, ',')) fractions.push_back(parse_double(f));
  if (fractions.empty()) fail(ErrorCode::kInvalidArgument, "--fractions is empty");
  quant::QuantConfig q = o.quant;
  q.protect_fraction = 0.0;
  q.validate();
  eval::EvalConfig cfg = o.eval;
  cfg.threads = o.threads;

  const auto pre = store::load_container(o.pre);
  const auto post = store::load_container(o.post);
  const auto calib = toy::calibration_from_container(store::load_container(o.calib));
  const auto rows = eval::ablate_signals(pre, post, calib, cfgs, fractions, q, cfg);
  write_text(o.out, eval::ablation_to_csv(rows));
  out << rows.size() << " ablation rows -> " << o.out << "\n";
  return kExitOk;
}

int cmd_curve(const Options& o, std::ostream& out) {
  eval::CurveConfig cfg;
  cfg.mapping = mapping_from(o);
  cfg.quant = o.quant;
  cfg.quant.validate();
  cfg.search = search_from(o);

  const fs::path dir = o.run_dir;
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "run directory '" + o.run_dir + "' not found");
  const std::regex pattern(R"(step_(\d+)\.dqt)");
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(parse_uint(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::pair<std::uint64_t, store::TensorMap>> snapshots;
  for (const auto& [step, path] : found) snapshots.emplace_back(step, store::load_container(path));

  const auto final_ref = store::load_container(dir / "post.dqt");
  const auto calib = toy::calibration_from_container(store::load_container(dir / "calib.dqt"));
  const auto curve = eval::pseudo_ft_curve(snapshots, final_ref, calib, cfg);
  write_text(o.out, eval::curve_to_csv(curve));
  out << curve.points.size() << " curve points, slope "
      << (curve.slope ? format_number(*curve.slope) : std::string("nan")) << " -> " << o.out << "\n";
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--threads", o.threads, "Worker threads (env DELTAQUANT_THREADS)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--config", o.config, "Config file of 'section.key = value' lines");
}

void add_mapping(CLI::App* sub, Options& o, bool with_signal) {
  if (with_signal) {
    sub->add_option("--signal", o.signal,
                    "magnitude | both-ends | both-ends-zero | mid | activation-sq");
  }
  sub->add_option("--y-min", o.mapping.y_min, "Mapping floor");
  sub->add_option("--y-max", o.mapping.y_max, "Mapping ceiling");
  sub->add_option("--zero-epsilon", o.mapping.zero_epsilon, "Updates at or below this count as zero");
  sub->add_option("--slices", o.mapping.slices, "Row bands for the zero count");
  sub->add_flag("--multiply-activation", o.mapping.multiply_activation,
                "Multiply importance by mean |activation| (default: off)");
}

void add_quant(CLI::App* sub, Options& o, bool with_protect) {
  sub->add_option("--bits", o.quant.bits, "Code width");
  sub->add_option("--group-size", o.quant.group_size, "Input channels per group");
  if (with_protect) {
    sub->add_option("--protect", o.quant.protect_fraction, "Fraction of channels kept in float");
  }
}

void add_search(CLI::App* sub, Options& o) {
  sub->add_option("--grid-points", o.search.grid_points, "Exponent candidates");
  sub->add_option("--alpha-lo", o.search.alpha_lo, "Lowest exponent");
  sub->add_option("--alpha-hi", o.search.alpha_hi, "Highest exponent");
  sub->add_flag("--no-normalize", o.no_normalize, "Use raw I^alpha as the scale (default: off)");
  sub->add_option("--max-calib-rows", o.search.max_calib_rows, "Leading calibration rows used");
}

/// Splices config-file arguments in front of the user's, so flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const std::string& sub = args.front();
  if (std::find(kSubcommands.begin(), kSubcommands.end(), sub) == kSubcommands.end()) return args;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> expanded{sub};
  for (auto& a : config_to_args(read_config_file(path), sub)) expanded.push_back(std::move(a));
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Importance-guided weight quantization toolkit", "deltaquant"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  std::vector<std::string> args;
  try {
    o.threads = default_threads();
    args = expand_config(raw_args);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kIo ? kExitRuntime : kExitUsage;
  }

  auto* train = app.add_subcommand("train-toy", "Train the toy model and write checkpoints");
  train->add_option("--dims", o.dims, "Layer widths, comma separated");
  train->add_option("--steps", o.train.steps, "Gradient steps");
  train->add_option("--seed", o.seed, "Initialization seed");
  train->add_option("--data-seed", o.train.data_seed, "Seed of the teacher and batches");
  train->add_option("--lr", o.train.learning_rate, "Learning rate");
  train->add_option("--batch-size", o.train.batch_size, "Rows per step");
  train->add_option("--snapshot-every", o.train.snapshot_every, "Steps between snapshots");
  train->add_option("--calib-rows", o.calib_rows, "Calibration rows captured");
  train->add_option("--calib-seed", o.calib_seed, "Seed of the calibration batch");
  train->add_option("--out", o.out, "Output directory")->required();
  add_common(train, o);

  auto* imp = app.add_subcommand("importance", "Per-channel importance from two checkpoints");
  imp->add_option("--pre", o.pre, "Checkpoint before fine-tuning")->required();
  imp->add_option("--post", o.post, "Checkpoint after fine-tuning")->required();
  imp->add_option("--calib", o.calib, "Calibration container");
  add_mapping(imp, o, true);
  imp->add_option("--out", o.out, "Importance container")->required();
  add_common(imp, o);

  auto* qz = app.add_subcommand("quantize", "Search scales and quantize every module");
  qz->add_option("--post", o.post, "Checkpoint to quantize")->required();
  qz->add_option("--importance", o.importance, "Importance container")->required();
  qz->add_option("--calib", o.calib, "Calibration container")->required();
  add_quant(qz, o, true);
  add_search(qz, o);
  qz->add_option("--out", o.out, "Quantized artifact")->required();
  qz->add_option("--report", o.report, "Search report (default: <out>.report.jsonl)");
  add_common(qz, o);

  auto* ev = app.add_subcommand("eval", "Reconstruction and end-to-end error of an artifact");
  ev->add_option("--post", o.post, "Reference checkpoint")->required();
  ev->add_option("--artifact", o.artifact, "Quantized artifact")->required();
  ev->add_option("--calib", o.calib, "Calibration container")->required();
  ev->add_option("--eval-seed", o.eval.eval_seed, "Seed of the held-out batch");
  ev->add_option("--eval-rows", o.eval.eval_rows, "Rows of the held-out batch");
  ev->add_option("--max-calib-rows", o.eval.max_calib_rows, "Leading calibration rows used");
  ev->add_option("--out", o.out, "JSON report")->required();
  add_common(ev, o);

  auto* ab = app.add_subcommand("ablate", "Protection error for each signal and fraction");
  ab->add_option("--pre", o.pre, "Checkpoint before fine-tuning")->required();
  ab->add_option("--post", o.post, "Checkpoint after fine-tuning")->required();
  ab->add_option("--calib", o.calib, "Calibration container")->required();
  ab->add_option("--signals", o.signals_list, "Signals, comma separated");
  ab->add_option("--fractions", o.fractions_list, "Protect fractions, comma separated");
  add_mapping(ab, o, false);
  add_quant(ab, o, false);
  ab->add_option("--eval-seed", o.eval.eval_seed, "Seed of the held-out batch");
  ab->add_option("--eval-rows", o.eval.eval_rows, "Rows of the held-out batch");
  ab->add_option("--out", o.out, "CSV table")->required();
  add_common(ab, o);

  auto* cv = app.add_subcommand("curve", "Searched loss against the snapshot used for importance");
  cv->add_option("--run-dir", o.run_dir, "Directory written by train-toy")->required();
  add_mapping(cv, o, true);
  add_quant(cv, o, true);
  add_search(cv, o);
  cv->add_option("--out", o.out, "CSV curve")->required();
  add_common(cv, o);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train_toy(o, out);
    if (imp->parsed()) return cmd_importance(o, out);
    if (qz->parsed()) return cmd_quantize(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (ab->parsed()) return cmd_ablate(o, out);
    if (cv->parsed()) return cmd_curve(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidArgument ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace deltaquant::cli
