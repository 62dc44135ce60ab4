#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "utrcaf/caf.hpp"
#include "utrcaf/checkpoint.hpp"
#include "utrcaf/config.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/eval.hpp"
#include "utrcaf/io.hpp"
#include "utrcaf/synth.hpp"
#include "utrcaf/utr.hpp"

namespace fs = std::filesystem;
using namespace utrcaf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitDiverged = 3;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string model;
  std::string source_model;
  std::string source_data;
  std::string target_data;
  int split_m = 0;
};

// Outputs are rendered fully in memory, then written one file at a time.
struct Output {
  fs::path path;
  std::string content;
};

void write_all(const std::vector<Output>& outputs) {
  for (const auto& o : outputs) write_file_atomic(o.path, o.content);
  for (const auto& o : outputs) std::cout << o.path.string() << "\n";
}

std::string pick(const std::string& flag, const std::string& configured, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  return fallback.string();
}

RunConfig load_config(const Options& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (const auto seed = seed_from_env()) override_seeds(cfg, *seed);
  if (opt.split_m > 0) cfg.eval.split_m = opt.split_m;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Options& opt, const RunConfig& cfg) {
  return opt.out.empty() ? fs::path(cfg.paths.out_dir) : fs::path(opt.out);
}

fs::path default_source_model(const RunConfig& cfg) {
  return fs::path(cfg.paths.out_dir) / "source_model.json";
}

void check_input_dim(const ModelParams& model, const Dataset& data, const std::string& what) {
  if (data.dim() != model.arch.input_dim)
    throw DimensionError(what + " has " + std::to_string(data.dim()) +
                         " features but the model expects " +
                         std::to_string(model.arch.input_dim));
}

std::string to_json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

int cmd_synth(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  DomainPair pair;
  switch (cfg.generator) {
    case Generator::planted_shift:
      pair = gen_planted_shift(cfg.planted);
      break;
    case Generator::two_moons:
      pair = gen_two_moons_rotated(cfg.moons.n, cfg.moons.angle_degrees, cfg.moons.noise,
                                   cfg.moons.seed);
      break;
    case Generator::none:
      throw ConfigError("data.generator is 'none'; nothing to synthesize");
  }
  const fs::path dir = out_dir(opt, cfg);
  pair.manifest.source_path = "source.csv";
  pair.manifest.target_path = "target.csv";
  write_all({{dir / "source.csv", dataset_to_csv(pair.source)},
             {dir / "target.csv", dataset_to_csv(pair.target)},
             {dir / "manifest.json", to_json_text(manifest_to_json(pair.manifest))}});
  return kExitOk;
}

int cmd_train_source(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  const fs::path base(cfg.paths.out_dir);
  const Dataset data = load_dataset(pick(opt.data, cfg.paths.source_data, base / "source.csv"));
  if (!data.labeled()) throw LabelError("source data must be labeled");
  const ModelParams model = train_source(data, cfg.arch, cfg.train);
  const fs::path out = pick(opt.out, cfg.paths.source_model, default_source_model(cfg));
  write_all({{out, to_json_text(params_to_json(model))}});
  return kExitOk;
}

int cmd_utr(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  const fs::path base(cfg.paths.out_dir);
  const ModelParams model =
      load_checkpoint(pick(opt.model, cfg.paths.source_model, default_source_model(cfg)));
  const Dataset data = load_dataset(pick(opt.data, cfg.paths.target_data, base / "target.csv"));
  check_input_dim(model, data, "data");
  const UtrSpectrum spectrum = channel_ud(model, data.features, cfg.perturb);
  const fs::path dir = out_dir(opt, cfg);
  write_all({{dir / "spectrum.csv", spectrum_to_csv(spectrum)},
             {dir / "utr_d.csv", vector_to_csv(utr_domain(spectrum).values)},
             {dir / "utr_i.csv", vector_to_csv(utr_instance(spectrum).values)}});
  return kExitOk;
}

int cmd_adapt(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  const fs::path base(cfg.paths.out_dir);
  const ModelParams source =
      load_checkpoint(pick(opt.source_model, cfg.paths.source_model, default_source_model(cfg)));
  const Dataset target =
      load_dataset(pick(opt.target_data, cfg.paths.target_data, base / "target.csv"));
  check_input_dim(source, target, "target data");
  // Target labels, when present, are never seen by adaptation.
  const AdaptationState state = run_caf(source, target.features, cfg.caf);
  const nlohmann::json sidecar{{"epoch", state.epoch},
                               {"risk_set", state.risk_set},
                               {"config", caf_config_to_json(cfg.caf)}};
  const fs::path dir = out_dir(opt, cfg);
  write_all({{dir / "adapted_model.json", to_json_text(params_to_json(state.target_params))},
             {dir / "adapted_model.state.json", to_json_text(sidecar)},
             {dir / "loss_history.csv", history_to_csv(state.loss_history)}});
  return kExitOk;
}

int cmd_eval(const Options& opt) {
  const RunConfig cfg = load_config(opt);
  const fs::path base(cfg.paths.out_dir);
  const ModelParams source =
      load_checkpoint(pick(opt.source_model, cfg.paths.source_model, default_source_model(cfg)));
  const Dataset src = load_dataset(pick(opt.source_data, cfg.paths.source_data, base / "source.csv"));
  const Dataset tgt = load_dataset(pick(opt.target_data, cfg.paths.target_data, base / "target.csv"));
  check_input_dim(source, src, "source data");
  check_input_dim(source, tgt, "target data");
  if (!tgt.labeled()) throw LabelError("evaluation needs a labeled target set");
  tgt.validate(source.arch.num_classes);

  const int m = cfg.eval.split_m > 0 ? cfg.eval.split_m : source.arch.bottleneck_dim / 2;
  const UtrSpectrum spectrum = channel_ud(source, tgt.features, cfg.perturb);
  const ChannelSplit split = split_channels(utr_domain(spectrum), m);
  const MeasurementReport report = build_report(source, src, tgt, split, cfg.eval.seed);

  const UtrInstance utr_i = utr_instance(spectrum);
  const std::vector<int> pred = argmax_rows(classify(source, encode(source, tgt.features)));
  std::vector<bool> correct(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) correct[i] = pred[i] == (*tgt.labels)[i];
  const auto curve =
      accuracy_utr_curve(utr_i, correct, quantile_thresholds(utr_i, cfg.eval.curve_points));

  const fs::path dir = out_dir(opt, cfg);
  write_all({{dir / "report.json", to_json_text(report_to_json(report))},
             {dir / "report.csv", report_to_csv(report)},
             {dir / "curve.csv", curve_to_csv(curve)}});
  return kExitOk;
}

int guarded(int (*cmd)(const Options&), const Options& opt) {
  try {
    return cmd(opt);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-guided source-free domain adaptation toolkit"};
  app.require_subcommand(1);
  Options opt;

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "run configuration (JSON)")->required();
    return sub;
  };

  CLI::App* synth = add("synth", "generate a source/target dataset pair");
  synth->add_option("--out", opt.out, "output directory");

  CLI::App* train = add("train-source", "train the source model");
  train->add_option("--data", opt.data, "labeled source CSV");
  train->add_option("--out", opt.out, "checkpoint path");

  CLI::App* utr = add("utr", "compute the uncertainty spectrum and its means");
  utr->add_option("--model", opt.model, "model checkpoint");
  utr->add_option("--data", opt.data, "dataset CSV");
  utr->add_option("--out", opt.out, "output directory");

  CLI::App* adapt = add("adapt", "adapt the source model to unlabeled target data");
  adapt->add_option("--source-model", opt.source_model, "source checkpoint");
  adapt->add_option("--target-data", opt.target_data, "target CSV (labels ignored)");
  adapt->add_option("--out", opt.out, "output directory");

  CLI::App* eval = add("eval", "compare low- and high-uncertainty channel sets");
  eval->add_option("--source-model", opt.source_model, "source checkpoint");
  eval->add_option("--source-data", opt.source_data, "labeled source CSV");
  eval->add_option("--target-data", opt.target_data, "labeled target CSV");
  eval->add_option("--split-m", opt.split_m, "number of low-uncertainty channels")
      ->check(CLI::PositiveNumber);
  eval->add_option("--out", opt.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (*synth) return guarded(cmd_synth, opt);
  if (*train) return guarded(cmd_train_source, opt);
  if (*utr) return guarded(cmd_utr, opt);
  if (*adapt) return guarded(cmd_adapt, opt);
  return guarded(cmd_eval, opt);
}
