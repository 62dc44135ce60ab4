#include "utrcaf/config.hpp"

#include <charconv>
#include <cstdlib>
#include <set>

#include "utrcaf/checkpoint.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {
namespace {

using nlohmann::json;

// One JSON object being read; remembers which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_.empty() ? "config must be a JSON object"
                                      : "'" + path_ + "' must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    const std::string where = key_path(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + where + "' must be true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("'" + where + "' must be a nonnegative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("'" + where + "' must be an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("'" + where + "' must be a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("'" + where + "' must be a string");
      out = v.get<std::string>();
    } else {
      try {
        out = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("'" + where + "' has the wrong type");
      }
    }
  }

  std::string choice(const std::string& key, const std::string& current,
                     const std::set<std::string>& allowed) {
    std::string v = current;
    get(key, v);
    if (!allowed.count(v)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("'" + key_path(key) + "' must be one of: " + list + " (got '" + v + "')");
    }
    return v;
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key_path(key) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainConfig& t) {
  s.get("learning_rate", t.learning_rate);
  s.get("momentum", t.momentum);
  s.get("batch_size", t.batch_size);
  s.get("epochs", t.epochs);
  s.get("label_smoothing", t.label_smoothing);
  s.get("seed", t.seed);
  s.finish();
}

json train_to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
          {"batch_size", t.batch_size},       {"epochs", t.epochs},
          {"label_smoothing", t.label_smoothing}, {"seed", t.seed}};
}

const char* generator_name(Generator g) {
  switch (g) {
    case Generator::planted_shift: return "planted_shift";
    case Generator::two_moons: return "two_moons";
    case Generator::none: return "none";
  }
  return "none";
}

}  // namespace

void RunConfig::validate() const {
  arch.validate();
  train.validate();
  perturb.validate();
  caf.validate();
  if (eval.split_m < 0 || eval.split_m >= arch.bottleneck_dim)
    throw ConfigError("eval.split_m must be 0 (half of bottleneck_dim) or in [1, " +
                      std::to_string(arch.bottleneck_dim - 1) + "]");
  if (arch.bottleneck_dim / 2 < 1 && eval.split_m == 0)
    throw ConfigError("eval.split_m: bottleneck_dim too small to split");
  if (eval.curve_points < 1) throw ConfigError("eval.curve_points must be >= 1");
  if (paths.out_dir.empty()) throw ConfigError("paths.out_dir must not be empty");
  if (generator == Generator::planted_shift) {
    planted.validate();
    if (arch.input_dim != planted.input_dim)
      throw ConfigError("arch.input_dim (" + std::to_string(arch.input_dim) +
                        ") must equal data.planted_shift.input_dim (" +
                        std::to_string(planted.input_dim) + ")");
    if (arch.num_classes != planted.num_classes)
      throw ConfigError("arch.num_classes must equal data.planted_shift.num_classes");
  } else if (generator == Generator::two_moons) {
    if (moons.n < 4) throw ConfigError("data.two_moons.n must be >= 4");
    if (!(moons.noise >= 0.0)) throw ConfigError("data.two_moons.noise must be >= 0");
    if (arch.input_dim != 2 || arch.num_classes != 2)
      throw ConfigError("data.two_moons needs arch.input_dim = 2 and arch.num_classes = 2");
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  if (root.has("arch")) {
    Section s = root.sub("arch");
    s.get("input_dim", cfg.arch.input_dim);
    s.get("hidden_dims", cfg.arch.hidden_dims);
    s.get("bottleneck_dim", cfg.arch.bottleneck_dim);
    s.get("num_classes", cfg.arch.num_classes);
    cfg.arch.activation =
        s.choice("activation", cfg.arch.activation == Activation::relu ? "relu" : "tanh",
                 {"relu", "tanh"}) == "relu"
            ? Activation::relu
            : Activation::tanh;
    s.finish();
  }
  if (root.has("train")) read_train(root.sub("train"), cfg.train);
  if (root.has("perturb")) {
    Section s = root.sub("perturb");
    s.get("T", cfg.perturb.T);
    s.get("low", cfg.perturb.low);
    s.get("high", cfg.perturb.high);
    cfg.perturb.noise_mode =
        s.choice("noise_mode",
                 cfg.perturb.noise_mode == NoiseMode::scalar ? "scalar" : "per_parameter",
                 {"per_parameter", "scalar"}) == "scalar"
            ? NoiseMode::scalar
            : NoiseMode::per_parameter;
    s.get("seed", cfg.perturb.seed);
    s.finish();
  }
  if (root.has("caf")) {
    Section s = root.sub("caf");
    if (s.has("thr")) {
      Section t = s.sub("thr");
      cfg.caf.thr.mode = t.choice("mode", "mean_multiple", {"absolute", "mean_multiple"}) ==
                                 "absolute"
                             ? RiskThreshold::Mode::absolute
                             : RiskThreshold::Mode::mean_multiple;
      t.get("value", cfg.caf.thr.value);
      t.finish();
    }
    s.get("lambda0", cfg.caf.lambda0);
    s.get("lambda_cutoff_epoch", cfg.caf.lambda_cutoff_epoch);
    s.get("gamma", cfg.caf.gamma);
    s.get("discover_weight", cfg.caf.discover_weight);
    s.get("div_weight", cfg.caf.div_weight);
    s.get("mixup_alpha", cfg.caf.mixup_alpha);
    s.get("freeze_classifier", cfg.caf.freeze_classifier);
    s.get("max_epochs", cfg.caf.max_epochs);
    if (s.has("train")) read_train(s.sub("train"), cfg.caf.train);
    s.finish();
  }
  if (root.has("eval")) {
    Section s = root.sub("eval");
    s.get("split_m", cfg.eval.split_m);
    s.get("curve_points", cfg.eval.curve_points);
    s.get("seed", cfg.eval.seed);
    s.finish();
  }
  if (root.has("data")) {
    Section s = root.sub("data");
    const std::string g = s.choice("generator", generator_name(cfg.generator),
                                   {"planted_shift", "two_moons", "none"});
    cfg.generator = g == "planted_shift" ? Generator::planted_shift
                    : g == "two_moons"   ? Generator::two_moons
                                         : Generator::none;
    if (s.has("planted_shift")) {
      Section p = s.sub("planted_shift");
      p.get("n_per_domain", cfg.planted.n_per_domain);
      p.get("input_dim", cfg.planted.input_dim);
      p.get("num_classes", cfg.planted.num_classes);
      p.get("frac_corrupt", cfg.planted.frac_corrupt);
      p.get("shift_strength", cfg.planted.shift_strength);
      p.get("noise", cfg.planted.noise);
      p.get("seed", cfg.planted.seed);
      p.get("permute_corrupt", cfg.planted.permute_corrupt);
      p.finish();
    }
    if (s.has("two_moons")) {
      Section m = s.sub("two_moons");
      m.get("n", cfg.moons.n);
      m.get("angle_degrees", cfg.moons.angle_degrees);
      m.get("noise", cfg.moons.noise);
      m.get("seed", cfg.moons.seed);
      m.finish();
    }
    s.finish();
  }
  if (root.has("paths")) {
    Section s = root.sub("paths");
    s.get("out_dir", cfg.paths.out_dir);
    s.get("source_data", cfg.paths.source_data);
    s.get("target_data", cfg.paths.target_data);
    s.get("source_model", cfg.paths.source_model);
    s.finish();
  }
  root.finish();
  cfg.caf.perturb = cfg.perturb;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(j);
}

json caf_config_to_json(const CafConfig& c) {
  return {{"thr",
           {{"mode", c.thr.mode == RiskThreshold::Mode::absolute ? "absolute" : "mean_multiple"},
            {"value", c.thr.value}}},
          {"lambda0", c.lambda0},
          {"lambda_cutoff_epoch", c.lambda_cutoff_epoch},
          {"gamma", c.gamma},
          {"discover_weight", c.discover_weight},
          {"div_weight", c.div_weight},
          {"mixup_alpha", c.mixup_alpha},
          {"freeze_classifier", c.freeze_classifier},
          {"max_epochs", c.max_epochs},
          {"train", train_to_json(c.train)}};
}

json run_config_to_json(const RunConfig& cfg) {
  return {{"arch", arch_to_json(cfg.arch)},
          {"train", train_to_json(cfg.train)},
          {"perturb",
           {{"T", cfg.perturb.T},
            {"low", cfg.perturb.low},
            {"high", cfg.perturb.high},
            {"noise_mode",
             cfg.perturb.noise_mode == NoiseMode::scalar ? "scalar" : "per_parameter"},
            {"seed", cfg.perturb.seed}}},
          {"caf", caf_config_to_json(cfg.caf)},
          {"eval",
           {{"split_m", cfg.eval.split_m},
            {"curve_points", cfg.eval.curve_points},
            {"seed", cfg.eval.seed}}},
          {"data",
           {{"generator", generator_name(cfg.generator)},
            {"planted_shift", planted_spec_to_json(cfg.planted)},
            {"two_moons",
             {{"n", cfg.moons.n},
              {"angle_degrees", cfg.moons.angle_degrees},
              {"noise", cfg.moons.noise},
              {"seed", cfg.moons.seed}}}}},
          {"paths",
           {{"out_dir", cfg.paths.out_dir},
            {"source_data", cfg.paths.source_data},
            {"target_data", cfg.paths.target_data},
            {"source_model", cfg.paths.source_model}}}};
}

void override_seeds(RunConfig& cfg, std::uint64_t seed) {
  cfg.train.seed = seed;
  cfg.perturb.seed = seed;
  cfg.caf.perturb.seed = seed;
  cfg.caf.train.seed = seed;
  cfg.eval.seed = seed;
  cfg.planted.seed = seed;
  cfg.moons.seed = seed;
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("UTRCAF_SEED");
  if (!raw) return std::nullopt;
  const std::string s(raw);
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw ConfigError("UTRCAF_SEED must be an unsigned integer, got '" + s + "'");
  return v;
}

}  // namespace utrcaf
