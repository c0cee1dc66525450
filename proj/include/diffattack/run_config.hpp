#pragma once

#include "diffattack/attack.hpp"
#include "diffattack/io.hpp"
#include "diffattack/predictor.hpp"
#include "diffattack/selection.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

namespace diffattack {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Everything one CLI invocation needs. Loaded from a flat key=value file,
/// then overridden by command-line flags.
struct RunConfig {
  // Inputs. When data/adjacency are absent the run looks for speeds.csv and
  // adjacency.csv in the output directory, then falls back to synthetic data.
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> adjacency;
  std::optional<std::filesystem::path> positions;
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path out = "diffattack_out";
  bool undirected = true;

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  // synthetic data only; defaults to seed
  SyntheticSpec synthetic;

  std::size_t window = 12;
  std::size_t horizon = 1;
  std::vector<std::size_t> hidden_dims{16, 16};
  TrainingConfig training;
  bool drop_variants = false;

  AttackConfig attack;
  Strategy strategy = Strategy::kg_spsa;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  double budget = 50.0;
  double budget_scale = 1.0;
  std::vector<double> budgets{20, 50, 100, 150, 200};
  std::optional<NodeSet> nodes;
  std::size_t windows = 50;
  std::optional<std::size_t> window_start;
  std::size_t hop_nodes = 10;

  /// Seeds every component from the master seed.
  void propagate_seed() {
    synthetic.seed = data_seed.value_or(seed);
    training.seed = seed;
    attack.seed = seed;
  }

  double scaled_budget(double b) const { return b * budget_scale; }

  void validate() const {
    training.validate();
    attack.validate();
    if (window == 0 || horizon == 0) throw ConfigError("window and horizon must be positive");
    if (hidden_dims.empty()) throw ConfigError("hidden_dims needs at least one layer");
    if (!(budget >= 0.0) || !(budget_scale > 0.0)) throw ConfigError("budget must be >= 0 and budget_scale > 0");
    if (!std::is_sorted(budgets.begin(), budgets.end())) throw ConfigError("budgets must be ascending");
    if (windows == 0) throw ConfigError("windows must be positive");
    if (strategies.empty()) throw ConfigError("strategies must not be empty");
  }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v, const std::string& key) {
  try {
    return parse_double(v, key);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

/// Applies key=value pairs on top of `cfg`. Relative paths resolve against
/// `base`. Unknown keys and missing referenced files are errors.
inline void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv,
                         const std::filesystem::path& base = {}) {
  using detail::parse_bool;
  using detail::parse_real;
  using detail::parse_uint;
  auto path = [&](const std::string& v, const std::string& key) {
    std::filesystem::path p(v);
    if (p.is_relative() && !base.empty()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError(key + ": file not found: " + p.string());
    return p;
  };
  auto size = [&](const std::string& v, const std::string& key) {
    return static_cast<std::size_t>(parse_uint(v, key));
  };

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter, std::less<>> setters = {
      {"data", [&](auto& v, auto& k) { cfg.data = path(v, k); }},
      {"adjacency", [&](auto& v, auto& k) { cfg.adjacency = path(v, k); }},
      {"positions", [&](auto& v, auto& k) { cfg.positions = path(v, k); }},
      {"checkpoint", [&](auto& v, auto& k) { cfg.checkpoint = path(v, k); }},
      {"out", [&](auto& v, auto&) {
         std::filesystem::path p(v);
         cfg.out = (p.is_relative() && !base.empty()) ? base / p : p;
       }},
      {"undirected", [&](auto& v, auto& k) { cfg.undirected = parse_bool(v, k); }},
      {"seed", [&](auto& v, auto& k) { cfg.seed = parse_uint(v, k); }},
      {"data_seed", [&](auto& v, auto& k) { cfg.data_seed = parse_uint(v, k); }},
      {"n_nodes", [&](auto& v, auto& k) { cfg.synthetic.n_nodes = size(v, k); }},
      {"graph_model", [&](auto& v, auto&) { cfg.synthetic.graph_model = parse_graph_model(v); }},
      {"radius", [&](auto& v, auto& k) { cfg.synthetic.radius = parse_real(v, k); }},
      {"mean_speed", [&](auto& v, auto& k) { cfg.synthetic.mean_speed = parse_real(v, k); }},
      {"amplitude", [&](auto& v, auto& k) { cfg.synthetic.amplitude = parse_real(v, k); }},
      {"noise_std", [&](auto& v, auto& k) { cfg.synthetic.noise_std = parse_real(v, k); }},
      {"noise_corr", [&](auto& v, auto& k) { cfg.synthetic.noise_corr = parse_real(v, k); }},
      {"days", [&](auto& v, auto& k) { cfg.synthetic.days = size(v, k); }},
      {"interval_minutes", [&](auto& v, auto& k) { cfg.synthetic.interval_minutes = parse_real(v, k); }},
      {"window", [&](auto& v, auto& k) { cfg.window = size(v, k); }},
      {"horizon", [&](auto& v, auto& k) { cfg.horizon = size(v, k); }},
      {"hidden_dims", [&](auto& v, auto& k) { cfg.hidden_dims = parse_index_list(v, k); }},
      {"learning_rate", [&](auto& v, auto& k) { cfg.training.learning_rate = parse_real(v, k); }},
      {"batch_size", [&](auto& v, auto& k) { cfg.training.batch_size = size(v, k); }},
      {"epochs", [&](auto& v, auto& k) { cfg.training.epochs = size(v, k); }},
      {"drop_mode", [&](auto& v, auto&) { cfg.training.drop_mode = parse_drop_mode(v); }},
      {"drop_prob", [&](auto& v, auto& k) { cfg.training.drop_prob = parse_real(v, k); }},
      {"train_fraction", [&](auto& v, auto& k) { cfg.training.train_fraction = parse_real(v, k); }},
      {"drop_variants", [&](auto& v, auto& k) { cfg.drop_variants = parse_bool(v, k); }},
      {"eps_minus", [&](auto& v, auto& k) { cfg.attack.eps_minus = parse_real(v, k); }},
      {"eps_plus", [&](auto& v, auto& k) { cfg.attack.eps_plus = parse_real(v, k); }},
      {"a", [&](auto& v, auto& k) { cfg.attack.a = parse_real(v, k); }},
      {"c", [&](auto& v, auto& k) { cfg.attack.c = parse_real(v, k); }},
      {"alpha", [&](auto& v, auto& k) { cfg.attack.alpha = parse_real(v, k); }},
      {"gamma", [&](auto& v, auto& k) { cfg.attack.gamma = parse_real(v, k); }},
      {"eta_scale", [&](auto& v, auto& k) { cfg.attack.eta.scale = parse_real(v, k); }},
      {"eta_offset", [&](auto& v, auto& k) { cfg.attack.eta.offset = parse_real(v, k); }},
      {"max_iter", [&](auto& v, auto& k) { cfg.attack.max_iter = size(v, k); }},
      {"probe_iter", [&](auto& v, auto& k) { cfg.attack.probe_iter = size(v, k); }},
      {"objective", [&](auto& v, auto&) { cfg.attack.mode = parse_objective_mode(v); }},
      {"strategy", [&](auto& v, auto&) { cfg.strategy = parse_strategy(v); }},
      {"strategies", [&](auto& v, auto&) {
         cfg.strategies.clear();
         for (const auto& s : split(v, ',')) cfg.strategies.push_back(parse_strategy(trim(s)));
       }},
      {"budget", [&](auto& v, auto& k) { cfg.budget = parse_real(v, k); }},
      {"budget_scale", [&](auto& v, auto& k) { cfg.budget_scale = parse_real(v, k); }},
      {"budgets", [&](auto& v, auto& k) { cfg.budgets = parse_double_list(v, k); }},
      {"nodes", [&](auto& v, auto& k) { cfg.nodes = normalize_node_set(parse_index_list(v, k)); }},
      {"windows", [&](auto& v, auto& k) { cfg.windows = size(v, k); }},
      {"window_start", [&](auto& v, auto& k) { cfg.window_start = size(v, k); }},
      {"hop_nodes", [&](auto& v, auto& k) { cfg.hop_nodes = size(v, k); }},
  };

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value, key);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  RunConfig cfg;
  apply_config(cfg, load_key_values(file.string()), file.parent_path());
  return cfg;
}

}  // namespace diffattack
