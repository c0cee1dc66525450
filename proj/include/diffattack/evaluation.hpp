#pragma once

#include "diffattack/attack.hpp"
#include "diffattack/io.hpp"
#include "diffattack/parallel.hpp"
#include "diffattack/selection.hpp"

#include <iomanip>
#include <sstream>

namespace diffattack {

/// Average attack influence: mean |φ_i| (km/h).
inline double aai(const Vector& phi) {
  if (phi.size() == 0) return 0.0;
  return phi.cwiseAbs().mean();
}

struct AairResult {
  double value = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;
};

/// Average attack influence ratio: mean φ_i / |y_i| over nodes whose baseline
/// prediction is at least `floor_kmh` in magnitude. |y_i| sums over the
/// horizon so it matches how φ_i sums.
inline AairResult aair(const Vector& phi, const Matrix& y_baseline,
                       double floor_kmh = 0.1) {
  if (phi.size() != y_baseline.rows()) throw ShapeError("aair: phi/baseline length mismatch");
  AairResult r;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const double mag = y_baseline.row(i).cwiseAbs().sum();
    if (mag < floor_kmh) {
      ++r.excluded;
      continue;
    }
    sum += phi(i) / mag;
    ++r.included;
  }
  if (r.included == 0) throw Error("aair: every node fell below the baseline floor");
  r.value = sum / static_cast<double>(r.included);
  return r;
}

/// Mean |φ| grouped by hop distance from the attacked node.
struct HopCurve {
  std::vector<double> mean_abs_phi;  // index = hop distance
  std::vector<std::size_t> counts;
  std::size_t unreachable_count = 0;
  double unreachable_mean_abs_phi = 0.0;
};

/// Hop distance from every node i to `target` (i's prediction can depend on
/// target's features only through such paths).
inline std::vector<std::size_t> hop_distances_to(const Graph& g, NodeId target) {
  if (g.undirected()) return hop_distances(g, target);
  return hop_distances(Graph::from_adjacency(g.adjacency().transpose(), false), target);
}

inline HopCurve hop_curve(const Vector& phi, const Graph& g, NodeId attacked) {
  const auto dist = hop_distances_to(g, attacked);
  HopCurve c;
  double unreachable_sum = 0.0;
  for (NodeId i = 0; i < dist.size(); ++i) {
    const double v = std::abs(phi(static_cast<Eigen::Index>(i)));
    if (dist[i] == kUnreachable) {
      ++c.unreachable_count;
      unreachable_sum += v;
      continue;
    }
    if (dist[i] >= c.mean_abs_phi.size()) {
      c.mean_abs_phi.resize(dist[i] + 1, 0.0);
      c.counts.resize(dist[i] + 1, 0);
    }
    c.mean_abs_phi[dist[i]] += v;
    ++c.counts[dist[i]];
  }
  for (std::size_t k = 0; k < c.mean_abs_phi.size(); ++k) {
    if (c.counts[k] > 0) c.mean_abs_phi[k] /= static_cast<double>(c.counts[k]);
  }
  if (c.unreachable_count > 0) {
    c.unreachable_mean_abs_phi = unreachable_sum / static_cast<double>(c.unreachable_count);
  }
  return c;
}

struct HopInfluence {
  HopCurve curve;
  AttackResult attack;
};

/// Attack a single node and report how the influence decays with distance.
template <BlackBoxModel Model>
HopInfluence hop_influence(const Model& model, const Matrix& x, const Graph& g,
                           NodeId attacked, const AttackConfig& cfg,
                           std::size_t stream_index = 0) {
  if (attacked >= g.size()) throw Error("attacked node out of range");
  HopInfluence h;
  h.attack = run_attack(model, x, NodeSet{attacked}, cfg, {}, stream_index);
  h.curve = hop_curve(h.attack.influence.phi, g, attacked);
  return h;
}

/// Result of one strategy on one feature window.
struct WindowOutcome {
  std::size_t window_start = 0;
  Selection selection;
  Vector phi;
  double aai = 0.0;
  AairResult aair;
  double objective = 0.0;
  std::size_t evaluations = 0;
};

/// Select nodes with `strategy` and attack them. The selection and SPSA
/// streams are keyed by (cfg.seed, stream_index) only, so every strategy,
/// budget and model variant sees the same randomness for the same window.
template <BlackBoxModel Model>
WindowOutcome attack_window(const Model& model, const Matrix& x, const Graph& g,
                            Strategy strategy, const BudgetSpec& budget,
                            const AttackConfig& cfg, std::size_t stream_index,
                            std::size_t window_start = 0) {
  Rng rng = substream(cfg.seed, "select", stream_index);
  WindowOutcome w;
  w.window_start = window_start;
  w.selection = select_nodes(strategy, g, model, x, budget, cfg, rng, stream_index);
  AttackResult r = run_attack(model, x, w.selection.nodes, cfg, {}, stream_index);
  w.phi = r.influence.phi;
  w.aai = aai(w.phi);
  w.aair = aair(w.phi, r.influence.baseline);
  w.objective = r.influence.total;
  w.evaluations = r.evaluations;
  return w;
}

struct AttackReport {
  std::string strategy;
  std::string variant;
  double budget = 0.0;
  std::uint64_t seed = 0;
  double aai = 0.0;       // mean over windows
  double aai_std = 0.0;
  double aair = 0.0;
  double aair_std = 0.0;
  std::size_t aair_excluded = 0;
  double mean_selected = 0.0;
  double mean_cost = 0.0;
  Vector mean_phi;
  std::vector<WindowOutcome> windows;
};

inline AttackReport summarize(std::string strategy, std::string variant, double budget,
                              std::uint64_t seed, std::vector<WindowOutcome> windows) {
  AttackReport r;
  r.strategy = std::move(strategy);
  r.variant = std::move(variant);
  r.budget = budget;
  r.seed = seed;
  if (windows.empty()) return r;
  const double k = static_cast<double>(windows.size());
  r.mean_phi = Vector::Zero(windows.front().phi.size());
  for (const auto& w : windows) {
    r.aai += w.aai / k;
    r.aair += w.aair.value / k;
    r.aair_excluded += w.aair.excluded;
    r.mean_selected += static_cast<double>(w.selection.nodes.size()) / k;
    r.mean_cost += w.selection.cost / k;
    r.mean_phi += w.phi / k;
  }
  for (const auto& w : windows) {
    r.aai_std += (w.aai - r.aai) * (w.aai - r.aai) / k;
    r.aair_std += (w.aair.value - r.aair) * (w.aair.value - r.aair) / k;
  }
  r.aai_std = std::sqrt(r.aai_std);
  r.aair_std = std::sqrt(r.aair_std);
  r.windows = std::move(windows);
  return r;
}

/// `count` test-window starts spread evenly over `starts`.
inline std::vector<std::size_t> evenly_spaced(const std::vector<std::size_t>& starts,
                                              std::size_t count) {
  if (starts.empty() || count == 0) return {};
  count = std::min(count, starts.size());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(starts[k * starts.size() / count]);
  return out;
}

template <BlackBoxModel Model>
AttackReport evaluate_strategy(const Model& model, const WindowedDataset& data, const Graph& g,
                               Strategy strategy, const BudgetSpec& budget,
                               const AttackConfig& cfg,
                               const std::vector<std::size_t>& window_starts,
                               std::string variant = "model") {
  auto windows = parallel_map(window_starts.size(), [&](std::size_t k) {
    return attack_window(model, data.features(window_starts[k]), g, strategy, budget, cfg, k,
                         window_starts[k]);
  });
  return summarize(std::string(strategy_name(strategy)), std::move(variant), budget.total,
                   cfg.seed, std::move(windows));
}

/// One report per budget; every row reuses the same per-window streams.
template <BlackBoxModel Model>
std::vector<AttackReport> budget_sweep(const Model& model, const WindowedDataset& data,
                                       const Graph& g, Strategy strategy,
                                       const std::vector<double>& budgets,
                                       const AttackConfig& cfg,
                                       const std::vector<std::size_t>& window_starts) {
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw Error("budgets must be sorted ascending");
  const std::size_t w = window_starts.size();
  auto cells = parallel_map(budgets.size() * w, [&](std::size_t job) {
    const std::size_t b = job / w, k = job % w;
    return attack_window(model, data.features(window_starts[k]), g, strategy,
                         BudgetSpec::degree_costs(g, budgets[b]), cfg, k, window_starts[k]);
  });
  std::vector<AttackReport> rows;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    std::vector<WindowOutcome> ws(std::make_move_iterator(cells.begin() + static_cast<long>(b * w)),
                                  std::make_move_iterator(cells.begin() + static_cast<long>((b + 1) * w)));
    rows.push_back(summarize(std::string(strategy_name(strategy)), "model", budgets[b], cfg.seed,
                             std::move(ws)));
  }
  return rows;
}

/// Strategies (rows) x model variants (columns) of AAI and AAIR.
struct ComparisonTable {
  std::vector<std::string> strategies;
  std::vector<std::string> variants;
  Matrix aai;
  Matrix aair;
  std::vector<AttackReport> reports;  // row-major over (strategy, variant)

  std::string to_csv() const {
    std::ostringstream os;
    os << "strategy,variant,aai,aair\n";
    for (std::size_t s = 0; s < strategies.size(); ++s) {
      for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto si = static_cast<Eigen::Index>(s), vi = static_cast<Eigen::Index>(v);
        os << strategies[s] << ',' << variants[v] << ',' << format_double(aai(si, vi)) << ','
           << format_double(aair(si, vi)) << '\n';
      }
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    auto table = [&](const char* title, const Matrix& m, bool percent) {
      os << title << '\n' << std::left << std::setw(16) << "strategy";
      for (const auto& v : variants) os << std::right << std::setw(12) << v;
      os << '\n';
      for (std::size_t s = 0; s < strategies.size(); ++s) {
        os << std::left << std::setw(16) << strategies[s];
        for (std::size_t v = 0; v < variants.size(); ++v) {
          const double val = m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v));
          std::ostringstream cell;
          cell << std::fixed << std::setprecision(2) << (percent ? 100.0 * val : val)
               << (percent ? "%" : "");
          os << std::right << std::setw(12) << cell.str();
        }
        os << '\n';
      }
    };
    table("AAI (km/h)", aai, false);
    os << '\n';
    table("AAIR", aair, true);
    return os.str();
  }
};

template <BlackBoxModel Model>
ComparisonTable comparison_table(const std::vector<std::pair<std::string, const Model*>>& variants,
                                 const std::vector<Strategy>& strategies,
                                 const WindowedDataset& data, const Graph& g,
                                 const BudgetSpec& budget, const AttackConfig& cfg,
                                 const std::vector<std::size_t>& window_starts) {
  ComparisonTable t;
  for (Strategy s : strategies) t.strategies.emplace_back(strategy_name(s));
  for (const auto& v : variants) t.variants.push_back(v.first);
  const std::size_t nv = variants.size(), w = window_starts.size();
  const std::size_t per_strategy = nv * w;
  auto cells = parallel_map(strategies.size() * per_strategy, [&](std::size_t job) {
    const std::size_t s = job / per_strategy, v = (job / w) % nv, k = job % w;
    return attack_window(*variants[v].second, data.features(window_starts[k]), g, strategies[s],
                         budget, cfg, k, window_starts[k]);
  });
  t.aai = Matrix::Zero(static_cast<Eigen::Index>(strategies.size()), static_cast<Eigen::Index>(nv));
  t.aair = t.aai;
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    for (std::size_t v = 0; v < nv; ++v) {
      const std::size_t first = s * per_strategy + v * w;
      std::vector<WindowOutcome> ws(std::make_move_iterator(cells.begin() + static_cast<long>(first)),
                                    std::make_move_iterator(cells.begin() + static_cast<long>(first + w)));
      AttackReport r = summarize(t.strategies[s], t.variants[v], budget.total, cfg.seed, std::move(ws));
      t.aai(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v)) = r.aai;
      t.aair(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(v)) = r.aair;
      t.reports.push_back(std::move(r));
    }
  }
  return t;
}

}  // namespace diffattack
