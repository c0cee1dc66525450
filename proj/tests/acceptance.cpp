// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include "diffattack/cli.hpp"
#include "diffattack/diffattack.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>

using namespace diffattack;

namespace {

constexpr std::size_t kSeeds = 10;
constexpr std::size_t kWindowsPerSeed = 5;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// One independent replicate of the synthetic benchmark: data, graph and a
/// trained 2-layer GCN, all derived from `seed`.
struct Replicate {
  std::uint64_t seed = 0;
  SyntheticData synthetic;
  WindowedDataset data;
  TrainResult trained;
  std::vector<std::size_t> windows;

  const Graph& graph() const { return synthetic.graph; }
  const GcnPredictor& model() const { return trained.predictor; }
};

Replicate make_replicate(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  SyntheticData s = generate_synthetic(spec);
  WindowedDataset data(s.data.speeds, 12, 1, 0.8);
  TrainingConfig tc;
  tc.seed = seed;
  TrainResult r = train_new(data, s.graph, tc);
  auto windows = evenly_spaced(data.test_starts(), kWindowsPerSeed);
  return Replicate{seed, std::move(s), std::move(data), std::move(r), std::move(windows)};
}

AttackConfig attack_config(std::uint64_t seed) {
  AttackConfig cfg;
  cfg.seed = seed;
  return cfg;
}

Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

// ---------------------------------------------------------------------------

Verdict locality() {
  Rng rng(substream(1, "acceptance/locality"));
  std::size_t ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 29;
    const std::size_t layers = 1 + rng() % 3;
    std::bernoulli_distribution edge(2.5 / static_cast<double>(n));
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (NodeId i = 0; i < n; ++i)
      for (NodeId j = i + 1; j < n; ++j)
        if (edge(rng)) edges.emplace_back(i, j);
    const Graph g = build_graph(edges, n);
    const GcnModel m = init_gcn(4, std::vector<std::size_t>(layers, 8), 2, rng);
    const Matrix a = normalized_adjacency(g).matrix;
    const Matrix x = uniform_matrix(static_cast<Eigen::Index>(n), 4, rng, 0, 2);
    const NodeId h = rng() % n;
    Matrix xp = x;
    xp.row(static_cast<Eigen::Index>(h)) += uniform_matrix(1, 4, rng, -5, 5);
    const Matrix dy = forward(m, a, xp) - forward(m, a, x);
    const auto dist = hop_distances(g, h);
    bool clean = true;
    for (NodeId i = 0; i < n; ++i) {
      if (dist[i] != kUnreachable && dist[i] <= layers) continue;
      const double d = dy.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff();
      worst = std::max(worst, d);
      clean = clean && d <= 1e-9;
    }
    ok += clean;
  }
  return {ok == 100, std::to_string(ok) + "/100 instances clean, max |dy| beyond L hops = " + fixed(worst, 12)};
}

Verdict spsa_fidelity() {
  Matrix target(2, 2);
  // Equal-magnitude gradients: each coordinate's estimate carries noise from
  // the other three, so the spread relative to the mean is the same for all.
  target << 1.5, -1.5, -1.5, 1.5;
  const Matrix u = Matrix::Zero(2, 2);
  auto phi = [&](const Matrix& v) { return -(v - target).squaredNorm(); };
  const Matrix analytic = -2.0 * (u - target);
  Rng rng(substream(2, "acceptance/spsa"));
  Matrix mean = Matrix::Zero(2, 2);
  constexpr int draws = 10000;
  for (int k = 0; k < draws; ++k) {
    mean += spsa_gradient(phi, u, 0.1, sample_masked_rademacher(NodeSet{0, 1}, 2, 2, rng));
  }
  mean /= draws;
  const double worst = ((mean - analytic).array().abs() / analytic.array().abs()).maxCoeff();
  return {worst <= 0.05, "10000 draws on a 2x2 quadratic, worst relative error " + fixed(100 * worst, 2) + "%"};
}

Verdict box_constraints(const Replicate& rep) {
  const Matrix x = rep.data.features(rep.windows.front());
  const AttackConfig cfg = attack_config(rep.seed);
  const NodeSet p{3, 17, 29, 44};
  std::size_t checked = 0, violations = 0;
  auto check = [&](const IterationInfo& it) {
    ++checked;
    violations += !satisfies_constraints(it.u, x, cfg, p);
  };
  AttackConfig debug = cfg;
  debug.max_iter = 1000;
  run_attack(rep.model(), x, p, debug, check);
  const AttackResult full = run_attack(rep.model(), x, p, cfg, check);
  violations += !satisfies_constraints(full.perturbation.u, x, cfg, p);
  return {violations == 0 && checked == debug.max_iter + cfg.max_iter,
          std::to_string(checked) + " iterates checked (1000 debug + " + std::to_string(cfg.max_iter) +
              " full), " + std::to_string(violations) + " violations"};
}

Verdict greedy_correctness() {
  Rng rng(substream(4, "acceptance/knapsack"));
  std::uniform_real_distribution<double> util(0.0, 1.0);
  std::uniform_int_distribution<int> cost(1, 10);
  std::size_t feasible = 0, within_half = 0;
  double worst_ratio = 1.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng() % 15);
    Vector u(n), c(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      u(i) = util(rng);
      c(i) = cost(rng);
    }
    const double budget = std::floor(std::uniform_real_distribution<double>(0.0, c.sum())(rng));
    const Selection s = knapsack_greedy(u, BudgetSpec{budget, c});
    double value = 0.0, spent = 0.0;
    for (NodeId i : s.nodes) {
      value += u(static_cast<Eigen::Index>(i));
      spent += c(static_cast<Eigen::Index>(i));
    }
    double best = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      double v = 0, w = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (mask & (1u << i)) {
          v += u(i);
          w += c(i);
        }
      }
      if (w <= budget) best = std::max(best, v);
    }
    feasible += spent <= budget;
    within_half += value >= 0.5 * best - 1e-12;
    if (best > 0) worst_ratio = std::min(worst_ratio, value / best);
  }
  return {feasible == 500 && within_half == 500,
          "500 instances: " + std::to_string(feasible) + " feasible, " + std::to_string(within_half) +
              " within half of optimum, worst ratio " + fixed(worst_ratio)};
}

double total_cost(const Graph& g) { return BudgetSpec::degree_costs(g, 0).total_cost(); }

Verdict strategy_ordering(const std::vector<Replicate>& reps) {
  const std::vector<Strategy> order{Strategy::kg_spsa, Strategy::spsa, Strategy::random,
                                    Strategy::kg_pagerank, Strategy::pagerank};
  Matrix aai(static_cast<Eigen::Index>(reps.size()), static_cast<Eigen::Index>(order.size()));
  Matrix picked = aai;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const auto& rep = reps[r];
    const BudgetSpec budget = BudgetSpec::degree_costs(rep.graph(), 0.25 * total_cost(rep.graph()));
    for (std::size_t s = 0; s < order.size(); ++s) {
      const AttackReport report = evaluate_strategy(rep.model(), rep.data, rep.graph(), order[s], budget,
                                                    attack_config(rep.seed), rep.windows);
      aai(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = report.aai;
      picked(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = report.mean_selected;
    }
  }
  const Vector mean = aai.colwise().mean();
  const Vector mean_picked = picked.colwise().mean();
  std::ostringstream detail;
  detail << "seed-mean AAI (nodes attacked)";
  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    detail << ' ' << strategy_name(order[s]) << '=' << fixed(mean(si)) << " (" << fixed(mean_picked(si), 1) << ')';
  }
  auto wins = [&](Eigen::Index hi, Eigen::Index lo) {
    return static_cast<std::size_t>((aai.col(hi).array() >= aai.col(lo).array()).count());
  };
  const std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs{{0, 1}, {1, 2}, {3, 4}};
  bool pass = true;
  for (auto [hi, lo] : pairs) {
    const std::size_t w = wins(hi, lo);
    const bool ok = w >= 8 && mean(hi) >= mean(lo);
    pass = pass && ok;
    detail << "; " << strategy_name(order[static_cast<std::size_t>(hi)]) << " >= "
           << strategy_name(order[static_cast<std::size_t>(lo)]) << " in " << w << "/" << reps.size()
           << (ok ? "" : " (fails)");
  }
  return {pass, detail.str()};
}

Verdict budget_monotonicity(const std::vector<Replicate>& reps) {
  const std::vector<double> nominal{20, 50, 100, 150, 200};
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(nominal.size()));
  for (const auto& rep : reps) {
    // B = 50 maps to 25% of the graph's total cost.
    const double scale = 0.25 * total_cost(rep.graph()) / 50.0;
    std::vector<double> budgets;
    for (double b : nominal) budgets.push_back(b * scale);
    const auto rows = budget_sweep(rep.model(), rep.data, rep.graph(), Strategy::kg_spsa, budgets,
                                   attack_config(rep.seed), rep.windows);
    for (std::size_t b = 0; b < rows.size(); ++b) mean(static_cast<Eigen::Index>(b)) += rows[b].aai;
  }
  mean /= static_cast<double>(reps.size());
  std::size_t inversions = 0;
  std::ostringstream detail;
  detail << "KG-SPSA seed-mean AAI over B={20,50,100,150,200}:";
  for (Eigen::Index b = 0; b < mean.size(); ++b) {
    detail << ' ' << fixed(mean(b));
    if (b > 0 && mean(b) < mean(b - 1)) ++inversions;
  }
  detail << "; " << inversions << " inversion(s)";
  return {inversions <= 1, detail.str()};
}

Verdict hop_decay(const Replicate& rep) {
  const AttackConfig cfg = attack_config(rep.seed);
  const std::size_t layers = rep.model().model().n_layers();
  const Graph& g = rep.graph();
  // Nodes with at least one neighbor two hops out, spread over the id range.
  std::vector<NodeId> eligible;
  for (NodeId h = 0; h < g.size(); ++h) {
    const auto d = hop_distances_to(g, h);
    if (std::count(d.begin(), d.end(), std::size_t{2}) > 0) eligible.push_back(h);
  }
  std::vector<NodeId> nodes;
  for (std::size_t k = 0; k < 30 && !eligible.empty(); ++k) nodes.push_back(eligible[k * eligible.size() / 30]);
  const auto curves = parallel_map(nodes.size(), [&](std::size_t k) {
    const Matrix x = rep.data.features(rep.windows[k % rep.windows.size()]);
    return hop_influence(rep.model(), x, g, nodes[k], cfg, k).curve;
  });
  std::size_t decaying = 0;
  double beyond = 0.0;
  for (const auto& c : curves) {
    decaying += c.mean_abs_phi.size() > 2 && c.mean_abs_phi[0] > c.mean_abs_phi[1] &&
                c.mean_abs_phi[1] > c.mean_abs_phi[2];
    for (std::size_t k = layers + 1; k < c.mean_abs_phi.size(); ++k) beyond = std::max(beyond, c.mean_abs_phi[k]);
    beyond = std::max(beyond, c.unreachable_mean_abs_phi);
  }
  const bool pass = nodes.size() == 30 && decaying >= 27 && beyond <= 1e-9;
  return {pass, std::to_string(decaying) + "/" + std::to_string(nodes.size()) +
                    " single-node attacks decay over hops 0>1>2, max mean |phi| beyond L hops = " +
                    fixed(beyond, 12)};
}

Verdict drop_grid(const Replicate& rep) {
  const std::vector<DropMode> modes{DropMode::drop_out, DropMode::drop_node, DropMode::drop_edge};
  const auto results = parallel_map(modes.size(), [&](std::size_t k) {
    TrainingConfig tc;
    tc.seed = rep.seed;
    tc.drop_mode = modes[k];
    return train_new(rep.data, rep.graph(), tc);
  });
  const BudgetSpec budget = BudgetSpec::degree_costs(rep.graph(), 0.25 * total_cost(rep.graph()));
  bool pass = true;
  std::ostringstream detail;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const AttackReport r = evaluate_strategy(results[k].predictor, rep.data, rep.graph(), Strategy::kg_spsa,
                                             budget, attack_config(rep.seed), rep.windows);
    const bool ok = r.aai > 0.0 && results[k].test.accuracy >= 0.80;
    pass = pass && ok;
    detail << (k ? "; " : "") << cli::variant_label(modes[k]) << " accuracy " << fixed(results[k].test.accuracy)
           << " KG-SPSA AAI " << fixed(r.aai);
  }
  return {pass, detail.str()};
}

Verdict predictor_sanity(const Replicate& rep) {
  SyntheticSpec flat;
  flat.amplitude = 0.0;
  flat.noise_std = 0.0;
  const SyntheticData s = generate_synthetic(flat);
  const WindowedDataset data(s.data.speeds, 12, 1, 0.8);
  const TrainResult r = train_new(data, s.graph, TrainingConfig{});
  const auto& m = rep.trained.test;
  const bool pass = m.accuracy >= 0.85 && std::isfinite(m.rmse) && r.test.rmse < 0.5;
  return {pass, "synthetic accuracy " + fixed(m.accuracy) + " rmse " + fixed(m.rmse) +
                    " km/h; constant dataset rmse " + fixed(r.test.rmse, 6) + " km/h"};
}

Verdict determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "diffattack_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "run.cfg") << "n_nodes = 30\ndays = 3\nepochs = 30\nmax_iter = 2000\nwindows = 3\n"
                                       "drop_variants = true\nhop_nodes = 3\n";
  }
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    const std::string out = (root / run).string();
    for (const char* cmd : {"train", "report", "sweep"}) {
      const std::string dir = out + "/" + cmd;
      if (std::string(cmd) != "train") fs::copy(out + "/train", dir, fs::copy_options::recursive);
      const int code = cli::run({"diffattack", "--config", (root / "run.cfg").string(), "--seed", "11", "--out",
                                 std::string(cmd) == "train" ? out + "/train" : dir, cmd},
                                sink, sink);
      if (code != 0) return {false, std::string(cmd) + " exited with " + std::to_string(code) + ": " + sink.str()};
    }
  }
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    auto slurp = [](const fs::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    };
    ++compared;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
      ++differing;
      if (first_diff.empty()) first_diff = fs::relative(e.path(), root / "a").string();
    }
  }
  fs::remove_all(root);
  return {differing == 0 && compared > 0,
          std::to_string(compared) + " output files from two train/report/sweep runs compared, " +
              std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& check) {
    const auto start = clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << name << "): " << v.detail << " ["
              << fixed(secs, 1) << " s]" << std::endl;
  };

  const auto setup_start = clock::now();
  std::vector<Replicate> reps;
  for (auto& r : parallel_map(kSeeds, [](std::size_t k) { return std::optional(make_replicate(k)); })) {
    reps.push_back(std::move(*r));
  }
  std::cout << "setup: trained " << kSeeds << " seeded replicates of the N=60 benchmark ["
            << fixed(std::chrono::duration<double>(clock::now() - setup_start).count(), 1) << " s]" << std::endl;

  report(1, "locality", locality);
  report(2, "SPSA gradient fidelity", spsa_fidelity);
  report(3, "box and support constraints", [&] { return box_constraints(reps.front()); });
  report(4, "greedy correctness", greedy_correctness);
  report(5, "strategy ordering", [&] { return strategy_ordering(reps); });
  report(6, "budget monotonicity", [&] { return budget_monotonicity(reps); });
  report(7, "hop decay", [&] { return hop_decay(reps.front()); });
  report(8, "drop-regularization grid", [&] { return drop_grid(reps.front()); });
  report(9, "predictor sanity", [&] { return predictor_sanity(reps.front()); });
  report(10, "determinism", determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
