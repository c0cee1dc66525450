#pragma once

#include "diffattack/checkpoint.hpp"
#include "diffattack/evaluation.hpp"
#include "diffattack/report.hpp"
#include "diffattack/run_config.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

namespace diffattack::cli {

namespace fs = std::filesystem;

struct Inputs {
  Graph graph;
  SpeedDataset data;
  bool synthetic = false;
};

/// Explicit paths win; otherwise reuse speeds.csv/adjacency.csv from the
/// output directory; otherwise generate the synthetic benchmark.
inline Inputs load_inputs(const RunConfig& cfg) {
  Inputs in;
  if (cfg.data.has_value() != cfg.adjacency.has_value()) {
    throw ConfigError("data and adjacency must be given together");
  }
  std::optional<fs::path> data = cfg.data, adjacency = cfg.adjacency, positions = cfg.positions;
  if (!data && fs::exists(cfg.out / "speeds.csv") && fs::exists(cfg.out / "adjacency.csv")) {
    data = cfg.out / "speeds.csv";
    adjacency = cfg.out / "adjacency.csv";
    if (!positions && fs::exists(cfg.out / "positions.csv")) positions = cfg.out / "positions.csv";
  }
  if (!data) {
    SyntheticData s = generate_synthetic(cfg.synthetic);
    in.graph = std::move(s.graph);
    in.data = std::move(s.data);
    in.synthetic = true;
    return in;
  }
  in.data = load_speed_csv(data->string());
  in.graph = load_adjacency_csv(adjacency->string(), cfg.undirected);
  if (positions) in.graph.set_positions(load_positions_csv(positions->string()));
  if (in.graph.size() != static_cast<std::size_t>(in.data.speeds.cols())) {
    throw ConfigError("adjacency has " + std::to_string(in.graph.size()) + " nodes but speeds have " +
                      std::to_string(in.data.speeds.cols()) + " columns");
  }
  return in;
}

inline fs::path checkpoint_path(const RunConfig& cfg) {
  const fs::path p = cfg.checkpoint.value_or(cfg.out / "model.ckpt");
  if (!fs::exists(p)) throw ConfigError("checkpoint not found: " + p.string() + " (run train first)");
  return p;
}

inline GcnPredictor load_model(const fs::path& path, const Graph& g) {
  GcnPredictor p = load_checkpoint(path.string());
  require_graph_match(p, g);
  return p;
}

inline WindowedDataset make_dataset(const RunConfig& cfg, const Inputs& in) {
  return WindowedDataset(in.data.speeds, cfg.window, cfg.horizon, cfg.training.train_fraction);
}

inline std::vector<std::size_t> eval_windows(const RunConfig& cfg, const WindowedDataset& data) {
  if (cfg.window_start) return {*cfg.window_start};
  auto w = evenly_spaced(data.test_starts(), cfg.windows);
  if (w.empty()) throw ConfigError("dataset has no test windows");
  return w;
}

inline void check_window(const WindowedDataset& data, std::size_t start) {
  if (start + data.window() > static_cast<std::size_t>(data.speeds().rows())) {
    throw ConfigError("window_start " + std::to_string(start) + " runs past the end of the data");
  }
}

inline std::string timing_csv(const std::string& command, double seconds) {
  return "command,wall_seconds\n" + command + "," + format_double(seconds) + "\n";
}

inline std::string drop_file_stem(DropMode m) {
  return m == DropMode::none ? "model" : "model_" + std::string(to_string(m));
}

inline std::string variant_label(DropMode m) {
  switch (m) {
    case DropMode::none: return "GCN";
    case DropMode::drop_out: return "DropOut";
    case DropMode::drop_node: return "DropNode";
    case DropMode::drop_edge: return "DropEdge";
  }
  return "?";
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Subcommands

inline void write_inputs(BundleWriter& w, const Inputs& in) {
  std::ostringstream speeds, adj;
  write_speed_csv(speeds, in.data);
  write_matrix_csv(adj, in.graph.adjacency());
  w.write("speeds.csv", speeds.str());
  w.write("adjacency.csv", adj.str());
  if (in.graph.positions()) {
    std::ostringstream pos;
    write_matrix_csv(pos, *in.graph.positions());
    w.write("positions.csv", pos.str());
  }
}

inline int cmd_gen(const RunConfig& cfg, std::ostream& out) {
  SyntheticData s = generate_synthetic(cfg.synthetic);
  Inputs in{std::move(s.graph), std::move(s.data), true};
  BundleWriter w(cfg.out);
  write_inputs(w, in);
  w.write("config.txt", "data = speeds.csv\nadjacency = adjacency.csv\npositions = positions.csv\nseed = " +
                            std::to_string(cfg.seed) + "\n");
  w.commit();
  out << "gen: " << in.graph.size() << " nodes, " << in.data.speeds.rows() << " steps, "
      << in.graph.edge_count() << " edges -> " << cfg.out.string() << '\n';
  return 0;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  Stopwatch clock;
  const Inputs in = load_inputs(cfg);
  const WindowedDataset data = make_dataset(cfg, in);
  std::vector<DropMode> modes{cfg.training.drop_mode};
  if (cfg.drop_variants) {
    for (DropMode m : {DropMode::drop_out, DropMode::drop_node, DropMode::drop_edge}) {
      if (m != cfg.training.drop_mode) modes.push_back(m);
    }
  }
  const auto results = parallel_map(modes.size(), [&](std::size_t k) {
    TrainingConfig tc = cfg.training;
    tc.drop_mode = modes[k];
    return train_new(data, in.graph, tc, cfg.hidden_dims);
  });

  BundleWriter w(cfg.out);
  if (in.synthetic) write_inputs(w, in);
  std::ostringstream metrics, losses;
  metrics << "checkpoint,drop_mode,accuracy,rmse,final_loss,test_windows\n";
  losses << "checkpoint,epoch,loss\n";
  for (std::size_t k = 0; k < modes.size(); ++k) {
    // The first entry is the configured mode; it always goes to model.ckpt.
    const std::string stem = k == 0 ? "model" : drop_file_stem(modes[k]);
    std::ostringstream ck;
    save_checkpoint(ck, results[k].predictor);
    w.write(stem + ".ckpt", ck.str());
    const auto& r = results[k];
    const double last = r.loss_history.empty() ? 0.0 : r.loss_history.back();
    metrics << stem << ".ckpt," << to_string(modes[k]) << ',' << format_double(r.test.accuracy) << ','
            << format_double(r.test.rmse) << ',' << format_double(last) << ',' << r.test.windows << '\n';
    for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
      losses << stem << ".ckpt," << e << ',' << format_double(r.loss_history[e]) << '\n';
    }
    out << "train: " << stem << ".ckpt drop_mode=" << to_string(modes[k])
        << " accuracy=" << format_double(r.test.accuracy) << " rmse=" << format_double(r.test.rmse) << '\n';
  }
  w.write("train_metrics.csv", metrics.str());
  w.write("loss_history.csv", losses.str());
  w.write("timing.csv", timing_csv("train", clock.seconds()));
  w.commit();
  return 0;
}

inline int cmd_attack(const RunConfig& cfg, std::ostream& out) {
  Stopwatch clock;
  const Inputs in = load_inputs(cfg);
  const GcnPredictor model = load_model(checkpoint_path(cfg), in.graph);
  const WindowedDataset data = make_dataset(cfg, in);
  const std::size_t start = cfg.window_start.value_or(eval_windows(cfg, data).front());
  check_window(data, start);
  const Matrix x = data.features(start);
  const BudgetSpec budget = BudgetSpec::degree_costs(in.graph, cfg.scaled_budget(cfg.budget));

  Selection sel;
  std::string label;
  if (cfg.nodes) {
    for (NodeId i : *cfg.nodes) {
      if (i >= in.graph.size()) throw ConfigError("nodes: index " + std::to_string(i) + " out of range");
      sel.cost += budget.costs(static_cast<Eigen::Index>(i));
    }
    sel.nodes = *cfg.nodes;
    sel.order = *cfg.nodes;
    sel.scores = Vector::Zero(budget.costs.size());
    label = "Given";
  } else {
    Rng rng = substream(cfg.attack.seed, "select", 0);
    sel = select_nodes(cfg.strategy, in.graph, model, x, budget, cfg.attack, rng, 0);
    label = std::string(strategy_name(cfg.strategy));
  }
  const AttackResult r = run_attack(model, x, sel.nodes, cfg.attack, {}, 0);
  const double a = aai(r.influence.phi);
  const AairResult ratio = aair(r.influence.phi, r.influence.baseline);

  BundleWriter w(cfg.out);
  std::ostringstream u;
  write_matrix_csv(u, r.perturbation.u);
  w.write("perturbation.csv", u.str());
  w.write("phi.csv", phi_csv(r.influence.phi, in.data.node_ids));
  w.write("selection.csv", selection_csv(sel, budget, in.data.node_ids));
  std::ostringstream summary;
  summary << "strategy,budget,window_start,selected,cost,objective,aai,aair,aair_excluded,evaluations\n"
          << label << ',' << format_double(budget.total) << ',' << start << ',' << sel.nodes.size() << ','
          << format_double(sel.cost) << ',' << format_double(r.influence.total) << ',' << format_double(a)
          << ',' << format_double(ratio.value) << ',' << ratio.excluded << ',' << r.evaluations << '\n';
  w.write("summary.csv", summary.str());
  w.write("timing.csv", timing_csv("attack", clock.seconds()));
  w.commit();
  out << "attack: " << label << " selected=" << sel.nodes.size() << " AAI=" << format_double(a)
      << " AAIR=" << format_double(ratio.value) << " evaluations=" << r.evaluations << '\n';
  return 0;
}

inline int cmd_select(const RunConfig& cfg, std::ostream& out) {
  const Inputs in = load_inputs(cfg);
  const GcnPredictor model = load_model(checkpoint_path(cfg), in.graph);
  const WindowedDataset data = make_dataset(cfg, in);
  const std::size_t start = cfg.window_start.value_or(eval_windows(cfg, data).front());
  check_window(data, start);
  const BudgetSpec budget = BudgetSpec::degree_costs(in.graph, cfg.scaled_budget(cfg.budget));
  Rng rng = substream(cfg.attack.seed, "select", 0);
  const Selection sel =
      select_nodes(cfg.strategy, in.graph, model, data.features(start), budget, cfg.attack, rng, 0);
  BundleWriter w(cfg.out);
  w.write("selection.csv", selection_csv(sel, budget, in.data.node_ids));
  w.commit();
  out << "select: " << strategy_name(cfg.strategy) << " budget=" << format_double(budget.total)
      << " cost=" << format_double(sel.cost) << " nodes=";
  for (std::size_t k = 0; k < sel.nodes.size(); ++k) out << (k ? "," : "") << sel.nodes[k];
  out << '\n';
  return 0;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  Stopwatch clock;
  const Inputs in = load_inputs(cfg);
  const GcnPredictor model = load_model(checkpoint_path(cfg), in.graph);
  const WindowedDataset data = make_dataset(cfg, in);
  const auto windows = eval_windows(cfg, data);
  for (std::size_t s : windows) check_window(data, s);
  const BudgetSpec budget = BudgetSpec::degree_costs(in.graph, cfg.scaled_budget(cfg.budget));
  const AttackReport report =
      evaluate_strategy(model, data, in.graph, cfg.strategy, budget, cfg.attack, windows);

  // Single-node diffusion curves on the first evaluated window.
  const std::size_t n_hops = std::min(cfg.hop_nodes, in.graph.size());
  const Matrix x0 = data.features(windows.front());
  auto curves = parallel_map(n_hops, [&](std::size_t k) {
    const NodeId h = k * in.graph.size() / n_hops;
    return LabeledHopCurve{h, hop_influence(model, x0, in.graph, h, cfg.attack, k).curve};
  });

  BundleWriter w(cfg.out);
  w.write("summary.csv", summary_csv({report}));
  w.write("per_node_phi.csv", per_node_phi_csv({report}, in.data.node_ids));
  w.write("hop_curve.csv", hop_curve_csv(curves, in.data.node_ids));
  const auto mean_curve = mean_hop_curve(curves);
  std::vector<double> hops(mean_curve.size());
  std::iota(hops.begin(), hops.end(), 0.0);
  w.write("hop_decay.svg", svg_line_plot(hops, mean_curve, "Single-node attack diffusion", "hop distance",
                                         "mean |phi| (km/h)"));
  if (in.graph.positions()) {
    w.write("node_map.svg", svg_node_map(in.graph, report.mean_phi, "Mean phi per node"));
  }
  w.write("timing.csv", timing_csv("evaluate", clock.seconds()));
  w.commit();
  out << "evaluate: " << report.strategy << " budget=" << format_double(report.budget)
      << " windows=" << windows.size() << " AAI=" << format_double(report.aai)
      << " AAIR=" << format_double(report.aair) << '\n';
  return 0;
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  Stopwatch clock;
  const Inputs in = load_inputs(cfg);
  const GcnPredictor model = load_model(checkpoint_path(cfg), in.graph);
  const WindowedDataset data = make_dataset(cfg, in);
  const auto windows = eval_windows(cfg, data);
  for (std::size_t s : windows) check_window(data, s);
  std::vector<double> budgets;
  for (double b : cfg.budgets) budgets.push_back(cfg.scaled_budget(b));
  const auto rows = budget_sweep(model, data, in.graph, cfg.strategy, budgets, cfg.attack, windows);

  BundleWriter w(cfg.out);
  w.write("sweep.csv", sweep_csv(rows));
  w.write("summary.csv", summary_csv(rows));
  std::vector<double> aais;
  for (const auto& r : rows) aais.push_back(r.aai);
  w.write("budget_curve.svg", svg_line_plot(budgets, aais, "Attack effect vs budget", "budget B", "AAI (km/h)"));
  w.write("timing.csv", timing_csv("sweep", clock.seconds()));
  w.commit();
  for (const auto& r : rows) {
    out << "sweep: " << r.strategy << " budget=" << format_double(r.budget) << " AAI=" << format_double(r.aai)
        << " AAIR=" << format_double(r.aair) << '\n';
  }
  return 0;
}

inline int cmd_report(const RunConfig& cfg, std::ostream& out) {
  Stopwatch clock;
  const Inputs in = load_inputs(cfg);
  const fs::path base = checkpoint_path(cfg);
  std::vector<GcnPredictor> models{load_model(base, in.graph)};
  std::vector<std::string> names{"GCN"};
  for (DropMode m : {DropMode::drop_out, DropMode::drop_node, DropMode::drop_edge}) {
    const fs::path p = base.parent_path() / (drop_file_stem(m) + ".ckpt");
    if (!fs::exists(p)) continue;
    models.push_back(load_model(p, in.graph));
    names.push_back(variant_label(m));
  }
  std::vector<std::pair<std::string, const GcnPredictor*>> variants;
  for (std::size_t k = 0; k < models.size(); ++k) variants.emplace_back(names[k], &models[k]);

  const WindowedDataset data = make_dataset(cfg, in);
  const auto windows = eval_windows(cfg, data);
  for (std::size_t s : windows) check_window(data, s);
  const BudgetSpec budget = BudgetSpec::degree_costs(in.graph, cfg.scaled_budget(cfg.budget));
  const ComparisonTable table =
      comparison_table(variants, cfg.strategies, data, in.graph, budget, cfg.attack, windows);

  BundleWriter w(cfg.out);
  w.write("comparison.csv", table.to_csv());
  w.write("comparison.txt", table.to_text());
  w.write("summary.csv", summary_csv(table.reports));
  w.write("per_node_phi.csv", per_node_phi_csv(table.reports, in.data.node_ids));
  w.write("timing.csv", timing_csv("report", clock.seconds()));
  w.commit();
  out << table.to_text();
  return 0;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::string json_escape(std::string_view s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '"': o += "\\\""; break;
      case '\\': o += "\\\\"; break;
      case '\n': o += "\\n"; break;
      case '\t': o += "\\t"; break;
      default: o += c;
    }
  }
  return o;
}

inline void error_line(std::ostream& err, std::string_view kind, std::string_view message) {
  err << "{\"error\":\"" << kind << "\",\"message\":\"" << json_escape(message) << "\"}\n";
}

}  // namespace detail

enum ExitCode : int { ok = 0, failure = 1, usage = 2, bad_config = 3, graph_mismatch = 4 };

/// Full CLI: parses `args` (args[0] is the program name), runs the chosen
/// subcommand and returns the exit status. Errors go to `err` as one JSON line.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Black-box diffusion attacks on GCN traffic predictors", "diffattack"};
  app.require_subcommand(1);

  std::string config_path, strategy, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::optional<std::size_t> windows;
  app.add_option("--config", config_path, "flat key=value run configuration");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--strategy", strategy, "selection strategy (e.g. kg-spsa, random, pagerank)");
  app.add_option("--budget", budget, "attack budget B (total degree cost)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--windows", windows, "number of test windows to average over");
  app.fallthrough();

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"gen", "write a synthetic graph and speed series"},
      {"train", "train the GCN predictor and save a checkpoint"},
      {"attack", "attack one window with given nodes or a strategy"},
      {"select", "run a selection strategy and write the chosen nodes"},
      {"evaluate", "AAI/AAIR over test windows plus single-node hop curves"},
      {"sweep", "AAI/AAIR across a list of budgets"},
      {"report", "strategy x model-variant comparison tables"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ExitCode::ok;
  } catch (const CLI::ParseError& e) {
    detail::error_line(err, "usage", e.what());
    return ExitCode::usage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!strategy.empty()) {
      try {
        cfg.strategy = parse_strategy(strategy);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
    if (budget) cfg.budget = *budget;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (windows) cfg.windows = *windows;
    cfg.propagate_seed();
    cfg.validate();

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen") return cmd_gen(cfg, out);
    if (name == "train") return cmd_train(cfg, out);
    if (name == "attack") return cmd_attack(cfg, out);
    if (name == "select") return cmd_select(cfg, out);
    if (name == "evaluate") return cmd_evaluate(cfg, out);
    if (name == "sweep") return cmd_sweep(cfg, out);
    if (name == "report") return cmd_report(cfg, out);
    detail::error_line(err, "usage", "unknown subcommand " + name);
    return ExitCode::usage;
  } catch (const GraphMismatchError& e) {
    detail::error_line(err, "graph_mismatch", e.what());
    return ExitCode::graph_mismatch;
  } catch (const ConfigError& e) {
    detail::error_line(err, "config", e.what());
    return ExitCode::bad_config;
  } catch (const std::exception& e) {
    detail::error_line(err, "runtime", e.what());
    return ExitCode::failure;
  }
}

}  // namespace diffattack::cli
