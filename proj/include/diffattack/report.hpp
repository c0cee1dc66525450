#pragma once

#include "diffattack/evaluation.hpp"
#include "diffattack/io.hpp"

#include <deque>
#include <filesystem>
#include <fstream>
#include <random>

namespace diffattack {

// ---------------------------------------------------------------------------
// CSV renderers. Every float goes through format_double (shortest round-trip).

inline std::string summary_csv(const std::vector<AttackReport>& reports) {
  std::ostringstream os;
  os << "strategy,variant,budget,seed,windows,aai,aai_std,aair,aair_std,aair_excluded,"
        "mean_selected,mean_cost\n";
  for (const auto& r : reports) {
    os << r.strategy << ',' << r.variant << ',' << format_double(r.budget) << ',' << r.seed << ','
       << r.windows.size() << ',' << format_double(r.aai) << ',' << format_double(r.aai_std) << ','
       << format_double(r.aair) << ',' << format_double(r.aair_std) << ',' << r.aair_excluded
       << ',' << format_double(r.mean_selected) << ',' << format_double(r.mean_cost) << '\n';
  }
  return os.str();
}

/// Budget sweep rows: one line per (strategy, variant, budget).
inline std::string sweep_csv(const std::vector<AttackReport>& rows) {
  std::ostringstream os;
  os << "strategy,variant,budget,aai,aai_std,aair,aair_std,mean_selected,mean_cost\n";
  for (const auto& r : rows) {
    os << r.strategy << ',' << r.variant << ',' << format_double(r.budget) << ','
       << format_double(r.aai) << ',' << format_double(r.aai_std) << ',' << format_double(r.aair)
       << ',' << format_double(r.aair_std) << ',' << format_double(r.mean_selected) << ','
       << format_double(r.mean_cost) << '\n';
  }
  return os.str();
}

inline std::string node_label(const std::vector<std::string>& ids, std::size_t i) {
  return i < ids.size() ? ids[i] : std::to_string(i);
}

/// Window-mean φ per node for every report.
inline std::string per_node_phi_csv(const std::vector<AttackReport>& reports,
                                    const std::vector<std::string>& node_ids = {}) {
  std::ostringstream os;
  os << "strategy,variant,budget,node,phi\n";
  for (const auto& r : reports) {
    for (Eigen::Index i = 0; i < r.mean_phi.size(); ++i) {
      os << r.strategy << ',' << r.variant << ',' << format_double(r.budget) << ','
         << node_label(node_ids, static_cast<std::size_t>(i)) << ','
         << format_double(r.mean_phi(i)) << '\n';
    }
  }
  return os.str();
}

/// Single-vector φ dump for the attack subcommand.
inline std::string phi_csv(const Vector& phi, const std::vector<std::string>& node_ids = {}) {
  std::ostringstream os;
  os << "node,phi\n";
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    os << node_label(node_ids, static_cast<std::size_t>(i)) << ',' << format_double(phi(i)) << '\n';
  }
  return os.str();
}

struct LabeledHopCurve {
  NodeId attacked = 0;
  HopCurve curve;
};

/// hop = "unreachable" marks nodes in other components.
inline std::string hop_curve_csv(const std::vector<LabeledHopCurve>& curves,
                                 const std::vector<std::string>& node_ids = {}) {
  std::ostringstream os;
  os << "attacked,hop,mean_abs_phi,count\n";
  for (const auto& [h, c] : curves) {
    for (std::size_t k = 0; k < c.mean_abs_phi.size(); ++k) {
      os << node_label(node_ids, h) << ',' << k << ',' << format_double(c.mean_abs_phi[k]) << ','
         << c.counts[k] << '\n';
    }
    if (c.unreachable_count > 0) {
      os << node_label(node_ids, h) << ",unreachable," << format_double(c.unreachable_mean_abs_phi)
         << ',' << c.unreachable_count << '\n';
    }
  }
  return os.str();
}

/// Mean hop curve across several single-node attacks (bucket-wise mean over
/// the attacks that reach that hop).
inline std::vector<double> mean_hop_curve(const std::vector<LabeledHopCurve>& curves) {
  std::vector<double> sum;
  std::vector<std::size_t> n;
  for (const auto& lc : curves) {
    const auto& m = lc.curve.mean_abs_phi;
    if (m.size() > sum.size()) {
      sum.resize(m.size(), 0.0);
      n.resize(m.size(), 0);
    }
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (lc.curve.counts[k] == 0) continue;
      sum[k] += m[k];
      ++n[k];
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (n[k] > 0) sum[k] /= static_cast<double>(n[k]);
  }
  return sum;
}

/// node_id,score,cost,selected,cumulative_cost. Cumulative cost is the
/// running total at the moment the node was added; blank when unselected.
inline std::string selection_csv(const Selection& sel, const BudgetSpec& budget,
                                 const std::vector<std::string>& node_ids = {}) {
  const auto n = static_cast<std::size_t>(budget.costs.size());
  std::vector<double> cumulative(n, -1.0);
  double running = 0.0;
  for (NodeId i : sel.order) {
    running += budget.costs(static_cast<Eigen::Index>(i));
    cumulative[i] = running;
  }
  std::ostringstream os;
  os << "node_id,score,cost,selected,cumulative_cost\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double score = sel.scores.size() == budget.costs.size() ? sel.scores(ii) : 0.0;
    os << node_label(node_ids, i) << ',' << format_double(score) << ','
       << format_double(budget.costs(ii)) << ',' << (cumulative[i] >= 0.0 ? 1 : 0) << ','
       << (cumulative[i] >= 0.0 ? format_double(cumulative[i]) : std::string()) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Minimal SVG plots.

namespace detail {

inline std::string svg_num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

struct PlotFrame {
  double x0, x1, y0, y1;
  static constexpr double width = 480, height = 320, margin = 48;

  double px(double x) const {
    return margin + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (width - 2 * margin);
  }
  double py(double y) const {
    return height - margin - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (height - 2 * margin);
  }
};

inline void svg_open(std::ostream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << PlotFrame::width
     << "\" height=\"" << PlotFrame::height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << PlotFrame::width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << title << "</text>\n";
}

inline void svg_axes(std::ostream& os, const PlotFrame& f, const std::string& xlabel,
                     const std::string& ylabel) {
  const double m = PlotFrame::margin, w = PlotFrame::width, h = PlotFrame::height;
  os << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n"
     << "<text x=\"14\" y=\"" << h / 2 << "\" transform=\"rotate(-90 14 " << h / 2
     << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n"
     << "<text x=\"" << m - 4 << "\" y=\"" << h - m << "\" text-anchor=\"end\">" << svg_num(f.y0)
     << "</text>\n"
     << "<text x=\"" << m - 4 << "\" y=\"" << m + 4 << "\" text-anchor=\"end\">" << svg_num(f.y1)
     << "</text>\n"
     << "<text x=\"" << m << "\" y=\"" << h - m + 14 << "\" text-anchor=\"middle\">" << svg_num(f.x0)
     << "</text>\n"
     << "<text x=\"" << w - m << "\" y=\"" << h - m + 14 << "\" text-anchor=\"middle\">"
     << svg_num(f.x1) << "</text>\n";
}

}  // namespace detail

/// Polyline with markers; y axis starts at zero.
inline std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel) {
  if (xs.size() != ys.size()) throw ShapeError("line plot: x/y length mismatch");
  detail::PlotFrame f{0, 1, 0, 1};
  if (!xs.empty()) {
    f.x0 = *std::min_element(xs.begin(), xs.end());
    f.x1 = *std::max_element(xs.begin(), xs.end());
    f.y1 = std::max(1e-12, *std::max_element(ys.begin(), ys.end()));
  }
  std::ostringstream os;
  detail::svg_open(os, title);
  detail::svg_axes(os, f, xlabel, ylabel);
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t k = 0; k < xs.size(); ++k) {
    os << detail::svg_num(f.px(xs[k])) << ',' << detail::svg_num(f.py(ys[k])) << ' ';
  }
  os << "\"/>\n";
  for (std::size_t k = 0; k < xs.size(); ++k) {
    os << "<circle cx=\"" << detail::svg_num(f.px(xs[k])) << "\" cy=\""
       << detail::svg_num(f.py(ys[k])) << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Nodes at their positions, edges in grey, fill from white (0) to red (max).
inline std::string svg_node_map(const Graph& g, const Vector& values, const std::string& title) {
  if (!g.positions()) throw Error("node map needs node positions");
  const Matrix& pos = *g.positions();
  detail::PlotFrame f{pos.col(0).minCoeff(), pos.col(0).maxCoeff(), pos.col(1).minCoeff(),
                      pos.col(1).maxCoeff()};
  const double vmax = std::max(1e-12, values.cwiseMax(0.0).maxCoeff());
  std::ostringstream os;
  detail::svg_open(os, title);
  for (NodeId i = 0; i < g.size(); ++i) {
    for (NodeId j : g.neighbors(i)) {
      if (g.undirected() && j < i) continue;
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      os << "<line x1=\"" << detail::svg_num(f.px(pos(ii, 0))) << "\" y1=\""
         << detail::svg_num(f.py(pos(ii, 1))) << "\" x2=\"" << detail::svg_num(f.px(pos(jj, 0)))
         << "\" y2=\"" << detail::svg_num(f.py(pos(jj, 1))) << "\" stroke=\"#bbb\"/>\n";
    }
  }
  for (NodeId i = 0; i < g.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double t = std::clamp(values(ii) / vmax, 0.0, 1.0);
    const int gb = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    os << "<circle cx=\"" << detail::svg_num(f.px(pos(ii, 0))) << "\" cy=\""
       << detail::svg_num(f.py(pos(ii, 1))) << "\" r=\"5\" stroke=\"black\" fill=\"rgb(255,"
       << gb << ',' << gb << ")\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Files are staged in a hidden sibling directory and renamed into the
// destination on commit, so readers never see a half-written file.

class BundleWriter {
 public:
  explicit BundleWriter(std::filesystem::path destination)
      : destination_(std::filesystem::absolute(std::move(destination))) {
    const auto parent = destination_.parent_path();
    std::filesystem::create_directories(parent);
    std::random_device rd;
    const auto tag = std::to_string(rd()) + std::to_string(rd());
    staging_ = parent / ("." + destination_.filename().string() + ".tmp-" + tag);
    std::filesystem::create_directories(staging_);
  }

  BundleWriter(const BundleWriter&) = delete;
  BundleWriter& operator=(const BundleWriter&) = delete;

  ~BundleWriter() {
    if (!committed_) {
      std::error_code ec;
      std::filesystem::remove_all(staging_, ec);
    }
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream os(staging_ / name, std::ios::binary);
    os << content;
    if (!os) throw Error("failed writing " + (staging_ / name).string());
  }

  std::ostream& stream(const std::string& name) {
    streams_.emplace_back(staging_ / name, std::ios::binary);
    if (!streams_.back()) throw Error("failed opening " + (staging_ / name).string());
    return streams_.back();
  }

  const std::filesystem::path& staging() const noexcept { return staging_; }

  /// Moves every staged file into the destination, replacing same-named
  /// files; other files already there are left alone.
  const std::filesystem::path& commit() {
    for (auto& s : streams_) s.close();
    std::filesystem::create_directories(destination_);
    for (const auto& entry : std::filesystem::directory_iterator(staging_)) {
      std::filesystem::rename(entry.path(), destination_ / entry.path().filename());
    }
    std::filesystem::remove_all(staging_);
    committed_ = true;
    return destination_;
  }

 private:
  std::filesystem::path destination_;
  std::filesystem::path staging_;
  std::deque<std::ofstream> streams_;
  bool committed_ = false;
};

}  // namespace diffattack
