#pragma once

#include "diffattack/graph.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace diffattack {

// ---------------------------------------------------------------------------
// CSV primitives. Output is comma-separated, LF line endings, and doubles are
// written in shortest round-trip decimal form.

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error("failed to format double");
  return std::string(buf, end);
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& s, const std::string& context) {
  const std::string t = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw Error("cannot parse number '" + t + "' " + context);
  }
  return v;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    rows.push_back(split(line));
  }
  return rows;
}

inline Matrix read_numeric_csv(const std::string& path) {
  const auto rows = read_csv_rows(path);
  if (rows.empty()) throw Error(path + ": empty file");
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw Error(path + ": row " + std::to_string(r + 1) + " has " +
                  std::to_string(rows[r].size()) + " fields, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(
          rows[r][c], "at " + path + " row " + std::to_string(r + 1) + " col " + std::to_string(c + 1));
    }
  }
  return m;
}

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ',';
      os << format_double(m(r, c));
    }
    os << '\n';
  }
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  write_matrix_csv(os, m);
}

// ---------------------------------------------------------------------------
// Graph files.

inline Graph load_adjacency_csv(const std::string& path, bool undirected = true) {
  return Graph::from_adjacency(read_numeric_csv(path), undirected);
}

inline Matrix load_positions_csv(const std::string& path) {
  Matrix p = read_numeric_csv(path);
  if (p.cols() != 2) throw Error(path + ": positions need exactly two columns (lon,lat)");
  return p;
}

// ---------------------------------------------------------------------------
// Speed data: header of node ids, then one row per time step.

struct SpeedDataset {
  Matrix speeds;  // steps x N, km/h
  double interval_minutes = 5.0;
  std::vector<std::string> node_ids;
  std::size_t imputed = 0;
};

/// Missing or zero readings carry the previous step forward; leading gaps take
/// the first valid reading of that node. Negative speeds are rejected.
inline SpeedDataset load_speed_csv(const std::string& path) {
  const auto rows = read_csv_rows(path);
  if (rows.empty()) throw Error(path + ": empty file");
  SpeedDataset d;
  for (const auto& id : rows.front()) d.node_ids.push_back(trim(id));
  const std::size_t n = d.node_ids.size();
  const std::size_t steps = rows.size() - 1;
  if (steps == 0) throw Error(path + ": no data rows");
  d.speeds.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(n));
  std::vector<std::vector<bool>> missing(steps, std::vector<bool>(n, false));
  for (std::size_t r = 0; r < steps; ++r) {
    const auto& row = rows[r + 1];
    if (row.size() != n) {
      throw Error(path + ": row " + std::to_string(r + 2) + " has " + std::to_string(row.size()) +
                  " fields, expected " + std::to_string(n));
    }
    for (std::size_t c = 0; c < n; ++c) {
      const std::string cell = trim(row[c]);
      double v = 0.0;
      if (!cell.empty()) {
        v = parse_double(cell, "at " + path + " row " + std::to_string(r + 2) + " col " +
                                   std::to_string(c + 1));
        if (v < 0.0 || !std::isfinite(v)) {
          throw Error(path + ": invalid speed " + cell + " at row " + std::to_string(r + 2) +
                      " col " + std::to_string(c + 1));
        }
      }
      missing[r][c] = cell.empty() || v == 0.0;
      d.speeds(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    std::optional<double> last;
    for (std::size_t r = 0; r < steps; ++r) {
      if (!missing[r][c]) {
        last = d.speeds(static_cast<Eigen::Index>(r), ci);
        continue;
      }
      if (!last) {
        for (std::size_t k = r + 1; k < steps; ++k) {
          if (!missing[k][c]) {
            last = d.speeds(static_cast<Eigen::Index>(k), ci);
            break;
          }
        }
        if (!last) throw Error(path + ": node '" + d.node_ids[c] + "' has no valid readings");
      }
      d.speeds(static_cast<Eigen::Index>(r), ci) = *last;
      ++d.imputed;
    }
  }
  return d;
}

inline void write_speed_csv(std::ostream& os, const SpeedDataset& d) {
  for (std::size_t c = 0; c < d.node_ids.size(); ++c) {
    if (c) os << ',';
    os << d.node_ids[c];
  }
  os << '\n';
  write_matrix_csv(os, d.speeds);
}

inline void write_speed_csv(const std::string& path, const SpeedDataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  write_speed_csv(os, d);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark.

enum class GraphModel { random_geometric, grid, ring };

inline GraphModel parse_graph_model(std::string_view s) {
  if (s == "random_geometric" || s == "random-geometric") return GraphModel::random_geometric;
  if (s == "grid") return GraphModel::grid;
  if (s == "ring") return GraphModel::ring;
  throw Error("unknown graph model '" + std::string(s) + "'");
}

inline std::string_view to_string(GraphModel m) {
  switch (m) {
    case GraphModel::random_geometric: return "random_geometric";
    case GraphModel::grid: return "grid";
    case GraphModel::ring: return "ring";
  }
  return "?";
}

struct SyntheticSpec {
  std::size_t n_nodes = 60;
  GraphModel graph_model = GraphModel::random_geometric;
  double radius = 0.22;           // random-geometric connection radius (unit square)
  double mean_speed = 55.0;       // km/h
  double amplitude = 10.0;        // diurnal swing, km/h
  double noise_std = 3.0;         // km/h
  double noise_corr = 0.9;        // AR(1) coefficient of the noise
  std::size_t days = 5;
  double interval_minutes = 5.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Graph graph;
  SpeedDataset data;
};

namespace detail {

inline Graph synthetic_graph(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t n = spec.n_nodes;
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix pos(ni, 2);
  std::vector<std::pair<NodeId, NodeId>> edges;
  switch (spec.graph_model) {
    case GraphModel::random_geometric: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (Eigen::Index i = 0; i < ni; ++i) {
        pos(i, 0) = unit(rng);
        pos(i, 1) = unit(rng);
      }
      for (NodeId i = 0; i < n; ++i) {
        for (NodeId j = i + 1; j < n; ++j) {
          const double d = (pos.row(static_cast<Eigen::Index>(i)) - pos.row(static_cast<Eigen::Index>(j))).norm();
          if (d <= spec.radius) edges.emplace_back(i, j);
        }
      }
      break;
    }
    case GraphModel::grid: {
      const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
      for (NodeId i = 0; i < n; ++i) {
        const std::size_t r = i / side, c = i % side;
        pos(static_cast<Eigen::Index>(i), 0) = static_cast<double>(c);
        pos(static_cast<Eigen::Index>(i), 1) = static_cast<double>(r);
        if (c + 1 < side && i + 1 < n) edges.emplace_back(i, i + 1);
        if (i + side < n) edges.emplace_back(i, i + side);
      }
      break;
    }
    case GraphModel::ring: {
      for (NodeId i = 0; i < n; ++i) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        pos(static_cast<Eigen::Index>(i), 0) = std::cos(angle);
        pos(static_cast<Eigen::Index>(i), 1) = std::sin(angle);
        if (n > 1) edges.emplace_back(i, (i + 1) % n);
      }
      break;
    }
  }
  Graph g = build_graph(edges, n, true);
  g.set_positions(std::move(pos));
  return g;
}

}  // namespace detail

/// Diurnal sinusoid per node (random amplitude factor and phase) plus AR(1)
/// noise smoothed once over the normalized adjacency. Clamped at 1 km/h.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_nodes == 0) throw Error("synthetic graph needs at least one node");
  if (spec.days == 0 || !(spec.interval_minutes > 0.0)) throw Error("synthetic horizon must be positive");
  Rng graph_rng = substream(spec.seed, "data/graph");
  Rng series_rng = substream(spec.seed, "data/series");

  SyntheticData out;
  out.graph = detail::synthetic_graph(spec, graph_rng);
  const Matrix a_hat = normalize_with_self_loops(out.graph.adjacency());

  const std::size_t n = spec.n_nodes;
  const auto ni = static_cast<Eigen::Index>(n);
  const double steps_per_day = 24.0 * 60.0 / spec.interval_minutes;
  const auto steps = static_cast<Eigen::Index>(std::llround(steps_per_day * static_cast<double>(spec.days)));

  std::uniform_real_distribution<double> amp_factor(0.5, 1.5);
  std::uniform_real_distribution<double> phase(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector amp(ni), ph(ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    amp(i) = spec.amplitude * amp_factor(series_rng);
    ph(i) = phase(series_rng);
  }

  const double rho = spec.noise_corr;
  const double innovation = spec.noise_std * std::sqrt(std::max(0.0, 1.0 - rho * rho));
  Vector noise(ni);
  for (Eigen::Index i = 0; i < ni; ++i) noise(i) = spec.noise_std * gauss(series_rng);

  out.data.interval_minutes = spec.interval_minutes;
  out.data.speeds.resize(steps, ni);
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (t > 0) {
      for (Eigen::Index i = 0; i < ni; ++i) noise(i) = rho * noise(i) + innovation * gauss(series_rng);
    }
    const Vector smoothed = a_hat * noise;
    const double day_angle = 2.0 * std::numbers::pi * static_cast<double>(t) / steps_per_day;
    for (Eigen::Index i = 0; i < ni; ++i) {
      const double v = spec.mean_speed + amp(i) * std::sin(day_angle + ph(i)) + smoothed(i);
      out.data.speeds(t, i) = std::max(1.0, v);
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.data.node_ids.push_back("n" + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// Flat key=value configuration.

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys keep the
/// last value.
inline std::map<std::string, std::string> parse_key_values(std::istream& is,
                                                           const std::string& origin = "config") {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config " + path);
  return parse_key_values(is, path);
}

inline std::vector<double> parse_double_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& tok : split(s)) out.push_back(parse_double(tok, "in " + key));
  return out;
}

inline std::vector<std::size_t> parse_index_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  for (double v : parse_double_list(s, key)) {
    if (v < 0.0 || v != std::floor(v)) throw Error(key + ": expected non-negative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace diffattack
