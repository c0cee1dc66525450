#pragma once

#include "diffattack/predictor.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace diffattack {

// Versioned text checkpoint. Doubles are written in hexadecimal floating
// point so save/load round-trips bit for bit.
//
//   diffattack-checkpoint 1
//   graph_hash <16 hex digits>
//   scaler <lo> <hi>
//   adjacency <N> <N> <values...>
//   layers <L>
//   weight <rows> <cols> <values...>      (L times, column-major)
//   readout <rows> <cols> <values...>
//   bias <T> 1 <values...>

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  if (ec != std::errc{}) throw Error("failed to format double");
  return std::string(buf, end);
}

inline double parse_hexfloat(const std::string& tok) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  bool neg = false;
  if (first != last && *first == '-') {
    neg = true;
    ++first;
  }
  auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::hex);
  if (ec != std::errc{} || ptr != last) throw Error("bad hex float '" + tok + "' in checkpoint");
  return neg ? -v : v;
}

inline void write_matrix(std::ostream& os, const char* tag, const Matrix& m) {
  os << tag << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index k = 0; k < m.size(); ++k) os << ' ' << hexfloat(m.data()[k]);
  os << '\n';
}

inline void expect_tag(std::istream& is, const std::string& tag) {
  std::string got;
  if (!(is >> got) || got != tag) {
    throw Error("checkpoint: expected '" + tag + "', found '" + got + "'");
  }
}

inline Matrix read_matrix(std::istream& is, const std::string& tag) {
  expect_tag(is, tag);
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0) throw Error("checkpoint: bad shape for " + tag);
  Matrix m(rows, cols);
  std::string tok;
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    if (!(is >> tok)) throw Error("checkpoint: truncated " + tag);
    m.data()[k] = parse_hexfloat(tok);
  }
  return m;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const GcnPredictor& p) {
  os << "diffattack-checkpoint " << kCheckpointVersion << '\n';
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(p.graph_hash()));
  os << "graph_hash " << hash << '\n';
  os << "scaler " << detail::hexfloat(p.scaler().lo) << ' '
     << detail::hexfloat(p.scaler().hi) << '\n';
  detail::write_matrix(os, "adjacency", p.a_hat());
  os << "layers " << p.model().n_layers() << '\n';
  for (const auto& w : p.model().weights) detail::write_matrix(os, "weight", w);
  detail::write_matrix(os, "readout", p.model().readout);
  detail::write_matrix(os, "bias", p.model().readout_bias);
}

inline GcnPredictor load_checkpoint(std::istream& is) {
  detail::expect_tag(is, "diffattack-checkpoint");
  int version = 0;
  if (!(is >> version) || version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  detail::expect_tag(is, "graph_hash");
  std::string hash_hex;
  is >> hash_hex;
  const std::uint64_t hash = std::stoull(hash_hex, nullptr, 16);
  detail::expect_tag(is, "scaler");
  std::string lo, hi;
  is >> lo >> hi;
  MinMaxScaler scaler{detail::parse_hexfloat(lo), detail::parse_hexfloat(hi)};
  Matrix a_hat = detail::read_matrix(is, "adjacency");
  detail::expect_tag(is, "layers");
  std::size_t layers = 0;
  is >> layers;
  GcnModel model;
  for (std::size_t l = 0; l < layers; ++l) model.weights.push_back(detail::read_matrix(is, "weight"));
  model.readout = detail::read_matrix(is, "readout");
  model.readout_bias = detail::read_matrix(is, "bias").col(0);
  return GcnPredictor(std::move(model), scaler, std::move(a_hat), hash);
}

inline void save_checkpoint(const std::string& path, const GcnPredictor& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path);
  save_checkpoint(os, p);
}

inline GcnPredictor load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path);
  return load_checkpoint(is);
}

class GraphMismatchError : public Error {
 public:
  using Error::Error;
};

/// Refuse to pair a checkpoint with a graph it was not trained on.
inline void require_graph_match(const GcnPredictor& p, const Graph& g) {
  if (p.graph_hash() != g.hash()) {
    throw GraphMismatchError("checkpoint was trained on a different graph (hash mismatch)");
  }
}

}  // namespace diffattack
