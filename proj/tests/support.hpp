#pragma once

#include "diffattack/diffattack.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace testing_support {

using namespace diffattack;

inline Graph random_graph(std::size_t n, double p, Rng& rng, bool undirected = true) {
  std::bernoulli_distribution edge(p);
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = undirected ? i + 1 : 0; j < a.cols(); ++j) {
      if (i == j || !edge(rng)) continue;
      a(i, j) = 1.0;
      if (undirected) a(j, i) = 1.0;
    }
  }
  return Graph::from_adjacency(a, undirected);
}

inline Graph path_graph(std::size_t n) {
  std::vector<std::pair<NodeId, NodeId>> e;
  for (NodeId i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return build_graph(e, n);
}

inline Graph star_graph(std::size_t leaves) {
  std::vector<std::pair<NodeId, NodeId>> e;
  for (NodeId i = 1; i <= leaves; ++i) e.emplace_back(0, i);
  return build_graph(e, leaves + 1);
}

/// Sum of all entries of predict's output shifted: predict(X) = -rowsum(X).
struct NegRowSum {
  Matrix predict(const Matrix& x) const { return -x.rowwise().sum(); }
};

struct ConstantModel {
  Matrix value;
  Matrix predict(const Matrix&) const { return value; }
};

/// Counts predict calls; wraps another model.
template <class Inner>
struct CountingModel {
  const Inner* inner;
  mutable std::size_t calls = 0;
  Matrix predict(const Matrix& x) const {
    ++calls;
    return inner->predict(x);
  }
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("diffattack_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name, std::ios::binary) << content;
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Shared synthetic benchmark with a briefly trained predictor.
struct Trained {
  SyntheticData synthetic;
  WindowedDataset data;
  TrainResult result;
};

inline const Trained& trained(std::size_t epochs = 40) {
  static const Trained t = [epochs] {
    SyntheticSpec spec;
    spec.seed = 7;
    SyntheticData s = generate_synthetic(spec);
    WindowedDataset data(s.data.speeds, 12, 1, 0.8);
    TrainingConfig cfg;
    cfg.seed = 7;
    cfg.epochs = epochs;
    TrainResult r = train_new(data, s.graph, cfg);
    return Trained{std::move(s), std::move(data), std::move(r)};
  }();
  return t;
}

}  // namespace testing_support
