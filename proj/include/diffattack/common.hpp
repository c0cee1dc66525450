#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace diffattack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using NodeId = std::size_t;
using NodeSet = std::vector<NodeId>;  // sorted, unique

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derive an independent generator for one concern ("init", "drop", "spsa",
/// ...) from a master seed. Streams with different labels or indices never
/// share state, so changing how many draws one concern makes leaves the
/// others untouched.
inline Rng substream(std::uint64_t master_seed, std::string_view label,
                     std::uint64_t index = 0) {
  std::uint64_t s = detail::splitmix64(master_seed ^ detail::fnv1a(label));
  s = detail::splitmix64(s ^ detail::splitmix64(index));
  std::seed_seq seq{static_cast<std::uint32_t>(s),
                    static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

inline NodeSet normalize_node_set(NodeSet nodes) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace diffattack
