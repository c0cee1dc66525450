#pragma once

#include "diffattack/common.hpp"
#include "diffattack/predictor.hpp"

#include <cassert>
#include <cmath>
#include <functional>

namespace diffattack {

enum class ObjectiveMode { signed_speed_drop, mse };

inline std::string_view to_string(ObjectiveMode m) {
  return m == ObjectiveMode::mse ? "mse" : "signed_speed_drop";
}

inline ObjectiveMode parse_objective_mode(std::string_view s) {
  if (s == "signed_speed_drop") return ObjectiveMode::signed_speed_drop;
  if (s == "mse") return ObjectiveMode::mse;
  throw Error("unknown objective mode '" + std::string(s) + "'");
}

/// Stability term in the step-size sequence: eta(n) = scale * n + offset.
/// The default (scale 0.1, offset 0) is eta = n / 10.
struct EtaRule {
  double scale = 0.1;
  double offset = 0.0;
  double operator()(double n) const noexcept { return scale * n + offset; }
};

struct AttackConfig {
  double eps_minus = 1.0;
  double eps_plus = 0.5;
  double a = 0.328;
  double c = 0.1;
  double alpha = 0.202;
  double gamma = 0.101;
  EtaRule eta;
  std::size_t max_iter = 30'000;
  std::size_t probe_iter = 100;
  Vector node_weights;  // empty means every w_i = 1
  ObjectiveMode mode = ObjectiveMode::signed_speed_drop;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eps_minus > 0.0 && eps_plus > 0.0)) throw Error("eps_minus and eps_plus must be positive");
    if (!(a > 0.0 && c > 0.0)) throw Error("SPSA gains a and c must be positive");
    if (!(alpha > 0.0 && alpha < 1.0 && gamma > 0.0 && gamma < 1.0)) {
      throw Error("alpha and gamma must lie in (0, 1)");
    }
    if (max_iter < 1 || probe_iter < 1) throw Error("iteration counts must be >= 1");
  }

  double weight(std::size_t i) const {
    return node_weights.size() == 0 ? 1.0 : node_weights(static_cast<Eigen::Index>(i));
  }
};

/// Perturbation U with its support P. Rows outside P are exactly zero.
struct Perturbation {
  Matrix u;
  NodeSet support;
};

struct InfluenceResult {
  Vector phi;       // per-node influence
  double total = 0; // Σ w_i φ_i
  Matrix baseline;  // Y = f(X)
  Matrix perturbed; // Y' = f(X + U)
};

/// Per-node influence from baseline and perturbed predictions.
/// signed_speed_drop: φ_i = Σ_t (y_it - y'_it), positive when the predicted
/// speed falls. mse: φ_i = ||y'_i - y_i||².
inline InfluenceResult influence_from(Matrix baseline, Matrix perturbed,
                                      ObjectiveMode mode,
                                      const Vector& weights = {}) {
  if (baseline.rows() != perturbed.rows() || baseline.cols() != perturbed.cols()) {
    throw ShapeError("influence: prediction shapes differ");
  }
  InfluenceResult r;
  if (mode == ObjectiveMode::signed_speed_drop) {
    r.phi = (baseline - perturbed).rowwise().sum();
  } else {
    r.phi = (perturbed - baseline).rowwise().squaredNorm();
  }
  r.total = weights.size() == 0 ? r.phi.sum() : weights.dot(r.phi);
  r.baseline = std::move(baseline);
  r.perturbed = std::move(perturbed);
  return r;
}

template <BlackBoxModel Model>
InfluenceResult influence(const Model& model, const Matrix& x,
                          const Perturbation& u, ObjectiveMode mode,
                          const Vector& weights = {}) {
  return influence_from(model.predict(x), model.predict(x + u.u), mode, weights);
}

struct Gains {
  double a_n;
  double c_n;
};

/// a_n = a / (eta(n) + n)^alpha, c_n = c / n^gamma, n >= 1.
inline Gains gain_sequences(const AttackConfig& cfg, std::size_t n) {
  if (n < 1) throw Error("gain sequences are indexed from n = 1");
  const double nd = static_cast<double>(n);
  return {cfg.a / std::pow(cfg.eta(nd) + nd, cfg.alpha),
          cfg.c / std::pow(nd, cfg.gamma)};
}

/// N x S matrix with i.i.d. ±1 entries on rows in P and zeros elsewhere.
inline Matrix sample_masked_rademacher(const NodeSet& p, std::size_t n_nodes,
                                       std::size_t s, Rng& rng) {
  if (p.empty()) throw Error("attack set is empty");
  Matrix delta = Matrix::Zero(static_cast<Eigen::Index>(n_nodes),
                              static_cast<Eigen::Index>(s));
  std::bernoulli_distribution coin(0.5);
  for (NodeId i : p) {
    if (i >= n_nodes) throw Error("attack node out of range");
    for (Eigen::Index k = 0; k < delta.cols(); ++k) {
      delta(static_cast<Eigen::Index>(i), k) = coin(rng) ? 1.0 : -1.0;
    }
  }
  return delta;
}

/// Two-sided simultaneous-perturbation estimate
///   ĝ = [Φ(U + cΔ) - Φ(U - cΔ)] / (2c) · Δ   (elementwise).
/// Multiplying by Δ equals dividing on ±1 entries and leaves masked entries
/// at zero. Exactly two objective evaluations.
template <class Objective>
Matrix spsa_gradient(Objective&& phi_eval, const Matrix& u, double c_n,
                     const Matrix& delta, double* phi_plus = nullptr,
                     double* phi_minus = nullptr) {
  if (!(c_n > 0.0)) throw Error("perturbation size c_n must be positive");
  const double plus = phi_eval(Matrix(u + c_n * delta));
  const double minus = phi_eval(Matrix(u - c_n * delta));
  if (!std::isfinite(plus) || !std::isfinite(minus)) {
    throw NonFiniteError("objective returned a non-finite value", 0);
  }
  if (phi_plus != nullptr) *phi_plus = plus;
  if (phi_minus != nullptr) *phi_minus = minus;
  return ((plus - minus) / (2.0 * c_n)) * delta;
}

/// u_ik <- clamp(u_ik, -eps_minus x_ik, eps_plus x_ik) on P, zero elsewhere.
inline void clip_perturbation_inplace(Matrix& u, const Matrix& x,
                                      const AttackConfig& cfg, const NodeSet& p) {
  std::vector<bool> in_p(static_cast<std::size_t>(u.rows()), false);
  for (NodeId i : p) in_p.at(i) = true;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    if (!in_p[static_cast<std::size_t>(i)]) {
      u.row(i).setZero();
      continue;
    }
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
      const double hi = cfg.eps_plus * x(i, k);
      const double lo = -cfg.eps_minus * x(i, k);
      u(i, k) = std::max(lo, std::min(hi, u(i, k)));
    }
  }
}

inline Perturbation clip_perturbation(Matrix u, const Matrix& x,
                                      const AttackConfig& cfg, NodeSet p) {
  p = normalize_node_set(std::move(p));
  clip_perturbation_inplace(u, x, cfg, p);
  return {std::move(u), std::move(p)};
}

/// True when U is zero off P and inside the box on P.
inline bool satisfies_constraints(const Matrix& u, const Matrix& x,
                                  const AttackConfig& cfg, const NodeSet& p) {
  std::vector<bool> in_p(static_cast<std::size_t>(u.rows()), false);
  for (NodeId i : p) in_p.at(i) = true;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
      const double v = u(i, k);
      if (!in_p[static_cast<std::size_t>(i)]) {
        if (v != 0.0) return false;
      } else if (v < -cfg.eps_minus * x(i, k) || v > cfg.eps_plus * x(i, k)) {
        return false;
      }
    }
  }
  return true;
}

/// Per-iteration view handed to an optional observer.
struct IterationInfo {
  std::size_t n;
  Gains gains;
  double phi_plus;
  double phi_minus;
  const Matrix& u;  // U_{n+1}, after clipping
};

using AttackObserver = std::function<void(const IterationInfo&)>;

struct AttackResult {
  Matrix x_adv;
  Perturbation perturbation;
  InfluenceResult influence;
  std::size_t evaluations = 0;
};

/// Black-box SPSA ascent on Φ(U) = Σ w_i φ_i over perturbations supported on
/// P, starting from U_1 = 0. Model calls: one baseline, two per iteration,
/// one final.
template <BlackBoxModel Model>
AttackResult run_attack(const Model& model, const Matrix& x, NodeSet p,
                        const AttackConfig& cfg,
                        const AttackObserver& observer = {},
                        std::size_t stream_index = 0,
                        std::string_view stream_label = "spsa") {
  cfg.validate();
  p = normalize_node_set(std::move(p));
  const auto n_nodes = static_cast<std::size_t>(x.rows());
  if (!p.empty() && p.back() >= n_nodes) throw Error("attack node out of range");
  if (cfg.node_weights.size() != 0 &&
      static_cast<std::size_t>(cfg.node_weights.size()) != n_nodes) {
    throw ShapeError("node_weights length must equal N");
  }

  AttackResult out;
  const Matrix baseline = model.predict(x);
  out.evaluations = 1;
  Matrix u = Matrix::Zero(x.rows(), x.cols());
  if (p.empty()) {
    out.x_adv = x;
    out.perturbation = {u, p};
    out.influence = influence_from(baseline, baseline, cfg.mode, cfg.node_weights);
    return out;
  }

  auto objective = [&](const Matrix& candidate) {
    ++out.evaluations;
    const Matrix y = model.predict(x + candidate);
    if (cfg.mode == ObjectiveMode::signed_speed_drop) {
      const Vector phi = (baseline - y).rowwise().sum();
      return cfg.node_weights.size() == 0 ? phi.sum() : cfg.node_weights.dot(phi);
    }
    const Vector phi = (y - baseline).rowwise().squaredNorm();
    return cfg.node_weights.size() == 0 ? phi.sum() : cfg.node_weights.dot(phi);
  };

  Rng rng = substream(cfg.seed, stream_label, stream_index);
  for (std::size_t n = 1; n <= cfg.max_iter; ++n) {
    const Gains g = gain_sequences(cfg, n);
    const Matrix delta = sample_masked_rademacher(p, n_nodes, static_cast<std::size_t>(x.cols()), rng);
    double plus = 0.0, minus = 0.0;
    Matrix grad;
    try {
      grad = spsa_gradient(objective, u, g.c_n, delta, &plus, &minus);
    } catch (const NonFiniteError&) {
      throw NonFiniteError("SPSA objective became non-finite", n);
    }
    u.noalias() += g.a_n * grad;
    if (!u.allFinite()) throw NonFiniteError("SPSA update became non-finite", n);
    clip_perturbation_inplace(u, x, cfg, p);
    assert(satisfies_constraints(u, x, cfg, p));
    if (observer) observer(IterationInfo{n, g, plus, minus, u});
  }

  out.x_adv = x + u;
  out.influence = influence_from(baseline, model.predict(out.x_adv), cfg.mode, cfg.node_weights);
  ++out.evaluations;
  out.perturbation = {std::move(u), std::move(p)};
  return out;
}

}  // namespace diffattack
