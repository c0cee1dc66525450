#pragma once

#include "diffattack/common.hpp"
#include "diffattack/graph.hpp"

#include <cmath>
#include <concepts>
#include <numeric>
#include <utility>

namespace diffattack {

/// Anything the attack engine may query. Attacks see nothing but `predict`.
template <class M>
concept BlackBoxModel = requires(const M& m, const Matrix& x) {
  { m.predict(x) } -> std::convertible_to<Matrix>;
};

/// L-layer GCN: H^(l+1) = relu(Â H^(l) W^(l)), H^(0) = X, followed by an
/// affine per-node readout Y = H^(L) R + 1 b^T.
struct GcnModel {
  std::vector<Matrix> weights;
  Matrix readout;
  Vector readout_bias;

  std::size_t n_layers() const noexcept { return weights.size(); }
  std::size_t input_width() const {
    return static_cast<std::size_t>(weights.empty() ? readout.rows()
                                                    : weights.front().rows());
  }
  std::size_t output_width() const {
    return static_cast<std::size_t>(readout.cols());
  }

  void validate() const {
    Eigen::Index width = weights.empty() ? readout.rows() : weights.front().rows();
    for (const auto& w : weights) {
      if (w.rows() != width) throw ShapeError("GCN weight shapes do not chain");
      width = w.cols();
    }
    if (readout.rows() != width) throw ShapeError("readout width mismatch");
    if (readout_bias.size() != readout.cols()) {
      throw ShapeError("readout bias length mismatch");
    }
  }
};

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for every parameter.
inline GcnModel init_gcn(std::size_t input_width,
                         const std::vector<std::size_t>& hidden_dims,
                         std::size_t output_width, Rng& rng) {
  auto fill = [&rng](Eigen::Index rows, Eigen::Index cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    }
    return m;
  };
  GcnModel model;
  std::size_t width = input_width;
  for (std::size_t d : hidden_dims) {
    model.weights.push_back(fill(static_cast<Eigen::Index>(width),
                                 static_cast<Eigen::Index>(d), width));
    width = d;
  }
  model.readout = fill(static_cast<Eigen::Index>(width),
                       static_cast<Eigen::Index>(output_width), width);
  model.readout_bias =
      fill(static_cast<Eigen::Index>(output_width), 1, width).col(0);
  return model;
}

/// Activations kept for backpropagation. Batches are stored as vertical
/// stacks (B*N x d); in column-major order this is the same memory as the
/// N x (d*B) horizontal layout, so Â multiplies the whole batch in one GEMM.
struct ForwardCache {
  std::size_t batch = 1;
  std::vector<Matrix> mixed;   // Â H^(l)
  std::vector<Matrix> pre;     // Â H^(l) W^(l)
  Matrix last_hidden;          // H^(L)
};

namespace detail {

inline Matrix propagate(const Matrix& a_hat, const Matrix& stacked,
                        std::size_t batch) {
  const Eigen::Index n = a_hat.rows();
  const Eigen::Index cols = stacked.cols() * static_cast<Eigen::Index>(batch);
  Matrix out(stacked.rows(), stacked.cols());
  Eigen::Map<const Matrix> in_h(stacked.data(), n, cols);
  Eigen::Map<Matrix> out_h(out.data(), n, cols);
  out_h.noalias() = a_hat * in_h;
  return out;
}

inline Matrix propagate_transposed(const Matrix& a_hat, const Matrix& stacked,
                                   std::size_t batch) {
  const Eigen::Index n = a_hat.rows();
  const Eigen::Index cols = stacked.cols() * static_cast<Eigen::Index>(batch);
  Matrix out(stacked.rows(), stacked.cols());
  Eigen::Map<const Matrix> in_h(stacked.data(), n, cols);
  Eigen::Map<Matrix> out_h(out.data(), n, cols);
  out_h.noalias() = a_hat.transpose() * in_h;
  return out;
}

}  // namespace detail

/// Batched forward pass over `batch` windows stacked vertically.
inline Matrix forward_batch(const GcnModel& model, const Matrix& a_hat,
                            const Matrix& stacked_x, std::size_t batch,
                            ForwardCache* cache = nullptr) {
  const auto n = a_hat.rows();
  if (stacked_x.rows() != n * static_cast<Eigen::Index>(batch) ||
      static_cast<std::size_t>(stacked_x.cols()) != model.input_width()) {
    throw ShapeError("feature window shape " + std::to_string(stacked_x.rows()) +
                     "x" + std::to_string(stacked_x.cols()) +
                     " does not match graph/model");
  }
  if (cache != nullptr) {
    cache->batch = batch;
    cache->mixed.clear();
    cache->pre.clear();
  }
  Matrix h = stacked_x;
  for (const auto& w : model.weights) {
    Matrix mixed = detail::propagate(a_hat, h, batch);
    Matrix pre = mixed * w;
    h = pre.cwiseMax(0.0);
    if (cache != nullptr) {
      cache->mixed.push_back(std::move(mixed));
      cache->pre.push_back(std::move(pre));
    }
  }
  Matrix y = h * model.readout;
  y.rowwise() += model.readout_bias.transpose();
  if (cache != nullptr) cache->last_hidden = std::move(h);
  return y;
}

/// One window: X (N x S) -> Y (N x T).
inline Matrix forward(const GcnModel& model, const Matrix& a_hat,
                      const Matrix& x) {
  return forward_batch(model, a_hat, x, 1);
}

inline Matrix forward(const GcnModel& model, const NormalizedAdjacency& a_hat,
                      const Matrix& x) {
  return forward(model, a_hat.matrix, x);
}

/// Parameter gradients, same layout as GcnModel.
struct GcnGradient {
  std::vector<Matrix> weights;
  Matrix readout;
  Vector readout_bias;

  static GcnGradient zeros_like(const GcnModel& m) {
    GcnGradient g;
    for (const auto& w : m.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
    g.readout = Matrix::Zero(m.readout.rows(), m.readout.cols());
    g.readout_bias = Vector::Zero(m.readout_bias.size());
    return g;
  }
};

/// Accumulates dLoss/dParams given dLoss/dY for the cached forward pass.
inline void backward(const GcnModel& model, const Matrix& a_hat,
                     const ForwardCache& cache, const Matrix& grad_y,
                     GcnGradient& grad) {
  grad.readout.noalias() += cache.last_hidden.transpose() * grad_y;
  grad.readout_bias += grad_y.colwise().sum().transpose();
  Matrix grad_h = grad_y * model.readout.transpose();
  for (std::size_t l = model.n_layers(); l-- > 0;) {
    Matrix grad_pre =
        (cache.pre[l].array() > 0.0).select(grad_h, Matrix::Zero(grad_h.rows(), grad_h.cols()));
    grad.weights[l].noalias() += cache.mixed[l].transpose() * grad_pre;
    if (l > 0) {
      Matrix grad_mixed = grad_pre * model.weights[l].transpose();
      grad_h = detail::propagate_transposed(a_hat, grad_mixed, cache.batch);
    }
  }
}

/// Min-max scaling of speeds. A degenerate (constant) range falls back to
/// [0, max] so constant data still maps to a nonzero signal.
struct MinMaxScaler {
  double lo = 0.0;
  double hi = 1.0;

  static MinMaxScaler fit(const Matrix& data) {
    MinMaxScaler s{data.minCoeff(), data.maxCoeff()};
    if (!(s.hi - s.lo > 1e-9)) {
      s.lo = 0.0;
      s.hi = s.hi > 1e-9 ? s.hi : 1.0;
    }
    return s;
  }
  double range() const noexcept { return hi - lo; }
  Matrix scale(const Matrix& x) const {
    return ((x.array() - lo) / range()).matrix();
  }
  Matrix unscale(const Matrix& y) const {
    return (y.array() * range() + lo).matrix();
  }
};

/// A trained GCN bound to its graph and scaler, exposed as a black box over
/// raw speeds. `predict` is const and allocation-local, so it is safe to call
/// from several threads at once.
class GcnPredictor {
 public:
  GcnPredictor() = default;
  GcnPredictor(GcnModel model, MinMaxScaler scaler, Matrix a_hat,
               std::uint64_t graph_hash)
      : model_(std::move(model)),
        scaler_(scaler),
        a_hat_(std::move(a_hat)),
        graph_hash_(graph_hash) {
    model_.validate();
  }

  Matrix predict(const Matrix& x) const {
    return scaler_.unscale(forward(model_, a_hat_, scaler_.scale(x)));
  }

  const GcnModel& model() const noexcept { return model_; }
  GcnModel& model() noexcept { return model_; }
  const MinMaxScaler& scaler() const noexcept { return scaler_; }
  const Matrix& a_hat() const noexcept { return a_hat_; }
  std::uint64_t graph_hash() const noexcept { return graph_hash_; }
  std::size_t n_nodes() const { return static_cast<std::size_t>(a_hat_.rows()); }

 private:
  GcnModel model_;
  MinMaxScaler scaler_;
  Matrix a_hat_;
  std::uint64_t graph_hash_ = 0;
};

static_assert(BlackBoxModel<GcnPredictor>);

/// Sliding windows over a (time x node) speed matrix. Window t uses steps
/// [t, t+S) as features and [t+S, t+S+T) as target. Training windows end
/// before `split_step`; test windows start at or after it.
class WindowedDataset {
 public:
  WindowedDataset(Matrix speeds, std::size_t window, std::size_t horizon,
                  double train_fraction)
      : speeds_(std::move(speeds)), window_(window), horizon_(horizon) {
    if (window == 0 || horizon == 0) throw Error("window and horizon must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw Error("train_fraction must lie in (0, 1)");
    }
    const auto steps = static_cast<std::size_t>(speeds_.rows());
    split_ = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(steps)));
    const std::size_t span = window + horizon;
    for (std::size_t t = 0; t + span <= split_; ++t) train_.push_back(t);
    for (std::size_t t = split_; t + span <= steps; ++t) test_.push_back(t);
    if (train_.empty()) throw Error("not enough steps for a single training window");
  }

  std::size_t n_nodes() const { return static_cast<std::size_t>(speeds_.cols()); }
  std::size_t window() const noexcept { return window_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t split_step() const noexcept { return split_; }
  const Matrix& speeds() const noexcept { return speeds_; }
  const std::vector<std::size_t>& train_starts() const noexcept { return train_; }
  const std::vector<std::size_t>& test_starts() const noexcept { return test_; }

  /// N x S feature window starting at step t.
  Matrix features(std::size_t t) const {
    return speeds_.middleRows(static_cast<Eigen::Index>(t),
                              static_cast<Eigen::Index>(window_))
        .transpose();
  }
  /// N x T target following the window that starts at t.
  Matrix target(std::size_t t) const {
    return speeds_.middleRows(static_cast<Eigen::Index>(t + window_),
                              static_cast<Eigen::Index>(horizon_))
        .transpose();
  }
  Matrix train_speeds() const {
    return speeds_.topRows(static_cast<Eigen::Index>(split_));
  }

 private:
  Matrix speeds_;
  std::size_t window_;
  std::size_t horizon_;
  std::size_t split_ = 0;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> test_;
};

enum class DropMode { none, drop_out, drop_node, drop_edge };

inline std::string_view to_string(DropMode m) {
  switch (m) {
    case DropMode::none: return "none";
    case DropMode::drop_out: return "drop_out";
    case DropMode::drop_node: return "drop_node";
    case DropMode::drop_edge: return "drop_edge";
  }
  return "none";
}

inline DropMode parse_drop_mode(std::string_view s) {
  if (s == "none") return DropMode::none;
  if (s == "drop_out" || s == "dropout") return DropMode::drop_out;
  if (s == "drop_node" || s == "dropnode") return DropMode::drop_node;
  if (s == "drop_edge" || s == "dropedge") return DropMode::drop_edge;
  throw Error("unknown drop mode '" + std::string(s) + "'");
}

struct TrainingConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 300;
  DropMode drop_mode = DropMode::none;
  double drop_prob = 0.3;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(drop_prob > 0.0 && drop_prob < 1.0)) throw Error("drop_prob must lie in (0, 1)");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw Error("train_fraction must lie in (0, 1)");
    }
    if (batch_size == 0) throw Error("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  }
};

/// One epoch's worth of drop regularization.
struct DropSample {
  std::vector<double> row_scale;  // multiplier per node row of X
  std::vector<bool> loss_mask;    // nodes that contribute to the loss
  Matrix a_hat;
};

/// Draw the per-epoch drop pattern. drop_out zeroes feature rows (survivors
/// rescaled by 1/(1-p)); drop_node removes nodes from features and from the
/// normalized graph; drop_edge removes each edge before normalization.
/// A draw that would remove every node is redrawn.
inline DropSample sample_drop(DropMode mode, double prob, const Graph& g,
                              Rng& rng) {
  const std::size_t n = g.size();
  DropSample s{std::vector<double>(n, 1.0), std::vector<bool>(n, true), {}};
  if (mode == DropMode::none || prob <= 0.0) {
    s.a_hat = normalize_with_self_loops(g.adjacency());
    return s;
  }
  std::bernoulli_distribution drop(prob);
  auto draw_nodes = [&] {
    std::vector<bool> keep(n);
    for (;;) {
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        keep[i] = !drop(rng);
        any = any || keep[i];
      }
      if (any) return keep;
    }
  };
  switch (mode) {
    case DropMode::drop_out: {
      const auto keep = draw_nodes();
      for (std::size_t i = 0; i < n; ++i) s.row_scale[i] = keep[i] ? 1.0 / (1.0 - prob) : 0.0;
      s.a_hat = normalize_with_self_loops(g.adjacency());
      break;
    }
    case DropMode::drop_node: {
      const auto keep = draw_nodes();
      for (std::size_t i = 0; i < n; ++i) s.row_scale[i] = keep[i] ? 1.0 : 0.0;
      s.loss_mask = keep;
      s.a_hat = normalize_with_self_loops(g.adjacency(), &keep);
      break;
    }
    case DropMode::drop_edge: {
      Matrix a = g.adjacency();
      const auto ni = static_cast<Eigen::Index>(n);
      for (Eigen::Index i = 0; i < ni; ++i) {
        for (Eigen::Index j = g.undirected() ? i + 1 : 0; j < ni; ++j) {
          if (a(i, j) == 0.0 || !drop(rng)) continue;
          a(i, j) = 0.0;
          if (g.undirected()) a(j, i) = 0.0;
        }
      }
      s.a_hat = normalize_with_self_loops(a);
      break;
    }
    case DropMode::none: break;
  }
  return s;
}

/// Apply one drop draw to a single window: returns (dropped X, dropped Â).
inline std::pair<Matrix, Matrix> apply_drop(DropMode mode, double prob,
                                            const Matrix& x, const Graph& g,
                                            Rng& rng) {
  DropSample s = sample_drop(mode, prob, g, rng);
  Matrix out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) *= s.row_scale[static_cast<std::size_t>(i)];
  return {std::move(out), std::move(s.a_hat)};
}

/// 1 - ||Y - Ŷ||_F / ||Y||_F.
inline double accuracy(const Matrix& y_true, const Matrix& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
    throw ShapeError("accuracy: shape mismatch");
  }
  const double denom = y_true.norm();
  if (denom == 0.0) throw Error("accuracy undefined for an all-zero target");
  return 1.0 - (y_true - y_pred).norm() / denom;
}

inline double rmse(const Matrix& y_true, const Matrix& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
    throw ShapeError("rmse: shape mismatch");
  }
  if (y_true.size() == 0) return 0.0;
  return std::sqrt((y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size()));
}

struct TestMetrics {
  double accuracy = 0.0;
  double rmse = 0.0;
  std::size_t windows = 0;
};

template <BlackBoxModel Model>
TestMetrics evaluate_windows(const Model& model, const WindowedDataset& data,
                             const std::vector<std::size_t>& starts) {
  if (starts.empty()) return {};
  const auto n = static_cast<Eigen::Index>(data.n_nodes());
  const auto t = static_cast<Eigen::Index>(data.horizon());
  const auto w = static_cast<Eigen::Index>(starts.size());
  Matrix truth(n * w, t), pred(n * w, t);
  for (Eigen::Index k = 0; k < w; ++k) {
    const std::size_t s = starts[static_cast<std::size_t>(k)];
    truth.middleRows(k * n, n) = data.target(s);
    pred.middleRows(k * n, n) = model.predict(data.features(s));
  }
  return {accuracy(truth, pred), rmse(truth, pred), starts.size()};
}

struct TrainResult {
  GcnPredictor predictor;
  std::vector<double> loss_history;  // mean scaled-MSE per epoch
  TestMetrics test;
};

namespace detail {

struct AdamState {
  GcnGradient m, v;
  std::size_t step = 0;
};

inline void adam_update(GcnModel& model, const GcnGradient& g, AdamState& st,
                        double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  auto apply = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    apply(model.weights[l], g.weights[l], st.m.weights[l], st.v.weights[l]);
  }
  apply(model.readout, g.readout, st.m.readout, st.v.readout);
  apply(model.readout_bias, g.readout_bias, st.m.readout_bias, st.v.readout_bias);
}

}  // namespace detail

/// Adam on scaled-speed MSE with mini-batches and per-epoch drop
/// regularization. Zero epochs returns the initial weights unchanged.
inline TrainResult train(GcnModel model, const WindowedDataset& data,
                         const Graph& graph, const TrainingConfig& cfg) {
  cfg.validate();
  model.validate();
  if (graph.size() != data.n_nodes()) throw ShapeError("graph/dataset node count mismatch");
  if (model.input_width() != data.window() || model.output_width() != data.horizon()) {
    throw ShapeError("model shape does not match dataset window/horizon");
  }
  const MinMaxScaler scaler = MinMaxScaler::fit(data.train_speeds());
  const Matrix scaled = scaler.scale(data.speeds());
  const Matrix base_a_hat = normalize_with_self_loops(graph.adjacency());

  const auto n = static_cast<Eigen::Index>(data.n_nodes());
  const auto S = static_cast<Eigen::Index>(data.window());
  const auto T = static_cast<Eigen::Index>(data.horizon());

  Rng shuffle_rng = substream(cfg.seed, "train/shuffle");
  Rng drop_rng = substream(cfg.seed, "train/drop");
  detail::AdamState adam{GcnGradient::zeros_like(model), GcnGradient::zeros_like(model), 0};

  std::vector<std::size_t> order = data.train_starts();
  TrainResult result;
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const DropSample drop = sample_drop(cfg.drop_mode, cfg.drop_prob, graph, drop_rng);
    const double active = static_cast<double>(
        std::count(drop.loss_mask.begin(), drop.loss_mask.end(), true));

    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t batch = std::min(cfg.batch_size, order.size() - begin);
      const auto bi = static_cast<Eigen::Index>(batch);
      Matrix x(n * bi, S), y(n * bi, T);
      for (Eigen::Index b = 0; b < bi; ++b) {
        const auto t = static_cast<Eigen::Index>(order[begin + static_cast<std::size_t>(b)]);
        x.middleRows(b * n, n) = scaled.middleRows(t, S).transpose();
        y.middleRows(b * n, n) = scaled.middleRows(t + S, T).transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
          x.row(b * n + i) *= drop.row_scale[static_cast<std::size_t>(i)];
        }
      }
      const Matrix pred = forward_batch(model, drop.a_hat, x, batch, &cache);
      Matrix diff = pred - y;
      for (Eigen::Index b = 0; b < bi; ++b) {
        for (Eigen::Index i = 0; i < n; ++i) {
          if (!drop.loss_mask[static_cast<std::size_t>(i)]) diff.row(b * n + i).setZero();
        }
      }
      const double terms = active * static_cast<double>(batch * data.horizon());
      const double loss = diff.squaredNorm() / terms;
      if (!std::isfinite(loss)) {
        throw NonFiniteError("training loss became non-finite at epoch " +
                                 std::to_string(epoch),
                             adam.step);
      }
      epoch_loss += diff.squaredNorm();
      epoch_terms += static_cast<std::size_t>(terms);
      GcnGradient grad = GcnGradient::zeros_like(model);
      backward(model, drop.a_hat, cache, (2.0 / terms) * diff, grad);
      detail::adam_update(model, grad, adam, cfg.learning_rate);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(epoch_terms));
  }
  result.predictor = GcnPredictor(std::move(model), scaler, base_a_hat, graph.hash());
  result.test = evaluate_windows(result.predictor, data, data.test_starts());
  return result;
}

/// Fresh seed-pinned initialization followed by `train`.
inline TrainResult train_new(const WindowedDataset& data, const Graph& graph,
                             const TrainingConfig& cfg,
                             const std::vector<std::size_t>& hidden_dims = {16, 16}) {
  Rng init_rng = substream(cfg.seed, "train/init");
  GcnModel model = init_gcn(data.window(), hidden_dims, data.horizon(), init_rng);
  return train(std::move(model), data, graph, cfg);
}

}  // namespace diffattack
