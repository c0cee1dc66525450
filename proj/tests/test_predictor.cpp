#include "support.hpp"

#include <sstream>
#include <thread>

using namespace diffattack;
using namespace testing_support;

namespace {

GcnModel random_model(std::size_t s, std::vector<std::size_t> hidden, std::size_t t, Rng& rng) {
  return init_gcn(s, hidden, t, rng);
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZero) {
  Rng rng(1);
  GcnModel m = random_model(4, {3, 3}, 2, rng);
  for (auto& w : m.weights) w.setZero();
  m.readout.setZero();
  m.readout_bias.setZero();
  const Matrix a = normalized_adjacency(path_graph(5)).matrix;
  EXPECT_TRUE(forward(m, a, random_matrix(5, 4, rng)).isZero(0.0));
}

TEST(Forward, SingleNodeHandEvaluation) {
  // One node, one layer with identity weights and a summing readout:
  // y = Σ_k max(x_k, 0).
  GcnModel m;
  m.weights = {Matrix::Identity(3, 3)};
  m.readout = Matrix::Ones(3, 1);
  m.readout_bias = Vector::Zero(1);
  Matrix x(1, 3);
  x << 2.0, -1.0, 0.5;
  const Matrix y = forward(m, Matrix::Ones(1, 1), x);
  EXPECT_DOUBLE_EQ(y(0, 0), 2.5);
}

TEST(Forward, TwoNodePathMixes) {
  GcnModel m;
  m.weights = {Matrix::Identity(2, 2)};
  m.readout = Matrix::Ones(2, 1);
  m.readout_bias = Vector::Zero(1);
  Matrix x(2, 2);
  x << 1, 1, 0, 0;
  const Matrix y = forward(m, normalized_adjacency(path_graph(2)), x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 1.0);
}

TEST(Forward, ShapeMismatchThrows) {
  Rng rng(1);
  GcnModel m = random_model(4, {3}, 1, rng);
  const Matrix a = normalized_adjacency(path_graph(5)).matrix;
  EXPECT_THROW(forward(m, a, Matrix::Zero(5, 3)), ShapeError);
  EXPECT_THROW(forward(m, a, Matrix::Zero(4, 4)), ShapeError);
}

TEST(Forward, BatchMatchesSingleWindows) {
  Rng rng(8);
  Graph g = random_graph(6, 0.4, rng);
  const Matrix a = normalized_adjacency(g).matrix;
  GcnModel m = random_model(3, {4, 5}, 2, rng);
  const Matrix x1 = random_matrix(6, 3, rng), x2 = random_matrix(6, 3, rng);
  Matrix stacked(12, 3);
  stacked << x1, x2;
  const Matrix y = forward_batch(m, a, stacked, 2);
  EXPECT_TRUE(y.topRows(6).isApprox(forward(m, a, x1), 1e-14));
  EXPECT_TRUE(y.bottomRows(6).isApprox(forward(m, a, x2), 1e-14));
}

TEST(Backward, MatchesCentralDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 5);
    const std::size_t s = 1 + static_cast<std::size_t>(trial % 4);
    const std::size_t batch = 1 + static_cast<std::size_t>(trial % 2);
    Graph g = random_graph(n, 0.5, rng);
    const Matrix a = normalized_adjacency(g).matrix;
    std::vector<std::size_t> hidden = trial % 2 ? std::vector<std::size_t>{3} : std::vector<std::size_t>{3, 2};
    GcnModel m = random_model(s, hidden, 2, rng);
    const auto rows = static_cast<Eigen::Index>(n * batch);
    const Matrix x = random_matrix(rows, static_cast<Eigen::Index>(s), rng);
    const Matrix target = random_matrix(rows, 2, rng);

    auto loss = [&](const GcnModel& mm) {
      return 0.5 * (forward_batch(mm, a, x, batch) - target).squaredNorm();
    };
    ForwardCache cache;
    const Matrix y = forward_batch(m, a, x, batch, &cache);
    GcnGradient grad = GcnGradient::zeros_like(m);
    backward(m, a, cache, y - target, grad);

    constexpr double h = 1e-5;
    auto check = [&](Matrix& param, const Matrix& analytic) {
      for (Eigen::Index i = 0; i < param.rows(); ++i) {
        for (Eigen::Index j = 0; j < param.cols(); ++j) {
          const double keep = param(i, j);
          param(i, j) = keep + h;
          const double up = loss(m);
          param(i, j) = keep - h;
          const double down = loss(m);
          param(i, j) = keep;
          const double numeric = (up - down) / (2 * h);
          const double scale = std::max({std::abs(numeric), std::abs(analytic(i, j)), 1e-3});
          EXPECT_LE(std::abs(numeric - analytic(i, j)) / scale, 1e-4);
        }
      }
    };
    for (std::size_t l = 0; l < m.weights.size(); ++l) check(m.weights[l], grad.weights[l]);
    check(m.readout, grad.readout);
    Matrix bias = m.readout_bias;
    for (Eigen::Index i = 0; i < bias.size(); ++i) {
      const double keep = m.readout_bias(i);
      m.readout_bias(i) = keep + h;
      const double up = loss(m);
      m.readout_bias(i) = keep - h;
      const double down = loss(m);
      m.readout_bias(i) = keep;
      EXPECT_NEAR((up - down) / (2 * h), grad.readout_bias(i), 1e-4 * std::max(1.0, std::abs(grad.readout_bias(i))));
    }
  }
}

TEST(Locality, PerturbationStaysWithinLHops) {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(trial % 26);
    const std::size_t layers = 1 + static_cast<std::size_t>(trial % 3);
    Graph g = random_graph(n, 2.5 / static_cast<double>(n), rng);
    GcnModel m = random_model(4, std::vector<std::size_t>(layers, 6), 1, rng);
    const Matrix a = normalized_adjacency(g).matrix;
    const Matrix x = random_matrix(static_cast<Eigen::Index>(n), 4, rng, 0, 2);
    const NodeId h = static_cast<NodeId>(rng() % n);
    Matrix xp = x;
    xp.row(static_cast<Eigen::Index>(h)) += random_matrix(1, 4, rng, -5, 5);
    const Matrix dy = forward(m, a, xp) - forward(m, a, x);
    const auto dist = hop_distances(g, h);
    for (NodeId i = 0; i < n; ++i) {
      if (dist[i] == kUnreachable || dist[i] > layers) {
        EXPECT_LE(dy.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(Predictor, DeterministicAndThreadSafe) {
  const auto& t = trained();
  const Matrix x = t.data.features(t.data.test_starts().front());
  const Matrix y = t.result.predictor.predict(x);
  EXPECT_EQ(y, t.result.predictor.predict(x));
  std::vector<Matrix> outs(4);
  std::vector<std::thread> pool;
  for (int k = 0; k < 4; ++k) pool.emplace_back([&, k] { outs[static_cast<std::size_t>(k)] = t.result.predictor.predict(x); });
  for (auto& th : pool) th.join();
  for (const auto& o : outs) EXPECT_EQ(o, y);
}

TEST(Metrics, AccuracyExamples) {
  Matrix y(2, 1), p(2, 1);
  y << 3, 4;
  p << 3, 0;
  EXPECT_DOUBLE_EQ(accuracy(y, p), 0.2);
  EXPECT_DOUBLE_EQ(accuracy(y, y), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(y, Matrix::Zero(2, 1)), 0.0);
  EXPECT_THROW(accuracy(Matrix::Zero(2, 1), y), Error);
}

TEST(Metrics, RmseExamples) {
  Matrix y = Matrix::Zero(2, 1), p(2, 1);
  p << 3, 4;
  EXPECT_DOUBLE_EQ(rmse(y, p), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(rmse(p, p), 0.0);
  EXPECT_NEAR(rmse(p, (p.array() + 0.7).matrix()), 0.7, 1e-15);
}

TEST(WindowedDataset, SplitDoesNotOverlap) {
  Matrix speeds = Matrix::Ones(100, 3);
  WindowedDataset d(speeds, 12, 1, 0.8);
  EXPECT_EQ(d.split_step(), 80u);
  for (std::size_t t : d.train_starts()) EXPECT_LE(t + 13, 80u);
  for (std::size_t t : d.test_starts()) EXPECT_GE(t, 80u);
  EXPECT_EQ(d.features(5).rows(), 3);
  EXPECT_EQ(d.features(5).cols(), 12);
  EXPECT_THROW(WindowedDataset(speeds, 12, 1, 1.0), Error);
}

TEST(Drop, ZeroProbabilityAndEdgelessGraph) {
  Rng rng(1);
  Graph g = path_graph(4);
  const Matrix x = random_matrix(4, 3, rng);
  auto [x0, a0] = apply_drop(DropMode::drop_out, 0.0, x, g, rng);
  EXPECT_EQ(x0, x);
  EXPECT_EQ(a0, normalized_adjacency(g).matrix);
  Graph empty = build_graph({}, 4);
  auto [x1, a1] = apply_drop(DropMode::drop_edge, 0.3, x, empty, rng);
  EXPECT_EQ(x1, x);
  EXPECT_EQ(a1, Matrix(Matrix::Identity(4, 4)));
}

TEST(Drop, DropNodeCountIsBinomial) {
  Rng rng(99);
  Graph g = build_graph({}, 200);
  double total = 0;
  for (int k = 0; k < 1000; ++k) {
    const DropSample s = sample_drop(DropMode::drop_node, 0.3, g, rng);
    total += static_cast<double>(std::count(s.loss_mask.begin(), s.loss_mask.end(), false));
  }
  const double mean = total / 1000.0;
  const double sigma = std::sqrt(200 * 0.3 * 0.7 / 1000.0);
  EXPECT_NEAR(mean, 60.0, 3 * sigma);
}

TEST(Drop, DropNodeIsolatesDroppedNodes) {
  Rng rng(5);
  Graph g = random_graph(20, 0.3, rng);
  const DropSample s = sample_drop(DropMode::drop_node, 0.3, g, rng);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!s.loss_mask[i]) {
      EXPECT_TRUE(s.a_hat.row(ii).isZero(0.0));
      EXPECT_TRUE(s.a_hat.col(ii).isZero(0.0));
      EXPECT_EQ(s.row_scale[i], 0.0);
    } else {
      EXPECT_GT(s.a_hat(ii, ii), 0.0);
    }
  }
}

TEST(Train, ZeroEpochsLeavesWeightsUnchanged) {
  SyntheticSpec spec;
  spec.n_nodes = 8;
  spec.days = 1;
  SyntheticData sd = generate_synthetic(spec);
  WindowedDataset data(sd.data.speeds, 12, 1, 0.8);
  Rng rng(3);
  GcnModel m = init_gcn(12, {4}, 1, rng);
  TrainingConfig cfg;
  cfg.epochs = 0;
  TrainResult r = train(m, data, sd.graph, cfg);
  EXPECT_EQ(r.predictor.model().weights[0], m.weights[0]);
  EXPECT_EQ(r.predictor.model().readout, m.readout);
  EXPECT_TRUE(r.loss_history.empty());
}

TEST(Train, ConstantDatasetIsLearned) {
  SyntheticSpec spec;
  spec.n_nodes = 12;
  spec.amplitude = 0.0;
  spec.noise_std = 0.0;
  SyntheticData sd = generate_synthetic(spec);
  ASSERT_TRUE((sd.data.speeds.array() == spec.mean_speed).all());
  WindowedDataset data(sd.data.speeds, 12, 1, 0.8);
  TrainingConfig cfg;
  TrainResult r = train_new(data, sd.graph, cfg);
  EXPECT_LT(r.test.rmse, 0.5);
  const Matrix y = r.predictor.predict(data.features(data.test_starts().front()));
  EXPECT_LT((y.array() - spec.mean_speed).abs().maxCoeff(), 0.5);
  std::size_t non_increasing = 0;
  for (std::size_t e = 1; e < r.loss_history.size(); ++e) non_increasing += r.loss_history[e] <= r.loss_history[e - 1];
  EXPECT_GE(static_cast<double>(non_increasing), 0.9 * static_cast<double>(r.loss_history.size() - 1));
}

TEST(Train, SeedPinnedTrainingIsReproducible) {
  SyntheticSpec spec;
  spec.n_nodes = 10;
  spec.days = 1;
  SyntheticData sd = generate_synthetic(spec);
  WindowedDataset data(sd.data.speeds, 12, 1, 0.8);
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.drop_mode = DropMode::drop_edge;
  const TrainResult a = train_new(data, sd.graph, cfg), b = train_new(data, sd.graph, cfg);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.predictor.model().readout, b.predictor.model().readout);
}

TEST(Train, ShortRunReachesUsefulAccuracy) {
  EXPECT_GE(trained().result.test.accuracy, 0.85);
  EXPECT_TRUE(std::isfinite(trained().result.test.rmse));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto& p = trained().result.predictor;
  std::stringstream ss;
  save_checkpoint(ss, p);
  const GcnPredictor q = load_checkpoint(ss);
  EXPECT_EQ(q.graph_hash(), p.graph_hash());
  EXPECT_EQ(q.scaler().lo, p.scaler().lo);
  EXPECT_EQ(q.scaler().hi, p.scaler().hi);
  EXPECT_EQ(q.a_hat(), p.a_hat());
  ASSERT_EQ(q.model().weights.size(), p.model().weights.size());
  for (std::size_t l = 0; l < p.model().weights.size(); ++l) EXPECT_EQ(q.model().weights[l], p.model().weights[l]);
  EXPECT_EQ(q.model().readout, p.model().readout);
  EXPECT_EQ(q.model().readout_bias, p.model().readout_bias);
  std::stringstream again;
  save_checkpoint(again, q);
  EXPECT_EQ(again.str(), [&] {
    std::stringstream s;
    save_checkpoint(s, p);
    return s.str();
  }());
}

TEST(Checkpoint, GraphMismatchIsRefused) {
  const auto& t = trained();
  EXPECT_NO_THROW(require_graph_match(t.result.predictor, t.synthetic.graph));
  EXPECT_THROW(require_graph_match(t.result.predictor, path_graph(60)), GraphMismatchError);
}

TEST(Checkpoint, CorruptInputThrows) {
  std::stringstream ss("not a checkpoint");
  EXPECT_THROW(load_checkpoint(ss), Error);
}
