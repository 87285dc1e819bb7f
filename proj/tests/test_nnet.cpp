#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "aanet/nnet.hpp"

using namespace aanet;
using namespace aanet::nn;

namespace {

Matrix random_inputs(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) x(r, c) = n(rng);
  }
  return x;
}

double batch_loss(const NetParams& p, const Batch& b) {
  const Matrix out = forward(p, b.x);
  double s = 0.0;
  for (std::size_t j = 0; j < b.y.size(); ++j) {
    const int a = b.action.empty() ? 0 : b.action[j];
    const double e = out(a, static_cast<Eigen::Index>(j)) - b.y[j];
    s += e * e;
  }
  return s / static_cast<double>(b.y.size());
}

}  // namespace

TEST(Init, DeterministicPerSeed) {
  const auto spec = NetSpec::dqn();
  EXPECT_EQ(init_params(spec, 3), init_params(spec, 3));
  EXPECT_FALSE(init_params(spec, 3) == init_params(spec, 4));
}

TEST(Init, ShapesAndScale) {
  const auto p = init_params(NetSpec::dqn(), 1);
  ASSERT_EQ(p.n_layers(), 3u);
  EXPECT_EQ(p.weights[0].rows(), 100);
  EXPECT_EQ(p.weights[0].cols(), 36);
  EXPECT_EQ(p.weights[2].rows(), 10);
  EXPECT_EQ(p.n_params(), 36u * 100 + 100 + 100 * 100 + 100 + 100 * 10 + 10);
  for (const auto& W : p.weights) {
    const double a = 1.0 / std::sqrt(static_cast<double>(W.cols()));
    const double mean = W.mean();
    const double var = (W.array() - mean).square().mean();
    EXPECT_NEAR(std::sqrt(var), a / std::sqrt(3.0), 0.1 * a / std::sqrt(3.0));
    EXPECT_LE(W.cwiseAbs().maxCoeff(), a);
  }
  for (const auto& b : p.biases) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ZeroNetGivesZero) {
  const auto p = zeros(NetSpec::dvn());
  Vector x = Vector::Constant(36, 3.0);
  EXPECT_EQ(forward(p, x)(0), 0.0);
}

TEST(Forward, HandComputedTwoByTwo) {
  auto p = zeros(NetSpec{2, {2}, 1});
  p.weights[0] << 1, -1, 2, 0;
  p.biases[0] << 0, -1;
  p.weights[1] << 1, 1;
  p.biases[1] << 0.5;
  Vector x(2);
  x << 1, 2;
  // Hidden pre-activations (-1, 1) -> ReLU (0, 1) -> output 1.5.
  EXPECT_DOUBLE_EQ(forward(p, x)(0), 1.5);
  p.biases[0] << -5, -5;
  EXPECT_DOUBLE_EQ(forward(p, x)(0), 0.5);  // both hidden units clamped
}

TEST(Forward, WrongInputShapeRejected) {
  const auto p = zeros(NetSpec::dvn());
  EXPECT_THROW(forward(p, Vector(Vector::Zero(35))), std::invalid_argument);
  EXPECT_THROW(validate(NetSpec{0, {4}, 1}), std::invalid_argument);
}

TEST(Forward, BatchMatchesSingle) {
  std::mt19937_64 rng(2);
  const auto p = init_params(NetSpec::dqn(), 9);
  const Matrix x = random_inputs(rng, 36, 7);
  const Matrix out = forward(p, x);
  for (int j = 0; j < 7; ++j) EXPECT_LT((out.col(j) - forward(p, Vector(x.col(j)))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  std::mt19937_64 rng(4);
  auto p = init_params(NetSpec::dvn(), 2);
  const auto before = p;
  Batch b{random_inputs(rng, 36, 4), {}, {1, 2, 3, 4}};
  train_step(p, b, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Sgd, OneParameterClosedForm) {
  auto p = zeros(NetSpec{1, {}, 1});
  p.weights[0] << 0.5;
  Batch b{Matrix::Constant(1, 1, 2.0), {}, {3.0}};
  // y_hat = 1, gradient 2 (y_hat - y) x = -8 for w and -4 for b.
  const auto g = gradient(p, b);
  EXPECT_DOUBLE_EQ(g.weights[0](0, 0), -8.0);
  EXPECT_DOUBLE_EQ(g.biases[0](0), -4.0);
  EXPECT_DOUBLE_EQ(g.loss, 4.0);
  EXPECT_DOUBLE_EQ(train_step(p, b, 0.1), 4.0);
  EXPECT_DOUBLE_EQ(p.weights[0](0, 0), 1.3);
  EXPECT_DOUBLE_EQ(p.biases[0](0), 0.4);
}

TEST(Sgd, BatchValidation) {
  auto p = zeros(NetSpec::dqn());
  Batch no_action{Matrix::Zero(36, 1), {}, {1.0}};
  EXPECT_THROW(gradient(p, no_action), std::invalid_argument);
  Batch bad_action{Matrix::Zero(36, 1), {10}, {1.0}};
  EXPECT_THROW(gradient(p, bad_action), std::invalid_argument);
  Batch empty{Matrix::Zero(36, 0), {}, {}};
  EXPECT_THROW(gradient(p, empty), std::invalid_argument);
  Batch nan{Matrix::Zero(36, 1), {0}, {std::nan("")}};
  EXPECT_THROW(gradient(p, nan), std::invalid_argument);
}

TEST(Sgd, OnlySelectedActionReceivesOutputGradient) {
  std::mt19937_64 rng(6);
  const auto p = init_params(NetSpec::dqn(), 6);
  Batch b{random_inputs(rng, 36, 1), {3}, {10.0}};
  const auto g = gradient(p, b);
  for (int a = 0; a < 10; ++a) {
    if (a == 3) continue;
    EXPECT_EQ(g.weights[2].row(a).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.biases[2](a), 0.0);
  }
  EXPECT_GT(g.weights[2].row(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sgd, GradientMatchesCentralDifferences) {
  const double h = 1e-6;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const int out : {10, 1}) {
      const NetSpec spec{36, {8, 8}, out};
      auto p = init_params(spec, seed);
      std::mt19937_64 rng(seed * 101);
      Batch b{random_inputs(rng, 36, 4), {}, {}};
      std::uniform_int_distribution<int> act(0, out - 1);
      std::normal_distribution<double> y(0.0, 2.0);
      for (int j = 0; j < 4; ++j) {
        if (out > 1) b.action.push_back(act(rng));
        b.y.push_back(y(rng));
      }
      const auto analytic = flatten(gradient(p, b));
      auto flat = flatten(p);
      for (std::size_t k = 0; k < flat.size(); ++k) {
        const double keep = flat[k];
        flat[k] = keep + h;
        unflatten(p, flat);
        const double up = batch_loss(p, b);
        flat[k] = keep - h;
        unflatten(p, flat);
        const double down = batch_loss(p, b);
        flat[k] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({1.0, std::abs(fd), std::abs(analytic[k])});
        EXPECT_LE(std::abs(fd - analytic[k]) / scale, 1e-5) << "seed " << seed << " out " << out << " param " << k;
      }
      unflatten(p, flat);
    }
  }
}

TEST(Sgd, LossDecreasesOnFixedBatch) {
  std::mt19937_64 rng(8);
  auto p = init_params(NetSpec::dvn(), 8);
  Batch b{random_inputs(rng, 36, 32), {}, {}};
  for (int j = 0; j < 32; ++j) b.y.push_back(b.x.col(j).head(3).sum());
  const double first = batch_loss(p, b);
  for (int step = 0; step < 300; ++step) train_step(p, b, 1e-2);
  EXPECT_LT(batch_loss(p, b), 0.5 * first);
}

TEST(Sgd, TrainingIsDeterministic) {
  std::mt19937_64 r1(9), r2(9);
  auto a = init_params(NetSpec::dqn(), 1), c = init_params(NetSpec::dqn(), 1);
  Batch b1{random_inputs(r1, 36, 16), std::vector<int>(16, 2), std::vector<double>(16, 7.0)};
  Batch b2{random_inputs(r2, 36, 16), std::vector<int>(16, 2), std::vector<double>(16, 7.0)};
  for (int s = 0; s < 20; ++s) {
    train_step(a, b1, 1e-3);
    train_step(c, b2, 1e-3);
  }
  EXPECT_EQ(a, c);
}

TEST(SoftUpdate, Endpoints) {
  const auto main = init_params(NetSpec::dvn(), 1);
  auto t = init_params(NetSpec::dvn(), 2);
  const auto t0 = t;
  soft_update(t, main, 0.0);
  EXPECT_EQ(t, t0);
  soft_update(t, main, 1.0);
  EXPECT_EQ(t, main);
  EXPECT_THROW(soft_update(t, main, 1.5), std::invalid_argument);
  EXPECT_THROW(soft_update(t, init_params(NetSpec::dqn(), 1), 0.5), std::invalid_argument);
}

TEST(SoftUpdate, ScalarExample) {
  auto main = zeros(NetSpec{1, {}, 1}), t = zeros(NetSpec{1, {}, 1});
  main.weights[0] << 2.0;
  t.weights[0] << 1.0;
  soft_update(t, main, 0.001);
  EXPECT_DOUBLE_EQ(t.weights[0](0, 0), 1.001);
}

TEST(SoftUpdate, ContractsDistance) {
  const auto main = init_params(NetSpec::dvn(), 3);
  auto t = init_params(NetSpec::dvn(), 4);
  auto dist = [&] {
    const auto a = flatten(main), b = flatten(t);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  };
  const double before = dist();
  soft_update(t, main, 0.1);
  EXPECT_NEAR(dist(), 0.9 * before, 1e-9 * before);
}

TEST(Params, StreamRoundTripIsExact) {
  const auto p = init_params(NetSpec::dqn(), 12);
  std::stringstream ss;
  write_params(ss, p);
  EXPECT_EQ(read_params(ss, NetSpec::dqn()), p);
}

TEST(Params, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "aanet_test_nnet";
  std::filesystem::create_directories(dir);
  const auto p = init_params(NetSpec::dvn(), 5);
  const auto path = (dir / "p.txt").string();
  save_params(p, path);
  EXPECT_EQ(load_params(path), p);
  EXPECT_THROW(load_params((dir / "missing.txt").string()), IoError);
  EXPECT_THROW(load_params(path, NetSpec::dqn()), ShapeError);
}

TEST(Params, CorruptedFilesRejected) {
  const auto p = init_params(NetSpec{3, {2}, 1}, 5);
  std::stringstream ss;
  write_params(ss, p);
  const std::string text = ss.str();
  {
    std::stringstream t(text.substr(0, text.size() / 2));
    EXPECT_THROW(read_params(t), SchemaError);
  }
  {
    std::stringstream t("garbage 1\n");
    EXPECT_THROW(read_params(t), SchemaError);
  }
  {
    std::string bumped = text;
    bumped.replace(bumped.find(" 1\n"), 3, " 9\n");
    std::stringstream t(bumped);
    EXPECT_THROW(read_params(t), VersionError);
  }
  {
    std::string bad = text;
    const auto pos = bad.find("end");
    bad.replace(pos, 3, "nope");
    std::stringstream t(bad);
    EXPECT_THROW(read_params(t), SchemaError);
  }
}
