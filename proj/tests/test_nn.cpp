#include "mompo/nn.hpp"

#include <gtest/gtest.h>

using namespace mompo;

namespace {

// Quadratic loss against a fixed random target.
struct Loss {
  Matrix target;
  std::pair<double, Matrix> operator()(const Matrix& out) const {
    const Matrix d = out - target;
    return {0.5 * d.squaredNorm(), d};
  }
};

double max_relative_error(nn::Net net, const Matrix& x, const Loss& loss) {
  const auto [value, g] = nn::grad(net, x, loss);
  (void)value;
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.parameter_size(); ++i) {
    const double keep = net.parameters()(i);
    net.parameters()(i) = keep + h;
    const double up = loss(net.forward(x)).first;
    net.parameters()(i) = keep - h;
    const double down = loss(net.forward(x)).first;
    net.parameters()(i) = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(g(i)), 1e-6});
    worst = std::max(worst, std::abs(numeric - g(i)) / denom);
  }
  return worst;
}

}  // namespace

TEST(Nn, ParameterCount) {
  EXPECT_EQ(nn::Net::parameter_count({3, 4, 2}, false), static_cast<std::size_t>(4 * 4 + 5 * 2));
  EXPECT_EQ(nn::Net::parameter_count({3, 4, 2}, true), static_cast<std::size_t>(4 * 4 + 5 * 2 + 8));
  EXPECT_THROW(nn::Net({3}), ConfigError);
  EXPECT_THROW(nn::Net({3, 2}, true), ConfigError);
}

class NnGradient : public ::testing::TestWithParam<bool> {};

TEST_P(NnGradient, MatchesCentralDifferences) {
  Rng rng(11);
  std::uniform_int_distribution<int> width(1, 6);
  for (int trial = 0; trial < 5; ++trial) {
    nn::Net net({width(rng), width(rng) + 1, width(rng), width(rng)}, GetParam());
    net.init_uniform(rng);
    Matrix x = Matrix::Random(net.input_dim(), 4);
    Loss loss{Matrix::Random(net.output_dim(), 4)};
    EXPECT_LT(max_relative_error(net, x, loss), 1e-4) << "trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(LayerNorm, NnGradient, ::testing::Values(false, true));

TEST(Nn, ForwardSingleMatchesBatch) {
  Rng rng(2);
  nn::Net net({2, 5, 3}, true);
  net.init_uniform(rng);
  const Matrix x = Matrix::Random(2, 3);
  const Matrix batch = net.forward(x);
  for (int j = 0; j < 3; ++j) EXPECT_LT((net.forward(Vector(x.col(j))) - batch.col(j)).norm(), 1e-12);
}

TEST(Nn, ScaleOutputLayerToZero) {
  Rng rng(2);
  nn::Net net({2, 5, 3});
  net.init_uniform(rng);
  net.scale_output_layer(0.0);
  EXPECT_LT(net.forward(Vector(Vector::Random(2))).norm(), 1e-15);
}

TEST(Nn, AdamFitsLinearTarget) {
  Rng rng(4);
  nn::Net net({1, 16, 1});
  net.init_uniform(rng);
  auto adam = nn::Adam::make(net.parameter_size(), 1e-2, 1e-8);
  Matrix x(1, 32);
  for (int j = 0; j < 32; ++j) x(0, j) = -1.0 + 2.0 * j / 31.0;
  Loss loss{(2.0 * x).array() + 0.5};
  double first = 0.0;
  double last = 0.0;
  for (int it = 0; it < 2000; ++it) {
    auto [value, g] = nn::grad(net, x, loss);
    if (it == 0) first = value;
    last = value;
    nn::adam_step(net.parameters(), g, adam);
  }
  EXPECT_LT(last, 1e-3 * first);
}

TEST(Nn, AdamRejectsNonFiniteGradient) {
  Vector p = Vector::Zero(2);
  auto adam = nn::Adam::make(2, 1e-3, 1e-8);
  Vector g{{1.0, std::numeric_limits<double>::infinity()}};
  EXPECT_THROW(nn::adam_step(p, g, adam), NumericalError);
}
