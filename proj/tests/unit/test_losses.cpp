#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stemgan/error.hpp"
#include "stemgan/losses.hpp"

using namespace stemgan;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor filled(Shape s, double v) { return Tensor(std::move(s), v); }

void expect_grad(const std::function<double(const Tensor&)>& f, const Tensor& analytic, Tensor x,
                 double tol = 1e-4) {
  auto numeric = gradcheck::numeric_gradient([&] { return f(x); }, x.data(), x.size(), 1e-6);
  EXPECT_LE(gradcheck::relative_error(vec(analytic), numeric), tol);
}

}  // namespace

TEST(Bce, Examples) {
  EXPECT_LE(bce(1.0, 1.0), 1e-6);
  EXPECT_NEAR(bce(0.5, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(Tensor({2}, {0.5, 0.5}), Tensor({2}, {1.0, 0.0})), std::log(2.0), 1e-12);
  EXPECT_THROW(bce(Tensor({2}), Tensor({3})), ArgumentError);
}

TEST(Bce, ClampKeepsLossFinite) {
  EXPECT_TRUE(std::isfinite(bce(0.0, 1.0)));
  EXPECT_NEAR(bce(0.0, 1.0), -std::log(kBceEpsilon), 1e-9);
}

TEST(AdvLossD, Examples) {
  EXPECT_LE(adv_loss_d(filled({4, 4}, 1.0), filled({4, 4}, 0.0)), 1e-6);
  EXPECT_NEAR(adv_loss_d(filled({4, 4}, 0.5), filled({4, 4}, 0.5)), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(adv_loss_d(filled({1, 1}, 0.9), filled({1, 1}, 0.1)), -2 * std::log(0.9), 1e-12);
  EXPECT_NEAR(-2 * std::log(0.9), 0.2107, 1e-4);
  EXPECT_THROW(adv_loss_d(filled({4, 4}, 0.5), filled({3, 3}, 0.5)), ArgumentError);
  EXPECT_DOUBLE_EQ(discriminator_objective(filled({2, 2}, 0.3), filled({2, 2}, 0.6)),
                   adv_loss_d(filled({2, 2}, 0.3), filled({2, 2}, 0.6)));
}

TEST(AdvLossG, Examples) {
  EXPECT_LE(adv_loss_g(filled({4, 4}, 1.0)), 1e-6);
  EXPECT_NEAR(adv_loss_g(filled({4, 4}, 0.5)), std::log(2.0), 1e-12);
  EXPECT_NEAR(adv_loss_g(filled({4, 4}, 0.25)), std::log(4.0), 1e-12);
}

TEST(IntensityLoss, Examples) {
  std::mt19937_64 rng(1);
  Tensor t = gradcheck::random_tensor({3, 4, 4}, rng);
  EXPECT_EQ(intensity_loss(t, t), 0.0);
  Tensor p = t;
  for (double& v : p.values()) v += 0.1;
  EXPECT_NEAR(intensity_loss(p, t), 0.01, 1e-12);
  EXPECT_NEAR(intensity_loss(filled({3, 4, 4}, -1.0), filled({3, 4, 4}, 1.0)), 4.0, 1e-12);
}

TEST(GradientLoss, Examples) {
  std::mt19937_64 rng(2);
  Tensor t = gradcheck::random_tensor({3, 5, 5}, rng);
  EXPECT_EQ(gradient_loss(t, t), 0.0);
  EXPECT_EQ(gradient_loss(filled({3, 4, 4}, 0.2), filled({3, 4, 4}, -0.7)), 0.0);
  Tensor ramp({1, 3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) ramp[i * 3 + j] = 0.2 * static_cast<double>(j);
  EXPECT_NEAR(gradient_loss(ramp, filled({1, 3, 3}, 0.5)), 0.2, 1e-12);
  EXPECT_THROW(gradient_loss(filled({3, 1, 4}, 0), filled({3, 1, 4}, 0)), ArgumentError);
}

TEST(Losses, MatchScalarOracles) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = gradcheck::random_tensor({3, 4, 4}, rng, 0.0, 1.0);
    Tensor b = gradcheck::random_tensor({3, 4, 4}, rng, 0.0, 1.0);
    Tensor bits({3, 4, 4});
    std::bernoulli_distribution coin(0.5);
    for (double& v : bits.values()) v = coin(rng) ? 1.0 : 0.0;
    auto rel = [](double x, double y) { return std::abs(x - y) / std::max(std::abs(y), 1e-300); };
    EXPECT_LE(rel(bce(a, bits), oracle::bce(vec(a), vec(bits))), 1e-6);
    EXPECT_LE(rel(adv_loss_d(a, b), oracle::adv_d(vec(a), vec(b))), 1e-6);
    EXPECT_LE(rel(adv_loss_g(a), oracle::adv_g(vec(a))), 1e-6);
    EXPECT_LE(rel(intensity_loss(a, b), oracle::intensity(vec(a), vec(b))), 1e-6);
    EXPECT_LE(rel(gradient_loss(a, b), oracle::gradient(vec(a), vec(b), 3, 4, 4)), 1e-6);
  }
}

TEST(Losses, AnalyticGradients) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor p = gradcheck::random_tensor({3, 6, 6}, rng, 0.05, 0.95);
    Tensor q = gradcheck::random_tensor({3, 6, 6}, rng, 0.05, 0.95);
    expect_grad([&](const Tensor& x) { return bce_with_grad(x, 1.0).value; }, bce_with_grad(p, 1.0).grad, p);
    expect_grad([&](const Tensor& x) { return adv_loss_g(x); }, adv_loss_g_with_grad(p).grad, p);
    auto [gr, gf] = adv_loss_d_with_grad(p, q);
    expect_grad([&](const Tensor& x) { return adv_loss_d(x, q); }, gr.grad, p);
    expect_grad([&](const Tensor& x) { return adv_loss_d(p, x); }, gf.grad, q);
    expect_grad([&](const Tensor& x) { return intensity_loss(x, q); }, intensity_loss_with_grad(p, q).grad, p);
    expect_grad([&](const Tensor& x) { return gradient_loss(x, q); }, gradient_loss_with_grad(p, q).grad, p);
  }
}

TEST(Losses, SymmetryAndNonNegativity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = gradcheck::random_tensor({2, 3, 5, 5}, rng);
    Tensor b = gradcheck::random_tensor({2, 3, 5, 5}, rng);
    EXPECT_DOUBLE_EQ(intensity_loss(a, b), intensity_loss(b, a));
    EXPECT_DOUBLE_EQ(gradient_loss(a, b), gradient_loss(b, a));
    EXPECT_GE(gradient_loss(a, b), 0.0);
    EXPECT_GE(intensity_loss(a, b), 0.0);
  }
}

TEST(GeneratorObjective, Composition) {
  std::mt19937_64 rng(6);
  Tensor p = gradcheck::random_tensor({1, 3, 8, 8}, rng);
  Tensor t = gradcheck::random_tensor({1, 3, 8, 8}, rng);
  Tensor grid = gradcheck::random_tensor({1, 1, 4, 4}, rng, 0.1, 0.9);
  EXPECT_EQ(generator_objective(t, t, grid, {1, 0, 0}).total, 0.0);
  const double sum = intensity_loss(p, t) + gradient_loss(p, t) + adv_loss_g(grid);
  EXPECT_NEAR(generator_objective(p, t, grid, {1, 1, 1}).total, sum, 1e-12);
  EXPECT_NEAR(generator_objective(p, t, filled({1, 1, 4, 4}, 0.5), {0, 0, 1}).total, std::log(2.0), 1e-12);
  const double base = generator_objective(p, t, grid, {1, 1, 0.05}).total;
  EXPECT_NEAR(generator_objective(p, t, grid, {3, 3, 0.15}).total, 3 * base, 1e-12);
}

TEST(GeneratorObjective, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor p = gradcheck::random_tensor({1, 3, 6, 6}, rng);
  Tensor t = gradcheck::random_tensor({1, 3, 6, 6}, rng);
  Tensor grid = gradcheck::random_tensor({1, 1, 4, 4}, rng, 0.1, 0.9);
  const LossWeights w{1.0, 1.0, 0.05};
  GeneratorObjective o = generator_objective(p, t, grid, w);
  expect_grad([&](const Tensor& x) { return generator_objective(x, t, grid, w).total; }, o.grad_pred, p);
  expect_grad([&](const Tensor& x) { return generator_objective(p, t, x, w).total; }, o.grad_grid, grid);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  EXPECT_THROW((LossWeights{0, 0, 0}.validate()), ValidationError);
  EXPECT_THROW((LossWeights{-1, 1, 1}.validate()), ValidationError);
}
