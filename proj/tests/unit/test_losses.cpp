#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nmer/error.hpp"
#include "nmer/losses.hpp"
#include "support/test_support.hpp"

namespace nmer {
namespace {

using testing::random_matrix;

// KL between univariate normals, written from the densities:
// log(s2/s1) + (s1^2 + (m1 - m2)^2) / (2 s2^2) - 1/2 with m2 = 0, s2 = 1.
double kl_oracle(double mu, double var) { return -0.5 * std::log(var) + (var + mu * mu) / 2.0 - 0.5; }

double ce_oracle(const Matrix& z, const std::vector<int>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double denom = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) denom += std::exp(z(i, c));
    total += -std::log(std::exp(z(i, y[static_cast<size_t>(i)])) / denom);
  }
  return total / static_cast<double>(z.rows());
}

TEST(Losses, KlIdentities) {
  EXPECT_EQ(kl_loss(Matrix::Zero(1, 1), Matrix::Zero(1, 1)), 0.0);
  EXPECT_NEAR(kl_loss(Matrix::Ones(1, 1), Matrix::Zero(1, 1)), 0.5, 1e-15);
  EXPECT_EQ(kl_loss(Matrix::Zero(7, 5), Matrix::Zero(7, 5)), 0.0);
}

TEST(Losses, KlMatchesDensityOracleAndIsNonNegative) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const Matrix mu = random_matrix(testing::random_int(rng, 1, 4), testing::random_int(rng, 1, 5), rng, 2.0);
    const Matrix lv = random_matrix(mu.rows(), mu.cols(), rng, 3.0);
    double expected = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) expected += kl_oracle(mu.data()[i], std::exp(lv.data()[i]));
    expected /= static_cast<double>(mu.size());
    const double got = kl_loss(mu, lv);
    EXPECT_NEAR(got, expected, 1e-10 * std::max(1.0, std::abs(expected)));
    EXPECT_GE(got, 0.0);
    EXPECT_EQ(got, kl_loss(ag::constant(mu), ag::constant(lv)).scalar());
  }
}

TEST(Losses, ClassificationIdentities) {
  const std::vector<int> labels = {0, 1, 2, 3};
  EXPECT_NEAR(cls_loss(Matrix::Zero(4, 4), labels), std::log(4.0), 1e-15);
  EXPECT_NEAR(cls_loss(Matrix::Constant(4, 4, 17.0), labels), std::log(4.0), 1e-15);
  Matrix confident = Matrix::Constant(1, 4, -1000.0);
  confident(0, 2) = 1000.0;
  EXPECT_EQ(cls_loss(confident, std::vector<int>{2}), 0.0);
  EXPECT_TRUE(std::isfinite(cls_loss(confident, std::vector<int>{1})));
}

TEST(Losses, ClassificationMatchesSoftmaxOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = testing::random_int(rng, 1, 8);
    const Matrix z = random_matrix(n, 4, rng, 3.0);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(testing::random_int(rng, 0, 3));
    EXPECT_NEAR(cls_loss(z, y), ce_oracle(z, y), 1e-12);
  }
}

TEST(Losses, BatchMeanIsMeanOfSingles) {
  Rng rng(3);
  const Matrix z = random_matrix(2, 4, rng);
  const std::vector<int> y = {3, 1};
  const double a = cls_loss(Matrix(z.row(0)), std::vector<int>{3});
  const double b = cls_loss(Matrix(z.row(1)), std::vector<int>{1});
  EXPECT_NEAR(cls_loss(z, y), (a + b) / 2.0, 1e-15);
  const Matrix p = random_matrix(2, 3, rng), t = random_matrix(2, 3, rng);
  EXPECT_NEAR(mse_loss(p, t), (mse_loss(Matrix(p.row(0)), Matrix(t.row(0))) + mse_loss(Matrix(p.row(1)), Matrix(t.row(1)))) / 2.0,
              1e-15);
}

TEST(Losses, PropertyPermutationInvariance) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = testing::random_int(rng, 2, 9);
    const Matrix z = random_matrix(n, 4, rng);
    const Matrix mu = random_matrix(n, 3, rng), lv = random_matrix(n, 3, rng);
    std::vector<int> y(static_cast<size_t>(n));
    for (auto& v : y) v = testing::random_int(rng, 0, 3);
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix zp(n, 4), mup(n, 3), lvp(n, 3);
    std::vector<int> yp(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int j = perm[static_cast<size_t>(i)];
      zp.row(i) = z.row(j);
      mup.row(i) = mu.row(j);
      lvp.row(i) = lv.row(j);
      yp[static_cast<size_t>(i)] = y[static_cast<size_t>(j)];
    }
    EXPECT_NEAR(cls_loss(z, y), cls_loss(zp, yp), 1e-12);
    EXPECT_NEAR(kl_loss(mu, lv), kl_loss(mup, lvp), 1e-12);
    EXPECT_NEAR(mse_loss(mu, lv), mse_loss(mup, lvp), 1e-12);
  }
}

TEST(Losses, TotalIsWeightedSum) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_real_distribution<double> u(0.0, 5.0);
    const double kl = u(rng), mse = u(rng), inv = u(rng), cls = u(rng);
    const auto b = total_loss(kl, mse, inv, cls);
    EXPECT_NEAR(b.gen, kl + mse, 1e-12);
    EXPECT_NEAR(b.total, b.gen + b.inv + b.cls, 1e-9);
    LossWeights w{u(rng), u(rng), u(rng), u(rng)};
    const auto bw = total_loss(kl, mse, inv, cls, w);
    EXPECT_NEAR(bw.total, w.gen * (w.kl * kl + mse) + w.inv * inv + w.cls * cls, 1e-9);
  }
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, 0), Error);
}

TEST(Losses, GenLossIsKlPlusReconstruction) {
  Rng rng(6);
  const Matrix c = random_matrix(3, 5, rng), target = random_matrix(3, 5, rng);
  const Matrix mu = random_matrix(3, 2, rng), lv = random_matrix(3, 2, rng);
  const double g = gen_loss(ag::constant(c), target, ag::constant(mu), ag::constant(lv), 0.25).scalar();
  EXPECT_NEAR(g, 0.25 * kl_loss(mu, lv) + (c - target).squaredNorm() / 15.0, 1e-14);
  EXPECT_NEAR(inv_loss(ag::constant(c), target).scalar(), mse_loss(c, target), 1e-15);
}

TEST(Losses, RejectsBadInputs) {
  EXPECT_THROW(cls_loss(Matrix::Zero(2, 4), std::vector<int>{0}), Error);
  EXPECT_THROW(cls_loss(Matrix::Zero(1, 4), std::vector<int>{4}), Error);
  EXPECT_THROW(mse_loss(Matrix::Zero(2, 3), Matrix::Zero(3, 2)), Error);
  EXPECT_THROW(kl_loss(Matrix::Zero(2, 3), Matrix::Zero(2, 2)), Error);
  Matrix bad = Matrix::Zero(1, 4);
  bad(0, 1) = INFINITY;
  EXPECT_THROW(cls_loss(bad, std::vector<int>{0}), Error);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = testing::random_int(rng, 1, 5);
    auto z = ag::parameter(random_matrix(n, 4, rng));
    auto mu = ag::parameter(random_matrix(n, 3, rng));
    auto lv = ag::parameter(random_matrix(n, 3, rng));
    auto c = ag::parameter(random_matrix(n, 6, rng));
    auto h = ag::parameter(random_matrix(n, 2, rng));
    const Matrix ct = random_matrix(n, 6, rng), ht = random_matrix(n, 2, rng);
    std::vector<int> y(static_cast<size_t>(n));
    for (auto& v : y) v = testing::random_int(rng, 0, 3);

    const auto cls = testing::gradient_check([&] { return cls_loss(z, y); }, {{"logits", z}});
    EXPECT_LT(cls.worst_error, 1e-6);
    const auto kl = testing::gradient_check([&] { return kl_loss(mu, lv); }, {{"mu", mu}, {"logvar", lv}});
    EXPECT_LT(kl.worst_error, 1e-6) << kl.worst_tensor;
    const auto gen = testing::gradient_check([&] { return gen_loss(c, ct, mu, lv, 0.7); }, {{"c", c}, {"mu", mu}, {"logvar", lv}});
    EXPECT_LT(gen.worst_error, 1e-6) << gen.worst_tensor;
    const auto inv = testing::gradient_check([&] { return inv_loss(h, ht); }, {{"h", h}});
    EXPECT_LT(inv.worst_error, 1e-6);
  }
}

}  // namespace
}  // namespace nmer
