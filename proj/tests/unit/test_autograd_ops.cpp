#include <gtest/gtest.h>

#include <cmath>

#include "nmer/ops.hpp"
#include "support/test_support.hpp"

namespace nmer {
namespace {

using testing::gradient_check;
using testing::random_matrix;
using Params = std::vector<std::pair<std::string, ag::Var>>;

constexpr double kTol = 1e-6;

// Weighted sum against a fixed random matrix so every output element gets a
// distinct upstream gradient.
void expect_gradients(const std::function<ag::Var(const Params&)>& build, const Params& params, double tol = kTol) {
  Rng w_rng(99);
  const Matrix weights = [&] {
    ag::NoGradGuard g;
    const ag::Var y = build(params);
    return random_matrix(y.rows(), y.cols(), w_rng);
  }();
  const auto loss = [&] { return ag::sum(ag::mul(build(params), ag::constant(weights))); };
  const auto r = gradient_check(loss, params);
  EXPECT_LT(r.worst_error, tol) << "worst tensor " << r.worst_tensor;
}

Params make_params(std::initializer_list<std::pair<Eigen::Index, Eigen::Index>> shapes, std::uint64_t seed) {
  Rng rng(seed);
  Params p;
  int i = 0;
  for (auto [r, c] : shapes) p.emplace_back("p" + std::to_string(i++), ag::parameter(random_matrix(r, c, rng)));
  return p;
}

TEST(AutogradOps, ElementwiseAndMatmul) {
  const auto p = make_params({{3, 4}, {3, 4}, {4, 5}, {1, 4}}, 1);
  expect_gradients([](const Params& q) { return ag::matmul(q[0].second, q[2].second); }, p);
  expect_gradients([](const Params& q) { return ag::add(q[0].second, q[1].second); }, p);
  expect_gradients([](const Params& q) { return ag::sub(q[0].second, q[1].second); }, p);
  expect_gradients([](const Params& q) { return ag::mul(q[0].second, q[1].second); }, p);
  expect_gradients([](const Params& q) { return ag::scale(q[0].second, -2.5); }, p);
  expect_gradients([](const Params& q) { return ag::add_row(q[0].second, q[3].second); }, p);
}

TEST(AutogradOps, Nonlinearities) {
  const auto p = make_params({{4, 6}}, 2);
  expect_gradients([](const Params& q) { return ag::relu(q[0].second); }, p);
  expect_gradients([](const Params& q) { return ag::sigmoid(q[0].second); }, p);
  expect_gradients([](const Params& q) { return ag::tanh(q[0].second); }, p);
  expect_gradients([](const Params& q) { return ag::exp(q[0].second); }, p);
  expect_gradients([](const Params& q) { return ag::clamp(q[0].second, -0.7, 0.9); }, p);
}

TEST(AutogradOps, TanhMatchesStdTanh) {
  Rng rng(3);
  const Matrix x = random_matrix(10, 10, rng, 4.0);
  const Matrix y = ag::tanh(ag::constant(x)).value();
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], std::tanh(x.data()[i]), 1e-14);
  EXPECT_EQ(ag::tanh(ag::constant(Matrix::Constant(1, 1, 800.0))).scalar(), 1.0);
  EXPECT_EQ(ag::tanh(ag::constant(Matrix::Constant(1, 1, -800.0))).scalar(), -1.0);
}

TEST(AutogradOps, ShapeOps) {
  const auto p = make_params({{3, 2}, {3, 5}, {4, 6}}, 4);
  expect_gradients([](const Params& q) { return ag::concat_cols(std::vector<ag::Var>{q[0].second, q[1].second}); }, p);
  expect_gradients([](const Params& q) { return ag::slice_cols(q[2].second, 1, 3); }, p);
  expect_gradients([](const Params& q) { return ag::slice_rows(q[2].second, 2, 2); }, p);
  expect_gradients([](const Params& q) { return ag::reshape(q[2].second, 8, 3); }, p);
  expect_gradients([](const Params& q) { return ag::group_mean_rows(q[2].second, 2); }, p);
  expect_gradients([](const Params& q) { return ag::sum(q[2].second); }, p);
  expect_gradients([](const Params& q) { return ag::mean(q[2].second); }, p);
}

TEST(AutogradOps, ReshapeIsRowMajor) {
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Matrix expected(3, 2);
  expected << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(ag::reshape(ag::constant(x), 3, 2).value(), expected);
}

TEST(AutogradOps, MaxPooling) {
  const auto p = make_params({{3, 4}, {3, 4}, {3, 4}, {7, 3}}, 5);
  const std::vector<int> lengths = {3, 1, 2};
  expect_gradients(
      [&](const Params& q) {
        const std::vector<ag::Var> steps = {q[0].second, q[1].second, q[2].second};
        return ag::masked_max_over_steps(steps, lengths);
      },
      p);
  const std::vector<Eigen::Index> offsets = {0, 2, 3, 7};
  expect_gradients([&](const Params& q) { return ag::segment_max(q[3].second, offsets); }, p);

  ag::NoGradGuard g;
  const std::vector<ag::Var> steps = {p[0].second, p[1].second, p[2].second};
  const Matrix out = ag::masked_max_over_steps(steps, lengths).value();
  for (int b = 0; b < 3; ++b) {
    for (int c = 0; c < 4; ++c) {
      double best = -INFINITY;
      for (int t = 0; t < lengths[static_cast<size_t>(b)]; ++t) best = std::max(best, steps[static_cast<size_t>(t)].value()(b, c));
      EXPECT_EQ(out(b, c), best);
    }
  }
}

TEST(AutogradOps, LayerNormValueAndGradient) {
  const auto p = make_params({{5, 6}, {1, 6}, {1, 6}}, 6);
  expect_gradients([](const Params& q) { return ag::layer_norm(q[0].second, q[1].second, q[2].second); }, p);

  ag::NoGradGuard g;
  const Matrix y = ag::layer_norm(p[0].second, p[1].second, p[2].second).value();
  const Matrix& x = p[0].second.value();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double expected = (x(r, c) - mu) / std::sqrt(var + 1e-5) * p[1].second.value()(0, c) + p[2].second.value()(0, c);
      EXPECT_NEAR(y(r, c), expected, 1e-12);
    }
  }
}

// Naive per-sample, per-head softmax(q k^T / sqrt(d_h)) v.
Matrix attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v, Eigen::Index seq, int heads) {
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  Matrix out = Matrix::Zero(q.rows(), d);
  for (Eigen::Index b = 0; b < q.rows() / seq; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (Eigen::Index i = 0; i < seq; ++i) {
        std::vector<double> s(static_cast<size_t>(seq));
        double mx = -INFINITY;
        for (Eigen::Index j = 0; j < seq; ++j) {
          double dot = 0.0;
          for (Eigen::Index c = 0; c < dh; ++c) dot += q(b * seq + i, h * dh + c) * k(b * seq + j, h * dh + c);
          s[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (Eigen::Index j = 0; j < seq; ++j) {
          for (Eigen::Index c = 0; c < dh; ++c) out(b * seq + i, h * dh + c) += s[static_cast<size_t>(j)] / z * v(b * seq + j, h * dh + c);
        }
      }
    }
  }
  return out;
}

TEST(AutogradOps, AttentionValueAndGradient) {
  const auto p = make_params({{6, 4}, {6, 4}, {6, 4}}, 7);
  expect_gradients([](const Params& q) { return ag::attention(q[0].second, q[1].second, q[2].second, 3, 2); }, p);

  ag::NoGradGuard g;
  const Matrix out = ag::attention(p[0].second, p[1].second, p[2].second, 3, 2).value();
  const Matrix expected = attention_oracle(p[0].second.value(), p[1].second.value(), p[2].second.value(), 3, 2);
  EXPECT_LT((out - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AutogradOps, DropoutIsInvertedAndSeeded) {
  Rng rng(1);
  const Matrix x = Matrix::Ones(200, 200);
  Rng a(5), b(5);
  const Matrix ya = ag::dropout(ag::constant(x), 0.25, a).value();
  EXPECT_EQ(ya, ag::dropout(ag::constant(x), 0.25, b).value());
  const double kept = (ya.array() != 0.0).cast<double>().mean();
  EXPECT_NEAR(kept, 0.75, 0.01);
  for (Eigen::Index i = 0; i < ya.size(); ++i) {
    const double v = ya.data()[i];
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
  }
  EXPECT_EQ(ag::dropout(ag::constant(x), 0.0, rng).value(), x);
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  auto p = ag::parameter(Matrix::Constant(1, 1, 3.0));
  ag::backward(ag::sum(ag::add(ag::mul(p, p), p)));
  EXPECT_DOUBLE_EQ(p.grad()(0, 0), 7.0);
}

TEST(Autograd, ConstantsAndNoGradRecordNothing) {
  auto c = ag::constant(Matrix::Ones(2, 2));
  auto p = ag::parameter(Matrix::Ones(2, 2));
  ag::backward(ag::sum(ag::mul(c, p)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(p.has_grad());
  p.zero_grad();
  {
    ag::NoGradGuard g;
    EXPECT_FALSE(ag::grad_enabled());
    const ag::Var y = ag::sum(ag::mul(p, p));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(AutogradOps, PropertyRandomCompositionsMatchFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n = testing::random_int(rng, 1, 4);
    const Eigen::Index d = testing::random_int(rng, 2, 5);
    const Eigen::Index h = testing::random_int(rng, 1, 4);
    Params p = {{"x", ag::parameter(random_matrix(n, d, rng))},
                {"w", ag::parameter(random_matrix(d, h, rng))},
                {"b", ag::parameter(random_matrix(1, h, rng))}};
    expect_gradients(
        [](const Params& q) {
          const ag::Var pre = ag::add_row(ag::matmul(q[0].second, q[1].second), q[2].second);
          return ag::mul(ag::tanh(pre), ag::sigmoid(ag::scale(pre, 0.5)));
        },
        p);
  }
}

}  // namespace
}  // namespace nmer
