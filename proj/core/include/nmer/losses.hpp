#pragma once

#include <span>

#include "nmer/autograd.hpp"

namespace nmer {

/// KL(N(mu, sigma^2) || N(0, 1)) per dimension,
/// -1/2 (log sigma^2 - sigma^2 - mu^2 + 1), averaged over dimensions and batch.
ag::Var kl_loss(const ag::Var& mean, const ag::Var& logvar);
double kl_loss(const Matrix& mean, const Matrix& logvar);

/// Mean squared difference over all elements.
ag::Var mse_loss(const ag::Var& prediction, const ag::Var& target);
double mse_loss(const Matrix& prediction, const Matrix& target);

/// kl_weight * kl_loss + mse_loss(C, C_hat); C_hat is a detached target.
ag::Var gen_loss(const ag::Var& joint, const Matrix& joint_target, const ag::Var& mean, const ag::Var& logvar,
                 double kl_weight = 1.0);

/// MSE between the student invariant feature and the (detached) teacher one.
ag::Var inv_loss(const ag::Var& invariant, const Matrix& teacher_invariant);

/// Softmax cross-entropy averaged over the batch.
ag::Var cls_loss(const ag::Var& logits, std::span<const int> labels);
double cls_loss(const Matrix& logits, std::span<const int> labels);

struct LossWeights {
  double kl = 1.0;
  double gen = 1.0;
  double inv = 1.0;
  double cls = 1.0;
};

struct LossBreakdown {
  double kl = 0.0;
  double mse_gen = 0.0;
  double gen = 0.0;
  double inv = 0.0;
  double cls = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

/// gen = kl_w * kl + mse_gen; total = gen_w * gen + inv_w * inv + cls_w * cls.
LossBreakdown total_loss(double kl, double mse_gen, double inv, double cls, const LossWeights& w = {});

}  // namespace nmer
