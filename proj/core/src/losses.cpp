#include "nmer/losses.hpp"

#include <cmath>

#include "nmer/error.hpp"
#include "nmer/ops.hpp"

namespace nmer {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorKind::non_finite, std::string(what) + ": non-finite input");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::shape_mismatch, std::string(what) + ": shape mismatch");
}

Matrix one_by_one(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

ag::Var kl_loss(const ag::Var& mean, const ag::Var& logvar) {
  require_same_shape(mean.value(), logvar.value(), "kl_loss");
  require_finite(mean.value(), "kl_loss");
  require_finite(logvar.value(), "kl_loss");
  const double n = static_cast<double>(mean.value().size());
  const auto mu = mean.value().array();
  const auto lv = logvar.value().array();
  const double value = (-0.5 * (lv - lv.exp() - mu.square() + 1.0)).sum() / n;
  return ag::make_result(one_by_one(value), {mean, logvar}, [n](ag::Node& self) {
    const double g = self.grad(0, 0);
    auto& pm = *self.parents[0];
    auto& pl = *self.parents[1];
    if (pm.requires_grad) pm.accumulate(pm.value * (g / n));
    if (pl.requires_grad) pl.accumulate(((pl.value.array().exp() - 1.0) * (0.5 * g / n)).matrix());
  });
}

double kl_loss(const Matrix& mean, const Matrix& logvar) {
  return kl_loss(ag::constant(mean), ag::constant(logvar)).scalar();
}

ag::Var mse_loss(const ag::Var& prediction, const ag::Var& target) {
  require_same_shape(prediction.value(), target.value(), "mse_loss");
  require_finite(prediction.value(), "mse_loss");
  require_finite(target.value(), "mse_loss");
  if (prediction.value().size() == 0) throw Error(ErrorKind::invalid_argument, "mse_loss: empty input");
  const double n = static_cast<double>(prediction.value().size());
  Matrix diff = prediction.value() - target.value();
  const double value = diff.squaredNorm() / n;
  return ag::make_result(one_by_one(value), {prediction, target}, [diff = std::move(diff), n](ag::Node& self) {
    const double g = self.grad(0, 0);
    auto& pp = *self.parents[0];
    auto& pt = *self.parents[1];
    if (pp.requires_grad) pp.accumulate(diff * (2.0 * g / n));
    if (pt.requires_grad) pt.accumulate(diff * (-2.0 * g / n));
  });
}

double mse_loss(const Matrix& prediction, const Matrix& target) {
  return mse_loss(ag::constant(prediction), ag::constant(target)).scalar();
}

ag::Var gen_loss(const ag::Var& joint, const Matrix& joint_target, const ag::Var& mean, const ag::Var& logvar,
                 double kl_weight) {
  return ag::add(ag::scale(kl_loss(mean, logvar), kl_weight), mse_loss(joint, ag::constant(joint_target)));
}

ag::Var inv_loss(const ag::Var& invariant, const Matrix& teacher_invariant) {
  return mse_loss(invariant, ag::constant(teacher_invariant));
}

ag::Var cls_loss(const ag::Var& logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows() || z.rows() == 0) {
    throw Error(ErrorKind::shape_mismatch, "cls_loss: one label per logits row required");
  }
  require_finite(z, "cls_loss");
  const double n = static_cast<double>(z.rows());
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= z.cols()) throw Error(ErrorKind::invalid_argument, "cls_loss: label out of range");
    const double m = z.row(i).maxCoeff();
    const auto shifted = (z.row(i).array() - m);
    const double log_sum = std::log(shifted.exp().sum());
    total += log_sum - shifted(y);
    probs.row(i) = (shifted - log_sum).exp().matrix();
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return ag::make_result(one_by_one(total / n), {logits},
                         [probs = std::move(probs), ys = std::move(ys), n](ag::Node& self) {
                           Matrix g = probs;
                           for (size_t i = 0; i < ys.size(); ++i) g(static_cast<Eigen::Index>(i), ys[i]) -= 1.0;
                           self.parents[0]->accumulate(g * (self.grad(0, 0) / n));
                         });
}

double cls_loss(const Matrix& logits, std::span<const int> labels) {
  return cls_loss(ag::constant(logits), labels).scalar();
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  kl += o.kl;
  mse_gen += o.mse_gen;
  gen += o.gen;
  inv += o.inv;
  cls += o.cls;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  return {kl * s, mse_gen * s, gen * s, inv * s, cls * s, total * s};
}

LossBreakdown total_loss(double kl, double mse_gen, double inv, double cls, const LossWeights& w) {
  LossBreakdown b;
  b.kl = kl;
  b.mse_gen = mse_gen;
  b.gen = w.kl * kl + mse_gen;
  b.inv = inv;
  b.cls = cls;
  b.total = w.gen * b.gen + w.inv * b.inv + w.cls * b.cls;
  if (!std::isfinite(b.total)) throw Error(ErrorKind::non_finite, "total loss is not finite");
  return b;
}

}  // namespace nmer
