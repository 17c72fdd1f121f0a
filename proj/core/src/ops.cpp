#include "nmer/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nmer::ag {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

Node& parent(Node& self, size_t i) { return *self.parents[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (size_t i = 0; i < 2; ++i) {
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { parent(self, 0).accumulate(self.grad * s); });
}

Var add_row(const Var& a, const Var& bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row: bias must be 1 x cols");
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return make_result(std::move(out), {a, bias}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(self.grad.colwise().sum());
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_result(std::move(out), {a}, [](Node& self) {
    Matrix g = (self.value.array() > 0.0).select(self.grad, 0.0);
    parent(self, 0).accumulate(g);
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value.array();
    parent(self, 0).accumulate((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(const Var& a) {
  // 1 - 2 / (exp(2x) + 1)
  Matrix out = (1.0 - 2.0 / ((2.0 * a.value().array()).exp() + 1.0)).matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value.array();
    parent(self, 0).accumulate((self.grad.array() * (1.0 - y.square())).matrix());
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    parent(self, 0).accumulate(self.grad.cwiseProduct(self.value));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_result(std::move(out), {a}, [lo, hi](Node& self) {
    const auto& x = parent(self, 0).value.array();
    Matrix g = ((x > lo) && (x < hi)).select(self.grad, 0.0);
    parent(self, 0).accumulate(g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    offsets.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [offsets](Node& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.accumulate(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [start](Node& self) {
    parent(self, 0).accumulate_block(0, start, self.grad);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [start](Node& self) {
    parent(self, 0).accumulate_block(start, 0, self.grad);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.rows() * a.cols(), "reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows();
  const Eigen::Index c0 = a.cols();
  return make_result(std::move(out), {a}, [r0, c0](Node& self) {
    Matrix g = Eigen::Map<const Matrix>(self.grad.data(), r0, c0);
    parent(self, 0).accumulate(g);
  });
}

Var masked_max_over_steps(std::span<const Var> steps, std::span<const int> lengths) {
  require(!steps.empty(), "masked_max_over_steps: no steps");
  const Eigen::Index batch = steps.front().rows();
  const Eigen::Index width = steps.front().cols();
  require(static_cast<Eigen::Index>(lengths.size()) == batch, "masked_max_over_steps: lengths size");
  Matrix out(batch, width);
  // argmax step per (row, col)
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg(batch, width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int len = lengths[b];
    require(len >= 1 && len <= static_cast<int>(steps.size()), "masked_max_over_steps: bad length");
    for (Eigen::Index c = 0; c < width; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      int best_t = 0;
      for (int t = 0; t < len; ++t) {
        const double v = steps[t].value()(b, c);
        if (v > best) {
          best = v;
          best_t = t;
        }
      }
      out(b, c) = best;
      arg(b, c) = best_t;
    }
  }
  std::vector<Var> inputs(steps.begin(), steps.end());
  return make_result(std::move(out), std::move(inputs), [arg](Node& self) {
    for (Eigen::Index b = 0; b < arg.rows(); ++b) {
      for (Eigen::Index c = 0; c < arg.cols(); ++c) {
        Node& p = parent(self, static_cast<size_t>(arg(b, c)));
        if (!p.requires_grad) continue;
        p.ensure_grad();
        p.grad(b, c) += self.grad(b, c);
      }
    }
  });
}

Var segment_max(const Var& a, std::span<const Eigen::Index> offsets) {
  require(offsets.size() >= 2, "segment_max: need at least one segment");
  const Eigen::Index segments = static_cast<Eigen::Index>(offsets.size()) - 1;
  const Eigen::Index width = a.cols();
  Matrix out(segments, width);
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg(segments, width);
  for (Eigen::Index s = 0; s < segments; ++s) {
    const Eigen::Index lo = offsets[s];
    const Eigen::Index hi = offsets[s + 1];
    require(lo < hi && hi <= a.rows(), "segment_max: empty or out-of-range segment");
    for (Eigen::Index c = 0; c < width; ++c) {
      Eigen::Index best_r = lo;
      for (Eigen::Index r = lo + 1; r < hi; ++r) {
        if (a.value()(r, c) > a.value()(best_r, c)) best_r = r;
      }
      out(s, c) = a.value()(best_r, c);
      arg(s, c) = best_r;
    }
  }
  return make_result(std::move(out), {a}, [arg](Node& self) {
    Node& p = parent(self, 0);
    p.ensure_grad();
    for (Eigen::Index s = 0; s < arg.rows(); ++s) {
      for (Eigen::Index c = 0; c < arg.cols(); ++c) p.grad(arg(s, c), c) += self.grad(s, c);
    }
  });
}

Var group_mean_rows(const Var& a, Eigen::Index group) {
  require(group >= 1 && a.rows() % group == 0, "group_mean_rows: rows not divisible by group");
  const Eigen::Index n = a.rows() / group;
  Matrix out(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return make_result(std::move(out), {a}, [group](Node& self) {
    Node& p = parent(self, 0);
    Matrix g(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
      for (Eigen::Index k = 0; k < group; ++k) g.row(i * group + k) = self.grad.row(i) / static_cast<double>(group);
    }
    p.accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index d = x.cols();
  require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
          "layer_norm: gain/bias must be 1 x d");
  const Matrix& xv = x.value();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return make_result(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const double d = static_cast<double>(xhat.cols());
    if (pg.requires_grad) pg.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
    if (px.requires_grad) {
      Matrix gxhat = self.grad.array().rowwise() * pg.value.row(0).array();
      Eigen::VectorXd mean_g = gxhat.rowwise().mean();
      Eigen::VectorXd mean_gx = gxhat.cwiseProduct(xhat).rowwise().sum() / d;
      Matrix gx = (gxhat.colwise() - mean_g) - (xhat.array().colwise() * mean_gx.array()).matrix();
      gx = gx.array().colwise() * inv_std.array();
      px.accumulate(gx);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, Eigen::Index seq_len, int heads) {
  const Eigen::Index rows = q.rows();
  const Eigen::Index d = q.cols();
  require(k.rows() == rows && v.rows() == rows && k.cols() == d && v.cols() == d, "attention: shape mismatch");
  require(seq_len >= 1 && rows % seq_len == 0, "attention: rows not divisible by seq_len");
  require(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  const Eigen::Index batch = rows / seq_len;
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out(rows, d);
  // Softmax weights per (sample, head), each seq_len x seq_len.
  std::vector<Matrix> probs(static_cast<size_t>(batch * heads));
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = q.value().block(b * seq_len, h * dh, seq_len, dh);
      auto kb = k.value().block(b * seq_len, h * dh, seq_len, dh);
      auto vb = v.value().block(b * seq_len, h * dh, seq_len, dh);
      Matrix scores = (qb * kb.transpose()) * inv_sqrt;
      Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
      Matrix p = (scores.colwise() - row_max).array().exp().matrix();
      Eigen::VectorXd z = p.rowwise().sum();
      p = p.array().colwise() / z.array();
      out.block(b * seq_len, h * dh, seq_len, dh) = p * vb;
      probs[static_cast<size_t>(b * heads + h)] = std::move(p);
    }
  }
  return make_result(std::move(out), {q, k, v}, [probs, seq_len, heads, dh, inv_sqrt](Node& self) {
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    Node& pv = parent(self, 2);
    Matrix gq = Matrix::Zero(pq.value.rows(), pq.value.cols());
    Matrix gk = Matrix::Zero(gq.rows(), gq.cols());
    Matrix gv = Matrix::Zero(gq.rows(), gq.cols());
    const Eigen::Index batch = gq.rows() / seq_len;
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix& p = probs[static_cast<size_t>(b * heads + h)];
        auto go = self.grad.block(b * seq_len, h * dh, seq_len, dh);
        auto qb = pq.value.block(b * seq_len, h * dh, seq_len, dh);
        auto kb = pk.value.block(b * seq_len, h * dh, seq_len, dh);
        auto vb = pv.value.block(b * seq_len, h * dh, seq_len, dh);
        gv.block(b * seq_len, h * dh, seq_len, dh) = p.transpose() * go;
        Matrix gp = go * vb.transpose();
        Eigen::VectorXd dot = gp.cwiseProduct(p).rowwise().sum();
        Matrix gs = p.cwiseProduct(gp.colwise() - dot) * inv_sqrt;
        gq.block(b * seq_len, h * dh, seq_len, dh) = gs * kb;
        gk.block(b * seq_len, h * dh, seq_len, dh) = gs.transpose() * qb;
      }
    }
    if (pq.requires_grad) pq.accumulate(gq);
    if (pk.requires_grad) pk.accumulate(gk);
    if (pv.requires_grad) pv.accumulate(gv);
  });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  return mul(a, constant(std::move(mask)));
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace nmer::ag
