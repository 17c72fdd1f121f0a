#include "nmer/layers.hpp"

#include <cmath>

#include "nmer/error.hpp"

namespace nmer {

ag::Var ParameterStore::create(const std::string& name, Matrix init) {
  if (contains(name)) throw Error(ErrorKind::invalid_argument, "duplicate parameter '" + name + "'");
  auto v = ag::parameter(std::move(init));
  entries_.emplace_back(name, v);
  return v;
}

ag::Var ParameterStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw Error(ErrorKind::invalid_argument, "unknown parameter '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return true;
  }
  return false;
}

size_t ParameterStore::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, v] : entries_) n += static_cast<size_t>(v.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

ag::Var ForwardContext::maybe_dropout(const ag::Var& x) const {
  if (!training || dropout <= 0.0) return x;
  if (rng == nullptr) throw Error(ErrorKind::invalid_argument, "training forward requires an rng");
  return ag::dropout(x, dropout, *rng);
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) : in_(in), out_(out) {
  weight_ = store.create(name + ".weight", uniform_init(in, out, in, rng));
  bias_ = store.create(name + ".bias", uniform_init(1, out, in, rng));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::add_row(ag::matmul(x, weight_), bias_); }

LstmEncoder::LstmEncoder(ParameterStore& store, const std::string& name, int in, int hidden, Rng& rng)
    : in_(in), hidden_(hidden) {
  w_input_ = store.create(name + ".w_input", uniform_init(in, 4 * hidden, hidden, rng));
  w_hidden_ = store.create(name + ".w_hidden", uniform_init(hidden, 4 * hidden, hidden, rng));
  bias_ = store.create(name + ".bias", uniform_init(1, 4 * hidden, hidden, rng));
}

ag::Var LstmEncoder::forward_pooled(const PaddedModality& seq) const {
  if (seq.dim != in_) throw Error(ErrorKind::shape_mismatch, "lstm: input width mismatch");
  const int batch = seq.batch();
  const int steps = seq.max_length;
  const int h = hidden_;
  // Input projections for all frames at once.
  ag::Var projected = ag::add_row(ag::matmul(ag::constant(seq.data), w_input_), bias_);
  ag::Var hidden = ag::constant(Matrix::Zero(batch, h));
  ag::Var cell = ag::constant(Matrix::Zero(batch, h));
  std::vector<ag::Var> outputs;
  outputs.reserve(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    ag::Var gates = ag::slice_rows(projected, static_cast<Eigen::Index>(t) * batch, batch);
    if (t > 0) gates = ag::add(gates, ag::matmul(hidden, w_hidden_));
    ag::Var i = ag::sigmoid(ag::slice_cols(gates, 0, h));
    ag::Var f = ag::sigmoid(ag::slice_cols(gates, h, h));
    ag::Var g = ag::tanh(ag::slice_cols(gates, 2 * h, h));
    ag::Var o = ag::sigmoid(ag::slice_cols(gates, 3 * h, h));
    cell = t > 0 ? ag::add(ag::mul(f, cell), ag::mul(i, g)) : ag::mul(i, g);
    hidden = ag::mul(o, ag::tanh(cell));
    outputs.push_back(hidden);
  }
  return ag::masked_max_over_steps(outputs, seq.lengths);
}

TextCnnEncoder::TextCnnEncoder(ParameterStore& store, const std::string& name, int in, int out,
                               std::vector<int> kernels, TextMerge merge, Rng& rng)
    : kernels_(std::move(kernels)), merge_(merge), in_(in), out_(out) {
  if (kernels_.empty()) throw Error(ErrorKind::invalid_argument, "textcnn: no kernel sizes");
  for (int k : kernels_) {
    if (k < 1) throw Error(ErrorKind::invalid_argument, "textcnn: kernel size must be positive");
    blocks_.emplace_back(store, name + ".conv" + std::to_string(k), k * in, out, rng);
  }
  if (merge_ == TextMerge::concat_project) {
    project_ = Linear(store, name + ".project", out * static_cast<int>(kernels_.size()), out, rng);
  }
}

ag::Var TextCnnEncoder::forward_pooled(const PaddedModality& seq) const {
  if (seq.dim != in_) throw Error(ErrorKind::shape_mismatch, "textcnn: input width mismatch");
  const int batch = seq.batch();
  std::vector<ag::Var> pooled;
  for (size_t kb = 0; kb < kernels_.size(); ++kb) {
    const int k = kernels_[kb];
    // Windows start at 0 .. max(1, len - k + 1) - 1; frames past the padded
    // extent read as zero, so a sequence shorter than k yields one window.
    std::vector<Eigen::Index> offsets{0};
    for (int b = 0; b < batch; ++b) offsets.push_back(offsets.back() + std::max(1, seq.lengths[b] - k + 1));
    Matrix windows = Matrix::Zero(offsets.back(), static_cast<Eigen::Index>(k) * in_);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index count = offsets[b + 1] - offsets[b];
      for (Eigen::Index s = 0; s < count; ++s) {
        for (int j = 0; j < k; ++j) {
          const Eigen::Index t = s + j;
          if (t >= seq.max_length) break;
          windows.block(offsets[b] + s, static_cast<Eigen::Index>(j) * in_, 1, in_) = seq.data.row(t * batch + b);
        }
      }
    }
    ag::Var conv = ag::relu(blocks_[kb](ag::constant(std::move(windows))));
    pooled.push_back(ag::segment_max(conv, offsets));
  }
  if (merge_ == TextMerge::sum) {
    ag::Var acc = pooled.front();
    for (size_t i = 1; i < pooled.size(); ++i) acc = ag::add(acc, pooled[i]);
    return acc;
  }
  return project_(ag::concat_cols(pooled));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int width) {
  gain_ = store.create(name + ".gain", Matrix::Ones(1, width));
  bias_ = store.create(name + ".bias", Matrix::Zero(1, width));
}

ag::Var LayerNorm::operator()(const ag::Var& x) const { return ag::layer_norm(x, gain_, bias_); }

TransformerEncoderLayer::TransformerEncoderLayer(ParameterStore& store, const std::string& name, int width,
                                                 int heads, int ff_width, Rng& rng)
    : width_(width), heads_(heads) {
  if (heads < 1 || width % heads != 0) throw Error(ErrorKind::invalid_argument, "transformer: width % heads != 0");
  qkv_ = Linear(store, name + ".qkv", width, 3 * width, rng);
  out_proj_ = Linear(store, name + ".out", width, width, rng);
  ff1_ = Linear(store, name + ".ff1", width, ff_width, rng);
  ff2_ = Linear(store, name + ".ff2", ff_width, width, rng);
  norm1_ = LayerNorm(store, name + ".norm1", width);
  norm2_ = LayerNorm(store, name + ".norm2", width);
}

ag::Var TransformerEncoderLayer::operator()(const ag::Var& x, Eigen::Index seq_len, const ForwardContext& ctx) const {
  ag::Var qkv = qkv_(x);
  ag::Var q = ag::slice_cols(qkv, 0, width_);
  ag::Var k = ag::slice_cols(qkv, width_, width_);
  ag::Var v = ag::slice_cols(qkv, 2 * width_, width_);
  ag::Var attended = out_proj_(ag::attention(q, k, v, seq_len, heads_));
  ag::Var y = norm1_(ag::add(x, ctx.maybe_dropout(attended)));
  ag::Var ff = ff2_(ag::relu(ff1_(y)));
  return norm2_(ag::add(y, ctx.maybe_dropout(ff)));
}

}  // namespace nmer
