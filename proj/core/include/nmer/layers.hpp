#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nmer/autograd.hpp"
#include "nmer/dataset.hpp"
#include "nmer/ops.hpp"
#include "nmer/rng.hpp"

namespace nmer {

/// Named, ordered collection of trainable tensors. Names are stable and
/// double as checkpoint keys.
class ParameterStore {
 public:
  ag::Var create(const std::string& name, Matrix init);
  ag::Var get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Training flag, dropout rate and the stream used for dropout masks.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  ag::Var maybe_dropout(const ag::Var& x) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  int in() const { return in_; }
  int out() const { return out_; }

 private:
  ag::Var weight_;  // in x out
  ag::Var bias_;    // 1 x out
  int in_ = 0;
  int out_ = 0;
};

/// Single-layer LSTM over a padded time-major sequence, followed by
/// max-pooling of the hidden states over each sample's true length.
class LstmEncoder {
 public:
  LstmEncoder() = default;
  LstmEncoder(ParameterStore& store, const std::string& name, int in, int hidden, Rng& rng);
  ag::Var forward_pooled(const PaddedModality& seq) const;
  int hidden() const { return hidden_; }

 private:
  ag::Var w_input_;   // in x 4H, gate order i, f, g, o
  ag::Var w_hidden_;  // H x 4H
  ag::Var bias_;      // 1 x 4H
  int in_ = 0;
  int hidden_ = 0;
};

enum class TextMerge { sum, concat_project };

/// 1-D convolution blocks (one per kernel size, ReLU, max-over-time over
/// valid windows) merged into a single fixed-width vector.
class TextCnnEncoder {
 public:
  TextCnnEncoder() = default;
  TextCnnEncoder(ParameterStore& store, const std::string& name, int in, int out, std::vector<int> kernels,
                 TextMerge merge, Rng& rng);
  ag::Var forward_pooled(const PaddedModality& seq) const;

 private:
  std::vector<int> kernels_;
  std::vector<Linear> blocks_;  // (k * in) -> out per kernel
  TextMerge merge_ = TextMerge::sum;
  Linear project_;              // concat_project only
  int in_ = 0;
  int out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int width);
  ag::Var operator()(const ag::Var& x) const;

 private:
  ag::Var gain_;
  ag::Var bias_;
};

/// Post-norm transformer encoder layer (self-attention + ReLU feed-forward).
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParameterStore& store, const std::string& name, int width, int heads, int ff_width,
                          Rng& rng);
  /// x: (batch * seq_len) x width.
  ag::Var operator()(const ag::Var& x, Eigen::Index seq_len, const ForwardContext& ctx) const;

 private:
  Linear qkv_;
  Linear out_proj_;
  Linear ff1_;
  Linear ff2_;
  LayerNorm norm1_;
  LayerNorm norm2_;
  int width_ = 0;
  int heads_ = 0;
};

}  // namespace nmer
