#pragma once

#include <array>
#include <string>
#include <vector>

#include "nmer/dataset.hpp"
#include "nmer/layers.hpp"

namespace nmer {

/// Every width, head and layer count of the network. Defaults are the
/// reference architecture: 128-wide modality encoders, 384-wide specific
/// feature, 128-wide invariant feature, 5-layer transformer VAE encoder,
/// {64, 128, 384} decoder, {384, 128, 4} classifier.
struct ModelConfig {
  std::array<int, 3> input_dims = {130, 342, 1024};
  int encoder_width = 128;
  std::vector<int> text_kernels = {3, 4, 5};
  TextMerge text_merge = TextMerge::sum;
  int specific_width = 128;  // per modality; h' is 3x this
  int invariant_hidden = 256;
  int invariant_width = 128;
  int vae_tokens = 4;
  int vae_layers = 5;
  int vae_heads = 4;
  int vae_ff_width = 256;
  int latent_width = 64;
  std::vector<int> decoder_widths = {64, 128, 384};
  std::vector<int> classifier_widths = {384, 128, 4};
  double dropout = 0.1;
  double logvar_limit = 10.0;

  int joint_width() const { return 3 * specific_width; }
  /// Throws config errors for inconsistent widths.
  void validate() const;
};

/// Per-modality utterance encoders: LSTM (acoustic, visual) and TextCNN
/// (lexical), each producing an encoder_width vector per sample.
class ModalityEncoders {
 public:
  ModalityEncoders() = default;
  ModalityEncoders(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  /// (B x encoder_width) x 3 in order (a, v, l). Dropout applies in training.
  std::array<ag::Var, 3> operator()(const PaddedBatch& batch, const ForwardContext& ctx) const;

 private:
  LstmEncoder acoustic_;
  LstmEncoder visual_;
  TextCnnEncoder lexical_;
};

/// h': per-modality affine + ReLU, concatenated in (a, v, l) order.
class SpecificityEncoder {
 public:
  SpecificityEncoder() = default;
  SpecificityEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  ag::Var operator()(const std::array<ag::Var, 3>& pooled) const;

 private:
  std::array<Linear, 3> projections_;
};

/// H': concatenation of the pooled triple through a two-layer map.
class InvarianceEncoder {
 public:
  InvarianceEncoder() = default;
  InvarianceEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  ag::Var operator()(const std::array<ag::Var, 3>& pooled) const;

 private:
  Linear hidden_;
  Linear out_;
};

/// Modality encoders plus the specificity/invariance heads; shared by the
/// teacher and the student.
struct FeatureBackbone {
  ModalityEncoders modalities;
  SpecificityEncoder specific;
  InvarianceEncoder invariant;

  FeatureBackbone() = default;
  FeatureBackbone(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

  struct Output {
    std::array<ag::Var, 3> pooled;
    ag::Var specific;   // h', B x 3*specific_width
    ag::Var invariant;  // H', B x invariant_width
  };
  Output operator()(const PaddedBatch& batch, const ForwardContext& ctx) const;
};

}  // namespace nmer
