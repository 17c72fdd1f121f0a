#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "nmer/encoders.hpp"

namespace nmer {

struct LatentParams {
  ag::Var mean;     // B x latent_width
  ag::Var logvar;   // B x latent_width, sigma^2 = exp(logvar)
};

enum class Mode { train, eval };

/// (h', H') -> tokens -> transformer stack -> mean over tokens -> (mu, logvar).
class VaeEncoder {
 public:
  VaeEncoder() = default;
  VaeEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  LatentParams operator()(const ag::Var& specific, const ag::Var& invariant, const ForwardContext& ctx) const;

 private:
  std::vector<TransformerEncoderLayer> layers_;
  Linear mean_head_;
  Linear logvar_head_;
  int tokens_ = 0;
  int token_width_ = 0;
  double logvar_limit_ = 10.0;
};

/// z = mean + exp(logvar / 2) * eps with eps ~ N(0, I).
ag::Var reparameterize(const LatentParams& params, Rng& rng);
/// Same with caller-supplied eps (B x latent_width).
ag::Var reparameterize(const LatentParams& params, const Matrix& eps);

/// concat(z, H') -> three affine layers -> C. H' is the guidance signal.
class VaeDecoder {
 public:
  VaeDecoder() = default;
  VaeDecoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  ag::Var operator()(const ag::Var& z, const ag::Var& invariant) const;

 private:
  std::array<Linear, 3> layers_;
};

/// Three affine layers, ReLU + dropout between them, 4 logits out.
class Classifier {
 public:
  Classifier() = default;
  Classifier(ParameterStore& store, const std::string& prefix, int input_width, const ModelConfig& cfg, Rng& rng);
  ag::Var operator()(const ag::Var& x, const ForwardContext& ctx) const;
  int input_width() const { return layers_[0].in(); }

 private:
  std::array<Linear, 3> layers_;
};

enum class Variant { full, ablation };

const char* variant_tag(Variant v);  // "NMER" or "w/o VAE"

struct NmerOutput {
  ag::Var joint;        // C
  ag::Var specific;     // h'
  ag::Var invariant;    // H'
  std::optional<LatentParams> latent;
  ag::Var z;
  ag::Var logits;
};

/// The student network. The full variant runs the VAE; the ablation
/// variant feeds concat(h', H') straight to the classifier and owns no VAE
/// parameters.
class NmerModel {
 public:
  NmerModel(const ModelConfig& cfg, Variant variant, std::uint64_t init_seed);
  NmerModel(const NmerModel&) = delete;
  NmerModel& operator=(const NmerModel&) = delete;

  /// Full variant only. Train mode samples z and applies dropout using `rng`;
  /// eval mode uses z = mu and no dropout (rng may be null).
  NmerOutput forward(const PaddedBatch& batch, Mode mode, Rng* rng) const;
  /// Ablation variant only: logits from concat(h', H'), which is also
  /// reported as `joint`; `latent` and `z` stay empty.
  NmerOutput forward_ablation(const PaddedBatch& batch, Mode mode, Rng* rng) const;
  /// Dispatches on the variant; returns logits.
  ag::Var logits(const PaddedBatch& batch, Mode mode, Rng* rng) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }

 private:
  ForwardContext context(Mode mode, Rng* rng) const;

  ModelConfig cfg_;
  Variant variant_;
  ParameterStore store_;
  FeatureBackbone backbone_;
  VaeEncoder vae_encoder_;
  VaeDecoder vae_decoder_;
  Classifier classifier_;
};

}  // namespace nmer
