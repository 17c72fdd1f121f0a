#include "nmer/encoders.hpp"

#include "nmer/error.hpp"

namespace nmer {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, "model: " + msg); };
  for (int d : input_dims) {
    if (d < 1) fail("input dims must be positive");
  }
  if (encoder_width < 1 || specific_width < 1 || invariant_hidden < 1 || invariant_width < 1) {
    fail("encoder widths must be positive");
  }
  if (text_kernels.empty()) fail("text_kernels must not be empty");
  if (vae_tokens < 1 || vae_layers < 1 || vae_heads < 1 || vae_ff_width < 1 || latent_width < 1) {
    fail("vae sizes must be positive");
  }
  const int vae_input = joint_width() + invariant_width;
  if (vae_input % vae_tokens != 0) fail("h' + H' width must split evenly into vae_tokens");
  if ((vae_input / vae_tokens) % vae_heads != 0) fail("token width must be divisible by vae_heads");
  if (decoder_widths.size() != 3) fail("decoder_widths must list three layers");
  if (decoder_widths.back() != joint_width()) fail("decoder output width must equal 3 * specific_width");
  if (classifier_widths.size() != 3) fail("classifier_widths must list three layers");
  if (classifier_widths.back() != kNumClasses) fail("classifier must end in 4 logits");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(logvar_limit > 0.0)) fail("logvar_limit must be positive");
}

ModalityEncoders::ModalityEncoders(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                                   Rng& rng)
    : acoustic_(store, prefix + ".a.lstm", cfg.input_dims[0], cfg.encoder_width, rng),
      visual_(store, prefix + ".v.lstm", cfg.input_dims[1], cfg.encoder_width, rng),
      lexical_(store, prefix + ".l.textcnn", cfg.input_dims[2], cfg.encoder_width, cfg.text_kernels, cfg.text_merge,
               rng) {}

std::array<ag::Var, 3> ModalityEncoders::operator()(const PaddedBatch& batch, const ForwardContext& ctx) const {
  return {
      ctx.maybe_dropout(acoustic_.forward_pooled(batch.modality(Modality::acoustic))),
      ctx.maybe_dropout(visual_.forward_pooled(batch.modality(Modality::visual))),
      ctx.maybe_dropout(lexical_.forward_pooled(batch.modality(Modality::lexical))),
  };
}

SpecificityEncoder::SpecificityEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                                       Rng& rng) {
  const char* keys[3] = {"a", "v", "l"};
  for (int m = 0; m < 3; ++m) {
    projections_[m] = Linear(store, prefix + "." + keys[m], cfg.encoder_width, cfg.specific_width, rng);
  }
}

ag::Var SpecificityEncoder::operator()(const std::array<ag::Var, 3>& pooled) const {
  std::array<ag::Var, 3> parts;
  for (int m = 0; m < 3; ++m) parts[m] = ag::relu(projections_[m](pooled[m]));
  return ag::concat_cols(parts);
}

InvarianceEncoder::InvarianceEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                                     Rng& rng)
    : hidden_(store, prefix + ".hidden", 3 * cfg.encoder_width, cfg.invariant_hidden, rng),
      out_(store, prefix + ".out", cfg.invariant_hidden, cfg.invariant_width, rng) {}

ag::Var InvarianceEncoder::operator()(const std::array<ag::Var, 3>& pooled) const {
  return out_(ag::relu(hidden_(ag::concat_cols(pooled))));
}

FeatureBackbone::FeatureBackbone(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : modalities(store, "encoder", cfg, rng),
      specific(store, "specific", cfg, rng),
      invariant(store, "invariant", cfg, rng) {}

FeatureBackbone::Output FeatureBackbone::operator()(const PaddedBatch& batch, const ForwardContext& ctx) const {
  Output out;
  out.pooled = modalities(batch, ctx);
  out.specific = specific(out.pooled);
  out.invariant = invariant(out.pooled);
  return out;
}

}  // namespace nmer
