#include "nmer/vae_joint.hpp"

#include "nmer/error.hpp"

namespace nmer {

namespace {

void check_finite(const ag::Var& v, const char* layer) {
  if (!v.value().allFinite()) throw Error(ErrorKind::non_finite, std::string("non-finite output from ") + layer);
}

}  // namespace

VaeEncoder::VaeEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
    : tokens_(cfg.vae_tokens),
      token_width_((cfg.joint_width() + cfg.invariant_width) / cfg.vae_tokens),
      logvar_limit_(cfg.logvar_limit) {
  for (int i = 0; i < cfg.vae_layers; ++i) {
    layers_.emplace_back(store, prefix + ".layer" + std::to_string(i), token_width_, cfg.vae_heads, cfg.vae_ff_width,
                         rng);
  }
  mean_head_ = Linear(store, prefix + ".mean", token_width_, cfg.latent_width, rng);
  logvar_head_ = Linear(store, prefix + ".logvar", token_width_, cfg.latent_width, rng);
}

LatentParams VaeEncoder::operator()(const ag::Var& specific, const ag::Var& invariant,
                                    const ForwardContext& ctx) const {
  const Eigen::Index batch = specific.rows();
  const std::array<ag::Var, 2> parts = {specific, invariant};
  ag::Var x = ag::reshape(ag::concat_cols(parts), batch * tokens_, token_width_);
  for (size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](x, tokens_, ctx);
    if (!x.value().allFinite()) {
      throw Error(ErrorKind::non_finite, "non-finite output from vae transformer layer " + std::to_string(i));
    }
  }
  ag::Var pooled = ag::group_mean_rows(x, tokens_);
  LatentParams p;
  p.mean = mean_head_(pooled);
  p.logvar = ag::clamp(logvar_head_(pooled), -logvar_limit_, logvar_limit_);
  check_finite(p.mean, "vae mean head");
  check_finite(p.logvar, "vae logvar head");
  return p;
}

ag::Var reparameterize(const LatentParams& params, const Matrix& eps) {
  if (eps.rows() != params.mean.rows() || eps.cols() != params.mean.cols()) {
    throw Error(ErrorKind::shape_mismatch, "reparameterize: eps shape mismatch");
  }
  ag::Var std_dev = ag::exp(ag::scale(params.logvar, 0.5));
  return ag::add(params.mean, ag::mul(std_dev, ag::constant(eps)));
}

ag::Var reparameterize(const LatentParams& params, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(params.mean.rows(), params.mean.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return reparameterize(params, eps);
}

VaeDecoder::VaeDecoder(ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  int in = cfg.latent_width + cfg.invariant_width;
  for (int i = 0; i < 3; ++i) {
    layers_[i] = Linear(store, prefix + ".fc" + std::to_string(i), in, cfg.decoder_widths[i], rng);
    in = cfg.decoder_widths[i];
  }
}

ag::Var VaeDecoder::operator()(const ag::Var& z, const ag::Var& invariant) const {
  const std::array<ag::Var, 2> parts = {z, invariant};
  ag::Var x = ag::relu(layers_[0](ag::concat_cols(parts)));
  x = ag::relu(layers_[1](x));
  return layers_[2](x);
}

Classifier::Classifier(ParameterStore& store, const std::string& prefix, int input_width, const ModelConfig& cfg,
                       Rng& rng) {
  int in = input_width;
  for (int i = 0; i < 3; ++i) {
    layers_[i] = Linear(store, prefix + ".fc" + std::to_string(i), in, cfg.classifier_widths[i], rng);
    in = cfg.classifier_widths[i];
  }
}

ag::Var Classifier::operator()(const ag::Var& x, const ForwardContext& ctx) const {
  ag::Var h = ctx.maybe_dropout(ag::relu(layers_[0](x)));
  h = ctx.maybe_dropout(ag::relu(layers_[1](h)));
  return layers_[2](h);
}

const char* variant_tag(Variant v) { return v == Variant::full ? "NMER" : "w/o VAE"; }

NmerModel::NmerModel(const ModelConfig& cfg, Variant variant, std::uint64_t init_seed)
    : cfg_(cfg), variant_(variant) {
  cfg_.validate();
  Rng rng = make_rng(init_seed, {0x494E4954ULL});
  backbone_ = FeatureBackbone(store_, cfg_, rng);
  if (variant_ == Variant::full) {
    vae_encoder_ = VaeEncoder(store_, "vae.encoder", cfg_, rng);
    vae_decoder_ = VaeDecoder(store_, "vae.decoder", cfg_, rng);
    classifier_ = Classifier(store_, "classifier", cfg_.joint_width(), cfg_, rng);
  } else {
    classifier_ = Classifier(store_, "classifier", cfg_.joint_width() + cfg_.invariant_width, cfg_, rng);
  }
}

ForwardContext NmerModel::context(Mode mode, Rng* rng) const {
  ForwardContext ctx;
  ctx.training = mode == Mode::train;
  ctx.dropout = cfg_.dropout;
  ctx.rng = rng;
  if (ctx.training && rng == nullptr) throw Error(ErrorKind::invalid_argument, "train-mode forward needs an rng");
  return ctx;
}

NmerOutput NmerModel::forward(const PaddedBatch& batch, Mode mode, Rng* rng) const {
  if (variant_ != Variant::full) throw Error(ErrorKind::invalid_argument, "forward: model has no VAE (ablation)");
  const ForwardContext ctx = context(mode, rng);
  auto features = backbone_(batch, ctx);
  NmerOutput out;
  out.specific = features.specific;
  out.invariant = features.invariant;
  out.latent = vae_encoder_(features.specific, features.invariant, ctx);
  out.z = mode == Mode::train ? reparameterize(*out.latent, *rng) : out.latent->mean;
  out.joint = vae_decoder_(out.z, features.invariant);
  check_finite(out.joint, "vae decoder");
  out.logits = classifier_(out.joint, ctx);
  return out;
}

NmerOutput NmerModel::forward_ablation(const PaddedBatch& batch, Mode mode, Rng* rng) const {
  if (variant_ != Variant::ablation) {
    throw Error(ErrorKind::invalid_argument, "forward_ablation: model is the full variant");
  }
  const ForwardContext ctx = context(mode, rng);
  auto features = backbone_(batch, ctx);
  NmerOutput out;
  out.specific = features.specific;
  out.invariant = features.invariant;
  const std::array<ag::Var, 2> parts = {features.specific, features.invariant};
  out.joint = ag::concat_cols(parts);
  out.logits = classifier_(out.joint, ctx);
  return out;
}

ag::Var NmerModel::logits(const PaddedBatch& batch, Mode mode, Rng* rng) const {
  return variant_ == Variant::full ? forward(batch, mode, rng).logits : forward_ablation(batch, mode, rng).logits;
}

}  // namespace nmer
