#include "nmer/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "nmer/error.hpp"
#include "nmer/io.hpp"

namespace nmer {

using nlohmann::json;

namespace {

/// Reads optional keys from one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::config, "config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::config, "config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorKind::config, "config: unknown key '" + path_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* merge_name(TextMerge m) { return m == TextMerge::sum ? "sum" : "concat_project"; }

TextMerge parse_merge(const std::string& s) {
  if (s == "sum") return TextMerge::sum;
  if (s == "concat_project") return TextMerge::concat_project;
  throw Error(ErrorKind::config, "config: unknown text_merge '" + s + "'");
}

json model_to_json(const ModelConfig& m, bool with_inputs) {
  json j = {
      {"encoder_width", m.encoder_width},
      {"text_kernels", m.text_kernels},
      {"text_merge", merge_name(m.text_merge)},
      {"specific_width", m.specific_width},
      {"invariant_hidden", m.invariant_hidden},
      {"invariant_width", m.invariant_width},
      {"vae_tokens", m.vae_tokens},
      {"vae_layers", m.vae_layers},
      {"vae_heads", m.vae_heads},
      {"vae_ff_width", m.vae_ff_width},
      {"latent_width", m.latent_width},
      {"decoder_widths", m.decoder_widths},
      {"classifier_widths", m.classifier_widths},
      {"dropout", m.dropout},
      {"logvar_limit", m.logvar_limit},
  };
  if (with_inputs) j["input_dims"] = m.input_dims;
  return j;
}

void model_from_json(const json& j, ModelConfig& m, bool with_inputs) {
  ObjectReader r(j, "model");
  if (with_inputs) r.read("input_dims", m.input_dims);
  r.read("encoder_width", m.encoder_width);
  r.read("text_kernels", m.text_kernels);
  std::string merge = merge_name(m.text_merge);
  r.read("text_merge", merge);
  m.text_merge = parse_merge(merge);
  r.read("specific_width", m.specific_width);
  r.read("invariant_hidden", m.invariant_hidden);
  r.read("invariant_width", m.invariant_width);
  r.read("vae_tokens", m.vae_tokens);
  r.read("vae_layers", m.vae_layers);
  r.read("vae_heads", m.vae_heads);
  r.read("vae_ff_width", m.vae_ff_width);
  r.read("latent_width", m.latent_width);
  r.read("decoder_widths", m.decoder_widths);
  r.read("classifier_widths", m.classifier_widths);
  r.read("dropout", m.dropout);
  r.read("logvar_limit", m.logvar_limit);
  r.finish();
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg, true).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig cfg;
  try {
    model_from_json(json::parse(text), cfg, true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("model config: ") + e.what());
  }
  return cfg;
}

RunConfig RunConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader root(doc, "config");
  root.read("seed", c.seed);
  if (const json* j = root.child("split_seed"); j && !j->is_null()) {
    if (!j->is_number_unsigned()) throw Error(ErrorKind::config, "config: 'config.split_seed' has the wrong type");
    c.split_seed = j->get<std::uint64_t>();
  }
  root.read("out_dir", c.out_dir);
  root.read("manifest", c.manifest);

  if (const json* j = root.child("synthetic")) {
    ObjectReader r(*j, root.path("synthetic"));
    auto& s = c.synthetic;
    r.read("n_per_class", s.n_per_class);
    r.read("dims", s.dims);
    r.read("latent_dim", s.latent_dim);
    r.read("separation", s.separation);
    r.read("length_ranges", s.length_ranges);
    r.read("frame_noise_variance", s.frame_noise_variance);
    r.read("seed", s.seed);
    r.finish();
  }
  if (const json* j = root.child("schedule")) {
    ObjectReader r(*j, root.path("schedule"));
    r.read("beta_start", c.schedule.beta_start);
    r.read("beta_end", c.schedule.beta_end);
    r.read("steps", c.schedule.steps);
    std::string kind(to_string(c.schedule.kind));
    r.read("kind", kind);
    try {
      c.schedule.kind = parse_schedule_kind(kind);
    } catch (const Error& e) {
      throw Error(ErrorKind::config, std::string("config: ") + e.what());
    }
    r.finish();
  }
  if (const json* j = root.child("noise")) {
    ObjectReader r(*j, root.path("noise"));
    std::vector<std::string> types;
    for (auto k : c.noise.types) types.emplace_back(to_string(k));
    r.read("types", types);
    c.noise.types.clear();
    for (const auto& t : types) {
      try {
        c.noise.types.push_back(parse_noise_kind(t));
      } catch (const Error& e) {
        throw Error(ErrorKind::config, std::string("config: ") + e.what());
      }
    }
    r.read("impulse_p", c.noise.impulse_p);
    r.finish();
  }
  if (const json* j = root.child("model")) model_from_json(*j, c.model, false);
  if (const json* j = root.child("train")) {
    ObjectReader r(*j, root.path("train"));
    auto& t = c.train;
    r.read("lr", t.lr);
    r.read("batch_size", t.batch_size);
    r.read("epochs", t.epochs);
    r.read("teacher_epochs", t.teacher_epochs);
    r.read("folds", t.folds);
    r.read("fold", t.fold);
    r.read("weight_decay", t.weight_decay);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("adam_eps", t.adam_eps);
    r.read("lr_pivot", t.lr_pivot);
    r.read("validation_fraction", t.validation_fraction);
    r.read("kl_weight", t.weights.kl);
    r.read("gen_weight", t.weights.gen);
    r.read("inv_weight", t.weights.inv);
    r.read("cls_weight", t.weights.cls);
    r.read("repeats", t.repeats);
    r.finish();
  }
  if (const json* j = root.child("eval")) {
    ObjectReader r(*j, root.path("eval"));
    r.read("intensities", c.eval.intensities);
    r.read("conditions", c.eval.conditions);
    r.read("draws", c.eval.draws);
    r.read("batch_size", c.eval.batch_size);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error&) {
    throw Error(ErrorKind::config, "config: cannot read '" + path.string() + "'");
  }
  return from_json(text);
}

std::string RunConfig::to_json(int indent) const {
  std::vector<std::string> types;
  for (auto k : noise.types) types.emplace_back(to_string(k));
  json doc = {
      {"seed", seed},
      {"out_dir", out_dir},
      {"manifest", manifest},
      {"synthetic",
       {{"n_per_class", synthetic.n_per_class},
        {"dims", synthetic.dims},
        {"latent_dim", synthetic.latent_dim},
        {"separation", synthetic.separation},
        {"length_ranges", synthetic.length_ranges},
        {"frame_noise_variance", synthetic.frame_noise_variance},
        {"seed", synthetic.seed}}},
      {"schedule",
       {{"beta_start", schedule.beta_start},
        {"beta_end", schedule.beta_end},
        {"steps", schedule.steps},
        {"kind", to_string(schedule.kind)}}},
      {"noise", {{"types", types}, {"impulse_p", noise.impulse_p}}},
      {"model", model_to_json(model, false)},
      {"train",
       {{"lr", train.lr},
        {"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"teacher_epochs", train.teacher_epochs},
        {"folds", train.folds},
        {"fold", train.fold},
        {"weight_decay", train.weight_decay},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"adam_eps", train.adam_eps},
        {"lr_pivot", train.lr_pivot},
        {"validation_fraction", train.validation_fraction},
        {"kl_weight", train.weights.kl},
        {"gen_weight", train.weights.gen},
        {"inv_weight", train.weights.inv},
        {"cls_weight", train.weights.cls},
        {"repeats", train.repeats}}},
      {"eval",
       {{"intensities", eval.intensities},
        {"conditions", eval.conditions},
        {"draws", eval.draws},
        {"batch_size", eval.batch_size}}},
  };
  if (split_seed) doc["split_seed"] = *split_seed;
  return doc.dump(indent);
}

std::filesystem::path RunConfig::manifest_path() const {
  if (!manifest.empty()) return manifest;
  return std::filesystem::path(out_dir) / "data" / "manifest.json";
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, "config: " + msg); };
  if (!(schedule.beta_start > 0.0 && schedule.beta_start < schedule.beta_end && schedule.beta_end < 1.0)) {
    fail("schedule requires 0 < beta_start < beta_end < 1");
  }
  if (schedule.steps < 1) fail("schedule.steps must be >= 1");
  if (noise.types.empty()) fail("noise.types must not be empty");
  if (!(noise.impulse_p >= 0.0 && noise.impulse_p <= 1.0)) fail("noise.impulse_p must be in [0, 1]");
  if (!(train.lr > 0.0)) fail("train.lr must be positive");
  if (train.batch_size < 1) fail("train.batch_size must be >= 1");
  if (train.epochs < 1 || train.teacher_epochs < 1) fail("train epochs must be >= 1");
  if (train.folds < 2) fail("train.folds must be >= 2");
  if (train.fold < 0 || train.fold >= train.folds) fail("train.fold must be in [0, folds)");
  if (!(train.weight_decay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (train.lr_pivot < 0) fail("train.lr_pivot must be >= 0");
  if (!(train.validation_fraction >= 0.0 && train.validation_fraction < 1.0)) {
    fail("train.validation_fraction must be in [0, 1)");
  }
  if (train.repeats < 1) fail("train.repeats must be >= 1");
  if (eval.draws < 1) fail("eval.draws must be >= 1");
  if (eval.batch_size < 1) fail("eval.batch_size must be >= 1");
  if (eval.intensities.empty() || eval.conditions.empty()) fail("eval grid must not be empty");
  for (int t : eval.intensities) {
    if (t < 1 || t > schedule.steps) fail("eval intensity " + std::to_string(t) + " outside [1, steps]");
  }
  for (const auto& c : eval.conditions) {
    try {
      (void)ConditionPattern::parse(c);
    } catch (const Error&) {
      fail("unknown eval condition '" + c + "'");
    }
  }
  ModelConfig m = model;
  m.input_dims = synthetic.dims;
  m.validate();
}

}  // namespace nmer
