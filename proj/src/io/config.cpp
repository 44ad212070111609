#include "jft/io/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace jft::io {
namespace {

using ordered_json = nlohmann::ordered_json;

// Reads the keys of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else {
        if (!v.is_array()) throw ConfigError("");
        for (const auto& e : v)
          if (!e.is_number_unsigned()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": invalid value " + v.dump());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  data.validate();
  text_encoder.validate();
  image_encoder.validate();
  fusion.validate();
  train.validate();
  if (data.classes != fusion.classes) throw ConfigError("data.classes and fusion.classes differ");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (folds > data.n) throw ConfigError("folds exceeds data.n");
  if (pretrain.text_corpus_size == 0 || pretrain.image_corpus_size == 0) {
    throw ConfigError("pretrain corpus sizes must be positive");
  }
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  if (!(pretrain.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
}

SeedPlan seed_plan(std::uint64_t seed) {
  SeedPlan p;
  p.text_corpus = seed + 101;
  p.image_corpus = seed + 202;
  p.text_pretrain = seed + 303;
  p.image_pretrain = seed + 404;
  p.folds = seed + 505;
  p.finetune_base = seed + 1000;
  return p;
}

ordered_json text_encoder_json(const encoders::TextEncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"width", c.width},
          {"blocks", c.blocks},         {"heads", c.heads},     {"pad_token", c.pad_token}};
}

ordered_json image_encoder_json(const encoders::ImageEncoderConfig& c) {
  return {{"size", c.size}, {"channels", c.channels}, {"kernel", c.kernel}};
}

ordered_json fusion_json(const fusion::FusionConfig& c) {
  return {{"width", c.width}, {"heads", c.heads}, {"classes", c.classes}};
}

encoders::TextEncoderConfig text_encoder_from_json(const nlohmann::json& j, const std::string& where) {
  encoders::TextEncoderConfig c;
  Section s(j, where);
  s.read("vocab_size", c.vocab_size);
  s.read("max_len", c.max_len);
  s.read("width", c.width);
  s.read("blocks", c.blocks);
  s.read("heads", c.heads);
  s.read("pad_token", c.pad_token);
  s.finish();
  return c;
}

encoders::ImageEncoderConfig image_encoder_from_json(const nlohmann::json& j, const std::string& where) {
  encoders::ImageEncoderConfig c;
  Section s(j, where);
  s.read("size", c.size);
  s.read("channels", c.channels);
  s.read("kernel", c.kernel);
  s.finish();
  return c;
}

fusion::FusionConfig fusion_from_json(const nlohmann::json& j, const std::string& where) {
  fusion::FusionConfig c;
  Section s(j, where);
  s.read("width", c.width);
  s.read("heads", c.heads);
  s.read("classes", c.classes);
  s.finish();
  return c;
}

ordered_json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {
      {"data", {{"n", c.data.n}, {"classes", c.data.classes}, {"p_text", c.data.p_text}, {"p_image", c.data.p_image},
                {"seed", c.data.seed}}},
      {"text_encoder", text_encoder_json(c.text_encoder)},
      {"image_encoder", image_encoder_json(c.image_encoder)},
      {"fusion", fusion_json(c.fusion)},
      {"train", {{"max_epochs", t.max_epochs},
                 {"batch_size", t.batch_size},
                 {"learning_rate", t.adam.learning_rate},
                 {"beta1", t.adam.beta1},
                 {"beta2", t.adam.beta2},
                 {"adam_eps", t.adam.eps},
                 {"min_epochs", t.min_epochs},
                 {"patience", t.patience},
                 {"tolerance", t.tolerance},
                 {"freeze_text", t.freeze_text},
                 {"freeze_image", t.freeze_image}}},
      {"pretrain", {{"text_corpus_size", c.pretrain.text_corpus_size},
                    {"image_corpus_size", c.pretrain.image_corpus_size},
                    {"epochs", c.pretrain.epochs},
                    {"batch_size", c.pretrain.batch_size},
                    {"learning_rate", c.pretrain.learning_rate}}},
      {"folds", c.folds},
      {"seed", c.seed},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "config");
  if (const auto* d = root.child("data")) {
    Section s(*d, "data");
    s.read("n", c.data.n);
    s.read("classes", c.data.classes);
    s.read("p_text", c.data.p_text);
    s.read("p_image", c.data.p_image);
    s.read("seed", c.data.seed);
    s.finish();
  }
  if (const auto* t = root.child("text_encoder")) c.text_encoder = text_encoder_from_json(*t, "text_encoder");
  if (const auto* i = root.child("image_encoder")) c.image_encoder = image_encoder_from_json(*i, "image_encoder");
  if (const auto* f = root.child("fusion")) c.fusion = fusion_from_json(*f, "fusion");
  if (const auto* t = root.child("train")) {
    Section s(*t, "train");
    s.read("max_epochs", c.train.max_epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("learning_rate", c.train.adam.learning_rate);
    s.read("beta1", c.train.adam.beta1);
    s.read("beta2", c.train.adam.beta2);
    s.read("adam_eps", c.train.adam.eps);
    s.read("min_epochs", c.train.min_epochs);
    s.read("patience", c.train.patience);
    s.read("tolerance", c.train.tolerance);
    s.read("freeze_text", c.train.freeze_text);
    s.read("freeze_image", c.train.freeze_image);
    s.finish();
  }
  if (const auto* p = root.child("pretrain")) {
    Section s(*p, "pretrain");
    s.read("text_corpus_size", c.pretrain.text_corpus_size);
    s.read("image_corpus_size", c.pretrain.image_corpus_size);
    s.read("epochs", c.pretrain.epochs);
    s.read("batch_size", c.pretrain.batch_size);
    s.read("learning_rate", c.pretrain.learning_rate);
    s.finish();
  }
  root.read("folds", c.folds);
  root.read("seed", c.seed);
  root.finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void apply_seed_override(RunConfig& config) {
  const char* env = std::getenv("JFT_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || errno != 0 || env[0] == '-') throw ConfigError(std::string("JFT_SEED is not an unsigned integer: ") + env);
  config.seed = v;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
    c = run_config_from_json(j);
  }
  apply_seed_override(c);
  return c;
}

training::PretrainConfig pretrain_config(const RunConfig& config, std::uint64_t seed, std::uint64_t corpus_seed) {
  training::PretrainConfig p;
  p.epochs = config.pretrain.epochs;
  p.batch_size = config.pretrain.batch_size;
  p.learning_rate = config.pretrain.learning_rate;
  p.seed = seed;
  p.corpus_seed = corpus_seed;
  return p;
}

}  // namespace jft::io
