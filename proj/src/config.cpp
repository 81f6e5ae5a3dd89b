/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mlim/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "mlim/data.hpp"
#include "mlim/error.hpp"

namespace mlim {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects anything it was not asked
// about.
template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

// nlohmann converts between numeric kinds silently; configs must not.
template <typename T>
bool has_type(const json& j) {
  if constexpr (std::is_same_v<T, bool>) {
    return j.is_boolean();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    return j.is_number_unsigned();
  } else if constexpr (std::is_integral_v<T>) {
    return j.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return j.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return j.is_string();
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) return false;
    for (const auto& e : j) {
      if (!has_type<typename T::value_type>(e)) return false;
    }
    return true;
  } else {
    return true;
  }
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!has_type<T>(*it)) throw ConfigError("config key " + child(key) + " has the wrong type");
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + child(key) + " has the wrong type: " + e.what());
    }
  }

  const json* object(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError("unknown config key " + child(it.key().c_str()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "config section " + path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void section(ObjectReader& parent, const char* key, Fn fn) {
  if (const json* sub = parent.object(key)) {
    ObjectReader r(*sub, parent.child(key));
    fn(r);
    r.finish();
  }
}

void read_train(ObjectReader& r, TrainConfig& t) {
  r.read("steps", t.steps);
  r.read("batch_size", t.batch_size);
  r.read("micro_batch_size", t.micro_batch_size);
}

json train_json(const TrainConfig& t) {
  return {{"steps", t.steps}, {"batch_size", t.batch_size}, {"micro_batch_size", t.micro_batch_size}};
}

void validate_train(const TrainConfig& t, const char* what) {
  const std::string w(what);
  if (t.steps < 0) throw ConfigError(w + ".steps must be >= 0");
  if (t.micro_batch_size == 0 || t.batch_size == 0) throw ConfigError(w + " batch sizes must be positive");
  if (t.batch_size % t.micro_batch_size != 0) {
    throw ConfigError(w + ".micro_batch_size must divide " + w + ".batch_size");
  }
}

AblationVariant make_variant(std::string name, bool recon, bool itm, bool mam, bool mdo) {
  AblationVariant v;
  v.name = std::move(name);
  v.recon = recon;
  v.itm = itm;
  v.mam = mam;
  v.naive_masking = !mam;
  v.mdo = mdo;
  return v;
}

}  // namespace

std::vector<AblationVariant> default_variants() {
  return {
      make_variant("RECON + ITM + MLM + MAM", true, true, true, true),
      make_variant("RECON + MLM + MAM", true, false, true, true),
      make_variant("RECON + MLM + Naive Masking", true, false, false, true),
      make_variant("ITM + MLM + MAM", false, true, true, true),
      make_variant("ITM + MLM + Naive Masking", false, true, false, true),
      make_variant("RECON + MLM + MAM without MDO", true, false, true, false),
  };
}

void AblationVariant::validate() const {
  if (name.empty()) throw ConfigError("ablation variant without a name");
  if (mam && naive_masking) {
    throw ConfigError("ablation variant '" + name + "' enables both MAM and naive masking");
  }
  if (!mam && !naive_masking) {
    throw ConfigError("ablation variant '" + name + "' selects no masking policy");
  }
  if (!mlm && !recon && !itm) throw ConfigError("ablation variant '" + name + "' has no objective");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.vocab_size = Vocab::standard().size();
  mc.max_text_len = model.max_text_len;
  mc.embedder = make_embedder_config(model.embedder_channels, model.d_model, data.image_side);
  mc.transformer.layers = model.layers;
  mc.transformer.heads = model.heads;
  mc.transformer.d_model = model.d_model;
  mc.transformer.d_ff = model.d_ff;
  mc.transformer.dropout = model.dropout;
  mc.transformer.pre_norm = model.pre_norm;
  mc.decoder_channels = model.decoder_channels;
  mc.decoder_refine = model.decoder_refine;
  return mc;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (data.n_items == 0) throw ConfigError("data.n_items must be >= 1");
  if (!(data.match_fraction > 0.0 && data.match_fraction < 1.0)) {
    throw ConfigError("data.match_fraction must lie strictly between 0 and 1");
  }
  if (model.max_text_len < 8) throw ConfigError("model.max_text_len must hold an 8-token caption");
  model_config().validate();
  if (losses.mlm < 0 || losses.recon < 0 || losses.itm < 0) throw ConfigError("loss weights must be >= 0");
  if (losses.mlm == 0 && losses.recon == 0 && losses.itm == 0) throw ConfigError("all loss weights are zero");
  if (!(masking.naive_prob >= 0.0 && masking.naive_prob <= 1.0)) {
    throw ConfigError("masking.naive_prob must lie in [0, 1]");
  }
  mam.validate();
  mdo.validate();
  optimizer.adam.validate();
  validate_train(pretrain, "pretrain");
  validate_train(finetune, "finetune");
  if (losses.itm > 0 && pretrain.micro_batch_size < 2) {
    throw ConfigError("ITM in-batch negatives need pretrain.micro_batch_size >= 2");
  }
  for (double p : probe.mask_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probe.mask_probs must lie in [0, 1]");
  }
  if (probe.eval_items == 0) throw ConfigError("probe.eval_items must be >= 1");
  if (!(probe.gray_level >= 0.0 && probe.gray_level <= 1.0)) {
    throw ConfigError("probe.gray_level must lie in [0, 1]");
  }
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds is empty");
  for (const auto& v : ablation.variants) v.validate();
}

RunConfig RunConfig::with_variant(const AblationVariant& variant) const {
  variant.validate();
  RunConfig out = *this;
  auto weight = [](bool on, double configured) { return on ? (configured > 0 ? configured : 1.0) : 0.0; };
  out.losses.mlm = weight(variant.mlm, losses.mlm);
  out.losses.recon = weight(variant.recon, losses.recon);
  out.losses.itm = weight(variant.itm, losses.itm);
  out.masking.policy = variant.mam ? MaskingPolicy::kMam : MaskingPolicy::kNaive;
  out.mdo.enabled = variant.mdo;
  return out;
}

json to_json(const AblationVariant& v) {
  return {{"name", v.name}, {"mlm", v.mlm}, {"recon", v.recon}, {"itm", v.itm},
          {"mam", v.mam},   {"naive_masking", v.naive_masking}, {"mdo", v.mdo}};
}

AblationVariant variant_from_json(const json& j) {
  AblationVariant v;
  ObjectReader r(j, "ablation.variants[]");
  r.read("name", v.name);
  r.read("mlm", v.mlm);
  r.read("recon", v.recon);
  r.read("itm", v.itm);
  r.read("mam", v.mam);
  r.read("naive_masking", v.naive_masking);
  r.read("mdo", v.mdo);
  r.finish();
  v.validate();
  return v;
}

json to_json(const RunConfig& c) {
  json variants = json::array();
  for (const auto& v : c.ablation.variants) variants.push_back(to_json(v));
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"data",
       {{"corpus_dir", c.data.corpus_dir},
        {"n_items", c.data.n_items},
        {"image_side", c.data.image_side},
        {"pairs_train", c.data.pairs_train},
        {"pairs_test", c.data.pairs_test},
        {"match_fraction", c.data.match_fraction}}},
      {"model",
       {{"d_model", c.model.d_model},
        {"layers", c.model.layers},
        {"heads", c.model.heads},
        {"d_ff", c.model.d_ff},
        {"dropout", c.model.dropout},
        {"pre_norm", c.model.pre_norm},
        {"max_text_len", c.model.max_text_len},
        {"embedder_channels", c.model.embedder_channels},
        {"decoder_channels", c.model.decoder_channels},
        {"decoder_refine", c.model.decoder_refine}}},
      {"losses", {{"mlm", c.losses.mlm}, {"recon", c.losses.recon}, {"itm", c.losses.itm}}},
      {"masking",
       {{"policy", c.masking.policy == MaskingPolicy::kMam ? "mam" : "naive"},
        {"naive_prob", c.masking.naive_prob}}},
      {"mam", {{"p_heavy", c.mam.p_heavy}, {"p_light", c.mam.p_light}, {"mode_weights", c.mam.mode_weights}}},
      {"mdo", {{"enabled", c.mdo.enabled}, {"mode_weights", c.mdo.mode_weights}}},
      {"optimizer",
       {{"lr", c.optimizer.adam.lr},
        {"beta1", c.optimizer.adam.beta1},
        {"beta2", c.optimizer.adam.beta2},
        {"eps", c.optimizer.adam.eps},
        {"clip_norm", c.optimizer.clip_norm}}},
      {"pretrain", train_json(c.pretrain)},
      {"finetune",
       [&] {
         json f = train_json(c.finetune);
         f["checkpoint"] = c.finetune_checkpoint;
         return f;
       }()},
      {"probe",
       {{"checkpoint", c.probe.checkpoint},
        {"mask_probs", c.probe.mask_probs},
        {"eval_items", c.probe.eval_items},
        {"gray_level", c.probe.gray_level}}},
      {"ablation", {{"seeds", c.ablation.seeds}, {"variants", variants}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  ObjectReader root(j, "");
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  section(root, "data", [&](ObjectReader& r) {
    r.read("corpus_dir", c.data.corpus_dir);
    r.read("n_items", c.data.n_items);
    r.read("image_side", c.data.image_side);
    r.read("pairs_train", c.data.pairs_train);
    r.read("pairs_test", c.data.pairs_test);
    r.read("match_fraction", c.data.match_fraction);
  });
  section(root, "model", [&](ObjectReader& r) {
    r.read("d_model", c.model.d_model);
    r.read("layers", c.model.layers);
    r.read("heads", c.model.heads);
    r.read("d_ff", c.model.d_ff);
    r.read("dropout", c.model.dropout);
    r.read("pre_norm", c.model.pre_norm);
    r.read("max_text_len", c.model.max_text_len);
    r.read("embedder_channels", c.model.embedder_channels);
    r.read("decoder_channels", c.model.decoder_channels);
    r.read("decoder_refine", c.model.decoder_refine);
  });
  section(root, "losses", [&](ObjectReader& r) {
    r.read("mlm", c.losses.mlm);
    r.read("recon", c.losses.recon);
    r.read("itm", c.losses.itm);
  });
  section(root, "masking", [&](ObjectReader& r) {
    std::string policy = c.masking.policy == MaskingPolicy::kMam ? "mam" : "naive";
    r.read("policy", policy);
    if (policy == "mam") {
      c.masking.policy = MaskingPolicy::kMam;
    } else if (policy == "naive") {
      c.masking.policy = MaskingPolicy::kNaive;
    } else {
      throw ConfigError("masking.policy must be \"mam\" or \"naive\", got \"" + policy + "\"");
    }
    r.read("naive_prob", c.masking.naive_prob);
  });
  section(root, "mam", [&](ObjectReader& r) {
    r.read("p_heavy", c.mam.p_heavy);
    r.read("p_light", c.mam.p_light);
    r.read("mode_weights", c.mam.mode_weights);
  });
  section(root, "mdo", [&](ObjectReader& r) {
    r.read("enabled", c.mdo.enabled);
    r.read("mode_weights", c.mdo.mode_weights);
  });
  section(root, "optimizer", [&](ObjectReader& r) {
    r.read("lr", c.optimizer.adam.lr);
    r.read("beta1", c.optimizer.adam.beta1);
    r.read("beta2", c.optimizer.adam.beta2);
    r.read("eps", c.optimizer.adam.eps);
    r.read("clip_norm", c.optimizer.clip_norm);
  });
  section(root, "pretrain", [&](ObjectReader& r) { read_train(r, c.pretrain); });
  section(root, "finetune", [&](ObjectReader& r) {
    read_train(r, c.finetune);
    r.read("checkpoint", c.finetune_checkpoint);
  });
  section(root, "probe", [&](ObjectReader& r) {
    r.read("checkpoint", c.probe.checkpoint);
    r.read("mask_probs", c.probe.mask_probs);
    r.read("eval_items", c.probe.eval_items);
    r.read("gray_level", c.probe.gray_level);
  });
  section(root, "ablation", [&](ObjectReader& r) {
    r.read("seeds", c.ablation.seeds);
    if (const json* vs = r.object("variants")) {
      if (!vs->is_array()) throw ConfigError("ablation.variants must be an array");
      c.ablation.variants.clear();
      for (const auto& v : *vs) c.ablation.variants.push_back(variant_from_json(v));
    }
  });
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write config " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace mlim
