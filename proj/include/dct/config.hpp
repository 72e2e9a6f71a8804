#pragma once

// Training configuration and its JSON text form. Unknown keys are rejected so
// that typos in config files fail loudly.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dct/domain_model.hpp"
#include "dct/losses.hpp"
#include "dct/metrics.hpp"
#include "dct/model.hpp"
#include "json.hpp"

namespace dct {

struct TrainConfig {
  MixtureShape mixture;
  std::size_t n_per_cell = 50;
  std::size_t probe_per_cell = 20;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embedding_dim = 32;
  LossConfig loss;
  std::size_t epochs = 100;
  std::size_t classes_per_batch = 4;  // P
  std::size_t samples_per_class = 6;  // K
  SgdConfig optimizer;
  std::uint64_t seed = 0;
  std::optional<int> held_out_domain;
  std::size_t eval_every = 10;
  std::size_t knn_k = kDefaultNeighbors;
  std::size_t trial_seeds = 3;
  std::vector<double> sweep_margins{0.0, 1.0, 5.0, 15.0, 30.0};
  std::string output_dir = "out";

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> sizes{mixture.feature_dim};
    sizes.insert(sizes.end(), hidden_dims.begin(), hidden_dims.end());
    sizes.push_back(embedding_dim);
    return sizes;
  }

  std::size_t source_domain_count() const {
    return mixture.num_domains - (held_out_domain ? 1 : 0);
  }

  void validate() const {
    loss.validate();
    if (classes_per_batch < 2 || samples_per_class < 2) {
      throw Error("invalid_config", "batch needs P >= 2 classes and K >= 2 samples per class");
    }
    if (classes_per_batch > mixture.num_classes) {
      throw Error("invalid_config", "P exceeds the number of classes");
    }
    if (mixture.num_classes < 2) throw Error("invalid_config", "need at least 2 classes");
    if (held_out_domain && (*held_out_domain < 0 ||
                            static_cast<std::size_t>(*held_out_domain) >= mixture.num_domains)) {
      throw Error("invalid_config", "held_out_domain out of range");
    }
    if (source_domain_count() < 1) throw Error("invalid_config", "no source domain left");
    if (loss.policy == MiningPolicy::domain_class && source_domain_count() < 2) {
      throw Error("infeasible_sampling",
                  "domain_class mining needs at least 2 source domains");
    }
    if (embedding_dim == 0 || n_per_cell == 0 || probe_per_cell == 0 || eval_every == 0 ||
        knn_k == 0 || trial_seeds == 0) {
      throw Error("invalid_config", "dimensions, counts and intervals must be positive");
    }
    if (!(optimizer.lr >= 0.0) || !(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0) ||
        !(optimizer.weight_decay >= 0.0)) {
      throw Error("invalid_config", "optimizer requires lr >= 0, momentum in [0,1), weight_decay >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping.

using json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
  if (!j.is_object()) throw Error("invalid_config", std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw Error("invalid_config", std::string("unknown key '") + key + "' in " + where);
    }
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline MiningPolicy parse_policy(const std::string& s) {
  if (s == "standard") return MiningPolicy::standard;
  if (s == "domain_class") return MiningPolicy::domain_class;
  throw Error("invalid_config", "unknown mining policy '" + s + "'");
}

inline Selection parse_selection(const std::string& s) {
  if (s == "batch_hard") return Selection::batch_hard;
  if (s == "batch_all") return Selection::batch_all;
  throw Error("invalid_config", "unknown selection '" + s + "'");
}

inline ClassifierInput parse_classifier_input(const std::string& s) {
  if (s == "after") return ClassifierInput::after_bn;
  if (s == "before") return ClassifierInput::before_bn;
  throw Error("invalid_config", "classifier_input must be 'after' or 'before', got '" + s + "'");
}

inline json to_json(const LossConfig& c) {
  return json{{"margin", c.margin},
              {"policy", to_string(c.policy)},
              {"selection", to_string(c.selection)},
              {"use_bn", c.use_bn},
              {"use_fn", c.use_fn},
              {"classifier_input", to_string(c.classifier_input)},
              {"dct_weight", c.dct_weight}};
}

inline LossConfig loss_config_from_json(const json& j) {
  detail::reject_unknown(j, {"margin", "policy", "selection", "use_bn", "use_fn",
                             "classifier_input", "dct_weight"},
                         "loss");
  LossConfig c;
  detail::read_if(j, "margin", c.margin);
  detail::read_if(j, "use_bn", c.use_bn);
  detail::read_if(j, "use_fn", c.use_fn);
  detail::read_if(j, "dct_weight", c.dct_weight);
  if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  if (j.contains("classifier_input")) {
    c.classifier_input = parse_classifier_input(j.at("classifier_input").get<std::string>());
  }
  return c;
}

inline json to_json(const TrainConfig& c) {
  return json{
      {"mixture",
       {{"feature_dim", c.mixture.feature_dim},
        {"num_classes", c.mixture.num_classes},
        {"num_domains", c.mixture.num_domains},
        {"noise_sigma", c.mixture.noise_sigma},
        {"class_scale", c.mixture.class_scale},
        {"domain_scale", c.mixture.domain_scale}}},
      {"n_per_cell", c.n_per_cell},
      {"probe_per_cell", c.probe_per_cell},
      {"hidden_dims", c.hidden_dims},
      {"embedding_dim", c.embedding_dim},
      {"loss", to_json(c.loss)},
      {"epochs", c.epochs},
      {"classes_per_batch", c.classes_per_batch},
      {"samples_per_class", c.samples_per_class},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"seed", c.seed},
      {"held_out_domain", c.held_out_domain ? json(*c.held_out_domain) : json(nullptr)},
      {"eval_every", c.eval_every},
      {"knn_k", c.knn_k},
      {"trial_seeds", c.trial_seeds},
      {"sweep_margins", c.sweep_margins},
      {"output_dir", c.output_dir}};
}

inline TrainConfig train_config_from_json(const json& j) {
  detail::reject_unknown(j, {"mixture", "n_per_cell", "probe_per_cell", "hidden_dims",
                             "embedding_dim", "loss", "epochs", "classes_per_batch",
                             "samples_per_class", "optimizer", "seed", "held_out_domain",
                             "eval_every", "knn_k", "trial_seeds", "sweep_margins", "output_dir"},
                         "config");
  TrainConfig c;
  if (j.contains("mixture")) {
    const auto& m = j.at("mixture");
    detail::reject_unknown(m, {"feature_dim", "num_classes", "num_domains", "noise_sigma",
                               "class_scale", "domain_scale"},
                           "mixture");
    detail::read_if(m, "feature_dim", c.mixture.feature_dim);
    detail::read_if(m, "num_classes", c.mixture.num_classes);
    detail::read_if(m, "num_domains", c.mixture.num_domains);
    detail::read_if(m, "noise_sigma", c.mixture.noise_sigma);
    detail::read_if(m, "class_scale", c.mixture.class_scale);
    detail::read_if(m, "domain_scale", c.mixture.domain_scale);
  }
  detail::read_if(j, "n_per_cell", c.n_per_cell);
  detail::read_if(j, "probe_per_cell", c.probe_per_cell);
  detail::read_if(j, "hidden_dims", c.hidden_dims);
  detail::read_if(j, "embedding_dim", c.embedding_dim);
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
  detail::read_if(j, "epochs", c.epochs);
  detail::read_if(j, "classes_per_batch", c.classes_per_batch);
  detail::read_if(j, "samples_per_class", c.samples_per_class);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown(o, {"lr", "momentum", "weight_decay"}, "optimizer");
    detail::read_if(o, "lr", c.optimizer.lr);
    detail::read_if(o, "momentum", c.optimizer.momentum);
    detail::read_if(o, "weight_decay", c.optimizer.weight_decay);
  }
  detail::read_if(j, "seed", c.seed);
  if (j.contains("held_out_domain") && !j.at("held_out_domain").is_null()) {
    c.held_out_domain = j.at("held_out_domain").get<int>();
  }
  detail::read_if(j, "eval_every", c.eval_every);
  detail::read_if(j, "knn_k", c.knn_k);
  detail::read_if(j, "trial_seeds", c.trial_seeds);
  detail::read_if(j, "sweep_margins", c.sweep_margins);
  detail::read_if(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("invalid_config", std::string("config parse error: ") + e.what());
  }
  return train_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Seeding: every random stream is derived from the run seed.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x1234567ULL));
}

}  // namespace dct
