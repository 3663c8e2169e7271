#pragma once
// Training configuration and its JSON mapping (field-for-field).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ins/data.hpp"
#include "ins/error.hpp"

namespace ins {

enum class BagPoolSource { projector, encoder };

struct TrainConfig {
  int epochs = 25;
  int warmup_epochs = 5;
  int batch_size = 64;
  double lr = 0.01;
  double sgd_momentum = 0.9;
  double tau = 0.07;
  double alpha = 0.9;
  double beta = 0.99;
  double ema_m = 0.99;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int queue_capacity = 8192;
  int embed_dim = 128;
  double aug_noise_sigma = 0.1;
  double aug_dropout_p = 0.1;
  std::uint64_t seed = 0;
  bool infonce_denominator = false;

  // Architecture and ablation switches.
  std::vector<int> encoder_dims{256, 128};  // hidden..., output
  int classifier_hidden = 64;
  bool use_iwscl = true;
  bool iwscl_during_warmup = true;
  BagPoolSource bag_pool_source = BagPoolSource::projector;
  // Initial positive mass of positive-bag soft labels (1 = inherit the bag
  // label, 0.5 = uniform).
  double positive_bag_prior = 1.0;

  int encoder_out() const { return encoder_dims.back(); }
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (c.warmup_epochs < 0) throw ConfigError("warmup_epochs", "must be >= 0");
  if (c.warmup_epochs >= c.epochs) throw ConfigError("warmup_epochs", "must be < epochs");
  if (c.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(c.lr > 0.0)) throw ConfigError("lr", "must be > 0");
  if (!(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0)) throw ConfigError("sgd_momentum", "must lie in [0, 1)");
  if (!(c.tau > 0.0)) throw ConfigError("tau", "must be > 0");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("alpha", "must lie in [0, 1]");
  if (!(c.beta >= 0.0 && c.beta < 1.0)) throw ConfigError("beta", "must lie in [0, 1)");
  if (!(c.ema_m >= 0.0 && c.ema_m < 1.0)) throw ConfigError("ema_m", "must lie in [0, 1)");
  if (!(c.lambda1 >= 0.0)) throw ConfigError("lambda1", "must be >= 0");
  if (!(c.lambda2 >= 0.0)) throw ConfigError("lambda2", "must be >= 0");
  if (c.queue_capacity < 1) throw ConfigError("queue_capacity", "must be >= 1");
  if (c.embed_dim < 1) throw ConfigError("embed_dim", "must be >= 1");
  if (!(c.aug_noise_sigma >= 0.0)) throw ConfigError("aug_noise_sigma", "must be >= 0");
  if (!(c.aug_dropout_p >= 0.0 && c.aug_dropout_p < 1.0)) throw ConfigError("aug_dropout_p", "must lie in [0, 1)");
  if (c.encoder_dims.empty()) throw ConfigError("encoder_dims", "needs at least the output dim");
  for (int d : c.encoder_dims)
    if (d < 1) throw ConfigError("encoder_dims", "dims must be >= 1");
  if (c.classifier_hidden < 1) throw ConfigError("classifier_hidden", "must be >= 1");
  if (!(c.positive_bag_prior >= 0.0 && c.positive_bag_prior <= 1.0))
    throw ConfigError("positive_bag_prior", "must lie in [0, 1]");
}

inline std::string to_string(BagPoolSource s) { return s == BagPoolSource::projector ? "projector" : "encoder"; }

inline BagPoolSource parse_bag_pool_source(const std::string& s) {
  if (s == "projector") return BagPoolSource::projector;
  if (s == "encoder") return BagPoolSource::encoder;
  throw ConfigError("bag_pool_source", "expected projector or encoder, got '" + s + "'");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"sgd_momentum", c.sgd_momentum},
       {"tau", c.tau},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"ema_m", c.ema_m},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"queue_capacity", c.queue_capacity},
       {"embed_dim", c.embed_dim},
       {"aug_noise_sigma", c.aug_noise_sigma},
       {"aug_dropout_p", c.aug_dropout_p},
       {"seed", c.seed},
       {"infonce_denominator", c.infonce_denominator},
       {"encoder_dims", c.encoder_dims},
       {"classifier_hidden", c.classifier_hidden},
       {"use_iwscl", c.use_iwscl},
       {"iwscl_during_warmup", c.iwscl_during_warmup},
       {"bag_pool_source", to_string(c.bag_pool_source)},
       {"positive_bag_prior", c.positive_bag_prior}};
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section, "expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(section + "." + it.key(), "unknown field");
}

}  // namespace detail

/// Missing fields keep their defaults; unknown fields are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown(j,
                         {"epochs", "warmup_epochs", "batch_size", "lr", "sgd_momentum", "tau", "alpha", "beta",
                          "ema_m", "lambda1", "lambda2", "queue_capacity", "embed_dim", "aug_noise_sigma",
                          "aug_dropout_p", "seed", "infonce_denominator", "encoder_dims", "classifier_hidden",
                          "use_iwscl", "iwscl_during_warmup", "bag_pool_source", "positive_bag_prior"},
                         "train");
  using detail::read_field;
  read_field(j, "epochs", c.epochs);
  read_field(j, "warmup_epochs", c.warmup_epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "lr", c.lr);
  read_field(j, "sgd_momentum", c.sgd_momentum);
  read_field(j, "tau", c.tau);
  read_field(j, "alpha", c.alpha);
  read_field(j, "beta", c.beta);
  read_field(j, "ema_m", c.ema_m);
  read_field(j, "lambda1", c.lambda1);
  read_field(j, "lambda2", c.lambda2);
  read_field(j, "queue_capacity", c.queue_capacity);
  read_field(j, "embed_dim", c.embed_dim);
  read_field(j, "aug_noise_sigma", c.aug_noise_sigma);
  read_field(j, "aug_dropout_p", c.aug_dropout_p);
  read_field(j, "seed", c.seed);
  read_field(j, "infonce_denominator", c.infonce_denominator);
  read_field(j, "encoder_dims", c.encoder_dims);
  read_field(j, "classifier_hidden", c.classifier_hidden);
  read_field(j, "use_iwscl", c.use_iwscl);
  read_field(j, "iwscl_during_warmup", c.iwscl_during_warmup);
  read_field(j, "positive_bag_prior", c.positive_bag_prior);
  if (j.contains("bag_pool_source")) {
    std::string s;
    read_field(j, "bag_pool_source", s);
    c.bag_pool_source = parse_bag_pool_source(s);
  }
}

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"n_pos_bags", c.n_pos_bags},
       {"n_neg_bags", c.n_neg_bags},
       {"instances_per_bag", c.instances_per_bag},
       {"positive_ratio", c.positive_ratio},
       {"d_raw", c.d_raw},
       {"class_separation", c.class_separation},
       {"noise_sigma", c.noise_sigma},
       {"seed", c.seed},
       {"layout_seed", c.layout_seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  detail::reject_unknown(j,
                         {"n_pos_bags", "n_neg_bags", "instances_per_bag", "positive_ratio", "d_raw",
                          "class_separation", "noise_sigma", "seed", "layout_seed"},
                         "data");
  using detail::read_field;
  read_field(j, "n_pos_bags", c.n_pos_bags);
  read_field(j, "n_neg_bags", c.n_neg_bags);
  read_field(j, "instances_per_bag", c.instances_per_bag);
  read_field(j, "positive_ratio", c.positive_ratio);
  read_field(j, "d_raw", c.d_raw);
  read_field(j, "class_separation", c.class_separation);
  read_field(j, "noise_sigma", c.noise_sigma);
  read_field(j, "seed", c.seed);
  read_field(j, "layout_seed", c.layout_seed);
}

}  // namespace ins
