#pragma once
// Finite-difference check of the joint objective on a micro-batch: two bags
// of two instances, 4-d inputs, 8-d embeddings and a queue holding keys of
// both classes. Only query-branch parameters and the bag head are perturbed;
// keys and queue entries stay fixed.

#include <cstdint>
#include <random>

#include "ins/config.hpp"
#include "ins/model.hpp"
#include "ins/nn.hpp"

namespace ins {

struct MicroProblem {
  TrainConfig cfg;
  ModelStack models;
  nn::Matrix x;     // query-view inputs
  nn::Matrix keys;  // key embeddings (constant)
  EmbeddingQueue queue;
  LossInputs inputs;
};

inline MicroProblem micro_problem(std::uint64_t seed = 7) {
  MicroProblem p;
  p.cfg.embed_dim = 8;
  p.cfg.encoder_dims = {6, 5};
  p.cfg.classifier_hidden = 4;
  p.cfg.queue_capacity = 6;
  p.cfg.seed = seed;
  std::mt19937_64 rng(seed);
  constexpr int d_raw = 4;
  p.models = ModelStack::create(d_raw, p.cfg, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Nonzero biases keep every relu row alive and away from the kink.
  for (auto* net : {&p.models.encoder, &p.models.projector, &p.models.classifier, &p.models.bag_head})
    for (std::size_t l = 0; l < net->num_layers(); ++l)
      for (auto& b : net->layer(l).bias) b = 0.5 * gauss(rng);
  p.models.key_encoder = p.models.encoder;
  p.models.key_projector = p.models.projector;
  p.x.resize(4, d_raw);
  for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = gauss(rng);
  nn::Matrix kx(4, d_raw);
  for (Eigen::Index i = 0; i < kx.size(); ++i) kx.data()[i] = p.x.data()[i] + 0.1 * gauss(rng);
  p.keys = key_embeddings(p.models, kx);

  p.queue = EmbeddingQueue(static_cast<std::size_t>(p.cfg.queue_capacity), p.cfg.embed_dim);
  for (int e = 0; e < p.cfg.queue_capacity; ++e) {
    nn::Vector v(p.cfg.embed_dim);
    for (auto& c : v) c = gauss(rng);
    p.queue.enqueue(v.normalized(), e % 2, e == 0);
  }

  // Rows 0-1 from a positive bag, rows 2-3 from a negative bag.
  p.inputs.contrast_labels = {1, 0, 0, 0};
  p.inputs.soft_targets = {{0.3, 0.7}, {0.6, 0.4}, {1.0, 0.0}, {1.0, 0.0}};
  p.inputs.bag_of_row = {0, 0, 1, 1};
  p.inputs.bag_label_of_row = {1, 1, 0, 0};
  p.inputs.iwscl_active = true;
  return p;
}

inline double micro_loss(const MicroProblem& p, ModelGrads* grads = nullptr) {
  const QueryForward f = forward_query(p.models, p.x);
  return total_loss(p.models, f, p.keys, p.queue, p.inputs, p.cfg, grads).total;
}

/// `corrupt` scales the analytic encoder gradient by 1.01 as a negative
/// control.
inline nn::GradcheckReport micro_gradcheck(std::uint64_t seed = 7, bool corrupt = false,
                                           nn::GradcheckOptions opts = {}) {
  MicroProblem p = micro_problem(seed);
  ModelGrads g;
  micro_loss(p, &g);
  if (corrupt)
    for (auto& w : g.encoder.weight) w *= 1.01;
  return nn::gradcheck([&] { return micro_loss(p); }, p.models.trainable(), g.blocks(), opts);
}

}  // namespace ins
