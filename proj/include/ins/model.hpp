#pragma once
// Network stack (encoder, projector, instance classifier, bag head and the
// momentum copies of encoder/projector) and the joint objective
//   L = L_contrastive + lambda1 * L_cls + lambda2 * L_bag
// with its analytic gradient.

#include <map>
#include <random>
#include <span>
#include <vector>

#include "ins/config.hpp"
#include "ins/iwscl.hpp"
#include "ins/nn.hpp"
#include "ins/pplg.hpp"

namespace ins {

struct ModelGrads {
  nn::MlpGrads encoder, projector, classifier, bag_head;

  nn::BlockList blocks() {
    nn::BlockList out;
    for (auto&& b : {encoder.blocks("encoder"), projector.blocks("projector"), classifier.blocks("classifier"),
                     bag_head.blocks("bag_head")})
      out.insert(out.end(), b.begin(), b.end());
    return out;
  }
};

struct ModelStack {
  nn::Mlp encoder;
  nn::Mlp projector;
  nn::Mlp classifier;
  nn::Mlp bag_head;
  nn::Mlp key_encoder;
  nn::Mlp key_projector;

  /// Glorot-initialized stack; the key branch starts as an exact copy.
  static ModelStack create(int d_raw, const TrainConfig& cfg, std::mt19937_64& rng) {
    ModelStack m;
    std::vector<int> enc{d_raw};
    enc.insert(enc.end(), cfg.encoder_dims.begin(), cfg.encoder_dims.end());
    const int h = cfg.encoder_out();
    m.encoder = nn::Mlp(enc, rng);
    m.projector = nn::Mlp({h, cfg.embed_dim, cfg.embed_dim}, rng);
    m.classifier = nn::Mlp({h, cfg.classifier_hidden, 2}, rng);
    const int pooled = cfg.bag_pool_source == BagPoolSource::projector ? cfg.embed_dim : h;
    m.bag_head = nn::Mlp({pooled, 2}, rng);
    m.key_encoder = m.encoder;
    m.key_projector = m.projector;
    return m;
  }

  int d_raw() const { return encoder.in_dim(); }
  int embed_dim() const { return projector.out_dim(); }

  /// Query-branch parameters and bag head, in ModelGrads::blocks() order.
  nn::BlockList trainable() {
    nn::BlockList out;
    for (auto&& b : {encoder.parameters("encoder"), projector.parameters("projector"),
                     classifier.parameters("classifier"), bag_head.parameters("bag_head")})
      out.insert(out.end(), b.begin(), b.end());
    return out;
  }

  ModelGrads zero_grads() const {
    return {encoder.zero_grads(), projector.zero_grads(), classifier.zero_grads(), bag_head.zero_grads()};
  }

  void momentum_update(double m) {
    nn::ema_update({encoder, key_encoder, m});
    nn::ema_update({projector, key_projector, m});
  }
};

struct QueryForward {
  nn::MlpCache enc, cls, proj;
  nn::Matrix h;       // encoder output
  nn::Matrix logits;  // instance classifier
  nn::Matrix q;       // unit-norm projector output
  nn::Vector z_norms;
};

inline QueryForward forward_query(const ModelStack& m, const nn::Matrix& x) {
  QueryForward f;
  f.h = nn::mlp_forward(m.encoder, x, &f.enc);
  f.logits = nn::mlp_forward(m.classifier, f.h, &f.cls);
  const nn::Matrix z = nn::mlp_forward(m.projector, f.h, &f.proj);
  f.q = nn::normalize_rows(z, f.z_norms);
  return f;
}

inline nn::Matrix key_embeddings(const ModelStack& m, const nn::Matrix& x) {
  nn::Vector norms;
  return nn::normalize_rows(nn::mlp_forward(m.key_projector, nn::mlp_forward(m.key_encoder, x)), norms);
}

/// Hard class prediction from a logit row; ties go to the negative class.
inline int predicted_class(const nn::Matrix& logits, Eigen::Index row) {
  return logits(row, 1) > logits(row, 0) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Bag constraint.
// ---------------------------------------------------------------------------

struct BagConstraintResult {
  double loss = 0.0;
  nn::Matrix grad_embeddings;  // per input row
  nn::MlpGrads head_grads;
  int bags = 0;
};

/// Mean-pools the rows of each bag, applies the bag head and averages the
/// cross-entropy against the bag labels over the bags present.
inline BagConstraintResult bag_constraint_loss(const nn::Matrix& embeddings, std::span<const int> bag_of_row,
                                               std::span<const int> bag_label_of_row, const nn::Mlp& bag_head) {
  const Eigen::Index n = embeddings.rows();
  if (static_cast<Eigen::Index>(bag_of_row.size()) != n || static_cast<Eigen::Index>(bag_label_of_row.size()) != n)
    throw DimensionError("bag_constraint_loss: row metadata does not match embeddings");
  BagConstraintResult r;
  r.grad_embeddings = nn::Matrix::Zero(n, embeddings.cols());
  if (n == 0) {
    r.head_grads = bag_head.zero_grads();
    return r;
  }
  // Bags in order of first appearance.
  std::map<int, int> slot_of_bag;
  std::vector<int> slot(n), count, label;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [it, fresh] = slot_of_bag.try_emplace(bag_of_row[i], static_cast<int>(count.size()));
    if (fresh) {
      count.push_back(0);
      label.push_back(bag_label_of_row[i]);
    } else if (label[it->second] != bag_label_of_row[i]) {
      throw DataError("rows of bag " + std::to_string(bag_of_row[i]) + " disagree on the bag label");
    }
    slot[i] = it->second;
    ++count[it->second];
  }
  const int nb = static_cast<int>(count.size());
  nn::Matrix pooled = nn::Matrix::Zero(nb, embeddings.cols());
  for (Eigen::Index i = 0; i < n; ++i) pooled.row(slot[i]) += embeddings.row(i);
  for (int b = 0; b < nb; ++b) pooled.row(b) /= static_cast<double>(count[b]);
  nn::Matrix target = nn::Matrix::Zero(nb, 2);
  for (int b = 0; b < nb; ++b) target(b, label[b]) = 1.0;

  nn::MlpCache cache;
  const nn::Matrix logits = nn::mlp_forward(bag_head, pooled, &cache);
  const auto xent = nn::softmax_xent(logits, target);
  auto back = nn::mlp_backward(bag_head, cache, xent.grad_logits);
  for (Eigen::Index i = 0; i < n; ++i)
    r.grad_embeddings.row(i) = back.grad_input.row(slot[i]) / static_cast<double>(count[slot[i]]);
  r.loss = xent.loss;
  r.head_grads = std::move(back.grads);
  r.bags = nb;
  return r;
}

// ---------------------------------------------------------------------------
// Joint objective.
// ---------------------------------------------------------------------------

struct LossInputs {
  std::vector<int> contrast_labels;  // class of query/key i, true negatives forced to 0
  std::vector<SoftLabel> soft_targets;
  std::vector<int> bag_of_row;
  std::vector<int> bag_label_of_row;
  bool iwscl_active = true;
};

struct LossBreakdown {
  double l_iwscl = 0.0;
  double l_cls = 0.0;
  double l_bc = 0.0;
  double total = 0.0;
  int iwscl_active = 0;
  int iwscl_skipped = 0;
};

/// Evaluates the joint loss for a forward pass; when `grads` is non-null it
/// receives the gradient with respect to every trainable parameter. Keys and
/// queue entries are constants.
inline LossBreakdown total_loss(const ModelStack& m, const QueryForward& f, const nn::Matrix& keys,
                                const EmbeddingQueue& queue, const LossInputs& in, const TrainConfig& cfg,
                                ModelGrads* grads) {
  const Eigen::Index n = f.q.rows();
  LossBreakdown out;
  nn::Matrix grad_q = nn::Matrix::Zero(n, f.q.cols());
  nn::Matrix grad_h = nn::Matrix::Zero(n, f.h.cols());

  if (in.iwscl_active) {
    auto c = iwscl_batch_loss(f.q, keys, in.contrast_labels, queue, cfg.tau, cfg.infonce_denominator);
    out.l_iwscl = c.loss;
    out.iwscl_active = c.active;
    out.iwscl_skipped = c.skipped;
    grad_q += c.grad_q;
  } else {
    out.iwscl_skipped = static_cast<int>(n);
  }

  const auto cls = instance_cls_loss(f.logits, in.soft_targets);
  out.l_cls = cls.loss;

  const bool pool_q = cfg.bag_pool_source == BagPoolSource::projector;
  auto bc = bag_constraint_loss(pool_q ? f.q : f.h, in.bag_of_row, in.bag_label_of_row, m.bag_head);
  out.l_bc = bc.loss;
  out.total = out.l_iwscl + cfg.lambda1 * out.l_cls + cfg.lambda2 * out.l_bc;
  if (!grads) return out;

  if (pool_q)
    grad_q += cfg.lambda2 * bc.grad_embeddings;
  else
    grad_h += cfg.lambda2 * bc.grad_embeddings;

  auto cls_back = nn::mlp_backward(m.classifier, f.cls, cfg.lambda1 * cls.grad_logits);
  grad_h += cls_back.grad_input;
  const nn::Matrix grad_z = nn::normalize_rows_backward(f.q, f.z_norms, grad_q);
  auto proj_back = nn::mlp_backward(m.projector, f.proj, grad_z);
  grad_h += proj_back.grad_input;
  auto enc_back = nn::mlp_backward(m.encoder, f.enc, grad_h);

  grads->encoder = std::move(enc_back.grads);
  grads->projector = std::move(proj_back.grads);
  grads->classifier = std::move(cls_back.grads);
  grads->bag_head = std::move(bc.head_grads);
  for (auto& w : grads->bag_head.weight) w *= cfg.lambda2;
  for (auto& b : grads->bag_head.bias) b *= cfg.lambda2;
  return out;
}

}  // namespace ins
