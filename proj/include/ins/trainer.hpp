#pragma once
// Joint training loop: augmented query/key views, contrastive term over the
// batch and queue, prototype pseudo-labels, bag constraint, SGD on the query
// branch, momentum update of the key branch and queue refresh.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ins/config.hpp"
#include "ins/data.hpp"
#include "ins/metrics.hpp"
#include "ins/model.hpp"

namespace ins {

/// Two independently augmented views: additive Gaussian noise plus random
/// coordinate dropout.
inline std::pair<nn::Vector, nn::Vector> augment_views(std::span<const double> x, std::mt19937_64& rng,
                                                       double noise_sigma, double dropout_p) {
  auto one_view = [&] {
    nn::Vector v(static_cast<Eigen::Index>(x.size()));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
    for (std::size_t d = 0; d < x.size(); ++d) {
      const bool drop = dropout_p > 0.0 && unit(rng) < dropout_p;
      const double e = noise_sigma > 0.0 ? noise(rng) : 0.0;
      v(static_cast<Eigen::Index>(d)) = drop ? 0.0 : x[d] + e;
    }
    return v;
  };
  nn::Vector q = one_view();
  nn::Vector k = one_view();
  return {std::move(q), std::move(k)};
}

/// Training view of a dataset: features, bag structure and bag labels.
/// Instance truth labels are deliberately not carried.
struct TrainingSet {
  int d_raw = 0;
  nn::Matrix features;                   // one row per instance, bag-major
  std::vector<int> bag_of_instance;
  std::vector<int> bag_labels;
  std::vector<std::vector<int>> bag_members;

  static TrainingSet from(const MilDataset& ds) {
    TrainingSet t;
    t.d_raw = ds.d_raw;
    t.features.resize(static_cast<Eigen::Index>(ds.num_instances()), ds.d_raw);
    int row = 0;
    for (std::size_t b = 0; b < ds.bags.size(); ++b) {
      const auto& bag = ds.bags[b];
      if (bag.instances.empty()) throw DataError("bag " + std::to_string(bag.bag_id) + " is empty");
      t.bag_labels.push_back(bag.label);
      t.bag_members.emplace_back();
      for (const auto& inst : bag.instances) {
        if (static_cast<int>(inst.features.size()) != ds.d_raw)
          throw DimensionError("instance feature length differs from d_raw");
        for (int d = 0; d < ds.d_raw; ++d) t.features(row, d) = inst.features[d];
        t.bag_of_instance.push_back(static_cast<int>(b));
        t.bag_members.back().push_back(row);
        ++row;
      }
    }
    return t;
  }

  std::size_t size() const { return bag_of_instance.size(); }
  bool from_negative_bag(int id) const { return bag_labels[bag_of_instance[id]] == 0; }
};

struct StepMetrics {
  int epoch = 0;
  bool warmup = false;
  double l_iwscl = 0.0;
  double l_cls = 0.0;
  double l_bc = 0.0;
  double total = 0.0;
  int iwscl_active = 0;
  int iwscl_skipped = 0;
  int pplg_skipped = 0;
};

struct EpochMetrics {
  int epoch = 0;
  bool warmup = false;
  double l_iwscl = 0.0;
  double l_cls = 0.0;
  double l_bc = 0.0;
  double total = 0.0;
  double l_bc_full = 0.0;  // bag constraint over complete bags, no augmentation
  std::optional<double> pseudo_auc;
  long iwscl_skipped = 0;
  long pplg_skipped = 0;
  int steps = 0;
};

struct TrainState {
  TrainConfig cfg;
  ModelStack models;
  EmbeddingQueue queue;
  PrototypeBank bank;
  PseudoLabelStore labels;
  nn::SgdMomentum optimizer;
  std::mt19937_64 rng;
  int epoch = 0;
  std::vector<EpochMetrics> history;
  std::vector<StepMetrics> steps;
};

/// Fresh state for a dataset: seeded weights, empty queue, uninitialized
/// prototypes and initial soft labels.
inline TrainState init_state(const TrainingSet& data, const TrainConfig& cfg) {
  validate(cfg);
  TrainState s;
  s.cfg = cfg;
  s.rng.seed(cfg.seed);
  s.models = ModelStack::create(data.d_raw, cfg, s.rng);
  s.queue = EmbeddingQueue(static_cast<std::size_t>(cfg.queue_capacity), cfg.embed_dim);
  s.bank = PrototypeBank(cfg.embed_dim, cfg.beta);
  std::vector<char> negative(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) negative[i] = data.from_negative_bag(static_cast<int>(i));
  s.labels = PseudoLabelStore(cfg.alpha, std::move(negative), cfg.positive_bag_prior);
  s.optimizer.learning_rate = cfg.lr;
  s.optimizer.momentum = cfg.sgd_momentum;
  return s;
}

class Trainer {
 public:
  Trainer(const MilDataset& ds, const TrainConfig& cfg)
      : data_(TrainingSet::from(ds)), state_(init_state(data_, cfg)) {}

  /// Resumes from a restored state (e.g. a checkpoint).
  Trainer(const MilDataset& ds, TrainState state) : data_(TrainingSet::from(ds)), state_(std::move(state)) {
    validate(state_.cfg);
    if (state_.models.d_raw() != data_.d_raw)
      throw DimensionError("checkpoint encoder expects d_raw=" + std::to_string(state_.models.d_raw()) +
                           ", dataset has " + std::to_string(data_.d_raw));
    if (state_.labels.size() != data_.size())
      throw DimensionError("checkpoint holds pseudo labels for " + std::to_string(state_.labels.size()) +
                           " instances, dataset has " + std::to_string(data_.size()));
  }

  /// Instance truth used only to report pseudo-label AUC per epoch.
  void set_monitor_truth(std::vector<int> truth) {
    if (truth.size() != data_.size()) throw DimensionError("monitor truth length differs from instance count");
    monitor_truth_ = std::move(truth);
  }

  TrainState& state() noexcept { return state_; }
  const TrainState& state() const noexcept { return state_; }
  const TrainingSet& data() const noexcept { return data_; }
  bool in_warmup() const { return state_.epoch < state_.cfg.warmup_epochs; }
  bool done() const { return state_.epoch >= state_.cfg.epochs; }

  StepMetrics train_step(std::span<const int> batch) {
    auto& s = state_;
    const auto& cfg = s.cfg;
    const auto n = static_cast<Eigen::Index>(batch.size());
    const bool warm = in_warmup();

    nn::Matrix xq(n, data_.d_raw), xk(n, data_.d_raw);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = data_.features.row(batch[i]);
      auto [vq, vk] = augment_views({row.data(), static_cast<std::size_t>(row.size())}, s.rng, cfg.aug_noise_sigma,
                                    cfg.aug_dropout_p);
      xq.row(i) = vq.transpose();
      xk.row(i) = vk.transpose();
    }
    const QueryForward fwd = forward_query(s.models, xq);
    const nn::Matrix keys = key_embeddings(s.models, xk);

    LossInputs in;
    std::vector<int> predicted(n);
    std::vector<char> negative(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      predicted[i] = predicted_class(fwd.logits, i);
      negative[i] = data_.from_negative_bag(batch[i]) ? 1 : 0;
      in.contrast_labels.push_back(negative[i] ? 0 : predicted[i]);
      in.bag_of_row.push_back(data_.bag_of_instance[batch[i]]);
      in.bag_label_of_row.push_back(data_.bag_labels[data_.bag_of_instance[batch[i]]]);
    }

    StepMetrics sm;
    sm.epoch = s.epoch;
    sm.warmup = warm;
    if (!warm) {
      // Pseudo labels use the prototypes from before this batch.
      for (Eigen::Index i = 0; i < n; ++i) {
        if (negative[i])
          s.labels.assign_negative_label(batch[i]);
        else if (!s.labels.generate_pseudo_label(batch[i], fwd.q.row(i).transpose(), s.bank))
          ++sm.pplg_skipped;
      }
      for (Eigen::Index i = 0; i < n; ++i) s.bank.update(fwd.q.row(i).transpose(), predicted[i], negative[i]);
    }
    for (Eigen::Index i = 0; i < n; ++i) in.soft_targets.push_back(s.labels[batch[i]]);
    in.iwscl_active = cfg.use_iwscl && (!warm || cfg.iwscl_during_warmup);

    ModelGrads grads;
    const LossBreakdown loss = total_loss(s.models, fwd, keys, s.queue, in, cfg, &grads);
    if (!std::isfinite(loss.total)) throw NumericalError(dump_batch(batch, loss));

    s.optimizer.step(s.models.trainable(), grads.blocks());
    s.models.momentum_update(cfg.ema_m);
    for (Eigen::Index i = 0; i < n; ++i) s.queue.enqueue(keys.row(i).transpose(), in.contrast_labels[i], negative[i]);

    sm.l_iwscl = loss.l_iwscl;
    sm.l_cls = loss.l_cls;
    sm.l_bc = loss.l_bc;
    sm.total = loss.total;
    sm.iwscl_active = loss.iwscl_active;
    sm.iwscl_skipped = loss.iwscl_skipped;
    s.steps.push_back(sm);
    return sm;
  }

  EpochMetrics run_epoch() {
    auto& s = state_;
    if (done()) throw UsageError("training already ran all " + std::to_string(s.cfg.epochs) + " epochs");
    EpochMetrics em;
    em.epoch = s.epoch;
    em.warmup = in_warmup();
    std::vector<int> order(data_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), s.rng);
    const std::size_t bs = static_cast<std::size_t>(s.cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      const auto sm = train_step(std::span<const int>(order).subspan(start, len));
      em.l_iwscl += sm.l_iwscl;
      em.l_cls += sm.l_cls;
      em.l_bc += sm.l_bc;
      em.total += sm.total;
      em.iwscl_skipped += sm.iwscl_skipped;
      em.pplg_skipped += sm.pplg_skipped;
      ++em.steps;
    }
    if (em.steps > 0) {
      em.l_iwscl /= em.steps;
      em.l_cls /= em.steps;
      em.l_bc /= em.steps;
      em.total /= em.steps;
    }
    em.l_bc_full = full_bag_constraint();
    if (monitor_truth_) {
      std::vector<double> s1;
      s1.reserve(s.labels.size());
      for (const auto& l : s.labels.labels()) s1.push_back(l[1]);
      em.pseudo_auc = roc_auc(s1, *monitor_truth_).auc;
    }
    ++s.epoch;
    s.history.push_back(em);
    return em;
  }

  void fit() {
    while (!done()) run_epoch();
  }

  /// Bag constraint over every complete bag, query branch, no augmentation.
  double full_bag_constraint() const {
    const auto fwd = forward_query(state_.models, data_.features);
    std::vector<int> labels(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) labels[i] = data_.bag_labels[data_.bag_of_instance[i]];
    const bool pool_q = state_.cfg.bag_pool_source == BagPoolSource::projector;
    return bag_constraint_loss(pool_q ? fwd.q : fwd.h, data_.bag_of_instance, labels, state_.models.bag_head).loss;
  }

 private:
  std::string dump_batch(std::span<const int> batch, const LossBreakdown& loss) const {
    std::ostringstream os;
    os << "non-finite loss at epoch " << state_.epoch << " (iwscl=" << loss.l_iwscl << " cls=" << loss.l_cls
       << " bc=" << loss.l_bc << "); batch instances:";
    for (int id : batch) os << ' ' << id;
    return os.str();
  }

  TrainingSet data_;
  TrainState state_;
  std::optional<std::vector<int>> monitor_truth_;
};

struct FitResult {
  TrainState state;
  std::vector<EpochMetrics> history;
};

/// Trains from scratch. `monitor_truth`, when given, only feeds the
/// per-epoch pseudo-label AUC report.
inline FitResult fit(const MilDataset& ds, const TrainConfig& cfg, const std::vector<int>* monitor_truth = nullptr) {
  validate(cfg);
  Trainer t(ds, cfg);
  if (monitor_truth) t.set_monitor_truth(*monitor_truth);
  t.fit();
  FitResult r{std::move(t.state()), {}};
  r.history = r.state.history;
  return r;
}

}  // namespace ins
