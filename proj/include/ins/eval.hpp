#pragma once
// Instance and bag evaluation, pseudo-label quality and score-map export.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ins/data.hpp"
#include "ins/metrics.hpp"
#include "ins/model.hpp"
#include "ins/pplg.hpp"
#include "ins/trainer.hpp"

namespace ins {

/// Positive-class probability for every instance (bag-major order), query
/// branch, no augmentation.
inline std::vector<double> predict_instances(const ModelStack& m, const MilDataset& ds) {
  if (ds.d_raw != m.d_raw())
    throw DimensionError("model expects d_raw=" + std::to_string(m.d_raw()) + ", dataset has " +
                         std::to_string(ds.d_raw));
  const auto data = TrainingSet::from(ds);
  std::vector<double> out;
  out.reserve(data.size());
  constexpr Eigen::Index kChunk = 1024;
  for (Eigen::Index start = 0; start < data.features.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, data.features.rows() - start);
    const nn::Matrix logits = nn::mlp_forward(m.classifier, nn::mlp_forward(m.encoder, data.features.middleRows(start, len)));
    const nn::Matrix p = nn::softmax_rows(logits);
    for (Eigen::Index i = 0; i < len; ++i) out.push_back(p(i, 1));
  }
  return out;
}

inline std::vector<double> predict_instances(const TrainState& s, const MilDataset& ds) {
  return predict_instances(s.models, ds);
}

struct BagScore {
  std::int64_t bag_id = 0;
  double score = 0.0;
  int label = 0;
};

/// Mean pooling of instance probabilities; a bag is predicted positive when
/// its score is >= 0.5.
inline std::vector<BagScore> predict_bags(std::span<const double> instance_probs, const MilDataset& ds) {
  if (instance_probs.size() != ds.num_instances())
    throw DimensionError("predict_bags: " + std::to_string(instance_probs.size()) + " probabilities for " +
                         std::to_string(ds.num_instances()) + " instances");
  std::vector<BagScore> out;
  std::size_t offset = 0;
  for (const auto& bag : ds.bags) {
    if (bag.instances.empty()) throw DataError("bag " + std::to_string(bag.bag_id) + " has no instances");
    double sum = 0.0;
    for (std::size_t j = 0; j < bag.instances.size(); ++j) sum += instance_probs[offset + j];
    offset += bag.instances.size();
    out.push_back({bag.bag_id, sum / static_cast<double>(bag.instances.size()), bag.label});
  }
  return out;
}

/// AUC of the positive soft-label component against instance truth.
inline double pseudo_label_quality(const PseudoLabelStore& store, std::span<const int> truth,
                                   bool restrict_to_positive_bags = false) {
  if (truth.size() != store.size()) throw DimensionError("pseudo_label_quality: truth length mismatch");
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (restrict_to_positive_bags && store.from_negative_bag(i)) continue;
    scores.push_back(store[i][1]);
    labels.push_back(truth[i]);
  }
  return roc_auc(scores, labels).auc;
}

struct EvalReport {
  std::optional<RocResult> instance;
  RocResult bag;
  std::vector<BagScore> per_bag;
};

struct EvalOptions {
  /// Instance AUC over positive-bag instances only.
  bool restrict_to_positive_bags = false;
};

inline EvalReport evaluate(const ModelStack& m, const MilDataset& ds, EvalOptions opts = {}) {
  const auto probs = predict_instances(m, ds);
  EvalReport rep;
  rep.per_bag = predict_bags(probs, ds);
  std::vector<double> bag_scores;
  std::vector<int> bag_labels;
  for (const auto& b : rep.per_bag) {
    bag_scores.push_back(b.score);
    bag_labels.push_back(b.label);
  }
  rep.bag = roc_auc(bag_scores, bag_labels);
  if (ds.has_instance_truth) {
    std::vector<double> s;
    std::vector<int> t;
    std::size_t offset = 0;
    for (const auto& bag : ds.bags) {
      for (std::size_t j = 0; j < bag.instances.size(); ++j) {
        if (!opts.restrict_to_positive_bags || bag.label == 1) {
          s.push_back(probs[offset + j]);
          t.push_back(*bag.instances[j].truth_label);
        }
      }
      offset += bag.instances.size();
    }
    rep.instance = roc_auc(s, t);
  }
  return rep;
}

inline void to_json(nlohmann::json& j, const RocResult& r) {
  j = {{"auc", r.auc}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}, {"threshold_accuracy", r.threshold_accuracy}};
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["instance"] = r.instance ? nlohmann::json(*r.instance) : nlohmann::json(nullptr);
  j["bag"] = r.bag;
  auto bags = nlohmann::json::array();
  for (const auto& b : r.per_bag) bags.push_back({{"bag_id", b.bag_id}, {"score", b.score}, {"label", b.label}});
  j["per_bag_scores"] = std::move(bags);
}

// ---------------------------------------------------------------------------
// Score maps for grid datasets.
// ---------------------------------------------------------------------------

/// White (p = 0) to dark red (p = 1).
inline std::string colormap(double p) {
  p = std::clamp(p, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 - 100.0 * p));
  const int gb = static_cast<int>(std::lround(255.0 * (1.0 - p)));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, gb, gb);
  return buf;
}

struct Segment {
  int x1, y1, x2, y2;  // grid-unit coordinates
  bool operator==(const Segment&) const = default;
};

/// Unit edges separating truth-positive cells from the rest of the grid.
inline std::vector<Segment> truth_outline(const Bag& bag, int side) {
  auto truth = [&](int r, int c) {
    if (r < 0 || c < 0 || r >= side || c >= side) return false;
    const auto& t = bag.instances[static_cast<std::size_t>(r * side + c)].truth_label;
    return t && *t == 1;
  };
  std::vector<Segment> out;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (!truth(r, c)) continue;
      if (!truth(r - 1, c)) out.push_back({c, r, c + 1, r});
      if (!truth(r + 1, c)) out.push_back({c, r + 1, c + 1, r + 1});
      if (!truth(r, c - 1)) out.push_back({c, r, c, r + 1});
      if (!truth(r, c + 1)) out.push_back({c + 1, r, c + 1, r + 1});
    }
  return out;
}

inline int grid_side_of(const MilDataset& ds) {
  const auto it = ds.metadata.find("grid_side");
  if (it == ds.metadata.end()) throw UsageError("score maps need a grid dataset (no grid_side in metadata)");
  const int side = std::stoi(it->second);
  for (const auto& bag : ds.bags)
    if (static_cast<int>(bag.instances.size()) != side * side)
      throw UsageError("bag " + std::to_string(bag.bag_id) + " does not tile a " + it->second + "x" + it->second +
                       " grid");
  return side;
}

/// Writes bag_<id>.csv (row,col,probability[,truth]) and bag_<id>.svg per
/// bag into `dir`. Returns the written paths.
inline std::vector<std::filesystem::path> export_score_map(const MilDataset& ds, std::span<const double> probs,
                                                           const std::filesystem::path& dir) {
  const int side = grid_side_of(ds);
  if (probs.size() != ds.num_instances()) throw DimensionError("export_score_map: probability count mismatch");
  std::filesystem::create_directories(dir);
  constexpr int kCell = 20;
  std::vector<std::filesystem::path> written;
  std::size_t offset = 0;
  for (const auto& bag : ds.bags) {
    const bool truth = std::all_of(bag.instances.begin(), bag.instances.end(),
                                   [](const Instance& i) { return i.truth_label.has_value(); });
    const auto stem = dir / ("bag_" + std::to_string(bag.bag_id));
    {
      std::ofstream csv(stem.string() + ".csv");
      csv << "row,col,probability" << (truth ? ",truth" : "") << '\n';
      for (int idx = 0; idx < side * side; ++idx) {
        csv << idx / side << ',' << idx % side << ',' << format_double(probs[offset + idx]);
        if (truth) csv << ',' << *bag.instances[idx].truth_label;
        csv << '\n';
      }
      written.push_back(stem.string() + ".csv");
    }
    {
      std::ofstream svg(stem.string() + ".svg");
      const int px = side * kCell;
      svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px << "\" height=\"" << px
          << "\" viewBox=\"0 0 " << px << ' ' << px << "\">\n";
      for (int idx = 0; idx < side * side; ++idx) {
        svg << "  <rect class=\"cell\" x=\"" << (idx % side) * kCell << "\" y=\"" << (idx / side) * kCell
            << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\"" << colormap(probs[offset + idx])
            << "\"/>\n";
      }
      if (truth) {
        for (const auto& s : truth_outline(bag, side))
          svg << "  <line class=\"truth-outline\" x1=\"" << s.x1 * kCell << "\" y1=\"" << s.y1 * kCell
              << "\" x2=\"" << s.x2 * kCell << "\" y2=\"" << s.y2 * kCell
              << "\" stroke=\"#1f4eb4\" stroke-width=\"2\"/>\n";
      }
      svg << "</svg>\n";
      written.push_back(stem.string() + ".svg");
    }
    offset += bag.instances.size();
  }
  return written;
}

}  // namespace ins
