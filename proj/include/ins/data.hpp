#pragma once
// Bag/instance data model, synthetic MIL generators and the JSON-Lines
// dataset format ("ins-mil/v1").

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ins/error.hpp"

namespace ins {

struct Instance {
  std::vector<double> features;
  std::optional<int> truth_label;  // evaluation only
  int bag_index = 0;
  int index_in_bag = 0;

  bool operator==(const Instance&) const = default;
};

struct Bag {
  std::int64_t bag_id = 0;
  int label = 0;
  std::vector<Instance> instances;

  bool operator==(const Bag&) const = default;
};

struct MilDataset {
  std::vector<Bag> bags;
  int d_raw = 0;
  bool has_instance_truth = false;
  std::map<std::string, std::string> metadata;

  std::size_t num_instances() const {
    std::size_t n = 0;
    for (const auto& b : bags) n += b.instances.size();
    return n;
  }

  bool operator==(const MilDataset&) const = default;
};

struct SyntheticConfig {
  int n_pos_bags = 100;
  int n_neg_bags = 100;
  int instances_per_bag = 50;
  double positive_ratio = 0.2;
  int d_raw = 32;
  double class_separation = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  /// Seeds the class means only, so datasets drawn with different `seed`
  /// but the same layout share one underlying distribution.
  std::uint64_t layout_seed = 0;
};

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// round(positive_ratio * instances_per_bag), floored at 1.
inline int positives_per_bag(const SyntheticConfig& cfg) {
  const auto k = static_cast<int>(std::lround(cfg.positive_ratio * cfg.instances_per_bag));
  return std::max(1, k);
}

inline void validate_config(const SyntheticConfig& cfg) {
  if (cfg.n_pos_bags < 0) throw ConfigError("n_pos_bags", "must be >= 0");
  if (cfg.n_neg_bags < 0) throw ConfigError("n_neg_bags", "must be >= 0");
  if (cfg.n_pos_bags + cfg.n_neg_bags == 0) throw ConfigError("n_pos_bags", "dataset would contain zero bags");
  if (cfg.instances_per_bag < 1) throw ConfigError("instances_per_bag", "must be >= 1");
  if (!(cfg.positive_ratio > 0.0 && cfg.positive_ratio <= 1.0))
    throw ConfigError("positive_ratio", "must lie in (0, 1], got " + format_double(cfg.positive_ratio));
  if (cfg.d_raw < 1) throw ConfigError("d_raw", "must be >= 1");
  if (!(cfg.class_separation >= 0.0) || !std::isfinite(cfg.class_separation))
    throw ConfigError("class_separation", "must be finite and >= 0");
  if (!(cfg.noise_sigma > 0.0) || !std::isfinite(cfg.noise_sigma))
    throw ConfigError("noise_sigma", "must be finite and > 0");
}

namespace detail {

struct ClassMeans {
  std::vector<double> neg, pos;
};

inline ClassMeans class_means(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(cfg.layout_seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dir(cfg.d_raw);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-12);
  ClassMeans m{std::vector<double>(cfg.d_raw), std::vector<double>(cfg.d_raw)};
  for (int d = 0; d < cfg.d_raw; ++d) {
    const double u = dir[d] / norm;
    m.pos[d] = 0.5 * cfg.class_separation * u;
    m.neg[d] = -0.5 * cfg.class_separation * u;
  }
  return m;
}

inline void fill_metadata(MilDataset& ds, const SyntheticConfig& cfg, const std::string& generator) {
  ds.metadata["generator"] = generator;
  ds.metadata["n_pos_bags"] = std::to_string(cfg.n_pos_bags);
  ds.metadata["n_neg_bags"] = std::to_string(cfg.n_neg_bags);
  ds.metadata["instances_per_bag"] = std::to_string(cfg.instances_per_bag);
  ds.metadata["positive_ratio"] = format_double(cfg.positive_ratio);
  ds.metadata["d_raw"] = std::to_string(cfg.d_raw);
  ds.metadata["class_separation"] = format_double(cfg.class_separation);
  ds.metadata["noise_sigma"] = format_double(cfg.noise_sigma);
  ds.metadata["seed"] = std::to_string(cfg.seed);
  ds.metadata["layout_seed"] = std::to_string(cfg.layout_seed);
}

// Builds bags given, for each positive bag, which instance slots are positive.
template <typename PositiveSlots>
MilDataset generate(const SyntheticConfig& cfg, PositiveSlots&& positive_slots) {
  const ClassMeans means = class_means(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  MilDataset ds;
  ds.d_raw = cfg.d_raw;
  ds.has_instance_truth = true;
  const int n_bags = cfg.n_pos_bags + cfg.n_neg_bags;
  for (int b = 0; b < n_bags; ++b) {
    Bag bag;
    bag.bag_id = b;
    bag.label = b < cfg.n_pos_bags ? 1 : 0;
    std::vector<char> positive(cfg.instances_per_bag, 0);
    if (bag.label == 1) {
      for (int slot : positive_slots(rng)) positive[slot] = 1;
    }
    for (int j = 0; j < cfg.instances_per_bag; ++j) {
      Instance inst;
      inst.bag_index = b;
      inst.index_in_bag = j;
      inst.truth_label = positive[j];
      const auto& mean = positive[j] ? means.pos : means.neg;
      inst.features.resize(cfg.d_raw);
      for (int d = 0; d < cfg.d_raw; ++d) inst.features[d] = mean[d] + noise(rng);
      bag.instances.push_back(std::move(inst));
    }
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

}  // namespace detail

/// Gaussian class-conditional MIL bags. Positive bags hold exactly
/// positives_per_bag(cfg) positive instances at random slots.
inline MilDataset generate_gaussian_mil(const SyntheticConfig& cfg) {
  validate_config(cfg);
  const int k = positives_per_bag(cfg);
  if (k > cfg.instances_per_bag) throw ConfigError("positive_ratio", "more positives than instances per bag");
  MilDataset ds = detail::generate(cfg, [&](std::mt19937_64& rng) {
    std::vector<int> slots(cfg.instances_per_bag);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(k);
    return slots;
  });
  detail::fill_metadata(ds, cfg, "gaussian");
  return ds;
}

/// Side length of the square block holding `k` positives on a grid.
inline int grid_block_side(int k) {
  int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
  while (side * side < k) ++side;
  while (side > 1 && (side - 1) * (side - 1) >= k) --side;
  return side;
}

/// Spatial variant: instances tile a grid_side x grid_side grid (row-major)
/// and the positives of each positive bag fill a square block at a random
/// location. When the positive count is not a perfect square the block is
/// filled row-major and its last row is partial.
inline MilDataset generate_grid_mil(const SyntheticConfig& cfg, int grid_side) {
  if (grid_side < 1) throw ConfigError("grid_side", "must be >= 1");
  if (cfg.instances_per_bag != grid_side * grid_side)
    throw ConfigError("instances_per_bag", "must equal grid_side^2 = " + std::to_string(grid_side * grid_side));
  validate_config(cfg);
  const int k = positives_per_bag(cfg);
  const int side = grid_block_side(k);
  if (side > grid_side) throw ConfigError("positive_ratio", "positive block does not fit on the grid");
  MilDataset ds = detail::generate(cfg, [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pos(0, grid_side - side);
    const int r0 = pos(rng);
    const int c0 = pos(rng);
    std::vector<int> slots;
    for (int i = 0; i < k; ++i) slots.push_back((r0 + i / side) * grid_side + c0 + i % side);
    return slots;
  });
  detail::fill_metadata(ds, cfg, "grid");
  ds.metadata["grid_side"] = std::to_string(grid_side);
  return ds;
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

struct Violation {
  std::int64_t bag_id = -1;  // -1 for dataset-level rules
  std::string rule;
  std::string message;
};

inline std::vector<Violation> validate_dataset(const MilDataset& ds) {
  std::vector<Violation> out;
  bool all_truth = true;
  for (const auto& bag : ds.bags) {
    const auto id = bag.bag_id;
    if (bag.label != 0 && bag.label != 1)
      out.push_back({id, "label-range", "bag label must be 0 or 1, got " + std::to_string(bag.label)});
    if (bag.instances.empty()) out.push_back({id, "non-empty", "bag has no instances"});
    bool bag_truth = !bag.instances.empty();
    int n_pos = 0;
    for (const auto& inst : bag.instances) {
      if (static_cast<int>(inst.features.size()) != ds.d_raw)
        out.push_back({id, "feature-length", "instance " + std::to_string(inst.index_in_bag) + " has " +
                                                 std::to_string(inst.features.size()) + " features, expected " +
                                                 std::to_string(ds.d_raw)});
      if (!inst.truth_label) {
        bag_truth = false;
        continue;
      }
      if (*inst.truth_label != 0 && *inst.truth_label != 1)
        out.push_back({id, "truth-range", "truth label must be 0 or 1"});
      n_pos += *inst.truth_label == 1;
    }
    all_truth = all_truth && bag_truth;
    if (bag.label == 0 && n_pos > 0)
      out.push_back({id, "bag-label-rule", "negative bag contains " + std::to_string(n_pos) + " positive instance(s)"});
    if (bag.label == 1 && bag_truth && n_pos == 0)
      out.push_back({id, "bag-label-rule", "positive bag has no positive instance"});
  }
  if (ds.has_instance_truth != all_truth)
    out.push_back({-1, "truth-flag", ds.has_instance_truth ? "has_instance_truth set but some truth labels missing"
                                                           : "every instance carries truth but has_instance_truth is false"});
  return out;
}

/// Copy with every instance truth label removed.
inline MilDataset strip_truth(MilDataset ds) {
  for (auto& bag : ds.bags)
    for (auto& inst : bag.instances) inst.truth_label.reset();
  ds.has_instance_truth = false;
  return ds;
}

/// Truth labels flattened in bag-major instance order.
inline std::vector<int> flatten_truth(const MilDataset& ds) {
  if (!ds.has_instance_truth) throw UsageError("dataset carries no instance truth labels");
  std::vector<int> out;
  out.reserve(ds.num_instances());
  for (const auto& bag : ds.bags)
    for (const auto& inst : bag.instances) out.push_back(*inst.truth_label);
  return out;
}

// ---------------------------------------------------------------------------
// JSON-Lines persistence.
// ---------------------------------------------------------------------------

inline constexpr const char* kDatasetSchema = "ins-mil/v1";

inline void save_dataset(const MilDataset& ds, std::ostream& os) {
  nlohmann::json header = {{"schema", kDatasetSchema}, {"d_raw", ds.d_raw}};
  if (!ds.metadata.empty()) header["metadata"] = ds.metadata;
  os << header.dump() << '\n';
  for (const auto& bag : ds.bags) {
    nlohmann::json line;
    line["bag_id"] = bag.bag_id;
    line["label"] = bag.label;
    auto instances = nlohmann::json::array();
    bool truth = !bag.instances.empty();
    for (const auto& inst : bag.instances) {
      instances.push_back(inst.features);
      truth = truth && inst.truth_label.has_value();
    }
    line["instances"] = std::move(instances);
    if (truth) {
      auto t = nlohmann::json::array();
      for (const auto& inst : bag.instances) t.push_back(*inst.truth_label);
      line["truth"] = std::move(t);
    } else {
      line["truth"] = nullptr;
    }
    os << line.dump() << '\n';
  }
}

inline void save_dataset(const MilDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  save_dataset(ds, os);
  if (!os) throw Error("failed writing " + path);
}

struct LoadOptions {
  /// Drop instance truth labels so that downstream training is weakly supervised.
  bool strip_truth = false;
};

inline MilDataset load_dataset(std::istream& is, LoadOptions opts = {}) {
  MilDataset ds;
  std::string line;
  std::size_t record = 0;
  bool have_header = false;
  bool all_truth = true;
  while (std::getline(is, line)) {
    ++record;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(record, std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        if (!j.is_object() || j.value("schema", std::string{}) != kDatasetSchema)
          throw ParseError(record, std::string("expected header with schema ") + kDatasetSchema);
        ds.d_raw = j.at("d_raw").get<int>();
        if (ds.d_raw < 1) throw SchemaError("d_raw must be >= 1");
        if (j.contains("metadata")) ds.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
        have_header = true;
        continue;
      }
      Bag bag;
      bag.bag_id = j.at("bag_id").get<std::int64_t>();
      bag.label = j.at("label").get<int>();
      if (bag.label != 0 && bag.label != 1)
        throw SchemaError("bag " + std::to_string(bag.bag_id) + ": label must be 0 or 1");
      const auto& inst_json = j.at("instances");
      if (!inst_json.is_array() || inst_json.empty())
        throw SchemaError("bag " + std::to_string(bag.bag_id) + ": instances must be a non-empty array");
      const auto& truth_json = j.at("truth");
      if (!truth_json.is_null() && (!truth_json.is_array() || truth_json.size() != inst_json.size()))
        throw SchemaError("bag " + std::to_string(bag.bag_id) + ": truth must be null or one label per instance");
      const int bag_index = static_cast<int>(ds.bags.size());
      int n_pos = 0;
      for (std::size_t k = 0; k < inst_json.size(); ++k) {
        Instance inst;
        inst.features = inst_json[k].get<std::vector<double>>();
        if (static_cast<int>(inst.features.size()) != ds.d_raw)
          throw SchemaError("bag " + std::to_string(bag.bag_id) + " instance " + std::to_string(k) + ": " +
                            std::to_string(inst.features.size()) + " features, header declares d_raw=" +
                            std::to_string(ds.d_raw));
        inst.bag_index = bag_index;
        inst.index_in_bag = static_cast<int>(k);
        if (!truth_json.is_null()) {
          const int t = truth_json[k].get<int>();
          if (t != 0 && t != 1) throw SchemaError("bag " + std::to_string(bag.bag_id) + ": truth labels must be 0 or 1");
          n_pos += t;
          if (!opts.strip_truth) inst.truth_label = t;
        }
        bag.instances.push_back(std::move(inst));
      }
      if (!truth_json.is_null()) {
        if (bag.label == 0 && n_pos > 0)
          throw SchemaError("bag " + std::to_string(bag.bag_id) +
                            " violates the bag-label rule: labeled 0 but contains a positive instance");
        if (bag.label == 1 && n_pos == 0)
          throw SchemaError("bag " + std::to_string(bag.bag_id) +
                            " violates the bag-label rule: labeled 1 but has no positive instance");
      }
      all_truth = all_truth && !truth_json.is_null();
      ds.bags.push_back(std::move(bag));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(record, e.what());
    }
  }
  if (!have_header) throw ParseError(record + 1, "missing header line");
  ds.has_instance_truth = !opts.strip_truth && all_truth && !ds.bags.empty();
  return ds;
}

inline MilDataset load_dataset(const std::string& path, LoadOptions opts = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset " + path);
  return load_dataset(is, opts);
}

}  // namespace ins
