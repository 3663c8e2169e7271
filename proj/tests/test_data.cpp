#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "ins/data.hpp"

using namespace ins;

namespace {

SyntheticConfig small_cfg() {
  SyntheticConfig c;
  c.n_pos_bags = 1;
  c.n_neg_bags = 1;
  c.instances_per_bag = 10;
  c.positive_ratio = 0.2;
  c.d_raw = 4;
  c.class_separation = 4.0;
  c.noise_sigma = 1.0;
  c.seed = 7;
  return c;
}

int count_pos(const Bag& b) {
  int n = 0;
  for (const auto& i : b.instances) n += *i.truth_label;
  return n;
}

std::string to_text(const MilDataset& ds) {
  std::ostringstream os;
  save_dataset(ds, os);
  return os.str();
}

}  // namespace

TEST(GenerateGaussian, SmallConfig) {
  const auto ds = generate_gaussian_mil(small_cfg());
  ASSERT_EQ(ds.bags.size(), 2u);
  EXPECT_EQ(ds.d_raw, 4);
  EXPECT_TRUE(ds.has_instance_truth);
  int pos_bags = 0;
  for (const auto& b : ds.bags) {
    EXPECT_EQ(b.instances.size(), 10u);
    if (b.label == 1) {
      ++pos_bags;
      EXPECT_EQ(count_pos(b), 2);
    } else {
      EXPECT_EQ(count_pos(b), 0);
    }
  }
  EXPECT_EQ(pos_bags, 1);
  EXPECT_TRUE(validate_dataset(ds).empty());
}

TEST(GenerateGaussian, FivePercentOfHundred) {
  auto c = small_cfg();
  c.n_pos_bags = 4;
  c.positive_ratio = 0.05;
  c.instances_per_bag = 100;
  const auto ds = generate_gaussian_mil(c);
  for (const auto& b : ds.bags)
    if (b.label == 1) {
      EXPECT_EQ(count_pos(b), 5);
    }
}

TEST(GenerateGaussian, DeterministicBytes) {
  EXPECT_EQ(to_text(generate_gaussian_mil(small_cfg())), to_text(generate_gaussian_mil(small_cfg())));
  auto other = small_cfg();
  other.seed = 8;
  EXPECT_NE(to_text(generate_gaussian_mil(small_cfg())), to_text(generate_gaussian_mil(other)));
}

TEST(GenerateGaussian, MeanSeparationMatchesConfig) {
  // Empirical class means over many instances land near the configured
  // separation (sampling error ~ sigma*sqrt(2*d/n)).
  auto c = small_cfg();
  c.n_pos_bags = 200;
  c.n_neg_bags = 0;
  c.positive_ratio = 0.5;
  c.d_raw = 8;
  c.class_separation = 3.0;
  const auto ds = generate_gaussian_mil(c);
  std::vector<double> mp(8, 0.0), mn(8, 0.0);
  int np = 0, nn = 0;
  for (const auto& b : ds.bags)
    for (const auto& i : b.instances) {
      auto& m = *i.truth_label ? mp : mn;
      (*i.truth_label ? np : nn)++;
      for (int d = 0; d < 8; ++d) m[d] += i.features[d];
    }
  double dist = 0.0;
  for (int d = 0; d < 8; ++d) dist += std::pow(mp[d] / np - mn[d] / nn, 2);
  EXPECT_NEAR(std::sqrt(dist), 3.0, 0.15);
}

TEST(GenerateGaussian, CountPropertyOverConfigs) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> per(1, 60);
  std::uniform_real_distribution<double> ratio(0.01, 1.0);
  for (int t = 0; t < 200; ++t) {
    SyntheticConfig c = small_cfg();
    c.n_pos_bags = 3;
    c.n_neg_bags = 2;
    c.instances_per_bag = per(rng);
    c.positive_ratio = ratio(rng);
    c.seed = t;
    const int k = std::max(1, static_cast<int>(std::lround(c.positive_ratio * c.instances_per_bag)));
    const auto ds = generate_gaussian_mil(c);
    for (const auto& b : ds.bags) EXPECT_EQ(count_pos(b), b.label ? k : 0);
    EXPECT_TRUE(validate_dataset(ds).empty());
  }
}

TEST(GenerateGaussian, InvalidConfigNamesField) {
  auto c = small_cfg();
  c.positive_ratio = 1.5;
  try {
    generate_gaussian_mil(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "positive_ratio");
  }
  c = small_cfg();
  c.n_pos_bags = 0;
  c.n_neg_bags = 0;
  EXPECT_THROW(generate_gaussian_mil(c), ConfigError);
}

TEST(GenerateGrid, TwoByTwoBlock) {
  auto c = small_cfg();
  c.instances_per_bag = 100;
  c.positive_ratio = 0.04;
  c.n_pos_bags = 5;
  const auto ds = generate_grid_mil(c, 10);
  EXPECT_EQ(ds.metadata.at("grid_side"), "10");
  for (const auto& b : ds.bags) {
    if (b.label == 0) continue;
    std::vector<int> rows, cols;
    for (int idx = 0; idx < 100; ++idx)
      if (*b.instances[idx].truth_label) {
        rows.push_back(idx / 10);
        cols.push_back(idx % 10);
      }
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(*std::max_element(rows.begin(), rows.end()) - *std::min_element(rows.begin(), rows.end()), 1);
    EXPECT_EQ(*std::max_element(cols.begin(), cols.end()) - *std::min_element(cols.begin(), cols.end()), 1);
  }
}

TEST(GenerateGrid, ZeroRatioIsConfigError) {
  auto c = small_cfg();
  c.instances_per_bag = 100;
  c.positive_ratio = 0.0;
  EXPECT_THROW(generate_grid_mil(c, 10), ConfigError);
}

TEST(GenerateGrid, NotASquareIsConfigError) {
  auto c = small_cfg();
  c.instances_per_bag = 50;
  EXPECT_THROW(generate_grid_mil(c, 7), ConfigError);
}

TEST(GenerateGrid, BlockLocationDeterministic) {
  auto c = small_cfg();
  c.instances_per_bag = 64;
  c.positive_ratio = 0.1;
  c.n_pos_bags = 3;
  EXPECT_EQ(generate_grid_mil(c, 8), generate_grid_mil(c, 8));
}

TEST(SaveLoad, RoundTripIdentity) {
  const auto ds = generate_gaussian_mil(small_cfg());
  std::istringstream is(to_text(ds));
  EXPECT_EQ(load_dataset(is), ds);
}

TEST(SaveLoad, RoundTripWithoutTruth) {
  const auto ds = strip_truth(generate_gaussian_mil(small_cfg()));
  std::istringstream is(to_text(ds));
  const auto back = load_dataset(is);
  EXPECT_EQ(back, ds);
  EXPECT_FALSE(back.has_instance_truth);
}

TEST(SaveLoad, StripOnLoad) {
  const auto ds = generate_gaussian_mil(small_cfg());
  std::istringstream is(to_text(ds));
  EXPECT_EQ(load_dataset(is, {.strip_truth = true}), strip_truth(ds));
}

TEST(SaveLoad, BagLabelRuleViolationIsSchemaError) {
  std::istringstream is(
      "{\"schema\":\"ins-mil/v1\",\"d_raw\":2}\n"
      "{\"bag_id\":0,\"label\":0,\"instances\":[[1,2],[3,4]],\"truth\":[0,1]}\n");
  EXPECT_THROW(load_dataset(is), SchemaError);
}

TEST(SaveLoad, FeatureLengthMismatchIsSchemaError) {
  std::istringstream is(
      "{\"schema\":\"ins-mil/v1\",\"d_raw\":2}\n"
      "{\"bag_id\":0,\"label\":0,\"instances\":[[1,2],[3]],\"truth\":null}\n");
  EXPECT_THROW(load_dataset(is), SchemaError);
}

TEST(SaveLoad, TruncatedLastLineNamesRecord) {
  std::string text = to_text(generate_gaussian_mil(small_cfg()));
  text.resize(text.size() - 20);
  std::istringstream is(text);
  try {
    load_dataset(is);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.record(), 3u);
  }
}

TEST(Validate, Cases) {
  MilDataset ds;
  ds.d_raw = 1;
  ds.has_instance_truth = true;
  Bag neg{0, 0, {{{0.1}, 0, 0, 0}, {{0.2}, 0, 0, 1}}};
  ds.bags.push_back(neg);
  EXPECT_TRUE(validate_dataset(ds).empty());

  Bag bad{1, 0, {{{0.1}, 1, 1, 0}}};
  ds.bags.push_back(bad);
  const auto v = validate_dataset(ds);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].bag_id, 1);
  EXPECT_EQ(v[0].rule, "bag-label-rule");

  EXPECT_TRUE(validate_dataset(strip_truth(generate_gaussian_mil(small_cfg()))).empty());
}

TEST(Validate, FlagsEmptyBagAndWrongLength) {
  MilDataset ds;
  ds.d_raw = 2;
  ds.bags.push_back({5, 1, {}});
  ds.bags.push_back({6, 0, {{{1.0}, std::nullopt, 1, 0}}});
  const auto v = validate_dataset(ds);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].rule, "non-empty");
  EXPECT_EQ(v[1].rule, "feature-length");
  EXPECT_EQ(v[1].bag_id, 6);
}
