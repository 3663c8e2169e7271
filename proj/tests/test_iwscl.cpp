#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ins/iwscl.hpp"

using namespace ins;
using nn::Matrix;
using nn::Vector;

namespace {

Vector unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(dim);
  for (auto& c : v) c = g(rng);
  return v.normalized();
}

Vector basis(int dim, int i) {
  Vector v = Vector::Zero(dim);
  v(i) = 1.0;
  return v;
}

// Direct scalar form: -(1/|F|) sum_p log( exp(s_p) / sum_n exp(s_n) ).
double naive_loss(const Vector& q, const std::vector<Vector>& fam, const std::vector<Vector>& non, double tau) {
  double denom = 0.0;
  for (const auto& k : non) denom += std::exp(q.dot(k) / tau);
  double acc = 0.0;
  for (const auto& k : fam) acc += std::log(std::exp(q.dot(k) / tau) / denom);
  return -acc / static_cast<double>(fam.size());
}

}  // namespace

TEST(Queue, FifoEviction) {
  EmbeddingQueue q(2, 3);
  q.enqueue(basis(3, 0), 1, false);
  q.enqueue(basis(3, 1), 0, false);
  q.enqueue(basis(3, 2), 1, false);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q.at(0).embedding, basis(3, 1));
  EXPECT_EQ(q.at(1).embedding, basis(3, 2));
  EXPECT_EQ(q.at(1).label, 1);
}

TEST(Queue, TrueNegativeOverride) {
  EmbeddingQueue q(4, 2);
  q.enqueue(basis(2, 0), 1, true);
  EXPECT_EQ(q.at(0).label, 0);
  EXPECT_TRUE(q.at(0).is_true_negative);
}

TEST(Queue, RejectsNonUnitAndWrongDim) {
  EmbeddingQueue q(4, 2);
  EXPECT_THROW(q.enqueue(Vector::Constant(2, 1.0), 0, false), ValidationError);
  EXPECT_THROW(q.enqueue(basis(3, 0), 0, false), DimensionError);
}

TEST(Queue, RandomizedFifoProperties) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> cap_d(1, 12), ops_d(0, 40), bit(0, 1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t cap = cap_d(rng);
    EmbeddingQueue q(cap, 3);
    std::vector<QueueEntry> ref;
    const int ops = ops_d(rng);
    for (int o = 0; o < ops; ++o) {
      const Vector v = unit(3, rng);
      const int label = bit(rng);
      const bool neg = bit(rng);
      q.enqueue(v, label, neg);
      ref.push_back({v, neg ? 0 : label, neg});
      if (ref.size() > cap) ref.erase(ref.begin());
      ASSERT_LE(q.size(), cap);
    }
    ASSERT_EQ(q.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const auto e = q.at(i);
      EXPECT_EQ(e.embedding, ref[i].embedding);
      EXPECT_EQ(e.label, ref[i].label);
      EXPECT_EQ(e.is_true_negative, ref[i].is_true_negative);
      if (e.is_true_negative) {
        EXPECT_EQ(e.label, 0);
      }
      EXPECT_NEAR(e.embedding.norm(), 1.0, 1e-9);
    }
  }
}

TEST(Queue, RestoreKeepsLayout) {
  std::mt19937_64 rng(3);
  EmbeddingQueue q(3, 2);
  for (int i = 0; i < 5; ++i) q.enqueue(unit(2, rng), i % 2, i == 2);
  EmbeddingQueue r(3, 2);
  r.restore(q.head(), q.entries(), q.total_enqueued());
  EXPECT_EQ(Matrix(r.stored_embeddings()), Matrix(q.stored_embeddings()));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.stored_label(i), q.stored_label(i));
}

TEST(Pool, SingleAnchorEmptyQueue) {
  EmbeddingQueue q(4, 2);
  std::vector<LabeledEmbedding> bq{{basis(2, 0), 1}}, bk{{basis(2, 1), 1}};
  const auto pool = build_pool(0, bq, bk, q);
  ASSERT_EQ(pool.members.size(), 1u);
  EXPECT_EQ(pool.members[0].source, PoolSource::batch_key);
}

TEST(Pool, Cardinality) {
  std::mt19937_64 rng(2);
  EmbeddingQueue q(8, 3);
  for (int i = 0; i < 3; ++i) q.enqueue(unit(3, rng), 0, false);
  std::vector<LabeledEmbedding> bq{{unit(3, rng), 0}, {unit(3, rng), 1}}, bk{{unit(3, rng), 0}, {unit(3, rng), 1}};
  for (std::size_t a = 0; a < 2; ++a) {
    const auto pool = build_pool(a, bq, bk, q);
    EXPECT_EQ(pool.members.size(), 6u);
    for (const auto& m : pool.members)
      EXPECT_FALSE(m.source == PoolSource::batch_query && m.index == a);
  }
  EXPECT_THROW(build_pool(2, bq, bk, q), UsageError);
}

TEST(SplitFamily, LabelFilter) {
  ContrastivePool pool;
  for (int l : {0, 1, 0, 1}) pool.members.push_back({basis(2, 0), l, PoolSource::queue, 0});
  auto s = split_family(pool, 1);
  EXPECT_EQ(s.family, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(s.non_family, (std::vector<std::size_t>{0, 2}));

  ContrastivePool ones;
  for (int i = 0; i < 3; ++i) ones.members.push_back({basis(2, 0), 1, PoolSource::queue, 0});
  s = split_family(ones, 0);
  EXPECT_TRUE(s.family.empty());
  EXPECT_EQ(s.non_family.size(), 3u);
}

TEST(SplitFamily, PartitionProperty) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> bit(0, 1), len(0, 30);
  for (int t = 0; t < 1000; ++t) {
    ContrastivePool pool;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) pool.members.push_back({basis(1, 0), bit(rng), PoolSource::queue, 0});
    const int a = bit(rng);
    const auto s = split_family(pool, a);
    ASSERT_EQ(s.family.size() + s.non_family.size(), pool.members.size());
    std::vector<int> seen(n, 0);
    for (auto i : s.family) {
      EXPECT_EQ(pool.members[i].label, a);
      ++seen[i];
    }
    for (auto i : s.non_family) {
      EXPECT_NE(pool.members[i].label, a);
      ++seen[i];
    }
    for (int c : seen) EXPECT_EQ(c, 1);
  }
}

TEST(IwsclLoss, EqualSimilaritiesCancel) {
  const Vector q = basis(3, 0);
  std::vector<Vector> f{basis(3, 1)}, n{basis(3, 2)};
  EXPECT_NEAR(iwscl_loss(q, f, n, 1.0).loss, 0.0, 1e-15);
}

TEST(IwsclLoss, TwoNonFamily) {
  const Vector q = basis(4, 0);
  std::vector<Vector> f{basis(4, 1)}, n{basis(4, 2), basis(4, 3)};
  EXPECT_NEAR(iwscl_loss(q, f, n, 1.0).loss, -std::log(0.5), 1e-15);
  EXPECT_NEAR(iwscl_loss(q, f, n, 1.0).loss, 0.693147, 1e-6);
}

TEST(IwsclLoss, CanBeNegative) {
  const Vector q = basis(2, 0);
  std::vector<Vector> f{basis(2, 0)}, n{basis(2, 1)};
  EXPECT_NEAR(iwscl_loss(q, f, n, 1.0).loss, -1.0, 1e-15);
}

TEST(IwsclLoss, EmptySetsAreSkipped) {
  const Vector q = basis(2, 0);
  std::vector<Vector> f{basis(2, 0)}, none;
  EXPECT_TRUE(iwscl_loss(q, f, none, 0.1).skipped);
  EXPECT_TRUE(iwscl_loss(q, none, f, 0.1).skipped);
  EXPECT_FALSE(iwscl_loss(q, f, f, 0.1).skipped);
}

TEST(IwsclLoss, StableMatchesNaiveScalar) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> sz(1, 5), dim(2, 6);
  std::uniform_real_distribution<double> taud(0.05, 2.0);
  for (int t = 0; t < 100; ++t) {
    const int d = dim(rng);
    const Vector q = unit(d, rng);
    std::vector<Vector> f(sz(rng)), n(sz(rng));
    for (auto& v : f) v = unit(d, rng);
    for (auto& v : n) v = unit(d, rng);
    const double tau = taud(rng);
    EXPECT_NEAR(iwscl_loss(q, f, n, tau).loss, naive_loss(q, f, n, tau), 1e-10);
  }
}

TEST(IwsclLoss, StableAtTinyTemperature) {
  const Vector q = basis(2, 0);
  std::vector<Vector> f{basis(2, 0)}, n{basis(2, 0), basis(2, 1)};
  const double l = iwscl_loss(q, f, n, 1e-4).loss;
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 0.0, 1e-12);  // family term equals the dominant denominator term
}

TEST(IwsclLoss, AnchorGradientMatchesFiniteDifference) {
  std::mt19937_64 rng(23);
  for (bool infonce : {false, true}) {
    for (int t = 0; t < 20; ++t) {
      Vector q = unit(5, rng);
      std::vector<Vector> f(3), n(4);
      for (auto& v : f) v = unit(5, rng);
      for (auto& v : n) v = unit(5, rng);
      Vector g = iwscl_loss(q, f, n, 0.3, infonce).grad_anchor;
      auto loss = [&] { return iwscl_loss(q, f, n, 0.3, infonce).loss; };
      const auto rep = nn::gradcheck(loss, {{"q", {q.data(), 5}}}, {{"g", {g.data(), 5}}});
      EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    }
  }
}

TEST(IwsclLoss, InfonceVariantIsPositive) {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 100; ++t) {
    const Vector q = unit(4, rng);
    std::vector<Vector> f{unit(4, rng), unit(4, rng)}, n{unit(4, rng)};
    const double l = iwscl_loss(q, f, n, 0.5, true).loss;
    double ref = 0.0;
    double neg = std::exp(q.dot(n[0]) / 0.5);
    for (const auto& k : f) {
      const double e = std::exp(q.dot(k) / 0.5);
      ref -= std::log(e / (e + neg));
    }
    EXPECT_NEAR(l, ref / 2.0, 1e-12);
    EXPECT_GT(l, 0.0);
  }
}

TEST(BatchLoss, MatchesPerAnchorReference) {
  std::mt19937_64 rng(31);
  const int d = 6, n = 5;
  EmbeddingQueue queue(7, d);
  for (int i = 0; i < 9; ++i) queue.enqueue(unit(d, rng), i % 2, i % 3 == 0);
  Matrix q(n, d), k(n, d);
  for (int i = 0; i < n; ++i) {
    q.row(i) = unit(d, rng).transpose();
    k.row(i) = unit(d, rng).transpose();
  }
  const std::vector<int> labels{1, 0, 0, 1, 0};
  const double tau = 0.2;
  const auto batch = iwscl_batch_loss(q, k, labels, queue, tau);

  std::vector<LabeledEmbedding> bq, bk;
  for (int i = 0; i < n; ++i) {
    bq.push_back({q.row(i).transpose(), labels[i]});
    bk.push_back({k.row(i).transpose(), labels[i]});
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto pool = build_pool(i, bq, bk, queue);
    const auto split = split_family(pool, labels[i]);
    std::vector<Vector> f, nf;
    for (auto j : split.family) f.push_back(pool.members[j].embedding);
    for (auto j : split.non_family) nf.push_back(pool.members[j].embedding);
    total += iwscl_loss(bq[i].embedding, f, nf, tau).loss;
  }
  EXPECT_EQ(batch.active, n);
  EXPECT_NEAR(batch.loss, total / n, 1e-12);
}

TEST(BatchLoss, GradientThroughAnchorsAndBatchMembers) {
  std::mt19937_64 rng(37);
  const int d = 4, n = 4;
  EmbeddingQueue queue(5, d);
  for (int i = 0; i < 5; ++i) queue.enqueue(unit(d, rng), i % 2, false);
  Matrix q(n, d), k(n, d);
  for (int i = 0; i < n; ++i) {
    q.row(i) = unit(d, rng).transpose();
    k.row(i) = unit(d, rng).transpose();
  }
  const std::vector<int> labels{1, 0, 1, 0};
  for (bool infonce : {false, true}) {
    Matrix g = iwscl_batch_loss(q, k, labels, queue, 0.5, infonce).grad_q;
    auto loss = [&] { return iwscl_batch_loss(q, k, labels, queue, 0.5, infonce).loss; };
    const auto rep = nn::gradcheck(loss, {{"q", {q.data(), 16}}}, {{"g", {g.data(), 16}}});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  }
}

TEST(BatchLoss, AllSameLabelSkipsEveryAnchor) {
  std::mt19937_64 rng(41);
  EmbeddingQueue queue(4, 3);
  Matrix q(2, 3), k(2, 3);
  for (int i = 0; i < 2; ++i) {
    q.row(i) = unit(3, rng).transpose();
    k.row(i) = unit(3, rng).transpose();
  }
  const auto r = iwscl_batch_loss(q, k, std::vector<int>{0, 0}, queue, 0.07);
  EXPECT_EQ(r.active, 0);
  EXPECT_EQ(r.skipped, 2);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_q, Matrix::Zero(2, 3));
}
