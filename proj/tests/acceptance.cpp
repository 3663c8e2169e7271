// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ins_cli.hpp"

using namespace ins;
using nn::Vector;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  " << detail << std::endl;
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Vector unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(dim);
  for (auto& c : v) c = g(rng);
  return v.normalized();
}

// ---------------------------------------------------------------------------

void gradient_fidelity() {
  const auto t0 = Clock::now();
  const char* argv[] = {"ins", "gradcheck"};
  std::ostringstream out, err;
  const int code = cli::run_cli(2, argv, out, err);
  const auto rep = micro_gradcheck();
  const double secs = seconds_since(t0);
  const bool ok = code == 0 && rep.passed && rep.max_rel_error < 1e-5 && secs < 5.0;
  report(1, "gradient fidelity", ok,
         "max rel err " + fmt("%.3e", rep.max_rel_error) + " (< 1e-5), " + fmt("%.2f", secs) + " s (< 5 s)");
}

void contrastive_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim_d(2, 8);
  std::uniform_real_distribution<double> tau_d(0.05, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = dim_d(rng);
    const int pool = std::uniform_int_distribution<int>(2, 10)(rng);
    const int fam = std::uniform_int_distribution<int>(1, pool - 1)(rng);
    std::vector<Vector> f(fam), n(pool - fam);
    for (auto& v : f) v = unit(d, rng);
    for (auto& v : n) v = unit(d, rng);
    const Vector q = unit(d, rng);
    const double tau = tau_d(rng);
    double denom = 0.0, acc = 0.0;
    for (const auto& k : n) denom += std::exp(q.dot(k) / tau);
    for (const auto& k : f) acc += std::log(std::exp(q.dot(k) / tau) / denom);
    const double naive = -acc / static_cast<double>(f.size());
    worst = std::max(worst, std::abs(iwscl_loss(q, f, n, tau).loss - naive));
  }
  report(2, "stable contrastive loss vs naive scalar", worst <= 1e-10,
         "100 cases, max abs diff " + fmt("%.3e", worst) + " (<= 1e-10)");
}

void auc_oracle() {
  std::mt19937_64 rng(202);
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 200)(rng);
    // Few distinct levels so ties are common.
    const int levels = std::uniform_int_distribution<int>(2, 12)(rng);
    std::uniform_int_distribution<int> lvl(0, levels - 1), bit(0, 1);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = lvl(rng) / static_cast<double>(levels);
      y[i] = bit(rng);
    }
    y[0] = 0;
    y[1] = 1;
    double concordant = 0.0, pairs = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1.0;
          concordant += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    exact += roc_auc(s, y).auc == concordant / pairs;
  }
  report(3, "rank AUC vs brute-force pairs", exact == 100, std::to_string(exact) + "/100 exact matches");
}

void property_suites() {
  constexpr int kCases = 1000;
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int fifo = 0, override_ok = 0, norm_ok = 0, simplex = 0, geometric = 0;

  for (int t = 0; t < kCases; ++t) {
    const std::size_t cap = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    EmbeddingQueue q(cap, 3);
    std::deque<QueueEntry> ref;
    bool ok = true, ov = true;
    const int ops = std::uniform_int_distribution<int>(0, 50)(rng);
    for (int o = 0; o < ops; ++o) {
      const Vector v = unit(3, rng);
      const int label = bit(rng);
      const bool neg = bit(rng);
      q.enqueue(v, label, neg);
      ref.push_back({v, neg ? 0 : label, neg});
      if (ref.size() > cap) ref.pop_front();
      ok = ok && q.size() <= cap && q.size() == ref.size();
    }
    for (std::size_t i = 0; i < q.size() && ok; ++i) {
      const auto e = q.at(i);
      ok = e.embedding == ref[i].embedding && e.label == ref[i].label;
      ov = ov && (!e.is_true_negative || e.label == 0);
    }
    fifo += ok;
    override_ok += ov;
  }

  for (int t = 0; t < kCases; ++t) {
    PrototypeBank bank(5, 0.999 * u(rng));
    bool ok = true;
    for (int step = 0; step < 20; ++step) {
      const bool neg = bit(rng);
      const int cls = bit(rng);
      bank.update(unit(5, rng), cls, neg);
      const int moved = neg ? 0 : cls;
      ok = ok && std::abs(bank.mu(moved).norm() - 1.0) < 1e-9;
    }
    norm_ok += ok;
  }

  for (int t = 0; t < kCases; ++t) {
    PseudoLabelStore store(u(rng), {0}, u(rng));
    PrototypeBank bank(4, 0.9);
    bank.update(unit(4, rng), 0, true);
    bank.update(unit(4, rng), 1, false);
    bool ok = true;
    for (int step = 0; step < 30; ++step) {
      store.generate_pseudo_label(0, unit(4, rng), bank);
      const auto s = store[0];
      ok = ok && s[0] >= 0.0 && s[1] >= 0.0 && std::abs(s[0] + s[1] - 1.0) <= 1e-9;
    }
    simplex += ok;
  }

  for (int t = 0; t < kCases; ++t) {
    const double alpha = u(rng);
    PseudoLabelStore store(alpha, {0}, u(rng));
    // Frozen query scoring 0.8 against mu1 and 0.1 against mu0.
    PrototypeBank bank(3, 0.99);
    Vector m0(3), m1(3), q(3);
    m0 << 0.1, std::sqrt(1 - 0.01), 0;
    m1 << 0.8, 0, std::sqrt(1 - 0.64);
    q << 1, 0, 0;
    bank.restore(m0, m1, true, true);
    const double d0 = std::hypot(store[0][0], store[0][1] - 1.0);
    double scale = 1.0;
    bool ok = true;
    for (int step = 0; step < 20; ++step) {
      store.generate_pseudo_label(0, q, bank);
      scale *= alpha;
      ok = ok && std::abs(std::hypot(store[0][0], store[0][1] - 1.0) - scale * d0) <= 1e-9;
    }
    geometric += ok;
  }

  const bool all = fifo == kCases && override_ok == kCases && norm_ok == kCases && simplex == kCases &&
                   geometric == kCases;
  report(4, "queue/prototype/simplex properties", all,
         "fifo " + std::to_string(fifo) + ", override " + std::to_string(override_ok) + ", prototype norm " +
             std::to_string(norm_ok) + ", simplex " + std::to_string(simplex) + ", geometric " +
             std::to_string(geometric) + " of " + std::to_string(kCases) + " each");
}

// ---------------------------------------------------------------------------

struct RunResult {
  double instance_auc = 0.0, bag_auc = 0.0, seconds = 0.0;
  std::vector<EpochMetrics> history;
  std::string metrics_csv;
};

SyntheticConfig data_cfg(double ratio, std::uint64_t seed) {
  SyntheticConfig c;
  c.n_pos_bags = 100;
  c.n_neg_bags = 100;
  c.instances_per_bag = 50;
  c.d_raw = 32;
  c.class_separation = 3.0;
  c.positive_ratio = ratio;
  c.seed = seed;
  return c;
}

RunResult run(double ratio, const TrainConfig& cfg, const char* label) {
  const auto train = generate_gaussian_mil(data_cfg(ratio, 1));
  const auto test = generate_gaussian_mil(data_cfg(ratio, 2));
  const auto truth = flatten_truth(train);
  const auto t0 = Clock::now();
  auto fitted = fit(strip_truth(train), cfg, &truth);
  RunResult r;
  r.seconds = seconds_since(t0);
  const auto rep = evaluate(fitted.state.models, test);
  r.instance_auc = rep.instance->auc;
  r.bag_auc = rep.bag.auc;
  r.history = fitted.history;
  std::ostringstream csv;
  cli::write_metrics_csv(csv, r.history);
  r.metrics_csv = csv.str();
  std::cout << "  run " << label << ": instance AUC " << fmt("%.4f", r.instance_auc) << ", bag AUC "
            << fmt("%.4f", r.bag_auc) << ", " << fmt("%.1f", r.seconds) << " s" << std::endl;
  return r;
}

}  // namespace

int main() {
  gradient_fidelity();
  contrastive_oracle();
  auc_oracle();
  property_suites();

  const TrainConfig defaults;
  TrainConfig no_iwscl = defaults;
  no_iwscl.use_iwscl = false;
  TrainConfig no_bc = defaults;
  no_bc.lambda2 = 0.0;
  TrainConfig no_mu = defaults;
  no_mu.alpha = 0.0;

  std::vector<std::pair<double, TrainConfig>> setups{
      {0.2, defaults}, {0.05, defaults}, {0.05, no_iwscl}, {0.2, no_bc}, {0.2, no_mu}};
  const char* labels[] = {"default 20%", "default 5%", "no contrastive 5%", "lambda2=0 20%", "alpha=0 20%"};
  std::vector<RunResult> runs;
  for (std::size_t i = 0; i < setups.size(); ++i) runs.push_back(run(setups[i].first, setups[i].second, labels[i]));
  const auto& main_run = runs[0];

  report(5, "end-to-end 20% ratio",
         main_run.instance_auc >= 0.95 && main_run.bag_auc >= 0.95 && main_run.seconds < 600.0,
         "instance AUC " + fmt("%.4f", main_run.instance_auc) + " (>= 0.95), bag AUC " +
             fmt("%.4f", main_run.bag_auc) + " (>= 0.95), " + fmt("%.1f", main_run.seconds) + " s (< 600 s)");

  const double gap = runs[1].instance_auc - runs[2].instance_auc;
  report(6, "low-ratio 5% stress", runs[1].instance_auc >= 0.90 && gap >= 0.05,
         "instance AUC " + fmt("%.4f", runs[1].instance_auc) + " (>= 0.90), gap over no-contrastive ablation " +
             fmt("%.4f", gap) + " (>= 0.05)");

  const auto& hist = main_run.history;
  const double warm = *hist[static_cast<std::size_t>(defaults.warmup_epochs) - 1].pseudo_auc;
  const double last = *hist.back().pseudo_auc;
  report(7, "pseudo-label improvement", last - warm >= 0.05,
         "pseudo-label AUC " + fmt("%.4f", warm) + " after warm-up -> " + fmt("%.4f", last) + " final (gain >= 0.05)");

  const double bc = runs[3].instance_auc, mu = runs[4].instance_auc;
  report(8, "ablation direction", bc <= main_run.instance_auc + 0.01 && mu <= main_run.instance_auc + 0.01,
         "lambda2=0 " + fmt("%.4f", bc) + ", alpha=0 " + fmt("%.4f", mu) + " vs default " +
             fmt("%.4f", main_run.instance_auc) + " (each <= default + 0.01)");

  int identical = 0;
  for (std::size_t i = 0; i < setups.size(); ++i)
    identical += run(setups[i].first, setups[i].second, labels[i]).metrics_csv == runs[i].metrics_csv;
  report(9, "determinism", identical == static_cast<int>(setups.size()),
         std::to_string(identical) + "/" + std::to_string(setups.size()) + " repeated runs with identical metrics CSV");

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
