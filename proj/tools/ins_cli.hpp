#pragma once
// `ins` command line: gen / train / eval / gradcheck.
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ins/ins.hpp"

namespace ins::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Config file layout: {"data": {...}, "grid_side": n, "train": {...},
/// "eval": {"restrict_to_positive_bags": b}}. Every section is optional.
struct RunConfig {
  SyntheticConfig data;
  std::optional<int> grid_side;
  TrainConfig train;
  EvalOptions eval;
};

inline RunConfig read_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file " + path.string() + " does not exist");
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("not valid JSON: ") + e.what());
  }
  detail::reject_unknown(j, {"command", "data", "grid_side", "train", "eval", "inputs"}, "config");
  RunConfig rc;
  if (j.contains("data")) from_json(j.at("data"), rc.data);
  if (j.contains("grid_side") && !j.at("grid_side").is_null()) {
    int side = 0;
    detail::read_field(j, "grid_side", side);
    rc.grid_side = side;
  }
  if (j.contains("train")) from_json(j.at("train"), rc.train);
  if (j.contains("eval")) {
    detail::reject_unknown(j.at("eval"), {"restrict_to_positive_bags"}, "eval");
    detail::read_field(j.at("eval"), "restrict_to_positive_bags", rc.eval.restrict_to_positive_bags);
  }
  return rc;
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline MilDataset read_dataset(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("dataset " + path + " does not exist");
  return load_dataset(path);
}

inline std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& history) {
  out << "epoch,phase,l_iwscl,l_cls,l_bc,total,l_bc_full,pseudo_auc,iwscl_skipped,pplg_skipped\n";
  for (const auto& e : history)
    out << e.epoch << ',' << (e.warmup ? "warmup" : "main") << ',' << format_double(e.l_iwscl) << ','
        << format_double(e.l_cls) << ',' << format_double(e.l_bc) << ',' << format_double(e.total) << ','
        << format_double(e.l_bc_full) << ',' << opt_double(e.pseudo_auc) << ',' << e.iwscl_skipped << ','
        << e.pplg_skipped << '\n';
}

inline void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_metrics_csv(out, history);
}

inline void write_pseudo_labels_csv(const fs::path& path, const PseudoLabelStore& store) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "instance_id,s0,s1\n";
  for (std::size_t i = 0; i < store.size(); ++i)
    out << i << ',' << format_double(store[i][0]) << ',' << format_double(store[i][1]) << '\n';
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  double ratio = 0;
  int bags = 0, pos_bags = 0, neg_bags = 0, per_bag = 0, dim = 0, grid_side = 0;
  double separation = 0, noise = 0;
  std::uint64_t seed = 0, layout_seed = 0;
};

inline int cmd_gen(const GenArgs& a, const CLI::App& sub, Streams io) {
  RunConfig rc = a.config.empty() ? RunConfig{} : read_run_config(a.config);
  auto& c = rc.data;
  if (sub.count("--ratio")) c.positive_ratio = a.ratio;
  if (sub.count("--bags")) c.n_pos_bags = c.n_neg_bags = a.bags;
  if (sub.count("--pos-bags")) c.n_pos_bags = a.pos_bags;
  if (sub.count("--neg-bags")) c.n_neg_bags = a.neg_bags;
  if (sub.count("--per-bag")) c.instances_per_bag = a.per_bag;
  if (sub.count("--dim")) c.d_raw = a.dim;
  if (sub.count("--separation")) c.class_separation = a.separation;
  if (sub.count("--noise")) c.noise_sigma = a.noise;
  if (sub.count("--seed")) c.seed = a.seed;
  if (sub.count("--layout-seed")) c.layout_seed = a.layout_seed;
  if (sub.count("--grid-side")) rc.grid_side = a.grid_side;
  if (rc.grid_side && !sub.count("--per-bag")) c.instances_per_bag = *rc.grid_side * *rc.grid_side;

  const fs::path out(a.out);
  json manifest = {{"command", "gen"},
                   {"data", c},
                   {"grid_side", rc.grid_side ? json(*rc.grid_side) : json(nullptr)}};
  write_json(fs::path(out.string() + ".manifest.json"), manifest);

  const MilDataset ds = rc.grid_side ? generate_grid_mil(c, *rc.grid_side) : generate_gaussian_mil(c);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, out.string());
  io.out << "wrote " << ds.bags.size() << " bags (" << ds.num_instances() << " instances, "
         << positives_per_bag(c) << " positives per positive bag) to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out_dir, resume;
  bool dry_run = false, no_monitor = false, quiet = false;
  int epochs = 0, warmup = 0, batch_size = 0, queue = 0, embed_dim = 0;
  double lr = 0, tau = 0, alpha = 0, beta = 0, ema_m = 0, lambda1 = 0, lambda2 = 0, prior = 0;
  std::uint64_t seed = 0;
  bool no_iwscl = false, infonce = false;
};

inline void apply_overrides(TrainConfig& c, const TrainArgs& a, const CLI::App& sub) {
  if (sub.count("--epochs")) c.epochs = a.epochs;
  if (sub.count("--warmup")) c.warmup_epochs = a.warmup;
  if (sub.count("--batch-size")) c.batch_size = a.batch_size;
  if (sub.count("--queue")) c.queue_capacity = a.queue;
  if (sub.count("--embed-dim")) c.embed_dim = a.embed_dim;
  if (sub.count("--lr")) c.lr = a.lr;
  if (sub.count("--tau")) c.tau = a.tau;
  if (sub.count("--alpha")) c.alpha = a.alpha;
  if (sub.count("--beta")) c.beta = a.beta;
  if (sub.count("--ema-m")) c.ema_m = a.ema_m;
  if (sub.count("--lambda1")) c.lambda1 = a.lambda1;
  if (sub.count("--lambda2")) c.lambda2 = a.lambda2;
  if (sub.count("--positive-bag-prior")) c.positive_bag_prior = a.prior;
  if (sub.count("--seed")) c.seed = a.seed;
  if (a.no_iwscl) c.use_iwscl = false;
  if (a.infonce) c.infonce_denominator = true;
}

inline int cmd_train(const TrainArgs& a, const CLI::App& sub, Streams io) {
  const fs::path dir(a.out_dir);
  std::optional<TrainState> resumed;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("checkpoint " + a.resume + " does not exist");
    resumed = load_checkpoint(a.resume);
    cfg = resumed->cfg;
    // Only the epoch budget may change on resume.
    if (sub.count("--epochs")) cfg.epochs = a.epochs;
  } else {
    if (!a.config.empty()) cfg = read_run_config(a.config).train;
    apply_overrides(cfg, a, sub);
  }
  validate(cfg);
  json resolved = {{"command", "train"}, {"train", cfg}, {"inputs", {{"data", a.data}, {"resume", a.resume}}}};
  write_json(dir / "resolved_config.json", resolved);
  if (a.dry_run) {
    io.out << resolved.dump(2) << '\n';
    return 0;
  }

  const MilDataset ds = read_dataset(a.data);
  std::unique_ptr<Trainer> trainer;
  if (resumed) {
    resumed->cfg = cfg;
    if (resumed->epoch >= cfg.epochs)
      throw UsageError("checkpoint is at epoch " + std::to_string(resumed->epoch) + "; raise --epochs to continue");
    trainer = std::make_unique<Trainer>(ds, std::move(*resumed));
  } else {
    trainer = std::make_unique<Trainer>(ds, cfg);
  }
  if (ds.has_instance_truth && !a.no_monitor) trainer->set_monitor_truth(flatten_truth(ds));

  while (!trainer->done()) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = trainer->run_epoch();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!a.quiet) {
      io.out << "epoch " << e.epoch << (e.warmup ? " [warmup]" : "") << " total=" << e.total
             << " iwscl=" << e.l_iwscl << " cls=" << e.l_cls << " bc=" << e.l_bc;
      if (e.pseudo_auc) io.out << " pseudo_auc=" << *e.pseudo_auc;
      io.out << " (" << secs << " s)\n";
    }
    save_checkpoint(trainer->state(), dir / "checkpoint.json");
    write_metrics_csv(dir / "metrics.csv", trainer->state().history);
  }
  write_pseudo_labels_csv(dir / "pseudo_labels.csv", trainer->state().labels);
  io.out << "checkpoint: " << (dir / "checkpoint.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string config, checkpoint, data, out_dir, export_maps;
  bool positive_bags_only = false;
};

inline int cmd_eval(const EvalArgs& a, Streams io) {
  EvalOptions opts = a.config.empty() ? EvalOptions{} : read_run_config(a.config).eval;
  if (a.positive_bags_only) opts.restrict_to_positive_bags = true;
  const fs::path dir(a.out_dir);
  write_json(dir / "resolved_eval_config.json",
             {{"command", "eval"},
              {"eval", {{"restrict_to_positive_bags", opts.restrict_to_positive_bags}}},
              {"inputs", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"export_maps", a.export_maps}}}});
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint " + a.checkpoint + " does not exist");
  const TrainState state = load_checkpoint(a.checkpoint);
  const MilDataset ds = read_dataset(a.data);
  const EvalReport rep = evaluate(state.models, ds, opts);
  write_json(dir / "eval_report.json", rep);
  if (rep.instance) io.out << "instance AUC " << rep.instance->auc << '\n';
  else io.out << "instance AUC n/a (dataset carries no instance truth)\n";
  io.out << "bag AUC " << rep.bag.auc << '\n';
  if (!a.export_maps.empty()) {
    const auto files = export_score_map(ds, predict_instances(state.models, ds), a.export_maps);
    io.out << "wrote " << files.size() << " score-map files to " << a.export_maps << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 7;
  bool corrupt = false;
  double tolerance = 1e-5;
};

inline int cmd_gradcheck(const GradcheckArgs& a, Streams io) {
  nn::GradcheckOptions opts;
  opts.tolerance = a.tolerance;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = micro_gradcheck(a.seed, a.corrupt, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& b : rep.blocks) io.out << "  " << b.name << " max_rel_err=" << b.max_rel_error << '\n';
  io.out << (rep.passed ? "PASS" : "FAIL") << " max_rel_err=" << rep.max_rel_error << " (worst " << rep.worst_block
         << '[' << rep.worst_index << "] analytic=" << rep.worst_analytic << " numeric=" << rep.worst_numeric
         << ") tolerance=" << opts.tolerance << " time=" << secs << "s\n";
  return rep.passed ? 0 : 1;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Instance-level MIL training on synthetic bags"};
  app.require_subcommand(1);
  Streams io{out, err};

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "generate a synthetic MIL dataset (JSON lines)");
  gen->add_option("--out", ga.out, "dataset path")->required();
  gen->add_option("--config", ga.config, "JSON config with a data section");
  gen->add_option("--ratio", ga.ratio, "positive ratio inside positive bags");
  gen->add_option("--bags", ga.bags, "bags per class");
  gen->add_option("--pos-bags", ga.pos_bags);
  gen->add_option("--neg-bags", ga.neg_bags);
  gen->add_option("--per-bag", ga.per_bag, "instances per bag");
  gen->add_option("--dim", ga.dim, "feature dimension");
  gen->add_option("--separation", ga.separation, "distance between class means");
  gen->add_option("--noise", ga.noise, "per-coordinate noise sigma");
  gen->add_option("--seed", ga.seed);
  gen->add_option("--layout-seed", ga.layout_seed, "seed of the class means");
  gen->add_option("--grid-side", ga.grid_side, "lay instances on a square grid (instances per bag = side^2)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train on a dataset");
  train->add_option("--data", ta.data, "dataset path")->required();
  train->add_option("--out-dir", ta.out_dir, "output directory")->required();
  train->add_option("--config", ta.config, "JSON config with a train section");
  train->add_option("--resume", ta.resume, "checkpoint to continue from");
  train->add_flag("--dry-run", ta.dry_run, "validate and echo the config, then stop");
  train->add_flag("--no-monitor", ta.no_monitor, "skip the pseudo-label AUC report");
  train->add_flag("--quiet", ta.quiet);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--warmup", ta.warmup);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--queue", ta.queue);
  train->add_option("--embed-dim", ta.embed_dim);
  train->add_option("--lr", ta.lr);
  train->add_option("--tau", ta.tau);
  train->add_option("--alpha", ta.alpha);
  train->add_option("--beta", ta.beta);
  train->add_option("--ema-m", ta.ema_m);
  train->add_option("--lambda1", ta.lambda1);
  train->add_option("--lambda2", ta.lambda2);
  train->add_option("--positive-bag-prior", ta.prior);
  train->add_option("--seed", ta.seed);
  train->add_flag("--no-iwscl", ta.no_iwscl, "ablation: drop the contrastive term");
  train->add_flag("--infonce", ta.infonce, "include the family term in the contrastive denominator");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--out-dir", ea.out_dir, "output directory")->required();
  ev->add_option("--config", ea.config, "JSON config with an eval section");
  ev->add_option("--export-maps", ea.export_maps, "write per-bag score maps (grid datasets)");
  ev->add_flag("--positive-bags-only", ea.positive_bags_only, "instance AUC over positive bags only");

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the training objective");
  grad->add_option("--seed", gc.seed);
  grad->add_option("--tolerance", gc.tolerance);
  grad->add_flag("--corrupt", gc.corrupt, "perturb the analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(ga, *gen, io);
    if (*train) return cmd_train(ta, *train, io);
    if (*ev) return cmd_eval(ea, io);
    if (*grad) return cmd_gradcheck(gc, io);
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ins::cli
