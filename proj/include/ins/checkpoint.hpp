#pragma once
// Checkpoint document ("ins-mil-ckpt/v1"): every network, optimizer
// velocities, queue, prototypes, pseudo labels, RNG state, epoch counter and
// metric history. Doubles round-trip exactly through the JSON writer.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ins/config.hpp"
#include "ins/error.hpp"
#include "ins/trainer.hpp"

namespace ins {

inline constexpr const char* kCheckpointSchema = "ins-mil-ckpt/v1";

namespace detail {

inline nlohmann::json mlp_to_json(const nn::Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& ly = net.layer(l);
    layers.push_back({{"W", std::vector<double>(ly.weight.data(), ly.weight.data() + ly.weight.size())},
                      {"b", std::vector<double>(ly.bias.data(), ly.bias.data() + ly.bias.size())}});
  }
  return {{"dims", net.dims()}, {"layers", std::move(layers)}};
}

inline nn::Mlp mlp_from_json(const nlohmann::json& j, const std::string& name) {
  auto net = nn::Mlp::zeros(j.at("dims").get<std::vector<int>>());
  const auto& layers = j.at("layers");
  if (layers.size() != net.num_layers()) throw SchemaError("checkpoint network '" + name + "' has wrong layer count");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& ly = net.layer(l);
    const auto w = layers[l].at("W").get<std::vector<double>>();
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(ly.weight.size()) || b.size() != static_cast<std::size_t>(ly.bias.size()))
      throw SchemaError("checkpoint network '" + name + "' layer " + std::to_string(l) + " has wrong shape");
    std::copy(w.begin(), w.end(), ly.weight.data());
    std::copy(b.begin(), b.end(), ly.bias.data());
  }
  return net;
}

inline nlohmann::json vec_to_json(const nn::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nn::Vector vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const nn::Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json epoch_to_json(const EpochMetrics& e) {
  return {{"epoch", e.epoch},
          {"warmup", e.warmup},
          {"l_iwscl", e.l_iwscl},
          {"l_cls", e.l_cls},
          {"l_bc", e.l_bc},
          {"total", e.total},
          {"l_bc_full", e.l_bc_full},
          {"pseudo_auc", e.pseudo_auc ? nlohmann::json(*e.pseudo_auc) : nlohmann::json(nullptr)},
          {"iwscl_skipped", e.iwscl_skipped},
          {"pplg_skipped", e.pplg_skipped},
          {"steps", e.steps}};
}

inline EpochMetrics epoch_from_json(const nlohmann::json& j) {
  EpochMetrics e;
  e.epoch = j.at("epoch").get<int>();
  e.warmup = j.at("warmup").get<bool>();
  e.l_iwscl = j.at("l_iwscl").get<double>();
  e.l_cls = j.at("l_cls").get<double>();
  e.l_bc = j.at("l_bc").get<double>();
  e.total = j.at("total").get<double>();
  e.l_bc_full = j.at("l_bc_full").get<double>();
  if (!j.at("pseudo_auc").is_null()) e.pseudo_auc = j.at("pseudo_auc").get<double>();
  e.iwscl_skipped = j.at("iwscl_skipped").get<long>();
  e.pplg_skipped = j.at("pplg_skipped").get<long>();
  e.steps = j.at("steps").get<int>();
  return e;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const TrainState& s) {
  using detail::mlp_to_json;
  nlohmann::json j;
  j["schema"] = kCheckpointSchema;
  j["config"] = s.cfg;
  j["epoch"] = s.epoch;
  j["networks"] = {{"encoder", mlp_to_json(s.models.encoder)},
                   {"projector", mlp_to_json(s.models.projector)},
                   {"classifier", mlp_to_json(s.models.classifier)},
                   {"bag_head", mlp_to_json(s.models.bag_head)},
                   {"key_encoder", mlp_to_json(s.models.key_encoder)},
                   {"key_projector", mlp_to_json(s.models.key_projector)}};
  j["optimizer"] = {{"learning_rate", s.optimizer.learning_rate},
                    {"momentum", s.optimizer.momentum},
                    {"velocity", s.optimizer.velocity}};

  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : s.queue.entries())
    entries.push_back({{"embedding", detail::vec_to_json(e.embedding)},
                       {"label", e.label},
                       {"true_negative", e.is_true_negative}});
  j["queue"] = {{"capacity", s.queue.capacity()},
                {"dim", s.queue.dim()},
                {"head", s.queue.head()},
                {"total_enqueued", s.queue.total_enqueued()},
                {"entries", std::move(entries)}};

  j["prototypes"] = {{"beta", s.bank.beta()},
                     {"mu0", detail::vec_to_json(s.bank.mu(0))},
                     {"mu1", detail::vec_to_json(s.bank.mu(1))},
                     {"initialized", {s.bank.initialized(0), s.bank.initialized(1)}},
                     {"degenerate_updates", s.bank.degenerate_updates()}};

  std::vector<int> negative(s.labels.size());
  nlohmann::json soft = nlohmann::json::array();
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    negative[i] = s.labels.from_negative_bag(i) ? 1 : 0;
    soft.push_back({s.labels[i][0], s.labels[i][1]});
  }
  j["pseudo_labels"] = {{"alpha", s.labels.alpha()},
                        {"from_negative_bag", negative},
                        {"s", std::move(soft)},
                        {"skipped", s.labels.skipped()}};

  std::ostringstream rng;
  rng << s.rng;
  j["rng"] = rng.str();

  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : s.history) hist.push_back(detail::epoch_to_json(e));
  j["history"] = std::move(hist);
  return j;
}

inline TrainState checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema")) throw SchemaError("checkpoint has no schema tag");
  if (j.at("schema") != kCheckpointSchema)
    throw SchemaError("unsupported checkpoint schema " + j.at("schema").dump() + ", expected " + kCheckpointSchema);
  try {
    TrainState s;
    s.cfg = j.at("config").get<TrainConfig>();
    validate(s.cfg);
    s.epoch = j.at("epoch").get<int>();

    const auto& nets = j.at("networks");
    s.models.encoder = detail::mlp_from_json(nets.at("encoder"), "encoder");
    s.models.projector = detail::mlp_from_json(nets.at("projector"), "projector");
    s.models.classifier = detail::mlp_from_json(nets.at("classifier"), "classifier");
    s.models.bag_head = detail::mlp_from_json(nets.at("bag_head"), "bag_head");
    s.models.key_encoder = detail::mlp_from_json(nets.at("key_encoder"), "key_encoder");
    s.models.key_projector = detail::mlp_from_json(nets.at("key_projector"), "key_projector");
    if (s.models.key_encoder.dims() != s.models.encoder.dims() ||
        s.models.key_projector.dims() != s.models.projector.dims())
      throw SchemaError("checkpoint key branch does not mirror the query branch");

    const auto& opt = j.at("optimizer");
    s.optimizer.learning_rate = opt.at("learning_rate").get<double>();
    s.optimizer.momentum = opt.at("momentum").get<double>();
    s.optimizer.velocity = opt.at("velocity").get<std::vector<std::vector<double>>>();
    if (!s.optimizer.velocity.empty()) {
      const auto params = s.models.trainable();
      if (params.size() != s.optimizer.velocity.size())
        throw SchemaError("checkpoint velocity block count does not match the networks");
      for (std::size_t b = 0; b < params.size(); ++b)
        if (params[b].values.size() != s.optimizer.velocity[b].size())
          throw SchemaError("checkpoint velocity block " + params[b].name + " has wrong size");
    }

    const auto& q = j.at("queue");
    s.queue = EmbeddingQueue(q.at("capacity").get<std::size_t>(), q.at("dim").get<int>());
    std::vector<QueueEntry> entries;
    for (const auto& e : q.at("entries"))
      entries.push_back({detail::vec_from_json(e.at("embedding")), e.at("label").get<int>(),
                         e.at("true_negative").get<bool>()});
    s.queue.restore(q.at("head").get<std::size_t>(), entries, q.at("total_enqueued").get<std::uint64_t>());

    const auto& p = j.at("prototypes");
    s.bank = PrototypeBank(s.cfg.embed_dim, p.at("beta").get<double>());
    const auto init = p.at("initialized").get<std::vector<bool>>();
    if (init.size() != 2) throw SchemaError("checkpoint prototypes need two init flags");
    s.bank.restore(detail::vec_from_json(p.at("mu0")), detail::vec_from_json(p.at("mu1")), init[0], init[1],
                   p.at("degenerate_updates").get<std::size_t>());

    const auto& pl = j.at("pseudo_labels");
    const auto neg = pl.at("from_negative_bag").get<std::vector<int>>();
    std::vector<char> negative(neg.begin(), neg.end());
    s.labels = PseudoLabelStore(pl.at("alpha").get<double>(), std::move(negative), s.cfg.positive_bag_prior);
    std::vector<SoftLabel> soft;
    for (const auto& v : pl.at("s")) soft.push_back(v.get<SoftLabel>());
    s.labels.restore(std::move(soft), pl.at("skipped").get<std::size_t>());

    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng;
    if (!rng) throw SchemaError("checkpoint RNG state is unreadable");

    for (const auto& e : j.at("history")) s.history.push_back(detail::epoch_from_json(e));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(s).dump() << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ins
