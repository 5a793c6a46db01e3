#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mvke/data/generator.hpp"
#include "mvke/json.hpp"
#include "mvke/model/config.hpp"
#include "mvke/serve/bench.hpp"
#include "mvke/train/trainer.hpp"

namespace mvke {

/// Model/training regimes selectable from the command line.
enum class RunMode { kNoMtlCtr, kNoMtlCvr, kMvkeStCtr, kMvkeStCvr, kMvkeMt };

inline const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::kNoMtlCtr: return "noMTL-ctr";
    case RunMode::kNoMtlCvr: return "noMTL-cvr";
    case RunMode::kMvkeStCtr: return "mvke-st-ctr";
    case RunMode::kMvkeStCvr: return "mvke-st-cvr";
    default: return "mvke-mt";
  }
}

inline RunMode parse_run_mode(const std::string& s) {
  for (RunMode m : {RunMode::kNoMtlCtr, RunMode::kNoMtlCvr, RunMode::kMvkeStCtr, RunMode::kMvkeStCvr, RunMode::kMvkeMt})
    if (s == run_mode_name(m)) return m;
  throw ConfigError("unknown mode '" + s + "' (expected noMTL-ctr, noMTL-cvr, mvke-st-ctr, mvke-st-cvr or mvke-mt)");
}

inline TaskMode task_mode_of(RunMode m) {
  switch (m) {
    case RunMode::kNoMtlCtr:
    case RunMode::kMvkeStCtr: return TaskMode::kCtrOnly;
    case RunMode::kNoMtlCvr:
    case RunMode::kMvkeStCvr: return TaskMode::kCvrOnly;
    default: return TaskMode::kMulti;
  }
}

/// Name of the regime a model configuration implements.
inline std::string model_id(const ModelConfig& mc) {
  if (mc.kind == ModelKind::kTwoTower) return std::string("noMTL-") + task_name(mc.baseline_task);
  if (mc.routing.enabled(TaskId::kCtr) && mc.routing.enabled(TaskId::kCvr)) return "mvke-mt";
  return std::string("mvke-st-") + (mc.routing.enabled(TaskId::kCtr) ? "ctr" : "cvr");
}

/// Everything a pipeline run needs. One top-level seed drives data
/// generation, parameter initialisation and batch shuffling.
struct RunConfig {
  std::uint64_t seed = 1;
  bool f64 = false;
  RunMode mode = RunMode::kMvkeMt;
  std::string data_dir = "data";
  std::string checkpoint;

  GeneratorConfig generator;

  std::size_t embed_dim = 16;
  std::size_t vke_count = 5;
  std::optional<ExpertRouting> routing;  // overrides default_routing(vke_count)
  std::size_t hidden_dim = 0;
  double tau_init = 5.0;

  TrainConfig train;
  /// Trailing share of the training file held out for best-epoch selection.
  double valid_fraction = 0.1;

  std::vector<std::size_t> sweep_counts = {4, 5, 6, 7, 8, 9, 10};
  std::vector<std::int32_t> gate_tags;  // empty: every tag in the vocabulary

  std::size_t topk = 10;
  std::vector<BenchSize> bench_sizes = {{500, 100}, {1000, 100}, {2000, 100}};
  bool bench_naive = true;

  /// Propagates the top-level seed and mode into the nested configs.
  void resolve() {
    generator.seed = seed;
    train.seed = seed;
    train.mode = task_mode_of(mode);
  }

  void validate() const {
    generator.validate();
    train.validate();
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (vke_count == 0) throw ConfigError("vke_count must be positive");
    if (routing && routing->n_experts != vke_count)
      throw ConfigError("routing.n_experts disagrees with vke_count");
    if (!(valid_fraction >= 0 && valid_fraction < 1)) throw ConfigError("valid_fraction must lie in [0, 1)");
    if (topk == 0) throw UsageError("top-N must be at least 1");
    if (sweep_counts.empty()) throw ConfigError("sweep_counts is empty");
  }

  /// Model configuration for the current mode over `schema`.
  ModelConfig model_config(FieldSchema schema) const {
    schema.embed_dim = embed_dim;
    ModelConfig mc;
    mc.schema = std::move(schema);
    mc.hidden_dim = hidden_dim;
    mc.tau_init = tau_init;
    mc.init_seed = seed;
    switch (mode) {
      case RunMode::kNoMtlCtr:
      case RunMode::kNoMtlCvr:
        mc.kind = ModelKind::kTwoTower;
        mc.baseline_task = mode == RunMode::kNoMtlCtr ? TaskId::kCtr : TaskId::kCvr;
        break;
      case RunMode::kMvkeStCtr: mc.routing = single_task_routing(vke_count, TaskId::kCtr); break;
      case RunMode::kMvkeStCvr: mc.routing = single_task_routing(vke_count, TaskId::kCvr); break;
      default: mc.routing = routing ? *routing : default_routing(vke_count);
    }
    mc.validate();
    return mc;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

inline std::set<std::string> keys_of(const nlohmann::json& j) {
  std::set<std::string> out;
  for (const auto& [key, _] : j.items()) out.insert(key);
  return out;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json bench_sizes = nlohmann::json::array();
  for (const auto& s : c.bench_sizes) bench_sizes.push_back({s.n_users, s.n_tags});
  j = {{"seed", c.seed},
       {"precision", c.f64 ? "f64" : "f32"},
       {"mode", run_mode_name(c.mode)},
       {"data_dir", c.data_dir},
       {"checkpoint", c.checkpoint},
       {"generator", c.generator},
       {"model",
        {{"embed_dim", c.embed_dim},
         {"vke_count", c.vke_count},
         {"routing", c.routing ? nlohmann::json(*c.routing) : nlohmann::json(nullptr)},
         {"hidden_dim", c.hidden_dim},
         {"tau_init", c.tau_init}}},
       {"train",
        {{"epochs", c.train.epochs},
         {"batch_size", c.train.batch_size},
         {"learning_rate", c.train.adam.learning_rate},
         {"beta1", c.train.adam.beta1},
         {"beta2", c.train.adam.beta2},
         {"epsilon", c.train.adam.eps},
         {"valid_fraction", c.valid_fraction}}},
       {"eval", {{"sweep_counts", c.sweep_counts}, {"gate_tags", c.gate_tags}}},
       {"serve", {{"topk", c.topk}, {"bench_sizes", bench_sizes}, {"bench_naive", c.bench_naive}}}};
}

/// Reads a (possibly partial) config on top of the defaults. Unknown keys
/// are rejected so typos do not silently fall back to defaults.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const nlohmann::json defaults = RunConfig{};
  detail::reject_unknown_keys(j, detail::keys_of(defaults), "config");
  c.seed = j.value("seed", c.seed);
  if (j.contains("precision")) {
    const auto p = j.at("precision").get<std::string>();
    if (p != "f32" && p != "f64") throw ConfigError("precision must be f32 or f64");
    c.f64 = p == "f64";
  }
  if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
  c.data_dir = j.value("data_dir", c.data_dir);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  if (j.contains("generator")) {
    detail::reject_unknown_keys(j.at("generator"), detail::keys_of(defaults.at("generator")), "generator");
    nlohmann::json merged = c.generator;
    merged.update(j.at("generator"));
    c.generator = merged.get<GeneratorConfig>();
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(m, detail::keys_of(defaults.at("model")), "model");
    c.embed_dim = m.value("embed_dim", c.embed_dim);
    c.vke_count = m.value("vke_count", c.vke_count);
    if (m.contains("routing")) {
      if (m.at("routing").is_null())
        c.routing.reset();
      else
        c.routing = m.at("routing").get<ExpertRouting>();
    }
    c.hidden_dim = m.value("hidden_dim", c.hidden_dim);
    c.tau_init = m.value("tau_init", c.tau_init);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(t, detail::keys_of(defaults.at("train")), "train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.adam.learning_rate = t.value("learning_rate", c.train.adam.learning_rate);
    c.train.adam.beta1 = t.value("beta1", c.train.adam.beta1);
    c.train.adam.beta2 = t.value("beta2", c.train.adam.beta2);
    c.train.adam.eps = t.value("epsilon", c.train.adam.eps);
    c.valid_fraction = t.value("valid_fraction", c.valid_fraction);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown_keys(e, detail::keys_of(defaults.at("eval")), "eval");
    c.sweep_counts = e.value("sweep_counts", c.sweep_counts);
    c.gate_tags = e.value("gate_tags", c.gate_tags);
  }
  if (j.contains("serve")) {
    const auto& s = j.at("serve");
    detail::reject_unknown_keys(s, detail::keys_of(defaults.at("serve")), "serve");
    c.topk = s.value("topk", c.topk);
    if (s.contains("bench_sizes")) {
      c.bench_sizes.clear();
      for (const auto& pair : s.at("bench_sizes")) {
        if (!pair.is_array() || pair.size() != 2) throw ConfigError("bench_sizes entries are [n_users, n_tags]");
        c.bench_sizes.push_back({pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
      }
    }
    c.bench_naive = s.value("bench_naive", c.bench_naive);
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(is).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace mvke
