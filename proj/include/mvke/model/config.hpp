#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mvke/data/generator.hpp"
#include "mvke/json.hpp"
#include "mvke/schema.hpp"

namespace mvke {

/// Assignment of experts to tasks. An empty set disables that task.
struct ExpertRouting {
  std::size_t n_experts = 5;
  std::vector<std::size_t> ctr = {0, 1, 2};
  std::vector<std::size_t> cvr = {1, 2, 3, 4};
  /// Permits task sets with no shared expert (two independent towers).
  bool allow_disjoint = false;

  const std::vector<std::size_t>& experts_for(TaskId t) const { return t == TaskId::kCtr ? ctr : cvr; }
  bool enabled(TaskId t) const { return !experts_for(t).empty(); }

  std::vector<std::size_t> shared() const {
    std::vector<std::size_t> out;
    std::set_intersection(ctr.begin(), ctr.end(), cvr.begin(), cvr.end(), std::back_inserter(out));
    return out;
  }

  void validate() const {
    if (n_experts == 0) throw ConfigError("routing needs at least one expert");
    for (const auto* set : {&ctr, &cvr}) {
      if (!std::is_sorted(set->begin(), set->end()) ||
          std::adjacent_find(set->begin(), set->end()) != set->end())
        throw ConfigError("routing sets must be strictly ascending");
      for (auto e : *set)
        if (e >= n_experts)
          throw ConfigError("routing references expert " + std::to_string(e) + " of " + std::to_string(n_experts));
    }
    if (ctr.empty() && cvr.empty()) throw ConfigError("routing enables no task");
    std::set<std::size_t> all(ctr.begin(), ctr.end());
    all.insert(cvr.begin(), cvr.end());
    if (all.size() != n_experts) throw ConfigError("routing leaves an expert unassigned to any task");
    if (!ctr.empty() && !cvr.empty() && !allow_disjoint) {
      const auto s = shared();
      if (s.empty()) throw ConfigError("routing needs at least one shared expert");
      if (s.size() == ctr.size() || s.size() == cvr.size())
        throw ConfigError("routing needs at least one task-exclusive expert per task");
    }
  }

  bool operator==(const ExpertRouting&) const = default;
};

/// Five experts: the first three serve CTR, the second to fifth serve CVR.
inline ExpertRouting five_expert_routing() { return ExpertRouting{5, {0, 1, 2}, {1, 2, 3, 4}}; }

/// Routing for an arbitrary expert count: floor((k-2)/2) (at least 1)
/// exclusive experts per task at either end, the middle ones shared.
inline ExpertRouting auto_routing(std::size_t k) {
  if (k < 3) throw ConfigError("a two-task routing needs at least 3 experts");
  const std::size_t exclusive = std::max<std::size_t>(1, (k - 2) / 2);
  ExpertRouting r;
  r.n_experts = k;
  r.ctr.clear();
  r.cvr.clear();
  for (std::size_t e = 0; e < k - exclusive; ++e) r.ctr.push_back(e);
  for (std::size_t e = exclusive; e < k; ++e) r.cvr.push_back(e);
  return r;
}

/// Routing used when none is configured explicitly: the five-expert layout
/// for k = 5, otherwise `auto_routing(k)`.
inline ExpertRouting default_routing(std::size_t k) { return k == 5 ? five_expert_routing() : auto_routing(k); }

/// Every expert serves one task; the other task is disabled.
inline ExpertRouting single_task_routing(std::size_t k, TaskId task) {
  ExpertRouting r;
  r.n_experts = k;
  r.ctr.clear();
  r.cvr.clear();
  auto& set = task == TaskId::kCtr ? r.ctr : r.cvr;
  for (std::size_t e = 0; e < k; ++e) set.push_back(e);
  return r;
}

enum class ModelKind { kMvke, kTwoTower };

struct ModelConfig {
  ModelKind kind = ModelKind::kMvke;
  FieldSchema schema;
  ExpertRouting routing = five_expert_routing();
  /// Two-tower baselines model exactly one task.
  TaskId baseline_task = TaskId::kCtr;
  /// Hidden width of expert heads and the baseline user MLP; 0 means 2 * embed_dim.
  std::size_t hidden_dim = 0;
  double tau_init = 5.0;
  std::uint64_t init_seed = 1;

  std::size_t hidden() const { return hidden_dim ? hidden_dim : 2 * schema.embed_dim; }

  bool supports(TaskId t) const { return kind == ModelKind::kMvke ? routing.enabled(t) : baseline_task == t; }

  void validate() const {
    schema.validate();
    std::set<std::string> names;
    for (const auto& f : schema.user_fields)
      if (!names.insert(f.name).second) throw ConfigError("duplicate user field name: " + f.name);
    if (kind == ModelKind::kMvke) routing.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExpertRouting& r) {
  j = {{"n_experts", r.n_experts}, {"ctr", r.ctr}, {"cvr", r.cvr}};
  if (r.allow_disjoint) j["allow_disjoint"] = true;
}
inline void from_json(const nlohmann::json& j, ExpertRouting& r) {
  j.at("n_experts").get_to(r.n_experts);
  j.at("ctr").get_to(r.ctr);
  j.at("cvr").get_to(r.cvr);
  r.allow_disjoint = j.value("allow_disjoint", false);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"kind", c.kind == ModelKind::kMvke ? "mvke" : "two_tower"},
       {"schema", c.schema},
       {"routing", c.routing},
       {"baseline_task", task_name(c.baseline_task)},
       {"hidden_dim", c.hidden_dim},
       {"tau_init", c.tau_init},
       {"init_seed", c.init_seed}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "mvke" && kind != "two_tower") throw ConfigError("unknown model kind: " + kind);
  c.kind = kind == "mvke" ? ModelKind::kMvke : ModelKind::kTwoTower;
  j.at("schema").get_to(c.schema);
  j.at("routing").get_to(c.routing);
  c.baseline_task = parse_task(j.value("baseline_task", std::string("ctr")));
  c.hidden_dim = j.value("hidden_dim", std::size_t{0});
  c.tau_init = j.value("tau_init", 5.0);
  c.init_seed = j.value("init_seed", std::uint64_t{1});
}

}  // namespace mvke
