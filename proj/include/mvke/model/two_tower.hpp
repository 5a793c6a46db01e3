#pragma once

#include <random>
#include <string>

#include "mvke/model/common.hpp"

namespace mvke {

/// Plain single-task two-tower model (the noMTL baseline): mean of the field
/// embeddings through a two-layer MLP on the user side, the same tag tower
/// as MVKE on the other, scored by tempered cosine.
template <typename T>
class TwoTowerModel {
 public:
  explicit TwoTowerModel(ModelConfig config) : config_(std::move(config)) {
    if (config_.kind != ModelKind::kTwoTower) throw ConfigError("TwoTowerModel requires a two_tower config");
    config_.validate();
    std::mt19937_64 rng(config_.init_seed);
    const std::size_t d = config_.schema.embed_dim, h = config_.hidden();
    add_user_embeddings(params_, rng, config_.schema);
    add_tag_tower(params_, rng, config_, config_.baseline_task);
    params_.add("user_mlp.W1", {d, h}, init::xavier<T>(rng, d, h));
    params_.add("user_mlp.b1", {h}, std::vector<T>(h, T(0)));
    params_.add("user_mlp.W2", {h, d}, init::xavier<T>(rng, h, d));
    params_.add("user_mlp.b2", {d}, std::vector<T>(d, T(0)));
  }
  TwoTowerModel(const TwoTowerModel&) = delete;
  TwoTowerModel& operator=(const TwoTowerModel&) = delete;
  TwoTowerModel(TwoTowerModel&&) noexcept = default;
  TwoTowerModel& operator=(TwoTowerModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  TaskId task() const { return config_.baseline_task; }
  bool supports(TaskId t) const { return config_.supports(t); }

  Tensor<T> user_tower(const Batch& batch) const {
    auto pooled = mean(embed_user_fields(params_, config_.schema, batch), 1);
    auto hidden = relu(add_bias(matmul(pooled, p("user_mlp.W1")), p("user_mlp.b1")));
    return add_bias(matmul(hidden, p("user_mlp.W2")), p("user_mlp.b2"));
  }

  Tensor<T> tag_tower(const Batch& batch) const { return mvke::tag_tower(params_, batch, task()); }

  ForwardResult<T> forward(const Batch& batch, TaskSet tasks = {}) const {
    if (batch.size == 0) throw DataError("empty batch");
    const TaskId other = task() == TaskId::kCtr ? TaskId::kCvr : TaskId::kCtr;
    if (tasks.has(other) && !tasks.has(task()))
      throw ConfigError(std::string("two-tower baseline does not model task ") + task_name(other));
    ForwardResult<T> result;
    result.p[static_cast<int>(task())] =
        score_pair(user_tower(batch), tag_tower(batch), p(std::string("tau.") + task_name(task())));
    return result;
  }

 private:
  const Tensor<T>& p(const std::string& name) const { return params_.get(name); }

  ModelConfig config_;
  ParameterStore<T> params_;
};

}  // namespace mvke
