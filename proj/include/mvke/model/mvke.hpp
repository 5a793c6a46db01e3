#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mvke/model/common.hpp"

namespace mvke {

template <typename T>
struct GateOutput {
  Tensor<T> user_emb;  // [B x d]
  Tensor<T> weights;   // [B x |K_task|]
};

/// Mixture of Virtual-Kernel Experts.
///
/// Each expert k owns a learnable virtual kernel (row k of `vk`). Inside the
/// expert the kernel is the attention query over the user's field
/// embeddings; inside each task gate the kernels are the keys queried by the
/// tag embedding, so mixing weights depend only on (tag, kernels, gate
/// parameters) and never on the user.
template <typename T>
class MvkeModel {
 public:
  explicit MvkeModel(ModelConfig config) : config_(std::move(config)) {
    if (config_.kind != ModelKind::kMvke) throw ConfigError("MvkeModel requires an mvke config");
    config_.validate();
    init_parameters();
  }
  MvkeModel(const MvkeModel&) = delete;
  MvkeModel& operator=(const MvkeModel&) = delete;
  MvkeModel(MvkeModel&&) noexcept = default;
  MvkeModel& operator=(MvkeModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  std::size_t n_experts() const { return config_.routing.n_experts; }
  bool supports(TaskId t) const { return config_.supports(t); }

  static std::string expert_prefix(std::size_t k) { return "vke." + std::to_string(k) + "."; }

  Tensor<T> embed_user_fields(const Batch& batch) const {
    return mvke::embed_user_fields(params_, config_.schema, batch);
  }

  Tensor<T> tag_tower(const Batch& batch, TaskId task) const {
    require_task(task);
    return mvke::tag_tower(params_, batch, task);
  }

  /// One expert's user representation from field embeddings [B x m x d] -> [B x d].
  Tensor<T> vke_forward(const Tensor<T>& fields, std::size_t expert) const {
    if (expert >= n_experts()) throw ConfigError("expert index out of range");
    const std::size_t batch = fields.dim(0), m = fields.dim(1), d = fields.dim(2);
    const auto pre = expert_prefix(expert);
    auto flat = reshape(fields, {batch * m, d});
    auto keys = reshape(tanh(add_bias(matmul(flat, p(pre + "W_K")), p(pre + "b_K"))), {batch, m, d});
    auto values = reshape(tanh(add_bias(matmul(flat, p(pre + "W_V")), p(pre + "b_V"))), {batch, m, d});
    auto query = tanh(add_bias(matmul(gather_rows(p("vk"), {expert}), p(pre + "W_Q")), p(pre + "b_Q")));
    auto attended = batched_attention(broadcast_batch(query, batch), keys, values);
    auto context = reshape(attended.out, {batch, d});
    auto hidden = relu(add_bias(matmul(context, p(pre + "head.W1")), p(pre + "head.b1")));
    return add_bias(matmul(hidden, p(pre + "head.W2")), p(pre + "head.b2"));
  }

  /// Gate mixing weights [B x |K_task|] for tag embeddings [B x d].
  Tensor<T> gate_weights(const Tensor<T>& tag_emb, TaskId task) const {
    const auto& experts = config_.routing.experts_for(task);
    if (experts.empty()) throw ConfigError(std::string("routing set for ") + task_name(task) + " is empty");
    const std::size_t batch = tag_emb.dim(0), d = tag_emb.dim(1), n = experts.size();
    const std::string pre = std::string("vkg.") + task_name(task) + ".";
    auto query = reshape(tanh(add_bias(matmul(tag_emb, p(pre + "W_Q")), p(pre + "b_Q"))), {batch, 1, d});
    auto keys = tanh(add_bias(matmul(gather_rows(p("vk"), experts), p(pre + "W_K")), p(pre + "b_K")));
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    auto logits = scale(bmm(query, broadcast_batch(keys, batch), /*transpose_b=*/true), inv_sqrt_d);
    return reshape(softmax(logits), {batch, n});
  }

  /// Tag-conditioned mixture of the task's expert outputs (rows ordered by
  /// ascending expert index). The value path is the identity.
  GateOutput<T> vkg_combine(const std::vector<Tensor<T>>& expert_outputs, const Tensor<T>& tag_emb,
                            TaskId task) const {
    const auto& experts = config_.routing.experts_for(task);
    if (expert_outputs.size() != experts.size())
      throw ConfigError("vkg_combine: expected " + std::to_string(experts.size()) + " expert outputs");
    auto weights = gate_weights(tag_emb, task);
    const std::size_t batch = tag_emb.dim(0), d = tag_emb.dim(1), n = experts.size();
    auto stacked = reshape(concat_cols(expert_outputs), {batch, n, d});
    auto mixed = bmm(reshape(weights, {batch, 1, n}), stacked);
    return {reshape(mixed, {batch, d}), weights};
  }

  Tensor<T> score_pair(const Tensor<T>& user_emb, const Tensor<T>& tag_emb, TaskId task) const {
    return mvke::score_pair(user_emb, tag_emb, p(std::string("tau.") + task_name(task)));
  }

  /// Full forward. Expert outputs are computed once and shared by both tasks.
  ForwardResult<T> forward(const Batch& batch, TaskSet tasks = {}) const {
    if (batch.size == 0) throw DataError("empty batch");
    const auto& routing = config_.routing;
    std::vector<bool> needed(n_experts(), false);
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
      if (tasks.has(t)) {
        require_task(t);
        for (auto e : routing.experts_for(t)) needed[e] = true;
      }

    auto fields = embed_user_fields(batch);
    std::vector<Tensor<T>> outputs(n_experts());
    for (std::size_t e = 0; e < n_experts(); ++e)
      if (needed[e]) outputs[e] = vke_forward(fields, e);

    ForwardResult<T> result;
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
      if (!tasks.has(t)) continue;
      std::vector<Tensor<T>> selected;
      for (auto e : routing.experts_for(t)) selected.push_back(outputs[e]);
      auto tag_emb = tag_tower(batch, t);
      auto gate = vkg_combine(selected, tag_emb, t);
      result.p[static_cast<int>(t)] = score_pair(gate.user_emb, tag_emb, t);
      result.gate_weights[static_cast<int>(t)] = gate.weights;
    }
    return result;
  }

 private:
  const Tensor<T>& p(const std::string& name) const { return params_.get(name); }

  void require_task(TaskId t) const {
    if (!supports(t)) throw ConfigError(std::string("task ") + task_name(t) + " is disabled by the routing");
  }

  void init_parameters() {
    std::mt19937_64 rng(config_.init_seed);
    const std::size_t d = config_.schema.embed_dim, h = config_.hidden();
    add_user_embeddings(params_, rng, config_.schema);
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
      if (config_.routing.enabled(t)) add_tag_tower(params_, rng, config_, t);
    params_.add("vk", {n_experts(), d}, init::distinct_unit_rows<T>(rng, n_experts(), d));
    for (std::size_t k = 0; k < n_experts(); ++k) {
      const auto pre = expert_prefix(k);
      for (const char* proj : {"Q", "K", "V"}) {
        params_.add(pre + "W_" + proj, {d, d}, init::xavier<T>(rng, d, d));
        params_.add(pre + "b_" + proj, {d}, std::vector<T>(d, T(0)));
      }
      params_.add(pre + "head.W1", {d, h}, init::xavier<T>(rng, d, h));
      params_.add(pre + "head.b1", {h}, std::vector<T>(h, T(0)));
      params_.add(pre + "head.W2", {h, d}, init::xavier<T>(rng, h, d));
      params_.add(pre + "head.b2", {d}, std::vector<T>(d, T(0)));
    }
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
      if (!config_.routing.enabled(t)) continue;
      const std::string pre = std::string("vkg.") + task_name(t) + ".";
      params_.add(pre + "W_Q", {d, d}, init::xavier<T>(rng, d, d));
      params_.add(pre + "b_Q", {d}, std::vector<T>(d, T(0)));
      params_.add(pre + "W_K", {d, d}, init::xavier<T>(rng, d, d));
      params_.add(pre + "b_K", {d}, std::vector<T>(d, T(0)));
    }
  }

  ModelConfig config_;
  ParameterStore<T> params_;
};

}  // namespace mvke
