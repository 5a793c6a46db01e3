#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mvke/data/dataset.hpp"
#include "mvke/model/config.hpp"
#include "mvke/ops.hpp"
#include "mvke/parameters.hpp"

namespace mvke {

/// Which task heads a forward pass should evaluate.
struct TaskSet {
  bool ctr = true;
  bool cvr = true;

  static TaskSet only(TaskId t) { return t == TaskId::kCtr ? TaskSet{true, false} : TaskSet{false, true}; }
  bool has(TaskId t) const { return t == TaskId::kCtr ? ctr : cvr; }
};

template <typename T>
struct ForwardResult {
  std::array<Tensor<T>, 2> p;             // [B] per task, undefined when not evaluated
  std::array<Tensor<T>, 2> gate_weights;  // [B x |K_task|], MVKE only

  const Tensor<T>& prob(TaskId t) const { return p[static_cast<int>(t)]; }
  const Tensor<T>& gates(TaskId t) const { return gate_weights[static_cast<int>(t)]; }
};

namespace init {

template <typename T>
std::vector<T> uniform(std::mt19937_64& rng, std::size_t n, double limit) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

/// Xavier/Glorot uniform for a [fan_in x fan_out] weight.
template <typename T>
std::vector<T> xavier(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  return uniform<T>(rng, fan_in * fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

/// Unit-norm random rows with pairwise cosine below 0.99.
template <typename T>
std::vector<T> distinct_unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> accepted;
  while (accepted.size() < rows) {
    std::vector<double> v(d);
    double norm = 0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    bool distinct = true;
    for (const auto& other : accepted) {
      double c = 0;
      for (std::size_t i = 0; i < d; ++i) c += v[i] * other[i];
      if (c >= 0.99) distinct = false;
    }
    if (distinct) accepted.push_back(std::move(v));
  }
  std::vector<T> out;
  out.reserve(rows * d);
  for (const auto& row : accepted)
    for (double x : row) out.push_back(static_cast<T>(x));
  return out;
}

}  // namespace init

/// Registers the per-task tag tower: embedding table, affine map, temperature.
template <typename T>
void add_tag_tower(ParameterStore<T>& params, std::mt19937_64& rng, const ModelConfig& cfg, TaskId task) {
  const std::size_t d = cfg.schema.embed_dim;
  const std::string t = task_name(task);
  params.add("tag_emb." + t, {cfg.schema.tag_vocab_size, d},
             init::uniform<T>(rng, cfg.schema.tag_vocab_size * d, 0.05));
  params.add("tag_tower." + t + ".W", {d, d}, init::xavier<T>(rng, d, d));
  params.add("tag_tower." + t + ".b", {d}, std::vector<T>(d, T(0)));
  params.add("tau." + t, {1}, {static_cast<T>(cfg.tau_init)});
}

template <typename T>
void add_user_embeddings(ParameterStore<T>& params, std::mt19937_64& rng, const FieldSchema& schema) {
  for (const auto& f : schema.user_fields)
    params.add("user_emb." + f.name, {f.vocab_size, schema.embed_dim},
               init::uniform<T>(rng, f.vocab_size * schema.embed_dim, 0.05));
}

/// Mean of the task's tag embeddings followed by tanh(affine): [B x d].
template <typename T>
Tensor<T> tag_tower(const ParameterStore<T>& params, const Batch& batch, TaskId task) {
  const std::string t = task_name(task);
  auto pooled = embedding_bag_mean(params.get("tag_emb." + t), batch.tag_offsets, batch.tag_indices);
  return tanh(add_bias(matmul(pooled, params.get("tag_tower." + t + ".W")), params.get("tag_tower." + t + ".b")));
}

/// Field embeddings [B x m x d]; multi-valued fields are mean-pooled.
template <typename T>
Tensor<T> embed_user_fields(const ParameterStore<T>& params, const FieldSchema& schema, const Batch& batch) {
  std::vector<Tensor<T>> columns;
  columns.reserve(schema.num_fields());
  for (std::size_t j = 0; j < schema.num_fields(); ++j) {
    const auto& f = schema.user_fields[j];
    try {
      columns.push_back(
          embedding_bag_mean(params.get("user_emb." + f.name), batch.field_offsets[j], batch.field_indices[j]));
    } catch (const DataError& e) {
      throw DataError("field '" + f.name + "': " + e.what());
    }
  }
  return reshape(concat_cols(columns), {batch.size, schema.num_fields(), schema.embed_dim});
}

/// p = sigmoid(tau * cos(E_u, E_T)), row-wise: [B].
template <typename T>
Tensor<T> score_pair(const Tensor<T>& user_emb, const Tensor<T>& tag_emb, const Tensor<T>& tau) {
  return sigmoid(scale_by(cosine_similarity(user_emb, tag_emb), tau));
}

template <typename T>
std::vector<T> label_values(const Batch& batch, TaskId task) {
  const auto& src = task == TaskId::kCtr ? batch.click : batch.conv;
  return std::vector<T>(src.begin(), src.end());
}

}  // namespace mvke
