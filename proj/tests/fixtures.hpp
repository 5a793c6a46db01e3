#pragma once

// Small schemas, hand-built examples and model helpers shared by the suites.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mvke/model/mvke.hpp"
#include "mvke/model/two_tower.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace mvke;

inline FieldSchema small_schema(std::size_t d = 8) {
  return FieldSchema{{{"age", 7, 1}, {"region", 5, 1}, {"interests", 9, 3}}, 12, d};
}

/// Examples with uniformly drawn features, 1-3 tags and labels obeying
/// conversion => click.
inline Dataset random_examples(const FieldSchema& schema, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](std::size_t vocab) { return static_cast<std::int32_t>(rng() % vocab); };
  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.user_id = static_cast<std::int64_t>(i % 17);
    ex.ad_id = static_cast<std::int64_t>(i);
    ex.impression = static_cast<std::int64_t>(i);
    for (const auto& f : schema.user_fields) {
      std::vector<std::int32_t> values{draw(f.vocab_size)};
      if (f.max_values > 1 && unit(rng) < 0.5) values.push_back(draw(f.vocab_size));
      normalize_tags(values);
      ex.fields.push_back(values);
    }
    const std::size_t n_tags = 1 + rng() % 3;
    for (std::size_t t = 0; t < n_tags; ++t) ex.tags.push_back(draw(schema.tag_vocab_size));
    normalize_tags(ex.tags);
    ex.click = unit(rng) < 0.5;
    ex.conv = ex.click && unit(rng) < 0.5;
    ds.push_back(std::move(ex));
  }
  return ds;
}

/// Guarantees both labels appear for both tasks in the first four records.
inline Dataset mixed_label_examples(const FieldSchema& schema, std::size_t n, std::uint64_t seed) {
  auto ds = random_examples(schema, n, seed);
  const std::uint8_t clicks[4] = {1, 0, 1, 0}, convs[4] = {1, 0, 0, 0};
  for (std::size_t i = 0; i < 4 && i < ds.size(); ++i) {
    ds[i].click = clicks[i];
    ds[i].conv = convs[i];
  }
  return ds;
}

inline ModelConfig mvke_config(FieldSchema schema, ExpertRouting routing = five_expert_routing(), std::uint64_t seed = 3) {
  ModelConfig mc;
  mc.schema = std::move(schema);
  mc.routing = std::move(routing);
  mc.init_seed = seed;
  return mc;
}

inline ModelConfig two_tower_config(FieldSchema schema, TaskId task, std::uint64_t seed = 3) {
  ModelConfig mc;
  mc.kind = ModelKind::kTwoTower;
  mc.schema = std::move(schema);
  mc.baseline_task = task;
  mc.init_seed = seed;
  return mc;
}

inline Batch batch_of(const Dataset& ds, const FieldSchema& schema) {
  return make_batch(std::span<const Example>(ds), schema);
}

template <typename T>
std::vector<T> values_of(const Tensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

/// Row-major [rows x cols] parameter as an oracle matrix.
template <typename T>
oracle::Mat as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  oracle::Mat m(rows, oracle::Vec(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t[r * cols + c];
  return m;
}

template <typename T>
oracle::Vec as_vec(const Tensor<T>& t) {
  return oracle::Vec(t.data().begin(), t.data().end());
}

template <typename T>
oracle::Vec row_of(const Tensor<T>& t, std::size_t row, std::size_t cols) {
  return oracle::Vec(t.data().begin() + static_cast<std::ptrdiff_t>(row * cols),
                     t.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * cols));
}

/// Adds `delta` to every entry of the named parameters.
template <typename T>
void perturb(ParameterStore<T>& store, const std::string& prefix, T delta) {
  for (auto& p : store.all())
    if (p.name.rfind(prefix, 0) == 0)
      for (auto& v : p.tensor.mutable_data()) v += delta;
}

/// Moves every parameter to a generic point by adding U(-spread, spread).
/// Finite differences are poorly conditioned at the initial point: small
/// embeddings put relu inputs near their kink and leave some gradients near
/// the 1e-8 floor, where central-difference roundoff dominates.
template <typename T>
void move_to_generic_point(ParameterStore<T>& store, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (auto& p : store.all())
    for (auto& v : p.tensor.mutable_data()) v += static_cast<T>(u(rng));
}

}  // namespace fixtures
