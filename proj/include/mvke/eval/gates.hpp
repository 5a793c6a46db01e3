#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "mvke/model/mvke.hpp"
#include "mvke/train/trainer.hpp"

namespace mvke {

/// Batch carrying only singleton tag sets; the user side is left empty, which
/// is enough for anything that runs the tag tower alone.
inline Batch make_tag_batch(const std::vector<std::int32_t>& tags, std::size_t tag_vocab_size) {
  Batch b;
  b.size = tags.size();
  b.tag_offsets = {0};
  for (auto t : tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= tag_vocab_size)
      throw DataError("tag " + std::to_string(t) + " out of vocabulary");
    b.tag_indices.push_back(static_cast<std::size_t>(t));
    b.tag_offsets.push_back(b.tag_indices.size());
  }
  return b;
}

struct GateMatrix {
  TaskId task;
  std::vector<std::size_t> experts;  // column order
  std::vector<std::int32_t> tags;    // row order
  std::vector<std::vector<double>> weights;
};

/// Per-tag gate weights over each task's experts. User-independent by
/// construction, so no user input is needed.
template <typename T>
std::vector<GateMatrix> gate_weight_matrices(const MvkeModel<T>& model, const std::vector<std::int32_t>& tags,
                                             TaskSet tasks = {}) {
  NoGradGuard no_grad;
  std::vector<GateMatrix> out;
  if (tags.empty()) return out;
  const auto batch = make_tag_batch(tags, model.config().schema.tag_vocab_size);
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    if (!tasks.has(t) || !model.supports(t)) continue;
    GateMatrix g{t, model.config().routing.experts_for(t), tags, {}};
    auto w = model.gate_weights(model.tag_tower(batch, t), t);
    const std::size_t n = g.experts.size();
    for (std::size_t r = 0; r < tags.size(); ++r)
      g.weights.emplace_back(w.data().begin() + r * n, w.data().begin() + (r + 1) * n);
    out.push_back(std::move(g));
  }
  return out;
}

/// CSV with one column per expert of the model; cells for experts outside a
/// task's routing set are left empty.
inline std::string gate_weights_csv(const std::vector<GateMatrix>& matrices, std::size_t n_experts) {
  std::ostringstream os;
  os << "task,tag";
  for (std::size_t k = 0; k < n_experts; ++k) os << ",vke_" << k;
  os << '\n';
  for (const auto& g : matrices)
    for (std::size_t r = 0; r < g.tags.size(); ++r) {
      std::vector<std::string> cells(n_experts);
      for (std::size_t c = 0; c < g.experts.size(); ++c) cells[g.experts[c]] = format_double(g.weights[r][c]);
      os << task_name(g.task) << ',' << g.tags[r];
      for (const auto& cell : cells) os << ',' << cell;
      os << '\n';
    }
  return os.str();
}

}  // namespace mvke
