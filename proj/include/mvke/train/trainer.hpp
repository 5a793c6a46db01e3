#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mvke/data/dataset.hpp"
#include "mvke/eval/auc.hpp"
#include "mvke/log.hpp"
#include "mvke/model/common.hpp"
#include "mvke/train/adam.hpp"

namespace mvke {

enum class TaskMode { kCtrOnly, kCvrOnly, kMulti };

inline TaskSet tasks_of(TaskMode mode) {
  switch (mode) {
    case TaskMode::kCtrOnly: return {true, false};
    case TaskMode::kCvrOnly: return {false, true};
    default: return {true, true};
  }
}

inline const char* task_mode_name(TaskMode m) {
  return m == TaskMode::kCtrOnly ? "ctr-only" : m == TaskMode::kCvrOnly ? "cvr-only" : "multi";
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::uint64_t seed = 1;
  TaskMode mode = TaskMode::kMulti;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    // Zero is accepted so a run can be frozen for baseline comparisons.
    if (!(adam.learning_rate >= 0) || !std::isfinite(adam.learning_rate))
      throw ConfigError("learning_rate must be a finite value >= 0");
  }
};

/// Joint objective: sum of per-task BCE over the whole batch (multi mode),
/// or one task's BCE alone.
template <typename Model>
auto mtl_loss(const Model& model, const Batch& batch, TaskMode mode) {
  using T = typename std::remove_cvref_t<decltype(model.params().all().front().tensor)>::value_type;
  const TaskSet tasks = tasks_of(mode);
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
    if (tasks.has(t) && !model.supports(t))
      throw ConfigError(std::string("task mode ") + task_mode_name(mode) + " needs task " + task_name(t) +
                        " which the model does not provide");
  const auto out = model.forward(batch, tasks);
  Tensor<T> loss;
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    if (!tasks.has(t)) continue;
    const auto labels = label_values<T>(batch, t);
    auto term = bce_loss(out.prob(t), std::span<const T>(labels));
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

/// Predicted probabilities for one task over a whole dataset, without a graph.
template <typename Model>
std::vector<double> predict(const Model& model, const Dataset& ds, TaskId task, std::size_t batch_size = 1024) {
  NoGradGuard no_grad;
  std::vector<double> scores;
  scores.reserve(ds.size());
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    auto batch = make_batch(std::span<const Example>(ds.data() + begin, end - begin), model.config().schema);
    auto out = model.forward(batch, TaskSet::only(task));
    for (auto v : out.prob(task).data()) scores.push_back(static_cast<double>(v));
  }
  return scores;
}

inline std::vector<std::uint8_t> task_labels(const Dataset& ds, TaskId task) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size());
  for (const auto& ex : ds) out.push_back(task == TaskId::kCtr ? ex.click : ex.conv);
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::optional<double> ctr_auc;
  std::optional<double> cvr_auc;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
  std::size_t best_epoch = 0;
};

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// CSV: epoch,train_loss,ctr_auc,cvr_auc (empty cell for an untrained task).
inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,train_loss,ctr_auc,cvr_auc\n";
  for (const auto& e : h.epochs)
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << (e.ctr_auc ? format_double(*e.ctr_auc) : "")
       << ',' << (e.cvr_auc ? format_double(*e.cvr_auc) : "") << '\n';
  return os.str();
}

/// Trains in place. After return the model holds the parameters of the epoch
/// with the best mean validation AUC over the trained tasks (earliest wins ties).
template <typename Model>
TrainHistory fit(Model& model, const Dataset& train, const Dataset& valid, const TrainConfig& cfg) {
  using T = typename std::remove_cvref_t<decltype(model.params().all().front().tensor)>::value_type;
  cfg.validate();
  const auto& schema = model.config().schema;
  const TaskSet tasks = tasks_of(cfg.mode);
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
    if (tasks.has(t) && !model.supports(t))
      throw ConfigError(std::string("model does not provide task ") + task_name(t));
  for (const auto& ex : train) validate_against(ex, schema);
  for (const auto& ex : valid) validate_against(ex, schema);

  TrainHistory history;
  if (cfg.epochs == 0) return history;
  if (train.empty()) throw DataError("training set is empty");

  Adam<T> optimizer(model.params(), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_score = -1;
  std::vector<std::vector<T>> best_params;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_total = 0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      auto batch = make_batch(train, std::span<const std::size_t>(order.data() + begin, end - begin), schema);
      try {
        auto loss = mtl_loss(model, batch, cfg.mode);
        loss.backward();
        optimizer.step();
        loss_total += static_cast<double>(loss.item());
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(n_batches + 1) + ": " + e.what());
      }
      ++n_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_total / static_cast<double>(n_batches);
    double score = 0;
    int n_scored = 0;
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
      if (!tasks.has(t) || valid.empty()) continue;
      const double a = auc(predict(model, valid, t), task_labels(valid, t));
      (t == TaskId::kCtr ? rec.ctr_auc : rec.cvr_auc) = a;
      score += a;
      ++n_scored;
    }
    if (n_scored) score /= n_scored;
    log::info("epoch " + std::to_string(epoch) + " loss=" + format_double(rec.train_loss) +
              (rec.ctr_auc ? " ctr_auc=" + format_double(*rec.ctr_auc) : "") +
              (rec.cvr_auc ? " cvr_auc=" + format_double(*rec.cvr_auc) : ""));
    history.epochs.push_back(rec);
    if (valid.empty() || score > best_score) {
      best_score = score;
      best_params = model.params().snapshot();
      history.best_epoch = epoch;
    }
  }
  model.params().restore(best_params);
  return history;
}

}  // namespace mvke
