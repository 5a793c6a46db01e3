#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvke/data/dataset.hpp"
#include "mvke/eval/auc.hpp"
#include "mvke/train/trainer.hpp"

namespace mvke {

struct TaskEval {
  TaskId task;
  double auc = 0;
  std::size_t samples = 0;
  std::size_t positives = 0;
};

struct EvalReport {
  std::string model_id;
  std::uint64_t seed = 0;
  std::vector<TaskEval> tasks;

  const TaskEval* find(TaskId t) const {
    for (const auto& e : tasks)
      if (e.task == t) return &e;
    return nullptr;
  }
  double auc_of(TaskId t) const {
    const auto* e = find(t);
    if (!e) throw ConfigError(std::string("report has no entry for task ") + task_name(t));
    return e->auc;
  }
};

/// AUC per requested task. CVR uses every impression with its conversion
/// label, the same convention as the training loss.
template <typename Model>
EvalReport evaluate(const Model& model, const Dataset& ds, TaskSet tasks, std::string model_id = "model",
                    std::uint64_t seed = 0) {
  if (ds.empty()) throw DataError("evaluation dataset is empty");
  EvalReport report{std::move(model_id), seed, {}};
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    if (!tasks.has(t) || !model.supports(t)) continue;
    const auto labels = task_labels(ds, t);
    TaskEval e{t, auc(predict(model, ds, t), labels), ds.size(), 0};
    for (auto y : labels) e.positives += y;
    report.tasks.push_back(e);
  }
  return report;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "model,seed,task,auc,samples,positives\n";
  for (const auto& e : r.tasks)
    os << r.model_id << ',' << r.seed << ',' << task_name(e.task) << ',' << format_double(e.auc) << ','
       << e.samples << ',' << e.positives << '\n';
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << text;
  if (!os) throw DataError("failed writing " + path);
}

}  // namespace mvke
