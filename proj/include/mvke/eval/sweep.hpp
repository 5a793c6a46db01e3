#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "mvke/eval/evaluate.hpp"
#include "mvke/model/mvke.hpp"

namespace mvke {

struct SweepRow {
  std::size_t n_experts = 0;
  double ctr_auc = 0;
  double cvr_auc = 0;
};

/// One multi-task train + test evaluation per expert count, all with the
/// same seeds. Routing for each count comes from `default_routing`.
template <typename T>
std::vector<SweepRow> sensitivity_sweep(const std::vector<std::size_t>& counts, const ModelConfig& base_model,
                                        const TrainConfig& base_train, const Dataset& train, const Dataset& valid,
                                        const Dataset& test) {
  std::vector<SweepRow> rows;
  for (std::size_t k : counts) {
    ModelConfig mc = base_model;
    mc.kind = ModelKind::kMvke;
    mc.routing = default_routing(k);
    TrainConfig tc = base_train;
    tc.mode = TaskMode::kMulti;
    MvkeModel<T> model(mc);
    log::info("sweep: training with " + std::to_string(k) + " experts");
    fit(model, train, valid, tc);
    const auto report = evaluate(model, test, TaskSet{}, "mvke-k" + std::to_string(k), tc.seed);
    rows.push_back({k, report.auc_of(TaskId::kCtr), report.auc_of(TaskId::kCvr)});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "vke_count,ctr_auc,cvr_auc\n";
  for (const auto& r : rows)
    os << r.n_experts << ',' << format_double(r.ctr_auc) << ',' << format_double(r.cvr_auc) << '\n';
  return os.str();
}

}  // namespace mvke
