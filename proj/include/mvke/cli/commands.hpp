#pragma once

#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <variant>

#include "mvke/cli/run_config.hpp"
#include "mvke/eval/evaluate.hpp"
#include "mvke/eval/gates.hpp"
#include "mvke/eval/sweep.hpp"
#include "mvke/log.hpp"
#include "mvke/serve/bench.hpp"
#include "mvke/serve/cache_io.hpp"
#include "mvke/train/checkpoint.hpp"

// Pipeline subcommands. Each takes a resolved RunConfig and an output
// directory, writes its artifacts there together with config.resolved.json,
// and reports failures as mvke::Error subclasses (whose exit_code() the
// binary returns). Timestamps only ever go to <out>/mvke.log.

namespace mvke::cli {

namespace fs = std::filesystem;

template <typename F>
decltype(auto) with_precision(bool f64, F&& f) {
  if (f64) return f.template operator()<double>();
  return f.template operator()<float>();
}

inline void prepare_out(const RunConfig& rc, const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
  log::set_file((out / "mvke.log").string());
  detail::write_json_file(out / "config.resolved.json", rc);
}

inline FieldSchema read_schema(const fs::path& path) {
  try {
    auto schema = detail::read_json_file(path).get<FieldSchema>();
    schema.validate();
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct LoadedData {
  FieldSchema schema;
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Reads <data_dir>/{schema.json,train.jsonl,test.jsonl}; the trailing
/// `valid_fraction` of the training file becomes the validation split.
inline LoadedData load_data(const RunConfig& rc, bool need_train = true) {
  const fs::path dir = rc.data_dir;
  LoadedData d;
  d.schema = read_schema(dir / "schema.json");
  d.schema.embed_dim = rc.embed_dim;
  if (need_train) {
    d.train = read_dataset((dir / "train.jsonl").string());
    const auto n_valid = static_cast<std::size_t>(rc.valid_fraction * static_cast<double>(d.train.size()));
    const auto split = d.train.begin() + static_cast<std::ptrdiff_t>(d.train.size() - n_valid);
    d.valid.assign(std::make_move_iterator(split), std::make_move_iterator(d.train.end()));
    d.train.erase(split, d.train.end());
  }
  d.test = read_dataset((dir / "test.jsonl").string());
  return d;
}

inline std::string require_checkpoint(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UsageError("this command needs --checkpoint");
  return rc.checkpoint;
}

/// Synthetic logs plus the generator's ground truth and field schema.
inline void gen_data(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  const auto data = generate(rc.generator);
  write_dataset(data.train, (out / "train.jsonl").string());
  write_dataset(data.test, (out / "test.jsonl").string());
  write_truth(data.truth, (out / "truth.json").string());
  detail::write_json_file(out / "schema.json", rc.generator.schema(rc.embed_dim));
  log::info("gen-data: " + std::to_string(data.train.size()) + " train and " + std::to_string(data.test.size()) +
            " test records in " + out.string());
}

/// Trains the configured mode; writes model.ckpt and history.csv.
inline void train(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  const auto data = load_data(rc);
  const auto mc = rc.model_config(data.schema);
  log::info("train: " + model_id(mc) + " on " + std::to_string(data.train.size()) + " records (" +
            std::to_string(data.valid.size()) + " held out)");
  with_precision(rc.f64, [&]<typename T>() {
    auto run = [&](auto model) {
      const auto history = fit(model, data.train, data.valid, rc.train);
      save_model(model, (out / "model.ckpt").string());
      write_text((out / "history.csv").string(), history_csv(history));
    };
    if (mc.kind == ModelKind::kMvke)
      run(MvkeModel<T>(mc));
    else
      run(TwoTowerModel<T>(mc));
  });
}

/// Test-set AUC of a checkpoint for every task it provides; writes report.csv.
inline void eval(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  const auto ckpt = read_checkpoint(require_checkpoint(rc));
  const auto data = load_data(rc, /*need_train=*/false);
  with_precision(rc.f64, [&]<typename T>() {
    const auto model = load_model<T>(ckpt);
    const auto report = std::visit(
        [&](const auto& m) { return evaluate(m, data.test, TaskSet{}, model_id(m.config()), rc.seed); }, model);
    write_text((out / "report.csv").string(), report_csv(report));
  });
}

/// Multi-task train + test AUC per expert count; writes sweep.csv.
inline void sweep(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  const auto data = load_data(rc);
  RunConfig base = rc;
  base.mode = RunMode::kMvkeMt;
  base.routing.reset();
  const auto mc = base.model_config(data.schema);
  with_precision(rc.f64, [&]<typename T>() {
    const auto rows = sensitivity_sweep<T>(rc.sweep_counts, mc, rc.train, data.train, data.valid, data.test);
    write_text((out / "sweep.csv").string(), sweep_csv(rows));
  });
}

/// Per-tag gate weights of an MVKE checkpoint; writes weights.csv.
inline void export_attention(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  const auto ckpt = read_checkpoint(require_checkpoint(rc));
  with_precision(rc.f64, [&]<typename T>() {
    const auto model = load_model<T>(ckpt);
    const auto* mvke = std::get_if<MvkeModel<T>>(&model);
    if (!mvke) throw UsageError("export-attention needs an MVKE checkpoint");
    std::vector<std::int32_t> tags = rc.gate_tags;
    if (tags.empty()) {
      tags.resize(mvke->config().schema.tag_vocab_size);
      std::iota(tags.begin(), tags.end(), 0);
    }
    write_text((out / "weights.csv").string(),
               gate_weights_csv(gate_weight_matrices(*mvke, tags), mvke->n_experts()));
  });
}

/// Builds serving caches for the test users and every tag, then writes
/// per-user top-N tags for each task; outputs cache/ and assignments.csv.
inline void predict(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  if (rc.topk == 0) throw UsageError("top-N must be at least 1");
  const auto ckpt = read_checkpoint(require_checkpoint(rc));
  const auto data = load_data(rc, /*need_train=*/false);
  with_precision(rc.f64, [&]<typename T>() {
    const auto model = load_model<T>(ckpt);
    const auto* mvke = std::get_if<MvkeModel<T>>(&model);
    if (!mvke) throw UsageError("predict needs an MVKE checkpoint");
    std::vector<std::int32_t> tags(mvke->config().schema.tag_vocab_size);
    std::iota(tags.begin(), tags.end(), 0);
    const auto caches = build_caches(*mvke, unique_users(data.test), tags);
    write_caches(out / "cache", caches);
    std::vector<TagAssignmentRow> rows;
    for (const auto& tc : caches.tags) {
      auto r = assign_topk(caches, rc.topk, tc.task);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    write_text((out / "assignments.csv").string(), assignments_csv(rows));
    log::info("predict: " + std::to_string(caches.counters.user_tower) + " user-tower and " +
              std::to_string(caches.counters.tag_tower) + " tag-tower passes");
  });
}

/// Cached versus per-pair serving cost; writes bench.csv. Uses the
/// checkpoint when given, otherwise freshly initialised parameters.
inline void bench(const RunConfig& rc, const fs::path& out) {
  prepare_out(rc, out);
  with_precision(rc.f64, [&]<typename T>() {
    auto run = [&](const MvkeModel<T>& m) {
      write_text((out / "bench.csv").string(), bench_csv(mvke::bench(m, rc.bench_sizes, rc.seed, rc.bench_naive)));
    };
    if (rc.checkpoint.empty()) {
      RunConfig fresh = rc;
      fresh.mode = RunMode::kMvkeMt;
      run(MvkeModel<T>(fresh.model_config(rc.generator.schema(rc.embed_dim))));
      return;
    }
    const auto model = load_model<T>(rc.checkpoint);
    const auto* mvke = std::get_if<MvkeModel<T>>(&model);
    if (!mvke) throw UsageError("bench needs an MVKE checkpoint");
    run(*mvke);
  });
}

}  // namespace mvke::cli
