// mvke: synthetic-data pipeline for the virtual-kernel expert tagging model.
//
//   mvke gen-data --out data
//   mvke train --data data --out run --mode mvke-mt
//   mvke eval --data data --checkpoint run/model.ckpt --out run
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "mvke/cli/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::size_t> vke_count;
  std::optional<std::size_t> topk;
  std::optional<std::string> precision;
  std::optional<std::string> data;
  std::optional<std::string> checkpoint;
};

void add_common(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "JSON run config (flags override its values)");
  cmd.add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd.add_option("--seed", f.seed, "Seed for data, initialisation and shuffling");
  cmd.add_option("--precision", f.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  cmd.add_option("--data", f.data, "Directory holding schema.json, train.jsonl and test.jsonl");
  cmd.add_option("--checkpoint", f.checkpoint, "Model checkpoint file");
  cmd.add_option("--mode", f.mode, "noMTL-ctr | noMTL-cvr | mvke-st-ctr | mvke-st-cvr | mvke-mt");
  cmd.add_option("--vke-count", f.vke_count, "Number of virtual-kernel experts");
  cmd.add_option("--topk", f.topk, "Tags assigned per user and task");
}

/// Defaults, then the config file, then explicit flags.
mvke::RunConfig resolve(const Flags& f) {
  mvke::RunConfig rc = f.config.empty() ? mvke::RunConfig{} : mvke::load_run_config(f.config);
  if (f.seed) rc.seed = *f.seed;
  if (f.mode) rc.mode = mvke::parse_run_mode(*f.mode);
  if (f.vke_count) {
    rc.vke_count = *f.vke_count;
    rc.routing.reset();
  }
  if (f.topk) rc.topk = *f.topk;
  if (f.precision) rc.f64 = *f.precision == "f64";
  if (f.data) rc.data_dir = *f.data;
  if (f.checkpoint) rc.checkpoint = *f.checkpoint;
  rc.resolve();
  rc.validate();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task user tagging with virtual-kernel experts"};
  app.require_subcommand(1);
  Flags flags;
  using Command = std::function<void(const mvke::RunConfig&, const std::filesystem::path&)>;
  Command selected;
  const std::pair<const char*, std::pair<const char*, Command>> commands[] = {
      {"gen-data", {"Generate synthetic train/test logs with ground truth", mvke::cli::gen_data}},
      {"train", {"Train a model and write model.ckpt and history.csv", mvke::cli::train}},
      {"eval", {"Evaluate a checkpoint on the test split into report.csv", mvke::cli::eval}},
      {"sweep", {"Train and evaluate over several expert counts into sweep.csv", mvke::cli::sweep}},
      {"export-attention", {"Write per-tag gate weights into weights.csv", mvke::cli::export_attention}},
      {"predict", {"Build serving caches and per-user top-N tags", mvke::cli::predict}},
      {"bench", {"Compare cached and per-pair serving cost into bench.csv", mvke::cli::bench}},
  };
  for (const auto& [name, entry] : commands) {
    auto* cmd = app.add_subcommand(name, entry.first);
    add_common(*cmd, flags);
    cmd->callback([&selected, fn = entry.second] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const auto rc = resolve(flags);
    selected(rc, flags.out);
    return 0;
  } catch (const mvke::Error& e) {
    mvke::log::write(mvke::log::Level::kError, e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    mvke::log::write(mvke::log::Level::kError, e.what());
    return 1;
  }
}
