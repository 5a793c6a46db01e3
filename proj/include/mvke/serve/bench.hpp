#pragma once

#include <chrono>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mvke/serve/caches.hpp"

namespace mvke {

struct BenchRow {
  std::size_t n_users = 0;
  std::size_t n_tags = 0;
  std::size_t n_tasks = 0;
  std::string path;  // "cached" or "naive"
  InvocationCounters counters;
  std::uint64_t expected_calls = 0;
  double wall_ms = 0;
};

struct BenchSize {
  std::size_t n_users;
  std::size_t n_tags;
};

/// Scores every (user, tag, task) triple through the cached path and through
/// a per-pair full forward, recording tower invocations and wall time. Users
/// are random draws from the schema; tags are ids 0..n_tags-1.
template <typename T>
std::vector<BenchRow> bench(const MvkeModel<T>& model, const std::vector<BenchSize>& sizes, std::uint64_t seed,
                            bool include_naive = true) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  const auto& schema = model.config().schema;
  std::vector<TaskId> tasks;
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
    if (model.supports(t)) tasks.push_back(t);

  std::vector<BenchRow> rows;
  for (const auto& size : sizes) {
    if (size.n_tags > schema.tag_vocab_size)
      throw ConfigError("bench: " + std::to_string(size.n_tags) + " tags exceeds the vocabulary");
    const auto users = random_users(schema, size.n_users, seed);
    std::vector<std::int32_t> tags(size.n_tags);
    std::iota(tags.begin(), tags.end(), 0);
    const std::uint64_t nu = size.n_users, nt = size.n_tags, nk = tasks.size();

    auto t0 = Clock::now();
    auto caches = build_caches(model, users, tags);
    double checksum = 0;  // keeps the scoring loop observable
    for (TaskId t : tasks)
      for (const auto& row : cached_score_matrix(caches, users, tags, t))
        for (double s : row) checksum += s;
    rows.push_back({nu, nt, nk, "cached", caches.counters, nu + nt * nk, ms_since(t0)});

    if (include_naive) {
      InvocationCounters counters;
      t0 = Clock::now();
      for (TaskId t : tasks)
        for (const auto& row : naive_score_matrix(model, users, tags, t, counters))
          for (double s : row) checksum -= s;
      rows.push_back({nu, nt, nk, "naive", counters, nu * nt * nk, ms_since(t0)});
    }
    log::debug("bench checksum " + std::to_string(checksum));
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "n_users,n_tags,n_tasks,path,user_tower_calls,tag_tower_calls,pair_forward_calls,expected_calls,wall_ms\n";
  for (const auto& r : rows)
    os << r.n_users << ',' << r.n_tags << ',' << r.n_tasks << ',' << r.path << ',' << r.counters.user_tower << ','
       << r.counters.tag_tower << ',' << r.counters.pair_forward << ',' << r.expected_calls << ','
       << format_double(r.wall_ms) << '\n';
  return os.str();
}

}  // namespace mvke
