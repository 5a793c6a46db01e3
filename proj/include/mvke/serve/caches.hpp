#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvke/eval/gates.hpp"
#include "mvke/model/mvke.hpp"

namespace mvke {

/// A user as seen by the user tower: id plus categorical field values.
struct UserRecord {
  std::int64_t user_id = 0;
  std::vector<std::vector<std::int32_t>> fields;
};

/// Distinct users of a dataset in ascending id order; fields are taken from
/// each user's first occurrence.
inline std::vector<UserRecord> unique_users(const Dataset& ds) {
  std::map<std::int64_t, const Example*> first;
  for (const auto& ex : ds) first.emplace(ex.user_id, &ex);
  std::vector<UserRecord> out;
  out.reserve(first.size());
  for (const auto& [id, ex] : first) out.push_back({id, ex->fields});
  return out;
}

/// Users with uniformly drawn field values, ids 0..n-1.
inline std::vector<UserRecord> random_users(const FieldSchema& schema, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<UserRecord> out(n);
  for (std::size_t u = 0; u < n; ++u) {
    out[u].user_id = static_cast<std::int64_t>(u);
    for (const auto& f : schema.user_fields) {
      std::uniform_int_distribution<std::int32_t> value(0, static_cast<std::int32_t>(f.vocab_size) - 1);
      out[u].fields.push_back({value(rng)});
    }
  }
  return out;
}

/// Batch carrying only user fields; the tag side is left empty.
inline Batch make_user_batch(std::span<const UserRecord> users, const FieldSchema& schema) {
  Batch b;
  b.size = users.size();
  const std::size_t m = schema.num_fields();
  b.field_offsets.assign(m, {0});
  b.field_indices.assign(m, {});
  for (const auto& u : users) {
    if (u.fields.size() != m)
      throw DataError("user " + std::to_string(u.user_id) + " has " + std::to_string(u.fields.size()) +
                      " fields, schema expects " + std::to_string(m));
    for (std::size_t j = 0; j < m; ++j) {
      const auto& f = schema.user_fields[j];
      if (u.fields[j].empty()) throw DataError("field '" + f.name + "' has no value");
      for (auto v : u.fields[j]) {
        if (v < 0 || static_cast<std::size_t>(v) >= f.vocab_size)
          throw DataError("field '" + f.name + "': value " + std::to_string(v) + " out of vocabulary");
        b.field_indices[j].push_back(static_cast<std::size_t>(v));
      }
      b.field_offsets[j].push_back(b.field_indices[j].size());
    }
  }
  return b;
}

/// Tower invocations, counted per entity (per user, per tag and task, per
/// scored pair and task) regardless of how work is batched.
struct InvocationCounters {
  std::uint64_t user_tower = 0;
  std::uint64_t tag_tower = 0;
  std::uint64_t pair_forward = 0;
};

/// Every expert output for every user: [users x experts x dim].
template <typename T>
struct UserCache {
  std::size_t n_experts = 0;
  std::size_t dim = 0;
  std::vector<std::int64_t> user_ids;
  std::vector<T> values;
  std::unordered_map<std::int64_t, std::size_t> index;

  std::size_t size() const { return user_ids.size(); }
  std::size_t stored_vectors() const { return values.size() / dim; }

  /// Row block of one user: n_experts consecutive vectors of `dim`.
  const T* vectors(std::int64_t user_id) const {
    auto it = index.find(user_id);
    if (it == index.end()) throw DataError("user " + std::to_string(user_id) + " is not cached");
    return values.data() + it->second * n_experts * dim;
  }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < user_ids.size(); ++i)
      if (!index.emplace(user_ids[i], i).second)
        throw DataError("duplicate user " + std::to_string(user_ids[i]) + " in cache");
  }
};

/// One task's tag side: tag embedding, gate weights over the task's experts
/// (same order as the routing set) and the task temperature.
template <typename T>
struct TagCache {
  TaskId task = TaskId::kCtr;
  std::vector<std::size_t> experts;
  std::size_t dim = 0;
  T tau = 0;
  std::vector<std::int32_t> tag_ids;
  std::vector<T> embeddings;  // [tags x dim]
  std::vector<T> weights;     // [tags x experts]
  std::unordered_map<std::int32_t, std::size_t> index;

  std::size_t size() const { return tag_ids.size(); }

  std::size_t row(std::int32_t tag) const {
    auto it = index.find(tag);
    if (it == index.end())
      throw DataError("tag " + std::to_string(tag) + " is not cached for task " + task_name(task));
    return it->second;
  }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < tag_ids.size(); ++i)
      if (!index.emplace(tag_ids[i], i).second) throw DataError("duplicate tag " + std::to_string(tag_ids[i]));
  }
};

template <typename T>
struct ServingCaches {
  UserCache<T> users;
  std::vector<TagCache<T>> tags;  // one per cached task
  InvocationCounters counters;

  const TagCache<T>& for_task(TaskId t) const {
    for (const auto& c : tags)
      if (c.task == t) return c;
    throw UsageError(std::string("no tag cache for task ") + task_name(t));
  }
  bool has_task(TaskId t) const {
    return std::any_of(tags.begin(), tags.end(), [t](const auto& c) { return c.task == t; });
  }
};

/// Runs the user tower once per user and the tag tower once per tag and
/// task. `batch_size` only bounds memory; outputs do not depend on it.
template <typename T>
ServingCaches<T> build_caches(const MvkeModel<T>& model, const std::vector<UserRecord>& users,
                              const std::vector<std::int32_t>& tags, TaskSet tasks = {},
                              std::size_t batch_size = 1024) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t k = model.n_experts(), d = cfg.schema.embed_dim;
  ServingCaches<T> out;

  auto& uc = out.users;
  uc.n_experts = k;
  uc.dim = d;
  uc.values.reserve(users.size() * k * d);
  for (std::size_t start = 0; start < users.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, users.size() - start);
    const auto batch = make_user_batch(std::span(users).subspan(start, n), cfg.schema);
    const auto fields = model.embed_user_fields(batch);
    std::vector<Tensor<T>> expert_out;
    for (std::size_t e = 0; e < k; ++e) expert_out.push_back(model.vke_forward(fields, e));
    for (std::size_t r = 0; r < n; ++r) {
      uc.user_ids.push_back(users[start + r].user_id);
      for (std::size_t e = 0; e < k; ++e) {
        const auto row = expert_out[e].data().subspan(r * d, d);
        uc.values.insert(uc.values.end(), row.begin(), row.end());
      }
    }
    out.counters.user_tower += n;
  }
  uc.rebuild_index();

  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    if (!tasks.has(t) || !model.supports(t)) continue;
    TagCache<T> tc;
    tc.task = t;
    tc.experts = cfg.routing.experts_for(t);
    tc.dim = d;
    tc.tau = model.params().get(std::string("tau.") + task_name(t))[0];
    tc.tag_ids = tags;
    for (std::size_t start = 0; start < tags.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, tags.size() - start);
      const std::vector<std::int32_t> chunk(tags.begin() + static_cast<std::ptrdiff_t>(start),
                                            tags.begin() + static_cast<std::ptrdiff_t>(start + n));
      const auto batch = make_tag_batch(chunk, cfg.schema.tag_vocab_size);
      const auto emb = model.tag_tower(batch, t);
      const auto w = model.gate_weights(emb, t);
      tc.embeddings.insert(tc.embeddings.end(), emb.data().begin(), emb.data().end());
      tc.weights.insert(tc.weights.end(), w.data().begin(), w.data().end());
      out.counters.tag_tower += n;
    }
    tc.rebuild_index();
    out.tags.push_back(std::move(tc));
  }
  return out;
}

namespace detail {

/// Same arithmetic, in the same order, as the model's gate mixing, cosine,
/// temperature and sigmoid ops, so cached scores match the full forward.
template <typename T>
T cached_score(const T* user_vectors, const TagCache<T>& tc, std::size_t tag_row, std::vector<T>& mixed) {
  const std::size_t d = tc.dim, n = tc.experts.size();
  const T* w = tc.weights.data() + tag_row * n;
  mixed.assign(d, T(0));
  for (std::size_t c = 0; c < n; ++c) {
    const T* e = user_vectors + tc.experts[c] * d;
    const T wc = w[c];
    for (std::size_t j = 0; j < d; ++j) mixed[j] += wc * e[j];
  }
  const T* tag = tc.embeddings.data() + tag_row * d;
  T dot = 0, xx = 0, yy = 0;
  for (std::size_t j = 0; j < d; ++j) {
    dot += mixed[j] * tag[j];
    xx += mixed[j] * mixed[j];
    yy += tag[j] * tag[j];
  }
  const T floor = static_cast<T>(kNormFloor);
  const T na = std::max(std::sqrt(xx), floor);
  const T nb = std::max(std::sqrt(yy), floor);
  const T cosv = dot / (na * nb);
  return stable_sigmoid(cosv * tc.tau);
}

}  // namespace detail

template <typename T>
T score_from_cache(const ServingCaches<T>& caches, std::int64_t user_id, std::int32_t tag_id, TaskId task) {
  const auto& tc = caches.for_task(task);
  std::vector<T> mixed;
  return detail::cached_score(caches.users.vectors(user_id), tc, tc.row(tag_id), mixed);
}

struct TagAssignmentRow {
  std::int64_t user_id = 0;
  std::size_t rank = 0;  // 1-based
  std::int32_t tag_id = 0;
  TaskId task = TaskId::kCtr;
  double score = 0;
};

/// Orders (score, tag) candidates: higher score first, then lower tag id.
template <typename T>
bool ranks_before(const std::pair<T, std::int32_t>& a, const std::pair<T, std::int32_t>& b) {
  if (a.first != b.first) return a.first > b.first;
  return a.second < b.second;
}

/// Exhaustive per-user top-N over every cached tag. Rows are ordered by
/// user id, then rank. N larger than the tag count is clamped.
template <typename T>
std::vector<TagAssignmentRow> assign_topk(const ServingCaches<T>& caches, std::size_t top_n, TaskId task) {
  if (top_n == 0) throw UsageError("top-N must be at least 1");
  const auto& tc = caches.for_task(task);
  const std::size_t n = std::min(top_n, tc.size());
  std::vector<std::int64_t> ids = caches.users.user_ids;
  std::sort(ids.begin(), ids.end());

  std::vector<TagAssignmentRow> out;
  out.reserve(ids.size() * n);
  std::vector<std::pair<T, std::int32_t>> scored(tc.size());
  std::vector<T> mixed;
  for (auto uid : ids) {
    const T* uv = caches.users.vectors(uid);
    for (std::size_t r = 0; r < tc.size(); ++r) scored[r] = {detail::cached_score(uv, tc, r, mixed), tc.tag_ids[r]};
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                      ranks_before<T>);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({uid, i + 1, scored[i].second, task, static_cast<double>(scored[i].first)});
  }
  return out;
}

inline std::string assignments_csv(const std::vector<TagAssignmentRow>& rows) {
  std::ostringstream os;
  os << "user_id,rank,tag_id,task,score\n";
  for (const auto& r : rows)
    os << r.user_id << ',' << r.rank << ',' << r.tag_id << ',' << task_name(r.task) << ',' << format_double(r.score)
       << '\n';
  return os.str();
}

/// Scores of every (user, tag) pair for one task: [users x tags], row order
/// of `users`, column order of `tags`.
using ScoreMatrix = std::vector<std::vector<double>>;

template <typename T>
ScoreMatrix cached_score_matrix(const ServingCaches<T>& caches, const std::vector<UserRecord>& users,
                                const std::vector<std::int32_t>& tags, TaskId task) {
  const auto& tc = caches.for_task(task);
  ScoreMatrix out(users.size(), std::vector<double>(tags.size()));
  std::vector<T> mixed;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const T* uv = caches.users.vectors(users[u].user_id);
    for (std::size_t t = 0; t < tags.size(); ++t)
      out[u][t] = static_cast<double>(detail::cached_score(uv, tc, tc.row(tags[t]), mixed));
  }
  return out;
}

/// The uncached regime: a full forward per (user, tag) pair, batched per
/// user with one row per tag.
template <typename T>
ScoreMatrix naive_score_matrix(const MvkeModel<T>& model, const std::vector<UserRecord>& users,
                               const std::vector<std::int32_t>& tags, TaskId task, InvocationCounters& counters) {
  NoGradGuard no_grad;
  const auto& schema = model.config().schema;
  ScoreMatrix out(users.size(), std::vector<double>(tags.size()));
  if (tags.empty()) return out;
  const auto tag_batch = make_tag_batch(tags, schema.tag_vocab_size);
  for (std::size_t u = 0; u < users.size(); ++u) {
    const std::vector<UserRecord> repeated(tags.size(), users[u]);
    Batch batch = make_user_batch(repeated, schema);
    batch.tag_offsets = tag_batch.tag_offsets;
    batch.tag_indices = tag_batch.tag_indices;
    const auto p = model.forward(batch, TaskSet::only(task)).prob(task);
    for (std::size_t t = 0; t < tags.size(); ++t) out[u][t] = static_cast<double>(p[t]);
    counters.pair_forward += tags.size();
  }
  return out;
}

}  // namespace mvke
