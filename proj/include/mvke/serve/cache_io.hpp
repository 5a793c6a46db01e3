#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "mvke/json.hpp"
#include "mvke/parameters.hpp"
#include "mvke/serve/caches.hpp"

namespace mvke {

// Cache files: a binary body of contiguous little-endian vectors behind a
// fixed header (magic, scalar bytes, vector count per entry, dim, entries),
// plus a JSON index naming the row order and any per-cache metadata.
//
//   user_cache.bin / user_cache.json          all expert outputs per user
//   tag_cache_<task>.bin / tag_cache_<task>.json   embeddings, then gate weights

namespace detail {

inline constexpr char kUserCacheMagic[8] = {'M', 'V', 'K', 'E', 'U', 'S', 'R', '1'};
inline constexpr char kTagCacheMagic[8] = {'M', 'V', 'K', 'E', 'T', 'A', 'G', '1'};

template <typename T>
void write_cache_body(const std::filesystem::path& path, const char (&magic)[8], std::uint64_t per_entry,
                      std::uint64_t dim, std::uint64_t entries, std::initializer_list<const std::vector<T>*> blocks) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(magic, 8);
  write_le<std::uint32_t>(os, sizeof(T));
  write_le<std::uint64_t>(os, per_entry);
  write_le<std::uint64_t>(os, dim);
  write_le<std::uint64_t>(os, entries);
  for (const auto* block : blocks)
    for (T v : *block) write_le<T>(os, v);
  if (!os) throw DataError("failed writing " + path.string());
}

struct CacheHeader {
  std::uint64_t per_entry, dim, entries;
};

template <typename T>
CacheHeader read_cache_header(std::istream& is, const std::filesystem::path& path, const char (&magic)[8]) {
  char got[8];
  if (!is.read(got, 8) || std::memcmp(got, magic, 8) != 0) throw DataError("not a cache file: " + path.string());
  if (read_le<std::uint32_t>(is) != sizeof(T))
    throw DataError("cache " + path.string() + " was written with a different precision");
  CacheHeader h{};
  h.per_entry = read_le<std::uint64_t>(is);
  h.dim = read_le<std::uint64_t>(is);
  h.entries = read_le<std::uint64_t>(is);
  return h;
}

template <typename T>
std::vector<T> read_block(std::istream& is, std::size_t n) {
  std::vector<T> out(n);
  for (auto& v : out) v = read_le<T>(is);
  return out;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline std::string tag_cache_stem(TaskId t) { return std::string("tag_cache_") + task_name(t); }

template <typename T>
void write_caches(const std::filesystem::path& dir, const ServingCaches<T>& caches) {
  std::filesystem::create_directories(dir);
  const auto& uc = caches.users;
  detail::write_cache_body<T>(dir / "user_cache.bin", detail::kUserCacheMagic, uc.n_experts, uc.dim, uc.size(),
                              {&uc.values});
  detail::write_json_file(dir / "user_cache.json", {{"n_experts", uc.n_experts},
                                                    {"dim", uc.dim},
                                                    {"count", uc.size()},
                                                    {"scalar_bytes", sizeof(T)},
                                                    {"user_ids", uc.user_ids}});
  for (const auto& tc : caches.tags) {
    const auto stem = tag_cache_stem(tc.task);
    detail::write_cache_body<T>(dir / (stem + ".bin"), detail::kTagCacheMagic, tc.experts.size(), tc.dim,
                                tc.size(), {&tc.embeddings, &tc.weights});
    detail::write_json_file(dir / (stem + ".json"), {{"task", task_name(tc.task)},
                                                     {"experts", tc.experts},
                                                     {"dim", tc.dim},
                                                     {"count", tc.size()},
                                                     {"scalar_bytes", sizeof(T)},
                                                     {"tau", static_cast<double>(tc.tau)},
                                                     {"tag_ids", tc.tag_ids}});
  }
}

/// Loads whichever task caches exist in `dir`; counters start at zero.
template <typename T>
ServingCaches<T> read_caches(const std::filesystem::path& dir) {
  ServingCaches<T> out;
  {
    const auto index = detail::read_json_file(dir / "user_cache.json");
    std::ifstream is(dir / "user_cache.bin", std::ios::binary);
    if (!is) throw DataError("cannot open " + (dir / "user_cache.bin").string());
    const auto h = detail::read_cache_header<T>(is, dir / "user_cache.bin", detail::kUserCacheMagic);
    auto& uc = out.users;
    uc.n_experts = h.per_entry;
    uc.dim = h.dim;
    index.at("user_ids").get_to(uc.user_ids);
    if (uc.user_ids.size() != h.entries) throw DataError("user cache index and body disagree on count");
    uc.values = detail::read_block<T>(is, h.entries * h.per_entry * h.dim);
    uc.rebuild_index();
  }
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    const auto stem = tag_cache_stem(t);
    if (!std::filesystem::exists(dir / (stem + ".json"))) continue;
    const auto index = detail::read_json_file(dir / (stem + ".json"));
    std::ifstream is(dir / (stem + ".bin"), std::ios::binary);
    if (!is) throw DataError("cannot open " + (dir / (stem + ".bin")).string());
    const auto h = detail::read_cache_header<T>(is, dir / (stem + ".bin"), detail::kTagCacheMagic);
    TagCache<T> tc;
    tc.task = t;
    tc.dim = h.dim;
    index.at("experts").get_to(tc.experts);
    index.at("tag_ids").get_to(tc.tag_ids);
    tc.tau = static_cast<T>(index.at("tau").get<double>());
    if (tc.tag_ids.size() != h.entries || tc.experts.size() != h.per_entry)
      throw DataError("tag cache index and body disagree for task " + std::string(task_name(t)));
    tc.embeddings = detail::read_block<T>(is, h.entries * h.dim);
    tc.weights = detail::read_block<T>(is, h.entries * h.per_entry);
    tc.rebuild_index();
    out.tags.push_back(std::move(tc));
  }
  return out;
}

}  // namespace mvke
