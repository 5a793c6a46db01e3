#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mvke/errors.hpp"
#include "mvke/json.hpp"
#include "mvke/schema.hpp"

namespace mvke {

/// One impression record: user features, the ad's tag set and both labels.
struct Example {
  std::int64_t user_id = 0;
  std::int64_t ad_id = 0;
  std::int64_t impression = 0;
  std::vector<std::vector<std::int32_t>> fields;  // one (nonempty) value list per user field
  std::vector<std::int32_t> tags;                 // sorted, unique
  std::uint8_t click = 0;
  std::uint8_t conv = 0;
  /// Random (user, ad) pair added as a negative rather than a logged impression.
  bool sampled_negative = false;

  bool operator==(const Example&) const = default;
};

using Dataset = std::vector<Example>;

inline void normalize_tags(std::vector<std::int32_t>& tags) {
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
}

/// Structural checks that do not need a schema.
inline void validate_example(const Example& ex) {
  if (ex.click > 1 || ex.conv > 1) throw DataError("labels must be 0 or 1");
  if (ex.conv == 1 && ex.click == 0) throw DataError("conversion without click");
  if (ex.tags.empty()) throw DataError("empty tag set");
  if (ex.fields.empty()) throw DataError("example has no user fields");
  for (const auto& f : ex.fields)
    if (f.empty()) throw DataError("user field with no values");
}

/// Checks every id against the schema vocabularies.
inline void validate_against(const Example& ex, const FieldSchema& schema) {
  if (ex.fields.size() != schema.num_fields())
    throw DataError("example has " + std::to_string(ex.fields.size()) + " fields, schema expects " +
                    std::to_string(schema.num_fields()));
  for (std::size_t j = 0; j < ex.fields.size(); ++j)
    for (auto v : ex.fields[j])
      if (v < 0 || static_cast<std::size_t>(v) >= schema.user_fields[j].vocab_size)
        throw DataError("value " + std::to_string(v) + " out of vocabulary for field '" +
                        schema.user_fields[j].name + "'");
  for (auto t : ex.tags)
    if (t < 0 || static_cast<std::size_t>(t) >= schema.tag_vocab_size)
      throw DataError("tag " + std::to_string(t) + " out of vocabulary");
}

inline nlohmann::json example_to_json(const Example& ex) {
  nlohmann::json j = {{"user_id", ex.user_id}, {"ad", ex.ad_id},   {"imp", ex.impression}, {"fields", ex.fields},
                      {"tags", ex.tags},       {"click", ex.click}, {"conv", ex.conv}};
  if (ex.sampled_negative) j["neg"] = 1;
  return j;
}

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  ex.user_id = j.at("user_id").get<std::int64_t>();
  ex.ad_id = j.value("ad", std::int64_t{-1});
  ex.impression = j.value("imp", std::int64_t{-1});
  ex.fields = j.at("fields").get<std::vector<std::vector<std::int32_t>>>();
  ex.tags = j.at("tags").get<std::vector<std::int32_t>>();
  const int click = j.at("click").get<int>();
  const int conv = j.at("conv").get<int>();
  if (click < 0 || click > 1 || conv < 0 || conv > 1) throw DataError("labels must be 0 or 1");
  ex.click = static_cast<std::uint8_t>(click);
  ex.conv = static_cast<std::uint8_t>(conv);
  ex.sampled_negative = j.value("neg", 0) != 0;
  normalize_tags(ex.tags);
  validate_example(ex);
  return ex;
}

/// One JSON object per line; an empty dataset produces an empty file.
inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const auto& ex : ds) os << example_to_json(ex).dump() << '\n';
  if (!os) throw DataError("failed writing " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    try {
      ds.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

/// Column-oriented view of a group of examples, ready for the towers.
/// Multi-valued fields and tag sets are ragged (CSR offsets + indices).
struct Batch {
  std::size_t size = 0;
  std::vector<std::vector<std::size_t>> field_offsets;
  std::vector<std::vector<std::size_t>> field_indices;
  std::vector<std::size_t> tag_offsets;
  std::vector<std::size_t> tag_indices;
  std::vector<std::uint8_t> click;
  std::vector<std::uint8_t> conv;
};

namespace detail {
template <typename Get>
Batch make_batch_impl(std::size_t n, Get&& get, const FieldSchema& schema) {
  Batch b;
  b.size = n;
  const std::size_t m = schema.num_fields();
  b.field_offsets.assign(m, {0});
  b.field_indices.assign(m, {});
  b.tag_offsets = {0};
  b.click.reserve(n);
  b.conv.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = get(i);
    validate_against(ex, schema);
    if (ex.tags.empty()) throw DataError("empty tag set");
    for (std::size_t j = 0; j < m; ++j) {
      if (ex.fields[j].empty()) throw DataError("field '" + schema.user_fields[j].name + "' has no value");
      for (auto v : ex.fields[j]) b.field_indices[j].push_back(static_cast<std::size_t>(v));
      b.field_offsets[j].push_back(b.field_indices[j].size());
    }
    std::vector<std::int32_t> tags = ex.tags;
    normalize_tags(tags);  // tag sets have set semantics
    for (auto t : tags) b.tag_indices.push_back(static_cast<std::size_t>(t));
    b.tag_offsets.push_back(b.tag_indices.size());
    b.click.push_back(ex.click);
    b.conv.push_back(ex.conv);
  }
  return b;
}
}  // namespace detail

inline Batch make_batch(std::span<const Example> examples, const FieldSchema& schema) {
  return detail::make_batch_impl(examples.size(), [&](std::size_t i) -> const Example& { return examples[i]; },
                                 schema);
}

/// Batch of `ds[indices[i]]`.
inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, const FieldSchema& schema) {
  return detail::make_batch_impl(indices.size(), [&](std::size_t i) -> const Example& { return ds.at(indices[i]); },
                                 schema);
}

}  // namespace mvke
