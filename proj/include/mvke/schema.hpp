#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mvke/errors.hpp"
#include "mvke/json.hpp"

namespace mvke {

struct UserField {
  std::string name;
  std::size_t vocab_size = 1;
  /// Upper bound on values per example; > 1 marks a multi-valued field.
  std::size_t max_values = 1;

  bool operator==(const UserField&) const = default;
};

/// Feature layout shared by the dataset and both towers.
struct FieldSchema {
  std::vector<UserField> user_fields;
  std::size_t tag_vocab_size = 2;
  std::size_t embed_dim = 16;

  std::size_t num_fields() const { return user_fields.size(); }

  void validate() const {
    if (user_fields.empty()) throw ConfigError("schema needs at least one user field");
    if (tag_vocab_size < 2) throw ConfigError("tag vocabulary must contain at least 2 tags");
    if (embed_dim < 2) throw ConfigError("embedding dimension must be at least 2");
    for (const auto& f : user_fields) {
      if (f.vocab_size < 1) throw ConfigError("field '" + f.name + "' has an empty vocabulary");
      if (f.max_values < 1) throw ConfigError("field '" + f.name + "' must allow at least one value");
    }
  }

  bool operator==(const FieldSchema&) const = default;
};

inline void to_json(nlohmann::json& j, const UserField& f) {
  j = {{"name", f.name}, {"vocab_size", f.vocab_size}, {"max_values", f.max_values}};
}
inline void from_json(const nlohmann::json& j, UserField& f) {
  j.at("name").get_to(f.name);
  j.at("vocab_size").get_to(f.vocab_size);
  f.max_values = j.value("max_values", std::size_t{1});
}
inline void to_json(nlohmann::json& j, const FieldSchema& s) {
  j = {{"user_fields", s.user_fields}, {"tag_vocab_size", s.tag_vocab_size}, {"embed_dim", s.embed_dim}};
}
inline void from_json(const nlohmann::json& j, FieldSchema& s) {
  j.at("user_fields").get_to(s.user_fields);
  j.at("tag_vocab_size").get_to(s.tag_vocab_size);
  s.embed_dim = j.value("embed_dim", std::size_t{16});
}

}  // namespace mvke
