#pragma once

#include <string>
#include <variant>

#include "mvke/json.hpp"
#include "mvke/model/mvke.hpp"
#include "mvke/model/two_tower.hpp"
#include "mvke/parameters.hpp"

namespace mvke {

template <typename T>
using AnyModel = std::variant<MvkeModel<T>, TwoTowerModel<T>>;

template <typename Model>
void save_model(const Model& model, const std::string& path) {
  const nlohmann::json header = {{"model", model.config()}};
  write_checkpoint(path, model.params(), header.dump());
}

inline ModelConfig checkpoint_model_config(const CheckpointContents& ckpt) {
  try {
    return nlohmann::json::parse(ckpt.header).at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not a model config: ") + e.what());
  }
}

/// Rebuilds the model described by a checkpoint header and loads its values.
/// The scalar type may differ from the one the checkpoint was written with.
template <typename T>
AnyModel<T> load_model(const CheckpointContents& ckpt) {
  const ModelConfig cfg = checkpoint_model_config(ckpt);
  if (cfg.kind == ModelKind::kMvke) {
    MvkeModel<T> m(cfg);
    load_into(m.params(), ckpt);
    return m;
  }
  TwoTowerModel<T> m(cfg);
  load_into(m.params(), ckpt);
  return m;
}

template <typename T>
AnyModel<T> load_model(const std::string& path) {
  return load_model<T>(read_checkpoint(path));
}

}  // namespace mvke
