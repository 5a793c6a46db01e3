#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "mvke/train/checkpoint.hpp"

using namespace mvke;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mvke_test_parameters";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ParameterStore, RejectsDuplicateNames) {
  ParameterStore<double> store;
  store.add("vke.0.W_Q", {2, 2}, {1, 2, 3, 4});
  EXPECT_THROW(store.add("vke.0.W_Q", {1}, {0.0}), ConfigError);
  EXPECT_EQ(store.size(), 1u);
}

TEST(ParameterStore, LookupAndCounts) {
  ParameterStore<float> store;
  store.add("a", {2, 3}, std::vector<float>(6, 1.0f));
  store.add("b", {4}, std::vector<float>(4, 2.0f));
  EXPECT_TRUE(store.contains("b"));
  EXPECT_FALSE(store.contains("c"));
  EXPECT_THROW(store.get("c"), ConfigError);
  EXPECT_EQ(store.scalar_count(), 10u);
  EXPECT_TRUE(store.get("a").requires_grad());
}

TEST(ParameterStore, ShapeMismatchIsConfigError) {
  ParameterStore<double> store;
  EXPECT_THROW(store.add("a", {2, 3}, {1.0}), ConfigError);
}

TEST(ParameterStore, SnapshotRestore) {
  ParameterStore<double> store;
  store.add("a", {3}, {1, 2, 3});
  const auto snap = store.snapshot();
  store.get("a").mutable_data()[1] = 42;
  store.restore(snap);
  EXPECT_EQ(store.get("a")[1], 2.0);
}

TEST(Checkpoint, DoubleRoundTripIsByteIdentical) {
  MvkeModel<double> model(fixtures::mvke_config(fixtures::small_schema()));
  const auto first = temp_file("rt_first.ckpt"), second = temp_file("rt_second.ckpt");
  save_model(model, first.string());
  auto loaded = load_model<double>(first.string());
  std::visit([&](const auto& m) { save_model(m, second.string()); }, loaded);
  const auto a = slurp(first), b = slurp(second);
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, FloatValuesSurviveRoundTrip) {
  TwoTowerModel<float> model(fixtures::two_tower_config(fixtures::small_schema(), TaskId::kCvr));
  const auto path = temp_file("float.ckpt");
  save_model(model, path.string());
  auto loaded = load_model<float>(path.string());
  const auto* tt = std::get_if<TwoTowerModel<float>>(&loaded);
  ASSERT_NE(tt, nullptr);
  EXPECT_EQ(tt->task(), TaskId::kCvr);
  ASSERT_EQ(tt->params().size(), model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(tt->params().all()[i].name, model.params().all()[i].name);
    EXPECT_EQ(tt->params().all()[i].tensor.values(), model.params().all()[i].tensor.values());
  }
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto path = temp_file("garbage.ckpt");
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(read_checkpoint(path.string()), DataError);
  EXPECT_THROW(read_checkpoint(temp_file("missing.ckpt").string()), DataError);
}

TEST(Checkpoint, RejectsTruncation) {
  MvkeModel<double> model(fixtures::mvke_config(fixtures::small_schema()));
  const auto path = temp_file("trunc.ckpt");
  save_model(model, path.string());
  const auto bytes = slurp(path);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(read_checkpoint(path.string()), DataError);
}

TEST(Checkpoint, LoadIntoChecksShapes) {
  ParameterStore<double> src, dst;
  src.add("w", {2, 2}, {1, 2, 3, 4});
  dst.add("w", {4}, {0, 0, 0, 0});
  const auto path = temp_file("shape.ckpt");
  write_checkpoint(path.string(), src, "{}");
  EXPECT_THROW(load_into(dst, read_checkpoint(path.string())), DataError);
}
