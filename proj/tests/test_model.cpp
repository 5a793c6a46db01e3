#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "mvke/grad_check.hpp"
#include "mvke/train/trainer.hpp"

using namespace mvke;
using fixtures::as_mat;
using fixtures::as_vec;
using fixtures::row_of;

namespace {

constexpr double kOracleTol = 1e-12;

ExpertRouting disjoint_two() {
  ExpertRouting r{2, {0}, {1}};
  r.allow_disjoint = true;
  return r;
}

/// Field rows for one example, mean-pooled, computed from the tables directly.
oracle::Mat oracle_fields(const MvkeModel<double>& m, const Example& ex) {
  const auto& schema = m.config().schema;
  const std::size_t d = schema.embed_dim;
  oracle::Mat rows;
  for (std::size_t j = 0; j < schema.num_fields(); ++j) {
    const auto& table = m.params().get("user_emb." + schema.user_fields[j].name);
    oracle::Vec acc(d, 0.0L);
    for (auto v : ex.fields[j]) {
      const auto r = row_of(table, static_cast<std::size_t>(v), d);
      for (std::size_t c = 0; c < d; ++c) acc[c] += r[c];
    }
    for (auto& x : acc) x /= static_cast<long double>(ex.fields[j].size());
    rows.push_back(acc);
  }
  return rows;
}

oracle::Vec oracle_vke(const MvkeModel<double>& m, const oracle::Mat& fields, std::size_t e) {
  const auto& P = m.params();
  const std::size_t d = m.config().schema.embed_dim, h = m.config().hidden();
  const auto pre = MvkeModel<double>::expert_prefix(e);
  oracle::Mat keys, values;
  for (const auto& f : fields) {
    keys.push_back(oracle::tanh_vec(oracle::affine(f, as_mat(P.get(pre + "W_K"), d, d), as_vec(P.get(pre + "b_K")))));
    values.push_back(oracle::tanh_vec(oracle::affine(f, as_mat(P.get(pre + "W_V"), d, d), as_vec(P.get(pre + "b_V")))));
  }
  const auto kernel = row_of(P.get("vk"), e, d);
  const auto query =
      oracle::tanh_vec(oracle::affine(kernel, as_mat(P.get(pre + "W_Q"), d, d), as_vec(P.get(pre + "b_Q"))));
  const auto context = oracle::attention({query}, keys, values).out[0];
  const auto hidden =
      oracle::relu_vec(oracle::affine(context, as_mat(P.get(pre + "head.W1"), d, h), as_vec(P.get(pre + "head.b1"))));
  return oracle::affine(hidden, as_mat(P.get(pre + "head.W2"), h, d), as_vec(P.get(pre + "head.b2")));
}

oracle::Vec oracle_tag_tower(const ParameterStore<double>& P, const std::vector<std::int32_t>& tags, TaskId task,
                             std::size_t d) {
  const std::string t = task_name(task);
  oracle::Vec pooled(d, 0.0L);
  for (auto tag : tags) {
    const auto r = row_of(P.get("tag_emb." + t), static_cast<std::size_t>(tag), d);
    for (std::size_t c = 0; c < d; ++c) pooled[c] += r[c];
  }
  for (auto& x : pooled) x /= static_cast<long double>(tags.size());
  return oracle::tanh_vec(
      oracle::affine(pooled, as_mat(P.get("tag_tower." + t + ".W"), d, d), as_vec(P.get("tag_tower." + t + ".b"))));
}

template <typename T>
void expect_close(const std::vector<T>& got, const oracle::Vec& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(static_cast<double>(got[i]), static_cast<double>(want[i]), tol) << i;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

TEST(Routing, FiveExpertLayoutIsValid) {
  const auto r = five_expert_routing();
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.n_experts, 5u);
  EXPECT_EQ(r.ctr, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(r.cvr, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(r.shared(), (std::vector<std::size_t>{1, 2}));
}

TEST(Routing, RejectsInvalidSets) {
  EXPECT_THROW((ExpertRouting{3, {0, 1}, {1}}.validate()), ConfigError);     // no cvr-exclusive expert
  EXPECT_THROW((ExpertRouting{3, {0}, {2}}.validate()), ConfigError);        // orphan expert 1
  EXPECT_THROW((ExpertRouting{2, {0}, {1}}.validate()), ConfigError);        // nothing shared
  EXPECT_THROW((ExpertRouting{3, {0, 1}, {1, 3}}.validate()), ConfigError);  // out of range
  EXPECT_THROW((ExpertRouting{3, {1, 0}, {1, 2}}.validate()), ConfigError);  // unsorted
  EXPECT_THROW((ExpertRouting{2, {}, {}}.validate()), ConfigError);
  EXPECT_NO_THROW(disjoint_two().validate());
}

TEST(Routing, AutoSplitIsValidForSweepCounts) {
  for (std::size_t k = 3; k <= 12; ++k) {
    const auto r = auto_routing(k);
    EXPECT_NO_THROW(r.validate()) << k;
    const std::size_t exclusive = std::max<std::size_t>(1, (k - 2) / 2);
    EXPECT_EQ(r.ctr.size(), k - exclusive) << k;
    EXPECT_EQ(r.cvr.size(), k - exclusive) << k;
  }
  EXPECT_EQ(default_routing(5), five_expert_routing());
  EXPECT_EQ(default_routing(7), auto_routing(7));
}

TEST(ModelConfigJson, RoundTrips) {
  auto mc = fixtures::mvke_config(fixtures::small_schema(), disjoint_two(), 11);
  mc.tau_init = 3.5;
  const nlohmann::json j = mc;
  const auto back = j.get<ModelConfig>();
  EXPECT_EQ(back.schema, mc.schema);
  EXPECT_EQ(back.routing, mc.routing);
  EXPECT_EQ(back.tau_init, 3.5);
  EXPECT_EQ(back.init_seed, 11u);
}

TEST(Init, VirtualKernelsAreDistinctUnitRows) {
  MvkeModel<double> m(fixtures::mvke_config(fixtures::small_schema(), auto_routing(10)));
  const auto& vk = m.params().get("vk");
  const std::size_t d = 8;
  for (std::size_t a = 0; a < 10; ++a) {
    const auto ra = row_of(vk, a, d);
    EXPECT_NEAR(static_cast<double>(oracle::dot(ra, ra)), 1.0, 1e-12);
    for (std::size_t b = 0; b < a; ++b) EXPECT_LT(static_cast<double>(oracle::cosine(ra, row_of(vk, b, d))), 0.99);
  }
}

TEST(Init, TaskTagTablesAreSeparateParameters) {
  MvkeModel<double> m(fixtures::mvke_config(fixtures::small_schema()));
  EXPECT_TRUE(m.params().contains("tag_emb.ctr"));
  EXPECT_TRUE(m.params().contains("tag_emb.cvr"));
  EXPECT_NE(m.params().get("tag_emb.ctr").node(), m.params().get("tag_emb.cvr").node());
  EXPECT_EQ(m.params().get("vk").dim(0), 5u);
}

// ---- field embedding and tag tower ------------------------------------------

TEST(EmbedUserFields, SingleFieldIsTableRow) {
  FieldSchema schema{{{"only", 6, 1}}, 4, 4};
  MvkeModel<double> m(fixtures::mvke_config(schema, single_task_routing(2, TaskId::kCtr)));
  Example ex{.fields = {{3}}, .tags = {1}};
  auto fields = m.embed_user_fields(make_batch(std::span<const Example>(&ex, 1), schema));
  EXPECT_EQ(fixtures::values_of(fields), std::vector<double>(m.params().get("user_emb.only").data().begin() + 12,
                                                             m.params().get("user_emb.only").data().begin() + 16));
}

TEST(EmbedUserFields, MultiValuedFieldIsMean) {
  const auto schema = fixtures::small_schema(4);
  MvkeModel<double> m(fixtures::mvke_config(schema));
  Example ex{.fields = {{0}, {0}, {2, 7}}, .tags = {1}};
  auto fields = m.embed_user_fields(make_batch(std::span<const Example>(&ex, 1), schema));
  const auto& table = m.params().get("user_emb.interests");
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(fields[2 * 4 + c], (table[2 * 4 + c] + table[7 * 4 + c]) / 2, 1e-15);
}

TEST(EmbedUserFields, OutOfVocabularyNamesField) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  Example ex{.fields = {{0}, {5}, {1}}, .tags = {1}};
  try {
    Batch b;
    b.size = 1;
    b.field_offsets = {{0, 1}, {0, 1}, {0, 1}};
    b.field_indices = {{0}, {5}, {1}};
    m.embed_user_fields(b);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("region"), std::string::npos) << e.what();
  }
  EXPECT_THROW(make_batch(std::span<const Example>(&ex, 1), schema), DataError);
}

TEST(EmbedUserFields, GradientTouchesOnlyLookedUpRows) {
  const auto schema = fixtures::small_schema(4);
  MvkeModel<double> m(fixtures::mvke_config(schema));
  Example ex{.fields = {{2}, {1}, {3, 5}}, .tags = {0}, .click = 1};
  mtl_loss(m, make_batch(std::span<const Example>(&ex, 1), schema), TaskMode::kMulti).backward();
  const auto& table = m.params().get("user_emb.interests");
  ASSERT_TRUE(table.has_grad());
  for (std::size_t r = 0; r < 9; ++r) {
    double norm = 0;
    for (std::size_t c = 0; c < 4; ++c) norm += std::abs(table.grad()[r * 4 + c]);
    if (r == 3 || r == 5)
      EXPECT_GT(norm, 0.0) << r;
    else
      EXPECT_EQ(norm, 0.0) << r;
  }
}

TEST(TagTower, DuplicateTagsCollapse) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  Example once{.fields = {{0}, {0}, {0}}, .tags = {4}};
  Example twice{.fields = {{0}, {0}, {0}}, .tags = {4, 4}};
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
    EXPECT_EQ(fixtures::values_of(m.tag_tower(make_batch(std::span<const Example>(&once, 1), schema), t)),
              fixtures::values_of(m.tag_tower(make_batch(std::span<const Example>(&twice, 1), schema), t)));
}

TEST(TagTower, MatchesOracle) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  for (const std::vector<std::int32_t>& tags : {std::vector<std::int32_t>{6}, {2, 9}}) {
    Example ex{.fields = {{0}, {0}, {0}}, .tags = tags};
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr})
      expect_close(fixtures::values_of(m.tag_tower(make_batch(std::span<const Example>(&ex, 1), schema), t)),
                   oracle_tag_tower(m.params(), tags, t, 8), kOracleTol);
  }
}

TEST(TagTower, EmptyTagSetIsDataError) {
  const auto schema = fixtures::small_schema();
  Example ex{.fields = {{0}, {0}, {0}}, .tags = {}};
  EXPECT_THROW(make_batch(std::span<const Example>(&ex, 1), schema), DataError);
}

// ---- experts ----------------------------------------------------------------

TEST(Vke, SingleFieldPassesValueRowThroughHead) {
  FieldSchema schema{{{"only", 6, 1}}, 4, 4};
  MvkeModel<double> m(fixtures::mvke_config(schema, single_task_routing(2, TaskId::kCtr)));
  Example ex{.fields = {{2}}, .tags = {0}};
  const auto batch = make_batch(std::span<const Example>(&ex, 1), schema);
  const auto before = fixtures::values_of(m.vke_forward(m.embed_user_fields(batch), 0));
  expect_close(before, oracle_vke(m, oracle_fields(m, ex), 0), kOracleTol);
  for (auto& v : m.params().get("vk").mutable_data()) v += 0.37;
  fixtures::perturb(m.params(), "vke.0.W_Q", -0.2);
  EXPECT_EQ(fixtures::values_of(m.vke_forward(m.embed_user_fields(batch), 0)), before);
}

TEST(Vke, IdenticalWeightsAndKernelsGiveIdenticalOutputs) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  auto& P = m.params();
  for (auto& p : P.all()) {
    if (p.name.rfind("vke.1.", 0) != 0) continue;
    const auto src = P.get("vke.0." + p.name.substr(6)).values();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  auto vk = P.get("vk").mutable_data();
  std::copy(vk.begin(), vk.begin() + 8, vk.begin() + 8);
  const auto ds = fixtures::random_examples(schema, 3, 5);
  const auto fields = m.embed_user_fields(fixtures::batch_of(ds, schema));
  EXPECT_EQ(fixtures::values_of(m.vke_forward(fields, 0)), fixtures::values_of(m.vke_forward(fields, 1)));
}

TEST(Vke, ThreeFieldsMatchOracle) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto ds = fixtures::random_examples(schema, 4, 8);
  const auto fields = m.embed_user_fields(fixtures::batch_of(ds, schema));
  for (std::size_t e = 0; e < 5; ++e) {
    const auto out = fixtures::values_of(m.vke_forward(fields, e));
    for (std::size_t i = 0; i < ds.size(); ++i)
      expect_close(std::vector<double>(out.begin() + i * 8, out.begin() + (i + 1) * 8),
                   oracle_vke(m, oracle_fields(m, ds[i]), e), kOracleTol);
  }
  EXPECT_THROW(m.vke_forward(fields, 5), ConfigError);
}

// ---- gates ------------------------------------------------------------------

TEST(Vkg, LoneExpertPassesThrough) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema, disjoint_two()));
  const auto ds = fixtures::random_examples(schema, 3, 2);
  const auto batch = fixtures::batch_of(ds, schema);
  const auto expert = m.vke_forward(m.embed_user_fields(batch), 0);
  const auto gate = m.vkg_combine({expert}, m.tag_tower(batch, TaskId::kCtr), TaskId::kCtr);
  for (double w : gate.weights.data()) EXPECT_EQ(w, 1.0);
  EXPECT_EQ(fixtures::values_of(gate.user_emb), fixtures::values_of(expert));
}

TEST(Vkg, EqualKernelsGiveUniformMixture) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  auto vk = m.params().get("vk").mutable_data();
  for (std::size_t r = 1; r < 5; ++r) std::copy(vk.begin(), vk.begin() + 8, vk.begin() + r * 8);
  const auto ds = fixtures::random_examples(schema, 2, 6);
  const auto batch = fixtures::batch_of(ds, schema);
  const auto fields = m.embed_user_fields(batch);
  std::vector<Tensor<double>> outs;
  for (std::size_t e : {1, 2, 3, 4}) outs.push_back(m.vke_forward(fields, e));
  const auto gate = m.vkg_combine(outs, m.tag_tower(batch, TaskId::kCvr), TaskId::kCvr);
  for (double w : gate.weights.data()) EXPECT_NEAR(w, 0.25, 1e-15);
  for (std::size_t i = 0; i < 2 * 8; ++i) {
    const double mean = (outs[0][i] + outs[1][i] + outs[2][i] + outs[3][i]) / 4;
    EXPECT_NEAR(gate.user_emb[i], mean, 1e-14);
  }
}

TEST(Vkg, ThreeExpertsMatchAttentionOracle) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto& P = m.params();
  const auto ds = fixtures::random_examples(schema, 3, 12);
  const auto batch = fixtures::batch_of(ds, schema);
  const auto fields = m.embed_user_fields(batch);
  std::vector<Tensor<double>> outs;
  for (std::size_t e : {0, 1, 2}) outs.push_back(m.vke_forward(fields, e));
  const auto tag = m.tag_tower(batch, TaskId::kCtr);
  const auto gate = m.vkg_combine(outs, tag, TaskId::kCtr);

  const std::size_t d = 8;
  oracle::Mat keys;
  for (std::size_t e : {0, 1, 2})
    keys.push_back(oracle::tanh_vec(
        oracle::affine(row_of(P.get("vk"), e, d), as_mat(P.get("vkg.ctr.W_K"), d, d), as_vec(P.get("vkg.ctr.b_K")))));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto query = oracle::tanh_vec(
        oracle::affine(row_of(tag, i, d), as_mat(P.get("vkg.ctr.W_Q"), d, d), as_vec(P.get("vkg.ctr.b_Q"))));
    oracle::Mat values;
    for (const auto& o : outs) values.push_back(row_of(o, i, d));
    const auto want = oracle::attention({query}, keys, values);
    const auto w = fixtures::values_of(gate.weights);
    expect_close(std::vector<double>(w.begin() + i * 3, w.begin() + (i + 1) * 3), want.weights[0], kOracleTol);
    const auto u = fixtures::values_of(gate.user_emb);
    expect_close(std::vector<double>(u.begin() + i * d, u.begin() + (i + 1) * d), want.out[0], kOracleTol);
  }
}

TEST(Vkg, WrongExpertCountIsConfigError) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 1, 1), schema);
  const auto out = m.vke_forward(m.embed_user_fields(batch), 0);
  EXPECT_THROW(m.vkg_combine({out}, m.tag_tower(batch, TaskId::kCtr), TaskId::kCtr), ConfigError);
}

TEST(Gates, AreDistributionsIndependentOfTheUser) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  auto ds = fixtures::random_examples(schema, 6, 21);
  const auto before = m.forward(fixtures::batch_of(ds, schema));
  for (auto& ex : ds)
    for (auto& f : ex.fields) f = {0};
  const auto after = m.forward(fixtures::batch_of(ds, schema));
  for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) {
    const auto& w = before.gates(t);
    const std::size_t n = t == TaskId::kCtr ? 3 : 4;
    ASSERT_EQ(w.shape(), (Shape{6, n}));
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < n; ++c) {
        EXPECT_GE(w[r * n + c], 0.0);
        total += w[r * n + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
    EXPECT_EQ(fixtures::values_of(w), fixtures::values_of(after.gates(t)));
  }
}

TEST(Gates, DifferentTagsGiveDifferentWeights) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  Dataset ds(2, Example{.fields = {{1}, {1}, {1}}, .tags = {}});
  ds[0].tags = {0};
  ds[1].tags = {7};
  const auto out = m.forward(fixtures::batch_of(ds, schema));
  const auto w = fixtures::values_of(out.gates(TaskId::kCvr));
  EXPECT_NE(std::vector<double>(w.begin(), w.begin() + 4), std::vector<double>(w.begin() + 4, w.end()));
}

// ---- scoring ----------------------------------------------------------------

TEST(ScorePair, ClosedForms) {
  using T64 = Tensor<double>;
  auto e = T64::from({1, 3}, {0.2, -0.4, 1.0});
  auto orth = T64::from({1, 3}, {2.0, 1.0, 0.0});
  EXPECT_NEAR(score_pair(e, e, T64::scalar(5.0))[0], 0.9933071490757153, 1e-15);
  EXPECT_NEAR(score_pair(e, orth, T64::scalar(5.0))[0], 0.5, 1e-15);
  EXPECT_NEAR(score_pair(e, scale(e, -2.0), T64::scalar(1.0))[0], 0.2689414213699951, 1e-15);
}

// ---- full forward -----------------------------------------------------------

TEST(MvkeForward, BatchRowsEqualSingleExampleForwards) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto ds = fixtures::random_examples(schema, 4, 30);
  const auto joint = m.forward(fixtures::batch_of(ds, schema));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto single = m.forward(make_batch(std::span<const Example>(&ds[i], 1), schema));
    for (TaskId t : {TaskId::kCtr, TaskId::kCvr}) EXPECT_EQ(joint.prob(t)[i], single.prob(t)[0]) << i;
  }
}

TEST(MvkeForward, DisjointRoutingIsolatesTasks) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema, disjoint_two()));
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 5, 40), schema);
  const auto base = m.forward(batch);
  fixtures::perturb(m.params(), "vke.1.", 0.3);
  m.params().get("vk").mutable_data()[8 + 2] += 0.5;  // expert 1's kernel
  const auto after = m.forward(batch);
  EXPECT_EQ(fixtures::values_of(after.prob(TaskId::kCtr)), fixtures::values_of(base.prob(TaskId::kCtr)));
  EXPECT_NE(fixtures::values_of(after.prob(TaskId::kCvr)), fixtures::values_of(base.prob(TaskId::kCvr)));
}

TEST(MvkeForward, FiveExpertRoutingIsolatesExclusiveExperts) {
  const auto schema = fixtures::small_schema();
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 5, 41), schema);
  struct Case {
    std::vector<std::size_t> experts;
    TaskId untouched;
  };
  for (const auto& c : {Case{{0}, TaskId::kCvr}, Case{{3}, TaskId::kCtr}, Case{{4}, TaskId::kCtr},
                        Case{{3, 4}, TaskId::kCtr}}) {
    MvkeModel<double> m(fixtures::mvke_config(schema));
    const auto base = m.forward(batch);
    for (auto e : c.experts) {
      fixtures::perturb(m.params(), MvkeModel<double>::expert_prefix(e), 0.25);
      m.params().get("vk").mutable_data()[e * 8] -= 0.4;
    }
    const auto after = m.forward(batch);
    EXPECT_EQ(fixtures::values_of(after.prob(c.untouched)), fixtures::values_of(base.prob(c.untouched)));
    const TaskId other = c.untouched == TaskId::kCtr ? TaskId::kCvr : TaskId::kCtr;
    EXPECT_NE(fixtures::values_of(after.prob(other)), fixtures::values_of(base.prob(other)));
  }
}

TEST(MvkeForward, TaskSpecificTowersIsolate) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 5, 42), schema);
  const auto base = m.forward(batch);
  fixtures::perturb(m.params(), "vkg.cvr.", 0.1);
  fixtures::perturb(m.params(), "tag_emb.cvr", 0.1);
  fixtures::perturb(m.params(), "tau.cvr", 1.0);
  EXPECT_EQ(fixtures::values_of(m.forward(batch).prob(TaskId::kCtr)), fixtures::values_of(base.prob(TaskId::kCtr)));
}

TEST(MvkeForward, SharedExpertsReceiveGradientFromEachTask) {
  const auto schema = fixtures::small_schema();
  const auto ds = fixtures::mixed_label_examples(schema, 8, 50);
  for (TaskMode mode : {TaskMode::kCtrOnly, TaskMode::kCvrOnly}) {
    MvkeModel<double> m(fixtures::mvke_config(schema));
    mtl_loss(m, fixtures::batch_of(ds, schema), mode).backward();
    for (std::size_t e : {1, 2}) {
      double norm = 0;
      for (const auto& p : m.params().all())
        if (p.name.rfind(MvkeModel<double>::expert_prefix(e), 0) == 0 && p.tensor.has_grad())
          for (double g : p.tensor.grad()) norm += g * g;
      EXPECT_GT(norm, 0.0) << task_mode_name(mode) << " expert " << e;
    }
    const std::size_t exclusive_other = mode == TaskMode::kCtrOnly ? 3 : 0;
    EXPECT_FALSE(m.params().get(MvkeModel<double>::expert_prefix(exclusive_other) + "W_Q").has_grad());
  }
}

TEST(MvkeForward, DisabledTaskIsConfigError) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema, single_task_routing(3, TaskId::kCvr)));
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 2, 1), schema);
  EXPECT_THROW(m.forward(batch), ConfigError);
  EXPECT_NO_THROW(m.forward(batch, TaskSet::only(TaskId::kCvr)));
  EXPECT_FALSE(m.params().contains("tag_emb.ctr"));
}

// ---- two-tower baseline -----------------------------------------------------

TEST(TwoTower, HasFewerParametersThanMvke) {
  const auto schema = fixtures::small_schema();
  TwoTowerModel<double> tt(fixtures::two_tower_config(schema, TaskId::kCtr));
  for (std::size_t k : {3, 5, 8}) {
    MvkeModel<double> m(fixtures::mvke_config(schema, default_routing(k)));
    EXPECT_LT(tt.params().scalar_count(), m.params().scalar_count()) << k;
  }
  MvkeModel<double> st(fixtures::mvke_config(schema, single_task_routing(2, TaskId::kCtr)));
  EXPECT_LT(tt.params().scalar_count(), st.params().scalar_count());
}

TEST(TwoTower, IdentityMlpReturnsFieldEmbedding) {
  const std::size_t d = 4;
  FieldSchema schema{{{"only", 5, 1}}, 3, d};
  TwoTowerModel<double> tt(fixtures::two_tower_config(schema, TaskId::kCtr));
  auto& P = tt.params();
  // relu(x) - relu(-x) == x
  auto w1 = P.get("user_mlp.W1").mutable_data();
  auto w2 = P.get("user_mlp.W2").mutable_data();
  std::fill(w1.begin(), w1.end(), 0.0);
  std::fill(w2.begin(), w2.end(), 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    w1[i * 2 * d + i] = 1;
    w1[i * 2 * d + d + i] = -1;
    w2[i * d + i] = 1;
    w2[(d + i) * d + i] = -1;
  }
  Example ex{.fields = {{3}}, .tags = {0}};
  const auto user = tt.user_tower(make_batch(std::span<const Example>(&ex, 1), schema));
  for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(user[c], P.get("user_emb.only")[3 * d + c]);
}

TEST(TwoTower, ForwardMatchesOracle) {
  const auto schema = fixtures::small_schema();
  TwoTowerModel<double> tt(fixtures::two_tower_config(schema, TaskId::kCvr));
  const auto& P = tt.params();
  const auto ds = fixtures::random_examples(schema, 2, 60);
  const auto p = tt.forward(fixtures::batch_of(ds, schema)).prob(TaskId::kCvr);
  const std::size_t d = 8, h = 16;
  for (std::size_t i = 0; i < 2; ++i) {
    oracle::Vec pooled(d, 0.0L);
    for (std::size_t j = 0; j < schema.num_fields(); ++j) {
      const auto& table = P.get("user_emb." + schema.user_fields[j].name);
      for (auto v : ds[i].fields[j]) {
        const auto r = row_of(table, static_cast<std::size_t>(v), d);
        for (std::size_t c = 0; c < d; ++c)
          pooled[c] += r[c] / static_cast<long double>(ds[i].fields[j].size() * schema.num_fields());
      }
    }
    const auto hidden =
        oracle::relu_vec(oracle::affine(pooled, as_mat(P.get("user_mlp.W1"), d, h), as_vec(P.get("user_mlp.b1"))));
    const auto user = oracle::affine(hidden, as_mat(P.get("user_mlp.W2"), h, d), as_vec(P.get("user_mlp.b2")));
    const auto tag = oracle_tag_tower(P, ds[i].tags, TaskId::kCvr, d);
    const long double want = oracle::sigmoid(P.get("tau.cvr")[0] * oracle::cosine(user, tag));
    EXPECT_NEAR(p[i], static_cast<double>(want), kOracleTol);
  }
}

TEST(TwoTower, ModelsOnlyItsTask) {
  const auto schema = fixtures::small_schema();
  TwoTowerModel<double> tt(fixtures::two_tower_config(schema, TaskId::kCtr));
  const auto batch = fixtures::batch_of(fixtures::random_examples(schema, 2, 1), schema);
  EXPECT_THROW(tt.forward(batch, TaskSet::only(TaskId::kCvr)), ConfigError);
  EXPECT_FALSE(tt.params().contains("tag_emb.cvr"));
  EXPECT_FALSE(tt.supports(TaskId::kCvr));
}

// ---- gradients and determinism ----------------------------------------------

TEST(ModelGradCheck, SingleExpertWithBce) {
  const auto schema = fixtures::small_schema();
  MvkeModel<double> m(fixtures::mvke_config(schema));
  const auto ds = fixtures::mixed_label_examples(schema, 4, 70);
  const auto batch = fixtures::batch_of(ds, schema);
  const auto labels = label_values<double>(batch, TaskId::kCtr);
  auto loss = [&] {
    const auto user = m.vke_forward(m.embed_user_fields(batch), 1);
    const auto p = score_pair(user, m.tag_tower(batch, TaskId::kCtr), m.params().get("tau.ctr"));
    return bce_loss(p, std::span<const double>(labels));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : m.params().all())
    if (p.name.rfind("vke.1.", 0) == 0 || p.name == "vk" || p.name.rfind("user_emb.", 0) == 0 ||
        p.name.find(".ctr") != std::string::npos)
      params.push_back(&p);
  const auto r = grad_check(loss, params, {.max_entries_per_tensor = 8});
  EXPECT_GT(r.entries_checked, 40u);
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst_parameter << "[" << r.worst_index << "]";
}

TEST(ModelGradCheck, FullMultiTaskLoss) {
  const auto schema = fixtures::small_schema(8);
  for (std::uint64_t seed : {100, 101, 102}) {
    MvkeModel<double> m(fixtures::mvke_config(schema, five_expert_routing(), seed));
    fixtures::move_to_generic_point(m.params(), seed);
    const auto batch = fixtures::batch_of(fixtures::mixed_label_examples(schema, 4, seed), schema);
    const auto r = grad_check([&] { return mtl_loss(m, batch, TaskMode::kMulti); }, all_parameters(m.params()),
                              {.max_entries_per_tensor = 32});
    EXPECT_GT(r.entries_checked, 500u);
    EXPECT_LE(r.max_rel_error, 1e-4) << seed << ": " << r.worst_parameter << "[" << r.worst_index << "]";
  }
}

TEST(Determinism, OneEpochIsBitIdentical) {
  const auto schema = fixtures::small_schema();
  const auto train = fixtures::mixed_label_examples(schema, 96, 80);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.seed = 9;
  auto run = [&] {
    MvkeModel<double> m(fixtures::mvke_config(schema));
    fit(m, train, Dataset{}, tc);
    return m.params().snapshot();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  MvkeModel<double> fresh(fixtures::mvke_config(schema));
  EXPECT_NE(a, fresh.params().snapshot());
}
