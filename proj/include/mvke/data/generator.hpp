#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvke/data/dataset.hpp"
#include "mvke/eval/auc.hpp"
#include "mvke/schema.hpp"

namespace mvke {

enum class TaskId { kCtr = 0, kCvr = 1 };

inline const char* task_name(TaskId t) { return t == TaskId::kCtr ? "ctr" : "cvr"; }

inline TaskId parse_task(const std::string& s) {
  if (s == "ctr") return TaskId::kCtr;
  if (s == "cvr") return TaskId::kCvr;
  throw ConfigError("unknown task '" + s + "' (expected ctr or cvr)");
}

struct GeneratorConfig {
  std::size_t n_users = 10000;
  std::size_t n_tags = 100;
  std::size_t n_ads = 2000;
  std::size_t n_train = 200000;
  std::size_t n_test = 40000;
  std::size_t latent_dim = 8;
  /// Sampled negatives added per logged click.
  double negative_ratio = 1.0;
  /// Logit offsets; when unset they are calibrated to the target rates below.
  std::optional<double> click_offset;
  std::optional<double> conv_offset;
  double target_click_rate = 0.4;  // clicks / all records
  double target_conv_rate = 0.3;   // conversions / clicks
  double signal_scale = 2.5;
  double rho = 0.5;  // correlation of a user's click and conversion latents
  /// Logged impressions are targeted: the ad is drawn from this many uniform
  /// candidates with weight exp(click logit). 1 means untargeted exposure.
  std::size_t exposure_candidates = 4;
  std::vector<UserField> user_fields = {
      {"age", 10, 1},     {"gender", 3, 1},    {"region", 30, 1},
      {"device", 8, 1},   {"interests", 40, 3}, {"purchases", 40, 3},
  };
  std::uint64_t seed = 1;

  void validate() const {
    if (!n_users || !n_tags || !n_ads || !latent_dim || !exposure_candidates) throw ConfigError("generator counts must be positive");
    if (n_tags < 2) throw ConfigError("generator needs at least 2 tags");
    if (negative_ratio < 0) throw ConfigError("negative_ratio must be >= 0");
    if (target_click_rate <= 0 || target_click_rate >= 1 || target_conv_rate <= 0 || target_conv_rate >= 1)
      throw ConfigError("target rates must lie in (0, 1)");
    if (target_click_rate * negative_ratio >= 0.95)
      throw ConfigError("negative_ratio too large for the target click rate");
    if (rho < -1 || rho > 1) throw ConfigError("rho must lie in [-1, 1]");
    if (user_fields.empty()) throw ConfigError("generator needs at least one user field");
  }

  FieldSchema schema(std::size_t embed_dim = 16) const {
    return FieldSchema{user_fields, n_tags, embed_dim};
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"n_users", c.n_users},
       {"n_tags", c.n_tags},
       {"n_ads", c.n_ads},
       {"n_train", c.n_train},
       {"n_test", c.n_test},
       {"latent_dim", c.latent_dim},
       {"negative_ratio", c.negative_ratio},
       {"click_offset", c.click_offset ? nlohmann::json(*c.click_offset) : nlohmann::json(nullptr)},
       {"conv_offset", c.conv_offset ? nlohmann::json(*c.conv_offset) : nlohmann::json(nullptr)},
       {"target_click_rate", c.target_click_rate},
       {"target_conv_rate", c.target_conv_rate},
       {"signal_scale", c.signal_scale},
       {"rho", c.rho},
       {"exposure_candidates", c.exposure_candidates},
       {"user_fields", c.user_fields},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.n_users = j.value("n_users", d.n_users);
  c.n_tags = j.value("n_tags", d.n_tags);
  c.n_ads = j.value("n_ads", d.n_ads);
  c.n_train = j.value("n_train", d.n_train);
  c.n_test = j.value("n_test", d.n_test);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.negative_ratio = j.value("negative_ratio", d.negative_ratio);
  c.click_offset = j.contains("click_offset") && !j["click_offset"].is_null()
                       ? std::optional<double>(j["click_offset"].get<double>())
                       : std::nullopt;
  c.conv_offset = j.contains("conv_offset") && !j["conv_offset"].is_null()
                      ? std::optional<double>(j["conv_offset"].get<double>())
                      : std::nullopt;
  c.target_click_rate = j.value("target_click_rate", d.target_click_rate);
  c.target_conv_rate = j.value("target_conv_rate", d.target_conv_rate);
  c.signal_scale = j.value("signal_scale", d.signal_scale);
  c.rho = j.value("rho", d.rho);
  c.exposure_candidates = j.value("exposure_candidates", d.exposure_candidates);
  c.user_fields = j.contains("user_fields") ? j["user_fields"].get<std::vector<UserField>>() : d.user_fields;
  c.seed = j.value("seed", d.seed);
}

/// The generator's latent preference model; the oracle for Bayes-optimal scores.
///
///   p_click(u, a)        = sigmoid(scale * <u_click, t_a> + click_offset)
///   p_conv|click(u, a)   = sigmoid(scale * <u_conv,  t_a> + conv_offset)
///
/// where t_a is the mean topic vector of the ad's tags.
struct GroundTruth {
  std::size_t latent_dim = 0;
  double scale = 0;
  double click_offset = 0;
  double conv_offset = 0;
  std::vector<std::vector<double>> user_click;  // [n_users][latent_dim]
  std::vector<std::vector<double>> user_conv;
  std::vector<std::vector<double>> tag_topics;  // [n_tags][latent_dim]
  std::vector<std::vector<std::int32_t>> ad_tags;
  std::vector<std::vector<std::vector<std::int32_t>>> user_features;  // [n_users][field][values]

  std::vector<double> ad_topic(std::size_t ad) const {
    std::vector<double> v(latent_dim, 0.0);
    for (auto t : ad_tags.at(ad))
      for (std::size_t i = 0; i < latent_dim; ++i) v[i] += tag_topics[t][i];
    for (auto& x : v) x /= static_cast<double>(ad_tags[ad].size());
    return v;
  }

  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  double click_logit(std::size_t user, const std::vector<double>& topic) const {
    double dot = 0;
    for (std::size_t i = 0; i < latent_dim; ++i) dot += user_click.at(user)[i] * topic[i];
    return scale * dot + click_offset;
  }
  double conv_logit(std::size_t user, const std::vector<double>& topic) const {
    double dot = 0;
    for (std::size_t i = 0; i < latent_dim; ++i) dot += user_conv.at(user)[i] * topic[i];
    return scale * dot + conv_offset;
  }

  double p_click(std::size_t user, std::size_t ad) const { return sigmoid(click_logit(user, ad_topic(ad))); }
  double p_conv_given_click(std::size_t user, std::size_t ad) const {
    return sigmoid(conv_logit(user, ad_topic(ad)));
  }
  /// Unconditional probability of a conversion on an impression.
  double p_conv(std::size_t user, std::size_t ad) const {
    const auto topic = ad_topic(ad);
    return sigmoid(click_logit(user, topic)) * sigmoid(conv_logit(user, topic));
  }
  double p_task(TaskId task, std::size_t user, std::size_t ad) const {
    return task == TaskId::kCtr ? p_click(user, ad) : p_conv(user, ad);
  }
};

inline void to_json(nlohmann::json& j, const GroundTruth& g) {
  j = {{"latent_dim", g.latent_dim},     {"scale", g.scale},         {"click_offset", g.click_offset},
       {"conv_offset", g.conv_offset},   {"user_click", g.user_click}, {"user_conv", g.user_conv},
       {"tag_topics", g.tag_topics},     {"ad_tags", g.ad_tags},     {"user_features", g.user_features}};
}
inline void from_json(const nlohmann::json& j, GroundTruth& g) {
  j.at("latent_dim").get_to(g.latent_dim);
  j.at("scale").get_to(g.scale);
  j.at("click_offset").get_to(g.click_offset);
  j.at("conv_offset").get_to(g.conv_offset);
  j.at("user_click").get_to(g.user_click);
  j.at("user_conv").get_to(g.user_conv);
  j.at("tag_topics").get_to(g.tag_topics);
  j.at("ad_tags").get_to(g.ad_tags);
  j.at("user_features").get_to(g.user_features);
}

inline void write_truth(const GroundTruth& truth, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << nlohmann::json(truth).dump() << '\n';
}

inline GroundTruth read_truth(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open ground truth: " + path);
  try {
    return nlohmann::json::parse(is).get<GroundTruth>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed ground truth: " + e.what());
  }
}

struct GeneratedData {
  Dataset train;
  Dataset test;
  GroundTruth truth;
};

namespace detail {

// Offset b such that mean_i sigmoid(x_i + b) == target, by bisection.
inline double calibrate_offset(const std::vector<double>& logits, double target) {
  double lo = -30, hi = 30;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0;
    for (double x : logits) mean += GroundTruth::sigmoid(x + mid);
    mean /= static_cast<double>(logits.size());
    (mean < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Synthetic impression logs with a known preference model.
///
/// Each user has fixed categorical features; a user's click and conversion
/// latents are sums of per-(field, value) vectors, the conversion latent
/// mixing in an independent component so the two are correlated at `rho`.
/// Records are logged impressions with Bernoulli labels (conversion only
/// after a click) plus `negative_ratio` random (user, ad) negatives per click.
inline GeneratedData generate(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t T = cfg.latent_dim;
  const std::size_t m = cfg.user_fields.size();

  GroundTruth g;
  g.latent_dim = T;
  g.scale = cfg.signal_scale;

  // Per-(field, value) latent contributions. Each field contributes variance
  // 1/m per coordinate, so user latents are roughly unit-variance.
  const double field_sd = 1.0 / std::sqrt(static_cast<double>(m));
  auto draw_vec = [&](double sd) {
    std::vector<double> v(T);
    for (auto& x : v) x = sd * normal(rng);
    return v;
  };
  std::vector<std::vector<std::vector<double>>> click_part(m), conv_part(m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t v = 0; v < cfg.user_fields[j].vocab_size; ++v) {
      click_part[j].push_back(draw_vec(field_sd));
      conv_part[j].push_back(draw_vec(field_sd));
    }

  const double mix = std::sqrt(1.0 - cfg.rho * cfg.rho);
  g.user_features.resize(cfg.n_users);
  g.user_click.assign(cfg.n_users, std::vector<double>(T, 0.0));
  g.user_conv.assign(cfg.n_users, std::vector<double>(T, 0.0));
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    auto& feats = g.user_features[u];
    feats.resize(m);
    std::vector<double> independent(T, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& f = cfg.user_fields[j];
      const std::size_t count =
          f.max_values <= 1 ? 1 : 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(f.max_values));
      const std::size_t n_values = std::min(count, std::min(f.max_values, f.vocab_size));
      while (feats[j].size() < n_values) {
        const auto v = static_cast<std::int32_t>(unit(rng) * static_cast<double>(f.vocab_size));
        if (std::find(feats[j].begin(), feats[j].end(), v) == feats[j].end()) feats[j].push_back(v);
      }
      std::sort(feats[j].begin(), feats[j].end());
      const double inv = 1.0 / static_cast<double>(feats[j].size());
      for (auto v : feats[j])
        for (std::size_t i = 0; i < T; ++i) {
          g.user_click[u][i] += inv * click_part[j][v][i];
          independent[i] += inv * conv_part[j][v][i];
        }
    }
    for (std::size_t i = 0; i < T; ++i) g.user_conv[u][i] = cfg.rho * g.user_click[u][i] + mix * independent[i];
  }

  // Tags: a dominant topic plus small spill-over into the others.
  g.tag_topics.assign(cfg.n_tags, std::vector<double>(T, 0.0));
  for (std::size_t t = 0; t < cfg.n_tags; ++t) {
    const auto topic = static_cast<std::size_t>(unit(rng) * static_cast<double>(T));
    for (std::size_t i = 0; i < T; ++i) g.tag_topics[t][i] = 0.3 * normal(rng) / std::sqrt(static_cast<double>(T));
    g.tag_topics[t][topic] += 1.0;
  }
  g.ad_tags.resize(cfg.n_ads);
  for (auto& tags : g.ad_tags) {
    const std::size_t count = std::min<std::size_t>(1 + static_cast<std::size_t>(unit(rng) * 3.0), cfg.n_tags);
    while (tags.size() < count) {
      const auto t = static_cast<std::int32_t>(unit(rng) * static_cast<double>(cfg.n_tags));
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
    }
    std::sort(tags.begin(), tags.end());
  }

  auto pick = [&](std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n))); };
  // Softmax over candidates is offset-invariant, so this is usable before
  // the offsets are calibrated.
  std::vector<std::size_t> candidates(cfg.exposure_candidates);
  std::vector<double> weights(cfg.exposure_candidates);
  auto pick_exposed_ad = [&](std::size_t u) {
    if (cfg.exposure_candidates == 1) return pick(cfg.n_ads);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      candidates[c] = pick(cfg.n_ads);
      weights[c] = g.click_logit(u, g.ad_topic(candidates[c]));
      top = std::max(top, weights[c]);
    }
    double total = 0;
    for (auto& w : weights) total += (w = std::exp(w - top));
    double r = unit(rng) * total;
    for (std::size_t c = 0; c + 1 < candidates.size(); ++c) {
      if (r < weights[c]) return candidates[c];
      r -= weights[c];
    }
    return candidates.back();
  };

  // Offset calibration on a pilot sample. With r sampled negatives per click,
  // the overall click share is c / (1 + r c) for impression click rate c.
  {
    std::vector<double> click_raw, conv_raw;
    const std::size_t pilot = 20000;
    for (std::size_t i = 0; i < pilot; ++i) {
      const std::size_t u = pick(cfg.n_users), a = pick_exposed_ad(u);
      const auto topic = g.ad_topic(a);
      click_raw.push_back(g.click_logit(u, topic));
      conv_raw.push_back(g.conv_logit(u, topic));
    }
    const double impression_click_rate =
        cfg.target_click_rate / (1.0 - cfg.target_click_rate * cfg.negative_ratio);
    g.click_offset = cfg.click_offset.value_or(detail::calibrate_offset(click_raw, impression_click_rate));
    if (cfg.conv_offset) {
      g.conv_offset = *cfg.conv_offset;
    } else {
      // Calibrate conversion-given-click over clicked pairs: weight by p_click.
      double lo = -30, hi = 30;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < pilot; ++i) {
          const double pc = GroundTruth::sigmoid(click_raw[i] + g.click_offset);
          num += pc * GroundTruth::sigmoid(conv_raw[i] + mid);
          den += pc;
        }
        (num / den < cfg.target_conv_rate ? lo : hi) = mid;
      }
      g.conv_offset = 0.5 * (lo + hi);
    }
  }

  std::int64_t next_impression = 0;
  auto make_example = [&](std::size_t u, std::size_t a) {
    Example ex;
    ex.user_id = static_cast<std::int64_t>(u);
    ex.ad_id = static_cast<std::int64_t>(a);
    ex.impression = next_impression++;
    ex.fields = g.user_features[u];
    ex.tags = g.ad_tags[a];
    return ex;
  };

  const double whole = std::floor(cfg.negative_ratio);
  const double frac = cfg.negative_ratio - whole;
  auto fill = [&](std::size_t n) {
    Dataset ds;
    ds.reserve(n);
    while (ds.size() < n) {
      const std::size_t u = pick(cfg.n_users), a = pick_exposed_ad(u);
      Example ex = make_example(u, a);
      const auto topic = g.ad_topic(a);
      ex.click = unit(rng) < GroundTruth::sigmoid(g.click_logit(u, topic)) ? 1 : 0;
      ex.conv = ex.click && unit(rng) < GroundTruth::sigmoid(g.conv_logit(u, topic)) ? 1 : 0;
      const bool clicked = ex.click == 1;
      ds.push_back(std::move(ex));
      if (!clicked) continue;
      std::size_t negatives = static_cast<std::size_t>(whole) + (unit(rng) < frac ? 1 : 0);
      for (; negatives > 0 && ds.size() < n; --negatives) {
        Example neg = make_example(pick(cfg.n_users), pick(cfg.n_ads));
        neg.sampled_negative = true;
        ds.push_back(std::move(neg));
      }
    }
    return ds;
  };

  GeneratedData out;
  out.train = fill(cfg.n_train);
  out.test = fill(cfg.n_test);
  out.truth = std::move(g);
  return out;
}

/// AUC of the generator's true probabilities against the realized labels.
inline double bayes_auc(const GroundTruth& truth, const Dataset& ds, TaskId task) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  scores.reserve(ds.size());
  labels.reserve(ds.size());
  for (const auto& ex : ds) {
    scores.push_back(truth.p_task(task, static_cast<std::size_t>(ex.user_id), static_cast<std::size_t>(ex.ad_id)));
    labels.push_back(task == TaskId::kCtr ? ex.click : ex.conv);
  }
  return auc(scores, labels);
}

}  // namespace mvke
