#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qpm/protogen.hpp"
#include "test_util.hpp"

using namespace qpm;
using namespace qpm::test;

namespace {
const double kInvSqrt2 = 0.70710678118654752;
}

TEST_CASE("basic prototype generation") {
  Rng rng(3);
  auto e = random_unit(8, rng);
  auto single = generate_prototype_basic({e});
  CHECK(close_vec(single.values, e.values, 1e-12));

  auto p = generate_prototype_basic({UnitEmbedding{{1, 0}}, UnitEmbedding{{0, 1}}});
  CHECK(close_vec(p.values, {kInvSqrt2, kInvSqrt2}, 1e-12));

  CHECK_THROWS_AS(
      generate_prototype_basic({UnitEmbedding{{1, 0}}, UnitEmbedding{{-1, 0}}}),
      DegenerateVector);
}

TEST_CASE("quality-aware prototype generation examples") {
  std::vector<UnitEmbedding> embs{UnitEmbedding{{1, 0}}, UnitEmbedding{{0, 1}}};

  auto uniform = generate_prototype_qa(embs, {1.0, 1.0});
  CHECK(close_vec(uniform.values, {kInvSqrt2, kInvSqrt2}, 1e-12));

  auto dropped = generate_prototype_qa(embs, {1.0, 0.0});
  CHECK(close_vec(dropped.values, {1.0, 0.0}, 1e-12));

  // weighted mean (0.75, 0.25) normalized
  auto weighted = generate_prototype_qa(embs, {0.75, 0.25});
  CHECK(close_vec(weighted.values, {0.9486832980505138, 0.31622776601683794}, 1e-9));
}

TEST_CASE("qa falls back to the plain mean when quality mass vanishes") {
  Rng rng(17);
  auto embs = random_units(4, 8, rng);
  auto basic = generate_prototype_basic(embs);
  auto fallback = generate_prototype_qa(embs, {0.0, 0.0, 0.0, 0.0});
  CHECK(bitwise_equal(fallback.values, basic.values));
}

TEST_CASE("qa with all-ones qualities is bit-identical to the basic rule") {
  Rng rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    int k = 1 + static_cast<int>(rng.below(8));
    auto embs = random_units(k, 16, rng);
    auto basic = generate_prototype_basic(embs);
    auto qa = generate_prototype_qa(embs, std::vector<double>(k, 1.0));
    CHECK(bitwise_equal(qa.values, basic.values));
  }
}

TEST_CASE("qa invariants over randomized instances") {
  Rng rng(20);
  for (int trial = 0; trial < 1000; ++trial) {
    int k = 1 + static_cast<int>(rng.below(8));
    int d = 2 + static_cast<int>(rng.below(63));
    auto embs = random_units(k, d, rng);
    std::vector<double> q(k);
    for (auto& v : q) v = rng.uniform(0.05, 4.0);

    // uniform reduction
    double u = rng.uniform(0.1, 5.0);
    auto uni = generate_prototype_qa(embs, std::vector<double>(k, u));
    auto basic = generate_prototype_basic(embs);
    CHECK(close_vec(uni.values, basic.values, 1e-9));

    // positive-scale invariance
    double c = rng.uniform(0.1, 10.0);
    std::vector<double> scaled = q;
    for (auto& v : scaled) v *= c;
    auto p1 = generate_prototype_qa(embs, q);
    auto p2 = generate_prototype_qa(embs, scaled);
    CHECK(close_vec(p1.values, p2.values, 1e-9));

    // zero-weight dropout equivalence
    if (k >= 2) {
      std::size_t drop = rng.below(k);
      std::vector<double> q_dropped = q;
      q_dropped[drop] = 0.0;
      auto with_zero = generate_prototype_qa(embs, q_dropped);
      std::vector<UnitEmbedding> embs_cut;
      std::vector<double> q_cut;
      for (std::size_t j = 0; j < embs.size(); ++j) {
        if (j == drop) continue;
        embs_cut.push_back(embs[j]);
        q_cut.push_back(q[j]);
      }
      auto removed = generate_prototype_qa(embs_cut, q_cut);
      CHECK(close_vec(with_zero.values, removed.values, 1e-9));
    }
  }
}

TEST_CASE("weighted mean respects the pairwise cosine bound (k <= 4 brute force)") {
  // The pre-normalization mean is a convex combination, so its dot with each
  // input is at least the minimum pairwise cosine. After normalization the
  // same bound needs mutually acute inputs (the same-identity regime);
  // antipodal-ish inputs can push a negative dot further down.
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    int k = 2 + static_cast<int>(rng.below(3));
    int d = 3 + static_cast<int>(rng.below(6));
    auto embs = random_units(k, d, rng);
    std::vector<double> q(k);
    double q_total = 0.0;
    for (auto& v : q) {
      v = rng.uniform(0.01, 1.0);
      q_total += v;
    }
    Vec mean(d, 0.0);
    for (int j = 0; j < k; ++j)
      for (int t = 0; t < d; ++t) mean[t] += q[j] * embs[j].values[t] / q_total;
    for (int i = 0; i < k; ++i) {
      double min_pairwise = 1.0;
      for (int j = 0; j < k; ++j)
        min_pairwise = std::min(min_pairwise, cosine_similarity(embs[i], embs[j]));
      CHECK(dot(mean, embs[i].values) >= min_pairwise - 1e-12);
    }
  }
}

TEST_CASE("normalized prototype keeps the bound for clustered inputs") {
  Rng rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    int k = 2 + static_cast<int>(rng.below(3));
    int d = 4 + static_cast<int>(rng.below(5));
    auto base = random_unit(d, rng);
    std::vector<UnitEmbedding> embs;
    for (int j = 0; j < k; ++j) {
      Vec v = base.values;
      for (int t = 0; t < d; ++t) v[t] += 0.4 * rng.gaussian() / std::sqrt(double(d));
      embs.push_back(l2_normalize(v));
    }
    bool acute = true;
    for (int a = 0; a < k && acute; ++a)
      for (int b = 0; b < k; ++b)
        if (cosine_similarity(embs[a], embs[b]) < 0.0) { acute = false; break; }
    if (!acute) continue;
    std::vector<double> q(k);
    for (auto& v : q) v = rng.uniform(0.01, 1.0);
    auto proto = generate_prototype_qa(embs, q);
    for (int i = 0; i < k; ++i) {
      double min_pairwise = 1.0;
      for (int j = 0; j < k; ++j)
        min_pairwise = std::min(min_pairwise, cosine_similarity(embs[i], embs[j]));
      CHECK(cosine_similarity(proto, embs[i]) >= min_pairwise - 1e-12);
    }
  }
}

TEST_CASE("feature-norm qualities") {
  std::vector<RawEmbedding> batch{{5, 0}, {0, 10}, {2.5, 0}};
  auto q = quality_feature_norm(batch);
  CHECK(close(q[0], 0.5, 1e-15));
  CHECK(q[1] == 1.0);
  CHECK(close(q[2], 0.25, 1e-15));

  auto single = quality_feature_norm({RawEmbedding{3, 4}});
  CHECK(single[0] == 1.0);

  CHECK_THROWS_AS(quality_feature_norm({RawEmbedding{0, 0}, RawEmbedding{0, 0}}),
                  DegenerateVector);

  // two-pass oracle on a random batch
  Rng rng(30);
  std::vector<RawEmbedding> random_batch(32);
  for (auto& x : random_batch) {
    x.resize(16);
    for (auto& v : x) v = rng.gaussian() * rng.uniform(0.1, 3.0);
  }
  std::vector<double> norms;
  for (const auto& x : random_batch) norms.push_back(feature_norm(x));
  double max_norm = *std::max_element(norms.begin(), norms.end());
  auto got = quality_feature_norm(random_batch);
  bool has_exact_one = false;
  for (std::size_t j = 0; j < got.size(); ++j) {
    CHECK(close(got[j], norms[j] / max_norm, 1e-12));
    CHECK(got[j] <= 1.0);
    if (got[j] == 1.0) has_exact_one = true;
  }
  CHECK(has_exact_one);
}

TEST_CASE("recognizability qualities") {
  UnitEmbedding p_ui{{1.0, 0.0}};
  auto q = quality_recognizability(
      {UnitEmbedding{{1, 0}}, UnitEmbedding{{0, 1}}, UnitEmbedding{{-1, 0}}}, p_ui);
  CHECK(q[0] == 0.0);
  CHECK(q[1] == 1.0);
  CHECK(q[2] == 4.0);

  // monotone decreasing in cos(x, p_ui)
  Rng rng(31);
  auto ui = random_unit(8, rng);
  auto batch = random_units(64, 8, rng);
  auto qs = quality_recognizability(batch, ui);
  for (std::size_t a = 0; a < batch.size(); ++a)
    for (std::size_t b = 0; b < batch.size(); ++b) {
      double ca = cosine_similarity(batch[a], ui);
      double cb = cosine_similarity(batch[b], ui);
      if (ca < cb) CHECK(qs[a] >= qs[b]);
    }
}

TEST_CASE("hard prototype selection") {
  Rng rng(33);
  auto embs = random_units(3, 8, rng);
  CHECK(&select_hard_prototype(embs, {0.2, 0.9, 0.5}) == &embs[1]);
  auto single = random_units(1, 8, rng);
  CHECK(&select_hard_prototype(single, {0.3}) == &single[0]);
}

TEST_CASE("hard selection ties resolve to the lowest index") {
  Rng rng(34);
  auto embs = random_units(4, 8, rng);
  CHECK(hard_prototype_index({0.7, 0.7, 0.1, 0.7}) == 0);
  CHECK(hard_prototype_index({0.2, 0.9, 0.5}) == 1);
  CHECK(hard_prototype_index({0.42}) == 0);
  auto& chosen = select_hard_prototype(embs, {0.1, 0.8, 0.8, 0.2});
  CHECK(bitwise_equal(chosen.values, embs[1].values));
}

TEST_CASE("estimator names round-trip") {
  CHECK(estimator_from_name("uniform") == EstimatorKind::UniformBaseline);
  CHECK(estimator_from_name("none") == EstimatorKind::UniformBaseline);
  CHECK(estimator_from_name("norm") == EstimatorKind::FeatureNorm);
  CHECK(estimator_from_name("recog-soft") == EstimatorKind::RecogSoft);
  CHECK(estimator_from_name("recog-hard") == EstimatorKind::RecogHard);
  CHECK_THROWS_AS(estimator_from_name("bogus"), InvalidConfig);
}
