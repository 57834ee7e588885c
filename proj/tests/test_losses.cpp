#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qpm/losses.hpp"
#include "test_util.hpp"

using namespace qpm;
using namespace qpm::test;

namespace {

struct Instance {
  std::vector<UnitEmbedding> embeddings;
  std::vector<ClassId> labels;
  std::vector<std::pair<ClassId, UnitEmbedding>> prototypes;
};

Instance random_instance(int n, int num_protos, int d, Rng& rng) {
  Instance inst;
  inst.embeddings = random_units(n, d, rng);
  for (int j = 0; j < num_protos; ++j)
    inst.prototypes.emplace_back(100 + j, random_unit(d, rng));
  for (int i = 0; i < n; ++i)
    inst.labels.push_back(100 + static_cast<ClassId>(rng.below(num_protos)));
  return inst;
}

double loss_at(const LossSpec& spec, const Instance& inst, Rng rng_frozen) {
  return loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, rng_frozen)
      .loss;
}

// central finite differences over every embedding and prototype coordinate
void check_gradients(const LossSpec& spec, const Instance& inst, std::uint64_t rng_seed,
                     double rel = 1e-5, double abs_floor = 1e-8) {
  const double h = 1e-5;
  Rng rng(rng_seed);
  auto out = loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, rng);

  Instance probe = inst;
  for (std::size_t i = 0; i < inst.embeddings.size(); ++i) {
    for (std::size_t t = 0; t < inst.embeddings[i].values.size(); ++t) {
      probe.embeddings[i].values[t] = inst.embeddings[i].values[t] + h;
      double up = loss_at(spec, probe, Rng(rng_seed));
      probe.embeddings[i].values[t] = inst.embeddings[i].values[t] - h;
      double down = loss_at(spec, probe, Rng(rng_seed));
      probe.embeddings[i].values[t] = inst.embeddings[i].values[t];
      double fd = (up - down) / (2.0 * h);
      REQUIRE(grad_close(out.grad_embeddings[i][t], fd, rel, abs_floor));
    }
  }
  for (std::size_t j = 0; j < inst.prototypes.size(); ++j) {
    for (std::size_t t = 0; t < inst.prototypes[j].second.values.size(); ++t) {
      probe.prototypes[j].second.values[t] = inst.prototypes[j].second.values[t] + h;
      double up = loss_at(spec, probe, Rng(rng_seed));
      probe.prototypes[j].second.values[t] = inst.prototypes[j].second.values[t] - h;
      double down = loss_at(spec, probe, Rng(rng_seed));
      probe.prototypes[j].second.values[t] = inst.prototypes[j].second.values[t];
      double fd = (up - down) / (2.0 * h);
      REQUIRE(grad_close(out.grad_prototypes[j][t], fd, rel, abs_floor));
    }
  }
}

}  // namespace

TEST_CASE("target logit values") {
  CHECK(close(target_logit(LossVariant::CosFace, 0.8, 0.4), 0.4, 1e-15));
  CHECK(close(target_logit(LossVariant::ArcFace, 1.0, 0.5), std::cos(0.5), 1e-15));
  CHECK(target_logit(LossVariant::ArcFace, 1.0, 0.5) ==
        doctest::Approx(0.8775825618903728).epsilon(1e-14));

  // zero margin is the exact identity for every variant
  for (auto v : {LossVariant::CosFace, LossVariant::ArcFace,
                 LossVariant::ElasticFaceCosPlus, LossVariant::ElasticFaceArcPlus}) {
    CHECK(target_logit(v, 0.3141, 0.0) == 0.3141);
    CHECK(target_logit_dcos(v, 0.3141, 0.0) == 1.0);
  }
}

TEST_CASE("angular fallback when theta + m exceeds pi") {
  const double m = 0.5;
  const double c = -0.95;  // theta ~ 2.82, theta + m > pi
  CHECK(close(target_logit(LossVariant::ArcFace, c, m), c - m * std::sin(m), 1e-15));
  CHECK(target_logit_dcos(LossVariant::ArcFace, c, m) == 1.0);

  // monotone: the fallback keeps the penalty ordering near the boundary
  double just_inside = std::cos(3.14159265358979323846 - m - 1e-4);
  CHECK(target_logit(LossVariant::ArcFace, just_inside, m) >
        target_logit(LossVariant::ArcFace, -0.9999, m));
}

TEST_CASE("elastic margin draws") {
  LossSpec spec = make_loss_spec(LossVariant::ElasticFaceCosPlus);
  CHECK(spec.margin == 0.4);
  CHECK(spec.sigma == 0.025);

  LossSpec degenerate = spec;
  degenerate.sigma = 0.0;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(elastic_margin_draw(degenerate, rng) == 0.4);

  Rng r1(7), r2(7);
  for (int i = 0; i < 1000; ++i)
    CHECK(elastic_margin_draw(spec, r1) == elastic_margin_draw(spec, r2));

  Rng stat_rng(99);
  const int n = 100000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = elastic_margin_draw(spec, stat_rng);
    CHECK(x >= 0.0);
    double delta = x - mean;
    mean += delta / (i + 1);
    m2 += delta * (x - mean);
  }
  double stddev = std::sqrt(m2 / (n - 1));
  CHECK(close(mean, 0.4, 1e-3));
  CHECK(close(stddev, 0.025, 2e-3));
}

TEST_CASE("degenerate single-class loss is exactly zero") {
  Rng rng(2);
  auto e = random_unit(16, rng);
  LossSpec spec{LossVariant::CosFace, 0.0, 64.0, 0.0};
  auto out = loss_and_grad(spec, {e}, {5}, {{5, e}}, rng);
  CHECK(out.loss == 0.0);
}

TEST_CASE("two-prototype CosFace loss matches a long-double oracle") {
  UnitEmbedding e{{1.0, 0.0}};
  std::vector<std::pair<ClassId, UnitEmbedding>> protos{{0, UnitEmbedding{{1.0, 0.0}}},
                                                        {1, UnitEmbedding{{0.0, 1.0}}}};
  LossSpec spec{LossVariant::CosFace, 0.4, 64.0, 0.0};
  Rng rng(3);
  auto out = loss_and_grad(spec, {e}, {0}, protos, rng);

  // logits: target 64*(1-0.4) = 38.4, other 0; loss = log(1 + exp(-38.4))
  long double z0 = 38.4L, z1 = 0.0L;
  long double oracle = std::log(std::exp(z0 - z0) + std::exp(z1 - z0));
  CHECK(std::abs(out.loss - static_cast<double>(oracle)) <= 1e-10);
  CHECK(out.logits[0][0] == doctest::Approx(38.4).epsilon(1e-14));
  CHECK(out.logits[0][1] == 0.0);
}

TEST_CASE("analytic gradients match finite differences, all variants") {
  std::uint64_t seed = 1000;
  for (auto v : {LossVariant::CosFace, LossVariant::ArcFace,
                 LossVariant::ElasticFaceCosPlus, LossVariant::ElasticFaceArcPlus}) {
    LossSpec spec = make_loss_spec(v);
    spec.sigma = 0.0;  // frozen margins handled separately below
    Rng gen(seed++);
    Instance inst = random_instance(8, 16, 32, gen);
    check_gradients(spec, inst, seed * 13 + 1);
  }
}

TEST_CASE("gradients with frozen elastic margin draws") {
  std::uint64_t seed = 2000;
  for (auto v : {LossVariant::ElasticFaceCosPlus, LossVariant::ElasticFaceArcPlus}) {
    LossSpec spec = make_loss_spec(v);  // real sigma, frozen via rng reseeding
    Rng gen(seed++);
    Instance inst = random_instance(6, 10, 16, gen);
    check_gradients(spec, inst, seed * 17 + 3);
  }
}

TEST_CASE("loss decreases under a small gradient step") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng gen(3000 + seed);
    Instance inst = random_instance(8, 12, 16, gen);
    LossSpec spec = make_loss_spec(LossVariant::ArcFace);
    std::uint64_t margin_seed = 4000 + seed;
    Rng rng(margin_seed);
    auto out = loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, rng);

    Instance stepped = inst;
    const double eta = 1e-3;
    for (std::size_t i = 0; i < inst.embeddings.size(); ++i)
      for (std::size_t t = 0; t < inst.embeddings[i].values.size(); ++t)
        stepped.embeddings[i].values[t] -= eta * out.grad_embeddings[i][t];
    for (std::size_t j = 0; j < inst.prototypes.size(); ++j)
      for (std::size_t t = 0; t < inst.prototypes[j].second.values.size(); ++t)
        stepped.prototypes[j].second.values[t] -= eta * out.grad_prototypes[j][t];

    if (loss_at(spec, stepped, Rng(margin_seed)) < out.loss) ++decreased;
  }
  CHECK(decreased >= 19);
}

TEST_CASE("all variants coincide at m = 0, sigma = 0") {
  Rng gen(5000);
  Instance inst = random_instance(6, 8, 16, gen);
  std::vector<LossOutput> outs;
  for (auto v : {LossVariant::CosFace, LossVariant::ArcFace,
                 LossVariant::ElasticFaceCosPlus, LossVariant::ElasticFaceArcPlus}) {
    LossSpec spec{v, 0.0, 64.0, 0.0};
    Rng rng(1);
    outs.push_back(loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, rng));
  }
  for (std::size_t k = 1; k < outs.size(); ++k) {
    CHECK(outs[k].loss == outs[0].loss);
    for (std::size_t i = 0; i < outs[0].grad_embeddings.size(); ++i)
      CHECK(bitwise_equal(outs[k].grad_embeddings[i], outs[0].grad_embeddings[i]));
    for (std::size_t j = 0; j < outs[0].grad_prototypes.size(); ++j)
      CHECK(bitwise_equal(outs[k].grad_prototypes[j], outs[0].grad_prototypes[j]));
    for (std::size_t i = 0; i < outs[0].logits.size(); ++i)
      CHECK(bitwise_equal(outs[k].logits[i], outs[0].logits[i]));
  }
}

TEST_CASE("permuting prototypes permutes gradients and keeps the loss") {
  Rng gen(6000);
  Instance inst = random_instance(6, 9, 16, gen);
  LossSpec spec = make_loss_spec(LossVariant::CosFace);
  Rng r1(1), r2(1);
  auto out = loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, r1);

  std::vector<std::size_t> perm{4, 7, 0, 2, 8, 1, 6, 3, 5};
  Instance shuffled = inst;
  for (std::size_t j = 0; j < perm.size(); ++j)
    shuffled.prototypes[j] = inst.prototypes[perm[j]];
  auto out2 =
      loss_and_grad(spec, shuffled.embeddings, shuffled.labels, shuffled.prototypes, r2);

  CHECK(close(out2.loss, out.loss, 1e-12));
  for (std::size_t j = 0; j < perm.size(); ++j)
    CHECK(close_vec(out2.grad_prototypes[j], out.grad_prototypes[perm[j]], 1e-12));
  for (std::size_t i = 0; i < out.grad_embeddings.size(); ++i)
    CHECK(close_vec(out2.grad_embeddings[i], out.grad_embeddings[i], 1e-12));
}

TEST_CASE("logit bounds") {
  Rng gen(7000);
  for (auto v : {LossVariant::CosFace, LossVariant::ArcFace,
                 LossVariant::ElasticFaceCosPlus, LossVariant::ElasticFaceArcPlus}) {
    LossSpec spec = make_loss_spec(v);
    for (int trial = 0; trial < 20; ++trial) {
      Instance inst = random_instance(6, 8, 12, gen);
      Rng rng(trial);
      auto out = loss_and_grad(spec, inst.embeddings, inst.labels, inst.prototypes, rng);
      for (std::size_t i = 0; i < out.logits.size(); ++i) {
        double m_i = out.margins[i];
        for (double l : out.logits[i]) {
          CHECK(std::abs(l) <= spec.scale * (1.0 + m_i) + 1e-9);
          if (is_angular(v) && out.target_cos[i] > -std::cos(m_i))
            CHECK(std::abs(l) <= spec.scale + 1e-9);  // no fallback triggered
        }
      }
    }
  }
}

TEST_CASE("error paths") {
  Rng gen(8000);
  Instance inst = random_instance(2, 3, 8, gen);
  Rng rng(1);

  LossSpec bad = make_loss_spec(LossVariant::CosFace);
  bad.scale = -1.0;
  CHECK_THROWS_AS(
      loss_and_grad(bad, inst.embeddings, inst.labels, inst.prototypes, rng), InvalidSpec);

  LossSpec ok = make_loss_spec(LossVariant::CosFace);
  auto missing = inst.labels;
  missing[0] = 999;
  CHECK_THROWS_AS(loss_and_grad(ok, inst.embeddings, missing, inst.prototypes, rng),
                  MissingPrototype);

  auto dup = inst.prototypes;
  dup[1].first = dup[0].first;
  CHECK_THROWS_AS(loss_and_grad(ok, inst.embeddings, inst.labels, dup, rng), InvalidSpec);
}
