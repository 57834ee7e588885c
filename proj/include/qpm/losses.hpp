#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qpm/rng.hpp"
#include "qpm/vecmath.hpp"

namespace qpm {

enum class LossVariant {
  CosFace,             // target logit cos(theta) - m
  ArcFace,             // target logit cos(theta + m)
  ElasticFaceCosPlus,  // CosFace with per-sample m ~ N(m, sigma)
  ElasticFaceArcPlus,  // ArcFace with per-sample m ~ N(m, sigma)
};

bool is_angular(LossVariant v);
bool is_elastic(LossVariant v);
const char* loss_name(LossVariant v);
LossVariant loss_from_name(const std::string& name);  // throws InvalidConfig

double default_margin(LossVariant v);  // 0.4 cosine, 0.5 angular
double default_sigma(LossVariant v);   // 0.025 cos+, 0.0175 arc+, else 0

struct LossSpec {
  LossVariant variant = LossVariant::CosFace;
  double margin = 0.4;
  double scale = 64.0;
  double sigma = 0.0;
};

LossSpec make_loss_spec(LossVariant v);  // variant with its default (m, s, sigma)

struct LossOutput {
  double loss = 0.0;
  std::vector<Vec> grad_embeddings;  // d dL/d embedding_i (w.r.t. the unit vector)
  std::vector<Vec> grad_prototypes;  // d dL/d prototype_j
  std::vector<Vec> logits;           // [sample][prototype], scaled
  std::vector<double> margins;       // effective margin applied per sample
  std::vector<double> target_cos;    // cos(embedding_i, prototype of label_i), pre-margin
};

// Margin-penalized target logit (unscaled). cosine variants: cos - m;
// angular variants: cos(theta + m), with the monotone fallback cos - m*sin(m)
// once theta + m exceeds pi.
double target_logit(LossVariant v, double cos_theta, double effective_margin);

// d(target_logit)/d(cos_theta). Angular variants use sin(theta+m)/sin(theta);
// the factor is 1 in the fallback region and in the degenerate sin(theta) -> 0
// regime (which keeps gradients finite where the true derivative diverges).
double target_logit_dcos(LossVariant v, double cos_theta, double effective_margin);

// One margin draw from N(m, sigma), clamped to >= 0. sigma = 0 returns m
// exactly.
double elastic_margin_draw(const LossSpec& spec, Rng& rng);

// Cross-entropy over scaled cosine logits with the margin applied at the
// target column. Gradients are the exact analytic derivatives of the mean
// loss with respect to every embedding and every prototype vector. Elastic
// variants consume one rng draw per sample, in sample order.
LossOutput loss_and_grad(const LossSpec& spec,
                         const std::vector<UnitEmbedding>& embeddings,
                         const std::vector<ClassId>& labels,
                         const std::vector<std::pair<ClassId, UnitEmbedding>>& prototypes,
                         Rng& rng);

}  // namespace qpm
