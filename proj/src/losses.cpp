#include "qpm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace qpm {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSinThetaFloor = 1e-6;
}  // namespace

bool is_angular(LossVariant v) {
  return v == LossVariant::ArcFace || v == LossVariant::ElasticFaceArcPlus;
}

bool is_elastic(LossVariant v) {
  return v == LossVariant::ElasticFaceCosPlus || v == LossVariant::ElasticFaceArcPlus;
}

const char* loss_name(LossVariant v) {
  switch (v) {
    case LossVariant::CosFace: return "cosface";
    case LossVariant::ArcFace: return "arcface";
    case LossVariant::ElasticFaceCosPlus: return "elasticface-cos+";
    case LossVariant::ElasticFaceArcPlus: return "elasticface-arc+";
  }
  return "?";
}

LossVariant loss_from_name(const std::string& name) {
  if (name == "cosface") return LossVariant::CosFace;
  if (name == "arcface") return LossVariant::ArcFace;
  if (name == "elasticface-cos+") return LossVariant::ElasticFaceCosPlus;
  if (name == "elasticface-arc+") return LossVariant::ElasticFaceArcPlus;
  throw InvalidConfig("unknown loss: " + name);
}

double default_margin(LossVariant v) { return is_angular(v) ? 0.5 : 0.4; }

double default_sigma(LossVariant v) {
  switch (v) {
    case LossVariant::ElasticFaceCosPlus: return 0.025;
    case LossVariant::ElasticFaceArcPlus: return 0.0175;
    default: return 0.0;
  }
}

LossSpec make_loss_spec(LossVariant v) {
  return LossSpec{v, default_margin(v), 64.0, default_sigma(v)};
}

double target_logit(LossVariant v, double cos_theta, double effective_margin) {
  double c = std::clamp(cos_theta, -1.0, 1.0);
  if (!is_angular(v)) return c - effective_margin;
  if (effective_margin == 0.0) return c;
  double theta = std::acos(c);
  if (theta + effective_margin <= kPi) return std::cos(theta + effective_margin);
  // monotone fallback once theta + m leaves [0, pi]
  return c - effective_margin * std::sin(effective_margin);
}

double target_logit_dcos(LossVariant v, double cos_theta, double effective_margin) {
  if (!is_angular(v) || effective_margin == 0.0) return 1.0;
  double c = std::clamp(cos_theta, -1.0, 1.0);
  double theta = std::acos(c);
  if (theta + effective_margin > kPi) return 1.0;
  double sin_theta = std::sin(theta);
  if (sin_theta < kSinThetaFloor) return 1.0;
  return std::sin(theta + effective_margin) / sin_theta;
}

double elastic_margin_draw(const LossSpec& spec, Rng& rng) {
  double draw = spec.margin + spec.sigma * rng.gaussian();
  return std::max(0.0, draw);
}

LossOutput loss_and_grad(const LossSpec& spec,
                         const std::vector<UnitEmbedding>& embeddings,
                         const std::vector<ClassId>& labels,
                         const std::vector<std::pair<ClassId, UnitEmbedding>>& prototypes,
                         Rng& rng) {
  if (spec.scale <= 0.0) throw InvalidSpec("loss scale must be positive");
  if (spec.margin < 0.0) throw InvalidSpec("loss margin must be non-negative");
  if (spec.sigma < 0.0) throw InvalidSpec("loss sigma must be non-negative");
  if (embeddings.size() != labels.size())
    throw InvalidSpec("labels/embeddings length mismatch");
  if (embeddings.empty()) throw InvalidSpec("loss_and_grad: empty batch");
  if (prototypes.empty()) throw InvalidSpec("loss_and_grad: no prototypes");

  const std::size_t n = embeddings.size();
  const std::size_t num_protos = prototypes.size();
  const std::size_t d = prototypes[0].second.values.size();

  std::unordered_map<ClassId, std::size_t> proto_index;
  proto_index.reserve(num_protos);
  for (std::size_t j = 0; j < num_protos; ++j) {
    if (prototypes[j].second.values.size() != d)
      throw DimensionMismatch("prototype dimension mismatch");
    if (!proto_index.emplace(prototypes[j].first, j).second)
      throw InvalidSpec("duplicate prototype class id " + std::to_string(prototypes[j].first));
  }

  std::vector<std::size_t> target(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = proto_index.find(labels[i]);
    if (it == proto_index.end())
      throw MissingPrototype("no prototype for label " + std::to_string(labels[i]));
    target[i] = it->second;
  }

  LossOutput out;
  out.logits.assign(n, Vec(num_protos, 0.0));
  out.margins.resize(n);
  out.target_cos.resize(n);
  out.grad_embeddings.assign(n, Vec(d, 0.0));
  out.grad_prototypes.assign(num_protos, Vec(d, 0.0));

  const bool elastic = is_elastic(spec.variant);
  std::vector<double> dpsi(n);  // d(target logit)/d(cos) per sample

  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].values.size() != d)
      throw DimensionMismatch("embedding dimension mismatch");
    double m_eff = elastic ? elastic_margin_draw(spec, rng) : spec.margin;
    out.margins[i] = m_eff;
    for (std::size_t j = 0; j < num_protos; ++j) {
      double c = std::clamp(dot(embeddings[i].values, prototypes[j].second.values), -1.0, 1.0);
      if (j == target[i]) {
        out.target_cos[i] = c;
        out.logits[i][j] = spec.scale * target_logit(spec.variant, c, m_eff);
        dpsi[i] = target_logit_dcos(spec.variant, c, m_eff);
      } else {
        out.logits[i][j] = spec.scale * c;
      }
    }
  }

  // cross-entropy with max-shifted log-sum-exp; s = 64 overflows otherwise
  double loss_acc = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& row = out.logits[i];
    double row_max = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double l : row) denom += std::exp(l - row_max);
    double lse = row_max + std::log(denom);
    loss_acc += lse - row[target[i]];

    for (std::size_t j = 0; j < num_protos; ++j) {
      double p = std::exp(row[j] - lse);
      double dl_dlogit = (p - (j == target[i] ? 1.0 : 0.0)) * inv_n;
      double dl_dcos = dl_dlogit * spec.scale * (j == target[i] ? dpsi[i] : 1.0);
      if (dl_dcos == 0.0) continue;
      const Vec& e = embeddings[i].values;
      const Vec& w = prototypes[j].second.values;
      Vec& ge = out.grad_embeddings[i];
      Vec& gw = out.grad_prototypes[j];
      for (std::size_t t = 0; t < d; ++t) {
        ge[t] += dl_dcos * w[t];
        gw[t] += dl_dcos * e[t];
      }
    }
  }
  out.loss = loss_acc * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
  return out;
}

}  // namespace qpm
