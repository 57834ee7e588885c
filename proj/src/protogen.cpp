#include "qpm/protogen.hpp"

#include <cmath>

namespace qpm {

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::FeatureNorm: return "norm";
    case EstimatorKind::RecogSoft: return "recog-soft";
    case EstimatorKind::RecogHard: return "recog-hard";
    case EstimatorKind::UniformBaseline: return "uniform";
  }
  return "?";
}

EstimatorKind estimator_from_name(const std::string& name) {
  if (name == "norm") return EstimatorKind::FeatureNorm;
  if (name == "recog-soft") return EstimatorKind::RecogSoft;
  if (name == "recog-hard") return EstimatorKind::RecogHard;
  if (name == "uniform" || name == "none") return EstimatorKind::UniformBaseline;
  throw InvalidConfig("unknown estimator: " + name);
}

namespace {

void check_nonempty(std::size_t k) {
  if (k == 0) throw InvalidSpec("prototype generation needs at least one embedding");
}

void check_qualities(const std::vector<QualityScore>& q, std::size_t k) {
  if (q.size() != k)
    throw InvalidSpec("qualities/embeddings length mismatch: " + std::to_string(q.size()) +
                      " vs " + std::to_string(k));
  for (double v : q)
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidSpec("qualities must be finite and non-negative");
}

}  // namespace

UnitEmbedding generate_prototype_basic(const std::vector<UnitEmbedding>& embeddings) {
  check_nonempty(embeddings.size());
  const std::size_t d = embeddings[0].values.size();
  const double k = static_cast<double>(embeddings.size());
  Vec mean(d, 0.0);
  Vec comp(d, 0.0);
  for (const auto& e : embeddings) {
    if (e.values.size() != d) throw DimensionMismatch("embedding dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) {
      double y = e.values[i] - comp[i];
      double t = mean[i] + y;
      comp[i] = (t - mean[i]) - y;
      mean[i] = t;
    }
  }
  for (std::size_t i = 0; i < d; ++i) mean[i] /= k;
  return l2_normalize(mean);
}

UnitEmbedding generate_prototype_qa(const std::vector<UnitEmbedding>& embeddings,
                                    const std::vector<QualityScore>& qualities) {
  check_nonempty(embeddings.size());
  check_qualities(qualities, embeddings.size());
  double total = sum(qualities);
  if (total <= kNormEps) {
    // a batch of all-zero qualities still yields the plain-mean prototype
    return generate_prototype_basic(embeddings);
  }
  const std::size_t d = embeddings[0].values.size();
  Vec acc(d, 0.0);
  Vec comp(d, 0.0);
  for (std::size_t j = 0; j < embeddings.size(); ++j) {
    const auto& e = embeddings[j];
    if (e.values.size() != d) throw DimensionMismatch("embedding dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) {
      double y = qualities[j] * e.values[i] - comp[i];
      double t = acc[i] + y;
      comp[i] = (t - acc[i]) - y;
      acc[i] = t;
    }
  }
  for (std::size_t i = 0; i < d; ++i) acc[i] /= total;
  return l2_normalize(acc);
}

std::vector<QualityScore> quality_feature_norm(const std::vector<RawEmbedding>& batch) {
  if (batch.empty()) throw InvalidSpec("quality_feature_norm: empty batch");
  std::vector<QualityScore> q(batch.size());
  double max_norm = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    q[j] = feature_norm(batch[j]);
    if (q[j] > max_norm) max_norm = q[j];
  }
  if (max_norm <= kNormEps)
    throw DegenerateVector("quality_feature_norm: all feature norms ~ 0");
  for (auto& v : q) v /= max_norm;
  return q;
}

std::vector<QualityScore> quality_recognizability(const std::vector<UnitEmbedding>& batch,
                                                  const UnitEmbedding& p_ui) {
  std::vector<QualityScore> q(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    double d_cos = cosine_distance(batch[j], p_ui);
    q[j] = d_cos * d_cos;
  }
  return q;
}

std::size_t hard_prototype_index(const std::vector<QualityScore>& qualities) {
  if (qualities.empty()) throw InvalidSpec("hard_prototype_index: empty qualities");
  std::size_t best = 0;
  for (std::size_t j = 1; j < qualities.size(); ++j)
    if (qualities[j] > qualities[best]) best = j;
  return best;
}

const UnitEmbedding& select_hard_prototype(const std::vector<UnitEmbedding>& embeddings,
                                           const std::vector<QualityScore>& qualities) {
  check_nonempty(embeddings.size());
  if (qualities.size() != embeddings.size())
    throw InvalidSpec("select_hard_prototype: length mismatch");
  return embeddings[hard_prototype_index(qualities)];
}

}  // namespace qpm
