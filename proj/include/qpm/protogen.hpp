#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qpm/vecmath.hpp"

namespace qpm {

// Exemplar quality value q_j, >= 0. Only ratios matter: the weighted mean is
// scale-invariant in the qualities.
using QualityScore = double;

enum class EstimatorKind {
  FeatureNorm,      // q_j = ||x_j|| / max batch norm
  RecogSoft,        // q_j = (cosine distance to p_UI)^2
  RecogHard,        // single embedding with the largest recognizability score
  UniformBaseline,  // all ones: plain prototype-memory behavior
};

struct QualityEstimatorSpec {
  EstimatorKind kind = EstimatorKind::UniformBaseline;
};

const char* estimator_name(EstimatorKind kind);
EstimatorKind estimator_from_name(const std::string& name);  // throws InvalidConfig

// Unit-normalized mean of the exemplar embeddings (the basic new-prototype
// rule). Throws DegenerateVector when the embeddings cancel.
UnitEmbedding generate_prototype_basic(const std::vector<UnitEmbedding>& embeddings);

// Unit-normalized quality-weighted mean. Falls back to the unweighted mean
// when the quality mass is below kNormEps (a batch of all-zero qualities
// should still produce a usable prototype).
UnitEmbedding generate_prototype_qa(const std::vector<UnitEmbedding>& embeddings,
                                    const std::vector<QualityScore>& qualities);

// q_j = ||x_j|| / max_i ||x_i|| over the whole mini-batch. At least one
// output is exactly 1. Throws DegenerateVector when every norm is ~zero.
std::vector<QualityScore> quality_feature_norm(const std::vector<RawEmbedding>& batch);

// q_j = (1 - cos(x_j, p_ui))^2, in [0, 4]. Not rescaled: the weighted mean
// is quality-scale-invariant.
std::vector<QualityScore> quality_recognizability(const std::vector<UnitEmbedding>& batch,
                                                  const UnitEmbedding& p_ui);

// Index of the largest quality; ties resolve to the lowest index.
std::size_t hard_prototype_index(const std::vector<QualityScore>& qualities);

// The embedding with the largest recognizability score, used verbatim as the
// new prototype ("hard" variant).
const UnitEmbedding& select_hard_prototype(const std::vector<UnitEmbedding>& embeddings,
                                           const std::vector<QualityScore>& qualities);

}  // namespace qpm
