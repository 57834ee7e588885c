#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qpm/errors.hpp"

namespace qpm {

using Vec = std::vector<double>;

// Encoder output before L2 normalization; its norm feeds the feature-norm
// quality estimator.
using RawEmbedding = Vec;

// Identity label.
using ClassId = std::int64_t;

inline constexpr double kNormEps = 1e-12;  // smallest norm we divide by
inline constexpr double kUnitTol = 1e-9;   // unit-norm bookkeeping tolerance

// L2-normalized vector. Producers (l2_normalize, prototype generation,
// refresh blending) guarantee ||values|| = 1 within kUnitTol. The field is
// left open so tests can perturb components directly.
struct UnitEmbedding {
  Vec values;
};

// Compensated (Kahan) dot product; the fixed accumulation order keeps results
// deterministic and stable to ~1e-16 relative error at d = 512.
double dot(std::span<const double> a, std::span<const double> b);

double sum(std::span<const double> x);

bool all_finite(std::span<const double> x);

// Euclidean norm of x (the pre-normalization feature norm).
double feature_norm(std::span<const double> x);
inline double feature_norm(const Vec& x) {
  return feature_norm(std::span<const double>(x));
}

// x / ||x||. Throws DegenerateVector if ||x|| <= kNormEps or x is non-finite.
UnitEmbedding l2_normalize(const Vec& x);

// Dot product clamped to [-1, 1] to absorb round-off before any arccos.
double cosine_similarity(const UnitEmbedding& a, const UnitEmbedding& b);

// 1 - cosine_similarity, in [0, 2].
double cosine_distance(const UnitEmbedding& a, const UnitEmbedding& b);

bool is_unit(const UnitEmbedding& e, double tol = kUnitTol);

}  // namespace qpm
