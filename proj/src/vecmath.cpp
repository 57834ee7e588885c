#include "qpm/vecmath.hpp"

#include <algorithm>
#include <cmath>

namespace qpm {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("dot: size mismatch " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double term = a[i] * b[i];
    double y = term - c;
    double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

double sum(std::span<const double> x) {
  double s = 0.0, c = 0.0;
  for (double v : x) {
    double y = v - c;
    double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

double feature_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

UnitEmbedding l2_normalize(const Vec& x) {
  if (!all_finite(x)) throw DegenerateVector("l2_normalize: non-finite input");
  double n = feature_norm(std::span<const double>(x));
  if (!std::isfinite(n)) throw DegenerateVector("l2_normalize: norm overflow");
  if (n <= kNormEps)
    throw DegenerateVector("l2_normalize: norm " + std::to_string(n) +
                           " below " + std::to_string(kNormEps));
  UnitEmbedding out;
  out.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x[i] / n;
  return out;
}

double cosine_similarity(const UnitEmbedding& a, const UnitEmbedding& b) {
  return std::clamp(dot(a.values, b.values), -1.0, 1.0);
}

double cosine_distance(const UnitEmbedding& a, const UnitEmbedding& b) {
  return 1.0 - cosine_similarity(a, b);
}

bool is_unit(const UnitEmbedding& e, double tol) {
  return std::abs(feature_norm(std::span<const double>(e.values)) - 1.0) <= tol;
}

}  // namespace qpm
