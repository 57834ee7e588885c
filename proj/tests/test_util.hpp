#pragma once

#include <cmath>
#include <vector>

#include "qpm/rng.hpp"
#include "qpm/vecmath.hpp"

namespace qpm::test {

inline UnitEmbedding random_unit(int dim, Rng& rng) {
  Vec v(dim);
  for (auto& x : v) x = rng.gaussian();
  return l2_normalize(v);
}

inline std::vector<UnitEmbedding> random_units(int count, int dim, Rng& rng) {
  std::vector<UnitEmbedding> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(random_unit(dim, rng));
  return out;
}

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline bool close_vec(const Vec& a, const Vec& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

inline bool bitwise_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// |a - b| within rel * max(|a|, |b|) with an absolute floor
inline bool grad_close(double analytic, double numeric, double rel, double abs_floor) {
  double err = std::abs(analytic - numeric);
  double scale = std::max(std::abs(analytic), std::abs(numeric));
  return err <= std::max(abs_floor, rel * scale);
}

}  // namespace qpm::test
