#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "qpm/rng.hpp"
#include "qpm/vecmath.hpp"

namespace qpm {

struct WorldConfig {
  int num_identities = 200;
  int dim = 32;      // latent/embedding dimension d
  int obs_dim = 64;  // observation dimension D (>= dim)
  double noise_kappa = 20.0;
  double corruption_rate = 0.2;
  double strength_min = 0.4;
  double strength_max = 0.9;
  double obs_noise = 0.01;
  std::uint64_t seed = 12345;
};

// Synthetic ground truth: unit class centers, one shared "unrecognizable"
// direction that corrupted samples blend toward, and a fixed orthonormal
// observation map from latent to observation space.
struct IdentityWorld {
  WorldConfig config;
  std::vector<UnitEmbedding> centers;
  UnitEmbedding unrecognizable_direction;
  Vec obs_map;  // obs_dim x dim, row-major, orthonormal columns

  // obs_map * latent, no noise.
  Vec observe(std::span<const double> latent) const;
  // Noiseless observation of a class center.
  Vec center_observation(ClassId identity) const;  // throws UnknownIdentity
};

struct Sample {
  ClassId identity;
  Vec observation;       // length obs_dim
  double latent_quality;  // 1 - corruption strength; 1 = clean
  bool is_unrecognizable;
};

struct Dataset {
  int dim = 0;
  int obs_dim = 0;
  int num_identities = 0;
  int images_per_identity = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  // Sample indices grouped by identity, in file order.
  std::vector<std::vector<std::size_t>> by_identity() const;
};

// Range checks with the offending key named in the message.
void validate_world_config(const WorldConfig& config);  // throws InvalidConfig

// Deterministic given config.seed. Throws InvalidConfig on bad sizes.
IdentityWorld make_world(const WorldConfig& config);

// One sample of `identity`, corrupted toward the unrecognizable direction
// with the given strength when corrupt is set. latent_quality = 1 - strength
// exactly for corrupted samples, 1 otherwise.
Sample draw_sample(const IdentityWorld& world, ClassId identity, bool corrupt,
                   double strength, Rng& rng);

// images_per_identity samples per identity; round(rate * k) of them corrupted
// at strengths uniform in [strength_min, strength_max] (deterministic
// per-identity quota, not Bernoulli).
Dataset make_dataset(const IdentityWorld& world, int images_per_identity, Rng& rng);

// Strength-1 samples flagged is_unrecognizable; feeds the p_UI refresh.
std::vector<Sample> unrecognizable_pool(const IdentityWorld& world, int size, Rng& rng);

// Text format: header line "qpm-dataset <version> <d> <D> <identities>
// <samples> <seed>", then one record per line: identity, unrecognizable flag,
// latent quality, D observation values. 17 significant digits everywhere for
// exact round-trip.
void save_dataset(const Dataset& dataset, std::ostream& out);
Dataset load_dataset(std::istream& in);  // throws IoError on malformed input

}  // namespace qpm
