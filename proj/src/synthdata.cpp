#include "qpm/synthdata.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "qpm/io.hpp"

namespace qpm {

Vec IdentityWorld::observe(std::span<const double> latent) const {
  const int D = config.obs_dim;
  const int d = config.dim;
  if (static_cast<int>(latent.size()) != d)
    throw DimensionMismatch("observe: latent dimension mismatch");
  Vec obs(D, 0.0);
  for (int r = 0; r < D; ++r)
    obs[r] = dot(std::span<const double>(obs_map).subspan(
                     static_cast<std::size_t>(r) * d, d),
                 latent);
  return obs;
}

Vec IdentityWorld::center_observation(ClassId identity) const {
  if (identity < 0 || identity >= static_cast<ClassId>(centers.size()))
    throw UnknownIdentity("identity " + std::to_string(identity) + " out of range");
  return observe(centers[static_cast<std::size_t>(identity)].values);
}

namespace {

UnitEmbedding random_unit(int dim, Rng& rng) {
  Vec v(dim);
  for (auto& x : v) x = rng.gaussian();
  return l2_normalize(v);
}

// Orthonormal columns via modified Gram-Schmidt on random Gaussian columns.
Vec random_orthonormal_map(int obs_dim, int dim, Rng& rng) {
  std::vector<Vec> cols(dim, Vec(obs_dim));
  for (int c = 0; c < dim; ++c) {
    for (int r = 0; r < obs_dim; ++r) cols[c][r] = rng.gaussian();
    for (int prev = 0; prev < c; ++prev) {
      double proj = dot(cols[c], cols[prev]);
      for (int r = 0; r < obs_dim; ++r) cols[c][r] -= proj * cols[prev][r];
    }
    double n = feature_norm(cols[c]);
    if (n <= kNormEps) throw NumericError("degenerate observation map column");
    for (int r = 0; r < obs_dim; ++r) cols[c][r] /= n;
  }
  Vec flat(static_cast<std::size_t>(obs_dim) * dim);
  for (int r = 0; r < obs_dim; ++r)
    for (int c = 0; c < dim; ++c)
      flat[static_cast<std::size_t>(r) * dim + c] = cols[c][r];
  return flat;
}

}  // namespace

void validate_world_config(const WorldConfig& cfg) {
  if (cfg.num_identities < 2) throw InvalidConfig("world.identities must be >= 2");
  if (cfg.dim < 2) throw InvalidConfig("world.dim must be >= 2");
  if (cfg.obs_dim < cfg.dim) throw InvalidConfig("world.obs_dim must be >= world.dim");
  if (!(cfg.noise_kappa > 0.0)) throw InvalidConfig("world.noise_kappa must be positive");
  if (cfg.corruption_rate < 0.0 || cfg.corruption_rate > 1.0)
    throw InvalidConfig("world.corruption_rate must be in [0, 1]");
  if (cfg.strength_min < 0.0 || cfg.strength_min > 1.0)
    throw InvalidConfig("world.strength_min must be in [0, 1]");
  if (cfg.strength_max < cfg.strength_min || cfg.strength_max > 1.0)
    throw InvalidConfig("world.strength_max must be in [strength_min, 1]");
  if (cfg.obs_noise < 0.0) throw InvalidConfig("world.obs_noise must be >= 0");
}

IdentityWorld make_world(const WorldConfig& config) {
  validate_world_config(config);
  IdentityWorld world;
  world.config = config;
  Rng rng(derive_seed(config.seed, stream::kWorld));
  world.centers.reserve(config.num_identities);
  for (int i = 0; i < config.num_identities; ++i) {
    UnitEmbedding c = random_unit(config.dim, rng);
    // no duplicate directions; a repeat draw is astronomically unlikely but
    // the invariant is cheap to keep at desk scale
    bool duplicate = false;
    for (const auto& prev : world.centers)
      if (cosine_similarity(prev, c) >= 1.0 - 1e-12) { duplicate = true; break; }
    if (duplicate) { --i; continue; }
    world.centers.push_back(std::move(c));
  }
  world.unrecognizable_direction = random_unit(config.dim, rng);
  world.obs_map = random_orthonormal_map(config.obs_dim, config.dim, rng);
  return world;
}

Sample draw_sample(const IdentityWorld& world, ClassId identity, bool corrupt,
                   double strength, Rng& rng) {
  const auto& cfg = world.config;
  if (identity < 0 || identity >= static_cast<ClassId>(world.centers.size()))
    throw UnknownIdentity("identity " + std::to_string(identity) + " out of range");
  if (strength < 0.0 || strength > 1.0)
    throw InvalidConfig("corruption strength must be in [0, 1]");

  const int d = cfg.dim;
  const double t = corrupt ? strength : 0.0;
  // isotropic angular noise: per-component std 1/(kappa*sqrt(d)) puts the
  // expected total perturbation at ~1/kappa radians regardless of d
  const double noise_scale = 1.0 / (cfg.noise_kappa * std::sqrt(static_cast<double>(d)));

  const Vec& center = world.centers[static_cast<std::size_t>(identity)].values;
  const Vec& ui = world.unrecognizable_direction.values;
  Vec latent(d);
  for (int i = 0; i < d; ++i) {
    double center_part = center[i] + noise_scale * rng.gaussian();
    double ui_part = ui[i] + noise_scale * rng.gaussian();
    latent[i] = (1.0 - t) * center_part + t * ui_part;
  }
  UnitEmbedding unit_latent = l2_normalize(latent);

  Sample s;
  s.identity = identity;
  s.observation = world.observe(unit_latent.values);
  for (auto& x : s.observation) x += cfg.obs_noise * rng.gaussian();
  s.latent_quality = 1.0 - t;
  s.is_unrecognizable = corrupt && strength >= 1.0;
  return s;
}

Dataset make_dataset(const IdentityWorld& world, int images_per_identity, Rng& rng) {
  const auto& cfg = world.config;
  if (images_per_identity < 2)
    throw InvalidConfig("data.images_per_identity must be >= 2");
  Dataset ds;
  ds.dim = cfg.dim;
  ds.obs_dim = cfg.obs_dim;
  ds.num_identities = cfg.num_identities;
  ds.images_per_identity = images_per_identity;
  ds.seed = cfg.seed;
  ds.samples.reserve(static_cast<std::size_t>(cfg.num_identities) * images_per_identity);

  // deterministic per-identity quota instead of Bernoulli draws
  const int corrupted_per_identity = static_cast<int>(
      std::llround(cfg.corruption_rate * images_per_identity));
  for (int id = 0; id < cfg.num_identities; ++id) {
    for (int j = 0; j < images_per_identity; ++j) {
      bool corrupt = j < corrupted_per_identity;
      double strength = corrupt ? rng.uniform(cfg.strength_min, cfg.strength_max) : 0.0;
      ds.samples.push_back(draw_sample(world, id, corrupt, strength, rng));
    }
  }
  return ds;
}

std::vector<Sample> unrecognizable_pool(const IdentityWorld& world, int size, Rng& rng) {
  if (size < 1) throw InvalidConfig("unrecognizable pool size must be >= 1");
  std::vector<Sample> pool;
  pool.reserve(size);
  for (int i = 0; i < size; ++i) {
    ClassId id = static_cast<ClassId>(rng.below(world.centers.size()));
    pool.push_back(draw_sample(world, id, true, 1.0, rng));
  }
  return pool;
}

std::vector<std::vector<std::size_t>> Dataset::by_identity() const {
  std::vector<std::vector<std::size_t>> groups(num_identities);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ClassId id = samples[i].identity;
    if (id < 0 || id >= num_identities)
      throw UnknownIdentity("dataset sample with out-of-range identity");
    groups[static_cast<std::size_t>(id)].push_back(i);
  }
  return groups;
}

void save_dataset(const Dataset& ds, std::ostream& out) {
  out << "qpm-dataset 1 " << ds.dim << ' ' << ds.obs_dim << ' ' << ds.num_identities
      << ' ' << ds.samples.size() << ' ' << ds.seed << '\n';
  for (const auto& s : ds.samples) {
    out << s.identity << ' ' << (s.is_unrecognizable ? 1 : 0) << ' '
        << format_g17(s.latent_quality);
    for (double v : s.observation) out << ' ' << format_g17(v);
    out << '\n';
  }
  if (!out) throw IoError("dataset write failed");
}

Dataset load_dataset(std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t num_samples = 0;
  Dataset ds;
  if (!(in >> magic >> version >> ds.dim >> ds.obs_dim >> ds.num_identities >>
        num_samples >> ds.seed))
    throw IoError("dataset: malformed header");
  if (magic != "qpm-dataset" || version != 1)
    throw IoError("dataset: unrecognized format");
  if (ds.dim < 1 || ds.obs_dim < ds.dim || ds.num_identities < 1)
    throw IoError("dataset: invalid header values");
  ds.samples.resize(num_samples);
  for (auto& s : ds.samples) {
    int flag = 0;
    if (!(in >> s.identity >> flag >> s.latent_quality))
      throw IoError("dataset: truncated record");
    s.is_unrecognizable = flag != 0;
    s.observation.resize(ds.obs_dim);
    for (auto& v : s.observation)
      if (!(in >> v)) throw IoError("dataset: truncated record");
  }
  ds.images_per_identity =
      ds.num_identities > 0 ? static_cast<int>(num_samples) / ds.num_identities : 0;
  return ds;
}

}  // namespace qpm
