#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qpm/synthdata.hpp"
#include "qpm/trainer.hpp"

namespace qpm {

// Flat key = value run configuration. Every field has a default; unknown keys
// are rejected with the offending key named. Command-line overrides apply on
// top of the file (later wins).
struct RunConfig {
  std::uint64_t seed = 12345;

  // world.*
  int world_identities = 200;
  int world_dim = 32;
  int world_obs_dim = 64;
  double world_noise_kappa = 20.0;
  double world_corruption_rate = 0.2;
  double world_strength_min = 0.4;
  double world_strength_max = 0.9;
  double world_obs_noise = 0.01;

  // data.*
  int images_per_identity = 10;

  // train.*
  std::string estimator = "recog-soft";  // uniform|none|norm|recog-soft|recog-hard
  bool hard = false;                     // hard prototype selection combiner
  bool uniform_via_qa = false;
  std::string loss = "cosface";  // cosface|arcface|elasticface-cos+|elasticface-arc+
  std::optional<double> margin;  // default: per-loss paper value
  double scale = 64.0;
  std::optional<double> sigma;  // default: per-loss paper value
  int batch_classes = 16;
  int images_per_class = 4;
  std::uint64_t memory_capacity = 150;
  double refresh_ratio = 0.2;
  std::uint64_t ui_period = 100;
  int ui_pool = 32;
  std::uint64_t steps = 500;
  std::string lr_schedule = "0:0.05,250:0.02";
  bool grad_through_quality = false;
  bool trainable_prototypes = false;

  // eval.*
  int eval_num_pairs = 2000;
};

// Parse "key = value" lines ('#' comments, blank lines ignored). Throws
// InvalidConfig naming the offending key on unknown keys or bad values.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);  // IoError if unreadable

// Apply one "key=value" override.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// Validate cross-field constraints (ranges, forbidden estimator pairings).
// Throws InvalidConfig naming the offending key.
void validate(const RunConfig& config);

// Canonical echo: every key in fixed order with resolved values (margin/sigma
// defaults filled in). Re-parsing the echo reproduces the config. The output
// directory is never part of the config.
std::string render_config(const RunConfig& config);

// FNV-1a 64 hash of the canonical echo, as 16 hex digits.
std::string config_fingerprint(const RunConfig& config);

// True when the two configs render identically once the estimator selection
// (train.estimator + train.hard) is masked out.
bool same_except_estimator(const RunConfig& a, const RunConfig& b);

// Derived component configs. validate() is called first.
WorldConfig world_config(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);

// Resolved loss spec (per-loss margin/sigma defaults applied).
LossSpec loss_spec(const RunConfig& config);
// Resolved estimator (hard combiner folded in). Throws InvalidConfig on the
// forbidden norm+hard / uniform+hard pairings.
QualityEstimatorSpec estimator_spec(const RunConfig& config);

LrSchedule parse_lr_schedule(const std::string& text);  // "step:lr,step:lr,..."

}  // namespace qpm
