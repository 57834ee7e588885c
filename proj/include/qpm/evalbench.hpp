#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qpm/config.hpp"
#include "qpm/memory.hpp"
#include "qpm/synthdata.hpp"
#include "qpm/trainer.hpp"

namespace qpm {

struct VerificationResult {
  double accuracy = 0.0;        // at the best single global threshold
  double best_threshold = 0.0;
  std::map<std::string, double> tar_at_far;  // keys "1e-2", "1e-3"
};

// Best single-threshold accuracy of labeled scores under the rule
// "genuine iff score >= t"; lowest threshold wins ties. Returns
// (accuracy, threshold).
std::pair<double, double> best_threshold_accuracy(std::vector<double> genuine,
                                                  std::vector<double> impostor);

// TAR at the given FAR via linear interpolation of the stepwise ROC.
double tar_at_far_from_scores(std::vector<double> genuine,
                              std::vector<double> impostor, double far);

// Builds num_pairs genuine and num_pairs impostor pairs from the samples,
// scores them with the cosine of the normalized encodings, sweeps a single
// global threshold for accuracy, and interpolates TAR at the fixed FAR
// levels. Throws InvalidConfig when the samples cannot supply pairs.
VerificationResult verification_eval(const Encoder& encoder,
                                     const std::vector<Sample>& samples,
                                     int num_pairs, Rng& rng);

struct IdentificationResult {
  double top1 = 0.0;
  std::vector<std::size_t> assignment;  // gallery index per probe
};

// Nearest-gallery-by-cosine identification. Every probe identity must be
// present in the gallery.
IdentificationResult identification_eval(const Encoder& encoder,
                                         const std::vector<Sample>& gallery,
                                         const std::vector<Sample>& probes);

// Mean angle in degrees between each stored prototype and the normalized
// encoding of its class's noiseless center observation.
double prototype_placement_error(const PrototypeMemory& memory,
                                 const IdentityWorld& world, const Encoder& encoder);

// ROC AUC of the predicted qualities separating corrupted (latent quality
// < 1) from clean samples; Mann-Whitney rank statistic, ties count 0.5.
// Throws DegenerateLabels when either class is absent.
double estimator_auc(const std::vector<double>& qualities,
                     const std::vector<double>& latent_qualities);

struct EvalReport {
  double verification_accuracy = 0.0;
  std::map<std::string, double> tar_at_far;
  double identification_top1 = 0.0;
  double mean_prototype_angle_deg = 0.0;
  double estimator_auc = 0.0;  // NaN when labels are degenerate
  std::string config_fingerprint;
  std::vector<std::uint64_t> seeds;
};

// Full evaluation of one trained pipeline on the given samples: verification,
// identification (gallery = first clean sample per identity), prototype
// placement, and the configured estimator's AUC against the latent labels.
EvalReport evaluate_pipeline(const RunConfig& config, const Encoder& encoder,
                             const PrototypeMemory& memory, const IdentityWorld& world,
                             const std::vector<Sample>& eval_samples);

std::string eval_report_json(const EvalReport& report);

struct AbSeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, double> base;
  std::map<std::string, double> variant;
};

struct MetricSummary {
  double mean_base = 0.0;
  double mean_variant = 0.0;
  double mean_delta = 0.0;
  int wins = 0;    // variant strictly better (direction-aware)
  int ties = 0;
  int losses = 0;
  bool higher_is_better = true;
};

struct AbReport {
  std::vector<std::string> metrics;
  std::vector<AbSeedResult> rows;
  std::map<std::string, MetricSummary> summary;
};

// Paired comparison: both configs run over the shared seed list
// config.seed + i, each seed with its own world, training set, and held-out
// evaluation set. Configs must differ only in the estimator selection.
AbReport ab_compare(const RunConfig& base, const RunConfig& variant, int num_seeds);

std::string ab_report_csv(const AbReport& report);   // seed,metric,base,variant,delta
std::string ab_report_json(const AbReport& report);  // summary document

}  // namespace qpm
