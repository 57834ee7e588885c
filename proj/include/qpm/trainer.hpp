#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "qpm/losses.hpp"
#include "qpm/memory.hpp"
#include "qpm/protogen.hpp"
#include "qpm/rng.hpp"
#include "qpm/synthdata.hpp"

namespace qpm {

// Linear stand-in encoder: x = W * obs + b, no normalization (the raw norms
// feed the feature-norm quality estimator).
struct Encoder {
  int dim = 0;
  int obs_dim = 0;
  Vec weights;  // dim x obs_dim, row-major
  Vec bias;     // dim
};

Encoder make_encoder(int dim, int obs_dim, Rng& rng);
RawEmbedding encode_one(const Encoder& enc, std::span<const double> observation);
std::vector<RawEmbedding> encode(const Encoder& enc, const std::vector<Vec>& observations);

// Versioned binary: magic "QPMENC01", dim u64, obs_dim u64, weights row-major
// f64, bias f64, little-endian.
void save_encoder(const Encoder& enc, std::ostream& out);
Encoder load_encoder(std::istream& in);

// Piecewise-constant schedule; the lr at step t is the last entry with
// step <= t. Entries must start at step 0 and be strictly ascending.
struct LrSchedule {
  std::vector<std::pair<std::uint64_t, double>> entries{{0, 0.1}};
  double at(std::uint64_t step) const;
  void validate() const;  // throws InvalidConfig
};

struct TrainConfig {
  QualityEstimatorSpec estimator;
  // Route uniform qualities through the weighted-mean path instead of the
  // plain-mean path. The two are bit-identical; the flag exists so the
  // reduction can be checked across distinct code paths.
  bool uniform_via_qa = false;
  LossSpec loss;
  int batch_classes = 16;
  int images_per_class = 4;  // k
  std::size_t memory_capacity = 150;
  double refresh_ratio = 0.2;
  std::uint64_t ui_period = 100;
  int ui_pool_size = 32;
  LrSchedule lr_schedule;
  std::uint64_t total_steps = 500;
  std::uint64_t seed = 12345;
  // Ablations (default off): differentiate through the quality values, and
  // apply gradient updates to the classifier prototypes.
  bool grad_through_quality = false;
  bool trainable_prototypes = false;
};

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double mean_target_cos = 0.0;
  double lr = 0.0;
  std::size_t memory_size = 0;
  bool ui_refreshed = false;
};

struct Batch {
  std::vector<ClassId> class_ids;                        // batch_classes entries
  std::vector<std::vector<std::size_t>> sample_indices;  // k dataset indices per class
};

// Group-based iterate-and-shuffle: identities are visited in shuffled epochs
// without replacement; each visit draws k images from a per-identity shuffled
// ring. Batches always contain batch_classes distinct identities.
class BatchSampler {
 public:
  BatchSampler(const Dataset& dataset, int batch_classes, int images_per_class,
               std::uint64_t seed);
  Batch next();

 private:
  const Dataset* dataset_;
  int batch_classes_;
  int images_per_class_;
  Rng rng_;
  std::vector<ClassId> identity_order_;
  std::size_t identity_cursor_;
  struct Ring {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  std::vector<Ring> rings_;  // indexed by identity
};

// One forward/backward evaluation of the training objective at the given
// encoder and pre-step memory state. Pure: mutates nothing; the actual step
// applies the returned artifacts. Elastic margins consume loss_rng.
struct StepEval {
  double loss = 0.0;
  Vec grad_weights;  // d(mean loss)/dW, dim x obs_dim
  Vec grad_bias;
  std::vector<UnitEmbedding> protos_new;   // Eq-style new prototype per batch class
  std::vector<UnitEmbedding> protos_used;  // post-blend classifier weight per batch class
  std::vector<std::pair<ClassId, UnitEmbedding>> weights;  // full classifier weight list
  std::vector<Vec> grad_prototypes;                        // per weights entry
  double mean_target_cos = 0.0;
};

StepEval evaluate_step(const TrainConfig& config, const Encoder& encoder,
                       const PrototypeMemory& memory, const Dataset& dataset,
                       const Batch& batch, Rng& loss_rng);

// Loss of a fixed classifier-weight set at the current encoder, with exact
// gradients through normalization and the affine map. This is the
// stop-gradient view the trainer optimizes (prototypes held constant).
struct FixedWeightsEval {
  double loss = 0.0;
  Vec grad_weights;
  Vec grad_bias;
};

FixedWeightsEval evaluate_fixed_weights(
    const LossSpec& spec, const Encoder& encoder, const std::vector<Vec>& observations,
    const std::vector<ClassId>& labels,
    const std::vector<std::pair<ClassId, UnitEmbedding>>& prototypes, Rng& rng);

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Dataset& dataset, const IdentityWorld& world);

  StepRecord step();  // throws NumericError on non-finite loss
  void run();         // total_steps steps

  const Encoder& encoder() const { return encoder_; }
  const PrototypeMemory& memory() const { return memory_; }
  PrototypeMemory& memory() { return memory_; }
  const std::vector<StepRecord>& log() const { return log_; }
  std::uint64_t current_step() const { return memory_.step_counter(); }

 private:
  TrainConfig config_;
  const Dataset* dataset_;
  const IdentityWorld* world_;
  Encoder encoder_;
  PrototypeMemory memory_;
  BatchSampler sampler_;
  Rng loss_rng_;
  Rng ui_rng_;
  std::vector<StepRecord> log_;

  void refresh_ui(bool& acted_out);
};

struct TrainResult {
  Encoder encoder;
  PrototypeMemory memory;
  std::vector<StepRecord> log;
};

TrainResult run_training(const TrainConfig& config, const Dataset& dataset,
                         const IdentityWorld& world);

}  // namespace qpm
