#include "qpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "qpm/io.hpp"

namespace qpm {

namespace {
constexpr char kEncoderMagic[8] = {'Q', 'P', 'M', 'E', 'N', 'C', '0', '1'};
}

Encoder make_encoder(int dim, int obs_dim, Rng& rng) {
  if (dim < 1 || obs_dim < 1) throw InvalidConfig("encoder dimensions must be positive");
  Encoder enc;
  enc.dim = dim;
  enc.obs_dim = obs_dim;
  enc.weights.resize(static_cast<std::size_t>(dim) * obs_dim);
  enc.bias.assign(dim, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(obs_dim));
  for (auto& w : enc.weights) w = scale * rng.gaussian();
  return enc;
}

RawEmbedding encode_one(const Encoder& enc, std::span<const double> observation) {
  if (static_cast<int>(observation.size()) != enc.obs_dim)
    throw DimensionMismatch("encode: observation length " +
                            std::to_string(observation.size()) + " expected " +
                            std::to_string(enc.obs_dim));
  RawEmbedding x(enc.dim);
  for (int r = 0; r < enc.dim; ++r) {
    std::span<const double> row(enc.weights.data() +
                                    static_cast<std::size_t>(r) * enc.obs_dim,
                                static_cast<std::size_t>(enc.obs_dim));
    x[r] = dot(row, observation) + enc.bias[r];
  }
  return x;
}

std::vector<RawEmbedding> encode(const Encoder& enc, const std::vector<Vec>& observations) {
  std::vector<RawEmbedding> out;
  out.reserve(observations.size());
  for (const auto& obs : observations) out.push_back(encode_one(enc, obs));
  return out;
}

void save_encoder(const Encoder& enc, std::ostream& out) {
  out.write(kEncoderMagic, sizeof(kEncoderMagic));
  if (!out) throw IoError("encoder write failed");
  write_u64(out, static_cast<std::uint64_t>(enc.dim));
  write_u64(out, static_cast<std::uint64_t>(enc.obs_dim));
  write_f64_span(out, enc.weights);
  write_f64_span(out, enc.bias);
}

Encoder load_encoder(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kEncoderMagic, sizeof(magic)) != 0)
    throw IoError("not an encoder checkpoint");
  Encoder enc;
  enc.dim = static_cast<int>(read_u64(in));
  enc.obs_dim = static_cast<int>(read_u64(in));
  if (enc.dim < 1 || enc.obs_dim < 1) throw IoError("encoder checkpoint: bad dimensions");
  enc.weights = read_f64_vec(in, static_cast<std::size_t>(enc.dim) * enc.obs_dim);
  enc.bias = read_f64_vec(in, static_cast<std::size_t>(enc.dim));
  return enc;
}

double LrSchedule::at(std::uint64_t step) const {
  validate();
  double lr = entries.front().second;
  for (const auto& [s, v] : entries) {
    if (s > step) break;
    lr = v;
  }
  return lr;
}

void LrSchedule::validate() const {
  if (entries.empty()) throw InvalidConfig("train.lr_schedule: empty schedule");
  if (entries.front().first != 0)
    throw InvalidConfig("train.lr_schedule: first entry must be at step 0");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].second < 0.0)
      throw InvalidConfig("train.lr_schedule: negative learning rate");
    if (i > 0 && entries[i].first <= entries[i - 1].first)
      throw InvalidConfig("train.lr_schedule: steps must be strictly ascending");
  }
}

BatchSampler::BatchSampler(const Dataset& dataset, int batch_classes,
                           int images_per_class, std::uint64_t seed)
    : dataset_(&dataset),
      batch_classes_(batch_classes),
      images_per_class_(images_per_class),
      rng_(seed) {
  if (batch_classes_ < 1) throw InvalidConfig("train.batch_classes must be >= 1");
  if (images_per_class_ < 1) throw InvalidConfig("train.images_per_class must be >= 1");
  auto groups = dataset.by_identity();
  rings_.resize(groups.size());
  for (std::size_t id = 0; id < groups.size(); ++id) {
    if (static_cast<int>(groups[id].size()) < images_per_class_) continue;
    rings_[id].order = groups[id];
    rings_[id].cursor = rings_[id].order.size();  // forces a shuffle first
    identity_order_.push_back(static_cast<ClassId>(id));
  }
  if (static_cast<int>(identity_order_.size()) < batch_classes_)
    throw InvalidConfig("dataset too small: " + std::to_string(identity_order_.size()) +
                        " identities with >= " + std::to_string(images_per_class_) +
                        " images, need " + std::to_string(batch_classes_));
  identity_cursor_ = identity_order_.size();  // forces a shuffle first
}

Batch BatchSampler::next() {
  Batch batch;
  batch.class_ids.reserve(batch_classes_);
  batch.sample_indices.reserve(batch_classes_);

  // identities: shuffled epochs without replacement; a batch straddling an
  // epoch boundary pulls the next non-member forward to keep ids distinct
  for (int c = 0; c < batch_classes_; ++c) {
    if (identity_cursor_ >= identity_order_.size()) {
      rng_.shuffle(identity_order_);
      identity_cursor_ = 0;
    }
    ClassId candidate = identity_order_[identity_cursor_];
    if (std::find(batch.class_ids.begin(), batch.class_ids.end(), candidate) !=
        batch.class_ids.end()) {
      std::size_t j = identity_cursor_ + 1;
      while (std::find(batch.class_ids.begin(), batch.class_ids.end(),
                       identity_order_[j]) != batch.class_ids.end())
        ++j;
      std::swap(identity_order_[identity_cursor_], identity_order_[j]);
      candidate = identity_order_[identity_cursor_];
    }
    ++identity_cursor_;
    batch.class_ids.push_back(candidate);

    // k images from this identity's ring, same straddle handling
    Ring& ring = rings_[static_cast<std::size_t>(candidate)];
    std::vector<std::size_t> picks;
    picks.reserve(images_per_class_);
    for (int t = 0; t < images_per_class_; ++t) {
      if (ring.cursor >= ring.order.size()) {
        rng_.shuffle(ring.order);
        ring.cursor = 0;
      }
      std::size_t idx = ring.order[ring.cursor];
      if (std::find(picks.begin(), picks.end(), idx) != picks.end()) {
        std::size_t j = ring.cursor + 1;
        while (std::find(picks.begin(), picks.end(), ring.order[j]) != picks.end()) ++j;
        std::swap(ring.order[ring.cursor], ring.order[j]);
        idx = ring.order[ring.cursor];
      }
      ++ring.cursor;
      picks.push_back(idx);
    }
    batch.sample_indices.push_back(std::move(picks));
  }
  return batch;
}

namespace {

// Jacobian-transpose of x -> x/||x|| applied to g, plus an optional radial
// component d(loss)/d||x|| * x_hat.
Vec raw_grad_from_unit_grad(const UnitEmbedding& unit, double norm, const Vec& g_unit,
                            double g_norm) {
  const std::size_t d = unit.values.size();
  double radial = dot(unit.values, g_unit);
  Vec g(d);
  for (std::size_t i = 0; i < d; ++i)
    g[i] = (g_unit[i] - radial * unit.values[i]) / norm + g_norm * unit.values[i];
  return g;
}

void accumulate_encoder_grads(const Encoder& enc, const std::vector<Vec>& observations,
                              const std::vector<Vec>& raw_grads, Vec& grad_weights,
                              Vec& grad_bias) {
  grad_weights.assign(enc.weights.size(), 0.0);
  grad_bias.assign(enc.bias.size(), 0.0);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Vec& obs = observations[i];
    const Vec& g = raw_grads[i];
    for (int r = 0; r < enc.dim; ++r) {
      double gr = g[static_cast<std::size_t>(r)];
      if (gr == 0.0) continue;
      double* wrow = grad_weights.data() + static_cast<std::size_t>(r) * enc.obs_dim;
      for (int c = 0; c < enc.obs_dim; ++c) wrow[c] += gr * obs[static_cast<std::size_t>(c)];
      grad_bias[static_cast<std::size_t>(r)] += gr;
    }
  }
}

}  // namespace

StepEval evaluate_step(const TrainConfig& config, const Encoder& encoder,
                       const PrototypeMemory& memory, const Dataset& dataset,
                       const Batch& batch, Rng& loss_rng) {
  const int k = config.images_per_class;
  const std::size_t num_classes = batch.class_ids.size();
  const std::size_t n = num_classes * static_cast<std::size_t>(k);

  std::vector<Vec> observations;
  std::vector<ClassId> labels;
  observations.reserve(n);
  labels.reserve(n);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (batch.sample_indices[c].size() != static_cast<std::size_t>(k))
      throw InvalidSpec("batch group size mismatch");
    for (std::size_t idx : batch.sample_indices[c]) {
      observations.push_back(dataset.samples[idx].observation);
      labels.push_back(batch.class_ids[c]);
    }
  }

  std::vector<RawEmbedding> raw = encode(encoder, observations);
  std::vector<double> norms(n);
  std::vector<UnitEmbedding> units;
  units.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = feature_norm(raw[i]);
    units.push_back(l2_normalize(raw[i]));
  }

  const EstimatorKind kind = config.estimator.kind;
  std::vector<double> qualities;
  std::size_t max_norm_index = 0;
  switch (kind) {
    case EstimatorKind::UniformBaseline:
      qualities.assign(n, 1.0);
      break;
    case EstimatorKind::FeatureNorm: {
      qualities = quality_feature_norm(raw);
      for (std::size_t i = 1; i < n; ++i)
        if (norms[i] > norms[max_norm_index]) max_norm_index = i;
      break;
    }
    case EstimatorKind::RecogSoft:
    case EstimatorKind::RecogHard: {
      if (!memory.ui_prototype())
        throw InvalidSpec("recognizability estimator requires an available p_UI");
      qualities = quality_recognizability(units, *memory.ui_prototype());
      break;
    }
  }

  StepEval ev;
  ev.protos_new.reserve(num_classes);
  ev.protos_used.reserve(num_classes);
  const double r = memory.refresh_ratio();

  struct GroupInfo {
    std::size_t first = 0;              // first flat sample index of the group
    double quality_mass = 0.0;          // sum of qualities (soft paths)
    Vec pre_mean;                       // pre-normalization weighted mean
    bool weighted = false;              // generated through the weighted path
    bool fell_back = false;             // zero quality mass fallback to plain mean
    std::size_t hard_index = 0;         // selected sample (hard path)
    bool hard = false;
    std::optional<UnitEmbedding> old_proto;  // pre-step memory content
    Vec blend_pre;                      // (1-r)*old + r*new, when refreshed
  };
  std::vector<GroupInfo> groups(num_classes);

  for (std::size_t c = 0; c < num_classes; ++c) {
    GroupInfo& info = groups[c];
    info.first = c * static_cast<std::size_t>(k);
    std::vector<UnitEmbedding> group_units(units.begin() + info.first,
                                           units.begin() + info.first + k);
    std::vector<double> group_q(qualities.begin() + info.first,
                                qualities.begin() + info.first + k);

    UnitEmbedding proto{Vec{}};
    if (kind == EstimatorKind::RecogHard) {
      info.hard = true;
      info.hard_index = info.first + hard_prototype_index(group_q);
      proto = units[info.hard_index];
    } else if (kind == EstimatorKind::UniformBaseline && !config.uniform_via_qa) {
      proto = generate_prototype_basic(group_units);
      info.quality_mass = static_cast<double>(k);
      info.pre_mean.assign(group_units[0].values.size(), 0.0);
      for (const auto& u : group_units)
        for (std::size_t t = 0; t < info.pre_mean.size(); ++t)
          info.pre_mean[t] += u.values[t] / info.quality_mass;
      info.weighted = true;  // uniform weights 1/k
      info.fell_back = true;  // qualities are constants on this path
    } else {
      info.quality_mass = sum(group_q);
      info.fell_back = info.quality_mass <= kNormEps;
      proto = generate_prototype_qa(group_units, group_q);
      info.weighted = true;
      const double mass = info.fell_back ? static_cast<double>(k) : info.quality_mass;
      info.pre_mean.assign(group_units[0].values.size(), 0.0);
      for (int j = 0; j < k; ++j) {
        double w = info.fell_back ? 1.0 : group_q[static_cast<std::size_t>(j)];
        for (std::size_t t = 0; t < info.pre_mean.size(); ++t)
          info.pre_mean[t] += w * group_units[static_cast<std::size_t>(j)].values[t] / mass;
      }
      if (info.fell_back) info.quality_mass = static_cast<double>(k);
    }
    ev.protos_new.push_back(proto);

    auto found = memory.lookup({batch.class_ids[c]})[0];
    if (found) {
      info.old_proto = *found;
      info.blend_pre.resize(found->values.size());
      for (std::size_t t = 0; t < info.blend_pre.size(); ++t)
        info.blend_pre[t] = (1.0 - r) * found->values[t] + r * proto.values[t];
      ev.protos_used.push_back(refresh_blend(*found, proto, r));
    } else {
      ev.protos_used.push_back(proto);
    }
  }

  std::unordered_set<ClassId> batch_set(batch.class_ids.begin(), batch.class_ids.end());
  ev.weights.reserve(num_classes + memory.size());
  for (std::size_t c = 0; c < num_classes; ++c)
    ev.weights.emplace_back(batch.class_ids[c], ev.protos_used[c]);
  for (auto& neg : memory.negatives_snapshot(batch_set)) ev.weights.push_back(std::move(neg));

  LossOutput loss_out = loss_and_grad(config.loss, units, labels, ev.weights, loss_rng);
  ev.loss = loss_out.loss;
  ev.grad_prototypes = loss_out.grad_prototypes;
  ev.mean_target_cos = sum(loss_out.target_cos) / static_cast<double>(n);

  std::vector<Vec> unit_grads = std::move(loss_out.grad_embeddings);
  std::vector<double> norm_grads(n, 0.0);

  if (config.grad_through_quality) {
    // ablation: differentiate the step-t prototype construction too --
    // loss -> blended prototype -> weighted mean -> qualities
    const std::size_t d = units[0].values.size();
    std::vector<double> dq(n, 0.0);
    const UnitEmbedding* p_ui = memory.ui_prototype() ? &*memory.ui_prototype() : nullptr;

    for (std::size_t c = 0; c < num_classes; ++c) {
      const GroupInfo& info = groups[c];
      const Vec& g_used = ev.grad_prototypes[c];

      Vec g_new(d, 0.0);
      if (!info.old_proto) {
        g_new = g_used;
      } else if (r == 0.0) {
        continue;  // p_used is the old prototype; nothing flows to this step
      } else if (r == 1.0) {
        g_new = g_used;
      } else {
        double bnorm = feature_norm(info.blend_pre);
        Vec g_blend = raw_grad_from_unit_grad(ev.protos_used[c], bnorm, g_used, 0.0);
        for (std::size_t t = 0; t < d; ++t) g_new[t] = r * g_blend[t];
      }

      if (info.hard) {
        for (std::size_t t = 0; t < d; ++t) unit_grads[info.hard_index][t] += g_new[t];
        continue;
      }

      double mean_norm = feature_norm(info.pre_mean);
      Vec g_mean = raw_grad_from_unit_grad(ev.protos_new[c], mean_norm, g_new, 0.0);
      for (int j = 0; j < k; ++j) {
        std::size_t flat = info.first + static_cast<std::size_t>(j);
        double w = info.fell_back ? 1.0 : qualities[flat];
        for (std::size_t t = 0; t < d; ++t)
          unit_grads[flat][t] += (w / info.quality_mass) * g_mean[t];
        if (!info.fell_back) {
          // d(mean)/d(q_j) = (x_j - mean) / sum(q)
          double acc = 0.0;
          for (std::size_t t = 0; t < d; ++t)
            acc += (units[flat].values[t] - info.pre_mean[t]) * g_mean[t];
          dq[flat] = acc / info.quality_mass;
        }
      }
    }

    if (kind == EstimatorKind::FeatureNorm) {
      // q_j = n_j / M couples the whole batch through the max norm M
      const double max_norm = norms[max_norm_index];
      double coupling = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        norm_grads[i] += dq[i] / max_norm;
        coupling += dq[i] * norms[i];
      }
      norm_grads[max_norm_index] -= coupling / (max_norm * max_norm);
    } else if (kind == EstimatorKind::RecogSoft && p_ui) {
      for (std::size_t i = 0; i < n; ++i) {
        if (dq[i] == 0.0) continue;
        double dist = cosine_distance(units[i], *p_ui);
        double factor = dq[i] * (-2.0) * dist;  // dq/dcos = -2 (1 - cos)
        for (std::size_t t = 0; t < units[i].values.size(); ++t)
          unit_grads[i][t] += factor * p_ui->values[t];
      }
    }
  }

  std::vector<Vec> raw_grads(n);
  for (std::size_t i = 0; i < n; ++i)
    raw_grads[i] = raw_grad_from_unit_grad(units[i], norms[i], unit_grads[i], norm_grads[i]);
  accumulate_encoder_grads(encoder, observations, raw_grads, ev.grad_weights, ev.grad_bias);
  return ev;
}

FixedWeightsEval evaluate_fixed_weights(
    const LossSpec& spec, const Encoder& encoder, const std::vector<Vec>& observations,
    const std::vector<ClassId>& labels,
    const std::vector<std::pair<ClassId, UnitEmbedding>>& prototypes, Rng& rng) {
  std::vector<RawEmbedding> raw = encode(encoder, observations);
  const std::size_t n = raw.size();
  std::vector<double> norms(n);
  std::vector<UnitEmbedding> units;
  units.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = feature_norm(raw[i]);
    units.push_back(l2_normalize(raw[i]));
  }
  LossOutput out = loss_and_grad(spec, units, labels, prototypes, rng);
  std::vector<Vec> raw_grads(n);
  for (std::size_t i = 0; i < n; ++i)
    raw_grads[i] = raw_grad_from_unit_grad(units[i], norms[i], out.grad_embeddings[i], 0.0);
  FixedWeightsEval ev;
  ev.loss = out.loss;
  accumulate_encoder_grads(encoder, observations, raw_grads, ev.grad_weights, ev.grad_bias);
  return ev;
}

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset, const IdentityWorld& world)
    : config_(config),
      dataset_(&dataset),
      world_(&world),
      encoder_(),
      memory_(config.memory_capacity, config.refresh_ratio, config.ui_period,
              static_cast<std::size_t>(dataset.dim)),
      sampler_(dataset, config.batch_classes, config.images_per_class,
               derive_seed(config.seed, stream::kSampler)),
      loss_rng_(derive_seed(config.seed, stream::kLoss)),
      ui_rng_(derive_seed(config.seed, stream::kUiPool)) {
  config_.lr_schedule.validate();
  if (config_.ui_pool_size < 1) throw InvalidConfig("train.ui_pool must be >= 1");
  if (dataset.dim != world.config.dim || dataset.obs_dim != world.config.obs_dim)
    throw InvalidConfig("dataset dimensions do not match the world");
  Rng enc_rng(derive_seed(config.seed, stream::kEncoderInit));
  encoder_ = make_encoder(dataset.dim, dataset.obs_dim, enc_rng);
  // p_UI must exist before the first step's quality estimation
  bool acted = false;
  refresh_ui(acted);
}

void Trainer::refresh_ui(bool& acted_out) {
  acted_out = memory_.ui_refresh_due();
  auto pool = unrecognizable_pool(*world_, config_.ui_pool_size, ui_rng_);
  std::vector<Vec> obs;
  obs.reserve(pool.size());
  for (auto& s : pool) obs.push_back(std::move(s.observation));
  std::vector<RawEmbedding> raw = encode(encoder_, obs);
  std::vector<UnitEmbedding> units;
  units.reserve(raw.size());
  for (const auto& x : raw) units.push_back(l2_normalize(x));
  memory_.maybe_refresh_ui(units);
}

StepRecord Trainer::step() {
  const std::uint64_t step_index = memory_.step_counter();
  Batch batch = sampler_.next();
  StepEval ev;
  try {
    ev = evaluate_step(config_, encoder_, memory_, *dataset_, batch, loss_rng_);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_index) + ": " + e.what());
  } catch (const DegenerateVector& e) {
    throw NumericError("step " + std::to_string(step_index) + ": " + e.what());
  }
  if (!std::isfinite(ev.loss))
    throw NumericError("step " + std::to_string(step_index) + ": non-finite loss");

  for (std::size_t c = 0; c < batch.class_ids.size(); ++c)
    memory_.enqueue(batch.class_ids[c], ev.protos_new[c]);

  const double lr = config_.lr_schedule.at(step_index);
  for (std::size_t i = 0; i < encoder_.weights.size(); ++i)
    encoder_.weights[i] -= lr * ev.grad_weights[i];
  for (std::size_t i = 0; i < encoder_.bias.size(); ++i)
    encoder_.bias[i] -= lr * ev.grad_bias[i];

  if (config_.trainable_prototypes) {
    for (std::size_t j = 0; j < ev.weights.size(); ++j) {
      Vec updated = ev.weights[j].second.values;
      for (std::size_t t = 0; t < updated.size(); ++t)
        updated[t] -= lr * ev.grad_prototypes[j][t];
      memory_.overwrite_embedding(ev.weights[j].first, l2_normalize(updated));
    }
  }

  bool ui_acted = false;
  refresh_ui(ui_acted);

  StepRecord rec;
  rec.step = step_index;
  rec.loss = ev.loss;
  rec.mean_target_cos = ev.mean_target_cos;
  rec.lr = lr;
  rec.memory_size = memory_.size();
  rec.ui_refreshed = ui_acted;
  log_.push_back(rec);
  memory_.advance_step();
  return rec;
}

void Trainer::run() {
  for (std::uint64_t t = 0; t < config_.total_steps; ++t) step();
}

TrainResult run_training(const TrainConfig& config, const Dataset& dataset,
                         const IdentityWorld& world) {
  Trainer trainer(config, dataset, world);
  trainer.run();
  return TrainResult{trainer.encoder(), trainer.memory(), trainer.log()};
}

}  // namespace qpm
