#include "qpm/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "qpm/io.hpp"

namespace qpm {

namespace {

constexpr double kRadToDeg = 57.295779513082320877;

std::vector<UnitEmbedding> encode_units(const Encoder& encoder,
                                        const std::vector<Sample>& samples) {
  std::vector<UnitEmbedding> units;
  units.reserve(samples.size());
  for (const auto& s : samples) units.push_back(l2_normalize(encode_one(encoder, s.observation)));
  return units;
}

// #genuine >= t plus #impostor < t, the rule both the sweep and the
// brute-force oracle in the tests share.
std::size_t correct_at(const std::vector<double>& genuine_sorted,
                       const std::vector<double>& impostor_sorted, double t) {
  auto g = std::lower_bound(genuine_sorted.begin(), genuine_sorted.end(), t);
  auto i = std::lower_bound(impostor_sorted.begin(), impostor_sorted.end(), t);
  return static_cast<std::size_t>(genuine_sorted.end() - g) +
         static_cast<std::size_t>(i - impostor_sorted.begin());
}

}  // namespace

std::pair<double, double> best_threshold_accuracy(std::vector<double> genuine,
                                                  std::vector<double> impostor) {
  if (genuine.empty() || impostor.empty())
    throw InvalidSpec("best_threshold_accuracy: empty score lists");
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::vector<double> candidates;
  candidates.reserve(genuine.size() + impostor.size() + 1);
  candidates.insert(candidates.end(), genuine.begin(), genuine.end());
  candidates.insert(candidates.end(), impostor.begin(), impostor.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  candidates.push_back(candidates.back() + 1.0);  // predict-all-impostor

  std::size_t best_correct = 0;
  double best_threshold = candidates.front();
  for (double t : candidates) {
    std::size_t correct = correct_at(genuine, impostor, t);
    if (correct > best_correct) {
      best_correct = correct;
      best_threshold = t;
    }
  }
  double accuracy = static_cast<double>(best_correct) /
                    static_cast<double>(genuine.size() + impostor.size());
  return {accuracy, best_threshold};
}

double tar_at_far_from_scores(std::vector<double> genuine, std::vector<double> impostor,
                              double far) {
  if (genuine.empty() || impostor.empty())
    throw InvalidSpec("tar_at_far_from_scores: empty score lists");
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  const double n_gen = static_cast<double>(genuine.size());
  const double n_imp = static_cast<double>(impostor.size());
  auto tar_at_threshold = [&](double t) {
    auto it = std::lower_bound(genuine.begin(), genuine.end(), t);
    return static_cast<double>(genuine.end() - it) / n_gen;
  };
  // stepwise ROC over descending impostor thresholds
  std::vector<std::pair<double, double>> roc;  // (FAR, TAR), FAR ascending
  roc.emplace_back(0.0,
                   static_cast<double>(genuine.end() - std::upper_bound(genuine.begin(),
                                                                        genuine.end(),
                                                                        impostor.back())) /
                       n_gen);
  for (std::size_t i = 1; i <= impostor.size(); ++i) {
    double threshold = impostor[impostor.size() - i];
    roc.emplace_back(static_cast<double>(i) / n_imp, tar_at_threshold(threshold));
  }
  if (far <= roc.front().first) return roc.front().second;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    if (roc[i].first >= far) {
      double f0 = roc[i - 1].first, f1 = roc[i].first;
      double t0 = roc[i - 1].second, t1 = roc[i].second;
      if (f1 == f0) return std::max(t0, t1);
      return t0 + (t1 - t0) * (far - f0) / (f1 - f0);
    }
  }
  return roc.back().second;
}

VerificationResult verification_eval(const Encoder& encoder,
                                     const std::vector<Sample>& samples,
                                     int num_pairs, Rng& rng) {
  if (num_pairs < 1) throw InvalidConfig("eval.num_pairs must be >= 1");
  std::vector<std::vector<std::size_t>> by_id;
  {
    std::map<ClassId, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i)
      groups[samples[i].identity].push_back(i);
    for (auto& [id, idxs] : groups) by_id.push_back(std::move(idxs));
  }
  std::vector<std::size_t> genuine_eligible;
  for (std::size_t g = 0; g < by_id.size(); ++g)
    if (by_id[g].size() >= 2) genuine_eligible.push_back(g);
  if (genuine_eligible.empty() || by_id.size() < 2)
    throw InvalidConfig("verification needs >= 2 identities and >= 2 images somewhere");

  std::vector<UnitEmbedding> units = encode_units(encoder, samples);

  std::vector<double> genuine(num_pairs), impostor(num_pairs);
  for (int p = 0; p < num_pairs; ++p) {
    std::size_t g = genuine_eligible[rng.below(genuine_eligible.size())];
    std::size_t a = rng.below(by_id[g].size());
    std::size_t b = rng.below(by_id[g].size() - 1);
    if (b >= a) ++b;
    genuine[p] = cosine_similarity(units[by_id[g][a]], units[by_id[g][b]]);
  }
  for (int p = 0; p < num_pairs; ++p) {
    std::size_t g1 = rng.below(by_id.size());
    std::size_t g2 = rng.below(by_id.size() - 1);
    if (g2 >= g1) ++g2;
    std::size_t a = by_id[g1][rng.below(by_id[g1].size())];
    std::size_t b = by_id[g2][rng.below(by_id[g2].size())];
    impostor[p] = cosine_similarity(units[a], units[b]);
  }

  VerificationResult result;
  auto [accuracy, threshold] = best_threshold_accuracy(genuine, impostor);
  result.accuracy = accuracy;
  result.best_threshold = threshold;
  result.tar_at_far["1e-2"] = tar_at_far_from_scores(genuine, impostor, 1e-2);
  result.tar_at_far["1e-3"] = tar_at_far_from_scores(genuine, impostor, 1e-3);
  return result;
}

IdentificationResult identification_eval(const Encoder& encoder,
                                         const std::vector<Sample>& gallery,
                                         const std::vector<Sample>& probes) {
  if (gallery.empty() || probes.empty())
    throw InvalidConfig("identification needs non-empty gallery and probes");
  std::unordered_set<ClassId> gallery_ids;
  for (const auto& s : gallery) gallery_ids.insert(s.identity);
  for (const auto& s : probes)
    if (!gallery_ids.count(s.identity))
      throw InvalidConfig("probe identity " + std::to_string(s.identity) +
                          " absent from gallery");

  std::vector<UnitEmbedding> g_units = encode_units(encoder, gallery);
  std::vector<UnitEmbedding> p_units = encode_units(encoder, probes);

  IdentificationResult result;
  result.assignment.resize(probes.size());
  std::size_t hits = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::size_t best = 0;
    double best_cos = cosine_similarity(p_units[p], g_units[0]);
    for (std::size_t g = 1; g < gallery.size(); ++g) {
      double c = cosine_similarity(p_units[p], g_units[g]);
      if (c > best_cos) {
        best_cos = c;
        best = g;
      }
    }
    result.assignment[p] = best;
    if (gallery[best].identity == probes[p].identity) ++hits;
  }
  result.top1 = static_cast<double>(hits) / static_cast<double>(probes.size());
  return result;
}

double prototype_placement_error(const PrototypeMemory& memory,
                                 const IdentityWorld& world, const Encoder& encoder) {
  auto slots = memory.slots_by_stamp();
  if (slots.empty()) throw InvalidConfig("prototype placement: memory is empty");
  double total = 0.0;
  for (const auto& slot : slots) {
    Vec center_obs = world.center_observation(slot.class_id);
    UnitEmbedding target = l2_normalize(encode_one(encoder, center_obs));
    double c = cosine_similarity(slot.embedding, target);
    total += std::acos(c) * kRadToDeg;
  }
  return total / static_cast<double>(slots.size());
}

double estimator_auc(const std::vector<double>& qualities,
                     const std::vector<double>& latent_qualities) {
  if (qualities.size() != latent_qualities.size())
    throw InvalidSpec("estimator_auc: length mismatch");
  const std::size_t n = qualities.size();
  std::size_t n_clean = 0;
  for (double q : latent_qualities)
    if (q >= 1.0) ++n_clean;
  std::size_t n_corrupt = n - n_clean;
  if (n_clean == 0 || n_corrupt == 0)
    throw DegenerateLabels("estimator_auc: needs both clean and corrupted samples");

  // Mann-Whitney with average ranks for ties
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return qualities[a] < qualities[b];
  });
  double rank_sum_clean = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && qualities[order[j + 1]] == qualities[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t)
      if (latent_qualities[order[t]] >= 1.0) rank_sum_clean += avg_rank;
    i = j + 1;
  }
  double u = rank_sum_clean - 0.5 * static_cast<double>(n_clean) *
                                  static_cast<double>(n_clean + 1);
  return u / (static_cast<double>(n_clean) * static_cast<double>(n_corrupt));
}

EvalReport evaluate_pipeline(const RunConfig& config, const Encoder& encoder,
                             const PrototypeMemory& memory, const IdentityWorld& world,
                             const std::vector<Sample>& eval_samples) {
  EvalReport report;
  Rng pair_rng(derive_seed(config.seed, stream::kEvalPairs));
  VerificationResult ver =
      verification_eval(encoder, eval_samples, config.eval_num_pairs, pair_rng);
  report.verification_accuracy = ver.accuracy;
  report.tar_at_far = ver.tar_at_far;

  // gallery: first clean sample per identity (first sample when none clean)
  std::map<ClassId, std::size_t> gallery_pick;
  for (std::size_t i = 0; i < eval_samples.size(); ++i) {
    ClassId id = eval_samples[i].identity;
    auto it = gallery_pick.find(id);
    if (it == gallery_pick.end()) {
      gallery_pick[id] = i;
    } else if (eval_samples[it->second].latent_quality < 1.0 &&
               eval_samples[i].latent_quality >= 1.0) {
      it->second = i;
    }
  }
  std::vector<Sample> gallery;
  std::unordered_set<std::size_t> gallery_set;
  for (const auto& [id, idx] : gallery_pick) {
    gallery.push_back(eval_samples[idx]);
    gallery_set.insert(idx);
  }
  std::vector<Sample> probes;
  for (std::size_t i = 0; i < eval_samples.size(); ++i)
    if (!gallery_set.count(i)) probes.push_back(eval_samples[i]);
  report.identification_top1 = identification_eval(encoder, gallery, probes).top1;

  report.mean_prototype_angle_deg = prototype_placement_error(memory, world, encoder);

  std::vector<Vec> observations;
  observations.reserve(eval_samples.size());
  for (const auto& s : eval_samples) observations.push_back(s.observation);
  std::vector<RawEmbedding> raw = encode(encoder, observations);
  std::vector<double> qualities;
  EstimatorKind kind = estimator_spec(config).kind;
  if (kind == EstimatorKind::UniformBaseline) {
    qualities.assign(raw.size(), 1.0);
  } else if (kind == EstimatorKind::FeatureNorm) {
    qualities = quality_feature_norm(raw);
  } else {
    if (!memory.ui_prototype())
      throw InvalidSpec("recognizability estimator requires p_UI in the memory checkpoint");
    std::vector<UnitEmbedding> units;
    units.reserve(raw.size());
    for (const auto& x : raw) units.push_back(l2_normalize(x));
    qualities = quality_recognizability(units, *memory.ui_prototype());
  }
  std::vector<double> latent;
  latent.reserve(eval_samples.size());
  for (const auto& s : eval_samples) latent.push_back(s.latent_quality);
  try {
    report.estimator_auc = estimator_auc(qualities, latent);
  } catch (const DegenerateLabels&) {
    report.estimator_auc = std::numeric_limits<double>::quiet_NaN();
  }

  report.config_fingerprint = config_fingerprint(config);
  report.seeds = {config.seed};
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["verification_accuracy"] = report.verification_accuracy;
  for (const auto& [far, tar] : report.tar_at_far) j["tar_at_far"][far] = tar;
  j["identification_top1"] = report.identification_top1;
  j["mean_prototype_angle_deg"] = report.mean_prototype_angle_deg;
  j["estimator_auc"] = report.estimator_auc;
  j["config_fingerprint"] = report.config_fingerprint;
  j["seeds"] = report.seeds;
  return j.dump(2) + "\n";
}

namespace {

std::map<std::string, double> report_metrics(const EvalReport& report) {
  return {
      {"verification_accuracy", report.verification_accuracy},
      {"tar_far_1e2", report.tar_at_far.at("1e-2")},
      {"tar_far_1e3", report.tar_at_far.at("1e-3")},
      {"identification_top1", report.identification_top1},
      {"mean_prototype_angle_deg", report.mean_prototype_angle_deg},
      {"estimator_auc", report.estimator_auc},
  };
}

}  // namespace

AbReport ab_compare(const RunConfig& base, const RunConfig& variant, int num_seeds) {
  if (num_seeds < 1) throw InvalidConfig("compare: num_seeds must be >= 1");
  validate(base);
  validate(variant);
  if (!same_except_estimator(base, variant))
    throw InvalidConfig("compare: configs must differ only in the estimator selection");

  AbReport report;
  report.metrics = {"verification_accuracy", "tar_far_1e2",    "tar_far_1e3",
                    "identification_top1",   "mean_prototype_angle_deg",
                    "estimator_auc"};

  for (int i = 0; i < num_seeds; ++i) {
    std::uint64_t seed = base.seed + static_cast<std::uint64_t>(i);
    RunConfig cfg_base = base;
    RunConfig cfg_variant = variant;
    cfg_base.seed = cfg_variant.seed = seed;

    IdentityWorld world = make_world(world_config(cfg_base));
    Rng data_rng(derive_seed(seed, stream::kDataset));
    Dataset train_set = make_dataset(world, cfg_base.images_per_identity, data_rng);
    Rng eval_rng(derive_seed(seed, stream::kEvalData));
    Dataset eval_set = make_dataset(world, cfg_base.images_per_identity, eval_rng);

    AbSeedResult row;
    row.seed = seed;
    {
      TrainResult res = run_training(train_config(cfg_base), train_set, world);
      row.base = report_metrics(
          evaluate_pipeline(cfg_base, res.encoder, res.memory, world, eval_set.samples));
    }
    {
      TrainResult res = run_training(train_config(cfg_variant), train_set, world);
      row.variant = report_metrics(evaluate_pipeline(cfg_variant, res.encoder, res.memory,
                                                     world, eval_set.samples));
    }
    report.rows.push_back(std::move(row));
  }

  for (const auto& metric : report.metrics) {
    MetricSummary s;
    s.higher_is_better = metric != "mean_prototype_angle_deg";
    for (const auto& row : report.rows) {
      double b = row.base.at(metric);
      double v = row.variant.at(metric);
      double delta = v - b;
      s.mean_base += b;
      s.mean_variant += v;
      double improvement = s.higher_is_better ? delta : -delta;
      if (improvement > 0.0)
        ++s.wins;
      else if (improvement < 0.0)
        ++s.losses;
      else
        ++s.ties;
    }
    s.mean_base /= static_cast<double>(report.rows.size());
    s.mean_variant /= static_cast<double>(report.rows.size());
    s.mean_delta = s.mean_variant - s.mean_base;
    report.summary[metric] = s;
  }
  return report;
}

std::string ab_report_csv(const AbReport& report) {
  std::ostringstream out;
  out << "seed,metric,base,variant,delta\n";
  for (const auto& row : report.rows)
    for (const auto& metric : report.metrics) {
      double b = row.base.at(metric);
      double v = row.variant.at(metric);
      out << row.seed << ',' << metric << ',' << format_g17(b) << ',' << format_g17(v)
          << ',' << format_g17(v - b) << '\n';
    }
  return out.str();
}

std::string ab_report_json(const AbReport& report) {
  nlohmann::json j;
  std::vector<std::uint64_t> seeds;
  for (const auto& row : report.rows) seeds.push_back(row.seed);
  j["seeds"] = seeds;
  j["num_seeds"] = report.rows.size();
  for (const auto& [metric, s] : report.summary) {
    nlohmann::json m;
    m["mean_base"] = s.mean_base;
    m["mean_variant"] = s.mean_variant;
    m["mean_delta"] = s.mean_delta;
    m["wins"] = s.wins;
    m["ties"] = s.ties;
    m["losses"] = s.losses;
    m["higher_is_better"] = s.higher_is_better;
    j["metrics"][metric] = m;
  }
  return j.dump(2) + "\n";
}

}  // namespace qpm
