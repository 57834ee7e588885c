#include "qpm/config.hpp"

#include <cstdlib>
#include <sstream>

#include "qpm/io.hpp"

namespace qpm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    throw InvalidConfig(key + ": not a number: '" + value + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0')
    throw InvalidConfig(key + ": not an integer: '" + value + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || value.find('-') != std::string::npos)
    throw InvalidConfig(key + ": not a non-negative integer: '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw InvalidConfig(key + ": not a boolean: '" + value + "'");
}

}  // namespace

LrSchedule parse_lr_schedule(const std::string& text) {
  LrSchedule sched;
  sched.entries.clear();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw InvalidConfig("train.lr_schedule: expected step:lr, got '" + item + "'");
    sched.entries.emplace_back(parse_u64("train.lr_schedule", trim(item.substr(0, colon))),
                               parse_double("train.lr_schedule", trim(item.substr(colon + 1))));
  }
  sched.validate();
  return sched;
}

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "world.identities") c.world_identities = static_cast<int>(parse_int(key, value));
  else if (key == "world.dim") c.world_dim = static_cast<int>(parse_int(key, value));
  else if (key == "world.obs_dim") c.world_obs_dim = static_cast<int>(parse_int(key, value));
  else if (key == "world.noise_kappa") c.world_noise_kappa = parse_double(key, value);
  else if (key == "world.corruption_rate") c.world_corruption_rate = parse_double(key, value);
  else if (key == "world.strength_min") c.world_strength_min = parse_double(key, value);
  else if (key == "world.strength_max") c.world_strength_max = parse_double(key, value);
  else if (key == "world.obs_noise") c.world_obs_noise = parse_double(key, value);
  else if (key == "data.images_per_identity")
    c.images_per_identity = static_cast<int>(parse_int(key, value));
  else if (key == "train.estimator") c.estimator = value;
  else if (key == "train.hard") c.hard = parse_bool(key, value);
  else if (key == "train.uniform_via_qa") c.uniform_via_qa = parse_bool(key, value);
  else if (key == "train.loss") c.loss = value;
  else if (key == "train.margin") c.margin = parse_double(key, value);
  else if (key == "train.scale") c.scale = parse_double(key, value);
  else if (key == "train.sigma") c.sigma = parse_double(key, value);
  else if (key == "train.batch_classes")
    c.batch_classes = static_cast<int>(parse_int(key, value));
  else if (key == "train.images_per_class")
    c.images_per_class = static_cast<int>(parse_int(key, value));
  else if (key == "train.memory_capacity") c.memory_capacity = parse_u64(key, value);
  else if (key == "train.refresh_ratio") c.refresh_ratio = parse_double(key, value);
  else if (key == "train.ui_period") c.ui_period = parse_u64(key, value);
  else if (key == "train.ui_pool") c.ui_pool = static_cast<int>(parse_int(key, value));
  else if (key == "train.steps") c.steps = parse_u64(key, value);
  else if (key == "train.lr_schedule") c.lr_schedule = value;
  else if (key == "train.grad_through_quality")
    c.grad_through_quality = parse_bool(key, value);
  else if (key == "train.trainable_prototypes")
    c.trainable_prototypes = parse_bool(key, value);
  else if (key == "eval.num_pairs") c.eval_num_pairs = static_cast<int>(parse_int(key, value));
  else throw InvalidConfig("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config line " + std::to_string(line_no) +
                          ": expected key = value");
    apply_override(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

LossSpec loss_spec(const RunConfig& c) {
  LossVariant v = loss_from_name(c.loss);
  LossSpec spec = make_loss_spec(v);
  spec.scale = c.scale;
  if (c.margin) spec.margin = *c.margin;
  if (c.sigma) spec.sigma = *c.sigma;
  return spec;
}

QualityEstimatorSpec estimator_spec(const RunConfig& c) {
  EstimatorKind kind = estimator_from_name(c.estimator);
  if (c.hard) {
    if (kind == EstimatorKind::RecogSoft || kind == EstimatorKind::RecogHard)
      kind = EstimatorKind::RecogHard;
    else
      throw InvalidConfig("train.hard: hard selection is only defined for "
                          "recognizability scores, not estimator '" + c.estimator + "'");
  }
  return QualityEstimatorSpec{kind};
}

void validate(const RunConfig& c) {
  validate_world_config(world_config(c));
  if (c.images_per_identity < 2)
    throw InvalidConfig("data.images_per_identity must be >= 2");
  estimator_spec(c);
  LossSpec spec = loss_spec(c);
  if (spec.scale <= 0.0) throw InvalidConfig("train.scale must be positive");
  if (spec.margin < 0.0) throw InvalidConfig("train.margin must be >= 0");
  if (spec.sigma < 0.0) throw InvalidConfig("train.sigma must be >= 0");
  if (c.batch_classes < 1) throw InvalidConfig("train.batch_classes must be >= 1");
  if (c.batch_classes > c.world_identities)
    throw InvalidConfig("train.batch_classes exceeds world.identities");
  if (c.images_per_class < 1) throw InvalidConfig("train.images_per_class must be >= 1");
  if (c.images_per_class > c.images_per_identity)
    throw InvalidConfig("train.images_per_class exceeds data.images_per_identity");
  if (c.memory_capacity < 1) throw InvalidConfig("train.memory_capacity must be >= 1");
  if (c.refresh_ratio < 0.0 || c.refresh_ratio > 1.0)
    throw InvalidConfig("train.refresh_ratio must be in [0, 1]");
  if (c.ui_period < 1) throw InvalidConfig("train.ui_period must be >= 1");
  if (c.ui_pool < 1) throw InvalidConfig("train.ui_pool must be >= 1");
  parse_lr_schedule(c.lr_schedule);
  if (c.eval_num_pairs < 1) throw InvalidConfig("eval.num_pairs must be >= 1");
}

WorldConfig world_config(const RunConfig& c) {
  WorldConfig w;
  w.num_identities = c.world_identities;
  w.dim = c.world_dim;
  w.obs_dim = c.world_obs_dim;
  w.noise_kappa = c.world_noise_kappa;
  w.corruption_rate = c.world_corruption_rate;
  w.strength_min = c.world_strength_min;
  w.strength_max = c.world_strength_max;
  w.obs_noise = c.world_obs_noise;
  w.seed = c.seed;
  return w;
}

TrainConfig train_config(const RunConfig& c) {
  validate(c);
  TrainConfig t;
  t.estimator = estimator_spec(c);
  t.uniform_via_qa = c.uniform_via_qa;
  t.loss = loss_spec(c);
  t.batch_classes = c.batch_classes;
  t.images_per_class = c.images_per_class;
  t.memory_capacity = static_cast<std::size_t>(c.memory_capacity);
  t.refresh_ratio = c.refresh_ratio;
  t.ui_period = c.ui_period;
  t.ui_pool_size = c.ui_pool;
  t.lr_schedule = parse_lr_schedule(c.lr_schedule);
  t.total_steps = c.steps;
  t.seed = c.seed;
  t.grad_through_quality = c.grad_through_quality;
  t.trainable_prototypes = c.trainable_prototypes;
  return t;
}

std::string render_config(const RunConfig& c) {
  LossSpec spec = loss_spec(c);  // resolved margin/sigma defaults
  std::ostringstream out;
  out << "seed = " << c.seed << '\n'
      << "world.identities = " << c.world_identities << '\n'
      << "world.dim = " << c.world_dim << '\n'
      << "world.obs_dim = " << c.world_obs_dim << '\n'
      << "world.noise_kappa = " << format_g17(c.world_noise_kappa) << '\n'
      << "world.corruption_rate = " << format_g17(c.world_corruption_rate) << '\n'
      << "world.strength_min = " << format_g17(c.world_strength_min) << '\n'
      << "world.strength_max = " << format_g17(c.world_strength_max) << '\n'
      << "world.obs_noise = " << format_g17(c.world_obs_noise) << '\n'
      << "data.images_per_identity = " << c.images_per_identity << '\n'
      << "train.estimator = " << c.estimator << '\n'
      << "train.hard = " << (c.hard ? "true" : "false") << '\n'
      << "train.uniform_via_qa = " << (c.uniform_via_qa ? "true" : "false") << '\n'
      << "train.loss = " << c.loss << '\n'
      << "train.margin = " << format_g17(spec.margin) << '\n'
      << "train.scale = " << format_g17(spec.scale) << '\n'
      << "train.sigma = " << format_g17(spec.sigma) << '\n'
      << "train.batch_classes = " << c.batch_classes << '\n'
      << "train.images_per_class = " << c.images_per_class << '\n'
      << "train.memory_capacity = " << c.memory_capacity << '\n'
      << "train.refresh_ratio = " << format_g17(c.refresh_ratio) << '\n'
      << "train.ui_period = " << c.ui_period << '\n'
      << "train.ui_pool = " << c.ui_pool << '\n'
      << "train.steps = " << c.steps << '\n'
      << "train.lr_schedule = " << c.lr_schedule << '\n'
      << "train.grad_through_quality = " << (c.grad_through_quality ? "true" : "false") << '\n'
      << "train.trainable_prototypes = " << (c.trainable_prototypes ? "true" : "false") << '\n'
      << "eval.num_pairs = " << c.eval_num_pairs << '\n';
  return out.str();
}

std::string config_fingerprint(const RunConfig& c) {
  std::string text = render_config(c);
  return fnv1a_hex(std::span<const char>(text.data(), text.size()));
}

bool same_except_estimator(const RunConfig& a, const RunConfig& b) {
  RunConfig a2 = a, b2 = b;
  a2.estimator = b2.estimator = "uniform";
  a2.hard = b2.hard = false;
  return render_config(a2) == render_config(b2);
}

}  // namespace qpm
