// qpm: config-driven experiment CLI
//
// Subcommands: gen-data, train, eval, compare. All outputs land under --out
// with fixed names (dataset.txt, manifest.json, train.log.jsonl, encoder.bin,
// memory.bin, report.json, compare.csv, summary.json, config.echo.txt).
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpm/config.hpp"
#include "qpm/evalbench.hpp"
#include "qpm/io.hpp"
#include "qpm/synthdata.hpp"
#include "qpm/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> estimator;
  std::optional<std::string> loss;
  std::optional<std::uint64_t> steps;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "override seed");
  cmd->add_option("--estimator", opts.estimator,
                  "override train.estimator (uniform|none|norm|recog-soft|recog-hard)");
  cmd->add_option("--loss", opts.loss,
                  "override train.loss (cosface|arcface|elasticface-cos+|elasticface-arc+)");
  cmd->add_option("--steps", opts.steps, "override train.steps");
  cmd->add_option("--set", opts.sets, "extra key=value overrides (repeatable)");
}

qpm::RunConfig resolve_config(const CommonOpts& opts) {
  qpm::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = qpm::parse_config_file(opts.config_path);
  if (opts.seed) qpm::apply_override(cfg, "seed", std::to_string(*opts.seed));
  if (opts.estimator) qpm::apply_override(cfg, "train.estimator", *opts.estimator);
  if (opts.loss) qpm::apply_override(cfg, "train.loss", *opts.loss);
  if (opts.steps) qpm::apply_override(cfg, "train.steps", std::to_string(*opts.steps));
  for (const auto& kv : opts.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw qpm::InvalidConfig("--set expects key=value, got '" + kv + "'");
    qpm::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  qpm::validate(cfg);
  return cfg;
}

void prepare_out(const std::string& out_dir, const qpm::RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw qpm::IoError("cannot create output directory: " + out_dir);
  qpm::write_text_file(out_dir + "/config.echo.txt", qpm::render_config(cfg));
}

void write_binary(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw qpm::IoError("cannot open for writing: " + path);
  fn(out);
  if (!out) throw qpm::IoError("write failed: " + path);
}

int cmd_gen_data(const CommonOpts& opts) {
  qpm::RunConfig cfg = resolve_config(opts);
  prepare_out(opts.out_dir, cfg);
  qpm::IdentityWorld world = qpm::make_world(qpm::world_config(cfg));
  qpm::Rng data_rng(qpm::derive_seed(cfg.seed, qpm::stream::kDataset));
  qpm::Dataset ds = qpm::make_dataset(world, cfg.images_per_identity, data_rng);

  write_binary(opts.out_dir + "/dataset.txt",
               [&](std::ostream& out) { qpm::save_dataset(ds, out); });

  std::size_t corrupted = 0;
  std::vector<double> latent;
  latent.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    latent.push_back(s.latent_quality);
    if (s.latent_quality < 1.0) ++corrupted;
  }
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["identities"] = ds.num_identities;
  manifest["images_per_identity"] = ds.images_per_identity;
  manifest["samples"] = ds.samples.size();
  manifest["corrupted"] = corrupted;
  manifest["dim"] = ds.dim;
  manifest["obs_dim"] = ds.obs_dim;
  manifest["seed"] = ds.seed;
  manifest["latent_quality"] = latent;
  qpm::write_text_file(opts.out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "gen-data: " << ds.num_identities << " identities, " << ds.samples.size()
            << " samples (" << corrupted << " corrupted) -> " << opts.out_dir
            << "/dataset.txt\n";
  return 0;
}

qpm::Dataset load_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw qpm::IoError("cannot open dataset: " + path);
  return qpm::load_dataset(in);
}

void check_dataset_matches(const qpm::Dataset& ds, const qpm::RunConfig& cfg) {
  if (ds.dim != cfg.world_dim || ds.obs_dim != cfg.world_obs_dim ||
      ds.num_identities != cfg.world_identities || ds.seed != cfg.seed)
    throw qpm::InvalidConfig(
        "dataset header does not match the config (dim/obs_dim/identities/seed); "
        "regenerate with gen-data or fix the config");
}

int cmd_train(const CommonOpts& opts, const std::string& dataset_path) {
  qpm::RunConfig cfg = resolve_config(opts);
  qpm::Dataset ds = load_dataset_file(dataset_path);
  check_dataset_matches(ds, cfg);
  prepare_out(opts.out_dir, cfg);

  qpm::IdentityWorld world = qpm::make_world(qpm::world_config(cfg));
  qpm::TrainResult result = qpm::run_training(qpm::train_config(cfg), ds, world);

  write_binary(opts.out_dir + "/encoder.bin",
               [&](std::ostream& out) { qpm::save_encoder(result.encoder, out); });
  write_binary(opts.out_dir + "/memory.bin",
               [&](std::ostream& out) { result.memory.save(out); });

  std::ostringstream log;
  for (const auto& rec : result.log) {
    nlohmann::json j;
    j["step"] = rec.step;
    j["loss"] = rec.loss;
    j["mean_target_cos"] = rec.mean_target_cos;
    j["lr"] = rec.lr;
    j["memory_size"] = rec.memory_size;
    j["ui_refreshed"] = rec.ui_refreshed;
    log << j.dump() << '\n';
  }
  qpm::write_text_file(opts.out_dir + "/train.log.jsonl", log.str());

  double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  std::cout << "train: " << result.log.size() << " steps, final loss "
            << qpm::format_g17(final_loss) << ", memory size " << result.memory.size()
            << " -> " << opts.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_dir,
             const std::string& dataset_path) {
  qpm::RunConfig cfg = resolve_config(opts);
  qpm::Dataset ds = load_dataset_file(dataset_path);

  std::ifstream enc_in(checkpoint_dir + "/encoder.bin", std::ios::binary);
  if (!enc_in) throw qpm::IoError("cannot open checkpoint: " + checkpoint_dir + "/encoder.bin");
  qpm::Encoder encoder = qpm::load_encoder(enc_in);
  std::ifstream mem_in(checkpoint_dir + "/memory.bin", std::ios::binary);
  if (!mem_in) throw qpm::IoError("cannot open checkpoint: " + checkpoint_dir + "/memory.bin");
  qpm::PrototypeMemory memory = qpm::PrototypeMemory::load(mem_in);

  prepare_out(opts.out_dir, cfg);
  qpm::IdentityWorld world = qpm::make_world(qpm::world_config(cfg));
  qpm::EvalReport report = qpm::evaluate_pipeline(cfg, encoder, memory, world, ds.samples);
  qpm::write_text_file(opts.out_dir + "/report.json", qpm::eval_report_json(report));

  std::cout << "eval: verification " << qpm::format_g17(report.verification_accuracy)
            << ", top1 " << qpm::format_g17(report.identification_top1)
            << ", prototype angle " << qpm::format_g17(report.mean_prototype_angle_deg)
            << " deg, estimator AUC " << qpm::format_g17(report.estimator_auc) << "\n";
  return 0;
}

int cmd_compare(const std::string& base_path, const std::string& variant_path,
                int num_seeds, const std::string& out_dir) {
  qpm::RunConfig base = qpm::parse_config_file(base_path);
  qpm::RunConfig variant = qpm::parse_config_file(variant_path);
  qpm::validate(base);
  qpm::validate(variant);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw qpm::IoError("cannot create output directory: " + out_dir);
  qpm::write_text_file(out_dir + "/config.echo.txt", qpm::render_config(base));
  qpm::write_text_file(out_dir + "/config.variant.echo.txt", qpm::render_config(variant));

  qpm::AbReport report = qpm::ab_compare(base, variant, num_seeds);
  qpm::write_text_file(out_dir + "/compare.csv", qpm::ab_report_csv(report));
  qpm::write_text_file(out_dir + "/summary.json", qpm::ab_report_json(report));

  std::cout << "compare: " << num_seeds << " seeds\n";
  for (const auto& metric : report.metrics) {
    const auto& s = report.summary.at(metric);
    std::cout << "  " << metric << ": mean delta " << qpm::format_g17(s.mean_delta)
              << " (wins " << s.wins << ", ties " << s.ties << ", losses " << s.losses
              << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototype-memory representation learning experiments"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts;
  std::string dataset_path, checkpoint_dir;
  std::string base_path, variant_path, compare_out = "out";
  int num_seeds = 10;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, gen_opts);

  CLI::App* train = app.add_subcommand("train", "train an encoder with prototype memory");
  add_common(train, train_opts);
  train->add_option("--dataset", dataset_path, "dataset.txt path")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint_dir,
                   "directory holding encoder.bin and memory.bin")->required();
  eval->add_option("--dataset", dataset_path, "dataset.txt path")->required();

  CLI::App* compare = app.add_subcommand("compare", "paired A/B comparison over seeds");
  compare->add_option("--base", base_path, "baseline config file")->required();
  compare->add_option("--variant", variant_path, "variant config file")->required();
  compare->add_option("--seeds", num_seeds, "number of shared seeds");
  compare->add_option("--out", compare_out, "output directory");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (train->parsed()) return cmd_train(train_opts, dataset_path);
    if (eval->parsed()) return cmd_eval(eval_opts, checkpoint_dir, dataset_path);
    if (compare->parsed()) return cmd_compare(base_path, variant_path, num_seeds, compare_out);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const qpm::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const qpm::InvalidSpec& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const qpm::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const qpm::Error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
