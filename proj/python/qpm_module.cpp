#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "qpm/config.hpp"
#include "qpm/evalbench.hpp"
#include "qpm/io.hpp"
#include "qpm/losses.hpp"
#include "qpm/memory.hpp"
#include "qpm/protogen.hpp"
#include "qpm/synthdata.hpp"
#include "qpm/trainer.hpp"

namespace py = pybind11;
using namespace qpm;

namespace {

template <typename SaveFn>
void save_to_file(const std::string& path, SaveFn fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  fn(out);
}

}  // namespace

PYBIND11_MODULE(qpm, m) {
  m.doc() = "prototype memory and quality-aware prototype memory for "
            "representation learning";

  auto err = py::register_exception<Error>(m, "Error");
  py::register_exception<DegenerateVector>(m, "DegenerateVector", err);
  py::register_exception<UnknownClass>(m, "UnknownClass", err);
  py::register_exception<Underflow>(m, "UnderflowError", err);
  py::register_exception<MissingPrototype>(m, "MissingPrototype", err);
  py::register_exception<InvalidSpec>(m, "InvalidSpec", err);
  py::register_exception<InvalidConfig>(m, "InvalidConfig", err);
  py::register_exception<UnknownIdentity>(m, "UnknownIdentity", err);
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", err);
  py::register_exception<DegenerateLabels>(m, "DegenerateLabels", err);
  py::register_exception<IoError>(m, "IoError", err);
  py::register_exception<NumericError>(m, "NumericError", err);

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform01", &Rng::uniform01)
      .def("uniform", &Rng::uniform)
      .def("gaussian", &Rng::gaussian)
      .def("below", &Rng::below)
      .def("stream", &Rng::stream);

  // vecmath
  py::class_<UnitEmbedding>(m, "UnitEmbedding")
      .def(py::init([](Vec values) { return UnitEmbedding{std::move(values)}; }),
           py::arg("values"))
      .def_readwrite("values", &UnitEmbedding::values)
      .def("__len__", [](const UnitEmbedding& e) { return e.values.size(); });
  m.def("l2_normalize", &l2_normalize, py::arg("x"));
  m.def("feature_norm", py::overload_cast<const Vec&>(&feature_norm), py::arg("x"));
  m.def("cosine_similarity", &cosine_similarity, py::arg("a"), py::arg("b"));
  m.def("cosine_distance", &cosine_distance, py::arg("a"), py::arg("b"));

  // protogen
  py::enum_<EstimatorKind>(m, "EstimatorKind")
      .value("FeatureNorm", EstimatorKind::FeatureNorm)
      .value("RecogSoft", EstimatorKind::RecogSoft)
      .value("RecogHard", EstimatorKind::RecogHard)
      .value("UniformBaseline", EstimatorKind::UniformBaseline);
  m.def("generate_prototype_basic", &generate_prototype_basic, py::arg("embeddings"));
  m.def("generate_prototype_qa", &generate_prototype_qa, py::arg("embeddings"),
        py::arg("qualities"));
  m.def("quality_feature_norm", &quality_feature_norm, py::arg("batch"));
  m.def("quality_recognizability", &quality_recognizability, py::arg("batch"),
        py::arg("p_ui"));
  m.def("hard_prototype_index", &hard_prototype_index, py::arg("qualities"));
  m.def("select_hard_prototype", &select_hard_prototype, py::arg("embeddings"),
        py::arg("qualities"), py::return_value_policy::copy);

  // memory
  py::class_<PrototypeSlot>(m, "PrototypeSlot")
      .def_readonly("class_id", &PrototypeSlot::class_id)
      .def_readonly("embedding", &PrototypeSlot::embedding)
      .def_readonly("stamp", &PrototypeSlot::stamp);
  m.def("refresh_blend", &refresh_blend, py::arg("old_embedding"), py::arg("fresh"),
        py::arg("refresh_ratio"));
  py::class_<PrototypeMemory>(m, "PrototypeMemory")
      .def(py::init<std::size_t, double, std::uint64_t, std::size_t>(),
           py::arg("capacity"), py::arg("refresh_ratio"), py::arg("ui_period"),
           py::arg("dim"))
      .def("enqueue", &PrototypeMemory::enqueue)
      .def("refresh", &PrototypeMemory::refresh)
      .def("dequeue_oldest", &PrototypeMemory::dequeue_oldest)
      .def("lookup", &PrototypeMemory::lookup)
      .def("negatives_snapshot",
           [](const PrototypeMemory& mem, const std::vector<ClassId>& exclude) {
             return mem.negatives_snapshot(
                 std::unordered_set<ClassId>(exclude.begin(), exclude.end()));
           },
           py::arg("exclude") = std::vector<ClassId>{})
      .def("maybe_refresh_ui", &PrototypeMemory::maybe_refresh_ui)
      .def("ui_refresh_due", &PrototypeMemory::ui_refresh_due)
      .def("advance_step", &PrototypeMemory::advance_step)
      .def("size", &PrototypeMemory::size)
      .def("capacity", &PrototypeMemory::capacity)
      .def("refresh_ratio", &PrototypeMemory::refresh_ratio)
      .def("ui_period", &PrototypeMemory::ui_period)
      .def("step_counter", &PrototypeMemory::step_counter)
      .def("dim", &PrototypeMemory::dim)
      .def("ui_prototype", [](const PrototypeMemory& mem) { return mem.ui_prototype(); })
      .def("contains", &PrototypeMemory::contains)
      .def("stamp_of", &PrototypeMemory::stamp_of)
      .def("slots_by_stamp", &PrototypeMemory::slots_by_stamp)
      .def("save",
           [](const PrototypeMemory& mem, const std::string& path) {
             save_to_file(path, [&](std::ostream& out) { mem.save(out); });
           })
      .def_static("load", [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open: " + path);
        return PrototypeMemory::load(in);
      });

  // losses
  py::enum_<LossVariant>(m, "LossVariant")
      .value("CosFace", LossVariant::CosFace)
      .value("ArcFace", LossVariant::ArcFace)
      .value("ElasticFaceCosPlus", LossVariant::ElasticFaceCosPlus)
      .value("ElasticFaceArcPlus", LossVariant::ElasticFaceArcPlus);
  py::class_<LossSpec>(m, "LossSpec")
      .def(py::init<>())
      .def(py::init([](LossVariant v, double margin, double scale, double sigma) {
             return LossSpec{v, margin, scale, sigma};
           }),
           py::arg("variant"), py::arg("margin"), py::arg("scale") = 64.0,
           py::arg("sigma") = 0.0)
      .def_readwrite("variant", &LossSpec::variant)
      .def_readwrite("margin", &LossSpec::margin)
      .def_readwrite("scale", &LossSpec::scale)
      .def_readwrite("sigma", &LossSpec::sigma);
  m.def("make_loss_spec", &make_loss_spec, py::arg("variant"));
  py::class_<LossOutput>(m, "LossOutput")
      .def_readonly("loss", &LossOutput::loss)
      .def_readonly("grad_embeddings", &LossOutput::grad_embeddings)
      .def_readonly("grad_prototypes", &LossOutput::grad_prototypes)
      .def_readonly("logits", &LossOutput::logits)
      .def_readonly("margins", &LossOutput::margins)
      .def_readonly("target_cos", &LossOutput::target_cos);
  m.def("target_logit", &target_logit, py::arg("variant"), py::arg("cos_theta"),
        py::arg("effective_margin"));
  m.def("target_logit_dcos", &target_logit_dcos, py::arg("variant"),
        py::arg("cos_theta"), py::arg("effective_margin"));
  m.def("elastic_margin_draw", &elastic_margin_draw, py::arg("spec"), py::arg("rng"));
  m.def("loss_and_grad", &loss_and_grad, py::arg("spec"), py::arg("embeddings"),
        py::arg("labels"), py::arg("prototypes"), py::arg("rng"));

  // synthdata
  py::class_<WorldConfig>(m, "WorldConfig")
      .def(py::init<>())
      .def_readwrite("num_identities", &WorldConfig::num_identities)
      .def_readwrite("dim", &WorldConfig::dim)
      .def_readwrite("obs_dim", &WorldConfig::obs_dim)
      .def_readwrite("noise_kappa", &WorldConfig::noise_kappa)
      .def_readwrite("corruption_rate", &WorldConfig::corruption_rate)
      .def_readwrite("strength_min", &WorldConfig::strength_min)
      .def_readwrite("strength_max", &WorldConfig::strength_max)
      .def_readwrite("obs_noise", &WorldConfig::obs_noise)
      .def_readwrite("seed", &WorldConfig::seed);
  py::class_<IdentityWorld>(m, "IdentityWorld")
      .def_readonly("config", &IdentityWorld::config)
      .def_readonly("centers", &IdentityWorld::centers)
      .def_readonly("unrecognizable_direction", &IdentityWorld::unrecognizable_direction)
      .def("observe", [](const IdentityWorld& w, const Vec& latent) {
        return w.observe(std::span<const double>(latent));
      })
      .def("center_observation", &IdentityWorld::center_observation);
  py::class_<Sample>(m, "Sample")
      .def_readonly("identity", &Sample::identity)
      .def_readonly("observation", &Sample::observation)
      .def_readonly("latent_quality", &Sample::latent_quality)
      .def_readonly("is_unrecognizable", &Sample::is_unrecognizable);
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("dim", &Dataset::dim)
      .def_readonly("obs_dim", &Dataset::obs_dim)
      .def_readonly("num_identities", &Dataset::num_identities)
      .def_readonly("images_per_identity", &Dataset::images_per_identity)
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("samples", &Dataset::samples)
      .def("__len__", &Dataset::size);
  m.def("make_world", &make_world, py::arg("config"));
  m.def("draw_sample", &draw_sample, py::arg("world"), py::arg("identity"),
        py::arg("corrupt"), py::arg("strength"), py::arg("rng"));
  m.def("make_dataset", &make_dataset, py::arg("world"), py::arg("images_per_identity"),
        py::arg("rng"));
  m.def("unrecognizable_pool", &unrecognizable_pool, py::arg("world"), py::arg("size"),
        py::arg("rng"));
  m.def("save_dataset", [](const Dataset& ds, const std::string& path) {
    save_to_file(path, [&](std::ostream& out) { save_dataset(ds, out); });
  });
  m.def("load_dataset", [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    return load_dataset(in);
  });

  // trainer
  py::class_<Encoder>(m, "Encoder")
      .def(py::init<>())
      .def_readwrite("dim", &Encoder::dim)
      .def_readwrite("obs_dim", &Encoder::obs_dim)
      .def_readwrite("weights", &Encoder::weights)
      .def_readwrite("bias", &Encoder::bias);
  m.def("make_encoder", &make_encoder, py::arg("dim"), py::arg("obs_dim"), py::arg("rng"));
  m.def("encode", &encode, py::arg("encoder"), py::arg("observations"));
  m.def("encode_one", [](const Encoder& enc, const Vec& obs) {
    return encode_one(enc, std::span<const double>(obs));
  });
  m.def("save_encoder", [](const Encoder& enc, const std::string& path) {
    save_to_file(path, [&](std::ostream& out) { save_encoder(enc, out); });
  });
  m.def("load_encoder", [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return load_encoder(in);
  });

  py::class_<LrSchedule>(m, "LrSchedule")
      .def(py::init<>())
      .def_readwrite("entries", &LrSchedule::entries)
      .def("at", &LrSchedule::at);
  m.def("parse_lr_schedule", &parse_lr_schedule, py::arg("text"));

  py::class_<QualityEstimatorSpec>(m, "QualityEstimatorSpec")
      .def(py::init<>())
      .def(py::init([](EstimatorKind kind) { return QualityEstimatorSpec{kind}; }),
           py::arg("kind"))
      .def_readwrite("kind", &QualityEstimatorSpec::kind);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("estimator", &TrainConfig::estimator)
      .def_readwrite("uniform_via_qa", &TrainConfig::uniform_via_qa)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("batch_classes", &TrainConfig::batch_classes)
      .def_readwrite("images_per_class", &TrainConfig::images_per_class)
      .def_readwrite("memory_capacity", &TrainConfig::memory_capacity)
      .def_readwrite("refresh_ratio", &TrainConfig::refresh_ratio)
      .def_readwrite("ui_period", &TrainConfig::ui_period)
      .def_readwrite("ui_pool_size", &TrainConfig::ui_pool_size)
      .def_readwrite("lr_schedule", &TrainConfig::lr_schedule)
      .def_readwrite("total_steps", &TrainConfig::total_steps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("grad_through_quality", &TrainConfig::grad_through_quality)
      .def_readwrite("trainable_prototypes", &TrainConfig::trainable_prototypes);

  py::class_<StepRecord>(m, "StepRecord")
      .def_readonly("step", &StepRecord::step)
      .def_readonly("loss", &StepRecord::loss)
      .def_readonly("mean_target_cos", &StepRecord::mean_target_cos)
      .def_readonly("lr", &StepRecord::lr)
      .def_readonly("memory_size", &StepRecord::memory_size)
      .def_readonly("ui_refreshed", &StepRecord::ui_refreshed);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("encoder", &TrainResult::encoder)
      .def_readonly("memory", &TrainResult::memory)
      .def_readonly("log", &TrainResult::log);
  m.def("run_training", &run_training, py::arg("config"), py::arg("dataset"),
        py::arg("world"));

  // evalbench
  py::class_<VerificationResult>(m, "VerificationResult")
      .def_readonly("accuracy", &VerificationResult::accuracy)
      .def_readonly("best_threshold", &VerificationResult::best_threshold)
      .def_readonly("tar_at_far", &VerificationResult::tar_at_far);
  m.def("verification_eval", &verification_eval, py::arg("encoder"), py::arg("samples"),
        py::arg("num_pairs"), py::arg("rng"));
  py::class_<IdentificationResult>(m, "IdentificationResult")
      .def_readonly("top1", &IdentificationResult::top1)
      .def_readonly("assignment", &IdentificationResult::assignment);
  m.def("identification_eval", &identification_eval, py::arg("encoder"),
        py::arg("gallery"), py::arg("probes"));
  m.def("prototype_placement_error", &prototype_placement_error, py::arg("memory"),
        py::arg("world"), py::arg("encoder"));
  m.def("estimator_auc", &estimator_auc, py::arg("qualities"),
        py::arg("latent_qualities"));

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("verification_accuracy", &EvalReport::verification_accuracy)
      .def_readonly("tar_at_far", &EvalReport::tar_at_far)
      .def_readonly("identification_top1", &EvalReport::identification_top1)
      .def_readonly("mean_prototype_angle_deg", &EvalReport::mean_prototype_angle_deg)
      .def_readonly("estimator_auc", &EvalReport::estimator_auc)
      .def_readonly("config_fingerprint", &EvalReport::config_fingerprint)
      .def_readonly("seeds", &EvalReport::seeds);
  m.def("evaluate_pipeline", &evaluate_pipeline, py::arg("config"), py::arg("encoder"),
        py::arg("memory"), py::arg("world"), py::arg("eval_samples"));

  // config
  py::class_<RunConfig>(m, "RunConfig").def(py::init<>());
  m.def("parse_config_text", &parse_config_text, py::arg("text"));
  m.def("apply_override", &apply_override, py::arg("config"), py::arg("key"),
        py::arg("value"));
  m.def("validate_config", &validate, py::arg("config"));
  m.def("render_config", &render_config, py::arg("config"));
  m.def("config_fingerprint", &config_fingerprint, py::arg("config"));
  m.def("world_config", &world_config, py::arg("config"));
  m.def("train_config", &train_config, py::arg("config"));

  py::class_<MetricSummary>(m, "MetricSummary")
      .def_readonly("mean_base", &MetricSummary::mean_base)
      .def_readonly("mean_variant", &MetricSummary::mean_variant)
      .def_readonly("mean_delta", &MetricSummary::mean_delta)
      .def_readonly("wins", &MetricSummary::wins)
      .def_readonly("ties", &MetricSummary::ties)
      .def_readonly("losses", &MetricSummary::losses)
      .def_readonly("higher_is_better", &MetricSummary::higher_is_better);
  py::class_<AbSeedResult>(m, "AbSeedResult")
      .def_readonly("seed", &AbSeedResult::seed)
      .def_readonly("base", &AbSeedResult::base)
      .def_readonly("variant", &AbSeedResult::variant);
  py::class_<AbReport>(m, "AbReport")
      .def_readonly("metrics", &AbReport::metrics)
      .def_readonly("rows", &AbReport::rows)
      .def_readonly("summary", &AbReport::summary);
  m.def("ab_compare", &ab_compare, py::arg("base"), py::arg("variant"),
        py::arg("num_seeds"));
}
