#ifndef BEAMKD_PIPELINE_HPP
#define BEAMKD_PIPELINE_HPP

// Run configuration and the pipeline stages behind the command-line tool:
// generate -> train-teacher / train-baseline -> distill -> evaluate -> report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "beamkd/beams.hpp"
#include "beamkd/dataset.hpp"
#include "beamkd/distill.hpp"
#include "beamkd/io.hpp"
#include "beamkd/metrics.hpp"
#include "beamkd/neuralnet.hpp"
#include "beamkd/scenario.hpp"

namespace beamkd {

struct RunConfig {
    ScenarioConfig scenario;
    SplitFractions split;
    std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
    std::uint64_t dataset_seed = 0;
    TrainConfig training;
    MlpArch teacher_arch{{256, 1024, 1024, 1024, 1024, 64}};
    MlpArch student_arch{{256, 64, 64, 64}};
    DistillMode mode = DistillMode::ikd;
    IkdConfig ikd;
    RkdConfig rkd;
    std::vector<std::size_t> topk{1, 3};
    std::filesystem::path output_dir = "out";

    void set_seed(std::uint64_t seed) {
        scenario.seed = seed;
        dataset_seed = seed;
        training.seed = seed;
    }

    void validate() const {
        scenario.validate();
        split.validate();
        if (snr_db.empty()) {
            throw ConfigError("dataset.snr_db: at least one SNR value is required");
        }
        for (std::size_t i = 0; i < snr_db.size(); ++i) {
            if (!std::isfinite(snr_db[i])) {
                throw ConfigError("dataset.snr_db: entry " + std::to_string(i) + " is not finite");
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (snr_db[j] == snr_db[i]) {
                    throw ConfigError("dataset.snr_db: duplicate value " + json(snr_db[i]).dump());
                }
            }
        }
        training.validate();
        const std::size_t d_in = 2 * scenario.n_sub6 * scenario.k_sub6;
        auto check_arch = [&](const MlpArch& arch, const std::string& field) {
            try {
                arch.validate();
            } catch (const ConfigError& e) {
                throw ConfigError(field + ": " + e.what());
            }
            if (arch.input_dim() != d_in || arch.output_dim() != scenario.n_mmw) {
                throw ConfigError(field + ": " + describe(arch) + " must start at 2*n_sub6*k_sub6 = " +
                                  std::to_string(d_in) + " and end at n_mmw = " + std::to_string(scenario.n_mmw));
            }
        };
        check_arch(teacher_arch, "training.teacher_arch");
        check_arch(student_arch, "training.student_arch");
        ikd.validate();
        rkd.validate();
        if (topk.empty()) {
            throw ConfigError("evaluation.topk: at least one k is required");
        }
        for (const auto k : topk) {
            if (k < 1 || k > scenario.n_mmw) {
                throw ConfigError("evaluation.topk: k = " + std::to_string(k) + " outside [1, n_mmw]");
            }
        }
        if (output_dir.empty()) {
            throw ConfigError("output_dir: must not be empty");
        }
    }
};

namespace detail {

inline MlpArch arch_from_json(const json& j, const std::string& field, Activation activation) {
    if (!j.is_array()) {
        throw ConfigError(field + ": expected an array of layer widths");
    }
    MlpArch arch;
    arch.activation = activation;
    for (const auto& v : j) {
        if (!is_non_negative_integer(v)) {
            throw ConfigError(field + ": layer widths must be non-negative integers (got " + v.dump() + ")");
        }
        arch.layer_dims.push_back(v.get<std::size_t>());
    }
    return arch;
}

} // namespace detail

/// Fields missing from `j` keep their defaults; unknown fields are errors.
inline RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    reject_unknown_keys(j, {"scenario", "dataset", "training", "distill", "evaluation", "output_dir"}, "config");
    if (j.contains("scenario")) {
        reject_unknown_keys(j["scenario"],
                            {"n_sub6", "n_mmw", "k_sub6", "k_mmw", "bw_sub6_hz", "bw_mmw_hz", "fc_sub6_hz",
                             "fc_mmw_hz", "spacing_wavelengths", "bs_position", "ue_grid", "max_paths",
                             "nlos_gain_db", "max_excess_delay_s", "seed"},
                            "scenario");
        if (j["scenario"].contains("ue_grid")) {
            reject_unknown_keys(j["scenario"]["ue_grid"], {"origin", "step_m", "rows", "cols"}, "scenario.ue_grid");
        }
        cfg.scenario = scenario_from_json(j["scenario"]);
    }
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        reject_unknown_keys(d, {"split", "snr_db", "seed"}, "dataset");
        if (d.contains("split")) {
            reject_unknown_keys(d["split"], {"train", "val", "test"}, "dataset.split");
            read_optional(d["split"], "train", cfg.split.train, "dataset.split");
            read_optional(d["split"], "val", cfg.split.val, "dataset.split");
            read_optional(d["split"], "test", cfg.split.test, "dataset.split");
        }
        if (d.contains("snr_db") && !d["snr_db"].is_array()) {
            throw ConfigError("dataset.snr_db: expected an array of numbers");
        }
        read_optional(d, "snr_db", cfg.snr_db, "dataset");
        read_optional(d, "seed", cfg.dataset_seed, "dataset");
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        reject_unknown_keys(t,
                            {"epochs", "batch_size", "learning_rate", "adam", "seed", "shuffle", "activation",
                             "teacher_arch", "student_arch"},
                            "training");
        read_optional(t, "epochs", cfg.training.epochs, "training");
        read_optional(t, "batch_size", cfg.training.batch_size, "training");
        read_optional(t, "learning_rate", cfg.training.learning_rate, "training");
        read_optional(t, "seed", cfg.training.seed, "training");
        read_optional(t, "shuffle", cfg.training.shuffle, "training");
        if (t.contains("adam")) {
            reject_unknown_keys(t["adam"], {"beta1", "beta2", "epsilon"}, "training.adam");
            read_optional(t["adam"], "beta1", cfg.training.adam.beta1, "training.adam");
            read_optional(t["adam"], "beta2", cfg.training.adam.beta2, "training.adam");
            read_optional(t["adam"], "epsilon", cfg.training.adam.epsilon, "training.adam");
        }
        Activation act = Activation::relu;
        if (t.contains("activation")) {
            std::string name;
            read_optional(t, "activation", name, "training");
            try {
                act = activation_from_string(name);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("training.activation: ") + e.what());
            }
        }
        cfg.teacher_arch.activation = act;
        cfg.student_arch.activation = act;
        if (t.contains("teacher_arch")) {
            cfg.teacher_arch = detail::arch_from_json(t["teacher_arch"], "training.teacher_arch", act);
        }
        if (t.contains("student_arch")) {
            cfg.student_arch = detail::arch_from_json(t["student_arch"], "training.student_arch", act);
        }
    }
    if (j.contains("distill")) {
        const auto& d = j["distill"];
        reject_unknown_keys(d, {"mode", "ikd", "rkd"}, "distill");
        if (d.contains("mode")) {
            std::string mode;
            read_optional(d, "mode", mode, "distill");
            cfg.mode = distill_mode_from_string(mode);
        }
        if (d.contains("ikd")) {
            reject_unknown_keys(d["ikd"], {"temperature", "alpha"}, "distill.ikd");
            read_optional(d["ikd"], "temperature", cfg.ikd.temperature, "distill.ikd");
            read_optional(d["ikd"], "alpha", cfg.ikd.alpha, "distill.ikd");
        }
        if (d.contains("rkd")) {
            const auto& r = d["rkd"];
            reject_unknown_keys(r,
                                {"feature_layer", "weight_dist", "weight_angle", "epsilon", "max_pairs",
                                 "max_triplets"},
                                "distill.rkd");
            if (r.contains("feature_layer") && !r["feature_layer"].is_null()) {
                std::size_t layer = 0;
                read_optional(r, "feature_layer", layer, "distill.rkd");
                cfg.rkd.feature_layer = layer;
            }
            read_optional(r, "weight_dist", cfg.rkd.weight_dist, "distill.rkd");
            read_optional(r, "weight_angle", cfg.rkd.weight_angle, "distill.rkd");
            read_optional(r, "epsilon", cfg.rkd.epsilon, "distill.rkd");
            read_optional(r, "max_pairs", cfg.rkd.max_pairs, "distill.rkd");
            read_optional(r, "max_triplets", cfg.rkd.max_triplets, "distill.rkd");
        }
    }
    if (j.contains("evaluation")) {
        reject_unknown_keys(j["evaluation"], {"topk"}, "evaluation");
        read_optional(j["evaluation"], "topk", cfg.topk, "evaluation");
    }
    if (j.contains("output_dir")) {
        std::string dir;
        read_optional(j, "output_dir", dir, "config");
        cfg.output_dir = dir;
    }
    return cfg;
}

inline json to_json(const RunConfig& c) {
    json rkd{{"weight_dist", c.rkd.weight_dist},
             {"weight_angle", c.rkd.weight_angle},
             {"epsilon", c.rkd.epsilon},
             {"max_pairs", c.rkd.max_pairs},
             {"max_triplets", c.rkd.max_triplets}};
    rkd["feature_layer"] = c.rkd.feature_layer ? json(*c.rkd.feature_layer) : json(nullptr);
    return {
        {"scenario", to_json(c.scenario)},
        {"dataset",
         {{"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
          {"snr_db", c.snr_db},
          {"seed", c.dataset_seed}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"learning_rate", c.training.learning_rate},
          {"adam", {{"beta1", c.training.adam.beta1}, {"beta2", c.training.adam.beta2}, {"epsilon", c.training.adam.epsilon}}},
          {"seed", c.training.seed},
          {"shuffle", c.training.shuffle},
          {"activation", to_string(c.teacher_arch.activation)},
          {"teacher_arch", c.teacher_arch.layer_dims},
          {"student_arch", c.student_arch.layer_dims}}},
        {"distill",
         {{"mode", to_string(c.mode)},
          {"ikd", {{"temperature", c.ikd.temperature}, {"alpha", c.ikd.alpha}}},
          {"rkd", rkd}}},
        {"evaluation", {{"topk", c.topk}}},
        {"output_dir", c.output_dir.string()},
    };
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(FormatErrorKind::io, "cannot open config '" + path.string() + "'");
    }
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// File naming

/// "15" for 15 dB, "-5" for -5 dB, "7.5" for 7.5 dB.
inline std::string snr_tag(double snr_db) {
    std::ostringstream os;
    os << std::setprecision(6) << snr_db;
    return os.str();
}

inline std::filesystem::path channels_path(const std::filesystem::path& dir) { return dir / "channels.bin"; }

inline std::filesystem::path dataset_path(const std::filesystem::path& dir, double snr_db) {
    return dir / ("dataset_snr" + snr_tag(snr_db) + ".bin");
}

inline std::filesystem::path model_path(const std::filesystem::path& dir, const std::string& name, double snr_db) {
    return dir / (name + "_snr" + snr_tag(snr_db) + ".model");
}

inline std::string student_name(DistillMode mode) { return "student_" + to_string(mode); }

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatErrorKind::io, "cannot write '" + path.string() + "'");
    }
    out << text;
    if (!out) {
        throw FormatError(FormatErrorKind::io, "write failed for '" + path.string() + "'");
    }
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw FormatError(FormatErrorKind::io, "cannot create directory '" + dir.string() + "': " + ec.message());
    }
}

inline std::string csv_number(double v) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline constexpr const char* kLossCsvHeader = "epoch,train_loss,val_loss,val_ce";

/// Appends one CSV row per finished epoch to `path` and echoes it to `log`.
class LossCsvStream {
public:
    LossCsvStream(const std::filesystem::path& path, std::ostream& log, std::string label)
        : out_(path, std::ios::binary | std::ios::trunc), log_(log), label_(std::move(label)) {
        if (!out_) {
            throw FormatError(FormatErrorKind::io, "cannot write '" + path.string() + "'");
        }
        out_ << kLossCsvHeader << "\n" << std::flush;
    }

    void operator()(const EpochRecord& r) {
        const std::string row = std::to_string(r.epoch) + "," + csv_number(r.train_loss) + "," +
                                csv_number(r.val_loss) + "," + csv_number(r.val_ce);
        out_ << row << "\n" << std::flush;
        log_ << label_ << " " << row << "\n" << std::flush;
    }

private:
    std::ofstream out_;
    std::ostream& log_;
    std::string label_;
};

inline json training_info(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
            {"seed", t.seed},
            {"shuffle", t.shuffle}};
}

/// Datasets named explicitly, or one per configured SNR in the output directory.
inline std::vector<std::filesystem::path> dataset_inputs(const RunConfig& cfg,
                                                         const std::vector<std::filesystem::path>& given,
                                                         const std::filesystem::path& out) {
    if (!given.empty()) {
        return given;
    }
    std::vector<std::filesystem::path> paths;
    for (const double snr : cfg.snr_db) {
        paths.push_back(dataset_path(out, snr));
    }
    return paths;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Channels for the configured scenario plus one labeled dataset per SNR.
inline std::vector<std::filesystem::path> cmd_generate(const RunConfig& cfg, const std::filesystem::path& out,
                                                       std::ostream& log) {
    cfg.validate();
    detail::ensure_dir(out);
    log << "generating " << cfg.scenario.ue_grid.size() << " channel samples\n";
    const auto samples = generate_scenario(cfg.scenario);
    std::vector<std::filesystem::path> written{channels_path(out)};
    save_channel_file(written.front(), cfg.scenario, samples);
    const Codebook cb = dft_codebook(cfg.scenario.n_mmw);
    for (const double snr : cfg.snr_db) {
        const LabeledDataset ds = build_dataset(samples, cb, snr, cfg.split, cfg.dataset_seed);
        written.push_back(dataset_path(out, snr));
        save_dataset(written.back(), ds);
        log << "wrote " << written.back().string() << " (S=" << ds.size() << ", train=" << ds.split.train.size()
            << ", val=" << ds.split.val.size() << ", test=" << ds.split.test.size() << ")\n";
    }
    return written;
}

namespace detail {

inline std::filesystem::path train_one(const RunConfig& cfg, const std::filesystem::path& dataset,
                                       const MlpArch& arch, const std::string& name, const std::string& role,
                                       const std::filesystem::path& out, std::ostream& log) {
    const LabeledDataset ds = load_dataset(dataset);
    check_arch_matches(arch, ds, "training." + role + "_arch");
    const auto path = model_path(out, name, ds.snr_db);
    LossCsvStream csv(out / (name + "_snr" + snr_tag(ds.snr_db) + "_loss.csv"), log, name);
    log << "training " << name << " " << describe(arch) << " on " << dataset.string() << "\n";
    const auto res = train_supervised<float>(arch, ds, cfg.training, std::ref(csv));
    save_model(path, res.model,
               {{"name", name},
                {"role", role},
                {"snr_db", ds.snr_db},
                {"dataset", dataset.filename().string()},
                {"seed", cfg.training.seed},
                {"training", training_info(cfg.training)},
                {"loss_trace", to_json(res.trace)}});
    log << "wrote " << path.string() << "\n";
    return path;
}

} // namespace detail

inline std::vector<std::filesystem::path> cmd_train_teacher(const RunConfig& cfg,
                                                            const std::vector<std::filesystem::path>& datasets,
                                                            const std::filesystem::path& out, std::ostream& log) {
    cfg.validate();
    detail::ensure_dir(out);
    std::vector<std::filesystem::path> written;
    for (const auto& d : detail::dataset_inputs(cfg, datasets, out)) {
        written.push_back(detail::train_one(cfg, d, cfg.teacher_arch, "teacher", "teacher", out, log));
    }
    return written;
}

inline std::vector<std::filesystem::path> cmd_train_baseline(const RunConfig& cfg,
                                                             const std::vector<std::filesystem::path>& datasets,
                                                             const std::filesystem::path& out, std::ostream& log) {
    cfg.validate();
    detail::ensure_dir(out);
    std::vector<std::filesystem::path> written;
    for (const auto& d : detail::dataset_inputs(cfg, datasets, out)) {
        written.push_back(detail::train_one(cfg, d, cfg.student_arch, "baseline", "student", out, log));
    }
    return written;
}

struct DistillOptions {
    DistillMode mode = DistillMode::ikd;
    std::optional<std::filesystem::path> teacher; ///< default: teacher_snr<X>.model next to the outputs
    std::optional<MlpArch> student_arch;          ///< default: config student arch, or the teacher's for self
};

inline std::vector<std::filesystem::path> cmd_distill(const RunConfig& cfg,
                                                      const std::vector<std::filesystem::path>& datasets,
                                                      const DistillOptions& opt, const std::filesystem::path& out,
                                                      std::ostream& log) {
    cfg.validate();
    detail::ensure_dir(out);
    const auto inputs = detail::dataset_inputs(cfg, datasets, out);
    if (opt.teacher && inputs.size() != 1) {
        throw ConfigError("distill: --teacher needs exactly one dataset");
    }
    std::vector<std::filesystem::path> written;
    for (const auto& d : inputs) {
        const LabeledDataset ds = load_dataset(d);
        const auto teacher_file = opt.teacher.value_or(model_path(out, "teacher", ds.snr_db));
        const ModelFile teacher = load_model(teacher_file);
        if (teacher.header.contains("snr_db") && teacher.header["snr_db"].is_number() &&
            teacher.header["snr_db"].get<double>() != ds.snr_db) {
            throw ConfigError("distill: teacher '" + teacher_file.string() + "' was trained at " +
                              teacher.header["snr_db"].dump() + " dB but dataset '" + d.string() + "' is at " +
                              json(ds.snr_db).dump() + " dB");
        }
        MlpArch arch = opt.student_arch.value_or(opt.mode == DistillMode::self ? teacher.model.arch : cfg.student_arch);
        arch.activation = teacher.model.arch.activation;

        const std::string name = student_name(opt.mode);
        DistillRun<float> run{teacher.model, arch, opt.mode, cfg.ikd, cfg.rkd, cfg.training};
        validate_run(run, ds);
        detail::LossCsvStream csv(out / (name + "_snr" + snr_tag(ds.snr_db) + "_loss.csv"), log, name);
        log << "distilling " << name << " " << describe(arch) << " from " << teacher_file.string() << "\n";
        const auto res = distill_train(run, ds, std::ref(csv), &log);

        json info{{"name", name},
                  {"role", "student"},
                  {"mode", to_string(opt.mode)},
                  {"snr_db", ds.snr_db},
                  {"dataset", d.filename().string()},
                  {"teacher", teacher_file.filename().string()},
                  {"seed", cfg.training.seed},
                  {"training", detail::training_info(cfg.training)},
                  {"loss_trace", to_json(res.trace)}};
        if (opt.mode == DistillMode::rkd) {
            info["rkd"] = to_json(cfg)["distill"]["rkd"];
            info["angle_term_skipped"] = res.angle_term_skipped;
        } else {
            info["ikd"] = {{"temperature", cfg.ikd.temperature}, {"alpha", cfg.ikd.alpha}};
        }
        const auto path = model_path(out, name, ds.snr_db);
        save_model(path, res.student, info);
        log << "wrote " << path.string() << "\n";
        written.push_back(path);
    }
    return written;
}

struct EvaluateInputs {
    std::vector<std::filesystem::path> models;   ///< default: every *.model in the output directory
    std::vector<std::filesystem::path> datasets; ///< default: one per configured SNR
    std::optional<std::filesystem::path> channels;
};

/// Test-split metrics for every model at the SNR it was trained for.
inline EvalReport evaluate_models(const RunConfig& cfg, const EvaluateInputs& in, const std::filesystem::path& out) {
    const auto channel_file = load_channel_file(in.channels.value_or(channels_path(out)));
    const Codebook cb = dft_codebook(static_cast<std::size_t>(channel_file.config.n_mmw));

    std::vector<LabeledDataset> datasets;
    for (const auto& d : detail::dataset_inputs(cfg, in.datasets, out)) {
        datasets.push_back(load_dataset(d));
        const auto& ds = datasets.back();
        if (ds.size() != channel_file.samples.size()) {
            throw ConfigError("evaluate: dataset '" + d.string() + "' has " + std::to_string(ds.size()) +
                              " samples but the channel file has " + std::to_string(channel_file.samples.size()));
        }
    }

    std::vector<std::filesystem::path> models = in.models;
    if (models.empty()) {
        std::error_code ec;
        for (const auto& e : std::filesystem::directory_iterator(out, ec)) {
            if (e.path().extension() == ".model") models.push_back(e.path());
        }
        std::sort(models.begin(), models.end());
    }
    if (models.empty()) {
        throw ConfigError("evaluate: no model files given or found in '" + out.string() + "'");
    }

    std::vector<std::size_t> ks = cfg.topk;
    for (const std::size_t k : {std::size_t{1}, std::size_t{3}}) {
        if (std::find(ks.begin(), ks.end(), k) == ks.end() && k <= cb.size()) ks.push_back(k);
    }
    std::sort(ks.begin(), ks.end());

    EvalReport report;
    std::map<std::string, std::size_t> slot;
    for (const auto& path : models) {
        const ModelFile mf = load_model(path);
        const std::string name = mf.header.value("name", path.stem().string());
        if (!mf.header.contains("snr_db") || !mf.header["snr_db"].is_number()) {
            throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "' has no snr_db field");
        }
        const double snr = mf.header["snr_db"].get<double>();
        const auto it = std::find_if(datasets.begin(), datasets.end(),
                                     [snr](const LabeledDataset& ds) { return ds.snr_db == snr; });
        if (it == datasets.end()) {
            throw ConfigError("evaluate: no dataset at " + json(snr).dump() + " dB for model '" + path.string() + "'");
        }
        const LabeledDataset& ds = *it;
        check_arch_matches(mf.model.arch, ds, "evaluate: model '" + path.string() + "'");

        const auto& test = ds.split.test;
        const Matrix<float> logits = predict(mf.model, ds.rows(test));
        const auto labels = ds.labels_of(test);
        std::vector<const Eigen::MatrixXcf*> channels;
        for (const auto i : test) channels.push_back(&channel_file.samples[i].h_mmw);
        const RateParams params = RateParams::from_db(snr, static_cast<std::size_t>(channel_file.config.k_mmw));

        SnrRecord rec;
        rec.snr_db = snr;
        rec.n_test = test.size();
        for (const auto k : ks) rec.topk_acc.emplace_back(k, topk_accuracy(logits, labels, k));
        rec.se_top1 = spectral_efficiency_topk(logits, channels, cb, params, 1);
        rec.se_top3 = spectral_efficiency_topk(logits, channels, cb, params, std::min<std::size_t>(3, cb.size()));
        rec.se_oracle = oracle_spectral_efficiency(channels, cb, params);
        if (mf.header.contains("loss_trace")) rec.trace = loss_trace_from_json(mf.header["loss_trace"]);

        auto [pos, inserted] = slot.try_emplace(name, report.models.size());
        if (inserted) {
            report.models.push_back({name, mf.model.arch, count_params(mf.model.arch), count_flops(mf.model.arch), {}});
        } else if (report.models[pos->second].arch != mf.model.arch) {
            throw ConfigError("evaluate: models named '" + name + "' have different architectures");
        }
        auto& per_snr = report.models[pos->second].per_snr;
        if (std::any_of(per_snr.begin(), per_snr.end(), [snr](const SnrRecord& r) { return r.snr_db == snr; })) {
            throw ConfigError("evaluate: two '" + name + "' models at " + json(snr).dump() + " dB");
        }
        per_snr.push_back(std::move(rec));
    }
    for (auto& m : report.models) {
        std::sort(m.per_snr.begin(), m.per_snr.end(),
                  [](const SnrRecord& a, const SnrRecord& b) { return a.snr_db < b.snr_db; });
    }
    return report;
}

inline std::vector<std::filesystem::path> cmd_evaluate(const RunConfig& cfg, const EvaluateInputs& in,
                                                       const std::filesystem::path& out, std::ostream& log) {
    cfg.validate();
    detail::ensure_dir(out);
    const EvalReport report = evaluate_models(cfg, in, out);
    const std::vector<std::filesystem::path> written{out / "eval.json", out / "eval.csv"};
    detail::write_text(written[0], to_json(report).dump(2) + "\n");
    detail::write_text(written[1], to_csv(report));
    for (const auto& m : report.models) {
        for (const auto& r : m.per_snr) {
            log << m.name << " @ " << snr_tag(r.snr_db) << " dB: top1 " << detail::csv_number(r.accuracy(1))
                << ", top3 " << detail::csv_number(r.accuracy(3)) << ", SE top1 " << detail::csv_number(r.se_top1)
                << " / top3 " << detail::csv_number(r.se_top3) << " / oracle " << detail::csv_number(r.se_oracle)
                << " bits/s/Hz\n";
        }
    }
    log << "wrote " << written[0].string() << "\n";
    return written;
}

inline constexpr const char* kAccuracyCsvHeader = "model,snr_db,k,accuracy";
inline constexpr const char* kSeCsvHeader = "model,snr_db,se_top1,se_top3,se_oracle";
inline constexpr const char* kValLossCsvHeader = "model,snr_db,epoch,train_loss,val_loss,val_ce";

/// Markdown complexity table and plot-ready CSV curves from an eval report.
inline std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& eval_path,
                                                     const std::filesystem::path& out, std::ostream& log) {
    std::ifstream in(eval_path);
    if (!in) {
        throw FormatError(FormatErrorKind::io, "cannot open eval report '" + eval_path.string() + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + eval_path.string() + "': " + e.what());
    }
    const EvalReport report = eval_report_from_json(j);
    if (report.models.empty()) {
        throw ConfigError("report: '" + eval_path.string() + "' contains no models");
    }
    detail::ensure_dir(out);

    std::ostringstream acc, se, loss;
    acc << kAccuracyCsvHeader << "\n";
    se << kSeCsvHeader << "\n";
    loss << kValLossCsvHeader << "\n";
    for (const auto& m : report.models) {
        for (const auto& r : m.per_snr) {
            const std::string key = m.name + "," + detail::csv_number(r.snr_db);
            for (const auto& [k, a] : r.topk_acc) {
                acc << key << "," << k << "," << detail::csv_number(a) << "\n";
            }
            se << key << "," << detail::csv_number(r.se_top1) << "," << detail::csv_number(r.se_top3) << ","
               << detail::csv_number(r.se_oracle) << "\n";
            for (const auto& e : r.trace) {
                loss << key << "," << e.epoch << "," << detail::csv_number(e.train_loss) << ","
                     << detail::csv_number(e.val_loss) << "," << detail::csv_number(e.val_ce) << "\n";
            }
        }
    }
    const std::vector<std::filesystem::path> written{out / "complexity.md", out / "accuracy_vs_snr.csv",
                                                     out / "se_vs_snr.csv", out / "val_loss.csv"};
    detail::write_text(written[0], complexity_table_markdown(report));
    detail::write_text(written[1], acc.str());
    detail::write_text(written[2], se.str());
    detail::write_text(written[3], loss.str());
    for (const auto& p : written) log << "wrote " << p.string() << "\n";
    return written;
}

} // namespace beamkd

#endif
