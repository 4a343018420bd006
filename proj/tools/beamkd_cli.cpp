// beamkd: command-line front end for the beam-prediction distillation pipeline.
//
//   beamkd generate        --config run.json --out out/
//   beamkd train-teacher   --config run.json --out out/ [--dataset out/dataset_snr15.bin]
//   beamkd train-baseline  --config run.json --out out/ [--dataset ...]
//   beamkd distill --mode ikd|rkd|self --config run.json --out out/ [--dataset ...] [--teacher ...]
//   beamkd evaluate        --config run.json --out out/ [--model a.model --model b.model ...]
//   beamkd report          --eval out/eval.json --out out/
//
// Exit codes: 0 success, 2 invalid configuration, 3 unreadable or malformed
// file, 4 other runtime failure; command-line syntax errors use CLI11's codes.

#include <charconv>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "beamkd/pipeline.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kFormat = 3, kRuntime = 4 };

beamkd::MlpArch parse_arch(const std::string& text) {
    beamkd::MlpArch arch;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string::npos ? text.size() : comma;
        std::size_t v = 0;
        const auto* first = text.data() + start;
        const auto* last = text.data() + end;
        const auto res = std::from_chars(first, last, v);
        if (first == last || res.ec != std::errc{} || res.ptr != last) {
            throw beamkd::ConfigError("--student-arch: expected comma-separated layer widths, got '" + text + "'");
        }
        arch.layer_dims.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return arch;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sub-6 GHz to mmWave beam prediction with knowledge distillation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "Run configuration (JSON); defaults are used when omitted")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Overrides the scenario, split and training seeds");
    app.add_option("--out", out_dir, "Output directory (default: output_dir from the config)");

    std::vector<std::string> datasets;
    auto add_datasets = [&datasets](CLI::App* sub) {
        sub->add_option("--dataset", datasets, "Dataset file(s); default: one per configured SNR in the output directory");
    };

    auto* generate = app.add_subcommand("generate", "Synthesize channels and build one labeled dataset per SNR");
    auto* teacher = app.add_subcommand("train-teacher", "Train the teacher network");
    add_datasets(teacher);
    auto* baseline = app.add_subcommand("train-baseline", "Train the student architecture without distillation");
    add_datasets(baseline);

    auto* distill = app.add_subcommand("distill", "Train a student from a pretrained teacher");
    add_datasets(distill);
    std::string mode_name;
    std::string teacher_path;
    std::string student_arch;
    distill->add_option("--mode", mode_name, "Distillation mode")
        ->check(CLI::IsMember({"ikd", "rkd", "self"}));
    distill->add_option("--teacher", teacher_path, "Teacher model (default: teacher_snr<X>.model in the output directory)");
    distill->add_option("--student-arch", student_arch, "Student layer widths, e.g. 256,64,64,64");

    auto* evaluate = app.add_subcommand("evaluate", "Top-k accuracy and spectral efficiency on the test split");
    add_datasets(evaluate);
    std::vector<std::string> models;
    std::string channels;
    evaluate->add_option("--model", models, "Model file(s); default: every .model in the output directory");
    evaluate->add_option("--channels", channels, "Channel file (default: channels.bin in the output directory)");

    auto* report = app.add_subcommand("report", "Complexity table and CSV curves from an evaluation report");
    std::string eval_path;
    report->add_option("--eval", eval_path, "Evaluation report (default: eval.json in the output directory)");

    CLI11_PARSE(app, argc, argv);

    try {
        beamkd::RunConfig cfg = config_path.empty() ? beamkd::RunConfig{} : beamkd::load_run_config(config_path);
        if (seed) {
            cfg.set_seed(*seed);
        }
        const std::filesystem::path out = out_dir.empty() ? cfg.output_dir : std::filesystem::path(out_dir);
        const std::vector<std::filesystem::path> ds(datasets.begin(), datasets.end());
        std::ostream& log = std::cerr;

        if (generate->parsed()) {
            beamkd::cmd_generate(cfg, out, log);
        } else if (teacher->parsed()) {
            beamkd::cmd_train_teacher(cfg, ds, out, log);
        } else if (baseline->parsed()) {
            beamkd::cmd_train_baseline(cfg, ds, out, log);
        } else if (distill->parsed()) {
            beamkd::DistillOptions opt;
            opt.mode = mode_name.empty() ? cfg.mode : beamkd::distill_mode_from_string(mode_name);
            if (!teacher_path.empty()) opt.teacher = teacher_path;
            if (!student_arch.empty()) opt.student_arch = parse_arch(student_arch);
            beamkd::cmd_distill(cfg, ds, opt, out, log);
        } else if (evaluate->parsed()) {
            beamkd::EvaluateInputs in;
            in.models.assign(models.begin(), models.end());
            in.datasets = ds;
            if (!channels.empty()) in.channels = channels;
            beamkd::cmd_evaluate(cfg, in, out, log);
        } else if (report->parsed()) {
            beamkd::cmd_report(eval_path.empty() ? out / "eval.json" : std::filesystem::path(eval_path), out, log);
        }
    } catch (const beamkd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const beamkd::FormatError& e) {
        std::cerr << "file error (" << beamkd::to_string(e.kind()) << "): " << e.what() << "\n";
        return kFormat;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}
