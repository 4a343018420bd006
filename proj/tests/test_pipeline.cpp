#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "beamkd/pipeline.hpp"

using namespace beamkd;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
    RunConfig cfg;
    cfg.scenario.n_sub6 = 2;
    cfg.scenario.k_sub6 = 8;
    cfg.scenario.n_mmw = 16;
    cfg.scenario.k_mmw = 8;
    cfg.scenario.ue_grid.rows = 10;
    cfg.scenario.ue_grid.cols = 10;
    cfg.snr_db = {5.0, 15.0};
    cfg.training.epochs = 2;
    cfg.training.batch_size = 16;
    cfg.teacher_arch = MlpArch{{32, 48, 48, 16}};
    cfg.student_arch = MlpArch{{32, 8, 8, 16}};
    cfg.set_seed(4);
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("beamkd_test_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string config_error(const json& j) {
    try {
        run_config_from_json(j).validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

void run_pipeline(const RunConfig& cfg, const fs::path& out) {
    std::ostringstream log;
    cmd_generate(cfg, out, log);
    cmd_train_teacher(cfg, {}, out, log);
    cmd_train_baseline(cfg, {}, out, log);
    cmd_distill(cfg, {}, {DistillMode::ikd, {}, {}}, out, log);
    cmd_distill(cfg, {}, {DistillMode::rkd, {}, {}}, out, log);
    cmd_distill(cfg, {}, {DistillMode::self, {}, {}}, out, log);
    cmd_evaluate(cfg, {}, out, log);
    cmd_report(out / "eval.json", out, log);
}

} // namespace

TEST(RunConfig, DefaultsDescribeTheReferenceSetup) {
    const RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.teacher_arch.layer_dims, (std::vector<std::size_t>{256, 1024, 1024, 1024, 1024, 64}));
    EXPECT_EQ(cfg.student_arch.layer_dims, (std::vector<std::size_t>{256, 64, 64, 64}));
    EXPECT_EQ(cfg.ikd.temperature, 10.0);
    EXPECT_EQ(cfg.ikd.alpha, 0.9);
    EXPECT_EQ(cfg.scenario.ue_grid.size(), 2000u);
}

TEST(RunConfig, JsonRoundTrip) {
    auto cfg = small_config();
    cfg.mode = DistillMode::rkd;
    cfg.rkd.feature_layer = 1;
    cfg.topk = {1, 3, 5};
    const auto j = to_json(cfg);
    const auto back = run_config_from_json(json::parse(j.dump()));
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(to_json(run_config_from_json(json::object())), to_json(RunConfig{}));
}

TEST(RunConfig, ErrorsNameTheField) {
    EXPECT_NE(config_error({{"dataset", {{"snr_db", json::array()}}}}).find("dataset.snr_db"), std::string::npos);
    EXPECT_NE(config_error({{"training", {{"epochs", 0}}}}).find("training.epochs"), std::string::npos);
    EXPECT_NE(config_error({{"training", {{"epochs", -3}}}}).find("training.epochs"), std::string::npos);
    EXPECT_NE(config_error({{"training", {{"lr", 0.1}}}}).find("training.lr: unknown field"), std::string::npos);
    EXPECT_NE(config_error({{"distill", {{"mode", "hint"}}}}).find("distill.mode"), std::string::npos);
    EXPECT_NE(config_error({{"distill", {{"ikd", {{"alpha", 2.0}}}}}}).find("distill.ikd.alpha"), std::string::npos);
    EXPECT_NE(config_error({{"scenario", {{"n_sub6", 8}}}}).find("training.teacher_arch"), std::string::npos);
    EXPECT_NE(config_error({{"scenario", {{"ue_grid", {{"rows", 0}}}}}}).find("scenario.ue_grid"), std::string::npos);
    EXPECT_NE(config_error({{"dataset", {{"split", {{"train", 0.9}}}}}}).find("dataset.split"), std::string::npos);
    EXPECT_NE(config_error({{"evaluation", {{"topk", {0}}}}}).find("evaluation.topk"), std::string::npos);
    EXPECT_NE(config_error({{"dataset", {{"snr_db", {5, 5}}}}}).find("duplicate"), std::string::npos);
}

TEST(RunConfig, SeedOverrideReachesEveryStage) {
    RunConfig cfg;
    cfg.set_seed(99);
    EXPECT_EQ(cfg.scenario.seed, 99u);
    EXPECT_EQ(cfg.dataset_seed, 99u);
    EXPECT_EQ(cfg.training.seed, 99u);
}

TEST(Generate, WritesOneDatasetPerSnr) {
    const auto out = fresh_dir("generate");
    const auto cfg = small_config();
    std::ostringstream log;
    const auto files = cmd_generate(cfg, out, log);
    ASSERT_EQ(files.size(), 3u);
    const auto ch = load_channel_file(out / "channels.bin");
    EXPECT_EQ(ch.samples.size(), 100u);
    for (const double snr : cfg.snr_db) {
        const auto ds = load_dataset(dataset_path(out, snr));
        EXPECT_EQ(ds.size(), 100u);
        EXPECT_EQ(ds.snr_db, snr);
        EXPECT_EQ(ds.d_in, 32u);
    }
    EXPECT_EQ(dataset_path(out, 15.0).filename(), "dataset_snr15.bin");
    EXPECT_EQ(dataset_path(out, -7.5).filename(), "dataset_snr-7.5.bin");
}

TEST(Generate, DeterministicBytes) {
    const auto a = fresh_dir("gen_a");
    const auto b = fresh_dir("gen_b");
    std::ostringstream log;
    cmd_generate(small_config(), a, log);
    cmd_generate(small_config(), b, log);
    for (const auto* name : {"channels.bin", "dataset_snr5.bin", "dataset_snr15.bin"}) {
        EXPECT_EQ(read_bytes(a / name), read_bytes(b / name)) << name;
    }
}

TEST(Generate, EmptySnrListIsRejected) {
    auto cfg = small_config();
    cfg.snr_db.clear();
    std::ostringstream log;
    EXPECT_THROW(cmd_generate(cfg, fresh_dir("gen_empty"), log), ConfigError);
}

class PipelineStages : public ::testing::Test {
protected:
    void SetUp() override {
        cfg = small_config();
        cfg.snr_db = {15.0};
        out = fresh_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
        cmd_generate(cfg, out, log);
        dataset = dataset_path(out, 15.0);
    }

    RunConfig cfg;
    fs::path out;
    fs::path dataset;
    std::ostringstream log;
};

TEST_F(PipelineStages, ZeroLearningRateSavesInitialModel) {
    cfg.training.learning_rate = 0.0;
    const auto files = cmd_train_teacher(cfg, {dataset}, out, log);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_EQ(files[0].filename(), "teacher_snr15.model");
    const auto mf = load_model(files[0]);
    EXPECT_TRUE(mf.model == init<float>(cfg.teacher_arch, cfg.training.seed));
    EXPECT_EQ(mf.header.at("snr_db").get<double>(), 15.0);
    EXPECT_EQ(mf.header.at("loss_trace").size(), cfg.training.epochs);
}

TEST_F(PipelineStages, LossCsvIsStreamedPerEpoch) {
    cfg.training.epochs = 4;
    cmd_train_baseline(cfg, {dataset}, out, log);
    std::istringstream csv(read_bytes(out / "baseline_snr15_loss.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "epoch,train_loss,val_loss,val_ce");
    std::vector<double> train_loss;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        EXPECT_EQ(std::stoul(field), train_loss.size() + 1);
        std::getline(row, field, ',');
        train_loss.push_back(std::stod(field));
    }
    ASSERT_EQ(train_loss.size(), 4u);
    EXPECT_LT(train_loss.back(), train_loss.front());
    EXPECT_NE(log.str().find("baseline 4,"), std::string::npos);
}

TEST_F(PipelineStages, IkdWithAlphaZeroMatchesBaseline) {
    cmd_train_teacher(cfg, {dataset}, out, log);
    cmd_train_baseline(cfg, {dataset}, out, log);
    cfg.ikd.alpha = 0.0;
    cmd_distill(cfg, {dataset}, {DistillMode::ikd, {}, {}}, out, log);
    const auto base = load_model(out / "baseline_snr15.model");
    const auto ikd = load_model(out / "student_ikd_snr15.model");
    EXPECT_TRUE(base.model == ikd.model);
    EXPECT_EQ(base.header.at("loss_trace")[1]["train_loss"], ikd.header.at("loss_trace")[1]["train_loss"]);
    EXPECT_EQ(read_bytes(out / "baseline_snr15_loss.csv").substr(0, 200).find("epoch"), 0u);
}

TEST_F(PipelineStages, SelfModeRejectsForeignArchitecture) {
    cmd_train_teacher(cfg, {dataset}, out, log);
    DistillOptions opt{DistillMode::self, {}, cfg.student_arch};
    EXPECT_THROW(cmd_distill(cfg, {dataset}, opt, out, log), ConfigError);
    EXPECT_FALSE(fs::exists(out / "student_self_snr15_loss.csv"));
    opt.student_arch.reset();
    const auto files = cmd_distill(cfg, {dataset}, opt, out, log);
    EXPECT_EQ(load_model(files[0]).model.arch, cfg.teacher_arch);
}

TEST_F(PipelineStages, RkdSmallBatchLogsWarning) {
    cmd_train_teacher(cfg, {dataset}, out, log);
    cfg.training.batch_size = 2;
    cfg.training.epochs = 1;
    std::ostringstream dlog;
    cmd_distill(cfg, {dataset}, {DistillMode::rkd, {}, {}}, out, dlog);
    EXPECT_NE(dlog.str().find("too small for the angle-wise term"), std::string::npos);
    EXPECT_TRUE(load_model(out / "student_rkd_snr15.model").header.at("angle_term_skipped").get<bool>());
}

TEST_F(PipelineStages, TeacherAtOtherSnrIsRejected) {
    cmd_train_teacher(cfg, {dataset}, out, log);
    auto other = cfg;
    other.snr_db = {5.0};
    const auto other_dir = fresh_dir("other_snr");
    cmd_generate(other, other_dir, log);
    DistillOptions opt{DistillMode::ikd, out / "teacher_snr15.model", {}};
    EXPECT_THROW(cmd_distill(cfg, {dataset_path(other_dir, 5.0)}, opt, out, log), ConfigError);
}

TEST_F(PipelineStages, OracleModelScoresPerfectly) {
    // Inputs replaced by the one-hot label, read out by an identity layer.
    auto ds = load_dataset(dataset);
    ds.inputs.setZero();
    for (std::size_t i = 0; i < ds.size(); ++i) ds.inputs(static_cast<Eigen::Index>(i), ds.labels[i]) = 1.0f;
    save_dataset(dataset, ds);
    auto net = init<float>(MlpArch{{32, 16}}, 0);
    net.weights[0].setZero();
    net.weights[0].leftCols(16).setIdentity();
    save_model(out / "oracle.model", net, {{"name", "oracle"}, {"snr_db", 15.0}});

    const auto report = evaluate_models(cfg, {{out / "oracle.model"}, {}, {}}, out);
    ASSERT_EQ(report.models.size(), 1u);
    const auto& r = report.models[0].per_snr.at(0);
    EXPECT_EQ(r.accuracy(1), 1.0);
    EXPECT_EQ(r.se_top1, r.se_oracle);
    EXPECT_EQ(r.n_test, ds.split.test.size());
    EXPECT_EQ(report.models[0].param_count, count_params(MlpArch{{32, 16}}));
}

TEST_F(PipelineStages, EvaluateNeedsMatchingDataset) {
    auto net = init<float>(cfg.student_arch, 0);
    save_model(out / "lost.model", net, {{"name", "lost"}, {"snr_db", 30.0}});
    EXPECT_THROW(evaluate_models(cfg, {{out / "lost.model"}, {}, {}}, out), ConfigError);
    save_model(out / "anon.model", net);
    EXPECT_THROW(evaluate_models(cfg, {{out / "anon.model"}, {}, {}}, out), FormatError);
}

TEST(Report, RejectsEmptyAndMissingInput) {
    const auto out = fresh_dir("report_empty");
    std::ostringstream log;
    EXPECT_THROW(cmd_report(out / "missing.json", out, log), FormatError);
    std::ofstream(out / "empty.json") << R"({"format": "beamkd-eval", "format_version": 1, "models": []})";
    EXPECT_THROW(cmd_report(out / "empty.json", out, log), ConfigError);
}

TEST(FullPipeline, EndToEndOutputsAndDeterminism) {
    const auto a = fresh_dir("full_a");
    const auto b = fresh_dir("full_b");
    const auto cfg = small_config();
    run_pipeline(cfg, a);
    run_pipeline(cfg, b);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto* expected : {"channels.bin", "dataset_snr5.bin", "teacher_snr15.model", "baseline_snr5.model",
                                 "student_ikd_snr15.model", "student_rkd_snr5.model", "student_self_snr15.model",
                                 "eval.json", "eval.csv", "complexity.md", "accuracy_vs_snr.csv", "se_vs_snr.csv",
                                 "val_loss.csv", "teacher_snr5_loss.csv"}) {
        EXPECT_TRUE(std::binary_search(names.begin(), names.end(), expected)) << expected;
    }
    for (const auto& n : names) {
        EXPECT_EQ(read_bytes(a / n), read_bytes(b / n)) << n;
    }

    const auto report = eval_report_from_json(json::parse(read_bytes(a / "eval.json")));
    ASSERT_EQ(report.models.size(), 5u);
    for (const auto& m : report.models) {
        EXPECT_EQ(m.param_count, count_params(m.arch));
        EXPECT_EQ(m.flop_count, count_flops(m.arch));
        ASSERT_EQ(m.per_snr.size(), 2u);
        EXPECT_LT(m.per_snr[0].snr_db, m.per_snr[1].snr_db);
        for (const auto& r : m.per_snr) {
            EXPECT_GE(r.accuracy(1), 0.0);
            EXPECT_LE(r.accuracy(1), r.accuracy(3));
            EXPECT_LE(r.accuracy(3), 1.0);
            EXPECT_LE(r.se_top1, r.se_top3);
            EXPECT_LE(r.se_top3, r.se_oracle);
            EXPECT_EQ(r.trace.size(), cfg.training.epochs);
        }
    }

    // Regenerating the report from the same evaluation is idempotent.
    const auto before = read_bytes(a / "val_loss.csv");
    std::ostringstream log;
    cmd_report(a / "eval.json", a, log);
    EXPECT_EQ(read_bytes(a / "val_loss.csv"), before);
    EXPECT_EQ(read_bytes(a / "accuracy_vs_snr.csv").substr(0, 26), "model,snr_db,k,accuracy\nba");
    EXPECT_EQ(read_bytes(a / "se_vs_snr.csv").rfind(kSeCsvHeader, 0), 0u);
}
