#include <algorithm>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "beamkd/dataset.hpp"

using namespace beamkd;
using cd = std::complex<double>;

namespace {

ScenarioConfig grid_config(std::size_t rows, std::size_t cols) {
    ScenarioConfig cfg;
    cfg.n_mmw = 16;
    cfg.k_mmw = 8;
    cfg.k_sub6 = 8;
    cfg.ue_grid.rows = rows;
    cfg.ue_grid.cols = cols;
    cfg.seed = 5;
    return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("beamkd_test_dataset_" + name);
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

} // namespace

TEST(EncodeInput, SingleEntry) {
    Eigen::MatrixXcd h(1, 1);
    h(0, 0) = cd(2, 3);
    const auto x = encode_input(h);
    ASSERT_EQ(x.size(), 2);
    EXPECT_EQ(x[0], 2.0);
    EXPECT_EQ(x[1], 3.0);
}

TEST(EncodeInput, RealChannelHasZeroImaginaryBlock) {
    Eigen::MatrixXcd h = Eigen::MatrixXd::Random(3, 5).cast<cd>();
    const auto x = encode_input(h);
    ASSERT_EQ(x.size(), 30);
    EXPECT_TRUE(x.tail(15).isZero(0.0));
}

TEST(EncodeInput, AntennaMajorLayout) {
    Eigen::MatrixXcd h(2, 3);
    for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 3; ++c) {
            h(a, c) = cd(10 * a + c, -(10 * a + c) - 0.5);
        }
    }
    const auto x = encode_input(h);
    const std::vector<double> expected{0, 1, 2, 10, 11, 12, -0.5, -1.5, -2.5, -10.5, -11.5, -12.5};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(x[static_cast<Eigen::Index>(i)], expected[i]) << i;
    }
}

TEST(EncodeInput, RoundTripIsExact) {
    const Eigen::MatrixXcd h = Eigen::MatrixXcd::Random(4, 32);
    const auto back = decode_input(encode_input(h), 4, 32);
    EXPECT_TRUE(back == h);
    EXPECT_THROW(decode_input(encode_input(h), 4, 31), std::invalid_argument);
}

TEST(MakeSplit, PartitionAndDeterminism) {
    const auto a = make_split(101, {}, 9);
    const auto b = make_split(101, {}, 9);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.train.size(), 71u);
    EXPECT_EQ(a.val.size(), 15u);
    EXPECT_EQ(a.test.size(), 15u);
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    all.insert(a.test.begin(), a.test.end());
    EXPECT_EQ(all.size(), 101u);
    EXPECT_EQ(*all.rbegin(), 100u);

    const auto c = make_split(101, {}, 10);
    EXPECT_NE(a.train, c.train);
}

TEST(MakeSplit, AllTrain) {
    const auto s = make_split(20, {1.0, 0.0, 0.0}, 0);
    EXPECT_EQ(s.train.size(), 20u);
    EXPECT_TRUE(s.val.empty());
    EXPECT_TRUE(s.test.empty());
}

TEST(MakeSplit, RejectsBadFractions) {
    EXPECT_THROW(make_split(10, {0.5, 0.5, 0.5}, 0), ConfigError);
    EXPECT_THROW(make_split(10, {1.2, -0.1, -0.1}, 0), ConfigError);
}

TEST(BuildDataset, ShapesScaleAndLabels) {
    const auto cfg = grid_config(10, 10);
    const auto samples = generate_scenario(cfg);
    const auto cb = dft_codebook(cfg.n_mmw);
    const auto ds = build_dataset(samples, cb, 10.0, {}, 3);
    ASSERT_EQ(ds.size(), 100u);
    EXPECT_EQ(ds.d_in, 2 * cfg.n_sub6 * cfg.k_sub6);
    EXPECT_EQ(ds.inputs.cols(), static_cast<Eigen::Index>(ds.d_in));
    EXPECT_EQ(ds.n_classes, cfg.n_mmw);
    for (const auto l : ds.labels) {
        EXPECT_LT(l, ds.n_classes);
    }
    float train_max = 0.0f;
    for (const auto i : ds.split.train) {
        train_max = std::max(train_max, ds.inputs.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff());
    }
    EXPECT_NEAR(train_max, 1.0f, 1e-6f);

    // Undoing the scale recovers the raw encoding.
    const auto raw = encode_input(samples[17].h_sub6);
    for (Eigen::Index j = 0; j < raw.size(); ++j) {
        EXPECT_NEAR(ds.inputs(17, j) * ds.scale, raw[j], 1e-5 * ds.scale);
    }
}

TEST(BuildDataset, LabelHistogramMatchesDirectRateScan) {
    const auto cfg = grid_config(10, 10);
    const auto samples = generate_scenario(cfg);
    const auto cb = dft_codebook(cfg.n_mmw);
    const double snr_db = 5.0;
    const auto ds = build_dataset(samples, cb, snr_db, {}, 0);

    const double snr = std::pow(10.0, snr_db / 10.0);
    std::map<std::size_t, int> expected;
    std::map<std::size_t, int> got;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Eigen::MatrixXcd h = samples[i].h_mmw.cast<cd>();
        std::size_t best = 0;
        double best_rate = -1.0;
        for (std::size_t q = 0; q < cb.size(); ++q) {
            double rate = 0.0;
            for (Eigen::Index k = 0; k < h.cols(); ++k) {
                cd g = 0.0;
                for (Eigen::Index m = 0; m < h.rows(); ++m) {
                    g += h(m, k) * cb.beams(m, static_cast<Eigen::Index>(q));
                }
                rate += std::log2(1.0 + snr * std::norm(g));
            }
            if (rate > best_rate) {
                best_rate = rate;
                best = q;
            }
        }
        ++expected[best];
        ++got[ds.labels[i]];
        EXPECT_EQ(ds.labels[i], best) << "sample " << i;
    }
    EXPECT_EQ(got, expected);
}

TEST(BuildDataset, SameSeedSameSplit) {
    const auto cfg = grid_config(5, 8);
    const auto samples = generate_scenario(cfg);
    const auto cb = dft_codebook(cfg.n_mmw);
    const auto a = build_dataset(samples, cb, 15.0, {}, 21);
    const auto b = build_dataset(samples, cb, 15.0, {}, 21);
    EXPECT_EQ(a.split.train, b.split.train);
    EXPECT_EQ(a.split.test, b.split.test);
    EXPECT_TRUE(a.inputs == b.inputs);
    EXPECT_EQ(a.labels, b.labels);
}

TEST(BuildDataset, RejectsEmptyInput) {
    EXPECT_THROW(build_dataset({}, dft_codebook(4), 0.0, {}, 0), std::invalid_argument);
}

TEST(BuildDataset, DegenerateChannelPropagates) {
    auto samples = generate_scenario(grid_config(2, 2));
    samples[1].h_mmw.setZero();
    const auto cb = dft_codebook(16);
    EXPECT_THROW(build_dataset(samples, cb, 0.0, {}, 0), DegenerateChannel);
}

class DatasetFile : public ::testing::Test {
protected:
    void SetUp() override {
        const auto cfg = grid_config(4, 5);
        ds = build_dataset(generate_scenario(cfg), dft_codebook(cfg.n_mmw), 15.0, {}, 1);
        path = temp_file(::testing::UnitTest::GetInstance()->current_test_info()->name());
        save_dataset(path, ds);
    }
    void TearDown() override { std::filesystem::remove(path); }

    LabeledDataset ds;
    std::filesystem::path path;
};

TEST_F(DatasetFile, RoundTrip) {
    const auto back = load_dataset(path);
    EXPECT_TRUE(back.inputs == ds.inputs);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.snr_db, ds.snr_db);
    EXPECT_EQ(back.scale, ds.scale);
    EXPECT_EQ(back.d_in, ds.d_in);
    EXPECT_EQ(back.n_classes, ds.n_classes);
    EXPECT_EQ(back.split.train, ds.split.train);
    EXPECT_EQ(back.split.val, ds.split.val);
    EXPECT_EQ(back.split.test, ds.split.test);
    EXPECT_EQ(back.provenance, ds.provenance);
}

TEST_F(DatasetFile, PayloadLayout) {
    const auto bytes = read_bytes(path);
    const auto nl = bytes.find('\n');
    ASSERT_NE(nl, std::string::npos);
    const auto payload = bytes.substr(nl + 1);
    ASSERT_EQ(payload.size(), ds.size() * ds.d_in * 4 + ds.size() * 2);
    float first = 0.0f;
    std::memcpy(&first, payload.data(), 4);
    EXPECT_EQ(first, ds.inputs(0, 0));
    const auto label_off = ds.size() * ds.d_in * 4;
    const auto lo = static_cast<unsigned char>(payload[label_off]);
    const auto hi = static_cast<unsigned char>(payload[label_off + 1]);
    EXPECT_EQ(lo | (hi << 8), ds.labels[0]);
}

TEST_F(DatasetFile, TruncatedPayload) {
    auto bytes = read_bytes(path);
    bytes.resize(bytes.size() - 3);
    write_bytes(path, bytes);
    try {
        load_dataset(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatErrorKind::truncated_payload);
    }
}

TEST_F(DatasetFile, UnsupportedVersion) {
    auto bytes = read_bytes(path);
    const auto nl = bytes.find('\n');
    auto header = json::parse(bytes.substr(0, nl));
    header["format_version"] = 2;
    write_bytes(path, header.dump() + bytes.substr(nl));
    try {
        load_dataset(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatErrorKind::unsupported_version);
    }
}

TEST_F(DatasetFile, WrongDimensions) {
    auto bytes = read_bytes(path);
    const auto nl = bytes.find('\n');
    auto header = json::parse(bytes.substr(0, nl));
    header["d_in"] = ds.d_in + 2;
    write_bytes(path, header.dump() + bytes.substr(nl));
    try {
        load_dataset(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatErrorKind::dimension_mismatch);
    }
}

TEST_F(DatasetFile, SplitMustPartition) {
    auto bytes = read_bytes(path);
    const auto nl = bytes.find('\n');
    auto header = json::parse(bytes.substr(0, nl));
    header["split"]["val"].push_back(header["split"]["train"][0]);
    write_bytes(path, header.dump() + bytes.substr(nl));
    EXPECT_THROW(load_dataset(path), FormatError);
}

TEST_F(DatasetFile, WrongFormatTag) {
    auto bytes = read_bytes(path);
    const auto nl = bytes.find('\n');
    auto header = json::parse(bytes.substr(0, nl));
    header["format"] = "beamkd-model";
    write_bytes(path, header.dump() + bytes.substr(nl));
    EXPECT_THROW(load_dataset(path), FormatError);
}
