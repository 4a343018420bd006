#ifndef BEAMKD_DATASET_HPP
#define BEAMKD_DATASET_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamkd/beams.hpp"
#include "beamkd/io.hpp"
#include "beamkd/rng.hpp"
#include "beamkd/scenario.hpp"

namespace beamkd {

/// Real encoding of an N x K complex channel: all real parts, then all
/// imaginary parts, each block antenna-major (index n * K + k).
template <typename Derived>
Eigen::VectorXd encode_input(const Eigen::MatrixBase<Derived>& h) {
    const Eigen::Index n = h.rows();
    const Eigen::Index k = h.cols();
    Eigen::VectorXd x(2 * n * k);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index c = 0; c < k; ++c) {
            const std::complex<double> v(h(a, c));
            x[a * k + c] = v.real();
            x[n * k + a * k + c] = v.imag();
        }
    }
    return x;
}

inline Eigen::MatrixXcd decode_input(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t n, std::size_t k) {
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(k);
    if (x.size() != 2 * rows * cols) {
        throw std::invalid_argument("decode_input: vector length " + std::to_string(x.size()) + " != 2*" +
                                    std::to_string(n) + "*" + std::to_string(k));
    }
    Eigen::MatrixXcd h(rows, cols);
    for (Eigen::Index a = 0; a < rows; ++a) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            h(a, c) = {x[a * cols + c], x[rows * cols + a * cols + c]};
        }
    }
    return h;
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct SplitFractions {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;

    void validate() const {
        if (train < 0.0 || val < 0.0 || test < 0.0) {
            throw ConfigError("dataset.split: fractions must be non-negative");
        }
        if (std::abs(train + val + test - 1.0) > 1e-9) {
            throw ConfigError("dataset.split: fractions must sum to 1");
        }
    }
};

/// Row i of `inputs` and `labels[i]` belong to channel sample i of the source
/// scenario; the split holds row indices.
struct LabeledDataset {
    Eigen::MatrixXf inputs; ///< S x d_in, already divided by `scale`
    std::vector<std::uint16_t> labels;
    double snr_db = 0.0;
    double scale = 1.0;
    Split split;
    std::size_t d_in = 0;
    std::size_t n_classes = 0;
    json provenance = json::object();

    std::size_t size() const { return labels.size(); }

    Eigen::MatrixXf rows(const std::vector<std::size_t>& idx) const {
        Eigen::MatrixXf out(static_cast<Eigen::Index>(idx.size()), inputs.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(idx[i]));
        }
        return out;
    }

    std::vector<std::uint16_t> labels_of(const std::vector<std::size_t>& idx) const {
        std::vector<std::uint16_t> out;
        out.reserve(idx.size());
        for (const auto i : idx) {
            out.push_back(labels[i]);
        }
        return out;
    }
};

/// Shuffled partition of [0, count). Counts are rounded from the fractions;
/// the test split takes the remainder.
inline Split make_split(std::size_t count, const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) {
        order[i] = i;
    }
    Rng rng(seed, 0x5eed5eedULL);
    rng.shuffle(order);
    const auto n = static_cast<double>(count);
    const auto n_train = std::min<std::size_t>(count, static_cast<std::size_t>(std::llround(fractions.train * n)));
    const auto n_val =
        std::min<std::size_t>(count - n_train, static_cast<std::size_t>(std::llround(fractions.val * n)));
    Split split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return split;
}

/// Labels every sample with the exhaustive-search beam at `snr_db` and
/// normalizes inputs by the largest magnitude in the training split.
inline LabeledDataset build_dataset(const std::vector<ChannelSample>& samples, const Codebook& codebook,
                                    double snr_db, const SplitFractions& fractions, std::uint64_t seed) {
    if (samples.empty()) {
        throw std::invalid_argument("build_dataset: no samples");
    }
    if (codebook.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw std::invalid_argument("build_dataset: codebook too large for 16-bit labels");
    }
    const auto n = static_cast<std::size_t>(samples.front().h_sub6.rows());
    const auto k = static_cast<std::size_t>(samples.front().h_sub6.cols());
    const RateParams params = RateParams::from_db(snr_db, static_cast<std::size_t>(samples.front().h_mmw.cols()));

    LabeledDataset ds;
    ds.snr_db = snr_db;
    ds.d_in = 2 * n * k;
    ds.n_classes = codebook.size();
    ds.split = make_split(samples.size(), fractions, seed);
    if (ds.split.train.empty()) {
        throw ConfigError("dataset.split: training split is empty");
    }

    Eigen::MatrixXd raw(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(ds.d_in));
    ds.labels.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (static_cast<std::size_t>(s.h_sub6.rows()) != n || static_cast<std::size_t>(s.h_sub6.cols()) != k) {
            throw std::invalid_argument("build_dataset: sample " + std::to_string(i) + " has a different shape");
        }
        raw.row(static_cast<Eigen::Index>(i)) = encode_input(s.h_sub6).transpose();
        ds.labels.push_back(static_cast<std::uint16_t>(optimal_beam(s.h_mmw, codebook, params).index));
    }

    double max_abs = 0.0;
    for (const auto i : ds.split.train) {
        max_abs = std::max(max_abs, raw.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff());
    }
    if (!(max_abs > 0.0)) {
        throw std::invalid_argument("build_dataset: training inputs are all zero");
    }
    ds.scale = max_abs;
    ds.inputs = (raw / max_abs).cast<float>();
    ds.provenance = {{"n_sub6", n}, {"k_sub6", k}, {"split_seed", seed}};
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset file

inline constexpr const char* kDatasetFormat = "beamkd-dataset";

inline void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
    PayloadWriter w;
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) {
            w.f32(ds.inputs(i, j));
        }
    }
    for (const auto label : ds.labels) {
        w.u16(label);
    }
    json header{
        {"format", kDatasetFormat},
        {"format_version", kFormatVersion},
        {"S", ds.size()},
        {"d_in", ds.d_in},
        {"n_classes", ds.n_classes},
        {"snr_db", ds.snr_db},
        {"scale", ds.scale},
        {"split", {{"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}}},
        {"provenance", ds.provenance},
    };
    write_header_file(path, std::move(header), w.bytes());
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    const HeaderFile file = read_header_file(path, kDatasetFormat);
    const json& h = file.header;
    LabeledDataset ds;
    const auto count = header_field<std::size_t>(h, "S");
    ds.d_in = header_field<std::size_t>(h, "d_in");
    ds.n_classes = header_field<std::size_t>(h, "n_classes");
    ds.snr_db = header_field<double>(h, "snr_db");
    ds.scale = header_field<double>(h, "scale");
    if (h.contains("provenance")) {
        ds.provenance = h["provenance"];
    }
    const auto split = header_field<json>(h, "split");
    ds.split.train = header_field<std::vector<std::size_t>>(split, "train");
    ds.split.val = header_field<std::vector<std::size_t>>(split, "val");
    ds.split.test = header_field<std::vector<std::size_t>>(split, "test");

    if (file.payload.size() != count * ds.d_in * 4 + count * 2) {
        throw FormatError(FormatErrorKind::dimension_mismatch,
                          "'" + path.string() + "': payload of " + std::to_string(file.payload.size()) +
                              " bytes does not match S=" + std::to_string(count) +
                              ", d_in=" + std::to_string(ds.d_in));
    }
    std::vector<bool> seen(count, false);
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        for (const auto i : *part) {
            if (i >= count || seen[i]) {
                throw FormatError(FormatErrorKind::malformed_header,
                                  "'" + path.string() + "': split is not a partition of the samples");
            }
            seen[i] = true;
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw FormatError(FormatErrorKind::malformed_header,
                          "'" + path.string() + "': split does not cover every sample");
    }

    PayloadReader r(file.payload);
    ds.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(ds.d_in));
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) {
            ds.inputs(i, j) = r.f32();
        }
    }
    ds.labels.resize(count);
    for (auto& label : ds.labels) {
        label = r.u16();
        if (label >= ds.n_classes) {
            throw FormatError(FormatErrorKind::dimension_mismatch,
                              "'" + path.string() + "': label " + std::to_string(label) + " >= n_classes");
        }
    }
    return ds;
}

} // namespace beamkd

#endif
