#ifndef BEAMKD_METRICS_HPP
#define BEAMKD_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamkd/beams.hpp"
#include "beamkd/neuralnet.hpp"
#include "beamkd/scenario.hpp"

namespace beamkd {

/// Indices of the k largest entries of `row`, best first; equal scores rank
/// the lower index first.
template <typename Derived>
std::vector<std::size_t> top_k_indices(const Eigen::DenseBase<Derived>& row, std::size_t k) {
    const auto n = static_cast<std::size_t>(row.size());
    if (k < 1 || k > n) {
        throw std::invalid_argument("top_k_indices: k must be in [1, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&row](std::size_t a, std::size_t b) {
                          const auto va = row(static_cast<Eigen::Index>(a));
                          const auto vb = row(static_cast<Eigen::Index>(b));
                          return va > vb || (va == vb && a < b);
                      });
    idx.resize(k);
    return idx;
}

/// Fraction of rows whose label ranks among the k highest logits.
template <typename T>
double topk_accuracy(const Matrix<T>& logits, std::span<const std::uint16_t> labels, std::size_t k) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw std::invalid_argument("topk_accuracy: " + std::to_string(logits.rows()) + " rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (k < 1 || k > static_cast<std::size_t>(logits.cols())) {
        throw std::invalid_argument("topk_accuracy: k must be in [1, " + std::to_string(logits.cols()) + "]");
    }
    if (labels.empty()) {
        return std::nan("");
    }
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
        const T ly = logits(i, y);
        std::size_t rank = 0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (logits(i, c) > ly || (logits(i, c) == ly && c < y)) {
                ++rank;
            }
        }
        hits += rank < k ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mean per-subcarrier SE when, for every sample, the best of the model's
/// top-k beams is used. Row i of `logits` belongs to `channels[i]`.
template <typename T>
double spectral_efficiency_topk(const Matrix<T>& logits, const std::vector<const Eigen::MatrixXcf*>& channels,
                                const Codebook& codebook, const RateParams& params, std::size_t k) {
    if (static_cast<std::size_t>(logits.rows()) != channels.size()) {
        throw std::invalid_argument("spectral_efficiency: logits and channels disagree in count");
    }
    if (static_cast<std::size_t>(logits.cols()) != codebook.size()) {
        throw std::invalid_argument("spectral_efficiency: model output dimension != codebook size");
    }
    if (channels.empty()) {
        return std::nan("");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const auto beams = top_k_indices(logits.row(static_cast<Eigen::Index>(i)), k);
        total += topk_beams_rate(*channels[i], codebook, params, beams) / static_cast<double>(params.k_mmw);
    }
    return total / static_cast<double>(channels.size());
}

template <typename T>
double spectral_efficiency(const Mlp<T>& model, const Matrix<T>& inputs,
                           const std::vector<const Eigen::MatrixXcf*>& channels, const Codebook& codebook,
                           const RateParams& params, std::size_t k) {
    return spectral_efficiency_topk(predict(model, inputs), channels, codebook, params, k);
}

/// Mean per-subcarrier SE of the exhaustive-search beam.
inline double oracle_spectral_efficiency(const std::vector<const Eigen::MatrixXcf*>& channels,
                                         const Codebook& codebook, const RateParams& params) {
    if (channels.empty()) {
        return std::nan("");
    }
    double total = 0.0;
    for (const auto* h : channels) {
        total += optimal_beam(*h, codebook, params).rate / static_cast<double>(params.k_mmw);
    }
    return total / static_cast<double>(channels.size());
}

/// Weights plus biases.
inline std::uint64_t count_params(const MlpArch& arch) {
    arch.validate();
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < arch.layers(); ++l) {
        n += arch.layer_dims[l] * arch.layer_dims[l + 1] + arch.layer_dims[l + 1];
    }
    return n;
}

/// Two FLOPs (multiply + add) per weight; bias adds and activations are not counted.
inline std::uint64_t count_flops(const MlpArch& arch) {
    arch.validate();
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < arch.layers(); ++l) {
        n += 2 * arch.layer_dims[l] * arch.layer_dims[l + 1];
    }
    return n;
}

inline double complexity_reduction(double teacher, double student) {
    if (!(teacher > 0.0)) {
        throw std::invalid_argument("complexity_reduction: teacher count must be > 0");
    }
    return (1.0 - student / teacher) * 100.0;
}

// ---------------------------------------------------------------------------
// Report

struct SnrRecord {
    double snr_db = 0.0;
    std::size_t n_test = 0;
    std::vector<std::pair<std::size_t, double>> topk_acc; ///< (k, accuracy), ascending k
    double se_top1 = 0.0;
    double se_top3 = 0.0;
    double se_oracle = 0.0;
    LossTrace trace;

    double accuracy(std::size_t k) const {
        for (const auto& [kk, acc] : topk_acc) {
            if (kk == k) return acc;
        }
        throw std::out_of_range("no top-" + std::to_string(k) + " accuracy recorded");
    }
};

struct ModelEval {
    std::string name;
    MlpArch arch;
    std::uint64_t param_count = 0;
    std::uint64_t flop_count = 0;
    std::vector<SnrRecord> per_snr;
};

struct EvalReport {
    std::vector<ModelEval> models;
};

namespace detail {

inline double number_from(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

inline std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

inline std::string with_commas(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) {
        s.insert(static_cast<std::size_t>(i), ",");
    }
    return s;
}

} // namespace detail

inline json to_json(const EvalReport& report) {
    json models = json::array();
    for (const auto& m : report.models) {
        json snrs = json::array();
        for (const auto& r : m.per_snr) {
            json acc = json::object();
            for (const auto& [k, a] : r.topk_acc) {
                acc["top" + std::to_string(k)] = finite_or_null(a);
            }
            snrs.push_back({{"snr_db", r.snr_db},
                            {"n_test", r.n_test},
                            {"accuracy", acc},
                            {"se_top1", finite_or_null(r.se_top1)},
                            {"se_top3", finite_or_null(r.se_top3)},
                            {"se_oracle", finite_or_null(r.se_oracle)},
                            {"loss_trace", to_json(r.trace)}});
        }
        models.push_back({{"name", m.name},
                          {"arch", arch_to_json(m.arch)},
                          {"param_count", m.param_count},
                          {"flop_count", m.flop_count},
                          {"per_snr", snrs}});
    }
    return {{"format", "beamkd-eval"}, {"format_version", kFormatVersion}, {"models", models}};
}

inline EvalReport eval_report_from_json(const json& j) {
    if (!j.is_object() || j.value("format", "") != "beamkd-eval") {
        throw FormatError(FormatErrorKind::malformed_header, "not a beamkd-eval document");
    }
    EvalReport report;
    try {
        for (const auto& m : j.at("models")) {
            ModelEval e;
            e.name = m.at("name").get<std::string>();
            e.arch.layer_dims = m.at("arch").at("layer_dims").get<std::vector<std::size_t>>();
            e.arch.activation = activation_from_string(m.at("arch").at("activation").get<std::string>());
            e.param_count = m.at("param_count").get<std::uint64_t>();
            e.flop_count = m.at("flop_count").get<std::uint64_t>();
            for (const auto& r : m.at("per_snr")) {
                SnrRecord rec;
                rec.snr_db = r.at("snr_db").get<double>();
                rec.n_test = r.at("n_test").get<std::size_t>();
                for (const auto& [key, value] : r.at("accuracy").items()) {
                    rec.topk_acc.emplace_back(std::stoul(key.substr(3)), detail::number_from(value));
                }
                std::sort(rec.topk_acc.begin(), rec.topk_acc.end());
                rec.se_top1 = detail::number_from(r.at("se_top1"));
                rec.se_top3 = detail::number_from(r.at("se_top3"));
                rec.se_oracle = detail::number_from(r.at("se_oracle"));
                rec.trace = loss_trace_from_json(r.at("loss_trace"));
                e.per_snr.push_back(std::move(rec));
            }
            report.models.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError(FormatErrorKind::malformed_header, std::string("eval report: ") + e.what());
    }
    return report;
}

inline constexpr const char* kEvalCsvHeader =
    "model,snr_db,n_test,top1_acc,top3_acc,se_top1,se_top3,se_oracle,param_count,flop_count";

/// One row per (model, SNR).
inline std::string to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << kEvalCsvHeader << "\n";
    os << std::setprecision(10);
    for (const auto& m : report.models) {
        for (const auto& r : m.per_snr) {
            os << m.name << "," << r.snr_db << "," << r.n_test << "," << r.accuracy(1) << "," << r.accuracy(3) << ","
               << r.se_top1 << "," << r.se_top3 << "," << r.se_oracle << "," << m.param_count << ","
               << m.flop_count << "\n";
        }
    }
    return os.str();
}

/// Complexity table with one row for the teacher and one for the students
/// (the smallest architecture), followed by the reduction percentages.
inline std::string complexity_table_markdown(const EvalReport& report) {
    if (report.models.empty()) {
        throw std::invalid_argument("complexity table: report has no models");
    }
    const ModelEval* teacher = nullptr;
    for (const auto& m : report.models) {
        if (m.name == "teacher") teacher = &m;
    }
    auto by_params = [](const ModelEval& a, const ModelEval& b) { return a.param_count < b.param_count; };
    if (teacher == nullptr) {
        teacher = &*std::max_element(report.models.begin(), report.models.end(), by_params);
    }
    const ModelEval& student = *std::min_element(report.models.begin(), report.models.end(), by_params);
    std::string students;
    for (const auto& m : report.models) {
        if (m.arch == student.arch) students += (students.empty() ? "" : ", ") + m.name;
    }
    std::ostringstream os;
    os << "| Model | Architecture | Parameters | FLOPs |\n";
    os << "|---|---|---|---|\n";
    os << "| Teacher (" << teacher->name << ") | " << describe(teacher->arch) << " | "
       << detail::with_commas(teacher->param_count) << " | " << detail::with_commas(teacher->flop_count) << " |\n";
    os << "| Students (" << students << ") | " << describe(student.arch) << " | "
       << detail::with_commas(student.param_count) << " | " << detail::with_commas(student.flop_count) << " |\n";
    os << "\n| Reduction | (1 - student/teacher) x 100 |\n";
    os << "|---|---|\n";
    os << "| Parameters | "
       << detail::fixed(complexity_reduction(static_cast<double>(teacher->param_count),
                                             static_cast<double>(student.param_count)),
                        2)
       << "% |\n";
    os << "| FLOPs | "
       << detail::fixed(complexity_reduction(static_cast<double>(teacher->flop_count),
                                             static_cast<double>(student.flop_count)),
                        2)
       << "% |\n";
    return os.str();
}

} // namespace beamkd

#endif
