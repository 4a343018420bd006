#ifndef BEAMKD_BEAMS_HPP
#define BEAMKD_BEAMS_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace beamkd {

/// Analog beamforming codebook; column q is beam q.
struct Codebook {
    Eigen::MatrixXcd beams;

    std::size_t size() const { return static_cast<std::size_t>(beams.cols()); }
    std::size_t antennas() const { return static_cast<std::size_t>(beams.rows()); }
};

/// Column q, entry m: exp(j 2 pi m q / n) / sqrt(n).
inline Codebook dft_codebook(std::size_t n_mmw) {
    if (n_mmw < 1) {
        throw std::invalid_argument("codebook size must be >= 1");
    }
    const auto n = static_cast<Eigen::Index>(n_mmw);
    const double norm = 1.0 / std::sqrt(static_cast<double>(n_mmw));
    Codebook cb{Eigen::MatrixXcd(n, n)};
    for (Eigen::Index q = 0; q < n; ++q) {
        for (Eigen::Index m = 0; m < n; ++m) {
            // Reduce m*q modulo n first so the phase stays accurate for large codebooks.
            const auto mq = static_cast<double>((m * q) % n);
            cb.beams(m, q) = std::polar(norm, 2.0 * std::numbers::pi * mq / static_cast<double>(n));
        }
    }
    return cb;
}

/// Per-subcarrier SNR (P / (K sigma^2)) and the subcarrier count K.
struct RateParams {
    double snr_linear = 1.0;
    std::size_t k_mmw = 1;

    static RateParams from_db(double snr_db, std::size_t k_mmw) {
        return {std::pow(10.0, snr_db / 10.0), k_mmw};
    }

    void validate() const {
        if (!(snr_linear > 0.0)) {
            throw std::invalid_argument("snr_linear must be > 0");
        }
        if (k_mmw < 1) {
            throw std::invalid_argument("k_mmw must be >= 1");
        }
    }
};

/// Sum over subcarriers of log2(1 + snr |h[k]^T w|^2), in bits per channel use.
template <typename Derived>
double achievable_rate(const Eigen::MatrixBase<Derived>& h_mmw, const Eigen::Ref<const Eigen::VectorXcd>& w,
                       const RateParams& params) {
    if (h_mmw.rows() != w.size() || static_cast<std::size_t>(h_mmw.cols()) != params.k_mmw) {
        throw std::invalid_argument("achievable_rate: channel is " + std::to_string(h_mmw.rows()) + "x" +
                                    std::to_string(h_mmw.cols()) + ", beam has " + std::to_string(w.size()) +
                                    " entries, K = " + std::to_string(params.k_mmw));
    }
    const Eigen::VectorXcd gains = h_mmw.template cast<std::complex<double>>().transpose() * w;
    double rate = 0.0;
    for (Eigen::Index k = 0; k < gains.size(); ++k) {
        rate += std::log2(1.0 + params.snr_linear * std::norm(gains[k]));
    }
    return rate;
}

/// Rate normalized per subcarrier (bits/s/Hz).
template <typename Derived>
double spectral_efficiency(const Eigen::MatrixBase<Derived>& h_mmw, const Eigen::Ref<const Eigen::VectorXcd>& w,
                           const RateParams& params) {
    return achievable_rate(h_mmw, w, params) / static_cast<double>(params.k_mmw);
}

class DegenerateChannel : public std::invalid_argument {
public:
    DegenerateChannel() : std::invalid_argument("degenerate channel") {}
};

struct BeamChoice {
    std::size_t index = 0;
    double rate = 0.0;
};

/// Exhaustive search over the codebook; the lowest index wins ties.
template <typename Derived>
BeamChoice optimal_beam(const Eigen::MatrixBase<Derived>& h_mmw, const Codebook& codebook, const RateParams& params) {
    const Eigen::MatrixXcd h = h_mmw.template cast<std::complex<double>>();
    if (h.cwiseAbs2().maxCoeff() == 0.0) {
        throw DegenerateChannel();
    }
    BeamChoice best{0, achievable_rate(h, codebook.beams.col(0), params)};
    for (std::size_t q = 1; q < codebook.size(); ++q) {
        const double r = achievable_rate(h, codebook.beams.col(static_cast<Eigen::Index>(q)), params);
        if (r > best.rate) {
            best = {q, r};
        }
    }
    return best;
}

/// Best rate among the candidate beams.
template <typename Derived>
double topk_beams_rate(const Eigen::MatrixBase<Derived>& h_mmw, const Codebook& codebook, const RateParams& params,
                       std::span<const std::size_t> indices) {
    if (indices.empty() || indices.size() > codebook.size()) {
        throw std::invalid_argument("topk_beams_rate: need 1..|W| candidate beams");
    }
    const Eigen::MatrixXcd h = h_mmw.template cast<std::complex<double>>();
    double best = 0.0;
    bool first = true;
    for (const std::size_t q : indices) {
        if (q >= codebook.size()) {
            throw std::out_of_range("topk_beams_rate: beam index " + std::to_string(q) + " out of range");
        }
        const double r = achievable_rate(h, codebook.beams.col(static_cast<Eigen::Index>(q)), params);
        if (first || r > best) {
            best = r;
            first = false;
        }
    }
    return best;
}

} // namespace beamkd

#endif
