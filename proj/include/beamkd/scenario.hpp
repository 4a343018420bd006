#ifndef BEAMKD_SCENARIO_HPP
#define BEAMKD_SCENARIO_HPP

// Synthetic dual-band geometric channels. Both bands share the path geometry
// (angle of departure and delay) of every UE, so the sub-6 GHz channel carries
// information about which mmWave beam is best.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamkd/io.hpp"
#include "beamkd/rng.hpp"

namespace beamkd {

inline constexpr double kSpeedOfLight = 299792458.0;

struct Position {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Position&, const Position&) = default;
};

/// Rectangular grid of UE positions. Index i maps to row i / cols, column
/// i % cols; columns advance along x and rows along y.
struct UeGrid {
    Position origin{-12.5, 20.0};
    double step_m = 0.5;
    std::size_t rows = 40;
    std::size_t cols = 50;

    std::size_t size() const { return rows * cols; }

    Position at(std::size_t i) const {
        const auto r = static_cast<double>(i / cols);
        const auto c = static_cast<double>(i % cols);
        return {origin.x + c * step_m, origin.y + r * step_m};
    }
};

/// The BS carries a uniform linear array along x with broadside towards +y,
/// so every UE must sit at y > bs_position.y.
struct ScenarioConfig {
    std::size_t n_sub6 = 4;
    std::size_t n_mmw = 64;
    std::size_t k_sub6 = 32;
    std::size_t k_mmw = 64;
    double bw_sub6_hz = 20e6;
    double bw_mmw_hz = 500e6;
    double fc_sub6_hz = 3.5e9;
    double fc_mmw_hz = 28e9;
    double spacing_wavelengths = 0.5;
    UeGrid ue_grid{};
    Position bs_position{};
    std::size_t max_paths = 3;
    double nlos_gain_db = -10.0;
    double max_excess_delay_s = 200e-9;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& field, const std::string& msg) {
            throw ConfigError("scenario." + field + ": " + msg);
        };
        if (n_sub6 < 1) fail("n_sub6", "must be >= 1");
        if (n_mmw < 1) fail("n_mmw", "must be >= 1");
        if (k_sub6 < 1) fail("k_sub6", "must be >= 1");
        if (k_mmw < 1) fail("k_mmw", "must be >= 1");
        if (!(bw_sub6_hz > 0.0)) fail("bw_sub6_hz", "must be > 0");
        if (!(bw_mmw_hz > 0.0)) fail("bw_mmw_hz", "must be > 0");
        if (!(fc_sub6_hz > 0.0)) fail("fc_sub6_hz", "must be > 0");
        if (!(fc_mmw_hz > fc_sub6_hz)) fail("fc_mmw_hz", "must exceed fc_sub6_hz");
        if (!(spacing_wavelengths > 0.0)) fail("spacing_wavelengths", "must be > 0");
        if (max_paths < 1) fail("max_paths", "must be >= 1");
        if (!std::isfinite(nlos_gain_db)) fail("nlos_gain_db", "must be finite");
        if (!(max_excess_delay_s >= 0.0)) fail("max_excess_delay_s", "must be >= 0");
        if (ue_grid.size() < 1) fail("ue_grid", "must contain at least one position");
        if (!(ue_grid.step_m > 0.0)) fail("ue_grid.step_m", "must be > 0");
        // The lowest grid row is the one closest to the array plane.
        if (!(ue_grid.origin.y > bs_position.y)) {
            fail("ue_grid.origin", "every UE must lie in front of the array (y > bs_position.y)");
        }
    }
};

inline json to_json(const ScenarioConfig& c) {
    return json{
        {"n_sub6", c.n_sub6},
        {"n_mmw", c.n_mmw},
        {"k_sub6", c.k_sub6},
        {"k_mmw", c.k_mmw},
        {"bw_sub6_hz", c.bw_sub6_hz},
        {"bw_mmw_hz", c.bw_mmw_hz},
        {"fc_sub6_hz", c.fc_sub6_hz},
        {"fc_mmw_hz", c.fc_mmw_hz},
        {"spacing_wavelengths", c.spacing_wavelengths},
        {"ue_grid",
         {{"origin", {c.ue_grid.origin.x, c.ue_grid.origin.y}},
          {"step_m", c.ue_grid.step_m},
          {"rows", c.ue_grid.rows},
          {"cols", c.ue_grid.cols}}},
        {"bs_position", {c.bs_position.x, c.bs_position.y}},
        {"max_paths", c.max_paths},
        {"nlos_gain_db", c.nlos_gain_db},
        {"max_excess_delay_s", c.max_excess_delay_s},
        {"seed", c.seed},
    };
}

namespace detail {

inline Position position_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError(field + ": expected [x, y]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

} // namespace detail

/// Fields missing from `j` keep the values in `base`. Does not validate.
inline ScenarioConfig scenario_from_json(const json& j, ScenarioConfig base = {}) {
    const std::string s = "scenario";
    if (!j.is_object()) {
        throw ConfigError("scenario: expected an object");
    }
    read_optional(j, "n_sub6", base.n_sub6, s);
    read_optional(j, "n_mmw", base.n_mmw, s);
    read_optional(j, "k_sub6", base.k_sub6, s);
    read_optional(j, "k_mmw", base.k_mmw, s);
    read_optional(j, "bw_sub6_hz", base.bw_sub6_hz, s);
    read_optional(j, "bw_mmw_hz", base.bw_mmw_hz, s);
    read_optional(j, "fc_sub6_hz", base.fc_sub6_hz, s);
    read_optional(j, "fc_mmw_hz", base.fc_mmw_hz, s);
    read_optional(j, "spacing_wavelengths", base.spacing_wavelengths, s);
    read_optional(j, "max_paths", base.max_paths, s);
    read_optional(j, "nlos_gain_db", base.nlos_gain_db, s);
    read_optional(j, "max_excess_delay_s", base.max_excess_delay_s, s);
    read_optional(j, "seed", base.seed, s);
    if (j.contains("bs_position")) {
        base.bs_position = detail::position_from_json(j["bs_position"], "scenario.bs_position");
    }
    if (j.contains("ue_grid")) {
        const auto& g = j["ue_grid"];
        if (!g.is_object()) {
            throw ConfigError("scenario.ue_grid: expected an object");
        }
        if (g.contains("origin")) {
            base.ue_grid.origin = detail::position_from_json(g["origin"], "scenario.ue_grid.origin");
        }
        read_optional(g, "step_m", base.ue_grid.step_m, "scenario.ue_grid");
        read_optional(g, "rows", base.ue_grid.rows, "scenario.ue_grid");
        read_optional(g, "cols", base.ue_grid.cols, "scenario.ue_grid");
    }
    return base;
}

struct PathComponent {
    double aod_rad = 0.0;
    double delay_s = 0.0;
    std::complex<double> gain{};
};

/// Paths of one UE. Entry l of each band refers to the same physical path.
struct BandPaths {
    std::vector<PathComponent> sub6;
    std::vector<PathComponent> mmw;
};

struct ChannelSample {
    Position ue_position;
    Eigen::MatrixXcf h_sub6; ///< n_sub6 x k_sub6
    Eigen::MatrixXcf h_mmw;  ///< n_mmw x k_mmw
};

/// ULA response: entry m is exp(-j 2 pi spacing m sin(aod)).
inline Eigen::VectorXcd steering_vector(std::size_t n, double spacing, double aod) {
    Eigen::VectorXcd a(static_cast<Eigen::Index>(n));
    const double phase_step = -2.0 * std::numbers::pi * spacing * std::sin(aod);
    for (std::size_t m = 0; m < n; ++m) {
        a[static_cast<Eigen::Index>(m)] = std::polar(1.0, phase_step * static_cast<double>(m));
    }
    return a;
}

/// One LOS path from the BS-UE geometry plus a uniformly drawn number of
/// NLOS paths (0 .. max_paths - 1). LOS gain is 1/d in both bands; NLOS gains
/// are independent circular Gaussians per band with mean power
/// nlos_gain_db relative to the LOS path.
inline BandPaths draw_paths(const ScenarioConfig& cfg, Position ue, Rng& rng) {
    const double dx = ue.x - cfg.bs_position.x;
    const double dy = ue.y - cfg.bs_position.y;
    if (!(dy > 0.0)) {
        throw std::invalid_argument("UE at (" + std::to_string(ue.x) + ", " + std::to_string(ue.y) +
                                    ") is not in front of the BS array");
    }
    const double distance = std::hypot(dx, dy);
    const double los_delay = distance / kSpeedOfLight;
    const PathComponent los{std::atan2(dx, dy), los_delay, {1.0 / distance, 0.0}};

    BandPaths paths;
    paths.sub6.push_back(los);
    paths.mmw.push_back(los);

    const auto n_nlos = static_cast<std::size_t>(rng.below(cfg.max_paths));
    const double nlos_sigma = std::sqrt(std::pow(10.0, cfg.nlos_gain_db / 10.0) / 2.0) / distance;
    for (std::size_t l = 0; l < n_nlos; ++l) {
        PathComponent p;
        p.aod_rad = std::numbers::pi * (rng.uniform_open() - 0.5);
        p.delay_s = los_delay + rng.uniform(0.0, cfg.max_excess_delay_s);
        const double re_sub6 = rng.normal();
        const double im_sub6 = rng.normal();
        const double re_mmw = rng.normal();
        const double im_mmw = rng.normal();
        p.gain = nlos_sigma * std::complex<double>(re_sub6, im_sub6);
        paths.sub6.push_back(p);
        p.gain = nlos_sigma * std::complex<double>(re_mmw, im_mmw);
        paths.mmw.push_back(p);
    }
    return paths;
}

/// Frequency response on k subcarriers: column c is
/// sum_l gain_l exp(-j 2 pi c bw delay_l / k) a(aod_l).
inline Eigen::MatrixXcd synthesize_channel(const std::vector<PathComponent>& paths, std::size_t n, std::size_t k,
                                           double bw_hz, double spacing = 0.5) {
    if (paths.empty()) {
        throw std::invalid_argument("no propagation paths");
    }
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (const auto& p : paths) {
        const Eigen::VectorXcd a = steering_vector(n, spacing, p.aod_rad);
        for (std::size_t c = 0; c < k; ++c) {
            const double phase =
                -2.0 * std::numbers::pi * static_cast<double>(c) * bw_hz * p.delay_s / static_cast<double>(k);
            h.col(static_cast<Eigen::Index>(c)) += (p.gain * std::polar(1.0, phase)) * a;
        }
    }
    return h;
}

/// Sample i uses the random substream (cfg.seed, i), so the result does not
/// depend on generation order. Channels and positions are stored at 32-bit
/// precision, matching the channel file.
inline ChannelSample generate_sample(const ScenarioConfig& cfg, std::size_t i) {
    Rng rng(cfg.seed, i);
    const Position ue = cfg.ue_grid.at(i);
    const BandPaths paths = draw_paths(cfg, ue, rng);
    ChannelSample s;
    s.ue_position = {static_cast<float>(ue.x), static_cast<float>(ue.y)};
    s.h_sub6 = synthesize_channel(paths.sub6, cfg.n_sub6, cfg.k_sub6, cfg.bw_sub6_hz, cfg.spacing_wavelengths)
                   .cast<std::complex<float>>();
    s.h_mmw = synthesize_channel(paths.mmw, cfg.n_mmw, cfg.k_mmw, cfg.bw_mmw_hz, cfg.spacing_wavelengths)
                  .cast<std::complex<float>>();
    return s;
}

inline std::vector<ChannelSample> generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    std::vector<ChannelSample> samples;
    samples.reserve(cfg.ue_grid.size());
    for (std::size_t i = 0; i < cfg.ue_grid.size(); ++i) {
        samples.push_back(generate_sample(cfg, i));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Channel file

inline constexpr const char* kChannelFormat = "beamkd-channels";

struct ChannelFile {
    ScenarioConfig config;
    std::vector<ChannelSample> samples;
};

inline void save_channel_file(const std::filesystem::path& path, const ScenarioConfig& cfg,
                              const std::vector<ChannelSample>& samples) {
    PayloadWriter w;
    auto put_matrix = [&w](const Eigen::MatrixXcf& h, std::size_t rows, std::size_t cols) {
        if (static_cast<std::size_t>(h.rows()) != rows || static_cast<std::size_t>(h.cols()) != cols) {
            throw std::invalid_argument("channel matrix shape does not match the scenario config");
        }
        for (Eigen::Index r = 0; r < h.rows(); ++r) {
            for (Eigen::Index c = 0; c < h.cols(); ++c) {
                w.f32(h(r, c).real());
                w.f32(h(r, c).imag());
            }
        }
    };
    for (const auto& s : samples) {
        w.f32(static_cast<float>(s.ue_position.x));
        w.f32(static_cast<float>(s.ue_position.y));
        put_matrix(s.h_sub6, cfg.n_sub6, cfg.k_sub6);
        put_matrix(s.h_mmw, cfg.n_mmw, cfg.k_mmw);
    }
    json header{
        {"format", kChannelFormat},
        {"format_version", kFormatVersion},
        {"n_sub6", cfg.n_sub6},
        {"k_sub6", cfg.k_sub6},
        {"n_mmw", cfg.n_mmw},
        {"k_mmw", cfg.k_mmw},
        {"sample_count", samples.size()},
        {"seed", cfg.seed},
        {"scenario", to_json(cfg)},
    };
    write_header_file(path, std::move(header), w.bytes());
}

inline ChannelFile load_channel_file(const std::filesystem::path& path) {
    const HeaderFile file = read_header_file(path, kChannelFormat);
    const json& h = file.header;
    const auto n_sub6 = header_field<std::size_t>(h, "n_sub6");
    const auto k_sub6 = header_field<std::size_t>(h, "k_sub6");
    const auto n_mmw = header_field<std::size_t>(h, "n_mmw");
    const auto k_mmw = header_field<std::size_t>(h, "k_mmw");
    const auto count = header_field<std::size_t>(h, "sample_count");
    if (!h.contains("scenario")) {
        throw FormatError(FormatErrorKind::malformed_header, "missing header field 'scenario'");
    }
    ChannelFile out;
    try {
        out.config = scenario_from_json(h["scenario"]);
    } catch (const ConfigError& e) {
        throw FormatError(FormatErrorKind::malformed_header, e.what());
    }
    out.config.seed = header_field<std::uint64_t>(h, "seed");
    if (out.config.n_sub6 != n_sub6 || out.config.k_sub6 != k_sub6 || out.config.n_mmw != n_mmw ||
        out.config.k_mmw != k_mmw) {
        throw FormatError(FormatErrorKind::dimension_mismatch, "'" + path.string() +
                                                                   "': header dimensions disagree with the "
                                                                   "embedded scenario");
    }
    const std::size_t per_sample = 2 + 2 * n_sub6 * k_sub6 + 2 * n_mmw * k_mmw;
    if (file.payload.size() != count * per_sample * 4) {
        throw FormatError(FormatErrorKind::dimension_mismatch,
                          "'" + path.string() + "': payload of " + std::to_string(file.payload.size()) +
                              " bytes does not hold " + std::to_string(count) + " samples of " +
                              std::to_string(per_sample) + " floats");
    }
    PayloadReader r(file.payload);
    auto get_matrix = [&r](std::size_t rows, std::size_t cols) {
        Eigen::MatrixXcf m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const float re = r.f32();
                const float im = r.f32();
                m(i, j) = {re, im};
            }
        }
        return m;
    };
    out.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ChannelSample s;
        const float x = r.f32();
        const float y = r.f32();
        s.ue_position = {x, y};
        s.h_sub6 = get_matrix(n_sub6, k_sub6);
        s.h_mmw = get_matrix(n_mmw, k_mmw);
        out.samples.push_back(std::move(s));
    }
    return out;
}

} // namespace beamkd

#endif
