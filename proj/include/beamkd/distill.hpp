#ifndef BEAMKD_DISTILL_HPP
#define BEAMKD_DISTILL_HPP

// Student training against a frozen teacher.
//
//   ikd  - softened-output matching plus hard-label cross-entropy
//   rkd  - cross-entropy plus Huber matching of distance-wise (pairs) and
//          angle-wise (triplets) relational potentials of hidden features
//   self - ikd with the student sharing the teacher's architecture
//
// Relational potentials are computed in double regardless of T.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamkd/dataset.hpp"
#include "beamkd/neuralnet.hpp"
#include "beamkd/rng.hpp"

namespace beamkd {

enum class DistillMode { ikd, rkd, self };

inline std::string to_string(DistillMode m) {
    switch (m) {
    case DistillMode::ikd: return "ikd";
    case DistillMode::rkd: return "rkd";
    case DistillMode::self: return "self";
    }
    return "?";
}

inline DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "ikd") return DistillMode::ikd;
    if (s == "rkd") return DistillMode::rkd;
    if (s == "self") return DistillMode::self;
    throw ConfigError("distill.mode: unknown mode '" + s + "' (expected ikd, rkd or self)");
}

struct IkdConfig {
    double temperature = 10.0;
    double alpha = 0.9;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("distill.ikd.temperature: must be > 0");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("distill.ikd.alpha: must be in [0, 1]");
    }
};

struct RkdConfig {
    /// 1-based hidden layer whose activations feed the potentials; unset
    /// means the last hidden layer of each network.
    std::optional<std::size_t> feature_layer;
    double weight_dist = 1.0;
    double weight_angle = 1.0;
    double epsilon = 1e-12;
    /// Batches with more tuples than these caps are subsampled; the defaults
    /// keep exact enumeration up to M = 64.
    std::size_t max_pairs = 2016;
    std::size_t max_triplets = 41664;

    void validate() const {
        if (feature_layer && *feature_layer < 1) throw ConfigError("distill.rkd.feature_layer: must be >= 1");
        if (!(weight_dist >= 0.0)) throw ConfigError("distill.rkd.weight_dist: must be >= 0");
        if (!(weight_angle >= 0.0)) throw ConfigError("distill.rkd.weight_angle: must be >= 0");
        if (!(epsilon > 0.0)) throw ConfigError("distill.rkd.epsilon: must be > 0");
        if (max_pairs < 1) throw ConfigError("distill.rkd.max_pairs: must be >= 1");
        if (max_triplets < 1) throw ConfigError("distill.rkd.max_triplets: must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Individual KD

template <typename T>
struct IkdLoss {
    double loss = 0.0;
    double kd = 0.0; ///< mean CE between softened student and teacher outputs
    double ce = 0.0; ///< mean hard-label CE
    Matrix<T> grad;  ///< d loss / d student logits
};

/// loss = alpha tau^2 CE(softmax(s/tau), softmax(t/tau)) + (1 - alpha) CE(softmax(s), z),
/// averaged over the batch. Teacher logits are constants.
template <typename T>
IkdLoss<T> ikd_loss(const Matrix<T>& student_logits, const Matrix<T>& teacher_logits,
                    std::span<const std::uint16_t> labels, const IkdConfig& cfg) {
    cfg.validate();
    if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols() ||
        static_cast<std::size_t>(student_logits.rows()) != labels.size()) {
        throw std::invalid_argument("ikd_loss: shape mismatch");
    }
    const Matrix<T> ps_soft = softmax(student_logits, cfg.temperature);
    const Matrix<T> pt_soft = softmax(teacher_logits, cfg.temperature);
    const Matrix<T> p = softmax(student_logits);
    const Matrix<T> z = one_hot<T>(labels, static_cast<std::size_t>(student_logits.cols()));
    IkdLoss<T> out;
    out.kd = cross_entropy(ps_soft, pt_soft);
    out.ce = cross_entropy(p, z);
    const double a = cfg.alpha;
    const double tau = cfg.temperature;
    out.loss = a * tau * tau * out.kd + (1.0 - a) * out.ce;
    // d/ds of tau^2 CE(softmax(s/tau), q) is tau (softmax(s/tau) - q).
    const T kd_coef = static_cast<T>(a * tau);
    const T ce_coef = static_cast<T>(1.0 - a);
    out.grad = (kd_coef * (ps_soft - pt_soft) + ce_coef * (p - z)) / static_cast<T>(student_logits.rows());
    return out;
}

// ---------------------------------------------------------------------------
// Relational KD

/// Huber discrepancy: 0.5 d^2 for |d| <= 1, |d| - 0.5 otherwise.
inline double huber(double a, double b) {
    const double d = std::abs(a - b);
    return d <= 1.0 ? 0.5 * d * d : d - 0.5;
}

/// d huber(a, b) / d b.
inline double huber_grad_b(double a, double b) { return -std::clamp(a - b, -1.0, 1.0); }

using Pair = std::array<std::size_t, 2>;
using Triplet = std::array<std::size_t, 3>;

/// Index pairs (i < j) and triplets (i < j < k) over which the relational
/// terms are summed.
struct TupleSet {
    std::vector<Pair> pairs;
    std::vector<Triplet> triplets;
};

inline std::size_t choose2(std::size_t m) { return m < 2 ? 0 : m * (m - 1) / 2; }
inline std::size_t choose3(std::size_t m) { return m < 3 ? 0 : m * (m - 1) * (m - 2) / 6; }

/// All pairs and triplets in lexicographic order when their counts fit the
/// caps; otherwise uniform samples (with replacement) of exactly the capped
/// size, drawn from `rng`.
inline TupleSet make_tuples(std::size_t m, const RkdConfig& cfg, Rng* rng = nullptr) {
    TupleSet t;
    auto need_rng = [&rng]() -> Rng& {
        if (rng == nullptr) {
            throw std::invalid_argument("make_tuples: subsampling requires a random stream");
        }
        return *rng;
    };
    if (choose2(m) <= cfg.max_pairs) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) t.pairs.push_back({i, j});
    } else {
        Rng& r = need_rng();
        while (t.pairs.size() < cfg.max_pairs) {
            std::size_t i = r.below(m), j = r.below(m);
            if (i == j) continue;
            if (i > j) std::swap(i, j);
            t.pairs.push_back({i, j});
        }
    }
    if (choose3(m) <= cfg.max_triplets) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j)
                for (std::size_t k = j + 1; k < m; ++k) t.triplets.push_back({i, j, k});
    } else {
        Rng& r = need_rng();
        while (t.triplets.size() < cfg.max_triplets) {
            Triplet x{r.below(m), r.below(m), r.below(m)};
            std::sort(x.begin(), x.end());
            if (x[0] == x[1] || x[1] == x[2]) continue;
            t.triplets.push_back(x);
        }
    }
    return t;
}

/// Vertex/outer-point layout of the three angles of triplet (a, b, c):
/// angle 0 at a between b and c, angle 1 at b between a and c, angle 2 at c
/// between a and b.
inline std::array<std::array<std::size_t, 3>, 3> triplet_angles(const Triplet& t) {
    return {{{t[0], t[1], t[2]}, {t[1], t[0], t[2]}, {t[2], t[0], t[1]}}}; // {vertex, outer_i, outer_k}
}

struct RkdPotentials {
    double mu = 0.0;           ///< mean Euclidean distance over all pairs of the batch
    std::vector<double> dist;  ///< one per TupleSet pair
    std::vector<double> angle; ///< three per TupleSet triplet, see triplet_angles
};

namespace detail {

/// Cosines at every vertex v between all outer pairs, from exact difference
/// vectors: cos_v(i, k) = <f_i - f_v, f_k - f_v> / (|f_i - f_v| |f_k - f_v|).
struct VertexGeometry {
    Eigen::MatrixXd diff; ///< M x d, rows f_i - f_v
    Eigen::VectorXd norm; ///< M
    Eigen::MatrixXd gram; ///< M x M, diff diff^T
};

inline VertexGeometry vertex_geometry(const Eigen::MatrixXd& f, Eigen::Index v) {
    VertexGeometry g;
    g.diff = f.rowwise() - f.row(v);
    g.gram = g.diff * g.diff.transpose();
    g.norm = g.diff.rowwise().norm();
    return g;
}

inline double guarded_cos(const VertexGeometry& g, std::size_t i, std::size_t k, double eps) {
    const auto a = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(k);
    if (g.norm[a] < eps || g.norm[b] < eps) {
        return 0.0;
    }
    return std::clamp(g.gram(a, b) / (g.norm[a] * g.norm[b]), -1.0, 1.0);
}

inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& f) {
    const Eigen::Index m = f.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            d(i, j) = d(j, i) = (f.row(i) - f.row(j)).norm();
        }
    }
    return d;
}

inline double mean_pair_distance(const Eigen::MatrixXd& d) {
    const Eigen::Index m = d.rows();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j) sum += d(i, j);
    return sum / static_cast<double>(choose2(static_cast<std::size_t>(m)));
}

} // namespace detail

/// Distance potentials ||f_i - f_j|| / mu and angle cosines for the given
/// tuples. mu below epsilon zeroes every distance potential; a difference
/// vector shorter than epsilon zeroes its cosine.
template <typename Derived>
RkdPotentials rkd_potentials(const Eigen::MatrixBase<Derived>& features, const TupleSet& tuples,
                             double epsilon = 1e-12) {
    const Eigen::MatrixXd f = features.template cast<double>();
    const auto m = static_cast<std::size_t>(f.rows());
    if (m < 2) {
        throw std::invalid_argument("rkd_potentials: need at least 2 samples");
    }
    if (m < 3 && !tuples.triplets.empty()) {
        throw std::invalid_argument("rkd_potentials: angle potentials need at least 3 samples");
    }
    RkdPotentials out;
    const Eigen::MatrixXd d = detail::pairwise_distances(f);
    out.mu = detail::mean_pair_distance(d);
    const bool collapsed = out.mu < epsilon;
    out.dist.reserve(tuples.pairs.size());
    for (const auto& p : tuples.pairs) {
        out.dist.push_back(collapsed ? 0.0 : d(static_cast<Eigen::Index>(p[0]), static_cast<Eigen::Index>(p[1])) / out.mu);
    }
    if (tuples.triplets.empty()) {
        return out;
    }
    std::vector<std::optional<detail::VertexGeometry>> geo(m);
    out.angle.reserve(3 * tuples.triplets.size());
    for (const auto& t : tuples.triplets) {
        for (const auto& [v, i, k] : triplet_angles(t)) {
            if (!geo[v]) {
                geo[v] = detail::vertex_geometry(f, static_cast<Eigen::Index>(v));
            }
            out.angle.push_back(detail::guarded_cos(*geo[v], i, k, epsilon));
        }
    }
    return out;
}

/// Exact enumeration over every pair and (for M >= 3) every triplet.
template <typename Derived>
RkdPotentials rkd_potentials(const Eigen::MatrixBase<Derived>& features, const RkdConfig& cfg = {}) {
    const auto m = static_cast<std::size_t>(features.rows());
    if (m < 2) {
        throw std::invalid_argument("rkd_potentials: need at least 2 samples");
    }
    RkdConfig exact = cfg;
    exact.max_pairs = std::max(cfg.max_pairs, choose2(m));
    exact.max_triplets = std::max<std::size_t>(cfg.max_triplets, std::max<std::size_t>(1, choose3(m)));
    return rkd_potentials(features, make_tuples(m, exact), cfg.epsilon);
}

template <typename T>
struct RkdLoss {
    double loss = 0.0;
    double ce = 0.0;
    double dist = 0.0;  ///< normalized distance-wise term, before weight_dist
    double angle = 0.0; ///< normalized angle-wise term, before weight_angle
    bool angle_skipped = false;
    Matrix<T> grad_logits;
    Matrix<T> grad_features;
    std::size_t student_layer = 0;
};

/// Resolved (student, teacher) hidden-layer indices for the potentials.
inline std::pair<std::size_t, std::size_t> rkd_feature_layers(std::size_t student_hidden, std::size_t teacher_hidden,
                                                              const RkdConfig& cfg) {
    if (student_hidden < 1 || teacher_hidden < 1) {
        throw ConfigError("distill.rkd: both networks need at least one hidden layer");
    }
    if (!cfg.feature_layer) {
        return {student_hidden, teacher_hidden};
    }
    const std::size_t r = *cfg.feature_layer;
    if (r > student_hidden || r > teacher_hidden) {
        throw ConfigError("distill.rkd.feature_layer: layer " + std::to_string(r) +
                          " does not exist in both networks");
    }
    return {r, r};
}

/// CE + w_d L_dist / |pairs| + w_a L_angle / (3 |triplets|), with gradients on
/// the student logits and on the student feature layer. The distance
/// normalizer mu is differentiated as a function of the student features.
template <typename T>
RkdLoss<T> rkd_loss(const ForwardTrace<T>& student, const ForwardTrace<T>& teacher,
                    std::span<const std::uint16_t> labels, const RkdConfig& cfg, const TupleSet* tuples = nullptr) {
    cfg.validate();
    const auto m = static_cast<std::size_t>(student.logits().rows());
    if (m < 2) {
        throw std::invalid_argument("rkd_loss: the distance term needs a batch of at least 2");
    }
    if (static_cast<std::size_t>(teacher.logits().rows()) != m || labels.size() != m) {
        throw std::invalid_argument("rkd_loss: teacher and student traces come from different batches");
    }
    const auto [rs, rt] = rkd_feature_layers(student.hidden_layers(), teacher.hidden_layers(), cfg);

    TupleSet exact;
    if (tuples == nullptr) {
        RkdConfig c = cfg;
        c.max_pairs = std::max(cfg.max_pairs, choose2(m));
        c.max_triplets = std::max<std::size_t>(cfg.max_triplets, std::max<std::size_t>(1, choose3(m)));
        exact = make_tuples(m, c);
        tuples = &exact;
    }

    RkdLoss<T> out;
    out.student_layer = rs;
    out.angle_skipped = m < 3;

    // Classification term.
    const Matrix<T> p = softmax(student.logits());
    const Matrix<T> z = one_hot<T>(labels, static_cast<std::size_t>(p.cols()));
    out.ce = cross_entropy(p, z);
    out.grad_logits = (p - z) / static_cast<T>(m);

    const Eigen::MatrixXd fs = student.hidden(rs).template cast<double>();
    const Eigen::MatrixXd ft = teacher.hidden(rt).template cast<double>();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(fs.rows(), fs.cols());
    const double eps = cfg.epsilon;

    // Distance-wise term.
    TupleSet pairs_only{tuples->pairs, {}};
    const RkdPotentials pt = rkd_potentials(ft, pairs_only, eps);
    const Eigen::MatrixXd ds = detail::pairwise_distances(fs);
    const double mu = detail::mean_pair_distance(ds);
    const double n_pairs = static_cast<double>(tuples->pairs.size());
    if (!tuples->pairs.empty()) {
        double sum = 0.0;
        // coef(i, j): d loss / d dist_ij, accumulated for i < j.
        Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(fs.rows(), fs.rows());
        if (mu < eps) {
            for (std::size_t q = 0; q < tuples->pairs.size(); ++q) {
                sum += huber(pt.dist[q], 0.0);
            }
        } else {
            double weighted = 0.0; // sum_p G_p d_p
            for (std::size_t q = 0; q < tuples->pairs.size(); ++q) {
                const auto i = static_cast<Eigen::Index>(tuples->pairs[q][0]);
                const auto j = static_cast<Eigen::Index>(tuples->pairs[q][1]);
                const double psi = ds(i, j) / mu;
                sum += huber(pt.dist[q], psi);
                const double g = cfg.weight_dist / n_pairs * huber_grad_b(pt.dist[q], psi);
                coef(i, j) += g / mu;
                weighted += g * ds(i, j);
            }
            const double through_mu = weighted / (mu * mu * static_cast<double>(choose2(m)));
            for (Eigen::Index i = 0; i < fs.rows(); ++i) {
                for (Eigen::Index j = i + 1; j < fs.rows(); ++j) {
                    const double c = coef(i, j) - through_mu;
                    if (ds(i, j) < eps || c == 0.0) continue;
                    const Eigen::RowVectorXd dir = (fs.row(i) - fs.row(j)) / ds(i, j);
                    grad.row(i) += c * dir;
                    grad.row(j) -= c * dir;
                }
            }
        }
        out.dist = sum / n_pairs;
    }

    // Angle-wise term.
    if (!out.angle_skipped && !tuples->triplets.empty()) {
        const RkdPotentials pta = rkd_potentials(ft, TupleSet{{}, tuples->triplets}, eps);
        const double n_angles = 3.0 * static_cast<double>(tuples->triplets.size());
        // Per vertex v: symmetric coefficient matrix over outer points.
        std::vector<Eigen::MatrixXd> coef(m);
        std::vector<std::optional<detail::VertexGeometry>> geo(m);
        double sum = 0.0;
        std::size_t a = 0;
        for (const auto& t : tuples->triplets) {
            for (const auto& [v, i, k] : triplet_angles(t)) {
                if (!geo[v]) {
                    geo[v] = detail::vertex_geometry(fs, static_cast<Eigen::Index>(v));
                    coef[v] = Eigen::MatrixXd::Zero(fs.rows(), fs.rows());
                }
                const double cs = detail::guarded_cos(*geo[v], i, k, eps);
                sum += huber(pta.angle[a], cs);
                const double g = cfg.weight_angle / n_angles * huber_grad_b(pta.angle[a], cs);
                const auto ii = static_cast<Eigen::Index>(i);
                const auto kk = static_cast<Eigen::Index>(k);
                if (geo[v]->norm[ii] >= eps && geo[v]->norm[kk] >= eps) {
                    coef[v](ii, kk) += g;
                    coef[v](kk, ii) += g;
                }
                ++a;
            }
        }
        out.angle = sum / n_angles;
        for (std::size_t v = 0; v < m; ++v) {
            if (!geo[v]) continue;
            const auto& gv = *geo[v];
            // d cos(e_i, e_k) / d e_i = e_k / (|e_i||e_k|) - cos e_i / |e_i|^2
            Eigen::VectorXd inv = Eigen::VectorXd::Zero(gv.norm.size());
            for (Eigen::Index i = 0; i < inv.size(); ++i) {
                if (gv.norm[i] >= eps) inv[i] = 1.0 / gv.norm[i];
            }
            const Eigen::MatrixXd cosine = inv.asDiagonal() * gv.gram * inv.asDiagonal();
            const Eigen::MatrixXd scaled = inv.asDiagonal() * coef[v] * inv.asDiagonal();
            const Eigen::VectorXd self = (coef[v].cwiseProduct(cosine)).rowwise().sum().cwiseProduct(inv.cwiseAbs2());
            const Eigen::MatrixXd ge = scaled * gv.diff - self.asDiagonal() * gv.diff;
            grad += ge;
            grad.row(static_cast<Eigen::Index>(v)) -= ge.colwise().sum();
        }
    }

    out.loss = out.ce + cfg.weight_dist * out.dist + (out.angle_skipped ? 0.0 : cfg.weight_angle * out.angle);
    out.grad_features = grad.cast<T>();
    return out;
}

// ---------------------------------------------------------------------------
// Training

template <typename T>
struct DistillRun {
    const Mlp<T>& teacher;
    MlpArch student_arch;
    DistillMode mode = DistillMode::ikd;
    IkdConfig ikd{};
    RkdConfig rkd{};
    TrainConfig train{};
};

template <typename T>
struct DistillResult {
    Mlp<T> student;
    LossTrace trace;
    bool angle_term_skipped = false;
};

/// Checks a run against a dataset; throws ConfigError naming the problem.
template <typename T>
void validate_run(const DistillRun<T>& run, const LabeledDataset& ds) {
    run.train.validate();
    check_arch_matches(run.student_arch, ds, "distill.student_arch");
    check_arch_matches(run.teacher.arch, ds, "distill.teacher");
    if (run.mode == DistillMode::self && run.student_arch != run.teacher.arch) {
        throw ConfigError("distill.mode: self-distillation needs the student architecture " +
                          describe(run.student_arch) + " to equal the teacher's " + describe(run.teacher.arch));
    }
    if (run.mode == DistillMode::rkd) {
        run.rkd.validate();
        rkd_feature_layers(run.student_arch.hidden_layers(), run.teacher.arch.hidden_layers(), run.rkd);
    } else {
        run.ikd.validate();
    }
}

/// Per minibatch: teacher forward (no gradient), student forward, the mode's
/// loss, backpropagation and an Adam step. The student is initialized from
/// train.seed exactly like supervised training, so ikd with alpha = 0
/// reproduces train_supervised bit for bit.
template <typename T>
DistillResult<T> distill_train(const DistillRun<T>& run, const LabeledDataset& ds, const EpochSink& sink = {},
                               std::ostream* log = nullptr) {
    validate_run(run, ds);
    DistillResult<T> out{init<T>(run.student_arch, run.train.seed), {}, false};
    const Mlp<T>& teacher = run.teacher;
    Rng tuple_rng(run.train.seed, 2);
    bool warned_small = false;
    auto warn_small = [&](std::size_t m) {
        out.angle_term_skipped = true;
        if (!warned_small && log != nullptr) {
            *log << "warning: rkd batch of " << m << " sample(s) is too small for the angle-wise term; "
                 << (m < 2 ? "using cross-entropy only" : "omitting the angle-wise term") << "\n";
        }
        warned_small = true;
    };

    auto rkd_batch = [&](const Mlp<T>& net, const Matrix<T>& x, std::span<const std::uint16_t> y, Rng& rng,
                         bool with_grad) -> StepResult<T> {
        const ForwardTrace<T> st = forward(net, x);
        StepResult<T> res;
        if (x.rows() < 2) {
            warn_small(static_cast<std::size_t>(x.rows()));
            const Matrix<T> p = softmax(st.logits());
            const Matrix<T> z = one_hot<T>(y, net.arch.output_dim());
            res.loss = cross_entropy(p, z);
            if (with_grad) res.grads = backward(net, st, Matrix<T>((p - z) / static_cast<T>(x.rows())));
            return res;
        }
        const ForwardTrace<T> tt = forward(teacher, x);
        const TupleSet tuples = make_tuples(static_cast<std::size_t>(x.rows()), run.rkd, &rng);
        RkdLoss<T> l = rkd_loss(st, tt, y, run.rkd, &tuples);
        if (l.angle_skipped) warn_small(static_cast<std::size_t>(x.rows()));
        res.loss = l.loss;
        if (with_grad) {
            const FeatureGrad<T> fg{l.student_layer, std::move(l.grad_features)};
            res.grads = backward(net, st, l.grad_logits, &fg);
        }
        return res;
    };

    auto step = [&](const Mlp<T>& net, const Matrix<T>& x, std::span<const std::uint16_t> y) -> StepResult<T> {
        if (run.mode == DistillMode::rkd) {
            return rkd_batch(net, x, y, tuple_rng, true);
        }
        const Matrix<T> teacher_logits = forward(teacher, x).logits();
        const ForwardTrace<T> st = forward(net, x);
        IkdLoss<T> l = ikd_loss(st.logits(), teacher_logits, y, run.ikd);
        return {l.loss, backward(net, st, l.grad)};
    };

    auto validate = [&](const Mlp<T>& net) {
        const auto& idx = ds.split.val;
        const double ce = dataset_cross_entropy(net, ds, idx);
        if (idx.empty()) {
            return std::pair{ce, ce};
        }
        const std::size_t chunk = run.mode == DistillMode::rkd ? run.train.batch_size : 256;
        Rng val_rng(run.train.seed, 3);
        double total = 0.0;
        for (std::size_t start = 0; start < idx.size(); start += chunk) {
            const std::vector<std::size_t> part(
                idx.begin() + static_cast<std::ptrdiff_t>(start),
                idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + chunk)));
            const Matrix<T> x = ds.rows(part).template cast<T>();
            const auto y = ds.labels_of(part);
            double loss = 0.0;
            if (run.mode == DistillMode::rkd) {
                loss = rkd_batch(net, x, y, val_rng, false).loss;
            } else {
                loss = ikd_loss(forward(net, x).logits(), predict(teacher, x), y, run.ikd).loss;
            }
            total += loss * static_cast<double>(part.size());
        }
        return std::pair{total / static_cast<double>(idx.size()), ce};
    };

    out.trace = run_training(out.student, ds, run.train, step, validate, sink);
    return out;
}

} // namespace beamkd

#endif
