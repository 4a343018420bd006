#ifndef BEAMKD_NEURALNET_HPP
#define BEAMKD_NEURALNET_HPP

// Fully connected network with ReLU hidden layers and linear logits.
// Batches are row-major in the sense of "one sample per row": an M x d input
// produces M x n_classes logits. Parameters are templated on the scalar so the
// gradient checks can run in double while training runs in float.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamkd/dataset.hpp"
#include "beamkd/io.hpp"
#include "beamkd/rng.hpp"

namespace beamkd {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { relu, linear };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw std::invalid_argument("unknown activation '" + s + "' (expected relu or linear)");
}

struct MlpArch {
    std::vector<std::size_t> layer_dims; ///< d_in, hidden..., n_classes
    Activation activation = Activation::relu;

    std::size_t layers() const { return layer_dims.size() - 1; }
    std::size_t hidden_layers() const { return layer_dims.size() - 2; }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }

    void validate() const {
        if (layer_dims.size() < 2) {
            throw ConfigError("MLP needs at least input and output dimensions");
        }
        for (const auto d : layer_dims) {
            if (d < 1) {
                throw ConfigError("MLP layer dimensions must be >= 1");
            }
        }
    }

    friend bool operator==(const MlpArch&, const MlpArch&) = default;
};

inline std::string describe(const MlpArch& arch) {
    std::string s = "[";
    for (std::size_t i = 0; i < arch.layer_dims.size(); ++i) {
        s += (i ? "," : "") + std::to_string(arch.layer_dims[i]);
    }
    return s + "]";
}

template <typename T>
struct Mlp {
    MlpArch arch;
    std::vector<Matrix<T>> weights; ///< layer l: out x in
    std::vector<Vector<T>> biases;  ///< layer l: out

    template <typename U>
    Mlp<U> cast() const {
        Mlp<U> out;
        out.arch = arch;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.weights.push_back(weights[l].template cast<U>());
            out.biases.push_back(biases[l].template cast<U>());
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
        }
        return n;
    }

    friend bool operator==(const Mlp& a, const Mlp& b) {
        if (a.arch != b.arch || a.weights.size() != b.weights.size()) {
            return false;
        }
        for (std::size_t l = 0; l < a.weights.size(); ++l) {
            if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) {
                return false;
            }
        }
        return true;
    }
};

/// Glorot-uniform weights, zero biases. Weights are drawn layer by layer in
/// row-major order from stream (seed, 0).
template <typename T>
Mlp<T> init(const MlpArch& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed, 0);
    Mlp<T> net;
    net.arch = arch;
    for (std::size_t l = 0; l < arch.layers(); ++l) {
        const auto in = static_cast<Eigen::Index>(arch.layer_dims[l]);
        const auto out = static_cast<Eigen::Index>(arch.layer_dims[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        Matrix<T> w(out, in);
        for (Eigen::Index o = 0; o < out; ++o) {
            for (Eigen::Index i = 0; i < in; ++i) {
                w(o, i) = static_cast<T>(rng.uniform(-limit, limit));
            }
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector<T>::Zero(out));
    }
    return net;
}

/// act[0] is the input batch, act[l + 1] the output of layer l. For the last
/// layer act and pre coincide (the logits).
template <typename T>
struct ForwardTrace {
    std::vector<Matrix<T>> pre;
    std::vector<Matrix<T>> act;

    const Matrix<T>& logits() const { return act.back(); }

    /// Activation of hidden layer r, 1-based (r = 1 is the first hidden layer).
    const Matrix<T>& hidden(std::size_t r) const {
        if (r < 1 || r + 1 >= act.size()) {
            throw std::out_of_range("hidden layer " + std::to_string(r) + " does not exist");
        }
        return act[r];
    }

    std::size_t hidden_layers() const { return act.size() - 2; }
};

template <typename T>
ForwardTrace<T> forward(const Mlp<T>& net, const Matrix<T>& batch) {
    if (static_cast<std::size_t>(batch.cols()) != net.arch.input_dim()) {
        throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                                    std::to_string(net.arch.input_dim()));
    }
    ForwardTrace<T> trace;
    trace.act.push_back(batch);
    const std::size_t n = net.arch.layers();
    for (std::size_t l = 0; l < n; ++l) {
        Matrix<T> z = trace.act.back() * net.weights[l].transpose();
        z.rowwise() += net.biases[l].transpose();
        if (l + 1 < n && net.arch.activation == Activation::relu) {
            Matrix<T> a = z.cwiseMax(T(0));
            trace.pre.push_back(std::move(z));
            trace.act.push_back(std::move(a));
        } else {
            trace.pre.push_back(z);
            trace.act.push_back(std::move(z));
        }
    }
    return trace;
}

/// Logits for every row of `inputs`, evaluated in chunks.
template <typename T>
Matrix<T> predict(const Mlp<T>& net, const Matrix<T>& inputs, Eigen::Index chunk = 256) {
    Matrix<T> out(inputs.rows(), static_cast<Eigen::Index>(net.arch.output_dim()));
    for (Eigen::Index start = 0; start < inputs.rows(); start += chunk) {
        const Eigen::Index len = std::min(chunk, inputs.rows() - start);
        out.middleRows(start, len) = forward(net, Matrix<T>(inputs.middleRows(start, len))).logits();
    }
    return out;
}

/// Row-wise softmax of logits / temperature, with max subtraction.
template <typename T>
Matrix<T> softmax(const Matrix<T>& logits, double temperature = 1.0) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax temperature must be > 0");
    }
    const T inv_t = static_cast<T>(1.0 / temperature);
    Matrix<T> p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto scaled = (logits.row(i) * inv_t).eval();
        const T m = scaled.maxCoeff();
        p.row(i) = (scaled.array() - m).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

template <typename T>
Matrix<T> one_hot(std::span<const std::uint16_t> labels, std::size_t n_classes) {
    Matrix<T> z = Matrix<T>::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " >= n_classes");
        }
        z(static_cast<Eigen::Index>(i), labels[i]) = T(1);
    }
    return z;
}

inline constexpr double kLogClamp = 1e-12;

/// Mean over rows of -sum_c target_c ln(max(pred_c, 1e-12)), in nats.
template <typename T>
double cross_entropy(const Matrix<T>& pred, const Matrix<T>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("cross_entropy: shape mismatch");
    }
    if (pred.rows() == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
            const double t = static_cast<double>(target(i, c));
            if (t != 0.0) {
                total -= t * std::log(std::max(static_cast<double>(pred(i, c)), kLogClamp));
            }
        }
    }
    return total / static_cast<double>(pred.rows());
}

template <typename T>
struct Gradients {
    std::vector<Matrix<T>> weights;
    std::vector<Vector<T>> biases;

    static Gradients zeros_like(const Mlp<T>& net) {
        Gradients g;
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            g.weights.push_back(Matrix<T>::Zero(net.weights[l].rows(), net.weights[l].cols()));
            g.biases.push_back(Vector<T>::Zero(net.biases[l].size()));
        }
        return g;
    }
};

/// Extra loss gradient with respect to the activation of hidden layer
/// `layer` (1-based, as in ForwardTrace::hidden).
template <typename T>
struct FeatureGrad {
    std::size_t layer = 0;
    Matrix<T> grad;
};

template <typename T>
Gradients<T> backward(const Mlp<T>& net, const ForwardTrace<T>& trace, const Matrix<T>& dlogits,
                      const FeatureGrad<T>* feature_grad = nullptr) {
    const std::size_t n = net.arch.layers();
    if (trace.act.size() != n + 1 || trace.pre.size() != n) {
        throw std::invalid_argument("backward: trace does not belong to this network");
    }
    for (std::size_t l = 0; l < n; ++l) {
        if (trace.act[l].cols() != net.weights[l].cols() || trace.pre[l].cols() != net.weights[l].rows()) {
            throw std::invalid_argument("backward: trace does not belong to this network");
        }
    }
    if (dlogits.rows() != trace.logits().rows() || dlogits.cols() != trace.logits().cols()) {
        throw std::invalid_argument("backward: upstream gradient shape mismatch");
    }
    if (feature_grad != nullptr) {
        if (feature_grad->layer < 1 || feature_grad->layer >= n) {
            throw std::out_of_range("backward: feature gradient for non-existent hidden layer");
        }
        const auto& a = trace.act[feature_grad->layer];
        if (feature_grad->grad.rows() != a.rows() || feature_grad->grad.cols() != a.cols()) {
            throw std::invalid_argument("backward: feature gradient shape mismatch");
        }
    }

    Gradients<T> g;
    g.weights.resize(n);
    g.biases.resize(n);
    Matrix<T> delta = dlogits;
    for (std::size_t l = n; l-- > 0;) {
        g.weights[l] = delta.transpose() * trace.act[l];
        g.biases[l] = delta.colwise().sum().transpose();
        if (l == 0) {
            break;
        }
        Matrix<T> upstream = delta * net.weights[l];
        if (feature_grad != nullptr && feature_grad->layer == l) {
            upstream += feature_grad->grad;
        }
        if (net.arch.activation == Activation::relu) {
            upstream = (trace.pre[l - 1].array() > T(0)).select(upstream, T(0));
        }
        delta = std::move(upstream);
    }
    return g;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    Gradients<T> m;
    Gradients<T> v;
    std::uint64_t step = 0;

    explicit AdamState(const Mlp<T>& net) : m(Gradients<T>::zeros_like(net)), v(Gradients<T>::zeros_like(net)) {}
};

/// One bias-corrected Adam update in place.
template <typename T>
void adam_step(Mlp<T>& net, AdamState<T>& state, const Gradients<T>& grads, double learning_rate,
               const AdamConfig& cfg = {}) {
    ++state.step;
    const auto t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
    const T lr = static_cast<T>(learning_rate);
    const T eps = static_cast<T>(cfg.epsilon);
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = b1 * m + (T(1) - b1) * g;
        v.array() = b2 * v.array() + (T(1) - b2) * g.array().square();
        param.array() -= lr * ((m.array() * c1) / ((v.array() * c2).sqrt() + eps));
    };
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        update(net.weights[l], state.m.weights[l], state.v.weights[l], grads.weights[l]);
        update(net.biases[l], state.m.biases[l], state.v.biases[l], grads.biases[l]);
    }
}

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const {
        if (epochs < 1) throw ConfigError("training.epochs: must be >= 1");
        if (batch_size < 1) throw ConfigError("training.batch_size: must be >= 1");
        if (!(learning_rate >= 0.0)) throw ConfigError("training.learning_rate: must be >= 0");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("training.adam.beta1: must be in [0, 1)");
        if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("training.adam.beta2: must be in [0, 1)");
        if (!(adam.epsilon > 0.0)) throw ConfigError("training.adam.epsilon: must be > 0");
    }
};

/// Losses after one full pass. val_loss is the model's own training
/// objective on the validation split; val_ce is plain cross-entropy.
struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_ce = 0.0;
};

using LossTrace = std::vector<EpochRecord>;
using EpochSink = std::function<void(const EpochRecord&)>;

inline json to_json(const LossTrace& trace) {
    json rows = json::array();
    for (const auto& r : trace) {
        rows.push_back({{"epoch", r.epoch}, {"train_loss", finite_or_null(r.train_loss)},
                        {"val_loss", finite_or_null(r.val_loss)},
                        {"val_ce", finite_or_null(r.val_ce)}});
    }
    return rows;
}

inline LossTrace loss_trace_from_json(const json& j) {
    LossTrace trace;
    for (const auto& r : j) {
        auto num = [&r](const char* key) { return r.at(key).is_null() ? std::nan("") : r.at(key).get<double>(); };
        trace.push_back({r.at("epoch").get<std::size_t>(), num("train_loss"), num("val_loss"), num("val_ce")});
    }
    return trace;
}

template <typename T>
struct StepResult {
    double loss = 0.0;
    Gradients<T> grads;
};

/// Mean cross-entropy of `net` on the given rows, evaluated in chunks.
template <typename T>
double dataset_cross_entropy(const Mlp<T>& net, const LabeledDataset& ds, const std::vector<std::size_t>& idx,
                             std::size_t chunk = 256) {
    if (idx.empty()) {
        return std::nan("");
    }
    double total = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                            idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + chunk)));
        const Matrix<T> x = ds.rows(part).template cast<T>();
        const auto labels = ds.labels_of(part);
        const Matrix<T> p = softmax(forward(net, x).logits());
        total += cross_entropy(p, one_hot<T>(labels, ds.n_classes)) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(idx.size());
}

/// Minibatch loop shared by supervised and distillation training: shuffle the
/// training split with stream (seed, 1), call `step` per batch, apply Adam,
/// then `validate` once per epoch. `validate` returns {val_loss, val_ce}.
template <typename T, typename Step, typename Validate>
LossTrace run_training(Mlp<T>& net, const LabeledDataset& ds, const TrainConfig& cfg, Step&& step,
                       Validate&& validate, const EpochSink& sink = {}) {
    cfg.validate();
    AdamState<T> state(net);
    Rng rng(cfg.seed, 1);
    std::vector<std::size_t> order = ds.split.train;
    LossTrace trace;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) {
            rng.shuffle(order);
        }
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            const Matrix<T> x = ds.rows(idx).template cast<T>();
            const std::vector<std::uint16_t> y = ds.labels_of(idx);
            StepResult<T> res = step(net, x, y);
            total += res.loss * static_cast<double>(idx.size());
            adam_step(net, state, res.grads, cfg.learning_rate, cfg.adam);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = order.empty() ? std::nan("") : total / static_cast<double>(order.size());
        const auto [val_loss, val_ce] = validate(net);
        rec.val_loss = val_loss;
        rec.val_ce = val_ce;
        trace.push_back(rec);
        if (sink) {
            sink(rec);
        }
    }
    return trace;
}

template <typename T>
struct TrainResult {
    Mlp<T> model;
    LossTrace trace;
};

/// Cross-entropy loss and its gradient on the logits, (p - z) / M.
template <typename T>
StepResult<T> supervised_step(const Mlp<T>& net, const Matrix<T>& x, std::span<const std::uint16_t> y) {
    const ForwardTrace<T> trace = forward(net, x);
    const Matrix<T> p = softmax(trace.logits());
    const Matrix<T> z = one_hot<T>(y, net.arch.output_dim());
    StepResult<T> res;
    res.loss = cross_entropy(p, z);
    const Matrix<T> dlogits = (p - z) / static_cast<T>(x.rows());
    res.grads = backward(net, trace, dlogits);
    return res;
}

inline void check_arch_matches(const MlpArch& arch, const LabeledDataset& ds, const std::string& what) {
    arch.validate();
    if (arch.input_dim() != ds.d_in || arch.output_dim() != ds.n_classes) {
        throw ConfigError(what + ": architecture " + describe(arch) + " does not match dataset d_in=" +
                          std::to_string(ds.d_in) + ", n_classes=" + std::to_string(ds.n_classes));
    }
}

/// Teacher and non-distilled baseline training: minimizes cross-entropy on
/// the training split, weights initialized from cfg.seed.
template <typename T>
TrainResult<T> train_supervised(const MlpArch& arch, const LabeledDataset& ds, const TrainConfig& cfg,
                                const EpochSink& sink = {}) {
    check_arch_matches(arch, ds, "training.arch");
    TrainResult<T> out{init<T>(arch, cfg.seed), {}};
    auto validate = [&ds](const Mlp<T>& net) {
        const double ce = dataset_cross_entropy(net, ds, ds.split.val);
        return std::pair{ce, ce};
    };
    out.trace = run_training(out.model, ds, cfg, supervised_step<T>, validate, sink);
    return out;
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr const char* kModelFormat = "beamkd-model";

inline json arch_to_json(const MlpArch& arch) {
    return {{"layer_dims", arch.layer_dims}, {"activation", to_string(arch.activation)}};
}

/// `info` is merged into the header (name, seed, training settings).
template <typename T>
void save_model(const std::filesystem::path& path, const Mlp<T>& net, const json& info = json::object()) {
    PayloadWriter w;
    for (const auto& wl : net.weights) {
        for (Eigen::Index o = 0; o < wl.rows(); ++o) {
            for (Eigen::Index i = 0; i < wl.cols(); ++i) {
                w.f32(static_cast<float>(wl(o, i)));
            }
        }
    }
    for (const auto& b : net.biases) {
        for (Eigen::Index o = 0; o < b.size(); ++o) {
            w.f32(static_cast<float>(b[o]));
        }
    }
    json header = info;
    header["format"] = kModelFormat;
    header["format_version"] = kFormatVersion;
    header["layer_dims"] = net.arch.layer_dims;
    header["activation"] = to_string(net.arch.activation);
    write_header_file(path, std::move(header), w.bytes());
}

struct ModelFile {
    Mlp<float> model;
    json header;
};

inline ModelFile load_model(const std::filesystem::path& path) {
    HeaderFile file = read_header_file(path, kModelFormat);
    ModelFile out;
    out.model.arch.layer_dims = header_field<std::vector<std::size_t>>(file.header, "layer_dims");
    try {
        out.model.arch.activation = activation_from_string(header_field<std::string>(file.header, "activation"));
        out.model.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "': " + e.what());
    }
    const auto& dims = out.model.arch.layer_dims;
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        count += dims[l] * dims[l + 1] + dims[l + 1];
    }
    if (file.payload.size() != count * 4) {
        throw FormatError(FormatErrorKind::dimension_mismatch,
                          "'" + path.string() + "': payload of " + std::to_string(file.payload.size()) +
                              " bytes does not match layer_dims " + describe(out.model.arch));
    }
    PayloadReader r(file.payload);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Matrix<float> w(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l]));
        for (Eigen::Index o = 0; o < w.rows(); ++o) {
            for (Eigen::Index i = 0; i < w.cols(); ++i) {
                w(o, i) = r.f32();
            }
        }
        out.model.weights.push_back(std::move(w));
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Vector<float> b(static_cast<Eigen::Index>(dims[l + 1]));
        for (Eigen::Index o = 0; o < b.size(); ++o) {
            b[o] = r.f32();
        }
        out.model.biases.push_back(std::move(b));
    }
    out.header = std::move(file.header);
    return out;
}

} // namespace beamkd

#endif
