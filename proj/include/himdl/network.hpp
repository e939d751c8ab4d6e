#pragma once

// Small fully connected regression network with joint (p, mu) output heads,
// plus the training loop: Adam with weight decay, seeded Kaiming
// initialization, feature standardization, and early stopping on validation
// loss. Training is single-threaded and bit-deterministic for a fixed seed;
// inference forward passes are pure.

#include <himdl/common.hpp>
#include <himdl/io.hpp>
#include <himdl/losses.hpp>
#include <himdl/synthgen.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace himdl {

enum class HeadKind : std::uint8_t { joint = 0, p_only = 1, mu_only = 2 };

inline const char* head_name(HeadKind h) {
    switch (h) {
        case HeadKind::joint: return "joint";
        case HeadKind::p_only: return "p_only";
        case HeadKind::mu_only: return "mu_only";
    }
    return "?";
}

struct NetConfig {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden = {64, 64};
    std::uint64_t seed = 0;
    HeadKind heads = HeadKind::joint;

    std::size_t output_dim() const {
        return heads == HeadKind::joint ? 2 : 1;
    }

    void validate() const {
        if (input_dim == 0)
            throw std::invalid_argument("NetConfig: input_dim must be > 0");
        for (std::size_t w : hidden)
            if (w == 0)
                throw std::invalid_argument("NetConfig: zero-width layer");
    }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double sigma = 0.5;  // fixed lognormal scale hyperparameter

    void validate() const {
        if (!(learning_rate > 0.0))
            throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (!(weight_decay >= 0.0))
            throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (batch_size == 0 || max_epochs == 0)
            throw std::invalid_argument(
                "TrainConfig: batch_size and max_epochs must be > 0");
        if (patience > max_epochs)
            throw std::invalid_argument("TrainConfig: patience > max_epochs");
        if (!(sigma > 0.0))
            throw std::invalid_argument("TrainConfig: sigma must be > 0");
    }
};

// Head outputs. p is sigmoid-bounded into (0,1); mu is an unbounded linear
// output. Fields not produced by the head kind stay at their defaults.
struct HeadValues {
    double p = 0.0;
    double mu = 0.0;
};

struct HeadGrad {
    double d_p = 0.0;
    double d_mu = 0.0;
};

// Clamped away from exact 0/1 so the open-interval head contract survives
// floating-point saturation.
inline double sigmoid(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    return std::clamp(v, 1e-15, 1.0 - 1e-15);
}

class Mlp;

// Activations recorded by a tracing forward pass; consumed by backward().
struct ForwardTrace {
    const Mlp* net = nullptr;
    std::vector<std::vector<double>> act;  // act[0] = input, act[l] post-relu
    std::vector<std::vector<double>> pre;  // pre[l] = z of layer l
};

class Mlp {
public:
    explicit Mlp(const NetConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        dims_.push_back(cfg_.input_dim);
        for (std::size_t w : cfg_.hidden) dims_.push_back(w);
        dims_.push_back(cfg_.output_dim());
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            w_off_.push_back(total);
            total += dims_[l + 1] * dims_[l];
            b_off_.push_back(total);
            total += dims_[l + 1];
        }
        params_.assign(total, 0.0);
        // Kaiming fan-in scaling, biases zero
        Rng rng(cfg_.seed);
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            const double scale =
                std::sqrt(2.0 / static_cast<double>(dims_[l]));
            double* w = params_.data() + w_off_[l];
            for (std::size_t i = 0; i < dims_[l + 1] * dims_[l]; ++i)
                w[i] = scale * rng.normal();
        }
    }

    const NetConfig& config() const { return cfg_; }
    std::size_t param_count() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    void set_params(std::span<const double> p) {
        if (p.size() != params_.size())
            throw std::invalid_argument("Mlp::set_params: size mismatch");
        std::copy(p.begin(), p.end(), params_.begin());
    }

    HeadValues forward(std::span<const double> x) const {
        thread_local ForwardTrace scratch;
        return forward(x, scratch);
    }

    HeadValues forward(std::span<const double> x, ForwardTrace& trace) const {
        if (x.size() != cfg_.input_dim)
            throw std::invalid_argument("Mlp::forward: feature dim mismatch");
        for (double v : x)
            if (!std::isfinite(v))
                throw std::invalid_argument("Mlp::forward: non-finite feature");
        const std::size_t layers = dims_.size() - 1;
        trace.net = this;
        trace.act.resize(layers + 1);
        trace.pre.resize(layers);
        trace.act[0].assign(x.begin(), x.end());
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t in = dims_[l], out = dims_[l + 1];
            const double* w = params_.data() + w_off_[l];
            const double* b = params_.data() + b_off_[l];
            const double* a = trace.act[l].data();
            trace.pre[l].resize(out);
            for (std::size_t i = 0; i < out; ++i) {
                double acc = b[i];
                const double* wr = w + i * in;
                for (std::size_t j = 0; j < in; ++j) acc += wr[j] * a[j];
                trace.pre[l][i] = acc;
            }
            trace.act[l + 1].resize(out);
            if (l + 1 < layers) {
                for (std::size_t i = 0; i < out; ++i)
                    trace.act[l + 1][i] = std::max(trace.pre[l][i], 0.0);
            } else {
                trace.act[l + 1] = trace.pre[l];
            }
        }
        return heads_from_output(trace.pre.back());
    }

    std::vector<HeadValues> forward_batch(std::span<const double> features,
                                          std::size_t n) const {
        if (features.size() != n * cfg_.input_dim)
            throw std::invalid_argument("Mlp::forward_batch: size mismatch");
        std::vector<HeadValues> out(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = forward(features.subspan(i * cfg_.input_dim, cfg_.input_dim));
        return out;
    }

    // Accumulates parameter gradients for one sample into grad (+=).
    // Requires the trace of a forward pass on this network.
    void backward_into(const ForwardTrace& trace, const HeadGrad& hg,
                       std::span<double> grad) const {
        if (trace.net != this || trace.act.empty())
            throw std::logic_error(
                "Mlp::backward: no matching forward trace (stale activations)");
        if (grad.size() != params_.size())
            throw std::invalid_argument("Mlp::backward: grad size mismatch");
        const std::size_t layers = dims_.size() - 1;
        std::vector<double> delta = output_delta(trace.pre.back(), hg);
        std::vector<double> prev;
        for (std::size_t l = layers; l-- > 0;) {
            const std::size_t in = dims_[l], out = dims_[l + 1];
            const double* a = trace.act[l].data();
            double* gw = grad.data() + w_off_[l];
            double* gb = grad.data() + b_off_[l];
            for (std::size_t i = 0; i < out; ++i) {
                const double d = delta[i];
                double* gr = gw + i * in;
                for (std::size_t j = 0; j < in; ++j) gr[j] += d * a[j];
                gb[i] += d;
            }
            if (l == 0) break;
            prev.assign(in, 0.0);
            const double* w = params_.data() + w_off_[l];
            for (std::size_t i = 0; i < out; ++i) {
                const double d = delta[i];
                const double* wr = w + i * in;
                for (std::size_t j = 0; j < in; ++j) prev[j] += wr[j] * d;
            }
            for (std::size_t j = 0; j < in; ++j)
                if (trace.pre[l - 1][j] <= 0.0) prev[j] = 0.0;
            delta.swap(prev);
        }
    }

    std::vector<double> backward(const ForwardTrace& trace,
                                 const HeadGrad& hg) const {
        std::vector<double> grad(params_.size(), 0.0);
        backward_into(trace, hg, grad);
        return grad;
    }

private:
    HeadValues heads_from_output(const std::vector<double>& z) const {
        HeadValues h;
        switch (cfg_.heads) {
            case HeadKind::joint:
                h.p = sigmoid(z[0]);
                h.mu = z[1];
                break;
            case HeadKind::p_only:
                h.p = sigmoid(z[0]);
                break;
            case HeadKind::mu_only:
                h.mu = z[0];
                break;
        }
        return h;
    }

    // Chain the loss gradient at the heads through the head activations.
    std::vector<double> output_delta(const std::vector<double>& z,
                                     const HeadGrad& hg) const {
        std::vector<double> delta(z.size(), 0.0);
        switch (cfg_.heads) {
            case HeadKind::joint: {
                const double p = sigmoid(z[0]);
                delta[0] = hg.d_p * p * (1.0 - p);
                delta[1] = hg.d_mu;
                break;
            }
            case HeadKind::p_only: {
                const double p = sigmoid(z[0]);
                delta[0] = hg.d_p * p * (1.0 - p);
                break;
            }
            case HeadKind::mu_only:
                delta[0] = hg.d_mu;
                break;
        }
        return delta;
    }

    NetConfig cfg_;
    std::vector<std::size_t> dims_;
    std::vector<std::size_t> w_off_;
    std::vector<std::size_t> b_off_;
    std::vector<double> params_;
};

// Feature standardization fitted on the training split; the stored statistics
// reproduce training-time inputs exactly at inference.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> std_dev;

    static Normalizer fit(std::span<const double> features, std::size_t n,
                          std::size_t channels) {
        if (n == 0 || features.size() != n * channels)
            throw std::invalid_argument("Normalizer::fit: bad shape");
        Normalizer norm;
        norm.mean.assign(channels, 0.0);
        norm.std_dev.assign(channels, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < channels; ++c)
                norm.mean[c] += features[i * channels + c];
        for (double& m : norm.mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = features[i * channels + c] - norm.mean[c];
                norm.std_dev[c] += d * d;
            }
        for (double& s : norm.std_dev)
            s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-12);
        return norm;
    }

    void apply(std::span<const double> in, std::span<double> out) const {
        for (std::size_t c = 0; c < in.size(); ++c)
            out[c] = (in[c] - mean[c]) / std_dev[c];
    }
};

struct TrainingHistory {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

struct Checkpoint {
    NetConfig net;
    TrainConfig train;
    Normalizer norm;
    std::vector<double> params;
    TrainingHistory history;
};

// Per-sample loss: value plus gradients at the heads.
struct SampleLoss {
    double value = 0.0;
    HeadGrad grad;
};

using LossFn = std::function<SampleLoss(const HeadValues&, double label)>;

// ---------------------------------------------------------------------------
// Loss adapters
// ---------------------------------------------------------------------------

// Full hurdle objective (joint head); include_corr = false drops exactly the
// correction term.
inline LossFn hurdle_loss_fn(double sigma, const MarginalPrior& prior,
                             bool include_corr) {
    return [=](const HeadValues& h, double label) {
        SampleLoss out;
        out.value =
            nll_terms(label, h.p, h.mu, sigma, prior, include_corr).total;
        const LossGrad g =
            nll_grad(label, h.p, h.mu, sigma, prior, include_corr);
        out.grad = {g.d_p, g.d_mu};
        return out;
    };
}

// Occurrence part only (p_only head): dry + wet terms.
inline LossFn occurrence_loss_fn() {
    return [](const HeadValues& h, double label) {
        const double pc = clamp_prob(h.p);
        SampleLoss out;
        if (label == 0.0) {
            out.value = -std::log(pc);
            out.grad.d_p = -1.0 / pc;
        } else {
            out.value = -std::log(1.0 - pc);
            out.grad.d_p = 1.0 / (1.0 - pc);
        }
        return out;
    };
}

// Rate part only (mu_only head, wet samples): lognormal + correction terms.
inline LossFn rate_loss_fn(double sigma, const MarginalPrior& prior,
                           bool include_corr) {
    return [=](const HeadValues& h, double label) {
        const NllTerms t =
            nll_terms(label, 0.5, h.mu, sigma, prior, include_corr);
        const LossGrad g =
            nll_grad(label, 0.5, h.mu, sigma, prior, include_corr);
        SampleLoss out;
        out.value = t.lognorm + t.corr;
        out.grad.d_mu = g.d_mu;
        return out;
    };
}

// MSE-family baselines (mu_only head used as a raw rate output).
inline LossFn mse_loss_fn(WeightScheme scheme) {
    return [scheme = std::move(scheme)](const HeadValues& h, double label) {
        const MseLoss l = weighted_mse(h.mu, label, scheme);
        SampleLoss out;
        out.value = l.value;
        out.grad.d_mu = l.d_pred;
        return out;
    };
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_u64() % i]);
    return idx;
}

inline double mean_loss(const Mlp& mlp, const Normalizer& norm,
                        const Dataset& data, const LossFn& loss) {
    std::vector<double> x(mlp.config().input_dim);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        norm.apply(data.feature_row(i), x);
        acc += loss(mlp.forward(x), data.labels[i]).value;
    }
    return acc / static_cast<double>(data.size());
}

}  // namespace detail

struct AdamState {
    std::vector<double> m, v;
    std::size_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad,
              double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

inline Checkpoint train(const NetConfig& net_cfg, const TrainConfig& train_cfg,
                        const Dataset& train_set, const Dataset& val_set,
                        const LossFn& loss) {
    net_cfg.validate();
    train_cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0)
        throw std::invalid_argument("train: empty split");
    if (train_set.channels != net_cfg.input_dim)
        throw std::invalid_argument("train: input_dim != dataset channels");

    const Normalizer norm = Normalizer::fit(
        train_set.features, train_set.size(), train_set.channels);
    Mlp mlp(net_cfg);
    AdamState adam(mlp.param_count());
    Rng shuffle_rng(net_cfg.seed ^ 0x5eedbeefULL);

    std::vector<double> grad(mlp.param_count());
    std::vector<double> x(net_cfg.input_dim);
    ForwardTrace trace;

    Checkpoint best;
    best.net = net_cfg;
    best.train = train_cfg;
    best.norm = norm;
    best.params.assign(mlp.params().begin(), mlp.params().end());

    TrainingHistory hist;
    std::size_t bad_epochs = 0;
    const std::size_t n = train_set.size();

    for (std::size_t epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
        const auto order = detail::shuffled_indices(n, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch_idx = 0; start < n;
             start += train_cfg.batch_size, ++batch_idx) {
            const std::size_t stop = std::min(n, start + train_cfg.batch_size);
            const std::size_t count = stop - start;
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                norm.apply(train_set.feature_row(i), x);
                const HeadValues h = mlp.forward(x, trace);
                const SampleLoss sl = loss(h, train_set.labels[i]);
                batch_loss += sl.value;
                mlp.backward_into(trace, sl.grad, grad);
            }
            if (!std::isfinite(batch_loss))
                throw DivergenceError(
                    "training diverged: non-finite loss at epoch " +
                    std::to_string(epoch) + ", batch " +
                    std::to_string(batch_idx));
            const double inv = 1.0 / static_cast<double>(count);
            for (std::size_t j = 0; j < grad.size(); ++j)
                grad[j] = grad[j] * inv +
                          train_cfg.weight_decay * mlp.params()[j];
            adam.step(mlp.params(), grad, train_cfg.learning_rate);
            epoch_loss += batch_loss;
        }
        hist.train_loss.push_back(epoch_loss / static_cast<double>(n));

        const double val = detail::mean_loss(mlp, norm, val_set, loss);
        if (!std::isfinite(val))
            throw DivergenceError(
                "training diverged: non-finite validation loss at epoch " +
                std::to_string(epoch));
        hist.val_loss.push_back(val);

        if (val < hist.best_val_loss) {
            hist.best_val_loss = val;
            hist.best_epoch = epoch;
            best.params.assign(mlp.params().begin(), mlp.params().end());
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs > train_cfg.patience) break;
        }
    }

    best.history = std::move(hist);
    return best;
}

// Sequential estimation: an occurrence net over all samples and a rate net
// over wet samples only.
inline std::pair<Checkpoint, Checkpoint> two_model_train(
    const NetConfig& p_cfg, const NetConfig& mu_cfg,
    const TrainConfig& train_cfg, const Dataset& train_set,
    const Dataset& val_set, const MarginalPrior& prior, bool include_corr) {
    if (p_cfg.heads != HeadKind::p_only || mu_cfg.heads != HeadKind::mu_only)
        throw std::invalid_argument(
            "two_model_train: needs p_only and mu_only head configs");
    Checkpoint p_ckpt =
        train(p_cfg, train_cfg, train_set, val_set, occurrence_loss_fn());
    const Dataset wet_train = filter_wet(train_set);
    const Dataset wet_val = filter_wet(val_set);
    Checkpoint mu_ckpt =
        train(mu_cfg, train_cfg, wet_train, wet_val,
              rate_loss_fn(train_cfg.sigma, prior, include_corr));
    return {std::move(p_ckpt), std::move(mu_ckpt)};
}

// Inference wrapper: rebuilds the network and applies the stored
// normalization statistics.
class Predictor {
public:
    explicit Predictor(const Checkpoint& ckpt)
        : mlp_(ckpt.net), norm_(ckpt.norm) {
        mlp_.set_params(ckpt.params);
    }

    HeadValues operator()(std::span<const double> features) const {
        std::vector<double> x(features.size());
        norm_.apply(features, x);
        return mlp_.forward(x);
    }

    const Mlp& mlp() const { return mlp_; }

private:
    Mlp mlp_;
    Normalizer norm_;
};

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCheckpointMagic[9] = "HIMDLCK1";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    auto out = io::open_out(path);
    io::write_magic(out, detail::kCheckpointMagic);
    io::write_pod<std::uint32_t>(out, detail::kCheckpointVersion);
    io::write_pod<std::uint64_t>(out, c.net.input_dim);
    io::write_pod<std::uint64_t>(out, c.net.hidden.size());
    for (std::size_t w : c.net.hidden)
        io::write_pod<std::uint64_t>(out, w);
    io::write_pod<std::uint64_t>(out, c.net.seed);
    io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(c.net.heads));
    io::write_pod<double>(out, c.train.learning_rate);
    io::write_pod<double>(out, c.train.weight_decay);
    io::write_pod<std::uint64_t>(out, c.train.batch_size);
    io::write_pod<std::uint64_t>(out, c.train.max_epochs);
    io::write_pod<std::uint64_t>(out, c.train.patience);
    io::write_pod<double>(out, c.train.sigma);
    io::write_f64_array(out, c.norm.mean);
    io::write_f64_array(out, c.norm.std_dev);
    io::write_f64_array(out, c.params);
    io::write_f64_array(out, c.history.train_loss);
    io::write_f64_array(out, c.history.val_loss);
    io::write_pod<std::uint64_t>(out, c.history.best_epoch);
    io::write_pod<double>(out, c.history.best_val_loss);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    auto in = io::open_in(path);
    io::expect_magic(in, detail::kCheckpointMagic, "checkpoint");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (version != detail::kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " +
                      std::to_string(version));
    Checkpoint c;
    c.net.input_dim = io::read_pod<std::uint64_t>(in);
    c.net.hidden.resize(io::read_pod<std::uint64_t>(in));
    for (auto& w : c.net.hidden) w = io::read_pod<std::uint64_t>(in);
    c.net.seed = io::read_pod<std::uint64_t>(in);
    c.net.heads = static_cast<HeadKind>(io::read_pod<std::uint8_t>(in));
    c.train.learning_rate = io::read_pod<double>(in);
    c.train.weight_decay = io::read_pod<double>(in);
    c.train.batch_size = io::read_pod<std::uint64_t>(in);
    c.train.max_epochs = io::read_pod<std::uint64_t>(in);
    c.train.patience = io::read_pod<std::uint64_t>(in);
    c.train.sigma = io::read_pod<double>(in);
    c.norm.mean = io::read_f64_array(in);
    c.norm.std_dev = io::read_f64_array(in);
    c.params = io::read_f64_array(in);
    c.history.train_loss = io::read_f64_array(in);
    c.history.val_loss = io::read_f64_array(in);
    c.history.best_epoch = io::read_pod<std::uint64_t>(in);
    c.history.best_val_loss = io::read_pod<double>(in);
    return c;
}

}  // namespace himdl
