#pragma once

// Training objectives: the four-term hurdle negative log-likelihood with its
// closed-form gradients, and the MSE-family baselines (plain, linearly
// weighted, inverse-frequency weighted).
//
// The correction term equals log_product_integral((mu, sigma), (lmu, lsigma))
// plus ln(2 pi)/2; the constant is dropped from the analytic decomposition
// and re-added only in tests that cross-check the two routes.

#include <himdl/common.hpp>
#include <himdl/hurdle.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace himdl {

// Per-sample decomposition. Exactly one side is active: the dry term for
// zero labels, the remaining three for positive labels.
struct NllTerms {
    double dry = 0.0;
    double wet = 0.0;
    double lognorm = 0.0;
    double corr = 0.0;
    double total = 0.0;
};

struct LossGrad {
    double d_p = 0.0;
    double d_mu = 0.0;
};

inline double clamp_prob(double p) {
    return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

inline NllTerms nll_terms(double label, double p, double mu, double sigma,
                          const MarginalPrior& prior, bool include_corr = true) {
    if (label < 0.0)
        throw std::domain_error("nll_terms: label must be >= 0");
    if (!(sigma > 0.0))
        throw std::invalid_argument("nll_terms: sigma must be > 0");
    const double pc = clamp_prob(p);
    NllTerms t;
    if (label == 0.0) {
        t.dry = -std::log(pc);
        t.total = t.dry;
        return t;
    }
    t.wet = -std::log(1.0 - pc);
    const double z = std::log(label) - mu;
    t.lognorm = z * z / (2.0 * sigma * sigma) + std::log(sigma);
    if (include_corr) {
        const double lv = prior.lsigma * prior.lsigma;
        const double sv = sigma * sigma;
        const double num = prior.lmu * prior.lmu + mu * mu +
                           lv * (2.0 * mu - sv) +
                           2.0 * prior.lmu * (sv - mu);
        t.corr = -num / (2.0 * (lv + sv)) - 0.5 * std::log(lv + sv);
    }
    t.total = t.wet + t.lognorm + t.corr;
    return t;
}

inline LossGrad nll_grad(double label, double p, double mu, double sigma,
                         const MarginalPrior& prior, bool include_corr = true) {
    if (label < 0.0)
        throw std::domain_error("nll_grad: label must be >= 0");
    const double pc = clamp_prob(p);
    LossGrad g;
    if (label == 0.0) {
        g.d_p = -1.0 / pc;
        return g;
    }
    g.d_p = 1.0 / (1.0 - pc);
    g.d_mu = -(std::log(label) - mu) / (sigma * sigma);
    if (include_corr) {
        const double lv = prior.lsigma * prior.lsigma;
        g.d_mu -= (mu + lv - prior.lmu) / (lv + sigma * sigma);
    }
    return g;
}

struct BatchNll {
    NllTerms mean_terms;  // componentwise means
    LossGrad mean_grad;
};

// Mean loss and gradients over a batch. Reductions are canonical
// (sorted pairwise sums), so any permutation of the batch produces the
// bit-identical result.
inline BatchNll batch_nll(std::span<const double> labels,
                          std::span<const double> ps,
                          std::span<const double> mus, double sigma,
                          const MarginalPrior& prior,
                          bool include_corr = true) {
    const std::size_t n = labels.size();
    if (n == 0) throw std::invalid_argument("batch_nll: empty batch");
    if (ps.size() != n || mus.size() != n)
        throw std::invalid_argument("batch_nll: length mismatch");

    std::vector<double> dry(n), wet(n), lognorm(n), corr(n), total(n), dp(n),
        dmu(n);
    for (std::size_t i = 0; i < n; ++i) {
        const NllTerms t =
            nll_terms(labels[i], ps[i], mus[i], sigma, prior, include_corr);
        const LossGrad g =
            nll_grad(labels[i], ps[i], mus[i], sigma, prior, include_corr);
        dry[i] = t.dry;
        wet[i] = t.wet;
        lognorm[i] = t.lognorm;
        corr[i] = t.corr;
        total[i] = t.total;
        dp[i] = g.d_p;
        dmu[i] = g.d_mu;
    }
    BatchNll out;
    out.mean_terms.dry = canonical_mean(std::move(dry));
    out.mean_terms.wet = canonical_mean(std::move(wet));
    out.mean_terms.lognorm = canonical_mean(std::move(lognorm));
    out.mean_terms.corr = canonical_mean(std::move(corr));
    out.mean_terms.total = canonical_mean(std::move(total));
    out.mean_grad.d_p = canonical_mean(std::move(dp));
    out.mean_grad.d_mu = canonical_mean(std::move(dmu));
    return out;
}

// ---------------------------------------------------------------------------
// MSE-family baselines
// ---------------------------------------------------------------------------

enum class WeightKind { omse, lwmse, nwmse };

// Weighting laws for the baseline regressors. nwmse needs a histogram fit
// over the training labels before it can emit weights.
class WeightScheme {
public:
    static WeightScheme omse() { return WeightScheme(WeightKind::omse); }

    static WeightScheme lwmse(double beta = 1.0) {
        WeightScheme s(WeightKind::lwmse);
        s.beta_ = beta;
        return s;
    }

    // Inverse-frequency weighting; emits no weights until fit() has seen the
    // training labels.
    static WeightScheme nwmse(std::size_t bins = 30, double w_max = 100.0) {
        WeightScheme s(WeightKind::nwmse);
        s.bins_ = bins;
        s.w_max_ = w_max;
        return s;
    }

    static WeightScheme nwmse_from_labels(std::span<const double> labels,
                                          std::size_t bins = 30,
                                          double w_max = 100.0) {
        WeightScheme s = nwmse(bins, w_max);
        s.fit(labels);
        return s;
    }

    // Builds the histogram: a zero bin plus `bins` logarithmic bins spanning
    // the positive training labels; weights are min(1/freq, w_max) rescaled
    // to unit mean over the training set.
    WeightScheme& fit(std::span<const double> labels) {
        if (kind_ != WeightKind::nwmse)
            throw std::logic_error("WeightScheme::fit: only nwmse is fitted");
        if (labels.empty())
            throw std::invalid_argument("WeightScheme::fit: empty label set");
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (double v : labels) {
            if (v < 0.0)
                throw std::domain_error("WeightScheme::fit: negative label");
            if (v > 0.0) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (!std::isfinite(lo)) lo = 1.0;  // all-dry corner: single wet bin
        if (!(hi > lo)) hi = lo * (1.0 + 1e-9);
        log_lo_ = std::log(lo);
        log_hi_ = std::log(hi);
        counts_.assign(bins_ + 1, 0);  // slot 0 holds the zero bin
        for (double v : labels) ++counts_[bin_of(v)];
        const double total = static_cast<double>(labels.size());
        weights_.resize(counts_.size());
        for (std::size_t b = 0; b < counts_.size(); ++b) {
            const double freq = static_cast<double>(counts_[b]) / total;
            weights_[b] = freq > 0.0 ? std::min(1.0 / freq, w_max_) : w_max_;
        }
        double mean_w = 0.0;
        for (double v : labels) mean_w += weights_[bin_of(v)];
        mean_w /= total;
        for (double& w : weights_) w /= mean_w;
        fitted_ = true;
        return *this;
    }

    WeightKind kind() const { return kind_; }
    double beta() const { return beta_; }

    double weight(double label) const {
        switch (kind_) {
            case WeightKind::omse:
                return 1.0;
            case WeightKind::lwmse:
                return 1.0 + beta_ * label;
            case WeightKind::nwmse:
                if (!fitted_)
                    throw std::logic_error(
                        "WeightScheme: nwmse frequency table not fitted");
                return weights_[bin_of(label)];
        }
        throw std::logic_error("WeightScheme: unknown kind");
    }

private:
    explicit WeightScheme(WeightKind k) : kind_(k) {}

    std::size_t bin_of(double label) const {
        if (label <= 0.0) return 0;
        const std::size_t bins = counts_.size() - 1;
        const double t =
            (std::log(label) - log_lo_) / (log_hi_ - log_lo_);
        const auto idx = static_cast<std::ptrdiff_t>(
            std::floor(t * static_cast<double>(bins)));
        return 1 + static_cast<std::size_t>(std::clamp(
                       idx, std::ptrdiff_t{0},
                       static_cast<std::ptrdiff_t>(bins - 1)));
    }

    WeightKind kind_;
    double beta_ = 1.0;
    std::size_t bins_ = 30;
    double w_max_ = 100.0;
    double log_lo_ = 0.0;
    double log_hi_ = 1.0;
    std::vector<std::size_t> counts_;
    std::vector<double> weights_;
    bool fitted_ = false;
};

struct MseLoss {
    double value = 0.0;
    double d_pred = 0.0;
};

inline MseLoss weighted_mse(double prediction, double label,
                            const WeightScheme& scheme) {
    const double w = scheme.weight(label);
    if (!(w > 0.0) || !std::isfinite(w))
        throw std::runtime_error("weighted_mse: nonpositive weight");
    const double diff = prediction - label;
    return {w * diff * diff, 2.0 * w * diff};
}

}  // namespace himdl
