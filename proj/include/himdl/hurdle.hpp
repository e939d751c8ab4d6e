#pragma once

// Hurdle-lognormal family: a point mass at zero rain plus a lognormal density
// for positive rates, the marginal-prior debiasing transform, and the
// closed-form log of the lognormal product integral that powers the
// correction term of the training objective.
//
// All density math runs in log space; values are exponentiated only at the
// API boundary so tail parameters cannot underflow intermediate results.

#include <himdl/common.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <concepts>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace himdl {

struct LognormalParams {
    double mu = 0.0;
    double sigma = 1.0;

    LognormalParams() = default;
    LognormalParams(double mu_, double sigma_) : mu(mu_), sigma(sigma_) {
        if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma <= 0.0)
            throw std::invalid_argument(
                "LognormalParams: mu must be finite and sigma > 0");
        sigma = std::max(sigma, kSigmaFloor);
    }
};

// Marginal label distribution F(R): lognormal body plus dry probability p0.
struct MarginalPrior {
    double lmu = 0.0;
    double lsigma = 1.0;
    double p0 = 0.0;

    MarginalPrior() = default;
    MarginalPrior(double lmu_, double lsigma_, double p0_)
        : lmu(lmu_), lsigma(lsigma_), p0(p0_) {
        if (!std::isfinite(lmu) || !std::isfinite(lsigma) || lsigma <= 0.0)
            throw std::invalid_argument(
                "MarginalPrior: lmu must be finite and lsigma > 0");
        if (!(p0 >= 0.0 && p0 <= 1.0))
            throw std::invalid_argument("MarginalPrior: p0 must be in [0,1]");
        lsigma = std::max(lsigma, kSigmaFloor);
    }

    LognormalParams wet_density() const { return {lmu, lsigma}; }
};

// Per-sample conditional parameters: dry probability plus wet-rate density.
struct HurdleParams {
    double p = 0.0;
    LognormalParams dist;

    HurdleParams() = default;
    HurdleParams(double p_, LognormalParams dist_) : p(p_), dist(dist_) {
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("HurdleParams: p must be in [0,1]");
    }
};

inline double lognormal_log_pdf(double r, const LognormalParams& lp) {
    if (!(r > 0.0))
        throw std::domain_error("lognormal_log_pdf: r must be > 0");
    const double x = std::log(r);
    const double z = (x - lp.mu) / lp.sigma;
    return -x - std::log(lp.sigma) - 0.5 * kLogTwoPi - 0.5 * z * z;
}

inline double lognormal_pdf(double r, const LognormalParams& lp) {
    return std::exp(lognormal_log_pdf(r, lp));
}

// Point mass p at r == 0, (1 - p) times the lognormal elsewhere.
inline double hurdle_pdf(double r, const HurdleParams& hp) {
    if (r < 0.0) throw std::domain_error("hurdle_pdf: r must be >= 0");
    if (r == 0.0) return hp.p;
    if (hp.p >= 1.0) return 0.0;
    return (1.0 - hp.p) * lognormal_pdf(r, hp.dist);
}

// log of integral_0^inf pdf_a(r) * pdf_b(r) dr, closed form.
//
// Substituting x = ln r turns the product into a Gaussian product times
// exp(-x); completing the square gives
//   -(mu_a-mu_b)^2 / (2 (sa^2+sb^2)) - ln(2 pi)/2 - ln(sa^2+sb^2)/2
//   - mu_c + sc^2/2
// with sc^2 = (sa^-2 + sb^-2)^-1 and mu_c = sc^2 (mu_a/sa^2 + mu_b/sb^2).
inline double log_product_integral(const LognormalParams& a,
                                   const LognormalParams& b) {
    const double va = a.sigma * a.sigma;
    const double vb = b.sigma * b.sigma;
    const double vsum = va + vb;
    const double vc = 1.0 / (1.0 / va + 1.0 / vb);
    const double mc = vc * (a.mu / va + b.mu / vb);
    const double d = a.mu - b.mu;
    return -d * d / (2.0 * vsum) - 0.5 * kLogTwoPi - 0.5 * std::log(vsum) -
           mc + 0.5 * vc;
}

// Conditional expectation (1 - p) * exp(mu + sigma^2 / 2).
inline double hurdle_expectation(const HurdleParams& hp) {
    if (hp.p >= 1.0) return 0.0;
    return (1.0 - hp.p) *
           std::exp(hp.dist.mu + 0.5 * hp.dist.sigma * hp.dist.sigma);
}

// Zero with probability p, else exp(mu + sigma * z).
inline double sample_hurdle(const HurdleParams& hp, Rng& rng) {
    if (rng.uniform() <= hp.p) return 0.0;
    return std::exp(hp.dist.mu + hp.dist.sigma * rng.normal());
}

// ---------------------------------------------------------------------------
// Rate grids and the debiasing transform
// ---------------------------------------------------------------------------

// Strictly increasing positive rate axis, log-spaced.
struct RateGrid {
    std::vector<double> rates;

    static RateGrid log_spaced(double r_lo, double r_hi, std::size_t n) {
        if (!(r_lo > 0.0) || !(r_hi > r_lo) || n < 2)
            throw std::invalid_argument("RateGrid: need 0 < r_lo < r_hi, n >= 2");
        RateGrid g;
        g.rates.resize(n);
        const double x_lo = std::log(r_lo);
        const double dx = (std::log(r_hi) - x_lo) / static_cast<double>(n - 1);
        for (std::size_t i = 0; i < n; ++i)
            g.rates[i] = std::exp(x_lo + dx * static_cast<double>(i));
        return g;
    }

    // Default support for a marginal prior: [exp(lmu - 6 lsigma), exp(lmu + 6 lsigma)].
    static RateGrid for_prior(const MarginalPrior& prior, std::size_t n = 2048) {
        return log_spaced(std::exp(prior.lmu - 6.0 * prior.lsigma),
                          std::exp(prior.lmu + 6.0 * prior.lsigma), n);
    }

    std::size_t size() const { return rates.size(); }

    std::vector<double> trapezoid_weights() const {
        const std::size_t n = rates.size();
        std::vector<double> w(n, 0.0);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double half = 0.5 * (rates[i + 1] - rates[i]);
            w[i] += half;
            w[i + 1] += half;
        }
        return w;
    }
};

inline double integrate_on_grid(const RateGrid& grid,
                                std::span<const double> values) {
    if (values.size() != grid.size())
        throw std::invalid_argument("integrate_on_grid: size mismatch");
    const auto w = grid.trapezoid_weights();
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += w[i] * values[i];
    return acc;
}

// Normalize density values in place to unit trapezoid integral over the grid.
// Returns the integral before normalization.
inline double normalize_on_grid(const RateGrid& grid,
                                std::span<double> values) {
    const double z = integrate_on_grid(grid, values);
    if (!(z > 0.0) || !std::isfinite(z))
        throw std::runtime_error("normalize_on_grid: degenerate normalization");
    for (double& v : values) v /= z;
    return z;
}

// Grid form of the debiasing transform: multiply a density known on the grid
// by a pointwise weight and renormalize. The weight is the prior density for
// ideal -> biased, or its reciprocal for the inverse direction.
template <class WeightFn>
    requires std::invocable<WeightFn&, double>
std::vector<double> debias_transform(const RateGrid& grid,
                                     std::span<const double> ideal_density,
                                     WeightFn&& weight) {
    if (ideal_density.size() != grid.size())
        throw std::invalid_argument("debias_transform: size mismatch");
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        out[i] = ideal_density[i] * weight(grid.rates[i]);
    normalize_on_grid(grid, out);
    return out;
}

inline std::vector<double> debias_transform(const RateGrid& grid,
                                            std::span<const double> ideal_density,
                                            const LognormalParams& prior) {
    return debias_transform(grid, ideal_density, [&](double r) {
        return lognormal_pdf(r, prior);
    });
}

// Functional form: wraps an ideal pdf callable into the biased pdf
//   r -> ideal(r) F(r) / integral ideal(r') F(r') dr'
// with the normalizer evaluated in log space over the supplied grid.
template <class IdealPdf>
class DebiasedDensity {
public:
    DebiasedDensity(IdealPdf ideal, LognormalParams prior, double log_denom)
        : ideal_(std::move(ideal)), prior_(prior), log_denom_(log_denom) {}

    double log_density(double r) const {
        const double f = ideal_(r);
        if (f <= 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(f) + lognormal_log_pdf(r, prior_) - log_denom_;
    }

    double operator()(double r) const { return std::exp(log_density(r)); }

    double log_normalizer() const { return log_denom_; }

private:
    IdealPdf ideal_;
    LognormalParams prior_;
    double log_denom_;
};

template <class IdealPdf>
DebiasedDensity<std::decay_t<IdealPdf>> debias_transform(
    IdealPdf&& ideal_pdf, const MarginalPrior& prior, const RateGrid& grid) {
    const LognormalParams f = prior.wet_density();
    // trapezoid on the log-rate axis: integral f(r) dr = integral f(e^x) e^x dx;
    // uniform steps in x make this spectrally accurate for lognormal-type
    // integrands, where r-space trapezoid would only be second order
    const std::size_t n = grid.size();
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = grid.rates[i];
        const double x = std::log(r);
        const double x_prev = i > 0 ? std::log(grid.rates[i - 1]) : x;
        const double x_next = i + 1 < n ? std::log(grid.rates[i + 1]) : x;
        const double wx = 0.5 * (x_next - x_prev);
        const double v = ideal_pdf(r);
        terms[i] = (v > 0.0 && wx > 0.0)
                       ? std::log(v) + lognormal_log_pdf(r, f) + x + std::log(wx)
                       : -std::numeric_limits<double>::infinity();
    }
    const double log_denom = log_sum_exp(terms);
    if (!std::isfinite(log_denom)) {
        std::ostringstream msg;
        msg << "debias_transform: normalizer underflowed; prior (lmu="
            << prior.lmu << ", lsigma=" << prior.lsigma << "), grid ["
            << grid.rates.front() << ", " << grid.rates.back() << "]";
        throw std::runtime_error(msg.str());
    }
    return DebiasedDensity<std::decay_t<IdealPdf>>(
        std::forward<IdealPdf>(ideal_pdf), f, log_denom);
}

// Parametric convenience: the ideal model is itself lognormal. Errors carry
// both parameter sets.
inline DebiasedDensity<std::function<double(double)>> debias_transform(
    const LognormalParams& ideal, const MarginalPrior& prior,
    const RateGrid& grid) {
    try {
        std::function<double(double)> f = [ideal](double r) {
            return lognormal_pdf(r, ideal);
        };
        return debias_transform(std::move(f), prior, grid);
    } catch (const std::runtime_error&) {
        std::ostringstream msg;
        msg << "debias_transform: normalizer underflowed; ideal (mu="
            << ideal.mu << ", sigma=" << ideal.sigma << "), prior (lmu="
            << prior.lmu << ", lsigma=" << prior.lsigma << ")";
        throw std::runtime_error(msg.str());
    }
}

}  // namespace himdl
