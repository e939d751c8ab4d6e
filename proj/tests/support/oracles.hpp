#pragma once

// Test-only numerical oracles. Deliberately independent of the library:
// nothing in here includes himdl headers or shares code with them.
//
// The integrator is adaptive Simpson on the log-rate axis x = ln r, which
// turns lognormal products into Gaussian-weighted integrands that are smooth
// and compactly supported for practical purposes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracles {

namespace detail {

template <class F>
double simpson(F& f, double a, double fa, double b, double fb, double m,
               double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_step(F& f, double a, double fa, double b, double fb, double m,
                     double fm, double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson(f, a, fa, m, fm, lm, flm);
    const double right = simpson(f, m, fm, b, fb, rm, frm);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           adaptive_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

template <class F>
double adaptive_simpson(F f, double a, double b, double tol = 1e-12,
                        int max_depth = 48) {
    const double m = 0.5 * (a + b);
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(m);
    const double whole = detail::simpson(f, a, fa, b, fb, m, fm);
    return detail::adaptive_step(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

// integral over r in (0, inf) of f(r) dr via x = ln r on [x_lo, x_hi].
template <class F>
double integrate_rate_fn(F f, double x_lo, double x_hi, double tol = 1e-12) {
    auto g = [&](double x) {
        const double r = std::exp(x);
        return f(r) * r;
    };
    return adaptive_simpson(g, x_lo, x_hi, tol);
}

inline double lognormal_pdf_ref(double r, double mu, double sigma) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    const double z = (std::log(r) - mu) / sigma;
    return inv_sqrt_2pi / (r * sigma) * std::exp(-0.5 * z * z);
}

// Quadrature of the product of two lognormal pdfs over (0, inf), truncating
// the log axis at the union of mu +- 10 sigma of the two components. The
// range is split at each component's own sigma scale so adaptive refinement
// cannot skip over a spike far narrower than the overall interval.
inline double lognormal_product_integral_ref(double mu_a, double sigma_a,
                                             double mu_b, double sigma_b) {
    const double lo = std::min(mu_a - 10.0 * sigma_a, mu_b - 10.0 * sigma_b);
    const double hi = std::max(mu_a + 10.0 * sigma_a, mu_b + 10.0 * sigma_b);
    std::vector<double> cuts = {lo, hi};
    for (int k = -10; k <= 10; ++k) {
        cuts.push_back(mu_a + k * sigma_a);
        cuts.push_back(mu_b + k * sigma_b);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    auto g = [&](double x) {
        const double r = std::exp(x);
        return lognormal_pdf_ref(r, mu_a, sigma_a) *
               lognormal_pdf_ref(r, mu_b, sigma_b) * r;
    };
    auto sweep = [&](double tol) {
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double a = std::max(cuts[i], lo);
            const double b = std::min(cuts[i + 1], hi);
            if (b > a) total += adaptive_simpson(g, a, b, tol);
        }
        return total;
    };
    // first pass pins the magnitude, second refines at a relative tolerance
    // (integrals of barely-overlapping pairs can sit hundreds of decades
    // below 1, where any fixed absolute tolerance is meaningless)
    const double coarse = sweep(1e-13);
    if (!(coarse > 1e-290)) return coarse;
    return sweep(coarse * 5e-12);
}

// Central finite difference with step h.
template <class F>
double central_diff(F f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
    const double scale = std::max(std::abs(want), 1e-12);
    return std::abs(got - want) / scale;
}

}  // namespace oracles
