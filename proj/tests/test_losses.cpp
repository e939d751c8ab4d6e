#include <catch2/catch_amalgamated.hpp>

#include <himdl/losses.hpp>

#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace himdl;

namespace {

struct RandomConfig {
    double label, p, mu, sigma, lmu, lsigma;
};

RandomConfig draw_config(Rng& rng, bool wet) {
    RandomConfig c;
    c.label = wet ? std::exp(-2.0 + 5.0 * rng.uniform()) : 0.0;
    c.p = 0.01 + 0.98 * rng.uniform();
    c.mu = -2.0 + 5.0 * rng.uniform();
    c.sigma = 0.1 + 1.9 * rng.uniform();
    c.lmu = -2.0 + 5.0 * rng.uniform();
    c.lsigma = 0.1 + 1.9 * rng.uniform();
    return c;
}

}  // namespace

TEST_CASE("nll terms single-branch activation") {
    const MarginalPrior prior(0.46, 1.28, 0.2);

    SECTION("dry sample") {
        const NllTerms t = nll_terms(0.0, 0.5, 1.7, 0.5, prior);
        CHECK(t.dry == Catch::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(t.wet == 0.0);
        CHECK(t.lognorm == 0.0);
        CHECK(t.corr == 0.0);
        CHECK(t.total == t.dry);
    }

    SECTION("wet sample zeroes the dry term") {
        const NllTerms t = nll_terms(2.5, 0.3, 0.2, 0.5, prior);
        CHECK(t.dry == 0.0);
        CHECK(t.total == Catch::Approx(t.wet + t.lognorm + t.corr));
    }

    SECTION("negative label rejected") {
        CHECK_THROWS_AS(nll_terms(-1.0, 0.5, 0.0, 0.5, prior),
                        std::domain_error);
    }
}

TEST_CASE("correction term closed form") {
    // mu = lmu, sigma = lsigma collapses to -lmu + lsigma^2/4 - ln(2 lsigma^2)/2
    const MarginalPrior prior(0.0, 1.0, 0.0);
    const NllTerms t = nll_terms(1.0, 0.5, 0.0, 1.0, prior);
    CHECK(t.corr == Catch::Approx(-0.09657359027997264).margin(1e-12));
}

TEST_CASE("correction term equals log product integral plus half log 2 pi") {
    // keystone identity between the analytic decomposition and the
    // closed-form normalizer
    Rng rng(101);
    for (int i = 0; i < 500; ++i) {
        const RandomConfig c = draw_config(rng, true);
        const MarginalPrior prior(c.lmu, c.lsigma, 0.0);
        const NllTerms t = nll_terms(c.label, c.p, c.mu, c.sigma, prior);
        const double via_integral =
            log_product_integral({c.mu, c.sigma}, {c.lmu, c.lsigma}) +
            0.5 * kLogTwoPi;
        CHECK(std::abs(t.corr - via_integral) < 1e-9);
    }
}

TEST_CASE("nll gradient closed form") {
    const MarginalPrior prior(0.46, 1.28, 0.2);

    SECTION("vanishing configuration") {
        // mu = ln label and mu + lsigma^2 = lmu kill both terms
        const MarginalPrior p2(2.0 + 1.28 * 1.28, 1.28, 0.2);
        const LossGrad g = nll_grad(std::exp(2.0), 0.5, 2.0, 0.7, p2);
        CHECK(g.d_mu == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("dry gradient") {
        const LossGrad g = nll_grad(0.0, 0.5, 0.0, 0.5, prior);
        CHECK(g.d_p == Catch::Approx(-2.0).epsilon(1e-12));
        CHECK(g.d_mu == 0.0);
    }

    SECTION("finite differences over randomized configurations") {
        Rng rng(202);
        for (int i = 0; i < 1000; ++i) {
            const RandomConfig c = draw_config(rng, i % 4 != 0);
            const MarginalPrior p(c.lmu, c.lsigma, 0.0);
            const LossGrad g = nll_grad(c.label, c.p, c.mu, c.sigma, p);
            const double fd_p = oracles::central_diff(
                [&](double x) {
                    return nll_terms(c.label, x, c.mu, c.sigma, p).total;
                },
                c.p);
            const double fd_mu = oracles::central_diff(
                [&](double x) {
                    return nll_terms(c.label, c.p, x, c.sigma, p).total;
                },
                c.mu);
            CHECK(std::abs(fd_p - g.d_p) < 1e-4 * std::max(std::abs(g.d_p), 1e-3));
            CHECK(std::abs(fd_mu - g.d_mu) <
                  1e-4 * std::max(std::abs(g.d_mu), 1e-3));
        }
    }

    SECTION("flat prior limit") {
        // For lsigma -> inf the prior flattens on the log axis and its pull
        // on mu reduces to the constant volume tilt of -1; the data part is
        // the conventional lognormal gradient.
        const double label = 3.7, mu = 0.9, sigma = 0.5;
        const MarginalPrior flat(0.0, 1e3, 0.0);
        const LossGrad g = nll_grad(label, 0.5, mu, sigma, flat);
        const double conventional = -(std::log(label) - mu) / (sigma * sigma);
        CHECK(std::abs(g.d_mu - (conventional - 1.0)) < 1e-5);
    }
}

TEST_CASE("batch nll") {
    const MarginalPrior prior(0.46, 1.28, 0.2);
    std::vector<double> labels = {0.0, 1.2, 0.0, 7.5, 0.3, 22.0, 0.0, 2.2};
    std::vector<double> ps, mus;
    Rng rng(303);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ps.push_back(0.05 + 0.9 * rng.uniform());
        mus.push_back(-1.0 + 3.0 * rng.uniform());
    }

    SECTION("batch of one equals the sample") {
        const BatchNll b = batch_nll(std::span(labels).subspan(1, 1),
                                     std::span(ps).subspan(1, 1),
                                     std::span(mus).subspan(1, 1), 0.5, prior);
        const NllTerms t = nll_terms(labels[1], ps[1], mus[1], 0.5, prior);
        CHECK(b.mean_terms.total == t.total);
    }

    SECTION("duplication keeps the mean") {
        auto l2 = labels, p2 = ps, m2 = mus;
        l2.insert(l2.end(), labels.begin(), labels.end());
        p2.insert(p2.end(), ps.begin(), ps.end());
        m2.insert(m2.end(), mus.begin(), mus.end());
        const BatchNll a = batch_nll(labels, ps, mus, 0.5, prior);
        const BatchNll b = batch_nll(l2, p2, m2, 0.5, prior);
        CHECK(a.mean_terms.total == b.mean_terms.total);
    }

    SECTION("shuffling is bit-exact") {
        std::vector<std::size_t> idx(labels.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937 shuffler(7);
        const BatchNll a = batch_nll(labels, ps, mus, 0.5, prior);
        for (int round = 0; round < 10; ++round) {
            std::shuffle(idx.begin(), idx.end(), shuffler);
            std::vector<double> l, p, m;
            for (std::size_t i : idx) {
                l.push_back(labels[i]);
                p.push_back(ps[i]);
                m.push_back(mus[i]);
            }
            const BatchNll b = batch_nll(l, p, m, 0.5, prior);
            CHECK(a.mean_terms.total == b.mean_terms.total);
            CHECK(a.mean_grad.d_p == b.mean_grad.d_p);
            CHECK(a.mean_grad.d_mu == b.mean_grad.d_mu);
        }
    }

    SECTION("mean agrees with a long-double oracle") {
        const BatchNll a = batch_nll(labels, ps, mus, 0.5, prior);
        long double acc = 0.0L;
        for (std::size_t i = 0; i < labels.size(); ++i)
            acc += nll_terms(labels[i], ps[i], mus[i], 0.5, prior).total;
        CHECK(a.mean_terms.total ==
              Catch::Approx(static_cast<double>(acc / labels.size()))
                  .epsilon(1e-14));
    }

    SECTION("empty batch rejected") {
        CHECK_THROWS_AS(batch_nll({}, {}, {}, 0.5, prior),
                        std::invalid_argument);
    }
}

TEST_CASE("ablation flag removes exactly the correction term") {
    const MarginalPrior prior(0.46, 1.28, 0.2);
    Rng rng(404);
    for (int i = 0; i < 100; ++i) {
        const RandomConfig c = draw_config(rng, i % 3 != 0);
        const NllTerms with =
            nll_terms(c.label, c.p, c.mu, c.sigma, prior, true);
        const NllTerms without =
            nll_terms(c.label, c.p, c.mu, c.sigma, prior, false);
        CHECK(with.total == without.total + with.corr);
        CHECK(without.corr == 0.0);
        CHECK(with.dry == without.dry);
        CHECK(with.wet == without.wet);
        CHECK(with.lognorm == without.lognorm);
    }
}

TEST_CASE("weighted mse schemes") {
    const WeightScheme omse = WeightScheme::omse();

    SECTION("zero at the label for every scheme") {
        std::vector<double> train = {0.0, 0.1, 1.0, 5.0, 20.0, 0.0, 2.0};
        const WeightScheme nw = WeightScheme::nwmse_from_labels(train);
        for (double label : {0.0, 0.5, 3.0, 20.0}) {
            CHECK(weighted_mse(label, label, omse).value == 0.0);
            CHECK(weighted_mse(label, label, WeightScheme::lwmse()).value == 0.0);
            CHECK(weighted_mse(label, label, nw).value == 0.0);
        }
    }

    SECTION("plain squared error") {
        const MseLoss l = weighted_mse(2.0, 0.0, omse);
        CHECK(l.value == 4.0);
        CHECK(l.d_pred == 4.0);
    }

    SECTION("lwmse with beta 0 degenerates to omse") {
        const WeightScheme lw0 = WeightScheme::lwmse(0.0);
        Rng rng(505);
        for (int i = 0; i < 200; ++i) {
            const double pred = 30.0 * rng.uniform();
            const double label = 30.0 * rng.uniform();
            CHECK(weighted_mse(pred, label, lw0).value ==
                  weighted_mse(pred, label, omse).value);
        }
    }

    SECTION("gradient matches finite differences") {
        std::vector<double> train = {0.0, 0.2, 1.0, 4.0, 9.0, 31.0};
        const WeightScheme nw = WeightScheme::nwmse_from_labels(train);
        for (const WeightScheme& s :
             {omse, WeightScheme::lwmse(1.0), nw}) {
            const double label = 4.0;
            const double fd = oracles::central_diff(
                [&](double x) { return weighted_mse(x, label, s).value; }, 7.0);
            CHECK(fd == Catch::Approx(weighted_mse(7.0, label, s).d_pred)
                            .epsilon(1e-7));
        }
    }

    SECTION("nwmse weights are positive, capped, unit mean over training set") {
        Rng rng(606);
        std::vector<double> train;
        HurdleParams hp(0.22, {0.46, 1.28});
        for (int i = 0; i < 20000; ++i)
            train.push_back(sample_hurdle(hp, rng));
        const WeightScheme nw = WeightScheme::nwmse_from_labels(train);
        double mean_w = 0.0;
        for (double v : train) {
            const double w = nw.weight(v);
            CHECK(w > 0.0);
            mean_w += w;
        }
        CHECK(mean_w / train.size() == Catch::Approx(1.0).epsilon(1e-9));
        // rare tail labels get larger weights than the common body
        CHECK(nw.weight(60.0) > nw.weight(1.0));
    }

    SECTION("unfitted nwmse errors out") {
        WeightScheme nw = WeightScheme::nwmse();
        CHECK_THROWS_AS(nw.weight(0.5), std::logic_error);
        std::vector<double> train = {0.0, 1.0, 2.0};
        nw.fit(train);
        CHECK_NOTHROW(nw.weight(0.5));
    }
}
