#include <catch2/catch_amalgamated.hpp>

#include <himdl/synthgen.hpp>

#include "support/oracles.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <vector>

using namespace himdl;

namespace {

const MarginalPrior kPrior(0.46, 1.28, 0.21739130434782608);

std::string temp_path(const char* stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("generator marginals") {
    const ForwardModel fm = ForwardModel::standard();

    SECTION("p0 = 1 is all dry") {
        const MarginalPrior all_dry(0.46, 1.28, 1.0);
        const Dataset d = generate(all_dry, fm, 5000, 1);
        for (double v : d.labels) CHECK(v == 0.0);
    }

    SECTION("wet log-mean and dry fraction match the prior") {
        const Dataset d = generate(kPrior, fm, 1'000'000, 2);
        double s = 0.0;
        std::size_t wet = 0, dry = 0;
        for (double v : d.labels) {
            if (v > 0.0) {
                s += std::log(v);
                ++wet;
            } else {
                ++dry;
            }
        }
        const double log_mean = s / static_cast<double>(wet);
        CHECK(std::abs(log_mean - 0.46) <
              3.0 * 1.28 / std::sqrt(static_cast<double>(wet)));
        const double se =
            std::sqrt(kPrior.p0 * (1.0 - kPrior.p0) / d.size());
        CHECK(std::abs(static_cast<double>(dry) / d.size() - kPrior.p0) <
              3.0 * se);
    }

    SECTION("wet to dry ratio is near 3.6:1") {
        const Dataset d = generate(kPrior, fm, 200'000, 3);
        std::size_t wet = 0;
        for (double v : d.labels)
            if (v > 0.0) ++wet;
        const double ratio =
            static_cast<double>(wet) / static_cast<double>(d.size() - wet);
        CHECK(ratio == Catch::Approx(3.6).margin(0.15));
    }

    SECTION("rejects n = 0") {
        CHECK_THROWS_AS(generate(kPrior, fm, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("generator determinism is byte exact") {
    const ForwardModel fm = ForwardModel::standard();
    const auto a = generate_splits(kPrior, fm, 2000, 500, 500, 42);
    const auto b = generate_splits(kPrior, fm, 2000, 500, 500, 42);

    const std::string pa = temp_path("himdl_det_a");
    const std::string pb = temp_path("himdl_det_b");
    save_dataset(pa, a, fm, 42);
    save_dataset(pb, b, fm, 42);
    CHECK(io::read_text_file(pa + ".bin") == io::read_text_file(pb + ".bin"));
    CHECK(io::read_text_file(pa + ".meta.json") ==
          io::read_text_file(pb + ".meta.json"));
    for (const auto& p : {pa, pb}) {
        std::remove((p + ".bin").c_str());
        std::remove((p + ".meta.json").c_str());
    }
}

TEST_CASE("dataset file round trip") {
    const ForwardModel fm = ForwardModel::standard(2);
    const auto ds = generate_splits(kPrior, fm, 1000, 200, 300, 7);
    const std::string path = temp_path("himdl_roundtrip");
    save_dataset(path, ds, fm, 7);

    const SplitDataset back = load_dataset(path);
    CHECK(back.train.labels == ds.train.labels);
    CHECK(back.train.features == ds.train.features);
    CHECK(back.val.labels == ds.val.labels);
    CHECK(back.test.features == ds.test.features);
    CHECK(back.test.channels == 2);
    CHECK(back.train.prior.lmu == ds.train.prior.lmu);

    const auto meta =
        nlohmann::json::parse(io::read_text_file(path + ".meta.json"));
    CHECK(meta.at("seed").get<std::uint64_t>() == 7);
    CHECK(meta.at("splits").at("train").get<std::size_t>() == 1000);
    CHECK(forward_model_from_json(meta.at("forward_model")).channels() == 2);

    std::remove((path + ".bin").c_str());
    std::remove((path + ".meta.json").c_str());
}

TEST_CASE("corrupt dataset magic is rejected") {
    const std::string path = temp_path("himdl_corrupt");
    io::write_text_file(path + ".bin", "NOTMAGIC plus junk");
    CHECK_THROWS_AS(load_dataset(path), IoError);
    std::remove((path + ".bin").c_str());
}

TEST_CASE("ideal posterior") {
    const RateGrid grid = RateGrid::for_prior(kPrior);

    SECTION("rows integrate to one over the grid") {
        const ForwardModel fm = ForwardModel::standard();
        for (double r : {0.2, 1.0, 8.0, 30.0}) {
            const double s = fm.wet_signal_mean(0, r);
            const auto row = ideal_posterior(fm, s, grid);
            CHECK(integrate_on_grid(grid, row.density) ==
                  Catch::Approx(1.0).margin(1e-6));
        }
    }

    SECTION("zero-noise limit inverts the forward map") {
        ForwardModel fm = ForwardModel::standard();
        fm.noise_sigma = 1e-4;
        for (double r_true : {0.5, 2.0, 10.0, 40.0}) {
            const double s = fm.wet_signal_mean(0, r_true);
            const auto row = ideal_posterior(fm, s, grid);
            CHECK(std::abs(row.mean - r_true) < 0.008 * r_true + 1e-6);
        }
    }

    SECTION("posterior mean is monotone in the signal") {
        // increasing forward map: nondecreasing mean
        ForwardModel up({10.0}, {10.0 * std::log1p(0.1)}, 2.0, 4.0);
        double prev = -1.0;
        for (double s = -20.0; s <= 60.0; s += 2.5) {
            const auto row = ideal_posterior(up, s, grid);
            CHECK(row.mean >= prev);
            prev = row.mean;
        }
        // default decreasing map: nonincreasing mean
        const ForwardModel down = ForwardModel::standard();
        prev = std::numeric_limits<double>::infinity();
        for (double s = -60.0; s <= 20.0; s += 2.5) {
            const auto row = ideal_posterior(down, s, grid);
            CHECK(row.mean <= prev);
            prev = row.mean;
        }
    }

    SECTION("non-finite signal degenerates loudly") {
        const ForwardModel fm = ForwardModel::standard();
        const double bad = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(ideal_posterior(fm, bad, grid), std::runtime_error);
    }

    SECTION("channel mismatch is rejected") {
        const ForwardModel fm = ForwardModel::standard(2);
        const double s = -5.0;
        CHECK_THROWS_AS(
            ideal_posterior(fm, std::span<const double>(&s, 1), grid),
            std::invalid_argument);
    }
}

TEST_CASE("biased posterior") {
    const ForwardModel fm = ForwardModel::standard();
    const RateGrid grid = RateGrid::for_prior(kPrior);

    SECTION("flat prior reduces to the ideal posterior") {
        const double s = fm.wet_signal_mean(0, 3.0);
        const auto ideal = ideal_posterior(fm, s, grid);
        const auto flat = biased_posterior(
            fm, [](double) { return 0.7; },  // any constant log-density
            std::span<const double>(&s, 1), grid);
        for (std::size_t i = 0; i < grid.size(); ++i)
            CHECK(flat.density[i] ==
                  Catch::Approx(ideal.density[i]).margin(1e-12));
    }

    SECTION("matches the debias transform of the ideal posterior") {
        for (double r : {0.3, 1.0, 4.0, 15.0, 45.0}) {
            const double s = fm.wet_signal_mean(0, r);
            const auto ideal = ideal_posterior(fm, s, grid);
            const auto biased = biased_posterior(fm, kPrior, s, grid);
            const auto transformed =
                debias_transform(grid, ideal.density, kPrior.wet_density());
            double max_err = 0.0;
            for (std::size_t i = 0; i < grid.size(); ++i)
                max_err = std::max(
                    max_err, std::abs(biased.density[i] - transformed[i]));
            CHECK(max_err < 1e-7);
        }
    }

    SECTION("upper-tail signals: biased mean below ideal mean") {
        // prior 95th percentile is exp(0.46 + 1.645 * 1.28) ~ 13 mm/h
        for (double r : {14.0, 20.0, 35.0, 60.0}) {
            const double s = fm.wet_signal_mean(0, r);
            const auto ideal = ideal_posterior(fm, s, grid);
            const auto biased = biased_posterior(fm, kPrior, s, grid);
            CHECK(biased.mean <= ideal.mean);
        }
    }
}

TEST_CASE("posterior grid batch") {
    const ForwardModel fm = ForwardModel::standard();
    std::vector<double> signals;
    for (double r : {0.2, 1.0, 5.0, 20.0})
        signals.push_back(fm.wet_signal_mean(0, r));
    const auto pg =
        PosteriorGrid::ideal(fm, signals, RateGrid::for_prior(kPrior));
    REQUIRE(pg.density.size() == signals.size());
    for (std::size_t i = 0; i < pg.density.size(); ++i) {
        CHECK(integrate_on_grid(pg.grid, pg.density[i]) ==
              Catch::Approx(1.0).margin(1e-6));
        const auto row = ideal_posterior(fm, signals[i], pg.grid);
        CHECK(pg.mean[i] == row.mean);
    }
}

TEST_CASE("prior estimation recovers generator parameters") {
    const ForwardModel fm = ForwardModel::standard();
    const Dataset d = generate(kPrior, fm, 400'000, 11);
    const MarginalPrior est = estimate_prior(d.labels);
    CHECK(est.lmu == Catch::Approx(kPrior.lmu).margin(0.01));
    CHECK(est.lsigma == Catch::Approx(kPrior.lsigma).margin(0.01));
    CHECK(est.p0 == Catch::Approx(kPrior.p0).margin(0.005));
}

TEST_CASE("wet filter") {
    const ForwardModel fm = ForwardModel::standard(3);
    const Dataset d = generate(kPrior, fm, 10'000, 13);
    const Dataset wet = filter_wet(d);
    std::size_t expect = 0;
    for (double v : d.labels)
        if (v > 0.0) ++expect;
    CHECK(wet.size() == expect);
    CHECK(wet.features.size() == expect * 3);
    for (double v : wet.labels) CHECK(v > 0.0);
}
