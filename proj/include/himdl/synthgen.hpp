#pragma once

// Synthetic zero-inflated long-tailed inversion problems with a known
// forward model, plus grid oracles for the ideal (uniform-prior) and biased
// (marginal-weighted) posteriors. The generator is a seeded pure function;
// identical seeds reproduce datasets byte for byte.

#include <himdl/common.hpp>
#include <himdl/hurdle.hpp>
#include <himdl/io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace himdl {

// One concrete F(S|R): each channel responds linearly to ln(1+R) with
// Gaussian observation noise; dry scenes emit from their own signal
// distribution, centered where light rain (~0.1 mm/h) would sit so that
// rain detection stays nontrivial.
struct ForwardModel {
    std::vector<double> gains;          // signal per unit ln(1+R), per channel
    std::vector<double> dry_signal_mu;  // per channel
    double dry_signal_sigma = 2.0;
    double noise_sigma = 4.0;

    ForwardModel() : ForwardModel(standard(1)) {}
    ForwardModel(std::vector<double> gains_, std::vector<double> dry_mu,
                 double dry_sigma, double noise)
        : gains(std::move(gains_)),
          dry_signal_mu(std::move(dry_mu)),
          dry_signal_sigma(dry_sigma),
          noise_sigma(noise) {
        if (gains.empty())
            throw std::invalid_argument("ForwardModel: needs >= 1 channel");
        if (dry_signal_mu.size() != gains.size())
            throw std::invalid_argument("ForwardModel: dry mean per channel");
        if (!(noise_sigma > 0.0) || !(dry_signal_sigma > 0.0))
            throw std::invalid_argument("ForwardModel: sigmas must be > 0");
    }

    // Default: brightness-temperature style depression (negative gain) with
    // the dry signal centered at the response to r = 0.1.
    static ForwardModel standard(std::size_t channels = 1) {
        static const std::vector<double> bank = {-10.0, -8.0, -12.0,
                                                 -6.0,  -9.0, -7.0};
        if (channels < 1 || channels > bank.size())
            throw std::invalid_argument(
                "ForwardModel::standard: 1..6 channels");
        std::vector<double> g(bank.begin(), bank.begin() + channels);
        std::vector<double> dry(channels);
        for (std::size_t c = 0; c < channels; ++c)
            dry[c] = g[c] * std::log1p(0.1);
        return ForwardModel(std::move(g), std::move(dry), 2.0, 4.0);
    }

    std::size_t channels() const { return gains.size(); }

    double wet_signal_mean(std::size_t channel, double rate) const {
        return gains[channel] * std::log1p(rate);
    }
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

struct Dataset {
    std::size_t channels = 1;
    std::vector<double> features;  // row-major, size() * channels
    std::vector<double> labels;    // rain rate, mm/h, zeros mark dry
    Split split = Split::train;
    std::uint64_t seed = 0;
    MarginalPrior prior;  // generator echo

    std::size_t size() const { return labels.size(); }

    std::span<const double> feature_row(std::size_t i) const {
        return {features.data() + i * channels, channels};
    }
};

inline Dataset generate(const MarginalPrior& prior, const ForwardModel& fm,
                        std::size_t n, std::uint64_t seed,
                        Split split = Split::train) {
    if (n == 0) throw std::invalid_argument("generate: n must be > 0");
    Dataset d;
    d.channels = fm.channels();
    d.split = split;
    d.seed = seed;
    d.prior = prior;
    d.labels.resize(n);
    d.features.resize(n * d.channels);
    Rng rng(seed);
    const HurdleParams hp(prior.p0, prior.wet_density());
    for (std::size_t i = 0; i < n; ++i) {
        const double r = sample_hurdle(hp, rng);
        d.labels[i] = r;
        double* row = d.features.data() + i * d.channels;
        if (r > 0.0) {
            for (std::size_t c = 0; c < d.channels; ++c)
                row[c] = fm.wet_signal_mean(c, r) + fm.noise_sigma * rng.normal();
        } else {
            for (std::size_t c = 0; c < d.channels; ++c)
                row[c] = fm.dry_signal_mu[c] + fm.dry_signal_sigma * rng.normal();
        }
    }
    return d;
}

struct SplitDataset {
    Dataset train;
    Dataset val;
    Dataset test;

    const Dataset& at(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::val: return val;
            case Split::test: return test;
        }
        throw std::logic_error("SplitDataset: bad split");
    }
};

// Three independent streams derived from one seed.
inline SplitDataset generate_splits(const MarginalPrior& prior,
                                    const ForwardModel& fm, std::size_t n_train,
                                    std::size_t n_val, std::size_t n_test,
                                    std::uint64_t seed) {
    Rng root(seed);
    const std::uint64_t s_train = root.next_u64();
    const std::uint64_t s_val = root.next_u64();
    const std::uint64_t s_test = root.next_u64();
    return {generate(prior, fm, n_train, s_train, Split::train),
            generate(prior, fm, n_val, s_val, Split::val),
            generate(prior, fm, n_test, s_test, Split::test)};
}

// ---------------------------------------------------------------------------
// Posterior oracles on a rate grid
// ---------------------------------------------------------------------------

struct PosteriorRow {
    std::vector<double> density;  // normalized over the grid
    double mean = 0.0;            // conditional mean rate
};

namespace detail {

inline PosteriorRow normalize_posterior(const RateGrid& grid,
                                        std::vector<double> log_density) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : log_density) m = std::max(m, v);
    if (!std::isfinite(m))
        throw std::runtime_error(
            "posterior: likelihood underflowed at every grid point");
    PosteriorRow row;
    row.density.resize(log_density.size());
    for (std::size_t i = 0; i < log_density.size(); ++i)
        row.density[i] = std::exp(log_density[i] - m);
    normalize_on_grid(grid, row.density);
    const auto w = grid.trapezoid_weights();
    double mean = 0.0;
    for (std::size_t i = 0; i < row.density.size(); ++i)
        mean += w[i] * grid.rates[i] * row.density[i];
    row.mean = mean;
    return row;
}

inline std::vector<double> log_likelihood_row(const ForwardModel& fm,
                                              std::span<const double> signal,
                                              const RateGrid& grid) {
    if (signal.size() != fm.channels())
        throw std::invalid_argument("posterior: signal/channel mismatch");
    std::vector<double> ll(grid.size(), 0.0);
    const double inv2v = 1.0 / (2.0 * fm.noise_sigma * fm.noise_sigma);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < fm.channels(); ++c) {
            const double d = signal[c] - fm.wet_signal_mean(c, grid.rates[i]);
            acc -= d * d * inv2v;
        }
        ll[i] = acc;
    }
    return ll;
}

}  // namespace detail

// Posterior under a uniform rate prior on the grid: density proportional to
// F(signal | R = r), normalized over the grid.
inline PosteriorRow ideal_posterior(const ForwardModel& fm,
                                    std::span<const double> signal,
                                    const RateGrid& grid) {
    return detail::normalize_posterior(
        grid, detail::log_likelihood_row(fm, signal, grid));
}

inline PosteriorRow ideal_posterior(const ForwardModel& fm, double signal,
                                    const RateGrid& grid) {
    return ideal_posterior(fm, std::span<const double>(&signal, 1), grid);
}

// Posterior weighted by an arbitrary positive prior density on the rate axis.
template <class PriorLogPdf>
PosteriorRow biased_posterior(const ForwardModel& fm, PriorLogPdf&& log_prior,
                              std::span<const double> signal,
                              const RateGrid& grid) {
    auto ll = detail::log_likelihood_row(fm, signal, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
        ll[i] += log_prior(grid.rates[i]);
    return detail::normalize_posterior(grid, std::move(ll));
}

// Posterior weighted by the lognormal marginal: proportional to
// F(signal | r) * F(r; lmu, lsigma).
inline PosteriorRow biased_posterior(const ForwardModel& fm,
                                     const MarginalPrior& prior,
                                     std::span<const double> signal,
                                     const RateGrid& grid) {
    const LognormalParams f = prior.wet_density();
    return biased_posterior(
        fm, [&](double r) { return lognormal_log_pdf(r, f); }, signal, grid);
}

inline PosteriorRow biased_posterior(const ForwardModel& fm,
                                     const MarginalPrior& prior, double signal,
                                     const RateGrid& grid) {
    return biased_posterior(fm, prior, std::span<const double>(&signal, 1),
                            grid);
}

// Batch evaluation over a set of scalar signals (single-channel models).
struct PosteriorGrid {
    RateGrid grid;
    std::vector<double> signals;
    std::vector<std::vector<double>> density;  // one row per signal
    std::vector<double> mean;                  // conditional mean per signal

    static PosteriorGrid ideal(const ForwardModel& fm,
                               std::vector<double> signals, RateGrid grid) {
        PosteriorGrid out;
        out.grid = std::move(grid);
        out.signals = std::move(signals);
        for (double s : out.signals) {
            auto row = ideal_posterior(fm, s, out.grid);
            out.density.push_back(std::move(row.density));
            out.mean.push_back(row.mean);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Dataset container: columnar binary + human-readable JSON sidecar
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kDatasetMagic[9] = "HIMDLDS1";
constexpr std::uint32_t kDatasetVersion = 1;

inline void write_split(std::ostream& out, const Dataset& d) {
    io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(d.split));
    io::write_pod<std::uint64_t>(out, d.seed);
    io::write_pod<double>(out, d.prior.lmu);
    io::write_pod<double>(out, d.prior.lsigma);
    io::write_pod<double>(out, d.prior.p0);
    io::write_f64_array(out, d.labels);
    io::write_f64_array(out, d.features);
}

inline Dataset read_split(std::istream& in, std::size_t channels) {
    Dataset d;
    d.channels = channels;
    d.split = static_cast<Split>(io::read_pod<std::uint8_t>(in));
    d.seed = io::read_pod<std::uint64_t>(in);
    const double lmu = io::read_pod<double>(in);
    const double lsigma = io::read_pod<double>(in);
    const double p0 = io::read_pod<double>(in);
    d.prior = MarginalPrior(lmu, lsigma, p0);
    d.labels = io::read_f64_array(in);
    d.features = io::read_f64_array(in);
    if (d.features.size() != d.labels.size() * channels)
        throw IoError("dataset: feature block size mismatch");
    return d;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const ForwardModel& fm) {
    return nlohmann::ordered_json{{"gains", fm.gains},
                                  {"dry_signal_mu", fm.dry_signal_mu},
                                  {"dry_signal_sigma", fm.dry_signal_sigma},
                                  {"noise_sigma", fm.noise_sigma}};
}

inline ForwardModel forward_model_from_json(const nlohmann::json& j) {
    return ForwardModel(j.at("gains").get<std::vector<double>>(),
                        j.at("dry_signal_mu").get<std::vector<double>>(),
                        j.at("dry_signal_sigma").get<double>(),
                        j.at("noise_sigma").get<double>());
}

inline nlohmann::ordered_json to_json(const MarginalPrior& p) {
    return nlohmann::ordered_json{
        {"lmu", p.lmu}, {"lsigma", p.lsigma}, {"p0", p.p0}};
}

inline MarginalPrior prior_from_json(const nlohmann::json& j) {
    return MarginalPrior(j.at("lmu").get<double>(),
                         j.at("lsigma").get<double>(),
                         j.at("p0").get<double>());
}

// Writes <path>.bin and <path>.meta.json.
inline void save_dataset(const std::string& path, const SplitDataset& ds,
                         const ForwardModel& fm, std::uint64_t seed) {
    auto out = io::open_out(path + ".bin");
    io::write_magic(out, detail::kDatasetMagic);
    io::write_pod<std::uint32_t>(out, detail::kDatasetVersion);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.train.channels));
    for (const Dataset* d : {&ds.train, &ds.val, &ds.test})
        detail::write_split(out, *d);

    nlohmann::ordered_json meta{
        {"format", "himdl dataset"},
        {"version", detail::kDatasetVersion},
        {"seed", seed},
        {"prior", to_json(ds.train.prior)},
        {"forward_model", to_json(fm)},
        {"splits",
         {{"train", ds.train.size()},
          {"val", ds.val.size()},
          {"test", ds.test.size()}}}};
    io::write_text_file(path + ".meta.json", meta.dump(2) + "\n");
}

inline SplitDataset load_dataset(const std::string& path) {
    auto in = io::open_in(path + ".bin");
    io::expect_magic(in, detail::kDatasetMagic, "dataset");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (version != detail::kDatasetVersion)
        throw IoError("dataset: unsupported version " + std::to_string(version));
    const auto channels = io::read_pod<std::uint32_t>(in);
    SplitDataset ds;
    ds.train = detail::read_split(in, channels);
    ds.val = detail::read_split(in, channels);
    ds.test = detail::read_split(in, channels);
    return ds;
}

// Wet-only view for the two-model estimation path.
inline Dataset filter_wet(const Dataset& d) {
    Dataset out;
    out.channels = d.channels;
    out.split = d.split;
    out.seed = d.seed;
    out.prior = d.prior;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] <= 0.0) continue;
        out.labels.push_back(d.labels[i]);
        const auto row = d.feature_row(i);
        out.features.insert(out.features.end(), row.begin(), row.end());
    }
    return out;
}

// Marginal statistics of a label series: dry mass plus lognormal moments of
// the wet part. This is how the training prior is estimated in practice.
inline MarginalPrior estimate_prior(std::span<const double> labels) {
    if (labels.empty())
        throw std::invalid_argument("estimate_prior: empty labels");
    std::size_t dry = 0;
    double s = 0.0, s2 = 0.0;
    std::size_t wet = 0;
    for (double v : labels) {
        if (v <= 0.0) {
            ++dry;
            continue;
        }
        const double x = std::log(v);
        s += x;
        s2 += x * x;
        ++wet;
    }
    if (wet < 2)
        throw std::invalid_argument("estimate_prior: needs >= 2 wet labels");
    const double mean = s / static_cast<double>(wet);
    const double var =
        std::max(s2 / static_cast<double>(wet) - mean * mean, 1e-12);
    return MarginalPrior(mean, std::sqrt(var),
                         static_cast<double>(dry) /
                             static_cast<double>(labels.size()));
}

}  // namespace himdl
