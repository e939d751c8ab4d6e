// Command-line front end: generate synthetic datasets, train and evaluate
// retrieval models, sweep the sigma hyperparameter, and compare methods.
//
// Exit codes: 0 success, 2 configuration error, 3 training divergence,
// 4 file I/O failure, 1 anything else.

#include <himdl/experiment.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

using namespace himdl;

void print_report(const GradedReport& rep) {
    std::printf("%9s %8s %8s %8s %8s %8s %8s\n", "threshold", "count", "rmse",
                "me", "pod", "far", "ets");
    auto cell = [](const std::optional<double>& v) {
        char buf[16];
        if (v)
            std::snprintf(buf, sizeof buf, "%8.4f", *v);
        else
            std::snprintf(buf, sizeof buf, "%8s", "-");
        return std::string(buf);
    };
    for (const auto& r : rep.rows)
        std::printf("%9.1f %8llu %s %s %s %s %s\n", r.threshold,
                    static_cast<unsigned long long>(r.grade_count),
                    cell(r.rmse).c_str(), cell(r.me).c_str(),
                    cell(r.pod).c_str(), cell(r.far).c_str(),
                    cell(r.ets).c_str());
}

struct CommonOpts {
    std::string config_path;
    std::optional<std::string> method;
    std::optional<std::string> estimation;
    std::optional<double> sigma;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> data_path;
    std::optional<std::size_t> max_epochs;
    std::optional<std::size_t> patience;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* c = cmd->add_option("--config", opts.config_path,
                              "experiment config JSON file");
    if (config_required) c->required();
    cmd->add_option("--method", opts.method,
                    "hurdle_imdl | hurdle_noimdl | omse | lwmse | nwmse");
    cmd->add_option("--estimation", opts.estimation,
                    "single_model | two_model");
    cmd->add_option("--sigma", opts.sigma, "fixed lognormal scale");
    cmd->add_option("--seed", opts.seed, "run seed");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--data", opts.data_path,
                    "dataset file stem (overrides the generator)");
    cmd->add_option("--max-epochs", opts.max_epochs, "training epoch cap");
    cmd->add_option("--patience", opts.patience, "early stopping patience");
}

ExperimentConfig build_config(const CommonOpts& opts) {
    ExperimentConfig cfg = opts.config_path.empty()
                               ? standard_benchmark()
                               : load_config(opts.config_path);
    if (opts.method) cfg.method = method_from_name(*opts.method);
    if (opts.estimation)
        cfg.estimation = estimation_from_name(*opts.estimation);
    if (opts.sigma) cfg.sigma = *opts.sigma;
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.data_path) {
        cfg.dataset.generator.reset();
        cfg.dataset.path = *opts.data_path;
    }
    if (opts.max_epochs) cfg.train.max_epochs = *opts.max_epochs;
    if (opts.patience) cfg.train.patience = *opts.patience;
    return cfg;
}

int cmd_generate(const CommonOpts& opts, const std::string& out_stem) {
    const ExperimentConfig cfg = build_config(opts);
    if (!cfg.dataset.generator)
        throw ConfigError("generate: config has no generator spec");
    const GeneratorSpec& g = *cfg.dataset.generator;
    const SplitDataset data = generate_splits(
        g.prior, g.forward_model, g.n_train, g.n_val, g.n_test, g.seed);
    save_dataset(out_stem, data, g.forward_model, g.seed);
    std::printf("wrote %s.bin and %s.meta.json (%zu/%zu/%zu samples)\n",
                out_stem.c_str(), out_stem.c_str(), data.train.size(),
                data.val.size(), data.test.size());
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const RunRecord rec = run_experiment(cfg);
    std::printf("method=%s estimation=%s sigma=%g seed=%llu (%.1fs)\n",
                method_name(cfg.method), estimation_name(cfg.estimation),
                cfg.sigma, static_cast<unsigned long long>(cfg.seed),
                rec.wall_clock_seconds);
    print_report(rec.report);
    if (!cfg.out_dir.empty())
        std::printf("run directory: %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& mu_path,
                 const std::string& data_path, const std::string& out_dir) {
    const Checkpoint primary = load_checkpoint(ckpt_path);
    const SplitDataset data = load_dataset(data_path);
    const Dataset& test = data.test;

    std::vector<double> ret(test.size());
    const Predictor predict(primary);
    if (primary.net.heads == HeadKind::joint) {
        for (std::size_t i = 0; i < test.size(); ++i) {
            const HeadValues h = predict(test.feature_row(i));
            ret[i] = hurdle_expectation(
                HurdleParams(h.p, LognormalParams(h.mu, primary.train.sigma)));
        }
    } else if (!mu_path.empty()) {
        if (primary.net.heads != HeadKind::p_only)
            throw ConfigError("evaluate: --checkpoint-mu needs a p_only primary");
        const Predictor predict_mu{load_checkpoint(mu_path)};
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto row = test.feature_row(i);
            ret[i] = hurdle_expectation(HurdleParams(
                predict(row).p,
                LognormalParams(predict_mu(row).mu, primary.train.sigma)));
        }
    } else if (primary.net.heads == HeadKind::mu_only) {
        for (std::size_t i = 0; i < test.size(); ++i)
            ret[i] = std::max(predict(test.feature_row(i)).mu, 0.0);
    } else {
        throw ConfigError(
            "evaluate: p_only checkpoint needs --checkpoint-mu for rates");
    }

    const GradedReport rep = full_report(ret, test.labels);
    print_report(rep);
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw IoError("evaluate: cannot create " + out_dir);
        io::write_text_file(out_dir + "/report.csv", to_csv(rep));
        io::write_text_file(out_dir + "/report.json",
                            to_json(rep).dump(2) + "\n");
        std::printf("wrote %s/report.{csv,json}\n", out_dir.c_str());
    }
    return 0;
}

int cmd_sigma_grid(const CommonOpts& opts, std::vector<double> sigmas) {
    ExperimentConfig cfg = build_config(opts);
    if (!sigmas.empty()) cfg.sigma_grid = std::move(sigmas);
    if (cfg.sigma_grid.empty())
        cfg.sigma_grid = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    const SigmaGridResult grid = run_sigma_grid(cfg);
    for (std::size_t i = 0; i < grid.records.size(); ++i) {
        std::printf("--- sigma = %g ---\n", grid.sigmas[i]);
        print_report(grid.records[i].report);
    }
    if (!cfg.out_dir.empty())
        std::printf("grid table: %s/sigma_grid.csv\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths,
                const std::vector<std::string>& methods,
                const CommonOpts& opts) {
    std::vector<ExperimentConfig> cfgs;
    for (const auto& p : config_paths) cfgs.push_back(load_config(p));
    if (cfgs.empty()) {
        // method-list shorthand: one base config, several methods
        ExperimentConfig base = build_config(opts);
        for (const auto& m : methods) {
            ExperimentConfig c = base;
            c.method = method_from_name(m);
            cfgs.push_back(std::move(c));
        }
    }
    if (cfgs.empty())
        throw ConfigError("compare: need --config files or --methods");
    const ComparisonResult res =
        run_compare(cfgs, opts.out_dir.value_or(""));
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        std::printf("=== %s ===\n", res.methods[i].c_str());
        print_report(res.records[i].report);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "hurdle-lognormal rainfall retrieval with inversion-model debiasing"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* gen = app.add_subcommand(
        "generate", "generate a synthetic dataset bundle and write it to disk");
    std::string gen_out;
    add_common(gen, opts, false);
    gen->add_option("--out-stem", gen_out, "output file stem")->required();

    auto* tr = app.add_subcommand(
        "train", "train one configuration and report graded metrics");
    add_common(tr, opts, false);

    auto* ev = app.add_subcommand(
        "evaluate", "evaluate a saved checkpoint on a dataset's test split");
    std::string ev_ckpt, ev_mu, ev_data, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--checkpoint-mu", ev_mu,
                   "rate checkpoint of a two-model run");
    ev->add_option("--data", ev_data, "dataset file stem")->required();
    ev->add_option("--out", ev_out, "output directory for report files");

    auto* grid = app.add_subcommand(
        "sigma-grid", "train one run per sigma over shared data");
    std::vector<double> grid_sigmas;
    add_common(grid, opts, false);
    grid->add_option("--sigmas", grid_sigmas, "sigma values")
        ->delimiter(',');

    auto* cmp = app.add_subcommand(
        "compare", "aligned comparison of several methods on one dataset");
    std::vector<std::string> cmp_configs, cmp_methods;
    add_common(cmp, opts, false);
    cmp->add_option("--configs", cmp_configs, "config files, one per method")
        ->delimiter(',');
    cmp->add_option("--methods", cmp_methods,
                    "method names sharing the base config")
        ->delimiter(',');

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(opts, gen_out);
        if (tr->parsed()) return cmd_train(opts);
        if (ev->parsed()) return cmd_evaluate(ev_ckpt, ev_mu, ev_data, ev_out);
        if (grid->parsed()) return cmd_sigma_grid(opts, grid_sigmas);
        if (cmp->parsed()) return cmd_compare(cmp_configs, cmp_methods, opts);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const himdl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const himdl::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const himdl::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
