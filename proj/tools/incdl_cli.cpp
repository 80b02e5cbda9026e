// incdl: generate data, initialize, learn, sweep and evaluate from the shell.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "incdl.hpp"

namespace fs = std::filesystem;
using namespace incdl;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> p_list;
    std::optional<std::string> rho_list;
    std::optional<std::size_t> trials;
    std::optional<std::string> resample;
    std::optional<std::string> encoder;
    std::vector<std::string> set;  // raw key=value overrides
    std::string out_dir = ".";
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--out-dir", f.out_dir, "output directory");
    sub->add_option("--p", f.p_list, "partial-sample count(s), comma separated");
    sub->add_option("--rho", f.rho_list, "observation probability(ies), comma separated");
    sub->add_option("--trials", f.trials, "Monte Carlo trials per grid cell");
    sub->add_option("--resample", f.resample, "fresh | fixed_pool");
    sub->add_option("--encoder", f.encoder, "threshold | topk");
    sub->add_option("--set", f.set, "extra key=value override (repeatable)");
}

ExperimentConfig build_config(const CommonFlags& f) {
    ExperimentConfig cfg;
    if (!f.config.empty()) cfg = load_experiment_config(f.config);
    if (f.seed) cfg.master_seed = *f.seed;
    if (f.p_list) apply_setting(cfg, "p_grid", *f.p_list);
    if (f.rho_list) apply_setting(cfg, "rho_grid", *f.rho_list);
    if (f.trials) cfg.trials = *f.trials;
    if (f.resample) cfg.resample = parse_resample(*f.resample);
    if (f.encoder) cfg.encoder = parse_encoder(*f.encoder);
    for (const auto& kv : f.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    for (const auto& w : regime_warnings(cfg)) std::cerr << "warning: " << w << '\n';
    return cfg;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c == '\n' ? ' ' : c);
    }
    return out + "\"";
}

int fail(const char* kind, const std::string& msg, int code) {
    std::cerr << "error kind=" << kind << " message=" << quoted(msg) << '\n';
    return code;
}

Matrix columns_to_matrix(std::size_t n, const std::vector<Vector>& cols) {
    return Matrix::from_columns(n, cols);
}

std::vector<Vector> matrix_to_columns(const Matrix& a) {
    std::vector<Vector> cols;
    for (std::size_t j = 0; j < a.cols(); ++j) cols.push_back(a.column(j));
    return cols;
}

// generate: A_star.mat, holdout.mat (columns are full samples), partials.txt
void cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    ModelConfig model = cfg.model;
    model.rho = cfg.rho_grid.front();
    Rng rng(cfg.master_seed);
    const Matrix a_star = generate_dictionary(model, rng);
    const auto fulls = generate_full_samples(model, a_star, cfg.effective_holdout(), rng);
    const auto pool = generate_batch(model, a_star, cfg.p_grid.front(), rng);
    save_matrix((out / "A_star.mat").string(), a_star);
    save_matrix((out / "holdout.mat").string(), columns_to_matrix(model.n, fulls));
    const auto partials = unlabeled(pool);
    save_dataset((out / "partials.txt").string(), {model.n, model.m, model.k, model.rho}, partials);
    std::cout << "wrote " << (out / "A_star.mat").string() << ", holdout.mat (" << fulls.size()
              << " samples), partials.txt (" << partials.size() << " samples)\n";
}

struct LoadedData {
    Dataset partials;
    std::vector<Vector> fulls;
};

LoadedData load_data(const fs::path& dir) {
    LoadedData d;
    d.partials = load_dataset((dir / "partials.txt").string());
    d.fulls = matrix_to_columns(load_matrix((dir / "holdout.mat").string()));
    return d;
}

Matrix do_init(const ExperimentConfig& cfg, const LoadedData& data, const std::optional<std::string>& truth,
               const fs::path& out) {
    const auto& h = data.partials.header;
    ExperimentConfig c = cfg;
    c.model.n = h.n;
    c.model.m = h.m;
    c.model.k = h.k;
    InitConfig icfg = c.init_config();
    if (truth) icfg.radius = 2.0 * spectral_norm(load_matrix(*truth));
    Rng rng(cfg.master_seed);
    fs::create_directories(out);
    std::ofstream report(out / "init_report.csv");
    try {
        InitResult res = run_init(data.fulls, data.partials.samples, h.rho, icfg, rng, h.m);
        write_init_report_csv(report, res.report);
        save_matrix((out / "A0.mat").string(), res.a0);
        std::cout << "init: collected " << res.candidates.size() << " atoms in " << res.report.rows.size()
                  << " pair trials\n";
        return res.a0;
    } catch (const InitIncomplete& e) {
        write_init_report_csv(report, e.report());
        if (!e.candidates().vectors.empty())
            save_matrix((out / "A0_partial.mat").string(), Matrix::from_columns(h.n, e.candidates().vectors));
        if (cfg.init_shortfall == ShortfallPolicy::fail) throw;
        const Matrix a0 =
            pad_candidates(e.candidates(), h.n, h.m, icfg.radius.value_or(fallback_radius(h.n, h.m)), rng);
        save_matrix((out / "A0.mat").string(), a0);
        std::cerr << "warning: init collected " << e.candidates().size() << " of " << h.m
                  << " atoms; padded with random columns\n";
        return a0;
    }
}

void cmd_learn(const ExperimentConfig& cfg, const LoadedData& data, const std::optional<std::string>& init_path,
               const std::optional<std::string>& truth, const fs::path& out) {
    const auto& h = data.partials.header;
    const Matrix a0 = init_path ? load_matrix(*init_path) : do_init(cfg, data, truth, out);
    if (a0.rows() != h.n || a0.cols() != h.m) throw ArgumentError("learn: initial dictionary shape differs from data");
    std::optional<Matrix> a_star;
    if (truth) a_star = load_matrix(*truth);

    const DescentConfig dcfg = cfg.descent_config(data.partials.samples.size(), h.rho);
    std::vector<LabeledSample> pool;
    for (const auto& s : data.partials.samples) pool.push_back({s, std::nullopt});
    SampleSupply supply;
    if (dcfg.resample == ResampleMode::fresh) {
        if (!a_star) throw ConfigError("learn: --resample fresh needs --truth to drive the sample generator");
        ModelConfig model = cfg.model;
        model.n = h.n;
        model.m = h.m;
        model.k = h.k;
        model.rho = h.rho;
        supply = fresh_supply(model, *a_star);
    } else {
        supply = pool_supply(pool);
    }
    Rng rng(mix64(cfg.master_seed));
    const auto res = run_descent(a0, dcfg, supply, {h.rho, h.k, cfg.model.C}, rng, a_star ? &*a_star : nullptr);
    fs::create_directories(out);
    save_matrix((out / "A_hat.mat").string(), res.a);
    std::ofstream trace(out / "trace.csv");
    write_trace_csv(trace, res.trace);
    std::cout << "learn: " << dcfg.steps << " steps, eta = " << dcfg.eta << ", wrote A_hat.mat and trace.csv\n";
}

void cmd_sweep(const ExperimentConfig& cfg, bool serial, std::size_t threads, const fs::path& out) {
    SweepOptions opt;
    opt.serial = serial;
    opt.threads = threads;
    opt.progress = [](const TrialRecord& r, std::size_t done, std::size_t total) {
        std::fprintf(stderr, "[%zu/%zu] p=%zu rho=%g trial=%zu frob_err=%.4g%s%s\n", done, total, r.p, r.rho,
                     r.trial, r.frob_err, r.failure.empty() ? "" : " failure=", r.failure.c_str());
    };
    const SweepResult res = run_sweep(cfg, opt);
    // Wall times only go into sweep.csv outside serial mode, which keeps
    // serial output byte-reproducible; timing.log always has them.
    write_sweep_outputs(out, res, !serial);
    std::ofstream timing(out / "timing.log");
    for (const auto& r : res.records) timing << r.p << ',' << r.rho << ',' << r.trial << ',' << r.seconds << '\n';
    write_aggregate_csv(std::cout, res);
}

void cmd_eval(const std::string& est, const std::string& truth, double tau, std::uint64_t seed,
              const std::optional<std::string>& report_path) {
    const Matrix a_hat = load_matrix(est);
    const Matrix a_star = load_matrix(truth);
    const MatchResult match = hungarian_match(a_hat, a_star);
    std::cout.precision(12);
    std::cout << "truth_col,est_col,sign,err\n";
    for (std::size_t i = 0; i < match.permutation.size(); ++i)
        std::cout << i << ',' << match.permutation[i] << ',' << match.signs[i] << ',' << match.per_column_err[i]
                  << '\n';
    std::cerr << "frob_err=" << match.frob_err << " max_err=" << match.max_err
              << " success=" << (recovery_success(match, tau) ? 1 : 0) << " tau=" << tau << '\n';
    if (report_path) {
        Rng rng(seed);
        std::ofstream os(*report_path);
        if (!os) throw FormatError("cannot write '" + *report_path + "'");
        write_evaluation_csv(os, evaluate_estimate(a_hat, a_star, tau, rng));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dictionary learning from incomplete samples"};
    app.require_subcommand(1);

    CommonFlags gen_f, init_f, learn_f, sweep_f;
    auto* gen = app.add_subcommand("generate", "draw a dictionary, hold-out fulls and a partial pool");
    add_common(gen, gen_f);

    auto* init = app.add_subcommand("init", "spectral initialization from generated data");
    add_common(init, init_f);
    std::string init_data = ".";
    std::optional<std::string> init_truth;
    init->add_option("--data", init_data, "directory written by generate")->check(CLI::ExistingDirectory);
    init->add_option("--truth", init_truth, "true dictionary; sets the projection radius to 2||A*||")
        ->check(CLI::ExistingFile);

    auto* learn = app.add_subcommand("learn", "descent from an initial dictionary (runs init when none is given)");
    add_common(learn, learn_f);
    std::string learn_data = ".";
    std::optional<std::string> learn_init, learn_truth;
    learn->add_option("--data", learn_data, "directory written by generate")->check(CLI::ExistingDirectory);
    learn->add_option("--init", learn_init, "initial dictionary matrix file")->check(CLI::ExistingFile);
    learn->add_option("--truth", learn_truth, "true dictionary (tracing, fresh resampling)")
        ->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over the (p, rho) grid");
    add_common(sweep, sweep_f);
    bool serial = false;
    std::size_t threads = 0;
    sweep->add_flag("--serial", serial, "single-threaded, byte-reproducible output");
    sweep->add_option("--threads", threads, "worker threads (0 = hardware concurrency)");

    auto* eval = app.add_subcommand("eval", "match an estimate to the truth and print the alignment CSV");
    std::string est, truth;
    double tau = 6.0;
    std::uint64_t eval_seed = 1;
    std::optional<std::string> report_path;
    eval->add_option("--est", est, "estimated dictionary")->required()->check(CLI::ExistingFile);
    eval->add_option("--truth", truth, "true dictionary")->required()->check(CLI::ExistingFile);
    eval->add_option("--tau", tau, "Frobenius recovery threshold");
    eval->add_option("--seed", eval_seed, "seed for the democracy audit");
    eval->add_option("--report", report_path, "write delta,kappa,frob_err,success,mu,democracy_mu CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        return fail("usage", e.what(), 2);
    }

    try {
        if (*gen) {
            cmd_generate(build_config(gen_f), gen_f.out_dir);
        } else if (*init) {
            const auto cfg = build_config(init_f);
            do_init(cfg, load_data(init_data), init_truth, init_f.out_dir);
        } else if (*learn) {
            const auto cfg = build_config(learn_f);
            cmd_learn(cfg, load_data(learn_data), learn_init, learn_truth, learn_f.out_dir);
        } else if (*sweep) {
            cmd_sweep(build_config(sweep_f), serial, threads, sweep_f.out_dir);
        } else if (*eval) {
            if (!(tau > 0.0)) throw ConfigError("eval: --tau must be positive");
            cmd_eval(est, truth, tau, eval_seed, report_path);
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const FormatError& e) {
        return fail("format", e.what(), 1);
    } catch (const InitIncomplete& e) {
        return fail("init_incomplete", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
