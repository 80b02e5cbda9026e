#pragma once

// Monte Carlo orchestration: one trial is generate -> spectral init ->
// descent -> Hungarian evaluation; a sweep runs trials over a (p, rho) grid.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "incdl/descent.hpp"
#include "incdl/error.hpp"
#include "incdl/evaluation.hpp"
#include "incdl/genmodel.hpp"
#include "incdl/numerics/singular.hpp"
#include "incdl/rng.hpp"
#include "incdl/spectral_init.hpp"

namespace incdl {

/// What a trial does when initialization collects fewer than m atoms.
enum class ShortfallPolicy {
    fail,        ///< record the trial as a failure
    pad_random,  ///< fill the missing columns with random unit vectors and continue
};

inline ShortfallPolicy parse_shortfall(std::string_view s) {
    if (s == "fail") return ShortfallPolicy::fail;
    if (s == "pad_random") return ShortfallPolicy::pad_random;
    throw ConfigError("unknown init_shortfall '" + std::string(s) + "' (expected fail|pad_random)");
}
inline std::string_view to_string(ShortfallPolicy s) { return s == ShortfallPolicy::fail ? "fail" : "pad_random"; }

struct ExperimentConfig {
    ModelConfig model;  ///< model.rho is replaced by each grid value
    std::vector<std::size_t> p_grid{1000, 2000, 4000};
    std::vector<double> rho_grid{1.0};
    std::size_t trials = 10;
    double tau = 6.0;
    std::uint64_t master_seed = 1;
    std::size_t holdout_size = 0;  ///< p1; 0 means 20 m

    // init
    double gap_c1 = kGapC1;
    double gap_c2 = kGapC2;
    std::size_t max_pair_trials = 3000;
    std::optional<double> dedup_dist;  ///< default 1/ln n
    double init_svd_tol = 1e-6;
    ShortfallPolicy init_shortfall = ShortfallPolicy::fail;

    // descent
    std::size_t steps = 50;
    double eta_scale = kDefaultEtaScale;
    std::optional<double> eta;  ///< overrides eta_scale
    EncoderMode encoder = EncoderMode::top_k;
    ResampleMode resample = ResampleMode::fixed_pool;
    std::size_t samples_per_step = 0;  ///< 0 means p
    bool renormalize = false;

    bool write_traces = false;

    std::size_t effective_holdout() const { return holdout_size > 0 ? holdout_size : 20 * model.m; }

    void validate() const {
        ModelConfig probe = model;
        probe.rho = 1.0;
        probe.validate();
        if (model.n < 2) throw ConfigError("experiment: n must be >= 2");
        if (p_grid.empty() || rho_grid.empty()) throw ConfigError("experiment: p_grid and rho_grid must be nonempty");
        for (std::size_t p : p_grid)
            if (p == 0) throw ConfigError("experiment: p must be >= 1");
        for (double r : rho_grid)
            if (!(r > 0.0 && r <= 1.0)) throw ConfigError("experiment: rho values must lie in (0, 1]");
        if (trials < 1) throw ConfigError("experiment: trials must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("experiment: tau must be positive");
        if (effective_holdout() < 2) throw ConfigError("experiment: holdout_size must be >= 2");
        if (!(gap_c1 > 0.0 && gap_c2 > 0.0)) throw ConfigError("experiment: gap constants must be positive");
        if (!(eta_scale > 0.0)) throw ConfigError("experiment: eta_scale must be positive");
        if (eta && !(*eta > 0.0)) throw ConfigError("experiment: eta must be positive");
        if (steps < 1) throw ConfigError("experiment: steps must be >= 1");
        init_config().validate();
    }

    InitConfig init_config() const {
        InitConfig c = InitConfig::for_model(model.n, model.m, model.k, gap_c1, gap_c2);
        c.p1 = effective_holdout();
        c.max_pair_trials = max_pair_trials;
        c.svd_tol = init_svd_tol;
        if (dedup_dist) c.dedup_dist = *dedup_dist;
        return c;
    }

    DescentConfig descent_config(std::size_t p, double rho) const {
        DescentConfig d;
        d.eta = eta ? *eta : default_eta(model.n, model.m, model.k, rho, eta_scale);
        d.steps = steps;
        d.encoder = encoder;
        d.samples_per_step = samples_per_step > 0 ? samples_per_step : p;
        d.resample = resample;
        d.renormalize = renormalize;
        return d;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '[' || c == ']') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    if (pos != v.size() || !std::isfinite(x))
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: '" + key + "' expects true|false, got '" + v + "'");
}

inline std::string unquote(std::string v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
        return v.substr(1, v.size() - 2);
    return v;
}

}  // namespace detail

/// Sets one configuration key. Keys may carry a section prefix ("init.c1").
inline void apply_setting(ExperimentConfig& cfg, const std::string& key_in, const std::string& value_in) {
    const std::string key = detail::trim(key_in);
    const std::string v = detail::unquote(detail::trim(value_in));
    using namespace detail;
    if (key == "n" || key == "model.n") cfg.model.n = parse_uint(key, v);
    else if (key == "m" || key == "model.m") cfg.model.m = parse_uint(key, v);
    else if (key == "k" || key == "model.k") cfg.model.k = parse_uint(key, v);
    else if (key == "code_dist" || key == "model.code_dist") cfg.model.code_dist = parse_code_distribution(v);
    else if (key == "C" || key == "model.C") cfg.model.C = parse_real(key, v);
    else if (key == "rho") cfg.rho_grid = {parse_real(key, v)};
    else if (key == "p") cfg.p_grid = {static_cast<std::size_t>(parse_uint(key, v))};
    else if (key == "rho_grid" || key == "sweep.rho_grid") {
        cfg.rho_grid.clear();
        for (const auto& t : split_list(v)) cfg.rho_grid.push_back(parse_real(key, t));
    } else if (key == "p_grid" || key == "sweep.p_grid") {
        cfg.p_grid.clear();
        for (const auto& t : split_list(v)) cfg.p_grid.push_back(parse_uint(key, t));
    } else if (key == "trials" || key == "sweep.trials") cfg.trials = parse_uint(key, v);
    else if (key == "tau" || key == "sweep.tau") cfg.tau = parse_real(key, v);
    else if (key == "seed" || key == "master_seed" || key == "sweep.master_seed") cfg.master_seed = parse_uint(key, v);
    else if (key == "holdout_size" || key == "p1" || key == "init.p1") cfg.holdout_size = parse_uint(key, v);
    else if (key == "init.c1" || key == "c1") cfg.gap_c1 = parse_real(key, v);
    else if (key == "init.c2" || key == "c2") cfg.gap_c2 = parse_real(key, v);
    else if (key == "init.max_pair_trials" || key == "max_pair_trials") cfg.max_pair_trials = parse_uint(key, v);
    else if (key == "init.dedup_dist" || key == "dedup_dist") cfg.dedup_dist = parse_real(key, v);
    else if (key == "init.svd_tol") cfg.init_svd_tol = parse_real(key, v);
    else if (key == "init.shortfall" || key == "init_shortfall") cfg.init_shortfall = parse_shortfall(v);
    else if (key == "descent.steps" || key == "steps") cfg.steps = parse_uint(key, v);
    else if (key == "descent.eta_scale" || key == "eta_scale") cfg.eta_scale = parse_real(key, v);
    else if (key == "descent.eta" || key == "eta") cfg.eta = parse_real(key, v);
    else if (key == "descent.encoder" || key == "encoder") cfg.encoder = parse_encoder(v);
    else if (key == "descent.resample" || key == "resample") cfg.resample = parse_resample(v);
    else if (key == "descent.samples_per_step" || key == "samples_per_step") cfg.samples_per_step = parse_uint(key, v);
    else if (key == "descent.renormalize" || key == "renormalize") cfg.renormalize = parse_bool(key, v);
    else if (key == "write_traces" || key == "output.write_traces") cfg.write_traces = parse_bool(key, v);
    else throw ConfigError("config: unknown key '" + key + "'");
}

/// Flat key = value text. '#' starts a comment; "[section]" lines prefix the
/// keys that follow with "section.".
inline ExperimentConfig parse_experiment_config(std::istream& is, ExperimentConfig cfg = {}) {
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(std::string_view(t).substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        apply_setting(cfg, key, t.substr(eq + 1));
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path, ExperimentConfig cfg = {}) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    return parse_experiment_config(is, std::move(cfg));
}

/// Configurations outside the regime where initialization is known to work.
/// Not errors: the algorithm may still succeed there.
inline std::vector<std::string> regime_warnings(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (double rho : cfg.rho_grid)
        if (1.0 / rho - 1.0 > static_cast<double>(cfg.model.k))
            out.push_back("rho = " + std::to_string(rho) + " gives 1/rho - 1 > k = " +
                          std::to_string(cfg.model.k) + "; initialization guarantees do not cover this case");
    return out;
}

/// master_seed xor a hash of (p, rho, trial).
inline std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t p, double rho, std::size_t trial) {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(p));
    h = mix64(h ^ std::bit_cast<std::uint64_t>(rho));
    h = mix64(h ^ static_cast<std::uint64_t>(trial));
    return master_seed ^ h;
}

/// Fills a short candidate list up to m columns with random unit vectors,
/// then projects to the radius ball (the pad_random shortfall policy).
inline Matrix pad_candidates(const CandidateList& list, std::size_t n, std::size_t m, double radius, Rng& rng) {
    std::vector<Vector> cols = list.vectors;
    while (cols.size() < m) {
        Vector z(n);
        for (double& x : z) x = rng.normal();
        normalize(z);
        cols.push_back(std::move(z));
    }
    return project_to_ball(Matrix::from_columns(n, cols), radius);
}

struct TrialRecord {
    std::size_t p = 0;
    double rho = 1.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    bool success = false;
    double frob_err = std::numeric_limits<double>::quiet_NaN();
    double delta = std::numeric_limits<double>::quiet_NaN();
    double init_frob_err = std::numeric_limits<double>::quiet_NaN();
    std::size_t init_atoms = 0;
    double seconds = 0.0;
    std::string failure;  ///< empty on a completed pipeline
    DescentTrace trace;
};

/// One full pipeline run with its own seed. Initialization sees the hold-out
/// fulls and the unlabeled partial pool; descent draws from the same pool.
inline TrialRecord run_trial(const ExperimentConfig& cfg, std::size_t p, double rho, std::uint64_t seed,
                             std::size_t trial_index = 0) {
    if (p == 0) throw ConfigError("run_trial: p must be >= 1");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("run_trial: rho must lie in (0, 1]");
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    TrialRecord rec;
    rec.p = p;
    rec.rho = rho;
    rec.trial = trial_index;
    rec.seed = seed;

    ModelConfig model = cfg.model;
    model.rho = rho;
    Rng rng(seed);
    const Matrix a_star = generate_dictionary(model, rng);
    const auto fulls = generate_full_samples(model, a_star, cfg.effective_holdout(), rng);
    const auto pool = generate_batch(model, a_star, p, rng);

    InitConfig icfg = cfg.init_config();
    icfg.radius = 2.0 * spectral_norm(a_star, 1e-8);

    auto finish = [&] {
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return rec;
    };

    Matrix a0;
    Rng init_rng = rng.split();
    try {
        const auto partials = unlabeled(pool);
        a0 = run_init(fulls, partials, rho, icfg, init_rng, model.m).a0;
        rec.init_atoms = model.m;
    } catch (const InitIncomplete& e) {
        rec.init_atoms = e.candidates().size();
        if (cfg.init_shortfall == ShortfallPolicy::fail) {
            rec.failure = "init_incomplete " + std::to_string(rec.init_atoms) + "/" + std::to_string(model.m);
            return finish();
        }
        a0 = pad_candidates(e.candidates(), model.n, model.m, *icfg.radius, init_rng);
    }
    rec.init_frob_err = hungarian_match(a0, a_star).frob_err;

    const DescentConfig dcfg = cfg.descent_config(p, rho);
    const SampleSupply supply =
        dcfg.resample == ResampleMode::fresh ? fresh_supply(model, a_star) : pool_supply(pool);
    Rng descent_rng = rng.split();
    try {
        auto result = run_descent(a0, dcfg, supply, {rho, model.k, model.C}, descent_rng,
                                  cfg.write_traces ? &a_star : nullptr);
        const MatchResult match = hungarian_match(result.a, a_star);
        rec.frob_err = match.frob_err;
        rec.delta = match.max_err;
        rec.success = recovery_success(match, cfg.tau);
        rec.trace = std::move(result.trace);
    } catch (const std::runtime_error& e) {
        rec.failure = std::string("descent: ") + e.what();
    }
    return finish();
}

struct AggregateRow {
    std::size_t p = 0;
    double rho = 1.0;
    std::size_t trials = 0;
    std::size_t successes = 0;
    double recovery_rate = 0.0;
    double mean_frob_err = std::numeric_limits<double>::quiet_NaN();  ///< over trials with an estimate
    double mean_delta = std::numeric_limits<double>::quiet_NaN();
};

struct SweepResult {
    std::vector<TrialRecord> records;  ///< p-major, then rho, then trial
    std::vector<AggregateRow> aggregates;
};

inline std::vector<AggregateRow> aggregate(const std::vector<TrialRecord>& records) {
    std::vector<AggregateRow> rows;
    std::map<std::pair<std::size_t, std::uint64_t>, std::size_t> where;
    std::vector<std::size_t> finite;
    std::vector<double> err_sum, delta_sum;
    for (const auto& r : records) {
        const auto key = std::make_pair(r.p, std::bit_cast<std::uint64_t>(r.rho));
        auto it = where.find(key);
        if (it == where.end()) {
            it = where.emplace(key, rows.size()).first;
            rows.push_back({r.p, r.rho});
            finite.push_back(0);
            err_sum.push_back(0.0);
            delta_sum.push_back(0.0);
        }
        const std::size_t i = it->second;
        ++rows[i].trials;
        rows[i].successes += r.success ? 1 : 0;
        if (std::isfinite(r.frob_err)) {
            ++finite[i];
            err_sum[i] += r.frob_err;
            delta_sum[i] += r.delta;
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].recovery_rate = static_cast<double>(rows[i].successes) / static_cast<double>(rows[i].trials);
        if (finite[i] > 0) {
            rows[i].mean_frob_err = err_sum[i] / static_cast<double>(finite[i]);
            rows[i].mean_delta = delta_sum[i] / static_cast<double>(finite[i]);
        }
    }
    return rows;
}

struct SweepOptions {
    bool serial = false;
    std::size_t threads = 0;  ///< 0 means hardware concurrency
    /// Called after each finished trial (from the worker thread, serialized).
    std::function<void(const TrialRecord&, std::size_t done, std::size_t total)> progress;
};

/// Full grid x trials. Results land in fixed slots, so the output order does
/// not depend on scheduling. Per-trial failures are recorded, never thrown.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt = {}) {
    cfg.validate();
    struct Job {
        std::size_t p;
        double rho;
        std::size_t trial;
    };
    std::vector<Job> jobs;
    for (std::size_t p : cfg.p_grid)
        for (double rho : cfg.rho_grid)
            for (std::size_t t = 0; t < cfg.trials; ++t) jobs.push_back({p, rho, t});

    SweepResult res;
    res.records.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::size_t done = 0;
    std::mutex progress_mutex;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const Job& job = jobs[j];
            const std::uint64_t seed = trial_seed(cfg.master_seed, job.p, job.rho, job.trial);
            try {
                res.records[j] = run_trial(cfg, job.p, job.rho, seed, job.trial);
            } catch (const std::exception& e) {
                TrialRecord r;
                r.p = job.p;
                r.rho = job.rho;
                r.trial = job.trial;
                r.seed = seed;
                r.failure = e.what();
                res.records[j] = std::move(r);
            }
            std::lock_guard lock(progress_mutex);
            ++done;
            if (opt.progress) opt.progress(res.records[j], done, jobs.size());
        }
    };

    std::size_t threads = opt.serial ? 1 : (opt.threads > 0 ? opt.threads : std::thread::hardware_concurrency());
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs.size(), 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    res.aggregates = aggregate(res.records);
    return res;
}

// ---------------------------------------------------------------------------
// CSV output

/// sweep.csv. With include_seconds false the seconds column is written as 0,
/// which keeps the file byte-reproducible.
inline void write_sweep_csv(std::ostream& os, const SweepResult& res, bool include_seconds) {
    const auto old_precision = os.precision(12);
    os << "p,rho,trial,success,frob_err,delta,seconds\n";
    for (const auto& r : res.records)
        os << r.p << ',' << r.rho << ',' << r.trial << ',' << (r.success ? 1 : 0) << ',' << r.frob_err << ','
           << r.delta << ',' << (include_seconds ? r.seconds : 0.0) << '\n';
    os.precision(old_precision);
}

inline void write_aggregate_csv(std::ostream& os, const SweepResult& res) {
    const auto old_precision = os.precision(12);
    os << "p,rho,trials,successes,recovery_rate,mean_frob_err,mean_delta\n";
    for (const auto& a : res.aggregates)
        os << a.p << ',' << a.rho << ',' << a.trials << ',' << a.successes << ',' << a.recovery_rate << ','
           << a.mean_frob_err << ',' << a.mean_delta << '\n';
    os.precision(old_precision);
}

/// Per-trial diagnostics that do not fit the fixed sweep.csv header.
inline void write_trial_details_csv(std::ostream& os, const SweepResult& res) {
    const auto old_precision = os.precision(12);
    os << "p,rho,trial,seed,init_atoms,init_frob_err,failure\n";
    for (const auto& r : res.records)
        os << r.p << ',' << r.rho << ',' << r.trial << ',' << r.seed << ',' << r.init_atoms << ','
           << r.init_frob_err << ',' << r.failure << '\n';
    os.precision(old_precision);
}

/// Writes sweep.csv, aggregate.csv, trials.csv and (when traced)
/// trace_<i>.csv, i being the record's position in sweep.csv.
inline void write_sweep_outputs(const std::filesystem::path& dir, const SweepResult& res, bool include_seconds) {
    std::filesystem::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream os(dir / name);
        if (!os) throw FormatError("cannot write '" + (dir / name).string() + "'");
        return os;
    };
    {
        auto os = open("sweep.csv");
        write_sweep_csv(os, res, include_seconds);
    }
    {
        auto os = open("aggregate.csv");
        write_aggregate_csv(os, res);
    }
    {
        auto os = open("trials.csv");
        write_trial_details_csv(os, res);
    }
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        if (res.records[i].trace.rows.empty()) continue;
        auto os = open("trace_" + std::to_string(i) + ".csv");
        write_trace_csv(os, res.records[i].trace);
    }
}

struct EvaluationReport {
    Nearness near;
    double frob_err = 0.0;
    bool success = false;
    double mu = 0.0;
    double democracy_mu = 0.0;
};

/// Nearness and recovery of a_hat against a_star, plus incoherence audits of
/// a_star. The democracy audit uses subsets of size ceil(n/2) (at least sqrt(n)).
inline EvaluationReport evaluate_estimate(const Matrix& a_hat, const Matrix& a_star, double tau, Rng& rng,
                                          std::size_t democracy_trials = 100) {
    EvaluationReport rep;
    const MatchResult match = hungarian_match(a_hat, a_star);
    rep.near = nearness(a_hat, a_star);
    rep.frob_err = match.frob_err;
    rep.success = recovery_success(match, tau);
    if (a_star.cols() >= 2) {
        rep.mu = incoherence(a_star);
        const std::size_t n = a_star.rows();
        const auto gamma = std::max<std::size_t>(
            (n + 1) / 2, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
        rep.democracy_mu = democracy_check(a_star, democracy_trials, std::min(gamma, n), rng);
    }
    return rep;
}

/// CSV: delta,kappa,frob_err,success,mu,democracy_mu
inline void write_evaluation_csv(std::ostream& os, const EvaluationReport& r) {
    const auto old_precision = os.precision(12);
    os << "delta,kappa,frob_err,success,mu,democracy_mu\n";
    os << r.near.delta << ',' << r.near.kappa << ',' << r.frob_err << ',' << (r.success ? 1 : 0) << ',' << r.mu
       << ',' << r.democracy_mu << '\n';
    os.precision(old_precision);
}

}  // namespace incdl
