// Calibration sweeps for the two unspecified constants:
//   eta  - the step-size multiplier c in eta = c m / (rho k)
//   gap  - the singular-gap constants (c1, c2) of the initialization test
//
// Output is CSV on stdout; progress on stderr.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <vector>

#include <CLI11.hpp>

#include "incdl.hpp"

using namespace incdl;

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

void calibrate_eta(std::size_t n, std::size_t k, std::size_t seeds, std::size_t p, std::size_t steps,
                   double delta0, std::uint64_t seed) {
    const std::vector<double> scales{0.125, 0.25, 0.5, 1.0};
    const std::vector<double> rhos{0.8, 1.0};
    std::cout << "eta_scale,rho,median_final_max_err,median_min_max_err,diverged\n";
    for (double scale : scales) {
        for (double rho : rhos) {
            ModelConfig model{n, n, k, rho, CodeDistribution::rademacher, 1.0};
            std::vector<double> finals, mins;
            std::size_t diverged = 0;
            for (std::size_t s = 0; s < seeds; ++s) {
                Rng rng(mix64(seed + s));
                const Matrix a_star = generate_dictionary(model, rng);
                const Matrix a0 = perturb_dictionary(a_star, delta0, rng);
                DescentConfig cfg;
                cfg.eta = default_eta(n, n, k, rho, scale);
                cfg.steps = steps;
                cfg.samples_per_step = p;
                cfg.resample = ResampleMode::fresh;
                cfg.encoder = EncoderMode::top_k;
                try {
                    const auto res =
                        run_descent(a0, cfg, fresh_supply(model, a_star), {rho, k, 1.0}, rng, &a_star);
                    double lo = res.trace.rows.front().max_col_err;
                    for (const auto& r : res.trace.rows) lo = std::min(lo, r.max_col_err);
                    finals.push_back(res.trace.rows.back().max_col_err);
                    mins.push_back(lo);
                } catch (const std::runtime_error&) {
                    ++diverged;
                }
                std::fprintf(stderr, "eta_scale=%g rho=%g seed %zu done\n", scale, rho, s);
            }
            std::cout << scale << ',' << rho << ','
                      << (finals.empty() ? NAN : median(finals)) << ','
                      << (mins.empty() ? NAN : median(mins)) << ',' << diverged << '\n';
        }
    }
}

struct LabeledPair {
    std::size_t shared = 0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    bool converged = true;  // a failed power iteration is a rejection in run_init
};

void calibrate_gap(std::size_t n, std::size_t k, double rho, std::size_t pairs, std::size_t p2,
                   std::uint64_t seed) {
    ModelConfig model{n, n, k, rho, CodeDistribution::rademacher, 1.0};
    Rng rng(seed);
    const Matrix a_star = generate_dictionary(model, rng);
    const auto pool_samples = unlabeled(generate_batch(model, a_star, p2, rng));
    const SamplePool pool(pool_samples, n);

    std::vector<LabeledPair> corpus;
    for (std::size_t t = 0; t < pairs; ++t) {
        const SparseCode cu = generate_code(model, rng), cv = generate_code(model, rng);
        LabeledPair lp;
        for (std::size_t i : cu.support) lp.shared += std::count(cv.support.begin(), cv.support.end(), i);
        const Matrix cov = weighted_covariance(synthesize_full(a_star, cu), synthesize_full(a_star, cv), pool, rho);
        if (max_abs(cov) > 0.0) {
            try {
                const auto sp = top_singular_pairs(cov, 2, 1e-6, 5000);
                lp.delta1 = sp[0].value;
                lp.delta2 = sp[1].value;
            } catch (const ConvergenceError&) {
                lp.converged = false;
            }
        }
        corpus.push_back(lp);
        if ((t + 1) % 100 == 0) std::fprintf(stderr, "%zu/%zu pairs\n", t + 1, pairs);
    }

    std::size_t unique = 0, stalled = 0;
    for (const auto& lp : corpus) {
        unique += lp.shared == 1 ? 1 : 0;
        stalled += lp.converged ? 0 : 1;
    }
    std::cerr << "pairs with exactly one shared atom: " << unique << " of " << corpus.size()
              << "; power iteration stalled on " << stalled << '\n';

    const double log_n = std::log(static_cast<double>(n));
    std::cout << "c1,c2,false_accept_rate,true_accept_rate,accepted_precision\n";
    for (double c1 : {1.0, 1.5, 2.0, 2.5, 3.0}) {
        for (double c2 : {1.0, 2.0, 3.0, 4.0, 6.0}) {
            const double d1 = c1 * static_cast<double>(k) / static_cast<double>(n);
            const double d2 = c2 * static_cast<double>(k) / (static_cast<double>(n) * log_n);
            if (!(d1 > d2)) continue;
            std::size_t fa = 0, neg = 0, ta = 0, pos = 0;
            for (const auto& lp : corpus) {
                const bool acc = lp.converged && lp.delta1 >= d1 && lp.delta2 < d2;
                if (lp.shared == 1) {
                    ++pos;
                    ta += acc;
                } else {
                    ++neg;
                    fa += acc;
                }
            }
            const double precision = (ta + fa) ? static_cast<double>(ta) / static_cast<double>(ta + fa) : NAN;
            std::cout << c1 << ',' << c2 << ',' << (neg ? static_cast<double>(fa) / neg : NAN) << ','
                      << (pos ? static_cast<double>(ta) / pos : NAN) << ',' << precision << '\n';
        }
    }
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(q * static_cast<double>(v.size() - 1))];
}

// Empirical baselines behind the statistical tests.
void baselines(std::uint64_t seed) {
    ModelConfig big{256, 256, 6, 0.8, CodeDistribution::rademacher, 1.0};
    std::vector<double> mus, maxn;
    std::size_t coh_pass = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng(seed + s);
        const Matrix a = generate_dictionary(big, rng);
        const double mu = incoherence(a);
        mus.push_back(mu);
        coh_pass += mu / 16.0 < 5.0 / 16.0 ? 1 : 0;
        maxn.push_back(max_norm(a) * 16.0);
    }
    std::cout << "gaussian256_coherence_below_5_over_sqrt_n_rate," << coh_pass / 100.0 << '\n';
    std::cout << "gaussian256_mu_q05," << quantile(mus, 0.05) << "\ngaussian256_mu_q50," << quantile(mus, 0.5)
              << "\ngaussian256_mu_q95," << quantile(mus, 0.95) << '\n';
    std::cout << "gaussian256_maxnorm_sqrt_n_max," << quantile(maxn, 1.0) << '\n';

    {
        std::vector<double> ratios;
        for (std::uint64_t s = 0; s < 20; ++s) {
            Rng rng(seed + 300 + s);
            const Matrix a = generate_dictionary({64, 64, 1, 1.0, CodeDistribution::rademacher, 1.0}, rng);
            ratios.push_back(democracy_check(a, 500, 32, rng) / incoherence(a));
        }
        std::cout << "democracy64_g32_ratio_max," << quantile(ratios, 1.0) << '\n';
    }

    {
        // |beta_i - alpha_i| with u a full sample and gamma a Bernoulli(rho) mask
        Rng rng(seed + 400);
        const Matrix a = generate_dictionary(big, rng);
        std::vector<double> worst;
        for (int t = 0; t < 1000; ++t) {
            const SparseCode code = generate_code(big, rng);
            const PartialSample y = subsample(synthesize_full(a, code), big.rho, rng);
            const Vector beta = beta_estimate(synthesize_full(a, code), a, y.observed, big.rho);
            double w = 0.0;
            for (std::size_t i = 0; i < big.m; ++i) w = std::max(w, std::abs(beta[i] - code.values[i]));
            worst.push_back(w);
        }
        std::cout << "beta256_max_dev_q50," << quantile(worst, 0.5) << "\nbeta256_max_dev_q95,"
                  << quantile(worst, 0.95) << "\nbeta256_max_dev_max," << quantile(worst, 1.0) << '\n';
    }

    {
        std::vector<double> rates_topk, rates_thr;
        for (std::uint64_t s = 0; s < 5; ++s) {
            Rng rng(seed + 500 + s);
            const Matrix a_star = generate_dictionary(big, rng);
            const Matrix a = perturb_dictionary(a_star, 0.05, rng);
            const auto batch = generate_batch(big, a_star, 10000, rng);
            for (auto mode : {EncoderMode::top_k, EncoderMode::magnitude_half_c}) {
                const auto codes = encode_batch(a, batch, mode, {big.rho, big.k, 1.0});
                (mode == EncoderMode::top_k ? rates_topk : rates_thr).push_back(support_consistency(batch, codes));
            }
        }
        std::cout << "sign_recovery256_topk_min," << quantile(rates_topk, 0.0) << "\nsign_recovery256_topk_max,"
                  << quantile(rates_topk, 1.0) << "\nsign_recovery256_threshold_max," << quantile(rates_thr, 1.0)
                  << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibration sweeps"};
    app.require_subcommand(1);
    std::uint64_t seed = 2024;
    app.add_option("--seed", seed);

    std::size_t n = 64, k = 3, seeds = 8, p = 4096, steps = 25;
    double delta0 = 0.1;
    auto* eta = app.add_subcommand("eta", "step-size multiplier grid");
    eta->add_option("--n", n);
    eta->add_option("--k", k);
    eta->add_option("--seeds", seeds);
    eta->add_option("--p", p);
    eta->add_option("--steps", steps);
    eta->add_option("--delta0", delta0);

    std::size_t gn = 64, gk = 3, pairs = 1000, p2 = 30000;
    double rho = 0.8;
    auto* gap = app.add_subcommand("gap", "singular-gap threshold grid on labeled pairs");
    gap->add_option("--n", gn);
    gap->add_option("--k", gk);
    gap->add_option("--rho", rho);
    gap->add_option("--pairs", pairs);
    gap->add_option("--p2", p2);

    app.add_subcommand("baselines", "empirical baselines for the statistical tests");

    CLI11_PARSE(app, argc, argv);
    if (app.got_subcommand("baselines")) baselines(seed);
    if (*eta) calibrate_eta(n, k, seeds, p, steps, delta0, seed);
    if (*gap) calibrate_gap(gn, gk, rho, pairs, p2, seed);
    return 0;
}
