// Small end-to-end run on a 64 x 64 dictionary:
//   1. descent from a start at column distance 0.2 with fresh samples
//   2. the pairwise spectral initialization on a hold-out set
// Prints a short report; takes a few seconds.

#include <algorithm>
#include <cstdio>

#include "incdl.hpp"

using namespace incdl;

int main() {
    const ModelConfig model{64, 64, 3, 0.8, CodeDistribution::rademacher, 1.0};
    Rng rng(7);
    const Matrix a_star = generate_dictionary(model, rng);
    std::printf("dictionary 64 x 64, k = 3, rho = 0.8, coherence %.2f / sqrt(n)\n", incoherence(a_star));

    // 1. descent
    const Matrix a0 = perturb_dictionary(a_star, 0.2, rng);
    DescentConfig cfg;
    cfg.eta = default_eta(model.n, model.m, model.k, model.rho);
    cfg.steps = 30;
    cfg.samples_per_step = 4096;
    cfg.resample = ResampleMode::fresh;
    const DescentResult res =
        run_descent(a0, cfg, fresh_supply(model, a_star), {model.rho, model.k, model.C}, rng, &a_star);
    std::printf("\ndescent, eta = %.3f\n  step  max_col_err  frob_err  sign_agree\n", cfg.eta);
    for (const auto& row : res.trace.rows)
        if (row.step % 5 == 0)
            std::printf("  %4zu  %11.4f  %8.4f  %10.3f\n", row.step, row.max_col_err, row.frob_err,
                        row.support_consistency_rate);

    // 2. initialization
    const auto fulls = generate_full_samples(model, a_star, 1200, rng);
    const auto partials = unlabeled(generate_batch(model, a_star, 20000, rng));
    InitConfig icfg = InitConfig::for_model(model.n, model.m, model.k);
    icfg.max_pair_trials = 600;
    icfg.radius = 2.0 * spectral_norm(a_star);
    CandidateList found;
    try {
        found = run_init(fulls, partials, model.rho, icfg, rng, model.m).candidates;
    } catch (const InitIncomplete& e) {
        found = e.candidates();
    }
    std::vector<double> nearest;
    for (const auto& z : found.vectors) {
        double best = 2.0;
        for (std::size_t j = 0; j < model.m; ++j) {
            Vector neg = a_star.column(j);
            for (double& x : neg) x = -x;
            best = std::min({best, distance(z, a_star.column(j)), distance(z, neg)});
        }
        nearest.push_back(best);
    }
    std::sort(nearest.begin(), nearest.end());
    std::printf("\ninit: %zu of %zu atoms from %zu pair trials\n", found.size(), model.m, icfg.max_pair_trials);
    if (!nearest.empty())
        std::printf("  distance to nearest true atom: median %.3f, worst %.3f\n", nearest[nearest.size() / 2],
                    nearest.back());
    return 0;
}
