#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "test_util.hpp"

using namespace incdl;

namespace {

ModelConfig model(std::size_t n, std::size_t m, std::size_t k, double rho = 1.0) {
    return {n, m, k, rho, CodeDistribution::rademacher, 1.0};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

TEST(Encode, OrthonormalFullObservationRecoversSupportAndSigns) {
    const Matrix q = testutil::random_orthogonal(12, 3);
    const ModelConfig cfg = model(12, 12, 3);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const SparseCode code = generate_code(cfg, rng);
        const PartialSample y = fully_observed(synthesize_full(q, code));
        for (auto mode : {EncoderMode::top_k, EncoderMode::magnitude_half_c}) {
            const Vector x = encode(q, y, 1.0, mode, cfg.k, 1.0);
            for (std::size_t j = 0; j < cfg.m; ++j) {
                const double expect = code.values[j];
                if (expect == 0.0)
                    EXPECT_EQ(x[j], 0.0);
                else
                    EXPECT_NEAR(x[j], expect, 1e-12);
            }
        }
    }
}

TEST(Encode, ZeroSampleGivesZeroCode) {
    Rng rng(2);
    const Matrix a = generate_dictionary(model(8, 10, 2), rng);
    const PartialSample y = fully_observed(Vector(8, 0.0));
    for (auto mode : {EncoderMode::top_k, EncoderMode::magnitude_half_c})
        EXPECT_EQ(encode(a, y, 0.7, mode, 2, 1.0), Vector(10, 0.0));
}

TEST(Encode, ScalesByInverseRho) {
    const Matrix a = Matrix::identity(3);
    const PartialSample y = restrict_to(Vector{2.0, 0.0, -1.0}, IndexList{0, 2});
    const Vector x = encode(a, y, 0.5, EncoderMode::magnitude_half_c, 3, 1.0);
    EXPECT_EQ(x, (Vector{4.0, 0.0, -2.0}));
}

TEST(Encode, ThresholdIsStrictBelowHalfC) {
    const Matrix a = Matrix::identity(4);
    const PartialSample y = fully_observed(Vector{0.49, 0.5, -0.51, 2.0});
    const Vector x = encode(a, y, 1.0, EncoderMode::magnitude_half_c, 1, 1.0);
    EXPECT_EQ(x, (Vector{0.0, 0.5, -0.51, 2.0}));
}

TEST(Encode, TopKSupportSizeExactAndTiesToLowerIndex) {
    Rng rng(3);
    const Matrix a = generate_dictionary(model(16, 24, 3), rng);
    for (int t = 0; t < 200; ++t) {
        Vector full(16);
        for (double& v : full) v = rng.normal();
        const PartialSample y = subsample(full, 0.6, rng);
        for (std::size_t k : {1u, 3u, 7u, 24u, 30u}) {
            const Vector x = encode(a, y, 0.6, EncoderMode::top_k, k, 1.0);
            const auto nnz = std::count_if(x.begin(), x.end(), [](double v) { return v != 0.0; });
            // zero correlations only occur for an empty observation set
            if (!y.observed.empty()) {
                EXPECT_EQ(static_cast<std::size_t>(nnz), std::min<std::size_t>(k, 24));
            }
            EXPECT_LE(static_cast<std::size_t>(nnz), 24u);
        }
    }
    const Matrix eye = Matrix::identity(4);
    const Vector x = encode(eye, fully_observed(Vector{1.0, -1.0, 1.0, 0.5}), 1.0, EncoderMode::top_k, 2, 1.0);
    EXPECT_EQ(x, (Vector{1.0, -1.0, 0.0, 0.0}));
}

TEST(Encode, DimensionMismatchThrows) {
    EXPECT_THROW(encode(Matrix(4, 3), fully_observed(Vector(5, 1.0)), 1.0, EncoderMode::top_k, 1, 1.0),
                 ArgumentError);
    EXPECT_THROW(encode(Matrix(4, 3), fully_observed(Vector(4, 1.0)), 0.0, EncoderMode::top_k, 1, 1.0),
                 ArgumentError);
}

TEST(ApproxGradient, ZeroCodesGiveZeroGradient) {
    Rng rng(4);
    const ModelConfig cfg = model(6, 8, 2, 0.7);
    const Matrix a = generate_dictionary(cfg, rng);
    const auto batch = unlabeled(generate_batch(cfg, a, 10, rng));
    const std::vector<Vector> codes(10, Vector(8, 0.0));
    EXPECT_EQ(approx_gradient(a, batch, codes), Matrix(6, 8));
}

TEST(ApproxGradient, ExactFitGivesZeroGradient) {
    Rng rng(5);
    const ModelConfig cfg = model(6, 8, 2);
    const Matrix a = generate_dictionary(cfg, rng);
    const auto batch = generate_batch(cfg, a, 1, rng);
    const std::vector<PartialSample> ys{batch[0].sample};
    const std::vector<Vector> codes{batch[0].code->reveal().values};
    EXPECT_LE(max_abs(approx_gradient(a, ys, codes)), 1e-15);
}

TEST(ApproxGradient, EmptyBatchThrows) {
    EXPECT_THROW(approx_gradient(Matrix(3, 3), std::vector<PartialSample>{}, std::vector<Vector>{}), ArgumentError);
}

TEST(ApproxGradient, MatchesDenseFormula) {
    Rng rng(6);
    const ModelConfig cfg = model(7, 9, 3, 0.6);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const Matrix a = perturb_dictionary(a_star, 0.2, rng);
    const auto batch = generate_batch(cfg, a_star, 40, rng);
    const auto ys = unlabeled(batch);
    const auto codes = encode_batch(a, batch, EncoderMode::top_k, {cfg.rho, cfg.k, 1.0});
    Matrix ref(7, 9);
    for (std::size_t s = 0; s < ys.size(); ++s) {
        const Vector ax = multiply(a, codes[s]);
        for (std::size_t i = 0; i < 7; ++i) {
            const bool on = std::binary_search(ys[s].observed.begin(), ys[s].observed.end(), i);
            const double r = on ? ax[i] - ys[s].values[i] : 0.0;
            for (std::size_t j = 0; j < 9; ++j) {
                const double sg = codes[s][j] > 0 ? 1.0 : (codes[s][j] < 0 ? -1.0 : 0.0);
                ref(i, j) += r * sg / 40.0;
            }
        }
    }
    const Matrix got = approx_gradient(a, ys, codes);
    EXPECT_LE(max_abs(got - ref), 1e-13);
}

TEST(ApproxGradient, PermutationEquivariant) {
    Rng rng(7);
    const ModelConfig cfg = model(8, 10, 3, 0.8);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const Matrix a = perturb_dictionary(a_star, 0.1, rng);
    const auto batch = generate_batch(cfg, a_star, 30, rng);
    const auto ys = unlabeled(batch);
    const auto codes = encode_batch(a, batch, EncoderMode::top_k, {cfg.rho, cfg.k, 1.0});

    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix ap(8, 10);
    for (std::size_t j = 0; j < 10; ++j) ap.set_column(j, a.column(perm[j]));
    std::vector<Vector> cp;
    for (const auto& c : codes) {
        Vector v(10);
        for (std::size_t j = 0; j < 10; ++j) v[j] = c[perm[j]];
        cp.push_back(v);
    }
    const Matrix g = approx_gradient(a, ys, codes), gp = approx_gradient(ap, ys, cp);
    // column sums may reorder, so compare to rounding
    for (std::size_t j = 0; j < 10; ++j)
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(gp(i, j), g(i, perm[j]), 1e-14);
}

TEST(ApproxGradient, LinearInTheBatch) {
    Rng rng(8);
    const ModelConfig cfg = model(6, 7, 2, 0.9);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const Matrix a = perturb_dictionary(a_star, 0.1, rng);
    const auto batch = generate_batch(cfg, a_star, 25, rng);
    const auto ys = unlabeled(batch);
    const auto codes = encode_batch(a, batch, EncoderMode::top_k, {cfg.rho, cfg.k, 1.0});
    const std::span<const PartialSample> all(ys);
    const std::span<const Vector> call(codes);
    const Matrix g = approx_gradient(a, all, call);
    const Matrix g1 = approx_gradient(a, all.first(10), call.first(10));
    const Matrix g2 = approx_gradient(a, all.subspan(10), call.subspan(10));
    const Matrix combined = (10.0 / 25.0) * g1 + (15.0 / 25.0) * g2;
    EXPECT_LE(max_abs(g - combined), 1e-14);
}

TEST(DefaultEta, FormulaAndHomogeneity) {
    EXPECT_DOUBLE_EQ(default_eta(256, 256, 6, 1.0, 0.5), 64.0 / 3.0);
    EXPECT_DOUBLE_EQ(default_eta(64, 64, 3, 0.5), 2.0 * default_eta(64, 64, 3, 1.0));
    EXPECT_DOUBLE_EQ(default_eta(64, 64, 3, 0.4) / default_eta(64, 64, 3, 0.8), 2.0);
    EXPECT_DOUBLE_EQ(default_eta(64, 64, 3, 1.0), kDefaultEtaScale * 64.0 / 3.0);
}

TEST(DescentStep, ZeroEtaLeavesIterateUnchanged) {
    Rng rng(9);
    const ModelConfig cfg = model(8, 8, 2, 0.8);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const Matrix a = perturb_dictionary(a_star, 0.2, rng);
    DescentConfig d;
    d.eta = 0.0;
    d.samples_per_step = 50;
    d.resample = ResampleMode::fresh;
    EXPECT_EQ(descent_step(a, d, fresh_supply(cfg, a_star), {cfg.rho, cfg.k, 1.0}, rng), a);
}

TEST(DescentStep, ZeroGradientLeavesIterateUnchanged) {
    // orthonormal truth, full observation, start at the truth: every encode is
    // exact, every residual zero
    const Matrix q = testutil::random_orthogonal(10, 4);
    const ModelConfig cfg = model(10, 10, 2);
    Rng rng(10);
    DescentConfig d;
    d.eta = 3.0;
    d.samples_per_step = 100;
    d.resample = ResampleMode::fresh;
    const Matrix next = descent_step(q, d, fresh_supply(cfg, q), {1.0, 2, 1.0}, rng);
    EXPECT_LE(max_abs(next - q), 1e-14);
}

TEST(DescentStep, FirstStepDecreasesErrorInMostSeeds) {
    // n = m = 64, k = 3, rho = 1, p = 4096, delta0 = 0.1: >= 95% of seeds
    const std::size_t seeds = 20;
    std::size_t decreased = 0;
    const ModelConfig cfg = model(64, 64, 3, 1.0);
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(100 + s);
        const Matrix a_star = generate_dictionary(cfg, rng);
        const Matrix a0 = perturb_dictionary(a_star, 0.1, rng);
        DescentConfig d;
        d.eta = default_eta(64, 64, 3, 1.0);
        d.samples_per_step = 4096;
        d.resample = ResampleMode::fresh;
        const Matrix a1 = descent_step(a0, d, fresh_supply(cfg, a_star), {1.0, 3, 1.0}, rng);
        decreased += hungarian_match(a1, a_star).max_err < hungarian_match(a0, a_star).max_err ? 1 : 0;
    }
    EXPECT_GE(decreased, 19u);
}

TEST(RunDescent, ZeroStepsReturnsStart) {
    Rng rng(11);
    const ModelConfig cfg = model(6, 6, 2);
    const Matrix a = generate_dictionary(cfg, rng);
    DescentConfig d;
    d.steps = 0;
    d.resample = ResampleMode::fresh;
    const auto res = run_descent(a, d, fresh_supply(cfg, a), {1.0, 2, 1.0}, rng, &a);
    EXPECT_EQ(res.a, a);
    ASSERT_EQ(res.trace.rows.size(), 1u);
    EXPECT_EQ(res.trace.rows[0].max_col_err, 0.0);
}

TEST(RunDescent, TraceLengthIsStepsPlusOne) {
    Rng rng(12);
    const ModelConfig cfg = model(8, 8, 2, 0.9);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const auto pool = generate_batch(cfg, a_star, 200, rng);
    DescentConfig d;
    d.steps = 7;
    d.eta = default_eta(8, 8, 2, 0.9);
    d.samples_per_step = 50;
    const auto res = run_descent(perturb_dictionary(a_star, 0.1, rng), d, pool_supply(pool), {0.9, 2, 1.0}, rng,
                                 &a_star);
    ASSERT_EQ(res.trace.rows.size(), 8u);
    for (std::size_t s = 0; s < res.trace.rows.size(); ++s) {
        EXPECT_EQ(res.trace.rows[s].step, s);
        EXPECT_TRUE(std::isfinite(res.trace.rows[s].support_consistency_rate));
        EXPECT_TRUE(std::isfinite(res.trace.rows[s].spec_norm));
    }
}

TEST(RunDescent, NoTruthMeansNanErrors) {
    Rng rng(13);
    const ModelConfig cfg = model(6, 6, 2);
    const Matrix a_star = generate_dictionary(cfg, rng);
    std::vector<LabeledSample> pool;
    for (auto& s : generate_batch(cfg, a_star, 20, rng)) pool.push_back({s.sample, std::nullopt});
    DescentConfig d;
    d.steps = 2;
    d.samples_per_step = 10;
    const auto res = run_descent(a_star, d, pool_supply(pool), {1.0, 2, 1.0}, rng);
    for (const auto& r : res.trace.rows) {
        EXPECT_TRUE(std::isnan(r.max_col_err));
        EXPECT_TRUE(std::isnan(r.support_consistency_rate));
    }
}

TEST(RunDescent, FreshModeWithoutGeneratorIsConfigError) {
    Rng rng(14);
    DescentConfig d;
    d.resample = ResampleMode::fresh;
    EXPECT_THROW(run_descent(Matrix::identity(3), d, SampleSupply{}, {1.0, 1, 1.0}, rng), ConfigError);
    d.resample = ResampleMode::fixed_pool;
    EXPECT_THROW(run_descent(Matrix::identity(3), d, SampleSupply{}, {1.0, 1, 1.0}, rng), ConfigError);
}

TEST(RunDescent, FixedPoolDrawsOnlyFromPool) {
    // A pool of one sample: every batch is that sample repeated, so the
    // gradient equals the single-sample gradient.
    Rng rng(15);
    const ModelConfig cfg = model(6, 6, 2, 0.8);
    const Matrix a_star = generate_dictionary(cfg, rng);
    const Matrix a0 = perturb_dictionary(a_star, 0.2, rng);
    const auto pool = generate_batch(cfg, a_star, 1, rng);
    DescentConfig d;
    d.steps = 1;
    d.eta = 0.5;
    d.samples_per_step = 17;
    const auto res = run_descent(a0, d, pool_supply(pool), {0.8, 2, 1.0}, rng);
    const std::vector<PartialSample> ys{pool[0].sample};
    const std::vector<Vector> codes{encode(a0, pool[0].sample, EncoderMode::top_k, {0.8, 2, 1.0})};
    Matrix expect = a0;
    expect.add_scaled(approx_gradient(a0, ys, codes), -0.5);
    EXPECT_LE(max_abs(res.a - expect), 1e-14);
}

TEST(RunDescent, TruthIsNearlyStationary) {
    Rng rng(16);
    const ModelConfig cfg = model(32, 32, 2, 1.0);
    const Matrix a_star = generate_dictionary(cfg, rng);
    DescentConfig d;
    d.steps = 10;
    d.eta = default_eta(32, 32, 2, 1.0);
    d.samples_per_step = 2000;
    d.resample = ResampleMode::fresh;
    const auto res = run_descent(a_star, d, fresh_supply(cfg, a_star), {1.0, 2, 1.0}, rng, &a_star);
    // the floor is set by the incoherence bias, well below the init distances
    for (const auto& r : res.trace.rows) EXPECT_LE(r.max_col_err, 0.1);
}

TEST(RunDescent, MedianErrorRatioBelowOneUntilFloor) {
    // 20 seeds at n = m = 64, k = 3, rho = 0.8, delta0 = 0.1, fresh p = 4096
    const std::size_t seeds = 20, steps = 25;
    const ModelConfig cfg = model(64, 64, 3, 0.8);
    std::vector<std::vector<double>> ratios(steps), errs(steps + 1);
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(200 + s);
        const Matrix a_star = generate_dictionary(cfg, rng);
        DescentConfig d;
        d.steps = steps;
        d.eta = default_eta(64, 64, 3, 0.8);
        d.samples_per_step = 4096;
        d.resample = ResampleMode::fresh;
        const auto res = run_descent(perturb_dictionary(a_star, 0.1, rng), d, fresh_supply(cfg, a_star),
                                     {0.8, 3, 1.0}, rng, &a_star);
        for (std::size_t t = 0; t <= steps; ++t) errs[t].push_back(res.trace.rows[t].max_col_err);
        for (std::size_t t = 0; t < steps; ++t)
            ratios[t].push_back(res.trace.rows[t + 1].max_col_err / res.trace.rows[t].max_col_err);
    }
    const double floor = median(errs[steps]);
    EXPECT_LT(floor, 0.1);
    std::size_t above = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        if (median(errs[t]) > 1.2 * floor) {
            ++above;
            EXPECT_LT(median(ratios[t]), 1.0) << "step " << t;
        }
        // at the floor the ratio hovers around one without drifting upward
        EXPECT_LT(median(ratios[t]), 1.1) << "step " << t;
    }
    EXPECT_GE(above, 1u);
}

TEST(RunDescent, NearnessMaintainedAtEveryStep) {
    const ModelConfig cfg = model(64, 64, 3, 0.8);
    for (std::size_t s = 0; s < 5; ++s) {
        Rng rng(300 + s);
        const Matrix a_star = generate_dictionary(cfg, rng);
        const double bound = 2.0 * spectral_norm(a_star);
        DescentConfig d;
        d.eta = default_eta(64, 64, 3, 0.8);
        d.samples_per_step = 4096;
        d.resample = ResampleMode::fresh;
        Matrix a = perturb_dictionary(a_star, 0.1, rng);
        for (std::size_t t = 0; t < 25; ++t) {
            a = descent_step(a, d, fresh_supply(cfg, a_star), {0.8, 3, 1.0}, rng);
            const Matrix diff = align(a, hungarian_match(a, a_star)) - a_star;
            EXPECT_LE(spectral_norm(diff, 1e-6), bound) << "seed " << s << " step " << t;
        }
    }
}

TEST(TraceCsv, HeaderAndRows) {
    DescentTrace tr;
    tr.rows.push_back({0, 0.5, 1.0, 2.0, 0.25});
    std::ostringstream os;
    write_trace_csv(os, tr);
    EXPECT_EQ(os.str(), "step,max_col_err,frob_err,spec_norm,support_consistency_rate\n0,0.5,1,2,0.25\n");
}

TEST(DescentConfig, Validation) {
    DescentConfig d;
    d.eta = -1.0;
    EXPECT_THROW(d.validate(), ConfigError);
    d.eta = 1.0;
    d.samples_per_step = 0;
    EXPECT_THROW(d.validate(), ConfigError);
    EXPECT_THROW(parse_encoder("soft"), ConfigError);
    EXPECT_EQ(parse_encoder("topk"), EncoderMode::top_k);
    EXPECT_EQ(parse_resample("fresh"), ResampleMode::fresh);
}
