#pragma once

// Descent-style dictionary refinement from partial samples: a scaled-adjoint
// thresholding encoder followed by a sign-based approximate gradient step,
//
//   x_i   = threshold((1/rho) A^T y_i)
//   g     = (1/p) sum_i (P_Gamma_i(A x_i) - y_i) sgn(x_i)^T
//   A    <- A - eta g

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "incdl/error.hpp"
#include "incdl/evaluation.hpp"
#include "incdl/genmodel.hpp"
#include "incdl/numerics/matrix.hpp"
#include "incdl/numerics/singular.hpp"
#include "incdl/rng.hpp"

namespace incdl {

enum class EncoderMode {
    magnitude_half_c,  ///< zero entries with |z_i| < C/2
    top_k,             ///< keep the k largest |z_i|
};

enum class ResampleMode {
    fresh,       ///< new samples from the generator at every step
    fixed_pool,  ///< draw with replacement from one fixed pool
};

inline std::string_view to_string(EncoderMode e) {
    return e == EncoderMode::top_k ? "topk" : "threshold";
}
inline std::string_view to_string(ResampleMode r) {
    return r == ResampleMode::fresh ? "fresh" : "fixed_pool";
}
inline EncoderMode parse_encoder(std::string_view s) {
    if (s == "topk" || s == "top_k") return EncoderMode::top_k;
    if (s == "threshold" || s == "magnitude_C_half") return EncoderMode::magnitude_half_c;
    throw ConfigError("unknown encoder '" + std::string(s) + "' (expected threshold|topk)");
}
inline ResampleMode parse_resample(std::string_view s) {
    if (s == "fresh") return ResampleMode::fresh;
    if (s == "fixed_pool") return ResampleMode::fixed_pool;
    throw ConfigError("unknown resample mode '" + std::string(s) + "' (expected fresh|fixed_pool)");
}

/// Multiplier c in eta = c * m / (rho k). Picked by the step-size sweep in
/// tools/calibrate.cpp (docs/calibration.md).
inline constexpr double kDefaultEtaScale = 0.125;

/// eta = scale * m / (rho k)
inline double default_eta(std::size_t n, std::size_t m, std::size_t k, double rho,
                          double scale = kDefaultEtaScale) {
    detail::require(n >= 1 && m >= 1 && k >= 1 && k <= m, "default_eta: invalid model sizes");
    detail::require(rho > 0.0 && rho <= 1.0, "default_eta: rho must lie in (0, 1]");
    return scale * static_cast<double>(m) / (rho * static_cast<double>(k));
}

struct DescentConfig {
    double eta = 1.0;
    std::size_t steps = 50;
    EncoderMode encoder = EncoderMode::top_k;
    std::size_t samples_per_step = 1000;
    ResampleMode resample = ResampleMode::fixed_pool;
    bool renormalize = false;  ///< rescale columns to unit norm after each step

    void validate() const {
        if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("descent: eta must be finite and >= 0");
        if (samples_per_step < 1) throw ConfigError("descent: samples_per_step must be >= 1");
    }
};

/// Model constants the learner is allowed to know.
struct EncoderParams {
    double rho = 1.0;
    std::size_t k = 1;
    double C = 1.0;
};

/// Scaled-adjoint encoder z = (1/rho) a^T y, then thresholding. Returns the
/// dense length-m code estimate.
inline Vector encode(const Matrix& a, const PartialSample& y, double rho, EncoderMode mode,
                     std::size_t k, double C) {
    detail::require(y.values.size() == a.rows(), "encode: sample length != a.rows");
    detail::require(rho > 0.0 && rho <= 1.0, "encode: rho must lie in (0, 1]");
    const std::size_t m = a.cols();
    Vector z(m, 0.0);
    for (std::size_t i : y.observed) {
        const double yi = y.values[i];
        if (yi == 0.0) continue;
        const auto r = a.row(i);
        for (std::size_t j = 0; j < m; ++j) z[j] += r[j] * yi;
    }
    const double inv_rho = 1.0 / rho;
    for (double& zj : z) zj *= inv_rho;

    if (mode == EncoderMode::magnitude_half_c) {
        const double cut = 0.5 * C;
        for (double& zj : z)
            if (std::abs(zj) < cut) zj = 0.0;
        return z;
    }

    const std::size_t keep = std::min(k, m);
    if (keep == m) return z;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // larger magnitude first, lower index on ties
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                     [&](std::size_t a_idx, std::size_t b_idx) {
                         const double fa = std::abs(z[a_idx]), fb = std::abs(z[b_idx]);
                         return fa != fb ? fa > fb : a_idx < b_idx;
                     });
    for (auto it = order.begin() + static_cast<std::ptrdiff_t>(keep); it != order.end(); ++it) z[*it] = 0.0;
    return z;
}

inline Vector encode(const Matrix& a, const PartialSample& y, EncoderMode mode, const EncoderParams& p) {
    return encode(a, y, p.rho, mode, p.k, p.C);
}

namespace detail {

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// g += (P_Gamma(a x) - y) sgn(x)^T   (unscaled)
inline void accumulate_gradient(const Matrix& a, const PartialSample& y, std::span<const double> x,
                                Matrix& g, std::vector<std::size_t>& nz, Vector& residual) {
    nz.clear();
    for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j] != 0.0) nz.push_back(j);
    if (nz.empty()) return;
    residual.resize(y.observed.size());
    for (std::size_t t = 0; t < y.observed.size(); ++t) {
        const std::size_t i = y.observed[t];
        const auto r = a.row(i);
        double s = 0.0;
        for (std::size_t j : nz) s += r[j] * x[j];
        residual[t] = s - y.values[i];
    }
    for (std::size_t t = 0; t < y.observed.size(); ++t) {
        const std::size_t i = y.observed[t];
        auto grow = g.row(i);
        for (std::size_t j : nz) grow[j] += residual[t] * sgn(x[j]);
    }
}

}  // namespace detail

/// (1/p) sum_i (P_Gamma_i(a x_i) - y_i) sgn(x_i)^T over an aligned batch.
inline Matrix approx_gradient(const Matrix& a, std::span<const PartialSample> batch,
                              std::span<const Vector> codes) {
    detail::require(!batch.empty(), "approx_gradient: empty batch");
    detail::require(batch.size() == codes.size(), "approx_gradient: batch and codes differ in length");
    Matrix g(a.rows(), a.cols());
    std::vector<std::size_t> nz;
    Vector residual;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        detail::require(batch[s].values.size() == a.rows() && codes[s].size() == a.cols(),
                        "approx_gradient: dimension mismatch");
        detail::accumulate_gradient(a, batch[s], codes[s], g, nz, residual);
    }
    g *= 1.0 / static_cast<double>(batch.size());
    return g;
}

/// Where a descent run gets its samples.
struct SampleSupply {
    /// Fixed pool (fixed_pool mode). Codes, when attached, are only read for tracing.
    std::span<const LabeledSample> pool;
    /// Fresh generator (fresh mode): returns `count` new samples.
    std::function<std::vector<LabeledSample>(std::size_t count, Rng&)> fresh;

    std::vector<LabeledSample> draw(ResampleMode mode, std::size_t count, Rng& rng) const {
        if (mode == ResampleMode::fresh) {
            if (!fresh) throw ConfigError("descent: fresh resampling needs a sample generator");
            return fresh(count, rng);
        }
        if (pool.empty()) throw ConfigError("descent: fixed_pool resampling needs a non-empty pool");
        std::vector<LabeledSample> out;
        out.reserve(count);
        for (std::size_t t = 0; t < count; ++t) out.push_back(pool[rng.index(pool.size())]);
        return out;
    }
};

/// A supply that draws fresh samples from the generative model.
inline SampleSupply fresh_supply(const ModelConfig& cfg, const Matrix& a_star) {
    SampleSupply s;
    s.fresh = [cfg, a_star](std::size_t count, Rng& rng) { return generate_batch(cfg, a_star, count, rng); };
    return s;
}

inline SampleSupply pool_supply(std::span<const LabeledSample> pool) {
    SampleSupply s;
    s.pool = pool;
    return s;
}

/// Encodes every sample of a batch under `a`.
inline std::vector<Vector> encode_batch(const Matrix& a, std::span<const LabeledSample> batch,
                                        EncoderMode mode, const EncoderParams& params) {
    std::vector<Vector> codes;
    codes.reserve(batch.size());
    for (const auto& s : batch) codes.push_back(encode(a, s.sample, mode, params));
    return codes;
}

/// Fraction of samples whose encoded sign pattern equals sgn(x*). NaN when
/// the batch carries no ground truth.
inline double support_consistency(std::span<const LabeledSample> batch, std::span<const Vector> codes) {
    std::size_t hits = 0, labeled = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        if (!batch[s].code) continue;
        ++labeled;
        const Vector& truth = batch[s].code->reveal().values;
        bool same = true;
        for (std::size_t j = 0; j < truth.size() && same; ++j)
            same = detail::sgn(truth[j]) == detail::sgn(codes[s][j]);
        hits += same ? 1 : 0;
    }
    return labeled == 0 ? std::numeric_limits<double>::quiet_NaN()
                        : static_cast<double>(hits) / static_cast<double>(labeled);
}

namespace detail {

inline Matrix apply_step(const Matrix& a, std::span<const LabeledSample> batch,
                         std::span<const Vector> codes, double eta, bool renormalize) {
    std::vector<PartialSample> samples;
    samples.reserve(batch.size());
    for (const auto& s : batch) samples.push_back(s.sample);
    Matrix next = a;
    next.add_scaled(approx_gradient(a, samples, codes), -eta);
    if (renormalize) normalize_columns(next);
    return next;
}

}  // namespace detail

/// One encode-all + gradient + update.
inline Matrix descent_step(const Matrix& a, const DescentConfig& cfg, const SampleSupply& supply,
                           const EncoderParams& params, Rng& rng) {
    cfg.validate();
    const auto batch = supply.draw(cfg.resample, cfg.samples_per_step, rng);
    const auto codes = encode_batch(a, batch, cfg.encoder, params);
    return detail::apply_step(a, batch, codes, cfg.eta, cfg.renormalize);
}

struct TraceRow {
    std::size_t step = 0;
    double max_col_err = std::numeric_limits<double>::quiet_NaN();
    double frob_err = std::numeric_limits<double>::quiet_NaN();
    double spec_norm = std::numeric_limits<double>::quiet_NaN();
    double support_consistency_rate = std::numeric_limits<double>::quiet_NaN();
};

/// One row per iterate A^0 .. A^T.
struct DescentTrace {
    std::vector<TraceRow> rows;
};

struct DescentResult {
    Matrix a;
    DescentTrace trace;
};

struct TraceOptions {
    double spectral_tol = 1e-6;
};

namespace detail {

inline TraceRow trace_row(std::size_t step, const Matrix& a, const Matrix* a_star, const TraceOptions& opt) {
    TraceRow row;
    row.step = step;
    if (a.cols() > 0 && max_abs(a) > 0.0) row.spec_norm = spectral_norm(a, opt.spectral_tol);
    if (a_star != nullptr) {
        const MatchResult match = hungarian_match(a, *a_star);
        row.max_col_err = match.max_err;
        row.frob_err = match.frob_err;
    }
    return row;
}

}  // namespace detail

/// Runs cfg.steps descent steps from a0. The support-consistency rate of row s
/// is measured on the batch encoded at A^s; the final row re-encodes the last
/// batch under A^T. With a_star given, rows also carry Hungarian-aligned errors.
inline DescentResult run_descent(const Matrix& a0, const DescentConfig& cfg, const SampleSupply& supply,
                                 const EncoderParams& params, Rng& rng,
                                 const Matrix* a_star = nullptr, const TraceOptions& opt = {}) {
    cfg.validate();
    if (cfg.resample == ResampleMode::fresh && !supply.fresh)
        throw ConfigError("descent: fresh resampling needs a sample generator");
    if (cfg.resample == ResampleMode::fixed_pool && supply.pool.empty() && cfg.steps > 0)
        throw ConfigError("descent: fixed_pool resampling needs a non-empty pool");
    if (a_star != nullptr && (a_star->rows() != a0.rows() || a_star->cols() != a0.cols()))
        throw ArgumentError("run_descent: a_star shape differs from a0");

    DescentResult out;
    out.a = a0;
    out.trace.rows.push_back(detail::trace_row(0, out.a, a_star, opt));
    std::vector<LabeledSample> batch;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        batch = supply.draw(cfg.resample, cfg.samples_per_step, rng);
        const auto codes = encode_batch(out.a, batch, cfg.encoder, params);
        out.trace.rows.back().support_consistency_rate = support_consistency(batch, codes);
        out.a = detail::apply_step(out.a, batch, codes, cfg.eta, cfg.renormalize);
        if (!out.a.all_finite()) throw std::runtime_error("run_descent: iterate diverged (non-finite entries)");
        out.trace.rows.push_back(detail::trace_row(s + 1, out.a, a_star, opt));
    }
    if (!batch.empty()) {
        const auto codes = encode_batch(out.a, batch, cfg.encoder, params);
        out.trace.rows.back().support_consistency_rate = support_consistency(batch, codes);
    }
    return out;
}

/// CSV: step,max_col_err,frob_err,spec_norm,support_consistency_rate
inline void write_trace_csv(std::ostream& os, const DescentTrace& trace) {
    const auto old_precision = os.precision(12);
    os << "step,max_col_err,frob_err,spec_norm,support_consistency_rate\n";
    for (const auto& r : trace.rows)
        os << r.step << ',' << r.max_col_err << ',' << r.frob_err << ',' << r.spec_norm << ','
           << r.support_consistency_rate << '\n';
    os.precision(old_precision);
}

}  // namespace incdl
