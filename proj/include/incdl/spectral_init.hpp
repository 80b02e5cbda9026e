#pragma once

// Pairwise spectral initialization. For hold-out pairs (u, v) of fully
// observed samples, the reweighted second moment of the partial samples
//
//   M_uv = 1/(p2 rho^4) sum_i <y_i,u><y_i,v> y_i y_i^T
//
// is close to rank one when u and v share exactly one atom. Its top singular
// vector is kept when the singular gap test passes and it is not a duplicate
// (up to sign) of a vector already collected.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "incdl/error.hpp"
#include "incdl/genmodel.hpp"
#include "incdl/numerics/matrix.hpp"
#include "incdl/numerics/singular.hpp"
#include "incdl/rng.hpp"

namespace incdl {

/// delta1_min = c1 k / m, delta2_max = c2 k / (m ln n). Values from the
/// labeled-pair sweep in tools/calibrate.cpp.
inline constexpr double kGapC1 = 2.0;
inline constexpr double kGapC2 = 4.0;

/// Fallback projection radius without ground truth: kRadiusConstant * 2 sqrt(m/n).
/// A Gaussian dictionary with unit columns has norm close to 1 + sqrt(m/n).
inline constexpr double kRadiusConstant = 2.0;

struct InitConfig {
    std::size_t p1 = 1200;               ///< hold-out full samples (used by callers that generate data)
    std::size_t max_pair_trials = 3000;  ///< pair budget
    double delta1_min = 0.1;
    double delta2_max = 0.05;
    double dedup_dist = 0.25;
    double svd_tol = 1e-6;
    std::size_t svd_max_iters = 2000;
    std::optional<double> radius;  ///< projection radius; fallback_radius(n, m) when unset

    static InitConfig for_model(std::size_t n, std::size_t m, std::size_t k, double c1 = kGapC1,
                                double c2 = kGapC2) {
        detail::require(n >= 2 && m >= 1 && k >= 1, "InitConfig::for_model: need n >= 2, m >= 1, k >= 1");
        InitConfig cfg;
        const double log_n = std::log(static_cast<double>(n));
        cfg.delta1_min = c1 * static_cast<double>(k) / static_cast<double>(m);
        cfg.delta2_max = c2 * static_cast<double>(k) / (static_cast<double>(m) * log_n);
        cfg.dedup_dist = std::min(1.0 / log_n, 1.999);
        return cfg;
    }

    void validate() const {
        if (p1 < 2) throw ConfigError("init: p1 must be >= 2");
        if (!(delta2_max > 0.0 && delta1_min > delta2_max))
            throw ConfigError("init: need delta1_min > delta2_max > 0");
        if (!(dedup_dist > 0.0 && dedup_dist < 2.0)) throw ConfigError("init: dedup_dist must lie in (0, 2)");
        if (!(svd_tol > 0.0)) throw ConfigError("init: svd_tol must be positive");
        if (radius && !(*radius > 0.0)) throw ConfigError("init: radius must be positive");
    }
};

inline double fallback_radius(std::size_t n, std::size_t m) {
    return kRadiusConstant * 2.0 * std::sqrt(static_cast<double>(m) / static_cast<double>(n));
}

struct Provenance {
    std::size_t trial = 0;
    std::size_t u_idx = 0;
    std::size_t v_idx = 0;
    double delta1 = 0.0;
    double delta2 = 0.0;
};

/// Collected unit vectors, pairwise at least dedup_dist apart up to sign.
struct CandidateList {
    std::vector<Vector> vectors;
    std::vector<Provenance> provenance;

    std::size_t size() const noexcept { return vectors.size(); }
};

/// Inserts z unless some stored z_j has min(||z - z_j||, ||z + z_j||) < dist.
inline bool dedup_insert(CandidateList& list, const Vector& z, double dist, const Provenance& prov = {}) {
    for (const auto& q : list.vectors) {
        detail::require(q.size() == z.size(), "dedup_insert: length mismatch");
        double minus = 0.0, plus = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            minus += (z[i] - q[i]) * (z[i] - q[i]);
            plus += (z[i] + q[i]) * (z[i] + q[i]);
        }
        if (std::sqrt(std::min(minus, plus)) < dist) return false;
    }
    list.vectors.push_back(z);
    list.provenance.push_back(prov);
    return true;
}

/// Dense copy of a partial-sample pool, one length-n row per sample, zeros
/// off the observed set. Built once and reused for every pair.
class SamplePool {
public:
    SamplePool(std::span<const PartialSample> samples, std::size_t n) : n_(n), count_(samples.size()) {
        data_.assign(count_ * n_, 0.0);
        for (std::size_t s = 0; s < count_; ++s) {
            detail::require(samples[s].values.size() == n_, "SamplePool: sample length mismatch");
            for (std::size_t i : samples[s].observed) data_[s * n_ + i] = samples[s].values[i];
        }
    }

    std::size_t dim() const noexcept { return n_; }
    std::size_t count() const noexcept { return count_; }
    std::span<const double> sample(std::size_t s) const { return {data_.data() + s * n_, n_}; }

private:
    std::size_t n_;
    std::size_t count_;
    std::vector<double> data_;
};

namespace detail {

/// upper triangle of out += sum_t w[t] y_t y_t^T over four samples
inline void rank4_update(Matrix& out, const double* y0, const double* y1, const double* y2,
                         const double* y3, const double w[4]) {
    const std::size_t n = out.rows();
    for (std::size_t r = 0; r < n; ++r) {
        const double a0 = w[0] * y0[r], a1 = w[1] * y1[r], a2 = w[2] * y2[r], a3 = w[3] * y3[r];
        if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
        double* row = out.data() + r * n;
        for (std::size_t c = r; c < n; ++c) row[c] += a0 * y0[c] + a1 * y1[c] + a2 * y2[c] + a3 * y3[c];
    }
}

}  // namespace detail

/// M_uv over a prebuilt pool. The scale 1/(p2 rho^4) is applied after the
/// sum; the result is symmetric entry for entry.
inline Matrix weighted_covariance(std::span<const double> u, std::span<const double> v,
                                  const SamplePool& pool, double rho) {
    const std::size_t n = pool.dim();
    detail::require(u.size() == n && v.size() == n, "weighted_covariance: u, v must have length n");
    detail::require(pool.count() > 0, "weighted_covariance: empty sample pool");
    detail::require(rho > 0.0 && rho <= 1.0, "weighted_covariance: rho must lie in (0, 1]");

    Matrix out(n, n);
    Vector zero_row(n, 0.0);
    double w[4];
    const double* ys[4];
    std::size_t filled = 0;
    auto flush = [&] {
        for (std::size_t t = filled; t < 4; ++t) {
            w[t] = 0.0;
            ys[t] = zero_row.data();
        }
        detail::rank4_update(out, ys[0], ys[1], ys[2], ys[3], w);
        filled = 0;
    };
    for (std::size_t s = 0; s < pool.count(); ++s) {
        const auto y = pool.sample(s);
        double yu = 0.0, yv = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            yu += y[i] * u[i];
            yv += y[i] * v[i];
        }
        const double weight = yu * yv;
        if (weight == 0.0) continue;
        w[filled] = weight;
        ys[filled] = y.data();
        if (++filled == 4) flush();
    }
    if (filled > 0) flush();

    const double rho2 = rho * rho;
    const double scale = 1.0 / (static_cast<double>(pool.count()) * rho2 * rho2);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r; c < n; ++c) {
            out(r, c) *= scale;
            out(c, r) = out(r, c);
        }
    return out;
}

inline Matrix weighted_covariance(std::span<const double> u, std::span<const double> v,
                                  std::span<const PartialSample> partials, double rho) {
    detail::require(!partials.empty(), "weighted_covariance: empty partial sample list");
    return weighted_covariance(u, v, SamplePool(partials, u.size()), rho);
}

/// beta = (1/rho) (A*_Gamma)^T u, with rows outside gamma zeroed. Test-side
/// quantity: it needs the true dictionary.
inline Vector beta_estimate(std::span<const double> u, const Matrix& a_star, const IndexList& gamma,
                            double rho) {
    detail::require(u.size() == a_star.rows(), "beta_estimate: u length != a_star.rows");
    detail::require(rho > 0.0 && rho <= 1.0, "beta_estimate: rho must lie in (0, 1]");
    Vector beta(a_star.cols(), 0.0);
    for (std::size_t i : gamma) {
        detail::require(i < a_star.rows(), "beta_estimate: index out of range");
        const auto r = a_star.row(i);
        for (std::size_t j = 0; j < beta.size(); ++j) beta[j] += r[j] * u[i];
    }
    for (double& b : beta) b /= rho;
    return beta;
}

/// Accepts iff delta1 >= delta1_min and delta2 < delta2_max.
inline bool gap_test(double delta1, double delta2, const InitConfig& cfg) {
    return delta1 >= cfg.delta1_min && delta2 < cfg.delta2_max;
}

inline bool gap_test(std::span<const SingularPair> pairs, const InitConfig& cfg) {
    detail::require(pairs.size() >= 2, "gap_test: need at least two singular pairs");
    return gap_test(pairs[0].value, pairs[1].value, cfg);
}

/// a unchanged when ||a|| <= radius, otherwise a * radius / ||a||.
inline Matrix project_to_ball(const Matrix& a, double radius, double tol = kDefaultSvdTol) {
    detail::require(radius > 0.0, "project_to_ball: radius must be positive");
    if (a.cols() == 0 || max_abs(a) == 0.0) return a;
    const double nrm = spectral_norm(a, tol);
    if (nrm <= radius) return a;
    Matrix out = a;
    out *= radius / nrm;
    return out;
}

struct InitReportRow {
    std::size_t trial = 0;
    std::size_t u_idx = 0;
    std::size_t v_idx = 0;
    double delta1 = std::numeric_limits<double>::quiet_NaN();
    double delta2 = std::numeric_limits<double>::quiet_NaN();  ///< NaN when not computed
    bool accepted = false;
    std::size_t list_size = 0;
};

struct InitReport {
    std::vector<InitReportRow> rows;
};

/// CSV: trial,u_idx,v_idx,delta1,delta2,accepted,list_size
inline void write_init_report_csv(std::ostream& os, const InitReport& report) {
    const auto old_precision = os.precision(12);
    os << "trial,u_idx,v_idx,delta1,delta2,accepted,list_size\n";
    for (const auto& r : report.rows)
        os << r.trial << ',' << r.u_idx << ',' << r.v_idx << ',' << r.delta1 << ',' << r.delta2 << ','
           << (r.accepted ? 1 : 0) << ',' << r.list_size << '\n';
    os.precision(old_precision);
}

/// Thrown when the pair budget runs out before m vectors were collected.
class InitIncomplete : public std::runtime_error {
public:
    InitIncomplete(const std::string& what, CandidateList list, InitReport report)
        : std::runtime_error(what), list_(std::move(list)), report_(std::move(report)) {}

    const CandidateList& candidates() const noexcept { return list_; }
    const InitReport& report() const noexcept { return report_; }

private:
    CandidateList list_;
    InitReport report_;
};

struct InitResult {
    Matrix a0;  ///< n x m, columns in insertion order, projected to the ball
    CandidateList candidates;
    InitReport report;
};

/// Draws pairs of distinct hold-out samples until m vectors are collected or
/// the budget is spent. A pair whose top value is already below delta1_min is
/// rejected without computing the second pair; a power-iteration failure
/// counts as a rejection.
inline InitResult run_init(std::span<const Vector> fulls, std::span<const PartialSample> partials,
                           double rho, const InitConfig& cfg, Rng& rng, std::size_t m) {
    cfg.validate();
    InitResult res;
    const std::size_t n = fulls.empty() ? (partials.empty() ? 0 : partials.front().values.size())
                                        : fulls.front().size();
    if (m == 0) {
        res.a0 = Matrix(n, 0);
        return res;
    }
    if (fulls.size() < 2) throw ArgumentError("run_init: need at least two hold-out samples");
    if (partials.empty()) throw ArgumentError("run_init: empty partial sample pool");
    for (const auto& f : fulls) detail::require(f.size() == n, "run_init: hold-out length mismatch");

    const SamplePool pool(partials, n);
    for (std::size_t t = 0; t < cfg.max_pair_trials && res.candidates.size() < m; ++t) {
        InitReportRow row;
        row.trial = t;
        row.u_idx = rng.index(fulls.size());
        row.v_idx = rng.index(fulls.size() - 1);
        if (row.v_idx >= row.u_idx) ++row.v_idx;

        const Matrix cov = weighted_covariance(fulls[row.u_idx], fulls[row.v_idx], pool, rho);
        std::optional<SingularPair> top;
        if (max_abs(cov) > 0.0) {
            try {
                auto first = top_singular_pairs(cov, 1, cfg.svd_tol, cfg.svd_max_iters);
                row.delta1 = first[0].value;
                if (row.delta1 >= cfg.delta1_min) {
                    auto both = top_singular_pairs(cov, 2, cfg.svd_tol, cfg.svd_max_iters);
                    row.delta1 = both[0].value;
                    row.delta2 = both[1].value;
                    if (gap_test(both, cfg)) top = std::move(both[0]);
                }
            } catch (const ConvergenceError&) {
                top.reset();
            }
        } else {
            row.delta1 = 0.0;
        }
        if (top) {
            row.accepted = true;
            dedup_insert(res.candidates, top->vector, cfg.dedup_dist,
                         {t, row.u_idx, row.v_idx, row.delta1, row.delta2});
        }
        row.list_size = res.candidates.size();
        res.report.rows.push_back(row);
    }

    if (res.candidates.size() < m) {
        // message first: argument evaluation order would let the move run before size()
        const std::string msg = "run_init: collected " + std::to_string(res.candidates.size()) + " of " +
                                std::to_string(m) + " atoms in " + std::to_string(cfg.max_pair_trials) +
                                " pair trials";
        throw InitIncomplete(msg, std::move(res.candidates), std::move(res.report));
    }

    const Matrix assembled = Matrix::from_columns(n, res.candidates.vectors);
    res.a0 = project_to_ball(assembled, cfg.radius.value_or(fallback_radius(n, m)));
    return res;
}

}  // namespace incdl
