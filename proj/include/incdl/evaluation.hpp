#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "incdl/error.hpp"
#include "incdl/numerics/matrix.hpp"
#include "incdl/numerics/singular.hpp"
#include "incdl/rng.hpp"

namespace incdl {

/// Column/sign alignment of an estimate against the ground truth.
/// Truth column i is matched to estimate column permutation[i] with sign signs[i].
struct MatchResult {
    std::vector<std::size_t> permutation;
    std::vector<int> signs;
    Vector per_column_err;  ///< ||signs[i] * a_hat[:, permutation[i]] - a_star[:, i]||
    double total_cost = 0.0;  ///< sum of squared per-column errors
    double frob_err = 0.0;
    double max_err = 0.0;
};

namespace detail {

/// Minimum-cost perfect assignment for a square cost matrix (row -> column).
/// O(m^3) shortest augmenting path with potentials. Rows are inserted in index
/// order and the first minimal column wins, so ties resolve toward low indices.
inline std::vector<std::size_t> solve_assignment(const Matrix& cost) {
    const std::size_t m = cost.rows();
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based internals; column 0 is the virtual source.
    std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
    std::vector<std::size_t> match_col(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);
    for (std::size_t i = 1; i <= m; ++i) {
        match_col[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match_col[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match_col[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(m);
    for (std::size_t j = 1; j <= m; ++j) row_to_col[match_col[j] - 1] = j - 1;
    return row_to_col;
}

/// ||s * a[:, j] - b[:, i]||^2
inline double signed_column_distance2(const Matrix& a, std::size_t j, int s, const Matrix& b,
                                      std::size_t i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double d = s * a(r, j) - b(r, i);
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

/// Optimal column and sign matching of a_hat to a_star. Cost of pairing truth
/// column i with estimate column j is min over s in {+1,-1} of
/// ||s a_hat_j - a*_i||^2, so the Frobenius error of the aligned estimate is
/// the square root of the optimal total cost. Sign ties go to +1.
inline MatchResult hungarian_match(const Matrix& a_hat, const Matrix& a_star) {
    if (a_hat.rows() != a_star.rows() || a_hat.cols() != a_star.cols())
        throw ArgumentError("hungarian_match: shape mismatch");
    const std::size_t m = a_star.cols();
    MatchResult res;
    if (m == 0) return res;

    Matrix cost(m, m);
    Matrix sign(m, m);
    Vector hat_norm2(m), star_norm2(m);
    for (std::size_t j = 0; j < m; ++j) hat_norm2[j] = column_dot(a_hat, j, a_hat, j);
    for (std::size_t i = 0; i < m; ++i) star_norm2[i] = column_dot(a_star, i, a_star, i);
    const Matrix cross = matmul(transpose(a_star), a_hat);  // cross(i, j) = <a*_i, a_hat_j>
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double c = cross(i, j);
            sign(i, j) = c >= 0.0 ? 1.0 : -1.0;
            cost(i, j) = std::max(0.0, hat_norm2[j] + star_norm2[i] - 2.0 * std::abs(c));
        }
    }

    res.permutation = detail::solve_assignment(cost);
    res.signs.resize(m);
    res.per_column_err.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = res.permutation[i];
        res.signs[i] = static_cast<int>(sign(i, j));
        const double d2 = detail::signed_column_distance2(a_hat, j, res.signs[i], a_star, i);
        res.per_column_err[i] = std::sqrt(d2);
        res.total_cost += d2;
        res.max_err = std::max(res.max_err, res.per_column_err[i]);
    }
    res.frob_err = std::sqrt(res.total_cost);
    return res;
}

/// a_hat permuted and sign-flipped into a_star's column order.
inline Matrix align(const Matrix& a_hat, const MatchResult& match) {
    Matrix out(a_hat.rows(), a_hat.cols());
    for (std::size_t i = 0; i < match.permutation.size(); ++i)
        for (std::size_t r = 0; r < a_hat.rows(); ++r)
            out(r, i) = match.signs[i] * a_hat(r, match.permutation[i]);
    return out;
}

/// Strict: frob_err == tau counts as failure.
inline bool recovery_success(const MatchResult& match, double tau) {
    detail::require(tau > 0.0, "recovery_success: tau must be positive");
    return match.frob_err < tau;
}

namespace detail {

inline double incoherence_scaled(const Matrix& a, double sqrt_n) {
    const std::size_t m = a.cols();
    Vector norms(m);
    for (std::size_t j = 0; j < m; ++j) {
        norms[j] = column_norm(a, j);
        if (norms[j] == 0.0) throw ArgumentError("incoherence: zero column " + std::to_string(j));
    }
    const Matrix gram = matmul(transpose(a), a);
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            worst = std::max(worst, std::abs(gram(i, j)) / (norms[i] * norms[j]));
    return sqrt_n * worst;
}

}  // namespace detail

/// mu = sqrt(n) * max_{i != j} |<a_i, a_j>| / (||a_i|| ||a_j||)
inline double incoherence(const Matrix& a) {
    return detail::incoherence_scaled(a, std::sqrt(static_cast<double>(a.rows())));
}

/// Randomized democracy audit: the worst incoherence over `trials` random row
/// subsets of size gamma_size (rows outside the subset zeroed, sqrt(n) scaling
/// kept). Not a certificate; the definition quantifies over all subsets.
inline double democracy_check(const Matrix& a, std::size_t trials, std::size_t gamma_size, Rng& rng) {
    const std::size_t n = a.rows();
    if (static_cast<double>(gamma_size) < std::sqrt(static_cast<double>(n)) || gamma_size > n)
        throw ArgumentError("democracy_check: gamma_size must lie in [sqrt(n), n]");
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    double worst = 0.0;
    std::vector<std::size_t> gamma;
    for (std::size_t t = 0; t < trials; ++t) {
        gamma.clear();
        std::sample(all.begin(), all.end(), std::back_inserter(gamma), gamma_size, rng);
        Matrix sub(gamma_size, a.cols());
        for (std::size_t r = 0; r < gamma_size; ++r) {
            const auto src = a.row(gamma[r]);
            std::copy(src.begin(), src.end(), sub.row(r).begin());
        }
        worst = std::max(worst, detail::incoherence_scaled(sub, sqrt_n));
    }
    return worst;
}

/// ||A||_max
inline double max_norm(const Matrix& a) { return max_abs(a); }

struct Nearness {
    double delta = 0.0;  ///< max aligned column error
    double kappa = 0.0;  ///< ||aligned - a_star|| / ||a_star||
};

inline Nearness nearness(const Matrix& a, const Matrix& a_star, double tol = kDefaultSvdTol) {
    const MatchResult match = hungarian_match(a, a_star);
    Nearness out;
    out.delta = match.max_err;
    const Matrix diff = align(a, match) - a_star;
    if (max_abs(diff) == 0.0) return out;
    out.kappa = spectral_norm(diff, tol) / spectral_norm(a_star, tol);
    return out;
}

}  // namespace incdl
