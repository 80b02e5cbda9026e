#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "incdl/error.hpp"
#include "incdl/numerics/matrix.hpp"
#include "incdl/rng.hpp"

namespace incdl {

struct SingularPair {
    double value = 0.0;  ///< singular value, >= 0
    Vector vector;       ///< unit-norm left singular vector (length rows)
};

inline constexpr double kDefaultSvdTol = 1e-8;
inline constexpr std::size_t kDefaultSvdMaxIters = 5000;
inline constexpr std::uint64_t kDefaultStartSeed = 0x5eed5eed5eed5eedULL;

namespace detail {

/// Deterministic, generic (no zero entries, no symmetry) unit start vector.
inline Vector power_start_vector(std::size_t n, std::uint64_t seed) {
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = mix64(seed + 0x9e3779b97f4a7c15ULL * (i + 1));
        x[i] = static_cast<double>(bits >> 11) * 0x1.0p-53 - 0.5;
    }
    normalize(x);
    return x;
}

/// out = m * (m^T * x)
inline void apply_gram(const Matrix& m, std::span<const double> x, Vector& scratch, Vector& out) {
    scratch.assign(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const auto r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) scratch[j] += r[j] * xi;
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += r[j] * scratch[j];
        out[i] = s;
    }
}

inline void orthogonalize(Vector& x, const std::vector<SingularPair>& against) {
    for (const auto& p : against) {
        const double c = dot(x, p.vector);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c * p.vector[i];
    }
}

}  // namespace detail

/// Largest `count` (1 or 2) singular values of `m` with their left singular
/// vectors, by power iteration on the Gram operator m m^T. The second pair
/// comes from the same iteration on the deflated operator
/// m m^T - s1^2 z1 z1^T.
///
/// Convergence: the Rayleigh quotient theta of the Gram operator is accepted
/// once the residual ||G x - theta x|| <= tol * theta, which bounds the
/// relative error of theta (hence of the singular value) by tol. The reported
/// value is ||m^T x||. A second value at or below tol * s1 is returned as soon
/// as it is seen; it is zero to within that tolerance.
inline std::vector<SingularPair> top_singular_pairs(const Matrix& m, std::size_t count,
                                                    double tol = kDefaultSvdTol,
                                                    std::size_t max_iters = kDefaultSvdMaxIters,
                                                    std::uint64_t start_seed = kDefaultStartSeed) {
    detail::require(count == 1 || count == 2, "top_singular_pairs: count must be 1 or 2");
    detail::require(tol > 0.0, "top_singular_pairs: tol must be positive");
    detail::require(m.rows() >= 1 && m.cols() >= 1, "top_singular_pairs: empty matrix");
    detail::require(max_abs(m) > 0.0, "top_singular_pairs: zero matrix");
    detail::require(m.all_finite(), "top_singular_pairs: non-finite entries");

    const std::size_t n = m.rows();
    std::vector<SingularPair> found;
    found.reserve(count);
    Vector scratch;
    Vector w(n);

    for (std::size_t p = 0; p < count; ++p) {
        Vector x = detail::power_start_vector(n, start_seed + p);
        detail::orthogonalize(x, found);
        if (normalize(x) == 0.0) {
            // n == 1 and the only direction is taken
            found.push_back({0.0, x});
            continue;
        }
        const double zero_level = found.empty() ? 0.0 : tol * found.front().value;

        bool converged = false;
        double residual = std::numeric_limits<double>::infinity();
        for (std::size_t it = 0; it < max_iters; ++it) {
            detail::apply_gram(m, x, scratch, w);
            // ||m^T x|| is the singular value estimate; it stays accurate for
            // tiny values where sqrt(theta) would drown in rounding noise.
            const double sigma = norm2(scratch);
            for (const auto& q : found) {
                const double c = (q.value * q.value) * dot(q.vector, x);
                for (std::size_t i = 0; i < n; ++i) w[i] -= c * q.vector[i];
            }
            detail::orthogonalize(w, found);

            if (sigma <= zero_level) {
                found.push_back({sigma, x});
                converged = true;
                break;
            }
            const double theta = dot(x, w);
            double r2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) r2 += (w[i] - theta * x[i]) * (w[i] - theta * x[i]);
            residual = std::sqrt(r2);
            if (theta > 0.0 && residual <= tol * theta) {
                found.push_back({sigma, x});
                converged = true;
                break;
            }
            if (normalize(w) == 0.0) {
                found.push_back({sigma, x});
                converged = true;
                break;
            }
            x.swap(w);
        }
        if (!converged)
            throw ConvergenceError("top_singular_pairs: no convergence for pair " +
                                       std::to_string(p + 1) + " within " +
                                       std::to_string(max_iters) + " iterations",
                                   x, residual, max_iters);
    }
    return found;
}

/// Largest singular value.
inline double spectral_norm(const Matrix& m, double tol = kDefaultSvdTol,
                            std::size_t max_iters = kDefaultSvdMaxIters) {
    // The Gram operator on the smaller side converges at the same rate for less work.
    if (m.cols() < m.rows()) return top_singular_pairs(transpose(m), 1, tol, max_iters).front().value;
    return top_singular_pairs(m, 1, tol, max_iters).front().value;
}

}  // namespace incdl
