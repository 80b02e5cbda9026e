#pragma once

#include <random>
#include <vector>

#include "incdl.hpp"
#include "oracles/oracles.hpp"

namespace testutil {

inline oracle::Dense to_dense(const incdl::Matrix& a) {
    oracle::Dense d = oracle::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) d[i][j] = a(i, j);
    return d;
}

inline incdl::Matrix from_dense(const oracle::Dense& d) {
    incdl::Matrix a(d.size(), d.empty() ? 0 : d[0].size());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) = d[i][j];
    return a;
}

inline std::vector<std::vector<double>> columns(const incdl::Matrix& a) {
    std::vector<std::vector<double>> out;
    for (std::size_t j = 0; j < a.cols(); ++j) out.push_back(a.column(j));
    return out;
}

inline incdl::Matrix random_matrix(std::size_t r, std::size_t c, incdl::Rng& rng) {
    incdl::Matrix a(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) a(i, j) = rng.normal();
    return a;
}

inline incdl::Matrix random_orthogonal(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    return from_dense(oracle::random_orthogonal(n, gen));
}

/// Labeled partial samples drawn through the library's code generator but
/// from an arbitrary dictionary (e.g. an orthonormal one).
inline std::vector<incdl::LabeledSample> batch_for(const incdl::ModelConfig& cfg, const incdl::Matrix& a_star,
                                                   std::size_t p, incdl::Rng& rng) {
    return incdl::generate_batch(cfg, a_star, p, rng);
}

}  // namespace testutil
