#pragma once

// Synthetic generative model: Gaussian dictionaries with unit columns,
// k-sparse codes with uniform support, and Bernoulli(rho) row masks,
// y = P_Gamma(A* x*).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "incdl/error.hpp"
#include "incdl/numerics/matrix.hpp"
#include "incdl/rng.hpp"

namespace incdl {

using IndexList = std::vector<std::size_t>;

enum class CodeDistribution { rademacher, uniform_gap };

/// E[x_i^2 | i in S] for uniform_gap codes, |x_i| ~ U[C, 2C]: (1/C) int_C^2C t^2 dt = 7C^2/3.
inline constexpr double kUniformGapSecondMoment = 7.0 / 3.0;

inline std::string_view to_string(CodeDistribution d) {
    return d == CodeDistribution::rademacher ? "rademacher" : "uniform_gap";
}

inline CodeDistribution parse_code_distribution(std::string_view s) {
    if (s == "rademacher") return CodeDistribution::rademacher;
    if (s == "uniform_gap") return CodeDistribution::uniform_gap;
    throw ConfigError("unknown code distribution '" + std::string(s) + "'");
}

struct ModelConfig {
    std::size_t n = 256;  ///< ambient dimension
    std::size_t m = 256;  ///< number of atoms
    std::size_t k = 6;    ///< sparsity
    double rho = 1.0;     ///< per-entry observation probability
    CodeDistribution code_dist = CodeDistribution::rademacher;
    double C = 1.0;  ///< lower bound on nonzero code magnitude

    void validate() const {
        if (n < 1 || m < 1) throw ConfigError("model: n and m must be >= 1");
        if (k < 1 || k > m) throw ConfigError("model: need 1 <= k <= m");
        if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("model: rho must lie in (0, 1]");
        if (!(C > 0.0)) throw ConfigError("model: C must be positive");
        if (code_dist == CodeDistribution::rademacher && C != 1.0)
            throw ConfigError("model: rademacher codes have C = 1");
    }
};

/// k-sparse code. `values` is dense (length m) and vanishes off `support`.
struct SparseCode {
    IndexList support;  ///< sorted
    Vector values;
};

/// Observed sample y = P_Gamma(full). `values` is dense (length n) and
/// vanishes off `observed`.
struct PartialSample {
    IndexList observed;  ///< sorted
    Vector values;
};

/// Ground-truth quantity that learners must not consume. Access is explicit
/// through reveal(), so any use is visible at the call site.
template <typename T>
class GroundTruth {
public:
    explicit GroundTruth(T value) : value_(std::move(value)) {}
    const T& reveal() const noexcept { return value_; }

private:
    T value_;
};

/// A partial sample plus, when known, the code that generated it.
struct LabeledSample {
    PartialSample sample;
    std::optional<GroundTruth<SparseCode>> code;
};

/// n x m matrix with i.i.d. N(0,1) entries, columns rescaled to unit norm.
inline Matrix generate_dictionary(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Matrix a(cfg.n, cfg.m);
    for (std::size_t i = 0; i < cfg.n; ++i)
        for (std::size_t j = 0; j < cfg.m; ++j) a(i, j) = rng.normal();
    normalize_columns(a);
    return a;
}

/// Rotates every column of a_star by the angle whose chord is delta, towards
/// a random direction orthogonal to it: ||a_i - a*_i|| = delta exactly (up to
/// rounding) and ||a_i|| = ||a*_i||. Needs n >= 2 and 0 <= delta <= 2.
inline Matrix perturb_dictionary(const Matrix& a_star, double delta, Rng& rng) {
    detail::require(a_star.rows() >= 2, "perturb_dictionary: need n >= 2");
    detail::require(delta >= 0.0 && delta <= 2.0, "perturb_dictionary: delta must lie in [0, 2]");
    const std::size_t n = a_star.rows();
    Matrix out(n, a_star.cols());
    for (std::size_t j = 0; j < a_star.cols(); ++j) {
        Vector a = a_star.column(j);
        const double len = normalize(a);
        detail::require(len > 0.0, "perturb_dictionary: zero column");
        Vector w(n);
        double wn = 0.0;
        while (wn < 1e-6) {
            for (double& x : w) x = rng.normal();
            const double c = dot(w, a);
            for (std::size_t i = 0; i < n; ++i) w[i] -= c * a[i];
            wn = normalize(w);
        }
        // chord 2 sin(theta/2) = delta / len on the unit sphere
        const double theta = 2.0 * std::asin(std::min(1.0, 0.5 * delta / len));
        for (std::size_t i = 0; i < n; ++i)
            out(i, j) = len * (std::cos(theta) * a[i] + std::sin(theta) * w[i]);
    }
    return out;
}

/// Uniform k-subset support. Rademacher values are +-1; uniform_gap values
/// have |x| ~ U[C, 2C] with a random sign (second moment 7C^2/3, not rescaled).
inline SparseCode generate_code(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    SparseCode code;
    code.support.reserve(cfg.k);
    // Floyd's algorithm: uniform k-subset in O(k) draws.
    for (std::size_t j = cfg.m - cfg.k; j < cfg.m; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (std::find(code.support.begin(), code.support.end(), t) == code.support.end())
            code.support.push_back(t);
        else
            code.support.push_back(j);
    }
    std::sort(code.support.begin(), code.support.end());
    code.values.assign(cfg.m, 0.0);
    for (std::size_t i : code.support) {
        const double s = rng.sign();
        code.values[i] =
            cfg.code_dist == CodeDistribution::rademacher ? s : s * rng.uniform(cfg.C, 2.0 * cfg.C);
    }
    return code;
}

/// A* x*
inline Vector synthesize_full(const Matrix& a_star, const SparseCode& code) {
    detail::require(code.values.size() == a_star.cols(), "synthesize_full: code length != a_star.cols");
    Vector y(a_star.rows(), 0.0);
    for (std::size_t i = 0; i < a_star.rows(); ++i) {
        const auto r = a_star.row(i);
        double s = 0.0;
        for (std::size_t j : code.support) s += r[j] * code.values[j];
        y[i] = s;
    }
    return y;
}

/// Keeps each coordinate independently with probability rho.
inline PartialSample subsample(std::span<const double> full, double rho, Rng& rng) {
    detail::require(rho > 0.0 && rho <= 1.0, "subsample: rho must lie in (0, 1]");
    PartialSample y;
    y.values.assign(full.size(), 0.0);
    y.observed.reserve(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (rng.bernoulli(rho)) {
            y.observed.push_back(i);
            y.values[i] = full[i];
        }
    }
    return y;
}

/// Restricts `values` to a given observed set (P_Gamma with a fixed Gamma).
inline PartialSample restrict_to(std::span<const double> values, const IndexList& observed) {
    PartialSample y;
    y.observed = observed;
    y.values.assign(values.size(), 0.0);
    for (std::size_t i : observed) y.values[i] = values[i];
    return y;
}

inline PartialSample fully_observed(Vector full) {
    PartialSample y;
    y.observed.resize(full.size());
    std::iota(y.observed.begin(), y.observed.end(), std::size_t{0});
    y.values = std::move(full);
    return y;
}

/// p independent draws of (P_Gamma(A* x*), x*). The codes are wrapped as
/// ground truth; learners only read `.sample`.
inline std::vector<LabeledSample> generate_batch(const ModelConfig& cfg, const Matrix& a_star,
                                                 std::size_t p, Rng& rng) {
    cfg.validate();
    detail::require(a_star.rows() == cfg.n && a_star.cols() == cfg.m,
                    "generate_batch: a_star shape does not match the model");
    std::vector<LabeledSample> batch;
    batch.reserve(p);
    for (std::size_t t = 0; t < p; ++t) {
        SparseCode code = generate_code(cfg, rng);
        const Vector full = synthesize_full(a_star, code);
        batch.push_back({subsample(full, cfg.rho, rng), GroundTruth<SparseCode>(std::move(code))});
    }
    return batch;
}

/// Fully observed samples A* x* (the hold-out set).
inline std::vector<Vector> generate_full_samples(const ModelConfig& cfg, const Matrix& a_star,
                                                 std::size_t p, Rng& rng) {
    cfg.validate();
    std::vector<Vector> out;
    out.reserve(p);
    for (std::size_t t = 0; t < p; ++t) out.push_back(synthesize_full(a_star, generate_code(cfg, rng)));
    return out;
}

inline std::vector<PartialSample> unlabeled(const std::vector<LabeledSample>& batch) {
    std::vector<PartialSample> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(s.sample);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset dump: header "n m k rho p", then per sample one line of observed
// indices and one line of the observed values (same order).

struct DatasetHeader {
    std::size_t n = 0, m = 0, k = 0;
    double rho = 1.0;
};

inline void write_dataset(std::ostream& os, const DatasetHeader& h,
                          std::span<const PartialSample> samples) {
    const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
    os << h.n << ' ' << h.m << ' ' << h.k << ' ' << h.rho << ' ' << samples.size() << '\n';
    for (const auto& y : samples) {
        for (std::size_t t = 0; t < y.observed.size(); ++t) os << (t ? " " : "") << y.observed[t];
        os << '\n';
        for (std::size_t t = 0; t < y.observed.size(); ++t)
            os << (t ? " " : "") << y.values[y.observed[t]];
        os << '\n';
    }
    os.precision(old_precision);
}

struct Dataset {
    DatasetHeader header;
    std::vector<PartialSample> samples;
};

inline Dataset read_dataset(std::istream& is) {
    Dataset d;
    std::string line;
    if (!std::getline(is, line)) throw FormatError("dataset: missing header");
    std::istringstream hs(line);
    long long n = -1, m = -1, k = -1, p = -1;
    if (!(hs >> n >> m >> k >> d.header.rho >> p) || n < 1 || m < 0 || k < 0 || p < 0)
        throw FormatError("dataset: bad header '" + line + "'");
    d.header.n = static_cast<std::size_t>(n);
    d.header.m = static_cast<std::size_t>(m);
    d.header.k = static_cast<std::size_t>(k);
    d.samples.reserve(static_cast<std::size_t>(p));
    for (long long s = 0; s < p; ++s) {
        PartialSample y;
        y.values.assign(d.header.n, 0.0);
        std::string idx_line, val_line;
        if (!std::getline(is, idx_line) || !std::getline(is, val_line))
            throw FormatError("dataset: truncated at sample " + std::to_string(s));
        std::istringstream is_idx(idx_line), is_val(val_line);
        long long i;
        while (is_idx >> i) {
            if (i < 0 || static_cast<std::size_t>(i) >= d.header.n ||
                (!y.observed.empty() && static_cast<std::size_t>(i) <= y.observed.back()))
                throw FormatError("dataset: bad index list at sample " + std::to_string(s));
            y.observed.push_back(static_cast<std::size_t>(i));
        }
        if (!is_idx.eof()) throw FormatError("dataset: bad index token at sample " + std::to_string(s));
        for (std::size_t t : y.observed) {
            if (!(is_val >> y.values[t]) || !std::isfinite(y.values[t]))
                throw FormatError("dataset: bad value line at sample " + std::to_string(s));
        }
        std::string extra;
        if (is_val >> extra) throw FormatError("dataset: extra values at sample " + std::to_string(s));
        d.samples.push_back(std::move(y));
    }
    return d;
}

inline void save_dataset(const std::string& path, const DatasetHeader& h,
                         std::span<const PartialSample> samples) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_dataset(os, h, samples);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return read_dataset(is);
}

}  // namespace incdl
