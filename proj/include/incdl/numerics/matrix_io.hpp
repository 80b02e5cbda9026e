#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "incdl/error.hpp"
#include "incdl/numerics/matrix.hpp"

namespace incdl {

/// Text format: "rows cols" on the first line, then one whitespace-separated
/// row per line, 17 significant digits (exact double round trip).
inline void write_matrix(std::ostream& os, const Matrix& a) {
    os << a.rows() << ' ' << a.cols() << '\n';
    const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (j) os << ' ';
            os << r[j];
        }
        os << '\n';
    }
    os.precision(old_precision);
}

inline Matrix read_matrix(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("matrix: missing header line");
    std::istringstream header(line);
    long long rows = -1, cols = -1;
    if (!(header >> rows >> cols) || rows < 1 || cols < 0)
        throw FormatError("matrix: bad header '" + line + "'");
    Matrix a(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (!std::getline(is, line))
            throw FormatError("matrix: expected " + std::to_string(rows) + " rows, got " +
                              std::to_string(i));
        std::istringstream row(line);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double x;
            if (!(row >> x)) throw FormatError("matrix: short row " + std::to_string(i));
            if (!std::isfinite(x)) throw FormatError("matrix: non-finite entry in row " + std::to_string(i));
            a(i, j) = x;
        }
        std::string extra;
        if (row >> extra) throw FormatError("matrix: long row " + std::to_string(i));
    }
    std::string trailing;
    if (is >> trailing) throw FormatError("matrix: trailing data after " + std::to_string(rows) + " rows");
    return a;
}

inline void save_matrix(const std::string& path, const Matrix& a) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_matrix(os, a);
}

inline Matrix load_matrix(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "'");
    return read_matrix(is);
}

}  // namespace incdl
