#ifndef SBREN_CORE_HPP
#define SBREN_CORE_HPP

#include <complex>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace sbren {

using cdouble = std::complex<double>;
using SparseOperator = Eigen::SparseMatrix<cdouble>;
using FockVector = Eigen::VectorXcd;

/* Error taxonomy. The CLI maps these onto exit codes: config errors -> 2,
 * resource caps -> 3, everything else that signals a broken invariant -> 1. */
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BasisCapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/* Requested tolerance unreachable at the given truncation; carries the
 * smallest truncation that would satisfy it (0 if none was found). */
struct TailBoundError : std::runtime_error {
    int needed_truncation;
    TailBoundError(const std::string& msg, int needed)
        : std::runtime_error(msg), needed_truncation(needed) {}
};
struct MetricMismatchError : std::logic_error {
    using std::logic_error::logic_error;
};
struct CholeskyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    if (k > n - k) k = n - k;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
    return r;
}

/* FNV-1a, used for grid/config fingerprints in manifests and exports. */
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), seed);
}

inline std::string hex64(std::uint64_t h) {
    static const char* digit = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digit[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

} // namespace sbren

#endif
