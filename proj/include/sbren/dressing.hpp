#ifndef SBREN_DRESSING_HPP
#define SBREN_DRESSING_HPP

#include <cmath>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "sbren/core.hpp"
#include "sbren/fock.hpp"
#include "sbren/grid.hpp"

namespace sbren {

inline Eigen::MatrixXcd pauli_x() {
    Eigen::MatrixXcd m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}

inline Eigen::MatrixXcd pauli_y() {
    Eigen::MatrixXcd m(2, 2);
    m << cdouble(0, 0), cdouble(0, -1), cdouble(0, 1), cdouble(0, 0);
    return m;
}

inline Eigen::MatrixXcd pauli_z() {
    Eigen::MatrixXcd m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}

inline Eigen::MatrixXcd spin_identity(int n) { return Eigen::MatrixXcd::Identity(n, n); }

/* The finite level system: A is the observable part of the Hamiltonian
 * (hermitian), B the coupling operator (normal, so it has a spectral
 * decomposition the double integral formulas can use). */
struct SpinSpace {
    Eigen::MatrixXcd A;
    Eigen::MatrixXcd B;

    int dim() const { return int(A.rows()); }
};

inline SpinSpace make_spin_space(Eigen::MatrixXcd a, Eigen::MatrixXcd b) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw DimensionError("make_spin_space: A and B must be square and of equal size");
    if ((a - a.adjoint()).norm() > 1e-12 * a.norm())
        throw InvariantError("make_spin_space: A must be hermitian");
    if ((b.adjoint() * b - b * b.adjoint()).norm() > 1e-12 * b.norm() * b.norm())
        throw InvariantError("make_spin_space: B must be normal");
    return SpinSpace{std::move(a), std::move(b)};
}

/* Kronecker products in spin-major layout: index = spin * fock_dim + fock. */
inline Eigen::MatrixXcd kron_dense(const Eigen::MatrixXcd& s, const Eigen::MatrixXcd& f) {
    Eigen::MatrixXcd out(s.rows() * f.rows(), s.cols() * f.cols());
    for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j)
            out.block(i * f.rows(), j * f.cols(), f.rows(), f.cols()) = s(i, j) * f;
    return out;
}

inline SparseOperator kron_sparse(const Eigen::MatrixXcd& s, const SparseOperator& f) {
    std::vector<Eigen::Triplet<cdouble>> trips;
    trips.reserve(std::size_t(s.size()) * std::size_t(f.nonZeros()));
    for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j) {
            cdouble sij = s(i, j);
            if (sij == cdouble(0.0, 0.0)) continue;
            for (int k = 0; k < f.outerSize(); ++k)
                for (SparseOperator::InnerIterator it(f, k); it; ++it)
                    trips.emplace_back(i * int(f.rows()) + int(it.row()),
                                       j * int(f.cols()) + int(it.col()), sij * it.value());
        }
    SparseOperator out(s.rows() * f.rows(), s.cols() * f.cols());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

/* D = e^{B* (x) a(g)} = sum_k (B*)^k (x) a(g)^k / k!. Annihilation only, so
 * the series stops by itself once a(g)^k wipes every grade; everything this
 * operator does is exact on the truncated space. */
inline SparseOperator dressing_operator(const SpinSpace& spin, const FockBasis& basis,
                                        const ModeGrid& grid, const FormFactor& g) {
    const int fd = basis.dim();
    const int sd = spin.dim();
    SparseOperator a = annihilate(g, basis, grid);

    Eigen::MatrixXcd spin_pow = Eigen::MatrixXcd::Identity(sd, sd);
    SparseOperator fock_pow(fd, fd);
    fock_pow.setIdentity();

    std::vector<Eigen::Triplet<cdouble>> trips;
    double inv_fact = 1.0;
    for (int k = 0; k <= basis.max_total; ++k) {
        if (k > 0) {
            inv_fact /= double(k);
            spin_pow = (spin_pow * spin.B.adjoint()).eval();
            fock_pow = (fock_pow * a).eval();
            if (spin_pow.norm() == 0.0 || fock_pow.norm() == 0.0) break;
        }
        for (int i = 0; i < sd; ++i)
            for (int j = 0; j < sd; ++j) {
                cdouble sij = spin_pow(i, j) * inv_fact;
                if (sij == cdouble(0.0, 0.0)) continue;
                for (int c = 0; c < fock_pow.outerSize(); ++c)
                    for (SparseOperator::InnerIterator it(fock_pow, c); it; ++it)
                        trips.emplace_back(i * fd + int(it.row()), j * fd + int(it.col()),
                                           sij * it.value());
            }
    }
    SparseOperator d(sd * fd, sd * fd);
    d.setFromTriplets(trips.begin(), trips.end());
    return d;
}

/* The Gram matrix of a dressed space with its factorization. Cholesky when the
 * metric is numerically definite; otherwise a thresholded eigendecomposition
 * (cutoff 1e-12 of the top eigenvalue) so near-singular metrics can still be
 * inspected. The condition number is always estimated and kept. */
struct Metric {
    Eigen::MatrixXcd gram;
    Eigen::LLT<Eigen::MatrixXcd> llt;
    bool chol_ok = false;
    Eigen::MatrixXcd eigenvectors; // fallback only, kept columns
    Eigen::VectorXd eigenvalues;   // fallback only, kept values
    double threshold = 0.0;
    double condition = 1.0;
    std::uint64_t tag = 0;

    int dim() const { return int(gram.rows()); }
};

namespace detail {

/* Largest eigenvalue of a hermitian positive map given by `apply`, by power
 * iteration from the deterministic all-ones start. */
template <typename Apply>
double power_extreme(int n, int iters, Apply&& apply) {
    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(n) / std::sqrt(double(n));
    double norm = 1.0;
    for (int i = 0; i < iters; ++i) {
        Eigen::VectorXcd w = apply(v);
        norm = w.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) return norm;
        v = w / norm;
    }
    return std::real(v.dot(apply(v)));
}

} // namespace detail

inline std::shared_ptr<const Metric> build_metric(Eigen::MatrixXcd gram, std::uint64_t tag) {
    auto m = std::make_shared<Metric>();
    m->gram = std::move(gram);
    m->tag = tag;
    const int n = m->dim();
    const int iters = n <= 600 ? 150 : 50;

    m->llt.compute(m->gram);
    bool pivot_ok = (m->llt.info() == Eigen::Success);
    if (pivot_ok) {
        double lmax = detail::power_extreme(n, iters, [&](const Eigen::VectorXcd& v) {
            return Eigen::VectorXcd(m->gram * v);
        });
        double inv_lmin = detail::power_extreme(n, iters, [&](const Eigen::VectorXcd& v) {
            return Eigen::VectorXcd(m->llt.solve(v));
        });
        m->condition = std::max(1.0, lmax * inv_lmin);
        m->threshold = 1e-12 * lmax;
        if (m->condition <= 1e15 && std::isfinite(m->condition)) {
            m->chol_ok = true;
            return m;
        }
    }

    // numerically singular (or outright pivot failure): thresholded spectral form
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m->gram);
    Eigen::VectorXd ev = es.eigenvalues();
    double top = ev.maxCoeff();
    if (!(top > 0.0)) throw InvariantError("build_metric: gram matrix is not positive");
    m->threshold = 1e-12 * top;
    int kept = 0;
    for (int i = 0; i < n; ++i)
        if (ev[i] > m->threshold) ++kept;
    m->eigenvalues.resize(kept);
    m->eigenvectors.resize(n, kept);
    for (int i = 0, c = 0; i < n; ++i)
        if (ev[i] > m->threshold) {
            m->eigenvalues[c] = ev[i];
            m->eigenvectors.col(c) = es.eigenvectors().col(i);
            ++c;
        }
    double bottom = ev.minCoeff();
    m->condition = bottom > 0.0 ? top / bottom : std::numeric_limits<double>::infinity();
    m->chol_ok = false;
    return m;
}

/* A truncated Fock space over `basis` carrying the dressed inner product
 * <x, y> = (D x)^H (D y) determined by the coupling B and the factor g. */
struct DressedSpace {
    SpinSpace spin;
    std::shared_ptr<const FockBasis> basis;
    ModeGrid grid;
    FormFactor g;
    SparseOperator D;
    std::shared_ptr<const Metric> metric;

    int dim() const { return spin.dim() * basis->dim(); }
};

inline std::uint64_t metric_fingerprint(const SpinSpace& spin, const FockBasis& basis,
                                        const ModeGrid& grid, const FormFactor& g) {
    std::uint64_t h = basis.descriptor_hash();
    std::uint64_t gh = grid.hash();
    h = fnv1a(&gh, sizeof gh, h);
    if (g.amplitudes.size() > 0)
        h = fnv1a(g.amplitudes.data(), std::size_t(g.amplitudes.size()) * sizeof(cdouble), h);
    int reg = int(g.regularity);
    h = fnv1a(&reg, sizeof reg, h);
    int sd = spin.dim();
    h = fnv1a(&sd, sizeof sd, h);
    if (spin.B.size() > 0) h = fnv1a(spin.B.data(), std::size_t(spin.B.size()) * sizeof(cdouble), h);
    return h;
}

inline DressedSpace dress(const SpinSpace& spin, std::shared_ptr<const FockBasis> basis,
                          const ModeGrid& grid, const FormFactor& g) {
    if (!basis) throw DimensionError("dress: null basis");
    DressedSpace ds;
    ds.spin = spin;
    ds.basis = std::move(basis);
    ds.grid = grid;
    ds.g = g;
    ds.D = dressing_operator(spin, *ds.basis, grid, g);
    SparseOperator gm = SparseOperator(ds.D.adjoint()) * ds.D;
    ds.metric = build_metric(Eigen::MatrixXcd(gm), metric_fingerprint(spin, *ds.basis, grid, g));
    return ds;
}

inline const Eigen::MatrixXcd& gram(const DressedSpace& ds) { return ds.metric->gram; }

inline cdouble renorm_inner(const Eigen::VectorXcd& x, const Eigen::VectorXcd& y,
                            const DressedSpace& ds) {
    if (x.size() != ds.dim() || y.size() != ds.dim())
        throw DimensionError("renorm_inner: vector size does not match the dressed space");
    return x.dot(ds.metric->gram * y);
}

/* Creation-route inner product <e^{B (x) a*(g)} x, e^{B (x) a*(g)} y> divided
 * by e^{c |g|^2}, defined when B*B = c Id (the scalar normalization; anything
 * else needs the operator-normalized dressed form instead). Unlike the
 * annihilation route this one has a truncation tail, returned as a bound. */
struct NormalizedInner {
    cdouble value;
    double tail_bound;
};

inline NormalizedInner normalized_dressed_inner(const Eigen::VectorXcd& x,
                                                const Eigen::VectorXcd& y, const SpinSpace& spin,
                                                const FockBasis& basis, const ModeGrid& grid,
                                                const FormFactor& g) {
    if (!g.regular())
        throw InvariantError(
            "normalized_dressed_inner: a singular factor has no creation dressing; "
            "use the annihilation-route inner product");
    const int sd = spin.dim(), fd = basis.dim();
    if (x.size() != std::int64_t(sd) * fd || y.size() != std::int64_t(sd) * fd)
        throw DimensionError("normalized_dressed_inner: vector size mismatch");

    Eigen::MatrixXcd bb = spin.B.adjoint() * spin.B;
    double c = bb.trace().real() / double(sd);
    if ((bb - c * Eigen::MatrixXcd::Identity(sd, sd)).norm() >
        1e-12 * std::max(1.0, bb.norm()))
        throw InvariantError(
            "normalized_dressed_inner: B*B is not scalar, so e^{c|g|^2} is not the right "
            "normalization; use the operator-normalized dressed form");

    // K = sum_k B^k (x) a*(g)^k / k!, the exact adjoint of the dressing
    SparseOperator K = SparseOperator(dressing_operator(spin, basis, grid, g).adjoint());
    Eigen::VectorXcd kx = K * x, ky = K * y;
    double gnorm2 = weighted_norm_sq(g, grid);
    double denom = std::exp(c * gnorm2);

    // spectral norm of B = sqrt(top eigenvalue of B*B); with scalar B*B it is sqrt(c)
    double bnorm = std::sqrt(std::max(0.0, c));
    double geff = bnorm * std::sqrt(gnorm2);
    auto tail = [&](const Eigen::VectorXcd& v) {
        int p = 0;
        for (int s = 0; s < sd; ++s)
            p = std::max(p, top_grade(v.segment(s * fd, fd), basis));
        return v.norm() * creation_tail_bound(geff, p, basis.max_total);
    };
    double ux = tail(x), uy = tail(y);
    double bound = (ux * (ky.norm() + uy) + uy * kx.norm()) / denom;
    return NormalizedInner{kx.dot(ky) / denom, bound};
}

/* Identification map between the g-dressed and g'-dressed pictures: the
 * dressing built on the difference g - g'. Composition, inversion and metric
 * isometry all hold exactly on the truncated space because only commuting
 * annihilation operators are involved. */
inline SparseOperator spin_boson_map(const FormFactor& from, const FormFactor& to,
                                     const SpinSpace& spin, const FockBasis& basis,
                                     const ModeGrid& grid) {
    if (from.amplitudes.size() != to.amplitudes.size())
        throw DimensionError("spin_boson_map: the two factors live on different grids");
    FormFactor diff;
    diff.amplitudes = from.amplitudes - to.amplitudes;
    diff.regularity = (from.regular() && to.regular()) ? Regularity::Regular
                                                       : Regularity::Singular;
    diff.coupling = from.coupling;
    return dressing_operator(spin, basis, grid, diff);
}

/* How far apart two stages of a cutoff family are as representations: the
 * weighted norm of the difference of their dressing factors and the vacuum
 * overlap e^{-|g_a - g_b|^2 / 2} it implies. Reported for consecutive stages
 * plus the widest pair. */
struct DivergenceRow {
    double cut_a = 0.0;
    double cut_b = 0.0;
    double normsq_diff = 0.0;
    double vacuum_overlap = 1.0;
};

inline std::vector<DivergenceRow> representation_divergence(const CutoffFamily& family) {
    const int n = int(family.cutoff_values.size());
    if (n < 2) throw ConfigError("representation_divergence: need at least two stages");

    std::vector<FormFactor> gs;
    gs.reserve(n);
    for (int i = 0; i < n; ++i) gs.push_back(dressed_factor(family.stage(i), family.grid));

    auto row = [&](int i, int j) {
        FormFactor diff;
        diff.amplitudes = gs[i].amplitudes - gs[j].amplitudes;
        double d2 = weighted_norm_sq(diff, family.grid);
        return DivergenceRow{family.cutoff_values[i], family.cutoff_values[j], d2,
                             std::exp(-0.5 * d2)};
    };
    std::vector<DivergenceRow> rows;
    for (int i = 0; i + 1 < n; ++i) rows.push_back(row(i, i + 1));
    if (n > 2) rows.push_back(row(0, n - 1));
    return rows;
}

} // namespace sbren

#endif
