#ifndef SBREN_HAMILTONIAN_HPP
#define SBREN_HAMILTONIAN_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "sbren/core.hpp"
#include "sbren/dressing.hpp"
#include "sbren/fock.hpp"
#include "sbren/grid.hpp"
#include "sbren/spin_form.hpp"

namespace sbren {

/* A hermitian sesquilinear form together with the metric it is measured
 * against. Forms over different metrics must never be combined, so the
 * arithmetic below compares metric fingerprints and refuses mismatches. */
struct QuadraticForm {
    Eigen::MatrixXcd matrix;
    std::shared_ptr<const Metric> metric;
    std::string provenance;

    int dim() const { return int(matrix.rows()); }
};

namespace detail {

inline void require_same_metric(const QuadraticForm& a, const QuadraticForm& b, const char* op) {
    if (!a.metric || !b.metric)
        throw InvariantError(std::string(op) + ": form carries no metric");
    if (a.metric->tag != b.metric->tag || a.metric->dim() != b.metric->dim())
        throw MetricMismatchError(std::string(op) + ": forms live over different metrics ('" +
                                  a.provenance + "' vs '" + b.provenance + "')");
}

} // namespace detail

inline QuadraticForm operator+(const QuadraticForm& a, const QuadraticForm& b) {
    detail::require_same_metric(a, b, "form sum");
    return QuadraticForm{a.matrix + b.matrix, a.metric, a.provenance + "+" + b.provenance};
}

inline QuadraticForm operator-(const QuadraticForm& a, const QuadraticForm& b) {
    detail::require_same_metric(a, b, "form difference");
    return QuadraticForm{a.matrix - b.matrix, a.metric, a.provenance + "-" + b.provenance};
}

inline QuadraticForm operator*(double s, const QuadraticForm& a) {
    return QuadraticForm{s * a.matrix, a.metric, a.provenance};
}

inline QuadraticForm as_form(Eigen::MatrixXcd m, const DressedSpace& ds, std::string provenance) {
    if (m.rows() != ds.dim() || m.cols() != ds.dim())
        throw DimensionError("as_form: matrix size does not match the dressed space");
    return QuadraticForm{std::move(m), ds.metric, std::move(provenance)};
}

/* Field part of the renormalized Hamiltonian form, D^H (I (x) dGamma) D.
 * Assembled sparsely; D and dGamma both act within or below their grade, so
 * this matrix is the exact restriction of the infinite-space form. */
inline QuadraticForm field_form(const DressedSpace& ds) {
    SparseOperator lifted =
        kron_sparse(spin_identity(ds.spin.dim()), second_quantize(ds.grid, *ds.basis));
    SparseOperator right = lifted * ds.D;
    SparseOperator q = SparseOperator(ds.D.adjoint()) * right;
    return QuadraticForm{Eigen::MatrixXcd(q), ds.metric, "field"};
}

inline QuadraticForm observable_form(const Eigen::MatrixXcd& a, const DressedSpace& ds) {
    return QuadraticForm{renorm_spin_form(a, ds), ds.metric, "observable"};
}

/* The renormalized spin-boson Hamiltonian as a form: field part plus the
 * double-integral form of the level observable A. */
inline QuadraticForm renorm_hamiltonian_form(const DressedSpace& ds) {
    return field_form(ds) + observable_form(ds.spin.A, ds);
}

/* The bare regularized Hamiltonian A (x) I + I (x) dGamma + B^H (x) a(v) +
 * B (x) a^*(v). Only square integrable interactions have one; a singular
 * coupling exists solely through the renormalized form. */
inline Eigen::MatrixXcd regular_hamiltonian(const SpinSpace& spin, const FockBasis& basis,
                                            const ModeGrid& grid, const FormFactor& v) {
    if (!v.regular())
        throw InvariantError(
            "regular_hamiltonian: the interaction must be square integrable; a singular "
            "coupling only has a renormalized form");
    const int sd = spin.dim(), fd = basis.dim();
    SparseOperator av = annihilate(v, basis, grid);
    SparseOperator avH = SparseOperator(av.adjoint());

    Eigen::MatrixXcd h = kron_dense(spin.A, Eigen::MatrixXcd::Identity(fd, fd));
    h += Eigen::MatrixXcd(kron_sparse(spin_identity(sd), second_quantize(grid, basis)));
    h += Eigen::MatrixXcd(kron_sparse(spin.B.adjoint(), av));
    h += Eigen::MatrixXcd(kron_sparse(spin.B, avH));
    return h;
}

/* Energy pushed into the counterterm by completing the square: |w^{-1/2} v|^2
 * where w is the dispersion. This is what has to be added back to the bare
 * Hamiltonian before dressing, and its negative is the self energy. */
inline double counterterm_energy(const FormFactor& v, const ModeGrid& grid) {
    return weighted_norm_sq(v, grid, -0.5);
}

namespace detail {

/* Per-grade coefficients of the creation series applied to a unit vector of
 * pure grade: u[m] bounds the grade-m part of sum_k B^k (x) a^*(g)^k / k!
 * applied to it, with geff = |B| |g|. */
inline std::vector<double> creation_profile(double geff, int grade, int mmax) {
    std::vector<double> u(std::size_t(mmax) + 1, 0.0);
    if (grade > mmax) return u;
    u[std::size_t(grade)] = 1.0;
    double t = 1.0;
    for (int k = 1; grade + k <= mmax; ++k) {
        t *= geff * std::sqrt(double(grade + k)) / double(k);
        u[std::size_t(grade + k)] = t;
    }
    return u;
}

} // namespace detail

/* Truncation error of the dressed regularized form on probes of the given
 * grades. The truncated matrix is exactly <K x, P_N (H + c) P_N K y> with the
 * untruncated dressing K, so the error is the part of the pairing where bra
 * or ket grade exceeds the truncation; every term couples a creation tail on
 * one side with one on the other, which is why the estimate is quadratic in
 * the tails instead of linear. */
inline double dressed_form_tail(double spin_norm_a, double spin_norm_b, double counterterm,
                                double factor_norm, double interaction_norm, double omega_max,
                                int max_total, int grade_bra, int grade_ket) {
    if (grade_bra < 0 || grade_ket < 0)
        throw DimensionError("dressed_form_tail: negative probe grade");
    const double geff = spin_norm_b * factor_norm;
    const int mmax = max_total + 260;
    std::vector<double> ub = detail::creation_profile(geff, grade_bra, mmax);
    std::vector<double> uk = detail::creation_profile(geff, grade_ket, mmax);

    double stay = 0.0, energy = 0.0, hop = 0.0;
    for (int m = max_total + 1; m <= mmax; ++m) {
        stay += ub[std::size_t(m)] * uk[std::size_t(m)];
        energy += double(m) * ub[std::size_t(m)] * uk[std::size_t(m)];
    }
    for (int m = max_total; m < mmax; ++m)
        hop += std::sqrt(double(m + 1)) * (ub[std::size_t(m)] * uk[std::size_t(m) + 1] +
                                           ub[std::size_t(m) + 1] * uk[std::size_t(m)]);
    return (spin_norm_a + counterterm * spin_norm_b * spin_norm_b) * stay +
           omega_max * energy + spin_norm_b * interaction_norm * hop;
}

/* The regularized Hamiltonian plus counterterm, conjugated by the creation
 * dressing K = (e^{-|g|^2 B^H B / 2} (x) I) sum_k B^k (x) a^*(g)^k / k! with
 * g = -v/omega. In the infinite space this equals the renormalized form
 * exactly; in truncation it agrees up to element_error. */
struct DressedRegularForm {
    Eigen::MatrixXcd matrix;
    double counterterm = 0.0;
    double spin_norm_a = 0.0;
    double spin_norm_b = 0.0;
    double factor_norm = 0.0;
    double interaction_norm = 0.0;
    double omega_max = 0.0;
    int max_total = 0;

    double element_error(int grade_bra, int grade_ket) const {
        return dressed_form_tail(spin_norm_a, spin_norm_b, counterterm, factor_norm,
                                 interaction_norm, omega_max, max_total, grade_bra, grade_ket);
    }
};

inline DressedRegularForm dressed_regular_form(
    const SpinSpace& spin, const FockBasis& basis, const ModeGrid& grid, const FormFactor& v,
    double tol = std::numeric_limits<double>::infinity(), int probe_grade = 1) {
    if (!v.regular())
        throw InvariantError(
            "dressed_regular_form: the interaction must be square integrable; a singular "
            "coupling only has a renormalized form");
    if (probe_grade < 0 || probe_grade > basis.max_total)
        throw DimensionError("dressed_regular_form: probe grade outside the truncated space");

    DressedRegularForm out;
    out.counterterm = counterterm_energy(v, grid);
    out.max_total = basis.max_total;
    FormFactor g = dressed_factor(v, grid);
    out.factor_norm = std::sqrt(weighted_norm_sq(g, grid));
    out.interaction_norm = std::sqrt(weighted_norm_sq(v, grid));
    for (const Mode& m : grid.modes) out.omega_max = std::max(out.omega_max, m.omega);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> esa(spin.A);
    out.spin_norm_a = esa.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::MatrixXcd bb = spin.B.adjoint() * spin.B;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> esb(bb);
    out.spin_norm_b = std::sqrt(std::max(0.0, esb.eigenvalues().maxCoeff()));

    if (std::isfinite(tol)) {
        double err = out.element_error(probe_grade, probe_grade);
        if (err > tol) {
            for (int n = basis.max_total + 1; n <= basis.max_total + 400; ++n) {
                double e = dressed_form_tail(out.spin_norm_a, out.spin_norm_b, out.counterterm,
                                             out.factor_norm, out.interaction_norm,
                                             out.omega_max, n, probe_grade, probe_grade);
                if (e <= tol)
                    throw TailBoundError(
                        "dressed_regular_form: the grade-" + std::to_string(probe_grade) +
                            " tail estimate " + std::to_string(err) +
                            " exceeds the requested tolerance; raise the truncation to " +
                            std::to_string(n),
                        n);
            }
            throw TailBoundError(
                "dressed_regular_form: no truncation within reach meets the requested "
                "tolerance",
                0);
        }
    }

    const int fd = basis.dim();
    double gn2 = out.factor_norm * out.factor_norm;
    Eigen::VectorXcd wdiag =
        (-0.5 * gn2 * esb.eigenvalues().array()).exp().matrix().cast<cdouble>();
    Eigen::MatrixXcd wfac =
        esb.eigenvectors() * wdiag.asDiagonal() * esb.eigenvectors().adjoint();

    Eigen::MatrixXcd kmat(SparseOperator(dressing_operator(spin, basis, grid, g).adjoint()));
    kmat = kron_dense(wfac, Eigen::MatrixXcd::Identity(fd, fd)) * kmat;

    Eigen::MatrixXcd hc = regular_hamiltonian(spin, basis, grid, v);
    hc += out.counterterm * kron_dense(bb, Eigen::MatrixXcd::Identity(fd, fd));
    out.matrix = kmat.adjoint() * hc * kmat;
    return out;
}

enum class GevpMode { Auto, Dense, IterativeLowest };

struct GevpResult {
    Eigen::VectorXd eigenvalues; // ascending
    Eigen::MatrixXcd vectors;    // columns, metric-orthonormal
    Eigen::VectorXd residuals;   // |Q x - lambda G x| per returned pair
    GevpMode mode_used = GevpMode::Dense;
    int lanczos_steps = 0;
};

namespace detail {

struct LanczosOut {
    Eigen::VectorXd values;
    Eigen::MatrixXcd vectors;
    int steps = 0;
};

/* Lanczos with full reorthogonalization on a hermitian operator given by
 * `apply`, returning the lowest k Ritz pairs. The start vector is seeded
 * deterministically (and not with a structured vector, which could sit in an
 * invariant subspace of a symmetric problem). */
template <typename Apply>
LanczosOut lanczos_lowest(int n, int k, int steps, Apply&& apply) {
    steps = std::min(steps, n);
    Eigen::MatrixXcd v(n, steps);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(steps);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(steps);

    std::mt19937_64 rng(0x5eed5eedULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXcd start(n);
    for (int i = 0; i < n; ++i) start[i] = cdouble(u(rng), u(rng));
    v.col(0) = start / start.norm();

    int built = 0;
    double scale = 0.0;
    for (int j = 0; j < steps; ++j) {
        Eigen::VectorXcd w = apply(v.col(j));
        if (j > 0) w -= beta[j - 1] * v.col(j - 1);
        alpha[j] = std::real(v.col(j).dot(w));
        w -= alpha[j] * v.col(j);
        for (int pass = 0; pass < 2; ++pass)
            w -= v.leftCols(j + 1) * (v.leftCols(j + 1).adjoint() * w).eval();
        built = j + 1;
        scale = std::max(scale, std::abs(alpha[j]));
        double b = w.norm();
        if (j + 1 == steps) break;
        if (b <= 1e-13 * std::max(1.0, scale)) break; // Krylov space exhausted
        beta[j] = b;
        v.col(j + 1) = w / b;
    }

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(built, built);
    for (int i = 0; i < built; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < built) {
            t(i, i + 1) = beta[i];
            t(i + 1, i) = beta[i];
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    int kk = std::min(k, built);
    LanczosOut out;
    out.values = es.eigenvalues().head(kk);
    out.vectors = v.leftCols(built) * es.eigenvectors().leftCols(kk).cast<cdouble>();
    out.steps = built;
    return out;
}

} // namespace detail

/* Generalized eigenvalue problem Q x = lambda G x for a form against its own
 * metric. Dense for moderate sizes; for large spaces the lowest k pairs come
 * from Lanczos on the Cholesky-whitened operator, with the basis grown until
 * the pencil residuals |Qx - lambda Gx| drop below tol (|Q|_F + |l| |G|_F). */
inline GevpResult solve_gevp(const QuadraticForm& q, int k = -1, GevpMode mode = GevpMode::Auto,
                             double tol = 1e-10) {
    if (!q.metric) throw InvariantError("solve_gevp: form carries no metric");
    const Metric& m = *q.metric;
    const int n = q.dim();
    if (q.matrix.rows() != q.matrix.cols() || n != m.dim())
        throw DimensionError("solve_gevp: form and metric sizes disagree");
    if ((q.matrix - q.matrix.adjoint()).norm() > 1e-10 * std::max(1.0, q.matrix.norm()))
        throw InvariantError("solve_gevp('" + q.provenance + "'): form is not hermitian");
    if (!m.chol_ok)
        throw CholeskyError("solve_gevp('" + q.provenance +
                            "'): the metric is not numerically positive definite (condition "
                            "estimate " +
                            std::to_string(m.condition) + "); refusing to whiten against it");
    if (k == 0 || k < -1) throw ConfigError("solve_gevp: k must be -1 (all) or >= 1");
    if (k > n) k = n;

    GevpMode chosen = mode;
    if (chosen == GevpMode::Auto)
        chosen = (k > 0 && n > 800) ? GevpMode::IterativeLowest : GevpMode::Dense;
    if (chosen == GevpMode::Dense && n > 4000)
        throw ConfigError(
            "solve_gevp: dense solve refused beyond 4000 dimensions; request the lowest k "
            "iteratively");
    if (chosen == GevpMode::IterativeLowest && k < 1)
        throw ConfigError("solve_gevp: the iterative mode needs k >= 1");

    GevpResult out;
    out.mode_used = chosen;
    const Eigen::MatrixXcd& gm = m.gram;

    if (chosen == GevpMode::Dense) {
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXcd> es(q.matrix, gm);
        if (es.info() != Eigen::Success)
            throw InvariantError("solve_gevp: dense solver did not converge");
        int keep = k > 0 ? k : n;
        out.eigenvalues = es.eigenvalues().head(keep);
        out.vectors = es.eigenvectors().leftCols(keep);
    } else {
        double qf = q.matrix.norm(), gf = gm.norm();
        auto apply = [&](const Eigen::VectorXcd& x) {
            Eigen::VectorXcd t1 = m.llt.matrixU().solve(x);
            Eigen::VectorXcd t2 = q.matrix * t1;
            return Eigen::VectorXcd(m.llt.matrixL().solve(t2));
        };
        int steps = std::min(n, std::max(2 * k + 30, 64));
        for (;;) {
            detail::LanczosOut lo = detail::lanczos_lowest(n, k, steps, apply);
            Eigen::MatrixXcd xs(n, lo.values.size());
            for (int i = 0; i < lo.values.size(); ++i)
                xs.col(i) = m.llt.matrixU().solve(lo.vectors.col(i));
            Eigen::VectorXd resid(lo.values.size());
            bool ok = int(lo.values.size()) == k;
            for (int i = 0; i < lo.values.size(); ++i) {
                resid[i] = (q.matrix * xs.col(i) - lo.values[i] * (gm * xs.col(i))).norm();
                ok = ok && resid[i] <= tol * (qf + std::abs(lo.values[i]) * gf);
            }
            if (ok || steps >= n) {
                out.eigenvalues = lo.values;
                out.vectors = std::move(xs);
                out.residuals = std::move(resid);
                out.lanczos_steps = lo.steps;
                break;
            }
            steps = std::min(n, 2 * steps);
        }
    }

    if (out.residuals.size() == 0) {
        out.residuals.resize(out.eigenvalues.size());
        for (int i = 0; i < out.eigenvalues.size(); ++i)
            out.residuals[i] =
                (q.matrix * out.vectors.col(i) - out.eigenvalues[i] * (gm * out.vectors.col(i)))
                    .norm();
    }
    return out;
}

} // namespace sbren

#endif
