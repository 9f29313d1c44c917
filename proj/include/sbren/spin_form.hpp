#ifndef SBREN_SPIN_FORM_HPP
#define SBREN_SPIN_FORM_HPP

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sbren/core.hpp"
#include "sbren/dressing.hpp"
#include "sbren/fock.hpp"
#include "sbren/grid.hpp"

namespace sbren {

/* Spectral resolution of a normal matrix: one eigenvalue and one orthogonal
 * projector per cluster. Eigenvalues closer than cluster_tol (default 1e-10
 * of the matrix norm) are treated as one spectral point; clusters are ordered
 * by (re, im) of their mean so the indexing is deterministic. */
struct SpectralDecomposition {
    std::vector<cdouble> eigenvalues;
    std::vector<Eigen::MatrixXcd> projectors;

    int count() const { return int(eigenvalues.size()); }
    int dim() const { return projectors.empty() ? 0 : int(projectors[0].rows()); }
};

inline SpectralDecomposition spectral_decompose(const Eigen::MatrixXcd& b,
                                                double cluster_tol = -1.0) {
    if (b.rows() == 0 || b.rows() != b.cols())
        throw DimensionError("spectral_decompose: matrix must be square and nonempty");
    const int n = int(b.rows());
    const double bn = b.norm();
    if ((b.adjoint() * b - b * b.adjoint()).norm() > 1e-12 * bn * bn)
        throw InvariantError("spectral_decompose: matrix is not normal");
    if (cluster_tol < 0.0) cluster_tol = 1e-10 * bn;

    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(b);
    if (schur.info() != Eigen::Success)
        throw InvariantError("spectral_decompose: schur iteration failed");
    Eigen::VectorXcd evs = schur.matrixT().diagonal();
    const Eigen::MatrixXcd& q = schur.matrixU();

    // connect eigenvalues within cluster_tol
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(evs[i] - evs[j]) <= cluster_tol) parent[find(i)] = find(j);

    std::vector<std::vector<int>> groups;
    std::vector<int> root_to_group(n, -1);
    for (int i = 0; i < n; ++i) {
        int r = find(i);
        if (root_to_group[r] < 0) {
            root_to_group[r] = int(groups.size());
            groups.emplace_back();
        }
        groups[root_to_group[r]].push_back(i);
    }

    std::vector<cdouble> means(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        cdouble m(0.0, 0.0);
        for (int i : groups[g]) m += evs[i];
        means[g] = m / double(groups[g].size());
    }
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
        if (means[a].real() != means[c].real()) return means[a].real() < means[c].real();
        return means[a].imag() < means[c].imag();
    });

    SpectralDecomposition dec;
    for (std::size_t g : order) {
        Eigen::MatrixXcd p = Eigen::MatrixXcd::Zero(n, n);
        for (int i : groups[g]) p += q.col(i) * q.col(i).adjoint();
        dec.eigenvalues.push_back(means[g]);
        dec.projectors.push_back(std::move(p));
    }

    Eigen::MatrixXcd recon = Eigen::MatrixXcd::Zero(n, n);
    for (int i = 0; i < dec.count(); ++i) recon += dec.eigenvalues[i] * dec.projectors[i];
    if ((recon - b).norm() > 1e-11 * std::max(bn, 1.0))
        throw InvariantError(
            "spectral_decompose: clustered resolution does not reproduce the matrix "
            "(cluster tolerance too coarse)");
    return dec;
}

/* The renormalization kernel between two spectral points. In the regular
 * regime it is the normalized coherent overlap
 * exp((conj(l) m - (|l|^2 + |m|^2) / 2) |g|^2); in the singular regime only
 * the cluster delta survives. The diagonal is exactly one in both. */
inline cdouble chi_regular(cdouble lambda, cdouble mu, double gnorm2) {
    return std::exp((std::conj(lambda) * mu - 0.5 * (std::norm(lambda) + std::norm(mu))) *
                    gnorm2);
}

inline cdouble chi(const SpectralDecomposition& dec, int i, int j, double gnorm2,
                   Regularity reg) {
    if (i < 0 || j < 0 || i >= dec.count() || j >= dec.count())
        throw DimensionError("chi: cluster index out of range");
    if (i == j) return cdouble(1.0, 0.0);
    if (reg == Regularity::Singular) return cdouble(0.0, 0.0);
    return chi_regular(dec.eigenvalues[i], dec.eigenvalues[j], gnorm2);
}

/* Operator-valued matrix measure of an observable against a spectral
 * decomposition: block(i, j) = P_i A P_j, so that
 * <f(B) psi, A h(B) phi> = sum_ij conj(f(l_i)) h(l_j) <psi, block(i,j) phi>.
 * Entries at or below clean_tol (default 64 eps |A|) are artifacts of the
 * unitary round trip; dropping them turns exact selection rules into exact
 * zero blocks. Pass 0 to keep the dust. */
struct NoncommMeasure {
    SpectralDecomposition spectral;
    std::vector<Eigen::MatrixXcd> blocks;
    double clean_tol = 0.0;

    int count() const { return spectral.count(); }
    const Eigen::MatrixXcd& block(int i, int j) const {
        if (i < 0 || j < 0 || i >= count() || j >= count())
            throw DimensionError("NoncommMeasure::block: index out of range");
        return blocks[std::size_t(i) * std::size_t(count()) + std::size_t(j)];
    }
};

inline NoncommMeasure noncomm_measure(const Eigen::MatrixXcd& a,
                                      const SpectralDecomposition& dec,
                                      double clean_tol = -1.0) {
    const int n = dec.dim();
    if (a.rows() != n || a.cols() != n)
        throw DimensionError("noncomm_measure: observable size does not match the decomposition");
    if (clean_tol < 0.0) clean_tol = 64.0 * std::numeric_limits<double>::epsilon() * a.norm();

    NoncommMeasure m;
    m.spectral = dec;
    m.clean_tol = clean_tol;
    m.blocks.reserve(std::size_t(dec.count()) * std::size_t(dec.count()));
    for (int i = 0; i < dec.count(); ++i)
        for (int j = 0; j < dec.count(); ++j) {
            Eigen::MatrixXcd blk = dec.projectors[i] * a * dec.projectors[j];
            if (clean_tol > 0.0)
                blk = blk.unaryExpr([&](cdouble v) {
                    return std::abs(v) <= clean_tol ? cdouble(0.0, 0.0) : v;
                });
            m.blocks.push_back(std::move(blk));
        }
    return m;
}

inline cdouble measure_mass(const NoncommMeasure& m, int i, int j, const Eigen::VectorXcd& psi,
                            const Eigen::VectorXcd& phi) {
    if (psi.size() != m.spectral.dim() || phi.size() != m.spectral.dim())
        throw DimensionError("measure_mass: vector size does not match the decomposition");
    return psi.dot(m.block(i, j) * phi);
}

/* The renormalized observable form: the double sum over spectral clusters
 *   Q_A = sum_ij chi(l_i, l_j) (P_i A P_j) (x) (E_j^H E_i),
 * with E_i = exp of the annihilator of l_i g. The j-cluster acts on the bra
 * side of the Fock factor: that crossing is what the creation-route oracle
 * in the tests pins down. Annihilation only, so every entry is exact on the
 * truncated space. */
inline Eigen::MatrixXcd renorm_spin_form(const Eigen::MatrixXcd& a, const DressedSpace& ds,
                                         double cluster_tol = -1.0, double clean_tol = -1.0) {
    const int sd = ds.spin.dim();
    const int fd = ds.basis->dim();
    if (a.rows() != sd || a.cols() != sd)
        throw DimensionError("renorm_spin_form: observable size does not match the spin space");
    if ((a - a.adjoint()).norm() > 1e-12 * a.norm())
        throw InvariantError("renorm_spin_form: observable must be hermitian");

    SpectralDecomposition dec = spectral_decompose(ds.spin.B, cluster_tol);
    NoncommMeasure meas = noncomm_measure(a, dec, clean_tol);
    double gnorm2 = ds.g.regular() ? weighted_norm_sq(ds.g, ds.grid) : 0.0;

    std::vector<Eigen::MatrixXcd> e(dec.count());
    for (int i = 0; i < dec.count(); ++i) {
        FormFactor gi;
        gi.amplitudes = dec.eigenvalues[i] * ds.g.amplitudes;
        gi.regularity = ds.g.regularity; // annihilation side: fine either way
        e[i] = Eigen::MatrixXcd(exp_annihilate(gi, *ds.basis, ds.grid));
    }

    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(sd * fd, sd * fd);
    for (int i = 0; i < dec.count(); ++i)
        for (int j = 0; j < dec.count(); ++j) {
            const Eigen::MatrixXcd& blk = meas.block(i, j);
            if (blk.cwiseAbs().maxCoeff() == 0.0) continue;
            cdouble x = chi(dec, i, j, gnorm2, ds.g.regularity);
            if (x == cdouble(0.0, 0.0)) continue;
            out += x * kron_dense(blk, (e[j].adjoint() * e[i]).eval());
        }
    return out;
}

/* Two-sided dressing of a spin observable: D^H (T (x) I) D. For T = Id this
 * is the Gram matrix itself. */
inline Eigen::MatrixXcd dressed_observable(const Eigen::MatrixXcd& t, const DressedSpace& ds) {
    const int sd = ds.spin.dim();
    const int fd = ds.basis->dim();
    if (t.rows() != sd || t.cols() != sd)
        throw DimensionError("dressed_observable: observable size does not match the spin space");
    Eigen::MatrixXcd dd(ds.D);
    SparseOperator id(fd, fd);
    id.setIdentity();
    return dd.adjoint() * (kron_sparse(t, id) * dd);
}

} // namespace sbren

#endif
