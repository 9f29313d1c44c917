#ifndef SBREN_FOCK_HPP
#define SBREN_FOCK_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "sbren/grid.hpp"

namespace sbren {

/* Occupation basis of the truncated symmetric Fock space over the grid modes:
 * all multi-indices n with sum(n) <= max_total, ordered by grade (total
 * occupation) and lexicographically inside each grade. Index 0 is the vacuum.
 * Coordinates are taken against the weight-normalized one-particle modes, so
 * the free inner product of coordinate vectors is the plain dot product and
 * all quadrature weights live inside the operator matrix elements. */
struct FockBasis {
    int num_modes = 0;
    int max_total = 0;
    std::vector<std::vector<int>> states;
    std::vector<int> grade_offsets; // size max_total + 2, block g = [off[g], off[g+1])

    int dim() const { return int(states.size()); }

    int grade_of(int index) const { return grades_[index]; }

    int index_of(const std::vector<int>& occ) const {
        auto it = lookup_.find(pack(occ));
        return it == lookup_.end() ? -1 : it->second;
    }

    std::uint64_t descriptor_hash() const {
        std::uint64_t h = fnv1a(&num_modes, sizeof num_modes);
        h = fnv1a(&max_total, sizeof max_total, h);
        for (const auto& s : states) h = fnv1a(s.data(), s.size() * sizeof(int), h);
        return h;
    }

    // internal, filled by build_basis
    std::vector<int> grades_;
    std::unordered_map<std::string, int> lookup_;

    static std::string pack(const std::vector<int>& occ) {
        std::string key(occ.size(), '\0');
        for (std::size_t i = 0; i < occ.size(); ++i) key[i] = char(occ[i]);
        return key;
    }
};

inline FockBasis build_basis(int num_modes, int max_total, std::int64_t cap = 200000) {
    if (num_modes < 1) throw ConfigError("build_basis: need at least one mode");
    if (max_total < 0) throw ConfigError("build_basis: max_total must be >= 0");
    double d = binomial(num_modes + max_total, num_modes);
    if (d > double(cap))
        throw BasisCapError("build_basis: basis of " + std::to_string(std::llround(d)) +
                            " states exceeds the cap of " + std::to_string(cap) +
                            " (raise the cap explicitly to proceed)");

    FockBasis b;
    b.num_modes = num_modes;
    b.max_total = max_total;
    b.grade_offsets.assign(max_total + 2, 0);

    std::vector<int> occ(num_modes, 0);
    // enumerate compositions of t in ascending lexicographic order
    auto emit = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == num_modes - 1) {
            occ[pos] = remaining;
            b.states.push_back(occ);
            return;
        }
        for (int n = 0; n <= remaining; ++n) {
            occ[pos] = n;
            self(self, pos + 1, remaining - n);
        }
    };
    for (int t = 0; t <= max_total; ++t) {
        b.grade_offsets[t] = int(b.states.size());
        emit(emit, 0, t);
    }
    b.grade_offsets[max_total + 1] = int(b.states.size());

    b.grades_.resize(b.states.size());
    for (int g = 0; g <= max_total; ++g)
        for (int i = b.grade_offsets[g]; i < b.grade_offsets[g + 1]; ++i) b.grades_[i] = g;
    b.lookup_.reserve(b.states.size());
    for (int i = 0; i < b.dim(); ++i) b.lookup_.emplace(FockBasis::pack(b.states[i]), i);
    return b;
}

inline void check_operator_inputs(const FormFactor& f, const FockBasis& basis,
                                  const ModeGrid& grid, const char* who) {
    grid.validate();
    check_sizes(f, grid, who);
    if (basis.num_modes != grid.size())
        throw DimensionError(std::string(who) + ": basis has " + std::to_string(basis.num_modes) +
                             " modes, grid has " + std::to_string(grid.size()));
}

/* a(f): lowers each occupied mode with factor sqrt(n_j), carrying the
 * quadrature weight and the conjugated amplitude (duality convention, so a
 * Singular f is fine here: only pairings of f ever enter). */
inline SparseOperator annihilate(const FormFactor& f, const FockBasis& basis,
                                 const ModeGrid& grid) {
    check_operator_inputs(f, basis, grid, "annihilate");
    std::vector<Eigen::Triplet<cdouble>> trips;
    std::vector<int> occ;
    for (int i = basis.grade_offsets[1]; i < basis.dim(); ++i) {
        occ = basis.states[i];
        for (int j = 0; j < basis.num_modes; ++j) {
            if (occ[j] == 0) continue;
            cdouble amp = std::conj(f.amplitudes[j]);
            if (amp == cdouble(0.0, 0.0)) continue;
            occ[j] -= 1;
            int tgt = basis.index_of(occ);
            occ[j] += 1;
            trips.emplace_back(tgt, i, std::sqrt(double(occ[j]) * grid.modes[j].weight) * amp);
        }
    }
    SparseOperator a(basis.dim(), basis.dim());
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
}

/* a*(f): raises grade with factor sqrt(n_j + 1); anything that would leave
 * the truncation is dropped (the loss is what creation_truncation_loss
 * reports). Adjoint of annihilate(f) in the free metric below the cut. */
inline SparseOperator create(const FormFactor& f, const FockBasis& basis, const ModeGrid& grid) {
    check_operator_inputs(f, basis, grid, "create");
    if (!f.regular())
        throw InvariantError("create: singular form factors do not define a creation operator");
    std::vector<Eigen::Triplet<cdouble>> trips;
    std::vector<int> occ;
    for (int i = 0; i < basis.grade_offsets[basis.max_total]; ++i) {
        occ = basis.states[i];
        for (int j = 0; j < basis.num_modes; ++j) {
            cdouble amp = f.amplitudes[j];
            if (amp == cdouble(0.0, 0.0)) continue;
            occ[j] += 1;
            int tgt = basis.index_of(occ);
            double n = occ[j];
            occ[j] -= 1;
            trips.emplace_back(tgt, i, std::sqrt(n * grid.modes[j].weight) * amp);
        }
    }
    SparseOperator c(basis.dim(), basis.dim());
    c.setFromTriplets(trips.begin(), trips.end());
    return c;
}

/* Norm of the exactly-dropped part of a*(f) psi: only the top-grade block of
 * psi creates out of the truncation, with creation norm <= |f| sqrt(N+1). */
inline double creation_truncation_loss(const FormFactor& f, const FockVector& psi,
                                       const FockBasis& basis, const ModeGrid& grid) {
    check_operator_inputs(f, basis, grid, "creation_truncation_loss");
    int lo = basis.grade_offsets[basis.max_total];
    double topn = psi.segment(lo, basis.dim() - lo).norm();
    return std::sqrt(weighted_norm_sq(f, grid, 0.0) * double(basis.max_total + 1)) * topn;
}

/* dGamma of the grid dispersion: diagonal sum_j n_j omega_j. */
inline SparseOperator second_quantize(const ModeGrid& grid, const FockBasis& basis) {
    grid.validate();
    if (basis.num_modes != grid.size())
        throw DimensionError("second_quantize: basis/grid size mismatch");
    SparseOperator d(basis.dim(), basis.dim());
    std::vector<Eigen::Triplet<cdouble>> trips;
    for (int i = 0; i < basis.dim(); ++i) {
        double e = 0.0;
        for (int j = 0; j < basis.num_modes; ++j) e += basis.states[i][j] * grid.modes[j].omega;
        if (e != 0.0) trips.emplace_back(i, i, e);
    }
    d.setFromTriplets(trips.begin(), trips.end());
    return d;
}

inline SparseOperator number_op(const FockBasis& basis) {
    SparseOperator d(basis.dim(), basis.dim());
    std::vector<Eigen::Triplet<cdouble>> trips;
    for (int i = 1; i < basis.dim(); ++i) trips.emplace_back(i, i, double(basis.grade_of(i)));
    d.setFromTriplets(trips.begin(), trips.end());
    return d;
}

/* exp of a nilpotent grade-mover: the series ends at the grade cut, so this
 * is exact, not an approximation, for grade-lowering X. */
inline SparseOperator nilpotent_exp(const SparseOperator& x, int max_power) {
    SparseOperator acc(x.rows(), x.cols());
    acc.setIdentity();
    SparseOperator term(x.rows(), x.cols());
    term.setIdentity();
    for (int k = 1; k <= max_power; ++k) {
        term = SparseOperator(x * term) * cdouble(1.0 / k, 0.0);
        term.prune(cdouble(0.0, 0.0));
        if (term.nonZeros() == 0) break;
        acc += term;
    }
    acc.makeCompressed();
    return acc;
}

inline SparseOperator exp_annihilate(const FormFactor& g, const FockBasis& basis,
                                     const ModeGrid& grid) {
    return nilpotent_exp(annihilate(g, basis, grid), basis.max_total);
}

inline SparseOperator exp_create(const FormFactor& g, const FockBasis& basis,
                                 const ModeGrid& grid) {
    if (!g.regular())
        throw InvariantError("exp_create: singular form factors do not define creation");
    return nilpotent_exp(create(g, basis, grid), basis.max_total);
}

/* Tail of the creation exponential beyond the cut, for a unit vector of grade
 * p: sum_{k > N - p} |g|^k sqrt(binom(k+p, p) / k!). Grade-p creation grows
 * the norm by at most sqrt((p+1)...(p+k)), which is where the binomial comes
 * from; the series decays factorially so 200 terms is far more than enough. */
inline double creation_tail_bound(double g_norm, int grade, int max_total) {
    if (g_norm == 0.0) return 0.0;
    double t = 1.0, sum = 0.0;
    for (int k = 1; k <= max_total - grade + 200; ++k) {
        t *= g_norm * std::sqrt(double(k + grade)) / double(k);
        if (k > max_total - grade) {
            sum += t;
            if (t < 1e-300 || t < 1e-17 * sum) break;
        }
    }
    return sum;
}

inline double creation_tail_bound(const FormFactor& g, const ModeGrid& grid,
                                  const FockVector& psi, const FockBasis& basis) {
    double gn = std::sqrt(weighted_norm_sq(g, grid, 0.0));
    int p = 0;
    for (int grade = basis.max_total; grade >= 1; --grade) {
        int lo = basis.grade_offsets[grade];
        if (psi.segment(lo, basis.grade_offsets[grade + 1] - lo).norm() > 0.0) {
            p = grade;
            break;
        }
    }
    return psi.norm() * creation_tail_bound(gn, p, basis.max_total);
}

/* Coefficients of the exponential vector: product over modes of
 * (sqrt(w_j) f_j)^{n_j} / sqrt(n_j!). Equals exp_create(f) applied to the
 * vacuum, computed directly. */
inline FockVector exponential_vector(const FormFactor& f, const FockBasis& basis,
                                     const ModeGrid& grid) {
    check_operator_inputs(f, basis, grid, "exponential_vector");
    if (!f.regular())
        throw InvariantError("exponential_vector: requires a regular form factor");
    Eigen::VectorXcd c(basis.num_modes);
    for (int j = 0; j < basis.num_modes; ++j)
        c[j] = std::sqrt(grid.modes[j].weight) * f.amplitudes[j];
    FockVector v(basis.dim());
    for (int i = 0; i < basis.dim(); ++i) {
        cdouble coeff(1.0, 0.0);
        for (int j = 0; j < basis.num_modes; ++j) {
            int n = basis.states[i][j];
            for (int k = 1; k <= n; ++k) coeff *= c[j] / std::sqrt(double(k));
        }
        v[i] = coeff;
    }
    return v;
}

inline int top_grade(const FockVector& psi, const FockBasis& basis, double tol = 0.0) {
    for (int grade = basis.max_total; grade >= 1; --grade) {
        int lo = basis.grade_offsets[grade];
        if (psi.segment(lo, basis.grade_offsets[grade + 1] - lo).norm() > tol) return grade;
    }
    return 0;
}

/* Checks the standard relative bounds of annihilation and creation against
 * the field energy: |a(f) psi|   <= |w^{-1/2} f| |dG^{1/2} psi|
 *                   |a*(f) psi|  <= |w^{-1/2} f| |dG^{1/2} psi| + |f| |psi|.
 * Truncation only helps (it removes norm from the left sides). */
struct RelativeBoundReport {
    double lhs_annihilate = 0.0, rhs_annihilate = 0.0;
    double lhs_create = 0.0, rhs_create = 0.0;
    bool ok() const {
        double s1 = 1.0 + 1e-12, eps = 1e-14;
        return lhs_annihilate <= rhs_annihilate * s1 + eps && lhs_create <= rhs_create * s1 + eps;
    }
};

inline RelativeBoundReport check_relative_bounds(const FormFactor& f, const FockVector& psi,
                                                 const FockBasis& basis, const ModeGrid& grid) {
    check_operator_inputs(f, basis, grid, "check_relative_bounds");
    SparseOperator dG = second_quantize(grid, basis);
    double field_half = std::sqrt(std::abs((psi.adjoint() * (dG * psi)).value().real()));
    double f_ir = std::sqrt(weighted_norm_sq(f, grid, -0.5));
    double f_l2 = std::sqrt(weighted_norm_sq(f, grid, 0.0));

    RelativeBoundReport rep;
    rep.lhs_annihilate = (annihilate(f, basis, grid) * psi).norm();
    rep.rhs_annihilate = f_ir * field_half;
    rep.lhs_create = (create(f, basis, grid) * psi).norm();
    rep.rhs_create = f_ir * field_half + f_l2 * psi.norm();
    return rep;
}

} // namespace sbren

#endif
