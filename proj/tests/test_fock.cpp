#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "sbren/fock.hpp"

using namespace sbren;
using Catch::Approx;

namespace {

ModeGrid make_grid(std::vector<Mode> modes) {
    ModeGrid g;
    g.dimension_d = 1;
    g.modes = std::move(modes);
    return g;
}

FormFactor ff(std::vector<cdouble> amps, Regularity reg = Regularity::Regular) {
    FormFactor f;
    f.amplitudes = Eigen::Map<Eigen::VectorXcd>(amps.data(), amps.size());
    f.regularity = reg;
    return f;
}

Eigen::VectorXcd rand_vec(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXcd x(n);
    for (int i = 0; i < n; ++i) x[i] = cdouble(u(rng), u(rng));
    return x;
}

// Independent single-mode reference: e^{a(g)} on occupation n has
// <n-k| component  conj(gamma)^k sqrt(n!/(n-k)!) / k!   (gamma = sqrt(w) g amplitude).
Eigen::MatrixXcd single_mode_exp_annihilate(cdouble gamma, int nmax) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(nmax + 1, nmax + 1);
    for (int n = 0; n <= nmax; ++n) {
        double fact_k = 1.0;
        for (int k = 0; k <= n; ++k) {
            if (k) fact_k *= k;
            double ladder = 1.0; // sqrt(n (n-1) ... (n-k+1))
            for (int i = 0; i < k; ++i) ladder *= std::sqrt(double(n - i));
            m(n - k, n) += std::pow(std::conj(gamma), k) * ladder / fact_k;
        }
    }
    return m;
}

double chop(double x) { return std::abs(x) < 1e-300 ? 0.0 : x; }

} // namespace

TEST_CASE("basis_dimensions_and_ordering") {
    FockBasis b0 = build_basis(3, 0);
    CHECK(b0.dim() == 1);
    CHECK(b0.states[0] == std::vector<int>({0, 0, 0}));

    FockBasis b1 = build_basis(1, 5);
    CHECK(b1.dim() == 6);
    for (int n = 0; n <= 5; ++n) CHECK(b1.states[n] == std::vector<int>({n}));

    FockBasis b2 = build_basis(2, 2);
    REQUIRE(b2.dim() == 6);
    CHECK(b2.states[0] == std::vector<int>({0, 0}));
    CHECK(b2.states[1] == std::vector<int>({0, 1}));
    CHECK(b2.states[2] == std::vector<int>({1, 0}));
    CHECK(b2.states[3] == std::vector<int>({0, 2}));
    CHECK(b2.states[4] == std::vector<int>({1, 1}));
    CHECK(b2.states[5] == std::vector<int>({2, 0}));

    FockBasis b3 = build_basis(4, 3);
    CHECK(b3.dim() == 35); // C(7,3)
    for (int i = 0; i < b3.dim(); ++i) {
        int total = 0;
        for (int n : b3.states[i]) {
            CHECK(n >= 0);
            total += n;
        }
        CHECK(total <= 3);
        CHECK(b3.grade_of(i) == total);
        CHECK(b3.index_of(b3.states[i]) == i);
        if (i) {
            int prev = 0;
            for (int n : b3.states[i - 1]) prev += n;
            bool graded_ok = prev < total || (prev == total && b3.states[i - 1] < b3.states[i]);
            CHECK(graded_ok);
        }
    }
    // grade blocks are contiguous: offsets delimit them
    REQUIRE(int(b3.grade_offsets.size()) == 5);
    CHECK(b3.grade_offsets[0] == 0);
    CHECK(b3.grade_offsets[4] == 35);
    for (int g = 0; g <= 3; ++g)
        for (int i = b3.grade_offsets[g]; i < b3.grade_offsets[g + 1]; ++i)
            CHECK(b3.grade_of(i) == g);

    // deterministic rebuild
    FockBasis b3b = build_basis(4, 3);
    CHECK(b3.states == b3b.states);
    CHECK(b3.descriptor_hash() == b3b.descriptor_hash());
}

TEST_CASE("basis_cap_enforced") {
    CHECK_THROWS_AS(build_basis(50, 10), BasisCapError);
    CHECK_THROWS_AS(build_basis(12, 12, 100000), BasisCapError);
    CHECK_NOTHROW(build_basis(12, 3, 1000));
    CHECK_THROWS_AS(build_basis(0, 3), ConfigError);
    CHECK_THROWS_AS(build_basis(2, -1), ConfigError);
}

TEST_CASE("annihilate_single_mode_ladder") {
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}});
    FockBasis basis = build_basis(1, 5);
    SparseOperator a = annihilate(ff({1.0}), basis, grid);
    Eigen::MatrixXcd ad(a);
    for (int n = 1; n <= 5; ++n) {
        CHECK(ad(n - 1, n).real() == Approx(std::sqrt(double(n))).margin(1e-15));
        CHECK(ad(n - 1, n).imag() == 0.0);
    }
    // vacuum column is zero, everything else off the first superdiagonal is zero
    CHECK(ad.col(0).norm() == 0.0);
    double off = 0.0;
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c)
            if (c != r + 1) off += std::abs(ad(r, c));
    CHECK(off == 0.0);
}

TEST_CASE("annihilate_weights_and_conjugation") {
    // weight 4: a(f)|1> = sqrt(4) conj(f) |0>
    ModeGrid grid = make_grid({Mode{1.0, 4.0, 1.0}});
    FockBasis basis = build_basis(1, 2);
    SparseOperator a = annihilate(ff({cdouble(0.0, 1.0)}), basis, grid);
    Eigen::MatrixXcd ad(a);
    CHECK(std::abs(ad(0, 1) - cdouble(0.0, -2.0)) < 1e-15);
    // singular duality factors are allowed in the annihilation slot
    SparseOperator as = annihilate(ff({cdouble(2.0, 0.0)}, Regularity::Singular), basis, grid);
    CHECK(std::abs(Eigen::MatrixXcd(as)(0, 1) - cdouble(4.0, 0.0)) < 1e-15);
}

TEST_CASE("create_is_adjoint_and_kills_top_grade") {
    ModeGrid grid = make_grid({Mode{1.0, 0.5, 1.0}, Mode{2.0, 2.0, 2.0}});
    FockBasis basis = build_basis(2, 3);
    std::mt19937_64 rng(11);
    FormFactor f;
    f.amplitudes = rand_vec(2, rng);

    Eigen::MatrixXcd A(annihilate(f, basis, grid));
    Eigen::MatrixXcd C(create(f, basis, grid));
    CHECK((C - A.adjoint()).cwiseAbs().maxCoeff() < 1e-14);

    // top grade maps out of the truncation: those columns are zero
    for (int i = basis.grade_offsets[3]; i < basis.grade_offsets[4]; ++i)
        CHECK(C.col(i).norm() == 0.0);

    // grade raising pattern: entries only from grade p to p+1
    for (int c = 0; c < basis.dim(); ++c)
        for (int r = 0; r < basis.dim(); ++r)
            if (std::abs(C(r, c)) > 0.0)
                CHECK(basis.grade_of(r) == basis.grade_of(c) + 1);

    CHECK_THROWS_AS(create(ff({1.0, 1.0}, Regularity::Singular), basis, grid), InvariantError);

    // tracked loss: dropping a top-grade unit vector costs |f| sqrt(N+1)
    FockVector top = FockVector::Zero(basis.dim());
    top[basis.grade_offsets[3]] = 1.0;
    double loss = creation_truncation_loss(f, top, basis, grid);
    double fnorm = std::sqrt(weighted_norm_sq(f, grid, 0.0));
    CHECK(loss == Approx(fnorm * 2.0).epsilon(1e-12)); // sqrt(3+1)
    FockVector low = FockVector::Zero(basis.dim());
    low[0] = 1.0;
    CHECK(creation_truncation_loss(f, low, basis, grid) == 0.0);
}

TEST_CASE("ccr_holds_below_top_grade") {
    ModeGrid grid = radial_grid(3, 0.2, 2.0, 3);
    FockBasis basis = build_basis(grid.size(), 3);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        FormFactor f, g;
        f.amplitudes = rand_vec(grid.size(), rng);
        g.amplitudes = rand_vec(grid.size(), rng);
        Eigen::MatrixXcd A(annihilate(f, basis, grid));
        Eigen::MatrixXcd Cg(create(g, basis, grid));
        Eigen::MatrixXcd comm = A * Cg - Cg * A;
        cdouble ip = mode_inner(f.amplitudes, g.amplitudes, grid);
        int cut = basis.grade_offsets[3]; // states of grade <= N-1
        Eigen::MatrixXcd low = comm.topLeftCorner(cut, cut)
            - ip * Eigen::MatrixXcd::Identity(cut, cut);
        double scale = std::sqrt(weighted_norm_sq(f, grid, 0.0) * weighted_norm_sq(g, grid, 0.0));
        CHECK(low.cwiseAbs().maxCoeff() < 1e-13 * scale);
    }
}

TEST_CASE("second_quantize_diagonal_and_number") {
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}, Mode{2.0, 3.0, 2.0}});
    FockBasis basis = build_basis(2, 2);
    Eigen::MatrixXcd dG(second_quantize(grid, basis));
    Eigen::MatrixXcd num(number_op(basis));
    for (int i = 0; i < basis.dim(); ++i) {
        double e = basis.states[i][0] * 1.0 + basis.states[i][1] * 2.0;
        double n = basis.states[i][0] + basis.states[i][1];
        CHECK(dG(i, i).real() == Approx(e).margin(1e-15));
        CHECK(num(i, i).real() == Approx(n).margin(1e-15));
    }
    CHECK(dG.cwiseAbs().sum() == Approx(dG.diagonal().cwiseAbs().sum()).margin(1e-15));

    // weights do not enter the diagonal (occupation energies, not quadrature)
    ModeGrid grid2 = make_grid({Mode{1.0, 7.0, 1.0}, Mode{2.0, 0.1, 2.0}});
    CHECK((Eigen::MatrixXcd(second_quantize(grid2, basis)) - dG).norm() == 0.0);

    // single mode spectrum {0, 1, 2}
    ModeGrid g1 = make_grid({Mode{1.0, 1.0, 1.0}});
    FockBasis b1 = build_basis(1, 2);
    Eigen::MatrixXcd d1(second_quantize(g1, b1));
    CHECK(d1(0, 0).real() == 0.0);
    CHECK(d1(1, 1).real() == 1.0);
    CHECK(d1(2, 2).real() == 2.0);
}

TEST_CASE("exp_annihilate_single_mode_matches_hand_expansion") {
    // spec example: gamma = 1, column of |2> is (1/sqrt2, sqrt2, 1)
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}});
    FockBasis basis = build_basis(1, 6);
    Eigen::MatrixXcd E(exp_annihilate(ff({1.0}), basis, grid));
    CHECK(E(0, 2).real() == Approx(1.0 / std::sqrt(2.0)).margin(1e-14));
    CHECK(E(1, 2).real() == Approx(std::sqrt(2.0)).margin(1e-14));
    CHECK(E(2, 2).real() == Approx(1.0).margin(1e-15));

    // complex amplitude, weight 2.25: gamma = sqrt(w) g
    ModeGrid gridw = make_grid({Mode{1.0, 2.25, 1.0}});
    cdouble g(0.5, 0.2);
    Eigen::MatrixXcd Ew(exp_annihilate(ff({g}), basis, gridw));
    Eigen::MatrixXcd ref = single_mode_exp_annihilate(1.5 * g, 6);
    CHECK((Ew - ref).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("exp_annihilate_structure_group_law_injectivity") {
    ModeGrid grid = radial_grid(3, 0.3, 3.0, 4);
    FockBasis basis = build_basis(grid.size(), 4);
    std::mt19937_64 rng(23);
    FormFactor g1, g2, sum;
    g1.amplitudes = 0.4 * rand_vec(grid.size(), rng);
    g2.amplitudes = 0.4 * rand_vec(grid.size(), rng);
    sum.amplitudes = g1.amplitudes + g2.amplitudes;

    Eigen::MatrixXcd E1(exp_annihilate(g1, basis, grid));
    Eigen::MatrixXcd E2(exp_annihilate(g2, basis, grid));
    Eigen::MatrixXcd Es(exp_annihilate(sum, basis, grid));

    // unit diagonal, strictly grade-lowering off-diagonal part
    for (int i = 0; i < basis.dim(); ++i) CHECK(std::abs(E1(i, i) - 1.0) < 1e-15);
    for (int c = 0; c < basis.dim(); ++c)
        for (int r = 0; r < basis.dim(); ++r)
            if (r != c && std::abs(E1(r, c)) > 0.0)
                CHECK(basis.grade_of(r) < basis.grade_of(c));

    // commuting one-parameter family: E(g1) E(g2) = E(g1 + g2) exactly
    CHECK((E1 * E2 - Es).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((E1 * E2 - E2 * E1).cwiseAbs().maxCoeff() < 1e-13);

    // unit determinant and injectivity on a larger instance
    ModeGrid grid4 = radial_grid(3, 0.3, 3.0, 8);
    FockBasis basis4 = build_basis(4, 6, 300); // first 4 modes worth is plenty
    ModeGrid g4 = make_grid({grid4.modes[0], grid4.modes[2], grid4.modes[5], grid4.modes[7]});
    FormFactor big;
    big.amplitudes = rand_vec(4, rng);
    big.amplitudes *= 2.0 / std::sqrt(weighted_norm_sq(big, g4, 0.0));
    Eigen::MatrixXcd Eb(exp_annihilate(big, basis4, g4));
    CHECK(std::abs(weighted_norm_sq(big, g4, 0.0) - 4.0) < 1e-12);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(Eb);
    CHECK(svd.singularValues().minCoeff() > 1e-10);
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(Eb);
    CHECK(std::abs(lu.determinant() - 1.0) < 1e-9);
}

TEST_CASE("exp_create_adjoint_norm_identity_and_tail") {
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}, Mode{1.5, 2.0, 2.0}});
    FockBasis basis = build_basis(2, 12, 200000);
    FormFactor g;
    g.amplitudes.resize(2);
    g.amplitudes << cdouble(0.3, 0.1), cdouble(0.2, -0.2); // |g|^2 = 0.1 + 2*0.08 = 0.26
    double gn2 = weighted_norm_sq(g, grid, 0.0);

    Eigen::MatrixXcd K(exp_create(g, basis, grid));
    Eigen::MatrixXcd E(exp_annihilate(g, basis, grid));
    CHECK((K - E.adjoint()).cwiseAbs().maxCoeff() < 1e-13);

    // |e^{a*(g)} vacuum|^2 = e^{|g|^2} up to the (tiny) truncation tail
    FockVector vac = FockVector::Zero(basis.dim());
    vac[0] = 1.0;
    double n2 = (K * vac).squaredNorm();
    CHECK(n2 == Approx(std::exp(gn2)).epsilon(1e-10));

    CHECK_THROWS_AS(exp_create(ff({1.0, 1.0}, Regularity::Singular), basis, grid),
                    InvariantError);
}

TEST_CASE("creation_tail_bound_dominates_and_decreases") {
    // single mode: e^{a*(g)} vacuum has exact coefficients g^k / sqrt(k!),
    // so the dropped norm is known in closed form and the bound must cover it.
    double gnorm = 0.8;
    for (int N : {4, 6, 8, 10}) {
        double dropped_sq = 0.0;
        double t = 1.0; // g^{2k} / k!
        for (int k = 1; k <= 60; ++k) {
            t *= gnorm * gnorm / k;
            if (k > N) dropped_sq += t;
        }
        double bound = creation_tail_bound(gnorm, 0, N);
        CHECK(bound >= std::sqrt(chop(dropped_sq)));
        CHECK(bound < 10.0 * std::sqrt(chop(dropped_sq)) + 1e-12);
        CHECK(creation_tail_bound(gnorm, 0, N + 2) < bound);
        // higher starting grade only worsens the tail
        CHECK(creation_tail_bound(gnorm, 2, N) >= bound);
    }

    // vector form: picks the top occupied grade
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}});
    FockBasis basis = build_basis(1, 6);
    FormFactor g = ff({cdouble(0.5, 0.0)});
    FockVector psi = FockVector::Zero(basis.dim());
    psi[2] = 2.0; // grade 2, norm 2
    double vb = creation_tail_bound(g, grid, psi, basis);
    CHECK(vb == Approx(2.0 * creation_tail_bound(0.5, 2, 6)).epsilon(1e-12));
}

TEST_CASE("exponential_vector_coefficients_and_eigenrelation") {
    ModeGrid grid = make_grid({Mode{1.0, 1.0, 1.0}});
    FockBasis basis = build_basis(1, 4);
    FockVector eps = exponential_vector(ff({1.0}), basis, grid);
    CHECK(std::abs(eps[0] - 1.0) < 1e-15);
    CHECK(std::abs(eps[1] - 1.0) < 1e-15);
    CHECK(std::abs(eps[2] - 1.0 / std::sqrt(2.0)) < 1e-15);
    CHECK(std::abs(eps[3] - 1.0 / std::sqrt(6.0)) < 1e-15);
    CHECK(std::abs(eps[4] - 1.0 / std::sqrt(24.0)) < 1e-15);

    // multimode with weights: agrees with the creation-series route exactly
    ModeGrid grid2 = make_grid({Mode{1.0, 0.5, 1.0}, Mode{2.0, 3.0, 2.0}});
    FockBasis basis2 = build_basis(2, 10, 200000);
    std::mt19937_64 rng(3);
    FormFactor f;
    f.amplitudes = 0.35 * rand_vec(2, rng);
    FockVector vac = FockVector::Zero(basis2.dim());
    vac[0] = 1.0;
    FockVector via_series = exp_create(f, basis2, grid2) * vac;
    FockVector direct = exponential_vector(f, basis2, grid2);
    CHECK((via_series - direct).norm() < 1e-13);

    // norm identity sum_t |f|^{2t} / t! as an independent oracle
    double fn2 = weighted_norm_sq(f, grid2, 0.0);
    double ref = 0.0, term = 1.0;
    for (int t = 0; t <= 10; ++t) {
        ref += term;
        term *= fn2 / (t + 1);
    }
    CHECK(direct.squaredNorm() == Approx(ref).epsilon(1e-12));

    // a(h) eps(f) = <h,f> eps(f) after dropping the top grade (exact in truncation)
    FormFactor h;
    h.amplitudes = 0.4 * rand_vec(2, rng);
    FockVector lhs = annihilate(h, basis2, grid2) * direct;
    cdouble hf = mode_inner(h.amplitudes, f.amplitudes, grid2);
    FockVector rhs = hf * direct;
    for (int i = basis2.grade_offsets[10]; i < basis2.grade_offsets[11]; ++i) rhs[i] = 0.0;
    CHECK((lhs - rhs).norm() < 1e-13);

    // full eigenrelation with the truncated exponential: tail-sized error only
    FockVector full = exp_annihilate(h, basis2, grid2) * direct;
    FockVector expval = std::exp(hf) * direct;
    CHECK((full - expval).norm() < 1e-7);

    CHECK_THROWS_AS(exponential_vector(ff({1.0, 1.0}, Regularity::Singular), basis2, grid2),
                    InvariantError);
}

TEST_CASE("relative_bounds_hold_with_equality_case") {
    ModeGrid grid = radial_grid(3, 0.2, 2.0, 3);
    FockBasis basis = build_basis(grid.size(), 4, 200000);
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        FormFactor f;
        f.amplitudes = rand_vec(grid.size(), rng);
        FockVector psi = rand_vec(basis.dim(), rng);
        RelativeBoundReport rep = check_relative_bounds(f, psi, basis, grid);
        CHECK(rep.ok());
        CHECK(rep.lhs_annihilate <= rep.rhs_annihilate * (1.0 + 1e-12) + 1e-14);
        CHECK(rep.lhs_create <= rep.rhs_create * (1.0 + 1e-12) + 1e-14);
    }

    // equality: single mode, psi = |1>
    ModeGrid g1 = make_grid({Mode{2.0, 1.5, 1.0}});
    FockBasis b1 = build_basis(1, 3);
    FockVector one = FockVector::Zero(b1.dim());
    one[1] = 1.0;
    RelativeBoundReport rep = check_relative_bounds(ff({cdouble(0.7, 0.4)}), one, b1, g1);
    CHECK(rep.lhs_annihilate == Approx(rep.rhs_annihilate).epsilon(1e-12));
}

TEST_CASE("top_grade_detection") {
    FockBasis basis = build_basis(2, 3);
    FockVector psi = FockVector::Zero(basis.dim());
    CHECK(top_grade(psi, basis) == 0);
    psi[0] = 1.0;
    CHECK(top_grade(psi, basis) == 0);
    psi[basis.grade_offsets[2]] = 0.5;
    CHECK(top_grade(psi, basis) == 2);
}
