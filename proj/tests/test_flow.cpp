#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sbren/flow.hpp"

using namespace sbren;
using Catch::Approx;

namespace {

constexpr double kPi = 3.14159265358979323846;

nlohmann::json ww_config(double lambda, std::vector<double> uv, int resolution,
                         std::vector<int> trunc, double window_hi = 0.9) {
    return nlohmann::json{
        {"grid", {{"dimension", 3}, {"ir_cut", 0.1}, {"resolution", resolution}}},
        {"family", {{"type", "ww"}, {"lambda", lambda}, {"uv_cuts", uv}}},
        {"spin", {{"a", "sigma_z"}, {"b", "sigma_x"}}},
        {"truncation", trunc},
        {"probes", {{"max_grade", 1}, {"window", {0.1, window_hi}}, {"max_count", 8}}},
        {"tolerances", {{"tail", 1e30}, {"solver", 1e-10}}},
    };
}

nlohmann::json zero_coupling_config() {
    nlohmann::json zero_stage = {{0.0, 0.0}, {0.0, 0.0}};
    return nlohmann::json{
        {"grid", {{"dimension", 1}, {"ir_cut", 0.1}, {"resolution", 1}}},
        {"family",
         {{"type", "custom"},
          {"omegas", {1.0, 2.0}},
          {"weights", {1.0, 0.5}},
          {"stages", {zero_stage, zero_stage, zero_stage}},
          {"limit", zero_stage},
          {"singular_limit", false}}},
        {"spin", {{"a", "sigma_z"}, {"b", "sigma_x"}}},
        {"truncation", {2}},
        {"probes", {{"max_grade", 1}, {"window", {0.5, 2.5}}, {"max_count", 8}}},
    };
}

const StageRow& row(const FlowReport& r, int n) { return r.stages[std::size_t(n)]; }

double element_scale(const FlowReport& r, int stage) {
    double s = 0.0;
    for (const ElementRow& e : r.elements)
        if (e.stage == stage) s = std::max(s, std::abs(e.renorm));
    return s;
}

} // namespace

TEST_CASE("probe_set_respects_window_and_grade") {
    nlohmann::json j = zero_coupling_config();
    j["family"]["omegas"] = {1.0, 2.0, 5.0};
    j["family"]["weights"] = {1.0, 1.0, 1.0};
    nlohmann::json stage = {{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
    j["family"]["stages"] = {stage};
    j["family"]["limit"] = stage;
    j["probes"] = {{"max_grade", 1}, {"window", {0.9, 2.1}}, {"max_count", 16}};
    ExperimentConfig cfg = parse_config(j);

    CutoffFamily fam = build_family(cfg);
    SpinSpace spin = make_spin_space(cfg.spin_a, cfg.spin_b);
    FockBasis basis = build_basis(int(fam.grid.size()), 2);
    ProbeSet probes = build_probes(cfg, spin, basis, fam.grid);

    // vacuum plus one quantum in each of the two window modes, times two
    // spins; the basis lists grade-one states with the last mode first
    REQUIRE(probes.size() == 6);
    CHECK(probes.names[0] == "s0:vac");
    CHECK(probes.names[1] == "s1:vac");
    CHECK(probes.names[2] == "s0:m1");
    CHECK(probes.names[3] == "s1:m1");
    CHECK(probes.names[4] == "s0:m0");
    CHECK(probes.names[5] == "s1:m0");
    std::set<int> states(probes.state_index.begin(), probes.state_index.end());
    for (int s : states) {
        CHECK(basis.grade_of(s) <= 1);
        const std::vector<int>& occ = basis.states[std::size_t(s)];
        CHECK(occ[2] == 0); // mode at coordinate 5 is outside the window
    }
    for (int p = 0; p < probes.size(); ++p)
        CHECK(probes.flat_index(p) ==
              probes.spin_index[std::size_t(p)] * basis.dim() + probes.state_index[std::size_t(p)]);

    j["probes"] = {{"max_grade", 1}, {"window", {0.9, 2.1}}, {"max_count", 4}};
    ProbeSet capped = build_probes(parse_config(j), spin, basis, fam.grid);
    CHECK(capped.size() == 4);

    j["probes"] = {{"max_grade", 1}, {"window", {3.0, 4.0}}, {"max_count", 8}};
    CHECK_THROWS_AS(build_probes(parse_config(j), spin, basis, fam.grid), ConfigError);
}

TEST_CASE("zero_coupling_flow_has_exact_zero_deltas") {
    ExperimentConfig cfg = parse_config(zero_coupling_config());
    FlowReport r = run_convergence(cfg);

    REQUIRE(r.stages.size() == 3);
    REQUIRE(r.has_dressed);
    for (int n = 0; n < 3; ++n) {
        CHECK(row(r, n).self_energy == 0.0);
        CHECK(row(r, n).wavefn_divergence == 0.0);
        CHECK(row(r, n).dressed_vacuum_norm == 1.0);
        CHECK(row(r, n).vacuum_overlap_z == 1.0);
        CHECK(row(r, n).vacuum_overlap_prev == 1.0);
        CHECK(row(r, n).vacuum_overlap_first == 1.0);
        CHECK(row(r, n).max_tail_bound == 0.0);
        CHECK(row(r, n).max_identity_gap <= 1e-13);
        CHECK(row(r, n).ground_energy == Approx(-1.0).margin(1e-9));
        CHECK(row(r, n).metric_condition == Approx(1.0).margin(1e-9));
        if (n > 0) {
            CHECK(row(r, n).max_delta_prev == 0.0);
        }
        CHECK(row(r, n).max_delta_limit == 0.0);
    }
    CHECK(r.notes.empty());
}

TEST_CASE("ww_flow_reproduces_quadrature_columns") {
    // three-stage Weisskopf-Wigner sweep at coupling 0.5
    ExperimentConfig cfg = parse_config(ww_config(0.5, {1.0, 3.0, 10.0}, 3, {2, 3}));
    FlowReport r = run_convergence(cfg);
    REQUIRE(r.stages.size() == 3);
    REQUIRE(r.has_dressed);

    // stages truncate at cell midpoints; the closed forms see the exact right
    // edge of the last included cell
    CutoffFamily fam = build_family(cfg);
    for (int n = 0; n < 3; ++n) {
        double cov = fam.covered_radius[std::size_t(n)];
        // the flat self-energy integrand makes the midpoint rule exact:
        // -4 pi lambda^2 (cov - ir) to rounding
        CHECK(row(r, n).self_energy ==
              Approx(-4.0 * kPi * 0.25 * (cov - 0.1)).epsilon(1e-12));
        // wave-function divergence: pi ln(cov / ir), carried by the midpoint
        // rule up to the per-cell factor 2(q-1)/((q+1) ln q) = 0.954 at three
        // cells per decade
        CHECK(row(r, n).wavefn_divergence ==
              Approx(kPi * std::log(cov / 0.1)).epsilon(0.06));
        CHECK(row(r, n).dressed_vacuum_norm == std::exp(row(r, n).wavefn_divergence));
        CHECK(row(r, n).vacuum_overlap_z == std::exp(-row(r, n).wavefn_divergence));
        CHECK(row(r, n).metric_condition >= 1.0);
        // the residual level coupling chi = exp(-2 |g|^2) splits the two
        // degenerate bare vacua at first order, pushing the ground to -chi
        double chi = std::exp(-2.0 * row(r, n).wavefn_divergence);
        CHECK(row(r, n).ground_energy == Approx(-chi).epsilon(0.01));
        CHECK(row(r, n).max_identity_gap <= row(r, n).max_tail_bound + 1e-6);
    }
    // self-energy decreases without bound, linearly in the cutoff
    CHECK(row(r, 1).self_energy < row(r, 0).self_energy);
    CHECK(row(r, 2).self_energy < row(r, 1).self_energy);

    // consecutive deltas of the renormalized elements shrink toward the limit
    double d1 = row(r, 1).max_delta_prev, d2 = row(r, 2).max_delta_prev;
    double scale = element_scale(r, 2);
    CHECK(scale > 0.1);
    CHECK(d1 > 0.0);
    CHECK(d2 < d1);
    CHECK(d2 < 1e-3 * scale);
    CHECK(row(r, 2).max_delta_limit < 1e-8 * scale);
    CHECK(r.notes.empty());

    // elements table covers every stage and probe pair
    std::size_t probes = r.probe_names.size();
    CHECK(probes == 8);
    CHECK(r.elements.size() == 3 * probes * probes);
}

TEST_CASE("ww_offdiagonal_spin_elements_decay_at_the_chi_rate") {
    CutoffFamily fam = ww_family(0.1, {1.0, 3.0}, 0.2, 3);
    SpinSpace spin = make_spin_space(pauli_z(), pauli_x());
    auto basis = std::make_shared<FockBasis>(build_basis(int(fam.grid.size()), 2));
    const int fd = basis->dim();

    // probes in the sigma_x eigenbasis over the vacuum
    Eigen::VectorXcd plus = Eigen::VectorXcd::Zero(2 * fd);
    Eigen::VectorXcd minus = Eigen::VectorXcd::Zero(2 * fd);
    plus[0] = plus[fd] = 1.0 / std::sqrt(2.0);
    minus[0] = 1.0 / std::sqrt(2.0);
    minus[fd] = -1.0 / std::sqrt(2.0);

    for (int n = 0; n < 2; ++n) {
        FormFactor g = dressed_factor(fam.stage(n), fam.grid);
        double gnorm2 = weighted_norm_sq(g, fam.grid);
        DressedSpace ds = dress(spin, basis, fam.grid, g);
        Eigen::MatrixXcd qa = renorm_spin_form(spin.A, ds);
        cdouble el = (plus.adjoint() * (qa * minus)).value();
        // exact closed form: chi(+1, -1) with unit vacuum overlap factors
        CHECK(std::abs(el) == Approx(std::exp(-2.0 * gnorm2)).epsilon(1e-10));
        CHECK(std::abs(el.imag()) < 1e-15);
    }

    // at the singular limit the off-diagonal contribution is removed exactly
    FormFactor glim = dressed_factor(fam.limit, fam.grid);
    DressedSpace dslim = dress(spin, basis, fam.grid, glim);
    Eigen::MatrixXcd qlim = renorm_spin_form(spin.A, dslim);
    CHECK(qlim.norm() == 0.0);
}

TEST_CASE("triviality_demo_separates_diverging_and_stable_columns") {
    nlohmann::json j = ww_config(1.0, {1.0, 2.0, 4.0}, 3, {2});
    FlowReport r = run_triviality_demo(parse_config(j));
    REQUIRE(r.stages.size() == 3);
    CHECK_FALSE(r.has_dressed);

    const double uv[3] = {1.0, 2.0, 4.0};
    for (int n = 0; n < 3; ++n) {
        double closed = -4.0 * kPi * (uv[n] - 0.1);
        CHECK(row(r, n).self_energy == Approx(closed).epsilon(0.10));
        CHECK(std::abs(row(r, n).ground_energy) < 1e-9);
    }
    // diverging side: strictly decreasing self-energy, increments tracking the cutoff
    double inc1 = row(r, 1).self_energy - row(r, 0).self_energy;
    double inc2 = row(r, 2).self_energy - row(r, 1).self_energy;
    CHECK(inc1 < 0.0);
    CHECK(inc2 / inc1 == Approx(2.0).epsilon(0.15)); // cutoff gaps 1 then 2

    // overlap against the first stage follows exp(-1/2 |g_n - g_0|^2) exactly
    CutoffFamily fam = build_family(parse_config(j));
    for (int n = 1; n < 3; ++n) {
        FormFactor gn = dressed_factor(fam.stage(n), fam.grid);
        FormFactor g0 = dressed_factor(fam.stage(0), fam.grid);
        FormFactor diff;
        diff.amplitudes = gn.amplitudes - g0.amplitudes;
        double want = std::exp(-0.5 * weighted_norm_sq(diff, fam.grid));
        CHECK(row(r, n).vacuum_overlap_first == Approx(want).epsilon(1e-12));
    }
    CHECK(row(r, 2).vacuum_overlap_first < row(r, 1).vacuum_overlap_first);

    // stable side: renormalized elements barely move while the bare columns blow up
    double scale = element_scale(r, 2);
    CHECK(row(r, 1).max_delta_prev <= 1e-10 * (1.0 + scale));
    CHECK(row(r, 2).max_delta_prev <= 1e-10 * (1.0 + scale));
    CHECK(row(r, 2).dressed_vacuum_norm > 1e10);

    // demo requires a supercritical family
    nlohmann::json sub = ww_config(0.5, {1.0, 2.0}, 3, {2});
    sub["family"]["type"] = "subcritical";
    CHECK_THROWS_AS(run_triviality_demo(parse_config(sub)), ConfigError);
}

TEST_CASE("flow_report_is_deterministic_across_runs_and_workers") {
    nlohmann::json j = ww_config(0.3, {1.0, 3.0}, 2, {2});
    ExperimentConfig cfg = parse_config(j);
    std::string d1 = flow_report_json(run_convergence(cfg)).dump();
    std::string d2 = flow_report_json(run_convergence(cfg)).dump();
    CHECK(d1 == d2);

    j["workers"] = 2;
    std::string d3 = flow_report_json(run_convergence(parse_config(j))).dump();
    // worker count changes the schedule, never the numbers
    nlohmann::json a = nlohmann::json::parse(d1), b = nlohmann::json::parse(d3);
    a["meta"]["config"]["workers"] = 0;
    b["meta"]["config"]["workers"] = 0;
    CHECK(a.dump() == b.dump());
}

TEST_CASE("flow_report_round_trips_through_json_and_csv") {
    ExperimentConfig cfg = parse_config(ww_config(0.3, {1.0, 3.0}, 2, {2}));
    FlowReport r = run_convergence(cfg);

    nlohmann::json j = flow_report_json(r);
    FlowReport back = flow_report_from_json(j);
    CHECK(flow_report_json(back).dump() == j.dump());

    CsvTable st = stages_csv(r);
    std::ostringstream out;
    write_csv(out, st);
    std::istringstream in(out.str());
    CsvTable st2 = read_csv(in);
    REQUIRE(st2.columns == st.columns);
    REQUIRE(st2.rows.size() == st.rows.size());
    for (std::size_t i = 0; i < st.rows.size(); ++i)
        for (std::size_t c = 0; c < st.columns.size(); ++c)
            CHECK(st2.rows[i][c] == st.rows[i][c]);

    CsvTable el = elements_csv(r);
    CHECK(el.rows.size() == r.elements.size());
    std::ostringstream out2;
    write_csv(out2, el);
    std::istringstream in2(out2.str());
    CHECK(read_csv(in2).rows.size() == el.rows.size());
}

TEST_CASE("tail_demands_abort_with_the_minimal_truncation") {
    nlohmann::json j = zero_coupling_config();
    nlohmann::json stage = {{0.8, 0.0}};
    j["family"]["omegas"] = {1.0};
    j["family"]["weights"] = {1.0};
    j["family"]["stages"] = {stage};
    j["family"]["limit"] = stage;
    j["probes"] = {{"max_grade", 1}, {"window", {0.5, 1.5}}, {"max_count", 4}};
    j["tolerances"] = {{"tail", 1e-10}, {"solver", 1e-10}};
    ExperimentConfig cfg = parse_config(j);

    int needed = 0;
    try {
        run_convergence(cfg);
        FAIL("expected a truncation refusal");
    } catch (const TailBoundError& e) {
        needed = e.needed_truncation;
    }
    CHECK(needed > 2);
    CHECK(needed <= 60);

    j["truncation"] = {needed};
    FlowReport r = run_convergence(parse_config(j));
    CHECK(row(r, 0).max_tail_bound <= 1e-10);
    CHECK(row(r, 0).max_identity_gap <= 1e-10 + 1e-9 * (1.0 + element_scale(r, 0)));
}

TEST_CASE("probe_window_must_sit_strictly_inside_the_first_cutoff") {
    nlohmann::json j = ww_config(0.3, {1.0, 3.0}, 2, {2}, 2.0);
    ExperimentConfig cfg = parse_config(j); // inside the grid, so parsing is fine
    CHECK_THROWS_AS(run_convergence(cfg), ConfigError);

    nlohmann::json edge = ww_config(0.3, {1.0, 3.0}, 2, {2}, 1.0);
    CHECK_THROWS_AS(run_convergence(parse_config(edge)), ConfigError);
}

TEST_CASE("worked_examples_report") {
    nlohmann::json rep = run_examples();
    CHECK(rep["pass"] == true);

    const nlohmann::json& sm = rep["standard_model"];
    CHECK(sm["pass"] == true);
    CHECK(sm["qa_norm"] == 0.0);
    std::vector<double> want = {0.0, 0.0, 1.0, 1.0, 2.0, 2.0};
    REQUIRE(sm["spectrum"].size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(sm["spectrum"][i].get<double>() == Approx(want[i]).margin(1e-12));
    REQUIRE(sm["clusters"].size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(sm["clusters"][i][0].get<double>() == Approx(double(i)).margin(1e-9));
        CHECK(sm["clusters"][i][1] == 2);
    }

    const nlohmann::json& ep = rep["energy_preserving"];
    std::vector<double> ladder = {-1.0, 0.0, 1.0, 2.0};
    REQUIRE(ep["spectrum"].size() == ladder.size());
    for (std::size_t i = 0; i < ladder.size(); ++i)
        CHECK(ep["spectrum"][i].get<double>() == Approx(ladder[i]).margin(1e-10));

    const nlohmann::json& tb = rep["two_block"];
    CHECK(tb["max_off_block"].get<double>() < 1e-12);
    CHECK(tb["max_block_mismatch"].get<double>() < 1e-12);

    const nlohmann::json& vh = rep["van_hove"];
    CHECK(std::abs(vh["ground_energy"].get<double>()) < 1e-9);
    CHECK(vh["vacuum_weight"].get<double>() > 1.0 - 1e-8);
    CHECK(vh["bare_minimum"].get<double>() == Approx(-0.5).margin(1e-8));
}

TEST_CASE("verify_suite_passes_and_is_deterministic") {
    nlohmann::json rep = run_verify(1);
    CHECK(rep["pass"] == true);
    std::set<std::string> names;
    for (const auto& c : rep["checks"]) {
        names.insert(c["name"].get<std::string>());
        CHECK(c["pass"] == true);
    }
    for (const char* want : {"ccr", "group_law", "chi_limit", "gram_cholesky",
                             "relative_bounds", "semibounded", "truncation_escalation",
                             "metric_guard"})
        CHECK(names.count(want) == 1);

    CHECK(run_verify(1).dump() == rep.dump());
    CHECK(run_verify(2)["pass"] == true);
}

TEST_CASE("eigenvalue_clustering_groups_near_degenerate_levels") {
    Eigen::VectorXd vals(5);
    vals << 0.0, 1e-12, 1.0, 1.0 + 2e-12, 2.0;
    auto clusters = cluster_eigenvalues(vals, 1e-9);
    REQUIRE(clusters.size() == 3);
    CHECK(clusters[0].second == 2);
    CHECK(clusters[1].second == 2);
    CHECK(clusters[2].second == 1);
    CHECK(clusters[0].first == Approx(0.0).margin(1e-11));
    CHECK(clusters[1].first == Approx(1.0).margin(1e-11));
    CHECK(clusters[2].first == Approx(2.0).margin(1e-11));

    Eigen::VectorXd empty(0);
    CHECK(cluster_eigenvalues(empty, 1e-9).empty());
}
