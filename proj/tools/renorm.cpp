// Experiment harness for the renormalized spin-boson construction kit.
// Verbs: build (materialize operators), spectrum (GEVP flows), converge
// (cutoff-removal sweep), triviality (divergence demo), examples (worked
// models), verify (invariant suite). Exit codes: 0 pass, 1 invariant
// failure, 2 config error, 3 resource cap exceeded.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "sbren/sbren.hpp"

namespace fs = std::filesystem;
using namespace sbren;

namespace {

struct Options {
    std::string config_path;
    std::string out_dir;
    int workers = 0;
    std::uint64_t seed = 0;
    double tail_tol = 0.0;
    double solver_tol = 0.0;
    std::int64_t max_basis = 0;
    int eigs = 0;
    bool out_set = false, workers_set = false, seed_set = false;
    bool tail_set = false, solver_set = false, max_basis_set = false;
};

void add_common_flags(CLI::App* sub, Options& o, bool config_required) {
    auto* c = sub->add_option("--config", o.config_path, "experiment config file (JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out_dir, "run directory for reports")
        ->each([&](const std::string&) { o.out_set = true; });
    sub->add_option("--workers", o.workers, "parallel stage workers")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { o.workers_set = true; });
    sub->add_option("--seed", o.seed, "random seed recorded in the manifest")
        ->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--tol", o.tail_tol, "per-element tail accuracy demand on dressed forms")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { o.tail_set = true; });
    sub->add_option("--solver-tol", o.solver_tol, "GEVP residual tolerance")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { o.solver_set = true; });
    sub->add_option("--max-basis", o.max_basis, "cap on Fock basis states")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { o.max_basis_set = true; });
}

/* Overrides go into the raw JSON so the one schema validator sees them. */
ExperimentConfig load_with_overrides(const Options& o) {
    nlohmann::json raw = load_json(o.config_path);
    if (o.out_set) raw["output"]["dir"] = o.out_dir;
    if (o.workers_set) raw["workers"] = o.workers;
    if (o.seed_set) raw["seed"] = o.seed;
    if (o.tail_set) raw["tolerances"]["tail"] = o.tail_tol;
    if (o.solver_set) raw["tolerances"]["solver"] = o.solver_tol;
    if (o.max_basis_set) raw["max_basis"] = o.max_basis;
    return parse_config(raw);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_flow_outputs(const ExperimentConfig& cfg, const FlowReport& r, const char* verb,
                        double secs) {
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    save_json((dir / "report.json").string(), flow_report_json(r));
    write_csv_file((dir / "stages.csv").string(), stages_csv(r));
    write_csv_file((dir / "elements.csv").string(), elements_csv(r));
    save_json((dir / "config.json").string(), config_to_json(cfg));
    save_json((dir / "manifest.json").string(),
              make_manifest(config_to_json(cfg), cfg.seed, {{verb, secs}}));

    for (const StageRow& s : r.stages)
        std::printf(
            "stage %d  cutoff %-8.6g self_energy %-12.6g wavefn %-10.6g ground %-12.6g "
            "delta_prev %-10.4g delta_limit %.4g\n",
            s.stage, s.cutoff, s.self_energy, s.wavefn_divergence, s.ground_energy,
            s.max_delta_prev, s.max_delta_limit);
    for (const std::string& n : r.notes) std::printf("note: %s\n", n.c_str());
    std::printf("wrote %s {report.json, stages.csv, elements.csv, config.json, manifest.json}\n",
                dir.string().c_str());
}

int cmd_converge(const Options& o) {
    ExperimentConfig cfg = load_with_overrides(o);
    auto t0 = std::chrono::steady_clock::now();
    FlowReport r = run_convergence(cfg);
    write_flow_outputs(cfg, r, "converge", seconds_since(t0));
    return 0;
}

int cmd_triviality(const Options& o) {
    ExperimentConfig cfg = load_with_overrides(o);
    auto t0 = std::chrono::steady_clock::now();
    FlowReport r = run_triviality_demo(cfg);
    write_flow_outputs(cfg, r, "triviality", seconds_since(t0));
    return 0;
}

int cmd_build(const Options& o) {
    ExperimentConfig cfg = load_with_overrides(o);
    auto t0 = std::chrono::steady_clock::now();

    CutoffFamily fam = build_family(cfg);
    const ModeGrid& grid = fam.grid;
    auto basis = std::make_shared<const FockBasis>(
        build_basis(int(grid.size()), cfg.truncation.back(), cfg.max_basis));
    SpinSpace spin = make_spin_space(cfg.spin_a, cfg.spin_b);
    const int fd = basis->dim(), sd = spin.dim();

    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    nlohmann::json metrics = nlohmann::json::array();
    SparseOperator fock_id(fd, fd);
    fock_id.setIdentity();

    for (int n = 0; n < int(fam.cutoff_values.size()); ++n) {
        FormFactor v = fam.stage(n);
        FormFactor g = dressed_factor(v, grid);
        DressedSpace ds = dress(spin, basis, grid, g);
        fs::path sdir = dir / ("stage_" + std::to_string(n));
        fs::create_directories(sdir);

        write_vector_file((sdir / "v.txt").string(), v.amplitudes);
        write_vector_file((sdir / "g.txt").string(), g.amplitudes);
        write_triplets_file((sdir / "gram.txt").string(), ds.metric->gram);

        QuadraticForm qw = field_form(ds);
        QuadraticForm qa = observable_form(spin.A, ds);
        write_triplets_file((sdir / "q_field.txt").string(), qw.matrix);
        write_triplets_file((sdir / "q_observable.txt").string(), qa.matrix);
        write_triplets_file((sdir / "q_total.txt").string(), (qw + qa).matrix);

        // the five bare terms only exist for a square-integrable stage
        if (v.regular()) {
            SparseOperator av = annihilate(v, *basis, grid);
            SparseOperator avH = SparseOperator(av.adjoint());
            Eigen::MatrixXcd bb = spin.B.adjoint() * spin.B;
            write_triplets_file((sdir / "term_observable.txt").string(),
                                kron_sparse(spin.A, fock_id));
            write_triplets_file((sdir / "term_field.txt").string(),
                                kron_sparse(spin_identity(sd), second_quantize(grid, *basis)));
            write_triplets_file((sdir / "term_annihilate.txt").string(),
                                kron_sparse(spin.B.adjoint(), av));
            write_triplets_file((sdir / "term_create.txt").string(),
                                kron_sparse(spin.B, avH));
            write_triplets_file(
                (sdir / "term_counterterm.txt").string(),
                kron_sparse(counterterm_energy(v, grid) * bb, fock_id));
        }

        double gnorm2 = weighted_norm_sq(g, grid);
        SpectralDecomposition dec = spectral_decompose(spin.B);
        nlohmann::json m = metric_report(*ds.metric);
        m["stage"] = n;
        m["cutoff"] = fam.cutoff_values[std::size_t(n)];
        m["measure"] = measure_breakdown(noncomm_measure(spin.A, dec), gnorm2, g.regularity);
        metrics.push_back(std::move(m));
        std::printf("stage %d  cutoff %-8.6g dim %d  condition %.4g  chol %s\n", n,
                    fam.cutoff_values[std::size_t(n)], sd * fd, ds.metric->condition,
                    ds.metric->chol_ok ? "ok" : "fallback");
    }

    nlohmann::json meta = operator_metadata(*basis, grid);
    meta["spin_dim"] = sd;
    meta["space_dim"] = sd * fd;
    meta["supercritical"] = fam.supercritical();
    save_json((dir / "metadata.json").string(), meta);
    save_json((dir / "metrics.json").string(), metrics);
    save_json((dir / "config.json").string(), config_to_json(cfg));
    save_json((dir / "manifest.json").string(),
              make_manifest(config_to_json(cfg), cfg.seed, {{"build", seconds_since(t0)}}));
    std::printf("wrote %s {stage_*/, metadata.json, metrics.json, config.json, manifest.json}\n",
                dir.string().c_str());
    return 0;
}

int cmd_spectrum(const Options& o) {
    ExperimentConfig cfg = load_with_overrides(o);
    auto t0 = std::chrono::steady_clock::now();

    CutoffFamily fam = build_family(cfg);
    const ModeGrid& grid = fam.grid;
    SpinSpace spin = make_spin_space(cfg.spin_a, cfg.spin_b);
    std::uint64_t model_hash = fnv1a(config_to_json(cfg).dump());
    const int k = o.eigs; // 0 = full spectrum (dense) or solver default

    nlohmann::json records = nlohmann::json::array();
    CsvTable table;
    table.columns = {"stage", "truncation", "index", "eigenvalue", "residual"};
    const int nstages = int(fam.cutoff_values.size());

    for (int trunc : cfg.truncation) {
        auto basis = std::make_shared<const FockBasis>(
            build_basis(int(grid.size()), trunc, cfg.max_basis));
        // stage -1 is the cutoff-free limit
        for (int n = -1; n < nstages; ++n) {
            FormFactor g = n < 0 ? dressed_factor(fam.limit, grid)
                                 : dressed_factor(fam.stage(n), grid);
            DressedSpace ds = dress(spin, basis, grid, g);
            GevpResult res = solve_gevp(renorm_hamiltonian_form(ds), k > 0 ? k : -1,
                                        GevpMode::Auto, cfg.tolerances.solver);
            nlohmann::json rec =
                spectrum_record(model_hash, n, trunc, res, ds.metric->condition);
            nlohmann::json clusters = nlohmann::json::array();
            for (const auto& [mean, count] : cluster_eigenvalues(res.eigenvalues))
                clusters.push_back({mean, count});
            rec["clusters"] = clusters;
            records.push_back(std::move(rec));
            for (int i = 0; i < res.eigenvalues.size(); ++i)
                table.rows.push_back({double(n), double(trunc), double(i),
                                      res.eigenvalues[i], res.residuals[i]});
            std::printf("stage %2d  N=%d  lowest %-12.8g  levels %d  mode %s\n", n, trunc,
                        res.eigenvalues[0], int(res.eigenvalues.size()),
                        res.mode_used == GevpMode::Dense ? "dense" : "iterative");
        }
    }

    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    save_json((dir / "spectrum.json").string(), records);
    write_csv_file((dir / "spectrum.csv").string(), table);
    save_json((dir / "config.json").string(), config_to_json(cfg));
    save_json((dir / "manifest.json").string(),
              make_manifest(config_to_json(cfg), cfg.seed, {{"spectrum", seconds_since(t0)}}));
    std::printf("wrote %s {spectrum.json, spectrum.csv, config.json, manifest.json}\n",
                dir.string().c_str());
    return 0;
}

int cmd_examples(const Options& o) {
    auto t0 = std::chrono::steady_clock::now();
    nlohmann::json rep = run_examples();
    for (auto& [key, value] : rep.items()) {
        if (!value.is_object()) continue;
        std::printf("%-18s %s\n", key.c_str(),
                    value.at("pass").get<bool>() ? "pass" : "FAIL");
    }
    if (o.out_set) {
        fs::path dir(o.out_dir);
        fs::create_directories(dir);
        save_json((dir / "examples.json").string(), rep);
        save_json((dir / "manifest.json").string(),
                  make_manifest(nlohmann::json::object(), 0, {{"examples", seconds_since(t0)}}));
        std::printf("wrote %s/examples.json\n", dir.string().c_str());
    } else {
        std::cout << rep.dump(2) << "\n";
    }
    return rep.at("pass").get<bool>() ? 0 : 1;
}

int cmd_verify(const Options& o) {
    auto t0 = std::chrono::steady_clock::now();
    std::uint64_t seed = o.seed_set ? o.seed : 1;
    nlohmann::json rep = run_verify(seed);
    for (const auto& check : rep.at("checks"))
        std::printf("%-18s %s\n", check.at("name").get<std::string>().c_str(),
                    check.at("pass").get<bool>() ? "pass" : "FAIL");
    if (o.out_set) {
        fs::path dir(o.out_dir);
        fs::create_directories(dir);
        save_json((dir / "verify.json").string(), rep);
        save_json((dir / "manifest.json").string(),
                  make_manifest(nlohmann::json::object(), seed,
                                {{"verify", seconds_since(t0)}}));
        std::printf("wrote %s/verify.json\n", dir.string().c_str());
    } else {
        std::cout << rep.dump(2) << "\n";
    }
    return rep.at("pass").get<bool>() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"renormalized spin-boson construction kit"};
    app.require_subcommand(1);

    Options o;
    int rc = 0;
    auto* build = app.add_subcommand("build", "materialize operators, metrics, and terms");
    add_common_flags(build, o, true);
    build->callback([&] { rc = cmd_build(o); });

    auto* spectrum = app.add_subcommand("spectrum", "GEVP spectra per stage and truncation");
    add_common_flags(spectrum, o, true);
    spectrum->add_option("--eigs", o.eigs, "number of lowest eigenvalues (0 = full)")
        ->check(CLI::NonNegativeNumber);
    spectrum->callback([&] { rc = cmd_spectrum(o); });

    auto* converge = app.add_subcommand("converge", "cutoff-removal sweep with tail bounds");
    add_common_flags(converge, o, true);
    converge->callback([&] { rc = cmd_converge(o); });

    auto* triviality =
        app.add_subcommand("triviality", "diverging bare columns vs stable renormalized ones");
    add_common_flags(triviality, o, true);
    triviality->callback([&] { rc = cmd_triviality(o); });

    auto* examples = app.add_subcommand("examples", "worked example models with exact oracles");
    add_common_flags(examples, o, false);
    examples->callback([&] { rc = cmd_examples(o); });

    auto* verify = app.add_subcommand("verify", "deterministic invariant suite");
    add_common_flags(verify, o, false);
    verify->callback([&] { rc = cmd_verify(o); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const TailBoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const BasisCapError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
