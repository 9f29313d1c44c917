#ifndef SBREN_GRID_HPP
#define SBREN_GRID_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sbren/core.hpp"

namespace sbren {

/* One quadrature node of a discretized mode space. coordinate is the point
 * the node represents (radial position for the radial builders), omega the
 * dispersion value there, weight the quadrature weight. The weighted inner
 * product <f,g> = sum_j weight_j conj(f_j) g_j is the metric every adjoint
 * in this library refers to. */
struct Mode {
    double omega;
    double weight;
    double coordinate;
};

struct ModeGrid {
    int dimension_d = 1;
    std::vector<Mode> modes;

    int size() const { return int(modes.size()); }

    void validate() const {
        if (dimension_d < 1) throw InvariantError("mode grid: dimension must be >= 1");
        for (const auto& m : modes) {
            if (!(m.omega > 0.0) || !std::isfinite(m.omega))
                throw InvariantError("mode grid: omegas must be strictly positive and finite");
            if (!(m.weight > 0.0) || !std::isfinite(m.weight))
                throw InvariantError("mode grid: weights must be strictly positive and finite");
        }
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a(&dimension_d, sizeof dimension_d);
        for (const auto& m : modes) h = fnv1a(&m, sizeof(double) * 3, h);
        return h;
    }
};

/* Regular means the profile belongs to the single-mode space (finite weighted
 * norms at every scale we use); Singular marks a declared limit object that
 * only supports duality pairings, not norms. On a finite grid every amplitude
 * list is finite, so the tag carries the declared semantics of the family the
 * factor came from rather than anything detectable from the numbers. */
enum class Regularity { Regular, Singular };

struct FormFactor {
    Eigen::VectorXcd amplitudes;
    Regularity regularity = Regularity::Regular;
    double coupling = 1.0; // bookkeeping only; amplitudes already include it

    bool regular() const { return regularity == Regularity::Regular; }
};

inline void check_sizes(const FormFactor& f, const ModeGrid& grid, const char* who) {
    if (f.amplitudes.size() != grid.size())
        throw DimensionError(std::string(who) + ": form factor has " +
                             std::to_string(f.amplitudes.size()) + " amplitudes for a grid of " +
                             std::to_string(grid.size()) + " modes");
}

/* sum_j weight_j omega_j^{2s} |f_j|^2. Singular factors only admit s = 0 and
 * report the declared divergence as +inf. */
inline double weighted_norm_sq(const FormFactor& f, const ModeGrid& grid, double s = 0.0) {
    grid.validate();
    check_sizes(f, grid, "weighted_norm_sq");
    if (!f.regular()) {
        if (s != 0.0)
            throw InvariantError("weighted_norm_sq: singular form factor only supports s = 0");
        return std::numeric_limits<double>::infinity();
    }
    double acc = 0.0;
    for (int j = 0; j < grid.size(); ++j) {
        double a2 = std::norm(f.amplitudes[j]);
        if (a2 == 0.0) continue;
        acc += grid.modes[j].weight * std::pow(grid.modes[j].omega, 2.0 * s) * a2;
    }
    return acc;
}

inline cdouble mode_inner(const Eigen::VectorXcd& f, const Eigen::VectorXcd& g, const ModeGrid& grid) {
    if (f.size() != grid.size() || g.size() != grid.size())
        throw DimensionError("mode_inner: vector/grid size mismatch");
    cdouble acc(0.0, 0.0);
    for (int j = 0; j < grid.size(); ++j)
        acc += grid.modes[j].weight * std::conj(f[j]) * g[j];
    return acc;
}

/* Duality pairing, antilinear in the first slot. The first slot may be
 * Singular: pairings are exactly what a singular factor still supports. */
inline cdouble pairing(const FormFactor& g, const FormFactor& f, const ModeGrid& grid) {
    grid.validate();
    check_sizes(g, grid, "pairing");
    check_sizes(f, grid, "pairing");
    return mode_inner(g.amplitudes, f.amplitudes, grid);
}

/* g_j = -v_j / omega_j: the factor whose dressing removes the interaction.
 * The regularity tag is inherited from v; families that know their limit
 * diverges tag that limit Singular themselves. */
inline FormFactor dressed_factor(const FormFactor& v, const ModeGrid& grid) {
    grid.validate();
    check_sizes(v, grid, "dressed_factor");
    FormFactor g;
    g.amplitudes.resize(v.amplitudes.size());
    for (int j = 0; j < grid.size(); ++j)
        g.amplitudes[j] = -v.amplitudes[j] / grid.modes[j].omega;
    g.regularity = v.regularity;
    g.coupling = v.coupling;
    return g;
}

struct Dispersion {
    enum class Type { Massless, Massive };
    Type type = Type::Massless;
    double mass = 0.0;

    double operator()(double r) const {
        return type == Type::Massless ? r : std::sqrt(r * r + mass * mass);
    }
};

/* Radial midpoint quadrature on [ir_cut, uv_max] with geometrically spaced
 * cells (resolution cells per decade), so the spacing is finest near the IR
 * cut where the profiles of interest peak. Weight = |S^{d-1}| r^{d-1} dr. */
inline ModeGrid radial_grid(int dimension, double ir_cut, double uv_max, int resolution,
                            Dispersion dispersion = Dispersion{}) {
    if (!(ir_cut > 0.0)) throw ConfigError("radial_grid: ir_cut must be positive");
    if (!(uv_max > ir_cut)) throw ConfigError("radial_grid: uv_max must exceed ir_cut");
    if (resolution < 1) throw ConfigError("radial_grid: resolution must be >= 1");
    if (dimension < 1) throw ConfigError("radial_grid: dimension must be >= 1");

    int cells = int(std::ceil(resolution * std::log10(uv_max / ir_cut) - 1e-9));
    cells = std::max(cells, 1);
    double ratio = std::pow(uv_max / ir_cut, 1.0 / cells);
    double surface = 2.0 * std::pow(M_PI, 0.5 * dimension) / std::tgamma(0.5 * dimension);

    ModeGrid grid;
    grid.dimension_d = dimension;
    grid.modes.reserve(cells);
    double left = ir_cut;
    for (int k = 0; k < cells; ++k) {
        double right = (k + 1 == cells) ? uv_max : ir_cut * std::pow(ratio, k + 1);
        double mid = 0.5 * (left + right);
        Mode m;
        m.coordinate = mid;
        m.omega = dispersion(mid);
        m.weight = surface * std::pow(mid, dimension - 1) * (right - left);
        grid.modes.push_back(m);
        left = right;
    }
    grid.validate();
    return grid;
}

/* A cutoff family: one shared grid, a stage map n -> truncated form factor,
 * the declared limit, and the list of stages to run. covered_radius[i] is the
 * exact right edge of the last cell stage i includes; closed-form references
 * evaluated there see the quadrature boundary exactly. */
struct CutoffFamily {
    ModeGrid grid;
    std::vector<double> cutoff_values;
    std::vector<double> covered_radius;
    std::function<FormFactor(double)> generator;
    FormFactor limit;

    FormFactor stage(int i) const {
        if (i < 0 || i >= int(cutoff_values.size()))
            throw DimensionError("CutoffFamily::stage: index out of range");
        return generator(cutoff_values[i]);
    }
    bool supercritical() const { return limit.regularity == Regularity::Singular; }
};

/* Radial profile amplitude(r) = lambda r^power exp(-damping r), truncated at
 * the running cutoff by cell midpoint. singular_limit declares whether the
 * untruncated profile leaves the single-mode space. */
struct RadialFamilySpec {
    double ir_cut = 0.1;
    std::vector<double> uv_cuts;
    double lambda = 1.0;
    int resolution = 16;
    int dimension = 3;
    double power = -0.5;
    double damping = 0.0;
    bool singular_limit = true;
    Dispersion dispersion;
};

inline CutoffFamily radial_family(const RadialFamilySpec& spec) {
    if (spec.uv_cuts.empty()) throw ConfigError("radial_family: need at least one uv cutoff");
    for (std::size_t i = 0; i + 1 < spec.uv_cuts.size(); ++i)
        if (!(spec.uv_cuts[i] < spec.uv_cuts[i + 1]))
            throw ConfigError("radial_family: uv cutoffs must be strictly ascending");
    if (!(spec.uv_cuts.front() > spec.ir_cut))
        throw ConfigError("radial_family: smallest uv cutoff must exceed ir_cut");

    CutoffFamily fam;
    fam.grid = radial_grid(spec.dimension, spec.ir_cut, spec.uv_cuts.back(), spec.resolution,
                           spec.dispersion);
    fam.cutoff_values = spec.uv_cuts;

    const ModeGrid& grid = fam.grid;
    double lambda = spec.lambda, power = spec.power, damping = spec.damping;
    auto profile = [lambda, power, damping](double r) {
        return lambda * std::pow(r, power) * std::exp(-damping * r);
    };
    int dim = spec.dimension;
    fam.generator = [grid, profile, lambda](double cutoff) {
        FormFactor v;
        v.amplitudes.setZero(grid.size());
        for (int j = 0; j < grid.size(); ++j) {
            double r = grid.modes[j].coordinate;
            if (r <= cutoff) v.amplitudes[j] = profile(r);
        }
        v.regularity = Regularity::Regular;
        v.coupling = lambda;
        return v;
    };

    // exact right edge of the last included cell, per stage
    double surface = 2.0 * std::pow(M_PI, 0.5 * dim) / std::tgamma(0.5 * dim);
    fam.covered_radius.resize(fam.cutoff_values.size(), spec.ir_cut);
    for (std::size_t i = 0; i < fam.cutoff_values.size(); ++i) {
        for (int j = 0; j < grid.size(); ++j) {
            double r = grid.modes[j].coordinate;
            if (r <= fam.cutoff_values[i]) {
                double dr = grid.modes[j].weight / (surface * std::pow(r, dim - 1));
                fam.covered_radius[i] = r + 0.5 * dr;
            }
        }
    }

    fam.limit = fam.generator(std::numeric_limits<double>::infinity());
    fam.limit.regularity = spec.singular_limit ? Regularity::Singular : Regularity::Regular;
    return fam;
}

/* Point-source profile |k|^{-1/2} in three dimensions: the textbook emitter
 * whose dressing factor |k|^{-3/2} has a divergent weighted norm, so the
 * family's limit is Singular. */
inline CutoffFamily ww_family(double ir_cut, const std::vector<double>& uv_cuts, double lambda,
                              int resolution, int dimension = 3,
                              Dispersion dispersion = Dispersion{}) {
    RadialFamilySpec spec;
    spec.ir_cut = ir_cut;
    spec.uv_cuts = uv_cuts;
    spec.lambda = lambda;
    spec.resolution = resolution;
    spec.dimension = dimension;
    spec.power = -0.5;
    spec.damping = 0.0;
    spec.singular_limit = true;
    spec.dispersion = dispersion;
    return radial_family(spec);
}

/* Same infrared profile with exponential damping: every norm stays finite,
 * the limit is Regular, and cutoff flows converge instead of diverging. */
inline CutoffFamily subcritical_family(double ir_cut, const std::vector<double>& uv_cuts,
                                       double lambda, int resolution, double damping = 1.0,
                                       int dimension = 3, Dispersion dispersion = Dispersion{}) {
    RadialFamilySpec spec;
    spec.ir_cut = ir_cut;
    spec.uv_cuts = uv_cuts;
    spec.lambda = lambda;
    spec.resolution = resolution;
    spec.dimension = dimension;
    spec.power = -0.5;
    spec.damping = damping;
    spec.singular_limit = false;
    spec.dispersion = dispersion;
    return radial_family(spec);
}

} // namespace sbren

#endif
