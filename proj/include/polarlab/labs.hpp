#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarlab/geometry.hpp"
#include "polarlab/kernels.hpp"
#include "polarlab/matrixproc.hpp"
#include "polarlab/rng.hpp"
#include "polarlab/sampler.hpp"
#include "polarlab/targets.hpp"

namespace polarlab {

struct LabOptions {
    /// Worker threads; 0 means one per available core.
    std::size_t threads = 0;
};

std::size_t resolve_threads(std::size_t requested);

struct MCEstimate {
    double p_hat = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
    std::size_t hits = 0;
    std::string config_digest;

    static MCEstimate from_counts(std::size_t hits, std::size_t n, std::string digest);
};

/// One (epsilon, refinement) cell of a sweep table.
struct SweepCell {
    std::size_t epsilon_index = 0;
    std::size_t refinement_index = 0;
    double epsilon = 0.0;
    std::size_t grid_points = 0;
    MCEstimate estimate;
};

/// beta = 1: (k+2)(k-1)/2; beta = 2: k^2 - 1.
double collision_threshold(int beta, std::size_t k);

enum class Regime { Subcritical, Critical, Supercritical };

std::string to_string(Regime r);

/// Supercritical iff Q > threshold, critical iff |Q - threshold| <= 1e-9.
Regime classify_regime(double q, double threshold);

/// How a discretely sampled path is compared with the target.
///   GridPoints: min over grid points of d(X(t), F).
///   Polyline:   min over lattice edges of the distance from F to the
///               segment joining the two endpoint values.
enum class PathModel { GridPoints, Polyline };

std::string to_string(PathModel m);
PathModel path_model_from_string(const std::string& name);

struct HittingOptions {
    PathModel path_model = PathModel::GridPoints;
    LabOptions lab;
};

/// Fraction of replicates with min distance(F, X) <= epsilon.
MCEstimate estimate_hitting_probability(const KernelDescriptor& kernel, const GridSpec& grid, const TargetSet& f,
                                        double epsilon, std::size_t n, const RngSeed& seed,
                                        const HittingOptions& options = {});

struct HittingTable {
    std::vector<double> epsilons;
    std::vector<GridSpec> refinements;
    std::vector<SweepCell> cells;  // epsilon-major
    std::string config_digest;
    bool coupled = false;  // refinements nested and drawn from one finest path

    const MCEstimate& at(std::size_t eps_index, std::size_t ref_index) const;
};

/// Hitting estimates for every (epsilon, refinement). Nested refinements are
/// evaluated on one path per replicate drawn on the finest grid, which makes
/// p_hat monotone in refinement replicate by replicate.
HittingTable hitting_sweep(const KernelDescriptor& kernel, const std::vector<GridSpec>& refinements,
                           const TargetSet& f, const std::vector<double>& epsilons, std::size_t n,
                           const RngSeed& seed, const HittingOptions& options = {});

/// Intercept at epsilon = 0 of the least-squares line through (eps, p).
double extrapolate_to_zero(std::span<const double> eps, std::span<const double> p);

/// Fraction of replicates with min_k_gap <= epsilon.
MCEstimate estimate_collision_probability(const EnsembleSpec& spec, const GridSpec& grid, std::size_t k,
                                          double epsilon, std::size_t n, const RngSeed& seed,
                                          const LabOptions& options = {});

struct CollisionVerdict {
    int beta = 1;
    std::size_t k = 2;
    double q = 0.0;
    double threshold = 0.0;
    Regime regime = Regime::Subcritical;
    std::vector<double> epsilons;
    std::vector<GridSpec> refinements;
    std::vector<SweepCell> estimates;  // epsilon-major
    /// Slope of log p_hat against log epsilon on the finest grid, over the
    /// epsilons with p_hat > 0; NaN when fewer than two qualify.
    double trend_slope = 0.0;
    std::string config_digest;
    bool coupled = false;

    const MCEstimate& at(std::size_t eps_index, std::size_t ref_index) const;
};

/// `epsilons` decreasing, at least 3 values spanning at least two decades.
CollisionVerdict regime_sweep(const EnsembleSpec& spec, std::size_t k, const std::vector<double>& epsilons,
                              const std::vector<GridSpec>& refinements, std::size_t n, const RngSeed& seed,
                              const LabOptions& options = {});

/// Flat grid indices of `coarse` inside `fine`, or nullopt if not nested.
std::optional<std::vector<std::size_t>> nested_indices(const GridSpec& fine, const GridSpec& coarse);

/// CSV rows: epsilon, refinement, grid_points, p_hat, stderr, n, Q, threshold, regime.
void write_verdict_csv(std::ostream& out, const CollisionVerdict& v);
void write_hitting_csv(std::ostream& out, const HittingTable& t);

// ---------------------------------------------------------------------------
// Oscillation and modulus diagnostics

/// r (log log 1/r)^{-1/Q}; requires 0 < r < 1/e.
double oscillation_scale(double r, double q);

/// {r0^2, 2 r0^2, 4 r0^2, ...} below r0, then r0.
std::vector<double> dyadic_radii(double r0);

struct OscillationOptions {
    /// Snapped to the nearest grid point; the rectangle centre if empty.
    std::vector<Point> probes;
    std::size_t components = 1;
    /// Quantile of the fit half used as the fitted constant.
    double fit_quantile = 0.99;
    LabOptions lab;
};

struct OscillationReport {
    double q = 0.0;
    double r0 = 0.0;
    std::vector<double> r_grid;
    std::vector<Point> probes;
    /// [replicate * probes + probe]: min over r of sup_{Delta(s,t)<r} |X(s)-X(t)| / scale(r).
    std::vector<double> statistics;
    double median = 0.0;
    double p90 = 0.0;
    double p99 = 0.0;
    /// Fitted on the first half of the replicates, tested on the second.
    double fitted_constant = 0.0;
    double violation_fraction = 0.0;
};

/// Normalized minimal oscillation of one sample at the given probe indices.
std::vector<double> oscillation_statistics(const FieldSample& sample, const AnisotropicMetric& metric,
                                           std::span<const std::size_t> probe_indices, double r0);

OscillationReport oscillation_scan(const KernelDescriptor& kernel, const GridSpec& grid, double r0, std::size_t n,
                                   const RngSeed& seed, const OscillationOptions& options = {});

struct ModulusBucket {
    double epsilon = 0.0;
    bool empty = false;     // no grid pairs within epsilon
    double max_ratio = 0.0;
    double p99_ratio = 0.0;
    double violation_fraction = 0.0;  // replicates exceeding the fitted K4
};

struct ModulusReport {
    std::vector<ModulusBucket> buckets;
    /// [replicate * eps + e]: sup |X(s)-X(t)| over Delta(s,t) <= eps, / (eps sqrt(log 1/eps)).
    std::vector<double> ratios;
    double fitted_k4 = 0.0;  // 99th percentile at the largest epsilon
    /// max / min of the per-epsilon 99th percentiles over non-empty buckets.
    double p99_spread = 0.0;
};

/// sup |X(s)-X(t)| over grid pairs with Delta(s,t) <= eps, per eps; NaN for
/// an empty bucket.
std::vector<double> modulus_sups(const FieldSample& sample, const AnisotropicMetric& metric,
                                 std::span<const double> eps_grid);

/// eps sqrt(log 1/eps).
double modulus_scale(double eps);

ModulusReport global_modulus_check(const KernelDescriptor& kernel, const GridSpec& grid,
                                   const std::vector<double>& eps_grid, std::size_t n, const RngSeed& seed,
                                   const LabOptions& options = {});

// ---------------------------------------------------------------------------
// Covering diagnostics

/// 2^{-q} (log log 2^q)^{-1/Q}; requires q >= 2.
double good_cube_scale(unsigned q, double big_q);

struct ClassifiedCube {
    DyadicCube cube;
    std::vector<std::size_t> points;  // grid indices inside the cube
    std::size_t representative = 0;   // grid index nearest the centre
    double oscillation = 0.0;         // sup |X1(u) - X1(v)| over the cube
    double diameter = 0.0;            // Delta-diameter
    bool good = false;
};

struct GoodCubeMap {
    unsigned q = 0;
    double constant = 0.0;
    double threshold = 0.0;
    std::vector<ClassifiedCube> cubes;
    double good_fraction = 0.0;
};

/// Dyadic cubes of the grid rectangle at order q; a cube is good iff the
/// oscillation of X1 over its grid points is <= constant * good_cube_scale.
GoodCubeMap good_cube_classify(const ConditionalSplit& split, unsigned q, double constant);

/// phi(s) = s^{Q-d+theta} (log log 1/s)^{(d-theta)/Q - kappa}.
double phi_function(double s, double big_q, std::size_t d, double theta, double kappa);

struct PhiMass {
    double mass = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;  // diameters >= e^{-e}
};

PhiMass phi_mass(std::span<const double> diameters, double big_q, std::size_t d, double theta, double kappa);

/// Cubes that can meet X^{-1}(F): d(X(t_A), F) <= 2 r_A, with
/// r_A = constant * good_cube_scale for good cubes and
/// r_A = K4/2 * D sqrt(log 1/D) (D the Delta-diameter) for bad ones.
std::vector<double> select_covering(const GoodCubeMap& map, const FieldSample& field, const TargetSet& f,
                                    double k4);

struct CoveringScanOptions {
    std::vector<unsigned> orders{3, 4, 5};
    Point anchor;
    TargetSet target = TargetSet::point({0.0});
    double theta = 0.0;
    double kappa = 0.0;
    std::size_t components = 1;
    /// Fitted from pilot replicates when <= 0: the good constant as the
    /// median cube ratio at the first order, K4 as the largest modulus ratio
    /// at the cube diameters.
    double good_constant = 0.0;
    double k4 = 0.0;
    std::size_t pilot_replicates = 16;
    LabOptions lab;
};

struct CoveringScanReport {
    std::vector<unsigned> orders;
    std::vector<double> mean_mass;
    std::vector<double> stderr_mass;
    std::vector<double> mean_good_fraction;
    std::vector<double> mean_selected;
    std::vector<std::size_t> excluded;
    double good_constant = 0.0;
    double k4 = 0.0;
    /// max / min of mean_mass over orders with positive mass.
    double mass_spread = 0.0;
};

CoveringScanReport covering_scan(const KernelDescriptor& kernel, const GridSpec& grid, std::size_t n,
                                 const RngSeed& seed, const CoveringScanOptions& options);

/// Empirical quantile with linear interpolation (type 7).
double quantile(std::vector<double> values, double p);

}  // namespace polarlab
