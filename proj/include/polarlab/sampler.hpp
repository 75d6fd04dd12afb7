#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarlab/geometry.hpp"
#include "polarlab/kernels.hpp"
#include "polarlab/linalg.hpp"
#include "polarlab/rng.hpp"

namespace polarlab {

/// Covariance matrix of `kernel` on `points`.
SymMatrix covariance_matrix(const KernelDescriptor& kernel, const std::vector<Point>& points);

/// Values of a d-component field on a grid with provenance. `values` is
/// component-major: values[c * grid.size() + i]. When the field was drawn
/// jointly with an off-grid anchor, `anchor_values[c]` holds X_c(anchor).
struct FieldSample {
    GridSpec grid;
    std::size_t components = 0;
    std::vector<double> values;
    KernelDescriptor kernel;
    RngSeed seed;
    std::optional<Point> anchor;
    std::vector<double> anchor_values;

    std::span<const double> component(std::size_t c) const {
        return {values.data() + c * grid.size(), grid.size()};
    }
    std::span<double> component(std::size_t c) { return {values.data() + c * grid.size(), grid.size()}; }
    double at(std::size_t c, std::size_t i) const { return values[c * grid.size() + i]; }
};

enum class FactorKind { Dense, Kronecker, Markov };

std::string to_string(FactorKind kind);

/// Square-root factor A of a covariance matrix C = A A^T in one of three
/// layouts. Dense and Kronecker are the Cholesky factor in point order.
/// Markov is the Cholesky factor in clock order, scattered back.
class GaussianFactor {
public:
    static GaussianFactor dense(const KernelDescriptor& kernel, const std::vector<Point>& points,
                                const JitterPolicy& policy = {});
    /// Lattice points, last axis fastest: C = C_1 (x) ... (x) C_N.
    static GaussianFactor kronecker(const KernelDescriptor& kernel, const GridSpec& grid,
                                    const JitterPolicy& policy = {});
    static GaussianFactor markov(const KernelDescriptor& kernel, const std::vector<Point>& points);

    FactorKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept { return size_; }
    /// Largest jitter used by any Cholesky step.
    double jitter() const noexcept { return jitter_; }

    /// x = A z. `scratch` must hold size() doubles for Kronecker/Markov.
    void apply(std::span<const double> z, std::span<double> x, std::span<double> scratch) const;
    void apply(std::span<const double> z, std::span<double> x) const;

    /// A as a dense matrix (tests and diagnostics only).
    Matrix to_dense() const;

private:
    FactorKind kind_ = FactorKind::Dense;
    std::size_t size_ = 0;
    double jitter_ = 0.0;
    // Dense: upper_ = L^T row-major so x += z_j * row_j is contiguous.
    std::vector<double> upper_;
    // Kronecker: per-axis lower factors.
    std::vector<Matrix> axis_factors_;
    // Markov: order_[k] is the point at clock rank k.
    std::vector<std::size_t> order_;
    std::vector<double> scale_;
    std::vector<double> increments_;
};

enum class SamplerPath { Auto, Dense, Kronecker, Markov };

SamplerPath sampler_path_from_string(const std::string& name);

struct SamplerOptions {
    SamplerPath path = SamplerPath::Auto;
    /// Appended to the grid before factorization and reported separately.
    std::optional<Point> anchor;
    JitterPolicy jitter;
};

/// Factorization for a fixed (kernel, grid, anchor), computed once and shared
/// read-only by all replicate draws.
class FieldSampler {
public:
    FieldSampler(KernelDescriptor kernel, GridSpec grid, SamplerOptions options = {});

    const KernelDescriptor& kernel() const noexcept { return kernel_; }
    const GridSpec& grid() const noexcept { return grid_; }
    const GaussianFactor& factor() const noexcept { return factor_; }
    const std::optional<Point>& anchor() const noexcept { return anchor_; }
    /// Grid points followed by the anchor, if any.
    const std::vector<Point>& points() const noexcept { return points_; }
    std::size_t total_points() const noexcept { return points_.size(); }

    /// One component over all points (grid then anchor). Normal draws are
    /// indexed component * total_points() + i within the seed's stream.
    void draw_component(const RngSeed& seed, std::size_t component, std::span<double> out,
                        std::span<double> normals, std::span<double> scratch) const;

    FieldSample draw(std::size_t components, const RngSeed& seed) const;

private:
    KernelDescriptor kernel_;
    GridSpec grid_;
    std::optional<Point> anchor_;
    std::vector<Point> points_;
    GaussianFactor factor_;
};

/// Each component is an independent draw of N(0, C) on the grid.
FieldSample sample_field(const KernelDescriptor& kernel, const GridSpec& grid, std::size_t components,
                         const RngSeed& seed, const SamplerOptions& options = {});

/// X = X1 + X2 with X2(t) = C(t,a)/C(a,a) X(a).
struct ConditionalSplit {
    FieldSample x1;
    FieldSample x2;
    Point anchor;
    std::vector<double> anchor_values;
};

/// The anchor value is taken from the sample's jointly drawn anchor or from
/// a grid point coinciding with the anchor.
ConditionalSplit conditional_split(const KernelDescriptor& kernel, const FieldSample& sample,
                                   std::span<const double> anchor);

/// Cov(X1(s), X2(t)) evaluated from kernel values; zero up to rounding.
double theoretical_cross_covariance(const KernelDescriptor& kernel, std::span<const double> anchor,
                                    std::span<const double> s, std::span<const double> t);

struct IncrementBoundReport {
    double constant = 0.0;  // smallest K with |g(s)-g(t)| <= K sum |s_j-t_j|^{delta_j}
    Point worst_s;
    Point worst_t;
    std::size_t pairs_used = 0;
};

/// Fits the regularity constant of t -> C(t,a)/C(a,a) over the given pairs.
IncrementBoundReport x2_increment_bound_check(
    const KernelDescriptor& kernel, std::span<const double> anchor,
    const std::vector<std::pair<Point, Point>>& pairs);

/// Binary dump: 32-byte header ("PFLD", u32 version, u32 d, u32 N, 4 x u32
/// counts) then little-endian f64 values, row-major [component][grid index].
void write_field_binary(std::ostream& out, const FieldSample& sample);

struct FieldDump {
    std::uint32_t version = 0;
    std::size_t components = 0;
    std::vector<std::size_t> counts;
    std::vector<double> values;
};

FieldDump read_field_binary(std::istream& in);

/// One row per grid point: x1..xN, X_1..X_d.
void write_field_csv(std::ostream& out, const FieldSample& sample);

}  // namespace polarlab
