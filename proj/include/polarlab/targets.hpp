#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "polarlab/geometry.hpp"

namespace polarlab {

class TargetSet;

namespace target_variant {

struct PointTarget {
    Point x;
};
struct Segment {
    Point a;
    Point b;
};
/// lower_j <= upper_j; flat boxes are allowed.
struct Box {
    Point lower;
    Point upper;
};
/// Finite sample of a set, with `mesh` its covering radius.
struct PointCloud {
    std::vector<Point> points;
    double mesh;
};
struct Union {
    std::vector<TargetSet> members;
};

}  // namespace target_variant

/// A bounded Borel target F in R^d with a distance oracle.
class TargetSet {
public:
    using Variant = std::variant<target_variant::PointTarget, target_variant::Segment, target_variant::Box,
                                 target_variant::PointCloud, target_variant::Union>;

    static TargetSet point(Point x);
    static TargetSet segment(Point a, Point b);
    static TargetSet box(Point lower, Point upper);
    static TargetSet point_cloud(std::vector<Point> points, double mesh);
    static TargetSet union_of(std::vector<TargetSet> members);

    std::size_t ambient_dim() const noexcept { return dim_; }
    const Variant& variant() const noexcept { return variant_; }
    std::string kind() const;

    /// Axis-aligned bounding box (lower, upper).
    std::pair<Point, Point> bounds() const;

private:
    TargetSet(Variant v, std::size_t dim) : variant_(std::move(v)), dim_(dim) {}

    Variant variant_;
    std::size_t dim_;
};

/// Euclidean distance from x to F. PointCloud distances are to the cloud
/// itself; its mesh bounds the error against the underlying set.
double distance(const TargetSet& f, std::span<const double> x);

/// min over u in [0,1] of distance(F, a + u (b - a)).
double segment_distance(const TargetSet& f, std::span<const double> a, std::span<const double> b);

struct VolumeEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    bool exact = false;
    std::size_t nodes = 0;
};

struct VolumeOptions {
    std::size_t shifts = 16;
    std::size_t nodes_per_shift = 4096;
    std::uint64_t scramble_seed = 0x5EEDF00DULL;
};

/// Lebesgue volume of the closed r-neighbourhood of F. Closed forms for
/// Point, Segment and Box (Steiner formula); randomly shifted Halton nodes
/// over the padded bounding box otherwise.
VolumeEstimate neighborhood_volume(const TargetSet& f, double r, const VolumeOptions& options = {});

/// Volume of the unit ball in R^d.
double unit_ball_volume(std::size_t d);

struct MinkowskiFit {
    double theta_hat = 0.0;   // clamped to [0, d]
    double theta_raw = 0.0;   // d - slope before clamping
    double slope = 0.0;
    double intercept = 0.0;   // log C_F surrogate, no contract attached
    double log_log_slope_residual = 0.0;  // RMS residual of the log-log fit
    std::vector<double> r_grid;
    std::vector<double> volumes;
};

/// theta_hat = d - slope of log volume against log r. `r_grid` must be
/// decreasing with >= 8 points spanning >= 2 decades.
MinkowskiFit minkowski_fit(const TargetSet& f, const std::vector<double>& r_grid,
                           const VolumeOptions& options = {});

/// Geometric grid of `count` radii from r_max down to r_min.
std::vector<double> geometric_radii(double r_max, double r_min, std::size_t count);

enum class PolarityVerdict { PolarByTheorem, NonpolarRegime, Inconclusive };

std::string to_string(PolarityVerdict v);

PolarityVerdict polarity_classify(double q, std::size_t d, double theta, double kappa);

/// One point per row, comma separated. A non-positive mesh is replaced by
/// half the largest nearest-neighbour distance.
TargetSet load_point_cloud_csv(std::istream& in, double mesh = 0.0);

}  // namespace polarlab
