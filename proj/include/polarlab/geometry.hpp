#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace polarlab {

using Point = std::vector<double>;

/// Axis-aligned rectangle prod_j [lower_j, upper_j] with lower_j < upper_j.
class Rectangle {
public:
    Rectangle(std::vector<double> lower, std::vector<double> upper);

    std::size_t dimension() const noexcept { return lower_.size(); }
    const std::vector<double>& lower() const noexcept { return lower_; }
    const std::vector<double>& upper() const noexcept { return upper_; }
    double side(std::size_t axis) const { return upper_[axis] - lower_[axis]; }
    double volume() const;
    Point center() const;
    bool contains(std::span<const double> x, double tol = 0.0) const;
    bool contains(const Rectangle& other, double tol = 0.0) const;
    /// prod_j (lower_j - eps, upper_j + eps).
    Rectangle enlarged(double eps) const;

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
};

/// Delta(s,t) = sum_j |s_j - t_j|^{alpha_j}, 0 < alpha_j < 1.
class AnisotropicMetric {
public:
    explicit AnisotropicMetric(std::vector<double> alpha);

    std::size_t dimension() const noexcept { return alpha_.size(); }
    const std::vector<double>& alpha() const noexcept { return alpha_; }
    double q() const noexcept;

    double operator()(std::span<const double> s, std::span<const double> t) const;

private:
    std::vector<double> alpha_;
};

double delta(const AnisotropicMetric& metric, std::span<const double> s, std::span<const double> t);

/// Closed Delta-ball test: Delta(x, center) <= eta.
bool ball_contains(const AnisotropicMetric& metric, std::span<const double> center, double eta,
                   std::span<const double> x);

inline constexpr std::size_t kDefaultGridCap = std::size_t{1} << 16;

/// Lattice on a rectangle, endpoints included, `counts_j >= 2` points per axis.
/// Points are ordered lexicographically with the last axis varying fastest.
class GridSpec {
public:
    GridSpec(Rectangle rect, std::vector<std::size_t> counts, std::size_t cap = kDefaultGridCap);

    const Rectangle& rect() const noexcept { return rect_; }
    const std::vector<std::size_t>& counts() const noexcept { return counts_; }
    std::size_t dimension() const noexcept { return counts_.size(); }
    std::size_t size() const noexcept { return size_; }
    double spacing(std::size_t axis) const;
    double coordinate(std::size_t axis, std::size_t index) const;

    Point point(std::size_t flat) const;
    std::vector<std::size_t> multi_index(std::size_t flat) const;
    std::size_t flat_index(std::span<const std::size_t> multi) const;
    std::vector<double> axis_coordinates(std::size_t axis) const;

private:
    Rectangle rect_;
    std::vector<std::size_t> counts_;
    std::size_t size_;
};

std::vector<Point> grid_points(const GridSpec& grid);

/// Dyadic cube of order q in the Delta metric: a box obtained by bisecting
/// axis j of the base rectangle ceil(q / alpha_j) times.
struct DyadicCube {
    unsigned order = 0;
    std::vector<std::int64_t> index;
    Rectangle box;
    Point center;
};

inline constexpr std::size_t kDefaultCubeCap = std::size_t{1} << 20;

/// Bisection depth of axis j at order q.
unsigned dyadic_depth(double alpha, unsigned q);

/// Cubes in lexicographic index order (last axis fastest).
std::vector<DyadicCube> dyadic_decompose(const Rectangle& rect, const AnisotropicMetric& metric,
                                         unsigned q, std::size_t cap = kDefaultCubeCap);

/// Exact Delta-diameter of the box: sum_j side_j^{alpha_j}.
double delta_diameter(const DyadicCube& cube, const AnisotropicMetric& metric);
double delta_diameter(const Rectangle& box, const AnisotropicMetric& metric);
/// Same for raw side lengths; zero sides contribute nothing.
double delta_diameter(std::span<const double> sides, const AnisotropicMetric& metric);

}  // namespace polarlab
