#include "polarlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "polarlab/error.hpp"

namespace polarlab {

Rectangle::Rectangle(std::vector<double> lower, std::vector<double> upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.empty() || lower_.size() != upper_.size())
        throw DomainError("rectangle: lower/upper must be non-empty and of equal length");
    for (std::size_t j = 0; j < lower_.size(); ++j) {
        if (!std::isfinite(lower_[j]) || !std::isfinite(upper_[j]) || !(lower_[j] < upper_[j])) {
            std::ostringstream os;
            os << "rectangle: axis " << j << " requires lower < upper, got [" << lower_[j] << ", "
               << upper_[j] << "]";
            throw DomainError(os.str());
        }
    }
}

double Rectangle::volume() const {
    double v = 1.0;
    for (std::size_t j = 0; j < lower_.size(); ++j) v *= side(j);
    return v;
}

Point Rectangle::center() const {
    Point c(lower_.size());
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = 0.5 * (lower_[j] + upper_[j]);
    return c;
}

bool Rectangle::contains(std::span<const double> x, double tol) const {
    if (x.size() != lower_.size()) return false;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j] < lower_[j] - tol || x[j] > upper_[j] + tol) return false;
    return true;
}

bool Rectangle::contains(const Rectangle& other, double tol) const {
    return contains(other.lower(), tol) && contains(other.upper(), tol);
}

Rectangle Rectangle::enlarged(double eps) const {
    auto lo = lower_;
    auto hi = upper_;
    for (std::size_t j = 0; j < lo.size(); ++j) {
        lo[j] -= eps;
        hi[j] += eps;
    }
    return {std::move(lo), std::move(hi)};
}

AnisotropicMetric::AnisotropicMetric(std::vector<double> alpha) : alpha_(std::move(alpha)) {
    if (alpha_.empty()) throw DomainError("metric: alpha must be non-empty");
    for (double a : alpha_)
        if (!(a > 0.0 && a < 1.0))
            throw DomainError("metric: every alpha_j must lie in (0,1), got " + std::to_string(a));
}

double AnisotropicMetric::q() const noexcept {
    double q = 0.0;
    for (double a : alpha_) q += 1.0 / a;
    return q;
}

double AnisotropicMetric::operator()(std::span<const double> s, std::span<const double> t) const {
    if (s.size() != alpha_.size() || t.size() != alpha_.size())
        throw DomainError("metric: dimension mismatch (metric " + std::to_string(alpha_.size()) +
                          ", points " + std::to_string(s.size()) + "/" + std::to_string(t.size()) +
                          ")");
    double d = 0.0;
    for (std::size_t j = 0; j < alpha_.size(); ++j) {
        const double gap = std::abs(s[j] - t[j]);
        if (gap > 0.0) d += std::pow(gap, alpha_[j]);
    }
    return d;
}

double delta(const AnisotropicMetric& metric, std::span<const double> s, std::span<const double> t) {
    return metric(s, t);
}

bool ball_contains(const AnisotropicMetric& metric, std::span<const double> center, double eta,
                   std::span<const double> x) {
    if (!(eta > 0.0)) throw DomainError("ball_contains: eta must be positive");
    return metric(x, center) <= eta;
}

GridSpec::GridSpec(Rectangle rect, std::vector<std::size_t> counts, std::size_t cap)
    : rect_(std::move(rect)), counts_(std::move(counts)), size_(1) {
    if (counts_.size() != rect_.dimension())
        throw DomainError("grid: counts length " + std::to_string(counts_.size()) +
                          " does not match rectangle dimension " +
                          std::to_string(rect_.dimension()));
    for (std::size_t c : counts_) {
        if (c < 2) throw DomainError("grid: every axis needs at least 2 points");
        if (size_ > cap / c)
            throw ResourceError("grid: point count exceeds cap " + std::to_string(cap) +
                                "; coarsen the grid");
        size_ *= c;
    }
    if (size_ > cap)
        throw ResourceError("grid: point count exceeds cap " + std::to_string(cap) +
                            "; coarsen the grid");
}

double GridSpec::spacing(std::size_t axis) const {
    return rect_.side(axis) / static_cast<double>(counts_[axis] - 1);
}

double GridSpec::coordinate(std::size_t axis, std::size_t index) const {
    if (index + 1 == counts_[axis]) return rect_.upper()[axis];
    return rect_.lower()[axis] + static_cast<double>(index) * spacing(axis);
}

std::vector<std::size_t> GridSpec::multi_index(std::size_t flat) const {
    std::vector<std::size_t> m(counts_.size());
    for (std::size_t j = counts_.size(); j-- > 0;) {
        m[j] = flat % counts_[j];
        flat /= counts_[j];
    }
    return m;
}

std::size_t GridSpec::flat_index(std::span<const std::size_t> multi) const {
    std::size_t flat = 0;
    for (std::size_t j = 0; j < counts_.size(); ++j) flat = flat * counts_[j] + multi[j];
    return flat;
}

Point GridSpec::point(std::size_t flat) const {
    const auto m = multi_index(flat);
    Point p(m.size());
    for (std::size_t j = 0; j < m.size(); ++j) p[j] = coordinate(j, m[j]);
    return p;
}

std::vector<double> GridSpec::axis_coordinates(std::size_t axis) const {
    std::vector<double> c(counts_[axis]);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = coordinate(axis, i);
    return c;
}

std::vector<Point> grid_points(const GridSpec& grid) {
    std::vector<Point> pts;
    pts.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back(grid.point(i));
    return pts;
}

unsigned dyadic_depth(double alpha, unsigned q) {
    // ceil(q / alpha), guarding against q/alpha landing a hair above an integer.
    const double x = static_cast<double>(q) / alpha;
    const double r = std::round(x);
    if (std::abs(x - r) <= 1e-12 * std::max(1.0, x)) return static_cast<unsigned>(r);
    return static_cast<unsigned>(std::ceil(x));
}

std::vector<DyadicCube> dyadic_decompose(const Rectangle& rect, const AnisotropicMetric& metric,
                                         unsigned q, std::size_t cap) {
    const std::size_t n = rect.dimension();
    if (metric.dimension() != n) throw DomainError("dyadic_decompose: dimension mismatch");

    std::vector<std::size_t> per_axis(n);
    std::size_t total = 1;
    for (std::size_t j = 0; j < n; ++j) {
        const unsigned depth = dyadic_depth(metric.alpha()[j], q);
        if (depth >= 63) throw ResourceError("dyadic_decompose: order too large");
        per_axis[j] = std::size_t{1} << depth;
        if (total > cap / per_axis[j])
            throw ResourceError("dyadic_decompose: cube count exceeds cap " + std::to_string(cap));
        total *= per_axis[j];
    }

    std::vector<DyadicCube> cubes;
    cubes.reserve(total);
    std::vector<std::int64_t> idx(n, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (std::size_t j = n; j-- > 0;) {
            idx[j] = static_cast<std::int64_t>(rem % per_axis[j]);
            rem /= per_axis[j];
        }
        std::vector<double> lo(n), hi(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double m = static_cast<double>(per_axis[j]);
            const double i = static_cast<double>(idx[j]);
            lo[j] = rect.lower()[j] + rect.side(j) * (i / m);
            hi[j] = (idx[j] + 1 == static_cast<std::int64_t>(per_axis[j]))
                        ? rect.upper()[j]
                        : rect.lower()[j] + rect.side(j) * ((i + 1.0) / m);
        }
        Rectangle box(std::move(lo), std::move(hi));
        Point c = box.center();
        cubes.push_back(DyadicCube{q, idx, std::move(box), std::move(c)});
    }
    return cubes;
}

double delta_diameter(std::span<const double> sides, const AnisotropicMetric& metric) {
    if (sides.size() != metric.dimension()) throw DomainError("delta_diameter: dimension mismatch");
    double d = 0.0;
    for (std::size_t j = 0; j < sides.size(); ++j)
        if (sides[j] > 0.0) d += std::pow(sides[j], metric.alpha()[j]);
    return d;
}

double delta_diameter(const Rectangle& box, const AnisotropicMetric& metric) {
    std::vector<double> sides(box.dimension());
    for (std::size_t j = 0; j < sides.size(); ++j) sides[j] = box.side(j);
    return delta_diameter(sides, metric);
}

double delta_diameter(const DyadicCube& cube, const AnisotropicMetric& metric) {
    return delta_diameter(cube.box, metric);
}

}  // namespace polarlab
