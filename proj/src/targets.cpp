#include "polarlab/targets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <sstream>

#include "polarlab/error.hpp"
#include "polarlab/rng.hpp"

namespace polarlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_finite(std::span<const double> x, const char* who) {
    for (double v : x)
        if (!std::isfinite(v)) throw DomainError(std::string(who) + ": coordinates must be finite");
}

double point_segment_distance(std::span<const double> x, std::span<const double> a, std::span<const double> b) {
    double ab2 = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double ab = b[j] - a[j];
        ab2 += ab * ab;
        dot += (x[j] - a[j]) * ab;
    }
    const double u = ab2 > 0.0 ? std::clamp(dot / ab2, 0.0, 1.0) : 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double d = x[j] - (a[j] + u * (b[j] - a[j]));
        s += d * d;
    }
    return std::sqrt(s);
}

double box_distance(std::span<const double> x, const Point& lo, const Point& hi) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double d = x[j] < lo[j] ? lo[j] - x[j] : (x[j] > hi[j] ? x[j] - hi[j] : 0.0);
        s += d * d;
    }
    return std::sqrt(s);
}

// Minimum of a convex function on [0,1] by golden-section search.
template <class F>
double convex_min_unit(F&& fn) {
    constexpr double inv_phi = 0.6180339887498949;
    double lo = 0.0, hi = 1.0;
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = fn(x1), f2 = fn(x2);
    for (int it = 0; it < 90 && hi - lo > 1e-15; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = fn(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = fn(x2);
        }
    }
    return std::min({f1, f2, fn(0.0), fn(1.0)});
}

// Elementary symmetric polynomials e_0..e_n of the values.
std::vector<double> elementary_symmetric(std::span<const double> v) {
    std::vector<double> e(v.size() + 1, 0.0);
    e[0] = 1.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t k = i + 1; k-- > 0;) e[k + 1] += e[k] * v[i];
    return e;
}

constexpr std::array<unsigned, 16> kPrimes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

double radical_inverse(std::uint64_t i, unsigned base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

}  // namespace

TargetSet TargetSet::point(Point x) {
    if (x.empty()) throw DomainError("point target: empty coordinates");
    require_finite(x, "point target");
    const auto d = x.size();
    return {target_variant::PointTarget{std::move(x)}, d};
}

TargetSet TargetSet::segment(Point a, Point b) {
    if (a.empty() || a.size() != b.size()) throw DomainError("segment target: endpoint dimensions differ");
    require_finite(a, "segment target");
    require_finite(b, "segment target");
    const auto d = a.size();
    return {target_variant::Segment{std::move(a), std::move(b)}, d};
}

TargetSet TargetSet::box(Point lower, Point upper) {
    if (lower.empty() || lower.size() != upper.size()) throw DomainError("box target: bound dimensions differ");
    require_finite(lower, "box target");
    require_finite(upper, "box target");
    for (std::size_t j = 0; j < lower.size(); ++j)
        if (lower[j] > upper[j]) throw DomainError("box target: lower must not exceed upper");
    const auto d = lower.size();
    return {target_variant::Box{std::move(lower), std::move(upper)}, d};
}

TargetSet TargetSet::point_cloud(std::vector<Point> points, double mesh) {
    if (points.empty()) throw DomainError("point cloud: no points");
    if (!(mesh > 0.0)) throw DomainError("point cloud: mesh must be positive");
    const auto d = points.front().size();
    for (const auto& p : points) {
        if (p.size() != d || d == 0) throw DomainError("point cloud: inconsistent point dimensions");
        require_finite(p, "point cloud");
    }
    return {target_variant::PointCloud{std::move(points), mesh}, d};
}

TargetSet TargetSet::union_of(std::vector<TargetSet> members) {
    if (members.empty()) throw DomainError("union target: empty union");
    const auto d = members.front().ambient_dim();
    for (const auto& m : members)
        if (m.ambient_dim() != d) throw DomainError("union target: members must share ambient dimension");
    return {target_variant::Union{std::move(members)}, d};
}

std::string TargetSet::kind() const {
    return std::visit(overloaded{
                          [](const target_variant::PointTarget&) { return std::string("point"); },
                          [](const target_variant::Segment&) { return std::string("segment"); },
                          [](const target_variant::Box&) { return std::string("box"); },
                          [](const target_variant::PointCloud&) { return std::string("point_cloud"); },
                          [](const target_variant::Union&) { return std::string("union"); },
                      },
                      variant_);
}

std::pair<Point, Point> TargetSet::bounds() const {
    return std::visit(
        overloaded{
            [](const target_variant::PointTarget& p) { return std::pair{p.x, p.x}; },
            [](const target_variant::Segment& s) {
                Point lo(s.a.size()), hi(s.a.size());
                for (std::size_t j = 0; j < lo.size(); ++j) {
                    lo[j] = std::min(s.a[j], s.b[j]);
                    hi[j] = std::max(s.a[j], s.b[j]);
                }
                return std::pair{lo, hi};
            },
            [](const target_variant::Box& b) { return std::pair{b.lower, b.upper}; },
            [](const target_variant::PointCloud& c) {
                Point lo = c.points.front(), hi = c.points.front();
                for (const auto& p : c.points)
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        lo[j] = std::min(lo[j], p[j]);
                        hi[j] = std::max(hi[j], p[j]);
                    }
                return std::pair{lo, hi};
            },
            [](const target_variant::Union& u) {
                auto [lo, hi] = u.members.front().bounds();
                for (const auto& m : u.members) {
                    auto [l, h] = m.bounds();
                    for (std::size_t j = 0; j < lo.size(); ++j) {
                        lo[j] = std::min(lo[j], l[j]);
                        hi[j] = std::max(hi[j], h[j]);
                    }
                }
                return std::pair{lo, hi};
            },
        },
        variant_);
}

double distance(const TargetSet& f, std::span<const double> x) {
    if (x.size() != f.ambient_dim())
        throw DomainError("distance: point dimension " + std::to_string(x.size()) +
                          " does not match target dimension " + std::to_string(f.ambient_dim()));
    return std::visit(
        overloaded{
            [&](const target_variant::PointTarget& p) {
                double s = 0.0;
                for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - p.x[j]) * (x[j] - p.x[j]);
                return std::sqrt(s);
            },
            [&](const target_variant::Segment& s) { return point_segment_distance(x, s.a, s.b); },
            [&](const target_variant::Box& b) { return box_distance(x, b.lower, b.upper); },
            [&](const target_variant::PointCloud& c) {
                double best2 = std::numeric_limits<double>::infinity();
                for (const auto& p : c.points) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < x.size() && s < best2; ++j) s += (x[j] - p[j]) * (x[j] - p[j]);
                    best2 = std::min(best2, s);
                }
                return std::sqrt(best2);
            },
            [&](const target_variant::Union& u) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& m : u.members) best = std::min(best, distance(m, x));
                return best;
            },
        },
        f.variant());
}

double segment_distance(const TargetSet& f, std::span<const double> a, std::span<const double> b) {
    if (a.size() != f.ambient_dim() || b.size() != f.ambient_dim())
        throw DomainError("segment_distance: dimension mismatch");
    const std::size_t d = a.size();
    auto along = [&](double u, Point& buf) {
        for (std::size_t j = 0; j < d; ++j) buf[j] = a[j] + u * (b[j] - a[j]);
        return std::span<const double>(buf);
    };
    return std::visit(
        overloaded{
            [&](const target_variant::PointTarget& p) { return point_segment_distance(p.x, a, b); },
            [&](const target_variant::Segment& s) {
                Point buf(d);
                return convex_min_unit([&](double u) { return point_segment_distance(along(u, buf), s.a, s.b); });
            },
            [&](const target_variant::Box& bx) {
                Point buf(d);
                return convex_min_unit([&](double u) { return box_distance(along(u, buf), bx.lower, bx.upper); });
            },
            [&](const target_variant::PointCloud& c) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& p : c.points) best = std::min(best, point_segment_distance(p, a, b));
                return best;
            },
            [&](const target_variant::Union& u) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& m : u.members) best = std::min(best, segment_distance(m, a, b));
                return best;
            },
        },
        f.variant());
}

double unit_ball_volume(std::size_t d) {
    const double h = 0.5 * static_cast<double>(d);
    return std::pow(std::numbers::pi, h) / std::tgamma(h + 1.0);
}

VolumeEstimate neighborhood_volume(const TargetSet& f, double r, const VolumeOptions& options) {
    if (!(r > 0.0)) throw DomainError("neighborhood_volume: r must be positive");
    const std::size_t d = f.ambient_dim();

    if (const auto* p = std::get_if<target_variant::PointTarget>(&f.variant()); p) {
        (void)p;
        return {unit_ball_volume(d) * std::pow(r, static_cast<double>(d)), 0.0, true, 0};
    }
    if (const auto* s = std::get_if<target_variant::Segment>(&f.variant()); s) {
        double len2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) len2 += (s->b[j] - s->a[j]) * (s->b[j] - s->a[j]);
        const double len = std::sqrt(len2);
        const double dd = static_cast<double>(d);
        return {len * unit_ball_volume(d - 1) * std::pow(r, dd - 1.0) + unit_ball_volume(d) * std::pow(r, dd), 0.0,
                true, 0};
    }
    if (const auto* b = std::get_if<target_variant::Box>(&f.variant()); b) {
        std::vector<double> sides(d);
        for (std::size_t j = 0; j < d; ++j) sides[j] = b->upper[j] - b->lower[j];
        const auto e = elementary_symmetric(sides);
        double v = 0.0;
        for (std::size_t k = 0; k <= d; ++k)
            v += e[k] * unit_ball_volume(d - k) * std::pow(r, static_cast<double>(d - k));
        return {v, 0.0, true, 0};
    }

    if (d > kPrimes.size()) throw DomainError("neighborhood_volume: quasi-random nodes support d <= 16");
    if (options.shifts < 2 || options.nodes_per_shift == 0)
        throw DomainError("neighborhood_volume: need >= 2 shifts and a positive node count");
    auto [lo, hi] = f.bounds();
    double box_volume = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
        lo[j] -= r;
        hi[j] += r;
        box_volume *= hi[j] - lo[j];
    }

    std::vector<double> estimates(options.shifts);
    Point x(d);
    for (std::size_t s = 0; s < options.shifts; ++s) {
        const RngSeed seed{options.scramble_seed, s};
        std::size_t inside = 0;
        for (std::size_t i = 0; i < options.nodes_per_shift; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double u = radical_inverse(i + 1, kPrimes[j]) + counter_uniform(seed, j);
                u -= std::floor(u);
                x[j] = lo[j] + u * (hi[j] - lo[j]);
            }
            if (distance(f, x) <= r) ++inside;
        }
        estimates[s] = box_volume * static_cast<double>(inside) / static_cast<double>(options.nodes_per_shift);
    }
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= static_cast<double>(estimates.size());
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= static_cast<double>(estimates.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(estimates.size())), false,
            options.shifts * options.nodes_per_shift};
}

std::vector<double> geometric_radii(double r_max, double r_min, std::size_t count) {
    if (!(r_max > r_min && r_min > 0.0) || count < 2) throw DomainError("geometric_radii: need r_max > r_min > 0");
    std::vector<double> r(count);
    const double step = std::log(r_min / r_max) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) r[i] = r_max * std::exp(step * static_cast<double>(i));
    r.back() = r_min;
    return r;
}

MinkowskiFit minkowski_fit(const TargetSet& f, const std::vector<double>& r_grid, const VolumeOptions& options) {
    if (r_grid.size() < 8) throw DomainError("minkowski_fit: need at least 8 radii");
    for (std::size_t i = 1; i < r_grid.size(); ++i)
        if (!(r_grid[i] < r_grid[i - 1])) throw DomainError("minkowski_fit: radii must be strictly decreasing");
    if (!(r_grid.back() > 0.0)) throw DomainError("minkowski_fit: radii must be positive");
    if (r_grid.front() / r_grid.back() < 100.0 * (1.0 - 1e-12))
        throw DomainError("minkowski_fit: radii must span at least two decades");

    MinkowskiFit fit;
    fit.r_grid = r_grid;
    for (double r : r_grid) {
        const auto v = neighborhood_volume(f, r, options);
        if (!(v.value > 0.0) || !std::isfinite(v.value))
            throw NumericalError("minkowski_fit: volume estimate failed at r = " + std::to_string(r));
        fit.volumes.push_back(v.value);
    }
    // Monte Carlo noise must not break the monotone shape of the curve.
    for (std::size_t i = fit.volumes.size() - 1; i-- > 0;) fit.volumes[i] = std::max(fit.volumes[i], fit.volumes[i + 1]);

    const std::size_t n = r_grid.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = std::log(r_grid[i]), y = std::log(fit.volumes[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double dn = static_cast<double>(n);
    fit.slope = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
    fit.intercept = (sy - fit.slope * sx) / dn;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double res = std::log(fit.volumes[i]) - (fit.intercept + fit.slope * std::log(r_grid[i]));
        ss += res * res;
    }
    fit.log_log_slope_residual = std::sqrt(ss / dn);
    const double d = static_cast<double>(f.ambient_dim());
    fit.theta_raw = d - fit.slope;
    fit.theta_hat = std::clamp(fit.theta_raw, 0.0, d);
    return fit;
}

std::string to_string(PolarityVerdict v) {
    switch (v) {
        case PolarityVerdict::PolarByTheorem: return "polar-by-theorem";
        case PolarityVerdict::NonpolarRegime: return "nonpolar-regime";
        case PolarityVerdict::Inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

PolarityVerdict polarity_classify(double q, std::size_t d, double theta, double kappa) {
    if (!(q > 0.0)) throw DomainError("polarity_classify: Q must be positive");
    if (d < 1) throw DomainError("polarity_classify: d must be >= 1");
    const double dd = static_cast<double>(d);
    if (dd < q) return PolarityVerdict::NonpolarRegime;
    if (theta >= 0.0 && theta <= dd - q && kappa >= 0.0 && kappa < (dd - theta) / q)
        return PolarityVerdict::PolarByTheorem;
    return PolarityVerdict::Inconclusive;
}

TargetSet load_point_cloud_csv(std::istream& in, double mesh) {
    std::vector<Point> points;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        Point p;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                p.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (points.empty() && line_no == 1) continue;  // header row
            throw DomainError("point cloud csv: non-numeric value on line " + std::to_string(line_no));
        }
        points.push_back(std::move(p));
    }
    if (points.empty()) throw DomainError("point cloud csv: no points");
    if (!(mesh > 0.0)) {
        double worst = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < points.size(); ++k) {
                if (k == i || points[k].size() != points[i].size()) continue;
                double s = 0.0;
                for (std::size_t j = 0; j < points[i].size(); ++j)
                    s += (points[i][j] - points[k][j]) * (points[i][j] - points[k][j]);
                best = std::min(best, std::sqrt(s));
            }
            if (std::isfinite(best)) worst = std::max(worst, best);
        }
        mesh = worst > 0.0 ? 0.5 * worst : 1e-12;
    }
    return TargetSet::point_cloud(std::move(points), mesh);
}

}  // namespace polarlab
