#include "polarlab/sampler.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "polarlab/error.hpp"

namespace polarlab {

namespace {

// Dense factors hold n^2 doubles; beyond this the request is refused.
constexpr std::size_t kDenseCap = std::size_t{1} << 13;

bool same_point(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t j = 0; j < a.size(); ++j)
        if (std::abs(a[j] - b[j]) > 1e-12 * std::max(1.0, std::abs(a[j]))) return false;
    return true;
}

}  // namespace

SymMatrix covariance_matrix(const KernelDescriptor& kernel, const std::vector<Point>& points) {
    for (const auto& p : points) kernel.check_admissible(p);
    SymMatrix m(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, kernel(points[i], points[j]));
    return m;
}

std::string to_string(FactorKind kind) {
    switch (kind) {
        case FactorKind::Dense: return "dense";
        case FactorKind::Kronecker: return "kronecker";
        case FactorKind::Markov: return "markov";
    }
    return "dense";
}

GaussianFactor GaussianFactor::dense(const KernelDescriptor& kernel, const std::vector<Point>& points,
                                     const JitterPolicy& policy) {
    if (points.size() > kDenseCap)
        throw ResourceError("dense factor: " + std::to_string(points.size()) +
                            " points exceeds the dense cap " + std::to_string(kDenseCap) +
                            "; coarsen the grid");
    auto chol = cholesky(covariance_matrix(kernel, points), policy);
    GaussianFactor f;
    f.kind_ = FactorKind::Dense;
    f.size_ = points.size();
    f.jitter_ = chol.jitter;
    f.upper_.resize(f.size_ * f.size_);
    for (std::size_t i = 0; i < f.size_; ++i)
        for (std::size_t j = 0; j <= i; ++j) f.upper_[j * f.size_ + i] = chol.lower(i, j);
    return f;
}

GaussianFactor GaussianFactor::kronecker(const KernelDescriptor& kernel, const GridSpec& grid,
                                         const JitterPolicy& policy) {
    if (!kernel.separable()) throw DomainError(kernel.name() + ": Kronecker path needs a product-form kernel");
    if (kernel.dimension() != grid.dimension()) throw DomainError("kronecker: grid dimension mismatch");
    GaussianFactor f;
    f.kind_ = FactorKind::Kronecker;
    f.size_ = grid.size();
    for (std::size_t axis = 0; axis < grid.dimension(); ++axis) {
        const auto coords = grid.axis_coordinates(axis);
        SymMatrix c(coords.size());
        for (std::size_t i = 0; i < coords.size(); ++i)
            for (std::size_t j = 0; j <= i; ++j) c.set(i, j, kernel.axis_covariance(axis, coords[i], coords[j]));
        auto chol = cholesky(c, policy);
        f.jitter_ = std::max(f.jitter_, chol.jitter);
        f.axis_factors_.push_back(std::move(chol.lower));
    }
    return f;
}

GaussianFactor GaussianFactor::markov(const KernelDescriptor& kernel, const std::vector<Point>& points) {
    if (!kernel.markov() || kernel.dimension() != 1)
        throw DomainError(kernel.name() + ": Markov path needs a one-axis min-clock kernel");
    for (const auto& p : points) kernel.check_admissible(p);
    const std::size_t n = points.size();
    std::vector<double> clock(n);
    for (std::size_t i = 0; i < n; ++i) clock[i] = kernel.markov_clock(points[i][0]);

    GaussianFactor f;
    f.kind_ = FactorKind::Markov;
    f.size_ = n;
    f.order_.resize(n);
    std::iota(f.order_.begin(), f.order_.end(), std::size_t{0});
    std::stable_sort(f.order_.begin(), f.order_.end(),
                     [&](std::size_t a, std::size_t b) { return clock[a] < clock[b]; });
    f.scale_.resize(n);
    f.increments_.resize(n);
    double previous = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = f.order_[k];
        const double inc = clock[i] - previous;
        if (inc < 0.0) throw NumericalError(kernel.name() + ": negative clock value on the point set");
        f.increments_[k] = std::sqrt(inc);
        f.scale_[k] = kernel.markov_scale(points[i][0]);
        previous = clock[i];
    }
    return f;
}

void GaussianFactor::apply(std::span<const double> z, std::span<double> x, std::span<double> scratch) const {
    if (z.size() != size_ || x.size() != size_) throw DomainError("factor apply: size mismatch");
    switch (kind_) {
        case FactorKind::Dense: {
            std::fill(x.begin(), x.end(), 0.0);
            const std::size_t n = size_;
            double* xs = x.data();
            for (std::size_t j = 0; j < n; ++j) {
                const double zj = z[j];
                const double* row = upper_.data() + j * n;
                for (std::size_t i = j; i < n; ++i) xs[i] += zj * row[i];
            }
            return;
        }
        case FactorKind::Markov: {
            double walk = 0.0;
            for (std::size_t k = 0; k < size_; ++k) {
                walk += increments_[k] * z[order_[k]];
                x[order_[k]] = scale_[k] * walk;
            }
            return;
        }
        case FactorKind::Kronecker: {
            if (scratch.size() < size_) throw DomainError("factor apply: scratch too small");
            std::copy(z.begin(), z.end(), x.begin());
            // Mode-j products; the tensor has the last axis fastest.
            std::size_t inner = size_;
            std::size_t outer = 1;
            for (std::size_t axis = 0; axis < axis_factors_.size(); ++axis) {
                const Matrix& l = axis_factors_[axis];
                const std::size_t m = l.dim();
                inner /= m;
                for (std::size_t o = 0; o < outer; ++o) {
                    const std::size_t base = o * m * inner;
                    for (std::size_t i = 0; i < m; ++i) {
                        double* dst = scratch.data() + base + i * inner;
                        std::fill(dst, dst + inner, 0.0);
                        for (std::size_t k = 0; k <= i; ++k) {
                            const double lik = l(i, k);
                            const double* src = x.data() + base + k * inner;
                            for (std::size_t r = 0; r < inner; ++r) dst[r] += lik * src[r];
                        }
                    }
                }
                std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(size_), x.begin());
                outer *= m;
            }
            return;
        }
    }
}

void GaussianFactor::apply(std::span<const double> z, std::span<double> x) const {
    std::vector<double> scratch(kind_ == FactorKind::Dense ? 0 : size_);
    apply(z, x, scratch);
}

Matrix GaussianFactor::to_dense() const {
    Matrix a(size_);
    std::vector<double> e(size_), col(size_);
    for (std::size_t j = 0; j < size_; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        apply(e, col);
        for (std::size_t i = 0; i < size_; ++i) a(i, j) = col[i];
    }
    return a;
}

SamplerPath sampler_path_from_string(const std::string& name) {
    if (name == "auto") return SamplerPath::Auto;
    if (name == "dense") return SamplerPath::Dense;
    if (name == "kronecker") return SamplerPath::Kronecker;
    if (name == "markov") return SamplerPath::Markov;
    throw DomainError("unknown sampler path '" + name + "' (expected auto|dense|kronecker|markov)");
}

FieldSampler::FieldSampler(KernelDescriptor kernel, GridSpec grid, SamplerOptions options)
    : kernel_(std::move(kernel)), grid_(std::move(grid)), anchor_(std::move(options.anchor)) {
    if (kernel_.dimension() != grid_.dimension())
        throw DomainError(kernel_.name() + ": grid dimension " + std::to_string(grid_.dimension()) +
                          " does not match kernel dimension " + std::to_string(kernel_.dimension()));
    points_ = grid_points(grid_);
    if (anchor_) {
        kernel_.check_admissible(*anchor_);
        points_.push_back(*anchor_);
    }
    for (const auto& p : points_) kernel_.check_admissible(p);

    SamplerPath path = options.path;
    if (path == SamplerPath::Auto) {
        if (kernel_.markov() && kernel_.dimension() == 1)
            path = SamplerPath::Markov;
        else if (kernel_.separable() && !anchor_)
            path = SamplerPath::Kronecker;
        else
            path = SamplerPath::Dense;
    }
    switch (path) {
        case SamplerPath::Markov: factor_ = GaussianFactor::markov(kernel_, points_); break;
        case SamplerPath::Kronecker:
            if (anchor_) throw DomainError("Kronecker path cannot carry an off-grid anchor");
            factor_ = GaussianFactor::kronecker(kernel_, grid_, options.jitter);
            break;
        default: factor_ = GaussianFactor::dense(kernel_, points_, options.jitter); break;
    }
}

void FieldSampler::draw_component(const RngSeed& seed, std::size_t component, std::span<double> out,
                                  std::span<double> normals, std::span<double> scratch) const {
    const std::size_t n = points_.size();
    NormalStream(seed).fill(normals.first(n), static_cast<std::uint64_t>(component) * n);
    factor_.apply(normals.first(n), out.first(n), scratch);
}

FieldSample FieldSampler::draw(std::size_t components, const RngSeed& seed) const {
    if (components == 0) throw DomainError("sample_field: component count must be >= 1");
    const std::size_t n = points_.size();
    const std::size_t g = grid_.size();
    FieldSample s{grid_, components, std::vector<double>(components * g), kernel_, seed, anchor_, {}};
    std::vector<double> normals(n), out(n), scratch(n);
    for (std::size_t c = 0; c < components; ++c) {
        draw_component(seed, c, out, normals, scratch);
        std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(g),
                  s.values.begin() + static_cast<std::ptrdiff_t>(c * g));
        if (anchor_) s.anchor_values.push_back(out[g]);
    }
    for (double v : s.values)
        if (!std::isfinite(v)) throw NumericalError("sample_field: non-finite sample value");
    return s;
}

FieldSample sample_field(const KernelDescriptor& kernel, const GridSpec& grid, std::size_t components,
                         const RngSeed& seed, const SamplerOptions& options) {
    return FieldSampler(kernel, grid, options).draw(components, seed);
}

ConditionalSplit conditional_split(const KernelDescriptor& kernel, const FieldSample& sample,
                                   std::span<const double> anchor) {
    kernel.check_admissible(anchor);
    const double var = kernel(anchor, anchor);
    if (!(var > 0.0)) throw DomainError(kernel.name() + ": degenerate anchor (zero variance)");

    std::vector<double> anchor_values;
    if (sample.anchor && same_point(*sample.anchor, anchor)) {
        anchor_values = sample.anchor_values;
    } else {
        for (std::size_t i = 0; i < sample.grid.size() && anchor_values.empty(); ++i) {
            if (same_point(sample.grid.point(i), anchor)) {
                for (std::size_t c = 0; c < sample.components; ++c) anchor_values.push_back(sample.at(c, i));
            }
        }
    }
    if (anchor_values.size() != sample.components)
        throw DomainError("conditional_split: anchor is neither a grid point nor the sample's joint anchor");

    ConditionalSplit split{sample, sample, Point(anchor.begin(), anchor.end()), anchor_values};
    const std::size_t g = sample.grid.size();
    for (std::size_t i = 0; i < g; ++i) {
        const double weight = kernel(sample.grid.point(i), anchor) / var;
        for (std::size_t c = 0; c < sample.components; ++c) {
            const double x2 = weight * anchor_values[c];
            split.x2.values[c * g + i] = x2;
            split.x1.values[c * g + i] = sample.values[c * g + i] - x2;
        }
    }
    split.x1.anchor_values.assign(sample.components, 0.0);
    split.x2.anchor_values = anchor_values;
    split.x1.anchor = split.x2.anchor = split.anchor;
    return split;
}

double theoretical_cross_covariance(const KernelDescriptor& kernel, std::span<const double> anchor,
                                    std::span<const double> s, std::span<const double> t) {
    const double caa = kernel(anchor, anchor);
    if (!(caa > 0.0)) throw DomainError(kernel.name() + ": degenerate anchor (zero variance)");
    const double csa = kernel(s, anchor);
    const double cta = kernel(t, anchor);
    const double gs = csa / caa;
    const double gt = cta / caa;
    // Cov(X(s) - gs X(a), gt X(a)) = gt (C(s,a) - gs C(a,a)).
    return gt * (csa - gs * caa);
}

IncrementBoundReport x2_increment_bound_check(const KernelDescriptor& kernel,
                                              std::span<const double> anchor,
                                              const std::vector<std::pair<Point, Point>>& pairs) {
    const double caa = kernel(anchor, anchor);
    if (!(caa > 0.0)) throw DomainError(kernel.name() + ": degenerate anchor (zero variance)");
    const auto& delta = kernel.delta();
    IncrementBoundReport report;
    for (const auto& [s, t] : pairs) {
        double scale = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            const double gap = std::abs(s[j] - t[j]);
            if (gap > 0.0) scale += std::pow(gap, delta[j]);
        }
        if (scale == 0.0) continue;
        const double diff = std::abs(kernel(s, anchor) - kernel(t, anchor)) / caa;
        ++report.pairs_used;
        const double k = diff / scale;
        if (k > report.constant || report.worst_s.empty()) {
            report.constant = std::max(report.constant, k);
            report.worst_s = s;
            report.worst_t = t;
        }
    }
    return report;
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary dumps assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void write_field_binary(std::ostream& out, const FieldSample& sample) {
    const auto& counts = sample.grid.counts();
    if (counts.size() > 4) throw DomainError("binary dump supports at most 4 index axes");
    out.write("PFLD", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(sample.components));
    put_u32(out, static_cast<std::uint32_t>(counts.size()));
    for (std::size_t j = 0; j < 4; ++j) put_u32(out, j < counts.size() ? static_cast<std::uint32_t>(counts[j]) : 0U);
    out.write(reinterpret_cast<const char*>(sample.values.data()),
              static_cast<std::streamsize>(sample.values.size() * sizeof(double)));
}

FieldDump read_field_binary(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || std::memcmp(magic.data(), "PFLD", 4) != 0) throw DomainError("binary dump: bad magic");
    FieldDump dump;
    dump.version = get_u32(in);
    dump.components = get_u32(in);
    const std::uint32_t n = get_u32(in);
    if (n == 0 || n > 4) throw DomainError("binary dump: axis count must be in 1..4");
    std::size_t total = 1;
    for (std::uint32_t j = 0; j < 4; ++j) {
        const std::uint32_t c = get_u32(in);
        if (j < n) {
            dump.counts.push_back(c);
            total *= c;
        }
    }
    if (!in) throw DomainError("binary dump: truncated header");
    dump.values.resize(total * dump.components);
    in.read(reinterpret_cast<char*>(dump.values.data()),
            static_cast<std::streamsize>(dump.values.size() * sizeof(double)));
    if (!in) throw DomainError("binary dump: truncated payload");
    return dump;
}

void write_field_csv(std::ostream& out, const FieldSample& sample) {
    const std::size_t n = sample.grid.dimension();
    for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << 't' << j + 1;
    for (std::size_t c = 0; c < sample.components; ++c) out << ",X" << c + 1;
    out << '\n';
    const auto old_precision = out.precision(17);
    for (std::size_t i = 0; i < sample.grid.size(); ++i) {
        const auto p = sample.grid.point(i);
        for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << p[j];
        for (std::size_t c = 0; c < sample.components; ++c) out << ',' << sample.at(c, i);
        out << '\n';
    }
    out.precision(old_precision);
}

}  // namespace polarlab
