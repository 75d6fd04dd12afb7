#include "polarlab/matrixproc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "polarlab/error.hpp"

namespace polarlab {

namespace {

HermMatrix checked_shift(std::size_t dim, HermMatrix shift) {
    if (shift.dim() == 0) return HermMatrix(dim);
    if (shift.dim() != dim)
        throw DomainError("ensemble: shift is " + std::to_string(shift.dim()) + "x" + std::to_string(shift.dim()) +
                          ", expected " + std::to_string(dim) + "x" + std::to_string(dim));
    return shift;
}

}  // namespace

EnsembleSpec::EnsembleSpec(int beta, std::size_t dim, KernelDescriptor kernel, HermMatrix shift)
    : beta_(beta), dim_(dim), kernel_(std::move(kernel)), shift_(std::move(shift)) {
    if (dim_ < 2) throw DomainError("ensemble: matrix dimension must be >= 2");
}

EnsembleSpec EnsembleSpec::symmetric(std::size_t dim, KernelDescriptor kernel, SymMatrix shift) {
    HermMatrix h = shift.dim() == 0 ? HermMatrix(dim)
                                    : HermMatrix(shift.matrix(), Matrix(shift.dim()));
    return EnsembleSpec(1, dim, std::move(kernel), checked_shift(dim, std::move(h)));
}

EnsembleSpec EnsembleSpec::hermitian(std::size_t dim, KernelDescriptor kernel, HermMatrix shift) {
    return EnsembleSpec(2, dim, std::move(kernel), checked_shift(dim, std::move(shift)));
}

std::size_t EnsembleSpec::entry_fields() const noexcept {
    const std::size_t xi = dim_ * (dim_ + 1) / 2;
    return beta_ == 2 ? xi + dim_ * (dim_ - 1) / 2 : xi;
}

std::size_t xi_component(std::size_t dim, std::size_t i, std::size_t j) {
    // Rows 0..i-1 of the upper triangle hold i*dim - i(i-1)/2 entries.
    return i * dim - i * (i - 1) / 2 + (j - i);
}

std::size_t eta_component(std::size_t dim, std::size_t i, std::size_t j) {
    const std::size_t before = i * (dim - 1) - i * (i - 1) / 2;
    return dim * (dim + 1) / 2 + before + (j - i - 1);
}

SymMatrix MatrixPath::symmetric(std::size_t p) const {
    const std::size_t d = spec.dim();
    SymMatrix m(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) m.set(i, j, re_at(p, i, j));
    return m;
}

HermMatrix MatrixPath::hermitian(std::size_t p) const {
    const std::size_t d = spec.dim();
    HermMatrix m(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) m.set(i, j, re_at(p, i, j), i == j ? 0.0 : im_at(p, i, j));
    return m;
}

void assemble_matrix_at(const EnsembleSpec& spec, std::span<const double> entries, std::size_t stride,
                        std::size_t p, std::span<double> re, std::span<double> im) {
    const std::size_t d = spec.dim();
    const Matrix& are = spec.shift().real_part();
    const Matrix& aim = spec.shift().imag_part();
    auto entry = [&](std::size_t c) { return entries[c * stride + p]; };
    for (std::size_t i = 0; i < d; ++i) {
        re[i * d + i] = are(i, i) + std::numbers::sqrt2 * entry(xi_component(d, i, i));
        im[i * d + i] = 0.0;
        for (std::size_t j = i + 1; j < d; ++j) {
            const double x = entry(xi_component(d, i, j));
            const double y = spec.beta() == 2 ? entry(eta_component(d, i, j)) : 0.0;
            re[i * d + j] = are(i, j) + x;
            re[j * d + i] = are(j, i) + x;
            im[i * d + j] = aim(i, j) + y;
            im[j * d + i] = aim(j, i) - y;
        }
    }
}

MatrixPath assemble_matrix_path(const EnsembleSpec& spec, const FieldSample& entries) {
    const std::size_t d = spec.dim();
    if (entries.components != spec.entry_fields())
        throw DomainError("matrix path: expected " + std::to_string(spec.entry_fields()) + " entry fields, got " +
                          std::to_string(entries.components));
    const std::size_t g = entries.grid.size();
    MatrixPath path{entries.grid, spec, entries.seed, std::vector<double>(g * d * d), std::vector<double>(g * d * d)};
    for (std::size_t p = 0; p < g; ++p)
        assemble_matrix_at(spec, entries.values, g, p, std::span(path.re).subspan(p * d * d, d * d),
                           std::span(path.im).subspan(p * d * d, d * d));
    return path;
}

MatrixPath build_matrix_path(const EnsembleSpec& spec, const FieldSampler& sampler, const RngSeed& seed) {
    return assemble_matrix_path(spec, sampler.draw(spec.entry_fields(), seed));
}

MatrixPath build_matrix_path(const EnsembleSpec& spec, const GridSpec& grid, const RngSeed& seed) {
    return build_matrix_path(spec, FieldSampler(spec.kernel(), grid), seed);
}

FieldSample normalize_components(const MatrixPath& path) {
    const std::size_t d = path.spec.dim();
    const std::size_t g = path.points();
    const std::size_t m = path.spec.entry_fields();
    FieldSample out{path.grid, m, std::vector<double>(m * g), path.spec.kernel(), path.seed, std::nullopt, {}};
    const Matrix& are = path.spec.shift().real_part();
    const Matrix& aim = path.spec.shift().imag_part();
    for (std::size_t p = 0; p < g; ++p) {
        for (std::size_t i = 0; i < d; ++i) {
            out.values[xi_component(d, i, i) * g + p] = (path.re_at(p, i, i) - are(i, i)) / std::numbers::sqrt2;
            for (std::size_t j = i + 1; j < d; ++j) {
                out.values[xi_component(d, i, j) * g + p] = path.re_at(p, i, j) - are(i, j);
                if (path.spec.beta() == 2)
                    out.values[eta_component(d, i, j) * g + p] = path.im_at(p, i, j) - aim(i, j);
            }
        }
    }
    return out;
}

void eigenvalues_into(std::size_t dim, int beta, std::span<const double> re, std::span<const double> im,
                      std::span<double> out) {
    if (dim == 2) {
        const double p = re[0], r = re[3], qr = re[1], qi = beta == 2 ? im[1] : 0.0;
        const double mid = 0.5 * (p + r);
        const double rad = std::hypot(0.5 * (p - r), std::hypot(qr, qi));
        out[0] = mid - rad;
        out[1] = mid + rad;
        return;
    }
    Matrix mr(dim);
    std::copy(re.begin(), re.begin() + static_cast<std::ptrdiff_t>(dim * dim), mr.data().begin());
    std::vector<double> vals;
    if (beta == 1) {
        vals = eigvals_sym(SymMatrix(std::move(mr)));
    } else {
        Matrix mi(dim);
        std::copy(im.begin(), im.begin() + static_cast<std::ptrdiff_t>(dim * dim), mi.data().begin());
        vals = eigvals_herm(HermMatrix(std::move(mr), std::move(mi)));
    }
    std::copy(vals.begin(), vals.end(), out.begin());
}

EigenPath eigen_path(const MatrixPath& path) {
    const std::size_t d = path.spec.dim();
    EigenPath eig{path.grid, d, std::vector<double>(path.points() * d)};
    for (std::size_t p = 0; p < path.points(); ++p) {
        try {
            eigenvalues_into(d, path.spec.beta(), std::span(path.re).subspan(p * d * d, d * d),
                             std::span(path.im).subspan(p * d * d, d * d), std::span(eig.values).subspan(p * d, d));
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (grid point " + std::to_string(p) + ")");
        }
    }
    return eig;
}

double spectrum_k_gap(std::span<const double> sorted, std::size_t k, std::size_t* where) {
    if (k < 2 || k > sorted.size())
        throw DomainError("min_k_gap: k = " + std::to_string(k) + " outside [2, " + std::to_string(sorted.size()) +
                          "]");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + k - 1 < sorted.size(); ++i) {
        const double gap = sorted[i + k - 1] - sorted[i];
        if (gap < best) {
            best = gap;
            if (where) *where = i;
        }
    }
    return best;
}

GapResult min_k_gap(const EigenPath& eig, std::size_t k, std::span<const std::size_t> subset) {
    if (k < 2 || k > eig.dim)
        throw DomainError("min_k_gap: k = " + std::to_string(k) + " outside [2, " + std::to_string(eig.dim) + "]");
    if (subset.empty()) throw DomainError("min_k_gap: no grid points");
    GapResult r;
    r.value = std::numeric_limits<double>::infinity();
    for (std::size_t p : subset) {
        std::size_t i = 0;
        const double gap = spectrum_k_gap(eig.at(p), k, &i);
        if (gap < r.value) {
            r.value = gap;
            r.grid_index = p;
            r.eigen_index = i + 1;
        }
    }
    r.point = eig.grid.point(r.grid_index);
    return r;
}

GapResult min_k_gap(const EigenPath& eig, std::size_t k) {
    std::vector<std::size_t> all(eig.grid.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return min_k_gap(eig, k, all);
}

void write_eigen_path_csv(std::ostream& out, const EigenPath& eig) {
    const std::size_t n = eig.grid.dimension();
    for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << 't' << j + 1;
    for (std::size_t k = 0; k < eig.dim; ++k) out << ",lambda" << k + 1;
    out << '\n';
    const auto old = out.precision(17);
    for (std::size_t p = 0; p < eig.grid.size(); ++p) {
        const Point t = eig.grid.point(p);
        for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << t[j];
        for (double v : eig.at(p)) out << ',' << v;
        out << '\n';
    }
    out.precision(old);
}

}  // namespace polarlab
