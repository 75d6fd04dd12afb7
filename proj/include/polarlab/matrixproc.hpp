#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "polarlab/geometry.hpp"
#include "polarlab/kernels.hpp"
#include "polarlab/linalg.hpp"
#include "polarlab/rng.hpp"
#include "polarlab/sampler.hpp"

namespace polarlab {

/// Y(t) = A + X(t) with X symmetric (beta = 1) or Hermitian (beta = 2), its
/// entries built from i.i.d. copies of a scalar field with kernel `kernel`.
class EnsembleSpec {
public:
    /// beta = 1; a zero shift when `shift` has dimension 0.
    static EnsembleSpec symmetric(std::size_t dim, KernelDescriptor kernel, SymMatrix shift = {});
    /// beta = 2.
    static EnsembleSpec hermitian(std::size_t dim, KernelDescriptor kernel, HermMatrix shift = {});

    int beta() const noexcept { return beta_; }
    std::size_t dim() const noexcept { return dim_; }
    const KernelDescriptor& kernel() const noexcept { return kernel_; }
    /// Shift as a Hermitian matrix; its imaginary part is zero for beta = 1.
    const HermMatrix& shift() const noexcept { return shift_; }

    /// d(d+1)/2 xi fields, plus d(d-1)/2 eta fields for beta = 2.
    std::size_t entry_fields() const noexcept;

private:
    EnsembleSpec(int beta, std::size_t dim, KernelDescriptor kernel, HermMatrix shift);

    int beta_;
    std::size_t dim_;
    KernelDescriptor kernel_;
    HermMatrix shift_;
};

/// Entry fields are ordered: xi_{ij} for i <= j row-major, then eta_{ij} for
/// i < j row-major.
std::size_t xi_component(std::size_t dim, std::size_t i, std::size_t j);
std::size_t eta_component(std::size_t dim, std::size_t i, std::size_t j);

/// Matrices Y(t) at each grid point, stored as d x d real and imaginary
/// parts, point-major.
struct MatrixPath {
    GridSpec grid;
    EnsembleSpec spec;
    RngSeed seed;
    std::vector<double> re;
    std::vector<double> im;

    std::size_t points() const noexcept { return grid.size(); }
    double re_at(std::size_t p, std::size_t i, std::size_t j) const {
        return re[(p * spec.dim() + i) * spec.dim() + j];
    }
    double im_at(std::size_t p, std::size_t i, std::size_t j) const {
        return im[(p * spec.dim() + i) * spec.dim() + j];
    }
    SymMatrix symmetric(std::size_t p) const;
    HermMatrix hermitian(std::size_t p) const;
};

/// Y at grid point p from component-major entry values with `stride` values
/// per component; `re` and `im` receive d*d row-major entries.
void assemble_matrix_at(const EnsembleSpec& spec, std::span<const double> entries, std::size_t stride,
                        std::size_t p, std::span<double> re, std::span<double> im);

/// Assembles Y from given entry fields (one component per entry field).
MatrixPath assemble_matrix_path(const EnsembleSpec& spec, const FieldSample& entries);

MatrixPath build_matrix_path(const EnsembleSpec& spec, const GridSpec& grid, const RngSeed& seed);
/// Reuses a factorization of spec.kernel() on the grid.
MatrixPath build_matrix_path(const EnsembleSpec& spec, const FieldSampler& sampler, const RngSeed& seed);

/// The unshifted X with diagonal coordinates divided by sqrt(2), in entry
/// field order, so every component has variance C(t,t).
FieldSample normalize_components(const MatrixPath& path);

struct EigenPath {
    GridSpec grid;
    std::size_t dim = 0;
    std::vector<double> values;  // [point * dim + k], ascending per point

    std::span<const double> at(std::size_t p) const { return {values.data() + p * dim, dim}; }
};

EigenPath eigen_path(const MatrixPath& path);

/// Ascending eigenvalues of one matrix given as real/imaginary parts
/// (row-major d x d). Closed form for d = 2.
void eigenvalues_into(std::size_t dim, int beta, std::span<const double> re, std::span<const double> im,
                      std::span<double> out);

struct GapResult {
    double value = 0.0;
    Point point;
    std::size_t grid_index = 0;
    std::size_t eigen_index = 0;  // 1-based i of lambda_{i+k-1} - lambda_i
};

/// min over grid points and i of lambda_{i+k-1}(t) - lambda_i(t).
GapResult min_k_gap(const EigenPath& eig, std::size_t k);
/// Same over a subset of grid points.
GapResult min_k_gap(const EigenPath& eig, std::size_t k, std::span<const std::size_t> subset);

/// Smallest k-gap of one sorted spectrum.
double spectrum_k_gap(std::span<const double> sorted, std::size_t k, std::size_t* where = nullptr);

/// Columns t1..tN, lambda1..lambdad.
void write_eigen_path_csv(std::ostream& out, const EigenPath& eig);

}  // namespace polarlab
