#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace polarlab {

/// Dense real square matrix, row-major. Used for symmetric matrices and for
/// lower-triangular factors.
class Matrix {
public:
    Matrix() = default;
    explicit Matrix(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

    static Matrix identity(std::size_t dim);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t dim() const noexcept { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
    std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    double trace() const;
    double max_abs() const;
    double frobenius_squared() const;
    bool is_symmetric(double rel_tol = 1e-12) const;

    Matrix transpose() const;
    friend Matrix operator*(const Matrix& a, const Matrix& b);
    friend Matrix operator-(const Matrix& a, const Matrix& b);

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Real symmetric matrix. Construction checks symmetry to 1e-12 relative.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(Matrix m);
    explicit SymMatrix(std::size_t dim) : m_(dim) {}

    std::size_t dim() const noexcept { return m_.dim(); }
    double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
    /// Writes (i,j) and (j,i).
    void set(std::size_t i, std::size_t j, double v);
    const Matrix& matrix() const noexcept { return m_; }

private:
    Matrix m_;
};

/// Complex Hermitian matrix stored as real and imaginary parts.
class HermMatrix {
public:
    HermMatrix() = default;
    explicit HermMatrix(std::size_t dim) : re_(dim), im_(dim) {}
    HermMatrix(Matrix real_part, Matrix imag_part);

    std::size_t dim() const noexcept { return re_.dim(); }
    const Matrix& real_part() const noexcept { return re_; }
    const Matrix& imag_part() const noexcept { return im_; }
    /// Writes entry (i,j) = re + i*im and its conjugate at (j,i).
    void set(std::size_t i, std::size_t j, double re, double im);

    double trace() const { return re_.trace(); }
    double frobenius_squared() const { return re_.frobenius_squared() + im_.frobenius_squared(); }
    /// [[Re, -Im], [Im, Re]], the real 2d x 2d embedding.
    Matrix real_embedding() const;

private:
    Matrix re_;
    Matrix im_;
};

struct JitterPolicy {
    /// Multiples of trace/dim tried in order.
    std::vector<double> ladder{0.0, 1e-12, 1e-10, 1e-8};
};

struct CholeskyResult {
    Matrix lower;
    double jitter = 0.0;
};

/// L L^T = m + jitter I with the first jitter from the ladder that succeeds.
/// Throws NumericalError ("not PSD", with the most negative pivot) otherwise.
CholeskyResult cholesky(const SymMatrix& m, const JitterPolicy& policy = {});

struct SymEigen {
    std::vector<double> values;  // ascending
    Matrix vectors;              // column k pairs with values[k]; empty unless requested
};

/// Householder tridiagonalization followed by implicit QL with Wilkinson
/// shifts. At most 50*dim QL iterations.
SymEigen eigen_sym(const SymMatrix& m, bool want_vectors = false);
std::vector<double> eigvals_sym(const SymMatrix& m);

/// Eigenvalues of a Hermitian matrix via the doubled real spectrum of its
/// embedding. Pairs must agree to 1e-8 (scaled by the spectral radius).
std::vector<double> eigvals_herm(const HermMatrix& m);

}  // namespace polarlab
