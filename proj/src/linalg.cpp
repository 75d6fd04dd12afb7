#include "polarlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "polarlab/error.hpp"

namespace polarlab {

Matrix Matrix::identity(std::size_t dim) {
    Matrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw DomainError("matrix: rows must form a square array");
        for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

double Matrix::trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
    return t;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Matrix::frobenius_squared() const {
    return std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0);
}

bool Matrix::is_symmetric(double rel_tol) const {
    const double tol = rel_tol * std::max(1.0, max_abs());
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = i + 1; j < dim_; ++j)
            if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    return true;
}

Matrix Matrix::transpose() const {
    Matrix t(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < dim_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.dim() != b.dim()) throw DomainError("matrix product: dimension mismatch");
    const std::size_t n = a.dim();
    Matrix c(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.dim() != b.dim()) throw DomainError("matrix difference: dimension mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data_.size(); ++i) c.data_[i] -= b.data_[i];
    return c;
}

SymMatrix::SymMatrix(Matrix m) : m_(std::move(m)) {
    if (!m_.is_symmetric(1e-12)) throw DomainError("SymMatrix: entries are not symmetric");
}

void SymMatrix::set(std::size_t i, std::size_t j, double v) {
    m_(i, j) = v;
    m_(j, i) = v;
}

HermMatrix::HermMatrix(Matrix real_part, Matrix imag_part)
    : re_(std::move(real_part)), im_(std::move(imag_part)) {
    if (re_.dim() != im_.dim()) throw DomainError("HermMatrix: part dimensions differ");
    if (!re_.is_symmetric(1e-12)) throw DomainError("HermMatrix: real part is not symmetric");
    const double tol = 1e-12 * std::max(1.0, im_.max_abs());
    for (std::size_t i = 0; i < im_.dim(); ++i) {
        if (im_(i, i) != 0.0) throw DomainError("HermMatrix: imaginary diagonal must be zero");
        for (std::size_t j = i + 1; j < im_.dim(); ++j)
            if (std::abs(im_(i, j) + im_(j, i)) > tol)
                throw DomainError("HermMatrix: imaginary part is not antisymmetric");
    }
}

void HermMatrix::set(std::size_t i, std::size_t j, double re, double im) {
    if (i == j && im != 0.0) throw DomainError("HermMatrix: diagonal entries must be real");
    re_(i, j) = re;
    re_(j, i) = re;
    im_(i, j) = im;
    im_(j, i) = -im;
}

Matrix HermMatrix::real_embedding() const {
    const std::size_t n = dim();
    Matrix e(2 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            e(i, j) = re_(i, j);
            e(i + n, j + n) = re_(i, j);
            e(i, j + n) = -im_(i, j);
            e(i + n, j) = im_(i, j);
        }
    return e;
}

CholeskyResult cholesky(const SymMatrix& m, const JitterPolicy& policy) {
    const std::size_t n = m.dim();
    if (n == 0) return {Matrix(0), 0.0};
    const double unit = std::abs(m.matrix().trace()) / static_cast<double>(n);
    double worst_pivot = std::numeric_limits<double>::infinity();

    for (double step : policy.ladder) {
        const double jitter = step * unit;
        Matrix l(n);
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j) {
            auto lj = l.row(j);
            double pivot = m(j, j) + jitter;
            for (std::size_t k = 0; k < j; ++k) pivot -= lj[k] * lj[k];
            if (!(pivot > 0.0)) {
                worst_pivot = std::min(worst_pivot, pivot);
                ok = false;
                break;
            }
            const double ljj = std::sqrt(pivot);
            lj[j] = ljj;
            for (std::size_t i = j + 1; i < n; ++i) {
                auto li = l.row(i);
                double s = m(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
                li[j] = s / ljj;
            }
        }
        if (ok) return {std::move(l), jitter};
    }
    std::ostringstream os;
    os << "cholesky: matrix is not PSD (most negative pivot " << worst_pivot
       << " after the full jitter ladder)";
    throw NumericalError(os.str());
}

namespace {

// Householder reduction to tridiagonal form (EISPACK tred2 layout). On exit
// d holds the diagonal, e the subdiagonal in e[1..n-1], v the transform.
void tridiagonalize(Matrix& v, std::vector<double>& d, std::vector<double>& e) {
    const std::size_t n = v.dim();
    for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
                v(j, i) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                v(j, i) = f;
                g = e[j] + v(j, j) * f;
                for (std::size_t k = j + 1; k <= i - 1; ++k) {
                    g += v(k, j) * d[k];
                    e[k] += v(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                for (std::size_t k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    for (std::size_t i = 0; i + 1 < n; ++i) {
        v(n - 1, i) = v(i, i);
        v(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
            for (std::size_t j = 0; j <= i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
                for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
            }
        }
        for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
        v(n - 1, j) = 0.0;
    }
    v(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

// Implicit QL on the tridiagonal (d, e), accumulating rotations into v.
void tridiagonal_ql(Matrix& v, std::vector<double>& d, std::vector<double>& e, bool want_vectors) {
    const std::size_t n = v.dim();
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;

    const std::size_t cap = 50 * n;
    std::size_t total_iterations = 0;
    double f = 0.0;
    double tst1 = 0.0;
    const double eps = std::numeric_limits<double>::epsilon();

    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::size_t m = l;
        while (m < n) {
            if (std::abs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            do {
                if (++total_iterations > cap) {
                    std::ostringstream os;
                    os << "eigen_sym: QL iteration did not converge within " << cap
                       << " iterations (dim " << n << ", stuck at index " << l
                       << ", residual off-diagonal " << std::abs(e[l]) << ")";
                    throw NumericalError(os.str());
                }
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t i = m; i-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if (want_vectors) {
                        for (std::size_t k = 0; k < n; ++k) {
                            h = v(k, i + 1);
                            v(k, i + 1) = s * v(k, i) + c * h;
                            v(k, i) = c * v(k, i) - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

}  // namespace

SymEigen eigen_sym(const SymMatrix& m, bool want_vectors) {
    const std::size_t n = m.dim();
    SymEigen out;
    if (n == 0) return out;
    for (double x : m.matrix().data())
        if (!std::isfinite(x)) throw NumericalError("eigen_sym: matrix has non-finite entries");
    if (n == 1) {
        out.values = {m(0, 0)};
        if (want_vectors) out.vectors = Matrix::identity(1);
        return out;
    }

    Matrix v = m.matrix();
    std::vector<double> d(n), e(n);
    tridiagonalize(v, d, e);
    tridiagonal_ql(v, d, e, want_vectors);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    out.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) out.values[k] = d[order[k]];
    if (want_vectors) {
        out.vectors = Matrix(n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

std::vector<double> eigvals_sym(const SymMatrix& m) { return eigen_sym(m, false).values; }

std::vector<double> eigvals_herm(const HermMatrix& m) {
    const std::size_t n = m.dim();
    const auto doubled = eigvals_sym(SymMatrix(m.real_embedding()));
    double radius = 0.0;
    for (double x : doubled) radius = std::max(radius, std::abs(x));
    const double tol = 1e-8 * std::max(1.0, radius);

    std::vector<double> values(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double a = doubled[2 * k];
        const double b = doubled[2 * k + 1];
        if (std::abs(a - b) > tol) {
            std::ostringstream os;
            os << "eigvals_herm: embedding spectrum failed pairing at index " << k << " (" << a
               << " vs " << b << ")";
            throw NumericalError(os.str());
        }
        values[k] = 0.5 * (a + b);
    }
    return values;
}

}  // namespace polarlab
