#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "polarlab/error.hpp"
#include "polarlab/matrixproc.hpp"

using namespace polarlab;

namespace {

const GridSpec kOnePoint(Rectangle({1.0}, {2.0}), {2});

FieldSample entries(const EnsembleSpec& spec, const GridSpec& grid, std::vector<double> values) {
    return FieldSample{grid, spec.entry_fields(), std::move(values), spec.kernel(), {}, std::nullopt, {}};
}

EigenPath single(std::vector<double> spectrum) {
    const std::size_t d = spectrum.size();
    return EigenPath{GridSpec(Rectangle({1.0}, {2.0}), {2}), d, [&] {
                         auto v = spectrum;
                         v.insert(v.end(), spectrum.begin(), spectrum.end());
                         return v;
                     }()};
}

}  // namespace

TEST_SUITE("matrixproc") {
    TEST_CASE("entry layout") {
        CHECK(xi_component(3, 0, 0) == 0);
        CHECK(xi_component(3, 0, 2) == 2);
        CHECK(xi_component(3, 1, 1) == 3);
        CHECK(xi_component(3, 2, 2) == 5);
        CHECK(eta_component(3, 0, 1) == 6);
        CHECK(eta_component(3, 1, 2) == 8);
        CHECK(EnsembleSpec::hermitian(3, KernelDescriptor::bm()).entry_fields() == 9);
        CHECK_THROWS_AS(EnsembleSpec::symmetric(1, KernelDescriptor::bm()), DomainError);
        CHECK_THROWS_AS(EnsembleSpec::symmetric(2, KernelDescriptor::bm(), SymMatrix(Matrix::identity(3))),
                        DomainError);
    }

    TEST_CASE("assembly example") {
        const auto spec = EnsembleSpec::symmetric(2, KernelDescriptor::bm());
        const auto path = assemble_matrix_path(spec, entries(spec, kOnePoint, {0.3, 0.3, -1.2, -1.2, 0.7, 0.7}));
        CHECK(path.re_at(0, 0, 0) == doctest::Approx(std::numbers::sqrt2 * 0.3));
        CHECK(path.re_at(0, 0, 1) == -1.2);
        CHECK(path.re_at(0, 1, 0) == -1.2);
        CHECK(path.re_at(0, 1, 1) == doctest::Approx(std::numbers::sqrt2 * 0.7));
        const auto back = normalize_components(path);
        CHECK(back.at(0, 0) == doctest::Approx(0.3));
        CHECK(back.at(1, 0) == doctest::Approx(-1.2));
        CHECK(back.at(2, 0) == doctest::Approx(0.7));
    }

    TEST_CASE("hermitian with zero imaginary fields is real symmetric") {
        const auto spec = EnsembleSpec::hermitian(2, KernelDescriptor::bm());
        const auto path = assemble_matrix_path(spec, entries(spec, kOnePoint, {1, 1, 2, 2, 3, 3, 0, 0}));
        for (double v : path.im) CHECK(v == 0.0);
        CHECK(normalize_components(path).components == 4);
    }

    TEST_CASE("shift only") {
        const auto spec = EnsembleSpec::symmetric(
            2, KernelDescriptor::bm(), SymMatrix(Matrix::diagonal(std::vector<double>{10.0, -10.0})));
        const auto path = assemble_matrix_path(spec, entries(spec, kOnePoint, std::vector<double>(6, 0.0)));
        const auto eig = eigen_path(path);
        CHECK(eig.at(0)[0] == -10.0);
        CHECK(eig.at(0)[1] == 10.0);
        for (double v : normalize_components(path).values) CHECK(v == 0.0);
    }

    TEST_CASE("eigen path examples") {
        const auto spec = EnsembleSpec::symmetric(3, KernelDescriptor::bm());
        std::vector<double> v(6 * 2, 0.0);
        const double s2 = std::numbers::sqrt2;
        v[xi_component(3, 0, 0) * 2] = 3.0 / s2;
        v[xi_component(3, 1, 1) * 2] = 1.0 / s2;
        v[xi_component(3, 2, 2) * 2] = 2.0 / s2;
        const auto eig = eigen_path(assemble_matrix_path(spec, entries(spec, kOnePoint, v)));
        CHECK(eig.at(0)[0] == doctest::Approx(1.0));
        CHECK(eig.at(0)[1] == doctest::Approx(2.0));
        CHECK(eig.at(0)[2] == doctest::Approx(3.0));

        std::vector<double> out(2);
        const double p = 0.4, q = -1.3, r = 2.2;
        eigenvalues_into(2, 1, std::vector<double>{p, q, q, r}, std::vector<double>(4, 0.0), out);
        const double rad = std::sqrt(0.25 * (p - r) * (p - r) + q * q);
        CHECK(out[0] == doctest::Approx(0.5 * (p + r) - rad));
        CHECK(out[1] == doctest::Approx(0.5 * (p + r) + rad));

        eigenvalues_into(2, 2, std::vector<double>(4, 0.0), std::vector<double>{0, 1, -1, 0}, out);
        CHECK(out[0] == doctest::Approx(-1.0));
        CHECK(out[1] == doctest::Approx(1.0));
    }

    TEST_CASE("gap examples") {
        const auto g2 = min_k_gap(single({0, 1, 3}), 2);
        CHECK(g2.value == 1.0);
        CHECK(g2.eigen_index == 1);
        CHECK(min_k_gap(single({0, 1, 3}), 3).value == 3.0);
        CHECK(min_k_gap(single({2, 2, 5}), 2).value == 0.0);
        CHECK_THROWS_AS(min_k_gap(single({0, 1, 3}), 4), DomainError);
        CHECK_THROWS_AS(min_k_gap(single({0, 1, 3}), 1), DomainError);
    }

    TEST_CASE("entry variances") {
        const auto k = KernelDescriptor::bm();
        const GridSpec g(Rectangle({1.0}, {2.0}), {3});
        const std::size_t n = 10000;
        for (int beta : {1, 2}) {
            const auto spec = beta == 1 ? EnsembleSpec::symmetric(2, k) : EnsembleSpec::hermitian(2, k);
            const FieldSampler s(k, g);
            const std::size_t p = 2;  // t = 2, C(t,t) = 2
            const double c = 2.0;
            double d = 0, o = 0, im = 0;
            for (std::size_t rep = 0; rep < n; ++rep) {
                const auto path = build_matrix_path(spec, s, RngSeed{31, rep});
                d += path.re_at(p, 0, 0) * path.re_at(p, 0, 0);
                o += path.re_at(p, 0, 1) * path.re_at(p, 0, 1);
                im += path.im_at(p, 0, 1) * path.im_at(p, 0, 1);
            }
            // Var of a sample variance of N(0, v) is 2 v^2 / n.
            auto within = [&](double sum, double v) {
                return std::abs(sum / n - v) <= 4.0 * std::sqrt(2.0 / n) * v;
            };
            CHECK(within(d, 2.0 * c));
            CHECK(within(o, c));
            if (beta == 2) CHECK(within(im, c));
            else CHECK(im == 0.0);
        }
    }

    TEST_CASE("normalized components are uncorrelated with equal variance") {
        const auto k = KernelDescriptor::fbm(0.4, 1);
        const GridSpec g(Rectangle({1.0}, {1.5}), {2});
        const auto spec = EnsembleSpec::hermitian(2, k);
        const FieldSampler s(k, g);
        const std::size_t n = 10000, m = spec.entry_fields();
        std::vector<double> cov(m * m, 0.0);
        for (std::size_t rep = 0; rep < n; ++rep) {
            const auto z = normalize_components(build_matrix_path(spec, s, RngSeed{32, rep}));
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = 0; b < m; ++b) cov[a * m + b] += z.at(a, 1) * z.at(b, 1);
        }
        const Point t{1.5};
        const double c = k(t, t);
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b < m; ++b) {
                const double v = cov[a * m + b] / n;
                const double se = (a == b ? std::sqrt(2.0) : 1.0) * c / std::sqrt(static_cast<double>(n));
                CHECK(std::abs(v - (a == b ? c : 0.0)) <= 4.0 * se);
            }
    }

    TEST_CASE("eigen paths are sorted and preserve the trace") {
        const auto k = KernelDescriptor::fbm(0.3, 1);
        const GridSpec g(Rectangle({1.0}, {2.0}), {33});
        for (int beta : {1, 2}) {
            const auto spec = beta == 1 ? EnsembleSpec::symmetric(4, k) : EnsembleSpec::hermitian(4, k);
            const auto path = build_matrix_path(spec, g, RngSeed{33, 0});
            const auto eig = eigen_path(path);
            for (std::size_t p = 0; p < g.size(); ++p) {
                const auto v = eig.at(p);
                double tr = 0.0, sum = 0.0;
                for (std::size_t i = 0; i < 4; ++i) {
                    tr += path.re_at(p, i, i);
                    sum += v[i];
                    if (i) CHECK(v[i] >= v[i - 1]);
                }
                CHECK(std::abs(sum - tr) <= 1e-9 * std::max(1.0, std::abs(tr)));
            }
        }
    }

    TEST_CASE("gap is nonincreasing under nested refinement") {
        const auto k = KernelDescriptor::fbm(0.5, 1);
        const auto spec = EnsembleSpec::symmetric(3, k);
        const GridSpec fine(Rectangle({1.0}, {2.0}), {129});
        for (std::uint64_t rep = 0; rep < 10; ++rep) {
            const auto eig = eigen_path(build_matrix_path(spec, fine, RngSeed{34, rep}));
            double prev = std::numeric_limits<double>::infinity();
            for (std::size_t stride : {64u, 16u, 4u, 1u}) {
                std::vector<std::size_t> sub;
                for (std::size_t i = 0; i < fine.size(); i += stride) sub.push_back(i);
                const double gap = min_k_gap(eig, 2, sub).value;
                CHECK(gap <= prev);
                prev = gap;
            }
        }
    }

    TEST_CASE("eigen path CSV") {
        std::ostringstream out;
        write_eigen_path_csv(out, single({0, 1, 3}));
        CHECK(out.str().rfind("t1,lambda1,lambda2,lambda3\n", 0) == 0);
    }
}
