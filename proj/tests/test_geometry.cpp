#include <cmath>
#include <random>

#include "doctest.h"
#include "polarlab/error.hpp"
#include "polarlab/geometry.hpp"

using namespace polarlab;

TEST_SUITE("geometry") {
    TEST_CASE("delta examples") {
        const AnisotropicMetric m({0.5, 0.5});
        CHECK(m(Point{0, 0}, Point{1, 1}) == doctest::Approx(2.0));
        CHECK(delta(m, Point{0.3, 0.7}, Point{0.3, 0.7}) == 0.0);
        const AnisotropicMetric a({0.25, 0.5});
        CHECK(a(Point{1, 1}, Point{1.0625, 1.25}) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK_THROWS_AS(m(Point{0}, Point{1, 1}), DomainError);
    }

    TEST_CASE("metric rejects alpha outside (0,1)") {
        CHECK_THROWS_AS(AnisotropicMetric({0.5, 1.0}), DomainError);
        CHECK_THROWS_AS(AnisotropicMetric({0.0}), DomainError);
        CHECK(AnisotropicMetric({0.5, 0.25}).q() == doctest::Approx(6.0));
    }

    TEST_CASE("ball membership") {
        const AnisotropicMetric m({0.5, 0.5});
        CHECK(ball_contains(m, Point{0, 0}, 2.0, Point{1, 1}));
        CHECK(ball_contains(m, Point{0.2, 0.4}, 1e-9, Point{0.2, 0.4}));
        CHECK_FALSE(ball_contains(m, Point{0, 0}, 1.9, Point{1, 1}));
        CHECK_THROWS_AS(ball_contains(m, Point{0, 0}, 0.0, Point{1, 1}), DomainError);
    }

    TEST_CASE("triangle inequality on random triples") {
        const AnisotropicMetric m({0.3, 0.8, 0.55});
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int i = 0; i < 1000; ++i) {
            const Point x{u(rng), u(rng), u(rng)}, y{u(rng), u(rng), u(rng)}, z{u(rng), u(rng), u(rng)};
            CHECK(m(x, z) <= m(x, y) + m(y, z) + 1e-12);
        }
    }

    TEST_CASE("rectangles") {
        CHECK_THROWS_AS(Rectangle({0.0, 1.0}, {1.0, 1.0}), DomainError);
        CHECK_THROWS_AS(Rectangle({0.0}, {1.0, 2.0}), DomainError);
        const Rectangle r({0.0, 1.0}, {2.0, 4.0});
        CHECK(r.volume() == doctest::Approx(6.0));
        CHECK(r.center() == Point{1.0, 2.5});
        CHECK(r.contains(Point{2.0, 4.0}));
        CHECK_FALSE(r.contains(Point{2.1, 4.0}));
        CHECK(r.enlarged(0.5).contains(Point{2.4, 0.6}));
    }

    TEST_CASE("grid points") {
        const GridSpec g(Rectangle({0.0}, {1.0}), {3});
        const auto p = grid_points(g);
        REQUIRE(p.size() == 3);
        CHECK(p[0][0] == 0.0);
        CHECK(p[1][0] == 0.5);
        CHECK(p[2][0] == 1.0);
        const auto c = grid_points(GridSpec(Rectangle({1.0, 1.0}, {2.0, 2.0}), {2, 2}));
        CHECK(c == std::vector<Point>{{1, 1}, {1, 2}, {2, 1}, {2, 2}});
        const auto e = grid_points(GridSpec(Rectangle({0.0}, {1.0}), {2}));
        CHECK(e == std::vector<Point>{{0.0}, {1.0}});
    }

    TEST_CASE("grid indexing and caps") {
        const GridSpec g(Rectangle({0.0, 0.0, 0.0}, {1.0, 2.0, 3.0}), {3, 4, 5});
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.flat_index(g.multi_index(i)) == i);
        CHECK(g.spacing(2) == doctest::Approx(0.75));
        CHECK(g.coordinate(1, 3) == 2.0);
        CHECK_THROWS_AS(GridSpec(Rectangle({0.0}, {1.0}), {1}), DomainError);
        CHECK_THROWS_AS(GridSpec(Rectangle({0.0, 0.0}, {1.0, 1.0}), {300, 300}), ResourceError);
    }

    TEST_CASE("dyadic decomposition examples") {
        const auto one = dyadic_decompose(Rectangle({0.0}, {1.0}), AnisotropicMetric({0.5}), 1);
        REQUIRE(one.size() == 4);
        for (const auto& c : one) CHECK(c.box.side(0) == doctest::Approx(0.25));
        const auto two = dyadic_decompose(Rectangle({0.0, 0.0}, {1.0, 1.0}), AnisotropicMetric({0.5, 0.5}), 1);
        CHECK(two.size() == 16);
        const Rectangle r({1.0, -2.0}, {3.0, 5.0});
        const auto zero = dyadic_decompose(r, AnisotropicMetric({0.3, 0.6}), 0);
        REQUIRE(zero.size() == 1);
        CHECK(zero[0].box.lower() == r.lower());
        CHECK(zero[0].box.upper() == r.upper());
        CHECK_THROWS_AS(dyadic_decompose(r, AnisotropicMetric({0.1, 0.1}), 3, 1000), ResourceError);
    }

    TEST_CASE("delta diameters") {
        const auto cubes = dyadic_decompose(Rectangle({0.0}, {1.0}), AnisotropicMetric({0.5}), 1);
        CHECK(delta_diameter(cubes[0], AnisotropicMetric({0.5})) == doctest::Approx(0.5));
        const AnisotropicMetric m2({0.5, 0.5});
        CHECK(delta_diameter(std::vector<double>{0.0, 0.0}, m2) == 0.0);
        CHECK(delta_diameter(std::vector<double>{0.25, 0.25}, m2) == doctest::Approx(1.0));
    }

    TEST_CASE("tiling, nesting and diameter bounds") {
        const Rectangle r({0.0, 0.0}, {1.0, 1.0});
        const AnisotropicMetric m({0.9, 0.7});
        std::vector<std::vector<DyadicCube>> levels;
        for (unsigned q = 0; q <= 6; ++q) {
            levels.push_back(dyadic_decompose(r, m, q));
            double vol = 0.0;
            for (const auto& c : levels.back()) {
                vol += c.box.volume();
                const double d = delta_diameter(c, m);
                CHECK(d <= 2.0 * std::exp2(-static_cast<double>(q)) * (1 + 1e-12));
                CHECK(d >= std::exp2(-static_cast<double>(q) - 1.0));
                for (std::size_t j = 0; j < 2; ++j)
                    CHECK(c.box.side(j) ==
                          doctest::Approx(std::exp2(-static_cast<double>(dyadic_depth(m.alpha()[j], q)))));
            }
            CHECK(std::abs(vol - r.volume()) <= 1e-12 * r.volume());
        }
        for (unsigned q = 0; q < 4; ++q)
            for (unsigned qq = q + 1; qq <= 4; ++qq)
                for (std::size_t i = 0; i < levels[qq].size(); i += 7) {
                    int parents = 0;
                    for (const auto& p : levels[q])
                        if (p.box.contains(levels[qq][i].box, 1e-12)) ++parents;
                    CHECK(parents == 1);
                }
    }

    TEST_CASE("dyadic depth is monotone in q") {
        for (double a : {0.1, 0.25, 0.5, 0.7, 0.99})
            for (unsigned q = 0; q < 20; ++q) CHECK(dyadic_depth(a, q + 1) >= dyadic_depth(a, q));
        CHECK(dyadic_depth(0.5, 3) == 6);
        CHECK(dyadic_depth(0.3, 3) == 10);
    }
}
