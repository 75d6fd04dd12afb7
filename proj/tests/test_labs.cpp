#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "polarlab/error.hpp"
#include "polarlab/labs.hpp"

using namespace polarlab;

namespace {

GridSpec line(double a, double b, std::size_t n) { return GridSpec(Rectangle({a}, {b}), {n}); }

LabOptions threads(std::size_t t) {
    LabOptions o;
    o.threads = t;
    return o;
}

HittingOptions polyline(std::size_t t = 0) {
    HittingOptions o;
    o.path_model = PathModel::Polyline;
    o.lab.threads = t;
    return o;
}

FieldSample zeros(const KernelDescriptor& k, const GridSpec& g, std::size_t components) {
    return FieldSample{g, components, std::vector<double>(components * g.size(), 0.0), k, {}, std::nullopt, {}};
}

const KernelDescriptor kTwiceBm =
    rescale(KernelDescriptor::bm(), {Profile::constant(2.0)}, {Profile::affine(0.0, 1.0)});

}  // namespace

TEST_SUITE("labs") {
    TEST_CASE("collision thresholds and regimes") {
        CHECK(collision_threshold(1, 2) == 2.0);
        CHECK(collision_threshold(1, 3) == 5.0);
        CHECK(collision_threshold(2, 2) == 3.0);
        CHECK(collision_threshold(2, 3) == 8.0);
        CHECK_THROWS_AS(collision_threshold(3, 2), DomainError);
        CHECK_THROWS_AS(collision_threshold(1, 1), DomainError);
        CHECK(classify_regime(10.0 / 3.0, 2.0) == Regime::Supercritical);
        CHECK(classify_regime(2.0, 2.0) == Regime::Critical);
        CHECK(classify_regime(1.25, 2.0) == Regime::Subcritical);
        CHECK(to_string(Regime::Supercritical) == "supercritical");
        for (double h = 0.05; h < 1.0; h += 0.05)
            for (int beta : {1, 2})
                for (std::size_t k : {2u, 3u, 4u}) {
                    const double q = 1.0 / h, th = collision_threshold(beta, k);
                    const auto r = classify_regime(q, th);
                    if (std::abs(q - th) <= 1e-9) CHECK(r == Regime::Critical);
                    else CHECK((r == Regime::Supercritical) == (q > th));
                }
    }

    TEST_CASE("path model names") {
        CHECK(path_model_from_string("polyline") == PathModel::Polyline);
        CHECK(to_string(PathModel::GridPoints) == "grid_points");
        CHECK_THROWS_AS(path_model_from_string("spline"), DomainError);
    }

    TEST_CASE("MC estimate from counts") {
        const auto e = MCEstimate::from_counts(25, 100, "abc");
        CHECK(e.p_hat == 0.25);
        CHECK(e.stderr_ == doctest::Approx(std::sqrt(0.25 * 0.75 / 100)));
        CHECK_THROWS_AS(MCEstimate::from_counts(0, 0, ""), DomainError);
        CHECK_THROWS_AS(MCEstimate::from_counts(3, 2, ""), DomainError);
    }

    TEST_CASE("trivial hitting cases") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 33);
        CHECK(estimate_hitting_probability(k, g, TargetSet::box({-100.0}, {100.0}), 0.01, 200, {1, 0}).p_hat == 1.0);
        CHECK(estimate_hitting_probability(k, g, TargetSet::point({1e6}), 0.01, 200, {1, 0}).p_hat == 0.0);
        CHECK(estimate_hitting_probability(k, g, TargetSet::point({1e6}), 0.01, 200, {1, 0}, polyline()).p_hat ==
              0.0);
    }

    TEST_CASE("hitting estimates are deterministic and thread independent") {
        const auto k = KernelDescriptor::fbm(0.4, 1);
        const auto g = line(1.0, 2.0, 65);
        const auto f = TargetSet::point({0.0});
        auto single = polyline(1), many = polyline(3);
        const auto a = estimate_hitting_probability(k, g, f, 0.05, 500, {3, 0}, single);
        const auto b = estimate_hitting_probability(k, g, f, 0.05, 500, {3, 0}, many);
        CHECK(a.hits == b.hits);
        CHECK(a.config_digest == b.config_digest);
        CHECK(a.p_hat > 0.0);
        CHECK(a.p_hat < 1.0);
    }

    TEST_CASE("quadrupling n halves the standard error") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 65);
        const auto f = TargetSet::point({0.0});
        const auto a = estimate_hitting_probability(k, g, f, 0.1, 2000, {4, 0});
        const auto b = estimate_hitting_probability(k, g, f, 0.1, 8000, {4, 0});
        CHECK(a.stderr_ / b.stderr_ == doctest::Approx(2.0).epsilon(0.1));
    }

    TEST_CASE("hitting is monotone in epsilon and nested refinement") {
        const auto k = KernelDescriptor::fbm(0.6, 1);
        const std::vector<GridSpec> grids{line(1.0, 2.0, 17), line(1.0, 2.0, 65), line(1.0, 2.0, 257)};
        const std::vector<double> eps{0.3, 0.1, 0.03, 0.01};
        for (const auto& opts : {HittingOptions{}, polyline()}) {
            const auto t = hitting_sweep(k, grids, TargetSet::point({0.0}), eps, 400, {5, 0}, opts);
            CHECK(t.coupled);
            for (std::size_t e = 0; e < eps.size(); ++e)
                for (std::size_t r = 0; r < grids.size(); ++r) {
                    if (e) CHECK(t.at(e, r).hits <= t.at(e - 1, r).hits);
                    if (r) CHECK(t.at(e, r).hits >= t.at(e, r - 1).hits);
                }
        }
        const auto loose = hitting_sweep(k, {line(1.0, 2.0, 16), line(1.0, 2.0, 32)}, TargetSet::point({0.0}), eps,
                                         50, {5, 0});
        CHECK_FALSE(loose.coupled);
    }

    TEST_CASE("nested indices") {
        const auto idx = nested_indices(line(0.0, 1.0, 9), line(0.0, 1.0, 3));
        REQUIRE(idx);
        CHECK(*idx == std::vector<std::size_t>{0, 4, 8});
        CHECK_FALSE(nested_indices(line(0.0, 1.0, 8), line(0.0, 1.0, 3)));
        CHECK_FALSE(nested_indices(line(0.0, 1.0, 9), line(0.0, 2.0, 3)));
    }

    TEST_CASE("extrapolation to zero") {
        const std::vector<double> e{0.1, 0.2, 0.3}, p{0.55, 0.6, 0.65};
        CHECK(extrapolate_to_zero(e, p) == doctest::Approx(0.5));
        CHECK_THROWS_AS(extrapolate_to_zero(std::vector<double>{0.1}, std::vector<double>{0.2}), DomainError);
    }

    TEST_CASE("trivial collision cases") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 17);
        const auto spec = EnsembleSpec::symmetric(3, k);
        CHECK(estimate_collision_probability(spec, g, 2, 1e6, 100, {6, 0}).p_hat == 1.0);
        const auto far = EnsembleSpec::symmetric(2, k, SymMatrix(Matrix::diagonal(std::vector<double>{0.0, 1e6})));
        CHECK(estimate_collision_probability(far, g, 2, 0.01, 100, {6, 0}).p_hat == 0.0);
        CHECK_THROWS_AS(estimate_collision_probability(spec, g, 4, 0.1, 10, {6, 0}), DomainError);
    }

    TEST_CASE("collision sweep bookkeeping and monotonicity") {
        const auto spec = EnsembleSpec::symmetric(2, KernelDescriptor::bm());
        const std::vector<GridSpec> grids{line(1.0, 2.0, 17), line(1.0, 2.0, 65)};
        const std::vector<double> eps{0.3, 0.03, 0.003};
        const auto v = regime_sweep(spec, 2, eps, grids, 300, {7, 0}, threads(2));
        CHECK(v.regime == Regime::Critical);
        CHECK(v.threshold == 2.0);
        CHECK(v.q == doctest::Approx(2.0));
        CHECK(v.coupled);
        for (std::size_t e = 0; e < eps.size(); ++e)
            for (std::size_t r = 0; r < grids.size(); ++r) {
                if (e) CHECK(v.at(e, r).hits <= v.at(e - 1, r).hits);
                if (r) CHECK(v.at(e, r).hits >= v.at(e, r - 1).hits);
            }
        CHECK(v.at(2, 1).p_hat < v.at(0, 1).p_hat);
        const auto w = regime_sweep(spec, 2, eps, grids, 300, {7, 0}, threads(1));
        for (std::size_t i = 0; i < v.estimates.size(); ++i) CHECK(v.estimates[i].estimate.hits == w.estimates[i].estimate.hits);

        std::ostringstream csv;
        write_verdict_csv(csv, v);
        std::string header;
        std::getline(std::istringstream(csv.str()) >> std::ws, header);
        CHECK(header.find("p_hat") != std::string::npos);

        CHECK_THROWS_AS(regime_sweep(spec, 2, {0.1, 0.01}, grids, 10, {7, 0}), DomainError);
        CHECK_THROWS_AS(regime_sweep(spec, 2, {0.1, 0.3, 0.001}, grids, 10, {7, 0}), DomainError);
        CHECK_THROWS_AS(regime_sweep(spec, 2, {0.1, 0.05, 0.01}, grids, 10, {7, 0}), DomainError);
    }

    TEST_CASE("oscillation helpers") {
        CHECK(dyadic_radii(0.125) == std::vector<double>{1.0 / 64, 1.0 / 32, 1.0 / 16, 0.125});
        CHECK(oscillation_scale(0.1, 2.0) == doctest::Approx(0.1 / std::sqrt(std::log(std::log(10.0)))));
        CHECK_THROWS_AS(oscillation_scale(0.5, 2.0), DomainError);
        CHECK(quantile({3.0, 1.0, 2.0, 4.0}, 0.5) == 2.5);
        CHECK(std::isnan(quantile({}, 0.5)));
    }

    TEST_CASE("zero field has zero oscillation") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 8193);
        const std::vector<std::size_t> probes{4096, 2000};
        for (double s : oscillation_statistics(zeros(k, g, 1), AnisotropicMetric({0.5}), probes, 0.125))
            CHECK(s == 0.0);
        const std::vector<std::size_t> mid{32};
        CHECK_THROWS_AS(oscillation_statistics(zeros(k, line(1.0, 2.0, 65), 1), AnisotropicMetric({0.5}), mid, 0.125),
                        DomainError);
        CHECK_THROWS_AS(oscillation_statistics(zeros(k, line(1.0, 2.0, 65), 1), AnisotropicMetric({0.5}), probes,
                                               0.125),
                        DomainError);
    }

    TEST_CASE("oscillation scales with the field") {
        const auto g = line(1.0, 2.0, 8193);
        OscillationOptions o;
        o.probes = {Point{1.5}};
        const auto a = oscillation_scan(KernelDescriptor::bm(), g, 0.125, 40, {8, 0}, o);
        const auto b = oscillation_scan(kTwiceBm, g, 0.125, 40, {8, 0}, o);
        for (std::size_t i = 0; i < a.statistics.size(); ++i)
            CHECK(b.statistics[i] == doctest::Approx(2.0 * a.statistics[i]).epsilon(1e-9));
    }

    TEST_CASE("oscillation quantile is stable under refinement") {
        OscillationOptions o;
        o.probes = {Point{1.5}};
        const auto a = oscillation_scan(KernelDescriptor::bm(), line(1.0, 2.0, 8193), 0.125, 1000, {9, 0}, o);
        const auto b = oscillation_scan(KernelDescriptor::bm(), line(1.0, 2.0, 16385), 0.125, 1000, {9, 1}, o);
        CHECK(a.median > 0.0);
        CHECK(b.p99 / a.p99 == doctest::Approx(1.0).epsilon(0.3));
    }

    TEST_CASE("modulus buckets") {
        const auto k = KernelDescriptor::bm();
        const auto empty = modulus_sups(zeros(k, line(1.0, 2.0, 9), 1), AnisotropicMetric({0.5}),
                                        std::vector<double>{0.1, 0.49});
        CHECK(std::isnan(empty[0]));
        CHECK(empty[1] == 0.0);
        const auto r = global_modulus_check(k, line(1.0, 2.0, 9), {0.1, 0.49}, 20, {10, 0});
        CHECK(r.buckets[0].empty);
        CHECK_FALSE(r.buckets[1].empty);
        CHECK(modulus_scale(0.25) == doctest::Approx(0.25 * std::sqrt(std::log(4.0))));
        CHECK_THROWS_AS(global_modulus_check(k, line(1.0, 2.0, 5), {0.6}, 20, {10, 0}), DomainError);
    }

    TEST_CASE("modulus ratios scale with the field") {
        const auto g = line(1.0, 2.0, 1025);
        const std::vector<double> eps{0.05, 0.1, 0.2};
        const auto a = global_modulus_check(KernelDescriptor::bm(), g, eps, 30, {11, 0});
        const auto b = global_modulus_check(kTwiceBm, g, eps, 30, {11, 0});
        for (std::size_t i = 0; i < a.ratios.size(); ++i)
            CHECK(b.ratios[i] == doctest::Approx(2.0 * a.ratios[i]).epsilon(1e-9));
    }

    TEST_CASE("modulus sups match brute force") {
        const auto k = KernelDescriptor::fbs(HurstVector({0.4, 0.7}));
        const GridSpec g(Rectangle({1.0, 1.0}, {2.0, 2.0}), {9, 7});
        const auto f = sample_field(k, g, 2, {12, 0});
        const AnisotropicMetric m(k.alpha());
        const std::vector<double> eps{0.3, 0.6, 1.0};
        const auto sups = modulus_sups(f, m, eps);
        for (std::size_t e = 0; e < eps.size(); ++e) {
            double best = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                for (std::size_t j = 0; j < g.size(); ++j) {
                    if (i == j || m(g.point(i), g.point(j)) > eps[e]) continue;
                    best = std::max(best, std::hypot(f.at(0, i) - f.at(0, j), f.at(1, i) - f.at(1, j)));
                }
            CHECK(sups[e] == doctest::Approx(best).epsilon(1e-12));
        }
    }

    TEST_CASE("good cubes") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 513);
        const auto zero = zeros(k, g, 1);
        const ConditionalSplit zs{zero, zero, Point{1.0}, {0.0}};
        const auto all = good_cube_classify(zs, 3, 1e-6);
        CHECK(all.good_fraction == 1.0);
        CHECK(all.cubes.size() == 64);

        const auto f = sample_field(k, g, 1, {13, 0});
        const auto split = conditional_split(k, f, Point{1.0});
        const auto none = good_cube_classify(split, 3, 0.0);
        for (const auto& c : none.cubes) CHECK_FALSE(c.good);

        std::vector<double> ratios;
        for (const auto& c : none.cubes) ratios.push_back(c.oscillation / good_cube_scale(3, 2.0));
        const double median = quantile(ratios, 0.5);
        const double frac = good_cube_classify(split, 3, median).good_fraction;
        CHECK(frac > 0.0);
        CHECK(frac < 1.0);
        double prev = 0.0;
        for (double c = 0.25 * median; c <= 4.0 * median; c *= 1.25) {
            const double fr = good_cube_classify(split, 3, c).good_fraction;
            CHECK(fr >= prev);
            prev = fr;
        }
        CHECK_THROWS_AS(good_cube_classify(split, 1, 1.0), DomainError);
        CHECK_THROWS_AS(good_cube_classify(conditional_split(k, sample_field(k, line(1.0, 2.0, 17), 1, {1, 0}),
                                                             Point{1.0}),
                                           5, 1.0),
                        DomainError);
    }

    TEST_CASE("phi mass") {
        const double s = std::exp(-std::exp(2.0));
        CHECK(phi_function(s, 2.0, 2, 0.0, 0.0) == doctest::Approx(2.0));
        const std::vector<double> one{s};
        CHECK(phi_mass(one, 2.0, 2, 0.0, 0.0).mass == doctest::Approx(2.0));
        CHECK(phi_mass(std::vector<double>{}, 2.0, 2, 0.0, 0.0).mass == 0.0);
        const auto ex = phi_mass(std::vector<double>{s, 0.5}, 2.0, 2, 0.0, 0.0);
        CHECK(ex.used == 1);
        CHECK(ex.excluded == 1);
        CHECK_THROWS_AS(phi_mass(one, 2.0, 2, 0.5, 0.0), DomainError);
    }

    TEST_CASE("covering selection keeps cubes near the target") {
        const auto k = KernelDescriptor::bm();
        const auto g = line(1.0, 2.0, 513);
        const auto zero = zeros(k, g, 1);
        const ConditionalSplit zs{zero, zero, Point{1.0}, {0.0}};
        const auto map = good_cube_classify(zs, 3, 1.0);
        CHECK(select_covering(map, zero, TargetSet::point({0.0}), 1.0).size() == map.cubes.size());
        CHECK(select_covering(map, zero, TargetSet::point({5.0}), 1.0).empty());
    }
}
