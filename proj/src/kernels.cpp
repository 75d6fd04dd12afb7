#include "polarlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "polarlab/error.hpp"

namespace polarlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// 1/2 (|s|^{2H} + |t|^{2H} - |s-t|^{2H}) for scalars or norms.
double fbm_core(double s_norm, double t_norm, double diff_norm, double hurst) {
    const double two_h = 2.0 * hurst;
    auto p = [two_h](double x) { return x > 0.0 ? std::pow(x, two_h) : 0.0; };
    return 0.5 * (p(s_norm) + p(t_norm) - p(diff_norm));
}

std::string point_string(std::span<const double> t) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? ", " : "") << t[i];
    os << ')';
    return os.str();
}

void require_dimension(std::span<const double> t, std::size_t n, const std::string& who) {
    if (t.size() != n)
        throw DomainError(who + ": point " + point_string(t) + " has dimension " +
                          std::to_string(t.size()) + ", kernel expects " + std::to_string(n));
}

Point apply_g(const std::vector<Profile>& g, std::span<const double> t) {
    Point out(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) out[j] = g[j](t[j]);
    return out;
}

double apply_f(const std::vector<Profile>& f, std::span<const double> t) {
    double v = 1.0;
    for (std::size_t j = 0; j < t.size(); ++j) v *= f[j](t[j]);
    return v;
}

}  // namespace

HurstVector::HurstVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DomainError("hurst vector must have at least one entry");
    for (double h : values_)
        if (!(h > 0.0 && h < 1.0))
            throw DomainError("hurst parameter must lie in (0,1), got " + std::to_string(h));
}

double Profile::operator()(double t) const {
    switch (form) {
        case Form::Constant: return a;
        case Form::Affine: return a + b * t;
        case Form::Exponential: return a * std::exp(b * t);
    }
    return a;
}

bool Profile::strictly_monotone() const noexcept {
    switch (form) {
        case Form::Constant: return false;
        case Form::Affine: return b != 0.0;
        case Form::Exponential: return a != 0.0 && b != 0.0;
    }
    return false;
}

bool Profile::increasing() const noexcept {
    switch (form) {
        case Form::Constant: return false;
        case Form::Affine: return b > 0.0;
        case Form::Exponential: return a * b > 0.0;
    }
    return false;
}

std::string to_string(Profile::Form form) {
    switch (form) {
        case Profile::Form::Constant: return "constant";
        case Profile::Form::Affine: return "affine";
        case Profile::Form::Exponential: return "exponential";
    }
    return "constant";
}

Profile::Form profile_form_from_string(const std::string& name) {
    if (name == "constant") return Profile::Form::Constant;
    if (name == "affine") return Profile::Form::Affine;
    if (name == "exponential") return Profile::Form::Exponential;
    throw DomainError("unknown profile form '" + name + "' (expected constant|affine|exponential)");
}

KernelDescriptor::KernelDescriptor(Variant v, std::vector<double> alpha, std::vector<double> delta)
    : variant_(std::move(v)), alpha_(std::move(alpha)), delta_(std::move(delta)), q_(0.0) {
    for (std::size_t j = 0; j < alpha_.size(); ++j) {
        if (!(delta_[j] > alpha_[j] && delta_[j] <= 1.0))
            throw DomainError("kernel: regularity exponent must lie in (alpha_j, 1]");
        q_ += 1.0 / alpha_[j];
    }
}

KernelDescriptor KernelDescriptor::fbm(double hurst, std::size_t axes) {
    if (!(hurst > 0.0 && hurst < 1.0))
        throw DomainError("fbm: hurst parameter must lie in (0,1), got " + std::to_string(hurst));
    if (axes == 0) throw DomainError("fbm: axis count must be >= 1");
    return {kernel_variant::Fbm{hurst, axes}, std::vector<double>(axes, hurst),
            std::vector<double>(axes, 1.0)};
}

KernelDescriptor KernelDescriptor::fbs(HurstVector hurst) {
    std::vector<double> alpha = hurst.values();
    std::vector<double> delta(alpha.size());
    std::transform(alpha.begin(), alpha.end(), delta.begin(),
                   [](double h) { return std::min(2.0 * h, 1.0); });
    return {kernel_variant::Fbs{std::move(hurst)}, std::move(alpha), std::move(delta)};
}

KernelDescriptor KernelDescriptor::bm() { return {kernel_variant::Bm{}, {0.5}, {1.0}}; }

KernelDescriptor KernelDescriptor::ou(double theta, double sigma) {
    if (!(theta > 0.0)) throw DomainError("ou: theta must be positive");
    if (!(sigma > 0.0)) throw DomainError("ou: sigma must be positive");
    return {kernel_variant::Ou{theta, sigma}, {0.5}, {1.0}};
}

std::string KernelDescriptor::name() const {
    std::ostringstream os;
    std::visit(overloaded{
                   [&](const kernel_variant::Fbm& k) { os << "FBM(H=" << k.hurst << ",N=" << k.axes << ")"; },
                   [&](const kernel_variant::Fbs& k) { os << "FBS(H=" << point_string(k.hurst.values()) << ")"; },
                   [&](const kernel_variant::Bm&) { os << "BM"; },
                   [&](const kernel_variant::Ou& k) { os << "OU(theta=" << k.theta << ",sigma=" << k.sigma << ")"; },
                   [&](const kernel_variant::Rescaled& k) { os << "RESCALED(" << k.base->name() << ")"; },
               },
               variant_);
    return os.str();
}

bool KernelDescriptor::admissible(std::span<const double> t) const {
    if (t.size() != dimension()) return false;
    for (double x : t)
        if (!std::isfinite(x)) return false;
    return std::visit(
        overloaded{
            [&](const kernel_variant::Fbm&) {
                return std::any_of(t.begin(), t.end(), [](double x) { return x != 0.0; });
            },
            [&](const kernel_variant::Fbs&) {
                return std::all_of(t.begin(), t.end(), [](double x) { return x > 0.0; });
            },
            [&](const kernel_variant::Bm&) { return t[0] > 0.0; },
            [&](const kernel_variant::Ou&) { return t[0] >= 0.0; },
            [&](const kernel_variant::Rescaled& k) {
                return apply_f(k.f, t) > 0.0 && k.base->admissible(apply_g(k.g, t));
            },
        },
        variant_);
}

void KernelDescriptor::check_admissible(std::span<const double> t) const {
    require_dimension(t, dimension(), name());
    if (admissible(t)) return;
    const char* rule = std::visit(
        overloaded{
            [](const kernel_variant::Fbm&) { return "points must avoid the origin"; },
            [](const kernel_variant::Fbs&) { return "coordinates must be strictly positive"; },
            [](const kernel_variant::Bm&) { return "time must be strictly positive"; },
            [](const kernel_variant::Ou&) { return "time must be nonnegative"; },
            [](const kernel_variant::Rescaled&) {
                return "f must be positive and g must map into the base domain";
            },
        },
        variant_);
    throw DomainError(name() + ": point " + point_string(t) + " outside admissible domain (" +
                      rule + ")");
}

double KernelDescriptor::evaluate(std::span<const double> s, std::span<const double> t) const {
    return std::visit(
        overloaded{
            [&](const kernel_variant::Fbm& k) {
                double ss = 0.0, tt = 0.0, dd = 0.0;
                for (std::size_t j = 0; j < s.size(); ++j) {
                    ss += s[j] * s[j];
                    tt += t[j] * t[j];
                    dd += (s[j] - t[j]) * (s[j] - t[j]);
                }
                return fbm_core(std::sqrt(ss), std::sqrt(tt), std::sqrt(dd), k.hurst);
            },
            [&](const kernel_variant::Fbs& k) {
                double v = 1.0;
                for (std::size_t j = 0; j < s.size(); ++j)
                    v *= fbm_core(s[j], t[j], std::abs(s[j] - t[j]), k.hurst[j]);
                return v;
            },
            [&](const kernel_variant::Bm&) { return std::min(s[0], t[0]); },
            [&](const kernel_variant::Ou&) {
                return markov_scale(s[0]) * markov_scale(t[0]) *
                       std::min(markov_clock(s[0]), markov_clock(t[0]));
            },
            [&](const kernel_variant::Rescaled& k) {
                const Point gs = apply_g(k.g, s);
                const Point gt = apply_g(k.g, t);
                return apply_f(k.f, s) * apply_f(k.f, t) * (*k.base)(gs, gt);
            },
        },
        variant_);
}

double KernelDescriptor::operator()(std::span<const double> s, std::span<const double> t) const {
    check_admissible(s);
    check_admissible(t);
    return evaluate(s, t);
}

bool KernelDescriptor::separable() const noexcept {
    return std::holds_alternative<kernel_variant::Fbs>(variant_);
}

double KernelDescriptor::axis_covariance(std::size_t axis, double s, double t) const {
    const auto* k = std::get_if<kernel_variant::Fbs>(&variant_);
    if (!k) throw DomainError(name() + ": axis_covariance requires a separable kernel");
    if (axis >= k->hurst.size()) throw DomainError("axis_covariance: axis out of range");
    if (!(s > 0.0 && t > 0.0)) throw DomainError(name() + ": coordinates must be strictly positive");
    return fbm_core(s, t, std::abs(s - t), k->hurst[axis]);
}

bool KernelDescriptor::markov() const noexcept {
    return std::visit(overloaded{
                          [](const kernel_variant::Bm&) { return true; },
                          [](const kernel_variant::Ou&) { return true; },
                          [](const kernel_variant::Rescaled& k) {
                              return k.f.size() == 1 && k.g[0].strictly_monotone() && k.base->markov();
                          },
                          [](const auto&) { return false; },
                      },
                      variant_);
}

double KernelDescriptor::markov_scale(double t) const {
    return std::visit(overloaded{
                          [](const kernel_variant::Bm&) { return 1.0; },
                          [&](const kernel_variant::Ou& k) {
                              return k.sigma / std::sqrt(2.0 * k.theta) * std::exp(-k.theta * t);
                          },
                          [&](const kernel_variant::Rescaled& k) {
                              return k.f[0](t) * k.base->markov_scale(k.g[0](t));
                          },
                          [&](const auto&) -> double {
                              throw DomainError(name() + ": not a Markov-form kernel");
                          },
                      },
                      variant_);
}

double KernelDescriptor::markov_clock(double t) const {
    return std::visit(overloaded{
                          [&](const kernel_variant::Bm&) { return t; },
                          [&](const kernel_variant::Ou& k) { return std::exp(2.0 * k.theta * t); },
                          [&](const kernel_variant::Rescaled& k) {
                              return k.base->markov_clock(k.g[0](t));
                          },
                          [&](const auto&) -> double {
                              throw DomainError(name() + ": not a Markov-form kernel");
                          },
                      },
                      variant_);
}

double covariance(const KernelDescriptor& kernel, std::span<const double> s,
                  std::span<const double> t) {
    return kernel(s, t);
}

AnisotropyExponents anisotropy_exponents(const KernelDescriptor& kernel) {
    return {kernel.alpha(), kernel.q()};
}

std::vector<double> regularity_exponents(const KernelDescriptor& kernel) { return kernel.delta(); }

KernelDescriptor rescale(std::shared_ptr<const KernelDescriptor> base, std::vector<Profile> f,
                         std::vector<Profile> g, const std::optional<Rectangle>& working) {
    if (!base) throw DomainError("rescale: base kernel is null");
    const std::size_t n = base->dimension();
    if (f.size() != n || g.size() != n)
        throw DomainError("rescale: f and g need one profile per axis (" + std::to_string(n) + ")");
    for (std::size_t j = 0; j < n; ++j)
        if (!g[j].strictly_monotone())
            throw DomainError("rescale: g_" + std::to_string(j) + " must be strictly monotone");

    if (working) {
        if (working->dimension() != n) throw DomainError("rescale: working rectangle dimension mismatch");
        // Every profile is monotone, so extrema over the rectangle sit at corners.
        const std::size_t corners = std::size_t{1} << n;
        for (std::size_t mask = 0; mask < corners; ++mask) {
            Point c(n);
            for (std::size_t j = 0; j < n; ++j)
                c[j] = (mask >> j & 1U) ? working->upper()[j] : working->lower()[j];
            if (!(apply_f(f, c) > 0.0))
                throw DomainError("rescale: f is not strictly positive on the working rectangle at " +
                                  point_string(c));
            const Point gc = apply_g(g, c);
            if (!base->admissible(gc))
                throw DomainError("rescale: image of g leaves the base domain at " +
                                  point_string(c) + " -> " + point_string(gc));
        }
    }
    auto alpha = base->alpha();
    auto delta = base->delta();
    KernelDescriptor out(kernel_variant::Rescaled{std::move(base), std::move(f), std::move(g)},
                         std::move(alpha), std::move(delta));
    return out;
}

KernelDescriptor rescale(const KernelDescriptor& base, std::vector<Profile> f,
                         std::vector<Profile> g, const std::optional<Rectangle>& working) {
    return rescale(std::make_shared<const KernelDescriptor>(base), std::move(f), std::move(g), working);
}

KernelDescriptor ou_as_rescaled_bm(double theta, double sigma) {
    if (!(theta > 0.0) || !(sigma > 0.0)) throw DomainError("ou: theta and sigma must be positive");
    return rescale(KernelDescriptor::bm(),
                   {Profile::exponential(sigma / std::sqrt(2.0 * theta), -theta)},
                   {Profile::exponential(1.0, 2.0 * theta)});
}

}  // namespace polarlab
