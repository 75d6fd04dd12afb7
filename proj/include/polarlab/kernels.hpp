#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "polarlab/geometry.hpp"

namespace polarlab {

/// Hurst parameters H_1..H_N, each strictly inside (0,1).
class HurstVector {
public:
    explicit HurstVector(std::vector<double> values);

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::vector<double> values_;
};

/// One factor of the declarative rescaling vocabulary:
///   Constant:    p(t) = a
///   Affine:      p(t) = a + b t
///   Exponential: p(t) = a e^{b t}
struct Profile {
    enum class Form { Constant, Affine, Exponential };

    Form form = Form::Constant;
    double a = 1.0;
    double b = 0.0;

    double operator()(double t) const;

    bool strictly_monotone() const noexcept;
    bool increasing() const noexcept;

    static Profile constant(double a) { return {Form::Constant, a, 0.0}; }
    static Profile affine(double a, double b) { return {Form::Affine, a, b}; }
    static Profile exponential(double a, double b) { return {Form::Exponential, a, b}; }
};

std::string to_string(Profile::Form form);
Profile::Form profile_form_from_string(const std::string& name);

/// Constants of the field assumptions. The theory only asserts that they
/// exist, so they are carried as optional metadata.
struct AssumptionConstants {
    std::optional<double> a0;
    std::optional<double> c0;
    std::optional<double> d0;
    std::optional<double> rho0;
    std::optional<double> eps0;
};

class KernelDescriptor;

namespace kernel_variant {

struct Fbm {
    double hurst;
    std::size_t axes;
};
struct Fbs {
    HurstVector hurst;
};
struct Bm {};
struct Ou {
    double theta;
    double sigma;
};
/// f(t) = prod_j f_j(t_j),  g(t) = (g_1(t_1), ..., g_N(t_N)).
struct Rescaled {
    std::shared_ptr<const KernelDescriptor> base;
    std::vector<Profile> f;
    std::vector<Profile> g;
};

}  // namespace kernel_variant

/// Immutable covariance model C(s,t) on R^N together with its anisotropy
/// exponents alpha_j, regularity exponents delta_j and Q = sum 1/alpha_j.
class KernelDescriptor {
public:
    using Variant = std::variant<kernel_variant::Fbm, kernel_variant::Fbs, kernel_variant::Bm,
                                 kernel_variant::Ou, kernel_variant::Rescaled>;

    static KernelDescriptor fbm(double hurst, std::size_t axes);
    static KernelDescriptor fbs(HurstVector hurst);
    static KernelDescriptor bm();
    static KernelDescriptor ou(double theta, double sigma);

    const Variant& variant() const noexcept { return variant_; }
    std::size_t dimension() const noexcept { return alpha_.size(); }
    const std::vector<double>& alpha() const noexcept { return alpha_; }
    const std::vector<double>& delta() const noexcept { return delta_; }
    double q() const noexcept { return q_; }
    std::string name() const;

    /// Throws DomainError with a diagnostic if `t` is not admissible.
    void check_admissible(std::span<const double> t) const;
    bool admissible(std::span<const double> t) const;

    /// Equivalent to `covariance(*this, s, t)`.
    double operator()(std::span<const double> s, std::span<const double> t) const;

    /// True for product-form kernels (FBS) whose covariance matrix on a
    /// lattice is a Kronecker product of per-axis matrices.
    bool separable() const noexcept;

    /// Covariance of the j-th one-axis factor of a separable kernel.
    double axis_covariance(std::size_t axis, double s, double t) const;

    /// One-axis kernels of the form C(s,t) = h(s) h(t) min(c(s), c(t)) with
    /// a strictly monotone clock c (BM, OU, rescaled BM). Their Cholesky
    /// factor on sorted points is a scaled cumulative sum.
    bool markov() const noexcept;
    double markov_scale(double t) const;
    double markov_clock(double t) const;

    AssumptionConstants assumptions;

private:
    friend KernelDescriptor rescale(std::shared_ptr<const KernelDescriptor>, std::vector<Profile>,
                                    std::vector<Profile>, const std::optional<Rectangle>&);

    KernelDescriptor(Variant v, std::vector<double> alpha, std::vector<double> delta);

    double evaluate(std::span<const double> s, std::span<const double> t) const;

    Variant variant_;
    std::vector<double> alpha_;
    std::vector<double> delta_;
    double q_;
};

double covariance(const KernelDescriptor& kernel, std::span<const double> s,
                  std::span<const double> t);

struct AnisotropyExponents {
    std::vector<double> alpha;
    double q;
};

AnisotropyExponents anisotropy_exponents(const KernelDescriptor& kernel);
std::vector<double> regularity_exponents(const KernelDescriptor& kernel);

/// f(t) X(g(t)) for X with kernel `base`. `f` and `g` hold one profile per
/// axis. When `working` is given, f must stay positive on it and g must
/// map it into the base domain.
KernelDescriptor rescale(std::shared_ptr<const KernelDescriptor> base, std::vector<Profile> f,
                         std::vector<Profile> g,
                         const std::optional<Rectangle>& working = std::nullopt);

KernelDescriptor rescale(const KernelDescriptor& base, std::vector<Profile> f,
                         std::vector<Profile> g,
                         const std::optional<Rectangle>& working = std::nullopt);

/// OU as f(t) B(g(t)) with f(t) = sigma/sqrt(2 theta) e^{-theta t},
/// g(t) = e^{2 theta t}.
KernelDescriptor ou_as_rescaled_bm(double theta, double sigma);

}  // namespace polarlab
