#pragma once

#include <cstdint>
#include <span>

namespace polarlab {

/// Master seed plus replicate stream. Every normal draw is a pure function
/// of (master, stream, draw index), so replicates can run in any order.
struct RngSeed {
    std::uint64_t master = 0;
    std::uint64_t stream = 0;

    RngSeed replicate(std::uint64_t index) const { return {master, index}; }
    friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

/// Standard normal quantile (Wichura AS241, ~1e-16 relative accuracy).
double standard_normal_quantile(double p);

/// Uniform in (0,1) from the counter-based hash of (master, stream, index).
double counter_uniform(const RngSeed& seed, std::uint64_t index);

/// Inverse-CDF normals over the counter stream.
class NormalStream {
public:
    explicit NormalStream(const RngSeed& seed);

    double operator()(std::uint64_t index) const;
    /// out[k] = draw(first + k).
    void fill(std::span<double> out, std::uint64_t first) const;

private:
    std::uint64_t key_;
};

/// Fresh master seed from the system entropy source.
std::uint64_t generate_master_seed();

}  // namespace polarlab
