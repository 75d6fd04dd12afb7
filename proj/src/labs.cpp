#include "polarlab/labs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "polarlab/digest.hpp"
#include "polarlab/error.hpp"

namespace polarlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Replicates are handed out in chunks; each worker keeps its own scratch
// state and writes only to replicate-indexed slots, so results do not depend
// on scheduling. The first exception aborts the batch and is rethrown.
template <class Init, class Body>
void run_replicates(std::size_t n, std::size_t threads, Init init, Body body) {
    if (n == 0) return;
    threads = std::min(resolve_threads(threads), n);
    constexpr std::size_t chunk = 16;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        try {
            auto state = init();
            for (;;) {
                const std::size_t begin = next.fetch_add(chunk);
                if (begin >= n || failed.load()) break;
                const std::size_t end = std::min(n, begin + chunk);
                for (std::size_t i = begin; i < end; ++i) body(state, i);
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

std::string grid_string(const GridSpec& g) {
    std::ostringstream os;
    os.precision(17);
    os << '[';
    for (std::size_t j = 0; j < g.dimension(); ++j)
        os << (j ? ";" : "") << g.rect().lower()[j] << ':' << g.rect().upper()[j] << '#' << g.counts()[j];
    os << ']';
    return os.str();
}

std::string list_string(std::span<const double> v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string target_string(const TargetSet& f) {
    auto [lo, hi] = f.bounds();
    return f.kind() + "(" + list_string(lo) + "|" + list_string(hi) + ")";
}

double euclid(std::span<const double> values, std::size_t stride, std::size_t components, std::size_t a,
              std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < components; ++c) {
        const double d = values[c * stride + a] - values[c * stride + b];
        s += d * d;
    }
    return std::sqrt(s);
}

// Nearest grid index to x, axis by axis.
std::size_t snap_to_grid(const GridSpec& grid, std::span<const double> x) {
    if (x.size() != grid.dimension()) throw DomainError("probe dimension does not match grid");
    std::vector<std::size_t> multi(grid.dimension());
    for (std::size_t j = 0; j < grid.dimension(); ++j) {
        const double u = (x[j] - grid.rect().lower()[j]) / grid.spacing(j);
        const double r = std::clamp(std::round(u), 0.0, static_cast<double>(grid.counts()[j] - 1));
        multi[j] = static_cast<std::size_t>(r);
    }
    return grid.flat_index(multi);
}

// Lattice edges of `coarse` mapped into fine indices.
std::vector<std::pair<std::size_t, std::size_t>> lattice_edges(const GridSpec& coarse,
                                                               std::span<const std::size_t> map) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    const std::size_t n = coarse.dimension();
    std::vector<std::size_t> stride(n, 1);
    for (std::size_t j = n - 1; j-- > 0;) stride[j] = stride[j + 1] * coarse.counts()[j + 1];
    for (std::size_t q = 0; q < coarse.size(); ++q) {
        const auto multi = coarse.multi_index(q);
        for (std::size_t j = 0; j < n; ++j)
            if (multi[j] + 1 < coarse.counts()[j]) edges.emplace_back(map[q], map[q + stride[j]]);
    }
    return edges;
}

// Refinements evaluated on shared draws: `plans[r]` reads sampler
// `plans[r].sampler` at fine indices `subset`.
struct RefinementPlan {
    std::size_t sampler = 0;
    std::vector<std::size_t> subset;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
};

struct RefinementLayout {
    std::vector<GridSpec> sampler_grids;
    std::vector<RefinementPlan> plans;
    bool coupled = false;
    std::size_t finest = 0;
};

RefinementLayout layout_refinements(const std::vector<GridSpec>& refinements, bool want_edges) {
    if (refinements.empty()) throw DomainError("sweep: at least one grid is required");
    RefinementLayout layout;
    for (std::size_t r = 1; r < refinements.size(); ++r)
        if (refinements[r].size() > refinements[layout.finest].size()) layout.finest = r;
    const GridSpec& fine = refinements[layout.finest];
    std::vector<std::vector<std::size_t>> maps;
    bool nested = true;
    for (const auto& g : refinements) {
        auto m = nested_indices(fine, g);
        if (!m) {
            nested = false;
            break;
        }
        maps.push_back(std::move(*m));
    }
    if (nested) {
        layout.coupled = true;
        layout.sampler_grids.push_back(fine);
        for (std::size_t r = 0; r < refinements.size(); ++r) {
            RefinementPlan p{0, maps[r], {}};
            if (want_edges) p.edges = lattice_edges(refinements[r], p.subset);
            layout.plans.push_back(std::move(p));
        }
    } else {
        for (std::size_t r = 0; r < refinements.size(); ++r) {
            layout.sampler_grids.push_back(refinements[r]);
            RefinementPlan p{r, std::vector<std::size_t>(refinements[r].size()), {}};
            std::iota(p.subset.begin(), p.subset.end(), std::size_t{0});
            if (want_edges) p.edges = lattice_edges(refinements[r], p.subset);
            layout.plans.push_back(std::move(p));
        }
    }
    return layout;
}

std::vector<FieldSampler> make_samplers(const KernelDescriptor& kernel, const RefinementLayout& layout) {
    std::vector<FieldSampler> samplers;
    for (const auto& g : layout.sampler_grids) samplers.emplace_back(kernel, g);
    return samplers;
}

struct DrawBuffers {
    std::vector<std::vector<double>> values;  // per sampler, component-major
    std::vector<double> out, normals, scratch;
};

DrawBuffers make_buffers(const std::vector<FieldSampler>& samplers, std::size_t components) {
    DrawBuffers b;
    std::size_t biggest = 0;
    for (const auto& s : samplers) {
        b.values.emplace_back(components * s.total_points());
        biggest = std::max(biggest, s.total_points());
    }
    b.out.resize(biggest);
    b.normals.resize(biggest);
    b.scratch.resize(biggest);
    return b;
}

void draw_into(const FieldSampler& sampler, const RngSeed& seed, std::size_t components, DrawBuffers& b,
               std::vector<double>& values) {
    const std::size_t n = sampler.total_points();
    for (std::size_t c = 0; c < components; ++c) {
        auto out = std::span(b.out).first(n);
        sampler.draw_component(seed, c, out, std::span(b.normals).first(n), std::span(b.scratch).first(n));
        for (double v : out)
            if (!std::isfinite(v)) throw NumericalError("sampler produced a non-finite value");
        std::copy(out.begin(), out.end(), values.begin() + static_cast<std::ptrdiff_t>(c * n));
    }
}

std::vector<SweepCell> count_cells(const std::vector<double>& stats, std::size_t n, const std::vector<double>& eps,
                                   const std::vector<GridSpec>& refinements, const std::string& digest) {
    const std::size_t nr = refinements.size();
    std::vector<SweepCell> cells;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        for (std::size_t r = 0; r < nr; ++r) {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (stats[i * nr + r] <= eps[e]) ++hits;
            cells.push_back({e, r, eps[e], refinements[r].size(), MCEstimate::from_counts(hits, n, digest)});
        }
    }
    return cells;
}

void require_epsilons(const std::vector<double>& eps) {
    if (eps.empty()) throw DomainError("at least one epsilon is required");
    for (double e : eps)
        if (!(e > 0.0) || !std::isfinite(e)) throw DomainError("epsilon must be positive and finite");
}

// Per replicate and refinement: min distance from F to the sampled path.
std::vector<double> hitting_statistics(const KernelDescriptor& kernel, const RefinementLayout& layout,
                                       const TargetSet& f, std::size_t n, const RngSeed& seed,
                                       const HittingOptions& options) {
    const std::size_t d = f.ambient_dim();
    const auto samplers = make_samplers(kernel, layout);
    const std::size_t nr = layout.plans.size();
    std::vector<double> stats(n * nr);
    run_replicates(
        n, options.lab.threads, [&] { return make_buffers(samplers, d); },
        [&](DrawBuffers& b, std::size_t i) {
            const RngSeed rep = seed.replicate(i);
            for (std::size_t s = 0; s < samplers.size(); ++s) draw_into(samplers[s], rep, d, b, b.values[s]);
            Point x(d), y(d);
            for (std::size_t r = 0; r < nr; ++r) {
                const auto& plan = layout.plans[r];
                const auto& values = b.values[plan.sampler];
                const std::size_t stride = samplers[plan.sampler].total_points();
                auto gather = [&](std::size_t p, Point& into) {
                    for (std::size_t c = 0; c < d; ++c) into[c] = values[c * stride + p];
                };
                double best = std::numeric_limits<double>::infinity();
                if (options.path_model == PathModel::Polyline) {
                    for (const auto& [a, bb] : plan.edges) {
                        gather(a, x);
                        gather(bb, y);
                        best = std::min(best, segment_distance(f, x, y));
                    }
                } else {
                    for (std::size_t p : plan.subset) {
                        gather(p, x);
                        best = std::min(best, distance(f, x));
                    }
                }
                stats[i * nr + r] = best;
            }
        });
    return stats;
}

// Per replicate and refinement: min k-gap of the eigenvalue path.
std::vector<double> collision_statistics(const EnsembleSpec& spec, const RefinementLayout& layout, std::size_t k,
                                         std::size_t n, const RngSeed& seed, const LabOptions& options) {
    if (k < 2 || k > spec.dim())
        throw DomainError("collision: k = " + std::to_string(k) + " outside [2, " + std::to_string(spec.dim()) + "]");
    const std::size_t m = spec.entry_fields();
    const std::size_t d = spec.dim();
    const auto samplers = make_samplers(spec.kernel(), layout);
    const std::size_t nr = layout.plans.size();
    std::vector<double> stats(n * nr);
    struct State {
        DrawBuffers b;
        std::vector<std::vector<double>> gaps;
        std::vector<double> re, im, eig;
    };
    run_replicates(
        n, options.threads,
        [&] {
            State st{make_buffers(samplers, m), {}, std::vector<double>(d * d), std::vector<double>(d * d),
                     std::vector<double>(d)};
            for (const auto& s : samplers) st.gaps.emplace_back(s.total_points());
            return st;
        },
        [&](State& st, std::size_t i) {
            const RngSeed rep = seed.replicate(i);
            for (std::size_t s = 0; s < samplers.size(); ++s) {
                draw_into(samplers[s], rep, m, st.b, st.b.values[s]);
                const std::size_t g = samplers[s].total_points();
                for (std::size_t p = 0; p < g; ++p) {
                    assemble_matrix_at(spec, st.b.values[s], g, p, st.re, st.im);
                    try {
                        eigenvalues_into(d, spec.beta(), st.re, st.im, st.eig);
                    } catch (const NumericalError& e) {
                        throw NumericalError(std::string(e.what()) + " (grid point " + std::to_string(p) + ")");
                    }
                    st.gaps[s][p] = spectrum_k_gap(st.eig, k);
                }
            }
            for (std::size_t r = 0; r < nr; ++r) {
                const auto& plan = layout.plans[r];
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t p : plan.subset) best = std::min(best, st.gaps[plan.sampler][p]);
                stats[i * nr + r] = best;
            }
        });
    return stats;
}

std::string collision_digest(const EnsembleSpec& spec, std::size_t k, const std::vector<double>& eps,
                             const std::vector<GridSpec>& refinements, std::size_t n, const RngSeed& seed) {
    std::ostringstream os;
    os.precision(17);
    os << "collide|beta=" << spec.beta() << "|dim=" << spec.dim() << "|k=" << k << "|kernel=" << spec.kernel().name()
       << "|shift=" << list_string(spec.shift().real_part().data()) << ';'
       << list_string(spec.shift().imag_part().data()) << "|eps=" << list_string(eps) << "|grids=";
    for (const auto& g : refinements) os << grid_string(g);
    os << "|n=" << n << "|seed=" << seed.master << ':' << seed.stream;
    return digest_of(os.str());
}

double log_log_slope(std::span<const double> eps, std::span<const double> p) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < eps.size(); ++i)
        if (p[i] > 0.0) {
            xs.push_back(std::log(eps[i]));
            ys.push_back(std::log(p[i]));
        }
    if (xs.size() < 2) return kNaN;
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    return sxx > 0.0 ? sxy / sxx : kNaN;
}

}  // namespace

std::string hex_digest(std::uint64_t h) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return s;
}

std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

MCEstimate MCEstimate::from_counts(std::size_t hits, std::size_t n, std::string digest) {
    if (n == 0) throw DomainError("MC estimate needs n >= 1");
    if (hits > n) throw DomainError("MC estimate: more hits than replicates");
    MCEstimate e;
    e.hits = hits;
    e.n = n;
    e.p_hat = static_cast<double>(hits) / static_cast<double>(n);
    e.stderr_ = std::sqrt(e.p_hat * (1.0 - e.p_hat) / static_cast<double>(n));
    e.config_digest = std::move(digest);
    return e;
}

double collision_threshold(int beta, std::size_t k) {
    if (k < 2) throw DomainError("collision_threshold: k must be >= 2");
    const double kk = static_cast<double>(k);
    if (beta == 1) return (kk + 2.0) * (kk - 1.0) / 2.0;
    if (beta == 2) return kk * kk - 1.0;
    throw DomainError("collision_threshold: beta must be 1 or 2");
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::Subcritical: return "subcritical";
        case Regime::Critical: return "critical";
        case Regime::Supercritical: return "supercritical";
    }
    return "subcritical";
}

Regime classify_regime(double q, double threshold) {
    if (std::abs(q - threshold) <= 1e-9) return Regime::Critical;
    return q > threshold ? Regime::Supercritical : Regime::Subcritical;
}

std::string to_string(PathModel m) { return m == PathModel::Polyline ? "polyline" : "grid_points"; }

PathModel path_model_from_string(const std::string& name) {
    if (name == "grid_points") return PathModel::GridPoints;
    if (name == "polyline") return PathModel::Polyline;
    throw DomainError("unknown path model '" + name + "' (expected grid_points or polyline)");
}

std::optional<std::vector<std::size_t>> nested_indices(const GridSpec& fine, const GridSpec& coarse) {
    const std::size_t n = fine.dimension();
    if (coarse.dimension() != n) return std::nullopt;
    std::vector<std::size_t> step(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double scale = std::max(1.0, std::abs(fine.rect().upper()[j]) + std::abs(fine.rect().lower()[j]));
        if (std::abs(fine.rect().lower()[j] - coarse.rect().lower()[j]) > 1e-12 * scale ||
            std::abs(fine.rect().upper()[j] - coarse.rect().upper()[j]) > 1e-12 * scale)
            return std::nullopt;
        const std::size_t f = fine.counts()[j] - 1, c = coarse.counts()[j] - 1;
        if (f % c != 0) return std::nullopt;
        step[j] = f / c;
    }
    std::vector<std::size_t> map(coarse.size());
    std::vector<std::size_t> fm(n);
    for (std::size_t q = 0; q < coarse.size(); ++q) {
        const auto cm = coarse.multi_index(q);
        for (std::size_t j = 0; j < n; ++j) fm[j] = cm[j] * step[j];
        map[q] = fine.flat_index(fm);
    }
    return map;
}

const MCEstimate& HittingTable::at(std::size_t eps_index, std::size_t ref_index) const {
    return cells.at(eps_index * refinements.size() + ref_index).estimate;
}

const MCEstimate& CollisionVerdict::at(std::size_t eps_index, std::size_t ref_index) const {
    return estimates.at(eps_index * refinements.size() + ref_index).estimate;
}

HittingTable hitting_sweep(const KernelDescriptor& kernel, const std::vector<GridSpec>& refinements,
                           const TargetSet& f, const std::vector<double>& epsilons, std::size_t n,
                           const RngSeed& seed, const HittingOptions& options) {
    require_epsilons(epsilons);
    if (n == 0) throw DomainError("hitting: n must be >= 1");
    const auto layout = layout_refinements(refinements, options.path_model == PathModel::Polyline);

    std::ostringstream os;
    os << "hit|kernel=" << kernel.name() << "|target=" << target_string(f) << "|eps=" << list_string(epsilons)
       << "|grids=";
    for (const auto& g : refinements) os << grid_string(g);
    os << "|n=" << n << "|seed=" << seed.master << ':' << seed.stream << "|model=" << to_string(options.path_model);

    HittingTable t;
    t.epsilons = epsilons;
    t.refinements = refinements;
    t.coupled = layout.coupled;
    t.config_digest = digest_of(os.str());
    const auto stats = hitting_statistics(kernel, layout, f, n, seed, options);
    t.cells = count_cells(stats, n, epsilons, refinements, t.config_digest);
    return t;
}

MCEstimate estimate_hitting_probability(const KernelDescriptor& kernel, const GridSpec& grid, const TargetSet& f,
                                        double epsilon, std::size_t n, const RngSeed& seed,
                                        const HittingOptions& options) {
    return hitting_sweep(kernel, {grid}, f, {epsilon}, n, seed, options).at(0, 0);
}

double extrapolate_to_zero(std::span<const double> eps, std::span<const double> p) {
    if (eps.size() != p.size() || eps.size() < 2) throw DomainError("extrapolation needs >= 2 matched points");
    const double n = static_cast<double>(eps.size());
    const double mx = std::accumulate(eps.begin(), eps.end(), 0.0) / n;
    const double my = std::accumulate(p.begin(), p.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        sxx += (eps[i] - mx) * (eps[i] - mx);
        sxy += (eps[i] - mx) * (p[i] - my);
    }
    if (!(sxx > 0.0)) throw DomainError("extrapolation needs distinct epsilons");
    return my - (sxy / sxx) * mx;
}

MCEstimate estimate_collision_probability(const EnsembleSpec& spec, const GridSpec& grid, std::size_t k,
                                          double epsilon, std::size_t n, const RngSeed& seed,
                                          const LabOptions& options) {
    require_epsilons({epsilon});
    if (n == 0) throw DomainError("collision: n must be >= 1");
    const std::vector<GridSpec> grids{grid};
    const auto layout = layout_refinements(grids, false);
    const auto stats = collision_statistics(spec, layout, k, n, seed, options);
    const auto digest = collision_digest(spec, k, {epsilon}, grids, n, seed);
    return count_cells(stats, n, {epsilon}, grids, digest).front().estimate;
}

CollisionVerdict regime_sweep(const EnsembleSpec& spec, std::size_t k, const std::vector<double>& epsilons,
                              const std::vector<GridSpec>& refinements, std::size_t n, const RngSeed& seed,
                              const LabOptions& options) {
    require_epsilons(epsilons);
    if (epsilons.size() < 3) throw DomainError("regime_sweep: need at least 3 epsilons");
    for (std::size_t i = 1; i < epsilons.size(); ++i)
        if (!(epsilons[i] < epsilons[i - 1])) throw DomainError("regime_sweep: epsilons must be decreasing");
    if (epsilons.front() / epsilons.back() < 100.0 * (1.0 - 1e-12))
        throw DomainError("regime_sweep: epsilons must span at least two decades");
    if (n == 0) throw DomainError("regime_sweep: n must be >= 1");

    CollisionVerdict v;
    v.beta = spec.beta();
    v.k = k;
    v.q = spec.kernel().q();
    v.threshold = collision_threshold(spec.beta(), k);
    v.regime = classify_regime(v.q, v.threshold);
    v.epsilons = epsilons;
    v.refinements = refinements;
    const auto layout = layout_refinements(refinements, false);
    v.coupled = layout.coupled;
    v.config_digest = collision_digest(spec, k, epsilons, refinements, n, seed);
    const auto stats = collision_statistics(spec, layout, k, n, seed, options);
    v.estimates = count_cells(stats, n, epsilons, refinements, v.config_digest);

    std::vector<double> p;
    for (std::size_t e = 0; e < epsilons.size(); ++e) p.push_back(v.at(e, layout.finest).p_hat);
    v.trend_slope = log_log_slope(epsilons, p);
    return v;
}

void write_verdict_csv(std::ostream& out, const CollisionVerdict& v) {
    out << "epsilon,refinement,grid_points,p_hat,stderr,n,Q,threshold,regime\n";
    const auto old = out.precision(17);
    for (const auto& c : v.estimates)
        out << c.epsilon << ',' << c.refinement_index << ',' << c.grid_points << ',' << c.estimate.p_hat << ','
            << c.estimate.stderr_ << ',' << c.estimate.n << ',' << v.q << ',' << v.threshold << ','
            << to_string(v.regime) << '\n';
    out.precision(old);
}

void write_hitting_csv(std::ostream& out, const HittingTable& t) {
    out << "epsilon,refinement,grid_points,p_hat,stderr,n\n";
    const auto old = out.precision(17);
    for (const auto& c : t.cells)
        out << c.epsilon << ',' << c.refinement_index << ',' << c.grid_points << ',' << c.estimate.p_hat << ','
            << c.estimate.stderr_ << ',' << c.estimate.n << '\n';
    out.precision(old);
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double p) {
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const double h = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double oscillation_scale(double r, double q) {
    if (!(r > 0.0) || !(r < std::exp(-1.0)))
        throw DomainError("oscillation radius must lie in (0, 1/e) so that log log 1/r > 0");
    return r * std::pow(std::log(std::log(1.0 / r)), -1.0 / q);
}

std::vector<double> dyadic_radii(double r0) {
    if (!(r0 > 0.0) || !(r0 < 1.0)) throw DomainError("r0 must lie in (0, 1)");
    std::vector<double> r;
    for (double x = r0 * r0; x < r0 * (1.0 - 1e-12); x *= 2.0) r.push_back(x);
    r.push_back(r0);
    return r;
}

namespace {

struct ProbeBall {
    std::size_t centre = 0;
    std::vector<std::pair<double, std::size_t>> by_delta;  // Delta < r0, ascending
};

std::vector<ProbeBall> probe_balls(const GridSpec& grid, const AnisotropicMetric& metric,
                                   std::span<const std::size_t> probes, double r0) {
    std::vector<ProbeBall> balls;
    for (std::size_t t : probes) {
        if (t >= grid.size())
            throw DomainError("oscillation: probe index " + std::to_string(t) + " outside a grid of " +
                              std::to_string(grid.size()) + " points");
        ProbeBall b{t, {}};
        const Point pt = grid.point(t);
        for (std::size_t s = 0; s < grid.size(); ++s) {
            if (s == t) continue;
            const double dl = metric(grid.point(s), pt);
            if (dl < r0) b.by_delta.emplace_back(dl, s);
        }
        std::sort(b.by_delta.begin(), b.by_delta.end());
        if (b.by_delta.empty() || !(b.by_delta.front().first < r0 * r0))
            throw DomainError("oscillation: empty Delta-ball of radius r0^2 around grid point " + std::to_string(t) +
                              "; refine the grid");
        balls.push_back(std::move(b));
    }
    return balls;
}

double probe_statistic(const ProbeBall& ball, std::span<const double> values, std::size_t stride,
                       std::size_t components, std::span<const double> radii, std::span<const double> scales) {
    double best = std::numeric_limits<double>::infinity();
    double running = 0.0;
    std::size_t k = 0;
    for (std::size_t ri = 0; ri < radii.size(); ++ri) {
        while (k < ball.by_delta.size() && ball.by_delta[k].first < radii[ri]) {
            running = std::max(running, euclid(values, stride, components, ball.by_delta[k].second, ball.centre));
            ++k;
        }
        best = std::min(best, running / scales[ri]);
    }
    return best;
}

}  // namespace

std::vector<double> oscillation_statistics(const FieldSample& sample, const AnisotropicMetric& metric,
                                           std::span<const std::size_t> probe_indices, double r0) {
    const auto radii = dyadic_radii(r0);
    std::vector<double> scales;
    for (double r : radii) scales.push_back(oscillation_scale(r, metric.q()));
    const auto balls = probe_balls(sample.grid, metric, probe_indices, r0);
    std::vector<double> out;
    for (const auto& b : balls)
        out.push_back(probe_statistic(b, sample.values, sample.grid.size(), sample.components, radii, scales));
    return out;
}

OscillationReport oscillation_scan(const KernelDescriptor& kernel, const GridSpec& grid, double r0, std::size_t n,
                                   const RngSeed& seed, const OscillationOptions& options) {
    if (n == 0) throw DomainError("oscillation: n must be >= 1");
    if (options.components == 0) throw DomainError("oscillation: components must be >= 1");
    const AnisotropicMetric metric(kernel.alpha());
    OscillationReport rep;
    rep.q = kernel.q();
    rep.r0 = r0;
    rep.r_grid = dyadic_radii(r0);
    std::vector<double> scales;
    for (double r : rep.r_grid) scales.push_back(oscillation_scale(r, rep.q));

    std::vector<std::size_t> probes;
    if (options.probes.empty())
        probes.push_back(snap_to_grid(grid, grid.rect().center()));
    else
        for (const auto& p : options.probes) probes.push_back(snap_to_grid(grid, p));
    for (std::size_t p : probes) rep.probes.push_back(grid.point(p));
    const auto balls = probe_balls(grid, metric, probes, r0);

    const FieldSampler sampler(kernel, grid);
    const std::vector<FieldSampler> samplers{sampler};
    const std::size_t np = probes.size();
    rep.statistics.resize(n * np);
    run_replicates(
        n, options.lab.threads, [&] { return make_buffers(samplers, options.components); },
        [&](DrawBuffers& b, std::size_t i) {
            draw_into(sampler, seed.replicate(i), options.components, b, b.values[0]);
            for (std::size_t p = 0; p < np; ++p)
                rep.statistics[i * np + p] = probe_statistic(balls[p], b.values[0], sampler.total_points(),
                                                             options.components, rep.r_grid, scales);
        });

    rep.median = quantile(rep.statistics, 0.5);
    rep.p90 = quantile(rep.statistics, 0.9);
    rep.p99 = quantile(rep.statistics, 0.99);
    const std::size_t fit_n = n >= 2 ? n / 2 : n;
    std::vector<double> fit(rep.statistics.begin(), rep.statistics.begin() + static_cast<std::ptrdiff_t>(fit_n * np));
    rep.fitted_constant = quantile(fit, options.fit_quantile);
    const std::size_t test_begin = n >= 2 ? fit_n * np : 0;
    std::size_t over = 0, total = 0;
    for (std::size_t k = test_begin; k < rep.statistics.size(); ++k, ++total)
        if (rep.statistics[k] > rep.fitted_constant) ++over;
    rep.violation_fraction = total ? static_cast<double>(over) / static_cast<double>(total) : 0.0;
    return rep;
}

double modulus_scale(double eps) {
    if (!(eps > 0.0) || !(eps < 1.0)) throw DomainError("modulus epsilon must lie in (0, 1)");
    return eps * std::sqrt(std::log(1.0 / eps));
}

namespace {

// Largest m >= 0 with (m h)^alpha <= eps.
std::size_t max_offset(double h, double alpha, double eps, std::size_t limit) {
    auto m = static_cast<std::size_t>(std::floor(std::pow(eps, 1.0 / alpha) / h));
    m = std::min(m + 1, limit);
    while (m > 0 && std::pow(static_cast<double>(m) * h, alpha) > eps) --m;
    return m;
}

// max over windows [i, i+m] of (max - min).
double sliding_range(std::span<const double> x, std::size_t m) {
    std::deque<std::size_t> hi, lo;
    double best = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        while (!hi.empty() && x[hi.back()] <= x[i]) hi.pop_back();
        while (!lo.empty() && x[lo.back()] >= x[i]) lo.pop_back();
        hi.push_back(i);
        lo.push_back(i);
        while (hi.front() + m < i) hi.pop_front();
        while (lo.front() + m < i) lo.pop_front();
        best = std::max(best, x[hi.front()] - x[lo.front()]);
    }
    return best;
}

}  // namespace

std::vector<double> modulus_sups(const FieldSample& sample, const AnisotropicMetric& metric,
                                 std::span<const double> eps_grid) {
    const GridSpec& grid = sample.grid;
    const std::size_t n = grid.dimension();
    if (metric.dimension() != n) throw DomainError("modulus: metric dimension does not match grid");
    const std::size_t g = grid.size();
    std::vector<double> out;
    for (double eps : eps_grid) {
        std::vector<std::size_t> m(n);
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = max_offset(grid.spacing(j), metric.alpha()[j], eps, grid.counts()[j] - 1);
            any = any || m[j] > 0;
        }
        if (!any) {
            out.push_back(kNaN);
            continue;
        }
        if (n == 1 && sample.components == 1) {
            out.push_back(sliding_range(sample.component(0), m[0]));
            continue;
        }
        // Offsets o != 0 with first nonzero coordinate positive, Delta(o h) <= eps.
        std::vector<std::vector<long>> offsets;
        std::vector<long> o(n);
        for (std::size_t j = 0; j < n; ++j) o[j] = -static_cast<long>(m[j]);
        for (;;) {
            std::size_t first = 0;
            while (first < n && o[first] == 0) ++first;
            if (first < n && o[first] > 0) {
                double dl = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (o[j] != 0)
                        dl += std::pow(std::abs(static_cast<double>(o[j])) * grid.spacing(j), metric.alpha()[j]);
                if (dl <= eps) offsets.push_back(o);
            }
            std::size_t j = n;
            while (j-- > 0) {
                if (o[j] < static_cast<long>(m[j])) {
                    ++o[j];
                    break;
                }
                o[j] = -static_cast<long>(m[j]);
            }
            if (j == static_cast<std::size_t>(-1)) break;
        }
        double best = 0.0;
        std::vector<std::size_t> multi(n);
        for (std::size_t p = 0; p < g; ++p) {
            const auto base = grid.multi_index(p);
            for (const auto& off : offsets) {
                bool inside = true;
                for (std::size_t j = 0; j < n && inside; ++j) {
                    const long v = static_cast<long>(base[j]) + off[j];
                    inside = v >= 0 && v < static_cast<long>(grid.counts()[j]);
                    if (inside) multi[j] = static_cast<std::size_t>(v);
                }
                if (inside) best = std::max(best, euclid(sample.values, g, sample.components, p, grid.flat_index(multi)));
            }
        }
        out.push_back(best);
    }
    return out;
}

ModulusReport global_modulus_check(const KernelDescriptor& kernel, const GridSpec& grid,
                                   const std::vector<double>& eps_grid, std::size_t n, const RngSeed& seed,
                                   const LabOptions& options) {
    if (eps_grid.empty()) throw DomainError("modulus: empty epsilon grid");
    for (double e : eps_grid)
        if (!(e > 0.0 && e < 0.5)) throw DomainError("modulus: epsilons must lie in (0, 1/2)");
    if (n == 0) throw DomainError("modulus: n must be >= 1");
    const AnisotropicMetric metric(kernel.alpha());
    const FieldSampler sampler(kernel, grid);
    const std::size_t ne = eps_grid.size();
    ModulusReport rep;
    rep.ratios.resize(n * ne);
    run_replicates(
        n, options.threads, [] { return 0; },
        [&](int&, std::size_t i) {
            const FieldSample s = sampler.draw(1, seed.replicate(i));
            const auto sups = modulus_sups(s, metric, eps_grid);
            for (std::size_t e = 0; e < ne; ++e) rep.ratios[i * ne + e] = sups[e] / modulus_scale(eps_grid[e]);
        });

    std::size_t largest = 0;
    bool have_largest = false;
    std::vector<std::vector<double>> per(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isnan(rep.ratios[i * ne + e])) per[e].push_back(rep.ratios[i * ne + e]);
        if (!per[e].empty() && (!have_largest || eps_grid[e] > eps_grid[largest])) {
            largest = e;
            have_largest = true;
        }
    }
    rep.fitted_k4 = have_largest ? quantile(per[largest], 0.99) : kNaN;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t e = 0; e < ne; ++e) {
        ModulusBucket b;
        b.epsilon = eps_grid[e];
        b.empty = per[e].empty();
        if (!b.empty) {
            b.max_ratio = *std::max_element(per[e].begin(), per[e].end());
            b.p99_ratio = quantile(per[e], 0.99);
            const auto over = std::count_if(per[e].begin(), per[e].end(), [&](double r) { return r > rep.fitted_k4; });
            b.violation_fraction = static_cast<double>(over) / static_cast<double>(per[e].size());
            lo = std::min(lo, b.p99_ratio);
            hi = std::max(hi, b.p99_ratio);
        }
        rep.buckets.push_back(b);
    }
    rep.p99_spread = hi > 0.0 && lo > 0.0 ? hi / lo : kNaN;
    return rep;
}

// ---------------------------------------------------------------------------

double good_cube_scale(unsigned q, double big_q) {
    if (q < 2) throw DomainError("good cube order must be >= 2 so that log log 2^q > 0");
    const double lq = static_cast<double>(q) * std::log(2.0);
    return std::exp2(-static_cast<double>(q)) * std::pow(std::log(lq), -1.0 / big_q);
}

GoodCubeMap good_cube_classify(const ConditionalSplit& split, unsigned q, double constant) {
    if (!(constant >= 0.0)) throw DomainError("good cube constant must be >= 0");
    const FieldSample& x1 = split.x1;
    const GridSpec& grid = x1.grid;
    const KernelDescriptor& kernel = x1.kernel;
    const AnisotropicMetric metric(kernel.alpha());
    const std::size_t n = grid.dimension();

    GoodCubeMap map;
    map.q = q;
    map.constant = constant;
    map.threshold = constant * good_cube_scale(q, kernel.q());
    const auto cubes = dyadic_decompose(grid.rect(), metric, q);

    std::vector<std::size_t> per_axis(n), stride(n, 1);
    std::vector<double> side(n);
    for (std::size_t j = 0; j < n; ++j) {
        per_axis[j] = std::size_t{1} << dyadic_depth(metric.alpha()[j], q);
        side[j] = grid.rect().side(j) / static_cast<double>(per_axis[j]);
    }
    for (std::size_t j = n - 1; j-- > 0;) stride[j] = stride[j + 1] * per_axis[j + 1];

    map.cubes.reserve(cubes.size());
    for (const auto& c : cubes) map.cubes.push_back({c, {}, 0, 0.0, delta_diameter(c, metric), false});
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const auto multi = grid.multi_index(p);
        std::size_t flat = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double u = (grid.coordinate(j, multi[j]) - grid.rect().lower()[j]) / side[j];
            const auto k = std::min(per_axis[j] - 1, static_cast<std::size_t>(std::max(0.0, std::floor(u + 1e-9))));
            flat += k * stride[j];
        }
        map.cubes[flat].points.push_back(p);
    }

    std::size_t good = 0;
    for (auto& cc : map.cubes) {
        if (cc.points.size() < 2)
            throw DomainError("good cube classification: a cube of order " + std::to_string(q) + " holds " +
                              std::to_string(cc.points.size()) + " grid point(s); refine the grid");
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t p : cc.points) {
            const Point t = grid.point(p);
            double dd = 0.0;
            for (std::size_t j = 0; j < n; ++j) dd += (t[j] - cc.cube.center[j]) * (t[j] - cc.cube.center[j]);
            if (dd < best) {
                best = dd;
                cc.representative = p;
            }
        }
        double osc = 0.0;
        if (x1.components == 1) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t p : cc.points) {
                lo = std::min(lo, x1.at(0, p));
                hi = std::max(hi, x1.at(0, p));
            }
            osc = hi - lo;
        } else {
            for (std::size_t a = 0; a < cc.points.size(); ++a)
                for (std::size_t b = a + 1; b < cc.points.size(); ++b)
                    osc = std::max(osc, euclid(x1.values, grid.size(), x1.components, cc.points[a], cc.points[b]));
        }
        cc.oscillation = osc;
        cc.good = osc <= map.threshold;
        if (cc.good) ++good;
    }
    map.good_fraction = static_cast<double>(good) / static_cast<double>(map.cubes.size());
    return map;
}

double phi_function(double s, double big_q, std::size_t d, double theta, double kappa) {
    if (!(s > 0.0) || !(s < std::exp(-std::exp(1.0))))
        throw DomainError("phi: argument must lie in (0, e^{-e})");
    const double dd = static_cast<double>(d);
    return std::pow(s, big_q - dd + theta) * std::pow(std::log(std::log(1.0 / s)), (dd - theta) / big_q - kappa);
}

PhiMass phi_mass(std::span<const double> diameters, double big_q, std::size_t d, double theta, double kappa) {
    if (!(big_q > 0.0)) throw DomainError("phi mass: Q must be positive");
    if (d < 1) throw DomainError("phi mass: d must be >= 1");
    if (theta < 0.0 || theta > static_cast<double>(d) - big_q + 1e-12)
        throw DomainError("phi mass: theta must lie in [0, d - Q]");
    PhiMass m;
    const double cap = std::exp(-std::exp(1.0));
    for (double s : diameters) {
        if (!(s > 0.0) || !(s < cap)) {
            ++m.excluded;
            continue;
        }
        m.mass += phi_function(s, big_q, d, theta, kappa);
        ++m.used;
    }
    return m;
}

std::vector<double> select_covering(const GoodCubeMap& map, const FieldSample& field, const TargetSet& f,
                                    double k4) {
    if (field.components != f.ambient_dim())
        throw DomainError("covering: field has " + std::to_string(field.components) +
                          " components but the target lives in R^" + std::to_string(f.ambient_dim()));
    std::vector<double> selected;
    Point x(field.components);
    for (const auto& cc : map.cubes) {
        for (std::size_t c = 0; c < field.components; ++c) x[c] = field.at(c, cc.representative);
        const double d = cc.diameter;
        double r = map.threshold;
        if (!cc.good) r = (d > 0.0 && d < 1.0) ? 0.5 * k4 * d * std::sqrt(std::log(1.0 / d)) : 0.0;
        if (distance(f, x) <= 2.0 * r) selected.push_back(d);
    }
    return selected;
}

CoveringScanReport covering_scan(const KernelDescriptor& kernel, const GridSpec& grid, std::size_t n,
                                 const RngSeed& seed, const CoveringScanOptions& options) {
    if (n == 0) throw DomainError("covering scan: n must be >= 1");
    if (options.orders.empty()) throw DomainError("covering scan: no orders");
    if (options.target.ambient_dim() != options.components)
        throw DomainError("covering scan: target dimension must equal the number of components");
    const Point anchor = options.anchor.empty() ? grid.rect().lower() : options.anchor;

    bool on_grid = false;
    for (std::size_t p = 0; p < grid.size() && !on_grid; ++p) {
        const Point t = grid.point(p);
        bool same = t.size() == anchor.size();
        for (std::size_t j = 0; j < t.size() && same; ++j)
            same = std::abs(t[j] - anchor[j]) <= 1e-12 * std::max(1.0, std::abs(t[j]));
        on_grid = same;
    }
    SamplerOptions so;
    if (!on_grid) so.anchor = anchor;
    const FieldSampler sampler(kernel, grid, so);
    const AnisotropicMetric metric(kernel.alpha());

    CoveringScanReport rep;
    rep.orders = options.orders;
    rep.good_constant = options.good_constant;
    rep.k4 = options.k4;
    if (rep.good_constant <= 0.0 || rep.k4 <= 0.0) {
        const RngSeed pilot{seed.master ^ 0xA5A5A5A5A5A5A5A5ULL, seed.stream};
        std::vector<double> cube_ratios;
        std::vector<double> diam;
        for (unsigned q : options.orders) {
            const auto c = dyadic_decompose(grid.rect(), metric, q);
            double dmax = 0.0;
            for (const auto& cube : c) dmax = std::max(dmax, delta_diameter(cube, metric));
            diam.push_back(dmax);
        }
        double k4 = 0.0;
        const double scale0 = good_cube_scale(options.orders.front(), kernel.q());
        for (std::size_t i = 0; i < std::max<std::size_t>(1, options.pilot_replicates); ++i) {
            const FieldSample s = sampler.draw(options.components, pilot.replicate(i));
            const auto split = conditional_split(kernel, s, anchor);
            const auto map = good_cube_classify(split, options.orders.front(), 1.0);
            for (const auto& cc : map.cubes) cube_ratios.push_back(cc.oscillation / scale0);
            const auto sups = modulus_sups(s, metric, diam);
            for (std::size_t e = 0; e < diam.size(); ++e)
                if (!std::isnan(sups[e]) && diam[e] < 1.0) k4 = std::max(k4, sups[e] / modulus_scale(diam[e]));
        }
        if (rep.good_constant <= 0.0) rep.good_constant = quantile(cube_ratios, 0.5);
        if (rep.k4 <= 0.0) rep.k4 = k4;
    }

    const std::size_t no = options.orders.size();
    std::vector<double> mass(n * no), frac(n * no), sel(n * no);
    std::vector<std::size_t> excl(n * no);
    run_replicates(
        n, options.lab.threads, [] { return 0; },
        [&](int&, std::size_t i) {
            const FieldSample s = sampler.draw(options.components, seed.replicate(i));
            const auto split = conditional_split(kernel, s, anchor);
            for (std::size_t o = 0; o < no; ++o) {
                const auto map = good_cube_classify(split, options.orders[o], rep.good_constant);
                const auto chosen = select_covering(map, s, options.target, rep.k4);
                const auto pm = phi_mass(chosen, kernel.q(), options.components, options.theta, options.kappa);
                mass[i * no + o] = pm.mass;
                frac[i * no + o] = map.good_fraction;
                sel[i * no + o] = static_cast<double>(chosen.size());
                excl[i * no + o] = pm.excluded;
            }
        });

    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t o = 0; o < no; ++o) {
        double sm = 0, sm2 = 0, sf = 0, ss = 0;
        std::size_t ex = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sm += mass[i * no + o];
            sm2 += mass[i * no + o] * mass[i * no + o];
            sf += frac[i * no + o];
            ss += sel[i * no + o];
            ex += excl[i * no + o];
        }
        const double dn = static_cast<double>(n);
        const double mean = sm / dn;
        const double var = n > 1 ? std::max(0.0, (sm2 - dn * mean * mean) / (dn - 1.0)) : 0.0;
        rep.mean_mass.push_back(mean);
        rep.stderr_mass.push_back(std::sqrt(var / dn));
        rep.mean_good_fraction.push_back(sf / dn);
        rep.mean_selected.push_back(ss / dn);
        rep.excluded.push_back(ex);
        if (mean > 0.0) {
            lo = std::min(lo, mean);
            hi = std::max(hi, mean);
        }
    }
    rep.mass_spread = hi > 0.0 ? hi / lo : kNaN;
    return rep;
}

}  // namespace polarlab
