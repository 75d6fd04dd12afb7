#include "app.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "config.hpp"
#include "polarlab/digest.hpp"
#include "polarlab/error.hpp"
#include "polarlab/labs.hpp"

#ifndef POLARLAB_VERSION
#define POLARLAB_VERSION "0.0.0"
#endif

namespace polarlab::cli {

namespace fs = std::filesystem;

namespace {

/// Files written by one run. On failure every file is removed again, and the
/// directory too if this run created it.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
    ~OutputSet() {
        if (!committed_) rollback();
    }

    void write(const std::string& name, const std::string& content) {
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_);
            created_dir_ = true;
        }
        const fs::path file = dir_ / name;
        written_.push_back(file);
        std::ofstream out(file, std::ios::binary);
        out << content;
        out.close();
        if (!out) throw std::runtime_error("cannot write " + file.string());
        manifest_.push_back({{"file", name}, {"bytes", content.size()}, {"fnv1a64", digest_of(content)}});
    }

    const json& manifest() const { return manifest_; }
    const fs::path& dir() const { return dir_; }
    void commit() { committed_ = true; }

    void rollback() {
        std::error_code ec;
        for (const auto& f : written_) fs::remove(f, ec);
        written_.clear();
        if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
    }

private:
    fs::path dir_;
    bool created_dir_ = false;
    bool committed_ = false;
    std::vector<fs::path> written_;
    json manifest_ = json::array();
};

struct RunContext {
    const ExperimentConfig& cfg;
    OutputSet& outputs;
    std::size_t threads;
    std::ostream& log;

    Node root() const { return cfg.root(); }
    RngSeed seed() const { return {cfg.seed, 0}; }
    LabOptions lab() const { return LabOptions{threads}; }
};

template <class F>
std::string render(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::vector<double> epsilons(const Node& lab) {
    const auto eps = lab["epsilons"].numbers();
    if (eps.empty()) lab["epsilons"].fail("at least one epsilon is required");
    for (std::size_t i = 0; i < eps.size(); ++i)
        if (!(eps[i] > 0.0)) lab["epsilons"].at(i).fail("epsilon must be positive");
    return eps;
}

std::string grid_label(const GridSpec& g) {
    std::string s;
    for (std::size_t j = 0; j < g.dimension(); ++j) s += (j ? "x" : "") + std::to_string(g.counts()[j]);
    return s + " points";
}

// ---------------------------------------------------------------------------

json cmd_sample(RunContext& ctx) {
    const Node r = ctx.root();
    const auto kernel = parse_kernel(r["kernel"]);
    const auto grid = parse_grid(r["domain"]);
    SamplerOptions opts;
    if (r["domain"].has("anchor")) opts.anchor = parse_point(r["domain"]["anchor"]);
    if (r.has("sampler")) opts.path = sampler_path_from_string(r["sampler"].string());
    const std::size_t components = r["lab"].count_or("components", 1, 1);
    const FieldSampler sampler(kernel, grid, opts);
    const auto field = sampler.draw(components, ctx.seed());
    ctx.outputs.write("field.csv", render([&](std::ostream& o) { write_field_csv(o, field); }));
    ctx.outputs.write("field.bin", render([&](std::ostream& o) { write_field_binary(o, field); }));
    json s{{"kernel", kernel.name()},
           {"grid_points", grid.size()},
           {"components", components},
           {"factor", to_string(sampler.factor().kind())},
           {"jitter", sampler.factor().jitter()}};
    if (opts.anchor) s["anchor_values"] = field.anchor_values;
    return s;
}

json cmd_hit(RunContext& ctx) {
    const Node r = ctx.root();
    const auto kernel = parse_kernel(r["kernel"]);
    const auto grids = parse_refinements(r["domain"]);
    const auto target = parse_target(r["target"], ctx.cfg.base_dir);
    const Node lab = r["lab"];
    HittingOptions opts;
    opts.lab = ctx.lab();
    try {
        opts.path_model = path_model_from_string(lab.string_or("path_model", "grid_points"));
    } catch (const DomainError& e) {
        lab["path_model"].fail(e.what());
    }
    const auto eps = epsilons(lab);
    const auto table = hitting_sweep(kernel, grids, target, eps, lab["n"].count(1), ctx.seed(), opts);
    ctx.outputs.write("hitting.csv", render([&](std::ostream& o) { write_hitting_csv(o, table); }));

    std::vector<PlotSeries> series;
    json per_grid = json::array();
    for (std::size_t g = 0; g < grids.size(); ++g) {
        PlotSeries s{grid_label(grids[g]), {}};
        std::vector<double> p;
        for (std::size_t e = 0; e < eps.size(); ++e) {
            const auto& est = table.at(e, g);
            s.rows.push_back({eps[e], est.p_hat, est.stderr_});
            p.push_back(est.p_hat);
        }
        series.push_back(std::move(s));
        json entry{{"grid_points", grids[g].size()}};
        if (eps.size() >= 2) entry["p_at_zero"] = extrapolate_to_zero(eps, p);
        per_grid.push_back(entry);
    }
    ctx.outputs.write("hitting.dat", render([&](std::ostream& o) {
                          write_plot_data(o, {"epsilon", "p_hat", "stderr"}, series);
                      }));
    return {{"kernel", kernel.name()},
            {"target", target.kind()},
            {"path_model", to_string(opts.path_model)},
            {"coupled", table.coupled},
            {"lab_digest", table.config_digest},
            {"refinements", per_grid}};
}

json cmd_collide(RunContext& ctx) {
    const Node r = ctx.root();
    const auto kernel = parse_kernel(r["kernel"]);
    const auto spec = parse_ensemble(r["ensemble"], kernel);
    const std::size_t k = r["ensemble"].count_or("k", 2, 2);
    const auto grids = parse_refinements(r["domain"]);
    const Node lab = r["lab"];
    const auto eps = epsilons(lab);
    const std::size_t n = lab["n"].count(1);
    const double threshold = collision_threshold(spec.beta(), k);
    const Regime regime = classify_regime(kernel.q(), threshold);

    std::vector<PlotSeries> series(grids.size());
    std::ostringstream csv;
    csv << "epsilon,refinement,grid_points,p_hat,stderr,n,Q,threshold,regime\n" << std::setprecision(17);
    for (std::size_t e = 0; e < eps.size(); ++e)
        for (std::size_t g = 0; g < grids.size(); ++g) {
            const auto est = estimate_collision_probability(spec, grids[g], k, eps[e], n, ctx.seed(), ctx.lab());
            csv << eps[e] << ',' << g << ',' << grids[g].size() << ',' << est.p_hat << ',' << est.stderr_ << ','
                << est.n << ',' << kernel.q() << ',' << threshold << ',' << to_string(regime) << '\n';
            series[g].label = grid_label(grids[g]);
            series[g].rows.push_back({eps[e], est.p_hat, est.stderr_});
        }
    ctx.outputs.write("collision.csv", csv.str());
    ctx.outputs.write("collision.dat", render([&](std::ostream& o) {
                          write_plot_data(o, {"epsilon", "p_hat", "stderr"}, series);
                      }));
    return {{"kernel", kernel.name()}, {"beta", spec.beta()},  {"dim", spec.dim()},
            {"k", k},                  {"Q", kernel.q()},      {"threshold", threshold},
            {"regime", to_string(regime)}};
}

json cmd_sweep(RunContext& ctx) {
    const Node r = ctx.root();
    std::vector<Node> kernel_nodes;
    if (r.has("kernels")) {
        const Node ks = r["kernels"];
        for (std::size_t i = 0; i < ks.size(); ++i) kernel_nodes.push_back(ks.at(i));
        if (kernel_nodes.empty()) ks.fail("at least one kernel is required");
    } else {
        kernel_nodes.push_back(r["kernel"]);
    }
    const auto grids = parse_refinements(r["domain"]);
    const Node lab = r["lab"];
    const auto eps = epsilons(lab);
    const std::size_t n = lab["n"].count(1);
    const std::size_t k = r["ensemble"].count_or("k", 2, 2);

    json verdicts = json::array();
    for (std::size_t i = 0; i < kernel_nodes.size(); ++i) {
        const auto kernel = parse_kernel(kernel_nodes[i]);
        const auto spec = parse_ensemble(r["ensemble"], kernel);
        CollisionVerdict v;
        try {
            v = regime_sweep(spec, k, eps, grids, n, ctx.seed(), ctx.lab());
        } catch (const DomainError& e) {
            lab["epsilons"].fail(e.what());
        }
        const std::string stem = "verdict_" + std::to_string(i);
        ctx.outputs.write(stem + ".csv", render([&](std::ostream& o) { write_verdict_csv(o, v); }));
        std::vector<PlotSeries> series;
        for (std::size_t g = 0; g < grids.size(); ++g) {
            PlotSeries s{grid_label(grids[g]), {}};
            for (std::size_t e = 0; e < eps.size(); ++e)
                s.rows.push_back({eps[e], v.at(e, g).p_hat, v.at(e, g).stderr_});
            series.push_back(std::move(s));
        }
        ctx.outputs.write(stem + ".dat", render([&](std::ostream& o) {
                              write_plot_data(o, {"epsilon", "p_hat", "stderr"}, series,
                                              {"kernel " + kernel.name() + ", regime " + to_string(v.regime)});
                          }));
        ctx.log << "sweep: " << kernel.name() << " Q=" << v.q << " threshold=" << v.threshold << " -> "
                << to_string(v.regime) << '\n';
        verdicts.push_back({{"file", stem + ".csv"},
                            {"kernel", kernel.name()},
                            {"beta", v.beta},
                            {"k", v.k},
                            {"Q", v.q},
                            {"threshold", v.threshold},
                            {"regime", to_string(v.regime)},
                            {"trend_slope", number_or_null(v.trend_slope)},
                            {"coupled", v.coupled},
                            {"note", v.regime == Regime::Supercritical
                                         ? "collisions expected with positive probability"
                                         : "zero collision probability expected; Monte Carlo can support, not "
                                           "confirm, this"}});
    }
    return {{"verdicts", verdicts}};
}

json cmd_minkowski(RunContext& ctx) {
    const Node r = ctx.root();
    const auto target = parse_target(r["target"], ctx.cfg.base_dir);
    const Node lab = r["lab"];
    std::vector<double> radii;
    if (lab.has("radii")) {
        radii = lab["radii"].numbers();
    } else {
        const double rmax = lab.number_or("r_max", 1e-2), rmin = lab.number_or("r_min", 1e-4);
        try {
            radii = geometric_radii(rmax, rmin, lab.count_or("r_count", 12, 2));
        } catch (const DomainError& e) {
            lab.fail(e.what());
        }
    }
    VolumeOptions vopts;
    vopts.shifts = lab.count_or("shifts", vopts.shifts, 2);
    vopts.nodes_per_shift = lab.count_or("nodes_per_shift", vopts.nodes_per_shift, 1);
    MinkowskiFit fit;
    try {
        fit = minkowski_fit(target, radii, vopts);
    } catch (const DomainError& e) {
        lab.fail(e.what());
    }

    std::ostringstream csv;
    csv << "r,volume\n" << std::setprecision(17);
    PlotSeries s{"log r, log volume", {}};
    for (std::size_t i = 0; i < fit.r_grid.size(); ++i) {
        csv << fit.r_grid[i] << ',' << fit.volumes[i] << '\n';
        s.rows.push_back({std::log(fit.r_grid[i]), std::log(fit.volumes[i])});
    }
    ctx.outputs.write("minkowski.csv", csv.str());
    std::ostringstream line;
    line << std::setprecision(10) << "fit: log_volume = " << fit.intercept << " + " << fit.slope << " * log_r";
    ctx.outputs.write("minkowski.dat", render([&](std::ostream& o) {
                          write_plot_data(o, {"log_r", "log_volume"}, {s},
                                          {line.str(), "theta_hat = " + std::to_string(fit.theta_hat)});
                      }));
    json out{{"target", target.kind()},
             {"ambient_dim", target.ambient_dim()},
             {"theta_hat", fit.theta_hat},
             {"theta_raw", fit.theta_raw},
             {"slope", fit.slope},
             {"intercept", fit.intercept},
             {"rms_residual", fit.log_log_slope_residual}};
    if (r.has("kernel")) {
        const auto kernel = parse_kernel(r["kernel"]);
        const double kappa = lab.number_or("kappa", 0.0);
        out["kernel"] = kernel.name();
        out["Q"] = kernel.q();
        out["kappa"] = kappa;
        out["polarity"] = to_string(polarity_classify(kernel.q(), target.ambient_dim(), fit.theta_hat, kappa));
    }
    return out;
}

json cmd_oscillate(RunContext& ctx) {
    const Node r = ctx.root();
    const auto kernel = parse_kernel(r["kernel"]);
    const auto grid = parse_grid(r["domain"]);
    const Node lab = r["lab"];
    const std::size_t n = lab["n"].count(1);
    json out{{"kernel", kernel.name()}, {"grid_points", grid.size()}, {"Q", kernel.q()}};

    OscillationOptions oo;
    oo.lab = ctx.lab();
    oo.components = lab.count_or("components", 1, 1);
    if (lab.has("probes")) {
        const Node p = lab["probes"];
        for (std::size_t i = 0; i < p.size(); ++i) oo.probes.push_back(parse_point(p.at(i)));
    }
    const auto osc = oscillation_scan(kernel, grid, lab.number_or("r0", 0.125), n, ctx.seed(), oo);
    {
        std::ostringstream csv;
        csv << "replicate,probe,statistic\n" << std::setprecision(17);
        const std::size_t np = osc.probes.size();
        for (std::size_t i = 0; i < osc.statistics.size(); ++i)
            csv << i / np << ',' << i % np << ',' << osc.statistics[i] << '\n';
        ctx.outputs.write("oscillation.csv", csv.str());
    }
    out["oscillation"] = {{"r0", osc.r0},          {"median", osc.median},
                          {"p90", osc.p90},        {"p99", osc.p99},
                          {"fitted_constant", osc.fitted_constant},
                          {"violation_fraction", osc.violation_fraction}};

    if (lab.has("modulus_epsilons")) {
        ModulusReport mod;
        try {
            mod = global_modulus_check(kernel, grid, lab["modulus_epsilons"].numbers(), n, ctx.seed(), ctx.lab());
        } catch (const DomainError& e) {
            lab["modulus_epsilons"].fail(e.what());
        }
        std::ostringstream csv;
        csv << "epsilon,empty,max_ratio,p99_ratio,violation_fraction\n" << std::setprecision(17);
        PlotSeries s{"modulus", {}};
        for (const auto& b : mod.buckets) {
            csv << b.epsilon << ',' << (b.empty ? 1 : 0) << ',' << b.max_ratio << ',' << b.p99_ratio << ','
                << b.violation_fraction << '\n';
            if (!b.empty) s.rows.push_back({b.epsilon, b.p99_ratio, b.max_ratio});
        }
        ctx.outputs.write("modulus.csv", csv.str());
        ctx.outputs.write("modulus.dat", render([&](std::ostream& o) {
                              write_plot_data(o, {"epsilon", "p99_ratio", "max_ratio"},
                                              s.rows.empty() ? std::vector<PlotSeries>{} : std::vector{s});
                          }));
        out["modulus"] = {{"fitted_k4", mod.fitted_k4}, {"p99_spread", number_or_null(mod.p99_spread)}};
    }

    if (r.has("covering")) {
        const Node c = r["covering"];
        CoveringScanOptions co;
        co.lab = ctx.lab();
        if (c.has("orders")) {
            co.orders.clear();
            for (std::size_t q : c["orders"].counts(2)) co.orders.push_back(static_cast<unsigned>(q));
        }
        co.anchor = parse_point(c["anchor"]);
        co.target = parse_target(c["target"], ctx.cfg.base_dir);
        co.components = co.target.ambient_dim();
        co.theta = c.number_or("theta", 0.0);
        co.kappa = c.number_or("kappa", 0.0);
        co.good_constant = c.number_or("good_constant", 0.0);
        co.k4 = c.number_or("k4", 0.0);
        co.pilot_replicates = c.count_or("pilot_replicates", co.pilot_replicates, 1);
        const std::size_t cn = c.count_or("n", n, 1);
        CoveringScanReport rep;
        try {
            rep = covering_scan(kernel, grid, cn, ctx.seed(), co);
        } catch (const DomainError& e) {
            c.fail(e.what());
        }
        std::ostringstream csv;
        csv << "order,mean_mass,stderr_mass,mean_good_fraction,mean_selected,excluded\n" << std::setprecision(17);
        for (std::size_t i = 0; i < rep.orders.size(); ++i)
            csv << rep.orders[i] << ',' << rep.mean_mass[i] << ',' << rep.stderr_mass[i] << ','
                << rep.mean_good_fraction[i] << ',' << rep.mean_selected[i] << ',' << rep.excluded[i] << '\n';
        ctx.outputs.write("covering.csv", csv.str());
        out["covering"] = {{"good_constant", rep.good_constant},
                           {"k4", rep.k4},
                           {"mass_spread", number_or_null(rep.mass_spread)},
                           {"mean_mass", rep.mean_mass}};
    }
    return out;
}

const std::map<std::string, std::function<json(RunContext&)>>& commands() {
    static const std::map<std::string, std::function<json(RunContext&)>> table{
        {"sample", cmd_sample}, {"hit", cmd_hit},             {"collide", cmd_collide},
        {"sweep", cmd_sweep},   {"minkowski", cmd_minkowski}, {"oscillate", cmd_oscillate}};
    return table;
}

const char* kDescriptions[][2] = {
    {"sample", "draw a field on the domain grid"},
    {"hit", "hitting probability of a target over epsilons and refinements"},
    {"collide", "eigenvalue collision probability of a matrix ensemble"},
    {"sweep", "collision regime sweep for one or more kernels"},
    {"minkowski", "Minkowski dimension fit of a target and polarity verdict"},
    {"oscillate", "oscillation, modulus and covering diagnostics"},
};

}  // namespace

fs::path default_output_dir() {
    if (const char* env = std::getenv("POLARLAB_OUT"); env && *env) return env;
    return "polarlab-out";
}

void write_plot_data(std::ostream& out, const std::vector<std::string>& columns,
                     const std::vector<PlotSeries>& series, const std::vector<std::string>& comments) {
    out << '#';
    for (const auto& c : columns) out << ' ' << c;
    out << '\n';
    const auto old = out.precision(12);
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (i) out << "\n\n";
        out << "# " << series[i].label << '\n';
        for (const auto& row : series[i].rows) {
            for (std::size_t j = 0; j < row.size(); ++j) out << (j ? " " : "") << row[j];
            out << '\n';
        }
    }
    for (const auto& c : comments) out << "# " << c << '\n';
    out.precision(old);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"polarlab: polarity and collision experiments for anisotropic Gaussian fields", "polarlab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", POLARLAB_VERSION);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::size_t> threads;
    std::string out_dir;
    for (const auto& [name, desc] : kDescriptions) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--set", overrides, "override a config field: key.path=value");
        sub->add_option("--threads", threads, "worker threads (default: all cores)");
        sub->add_option("-o,--out", out_dir, "output directory (default: $POLARLAB_OUT or ./polarlab-out)");
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << POLARLAB_VERSION << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "polarlab: " << e.what() << '\n';
        return kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    const auto start = std::chrono::steady_clock::now();
    std::optional<OutputSet> outputs;
    try {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("--config", "cannot open " + config_path);
        std::stringstream text;
        text << in.rdbuf();
        json tree = load_config_text(text.str(), config_path);
        for (const auto& o : overrides) apply_override(tree, o);
        const ExperimentConfig cfg = make_config(std::move(tree), fs::path(config_path).parent_path(), std::nullopt);
        err << "polarlab " << command << ": seed " << cfg.seed << (cfg.seed_generated ? " (generated)" : "")
            << '\n';

        std::size_t nthreads = threads.value_or(cfg.root().count_or("threads", 0));
        nthreads = resolve_threads(nthreads);
        const std::string digest = cfg.digest();
        outputs.emplace(out_dir.empty() ? default_output_dir() : fs::path(out_dir));
        RunContext ctx{cfg, *outputs, nthreads, err};

        json summary = commands().at(command)(ctx);
        summary["command"] = command;
        summary["config_digest"] = digest;
        summary["seed"] = cfg.seed;
        summary["seed_generated"] = cfg.seed_generated;
        outputs->write("summary.json", summary.dump(2) + "\n");

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const json record{{"tool", "polarlab"},
                          {"version", POLARLAB_VERSION},
                          {"command", command},
                          {"config", config_path},
                          {"config_digest", digest},
                          {"seed", cfg.seed},
                          {"seed_generated", cfg.seed_generated},
                          {"threads", nthreads},
                          {"wall_time_s", wall},
                          {"outputs", outputs->manifest()}};
        outputs->write("run_record.json", record.dump(2) + "\n");
        outputs->commit();
        out << summary.dump(2) << '\n';
        err << "polarlab " << command << ": wrote " << outputs->manifest().size() << " files to "
            << outputs->dir().string() << '\n';
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "polarlab: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DomainError& e) {
        err << "polarlab: invalid parameters: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "polarlab: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const ResourceError& e) {
        err << "polarlab: resource cap: " << e.what() << '\n';
        return kExitResource;
    } catch (const std::exception& e) {
        err << "polarlab: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace polarlab::cli
