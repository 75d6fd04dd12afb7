#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "app.hpp"
#include "config.hpp"
#include "doctest.h"
#include "polarlab/digest.hpp"
#include "polarlab/error.hpp"

using namespace polarlab;
using namespace polarlab::cli;
namespace fs = std::filesystem;

namespace {

class Scratch {
public:
    Scratch() {
        static int counter = 0;
        dir_ = fs::temp_directory_path() /
               ("polarlab-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::create_directories(dir_);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }

    fs::path file(const std::string& name, const std::string& content) const {
        const auto p = dir_ / name;
        std::ofstream(p) << content;
        return p;
    }
    fs::path path(const std::string& name) const { return dir_ / name; }

private:
    fs::path dir_;
};

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const char* kTrio = R"({
  "kernels": [
    {"variant": "FBM", "H": 0.3},
    {"variant": "FBM", "H": 0.5},
    {"variant": "FBM", "H": 0.8}
  ],
  "ensemble": {"beta": 1, "dim": 2, "k": 2},
  "domain": {"lower": [1], "upper": [2], "refinements": [[33], [65]]},
  "lab": {"n": 100, "epsilons": [0.1, 0.01, 0.001]},
  "seed": 11
})";

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("missing Hurst parameter is a config error naming the field") {
        Scratch s;
        const auto cfg = s.file("c.json", R"({"kernel": {"variant": "FBM"},
            "domain": {"lower": [1], "upper": [2], "counts": [16]}, "seed": 1})");
        const auto r = invoke({"sample", "-c", cfg.string(), "-o", s.path("out").string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("kernel.H") != std::string::npos);
        CHECK_FALSE(fs::exists(s.path("out")));
    }

    TEST_CASE("syntax errors report the line") {
        Scratch s;
        const auto cfg = s.file("c.json", "{\n  \"seed\": 1,\n  \"kernel\": {\"variant\": \"BM\",,}\n}\n");
        const auto r = invoke({"sample", "-c", cfg.string(), "-o", s.path("out").string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("line 3") != std::string::npos);
    }

    TEST_CASE("usage and override errors") {
        Scratch s;
        CHECK(invoke({"frobnicate"}).code == kExitConfig);
        CHECK(invoke({"sample"}).code == kExitConfig);
        const auto cfg = s.file("c.json", R"({"kernel": {"variant": "BM"}})");
        CHECK(invoke({"sample", "-c", cfg.string(), "--set", "novalue"}).code == kExitConfig);
        CHECK(invoke({"sample", "-c", s.path("missing.json").string()}).code == kExitConfig);
    }

    TEST_CASE("resource caps map to their exit status") {
        Scratch s;
        const auto cfg = s.file("c.json", R"({"kernel": {"variant": "FBS", "H": [0.5, 0.5]},
            "domain": {"lower": [1, 1], "upper": [2, 2], "counts": [300, 300]}, "seed": 1})");
        const auto r = invoke({"sample", "-c", cfg.string(), "-o", s.path("out").string()});
        CHECK(r.code == kExitResource);
        CHECK_FALSE(fs::exists(s.path("out")));
    }

    TEST_CASE("failed runs leave no partial outputs") {
        Scratch s;
        const auto cfg = s.file("c.json", R"({"kernel": {"variant": "BM"},
            "domain": {"lower": [1], "upper": [2], "counts": [65]},
            "lab": {"n": 4, "r0": 0.125, "modulus_epsilons": [0.01]}, "seed": 1})");
        const auto r = invoke({"oscillate", "-c", cfg.string(), "-o", s.path("out").string()});
        CHECK(r.code == kExitConfig);
        CHECK_FALSE(fs::exists(s.path("out")));
    }

    TEST_CASE("minkowski on a segment") {
        Scratch s;
        const auto cfg = s.file("m.json", R"({"target": {"type": "segment", "a": [0, 0], "b": [1, 0]},
            "kernel": {"variant": "FBM", "H": 0.3}, "seed": 2})");
        const auto r = invoke({"minkowski", "-c", cfg.string(), "-o", s.path("out").string()});
        REQUIRE(r.code == kExitOk);
        const auto sum = read_json(s.path("out/summary.json"));
        CHECK(sum["theta_hat"].get<double>() == doctest::Approx(1.0).epsilon(0.1));
        CHECK(sum["polarity"] == "nonpolar-regime");
        const std::string dat = slurp(s.path("out/minkowski.dat"));
        CHECK(dat.rfind("# log_r log_volume\n", 0) == 0);
        CHECK(dat.find("# fit: log_volume = ") != std::string::npos);
    }

    TEST_CASE("run record lists every output with its hash") {
        Scratch s;
        const auto cfg = s.file("m.json", R"({"target": {"type": "box", "lower": [0, 0], "upper": [1, 1]},
            "seed": 2})");
        REQUIRE(invoke({"minkowski", "-c", cfg.string(), "-o", s.path("out").string()}).code == kExitOk);
        const auto rec = read_json(s.path("out/run_record.json"));
        CHECK(rec["config_digest"] == read_json(s.path("out/summary.json"))["config_digest"]);
        CHECK(rec.contains("wall_time_s"));
        CHECK(rec["version"].is_string());
        std::size_t listed = 0;
        for (const auto& o : rec["outputs"]) {
            const auto content = slurp(s.path("out") / o["file"].get<std::string>());
            CHECK(o["fnv1a64"] == digest_of(content));
            CHECK(o["bytes"] == content.size());
            ++listed;
        }
        CHECK(listed == 3);
    }

    TEST_CASE("sweep over the Hurst trio") {
        Scratch s;
        const auto cfg = s.file("t.json", kTrio);
        const auto r = invoke({"sweep", "-c", cfg.string(), "-o", s.path("out").string(), "--threads", "2"});
        REQUIRE(r.code == kExitOk);
        const auto sum = read_json(s.path("out/summary.json"));
        REQUIRE(sum["verdicts"].size() == 3);
        CHECK(sum["verdicts"][0]["regime"] == "supercritical");
        CHECK(sum["verdicts"][1]["regime"] == "critical");
        CHECK(sum["verdicts"][2]["regime"] == "subcritical");
        for (int i = 0; i < 3; ++i) {
            const std::string csv = slurp(s.path("out/verdict_" + std::to_string(i) + ".csv"));
            CHECK(csv.rfind("epsilon,refinement,grid_points,p_hat,stderr,n,Q,threshold,regime\n", 0) == 0);
            const std::string dat = slurp(s.path("out/verdict_" + std::to_string(i) + ".dat"));
            CHECK(dat.find("# 33 points") != std::string::npos);
            CHECK(dat.find("# 65 points") != std::string::npos);
        }
    }

    TEST_CASE("same config and seed give byte-identical CSVs") {
        Scratch s;
        const auto cfg = s.file("t.json", kTrio);
        REQUIRE(invoke({"sweep", "-c", cfg.string(), "-o", s.path("a").string(), "--threads", "1"}).code == 0);
        REQUIRE(invoke({"sweep", "-c", cfg.string(), "-o", s.path("b").string(), "--threads", "3"}).code == 0);
        for (int i = 0; i < 3; ++i) {
            const std::string f = "verdict_" + std::to_string(i) + ".csv";
            CHECK(slurp(s.path("a") / f) == slurp(s.path("b") / f));
        }
    }

    TEST_CASE("absent seeds are generated and logged") {
        Scratch s;
        const auto cfg = s.file("c.json", R"({"kernel": {"variant": "BM"},
            "domain": {"lower": [1], "upper": [2], "counts": [8]}})");
        const auto r = invoke({"sample", "-c", cfg.string(), "-o", s.path("out").string()});
        REQUIRE(r.code == kExitOk);
        CHECK(r.err.find("(generated)") != std::string::npos);
        const auto sum = read_json(s.path("out/summary.json"));
        CHECK(sum["seed_generated"] == true);
        CHECK(r.err.find(std::to_string(sum["seed"].get<std::uint64_t>())) != std::string::npos);
    }

    TEST_CASE("hitting and collision runs") {
        Scratch s;
        const auto cfg = s.file("h.json", R"({"kernel": {"variant": "BM"},
            "domain": {"lower": [1], "upper": [2], "refinements": [[17], [65]]},
            "target": {"type": "point", "x": [0]},
            "ensemble": {"beta": 2, "dim": 2, "k": 2},
            "lab": {"n": 50, "epsilons": [0.2, 0.1], "path_model": "polyline"}, "seed": 3})");
        REQUIRE(invoke({"hit", "-c", cfg.string(), "-o", s.path("h").string()}).code == kExitOk);
        const auto hs = read_json(s.path("h/summary.json"));
        CHECK(hs["coupled"] == true);
        CHECK(hs["refinements"].size() == 2);
        REQUIRE(invoke({"collide", "-c", cfg.string(), "-o", s.path("c").string()}).code == kExitOk);
        const auto cs = read_json(s.path("c/summary.json"));
        CHECK(cs["threshold"] == 3.0);
        CHECK(cs["regime"] == "subcritical");
        const auto bad = invoke({"hit", "-c", cfg.string(), "-o", s.path("x").string(), "--set",
                                 "lab.path_model=spline"});
        CHECK(bad.code == kExitConfig);
        CHECK(bad.err.find("lab.path_model") != std::string::npos);
    }

    TEST_CASE("overrides") {
        json t = json::parse(R"({"kernel": {"variant": "FBM", "H": 0.3}, "kernels": [{"H": 0.1}]})");
        apply_override(t, "kernel.H=0.45");
        apply_override(t, "kernels.0.H=0.2");
        apply_override(t, "lab.path_model=polyline");
        apply_override(t, "domain.counts=[8,8]");
        CHECK(t["kernel"]["H"] == 0.45);
        CHECK(t["kernels"][0]["H"] == 0.2);
        CHECK(t["lab"]["path_model"] == "polyline");
        CHECK(t["domain"]["counts"] == json::array({8, 8}));
        CHECK_THROWS_AS(apply_override(t, "kernels.4.H=1"), ConfigError);
        CHECK_THROWS_AS(apply_override(t, "kernel.H.x=1"), ConfigError);
    }

    TEST_CASE("config digest") {
        const auto a = make_config(json::parse(R"({"kernel": {"variant": "FBM", "H": 0.3}, "seed": 4})"), {}, {});
        const auto b = make_config(json::parse(R"({"seed": 4, "kernel": {"H": 0.3, "variant": "FBM"},
            "output": {"dir": "elsewhere"}, "threads": 8})"),
                                   {}, {});
        const auto c = make_config(json::parse(R"({"kernel": {"variant": "FBM", "H": 0.31}, "seed": 4})"), {}, {});
        const auto d = make_config(json::parse(R"({"kernel": {"variant": "FBM", "H": 0.3}, "seed": 5})"), {}, {});
        CHECK(a.digest() == b.digest());
        CHECK(a.digest() != c.digest());
        CHECK(a.digest() != d.digest());
        const auto g = make_config(json::parse(R"({"kernel": {"variant": "BM"}})"), {}, 77);
        CHECK(g.seed_generated);
        CHECK(g.seed == 77);
        CHECK(g.tree["seed"] == 77);
    }

    TEST_CASE("config parsing of module specs") {
        const json t = json::parse(R"({
            "k1": {"variant": "fbs", "H": [0.3, 0.7]},
            "k2": {"variant": "RESCALED", "base": {"variant": "BM"},
                   "f": {"form": "exponential", "a": 1.0, "b": -0.5}, "g": {"form": "exponential", "a": 1.0, "b": 1.0}},
            "k3": {"variant": "OU", "theta": 0.5},
            "t": {"type": "union", "members": [{"type": "point", "x": [0, 0]}, {"type": "box", "lower": [1, 1], "upper": [2, 2]}]},
            "e": {"beta": 2, "dim": 2, "shift": [[1, 0], [0, -1]], "shift_imag": [[0, 1], [-1, 0]]}
        })");
        const Node r(&t, "");
        CHECK(parse_kernel(r["k1"]).q() == doctest::Approx(1 / 0.3 + 1 / 0.7));
        CHECK(parse_kernel(r["k2"]).q() == doctest::Approx(2.0));
        try {
            parse_kernel(r["k3"]);
            FAIL("expected a config error");
        } catch (const ConfigError& e) {
            CHECK(e.field() == "k3.sigma");
        }
        CHECK(parse_target(r["t"], {}).kind() == "union");
        const auto e = parse_ensemble(r["e"], KernelDescriptor::bm());
        CHECK(e.beta() == 2);
        CHECK(e.shift().imag_part()(0, 1) == 1.0);
    }

    TEST_CASE("plot data layout") {
        std::ostringstream empty;
        write_plot_data(empty, {"epsilon", "p_hat", "stderr"}, {});
        CHECK(empty.str() == "# epsilon p_hat stderr\n");

        std::ostringstream two;
        write_plot_data(two, {"x", "y"}, {{"a", {{1, 2}}}, {"b", {{3, 4}, {5, 6}}}}, {"note"});
        CHECK(two.str() == "# x y\n# a\n1 2\n\n\n# b\n3 4\n5 6\n# note\n");
    }

    TEST_CASE("output directory defaults to the environment") {
        ::setenv("POLARLAB_OUT", "/tmp/somewhere", 1);
        CHECK(default_output_dir() == fs::path("/tmp/somewhere"));
        ::unsetenv("POLARLAB_OUT");
        CHECK(default_output_dir() == fs::path("polarlab-out"));
    }
}
