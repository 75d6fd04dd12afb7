#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <memory>

#include "polarlab/digest.hpp"
#include "polarlab/error.hpp"
#include "polarlab/rng.hpp"

namespace polarlab::cli {

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

Profile parse_profile(const Node& n) {
    if (n.raw().is_number()) return Profile::constant(n.number());
    const std::string form = n["form"].string();
    try {
        switch (profile_form_from_string(form)) {
            case Profile::Form::Constant: return Profile::constant(n["a"].number());
            case Profile::Form::Affine: return Profile::affine(n["a"].number(), n["b"].number());
            case Profile::Form::Exponential: return Profile::exponential(n["a"].number(), n["b"].number());
        }
    } catch (const DomainError& e) {
        n["form"].fail(e.what());
    }
    n.fail("unreachable profile form");
}

std::vector<Profile> parse_profiles(const Node& n) {
    std::vector<Profile> out;
    if (!n.raw().is_array()) return {parse_profile(n)};
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(parse_profile(n.at(i)));
    return out;
}

Matrix parse_matrix(const Node& n, std::size_t dim) {
    if (n.size() != dim) n.fail("expected " + std::to_string(dim) + " rows");
    Matrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const auto row = n.at(i).numbers();
        if (row.size() != dim) n.at(i).fail("expected " + std::to_string(dim) + " columns");
        for (std::size_t j = 0; j < dim; ++j) m(i, j) = row[j];
    }
    return m;
}

}  // namespace

const json& Node::raw() const {
    if (!present()) fail("missing required field");
    return *value_;
}

bool Node::has(const std::string& key) const {
    return present() && value_->is_object() && value_->contains(key) && !(*value_)[key].is_null();
}

Node Node::operator[](const std::string& key) const {
    if (present() && !value_->is_object()) fail("expected an object");
    if (!has(key)) return Node(nullptr, join(path_, key));
    return Node(&(*value_)[key], join(path_, key));
}

Node Node::at(std::size_t index) const {
    const json& j = raw();
    if (!j.is_array()) fail("expected a list");
    if (index >= j.size()) fail("index " + std::to_string(index) + " out of range");
    return Node(&j[index], path_ + "." + std::to_string(index));
}

std::size_t Node::size() const {
    const json& j = raw();
    if (!j.is_array()) fail("expected a list");
    return j.size();
}

double Node::number() const {
    const json& j = raw();
    if (!j.is_number()) fail("expected a number");
    return j.get<double>();
}

double Node::positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be positive");
    return v;
}

std::int64_t Node::integer() const {
    const json& j = raw();
    if (!j.is_number_integer()) fail("expected an integer");
    return j.get<std::int64_t>();
}

std::size_t Node::count(std::size_t min) const {
    const std::int64_t v = integer();
    if (v < 0 || static_cast<std::size_t>(v) < min) fail("must be an integer >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
}

std::uint64_t Node::u64() const {
    const json& j = raw();
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    fail("expected a non-negative integer");
}

std::string Node::string() const {
    const json& j = raw();
    if (!j.is_string()) fail("expected a string");
    return j.get<std::string>();
}

std::vector<double> Node::numbers() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).number());
    return out;
}

std::vector<std::size_t> Node::counts(std::size_t min) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).count(min));
    return out;
}

double Node::number_or(const std::string& key, double fallback) const {
    return has(key) ? (*this)[key].number() : fallback;
}

std::size_t Node::count_or(const std::string& key, std::size_t fallback, std::size_t min) const {
    return has(key) ? (*this)[key].count(min) : fallback;
}

std::string Node::string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? (*this)[key].string() : fallback;
}

void Node::fail(const std::string& what) const { throw ConfigError(path_.empty() ? "<root>" : path_, what); }

json load_config_text(const std::string& text, const std::string& origin) {
    try {
        json j = json::parse(text, nullptr, true, true);
        if (!j.is_object()) throw ConfigError("<root>", origin + ": top level must be an object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", origin + ": " + e.what());
    }
}

void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(assignment, "override must have the form key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &tree;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component in override");
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(part);
            } catch (const std::exception&) {
                throw ConfigError(key, "'" + part + "' is not a list index");
            }
            if (idx >= node->size()) throw ConfigError(key, "list index " + part + " out of range");
            node = &(*node)[idx];
        } else {
            if (!node->is_object() && !node->is_null()) throw ConfigError(key, "cannot descend into a scalar");
            node = &(*node)[part];
        }
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

std::string ExperimentConfig::digest() const {
    json canonical = tree;
    canonical.erase("output");
    canonical.erase("threads");
    return digest_of(canonical.dump());
}

ExperimentConfig make_config(json tree, std::filesystem::path base_dir, std::optional<std::uint64_t> fallback_seed) {
    ExperimentConfig cfg;
    const Node seed = Node(&tree, "")["seed"];
    if (seed.present()) {
        cfg.seed = seed.u64();
    } else {
        cfg.seed = fallback_seed ? *fallback_seed : generate_master_seed();
        cfg.seed_generated = true;
        tree["seed"] = cfg.seed;
    }
    cfg.tree = std::move(tree);
    cfg.base_dir = std::move(base_dir);
    return cfg;
}

KernelDescriptor parse_kernel(const Node& n) {
    const std::string variant = upper(n["variant"].string());
    try {
        if (variant == "FBM") return KernelDescriptor::fbm(n["H"].number(), n.count_or("N", 1, 1));
        if (variant == "FBS") return KernelDescriptor::fbs(HurstVector(n["H"].numbers()));
        if (variant == "BM") return KernelDescriptor::bm();
        if (variant == "OU") return KernelDescriptor::ou(n["theta"].number(), n["sigma"].number());
        if (variant == "RESCALED") {
            const auto base = std::make_shared<const KernelDescriptor>(parse_kernel(n["base"]));
            return rescale(base, parse_profiles(n["f"]), parse_profiles(n["g"]));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        n.fail(e.what());
    }
    n["variant"].fail("unknown kernel variant '" + variant + "' (expected FBM, FBS, BM, OU or RESCALED)");
}

Rectangle parse_rect(const Node& domain) {
    try {
        return Rectangle(domain["lower"].numbers(), domain["upper"].numbers());
    } catch (const DomainError& e) {
        domain.fail(e.what());
    }
}

GridSpec parse_grid(const Node& domain) {
    const Rectangle rect = parse_rect(domain);
    try {
        return GridSpec(rect, domain["counts"].counts(2));
    } catch (const DomainError& e) {
        domain["counts"].fail(e.what());
    }
}

std::vector<GridSpec> parse_refinements(const Node& domain) {
    if (!domain.has("refinements")) return {parse_grid(domain)};
    const Rectangle rect = parse_rect(domain);
    const Node refs = domain["refinements"];
    std::vector<GridSpec> out;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        try {
            out.emplace_back(rect, refs.at(i).counts(2));
        } catch (const DomainError& e) {
            refs.at(i).fail(e.what());
        }
    }
    if (out.empty()) refs.fail("at least one refinement is required");
    return out;
}

Point parse_point(const Node& n) { return n.numbers(); }

TargetSet parse_target(const Node& n, const std::filesystem::path& base_dir) {
    const std::string type = lower(n["type"].string());
    try {
        if (type == "point") return TargetSet::point(parse_point(n["x"]));
        if (type == "segment") return TargetSet::segment(parse_point(n["a"]), parse_point(n["b"]));
        if (type == "box") return TargetSet::box(parse_point(n["lower"]), parse_point(n["upper"]));
        if (type == "cloud") {
            const std::filesystem::path file = base_dir / n["file"].string();
            std::ifstream in(file);
            if (!in) n["file"].fail("cannot open " + file.string());
            return load_point_cloud_csv(in, n.number_or("mesh", 0.0));
        }
        if (type == "union") {
            std::vector<TargetSet> members;
            const Node m = n["members"];
            for (std::size_t i = 0; i < m.size(); ++i) members.push_back(parse_target(m.at(i), base_dir));
            return TargetSet::union_of(std::move(members));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        n.fail(e.what());
    }
    n["type"].fail("unknown target type '" + type + "' (expected point, segment, box, cloud or union)");
}

EnsembleSpec parse_ensemble(const Node& n, const KernelDescriptor& kernel) {
    const std::int64_t beta = n.has("beta") ? n["beta"].integer() : 1;
    const std::size_t dim = n["dim"].count(2);
    try {
        if (beta == 1) {
            SymMatrix shift;
            if (n.has("shift")) shift = SymMatrix(parse_matrix(n["shift"], dim));
            return EnsembleSpec::symmetric(dim, kernel, shift);
        }
        if (beta == 2) {
            HermMatrix shift;
            if (n.has("shift") || n.has("shift_imag")) {
                const Matrix re = n.has("shift") ? parse_matrix(n["shift"], dim) : Matrix(dim);
                const Matrix im = n.has("shift_imag") ? parse_matrix(n["shift_imag"], dim) : Matrix(dim);
                shift = HermMatrix(re, im);
            }
            return EnsembleSpec::hermitian(dim, kernel, shift);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const DomainError& e) {
        n.fail(e.what());
    }
    n["beta"].fail("beta must be 1 or 2");
}

}  // namespace polarlab::cli
