#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "polarlab/geometry.hpp"
#include "polarlab/kernels.hpp"
#include "polarlab/matrixproc.hpp"
#include "polarlab/targets.hpp"

namespace polarlab::cli {

using nlohmann::json;

/// Read-only view of one config node that remembers its dotted path, so
/// every error names the offending field.
class Node {
public:
    Node(const json* value, std::string path) : value_(value), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }
    bool present() const noexcept { return value_ != nullptr && !value_->is_null(); }
    const json& raw() const;

    bool has(const std::string& key) const;
    Node operator[](const std::string& key) const;
    Node at(std::size_t index) const;
    std::size_t size() const;

    double number() const;
    double positive() const;
    std::int64_t integer() const;
    std::size_t count(std::size_t min = 0) const;
    std::uint64_t u64() const;
    std::string string() const;
    std::vector<double> numbers() const;
    std::vector<std::size_t> counts(std::size_t min = 0) const;

    double number_or(const std::string& key, double fallback) const;
    std::size_t count_or(const std::string& key, std::size_t fallback, std::size_t min = 0) const;
    std::string string_or(const std::string& key, const std::string& fallback) const;

    [[noreturn]] void fail(const std::string& what) const;

private:
    const json* value_;
    std::string path_;
};

/// Parsed config plus where it came from; overrides are already applied.
struct ExperimentConfig {
    json tree;
    std::filesystem::path base_dir;  // relative file paths resolve here
    std::uint64_t seed = 0;
    bool seed_generated = false;

    Node root() const { return Node(&tree, ""); }
    /// FNV-1a of the canonical (sorted-key) dump without output and
    /// threading fields.
    std::string digest() const;
};

json load_config_text(const std::string& text, const std::string& origin);
/// key.path=value; value parsed as JSON, else kept as a string.
void apply_override(json& tree, const std::string& assignment);

ExperimentConfig make_config(json tree, std::filesystem::path base_dir, std::optional<std::uint64_t> fallback_seed);

KernelDescriptor parse_kernel(const Node& n);
Rectangle parse_rect(const Node& domain);
GridSpec parse_grid(const Node& domain);
/// domain.refinements (a list of count lists) or the single domain grid.
std::vector<GridSpec> parse_refinements(const Node& domain);
TargetSet parse_target(const Node& n, const std::filesystem::path& base_dir);
EnsembleSpec parse_ensemble(const Node& n, const KernelDescriptor& kernel);
Point parse_point(const Node& n);

}  // namespace polarlab::cli
