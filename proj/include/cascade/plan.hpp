#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/dataset.hpp"

namespace cascade {

class Registry;

struct Stage {
    std::string backend_id;
    double tau = 0.0;
    /// Validation accuracy recorded when the plan was ranked.
    std::optional<double> accuracy;

    bool operator==(const Stage&) const = default;
};

/// Ranked model chain: Specific Layer stages, the LM terminal, and the
/// Augmented Layer consulted only when the LM declines.
struct CascadePlan {
    std::vector<Stage> stages;
    std::string terminal_id;
    std::optional<double> lm_threshold;
    std::vector<Stage> augmented;

    /// Structural checks that need no registry: thresholds in [0,1],
    /// distinct backends, ranked order where accuracies are recorded.
    void validate() const;
    /// Adds registry checks: every backend registered, the terminal is the
    /// large-layer backend, and augmented stages are reachable.
    void validate(const Registry& registry) const;

    /// Same plan with `tau` on every Specific Layer stage.
    CascadePlan with_global_tau(double tau) const;

    /// Canonical TOML text; plan hashes are computed over it.
    std::string to_toml() const;
    std::string hash() const;

    bool operator==(const CascadePlan&) const = default;
};

CascadePlan parse_plan(std::string_view toml_text);
CascadePlan load_plan(const std::filesystem::path& path);
void save_plan(const CascadePlan& plan, const std::filesystem::path& path);

struct RouteStep {
    std::string backend_id;
    double confidence = 0.0;
    LabelIndex label = 0;
    bool accepted = false;

    bool operator==(const RouteStep&) const = default;
};

struct RoutingTrace {
    std::string example_id;
    std::vector<RouteStep> steps;
    std::string final_backend;
    LabelIndex final_label = 0;

    bool operator==(const RoutingTrace&) const = default;
};

/// One trace per line: {"example_id", "steps": [{"backend", "confidence",
/// "label", "accepted"}], "final_backend", "final_label"}; labels are indices.
std::string to_jsonl(const RoutingTrace& trace);
RoutingTrace parse_trace(std::string_view line, const LabelSpace& labels);
std::vector<RoutingTrace> load_traces(const std::filesystem::path& path, const LabelSpace& labels);

}  // namespace cascade
