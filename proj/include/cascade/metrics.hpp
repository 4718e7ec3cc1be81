#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"
#include "cascade/plan.hpp"

namespace cascade {

struct BackendStats {
    std::size_t invocations = 0;  ///< traces finalized at this backend
    double proportion = 0.0;      ///< percent of n
    std::optional<double> accuracy_when_final;
    std::size_t visits = 0;  ///< traces that called this backend at all
    double latency_ms = 0.0;  ///< visits x declared per-call latency
    double memory_mb = 0.0;
};

struct CostTotals {
    double total_latency_ms = 0.0;
    double peak_memory_mb = 0.0;
    double total_dollars = 0.0;
};

struct SliceStats {
    std::size_t n = 0;
    std::optional<double> accuracy;  ///< null when the slice holds no examples
};

struct MetricsReport {
    std::string split;
    std::size_t n = 0;
    std::size_t correct = 0;
    double overall_accuracy = 0.0;
    /// Router-1 cascade (SSMs then LM) with the Augmented Layer removed.
    std::optional<double> specific_layer_accuracy;
    /// SSMs alone: the last SSM answers when no stage accepts.
    std::optional<double> ssm_only_accuracy;
    /// Percent of examples whose route reached the LM.
    double lm_visit_proportion = 0.0;
    /// Plan order: stages, terminal, augmented.
    std::vector<std::pair<std::string, BackendStats>> per_backend;
    std::map<Slice, SliceStats> per_slice;
    CostTotals cost;
    std::string dataset_hash;
    std::string plan_hash;

    const BackendStats& backend(std::string_view id) const;
};

/// Aggregates traces over `examples`. Throws TraceDatasetMismatch unless the
/// traces cover exactly the example ids, one each.
MetricsReport compute_report(std::span<const RoutingTrace> traces, std::span<const LabeledExample> examples,
                             const CascadePlan& plan, const std::optional<SliceAssignment>& slices,
                             const std::map<std::string, CostProfile, std::less<>>& costs);

/// Canonical JSON: sorted keys, floats rounded to 4 decimals, trailing newline.
std::string render_json(const MetricsReport& report);

/// Method/Time/Memory/Accuracy table plus proportions and slice tables.
std::string render_markdown(const MetricsReport& report);

}  // namespace cascade
