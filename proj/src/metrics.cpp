#include "cascade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cascade/error.hpp"

namespace cascade {

using nlohmann::json;

const BackendStats& MetricsReport::backend(std::string_view id) const {
    for (const auto& [bid, stats] : per_backend) {
        if (bid == id) return stats;
    }
    throw Error(ErrorKind::UnknownBackend, "report has no backend '" + std::string(id) + "'");
}

MetricsReport compute_report(std::span<const RoutingTrace> traces, std::span<const LabeledExample> examples,
                             const CascadePlan& plan, const std::optional<SliceAssignment>& slices,
                             const std::map<std::string, CostProfile, std::less<>>& costs) {
    std::unordered_map<std::string_view, const LabeledExample*> by_id;
    by_id.reserve(examples.size());
    for (const auto& ex : examples) by_id.emplace(ex.id, &ex);
    if (traces.size() != examples.size()) {
        throw Error(ErrorKind::TraceDatasetMismatch, std::to_string(traces.size()) + " traces for " +
                                                         std::to_string(examples.size()) + " examples");
    }

    MetricsReport r;
    r.n = examples.size();
    r.plan_hash = plan.hash();

    std::unordered_map<std::string_view, std::size_t> slot;
    auto add_backend = [&](const std::string& id) {
        slot.emplace(id, r.per_backend.size());
        r.per_backend.emplace_back(id, BackendStats{});
    };
    for (const auto& s : plan.stages) add_backend(s.backend_id);
    add_backend(plan.terminal_id);
    for (const auto& s : plan.augmented) add_backend(s.backend_id);
    std::vector<std::size_t> correct_when_final(r.per_backend.size(), 0);

    if (slices) {
        for (auto s : {Slice::Head, Slice::Medium, Slice::Tail}) r.per_slice[s] = SliceStats{};
    }
    std::map<Slice, std::size_t> slice_correct;

    std::size_t sl_correct = 0;
    std::size_t ssm_correct = 0;
    std::size_t lm_visits = 0;
    std::unordered_map<std::string_view, bool> seen;
    for (const auto& t : traces) {
        auto it = by_id.find(t.example_id);
        if (it == by_id.end()) {
            throw Error(ErrorKind::TraceDatasetMismatch, "trace for unknown example '" + t.example_id + "'");
        }
        if (!seen.emplace(t.example_id, true).second) {
            throw Error(ErrorKind::TraceDatasetMismatch, "two traces for example '" + t.example_id + "'");
        }
        const LabeledExample& ex = *it->second;
        auto final_slot = slot.find(t.final_backend);
        if (final_slot == slot.end()) {
            throw Error(ErrorKind::TraceDatasetMismatch, "trace finalized at '" + t.final_backend + "', not in the plan");
        }
        const bool ok = t.final_label == ex.gold;
        r.correct += ok;
        auto& stats = r.per_backend[final_slot->second].second;
        ++stats.invocations;
        correct_when_final[final_slot->second] += ok;

        // Re-finalize at the LM boundary for the layer-level accuracies.
        LabelIndex sl_label = t.final_label;
        std::optional<LabelIndex> last_ssm_label;
        std::optional<LabelIndex> accepted_ssm_label;
        for (const auto& step : t.steps) {
            auto s = slot.find(step.backend_id);
            if (s == slot.end()) {
                throw Error(ErrorKind::TraceDatasetMismatch, "trace visits '" + step.backend_id + "', not in the plan");
            }
            auto& visited = r.per_backend[s->second].second;
            ++visited.visits;
            auto cost = costs.find(step.backend_id);
            if (cost != costs.end()) {
                visited.latency_ms += cost->second.latency_ms_per_call;
                visited.memory_mb = cost->second.memory_mb;
                r.cost.total_latency_ms += cost->second.latency_ms_per_call;
                r.cost.total_dollars += cost->second.dollars_per_1k_calls / 1000.0;
                r.cost.peak_memory_mb = std::max(r.cost.peak_memory_mb, cost->second.memory_mb);
            }
            if (s->second < plan.stages.size()) {
                last_ssm_label = step.label;
                if (step.accepted) accepted_ssm_label = step.label;
            } else if (step.backend_id == plan.terminal_id) {
                ++lm_visits;
                sl_label = step.label;
            }
        }
        sl_correct += sl_label == ex.gold;
        if (auto l = accepted_ssm_label ? accepted_ssm_label : last_ssm_label) ssm_correct += *l == ex.gold;

        if (slices) {
            const Slice s = slices->of(ex.gold);
            ++r.per_slice[s].n;
            slice_correct[s] += ok;
        }
    }

    const double n = static_cast<double>(r.n);
    r.overall_accuracy = r.n ? static_cast<double>(r.correct) / n : 0.0;
    if (r.n) {
        r.specific_layer_accuracy = static_cast<double>(sl_correct) / n;
        if (!plan.stages.empty()) r.ssm_only_accuracy = static_cast<double>(ssm_correct) / n;
        r.lm_visit_proportion = 100.0 * static_cast<double>(lm_visits) / n;
    }
    for (std::size_t i = 0; i < r.per_backend.size(); ++i) {
        auto& stats = r.per_backend[i].second;
        stats.proportion = r.n ? 100.0 * static_cast<double>(stats.invocations) / n : 0.0;
        if (stats.invocations) {
            stats.accuracy_when_final = static_cast<double>(correct_when_final[i]) / static_cast<double>(stats.invocations);
        }
    }
    for (auto& [s, stats] : r.per_slice) {
        if (stats.n) stats.accuracy = static_cast<double>(slice_correct[s]) / static_cast<double>(stats.n);
    }
    return r;
}

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

json opt4(const std::optional<double>& v) { return v ? json(round4(*v)) : json(nullptr); }

std::string pct(double fraction) { return fmt::format("{:.2f}%", 100.0 * fraction); }

}  // namespace

std::string render_json(const MetricsReport& r) {
    json per_backend = json::object();
    for (const auto& [id, s] : r.per_backend) {
        per_backend[id] = {{"invocations", s.invocations},
                           {"proportion", round4(s.proportion)},
                           {"accuracy_when_final", opt4(s.accuracy_when_final)},
                           {"visits", s.visits}};
    }
    json j = {{"split", r.split},
              {"n", r.n},
              {"correct", r.correct},
              {"overall_accuracy", round4(r.overall_accuracy)},
              {"specific_layer_accuracy", opt4(r.specific_layer_accuracy)},
              {"ssm_only_accuracy", opt4(r.ssm_only_accuracy)},
              {"lm_visit_proportion", round4(r.lm_visit_proportion)},
              {"per_backend", std::move(per_backend)},
              {"cost",
               {{"model", "modeled"},
                {"total_latency_ms", round4(r.cost.total_latency_ms)},
                {"peak_memory_mb", round4(r.cost.peak_memory_mb)},
                {"total_dollars", round4(r.cost.total_dollars)}}},
              {"dataset_hash", r.dataset_hash},
              {"plan_hash", r.plan_hash}};
    if (!r.per_slice.empty()) {
        json slices = json::object();
        for (const auto& [s, stats] : r.per_slice) {
            slices[std::string(to_string(s))] = {{"n", stats.n}, {"accuracy", opt4(stats.accuracy)}};
        }
        j["per_slice"] = std::move(slices);
    }
    return j.dump(2) + "\n";
}

std::string render_markdown(const MetricsReport& r) {
    std::string out = fmt::format("## Cascade report: split `{}`, n = {}\n\n", r.split, r.n);
    out += "Time and memory are modeled from declared cost profiles, not measured.\n\n";
    out += "| Method | Time (modeled, ms) | Memory (modeled, MB) | Accuracy |\n";
    out += "|---|---:|---:|---:|\n";
    // Backend accuracy is over the examples that backend answered.
    for (const auto& [id, s] : r.per_backend) {
        const auto acc = s.accuracy_when_final ? pct(*s.accuracy_when_final) : std::string("n/a");
        out += fmt::format("| {} | {:.2f} | {:.2f} | {} |\n", id, s.latency_ms, s.memory_mb, acc);
    }
    out += fmt::format("| Cascade (overall) | {:.2f} | {:.2f} | {} |\n\n", r.cost.total_latency_ms,
                       r.cost.peak_memory_mb, pct(r.overall_accuracy));

    out += "| Backend | Invocations | Proportion |\n|---|---:|---:|\n";
    double total = 0.0;
    for (const auto& [id, s] : r.per_backend) {
        const double rounded = std::round(s.proportion * 100.0) / 100.0;
        total += rounded;
        out += fmt::format("| {} | {} | {:.2f}% |\n", id, s.invocations, rounded);
    }
    out += fmt::format("| Total | {} | {:.2f}% |\n", r.n, total);

    if (r.specific_layer_accuracy || r.ssm_only_accuracy) {
        out += "\n| Layer | Accuracy |\n|---|---:|\n";
        if (r.ssm_only_accuracy) out += fmt::format("| SSMs only | {} |\n", pct(*r.ssm_only_accuracy));
        if (r.specific_layer_accuracy) out += fmt::format("| Specific Layer + LM | {} |\n", pct(*r.specific_layer_accuracy));
        out += fmt::format("| Full cascade | {} |\n", pct(r.overall_accuracy));
    }
    if (!r.per_slice.empty()) {
        out += "\n| Slice | Examples | Accuracy |\n|---|---:|---:|\n";
        for (const auto& [s, stats] : r.per_slice) {
            out += fmt::format("| {} | {} | {} |\n", to_string(s), stats.n, stats.accuracy ? pct(*stats.accuracy) : "n/a");
        }
    }
    return out;
}

}  // namespace cascade
