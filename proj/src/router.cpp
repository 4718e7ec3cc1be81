#include "cascade/router.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace cascade {

BackendEvaluation evaluate_backend(const Backend& backend, const DatasetBundle& bundle, std::string_view split,
                                   const ExecOptions& exec) {
    const auto& examples = bundle.split(split);
    std::vector<char> hit(examples.size(), 0);
    rethrow_first(for_each_index(examples.size(), exec, [&](std::size_t i) {
        hit[i] = backend.predict(examples[i]).predicted == examples[i].gold;
    }));
    BackendEvaluation ev;
    ev.backend_id = backend.id();
    ev.split = std::string(split);
    ev.n = examples.size();
    ev.correct = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.n);
    return ev;
}

std::vector<std::string> rank_models(std::span<const BackendEvaluation> evals) {
    std::set<std::string_view> seen;
    for (const auto& e : evals) {
        if (!seen.insert(e.backend_id).second) {
            throw Error(ErrorKind::DuplicateBackend, "backend '" + e.backend_id + "' evaluated twice");
        }
    }
    std::vector<std::size_t> order(evals.size());
    std::iota(order.begin(), order.end(), 0);
    // Compare correct-count ratios exactly so equal accuracies tie.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = evals[a];
        const auto& eb = evals[b];
        if (ea.n && eb.n) return ea.correct * eb.n > eb.correct * ea.n;
        return ea.accuracy > eb.accuracy;
    });
    std::vector<std::string> ids;
    ids.reserve(order.size());
    for (auto i : order) ids.push_back(evals[i].backend_id);
    return ids;
}

CascadePlan build_plan(const Registry& registry, const DatasetBundle& bundle, std::string_view split, double tau,
                       const ExecOptions& exec) {
    auto ranked_stages = [&](Layer layer) {
        std::vector<BackendEvaluation> evals;
        for (const auto& id : registry.ids(layer)) evals.push_back(evaluate_backend(registry.get(id), bundle, split, exec));
        std::vector<Stage> stages;
        for (const auto& id : rank_models(evals)) {
            auto it = std::find_if(evals.begin(), evals.end(), [&](const auto& e) { return e.backend_id == id; });
            stages.push_back(Stage{id, tau, it->accuracy});
        }
        return stages;
    };
    const auto large = registry.ids(Layer::Large);
    if (large.size() != 1) {
        throw Error(ErrorKind::InvalidPlan, "expected exactly one large-layer backend, found " + std::to_string(large.size()));
    }
    CascadePlan plan;
    plan.stages = ranked_stages(Layer::Specific);
    plan.terminal_id = large.front();
    plan.augmented = ranked_stages(Layer::Augmented);
    if (!plan.augmented.empty() && !registry.get(plan.terminal_id).descriptor().opaque_confidence) {
        plan.lm_threshold = tau;
    }
    plan.validate(registry);
    return plan;
}

RouteFailure::RouteFailure(const Error& cause, std::string example_id, std::string backend_id, RoutingTrace partial)
    : Error(cause.kind(), "example '" + example_id + "' at backend '" + backend_id + "': " + cause.what(), cause.code()),
      example_id_(std::move(example_id)),
      backend_id_(std::move(backend_id)),
      partial_(std::move(partial)) {}

RoutingTrace route_with(const CascadePlan& plan, bool lm_opaque, const std::string& example_id, const Predictor& predict) {
    RoutingTrace trace;
    trace.example_id = example_id;
    // Returns true when the step accepted and the walk is over.
    auto visit = [&](const std::string& id, std::optional<double> tau) {
        PredictionRecord rec;
        try {
            rec = predict(id);
        } catch (const RouteFailure&) {
            throw;
        } catch (const Error& e) {
            throw RouteFailure(e, example_id, id, trace);
        }
        const bool accepted = !tau || rec.confidence >= *tau;
        trace.steps.push_back(RouteStep{id, rec.confidence, rec.predicted, accepted});
        if (accepted) {
            trace.final_backend = id;
            trace.final_label = rec.predicted;
        }
        return accepted;
    };

    for (const auto& s : plan.stages) {
        if (visit(s.backend_id, s.tau)) return trace;
    }
    const bool lm_terminal = plan.augmented.empty() || lm_opaque || !plan.lm_threshold;
    if (visit(plan.terminal_id, lm_terminal ? std::nullopt : plan.lm_threshold)) return trace;
    for (std::size_t i = 0; i < plan.augmented.size(); ++i) {
        const bool last = i + 1 == plan.augmented.size();
        const auto& s = plan.augmented[i];
        if (visit(s.backend_id, last ? std::nullopt : std::optional<double>(s.tau))) return trace;
    }
    return trace;  // unreachable: the last augmented stage always accepts
}

RoutingTrace route_example(const CascadePlan& plan, const Registry& registry, const LabeledExample& example) {
    const bool opaque = registry.get(plan.terminal_id).descriptor().opaque_confidence;
    return route_with(plan, opaque, example.id,
                      [&](const std::string& id) { return registry.get(id).predict(example); });
}

RouteResult route_dataset(const CascadePlan& plan, const Registry& registry, const DatasetBundle& bundle,
                          std::string_view split, const std::optional<SliceAssignment>& slices,
                          const RouteOptions& options) {
    plan.validate(registry);
    const auto& examples = bundle.split(split);
    std::vector<RoutingTrace> traces(examples.size());
    auto errors = for_each_index(examples.size(), options.exec, [&](std::size_t i) {
        traces[i] = route_example(plan, registry, examples[i]);
    });
    if (!options.skip_errors) rethrow_first(errors);

    RouteResult result;
    std::vector<LabeledExample> routed;
    routed.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (!errors[i]) {
            result.traces.push_back(std::move(traces[i]));
            routed.push_back(examples[i]);
            continue;
        }
        try {
            std::rethrow_exception(errors[i]);
        } catch (const RouteFailure& f) {
            result.failures.push_back(FailedExample{f.example_id(), f.backend_id(), f.what()});
        } catch (const std::exception& e) {
            result.failures.push_back(FailedExample{examples[i].id, "", e.what()});
        }
    }
    result.report = compute_report(result.traces, routed, plan, slices, registry.cost_profiles());
    result.report.split = std::string(split);
    result.report.dataset_hash = bundle.provenance.content_hash;
    return result;
}

Calibration calibrate_thresholds(const CascadePlan& skeleton, const Registry& registry, const DatasetBundle& bundle,
                                 std::span<const double> grid, std::optional<double> lm_budget, std::string_view split,
                                 const ExecOptions& exec) {
    if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "calibration grid is empty");
    for (double tau : grid) {
        if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::InvalidConfig, "grid value outside [0,1]");
    }
    skeleton.validate(registry);
    const auto& examples = bundle.split(split);
    const bool opaque = registry.get(skeleton.terminal_id).descriptor().opaque_confidence;

    std::vector<CascadePlan> plans;
    for (double tau : grid) plans.push_back(skeleton.with_global_tau(tau));

    const std::size_t g = grid.size();
    std::vector<char> correct(examples.size() * g, 0);
    std::vector<char> lm_visit(examples.size() * g, 0);
    rethrow_first(for_each_index(examples.size(), exec, [&](std::size_t i) {
        const auto& ex = examples[i];
        // Each backend is queried at most once per example across the grid.
        std::map<std::string, PredictionRecord> memo;
        Predictor predict = [&](const std::string& id) {
            auto it = memo.find(id);
            if (it == memo.end()) it = memo.emplace(id, registry.get(id).predict(ex)).first;
            return it->second;
        };
        for (std::size_t k = 0; k < g; ++k) {
            const auto trace = route_with(plans[k], opaque, ex.id, predict);
            correct[i * g + k] = trace.final_label == ex.gold;
            lm_visit[i * g + k] = std::any_of(trace.steps.begin(), trace.steps.end(),
                                              [&](const RouteStep& s) { return s.backend_id == skeleton.terminal_id; });
        }
    }));

    Calibration cal;
    for (std::size_t k = 0; k < g; ++k) {
        SweepPoint p{grid[k], 0, 0, examples.size()};
        for (std::size_t i = 0; i < examples.size(); ++i) {
            p.correct += correct[i * g + k];
            p.lm_visits += lm_visit[i * g + k];
        }
        cal.sweep.push_back(p);
    }

    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < g; ++k) {
        const auto& p = cal.sweep[k];
        if (lm_budget && p.lm_proportion() > *lm_budget + 1e-12) continue;
        if (!best) {
            best = k;
            continue;
        }
        const auto& b = cal.sweep[*best];
        if (p.correct != b.correct ? p.correct > b.correct
                                   : (p.lm_visits != b.lm_visits ? p.lm_visits < b.lm_visits : p.tau < b.tau)) {
            best = k;
        }
    }
    if (!best) {
        throw Error(ErrorKind::InfeasibleBudget, "no grid threshold keeps the LM fraction within the budget");
    }
    cal.selected = *best;
    cal.plan = plans[*best];
    return cal;
}

}  // namespace cascade
