#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"
#include "cascade/error.hpp"
#include "cascade/metrics.hpp"
#include "cascade/parallel.hpp"
#include "cascade/plan.hpp"

namespace cascade {

struct BackendEvaluation {
    std::string backend_id;
    std::string split;
    double accuracy = 0.0;
    std::size_t n = 0;
    std::size_t correct = 0;
};

/// Fraction of the split the backend labels correctly.
BackendEvaluation evaluate_backend(const Backend& backend, const DatasetBundle& bundle, std::string_view split,
                                   const ExecOptions& exec = {});

/// Stable descending sort by accuracy; input order is registration order.
std::vector<std::string> rank_models(std::span<const BackendEvaluation> evals);

/// Ranks the Specific Layer (and Augmented Layer) of `registry` on `split` and
/// assembles a plan with `tau` on every stage. The LM threshold defaults to
/// `tau` when augmented stages exist and the LM exposes confidence.
CascadePlan build_plan(const Registry& registry, const DatasetBundle& bundle, std::string_view split, double tau,
                       const ExecOptions& exec = {});

/// Supplies the prediction of one backend for the example being routed.
using Predictor = std::function<PredictionRecord(const std::string& backend_id)>;

/// Raised when a backend fails mid-route. `partial` holds the steps taken
/// before the failing backend.
class RouteFailure : public Error {
public:
    RouteFailure(const Error& cause, std::string example_id, std::string backend_id, RoutingTrace partial);

    const std::string& example_id() const noexcept { return example_id_; }
    const std::string& backend_id() const noexcept { return backend_id_; }
    const RoutingTrace& partial() const noexcept { return partial_; }

private:
    std::string example_id_;
    std::string backend_id_;
    RoutingTrace partial_;
};

/// Core acceptance walk. `lm_opaque` makes the LM unconditionally terminal.
RoutingTrace route_with(const CascadePlan& plan, bool lm_opaque, const std::string& example_id, const Predictor& predict);

RoutingTrace route_example(const CascadePlan& plan, const Registry& registry, const LabeledExample& example);

struct RouteOptions {
    ExecOptions exec;
    bool skip_errors = false;
};

struct FailedExample {
    std::string example_id;
    std::string backend_id;
    std::string error;
};

struct RouteResult {
    std::vector<RoutingTrace> traces;  ///< split order, failures omitted
    std::vector<FailedExample> failures;
    MetricsReport report;
};

/// Routes every example of `split`. Fails fast on the first (lowest index)
/// failing example unless `skip_errors` is set.
RouteResult route_dataset(const CascadePlan& plan, const Registry& registry, const DatasetBundle& bundle,
                          std::string_view split, const std::optional<SliceAssignment>& slices,
                          const RouteOptions& options = {});

struct SweepPoint {
    double tau = 0.0;
    std::size_t correct = 0;
    std::size_t lm_visits = 0;
    std::size_t n = 0;

    double accuracy() const { return n ? double(correct) / double(n) : 0.0; }
    double lm_proportion() const { return n ? double(lm_visits) / double(n) : 0.0; }
};

struct Calibration {
    CascadePlan plan;
    std::vector<SweepPoint> sweep;  ///< grid order
    std::size_t selected = 0;
};

/// Grid search over a shared Specific Layer threshold on the validation split.
/// Picks the most accurate point whose LM-visit fraction is within `lm_budget`;
/// ties go to fewer LM visits, then the lower threshold.
Calibration calibrate_thresholds(const CascadePlan& skeleton, const Registry& registry, const DatasetBundle& bundle,
                                 std::span<const double> grid, std::optional<double> lm_budget,
                                 std::string_view split = kVal, const ExecOptions& exec = {});

}  // namespace cascade
