#include <doctest.h>

#include <nlohmann/json.hpp>

#include "cascade/metrics.hpp"
#include "helpers.hpp"

using namespace cascade;
using testing::kind_of;

namespace {

/// Traces finalized at the given backends with the given counts; every
/// example is answered correctly unless `wrong` says otherwise.
struct Fixture {
    CascadePlan plan;
    std::vector<LabeledExample> examples;
    std::vector<RoutingTrace> traces;
};

Fixture finals(const std::vector<std::string>& ssms, const std::string& lm, const std::vector<std::size_t>& counts) {
    Fixture f;
    for (const auto& s : ssms) f.plan.stages.push_back({s, 0.8, {}});
    f.plan.terminal_id = lm;
    std::vector<std::string> chain = ssms;
    chain.push_back(lm);
    std::size_t next = 0;
    for (std::size_t b = 0; b < chain.size(); ++b) {
        for (std::size_t i = 0; i < counts[b]; ++i) {
            const std::string id = "x" + std::to_string(next++);
            f.examples.push_back(testing::example(id, 0));
            RoutingTrace t{id, {}, chain[b], 0};
            for (std::size_t k = 0; k < b; ++k) t.steps.push_back({chain[k], 0.5, 1, false});
            t.steps.push_back({chain[b], 0.9, 0, true});
            f.traces.push_back(std::move(t));
        }
    }
    return f;
}

/// Row of the proportions table starting with `first_cell`.
std::string row(const std::string& md, const std::string& first_cell) {
    const auto table = md.find("| Backend | Invocations |");
    REQUIRE(table != std::string::npos);
    const auto pos = md.find("| " + first_cell + " |", table);
    REQUIRE(pos != std::string::npos);
    return md.substr(pos, md.find('\n', pos) - pos);
}

}  // namespace

TEST_CASE("singleton split") {
    auto f = finals({"s"}, "lm", {1, 0});
    auto r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    CHECK(r.overall_accuracy == 1.0);
    f.traces[0].final_label = 1;
    r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    CHECK(r.overall_accuracy == 0.0);
}

TEST_CASE("all traces at one backend") {
    const auto f = finals({"s1", "s2"}, "lm", {0, 25, 0});
    const auto r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    CHECK(r.backend("s2").proportion == 100.0);
    CHECK(r.backend("s2").accuracy_when_final == 1.0);
    CHECK_FALSE(r.backend("lm").accuracy_when_final.has_value());
    CHECK(r.backend("s1").visits == 25);
    CHECK(r.overall_accuracy == 1.0);
    CHECK(r.lm_visit_proportion == 0.0);
}

TEST_CASE("SA proportions render as reported") {
    // RoBERTa / XLNet / BERT / Llama-3-8B finals over 10k examples.
    const auto f = finals({"RoBERTa", "XLNet", "BERT"}, "Llama-3-8B", {7178, 383, 2, 2437});
    const auto r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    const auto md = render_markdown(r);
    CHECK(row(md, "RoBERTa").find("71.78%") != std::string::npos);
    CHECK(row(md, "XLNet").find("3.83%") != std::string::npos);
    CHECK(row(md, "BERT").find("0.02%") != std::string::npos);
    CHECK(row(md, "Llama-3-8B").find("24.37%") != std::string::npos);
    CHECK(row(md, "Total").find("100.00%") != std::string::npos);
}

TEST_CASE("NLI proportions reproduce the 99.99 rounding pattern") {
    // Counts chosen so each share rounds to the reported figure.
    const auto f = finals({"RoBERTa", "DistilBERT", "ALBERT"}, "GLM-4-9B", {1484, 123, 65, 689});
    const auto r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    const auto md = render_markdown(r);
    CHECK(row(md, "RoBERTa").find("62.85%") != std::string::npos);
    CHECK(row(md, "DistilBERT").find("5.21%") != std::string::npos);
    CHECK(row(md, "ALBERT").find("2.75%") != std::string::npos);
    CHECK(row(md, "GLM-4-9B").find("29.18%") != std::string::npos);
    CHECK(row(md, "Total").find("99.99%") != std::string::npos);
}

TEST_CASE("layer accuracies and costs") {
    CascadePlan plan{{{"s", 0.8, {}}}, "lm", 0.7, {{"a", 0.5, {}}}};
    std::vector<LabeledExample> ex{testing::example("1", 0), testing::example("2", 1), testing::example("3", 1)};
    std::vector<RoutingTrace> t{
        {"1", {{"s", 0.9, 0, true}}, "s", 0},
        {"2", {{"s", 0.5, 0, false}, {"lm", 0.9, 1, true}}, "lm", 1},
        {"3", {{"s", 0.5, 1, false}, {"lm", 0.6, 0, false}, {"a", 0.8, 1, true}}, "a", 1},
    };
    std::map<std::string, CostProfile, std::less<>> costs{
        {"s", {2.0, 100.0, 0.0}}, {"lm", {300.0, 0.0, 1.0}}, {"a", {3.0, 250.0, 0.0}}};
    const auto r = compute_report(t, ex, plan, std::nullopt, costs);
    CHECK(r.overall_accuracy == 1.0);
    CHECK(r.specific_layer_accuracy == doctest::Approx(2.0 / 3.0));  // LM got example 3 wrong
    CHECK(r.ssm_only_accuracy == doctest::Approx(2.0 / 3.0));       // last SSM label used for 2
    CHECK(r.lm_visit_proportion == doctest::Approx(200.0 / 3.0));
    CHECK(r.cost.total_latency_ms == doctest::Approx(3 * 2.0 + 2 * 300.0 + 3.0));
    CHECK(r.cost.peak_memory_mb == 250.0);
    CHECK(r.cost.total_dollars == doctest::Approx(2 * 1.0 / 1000.0));
    CHECK(r.backend("lm").visits == 2);
    CHECK(r.backend("lm").invocations == 1);
}

TEST_CASE("trace/example mismatches") {
    auto f = finals({"s"}, "lm", {2, 1});
    auto short_examples = f.examples;
    short_examples.pop_back();
    CHECK(kind_of([&] { compute_report(f.traces, short_examples, f.plan, std::nullopt, {}); }) == ErrorKind::TraceDatasetMismatch);
    auto renamed = f.traces;
    renamed[0].example_id = "nope";
    CHECK(kind_of([&] { compute_report(renamed, f.examples, f.plan, std::nullopt, {}); }) == ErrorKind::TraceDatasetMismatch);
    auto twice = f.traces;
    twice[1] = twice[0];
    CHECK(kind_of([&] { compute_report(twice, f.examples, f.plan, std::nullopt, {}); }) == ErrorKind::TraceDatasetMismatch);
}

TEST_CASE("per-slice accuracy") {
    CascadePlan plan{{{"s", 0.8, {}}}, "lm", {}, {}};
    std::vector<LabeledExample> ex{testing::example("1", 0), testing::example("2", 1), testing::example("3", 2)};
    std::vector<RoutingTrace> t{{"1", {{"s", 0.9, 0, true}}, "s", 0},
                                {"2", {{"s", 0.9, 0, true}}, "s", 0},
                                {"3", {{"s", 0.9, 2, true}}, "s", 2}};
    SliceAssignment slices{{Slice::Head, Slice::Head, Slice::Tail}, {10, 10, 1}, {5, 2}};
    const auto r = compute_report(t, ex, plan, slices, {});
    CHECK(r.per_slice.at(Slice::Head).n == 2);
    CHECK(r.per_slice.at(Slice::Head).accuracy == 0.5);
    CHECK(r.per_slice.at(Slice::Tail).accuracy == 1.0);
    CHECK_FALSE(r.per_slice.at(Slice::Medium).accuracy.has_value());
    const auto j = nlohmann::json::parse(render_json(r));
    CHECK(j["per_slice"]["medium"]["accuracy"].is_null());
}

TEST_CASE("rendering is canonical") {
    const auto f = finals({"s1", "s2"}, "lm", {3, 4, 5});
    const auto r = compute_report(f.traces, f.examples, f.plan, std::nullopt, {});
    CHECK(render_json(r) == render_json(r));
    CHECK(render_markdown(r) == render_markdown(r));
    const auto text = render_json(r);
    CHECK(text.back() == '\n');
    const auto j = nlohmann::json::parse(text);
    CHECK(j.dump(2) + "\n" == text);
    CHECK(j["per_backend"]["s1"]["proportion"] == 25.0);
    CHECK(j["cost"]["model"] == "modeled");
    CHECK(j["per_backend"]["s2"]["proportion"].get<double>() == doctest::Approx(33.3333));
}
