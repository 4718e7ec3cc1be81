#include "cascade/plan.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cascade/backends.hpp"
#include "cascade/error.hpp"
#include "cascade/util.hpp"
#include "toml_util.hpp"

namespace cascade {

using nlohmann::json;

namespace {

void check_tau(double tau, const std::string& where) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw Error(ErrorKind::InvalidPlan, where + " threshold " + fmt::format("{}", tau) + " is outside [0,1]");
    }
}

}  // namespace

void CascadePlan::validate() const {
    if (terminal_id.empty()) throw Error(ErrorKind::InvalidPlan, "plan has no terminal backend");
    std::set<std::string_view> seen{terminal_id};
    auto check_chain = [&](const std::vector<Stage>& chain, const char* what) {
        for (std::size_t i = 0; i < chain.size(); ++i) {
            const auto& s = chain[i];
            check_tau(s.tau, std::string(what) + " '" + s.backend_id + "'");
            if (!seen.insert(s.backend_id).second) {
                throw Error(ErrorKind::InvalidPlan, "backend '" + s.backend_id + "' appears twice in the plan");
            }
            if (i > 0 && s.accuracy && chain[i - 1].accuracy && *s.accuracy > *chain[i - 1].accuracy) {
                throw Error(ErrorKind::InvalidPlan, std::string(what) + " order is not descending by accuracy at '" +
                                                        s.backend_id + "'");
            }
        }
    };
    check_chain(stages, "stage");
    check_chain(augmented, "augmented stage");
    if (lm_threshold) check_tau(*lm_threshold, "terminal");
}

void CascadePlan::validate(const Registry& registry) const {
    validate();
    auto expect_layer = [&](const std::string& id, Layer layer) {
        const auto& desc = registry.get(id).descriptor();
        if (desc.layer != layer) {
            throw Error(ErrorKind::InvalidPlan, "backend '" + id + "' has layer " + std::string(to_string(desc.layer)) +
                                                    ", expected " + std::string(to_string(layer)));
        }
    };
    expect_layer(terminal_id, Layer::Large);
    for (const auto& s : stages) expect_layer(s.backend_id, Layer::Specific);
    for (const auto& s : augmented) expect_layer(s.backend_id, Layer::Augmented);
    if (!augmented.empty() && !lm_threshold && !registry.get(terminal_id).descriptor().opaque_confidence) {
        throw Error(ErrorKind::InvalidPlan, "augmented stages need a terminal tau2 unless the LM has opaque confidence");
    }
}

CascadePlan CascadePlan::with_global_tau(double tau) const {
    CascadePlan out = *this;
    for (auto& s : out.stages) s.tau = tau;
    return out;
}

std::string CascadePlan::to_toml() const {
    std::string out;
    auto emit_stage = [&](const char* header, const Stage& s) {
        out += fmt::format("[[{}]]\nbackend = \"{}\"\ntau = {}\n", header, s.backend_id, s.tau);
        if (s.accuracy) out += fmt::format("accuracy = {}\n", *s.accuracy);
        out += "\n";
    };
    for (const auto& s : stages) emit_stage("stage", s);
    out += fmt::format("[terminal]\nbackend = \"{}\"\n", terminal_id);
    if (lm_threshold) out += fmt::format("tau2 = {}\n", *lm_threshold);
    for (const auto& s : augmented) {
        out += "\n";
        emit_stage("augmented", s);
        out.pop_back();
    }
    return out;
}

std::string CascadePlan::hash() const { return sha256_hex(to_toml()); }

CascadePlan parse_plan(std::string_view toml_text) {
    const auto root = tomlu::parse(toml_text, "plan");
    tomlu::check_keys(root, {"stage", "terminal", "augmented"}, "plan");
    CascadePlan plan;
    auto read_stages = [](const toml::table& root, std::string_view key) {
        std::vector<Stage> out;
        for (const auto* t : tomlu::tables(root, key, "plan")) {
            tomlu::check_keys(*t, {"backend", "tau", "accuracy"}, key);
            out.push_back(Stage{tomlu::req_string(*t, "backend", key), tomlu::req_number(*t, "tau", key),
                                tomlu::opt_number(*t, "accuracy", key)});
        }
        return out;
    };
    plan.stages = read_stages(root, "stage");
    plan.augmented = read_stages(root, "augmented");
    if (!root.contains("terminal")) throw Error(ErrorKind::InvalidPlan, "plan lacks a [terminal] table");
    const auto& term = tomlu::table_at(root, "terminal", "plan");
    tomlu::check_keys(term, {"backend", "tau2"}, "terminal");
    plan.terminal_id = tomlu::req_string(term, "backend", "terminal");
    plan.lm_threshold = tomlu::opt_number(term, "tau2", "terminal");
    plan.validate();
    return plan;
}

CascadePlan load_plan(const std::filesystem::path& path) { return parse_plan(read_file(path)); }

void save_plan(const CascadePlan& plan, const std::filesystem::path& path) { write_file(path, plan.to_toml()); }

std::string to_jsonl(const RoutingTrace& trace) {
    json steps = json::array();
    for (const auto& s : trace.steps) {
        steps.push_back({{"backend", s.backend_id}, {"confidence", s.confidence}, {"label", s.label}, {"accepted", s.accepted}});
    }
    json j = {{"example_id", trace.example_id},
              {"steps", std::move(steps)},
              {"final_backend", trace.final_backend},
              {"final_label", trace.final_label}};
    return j.dump();
}

RoutingTrace parse_trace(std::string_view line, const LabelSpace& labels) {
    try {
        const json j = json::parse(line);
        RoutingTrace t;
        t.example_id = j.at("example_id").get<std::string>();
        t.final_backend = j.at("final_backend").get<std::string>();
        t.final_label = j.at("final_label").get<LabelIndex>();
        for (const auto& s : j.at("steps")) {
            t.steps.push_back(RouteStep{s.at("backend").get<std::string>(), s.at("confidence").get<double>(),
                                        s.at("label").get<LabelIndex>(), s.at("accepted").get<bool>()});
        }
        if (t.final_label >= labels.size()) throw Error(ErrorKind::SchemaError, "final_label out of range");
        for (const auto& s : t.steps) {
            if (s.label >= labels.size()) throw Error(ErrorKind::SchemaError, "step label out of range");
        }
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("malformed trace line: ") + e.what());
    }
}

std::vector<RoutingTrace> load_traces(const std::filesystem::path& path, const LabelSpace& labels) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<RoutingTrace> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_trace(line, labels));
    }
    return out;
}

}  // namespace cascade
