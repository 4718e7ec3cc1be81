#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"
#include "cascade/error.hpp"
#include "cascade/plan.hpp"
#include "cascade/util.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Kind of the cascade::Error thrown by `fn`; nullopt when nothing is thrown.
template <class Fn>
std::optional<cascade::ErrorKind> kind_of(Fn&& fn) {
    try {
        fn();
    } catch (const cascade::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

/// Unique scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("cascade-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

/// Backend answering from a fixed id -> probs table.
class TableBackend final : public cascade::Backend {
public:
    TableBackend(std::string id, cascade::Layer layer, std::map<std::string, std::vector<double>> table,
                 bool opaque = false)
        : Backend(make_desc(std::move(id), layer, opaque)), table_(std::move(table)) {}

    cascade::PredictionRecord predict(const cascade::LabeledExample& ex) const override {
        auto it = table_.find(ex.id);
        if (it == table_.end()) throw cascade::Error(cascade::ErrorKind::MissingPrediction, ex.id);
        return cascade::PredictionRecord::from_probs(id(), ex.id, it->second);
    }

private:
    static cascade::BackendDescriptor make_desc(std::string id, cascade::Layer layer, bool opaque) {
        cascade::BackendDescriptor d;
        d.id = std::move(id);
        d.layer = layer;
        d.config = cascade::OfflineConfig{};
        d.opaque_confidence = opaque;
        return d;
    }
    std::map<std::string, std::vector<double>> table_;
};

inline cascade::LabeledExample example(std::string id, cascade::LabelIndex gold, std::optional<int> region = std::nullopt) {
    return cascade::LabeledExample{std::move(id), "payload", gold, region};
}

/// Bundle with one split holding `examples`.
inline cascade::DatasetBundle bundle_of(std::vector<std::string> labels, std::vector<cascade::LabeledExample> examples,
                                        std::string split = "train") {
    cascade::DatasetBundle b;
    b.label_space = cascade::LabelSpace(std::move(labels));
    b.splits[split] = std::move(examples);
    cascade::finalize_bundle(b, "test");
    return b;
}

/// One-hot-ish distribution with `conf` on `label`, rest spread evenly.
inline std::vector<double> peaked(std::size_t k, std::size_t label, double conf) {
    std::vector<double> p(k, (1.0 - conf) / double(k - 1));
    p[label] = conf;
    return p;
}

/// Step of the reference walker, kept separate from the library types.
struct RefStep {
    std::string backend;
    double confidence;
    std::size_t label;
    bool accepted;
};

/// Brute-force cascade walk written from the routing contract:
///  - SSM stages in plan order accept when confidence >= their threshold;
///  - the LM accepts unconditionally unless an augmented layer exists, the LM
///    is not opaque and an LM threshold is set, in which case it accepts when
///    confidence >= that threshold;
///  - augmented stages accept by threshold, except the last which always does.
/// `lookup(backend, example)` returns (probs).
template <class Lookup>
std::vector<RefStep> reference_walk(const cascade::CascadePlan& plan, bool lm_opaque, const std::string& example_id,
                                    Lookup&& lookup) {
    std::vector<RefStep> steps;
    auto max_and_arg = [](const std::vector<double>& p) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.size(); ++i) {
            if (p[i] > p[best]) best = i;
        }
        return std::pair<double, std::size_t>{p[best], best};
    };
    std::vector<std::pair<std::string, std::optional<double>>> chain;
    for (const auto& s : plan.stages) chain.emplace_back(s.backend_id, s.tau);
    const bool gate_lm = !plan.augmented.empty() && !lm_opaque && plan.lm_threshold.has_value();
    chain.emplace_back(plan.terminal_id, gate_lm ? plan.lm_threshold : std::nullopt);
    if (gate_lm) {
        for (std::size_t i = 0; i < plan.augmented.size(); ++i) {
            const bool last = i + 1 == plan.augmented.size();
            chain.emplace_back(plan.augmented[i].backend_id, last ? std::nullopt : std::optional<double>(plan.augmented[i].tau));
        }
    }
    for (const auto& [backend, tau] : chain) {
        const auto [conf, label] = max_and_arg(lookup(backend, example_id));
        const bool accept = !tau || !(conf < *tau);
        steps.push_back({backend, conf, label, accept});
        if (accept) break;
    }
    return steps;
}

inline bool same_walk(const std::vector<RefStep>& ref, const cascade::RoutingTrace& t) {
    if (ref.size() != t.steps.size()) return false;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto& a = ref[i];
        const auto& b = t.steps[i];
        if (a.backend != b.backend_id || a.confidence != b.confidence || a.label != b.label || a.accepted != b.accepted) {
            return false;
        }
    }
    return !ref.empty() && ref.back().accepted && t.final_backend == ref.back().backend && t.final_label == ref.back().label;
}

}  // namespace testing
