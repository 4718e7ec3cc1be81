#include "cascade/backends.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cascade/error.hpp"
#include "cascade/util.hpp"

namespace cascade {

using nlohmann::json;

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error(ErrorKind::NonFiniteInput, "softmax of an empty vector");
    for (double v : logits) {
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "softmax input contains a non-finite value");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

namespace {

void check_distribution(std::span<const double> probs) {
    if (probs.empty()) throw Error(ErrorKind::InvalidDistribution, "empty probability vector");
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0) {
            throw Error(ErrorKind::InvalidDistribution, "probability entry " + std::to_string(p) + " is invalid");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw Error(ErrorKind::InvalidDistribution, "probabilities sum to " + std::to_string(sum));
    }
}

}  // namespace

double confidence(std::span<const double> probs) {
    check_distribution(probs);
    return *std::max_element(probs.begin(), probs.end());
}

LabelIndex argmax(std::span<const double> probs) {
    // max_element returns the first maximal element: lowest index wins ties.
    return static_cast<LabelIndex>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::vector<double> normalize_distribution(std::vector<double> probs, std::size_t k) {
    if (probs.size() != k) {
        throw Error(ErrorKind::SchemaError,
                    "probability vector has " + std::to_string(probs.size()) + " entries, expected " + std::to_string(k));
    }
    check_distribution(probs);
    const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    for (double& p : probs) p /= sum;
    return probs;
}

std::string_view to_string(BackendKind k) noexcept {
    switch (k) {
        case BackendKind::Offline: return "offline";
        case BackendKind::Http: return "http";
        case BackendKind::Subprocess: return "subprocess";
        case BackendKind::Synthetic: return "synthetic";
    }
    return "?";
}

std::string_view to_string(Layer l) noexcept {
    switch (l) {
        case Layer::Specific: return "specific";
        case Layer::Large: return "large";
        case Layer::Augmented: return "augmented";
    }
    return "?";
}

BackendKind parse_backend_kind(std::string_view s) {
    for (auto k : {BackendKind::Offline, BackendKind::Http, BackendKind::Subprocess, BackendKind::Synthetic}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorKind::InvalidConfig, "unknown backend kind '" + std::string(s) + "'");
}

Layer parse_layer(std::string_view s) {
    for (auto l : {Layer::Specific, Layer::Large, Layer::Augmented}) {
        if (to_string(l) == s) return l;
    }
    throw Error(ErrorKind::InvalidConfig, "unknown layer '" + std::string(s) + "'");
}

void SyntheticProfile::validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(in_region_accuracy) || !in_unit(out_region_accuracy)) {
        throw Error(ErrorKind::InvalidConfig, "synthetic accuracies must lie in [0,1]");
    }
    if (in_region_accuracy < out_region_accuracy) {
        throw Error(ErrorKind::InvalidConfig, "in_region_accuracy must be >= out_region_accuracy");
    }
    if (!(sharpness > 0.0) || !std::isfinite(sharpness)) {
        throw Error(ErrorKind::InvalidConfig, "sharpness must be a positive finite number");
    }
}

BackendKind BackendDescriptor::kind() const noexcept {
    return static_cast<BackendKind>(config.index());
}

PredictionRecord PredictionRecord::from_probs(std::string backend_id, std::string example_id, std::vector<double> probs) {
    if (probs.size() < 2) throw Error(ErrorKind::InvalidDistribution, "need at least 2 classes");
    PredictionRecord r;
    r.backend_id = std::move(backend_id);
    r.example_id = std::move(example_id);
    const std::size_t k = probs.size();
    r.probs = normalize_distribution(std::move(probs), k);
    r.predicted = argmax(r.probs);
    r.confidence = r.probs[r.predicted];
    return r;
}

std::string to_wire_row(const PredictionRecord& rec) {
    json j = {{"backend_id", rec.backend_id}, {"example_id", rec.example_id}, {"probs", rec.probs}};
    return j.dump();
}

PredictionRecord parse_wire_row(std::string_view line, std::size_t k) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::SchemaError, std::string("prediction row is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::SchemaError, "prediction row is not an object");
    auto id = j.find("example_id");
    auto probs = j.find("probs");
    if (id == j.end() || !id->is_string()) throw Error(ErrorKind::SchemaError, "prediction row lacks string 'example_id'");
    if (probs == j.end() || !probs->is_array()) throw Error(ErrorKind::SchemaError, "prediction row lacks array 'probs'");
    std::vector<double> p;
    p.reserve(probs->size());
    for (const auto& v : *probs) {
        if (!v.is_number()) throw Error(ErrorKind::SchemaError, "non-numeric probability in row");
        p.push_back(v.get<double>());
    }
    std::string backend;
    if (auto b = j.find("backend_id"); b != j.end()) {
        if (!b->is_string()) throw Error(ErrorKind::SchemaError, "'backend_id' must be a string");
        backend = b->get<std::string>();
    }
    if (p.size() != k) {
        throw Error(ErrorKind::SchemaError, "row for '" + id->get<std::string>() + "' has " + std::to_string(p.size()) +
                                                " probabilities, expected " + std::to_string(k));
    }
    return PredictionRecord::from_probs(std::move(backend), id->get<std::string>(), std::move(p));
}

// ---------------------------------------------------------------------------

OfflineBackend::OfflineBackend(BackendDescriptor desc, const LabelSpace& labels) : Backend(std::move(desc)) {
    const auto& cfg = std::get<OfflineConfig>(desc_.config);
    std::ifstream in(cfg.predictions);
    if (!in) throw Error(ErrorKind::Io, "cannot open predictions file " + cfg.predictions.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        PredictionRecord rec;
        try {
            rec = parse_wire_row(line, labels.size());
        } catch (const Error& e) {
            throw Error(e.kind(), cfg.predictions.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (rec.backend_id.empty()) {
            throw Error(ErrorKind::SchemaError, cfg.predictions.string() + ":" + std::to_string(lineno) + ": missing backend_id");
        }
        if (rec.backend_id != desc_.id) continue;
        auto key = rec.example_id;
        if (!rows_.emplace(std::move(key), std::move(rec)).second) {
            throw Error(ErrorKind::SchemaError, cfg.predictions.string() + ":" + std::to_string(lineno) +
                                                    ": duplicate prediction for example");
        }
    }
    if (rows_.empty()) {
        throw Error(ErrorKind::SchemaError, cfg.predictions.string() + " has no rows for backend '" + desc_.id + "'");
    }
}

PredictionRecord OfflineBackend::predict(const LabeledExample& example) const {
    auto it = rows_.find(example.id);
    if (it == rows_.end()) {
        throw Error(ErrorKind::MissingPrediction, "backend '" + desc_.id + "' has no prediction for '" + example.id + "'");
    }
    return it->second;
}

// ---------------------------------------------------------------------------

PredictionRecord synthetic_predict(std::string_view backend_id, const SyntheticProfile& profile,
                                   const LabeledExample& example, std::size_t num_classes, std::uint64_t seed) {
    if (!example.region) {
        throw Error(ErrorKind::MissingRegionTag, "example '" + example.id + "' carries no region tag");
    }
    const CounterRng rng(seed);
    const std::string stream(backend_id);
    const bool covered = profile.covered_regions.contains(*example.region);
    const double accuracy = covered ? profile.in_region_accuracy : profile.out_region_accuracy;
    const bool correct = rng.uniform(stream + "/correct", example.id) < accuracy;

    LabelIndex predicted = example.gold;
    if (!correct) {
        auto offset = static_cast<LabelIndex>(rng.uniform(stream + "/wrong", example.id) * double(num_classes - 1));
        offset = std::min<LabelIndex>(offset, num_classes - 2);
        predicted = offset < example.gold ? offset : offset + 1;
    }

    std::vector<double> logits(num_classes);
    double max_noise = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        logits[c] = rng.uniform(stream + "/noise", example.id, c);
        if (c != predicted) max_noise = std::max(max_noise, logits[c]);
    }
    // Peak strength scales with accuracy so that covered regions yield higher
    // confidence; misses are damped so confidence carries correctness signal.
    const double strength = rng.uniform(stream + "/strength", example.id);
    logits[predicted] =
        max_noise + 0.05 + profile.sharpness * accuracy * (correct ? 1.0 : 0.6) * (0.75 + 0.5 * strength);

    return PredictionRecord::from_probs(stream, example.id, softmax(logits));
}

SyntheticBackend::SyntheticBackend(BackendDescriptor desc, std::size_t num_classes)
    : Backend(std::move(desc)), k_(num_classes) {
    std::get<SyntheticConfig>(desc_.config).profile.validate();
}

PredictionRecord SyntheticBackend::predict(const LabeledExample& example) const {
    const auto& cfg = std::get<SyntheticConfig>(desc_.config);
    return synthetic_predict(desc_.id, cfg.profile, example, k_, cfg.seed);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Backend> make_backend(BackendDescriptor desc, const LabelSpace& labels) {
    switch (desc.kind()) {
        case BackendKind::Offline: return std::make_unique<OfflineBackend>(std::move(desc), labels);
        case BackendKind::Synthetic: return std::make_unique<SyntheticBackend>(std::move(desc), labels.size());
        case BackendKind::Http: return std::make_unique<HttpBackend>(std::move(desc), labels);
        case BackendKind::Subprocess: return std::make_unique<SubprocessBackend>(std::move(desc), labels.size());
    }
    throw Error(ErrorKind::InvalidConfig, "unsupported backend kind");
}

Backend& Registry::add(std::unique_ptr<Backend> backend) {
    if (contains(backend->id())) throw Error(ErrorKind::DuplicateBackend, "backend '" + backend->id() + "' already registered");
    backends_.push_back(std::move(backend));
    return *backends_.back();
}

const Backend& Registry::get(std::string_view id) const {
    for (const auto& b : backends_) {
        if (b->id() == id) return *b;
    }
    throw Error(ErrorKind::UnknownBackend, "no backend registered as '" + std::string(id) + "'");
}

bool Registry::contains(std::string_view id) const {
    return std::any_of(backends_.begin(), backends_.end(), [&](const auto& b) { return b->id() == id; });
}

std::vector<std::string> Registry::ids(std::optional<Layer> layer) const {
    std::vector<std::string> out;
    for (const auto& b : backends_) {
        if (!layer || b->descriptor().layer == *layer) out.push_back(b->id());
    }
    return out;
}

std::size_t Registry::registration_index(std::string_view id) const {
    for (std::size_t i = 0; i < backends_.size(); ++i) {
        if (backends_[i]->id() == id) return i;
    }
    throw Error(ErrorKind::UnknownBackend, "no backend registered as '" + std::string(id) + "'");
}

std::map<std::string, CostProfile, std::less<>> Registry::cost_profiles() const {
    std::map<std::string, CostProfile, std::less<>> out;
    for (const auto& b : backends_) out.emplace(b->id(), b->descriptor().cost);
    return out;
}

}  // namespace cascade
