#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cascade/dataset.hpp"

namespace cascade {

// ---------------------------------------------------------------------------
// Probability primitives

/// Max-subtracted softmax. Throws NonFiniteInput on NaN/inf entries.
std::vector<double> softmax(std::span<const double> logits);

/// Max entry of a probability vector. Throws InvalidDistribution when an
/// entry is negative or the sum deviates from 1 by more than 1e-6.
double confidence(std::span<const double> probs);

/// Lowest index among the maximal entries.
LabelIndex argmax(std::span<const double> probs);

/// Validates `probs` as a distribution over `k` classes and rescales it so the
/// sum is 1 to machine precision.
std::vector<double> normalize_distribution(std::vector<double> probs, std::size_t k);

// ---------------------------------------------------------------------------
// Descriptors and records

enum class BackendKind { Offline, Http, Subprocess, Synthetic };
enum class Layer { Specific, Large, Augmented };

std::string_view to_string(BackendKind k) noexcept;
std::string_view to_string(Layer l) noexcept;
BackendKind parse_backend_kind(std::string_view s);
Layer parse_layer(std::string_view s);

struct CostProfile {
    double latency_ms_per_call = 0.0;
    double memory_mb = 0.0;
    double dollars_per_1k_calls = 0.0;

    bool operator==(const CostProfile&) const = default;
};

struct SyntheticProfile {
    std::set<int> covered_regions;
    double in_region_accuracy = 1.0;
    double out_region_accuracy = 0.0;
    /// Logit scale of the predicted class; larger means more peaked outputs.
    double sharpness = 4.0;

    void validate() const;
    bool operator==(const SyntheticProfile&) const = default;
};

struct OfflineConfig {
    std::filesystem::path predictions;
};

struct HttpConfig {
    std::string url;  ///< full chat-completions URL, http:// or https://
    std::string model;
    std::string prompt_template;
    bool logprobs = false;
    int max_tokens = 16;
    int max_in_flight = 4;
    int attempts = 4;  ///< first try plus retries
    int backoff_base_ms = 1000;
    int timeout_s = 60;
    std::filesystem::path cache_dir;
    std::string api_key_env = "EA_API_KEY";
};

struct SubprocessConfig {
    std::vector<std::string> command;
};

struct SyntheticConfig {
    SyntheticProfile profile;
    std::uint64_t seed = 0;
};

using BackendConfig = std::variant<OfflineConfig, HttpConfig, SubprocessConfig, SyntheticConfig>;

struct BackendDescriptor {
    std::string id;
    Layer layer = Layer::Specific;
    BackendConfig config;
    CostProfile cost;
    /// Set for label-only backends whose confidence carries no information.
    bool opaque_confidence = false;
    /// For augmented backends: hash of the manifest the model was trained from.
    std::optional<std::string> provenance;

    BackendKind kind() const noexcept;
};

struct PredictionRecord {
    std::string backend_id;
    std::string example_id;
    std::vector<double> probs;
    double confidence = 0.0;
    LabelIndex predicted = 0;

    /// Builds a record from a probability vector, enforcing all invariants.
    static PredictionRecord from_probs(std::string backend_id, std::string example_id, std::vector<double> probs);

    bool operator==(const PredictionRecord&) const = default;
};

/// Offline predictions wire row: {"backend_id", "example_id", "probs"}.
std::string to_wire_row(const PredictionRecord& rec);
PredictionRecord parse_wire_row(std::string_view line, std::size_t k);

// ---------------------------------------------------------------------------
// Backends

class Backend {
public:
    explicit Backend(BackendDescriptor desc) : desc_(std::move(desc)) {}
    virtual ~Backend() = default;
    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    const BackendDescriptor& descriptor() const noexcept { return desc_; }
    const std::string& id() const noexcept { return desc_.id; }

    /// Thread-safe. Backends with bounded capacity throttle internally.
    virtual PredictionRecord predict(const LabeledExample& example) const = 0;

    /// Max concurrent predict() calls the backend sustains; 0 means unbounded.
    virtual int capacity() const noexcept { return 0; }

protected:
    BackendDescriptor desc_;
};

class OfflineBackend final : public Backend {
public:
    OfflineBackend(BackendDescriptor desc, const LabelSpace& labels);

    PredictionRecord predict(const LabeledExample& example) const override;
    std::size_t size() const noexcept { return rows_.size(); }

private:
    std::unordered_map<std::string, PredictionRecord> rows_;
};

class SyntheticBackend final : public Backend {
public:
    SyntheticBackend(BackendDescriptor desc, std::size_t num_classes);

    PredictionRecord predict(const LabeledExample& example) const override;

private:
    std::size_t k_;
};

/// Pure synthetic prediction: deterministic in (backend id, profile, example id, seed).
PredictionRecord synthetic_predict(std::string_view backend_id, const SyntheticProfile& profile,
                                   const LabeledExample& example, std::size_t num_classes, std::uint64_t seed);

class HttpBackend final : public Backend {
public:
    HttpBackend(BackendDescriptor desc, LabelSpace labels);
    ~HttpBackend() override;

    PredictionRecord predict(const LabeledExample& example) const override;
    int capacity() const noexcept override;

    /// Number of network round trips issued so far (cache hits excluded).
    std::uint64_t network_calls() const noexcept;

    std::string render_prompt(const LabeledExample& example) const;
    std::string cache_key(const std::string& prompt) const;

private:
    struct Impl;
    LabelSpace labels_;
    std::unique_ptr<Impl> impl_;
};

/// Parses a chat-completion response body into a record. Exposed for tests.
PredictionRecord parse_chat_response(std::string_view backend_id, std::string_view example_id,
                                     std::string_view body, const LabelSpace& labels);

/// First label occurring in `text`, case-insensitive, preferring the longest
/// label at the earliest position. Matches must sit on word boundaries.
std::optional<LabelIndex> match_label(std::string_view text, const LabelSpace& labels);

/// JSONL over stdin/stdout. Request: {"example_id", "payload"}; response: an
/// offline wire row. One process instance, calls serialized.
class SubprocessBackend final : public Backend {
public:
    SubprocessBackend(BackendDescriptor desc, std::size_t num_classes);
    ~SubprocessBackend() override;

    PredictionRecord predict(const LabeledExample& example) const override;
    int capacity() const noexcept override { return 1; }

private:
    struct Impl;
    std::size_t k_;
    std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Backend> make_backend(BackendDescriptor desc, const LabelSpace& labels);

// ---------------------------------------------------------------------------

/// Backends keyed by id, in registration order.
class Registry {
public:
    Backend& add(std::unique_ptr<Backend> backend);
    const Backend& get(std::string_view id) const;
    bool contains(std::string_view id) const;

    /// Ids in registration order, optionally filtered by layer.
    std::vector<std::string> ids(std::optional<Layer> layer = std::nullopt) const;
    std::size_t registration_index(std::string_view id) const;
    std::map<std::string, CostProfile, std::less<>> cost_profiles() const;

private:
    std::vector<std::unique_ptr<Backend>> backends_;
};

}  // namespace cascade
