#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"
#include "cascade/parallel.hpp"
#include "cascade/plan.hpp"

namespace cascade {

using IdSet = std::set<std::string>;
using LabelMap = std::map<std::string, LabelIndex, std::less<>>;

enum class LmScope {
    SsmErrors,  ///< LM evaluated lazily, only where the Specific Layer erred
    Full,       ///< LM evaluated on the whole train split
};

/// Fitted / underfitted split of the training data.
struct PartitionResult {
    IdSet underfitted_ids;
    IdSet fitted_ids;
    IdSet ssm_error_ids;
    IdSet lm_error_ids;
    LmScope lm_scope = LmScope::SsmErrors;

    /// Canonical hash over all four sets and the scope.
    std::string hash() const;
    std::string to_json() const;
    static PartitionResult from_json(std::string_view text);
};

/// Examples whose Specific Layer label differs from gold.
IdSet routed_ssm_errors(const LabelMap& ssm_layer_labels, const DatasetBundle& bundle, std::string_view split = kTrain);

/// Examples every individual SSM gets wrong (the conjunctive reading).
IdSet conjunctive_ssm_errors(std::span<const LabelMap> per_ssm_labels, const DatasetBundle& bundle,
                             std::string_view split = kTrain);

/// Splits the train set given the SSM error set. LM labels are consulted only
/// for ids in `ssm_error_ids`; entries elsewhere are ignored.
PartitionResult partition_from_errors(const IdSet& ssm_error_ids, const LabelMap& lm_labels, const DatasetBundle& bundle,
                                      std::string_view split = kTrain);

PartitionResult partition_training_data(const LabelMap& ssm_layer_labels, const LabelMap& lm_labels,
                                        const DatasetBundle& bundle, std::string_view split = kTrain);

/// All train ids the LM gets wrong (the EA(Full) selection).
IdSet partition_full(const LabelMap& lm_labels, const DatasetBundle& bundle, std::string_view split = kTrain);

/// Widens a lazily computed partition with the full LM error set.
PartitionResult with_full_lm_errors(PartitionResult partition, IdSet full_lm_error_ids);

/// Specific Layer output with the LM removed: the first accepting stage, or
/// the last stage when none accepts.
LabelMap specific_layer_labels(const CascadePlan& plan, const Registry& registry, std::span<const LabeledExample> examples,
                               const ExecOptions& exec = {});

/// Predicted labels of one backend on the given examples.
LabelMap backend_labels(const Backend& backend, std::span<const LabeledExample> examples, const ExecOptions& exec = {});

// ---------------------------------------------------------------------------
// Training manifests

enum class ManifestVariant { Ea, EaFull };

std::string_view to_string(ManifestVariant v) noexcept;
ManifestVariant parse_manifest_variant(std::string_view s);

struct ManifestHeader {
    std::string task;
    ManifestVariant variant = ManifestVariant::Ea;
    std::vector<std::string> label_space;
    std::string partition_hash;
    std::string plan_hash;
};

struct ManifestRow {
    std::string id;
    std::string payload;
    std::string label;
};

struct TrainingManifest {
    ManifestHeader header;
    std::vector<ManifestRow> rows;  ///< ascending id

    /// Manifest text: one header JSON line, then one row per example.
    std::string serialize() const;
    std::string header_line() const;
    /// Provenance hash a trained model must present: SHA-256 of the header line.
    std::string provenance_hash() const;
};

TrainingManifest build_training_manifest(const PartitionResult& partition, const DatasetBundle& bundle,
                                         ManifestVariant variant, std::string task, std::string plan_hash,
                                         std::string_view split = kTrain);

struct ExportResult {
    TrainingManifest manifest;
    bool empty_warning = false;
};

/// Writes the manifest (even when empty; an empty manifest is a warning).
ExportResult export_training_manifest(const PartitionResult& partition, const DatasetBundle& bundle,
                                      ManifestVariant variant, std::string task, std::string plan_hash,
                                      const std::filesystem::path& path);

TrainingManifest load_manifest(const std::filesystem::path& path);

/// Validates an ASSM against the manifest it claims to come from and returns
/// its descriptor with layer = augmented. Offline predictions are checked row
/// by row against the wire schema.
BackendDescriptor register_augmented_model(BackendDescriptor desc, const std::string& provenance_hash,
                                           std::span<const TrainingManifest> known_manifests, const LabelSpace& labels);

}  // namespace cascade
