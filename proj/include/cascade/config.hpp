#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"

namespace cascade {

enum class PartitionMode {
    Routed,       ///< Specific Layer output (first accepting SSM, else the last)
    Conjunctive,  ///< every SSM individually wrong
};

/// Backend entry as written in the config, before registry construction.
struct BackendEntry {
    BackendDescriptor descriptor;
    /// Manifest an augmented backend claims to come from.
    std::optional<std::filesystem::path> manifest;
};

/// Strictly parsed run configuration. Relative paths are resolved against the
/// config file's directory.
struct RunConfig {
    std::filesystem::path base_dir;
    std::string task = "task";

    std::filesystem::path dataset_dir;
    DatasetSchema schema = DatasetSchema::standard();

    std::optional<SliceBoundaries> slices;
    std::vector<BackendEntry> backends;
    std::optional<std::filesystem::path> plan_file;

    std::vector<double> grid;
    std::optional<double> lm_budget;

    std::filesystem::path cache_dir;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    double tau = 0.8;
    int jobs = 0;
    PartitionMode partition_mode = PartitionMode::Routed;

    static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    DatasetBundle load_bundle() const;

    /// Builds every backend. Augmented entries are checked against their
    /// manifest's provenance hash before registration.
    Registry build_registry(const DatasetBundle& bundle) const;
};

/// Default calibration grid {0.0, 0.1, ..., 1.0}.
std::vector<double> default_grid();

}  // namespace cascade
