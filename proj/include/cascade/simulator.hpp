#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/backends.hpp"
#include "cascade/dataset.hpp"
#include "cascade/parallel.hpp"

namespace cascade {

/// Latent region of the input space: sampling mass and class prior.
struct RegionSpec {
    int id = 0;
    double mass = 0.0;
    std::vector<double> class_prior;
};

struct ModelSpec {
    std::string name;
    Layer layer = Layer::Specific;
    SyntheticProfile profile;
    CostProfile cost;
};

struct WorldConfig {
    std::string name;
    std::vector<std::string> labels;
    std::vector<RegionSpec> regions;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::vector<ModelSpec> models;
    std::uint64_t seed = 0;

    /// Throws InvalidConfig on mass/prior violations or dangling region ids.
    void validate() const;

    std::string to_toml() const;
    static WorldConfig from_toml(std::string_view text);
};

/// True when every large model's coverage strictly contains every SSM's.
bool large_covers_each_ssm(const WorldConfig& config);

struct World {
    WorldConfig config;
    DatasetBundle bundle;
    std::vector<BackendDescriptor> backends;  ///< synthetic, config order

    Registry registry() const;
};

/// Samples every split example-by-example with counter-based draws keyed by
/// (seed, example id), so the serial and parallel paths agree exactly.
World generate_world(const WorldConfig& config, const ExecOptions& exec = {});

/// Shipped presets: "table3like" and "table6like".
WorldConfig preset_world(std::string_view name, std::uint64_t seed);
std::vector<std::string> preset_names();

/// Offline predictions of `backend` over every split, one wire row per line.
std::string emit_predictions(const Backend& backend, const DatasetBundle& bundle, const ExecOptions& exec = {});

}  // namespace cascade
