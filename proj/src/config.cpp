#include "cascade/config.hpp"

#include <cstdlib>

#include "cascade/augment.hpp"
#include "cascade/error.hpp"
#include "cascade/util.hpp"
#include "toml_util.hpp"

namespace cascade {

namespace fs = std::filesystem;

std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

CostProfile parse_cost(const toml::table& t) {
    tomlu::check_keys(t, {"latency_ms_per_call", "memory_mb", "dollars_per_1k_calls"}, "backend.cost");
    CostProfile c;
    c.latency_ms_per_call = tomlu::opt_number(t, "latency_ms_per_call", "backend.cost").value_or(0.0);
    c.memory_mb = tomlu::opt_number(t, "memory_mb", "backend.cost").value_or(0.0);
    c.dollars_per_1k_calls = tomlu::opt_number(t, "dollars_per_1k_calls", "backend.cost").value_or(0.0);
    return c;
}

BackendEntry parse_backend(const toml::table& t, const fs::path& base, const fs::path& cache_dir) {
    constexpr std::string_view where = "backend";
    const auto kind = parse_backend_kind(tomlu::req_string(t, "kind", where));
    BackendEntry entry;
    auto& d = entry.descriptor;
    d.id = tomlu::req_string(t, "id", where);
    d.layer = parse_layer(tomlu::opt_string(t, "layer", where).value_or("specific"));
    if (t.contains("cost")) d.cost = parse_cost(tomlu::table_at(t, "cost", where));
    d.provenance = tomlu::opt_string(t, "provenance", where);
    if (auto m = tomlu::opt_string(t, "manifest", where)) entry.manifest = resolve(base, *m);

    switch (kind) {
        case BackendKind::Offline: {
            tomlu::check_keys(t, {"id", "kind", "layer", "cost", "provenance", "manifest", "predictions"}, where);
            d.config = OfflineConfig{resolve(base, tomlu::req_string(t, "predictions", where))};
            break;
        }
        case BackendKind::Subprocess: {
            tomlu::check_keys(t, {"id", "kind", "layer", "cost", "provenance", "manifest", "command"}, where);
            auto cmd = tomlu::opt_array<std::string>(t, "command", where);
            if (!cmd || cmd->empty()) throw Error(ErrorKind::InvalidConfig, "subprocess backend '" + d.id + "' needs a command");
            d.config = SubprocessConfig{std::move(*cmd)};
            break;
        }
        case BackendKind::Synthetic: {
            tomlu::check_keys(t, {"id", "kind", "layer", "cost", "provenance", "manifest", "covered_regions",
                                  "in_region_accuracy", "out_region_accuracy", "sharpness", "seed"},
                              where);
            SyntheticConfig sc;
            for (auto r : tomlu::opt_array<long long>(t, "covered_regions", where).value_or(std::vector<long long>{})) {
                sc.profile.covered_regions.insert(static_cast<int>(r));
            }
            sc.profile.in_region_accuracy = tomlu::req_number(t, "in_region_accuracy", where);
            sc.profile.out_region_accuracy = tomlu::req_number(t, "out_region_accuracy", where);
            sc.profile.sharpness = tomlu::opt_number(t, "sharpness", where).value_or(4.0);
            sc.seed = static_cast<std::uint64_t>(tomlu::opt_int(t, "seed", where).value_or(0));
            sc.profile.validate();
            d.config = std::move(sc);
            break;
        }
        case BackendKind::Http: {
            tomlu::check_keys(t, {"id", "kind", "layer", "cost", "provenance", "manifest", "url", "model", "template",
                                  "template_file", "logprobs", "max_tokens", "max_in_flight", "attempts",
                                  "backoff_base_ms", "timeout_s", "api_key_env"},
                              where);
            HttpConfig hc;
            hc.url = tomlu::req_string(t, "url", where);
            hc.model = tomlu::req_string(t, "model", where);
            if (auto tf = tomlu::opt_string(t, "template_file", where)) {
                hc.prompt_template = read_file(resolve(base, *tf));
            } else {
                hc.prompt_template = tomlu::req_string(t, "template", where);
            }
            if (hc.prompt_template.find("{input}") == std::string::npos ||
                hc.prompt_template.find("{labels}") == std::string::npos) {
                throw Error(ErrorKind::InvalidConfig, "prompt template of '" + d.id + "' needs {input} and {labels}");
            }
            hc.logprobs = tomlu::opt_bool(t, "logprobs", where).value_or(false);
            hc.max_tokens = static_cast<int>(tomlu::opt_int(t, "max_tokens", where).value_or(hc.max_tokens));
            hc.max_in_flight = static_cast<int>(tomlu::opt_int(t, "max_in_flight", where).value_or(hc.max_in_flight));
            hc.attempts = static_cast<int>(tomlu::opt_int(t, "attempts", where).value_or(hc.attempts));
            hc.backoff_base_ms = static_cast<int>(tomlu::opt_int(t, "backoff_base_ms", where).value_or(hc.backoff_base_ms));
            hc.timeout_s = static_cast<int>(tomlu::opt_int(t, "timeout_s", where).value_or(hc.timeout_s));
            hc.api_key_env = tomlu::opt_string(t, "api_key_env", where).value_or(hc.api_key_env);
            hc.cache_dir = cache_dir;
            d.opaque_confidence = !hc.logprobs;
            d.config = std::move(hc);
            break;
        }
    }
    return entry;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const fs::path& base_dir) {
    const auto root = tomlu::parse(text, "config");
    tomlu::check_keys(root, {"task", "dataset", "slices", "run", "calibration", "plan", "backend"}, "config");
    RunConfig c;
    c.base_dir = base_dir;
    c.task = tomlu::opt_string(root, "task", "config").value_or("task");

    if (!root.contains("dataset")) throw Error(ErrorKind::InvalidConfig, "config needs a [dataset] table");
    const auto& ds = tomlu::table_at(root, "dataset", "config");
    tomlu::check_keys(ds, {"dir", "labels", "train", "val", "test"}, "dataset");
    c.dataset_dir = resolve(base_dir, tomlu::opt_string(ds, "dir", "dataset").value_or("."));
    c.schema.label_file = tomlu::opt_string(ds, "labels", "dataset").value_or("labels.txt");
    c.schema.split_files = {{"train", tomlu::opt_string(ds, "train", "dataset").value_or("train.jsonl")},
                            {"val", tomlu::opt_string(ds, "val", "dataset").value_or("val.jsonl")},
                            {"test", tomlu::opt_string(ds, "test", "dataset").value_or("test.jsonl")}};

    if (root.contains("slices")) {
        const auto& s = tomlu::table_at(root, "slices", "config");
        tomlu::check_keys(s, {"t_head", "t_tail"}, "slices");
        const auto head = tomlu::opt_int(s, "t_head", "slices");
        const auto tail = tomlu::opt_int(s, "t_tail", "slices");
        if (!head || !tail || *tail < 0 || *head <= *tail) {
            throw Error(ErrorKind::InvalidConfig, "[slices] needs integers t_head > t_tail >= 0");
        }
        c.slices = SliceBoundaries{static_cast<std::size_t>(*head), static_cast<std::size_t>(*tail)};
    }

    c.output_dir = resolve(base_dir, "out");
    if (const char* env = std::getenv("EA_CACHE_DIR"); env && *env) {
        c.cache_dir = fs::path(env);
    } else {
        c.cache_dir = resolve(base_dir, "cache");
    }
    if (root.contains("run")) {
        const auto& r = tomlu::table_at(root, "run", "config");
        tomlu::check_keys(r, {"cache_dir", "output_dir", "seed", "tau", "jobs", "partition_mode"}, "run");
        if (auto v = tomlu::opt_string(r, "cache_dir", "run")) c.cache_dir = resolve(base_dir, *v);
        if (auto v = tomlu::opt_string(r, "output_dir", "run")) c.output_dir = resolve(base_dir, *v);
        if (auto v = tomlu::opt_int(r, "seed", "run")) c.seed = static_cast<std::uint64_t>(*v);
        if (auto v = tomlu::opt_number(r, "tau", "run")) c.tau = *v;
        if (auto v = tomlu::opt_int(r, "jobs", "run")) c.jobs = static_cast<int>(*v);
        if (auto v = tomlu::opt_string(r, "partition_mode", "run")) {
            if (*v == "routed") {
                c.partition_mode = PartitionMode::Routed;
            } else if (*v == "conjunctive") {
                c.partition_mode = PartitionMode::Conjunctive;
            } else {
                throw Error(ErrorKind::InvalidConfig, "run.partition_mode must be 'routed' or 'conjunctive'");
            }
        }
    }
    if (!(c.tau >= 0.0 && c.tau <= 1.0)) throw Error(ErrorKind::InvalidConfig, "run.tau must lie in [0,1]");

    c.grid = default_grid();
    if (root.contains("calibration")) {
        const auto& cal = tomlu::table_at(root, "calibration", "config");
        tomlu::check_keys(cal, {"grid", "lm_budget"}, "calibration");
        if (auto g = tomlu::opt_array<double>(cal, "grid", "calibration")) c.grid = std::move(*g);
        c.lm_budget = tomlu::opt_number(cal, "lm_budget", "calibration");
    }

    if (root.contains("plan")) {
        const auto& p = tomlu::table_at(root, "plan", "config");
        tomlu::check_keys(p, {"file"}, "plan");
        if (auto f = tomlu::opt_string(p, "file", "plan")) c.plan_file = resolve(base_dir, *f);
    }

    for (const auto* t : tomlu::tables(root, "backend", "config")) c.backends.push_back(parse_backend(*t, base_dir, c.cache_dir));
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    const auto base = fs::absolute(path).parent_path();
    return parse(read_file(path), base);
}

DatasetBundle RunConfig::load_bundle() const { return load_dataset(dataset_dir, schema); }

Registry RunConfig::build_registry(const DatasetBundle& bundle) const {
    Registry reg;
    for (const auto& entry : backends) {
        BackendDescriptor desc = entry.descriptor;
        if (desc.layer == Layer::Augmented && (desc.provenance || entry.manifest)) {
            if (!desc.provenance || !entry.manifest) {
                throw Error(ErrorKind::InvalidConfig, "augmented backend '" + desc.id + "' needs both provenance and manifest");
            }
            const std::vector<TrainingManifest> known{load_manifest(*entry.manifest)};
            const std::string claimed = *desc.provenance;
            desc = register_augmented_model(std::move(desc), claimed, known, bundle.label_space);
        }
        reg.add(make_backend(std::move(desc), bundle.label_space));
    }
    return reg;
}

}  // namespace cascade
