#include "cascade/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "cascade/error.hpp"
#include "cascade/util.hpp"
#include "toml_util.hpp"

namespace cascade {

void WorldConfig::validate() const {
    auto fail = [&](const std::string& why) { throw Error(ErrorKind::InvalidConfig, "world '" + name + "': " + why); };
    if (labels.size() < 2) fail("needs at least 2 labels");
    if (regions.empty()) fail("needs at least one region");
    std::set<int> region_ids;
    double total = 0.0;
    for (const auto& r : regions) {
        if (!region_ids.insert(r.id).second) fail("duplicate region id " + std::to_string(r.id));
        if (!(r.mass >= 0.0)) fail("region mass must be non-negative");
        total += r.mass;
        if (r.class_prior.size() != labels.size()) fail("class_prior of region " + std::to_string(r.id) + " has wrong length");
        double prior_sum = 0.0;
        for (double p : r.class_prior) {
            if (!(p >= 0.0)) fail("negative class prior in region " + std::to_string(r.id));
            prior_sum += p;
        }
        if (std::abs(prior_sum - 1.0) > 1e-9) fail("class_prior of region " + std::to_string(r.id) + " does not sum to 1");
    }
    if (std::abs(total - 1.0) > 1e-9) fail("region masses sum to " + fmt::format("{}", total));
    std::set<std::string> names;
    bool has_large = false;
    for (const auto& m : models) {
        if (!names.insert(m.name).second) fail("duplicate model name '" + m.name + "'");
        m.profile.validate();
        for (int r : m.profile.covered_regions) {
            if (!region_ids.contains(r)) fail("model '" + m.name + "' covers unknown region " + std::to_string(r));
        }
        has_large = has_large || m.layer == Layer::Large;
    }
    if (!has_large) fail("needs at least one model with layer = large");
}

bool large_covers_each_ssm(const WorldConfig& config) {
    for (const auto& large : config.models) {
        if (large.layer != Layer::Large) continue;
        for (const auto& ssm : config.models) {
            if (ssm.layer != Layer::Specific) continue;
            const auto& big = large.profile.covered_regions;
            const auto& small = ssm.profile.covered_regions;
            const bool contains = std::includes(big.begin(), big.end(), small.begin(), small.end());
            if (!contains || big.size() <= small.size()) return false;
        }
    }
    return true;
}

std::string WorldConfig::to_toml() const {
    auto list = [](const auto& xs, auto fmt_one) {
        std::string out = "[";
        bool first = true;
        for (const auto& x : xs) {
            out += (first ? "" : ", ") + fmt_one(x);
            first = false;
        }
        return out + "]";
    };
    auto num = [](double v) { return fmt::format("{}", v); };
    std::string out;
    out += fmt::format("name = \"{}\"\nseed = {}\n", name, seed);
    out += "labels = " + list(labels, [](const std::string& s) { return "\"" + s + "\""; }) + "\n";
    out += fmt::format("n_train = {}\nn_val = {}\nn_test = {}\n", n_train, n_val, n_test);
    for (const auto& r : regions) {
        out += fmt::format("\n[[region]]\nid = {}\nmass = {}\n", r.id, num(r.mass));
        out += "class_prior = " + list(r.class_prior, num) + "\n";
    }
    for (const auto& m : models) {
        out += fmt::format("\n[[model]]\nname = \"{}\"\nlayer = \"{}\"\n", m.name, to_string(m.layer));
        out += "covered_regions = " + list(m.profile.covered_regions, [](int r) { return std::to_string(r); }) + "\n";
        out += fmt::format("in_region_accuracy = {}\nout_region_accuracy = {}\nsharpness = {}\n",
                           num(m.profile.in_region_accuracy), num(m.profile.out_region_accuracy), num(m.profile.sharpness));
        out += fmt::format("\n[model.cost]\nlatency_ms_per_call = {}\nmemory_mb = {}\ndollars_per_1k_calls = {}\n",
                           num(m.cost.latency_ms_per_call), num(m.cost.memory_mb), num(m.cost.dollars_per_1k_calls));
    }
    return out;
}

WorldConfig WorldConfig::from_toml(std::string_view text) {
    const auto root = tomlu::parse(text, "world");
    tomlu::check_keys(root, {"name", "seed", "labels", "n_train", "n_val", "n_test", "region", "model"}, "world");
    WorldConfig c;
    c.name = tomlu::opt_string(root, "name", "world").value_or("world");
    const auto seed = tomlu::opt_int(root, "seed", "world").value_or(0);
    if (seed < 0) throw Error(ErrorKind::InvalidConfig, "world.seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(seed);
    c.labels = tomlu::opt_array<std::string>(root, "labels", "world").value_or(std::vector<std::string>{});
    auto count = [&](std::string_view key) {
        const auto v = tomlu::opt_int(root, key, "world").value_or(0);
        if (v < 0) throw Error(ErrorKind::InvalidConfig, "world." + std::string(key) + " must be non-negative");
        return static_cast<std::size_t>(v);
    };
    c.n_train = count("n_train");
    c.n_val = count("n_val");
    c.n_test = count("n_test");
    for (const auto* t : tomlu::tables(root, "region", "world")) {
        tomlu::check_keys(*t, {"id", "mass", "class_prior"}, "region");
        RegionSpec r;
        r.id = static_cast<int>(tomlu::opt_int(*t, "id", "region").value_or(0));
        r.mass = tomlu::req_number(*t, "mass", "region");
        r.class_prior = tomlu::opt_array<double>(*t, "class_prior", "region").value_or(std::vector<double>{});
        c.regions.push_back(std::move(r));
    }
    for (const auto* t : tomlu::tables(root, "model", "world")) {
        tomlu::check_keys(*t,
                          {"name", "layer", "covered_regions", "in_region_accuracy", "out_region_accuracy", "sharpness", "cost"},
                          "model");
        ModelSpec m;
        m.name = tomlu::req_string(*t, "name", "model");
        m.layer = parse_layer(tomlu::req_string(*t, "layer", "model"));
        for (auto r : tomlu::opt_array<long long>(*t, "covered_regions", "model").value_or(std::vector<long long>{})) {
            m.profile.covered_regions.insert(static_cast<int>(r));
        }
        m.profile.in_region_accuracy = tomlu::req_number(*t, "in_region_accuracy", "model");
        m.profile.out_region_accuracy = tomlu::req_number(*t, "out_region_accuracy", "model");
        m.profile.sharpness = tomlu::opt_number(*t, "sharpness", "model").value_or(4.0);
        if (t->contains("cost")) {
            const auto& cost = tomlu::table_at(*t, "cost", "model");
            tomlu::check_keys(cost, {"latency_ms_per_call", "memory_mb", "dollars_per_1k_calls"}, "model.cost");
            m.cost.latency_ms_per_call = tomlu::opt_number(cost, "latency_ms_per_call", "model.cost").value_or(0.0);
            m.cost.memory_mb = tomlu::opt_number(cost, "memory_mb", "model.cost").value_or(0.0);
            m.cost.dollars_per_1k_calls = tomlu::opt_number(cost, "dollars_per_1k_calls", "model.cost").value_or(0.0);
        }
        c.models.push_back(std::move(m));
    }
    c.validate();
    return c;
}

Registry World::registry() const {
    Registry reg;
    for (const auto& d : backends) reg.add(make_backend(d, bundle.label_space));
    return reg;
}

namespace {

std::size_t pick(const CounterRng& rng, std::string_view stream, std::string_view key, const std::vector<double>& weights) {
    const double u = rng.uniform(stream, key);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    // u landed in the rounding slack above the cumulative sum: take the last
    // index with positive weight.
    for (std::size_t i = weights.size(); i-- > 0;) {
        if (weights[i] > 0.0) return i;
    }
    return weights.size() - 1;
}

std::vector<LabeledExample> sample_split(const WorldConfig& c, std::string_view split, std::size_t n, const ExecOptions& exec) {
    const CounterRng rng(c.seed);
    std::vector<double> masses;
    for (const auto& r : c.regions) masses.push_back(r.mass);
    const int width = std::max<int>(6, static_cast<int>(std::to_string(n).size()));
    std::vector<LabeledExample> out(n);
    rethrow_first(for_each_index(n, exec, [&](std::size_t i) {
        LabeledExample ex;
        ex.id = fmt::format("{}-{:0{}}", split, i, width);
        const auto& region = c.regions[pick(rng, "region", ex.id, masses)];
        ex.region = region.id;
        ex.gold = pick(rng, "label", ex.id, region.class_prior);
        ex.payload = fmt::format("sample {:016x}", rng.bits("payload", ex.id));
        out[i] = std::move(ex);
    }));
    return out;
}

}  // namespace

World generate_world(const WorldConfig& config, const ExecOptions& exec) {
    config.validate();
    World w;
    w.config = config;
    w.bundle.label_space = LabelSpace(config.labels);
    const std::pair<std::string_view, std::size_t> splits[] = {
        {kTrain, config.n_train}, {kVal, config.n_val}, {kTest, config.n_test}};
    for (const auto& [name, n] : splits) {
        if (n > 0) w.bundle.splits[std::string(name)] = sample_split(config, name, n, exec);
    }
    finalize_bundle(w.bundle, "simulator:" + config.name + ":seed=" + std::to_string(config.seed));
    for (const auto& m : config.models) {
        BackendDescriptor d;
        d.id = m.name;
        d.layer = m.layer;
        d.config = SyntheticConfig{m.profile, config.seed};
        d.cost = m.cost;
        w.backends.push_back(std::move(d));
    }
    return w;
}

std::string emit_predictions(const Backend& backend, const DatasetBundle& bundle, const ExecOptions& exec) {
    std::string out;
    for (const auto& [name, examples] : bundle.splits) {
        std::vector<std::string> rows(examples.size());
        rethrow_first(for_each_index(examples.size(), exec, [&](std::size_t i) {
            rows[i] = to_wire_row(backend.predict(examples[i]));
        }));
        for (const auto& r : rows) {
            out += r;
            out += '\n';
        }
    }
    return out;
}

std::vector<std::string> preset_names() { return {"table3like", "table6like"}; }

WorldConfig preset_world(std::string_view name, std::uint64_t seed) {
    WorldConfig c;
    c.seed = seed;
    if (name == "table3like") {
        // One broad dominant SSM, two narrower SSMs with small private regions,
        // and an LM region no SSM covers.
        c.name = "table3like";
        c.labels = {"entailment", "neutral", "contradiction"};
        c.n_train = 6000;
        c.n_val = 2000;
        c.n_test = 5000;
        const std::vector<double> flat{0.34, 0.33, 0.33};
        c.regions = {{0, 0.66, flat}, {1, 0.05, {0.4, 0.3, 0.3}}, {2, 0.03, {0.3, 0.3, 0.4}}, {3, 0.26, {0.3, 0.4, 0.3}}};
        c.models = {
            {"ssm_a", Layer::Specific, {{0}, 0.93, 0.45, 4.5}, {4.0, 480.0, 0.0}},
            {"ssm_b", Layer::Specific, {{1}, 0.90, 0.55, 4.0}, {3.0, 260.0, 0.0}},
            {"ssm_c", Layer::Specific, {{0, 2}, 0.86, 0.50, 4.0}, {3.5, 360.0, 0.0}},
            {"lm", Layer::Large, {{0, 1, 2, 3}, 0.88, 0.88, 3.0}, {350.0, 0.0, 0.6}},
            {"assm", Layer::Augmented, {{3}, 0.92, 0.40, 4.0}, {4.0, 300.0, 0.0}},
        };
    } else if (name == "table6like") {
        // Ten classes with a long-tailed prior. The LM underfits the head
        // region (its out-of-region rate); SSMs fit head and medium better.
        c.name = "table6like";
        c.labels = {"c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9"};
        c.n_train = 6000;
        c.n_val = 2000;
        c.n_test = 5000;
        c.regions = {{0, 0.60, {0.36, 0.33, 0.31, 0, 0, 0, 0, 0, 0, 0}},
                     {1, 0.28, {0, 0, 0, 0.28, 0.26, 0.24, 0.22, 0, 0, 0}},
                     {2, 0.12, {0, 0, 0, 0, 0, 0, 0, 0.36, 0.33, 0.31}}};
        c.models = {
            {"ssm_head", Layer::Specific, {{0}, 0.96, 0.30, 5.0}, {4.0, 90.0, 0.0}},
            {"ssm_medium", Layer::Specific, {{1}, 0.90, 0.30, 5.0}, {4.0, 90.0, 0.0}},
            {"lm", Layer::Large, {{1, 2}, 0.88, 0.80, 4.0}, {400.0, 0.0, 0.8}},
        };
    } else {
        throw Error(ErrorKind::InvalidConfig, "unknown preset '" + std::string(name) + "'");
    }
    c.validate();
    return c;
}

}  // namespace cascade
