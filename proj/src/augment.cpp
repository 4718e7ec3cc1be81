#include "cascade/augment.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cascade/error.hpp"
#include "cascade/router.hpp"
#include "cascade/util.hpp"

namespace cascade {

using nlohmann::json;

namespace {

std::string join_some(const std::vector<std::string>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < 5; ++i) out += (i ? ", " : "") + ids[i];
    if (ids.size() > 5) out += ", ... (" + std::to_string(ids.size()) + " total)";
    return out;
}

void check_label(LabelIndex l, const DatasetBundle& bundle, const std::string& id) {
    if (l >= bundle.label_space.size()) {
        throw Error(ErrorKind::InconsistentLabelSpace,
                    "label index " + std::to_string(l) + " for '" + id + "' exceeds the label space");
    }
}

json ids_json(const IdSet& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

}  // namespace

std::string PartitionResult::to_json() const {
    json j = {{"underfitted_ids", ids_json(underfitted_ids)},
              {"fitted_ids", ids_json(fitted_ids)},
              {"ssm_error_ids", ids_json(ssm_error_ids)},
              {"lm_error_ids", ids_json(lm_error_ids)},
              {"lm_scope", lm_scope == LmScope::Full ? "full" : "ssm_errors"}};
    return j.dump();
}

std::string PartitionResult::hash() const { return sha256_hex(to_json()); }

PartitionResult PartitionResult::from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        PartitionResult p;
        auto read = [&](const char* key) {
            auto v = j.at(key).get<std::vector<std::string>>();
            return IdSet(v.begin(), v.end());
        };
        p.underfitted_ids = read("underfitted_ids");
        p.fitted_ids = read("fitted_ids");
        p.ssm_error_ids = read("ssm_error_ids");
        p.lm_error_ids = read("lm_error_ids");
        p.lm_scope = j.at("lm_scope").get<std::string>() == "full" ? LmScope::Full : LmScope::SsmErrors;
        return p;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("malformed partition file: ") + e.what());
    }
}

IdSet routed_ssm_errors(const LabelMap& ssm_layer_labels, const DatasetBundle& bundle, std::string_view split) {
    IdSet errors;
    std::vector<std::string> missing;
    for (const auto& ex : bundle.split(split)) {
        auto it = ssm_layer_labels.find(ex.id);
        if (it == ssm_layer_labels.end()) {
            missing.push_back(ex.id);
            continue;
        }
        check_label(it->second, bundle, ex.id);
        if (it->second != ex.gold) errors.insert(ex.id);
    }
    if (!missing.empty()) throw Error(ErrorKind::MissingPrediction, "no Specific Layer label for " + join_some(missing));
    return errors;
}

IdSet conjunctive_ssm_errors(std::span<const LabelMap> per_ssm_labels, const DatasetBundle& bundle, std::string_view split) {
    if (per_ssm_labels.empty()) throw Error(ErrorKind::InvalidConfig, "conjunctive partition needs at least one SSM");
    IdSet errors;
    for (const auto& ex : bundle.split(split)) {
        bool all_wrong = true;
        for (const auto& labels : per_ssm_labels) {
            auto it = labels.find(ex.id);
            if (it == labels.end()) throw Error(ErrorKind::MissingPrediction, "no SSM label for " + ex.id);
            check_label(it->second, bundle, ex.id);
            all_wrong = all_wrong && it->second != ex.gold;
        }
        if (all_wrong) errors.insert(ex.id);
    }
    return errors;
}

PartitionResult partition_from_errors(const IdSet& ssm_error_ids, const LabelMap& lm_labels, const DatasetBundle& bundle,
                                      std::string_view split) {
    const auto& examples = bundle.split(split);
    PartitionResult p;
    p.ssm_error_ids = ssm_error_ids;
    std::vector<std::string> missing;
    std::size_t matched = 0;
    for (const auto& ex : examples) {
        if (!ssm_error_ids.contains(ex.id)) {
            p.fitted_ids.insert(ex.id);
            continue;
        }
        ++matched;
        auto it = lm_labels.find(ex.id);
        if (it == lm_labels.end()) {
            missing.push_back(ex.id);
            continue;
        }
        check_label(it->second, bundle, ex.id);
        if (it->second != ex.gold) {
            p.lm_error_ids.insert(ex.id);
            p.underfitted_ids.insert(ex.id);
        } else {
            p.fitted_ids.insert(ex.id);
        }
    }
    if (matched != ssm_error_ids.size()) {
        throw Error(ErrorKind::MissingPrediction, "SSM error set names ids outside the " + std::string(split) + " split");
    }
    if (!missing.empty()) throw Error(ErrorKind::MissingPrediction, "no LM label for " + join_some(missing));
    return p;
}

PartitionResult partition_training_data(const LabelMap& ssm_layer_labels, const LabelMap& lm_labels,
                                        const DatasetBundle& bundle, std::string_view split) {
    return partition_from_errors(routed_ssm_errors(ssm_layer_labels, bundle, split), lm_labels, bundle, split);
}

IdSet partition_full(const LabelMap& lm_labels, const DatasetBundle& bundle, std::string_view split) {
    IdSet errors;
    std::vector<std::string> missing;
    for (const auto& ex : bundle.split(split)) {
        auto it = lm_labels.find(ex.id);
        if (it == lm_labels.end()) {
            missing.push_back(ex.id);
            continue;
        }
        check_label(it->second, bundle, ex.id);
        if (it->second != ex.gold) errors.insert(ex.id);
    }
    if (!missing.empty()) throw Error(ErrorKind::MissingPrediction, "no LM label for " + join_some(missing));
    return errors;
}

PartitionResult with_full_lm_errors(PartitionResult partition, IdSet full_lm_error_ids) {
    IdSet underfitted;
    std::set_intersection(partition.ssm_error_ids.begin(), partition.ssm_error_ids.end(), full_lm_error_ids.begin(),
                          full_lm_error_ids.end(), std::inserter(underfitted, underfitted.end()));
    if (underfitted != partition.underfitted_ids) {
        throw Error(ErrorKind::InconsistentLabelSpace, "full LM errors disagree with the lazily evaluated LM labels");
    }
    partition.lm_error_ids = std::move(full_lm_error_ids);
    partition.lm_scope = LmScope::Full;
    return partition;
}

LabelMap specific_layer_labels(const CascadePlan& plan, const Registry& registry, std::span<const LabeledExample> examples,
                               const ExecOptions& exec) {
    if (plan.stages.empty()) throw Error(ErrorKind::InvalidPlan, "plan has no Specific Layer stages");
    // LM removed: the last SSM becomes the unconditional terminal.
    CascadePlan layer;
    layer.stages.assign(plan.stages.begin(), plan.stages.end() - 1);
    layer.terminal_id = plan.stages.back().backend_id;
    std::vector<LabelIndex> labels(examples.size());
    rethrow_first(for_each_index(examples.size(), exec, [&](std::size_t i) {
        const auto& ex = examples[i];
        labels[i] = route_with(layer, true, ex.id, [&](const std::string& id) { return registry.get(id).predict(ex); })
                        .final_label;
    }));
    LabelMap out;
    for (std::size_t i = 0; i < examples.size(); ++i) out.emplace(examples[i].id, labels[i]);
    return out;
}

LabelMap backend_labels(const Backend& backend, std::span<const LabeledExample> examples, const ExecOptions& exec) {
    std::vector<LabelIndex> labels(examples.size());
    rethrow_first(for_each_index(examples.size(), exec, [&](std::size_t i) { labels[i] = backend.predict(examples[i]).predicted; }));
    LabelMap out;
    for (std::size_t i = 0; i < examples.size(); ++i) out.emplace(examples[i].id, labels[i]);
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ManifestVariant v) noexcept { return v == ManifestVariant::Ea ? "ea" : "ea_full"; }

ManifestVariant parse_manifest_variant(std::string_view s) {
    if (s == "ea") return ManifestVariant::Ea;
    if (s == "ea_full") return ManifestVariant::EaFull;
    throw Error(ErrorKind::InvalidConfig, "unknown manifest variant '" + std::string(s) + "' (expected ea or ea_full)");
}

std::string TrainingManifest::header_line() const {
    json h = {{"task", header.task},
              {"variant", to_string(header.variant)},
              {"label_space", header.label_space},
              {"partition_hash", header.partition_hash},
              {"plan_hash", header.plan_hash}};
    return h.dump();
}

std::string TrainingManifest::serialize() const {
    std::string out = header_line() + "\n";
    for (const auto& r : rows) out += json{{"id", r.id}, {"payload", r.payload}, {"label", r.label}}.dump() + "\n";
    return out;
}

std::string TrainingManifest::provenance_hash() const { return sha256_hex(header_line()); }

TrainingManifest build_training_manifest(const PartitionResult& partition, const DatasetBundle& bundle,
                                         ManifestVariant variant, std::string task, std::string plan_hash,
                                         std::string_view split) {
    if (variant == ManifestVariant::EaFull && partition.lm_scope != LmScope::Full) {
        throw Error(ErrorKind::IncompleteLmCoverage,
                    "ea_full needs LM errors over the whole train split; rerun partition with full LM evaluation");
    }
    const IdSet& ids = variant == ManifestVariant::Ea ? partition.underfitted_ids : partition.lm_error_ids;
    TrainingManifest m;
    m.header = ManifestHeader{std::move(task), variant, bundle.label_space.labels(), partition.hash(), std::move(plan_hash)};
    std::map<std::string_view, const LabeledExample*> by_id;
    for (const auto& ex : bundle.split(split)) by_id.emplace(ex.id, &ex);
    for (const auto& id : ids) {  // IdSet iterates in ascending id order
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error(ErrorKind::MissingPrediction, "partition id '" + id + "' not in the bundle");
        m.rows.push_back(ManifestRow{id, it->second->payload, bundle.label_space.label(it->second->gold)});
    }
    return m;
}

ExportResult export_training_manifest(const PartitionResult& partition, const DatasetBundle& bundle,
                                      ManifestVariant variant, std::string task, std::string plan_hash,
                                      const std::filesystem::path& path) {
    ExportResult r{build_training_manifest(partition, bundle, variant, std::move(task), std::move(plan_hash)), false};
    r.empty_warning = r.manifest.rows.empty();
    write_file(path, r.manifest.serialize());
    return r;
}

TrainingManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + path.string());
    TrainingManifest m;
    std::string line;
    try {
        if (!std::getline(in, line)) throw Error(ErrorKind::SchemaError, "manifest " + path.string() + " is empty");
        const json h = json::parse(line);
        m.header.task = h.at("task").get<std::string>();
        m.header.variant = parse_manifest_variant(h.at("variant").get<std::string>());
        m.header.label_space = h.at("label_space").get<std::vector<std::string>>();
        m.header.partition_hash = h.at("partition_hash").get<std::string>();
        m.header.plan_hash = h.at("plan_hash").get<std::string>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json r = json::parse(line);
            m.rows.push_back(ManifestRow{r.at("id").get<std::string>(), r.at("payload").get<std::string>(),
                                         r.at("label").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, "malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

BackendDescriptor register_augmented_model(BackendDescriptor desc, const std::string& provenance_hash,
                                           std::span<const TrainingManifest> known_manifests, const LabelSpace& labels) {
    auto it = std::find_if(known_manifests.begin(), known_manifests.end(),
                           [&](const TrainingManifest& m) { return m.provenance_hash() == provenance_hash; });
    if (it == known_manifests.end()) {
        throw Error(ErrorKind::ProvenanceMismatch,
                    "backend '" + desc.id + "' provenance " + provenance_hash + " matches no known manifest");
    }
    if (it->header.label_space != labels.labels()) {
        throw Error(ErrorKind::InconsistentLabelSpace, "manifest label space differs from the dataset's");
    }
    if (const auto* offline = std::get_if<OfflineConfig>(&desc.config)) {
        std::ifstream in(offline->predictions);
        if (!in) throw Error(ErrorKind::Io, "cannot open predictions " + offline->predictions.string());
        std::string line;
        int lineno = 0;
        std::size_t rows = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                auto rec = parse_wire_row(line, labels.size());
                if (rec.backend_id != desc.id) continue;
                ++rows;
            } catch (const Error& e) {
                throw Error(ErrorKind::SchemaError,
                            offline->predictions.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        if (rows == 0) throw Error(ErrorKind::SchemaError, "predictions hold no rows for '" + desc.id + "'");
    }
    desc.layer = Layer::Augmented;
    desc.provenance = provenance_hash;
    return desc;
}

}  // namespace cascade
