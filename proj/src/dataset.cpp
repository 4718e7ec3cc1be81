#include "cascade/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cascade/error.hpp"
#include "cascade/util.hpp"

namespace cascade {

using nlohmann::json;

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) {
        throw Error(ErrorKind::InconsistentLabelSpace,
                    "label space needs at least 2 labels, got " + std::to_string(labels_.size()));
    }
    std::set<std::string_view> seen;
    for (const auto& l : labels_) {
        if (!seen.insert(l).second) throw Error(ErrorKind::InconsistentLabelSpace, "duplicate label '" + l + "'");
    }
}

std::optional<LabelIndex> LabelSpace::index_of(std::string_view name) const {
    auto it = std::find(labels_.begin(), labels_.end(), name);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<LabelIndex>(it - labels_.begin());
}

const std::vector<LabeledExample>& DatasetBundle::split(std::string_view name) const {
    auto it = splits.find(name);
    if (it == splits.end() || it->second.empty()) {
        throw Error(ErrorKind::EmptySplit, "split '" + std::string(name) + "' is missing or empty");
    }
    return it->second;
}

bool DatasetBundle::has_split(std::string_view name) const {
    auto it = splits.find(name);
    return it != splits.end() && !it->second.empty();
}

bool DatasetBundle::same_content(const DatasetBundle& other) const {
    return label_space == other.label_space && splits == other.splits;
}

DatasetSchema DatasetSchema::standard() {
    return DatasetSchema{"labels.txt",
                         {{"train", "train.jsonl"}, {"val", "val.jsonl"}, {"test", "test.jsonl"}}};
}

namespace {

struct RawRecord {
    std::string id;
    std::string payload;
    std::string label;
    std::optional<int> region;
};

std::vector<RawRecord> parse_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<RawRecord> out;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(lineno) + ": " + why, lineno);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) fail("record is not a JSON object");
        RawRecord r;
        for (const char* key : {"id", "payload", "label"}) {
            auto it = j.find(key);
            if (it == j.end()) fail(std::string("missing field '") + key + "'");
            if (!it->is_string()) fail(std::string("field '") + key + "' must be a string");
        }
        r.id = j["id"].get<std::string>();
        r.payload = j["payload"].get<std::string>();
        r.label = j["label"].get<std::string>();
        if (auto it = j.find("region"); it != j.end()) {
            if (!it->is_number_integer()) fail("field 'region' must be an integer");
            r.region = it->get<int>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> read_label_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open label file " + path.string());
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        labels.push_back(line);
    }
    return labels;
}

}  // namespace

std::string to_jsonl_record(const LabeledExample& ex, const LabelSpace& labels) {
    json j = {{"id", ex.id}, {"payload", ex.payload}, {"label", labels.label(ex.gold)}};
    if (ex.region) j["region"] = *ex.region;
    return j.dump();
}

std::string content_hash(const DatasetBundle& bundle) {
    std::string canon;
    for (const auto& l : bundle.label_space.labels()) {
        canon += l;
        canon += '\n';
    }
    for (const auto& [name, examples] : bundle.splits) {
        canon += "#split " + name + "\n";
        for (const auto& ex : examples) {
            canon += to_jsonl_record(ex, bundle.label_space);
            canon += '\n';
        }
    }
    return sha256_hex(canon);
}

void finalize_bundle(DatasetBundle& bundle, std::string source) {
    const std::size_t k = bundle.label_space.size();
    std::unordered_set<std::string> ids;
    for (const auto& [name, examples] : bundle.splits) {
        for (const auto& ex : examples) {
            if (ex.gold >= k) {
                throw Error(ErrorKind::UnknownLabel, "example '" + ex.id + "' has gold index " + std::to_string(ex.gold));
            }
            if (!ids.insert(ex.id).second) throw Error(ErrorKind::DuplicateId, "duplicate example id '" + ex.id + "'");
        }
    }
    bundle.provenance = Provenance{std::move(source), content_hash(bundle)};
}

DatasetBundle load_dataset(const std::filesystem::path& dir, const DatasetSchema& schema) {
    std::vector<std::pair<std::string, std::vector<RawRecord>>> raw;
    for (const auto& [name, file] : schema.split_files) {
        auto path = dir / file;
        if (!std::filesystem::exists(path)) continue;
        auto records = parse_jsonl(path);
        if (records.empty()) throw Error(ErrorKind::EmptySplit, "split '" + name + "' (" + path.string() + ") has no records");
        raw.emplace_back(name, std::move(records));
    }
    if (raw.empty()) throw Error(ErrorKind::EmptySplit, "no split files found under " + dir.string());

    std::vector<std::string> labels;
    const bool declared = schema.label_file && std::filesystem::exists(dir / *schema.label_file);
    if (declared) {
        labels = read_label_file(dir / *schema.label_file);
    } else {
        std::set<std::string> seen;
        for (const auto& [name, records] : raw) {
            for (const auto& r : records) {
                if (seen.insert(r.label).second) labels.push_back(r.label);
            }
        }
    }

    DatasetBundle bundle;
    bundle.label_space = LabelSpace(std::move(labels));
    for (auto& [name, records] : raw) {
        auto& examples = bundle.splits[name];
        examples.reserve(records.size());
        for (auto& r : records) {
            auto idx = bundle.label_space.index_of(r.label);
            if (!idx) throw Error(ErrorKind::UnknownLabel, "example '" + r.id + "' has undeclared label '" + r.label + "'");
            examples.push_back(LabeledExample{std::move(r.id), std::move(r.payload), *idx, r.region});
        }
    }
    finalize_bundle(bundle, dir.string());
    return bundle;
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir, const DatasetSchema& schema) {
    if (schema.label_file) {
        std::string text;
        for (const auto& l : bundle.label_space.labels()) text += l + "\n";
        write_file(dir / *schema.label_file, text);
    }
    for (const auto& [name, file] : schema.split_files) {
        auto it = bundle.splits.find(name);
        if (it == bundle.splits.end()) continue;
        std::string text;
        for (const auto& ex : it->second) {
            text += to_jsonl_record(ex, bundle.label_space);
            text += '\n';
        }
        write_file(dir / file, text);
    }
}

std::string_view to_string(Slice s) noexcept {
    switch (s) {
        case Slice::Head: return "head";
        case Slice::Medium: return "medium";
        case Slice::Tail: return "tail";
    }
    return "?";
}

std::vector<std::size_t> class_counts(const DatasetBundle& bundle, std::string_view split) {
    std::vector<std::size_t> counts(bundle.label_space.size(), 0);
    auto it = bundle.splits.find(split);
    if (it == bundle.splits.end()) return counts;
    for (const auto& ex : it->second) ++counts[ex.gold];
    return counts;
}

SliceBoundaries default_slice_boundaries(const DatasetBundle& bundle) {
    if (!bundle.has_split(kTrain)) throw Error(ErrorKind::EmptyTrainSplit, "train split is missing or empty");
    auto sorted = class_counts(bundle);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = sorted.size();
    const std::size_t third = std::max<std::size_t>(1, k / 3);
    const std::size_t low = sorted[third - 1];
    const std::size_t high = sorted[k - third];
    if (high > low) return {high, low};
    // Flat count sequence: everything lands in the medium slice.
    return {low + 1, low == 0 ? 0 : low - 1};
}

SliceAssignment assign_slices(const DatasetBundle& bundle, SliceBoundaries boundaries) {
    if (boundaries.t_head <= boundaries.t_tail) {
        throw Error(ErrorKind::InvalidConfig, "slice boundaries need t_head > t_tail (got " +
                                                  std::to_string(boundaries.t_head) + ", " +
                                                  std::to_string(boundaries.t_tail) + ")");
    }
    if (!bundle.has_split(kTrain)) throw Error(ErrorKind::EmptyTrainSplit, "train split is missing or empty");
    SliceAssignment out;
    out.train_counts = class_counts(bundle);
    out.boundaries = boundaries;
    out.per_class.reserve(out.train_counts.size());
    for (std::size_t c : out.train_counts) {
        if (c >= boundaries.t_head) {
            out.per_class.push_back(Slice::Head);
        } else if (c <= boundaries.t_tail) {
            out.per_class.push_back(Slice::Tail);
        } else {
            out.per_class.push_back(Slice::Medium);
        }
    }
    return out;
}

}  // namespace cascade
