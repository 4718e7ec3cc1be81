#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cascade {

using LabelIndex = std::size_t;

/// Ordered, duplicate-free label set. A label's position is the index used by
/// every probability vector in the system.
class LabelSpace {
public:
    LabelSpace() = default;
    explicit LabelSpace(std::vector<std::string> labels);

    std::size_t size() const noexcept { return labels_.size(); }
    const std::string& label(LabelIndex i) const { return labels_.at(i); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::optional<LabelIndex> index_of(std::string_view name) const;

    bool operator==(const LabelSpace&) const = default;

private:
    std::vector<std::string> labels_;
};

struct LabeledExample {
    std::string id;
    std::string payload;
    LabelIndex gold = 0;
    /// Latent region tag; present for simulator-generated data only.
    std::optional<int> region;

    bool operator==(const LabeledExample&) const = default;
};

struct Provenance {
    std::string source;
    std::string content_hash;
};

inline constexpr std::string_view kTrain = "train";
inline constexpr std::string_view kVal = "val";
inline constexpr std::string_view kTest = "test";

/// Immutable after construction; safe to share across readers.
struct DatasetBundle {
    LabelSpace label_space;
    std::map<std::string, std::vector<LabeledExample>, std::less<>> splits;
    Provenance provenance;

    /// Throws EmptySplit when the split is absent or has no examples.
    const std::vector<LabeledExample>& split(std::string_view name) const;
    bool has_split(std::string_view name) const;

    /// Content equality: label space and splits, ignoring provenance.
    bool same_content(const DatasetBundle& other) const;
};

/// File names per split, relative to the dataset directory. Split order here
/// is the label-inference order.
struct DatasetSchema {
    std::optional<std::string> label_file;
    std::vector<std::pair<std::string, std::string>> split_files;

    static DatasetSchema standard();
};

DatasetBundle load_dataset(const std::filesystem::path& dir, const DatasetSchema& schema);

/// Writes the label file (when the schema names one) and one JSONL file per split.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir, const DatasetSchema& schema);

std::string to_jsonl_record(const LabeledExample& ex, const LabelSpace& labels);

/// Canonical hash over label space and split contents.
std::string content_hash(const DatasetBundle& bundle);

/// Validates split disjointness and gold ranges, then fills provenance.
void finalize_bundle(DatasetBundle& bundle, std::string source);

// ---------------------------------------------------------------------------
// Head / medium / tail slices

enum class Slice { Head, Medium, Tail };

std::string_view to_string(Slice s) noexcept;

struct SliceBoundaries {
    std::size_t t_head = 0;
    std::size_t t_tail = 0;
};

struct SliceAssignment {
    std::vector<Slice> per_class;
    std::vector<std::size_t> train_counts;
    SliceBoundaries boundaries;

    Slice of(LabelIndex cls) const { return per_class.at(cls); }
};

std::vector<std::size_t> class_counts(const DatasetBundle& bundle, std::string_view split = kTrain);

/// Tertile cutoffs of the sorted train class-count sequence.
SliceBoundaries default_slice_boundaries(const DatasetBundle& bundle);

SliceAssignment assign_slices(const DatasetBundle& bundle, SliceBoundaries boundaries);

}  // namespace cascade
