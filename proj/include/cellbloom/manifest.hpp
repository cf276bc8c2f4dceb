#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellbloom/classes.hpp"

namespace cellbloom {

namespace fs = std::filesystem;

enum class Split { train, val, test, unassigned };

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view name);

struct SourceBox {
    std::string slide;
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    bool operator==(const SourceBox&) const = default;
};

struct ImageRecord {
    std::string id;
    fs::path path;
    Domain domain = Domain::cell;
    std::optional<ClassLabel> label;
    Split split = Split::unassigned;
    std::optional<SourceBox> source;
    // Crowd agreement (max votes / total votes) on exported labels.
    std::optional<double> agreement;

    bool operator==(const ImageRecord&) const = default;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Census = std::array<std::size_t, kNumClasses>;

// Typed record collection of one domain. Ids are unique; the census is kept
// in step with the records on every mutation.
class DatasetManifest {
public:
    DatasetManifest() = default;
    DatasetManifest(Domain domain, std::uint64_t seed) : domain_(domain), seed_(seed) {}

    Domain domain() const { return domain_; }
    std::uint64_t seed() const { return seed_; }
    void set_seed(std::uint64_t seed) { seed_ = seed; }

    const std::vector<ImageRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    // Throws ManifestError on duplicate id or a label from the wrong domain.
    void add(ImageRecord record);
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    const ImageRecord& at(const std::string& id) const;
    void set_split(const std::string& id, Split split);

    const Census& census() const { return census_; }
    std::size_t unlabeled_count() const { return unlabeled_; }
    Census recount() const;
    Census split_census(Split split) const;

    DatasetManifest filter_split(Split split) const;
    DatasetManifest filter_class(int class_index) const;

    // JSON Lines: a header line {"kind":"header", domain, seed, census, ...}
    // followed by one record per line. Paths are written relative to the
    // manifest's directory when possible and resolved against it on load.
    void save(const fs::path& file) const;
    static DatasetManifest load(const fs::path& file);
    // The saved text, with paths made relative to `base_dir`.
    std::string to_jsonl(const fs::path& base_dir) const;

private:
    Domain domain_ = Domain::cell;
    std::uint64_t seed_ = 0;
    std::vector<ImageRecord> records_;
    std::map<std::string, std::size_t> index_;
    Census census_{};
    std::size_t unlabeled_ = 0;
};

// Known census of the fully annotated BALF cell dataset, in CellClass order.
inline constexpr Census kBalfCellCensus = {12556, 310, 1553, 24498, 46397, 339, 105};

// ---- cell ingest ----

struct CellAnnotation {
    std::string slide;  // image file name (or stem) under the image root
    int x = 0, y = 0, w = 0, h = 0;
    std::string label;
};

struct CropRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // [x0, x1) x [y0, y1)
    bool operator==(const CropRect&) const = default;
};

// Square of side `patch_size` centered on the box center, shifted (never
// shrunk) to lie inside the image. Throws if the image is smaller than the patch.
CropRect patch_rect(const CellAnnotation& box, int image_width, int image_height, int patch_size);

// Reads a JSON array of {slide, x, y, w, h, label}.
std::vector<CellAnnotation> read_cell_annotations(const fs::path& file);

class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CellIngestResult {
    DatasetManifest manifest;
    std::size_t skipped_outside = 0;
};

// Writes patches to <out_root>/cell/<class>/<id>.png.
CellIngestResult ingest_cells(const fs::path& annotation_file, const fs::path& image_root, int patch_size,
                              const fs::path& out_root, std::uint64_t seed = 0);

// ---- flower ingest ----

// Directory name -> flower class. Canonical names are always accepted.
using FlowerAliases = std::map<std::string, FlowerClass>;
FlowerAliases default_flower_aliases();
FlowerAliases load_flower_aliases(const fs::path& json_file);

// One subdirectory per class; every PNG/JPEG inside becomes a record.
DatasetManifest ingest_flowers(const fs::path& image_root, const FlowerAliases& aliases = default_flower_aliases(),
                               std::uint64_t seed = 0);

// ---- splits and oversampling ----

struct SplitRatios {
    double train = 0.8;
    double test = 0.1;
    double val = 0.1;
};

struct SplitCounts {
    std::size_t train = 0, test = 0, val = 0;
    bool operator==(const SplitCounts&) const = default;
};

// Floor-assigned test/val counts, remainder to train.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

// Stable 64-bit key for ordering records under a seed.
std::uint64_t split_order_key(std::uint64_t seed, const std::string& id);

// Stratified per class (unlabeled records form their own stratum).
DatasetManifest split_manifest(const DatasetManifest& m, const SplitRatios& ratios, std::uint64_t seed);

inline constexpr std::size_t kOversampleFloor = 2000;

// Duplicates training records of under-represented classes (sampling with
// replacement) until each has exactly floor_count training entries.
DatasetManifest oversample_training(const DatasetManifest& m, std::size_t floor_count, std::uint64_t seed);

// "<id>#dup<k>" -> "<id>"
std::string original_id(const std::string& id);

}  // namespace cellbloom
