#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellbloom/classes.hpp"
#include "cellbloom/cytoclass/classifier.hpp"
#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"
#include "cellbloom/transfer/cyclegan.hpp"

namespace cellbloom::harness {

namespace fs = std::filesystem;

class ExperimentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Translation {
    Image fake;           // flower-domain image
    Image reconstructed;  // back in the cell domain
};

// Routes a cell image through the cell <-> flower model of its class.
class Translator {
public:
    virtual ~Translator() = default;
    virtual bool supports(CellClass cls) const = 0;
    // Images of one class; all the same size.
    virtual std::vector<Translation> translate(const std::vector<Image>& cells, CellClass cls) const = 0;
    // Side length the images are loaded at.
    virtual int image_size() const = 0;
};

class CheckpointTranslator : public Translator {
public:
    explicit CheckpointTranslator(std::map<CellClass, transfer::TransferCheckpoint> checkpoints);
    // Loads <root>/<cell class>/ for every class directory present.
    static CheckpointTranslator from_directory(const fs::path& root);

    bool supports(CellClass cls) const override { return checkpoints_.count(cls) != 0; }
    std::vector<Translation> translate(const std::vector<Image>& cells, CellClass cls) const override;
    int image_size() const override { return image_size_; }
    const std::map<CellClass, transfer::TransferCheckpoint>& checkpoints() const { return checkpoints_; }

private:
    std::map<CellClass, transfer::TransferCheckpoint> checkpoints_;
    int image_size_ = 0;
};

// Both translations return the input unchanged.
class IdentityTranslator : public Translator {
public:
    explicit IdentityTranslator(int image_size) : image_size_(image_size) {}
    bool supports(CellClass) const override { return true; }
    std::vector<Translation> translate(const std::vector<Image>& cells, CellClass cls) const override;
    int image_size() const override { return image_size_; }

private:
    int image_size_;
};

inline constexpr std::string_view kReconstructedSuffix = "@rec";
std::string reconstructed_id(const std::string& original);
// Inverse of reconstructed_id; throws when the suffix is absent.
std::string original_of_reconstructed(const std::string& id);

struct ReconstructOptions {
    // When set, <dir>/<class>/<id>_{original,fake,reconstructed}.png are written.
    std::optional<fs::path> triplet_dir;
    // Triplets written per class; negative means all.
    int max_triplets_per_class = -1;
};

// Translates every record cell -> flower -> cell with its true class's model
// and writes <out_dir>/<class>/<id>@rec.png. Splits and labels are kept.
DatasetManifest build_reconstructed_testset(const DatasetManifest& cell_test, const Translator& translator,
                                            const fs::path& out_dir, const ReconstructOptions& options = {});

// Mean absolute difference in [-1, 1] units.
double reconstruction_l1(const Image& original, const Image& reconstructed);

struct ReconstructionMetrics {
    std::map<std::string, double> per_image;  // keyed by original id
    double mean = 0.0;
};

// Pairs records by id (reconstructed ids carry the @rec suffix) and loads
// both at `image_size`.
ReconstructionMetrics reconstruction_metrics(const DatasetManifest& originals, const DatasetManifest& reconstructions,
                                             int image_size);

struct AccuracyPair {
    double overall = 0.0;
    double macro = 0.0;
};

struct ExperimentReport {
    AccuracyPair acc_real;
    AccuracyPair acc_reconstructed;
    cytoclass::EvaluationResult eval_real;
    cytoclass::EvaluationResult eval_reconstructed;
    // Keyed by cell class; present for every class in the test set.
    std::map<CellClass, double> pair_reconstruction_l1;
    double mean_reconstruction_l1 = 0.0;
    std::size_t test_size = 0;
    std::map<std::string, std::string> config_digests;
    std::string started_at;
    std::string finished_at;

    nlohmann::ordered_json to_json() const;
};

// Hex FNV-1a of a config's canonical JSON dump.
std::string config_digest(const nlohmann::ordered_json& config);

struct ExperimentOptions {
    fs::path output_dir;
    ReconstructOptions reconstruct;
    std::map<std::string, std::string> config_digests;
};

// Evaluates `classifier` on the test split of `cells` and on its
// reconstruction, and writes experiment_report.json plus confusion CSVs.
ExperimentReport run_experiment(const DatasetManifest& cells, const Translator& translator,
                                const cytoclass::Classifier& classifier, const ExperimentOptions& options);

}  // namespace cellbloom::harness
