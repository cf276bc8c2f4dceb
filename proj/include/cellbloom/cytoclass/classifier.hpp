#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellbloom/augment.hpp"
#include "cellbloom/classes.hpp"
#include "cellbloom/cytoclass/confusion.hpp"
#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"
#include "cellbloom/nn/ops.hpp"
#include "cellbloom/nn/parameters.hpp"

namespace cellbloom::cytoclass {

namespace fs = std::filesystem;

// 18-layer residual network: 7x7 stride-2 stem with max pooling, four stages
// of two basic blocks (widths w, 2w, 4w, 8w), global average pooling and a
// linear head. Batch normalization follows every convolution.
class ResNet18 {
public:
    ResNet18(int base_width, int classes, std::mt19937_64& rng);

    // (N, 3, H, W) -> (N, classes) logits.
    nn::Var<float> forward(const nn::Var<float>& x, bool training);

    int base_width() const { return base_width_; }
    int classes() const { return classes_; }
    nn::ParameterSet<float>& params() { return params_; }
    const nn::ParameterSet<float>& params() const { return params_; }

private:
    struct ConvBn {
        nn::Var<float> weight;
        nn::Var<float> gamma;
        nn::Var<float> beta;
        nn::BatchNormStats<float> stats;
        int stride = 1;
        int padding = 0;
    };
    struct Block {
        ConvBn conv1;
        ConvBn conv2;
        std::optional<ConvBn> downsample;
    };

    ConvBn make_conv_bn(const std::string& name, int c_in, int c_out, int kernel, int stride, std::mt19937_64& rng);
    nn::Var<float> apply(ConvBn& layer, const nn::Var<float>& x, bool training);

    int base_width_;
    int classes_;
    nn::ParameterSet<float> params_;
    ConvBn stem_;
    std::vector<Block> blocks_;
    nn::Var<float> fc_weight_;
    nn::Var<float> fc_bias_;
};

struct ClassifierConfig {
    int epochs = 10;
    double lr = 3e-3;
    int batch_size = 64;
    int image_size = 64;
    int base_width = 64;
    // Safetensors state to start from instead of random initialization.
    std::optional<fs::path> pretrained_init;
    AugmentationSpec augmentation;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    // Missing keys keep their defaults.
    static ClassifierConfig from_json(const nlohmann::json& j);
};

class ClassifierError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Prediction {
    std::array<double, kNumClasses> probabilities{};
    int cls = 0;
};

// Index of the largest value; ties go to the lowest index.
int argmax_lowest(std::span<const double> values);

class Classifier {
public:
    explicit Classifier(const ClassifierConfig& cfg);

    const ClassifierConfig& config() const { return cfg_; }
    ResNet18& network() { return *net_; }
    const ResNet18& network() const { return *net_; }

    // Evaluation-mode inference; images must be image_size x image_size.
    Prediction predict(const Image& img) const;
    std::vector<Prediction> predict_batch(std::span<const Image> images) const;

    // Writes <dir>/config.json and <dir>/model.safetensors.
    void save(const fs::path& dir) const;
    static Classifier load(const fs::path& dir);

private:
    ClassifierConfig cfg_;
    // Inference leaves the running statistics untouched, but forward() is non-const.
    std::unique_ptr<ResNet18> net_;
};

struct ClassifierEpoch {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_accuracy;
};

struct ClassifierTrainResult {
    std::shared_ptr<Classifier> model;
    std::vector<ClassifierEpoch> history;
    int best_epoch = 0;
};

// Trains on the manifest's train split and selects the epoch with the best
// val-split accuracy (earliest on ties). Without val records the last epoch
// is kept. Every cell class must have training records.
ClassifierTrainResult train_classifier(const DatasetManifest& manifest, const ClassifierConfig& cfg);

void write_classifier_history_csv(const fs::path& file, const std::vector<ClassifierEpoch>& history);

struct EvaluationResult {
    ConfusionMatrix confusion{static_cast<int>(kNumClasses)};
    double overall_accuracy = 0.0;
    double macro_accuracy = 0.0;
    std::array<std::optional<double>, kNumClasses> per_class_recall{};
};

EvaluationResult summarize(const ConfusionMatrix& cm);

// Every record must carry a cell label.
EvaluationResult evaluate(const Classifier& model, const DatasetManifest& manifest);

nlohmann::ordered_json evaluation_to_json(const EvaluationResult& result, const std::string& dataset_tag);
// Writes <dir>/<tag>_evaluation.json and <dir>/<tag>_confusion.csv.
void write_evaluation_report(const fs::path& dir, const EvaluationResult& result, const std::string& dataset_tag);

}  // namespace cellbloom::cytoclass
