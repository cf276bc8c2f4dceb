#include "cellbloom/cytoclass/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "cellbloom/hashing.hpp"
#include "cellbloom/nn/adam.hpp"
#include "cellbloom/nn/safetensors.hpp"
#include "cellbloom/random.hpp"

namespace cellbloom::cytoclass {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;
using nn::Var;

// ---- network ----

ResNet18::ConvBn ResNet18::make_conv_bn(const std::string& name, int c_in, int c_out, int kernel, int stride,
                                        std::mt19937_64& rng) {
    ConvBn layer;
    layer.weight = params_.add_parameter(name + ".weight", nn::kaiming_normal_fan_out<float>({c_out, c_in, kernel, kernel}, rng));
    layer.gamma = params_.add_parameter(name + ".bn.weight", Tensor<float>({c_out}, 1.0f));
    layer.beta = params_.add_parameter(name + ".bn.bias", Tensor<float>({c_out}, 0.0f));
    layer.stats.running_mean = &params_.add_buffer(name + ".bn.running_mean", Tensor<float>({c_out}, 0.0f));
    layer.stats.running_var = &params_.add_buffer(name + ".bn.running_var", Tensor<float>({c_out}, 1.0f));
    layer.stride = stride;
    layer.padding = kernel / 2;
    return layer;
}

ResNet18::ResNet18(int base_width, int classes, std::mt19937_64& rng) : base_width_(base_width), classes_(classes) {
    if (base_width < 1 || classes < 1) throw std::invalid_argument("invalid ResNet18 dimensions");
    stem_ = make_conv_bn("stem", 3, base_width, 7, 2, rng);
    int c_in = base_width;
    for (int stage = 0; stage < 4; ++stage) {
        const int c_out = base_width << stage;
        for (int b = 0; b < 2; ++b) {
            const int stride = (stage > 0 && b == 0) ? 2 : 1;
            const std::string name = "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
            Block block;
            block.conv1 = make_conv_bn(name + ".conv1", c_in, c_out, 3, stride, rng);
            block.conv2 = make_conv_bn(name + ".conv2", c_out, c_out, 3, 1, rng);
            if (stride != 1 || c_in != c_out) block.downsample = make_conv_bn(name + ".downsample", c_in, c_out, 1, stride, rng);
            blocks_.push_back(std::move(block));
            c_in = c_out;
        }
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
    fc_weight_ = params_.add_parameter("fc.weight", nn::uniform_tensor<float>({classes, c_in}, -bound, bound, rng));
    fc_bias_ = params_.add_parameter("fc.bias", nn::uniform_tensor<float>({classes}, -bound, bound, rng));
}

Var<float> ResNet18::apply(ConvBn& layer, const Var<float>& x, bool training) {
    auto y = nn::conv2d(x, layer.weight, Var<float>(), {layer.stride, layer.padding});
    return nn::batch_norm2d(y, layer.gamma, layer.beta, layer.stats, training);
}

Var<float> ResNet18::forward(const Var<float>& x, bool training) {
    if (x.shape().size() != 4 || x.shape()[1] != 3) throw nn::ShapeError("ResNet18 expects (N, 3, H, W) input");
    auto h = nn::relu(apply(stem_, x, training));
    h = nn::max_pool2d(h, 3, 2, 1);
    for (auto& block : blocks_) {
        auto y = nn::relu(apply(block.conv1, h, training));
        y = apply(block.conv2, y, training);
        const auto shortcut = block.downsample ? apply(*block.downsample, h, training) : h;
        h = nn::relu(y + shortcut);
    }
    return nn::linear(nn::global_avg_pool2d(h), fc_weight_, fc_bias_);
}

// ---- config ----

void ClassifierConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("classifier config: " + msg); };
    if (epochs < 1) fail("epochs must be at least 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (image_size < 16) fail("image_size must be at least 16");
    if (base_width < 1) fail("base_width must be at least 1");
    augmentation.validate();
}

ordered_json ClassifierConfig::to_json() const {
    return {{"epochs", epochs},
            {"lr", lr},
            {"batch_size", batch_size},
            {"image_size", image_size},
            {"base_width", base_width},
            {"pretrained_init", pretrained_init ? json(pretrained_init->string()) : json(nullptr)},
            {"augmentation",
             {{"hflip_p", augmentation.hflip_p},
              {"vflip_p", augmentation.vflip_p},
              {"max_rotation_deg", augmentation.max_rotation_deg},
              {"erase_p", augmentation.erase_p},
              {"erase_min_area", augmentation.erase_min_area},
              {"erase_max_area", augmentation.erase_max_area},
              {"intensity_shift", augmentation.intensity_shift}}},
            {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
    ClassifierConfig c;
    auto read = [&](const json& obj, const char* key, auto& field) {
        if (obj.contains(key)) obj.at(key).get_to(field);
    };
    read(j, "epochs", c.epochs);
    read(j, "lr", c.lr);
    read(j, "batch_size", c.batch_size);
    read(j, "image_size", c.image_size);
    read(j, "base_width", c.base_width);
    read(j, "seed", c.seed);
    if (j.contains("pretrained_init") && !j.at("pretrained_init").is_null()) {
        c.pretrained_init = fs::path(j.at("pretrained_init").get<std::string>());
    }
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        read(a, "hflip_p", c.augmentation.hflip_p);
        read(a, "vflip_p", c.augmentation.vflip_p);
        read(a, "max_rotation_deg", c.augmentation.max_rotation_deg);
        read(a, "erase_p", c.augmentation.erase_p);
        read(a, "erase_min_area", c.augmentation.erase_min_area);
        read(a, "erase_max_area", c.augmentation.erase_max_area);
        read(a, "intensity_shift", c.augmentation.intensity_shift);
    }
    return c;
}

// ---- inference ----

int argmax_lowest(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmax of an empty range");
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

Classifier::Classifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(derive_seed(cfg_.seed, "classifier:init"));
    net_ = std::make_unique<ResNet18>(cfg_.base_width, static_cast<int>(kNumClasses), rng);
    if (cfg_.pretrained_init) net_->params().load_state(nn::load_safetensors(*cfg_.pretrained_init));
}

std::vector<Prediction> Classifier::predict_batch(std::span<const Image> images) const {
    constexpr std::size_t kChunk = 64;
    std::vector<Prediction> out;
    out.reserve(images.size());
    nn::NoGradGuard guard;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
        for (const auto& img : chunk) {
            if (img.height != cfg_.image_size || img.width != cfg_.image_size) {
                throw nn::ShapeError("classifier expects " + std::to_string(cfg_.image_size) + "x" +
                                     std::to_string(cfg_.image_size) + " images, got " + std::to_string(img.height) +
                                     "x" + std::to_string(img.width));
            }
        }
        const Tensor<float> probs = nn::softmax_rows(net_->forward(Var<float>(to_batch(chunk)), false).value());
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            Prediction p;
            for (std::size_t k = 0; k < kNumClasses; ++k) p.probabilities[k] = probs[i * kNumClasses + k];
            p.cls = argmax_lowest(p.probabilities);
            out.push_back(p);
        }
    }
    return out;
}

Prediction Classifier::predict(const Image& img) const { return predict_batch(std::span<const Image>(&img, 1)).front(); }

void Classifier::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    out << cfg_.to_json().dump(2) << '\n';
    nn::save_safetensors(dir / "model.safetensors", net_->params().state(), {{"network", "resnet18"}});
}

Classifier Classifier::load(const fs::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) throw std::runtime_error("no classifier at " + dir.string());
    ClassifierConfig cfg = ClassifierConfig::from_json(json::parse(in));
    cfg.pretrained_init.reset();
    Classifier model(cfg);
    model.net_->params().load_state(nn::load_safetensors(dir / "model.safetensors"));
    return model;
}

// ---- training ----

namespace {

class ImageCache {
public:
    explicit ImageCache(int side) : side_(side) {}
    const Image& get(const fs::path& path) {
        auto it = cache_.find(path.string());
        if (it == cache_.end()) it = cache_.emplace(path.string(), load_image(path, side_)).first;
        return it->second;
    }

private:
    int side_;
    std::map<std::string, Image> cache_;
};

int cell_label_of(const ImageRecord& r) {
    if (!r.label || !std::holds_alternative<CellClass>(*r.label)) {
        throw ClassifierError("record " + r.id + " has no cell class label");
    }
    return index_of(*r.label);
}

double accuracy_on(const Classifier& model, const std::vector<const ImageRecord*>& records, ImageCache& cache) {
    std::vector<Image> images;
    images.reserve(records.size());
    for (const auto* r : records) images.push_back(cache.get(r->path));
    const auto preds = model.predict_batch(images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) correct += preds[i].cls == cell_label_of(*records[i]);
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

}  // namespace

ClassifierTrainResult train_classifier(const DatasetManifest& manifest, const ClassifierConfig& cfg) {
    cfg.validate();
    if (manifest.domain() != Domain::cell) throw ClassifierError("classifier training needs a cell manifest");
    std::vector<const ImageRecord*> train, val;
    std::array<std::size_t, kNumClasses> per_class{};
    for (const auto& r : manifest.records()) {
        if (r.split == Split::train) {
            train.push_back(&r);
            ++per_class[static_cast<std::size_t>(cell_label_of(r))];
        } else if (r.split == Split::val) {
            cell_label_of(r);
            val.push_back(&r);
        }
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        if (per_class[k] == 0) {
            throw ClassifierError("class " + std::string(to_string(cell_class_at(static_cast<int>(k)))) +
                                  " has no training records");
        }
    }
    if (val.empty()) spdlog::warn("no validation records; keeping the final epoch");

    ImageCache cache(cfg.image_size);
    auto model = std::make_shared<Classifier>(cfg);
    ResNet18& net = model->network();
    nn::Adam<float> opt(net.params(), {cfg.lr, 0.9, 0.999, 1e-8});
    std::mt19937_64 order_rng(derive_seed(cfg.seed, "classifier:order"));
    std::mt19937_64 augment_rng(derive_seed(cfg.seed, "classifier:augment"));

    ClassifierTrainResult result;
    std::optional<double> best_accuracy;
    std::map<std::string, Tensor<float>> best_state;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_in_place(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t n = std::min(batch, order.size() - start);
            std::vector<Image> images;
            std::vector<int> labels;
            images.reserve(n);
            for (std::size_t i = start; i < start + n; ++i) {
                const auto& r = *train[order[i]];
                images.push_back(augment(cache.get(r.path), cfg.augmentation, augment_rng));
                labels.push_back(cell_label_of(r));
            }
            auto loss = nn::cross_entropy(net.forward(Var<float>(to_batch(images)), true), labels);
            const double value = loss.value()[0];
            if (!std::isfinite(value)) throw ClassifierError("non-finite classifier loss at epoch " + std::to_string(epoch));
            opt.zero_grad();
            nn::backward(loss);
            opt.step();
            loss_sum += value * static_cast<double>(n);
        }
        ClassifierEpoch log{epoch, loss_sum / static_cast<double>(order.size()), std::nullopt};
        if (!val.empty()) log.val_accuracy = accuracy_on(*model, val, cache);
        spdlog::info("classifier epoch {}/{}: loss {:.4f} val_accuracy {}", epoch, cfg.epochs, log.train_loss,
                     log.val_accuracy ? fmt::format("{:.4f}", *log.val_accuracy) : std::string("n/a"));
        const bool improved = val.empty() || !best_accuracy || *log.val_accuracy > *best_accuracy;
        if (improved) {
            best_accuracy = log.val_accuracy;
            best_state = net.params().state();
            result.best_epoch = epoch;
        }
        result.history.push_back(log);
    }
    net.params().load_state(best_state);
    result.model = std::move(model);
    return result;
}

void write_classifier_history_csv(const fs::path& file, const std::vector<ClassifierEpoch>& history) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "epoch,train_loss,val_accuracy\n";
    char buf[64];
    for (const auto& e : history) {
        out << e.epoch << ',';
        std::snprintf(buf, sizeof buf, "%.17g", e.train_loss);
        out << buf << ',';
        if (e.val_accuracy) {
            std::snprintf(buf, sizeof buf, "%.17g", *e.val_accuracy);
            out << buf;
        }
        out << '\n';
    }
}

// ---- evaluation ----

EvaluationResult summarize(const ConfusionMatrix& cm) {
    if (cm.classes() != static_cast<int>(kNumClasses)) throw std::invalid_argument("expected a 7-class confusion matrix");
    EvaluationResult r;
    r.confusion = cm;
    r.overall_accuracy = cm.overall_accuracy();
    r.macro_accuracy = cm.macro_accuracy();
    for (std::size_t k = 0; k < kNumClasses; ++k) r.per_class_recall[k] = cm.recall(static_cast<int>(k));
    return r;
}

EvaluationResult evaluate(const Classifier& model, const DatasetManifest& manifest) {
    if (manifest.empty()) throw ClassifierError("cannot evaluate on an empty manifest");
    std::vector<int> truth;
    std::vector<Image> images;
    truth.reserve(manifest.size());
    images.reserve(manifest.size());
    for (const auto& r : manifest.records()) {
        truth.push_back(cell_label_of(r));
        images.push_back(load_image(r.path, model.config().image_size));
    }
    const auto preds = model.predict_batch(images);
    ConfusionMatrix cm(static_cast<int>(kNumClasses));
    for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], preds[i].cls);
    return summarize(cm);
}

ordered_json evaluation_to_json(const EvaluationResult& result, const std::string& dataset_tag) {
    ordered_json recall = ordered_json::array();
    for (const auto& r : result.per_class_recall) recall.push_back(r ? ordered_json(*r) : ordered_json(nullptr));
    ordered_json classes = ordered_json::array();
    for (auto c : kAllCellClasses) classes.push_back(std::string(to_string(c)));
    return {{"dataset_tag", dataset_tag},
            {"overall_accuracy", result.overall_accuracy},
            {"macro_accuracy", result.macro_accuracy},
            {"classes", classes},
            {"per_class_recall", recall},
            {"confusion_matrix", result.confusion.rows()}};
}

void write_evaluation_report(const fs::path& dir, const EvaluationResult& result, const std::string& dataset_tag) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / (dataset_tag + "_evaluation.json"), std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write evaluation report in " + dir.string());
        out << evaluation_to_json(result, dataset_tag).dump(2) << '\n';
    }
    std::vector<std::string> names;
    for (auto c : kAllCellClasses) names.emplace_back(to_string(c));
    std::ofstream out(dir / (dataset_tag + "_confusion.csv"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write confusion matrix in " + dir.string());
    out << result.confusion.to_csv(names);
}

}  // namespace cellbloom::cytoclass
