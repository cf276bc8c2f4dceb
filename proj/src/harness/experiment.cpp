#include "cellbloom/harness/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include <spdlog/spdlog.h>

#include "cellbloom/hashing.hpp"

namespace cellbloom::harness {

using nlohmann::ordered_json;

// ---- translators ----

CheckpointTranslator::CheckpointTranslator(std::map<CellClass, transfer::TransferCheckpoint> checkpoints)
    : checkpoints_(std::move(checkpoints)) {
    if (checkpoints_.empty()) throw ExperimentError("no transfer checkpoints given");
    for (const auto& [cls, ckpt] : checkpoints_) {
        if (!ckpt.model) throw ExperimentError("checkpoint for " + std::string(to_string(cls)) + " has no model");
        if (ckpt.config.cell != cls) {
            throw ExperimentError("checkpoint registered for " + std::string(to_string(cls)) + " was trained on " +
                                  std::string(to_string(ckpt.config.cell)));
        }
        if (image_size_ == 0) image_size_ = ckpt.config.image_size;
        if (ckpt.config.image_size != image_size_) throw ExperimentError("transfer checkpoints disagree on image_size");
    }
}

CheckpointTranslator CheckpointTranslator::from_directory(const fs::path& root) {
    std::map<CellClass, transfer::TransferCheckpoint> found;
    for (CellClass cls : kAllCellClasses) {
        const fs::path dir = root / std::string(to_string(cls));
        if (fs::is_directory(dir)) found.emplace(cls, transfer::load_checkpoint(dir));
    }
    if (found.empty()) throw ExperimentError("no transfer checkpoints under " + root.string());
    return CheckpointTranslator(std::move(found));
}

std::vector<Translation> CheckpointTranslator::translate(const std::vector<Image>& cells, CellClass cls) const {
    auto it = checkpoints_.find(cls);
    if (it == checkpoints_.end()) throw ExperimentError("no transfer checkpoint for class " + std::string(to_string(cls)));
    const auto fakes = transfer::transform(cells, it->second, transfer::Direction::cell_to_flower);
    const auto recs = transfer::transform(fakes, it->second, transfer::Direction::flower_to_cell);
    std::vector<Translation> out;
    out.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) out.push_back({fakes[i], recs[i]});
    return out;
}

std::vector<Translation> IdentityTranslator::translate(const std::vector<Image>& cells, CellClass) const {
    std::vector<Translation> out;
    out.reserve(cells.size());
    for (const auto& img : cells) out.push_back({img, img});
    return out;
}

// ---- reconstructed test set ----

std::string reconstructed_id(const std::string& original) { return original + std::string(kReconstructedSuffix); }

std::string original_of_reconstructed(const std::string& id) {
    const auto n = kReconstructedSuffix.size();
    if (id.size() <= n || id.compare(id.size() - n, n, kReconstructedSuffix) != 0) {
        throw ExperimentError("id " + id + " is not a reconstructed id");
    }
    return id.substr(0, id.size() - n);
}

namespace {

CellClass cell_label(const ImageRecord& r) {
    if (!r.label || !std::holds_alternative<CellClass>(*r.label)) {
        throw ExperimentError("record " + r.id + " has no cell class label");
    }
    return std::get<CellClass>(*r.label);
}

}  // namespace

DatasetManifest build_reconstructed_testset(const DatasetManifest& cell_test, const Translator& translator,
                                            const fs::path& out_dir, const ReconstructOptions& options) {
    if (cell_test.domain() != Domain::cell) throw ExperimentError("reconstruction needs a cell manifest");
    std::map<CellClass, std::vector<const ImageRecord*>> by_class;
    for (const auto& r : cell_test.records()) by_class[cell_label(r)].push_back(&r);
    for (const auto& [cls, records] : by_class) {
        if (!translator.supports(cls)) throw ExperimentError("no transfer checkpoint for class " + std::string(to_string(cls)));
    }

    std::map<std::string, ImageRecord> produced;
    for (const auto& [cls, records] : by_class) {
        const std::string cls_name(to_string(cls));
        std::vector<Image> images;
        images.reserve(records.size());
        for (const auto* r : records) images.push_back(load_image(r->path, translator.image_size()));
        const auto translated = translator.translate(images, cls);
        for (std::size_t i = 0; i < records.size(); ++i) {
            ImageRecord rec = *records[i];
            rec.id = reconstructed_id(records[i]->id);
            rec.path = out_dir / cls_name / (rec.id + ".png");
            write_png(rec.path, to_u8(translated[i].reconstructed));
            const bool dump = options.triplet_dir &&
                              (options.max_triplets_per_class < 0 || static_cast<int>(i) < options.max_triplets_per_class);
            if (dump) {
                const fs::path base = *options.triplet_dir / cls_name;
                write_png(base / (records[i]->id + "_original.png"), to_u8(images[i]));
                write_png(base / (records[i]->id + "_fake.png"), to_u8(translated[i].fake));
                write_png(base / (records[i]->id + "_reconstructed.png"), to_u8(translated[i].reconstructed));
            }
            produced.emplace(records[i]->id, std::move(rec));
        }
    }

    // Keep the input record order.
    DatasetManifest out(Domain::cell, cell_test.seed());
    for (const auto& r : cell_test.records()) out.add(std::move(produced.at(r.id)));
    return out;
}

// ---- metrics ----

double reconstruction_l1(const Image& original, const Image& reconstructed) {
    if (!original.same_shape(reconstructed)) throw ExperimentError("reconstruction shape differs from the original");
    if (original.values.empty()) throw ExperimentError("empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < original.values.size(); ++i) {
        sum += std::abs(static_cast<double>(original.values[i]) - reconstructed.values[i]);
    }
    return sum / static_cast<double>(original.values.size());
}

ReconstructionMetrics reconstruction_metrics(const DatasetManifest& originals, const DatasetManifest& reconstructions,
                                             int image_size) {
    if (originals.size() != reconstructions.size()) {
        throw ExperimentError("original and reconstructed sets differ in size");
    }
    if (originals.empty()) throw ExperimentError("no images to compare");
    ReconstructionMetrics m;
    double sum = 0.0;
    for (const auto& rec : reconstructions.records()) {
        const std::string id = original_of_reconstructed(rec.id);
        if (!originals.contains(id)) throw ExperimentError("reconstruction " + rec.id + " has no original");
        const double l1 = reconstruction_l1(load_image(originals.at(id).path, image_size), load_image(rec.path, image_size));
        m.per_image.emplace(id, l1);
        sum += l1;
    }
    m.mean = sum / static_cast<double>(m.per_image.size());
    return m;
}

// ---- experiment ----

std::string config_digest(const ordered_json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

ordered_json ExperimentReport::to_json() const {
    ordered_json pairs = ordered_json::object();
    for (const auto& [cls, l1] : pair_reconstruction_l1) pairs[std::string(to_string(cls))] = l1;
    return {{"test_size", test_size},
            {"acc_real", {{"overall", acc_real.overall}, {"macro", acc_real.macro}}},
            {"acc_reconstructed", {{"overall", acc_reconstructed.overall}, {"macro", acc_reconstructed.macro}}},
            {"real", cytoclass::evaluation_to_json(eval_real, "real")},
            {"reconstructed", cytoclass::evaluation_to_json(eval_reconstructed, "reconstructed")},
            {"pair_reconstruction_l1", pairs},
            {"mean_reconstruction_l1", mean_reconstruction_l1},
            {"config_digests", config_digests},
            {"started_at", started_at},
            {"finished_at", finished_at}};
}

ExperimentReport run_experiment(const DatasetManifest& cells, const Translator& translator,
                                const cytoclass::Classifier& classifier, const ExperimentOptions& options) {
    ExperimentReport report;
    report.started_at = utc_now();
    report.config_digests = options.config_digests;
    const DatasetManifest test = cells.filter_split(Split::test);
    if (test.empty()) throw ExperimentError("the cell manifest has no test records");
    report.test_size = test.size();

    report.eval_real = cytoclass::evaluate(classifier, test);
    const DatasetManifest rec =
        build_reconstructed_testset(test, translator, options.output_dir / "reconstructed", options.reconstruct);
    report.eval_reconstructed = cytoclass::evaluate(classifier, rec);
    report.acc_real = {report.eval_real.overall_accuracy, report.eval_real.macro_accuracy};
    report.acc_reconstructed = {report.eval_reconstructed.overall_accuracy, report.eval_reconstructed.macro_accuracy};

    const auto metrics = reconstruction_metrics(test, rec, translator.image_size());
    report.mean_reconstruction_l1 = metrics.mean;
    std::map<CellClass, std::pair<double, std::size_t>> sums;
    for (const auto& r : test.records()) {
        auto& s = sums[cell_label(r)];
        s.first += metrics.per_image.at(r.id);
        ++s.second;
    }
    for (const auto& [cls, s] : sums) report.pair_reconstruction_l1[cls] = s.first / static_cast<double>(s.second);
    report.finished_at = utc_now();

    fs::create_directories(options.output_dir);
    rec.save(options.output_dir / "reconstructed_manifest.jsonl");
    cytoclass::write_evaluation_report(options.output_dir, report.eval_real, "real");
    cytoclass::write_evaluation_report(options.output_dir, report.eval_reconstructed, "reconstructed");
    std::ofstream out(options.output_dir / "experiment_report.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write experiment report in " + options.output_dir.string());
    out << report.to_json().dump(2) << '\n';
    spdlog::info("experiment: accuracy real {:.4f} reconstructed {:.4f}, mean reconstruction L1 {:.4f}",
                 report.acc_real.overall, report.acc_reconstructed.overall, report.mean_reconstruction_l1);
    return report;
}

}  // namespace cellbloom::harness
