#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cellbloom/bloomserve/server.hpp"
#include "cellbloom/bloomserve/store.hpp"
#include "cellbloom/cytoclass/classifier.hpp"
#include "cellbloom/harness/experiment.hpp"
#include "cellbloom/harness/synthetic.hpp"
#include "cellbloom/manifest.hpp"
#include "cellbloom/transfer/cyclegan.hpp"
#include "json_config.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace cellbloom::cli {
namespace {

// Bad input detected before any compute; exits with code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
    std::uint64_t seed = 0;
    std::string data_root = "data";
    std::string output_root = "runs";
    std::string log_level = "info";
};

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << ordered_json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

CellClass cell_class_arg(const std::string& name) {
    const auto c = parse_cell_class(name);
    if (!c) throw UsageError("unknown cell class '" + name + "'");
    return *c;
}

DatasetManifest load_manifest_arg(const fs::path& file) {
    if (!fs::is_regular_file(file)) throw UsageError("manifest " + file.string() + " does not exist");
    return DatasetManifest::load(file);
}

ClassPairMap pairs_arg(const std::string& file) {
    if (file.empty()) return ClassPairMap();
    if (!fs::is_regular_file(file)) throw UsageError("pair map " + file + " does not exist");
    return ClassPairMap::from_json_file(file);
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
    return file.parent_path() / (file.stem().string() + suffix);
}

// Records the producing command next to an artifact: <dir>/run_config.json for
// directories, <file>.run_config.json for single files.
void write_run_config(const fs::path& artifact, const CLI::App& app, const ordered_json& resolved = nullptr) {
    const bool is_dir = fs::is_directory(artifact);
    const fs::path file = is_dir ? artifact / "run_config.json" : fs::path(artifact.string() + ".run_config.json");
    ordered_json doc = {{"command", app.get_subcommands().front()->get_name()}, {"options", resolved_options(app)}};
    if (!resolved.is_null()) doc["resolved"] = resolved;
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << doc.dump(2) << '\n';
}

bloomserve::BloomServer* active_server = nullptr;

void handle_signal(int) {
    if (active_server != nullptr) active_server->stop();
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"cellbloom: cell <-> flower style transfer, classifier validation and crowd annotation"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON run config; command-line flags override its values");
    app.require_subcommand(1);

    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--data-root", g.data_root, "Root for datasets and task stores")->capture_default_str();
    app.add_option("--output-root", g.output_root, "Root for models and reports")->capture_default_str();
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    // ingest-cells
    auto* ingest_cells_cmd = app.add_subcommand("ingest-cells", "Crop labeled cell patches from annotated slides");
    std::string ic_annotations, ic_images, ic_out;
    int ic_patch = 64;
    ingest_cells_cmd->add_option("--annotations", ic_annotations, "JSON array of {slide, x, y, w, h, label}")
        ->required()
        ->check(CLI::ExistingFile);
    ingest_cells_cmd->add_option("--images", ic_images, "Directory holding the slide images")
        ->required()
        ->check(CLI::ExistingDirectory);
    ingest_cells_cmd->add_option("--patch-size", ic_patch, "Patch side in pixels")->capture_default_str();
    ingest_cells_cmd->add_option("--out", ic_out, "Manifest path (default <data-root>/cells_manifest.jsonl)");

    // ingest-flowers
    auto* ingest_flowers_cmd = app.add_subcommand("ingest-flowers", "Index a directory-per-class flower dataset");
    std::string if_images, if_aliases, if_out;
    ingest_flowers_cmd->add_option("--images", if_images, "Directory with one subdirectory per flower class")
        ->required()
        ->check(CLI::ExistingDirectory);
    ingest_flowers_cmd->add_option("--aliases", if_aliases, "JSON map of directory name to flower class")
        ->check(CLI::ExistingFile);
    ingest_flowers_cmd->add_option("--out", if_out, "Manifest path (default <data-root>/flowers_manifest.jsonl)");

    // split
    auto* split_cmd = app.add_subcommand("split", "Stratified train/val/test split");
    std::string sp_manifest, sp_out;
    SplitRatios ratios;
    split_cmd->add_option("--manifest", sp_manifest, "Input manifest")->required();
    split_cmd->add_option("--train", ratios.train, "Train fraction")->capture_default_str();
    split_cmd->add_option("--val", ratios.val, "Validation fraction")->capture_default_str();
    split_cmd->add_option("--test", ratios.test, "Test fraction")->capture_default_str();
    split_cmd->add_option("--out", sp_out, "Output manifest (default <input>.split.jsonl)");

    // oversample
    auto* oversample_cmd = app.add_subcommand("oversample", "Duplicate training records up to a per-class floor");
    std::string os_manifest, os_out;
    std::size_t os_floor = kOversampleFloor;
    oversample_cmd->add_option("--manifest", os_manifest, "Split manifest")->required();
    oversample_cmd->add_option("--floor", os_floor, "Training records per class")->capture_default_str();
    oversample_cmd->add_option("--out", os_out, "Output manifest (default <input>.oversampled.jsonl)");

    // synth-data
    auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic cell and flower domains");
    harness::SyntheticDomainSpec synth;
    std::string sy_out;
    synth_cmd->add_option("--per-class", synth.per_class, "Images per class and domain")->capture_default_str();
    synth_cmd->add_option("--image-size", synth.image_size, "Image side")->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise_sigma, "Additive noise sigma in [0, 1] units")->capture_default_str();
    synth_cmd->add_option("--out-dir", sy_out, "Output directory (default <data-root>/synthetic)");

    // train-transfer
    auto* tt_cmd = app.add_subcommand("train-transfer", "Train one cell <-> flower translation pair");
    transfer::TransferConfig tt;
    std::string tt_pair, tt_cells, tt_flowers, tt_pairs_file, tt_out, tt_resume_from;
    bool tt_resume = false;
    tt_cmd->add_option("--pair", tt_pair, "Cell class; its paired flower class is implied")->required();
    tt_cmd->add_option("--cells", tt_cells, "Split cell manifest")->required();
    tt_cmd->add_option("--flowers", tt_flowers, "Split flower manifest")->required();
    tt_cmd->add_option("--pairs-file", tt_pairs_file, "JSON cell -> flower pairing (default pairing otherwise)");
    tt_cmd->add_option("--epochs", tt.epochs)->capture_default_str();
    tt_cmd->add_option("--epochs-constant", tt.epochs_constant, "Epochs before linear lr decay")->capture_default_str();
    tt_cmd->add_option("--image-size", tt.image_size)->capture_default_str();
    tt_cmd->add_option("--batch-size", tt.batch_size)->capture_default_str();
    tt_cmd->add_option("--lr", tt.lr)->capture_default_str();
    tt_cmd->add_option("--beta1", tt.beta1)->capture_default_str();
    tt_cmd->add_option("--beta2", tt.beta2)->capture_default_str();
    tt_cmd->add_option("--lambda-cycle", tt.lambda_cycle)->capture_default_str();
    tt_cmd->add_option("--lambda-identity", tt.lambda_identity)->capture_default_str();
    tt_cmd->add_option("--pool-size", tt.pool_capacity)->capture_default_str();
    tt_cmd->add_option("--generator-width", tt.generator.base_width)->capture_default_str();
    tt_cmd->add_option("--generator-blocks", tt.generator.residual_blocks)->capture_default_str();
    tt_cmd->add_option("--discriminator-width", tt.discriminator.base_width)->capture_default_str();
    tt_cmd->add_option("--discriminator-stages", tt.discriminator.stride2_stages)->capture_default_str();
    tt_cmd->add_option("--checkpoint-every", tt.checkpoint_every, "0 writes only the final checkpoint")
        ->capture_default_str();
    tt_cmd->add_flag("--resume", tt_resume, "Resume from the latest checkpoint in the output directory");
    tt_cmd->add_option("--resume-from", tt_resume_from, "Resume from this checkpoint directory");
    tt_cmd->add_option("--out-dir", tt_out, "Run directory (default <output-root>/transfer/<pair>)");

    // transform
    auto* tf_cmd = app.add_subcommand("transform", "Translate images with a trained pair");
    std::string tf_ckpt, tf_input, tf_direction = "cell-to-flower", tf_out;
    tf_cmd->add_option("--checkpoint", tf_ckpt, "Checkpoint or run directory")->required();
    tf_cmd->add_option("--input", tf_input, "Image file or manifest (.jsonl)")->required()->check(CLI::ExistingFile);
    tf_cmd->add_option("--direction", tf_direction)
        ->check(CLI::IsMember({"cell-to-flower", "flower-to-cell"}))
        ->capture_default_str();
    tf_cmd->add_option("--out-dir", tf_out, "Output directory (default <output-root>/transformed)");

    // train-classifier
    auto* tc_cmd = app.add_subcommand("train-classifier", "Train the 7-class cell classifier");
    cytoclass::ClassifierConfig tc;
    std::string tc_manifest, tc_out, tc_pretrained;
    bool tc_no_augment = false;
    tc_cmd->add_option("--manifest", tc_manifest, "Split (optionally oversampled) cell manifest")->required();
    tc_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
    tc_cmd->add_option("--lr", tc.lr)->capture_default_str();
    tc_cmd->add_option("--batch-size", tc.batch_size)->capture_default_str();
    tc_cmd->add_option("--image-size", tc.image_size)->capture_default_str();
    tc_cmd->add_option("--width", tc.base_width, "Base channel width")->capture_default_str();
    tc_cmd->add_option("--pretrained", tc_pretrained, "Safetensors state to initialize from")->check(CLI::ExistingFile);
    tc_cmd->add_flag("--no-augment", tc_no_augment, "Disable on-the-fly augmentation");
    tc_cmd->add_option("--out-dir", tc_out, "Model directory (default <output-root>/classifier)");

    // evaluate
    auto* ev_cmd = app.add_subcommand("evaluate", "Evaluate a classifier on a cell manifest");
    std::string ev_manifest, ev_classifier, ev_split = "test", ev_tag = "real", ev_out;
    ev_cmd->add_option("--manifest", ev_manifest, "Cell manifest")->required();
    ev_cmd->add_option("--classifier", ev_classifier, "Model directory (default <output-root>/classifier)");
    ev_cmd->add_option("--split", ev_split, "Records to evaluate")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    ev_cmd->add_option("--tag", ev_tag, "Report name prefix")->capture_default_str();
    ev_cmd->add_option("--out-dir", ev_out, "Report directory (default <output-root>/evaluation)");

    // run-experiment
    auto* rx_cmd = app.add_subcommand("run-experiment", "Real vs reconstructed test-set evaluation");
    std::string rx_cells, rx_transfer, rx_classifier, rx_out;
    bool rx_identity = false;
    int rx_triplets = 4;
    rx_cmd->add_option("--cells", rx_cells, "Split cell manifest")->required();
    rx_cmd->add_option("--transfer-root", rx_transfer, "Per-class run directories (default <output-root>/transfer)");
    rx_cmd->add_option("--classifier", rx_classifier, "Model directory (default <output-root>/classifier)");
    rx_cmd->add_flag("--identity", rx_identity, "Route through identity transforms instead of trained pairs");
    rx_cmd->add_option("--triplets", rx_triplets, "Original/fake/reconstructed triplets dumped per class (-1 = all)")
        ->capture_default_str();
    rx_cmd->add_option("--out-dir", rx_out, "Report directory (default <output-root>/experiment)");

    // make-tasks
    auto* mt_cmd = app.add_subcommand("make-tasks", "Create annotation tasks from cell images");
    std::string mt_cells, mt_transfer, mt_pairs_file, mt_split = "test", mt_dir;
    int mt_required = 3;
    std::size_t mt_limit = 0;
    mt_cmd->add_option("--cells", mt_cells, "Labeled cell manifest")->required();
    mt_cmd->add_option("--transfer-root", mt_transfer, "Per-class run directories (default <output-root>/transfer)");
    mt_cmd->add_option("--pairs-file", mt_pairs_file, "JSON cell -> flower pairing");
    mt_cmd->add_option("--split", mt_split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
    mt_cmd->add_option("--limit", mt_limit, "Use at most this many records (0 = all)")->capture_default_str();
    mt_cmd->add_option("--required", mt_required, "Distinct annotators per task")->capture_default_str();
    mt_cmd->add_option("--tasks-dir", mt_dir, "Task store (default <data-root>/tasks)");

    // serve
    auto* sv_cmd = app.add_subcommand("serve", "Serve annotation tasks over HTTP");
    std::string sv_dir, sv_static;
    bloomserve::ServerOptions sv;
    sv_cmd->add_option("--tasks-dir", sv_dir, "Task store (default <data-root>/tasks)");
    sv_cmd->add_option("--host", sv.host)->capture_default_str();
    sv_cmd->add_option("--port", sv.port)->capture_default_str();
    sv_cmd->add_option("--static-dir", sv_static, "Browser client files served at /")->check(CLI::ExistingDirectory);

    // export-labels
    auto* ex_cmd = app.add_subcommand("export-labels", "Write crowd labels of complete tasks as a cell manifest");
    std::string ex_dir, ex_out;
    ex_cmd->add_option("--tasks-dir", ex_dir, "Task store (default <data-root>/tasks)");
    ex_cmd->add_option("--out", ex_out, "Manifest path (default <tasks-dir>/crowd_labels.jsonl)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    }

    auto logger = spdlog::stderr_color_mt("cellbloom");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(g.log_level));

    const fs::path data_root = g.data_root, output_root = g.output_root;
    try {
        if (ingest_cells_cmd->parsed()) {
            if (ic_patch < 16) throw UsageError("--patch-size must be at least 16");
            const fs::path out = ic_out.empty() ? data_root / "cells_manifest.jsonl" : fs::path(ic_out);
            auto result = ingest_cells(ic_annotations, ic_images, ic_patch, data_root, g.seed);
            result.manifest.save(out);
            write_run_config(out, app);
            spdlog::info("ingested {} cell patches ({} boxes outside their image) -> {}", result.manifest.size(),
                         result.skipped_outside, out.string());
        } else if (ingest_flowers_cmd->parsed()) {
            const fs::path out = if_out.empty() ? data_root / "flowers_manifest.jsonl" : fs::path(if_out);
            const auto aliases = if_aliases.empty() ? default_flower_aliases() : load_flower_aliases(if_aliases);
            const auto m = ingest_flowers(if_images, aliases, g.seed);
            m.save(out);
            write_run_config(out, app);
            spdlog::info("indexed {} flower images -> {}", m.size(), out.string());
        } else if (split_cmd->parsed()) {
            const auto m = load_manifest_arg(sp_manifest);
            const fs::path out = sp_out.empty() ? sibling(sp_manifest, ".split.jsonl") : fs::path(sp_out);
            const auto s = split_manifest(m, ratios, g.seed);
            s.save(out);
            write_run_config(out, app);
            spdlog::info("split {} records -> {}", s.size(), out.string());
        } else if (oversample_cmd->parsed()) {
            const auto m = load_manifest_arg(os_manifest);
            const fs::path out = os_out.empty() ? sibling(os_manifest, ".oversampled.jsonl") : fs::path(os_out);
            const auto o = oversample_training(m, os_floor, g.seed);
            o.save(out);
            write_run_config(out, app);
            spdlog::info("oversampled {} -> {} records -> {}", m.size(), o.size(), out.string());
        } else if (synth_cmd->parsed()) {
            synth.seed = g.seed;
            try {
                synth.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const fs::path out = sy_out.empty() ? data_root / "synthetic" : fs::path(sy_out);
            auto [cells, flowers] = harness::generate_synthetic_domains(synth, out);
            cells.save(out / "cell_manifest.jsonl");
            flowers.save(out / "flower_manifest.jsonl");
            write_run_config(out, app);
            spdlog::info("wrote {} cell and {} flower images under {}", cells.size(), flowers.size(), out.string());
        } else if (tt_cmd->parsed()) {
            const CellClass cell = cell_class_arg(tt_pair);
            const ClassPairMap pairs = pairs_arg(tt_pairs_file);
            tt.cell = cell;
            tt.flower = pairs.map(cell);
            tt.seed = g.seed;
            try {
                tt.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const auto cells = load_manifest_arg(tt_cells);
            const auto flowers = load_manifest_arg(tt_flowers);
            transfer::TrainOptions opts;
            opts.output_dir = tt_out.empty() ? output_root / "transfer" / std::string(to_string(cell)) : fs::path(tt_out);
            if (!tt_resume_from.empty()) {
                opts.resume_from = tt_resume_from;
            } else if (tt_resume) {
                if (!fs::exists(opts.output_dir / "latest")) throw UsageError("nothing to resume in " + opts.output_dir.string());
                opts.resume_from = opts.output_dir;
            }
            fs::create_directories(opts.output_dir);
            write_run_config(opts.output_dir, app, tt.to_json());
            const auto ckpt = transfer::train_pair(tt, cells, flowers, opts);
            spdlog::info("trained {} <-> {} for {} epochs -> {}", to_string(tt.cell), to_string(tt.flower), ckpt.epoch,
                         ckpt.directory.string());
        } else if (tf_cmd->parsed()) {
            const auto ckpt = transfer::load_checkpoint(tf_ckpt);
            const auto dir = tf_direction == "cell-to-flower" ? transfer::Direction::cell_to_flower
                                                               : transfer::Direction::flower_to_cell;
            const fs::path out = tf_out.empty() ? output_root / "transformed" : fs::path(tf_out);
            std::vector<std::pair<std::string, fs::path>> inputs;
            if (fs::path(tf_input).extension() == ".jsonl") {
                for (const auto& r : DatasetManifest::load(tf_input).records()) inputs.emplace_back(r.id, r.path);
            } else {
                inputs.emplace_back(fs::path(tf_input).stem().string(), tf_input);
            }
            fs::create_directories(out);
            for (const auto& [id, path] : inputs) {
                const Image img = load_image(path, ckpt.config.image_size);
                write_png(out / (id + ".png"), to_u8(transfer::transform(img, ckpt, dir)));
            }
            write_run_config(out, app);
            spdlog::info("transformed {} images -> {}", inputs.size(), out.string());
        } else if (tc_cmd->parsed()) {
            tc.seed = g.seed;
            if (!tc_pretrained.empty()) tc.pretrained_init = tc_pretrained;
            if (tc_no_augment) tc.augmentation = AugmentationSpec::identity();
            try {
                tc.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const auto m = load_manifest_arg(tc_manifest);
            const fs::path out = tc_out.empty() ? output_root / "classifier" : fs::path(tc_out);
            const auto result = cytoclass::train_classifier(m, tc);
            result.model->save(out);
            cytoclass::write_classifier_history_csv(out / "history.csv", result.history);
            ordered_json resolved = tc.to_json();
            resolved["best_epoch"] = result.best_epoch;
            write_run_config(out, app, resolved);
            spdlog::info("classifier saved to {} (best epoch {})", out.string(), result.best_epoch);
        } else if (ev_cmd->parsed()) {
            auto m = load_manifest_arg(ev_manifest);
            if (ev_split != "all") m = m.filter_split(*parse_split(ev_split));
            if (m.empty()) throw UsageError("no " + ev_split + " records in " + ev_manifest);
            const fs::path model_dir = ev_classifier.empty() ? output_root / "classifier" : fs::path(ev_classifier);
            const auto model = cytoclass::Classifier::load(model_dir);
            const fs::path out = ev_out.empty() ? output_root / "evaluation" : fs::path(ev_out);
            const auto result = cytoclass::evaluate(model, m);
            cytoclass::write_evaluation_report(out, result, ev_tag);
            write_run_config(out, app);
            spdlog::info("overall accuracy {:.4f}, macro accuracy {:.4f}", result.overall_accuracy, result.macro_accuracy);
        } else if (rx_cmd->parsed()) {
            const auto cells = load_manifest_arg(rx_cells);
            const fs::path model_dir = rx_classifier.empty() ? output_root / "classifier" : fs::path(rx_classifier);
            const auto model = cytoclass::Classifier::load(model_dir);
            harness::ExperimentOptions opts;
            opts.output_dir = rx_out.empty() ? output_root / "experiment" : fs::path(rx_out);
            opts.reconstruct.triplet_dir = opts.output_dir / "triplets";
            opts.reconstruct.max_triplets_per_class = rx_triplets;
            opts.config_digests["classifier"] = harness::config_digest(model.config().to_json());
            std::unique_ptr<harness::Translator> translator;
            if (rx_identity) {
                translator = std::make_unique<harness::IdentityTranslator>(model.config().image_size);
            } else {
                const fs::path root = rx_transfer.empty() ? output_root / "transfer" : fs::path(rx_transfer);
                auto ck = std::make_unique<harness::CheckpointTranslator>(harness::CheckpointTranslator::from_directory(root));
                for (const auto& [cls, c] : ck->checkpoints()) {
                    opts.config_digests["transfer:" + std::string(to_string(cls))] = harness::config_digest(c.config.to_json());
                }
                translator = std::move(ck);
            }
            fs::create_directories(opts.output_dir);
            const auto report = harness::run_experiment(cells, *translator, model, opts);
            write_run_config(opts.output_dir, app);
            std::cout << (opts.output_dir / "experiment_report.json").string() << '\n';
            (void)report;
        } else if (mt_cmd->parsed()) {
            if (mt_required < 1) throw UsageError("--required must be at least 1");
            auto cells = load_manifest_arg(mt_cells);
            if (mt_split != "all") cells = cells.filter_split(*parse_split(mt_split));
            if (mt_limit > 0 && cells.size() > mt_limit) {
                DatasetManifest limited(cells.domain(), cells.seed());
                for (std::size_t i = 0; i < mt_limit; ++i) limited.add(cells.records()[i]);
                cells = std::move(limited);
            }
            if (cells.empty()) throw UsageError("no records to turn into tasks");
            const fs::path root = mt_transfer.empty() ? output_root / "transfer" : fs::path(mt_transfer);
            const auto translator = harness::CheckpointTranslator::from_directory(root);
            const fs::path dir = mt_dir.empty() ? data_root / "tasks" : fs::path(mt_dir);
            bloomserve::create_tasks(cells, translator, pairs_arg(mt_pairs_file), mt_required, dir);
            write_run_config(dir, app);
            spdlog::info("created {} tasks in {}", cells.size(), dir.string());
        } else if (sv_cmd->parsed()) {
            const fs::path dir = sv_dir.empty() ? data_root / "tasks" : fs::path(sv_dir);
            if (!fs::is_regular_file(dir / "tasks.json")) throw UsageError("no task store at " + dir.string());
            if (!sv_static.empty()) sv.static_dir = sv_static;
            sv.export_token = bloomserve::export_token_from_env();
            if (!sv.export_token) spdlog::warn("{} is unset; /api/export will answer 403", bloomserve::kExportTokenEnv);
            std::shared_ptr<bloomserve::AnnotationStore> store = bloomserve::AnnotationStore::open(dir);
            bloomserve::BloomServer server(store, sv);
            active_server = &server;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            server.run();
            active_server = nullptr;
        } else if (ex_cmd->parsed()) {
            const fs::path dir = ex_dir.empty() ? data_root / "tasks" : fs::path(ex_dir);
            if (!fs::is_regular_file(dir / "tasks.json")) throw UsageError("no task store at " + dir.string());
            const auto store = bloomserve::AnnotationStore::open(dir);
            const fs::path out = ex_out.empty() ? dir / "crowd_labels.jsonl" : fs::path(ex_out);
            const auto labels = store->export_labels();
            labels.save(out);
            write_run_config(out, app);
            spdlog::info("exported {} crowd labels -> {}", labels.size(), out.string());
        }
    } catch (const UsageError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    } catch (const ManifestError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    } catch (const IngestError& e) {
        print_error("usage", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        print_error("runtime", e.what());
        return kExitRuntime;
    }
    return 0;
}

}  // namespace cellbloom::cli

int main(int argc, char** argv) { return cellbloom::cli::run(argc, argv); }
