// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cellbloom/bloomserve/server.hpp"
#include "cellbloom/bloomserve/store.hpp"
#include "cellbloom/classes.hpp"
#include "cellbloom/cytoclass/classifier.hpp"
#include "cellbloom/cytoclass/confusion.hpp"
#include "cellbloom/harness/experiment.hpp"
#include "cellbloom/harness/synthetic.hpp"
#include "cellbloom/hashing.hpp"
#include "cellbloom/manifest.hpp"
#include "cellbloom/transfer/cyclegan.hpp"
#include "cellbloom/transfer/losses.hpp"
#include "support/gradcheck.hpp"

using namespace cellbloom;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    int criterion = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    outcomes.push_back({criterion, name, pass, detail});
    std::printf("criterion %d (%s): %s | %s\n", criterion, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Collects failed checks by name.
struct Checks {
    std::vector<std::string> failed;
    int total = 0;
    void expect(bool ok, const std::string& what) {
        ++total;
        if (!ok) failed.push_back(what);
    }
    bool ok() const { return failed.empty(); }
    std::string summary() const {
        std::string s = std::to_string(total - static_cast<int>(failed.size())) + "/" + std::to_string(total) + " checks";
        for (const auto& f : failed) s += "; failed: " + f;
        return s;
    }
};

// ---- criterion 1 ----

void criterion_exact_properties() {
    const auto t0 = Clock::now();
    Checks c;

    const ClassPairMap pm;
    std::set<FlowerClass> image;
    bool inverse = true;
    for (CellClass cls : kAllCellClasses) {
        image.insert(pm.map(cls));
        inverse &= pm.unmap(pm.map(cls)) == cls;
    }
    c.expect(image.size() == kNumClasses && inverse, "pair map bijection");
    c.expect(pm.map(CellClass::neutrophil) == FlowerClass::coltsfoot &&
                 pm.map(CellClass::multinuclear) == FlowerClass::buttercup,
             "default pairings");

    c.expect(split_counts(80, {}) == SplitCounts{64, 8, 8}, "split counts 80 -> 64/8/8");
    {
        DatasetManifest m(Domain::flower, 0);
        for (int i = 0; i < 80; ++i) {
            ImageRecord r;
            r.id = "f" + std::to_string(i);
            r.path = "/x/" + r.id + ".png";
            r.domain = Domain::flower;
            r.label = FlowerClass::crocus;
            m.add(r);
        }
        const auto s = split_manifest(m, {}, 1);
        const auto k = static_cast<std::size_t>(index_of(FlowerClass::crocus));
        c.expect(s.split_census(Split::train)[k] == 64 && s.split_census(Split::test)[k] == 8 &&
                     s.split_census(Split::val)[k] == 8,
                 "split manifest 80 -> 64/8/8");
    }
    {
        DatasetManifest m(Domain::cell, 0);
        auto add = [&](const std::string& prefix, CellClass cls, int n) {
            for (int i = 0; i < n; ++i) {
                ImageRecord r;
                r.id = prefix + std::to_string(i);
                r.path = "/x/" + r.id + ".png";
                r.label = cls;
                r.split = Split::train;
                m.add(r);
            }
        };
        add("e", CellClass::eosinophil, 150);
        add("l", CellClass::lymphocyte, 2000);
        const auto o = oversample_training(m, kOversampleFloor, 2);
        c.expect(o.split_census(Split::train)[index_of(CellClass::eosinophil)] == 2000, "oversample 150 -> 2000");
        c.expect(o.split_census(Split::train)[index_of(CellClass::lymphocyte)] == 2000, "oversample 2000 -> 2000");
    }

    using nn::Tensor;
    using nn::Var;
    {
        const Var<double> x(Tensor<double>({1, 3, 4, 4}, std::vector<double>(48, 0.37)));
        c.expect(transfer::cycle_loss(x, x).value()[0] == 0.0, "cycle_loss(x, x) = 0");
        const Var<double> a(Tensor<double>({1, 3, 4, 4}, 0.25)), b(Tensor<double>({1, 3, 4, 4}, -0.25));
        c.expect(transfer::cycle_loss(a, b).value()[0] == 0.5, "cycle_loss of constants = 0.5");
    }
    {
        const Var<double> ones(Tensor<double>({1, 1, 3, 3}, 1.0)), zeros(Tensor<double>({1, 1, 3, 3}, 0.0)),
            halves(Tensor<double>({1, 1, 3, 3}, 0.5));
        c.expect(transfer::adversarial_loss(ones, true).value()[0] == 0.0, "adversarial real on 1 = 0");
        c.expect(transfer::adversarial_loss(zeros, false).value()[0] == 0.0, "adversarial fake on 0 = 0");
        c.expect(transfer::adversarial_loss(zeros, true).value()[0] == 1.0, "adversarial real on 0 = 1");
        c.expect(transfer::adversarial_loss(halves, true).value()[0] == 0.25, "adversarial on 0.5 = 0.25");
    }
    {
        // truth 0 0 0 1 1, predicted 0 1 0 1 0
        cytoclass::ConfusionMatrix cm(2);
        const int truth[] = {0, 0, 0, 1, 1}, pred[] = {0, 1, 0, 1, 0};
        for (int i = 0; i < 5; ++i) cm.add(truth[i], pred[i]);
        c.expect(cm.trace() == 3 && cm.total() == 5 && cm.overall_accuracy() == 3.0 / 5.0, "2-class CM accuracy");
        c.expect(cm.at(0, 1) == 1 && cm.at(1, 0) == 1, "2-class CM entries");
    }
    {
        const std::vector<double> tie = {0.2, 0.4, 0.4};
        c.expect(cytoclass::argmax_lowest(tie) == 1, "argmax tie to lowest index");
        std::array<int, kNumClasses> v{};
        v[index_of(FlowerClass::coltsfoot)] = 1;
        v[index_of(FlowerClass::buttercup)] = 1;
        const auto agg = bloomserve::aggregate_votes("s", v, pm);
        c.expect(agg.winner == FlowerClass::coltsfoot && agg.mapped == CellClass::neutrophil, "vote tie to lowest index");
    }
    const double secs = seconds_since(t0);
    c.expect(secs < 60.0, "runtime under 1 min");
    report(1, "exact properties", c.ok(), c.summary() + fmt(", %.2f s", secs));
}

// ---- criterion 2 ----

void criterion_gradient_check() {
    const auto t0 = Clock::now();
    // Float32 backpropagation against central differences of the same
    // objectives evaluated in double on the same weights.
    std::size_t samples = 0;
    double worst = 0.0;
    std::string worst_at;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto r = test_support::gradient_check<float, double>(seed, 8, 1e-6, 1e-5);
        samples += r.samples.size();
        for (const auto& s : r.samples) {
            if (s.relative_error > worst) {
                worst = s.relative_error;
                worst_at = "seed " + std::to_string(seed) + " " + s.parameter + "[" + std::to_string(s.element) + "]";
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = samples >= 32 && worst < 1e-2 && secs < 120.0;
    report(2, "gradient check", pass,
           fmt("%zu float32 samples, max relative error %.3g (%s), %.1f s", samples, worst, worst_at.c_str(), secs));
}

// ---- desk-scale replication ----

struct DeskRun {
    fs::path dir;
    DatasetManifest cells;
    std::map<CellClass, transfer::TransferCheckpoint> checkpoints;
    std::shared_ptr<cytoclass::Classifier> classifier;
    std::vector<cytoclass::ClassifierEpoch> classifier_history;
    harness::ExperimentReport report;
    double seconds = 0.0;
};

transfer::TransferConfig desk_transfer_config(CellClass cls, std::uint64_t seed) {
    auto cfg = transfer::TransferConfig::for_pair(cls);
    cfg.epochs = 20;
    cfg.epochs_constant = 10;
    cfg.image_size = 32;
    cfg.batch_size = 32;
    cfg.lr = 2e-4;
    cfg.generator = {3, 16, 3};
    cfg.discriminator = {3, 16, 2};
    cfg.seed = derive_seed(seed, "pair:" + std::string(to_string(cls)));
    return cfg;
}

cytoclass::ClassifierConfig desk_classifier_config(std::uint64_t seed) {
    cytoclass::ClassifierConfig cfg;
    cfg.epochs = 10;
    cfg.image_size = 32;
    cfg.base_width = 16;
    cfg.batch_size = 64;
    cfg.lr = 3e-3;
    cfg.seed = seed;
    return cfg;
}

DeskRun run_desk(const fs::path& dir, std::uint64_t seed) {
    const auto t0 = Clock::now();
    fs::remove_all(dir);
    DeskRun run;
    run.dir = dir;
    harness::SyntheticDomainSpec spec;
    spec.per_class = 200;
    spec.image_size = 32;
    spec.noise_sigma = 0.015;
    spec.seed = seed;
    auto [cells, flowers] = harness::generate_synthetic_domains(spec, dir / "data");
    run.cells = split_manifest(cells, {}, seed);
    const DatasetManifest flower_split = split_manifest(flowers, {}, seed);
    run.cells.save(dir / "data" / "cells.split.jsonl");

    for (CellClass cls : kAllCellClasses) {
        transfer::TrainOptions opts;
        opts.output_dir = dir / "transfer" / std::string(to_string(cls));
        run.checkpoints.emplace(cls, transfer::train_pair(desk_transfer_config(cls, seed), run.cells, flower_split, opts));
    }

    const auto oversampled = oversample_training(run.cells, kOversampleFloor, seed);
    auto trained = cytoclass::train_classifier(oversampled, desk_classifier_config(seed));
    run.classifier = trained.model;
    run.classifier_history = trained.history;
    run.classifier->save(dir / "classifier");
    cytoclass::write_classifier_history_csv(dir / "classifier" / "history.csv", trained.history);

    harness::ExperimentOptions opts;
    opts.output_dir = dir / "experiment";
    run.report = run_experiment(run.cells, harness::CheckpointTranslator(run.checkpoints), *run.classifier, opts);
    run.seconds = seconds_since(t0);
    return run;
}

void criterion_desk(const DeskRun& run) {
    Checks c;
    double first = 0.0, last = 0.0;
    for (const auto& [cls, ckpt] : run.checkpoints) {
        first += (ckpt.history.front().loss_cycle_a + ckpt.history.front().loss_cycle_b) / 2.0;
        last += (ckpt.history.back().loss_cycle_a + ckpt.history.back().loss_cycle_b) / 2.0;
        c.expect(ckpt.history.size() == 20, std::string(to_string(cls)) + " trained 20 epochs");
    }
    first /= static_cast<double>(run.checkpoints.size());
    last /= static_cast<double>(run.checkpoints.size());
    c.expect(last < 0.15, "final mean cycle L1 < 0.15");
    c.expect(last < first, "final mean cycle L1 below epoch 1");
    c.expect(run.report.mean_reconstruction_l1 < 0.15, "held-out test reconstruction L1 < 0.15");

    const double acc_real = run.report.acc_real.overall, acc_rec = run.report.acc_reconstructed.overall;
    c.expect(run.classifier_history.size() <= 10, "classifier within 10 epochs");
    c.expect(acc_real >= 0.95, "classifier accuracy >= 0.95 on real test cells");
    c.expect(std::abs(acc_real - acc_rec) <= 0.10, "|acc_real - acc_reconstructed| <= 0.10");
    c.expect(run.seconds < 45 * 60.0, "runtime under 45 min");
    report(3, "desk-scale replication", c.ok(),
           c.summary() +
               fmt(", cycle L1 epoch1 %.4f final %.4f, test reconstruction L1 %.4f, acc_real %.4f acc_rec %.4f "
                   "gap %.4f, %zu test cells, %.0f s",
                   first, last, run.report.mean_reconstruction_l1, acc_real, acc_rec, std::abs(acc_real - acc_rec),
                   run.report.test_size, run.seconds));
}

// ---- criterion 4 ----

bool close_rel(double a, double b, double tol) {
    if (a == b) return true;
    return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell.empty() ? std::nan("") : std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

void criterion_determinism(const DeskRun& a, const DeskRun& b) {
    Checks c;
    std::size_t entries = 0, bitwise = 0;
    double worst = 0.0;
    auto compare = [&](const fs::path& rel) {
        const auto ra = read_numeric_csv(a.dir / rel), rb = read_numeric_csv(b.dir / rel);
        bool ok = ra.size() == rb.size() && !ra.empty();
        for (std::size_t i = 0; ok && i < ra.size(); ++i) {
            ok &= ra[i].size() == rb[i].size();
            for (std::size_t j = 0; ok && j < ra[i].size(); ++j) {
                const double x = ra[i][j], y = rb[i][j];
                ++entries;
                const bool both_nan = std::isnan(x) && std::isnan(y);
                if (both_nan || x == y) {
                    ++bitwise;
                    continue;
                }
                worst = std::max(worst, std::abs(x - y) / std::max(std::abs(x), std::abs(y)));
                ok &= close_rel(x, y, 1e-6);
            }
        }
        c.expect(ok, rel.string());
    };
    for (CellClass cls : kAllCellClasses) compare(fs::path("transfer") / std::string(to_string(cls)) / "history.csv");
    compare(fs::path("classifier") / "history.csv");
    report(4, "determinism", c.ok(),
           c.summary() + fmt(", %zu entries, %zu bitwise equal, max relative difference %.3g", entries, bitwise, worst));
}

// ---- criterion 5 ----

void criterion_service(const DeskRun& run) {
    Checks c;
    const fs::path dir = run.dir / "service";
    fs::remove_all(dir);

    // Ten labeled test cells spread over all classes.
    DatasetManifest chosen(Domain::cell, 0);
    std::map<int, std::vector<const ImageRecord*>> by_class;
    for (const auto& r : run.cells.records()) {
        if (r.split == Split::test) by_class[index_of(*r.label)].push_back(&r);
    }
    for (std::size_t round = 0; chosen.size() < 10; ++round) {
        for (auto& [k, recs] : by_class) {
            if (chosen.size() < 10 && round < recs.size()) chosen.add(*recs[round]);
        }
    }
    const ClassPairMap pairs;
    bloomserve::create_tasks(chosen, harness::CheckpointTranslator(run.checkpoints), pairs, 3, dir);

    // Scripted annotators know the true class of each task's source cell.
    std::map<std::string, CellClass> truth_by_task;
    {
        const auto store = bloomserve::AnnotationStore::open(dir);
        for (const auto& t : store->tasks()) truth_by_task[t.task_id] = t.provenance.cell;
    }

    const std::string token = "acceptance-token";
    auto start = [&](std::shared_ptr<bloomserve::AnnotationStore>& store,
                     std::unique_ptr<bloomserve::BloomServer>& server) {
        store = std::shared_ptr<bloomserve::AnnotationStore>(bloomserve::AnnotationStore::open(dir));
        bloomserve::ServerOptions opts;
        opts.port = 0;
        opts.export_token = token;
        server = std::make_unique<bloomserve::BloomServer>(store, opts);
        return server->start();
    };
    std::shared_ptr<bloomserve::AnnotationStore> store;
    std::unique_ptr<bloomserve::BloomServer> server;
    int port = start(store, server);

    int accepted = 0;
    std::string first_task;
    for (const std::string annotator : {"ann-1", "ann-2", "ann-3"}) {
        httplib::Client client("127.0.0.1", port);
        for (int guard = 0; guard < 100; ++guard) {
            const auto next = client.Get("/api/tasks/next?annotator=" + annotator);
            if (!next || next->status == 204) break;
            const auto task = nlohmann::json::parse(next->body);
            const std::string id = task.at("task_id");
            if (first_task.empty()) first_task = id;
            const auto img = client.Get(task.at("image_url").get<std::string>());
            c.expect(img && img->status == 200, "image for " + id);
            const nlohmann::json vote = {{"task_id", id},
                                         {"annotator", annotator},
                                         {"flower_class", std::string(to_string(pairs.map(truth_by_task.at(id))))}};
            const auto res = client.Post("/api/annotations", vote.dump(), "application/json");
            if (res && res->status == 201) ++accepted;
        }
    }
    c.expect(accepted == 30, fmt("30 votes accepted (got %d)", accepted));

    httplib::Client client("127.0.0.1", port);
    const nlohmann::json dup = {{"task_id", first_task}, {"annotator", "ann-1"}, {"flower_class", "daisy"}};
    const auto dup_res = client.Post("/api/annotations", dup.dump(), "application/json");
    c.expect(dup_res && dup_res->status == 409, "duplicate vote returns 409");

    auto check_state = [&](httplib::Client& cl, const std::string& when) {
        const auto progress = cl.Get("/api/progress");
        const auto p = nlohmann::json::parse(progress->body);
        c.expect(p.at("complete") == 10 && p.at("open") == 0, "all tasks complete " + when);
        c.expect(p.at("total_votes") == 30, "30 votes stored " + when);
        const auto exported = cl.Get("/api/export", httplib::Headers{{"Authorization", "Bearer " + token}});
        c.expect(exported && exported->status == 200, "export succeeds " + when);
        if (!exported || exported->status != 200) return;
        const fs::path file = dir / ("export_" + when + ".jsonl");
        std::ofstream(file) << exported->body;
        const auto labels = DatasetManifest::load(file);
        bool same = labels.size() == chosen.size();
        for (const auto& r : chosen.records()) same &= labels.contains(r.id) && labels.at(r.id).label == r.label;
        c.expect(same, "export reproduces the 10 labels " + when);
    };
    check_state(client, "before-restart");

    server->stop();
    server.reset();
    store.reset();
    port = start(store, server);
    httplib::Client after("127.0.0.1", port);
    check_state(after, "after-restart");
    server->stop();
    report(5, "service round trip", c.ok(), c.summary());
}

// ---- criterion 6 ----

void criterion_identity(const DeskRun& run) {
    harness::ExperimentOptions opts;
    opts.output_dir = run.dir / "identity_control";
    const auto r = run_experiment(run.cells, harness::IdentityTranslator(32), *run.classifier, opts);
    const bool equal = r.eval_real.confusion == r.eval_reconstructed.confusion;
    report(6, "identity-transform control", equal,
           fmt("cm_real %s cm_reconstructed over %zu test cells, acc %.4f / %.4f", equal ? "==" : "!=", r.test_size,
               r.acc_real.overall, r.acc_reconstructed.overall));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-6"};
    std::string work_dir = "acceptance_work";
    std::vector<int> only;
    std::uint64_t seed = 7;
    app.add_option("--work-dir", work_dir, "Scratch directory for the desk-scale runs")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--seed", seed, "Seed of the desk-scale runs")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::info);

    auto selected = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
    auto guarded = [&](int k, const std::string& name, const std::function<void()>& body) {
        try {
            body();
        } catch (const std::exception& e) {
            report(k, name, false, std::string("exception: ") + e.what());
        }
    };

    if (selected(1)) guarded(1, "exact properties", criterion_exact_properties);
    if (selected(2)) guarded(2, "gradient check", criterion_gradient_check);

    const bool need_run = selected(3) || selected(4) || selected(5) || selected(6);
    std::optional<DeskRun> run_a;
    if (need_run) {
        guarded(3, "desk-scale replication", [&] { run_a = run_desk(fs::path(work_dir) / "run_a", seed); });
    }
    if (run_a) {
        if (selected(3)) guarded(3, "desk-scale replication", [&] { criterion_desk(*run_a); });
        if (selected(5)) guarded(5, "service round trip", [&] { criterion_service(*run_a); });
        if (selected(6)) guarded(6, "identity-transform control", [&] { criterion_identity(*run_a); });
        if (selected(4)) {
            guarded(4, "determinism", [&] {
                const DeskRun run_b = run_desk(fs::path(work_dir) / "run_b", seed);
                criterion_determinism(*run_a, run_b);
            });
        }
    }

    std::printf("\nsummary\n");
    bool all = true;
    for (const auto& o : outcomes) {
        std::printf("  [%s] criterion %d: %s\n", o.pass ? "PASS" : "FAIL", o.criterion, o.name.c_str());
        all &= o.pass;
    }
    return all ? 0 : 1;
}
