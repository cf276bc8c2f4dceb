#include "cellbloom/bloomserve/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <mutex>

#include <spdlog/spdlog.h>

namespace cellbloom::bloomserve {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kTasksFile = "tasks.json";
constexpr const char* kLogFile = "annotations.jsonl";

std::string utc_now_millis() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    const std::size_t n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms));
    return buf;
}

ordered_json pairs_json(const ClassPairMap& pairs) {
    ordered_json j = ordered_json::object();
    for (auto c : kAllCellClasses) j[std::string(to_string(c))] = std::string(to_string(pairs.map(c)));
    return j;
}

ClassPairMap pairs_from_json(const json& j) {
    std::array<FlowerClass, kNumClasses> flower_for{};
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        const auto f = parse_flower_class(j.at(std::string(to_string(kAllCellClasses[i]))).get<std::string>());
        if (!f) throw BloomError("tasks.json has an unknown flower class in its pairing");
        flower_for[i] = *f;
    }
    return ClassPairMap(flower_for);
}

void fsync_path(const fs::path& p, int flags) {
    const int fd = ::open(p.c_str(), flags);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

}  // namespace

std::string_view to_string(TaskStatus s) { return s == TaskStatus::open ? "open" : "complete"; }

ordered_json task_view(const AnnotationTask& task) {
    ordered_json classes = ordered_json::array();
    for (auto f : kAllFlowerClasses) classes.push_back(std::string(to_string(f)));
    return {{"task_id", task.task_id}, {"image_url", "/api/images/" + task.task_id}, {"classes", classes}};
}

ordered_json to_json(const AnnotationRecord& r) {
    return {{"task_id", r.task_id},
            {"annotator", r.annotator_id},
            {"flower_class", std::string(to_string(r.choice))},
            {"client_timestamp", r.client_timestamp},
            {"server_timestamp", r.server_timestamp}};
}

AnnotationRecord annotation_from_json(const json& j) {
    AnnotationRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.annotator_id = j.at("annotator").get<std::string>();
    const auto f = parse_flower_class(j.at("flower_class").get<std::string>());
    if (!f) throw BloomError("unknown flower class in annotation log");
    r.choice = *f;
    r.client_timestamp = j.value("client_timestamp", "");
    r.server_timestamp = j.value("server_timestamp", "");
    return r;
}

AggregatedLabel aggregate_votes(const std::string& source_id, const std::array<int, kNumClasses>& votes,
                                const ClassPairMap& pairs) {
    int total = 0;
    std::size_t best = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        if (votes[k] < 0) throw std::invalid_argument("negative vote count");
        total += votes[k];
        if (votes[k] > votes[best]) best = k;
    }
    if (total == 0) throw BloomError("task for " + source_id + " has no votes");
    AggregatedLabel out;
    out.source_id = source_id;
    out.votes = votes;
    out.winner = kAllFlowerClasses[best];
    out.mapped = unmap_class(out.winner, pairs);
    out.agreement = static_cast<double>(votes[best]) / static_cast<double>(total);
    return out;
}

// ---- store ----

AnnotationStore::AnnotationStore(fs::path data_dir, ClassPairMap pairs, std::vector<AnnotationTask> tasks)
    : data_dir_(std::move(data_dir)), pairs_(pairs), tasks_(std::move(tasks)), votes_(tasks_.size()) {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (!index_.emplace(tasks_[i].task_id, i).second) throw BloomError("duplicate task id " + tasks_[i].task_id);
    }
}

std::unique_ptr<AnnotationStore> AnnotationStore::open(const fs::path& data_dir) {
    std::ifstream in(data_dir / kTasksFile);
    if (!in) throw BloomError("no tasks.json in " + data_dir.string());
    const json doc = json::parse(in);
    std::vector<AnnotationTask> tasks;
    for (const auto& t : doc.at("tasks")) {
        AnnotationTask task;
        task.task_id = t.at("task_id").get<std::string>();
        task.image = t.at("image").get<std::string>();
        task.required_annotations = t.at("required_annotations").get<int>();
        const auto& p = t.at("provenance");
        task.provenance.source_id = p.at("source_id").get<std::string>();
        task.provenance.source_path = p.at("source_path").get<std::string>();
        const auto split = parse_split(p.at("split").get<std::string>());
        const auto cell = parse_cell_class(p.at("cell_class").get<std::string>());
        const auto flower = parse_flower_class(p.at("flower_class").get<std::string>());
        if (!split || !cell || !flower) throw BloomError("task " + task.task_id + " has invalid provenance");
        task.provenance.split = *split;
        task.provenance.cell = *cell;
        task.provenance.flower = *flower;
        tasks.push_back(std::move(task));
    }
    std::unique_ptr<AnnotationStore> store(new AnnotationStore(data_dir, pairs_from_json(doc.at("pairs")), std::move(tasks)));

    const fs::path log_file = data_dir / kLogFile;
    std::ifstream log(log_file);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(log, line)) lines.push_back(line);
    std::uintmax_t offset = 0;
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::string& l = lines[n];
        const std::size_t line_no = n + 1;
        if (l.empty()) {
            offset += 1;
            continue;
        }
        AnnotationRecord r;
        try {
            r = annotation_from_json(json::parse(l));
        } catch (const std::exception& e) {
            // A torn final line was never acknowledged; cut it so later appends stay parseable.
            if (line_no == lines.size()) {
                spdlog::warn("dropping incomplete final annotation line {}", line_no);
                log.close();
                fs::resize_file(log_file, offset);
                break;
            }
            throw BloomError("annotations.jsonl:" + std::to_string(line_no) + ": " + e.what());
        }
        if (!store->index_.count(r.task_id)) {
            throw BloomError("annotations.jsonl:" + std::to_string(line_no) + ": unknown task " + r.task_id);
        }
        store->apply(r);
        offset += l.size() + 1;
    }
    if (fs::exists(log_file) && fs::file_size(log_file) + 1 == offset) {
        // Complete record whose newline never landed.
        std::ofstream(log_file, std::ios::app) << '\n';
    }
    return store;
}

void AnnotationStore::apply(const AnnotationRecord& r) {
    const std::size_t i = index_.at(r.task_id);
    auto& v = votes_[i];
    v.annotators.insert(r.annotator_id);
    ++v.counts[static_cast<std::size_t>(index_of(r.choice))];
    if (static_cast<int>(v.annotators.size()) >= tasks_[i].required_annotations) tasks_[i].status = TaskStatus::complete;
    log_.push_back(r);
}

void AnnotationStore::append_durably(const std::string& line) {
    const fs::path file = data_dir_ / kLogFile;
    const int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw BloomError("cannot open " + file.string() + ": " + std::strerror(errno));
    const std::string payload = line + "\n";
    std::size_t written = 0;
    while (written < payload.size()) {
        const ssize_t n = ::write(fd, payload.data() + written, payload.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            ::close(fd);
            throw BloomError("append to " + file.string() + " failed: " + std::strerror(err));
        }
        written += static_cast<std::size_t>(n);
    }
    const int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) throw BloomError("fsync of " + file.string() + " failed");
}

std::optional<AnnotationTask> AnnotationStore::task(const std::string& task_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(task_id);
    if (it == index_.end()) return std::nullopt;
    return tasks_[it->second];
}

std::vector<AnnotationTask> AnnotationStore::tasks() const {
    std::shared_lock lock(mutex_);
    return tasks_;
}

std::optional<AnnotationTask> AnnotationStore::next_task(const std::string& annotator_id) const {
    if (annotator_id.empty()) throw std::invalid_argument("annotator id must be non-empty");
    std::shared_lock lock(mutex_);
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i].status != TaskStatus::open || votes_[i].annotators.count(annotator_id)) continue;
        // Ties keep the earlier (lower) id.
        if (!best || votes_[i].annotators.size() < votes_[*best].annotators.size()) best = i;
    }
    if (!best) return std::nullopt;
    return tasks_[*best];
}

SubmitResult AnnotationStore::submit(const std::string& task_id, const std::string& annotator_id,
                                     const std::string& flower_class, const std::string& client_timestamp) {
    if (annotator_id.empty()) return {SubmitOutcome::invalid, "annotator must be non-empty"};
    const auto choice = parse_flower_class(flower_class);
    if (!choice) return {SubmitOutcome::invalid, "unknown flower class '" + flower_class + "'"};
    std::unique_lock lock(mutex_);
    auto it = index_.find(task_id);
    if (it == index_.end()) return {SubmitOutcome::not_found, "unknown task " + task_id};
    const std::size_t i = it->second;
    if (votes_[i].annotators.count(annotator_id)) {
        return {SubmitOutcome::conflict, "annotator already answered task " + task_id};
    }
    if (tasks_[i].status != TaskStatus::open) return {SubmitOutcome::conflict, "task " + task_id + " is complete"};
    AnnotationRecord r{task_id, annotator_id, *choice, client_timestamp, utc_now_millis()};
    append_durably(to_json(r).dump());
    apply(r);
    return {SubmitOutcome::created, {}};
}

AggregatedLabel AnnotationStore::aggregate(const std::string& task_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(task_id);
    if (it == index_.end()) throw BloomError("unknown task " + task_id);
    return aggregate_votes(tasks_[it->second].provenance.source_id, votes_[it->second].counts, pairs_);
}

std::vector<AnnotationRecord> AnnotationStore::annotations() const {
    std::shared_lock lock(mutex_);
    return log_;
}

Progress AnnotationStore::progress() const {
    std::shared_lock lock(mutex_);
    Progress p;
    for (const auto& t : tasks_) (t.status == TaskStatus::open ? p.open : p.complete) += 1;
    p.total_votes = log_.size();
    return p;
}

DatasetManifest AnnotationStore::export_labels() const {
    std::shared_lock lock(mutex_);
    DatasetManifest out(Domain::cell, 0);
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i].status != TaskStatus::complete) continue;
        const auto& prov = tasks_[i].provenance;
        const auto label = aggregate_votes(prov.source_id, votes_[i].counts, pairs_);
        ImageRecord r;
        r.id = prov.source_id;
        r.path = prov.source_path;
        r.domain = Domain::cell;
        r.label = label.mapped;
        r.split = prov.split;
        r.agreement = label.agreement;
        out.add(std::move(r));
    }
    if (out.empty()) spdlog::warn("no complete tasks; the label export is empty");
    return out;
}

fs::path AnnotationStore::image_path(const std::string& task_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(task_id);
    if (it == index_.end()) throw BloomError("unknown task " + task_id);
    return data_dir_ / tasks_[it->second].image;
}

// ---- task creation ----

void create_tasks(const DatasetManifest& cells, const harness::Translator& translator, const ClassPairMap& pairs,
                  int required_annotations, const fs::path& data_dir) {
    if (required_annotations < 1) throw std::invalid_argument("required_annotations must be at least 1");
    if (cells.domain() != Domain::cell) throw BloomError("tasks are created from a cell manifest");
    if (fs::exists(data_dir / kTasksFile)) throw BloomError(data_dir.string() + " already holds tasks");
    std::map<CellClass, std::vector<std::size_t>> by_class;
    const auto& records = cells.records();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.label || !std::holds_alternative<CellClass>(*r.label)) {
            throw BloomError("record " + r.id + " has no cell class label");
        }
        by_class[std::get<CellClass>(*r.label)].push_back(i);
    }
    for (const auto& [cls, idx] : by_class) {
        if (!translator.supports(cls)) throw BloomError("no transfer checkpoint for class " + std::string(to_string(cls)));
    }

    fs::create_directories(data_dir / "images");
    std::vector<AnnotationTask> tasks(records.size());
    for (const auto& [cls, idx] : by_class) {
        std::vector<Image> images;
        images.reserve(idx.size());
        for (auto i : idx) images.push_back(load_image(records[i].path, translator.image_size()));
        const auto translated = translator.translate(images, cls);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t i = idx[k];
            char id[32];
            std::snprintf(id, sizeof id, "task-%08zu", i + 1);
            AnnotationTask& t = tasks[i];
            t.task_id = id;
            t.image = fs::path("images") / (t.task_id + ".png");
            t.required_annotations = required_annotations;
            t.provenance = {records[i].id, fs::absolute(records[i].path), records[i].split, cls, pairs.map(cls)};
            write_png(data_dir / t.image, to_u8(translated[k].fake));
        }
    }

    ordered_json list = ordered_json::array();
    for (const auto& t : tasks) {
        list.push_back({{"task_id", t.task_id},
                        {"image", t.image.string()},
                        {"required_annotations", t.required_annotations},
                        {"provenance",
                         {{"source_id", t.provenance.source_id},
                          {"source_path", t.provenance.source_path.string()},
                          {"split", std::string(to_string(t.provenance.split))},
                          {"cell_class", std::string(to_string(t.provenance.cell))},
                          {"flower_class", std::string(to_string(t.provenance.flower))}}}});
    }
    const ordered_json doc = {{"pairs", pairs_json(pairs)}, {"tasks", list}};
    const fs::path tmp = data_dir / "tasks.json.partial";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw BloomError("cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
        if (!out) throw BloomError("failed writing " + tmp.string());
    }
    fsync_path(tmp, O_RDONLY);
    fs::rename(tmp, data_dir / kTasksFile);
    fsync_path(data_dir, O_RDONLY | O_DIRECTORY);
}

}  // namespace cellbloom::bloomserve
