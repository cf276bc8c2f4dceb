#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellbloom/classes.hpp"
#include "cellbloom/harness/experiment.hpp"
#include "cellbloom/manifest.hpp"

namespace cellbloom::bloomserve {

namespace fs = std::filesystem;

class BloomError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Where a task's flower image came from. Never sent to annotators.
struct TaskProvenance {
    std::string source_id;
    fs::path source_path;
    Split split = Split::unassigned;
    CellClass cell = CellClass::neutrophil;
    FlowerClass flower = FlowerClass::coltsfoot;
    bool operator==(const TaskProvenance&) const = default;
};

enum class TaskStatus { open, complete };

struct AnnotationTask {
    std::string task_id;
    fs::path image;  // relative to the data directory
    int required_annotations = 3;
    TaskProvenance provenance;
    TaskStatus status = TaskStatus::open;
};

// The annotator-facing payload: {task_id, image_url, classes}.
nlohmann::ordered_json task_view(const AnnotationTask& task);

struct AnnotationRecord {
    std::string task_id;
    std::string annotator_id;
    FlowerClass choice = FlowerClass::coltsfoot;
    std::string client_timestamp;
    std::string server_timestamp;
};

nlohmann::ordered_json to_json(const AnnotationRecord& r);
AnnotationRecord annotation_from_json(const nlohmann::json& j);

struct AggregatedLabel {
    std::string source_id;
    FlowerClass winner = FlowerClass::coltsfoot;
    CellClass mapped = CellClass::neutrophil;
    std::array<int, kNumClasses> votes{};
    double agreement = 0.0;
};

// Majority vote with ties to the lowest flower index, mapped back to cells.
AggregatedLabel aggregate_votes(const std::string& source_id, const std::array<int, kNumClasses>& votes,
                                const ClassPairMap& pairs);

enum class SubmitOutcome { created, not_found, conflict, invalid };

struct SubmitResult {
    SubmitOutcome outcome = SubmitOutcome::created;
    std::string message;
};

struct Progress {
    std::size_t open = 0;
    std::size_t complete = 0;
    std::size_t total_votes = 0;
};

// Task set plus the append-only vote log, persisted under one directory:
//   tasks.json          task snapshot (with provenance)
//   images/<id>.png     flower images
//   annotations.jsonl   one accepted vote per line, fsynced before acknowledgment
// Submissions are serialized; readers share a lock.
class AnnotationStore {
public:
    // Replays tasks.json and annotations.jsonl.
    static std::unique_ptr<AnnotationStore> open(const fs::path& data_dir);

    const fs::path& data_dir() const { return data_dir_; }
    const ClassPairMap& pairs() const { return pairs_; }

    std::optional<AnnotationTask> task(const std::string& task_id) const;
    std::vector<AnnotationTask> tasks() const;
    // An open task the annotator has not answered, fewest votes first, then
    // lowest id.
    std::optional<AnnotationTask> next_task(const std::string& annotator_id) const;
    SubmitResult submit(const std::string& task_id, const std::string& annotator_id, const std::string& flower_class,
                        const std::string& client_timestamp = {});
    AggregatedLabel aggregate(const std::string& task_id) const;
    std::vector<AnnotationRecord> annotations() const;
    Progress progress() const;
    // Crowd-labeled cell records of every complete task.
    DatasetManifest export_labels() const;
    fs::path image_path(const std::string& task_id) const;

private:
    AnnotationStore(fs::path data_dir, ClassPairMap pairs, std::vector<AnnotationTask> tasks);
    void apply(const AnnotationRecord& r);
    void append_durably(const std::string& line);

    struct Votes {
        std::set<std::string> annotators;
        std::array<int, kNumClasses> counts{};
    };

    fs::path data_dir_;
    ClassPairMap pairs_;
    std::vector<AnnotationTask> tasks_;
    std::map<std::string, std::size_t> index_;
    std::vector<Votes> votes_;
    std::vector<AnnotationRecord> log_;
    mutable std::shared_mutex mutex_;
};

// Translates every record to its paired flower domain and writes a fresh
// store into `data_dir` (which must not already hold tasks). Task ids are
// task-00000001, ... in manifest order.
void create_tasks(const DatasetManifest& cells, const harness::Translator& translator, const ClassPairMap& pairs,
                  int required_annotations, const fs::path& data_dir);

std::string_view to_string(TaskStatus s);

}  // namespace cellbloom::bloomserve
