#include "cellbloom/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cellbloom/hashing.hpp"
#include "cellbloom/image.hpp"
#include "cellbloom/random.hpp"

namespace cellbloom {

using json = nlohmann::ordered_json;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

std::optional<Split> parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    if (name == "unassigned") return Split::unassigned;
    return std::nullopt;
}

// ---- DatasetManifest ----

void DatasetManifest::add(ImageRecord record) {
    if (record.domain != domain_) {
        throw ManifestError("record " + record.id + " has domain " + std::string(to_string(record.domain)) +
                            " but manifest domain is " + std::string(to_string(domain_)));
    }
    if (record.label && !label_matches_domain(*record.label, domain_)) {
        throw ManifestError("record " + record.id + " carries a label from the wrong domain");
    }
    if (index_.count(record.id)) throw ManifestError("duplicate record id " + record.id);
    if (record.label) {
        ++census_[static_cast<std::size_t>(index_of(*record.label))];
    } else {
        ++unlabeled_;
    }
    index_.emplace(record.id, records_.size());
    records_.push_back(std::move(record));
}

const ImageRecord& DatasetManifest::at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ManifestError("no record with id " + id);
    return records_[it->second];
}

void DatasetManifest::set_split(const std::string& id, Split split) {
    auto it = index_.find(id);
    if (it == index_.end()) throw ManifestError("no record with id " + id);
    records_[it->second].split = split;
}

Census DatasetManifest::recount() const {
    Census c{};
    for (const auto& r : records_) {
        if (r.label) ++c[static_cast<std::size_t>(index_of(*r.label))];
    }
    return c;
}

Census DatasetManifest::split_census(Split split) const {
    Census c{};
    for (const auto& r : records_) {
        if (r.label && r.split == split) ++c[static_cast<std::size_t>(index_of(*r.label))];
    }
    return c;
}

DatasetManifest DatasetManifest::filter_split(Split split) const {
    DatasetManifest out(domain_, seed_);
    for (const auto& r : records_) {
        if (r.split == split) out.add(r);
    }
    return out;
}

DatasetManifest DatasetManifest::filter_class(int class_index) const {
    DatasetManifest out(domain_, seed_);
    for (const auto& r : records_) {
        if (r.label && index_of(*r.label) == class_index) out.add(r);
    }
    return out;
}

namespace {

json census_json(Domain domain, const Census& census) {
    json out = json::object();
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        const std::string name = domain == Domain::cell ? std::string(to_string(cell_class_at(static_cast<int>(i))))
                                                        : std::string(to_string(flower_class_at(static_cast<int>(i))));
        out[name] = census[i];
    }
    return out;
}

std::string portable_path(const fs::path& p, const fs::path& base) {
    if (p.is_absolute() && base.is_absolute()) {
        const fs::path rel = p.lexically_normal().lexically_relative(base.lexically_normal());
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    } else if (p.is_relative() && !base.empty()) {
        const fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal());
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return fs::absolute(p).lexically_normal().generic_string();
    }
    return p.generic_string();
}

}  // namespace

std::string DatasetManifest::to_jsonl(const fs::path& base_dir) const {
    const fs::path base = fs::absolute(base_dir);
    std::ostringstream out;
    json header = {{"kind", "header"},
                   {"domain", std::string(to_string(domain_))},
                   {"seed", seed_},
                   {"count", records_.size()},
                   {"census", census_json(domain_, census_)},
                   {"unlabeled", unlabeled_}};
    out << header.dump() << '\n';
    for (const auto& r : records_) {
        json line = {{"id", r.id},
                     {"path", portable_path(r.path, base)},
                     {"domain", std::string(to_string(r.domain))},
                     {"class", r.label ? json(label_name(*r.label)) : json(nullptr)},
                     {"split", std::string(to_string(r.split))}};
        if (r.source) {
            line["source"] = {{"slide", r.source->slide},
                              {"x", r.source->x},
                              {"y", r.source->y},
                              {"w", r.source->w},
                              {"h", r.source->h}};
        }
        if (r.agreement) line["agreement"] = *r.agreement;
        out << line.dump() << '\n';
    }
    return out.str();
}

void DatasetManifest::save(const fs::path& file) const {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const std::string text = to_jsonl(fs::absolute(file).parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw ManifestError("cannot write manifest " + file.string());
    out << text;
    if (!out) throw ManifestError("failed writing manifest " + file.string());
}

DatasetManifest DatasetManifest::load(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ManifestError("cannot open manifest " + file.string());
    const fs::path base = fs::absolute(file).parent_path();
    std::string line;
    if (!std::getline(in, line)) throw ManifestError("manifest " + file.string() + " is empty");
    const json header = json::parse(line);
    if (header.value("kind", "") != "header") throw ManifestError("manifest " + file.string() + " lacks a header line");
    const auto domain = parse_domain(header.at("domain").get<std::string>());
    if (!domain) throw ManifestError("manifest header has unknown domain");
    DatasetManifest m(*domain, header.at("seed").get<std::uint64_t>());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            ImageRecord r;
            r.id = j.at("id").get<std::string>();
            fs::path p = j.at("path").get<std::string>();
            r.path = p.is_absolute() ? p : (base / p).lexically_normal();
            const auto d = parse_domain(j.at("domain").get<std::string>());
            if (!d) throw ManifestError("unknown domain");
            r.domain = *d;
            if (!j.at("class").is_null()) r.label = parse_label(r.domain, j.at("class").get<std::string>());
            const auto split = parse_split(j.at("split").get<std::string>());
            if (!split) throw ManifestError("unknown split");
            r.split = *split;
            if (j.contains("source")) {
                const auto& s = j.at("source");
                r.source = SourceBox{s.at("slide").get<std::string>(), s.at("x").get<int>(), s.at("y").get<int>(),
                                     s.at("w").get<int>(), s.at("h").get<int>()};
            }
            if (j.contains("agreement")) r.agreement = j.at("agreement").get<double>();
            m.add(std::move(r));
        } catch (const std::exception& e) {
            throw ManifestError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (header.contains("census")) {
        const auto stored = header.at("census");
        if (stored != census_json(m.domain(), m.census())) {
            throw ManifestError("manifest " + file.string() + " census does not match its records");
        }
    }
    return m;
}

// ---- cell ingest ----

CropRect patch_rect(const CellAnnotation& box, int image_width, int image_height, int patch_size) {
    if (image_width < patch_size || image_height < patch_size) {
        throw IngestError("image of " + std::to_string(image_width) + "x" + std::to_string(image_height) +
                          " is smaller than patch size " + std::to_string(patch_size));
    }
    const double cx = box.x + box.w / 2.0;
    const double cy = box.y + box.h / 2.0;
    const int x0 = std::clamp(static_cast<int>(std::floor(cx - patch_size / 2.0)), 0, image_width - patch_size);
    const int y0 = std::clamp(static_cast<int>(std::floor(cy - patch_size / 2.0)), 0, image_height - patch_size);
    return {x0, y0, x0 + patch_size, y0 + patch_size};
}

std::vector<CellAnnotation> read_cell_annotations(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IngestError("cannot open annotation file " + file.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw IngestError("annotation file " + file.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw IngestError("annotation file must contain a JSON array of entries");
    std::vector<CellAnnotation> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        try {
            out.push_back(CellAnnotation{e.at("slide").get<std::string>(), e.at("x").get<int>(), e.at("y").get<int>(),
                                         e.at("w").get<int>(), e.at("h").get<int>(), e.at("label").get<std::string>()});
        } catch (const json::exception& ex) {
            throw IngestError("annotation entry " + std::to_string(i) + " is malformed: " + ex.what());
        }
    }
    return out;
}

namespace {

fs::path resolve_slide(const fs::path& image_root, const std::string& slide) {
    const fs::path direct = image_root / slide;
    if (fs::is_regular_file(direct)) return direct;
    for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
        fs::path candidate = direct;
        candidate += ext;
        if (fs::is_regular_file(candidate)) return candidate;
    }
    return {};
}

std::string entry_id(const std::string& slide, std::size_t index) {
    std::ostringstream id;
    id << fs::path(slide).stem().string() << '-' << std::setw(6) << std::setfill('0') << index;
    return id.str();
}

}  // namespace

CellIngestResult ingest_cells(const fs::path& annotation_file, const fs::path& image_root, int patch_size,
                              const fs::path& out_root, std::uint64_t seed) {
    if (patch_size < 16) throw IngestError("patch size must be at least 16, got " + std::to_string(patch_size));
    const auto entries = read_cell_annotations(annotation_file);

    std::map<std::string, std::vector<std::size_t>> by_slide;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (!parse_cell_class(e.label)) {
            throw IngestError("annotation entry " + std::to_string(i) + " has unknown cell class '" + e.label + "'");
        }
        if (resolve_slide(image_root, e.slide).empty()) {
            throw IngestError("annotation entry " + std::to_string(i) + " references missing image '" + e.slide +
                              "' under " + image_root.string());
        }
        by_slide[e.slide].push_back(i);
    }

    std::vector<std::optional<ImageRecord>> records(entries.size());
    CellIngestResult result{DatasetManifest(Domain::cell, seed), 0};
    for (const auto& [slide, indices] : by_slide) {
        const ImageU8 image = read_image(resolve_slide(image_root, slide));
        for (std::size_t i : indices) {
            const auto& e = entries[i];
            if (e.x + e.w <= 0 || e.y + e.h <= 0 || e.x >= image.width || e.y >= image.height) {
                ++result.skipped_outside;
                continue;
            }
            const CropRect rect = patch_rect(e, image.width, image.height, patch_size);
            const CellClass cls = *parse_cell_class(e.label);
            ImageRecord r;
            r.id = entry_id(slide, i);
            r.path = out_root / "cell" / std::string(to_string(cls)) / (r.id + ".png");
            r.domain = Domain::cell;
            r.label = cls;
            r.source = SourceBox{slide, e.x, e.y, e.w, e.h};
            write_png(r.path, crop(image, rect.x0, rect.y0, patch_size, patch_size));
            records[i] = std::move(r);
        }
    }
    for (auto& r : records) {
        if (r) result.manifest.add(std::move(*r));
    }
    if (result.skipped_outside > 0) {
        spdlog::warn("skipped {} annotation entries with boxes outside their image", result.skipped_outside);
    }
    return result;
}

// ---- flower ingest ----

FlowerAliases default_flower_aliases() {
    FlowerAliases a;
    for (auto f : kAllFlowerClasses) a.emplace(std::string(to_string(f)), f);
    a.emplace("colts_foot", FlowerClass::coltsfoot);
    a.emplace("buttercups", FlowerClass::buttercup);
    a.emplace("daisies", FlowerClass::daisy);
    a.emplace("windflowers", FlowerClass::windflower);
    a.emplace("anemone", FlowerClass::windflower);
    a.emplace("daffodils", FlowerClass::daffodil);
    a.emplace("crocuses", FlowerClass::crocus);
    a.emplace("sunflowers", FlowerClass::sunflower);
    return a;
}

FlowerAliases load_flower_aliases(const fs::path& json_file) {
    std::ifstream in(json_file);
    if (!in) throw IngestError("cannot open alias table " + json_file.string());
    const auto doc = json::parse(in);
    FlowerAliases a;
    for (auto f : kAllFlowerClasses) a.emplace(std::string(to_string(f)), f);
    for (const auto& [name, target] : doc.items()) {
        const auto f = parse_flower_class(target.get<std::string>());
        if (!f) throw IngestError("alias '" + name + "' targets unknown flower class '" + target.get<std::string>() + "'");
        a[name] = *f;
    }
    return a;
}

DatasetManifest ingest_flowers(const fs::path& image_root, const FlowerAliases& aliases, std::uint64_t seed) {
    if (!fs::is_directory(image_root)) throw IngestError("flower root " + image_root.string() + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(image_root)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());

    std::vector<std::string> unmatched;
    std::vector<std::pair<fs::path, FlowerClass>> matched;
    for (const auto& d : dirs) {
        std::string name = d.filename().string();
        std::string lowered = name;
        std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = aliases.find(name);
        if (it == aliases.end()) it = aliases.find(lowered);
        if (it == aliases.end()) {
            unmatched.push_back(name);
        } else {
            matched.emplace_back(d, it->second);
        }
    }
    if (!unmatched.empty()) {
        std::string list;
        for (const auto& n : unmatched) list += (list.empty() ? "" : ", ") + n;
        throw IngestError("unknown flower class directories: " + list);
    }

    DatasetManifest m(Domain::flower, seed);
    for (const auto& [dir, cls] : matched) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ImageRecord r;
            r.id = "flower-" + std::string(to_string(cls)) + "-" + f.stem().string();
            r.path = f;
            r.domain = Domain::flower;
            r.label = cls;
            m.add(std::move(r));
        }
    }
    return m;
}

// ---- splits ----

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
    // The epsilon absorbs representation error such as 310 * 0.1 = 31.000000000000004.
    const auto floor_of = [n](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
    };
    SplitCounts c;
    c.test = floor_of(ratios.test);
    c.val = floor_of(ratios.val);
    c.train = n - c.test - c.val;
    return c;
}

std::uint64_t split_order_key(std::uint64_t seed, const std::string& id) {
    return splitmix64(seed ^ fnv1a64(id));
}

DatasetManifest split_manifest(const DatasetManifest& m, const SplitRatios& ratios, std::uint64_t seed) {
    for (double r : {ratios.train, ratios.test, ratios.val}) {
        if (r < 0.0 || r > 1.0) throw ManifestError("split ratios must lie in [0, 1]");
    }
    if (std::abs(ratios.train + ratios.test + ratios.val - 1.0) > 1e-9) {
        throw ManifestError("split ratios must sum to 1");
    }
    std::map<int, std::vector<std::size_t>> strata;  // -1 = unlabeled
    for (std::size_t i = 0; i < m.records().size(); ++i) {
        const auto& r = m.records()[i];
        strata[r.label ? index_of(*r.label) : -1].push_back(i);
    }
    std::vector<Split> assigned(m.size(), Split::unassigned);
    for (auto& [cls, idx] : strata) {
        if (cls >= 0 && idx.size() < 3) {
            throw ManifestError("class " + label_name(*m.records()[idx.front()].label) + " has " +
                                std::to_string(idx.size()) + " records; at least 3 are needed to split");
        }
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto ka = split_order_key(seed, m.records()[a].id);
            const auto kb = split_order_key(seed, m.records()[b].id);
            return ka != kb ? ka < kb : m.records()[a].id < m.records()[b].id;
        });
        const SplitCounts counts = split_counts(idx.size(), ratios);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            assigned[idx[k]] = k < counts.train ? Split::train
                               : k < counts.train + counts.test ? Split::test
                                                                : Split::val;
        }
    }
    DatasetManifest out(m.domain(), seed);
    for (std::size_t i = 0; i < m.records().size(); ++i) {
        ImageRecord r = m.records()[i];
        r.split = assigned[i];
        out.add(std::move(r));
    }
    return out;
}

std::string original_id(const std::string& id) {
    const auto pos = id.find("#dup");
    return pos == std::string::npos ? id : id.substr(0, pos);
}

DatasetManifest oversample_training(const DatasetManifest& m, std::size_t floor_count, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kNumClasses> train_idx;
    Census present{};
    for (std::size_t i = 0; i < m.records().size(); ++i) {
        const auto& r = m.records()[i];
        if (!r.label) continue;
        const auto c = static_cast<std::size_t>(index_of(*r.label));
        ++present[c];
        if (r.split == Split::train) train_idx[c].push_back(i);
    }
    DatasetManifest out(m.domain(), m.seed());
    for (const auto& r : m.records()) out.add(r);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (present[c] == 0) continue;
        const auto& pool = train_idx[c];
        if (pool.empty()) {
            const std::string name = m.domain() == Domain::cell
                                         ? std::string(to_string(cell_class_at(static_cast<int>(c))))
                                         : std::string(to_string(flower_class_at(static_cast<int>(c))));
            throw ManifestError("class " + name + " has no training records to oversample");
        }
        if (pool.size() >= floor_count) continue;
        std::mt19937_64 rng(derive_seed(seed, "oversample:" + std::to_string(c)));
        std::size_t serial = 0;
        for (std::size_t added = pool.size(); added < floor_count; ++added) {
            ImageRecord dup = m.records()[pool[uniform_index(rng, pool.size())]];
            std::string id;
            do {
                id = original_id(dup.id) + "#dup" + std::to_string(++serial);
            } while (out.contains(id));
            dup.id = std::move(id);
            out.add(std::move(dup));
        }
    }
    return out;
}

}  // namespace cellbloom
