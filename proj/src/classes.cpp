#include "cellbloom/classes.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace cellbloom {

namespace {

constexpr std::array<std::string_view, kNumClasses> kCellNames = {
    "neutrophil", "multinuclear", "mast_cell", "macrophage", "lymphocyte", "erythrocyte", "eosinophil",
};

constexpr std::array<std::string_view, kNumClasses> kFlowerNames = {
    "coltsfoot", "buttercup", "daisy", "windflower", "daffodil", "crocus", "sunflower",
};

void require_index(int index) {
    if (index < 0 || index >= static_cast<int>(kNumClasses)) {
        throw std::out_of_range("class index " + std::to_string(index) + " out of range");
    }
}

}  // namespace

int index_of(const ClassLabel& label) {
    return std::visit([](auto c) { return static_cast<int>(c); }, label);
}

CellClass cell_class_at(int index) {
    require_index(index);
    return static_cast<CellClass>(index);
}

FlowerClass flower_class_at(int index) {
    require_index(index);
    return static_cast<FlowerClass>(index);
}

std::string_view to_string(CellClass c) { return kCellNames[static_cast<std::size_t>(index_of(c))]; }
std::string_view to_string(FlowerClass f) { return kFlowerNames[static_cast<std::size_t>(index_of(f))]; }
std::string_view to_string(Domain d) { return d == Domain::cell ? "cell" : "flower"; }

std::string label_name(const ClassLabel& label) {
    return std::visit([](auto c) { return std::string(to_string(c)); }, label);
}

std::optional<CellClass> parse_cell_class(std::string_view name) {
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (kCellNames[i] == name) return static_cast<CellClass>(i);
    }
    return std::nullopt;
}

std::optional<FlowerClass> parse_flower_class(std::string_view name) {
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (kFlowerNames[i] == name) return static_cast<FlowerClass>(i);
    }
    return std::nullopt;
}

std::optional<Domain> parse_domain(std::string_view name) {
    if (name == "cell") return Domain::cell;
    if (name == "flower") return Domain::flower;
    return std::nullopt;
}

ClassLabel parse_label(Domain domain, std::string_view name) {
    if (domain == Domain::cell) {
        if (auto c = parse_cell_class(name)) return *c;
    } else if (auto f = parse_flower_class(name)) {
        return *f;
    }
    throw std::invalid_argument("unknown " + std::string(to_string(domain)) + " class '" + std::string(name) + "'");
}

bool label_matches_domain(const ClassLabel& label, Domain domain) {
    return domain == Domain::cell ? std::holds_alternative<CellClass>(label)
                                  : std::holds_alternative<FlowerClass>(label);
}

ClassPairMap::ClassPairMap() : ClassPairMap(kAllFlowerClasses) {}

ClassPairMap::ClassPairMap(const std::array<FlowerClass, kNumClasses>& flower_for) : flower_for_(flower_for) {
    std::array<bool, kNumClasses> seen{};
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        const int f = index_of(flower_for[i]);
        require_index(f);
        if (seen[static_cast<std::size_t>(f)]) {
            throw std::invalid_argument("class pair map is not bijective: flower '" +
                                        std::string(to_string(flower_for[i])) + "' used twice");
        }
        seen[static_cast<std::size_t>(f)] = true;
        cell_for_[static_cast<std::size_t>(f)] = static_cast<CellClass>(i);
    }
}

ClassPairMap ClassPairMap::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open class pair map " + path.string());
    const auto doc = nlohmann::json::parse(in);
    if (!doc.is_object() || doc.size() != kNumClasses) {
        throw std::invalid_argument("class pair map must be an object with 7 entries");
    }
    std::array<FlowerClass, kNumClasses> flower_for{};
    std::array<bool, kNumClasses> covered{};
    for (const auto& [cell_name, flower_name] : doc.items()) {
        const auto cell = parse_cell_class(cell_name);
        const auto flower = parse_flower_class(flower_name.get<std::string>());
        if (!cell || !flower) {
            throw std::invalid_argument("class pair map entry '" + cell_name + "' -> '" +
                                        flower_name.get<std::string>() + "' names an unknown class");
        }
        flower_for[static_cast<std::size_t>(index_of(*cell))] = *flower;
        covered[static_cast<std::size_t>(index_of(*cell))] = true;
    }
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (!covered[i]) throw std::invalid_argument("class pair map misses " + std::string(kCellNames[i]));
    }
    return ClassPairMap(flower_for);
}

std::string ClassPairMap::to_json() const {
    nlohmann::ordered_json doc;
    for (auto c : kAllCellClasses) doc[std::string(to_string(c))] = std::string(to_string(map(c)));
    return doc.dump();
}

}  // namespace cellbloom
