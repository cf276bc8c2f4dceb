#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace cellbloom {

inline constexpr std::size_t kNumClasses = 7;

// Canonical order; indices are used for every tie-break.
enum class CellClass : int {
    neutrophil = 0,
    multinuclear = 1,
    mast_cell = 2,
    macrophage = 3,
    lymphocyte = 4,
    erythrocyte = 5,
    eosinophil = 6,
};

enum class FlowerClass : int {
    coltsfoot = 0,
    buttercup = 1,
    daisy = 2,
    windflower = 3,
    daffodil = 4,
    crocus = 5,
    sunflower = 6,
};

enum class Domain { cell, flower };

using ClassLabel = std::variant<CellClass, FlowerClass>;

inline constexpr std::array<CellClass, kNumClasses> kAllCellClasses = {
    CellClass::neutrophil, CellClass::multinuclear, CellClass::mast_cell, CellClass::macrophage,
    CellClass::lymphocyte, CellClass::erythrocyte,  CellClass::eosinophil,
};

inline constexpr std::array<FlowerClass, kNumClasses> kAllFlowerClasses = {
    FlowerClass::coltsfoot, FlowerClass::buttercup, FlowerClass::daisy,   FlowerClass::windflower,
    FlowerClass::daffodil,  FlowerClass::crocus,    FlowerClass::sunflower,
};

constexpr int index_of(CellClass c) { return static_cast<int>(c); }
constexpr int index_of(FlowerClass f) { return static_cast<int>(f); }
int index_of(const ClassLabel& label);

CellClass cell_class_at(int index);
FlowerClass flower_class_at(int index);

std::string_view to_string(CellClass c);
std::string_view to_string(FlowerClass f);
std::string_view to_string(Domain d);
std::string label_name(const ClassLabel& label);

std::optional<CellClass> parse_cell_class(std::string_view name);
std::optional<FlowerClass> parse_flower_class(std::string_view name);
std::optional<Domain> parse_domain(std::string_view name);
// Parses a class name in the given domain; throws std::invalid_argument.
ClassLabel parse_label(Domain domain, std::string_view name);

bool label_matches_domain(const ClassLabel& label, Domain domain);

// Bijection between cell and flower classes. The default pairs equal indices:
// neutrophil-coltsfoot, multinuclear-buttercup, mast_cell-daisy,
// macrophage-windflower, lymphocyte-daffodil, erythrocyte-crocus,
// eosinophil-sunflower.
class ClassPairMap {
public:
    ClassPairMap();
    // flower_for[i] is the flower paired with cell class i. Throws unless bijective.
    explicit ClassPairMap(const std::array<FlowerClass, kNumClasses>& flower_for);

    // JSON object {"<cell class>": "<flower class>", ...} covering all 7 classes.
    static ClassPairMap from_json_file(const std::filesystem::path& path);
    std::string to_json() const;

    FlowerClass map(CellClass c) const { return flower_for_[static_cast<std::size_t>(index_of(c))]; }
    CellClass unmap(FlowerClass f) const { return cell_for_[static_cast<std::size_t>(index_of(f))]; }

    bool operator==(const ClassPairMap&) const = default;

private:
    std::array<FlowerClass, kNumClasses> flower_for_;
    std::array<CellClass, kNumClasses> cell_for_;
};

inline FlowerClass map_class(CellClass c, const ClassPairMap& pm) { return pm.map(c); }
inline CellClass unmap_class(FlowerClass f, const ClassPairMap& pm) { return pm.unmap(f); }

}  // namespace cellbloom
