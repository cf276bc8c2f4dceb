#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "cellbloom/classes.hpp"
#include "support/fixtures.hpp"

using namespace cellbloom;

TEST(ClassPairMap, DefaultPairsFollowIndexOrder) {
    const ClassPairMap pm;
    EXPECT_EQ(pm.map(CellClass::neutrophil), FlowerClass::coltsfoot);
    EXPECT_EQ(pm.map(CellClass::multinuclear), FlowerClass::buttercup);
    EXPECT_EQ(pm.map(CellClass::mast_cell), FlowerClass::daisy);
    EXPECT_EQ(pm.map(CellClass::macrophage), FlowerClass::windflower);
    EXPECT_EQ(pm.map(CellClass::lymphocyte), FlowerClass::daffodil);
    EXPECT_EQ(pm.map(CellClass::erythrocyte), FlowerClass::crocus);
    EXPECT_EQ(pm.map(CellClass::eosinophil), FlowerClass::sunflower);
}

TEST(ClassPairMap, IsABijection) {
    const ClassPairMap pm;
    std::set<FlowerClass> images;
    for (CellClass c : kAllCellClasses) {
        images.insert(pm.map(c));
        EXPECT_EQ(pm.unmap(pm.map(c)), c);
    }
    EXPECT_EQ(images.size(), kNumClasses);
    for (FlowerClass f : kAllFlowerClasses) EXPECT_EQ(pm.map(pm.unmap(f)), f);
}

TEST(ClassPairMap, CustomPermutationRoundTrips) {
    const std::array<FlowerClass, kNumClasses> rotated = {
        FlowerClass::sunflower, FlowerClass::coltsfoot, FlowerClass::buttercup, FlowerClass::daisy,
        FlowerClass::windflower, FlowerClass::daffodil, FlowerClass::crocus};
    const ClassPairMap pm(rotated);
    for (CellClass c : kAllCellClasses) EXPECT_EQ(pm.unmap(pm.map(c)), c);
    EXPECT_EQ(unmap_class(FlowerClass::sunflower, pm), CellClass::neutrophil);
}

TEST(ClassPairMap, RejectsNonBijectiveMaps) {
    std::array<FlowerClass, kNumClasses> dup = kAllFlowerClasses;
    dup[1] = dup[0];
    EXPECT_THROW(ClassPairMap{dup}, std::invalid_argument);
}

TEST(ClassPairMap, JsonFileRoundTrip) {
    test_support::TempDir dir("pairs");
    const std::array<FlowerClass, kNumClasses> swapped = {
        FlowerClass::buttercup, FlowerClass::coltsfoot, FlowerClass::daisy, FlowerClass::windflower,
        FlowerClass::daffodil,  FlowerClass::crocus,    FlowerClass::sunflower};
    const ClassPairMap pm(swapped);
    {
        std::ofstream out(dir / "pairs.json");
        out << pm.to_json();
    }
    EXPECT_EQ(ClassPairMap::from_json_file(dir / "pairs.json"), pm);
}

TEST(ClassPairMap, JsonFileMissingClassIsRejected) {
    test_support::TempDir dir("pairs");
    {
        std::ofstream out(dir / "pairs.json");
        out << R"({"neutrophil": "coltsfoot"})";
    }
    EXPECT_THROW(ClassPairMap::from_json_file(dir / "pairs.json"), std::invalid_argument);
}

TEST(Classes, NamesRoundTrip) {
    for (CellClass c : kAllCellClasses) EXPECT_EQ(parse_cell_class(to_string(c)), c);
    for (FlowerClass f : kAllFlowerClasses) EXPECT_EQ(parse_flower_class(to_string(f)), f);
    EXPECT_FALSE(parse_cell_class("rose").has_value());
    EXPECT_FALSE(parse_flower_class("neutrophil").has_value());
    EXPECT_THROW(parse_label(Domain::flower, "neutrophil"), std::invalid_argument);
    EXPECT_EQ(index_of(parse_label(Domain::cell, "eosinophil")), 6);
}

TEST(Classes, IndexAccessorsAreBounded) {
    EXPECT_EQ(cell_class_at(3), CellClass::macrophage);
    EXPECT_THROW(cell_class_at(7), std::out_of_range);
    EXPECT_THROW(flower_class_at(-1), std::out_of_range);
}
