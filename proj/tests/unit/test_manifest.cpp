#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>

#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"
#include "support/fixtures.hpp"

using namespace cellbloom;
using test_support::cell_manifest;
using test_support::cell_record;
using test_support::TempDir;

namespace {

std::map<Split, std::size_t> split_sizes(const DatasetManifest& m) {
    std::map<Split, std::size_t> out;
    for (const auto& r : m.records()) ++out[r.split];
    return out;
}

}  // namespace

TEST(SplitCounts, EightyImagesGiveSixtyFourEightEight) {
    const SplitCounts c = split_counts(80, SplitRatios{});
    EXPECT_EQ(c, (SplitCounts{64, 8, 8}));
}

TEST(SplitCounts, FloorsTestAndValAndGivesRemainderToTrain) {
    EXPECT_EQ(split_counts(105, {}), (SplitCounts{85, 10, 10}));
    EXPECT_EQ(split_counts(310, {}), (SplitCounts{248, 31, 31}));
    EXPECT_EQ(split_counts(3, {}), (SplitCounts{3, 0, 0}));
}

TEST(SplitCounts, PartitionPropertyOverManySizes) {
    for (std::size_t n = 0; n <= 5000; ++n) {
        const SplitCounts c = split_counts(n, {});
        ASSERT_EQ(c.train + c.test + c.val, n) << n;
        // Integer floor of n/10 as the oracle.
        ASSERT_EQ(c.test, n / 10) << n;
        ASSERT_EQ(c.val, n / 10) << n;
    }
}

TEST(SplitManifest, EightyPerClassSplitsSixtyFourEightEight) {
    const DatasetManifest m = cell_manifest({80, 80, 80, 80, 80, 80, 80});
    const DatasetManifest s = split_manifest(m, {}, 11);
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        EXPECT_EQ(s.split_census(Split::train)[k], 64u);
        EXPECT_EQ(s.split_census(Split::val)[k], 8u);
        EXPECT_EQ(s.split_census(Split::test)[k], 8u);
    }
}

TEST(SplitManifest, StratifiedPartitionForRandomCensuses) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::array<std::size_t, kNumClasses> sizes{};
        for (auto& n : sizes) n = 3 + rng() % 200;
        const DatasetManifest m = cell_manifest(sizes);
        const DatasetManifest s = split_manifest(m, {}, rng());
        ASSERT_EQ(s.size(), m.size());
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            const SplitCounts c = split_counts(sizes[k], {});
            ASSERT_EQ(s.split_census(Split::train)[k], c.train);
            ASSERT_EQ(s.split_census(Split::test)[k], c.test);
            ASSERT_EQ(s.split_census(Split::val)[k], c.val);
        }
        ASSERT_EQ(split_sizes(s).count(Split::unassigned), 0u);
    }
}

TEST(SplitManifest, SameSeedSameAssignmentDifferentSeedDiffers) {
    const DatasetManifest m = cell_manifest({50, 50, 50, 50, 50, 50, 50});
    const DatasetManifest a = split_manifest(m, {}, 1);
    const DatasetManifest b = split_manifest(m, {}, 1);
    const DatasetManifest c = split_manifest(m, {}, 2);
    EXPECT_EQ(a.records(), b.records());
    EXPECT_NE(a.records(), c.records());
}

TEST(SplitManifest, TooSmallClassIsNamed) {
    const DatasetManifest m = cell_manifest({10, 10, 2, 10, 10, 10, 10});
    try {
        split_manifest(m, {}, 0);
        FAIL() << "expected ManifestError";
    } catch (const ManifestError& e) {
        EXPECT_NE(std::string(e.what()).find("mast_cell"), std::string::npos);
    }
}

TEST(SplitManifest, RejectsRatiosNotSummingToOne) {
    const DatasetManifest m = cell_manifest({10, 10, 10, 10, 10, 10, 10});
    EXPECT_THROW(split_manifest(m, SplitRatios{0.5, 0.1, 0.1}, 0), ManifestError);
}

TEST(Oversample, RaisesSmallClassesToFloorAndLeavesLargeOnes) {
    DatasetManifest m(Domain::cell, 0);
    for (int i = 0; i < 150; ++i) m.add(cell_record("e" + std::to_string(i), CellClass::eosinophil, Split::train));
    for (int i = 0; i < 2000; ++i) m.add(cell_record("l" + std::to_string(i), CellClass::lymphocyte, Split::train));
    for (int i = 0; i < 20; ++i) m.add(cell_record("et" + std::to_string(i), CellClass::eosinophil, Split::test));

    const DatasetManifest o = oversample_training(m, kOversampleFloor, 3);
    EXPECT_EQ(o.split_census(Split::train)[index_of(CellClass::eosinophil)], 2000u);
    EXPECT_EQ(o.split_census(Split::train)[index_of(CellClass::lymphocyte)], 2000u);
    EXPECT_EQ(o.split_census(Split::test)[index_of(CellClass::eosinophil)], 20u);
    // Duplicates only reference training originals.
    for (const auto& r : o.records()) {
        if (r.id.find("#dup") == std::string::npos) continue;
        EXPECT_EQ(r.split, Split::train);
        EXPECT_EQ(m.at(original_id(r.id)).split, Split::train);
        EXPECT_EQ(m.at(original_id(r.id)).path, r.path);
    }
}

TEST(Oversample, SplitThenOversampleRaisesMultinuclearToFloor) {
    DatasetManifest m(Domain::cell, 0);
    for (int i = 0; i < 310; ++i) m.add(cell_record("m" + std::to_string(i), CellClass::multinuclear));
    const DatasetManifest split = split_manifest(m, {}, 11);
    const auto k = static_cast<std::size_t>(index_of(CellClass::multinuclear));
    EXPECT_EQ(split.split_census(Split::train)[k], 248u);
    const DatasetManifest o = oversample_training(split, kOversampleFloor, 11);
    std::size_t train = 0;
    for (const auto& r : o.records()) train += r.split == Split::train ? 1 : 0;
    EXPECT_EQ(train, 2000u);
    EXPECT_EQ(o.recount(), o.census());
    EXPECT_EQ(o.filter_split(Split::test).records(), split.filter_split(Split::test).records());
}

TEST(BalfCensus, MatchesPublishedCounts) {
    const Census expected = {12556, 310, 1553, 24498, 46397, 339, 105};
    EXPECT_EQ(kBalfCellCensus, expected);
    std::size_t total = 0;
    for (auto n : kBalfCellCensus) total += n;
    // The per-class counts sum to 85,758, short of the quoted total of 87,738.
    EXPECT_EQ(total, 85758u);
}

TEST(Oversample, FloorAboveAllClassesAddsNothing) {
    DatasetManifest m(Domain::cell, 0);
    for (int i = 0; i < 30; ++i) m.add(cell_record("x" + std::to_string(i), CellClass::neutrophil, Split::train));
    EXPECT_EQ(oversample_training(m, 30, 0).size(), 30u);
    EXPECT_EQ(oversample_training(m, 10, 0).size(), 30u);
}

TEST(Oversample, ClassWithoutTrainingRecordsIsAnError) {
    DatasetManifest m(Domain::cell, 0);
    m.add(cell_record("a", CellClass::erythrocyte, Split::test));
    EXPECT_THROW(oversample_training(m, 5, 0), ManifestError);
}

TEST(Oversample, OriginalIdStripsDuplicateSuffix) {
    EXPECT_EQ(original_id("cell-7#dup12"), "cell-7");
    EXPECT_EQ(original_id("cell-7"), "cell-7");
}

TEST(DatasetManifest, CensusTracksMutations) {
    DatasetManifest m(Domain::cell, 0);
    m.add(cell_record("a", CellClass::macrophage));
    m.add(cell_record("b", CellClass::macrophage));
    ImageRecord unlabeled = cell_record("c", CellClass::neutrophil);
    unlabeled.label.reset();
    m.add(unlabeled);
    EXPECT_EQ(m.census()[index_of(CellClass::macrophage)], 2u);
    EXPECT_EQ(m.unlabeled_count(), 1u);
    EXPECT_EQ(m.census(), m.recount());
    EXPECT_THROW(m.add(cell_record("a", CellClass::neutrophil)), ManifestError);
    ImageRecord wrong = cell_record("d", CellClass::neutrophil);
    wrong.label = FlowerClass::daisy;
    EXPECT_THROW(m.add(wrong), ManifestError);
}

TEST(DatasetManifest, SaveLoadRoundTripKeepsEveryField) {
    TempDir dir("manifest");
    DatasetManifest m(Domain::cell, 42);
    ImageRecord a = cell_record("a", CellClass::mast_cell, Split::train, dir / "cell" / "a.png");
    a.source = SourceBox{"slide1.png", 4, 5, 6, 7};
    a.agreement = 2.0 / 3.0;
    m.add(a);
    m.add(cell_record("b", CellClass::eosinophil, Split::test, "/abs/elsewhere/b.png"));
    m.save(dir / "m.jsonl");
    const DatasetManifest back = DatasetManifest::load(dir / "m.jsonl");
    EXPECT_EQ(back.domain(), Domain::cell);
    EXPECT_EQ(back.seed(), 42u);
    EXPECT_EQ(back.records(), m.records());
    EXPECT_EQ(back.census(), m.census());
}

TEST(DatasetManifest, LoadRejectsTamperedCensus) {
    TempDir dir("manifest");
    DatasetManifest m = cell_manifest({1, 0, 0, 0, 0, 0, 0});
    m.save(dir / "m.jsonl");
    std::ifstream in(dir / "m.jsonl");
    std::string header, rest, line;
    std::getline(in, header);
    while (std::getline(in, line)) rest += line + "\n";
    in.close();
    const auto pos = header.find("\"neutrophil\":1");
    ASSERT_NE(pos, std::string::npos);
    header.replace(pos, 14, "\"neutrophil\":2");
    std::ofstream(dir / "m.jsonl") << header << "\n" << rest;
    EXPECT_THROW(DatasetManifest::load(dir / "m.jsonl"), ManifestError);
}

TEST(PatchRect, CentersAndShiftsInsideTheImage) {
    EXPECT_EQ(patch_rect({"s", 40, 40, 20, 20, "neutrophil"}, 100, 100, 32), (CropRect{34, 34, 66, 66}));
    EXPECT_EQ(patch_rect({"s", 0, 0, 4, 4, "neutrophil"}, 100, 100, 32), (CropRect{0, 0, 32, 32}));
    EXPECT_EQ(patch_rect({"s", 95, 90, 10, 10, "neutrophil"}, 100, 100, 32), (CropRect{68, 68, 100, 100}));
    EXPECT_THROW(patch_rect({"s", 0, 0, 1, 1, "neutrophil"}, 20, 100, 32), IngestError);
}

TEST(IngestCells, CropsPatchesAndSkipsBoxesOutside) {
    TempDir dir("ingest");
    fs::create_directories(dir / "slides");
    ImageU8 slide = test_support::solid_u8(64, 64, 0, 0, 0);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) slide.at(y, x, 0) = static_cast<std::uint8_t>(x * 4);
    write_png(dir / "slides" / "s1.png", slide);
    std::ofstream(dir / "ann.json") << R"([
        {"slide": "s1.png", "x": 20, "y": 20, "w": 8, "h": 8, "label": "macrophage"},
        {"slide": "s1.png", "x": 100, "y": 5, "w": 8, "h": 8, "label": "neutrophil"},
        {"slide": "s1", "x": 0, "y": 0, "w": 4, "h": 4, "label": "eosinophil"}
    ])";
    const auto res = ingest_cells(dir / "ann.json", dir / "slides", 16, dir / "out", 9);
    EXPECT_EQ(res.skipped_outside, 1u);
    ASSERT_EQ(res.manifest.size(), 2u);
    const auto& r = res.manifest.records()[0];
    EXPECT_EQ(r.label, ClassLabel{CellClass::macrophage});
    ASSERT_TRUE(r.source.has_value());
    EXPECT_EQ(r.source->x, 20);
    const ImageU8 patch = read_image(r.path);
    EXPECT_EQ(patch.width, 16);
    // Box center 24 -> patch starts at column 16.
    EXPECT_EQ(patch.at(0, 0, 0), 16 * 4);
    EXPECT_EQ(res.manifest.records()[1].label, ClassLabel{CellClass::eosinophil});
}

TEST(IngestCells, UnknownLabelIsRejected) {
    TempDir dir("ingest");
    fs::create_directories(dir / "slides");
    write_png(dir / "slides" / "s1.png", test_support::solid_u8(32, 32, 1, 2, 3));
    std::ofstream(dir / "ann.json") << R"([{"slide": "s1.png", "x": 1, "y": 1, "w": 2, "h": 2, "label": "platelet"}])";
    EXPECT_THROW(ingest_cells(dir / "ann.json", dir / "slides", 16, dir / "out"), IngestError);
}

TEST(IngestFlowers, AliasesMapDirectoriesAndUnknownDirectoriesFail) {
    TempDir dir("flowers");
    fs::create_directories(dir / "Daisies");
    fs::create_directories(dir / "anemone");
    write_png(dir / "Daisies" / "a.png", test_support::solid_u8(8, 8, 9, 9, 9));
    write_png(dir / "Daisies" / "b.png", test_support::solid_u8(8, 8, 9, 9, 9));
    write_png(dir / "anemone" / "c.png", test_support::solid_u8(8, 8, 9, 9, 9));
    std::ofstream(dir / "anemone" / "notes.txt") << "ignored";
    const DatasetManifest m = ingest_flowers(dir.path());
    EXPECT_EQ(m.size(), 3u);
    EXPECT_EQ(m.census()[index_of(FlowerClass::daisy)], 2u);
    EXPECT_EQ(m.census()[index_of(FlowerClass::windflower)], 1u);

    fs::create_directories(dir / "roses");
    EXPECT_THROW(ingest_flowers(dir.path()), IngestError);
}
