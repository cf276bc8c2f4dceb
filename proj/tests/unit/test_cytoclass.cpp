#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "cellbloom/cytoclass/classifier.hpp"
#include "cellbloom/cytoclass/confusion.hpp"
#include "cellbloom/harness/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace cellbloom;
using namespace cellbloom::cytoclass;
using test_support::TempDir;

namespace {

ClassifierConfig tiny_classifier(std::uint64_t seed = 1) {
    ClassifierConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.image_size = 16;
    cfg.base_width = 4;
    cfg.seed = seed;
    return cfg;
}

Image random_image(int side, std::mt19937_64& rng) {
    Image img(side, side);
    for (auto& v : img.values) v = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
    return img;
}

struct TinyCells {
    TempDir dir{"cells"};
    DatasetManifest cells;
    TinyCells() {
        harness::SyntheticDomainSpec spec;
        spec.per_class = 10;
        spec.image_size = 16;
        spec.seed = 3;
        cells = split_manifest(harness::generate_synthetic_domains(spec, dir.path()).first, {}, 3);
    }
};

}  // namespace

TEST(ConfusionMatrix, HandEnumeratedTwoClassCase) {
    // truth: 0 0 0 1 1 ; predicted: 0 1 0 1 0
    ConfusionMatrix cm(2);
    const int truth[] = {0, 0, 0, 1, 1}, pred[] = {0, 1, 0, 1, 0};
    for (int i = 0; i < 5; ++i) cm.add(truth[i], pred[i]);
    EXPECT_EQ(cm.at(0, 0), 2u);
    EXPECT_EQ(cm.at(0, 1), 1u);
    EXPECT_EQ(cm.at(1, 0), 1u);
    EXPECT_EQ(cm.at(1, 1), 1u);
    EXPECT_EQ(cm.trace(), 3u);
    EXPECT_EQ(cm.total(), 5u);
    EXPECT_DOUBLE_EQ(cm.overall_accuracy(), 3.0 / 5.0);
    EXPECT_DOUBLE_EQ(*cm.recall(0), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(*cm.recall(1), 1.0 / 2.0);
    EXPECT_DOUBLE_EQ(cm.macro_accuracy(), (2.0 / 3.0 + 0.5) / 2.0);
    EXPECT_EQ(cm.to_csv({"a", "b"}), "true\\predicted,a,b\na,2,1\nb,1,1\n");
}

TEST(ConfusionMatrix, EmptyRowsAreSkippedInMacroAccuracy) {
    ConfusionMatrix cm(7);
    EXPECT_THROW(cm.overall_accuracy(), std::logic_error);
    cm.add(2, 2, 4);
    cm.add(5, 2, 1);
    EXPECT_FALSE(cm.recall(0).has_value());
    EXPECT_DOUBLE_EQ(cm.macro_accuracy(), 0.5);
    ConfusionMatrix other(7);
    other.add(0, 0);
    cm += other;
    EXPECT_EQ(cm.total(), 6u);
    EXPECT_THROW(cm.add(7, 0), std::out_of_range);
}

TEST(ArgmaxLowest, TiesGoToTheLowestIndex) {
    const std::vector<double> v = {0.1, 0.4, 0.4, 0.1};
    EXPECT_EQ(argmax_lowest(v), 1);
    const std::vector<double> all(7, 1.0 / 7.0);
    EXPECT_EQ(argmax_lowest(all), 0);
    const std::vector<double> last = {0, 0, 0, 0, 0, 0, 1};
    EXPECT_EQ(argmax_lowest(last), 6);
}

TEST(ClassifierConfig, DefaultsMatchTheFullScaleRecipe) {
    const ClassifierConfig cfg;
    EXPECT_EQ(cfg.epochs, 10);
    EXPECT_DOUBLE_EQ(cfg.lr, 3e-3);
    EXPECT_EQ(cfg.batch_size, 64);
    EXPECT_EQ(cfg.image_size, 64);
}

TEST(ClassifierConfig, JsonRoundTrip) {
    ClassifierConfig cfg = tiny_classifier(9);
    cfg.augmentation.intensity_shift = 0.2;
    cfg.pretrained_init = "/tmp/w.safetensors";
    const auto back = ClassifierConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
    EXPECT_EQ(back.to_json(), cfg.to_json());
    cfg.image_size = 8;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Classifier, ProbabilitiesFormADistribution) {
    const Classifier model(tiny_classifier());
    std::mt19937_64 rng(4);
    std::vector<Image> imgs;
    for (int i = 0; i < 100; ++i) imgs.push_back(random_image(16, rng));
    const auto preds = model.predict_batch(imgs);
    ASSERT_EQ(preds.size(), 100u);
    for (const auto& p : preds) {
        double sum = 0.0;
        for (double q : p.probabilities) {
            ASSERT_GE(q, 0.0);
            sum += q;
        }
        ASSERT_NEAR(sum, 1.0, 1e-6);
        ASSERT_EQ(p.cls, argmax_lowest(p.probabilities));
    }
}

TEST(Classifier, PredictionIsPureAndRepeatable) {
    const Classifier model(tiny_classifier());
    const auto before = model.network().params().state();
    std::mt19937_64 rng(5);
    const Image img = random_image(16, rng);
    const Prediction a = model.predict(img);
    const Prediction b = model.predict(img);
    EXPECT_EQ(a.probabilities, b.probabilities);
    EXPECT_EQ(model.network().params().state(), before);
    // Batched and single inference agree.
    const std::vector<Image> one = {img};
    EXPECT_EQ(model.predict_batch(one)[0].cls, a.cls);
}

TEST(Classifier, WrongImageSizeIsAShapeError) {
    const Classifier model(tiny_classifier());
    EXPECT_THROW(model.predict(Image(20, 20)), nn::ShapeError);
}

TEST(Classifier, SaveLoadReproducesPredictions) {
    TempDir dir("clf");
    const Classifier model(tiny_classifier(8));
    model.save(dir / "m");
    const Classifier back = Classifier::load(dir / "m");
    std::mt19937_64 rng(6);
    for (int i = 0; i < 5; ++i) {
        const Image img = random_image(16, rng);
        EXPECT_EQ(model.predict(img).probabilities, back.predict(img).probabilities);
    }
}

TEST(Classifier, PretrainedInitLoadsWeights) {
    TempDir dir("clf");
    const Classifier source(tiny_classifier(8));
    source.save(dir / "m");
    ClassifierConfig cfg = tiny_classifier(99);
    cfg.pretrained_init = dir / "m" / "model.safetensors";
    const Classifier warm(cfg);
    EXPECT_EQ(warm.network().params().state(), source.network().params().state());
}

TEST(TrainClassifier, MissingClassIsNamed) {
    DatasetManifest m(Domain::cell, 0);
    for (int i = 0; i < 3; ++i) m.add(test_support::cell_record("n" + std::to_string(i), CellClass::neutrophil, Split::train));
    try {
        train_classifier(m, tiny_classifier());
        FAIL() << "expected ClassifierError";
    } catch (const ClassifierError& e) {
        EXPECT_NE(std::string(e.what()).find("multinuclear"), std::string::npos);
    }
}

TEST(TrainClassifier, HistoryLengthAndDeterminism) {
    TinyCells data;
    const auto a = train_classifier(data.cells, tiny_classifier(2));
    const auto b = train_classifier(data.cells, tiny_classifier(2));
    ASSERT_EQ(a.history.size(), 2u);
    EXPECT_EQ(a.history[0].train_loss, b.history[0].train_loss);
    EXPECT_EQ(a.history[1].train_loss, b.history[1].train_loss);
    EXPECT_TRUE(a.history[0].val_accuracy.has_value());
    EXPECT_GE(a.best_epoch, 1);
    EXPECT_LE(a.best_epoch, 2);

    const EvaluationResult ev = evaluate(*a.model, data.cells.filter_split(Split::test));
    EXPECT_EQ(ev.confusion.total(), data.cells.filter_split(Split::test).size());
    EXPECT_DOUBLE_EQ(ev.overall_accuracy, ev.confusion.overall_accuracy());

    TempDir out("hist");
    write_classifier_history_csv(out / "h.csv", a.history);
    std::ifstream in(out / "h.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "epoch,train_loss,val_accuracy");
}

TEST(Evaluation, EmptyManifestAndUnlabeledRecordsAreErrors) {
    const Classifier model(tiny_classifier());
    EXPECT_ANY_THROW(evaluate(model, DatasetManifest(Domain::cell, 0)));
}

TEST(Evaluation, JsonReportsNullRecallForAbsentClasses) {
    ConfusionMatrix cm(7);
    cm.add(0, 0, 3);
    cm.add(3, 0, 1);
    const auto j = evaluation_to_json(summarize(cm), "real");
    EXPECT_EQ(j.at("dataset_tag"), "real");
    EXPECT_DOUBLE_EQ(j.at("overall_accuracy").get<double>(), 0.75);
    EXPECT_EQ(j.at("classes").at(2), "mast_cell");
    EXPECT_TRUE(j.at("per_class_recall").at(2).is_null());
    EXPECT_DOUBLE_EQ(j.at("per_class_recall").at(3).get<double>(), 0.0);
    EXPECT_EQ(j.at("confusion_matrix").size(), 7u);
}
