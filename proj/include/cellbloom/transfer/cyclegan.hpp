#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellbloom/classes.hpp"
#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"
#include "cellbloom/nn/adam.hpp"
#include "cellbloom/transfer/image_pool.hpp"
#include "cellbloom/transfer/networks.hpp"

namespace cellbloom::transfer {

namespace fs = std::filesystem;

// Domain A is the cell side, domain B the flower side.
struct TransferConfig {
    CellClass cell = CellClass::neutrophil;
    FlowerClass flower = FlowerClass::coltsfoot;
    int epochs = 200;
    // The learning rate is held for epochs 1..epochs_constant, then decays
    // linearly to zero at `epochs`.
    int epochs_constant = 100;
    int image_size = 64;
    int batch_size = 32;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lambda_cycle = 10.0;
    double lambda_identity = 0.0;
    int pool_capacity = 50;
    GeneratorSpec generator{3, 64, 6};
    DiscriminatorSpec discriminator{3, 64, 3};
    // Write an intermediate checkpoint every k epochs (0 = final only).
    int checkpoint_every = 0;
    std::uint64_t seed = 0;

    // Pair taken from `pairs` for the given cell class.
    static TransferConfig for_pair(CellClass cell, const ClassPairMap& pairs = ClassPairMap());

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TransferConfig from_json(const nlohmann::json& j);
    bool operator==(const TransferConfig&) const = default;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws std::out_of_range outside [1, cfg.epochs].
double lr_at(int epoch, const TransferConfig& cfg);

enum class Direction { cell_to_flower, flower_to_cell };

struct LossRecord {
    double adv_ab = 0;  // G_ab fooling D_b
    double adv_ba = 0;  // G_ba fooling D_a
    double cycle_a = 0;
    double cycle_b = 0;
    double identity_a = 0;
    double identity_b = 0;
    double generator_total = 0;
    double d_a = 0;
    double d_b = 0;
};

// Two generators, two discriminators, their optimizers and image pools.
template <typename T>
class CycleGan {
    // Declared first: networks draw their initial weights from init_rng_ in
    // member order.
    TransferConfig cfg_;
    std::mt19937_64 init_rng_;

public:
    explicit CycleGan(const TransferConfig& cfg);
    CycleGan(const CycleGan&) = delete;
    CycleGan& operator=(const CycleGan&) = delete;

    struct GeneratorTerms {
        nn::Var<T> fake_a, fake_b;
        nn::Var<T> adv_ab, adv_ba, cycle_a, cycle_b, identity_a, identity_b;
        nn::Var<T> total;
    };
    struct DiscriminatorTerms {
        nn::Var<T> d_a, d_b;
        nn::Var<T> total;  // d_a + d_b; the two share no parameters
    };

    // Generator objective: adversarial terms + lambda_cycle * cycle terms
    // (+ lambda_identity * identity terms when enabled).
    GeneratorTerms generator_terms(const nn::Var<T>& real_a, const nn::Var<T>& real_b) const;
    // Each discriminator: 0.5 * (loss(D(real), real) + loss(D(fake), fake)).
    DiscriminatorTerms discriminator_terms(const nn::Var<T>& real_a, const nn::Var<T>& real_b,
                                           const nn::Var<T>& fake_a, const nn::Var<T>& fake_b) const;

    // One generator update followed by one discriminator update on pooled fakes.
    LossRecord train_step(const nn::Tensor<T>& batch_a, const nn::Tensor<T>& batch_b);

    void set_lr(double lr);

    // Inference without graph recording. Input (N, 3, H, W).
    nn::Tensor<T> translate(const nn::Tensor<T>& batch, Direction direction) const;

    const TransferConfig& config() const { return cfg_; }

    Generator<T> g_ab;
    Generator<T> g_ba;
    Discriminator<T> d_a;
    Discriminator<T> d_b;
    nn::Adam<T> opt_g_ab;
    nn::Adam<T> opt_g_ba;
    nn::Adam<T> opt_d_a;
    nn::Adam<T> opt_d_b;
    ImagePool<T> pool_a;
    ImagePool<T> pool_b;
};

struct LossHistoryRow {
    int epoch = 0;
    double loss_G_adv_ab = 0;
    double loss_G_adv_ba = 0;
    double loss_cycle_a = 0;
    double loss_cycle_b = 0;
    double loss_D_a = 0;
    double loss_D_b = 0;
    double lr = 0;
    bool operator==(const LossHistoryRow&) const = default;
};

void write_history_csv(const fs::path& file, const std::vector<LossHistoryRow>& history);
std::vector<LossHistoryRow> read_history_csv(const fs::path& file);

// Persisted state of one pair's training run.
struct TransferCheckpoint {
    TransferConfig config;
    int epoch = 0;
    std::vector<LossHistoryRow> history;
    std::shared_ptr<CycleGan<float>> model;
    std::string data_rng_state;
    fs::path directory;
};

// Layout: config.json, history.csv, g_ab/g_ba/d_a/d_b.safetensors,
// optimizers.safetensors, pools.safetensors, state.json.
void save_checkpoint(const TransferCheckpoint& ckpt, const fs::path& dir);
// Accepts a checkpoint directory or a run directory holding a `latest` file.
TransferCheckpoint load_checkpoint(const fs::path& dir);

struct TrainOptions {
    fs::path output_dir;  // run directory; checkpoints go to <output_dir>/epoch_<k>
    std::optional<fs::path> resume_from;
    std::function<void(const LossHistoryRow&)> on_epoch;
};

// Trains on the training-split records of cfg.cell (cells) and cfg.flower
// (flowers). Each epoch has ceil(max(n_a, n_b) / batch) steps; the larger side
// is shuffled and the smaller side resampled with replacement.
TransferCheckpoint train_pair(const TransferConfig& cfg, const DatasetManifest& cells,
                              const DatasetManifest& flowers, const TrainOptions& options);

Image transform(const Image& img, const TransferCheckpoint& ckpt, Direction direction);
std::vector<Image> transform(const std::vector<Image>& imgs, const TransferCheckpoint& ckpt, Direction direction);
// Translation to the other domain and back, starting from `start`.
Image reconstruct(const Image& img, const TransferCheckpoint& ckpt, Domain start);

}  // namespace cellbloom::transfer
