#include "cellbloom/transfer/cyclegan.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cellbloom/hashing.hpp"
#include "cellbloom/nn/safetensors.hpp"
#include "cellbloom/random.hpp"
#include "cellbloom/transfer/losses.hpp"

namespace cellbloom::transfer {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;
using nn::Var;

// ---- config ----

TransferConfig TransferConfig::for_pair(CellClass cell, const ClassPairMap& pairs) {
    TransferConfig cfg;
    cfg.cell = cell;
    cfg.flower = pairs.map(cell);
    return cfg;
}

void TransferConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("transfer config: " + msg); };
    if (epochs < 1) fail("epochs must be at least 1");
    if (epochs_constant < 0 || epochs_constant > epochs) fail("epochs_constant must lie in [0, epochs]");
    if (image_size < 8 || image_size % 4 != 0) fail("image_size must be a multiple of 4 and at least 8");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(lambda_cycle >= 0.0)) fail("lambda_cycle must be non-negative");
    if (!(lambda_identity >= 0.0)) fail("lambda_identity must be non-negative");
    if (pool_capacity < 0) fail("pool_capacity must be non-negative");
    if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
    if (generator.channels != 3 || discriminator.channels != 3) fail("networks must have 3 channels");
    if (generator.base_width < 1 || generator.residual_blocks < 0) fail("invalid generator spec");
    if (discriminator.base_width < 1 || discriminator.stride2_stages < 1) fail("invalid discriminator spec");
    int side = image_size;
    for (int s = 0; s < discriminator.stride2_stages; ++s) side = (side + 1) / 2;
    if (side - 2 < 1) fail("image_size too small for the discriminator depth");
}

ordered_json TransferConfig::to_json() const {
    return {{"cell", std::string(to_string(cell))},
            {"flower", std::string(to_string(flower))},
            {"epochs", epochs},
            {"epochs_constant", epochs_constant},
            {"image_size", image_size},
            {"batch_size", batch_size},
            {"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"lambda_cycle", lambda_cycle},
            {"lambda_identity", lambda_identity},
            {"pool_capacity", pool_capacity},
            {"generator",
             {{"channels", generator.channels},
              {"base_width", generator.base_width},
              {"residual_blocks", generator.residual_blocks}}},
            {"discriminator",
             {{"channels", discriminator.channels},
              {"base_width", discriminator.base_width},
              {"stride2_stages", discriminator.stride2_stages}}},
            {"checkpoint_every", checkpoint_every},
            {"seed", seed}};
}

TransferConfig TransferConfig::from_json(const json& j) {
    TransferConfig c;
    if (j.contains("cell")) {
        const auto cell = parse_cell_class(j.at("cell").get<std::string>());
        if (!cell) throw std::invalid_argument("transfer config: unknown cell class " + j.at("cell").dump());
        c.cell = *cell;
        c.flower = ClassPairMap().map(*cell);
    }
    if (j.contains("flower")) {
        const auto flower = parse_flower_class(j.at("flower").get<std::string>());
        if (!flower) throw std::invalid_argument("transfer config: unknown flower class " + j.at("flower").dump());
        c.flower = *flower;
    }
    c.epochs = j.value("epochs", c.epochs);
    c.epochs_constant = j.value("epochs_constant", c.epochs_constant);
    c.image_size = j.value("image_size", c.image_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.lambda_cycle = j.value("lambda_cycle", c.lambda_cycle);
    c.lambda_identity = j.value("lambda_identity", c.lambda_identity);
    c.pool_capacity = j.value("pool_capacity", c.pool_capacity);
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        c.generator.channels = g.value("channels", c.generator.channels);
        c.generator.base_width = g.value("base_width", c.generator.base_width);
        c.generator.residual_blocks = g.value("residual_blocks", c.generator.residual_blocks);
    }
    if (j.contains("discriminator")) {
        const auto& d = j.at("discriminator");
        c.discriminator.channels = d.value("channels", c.discriminator.channels);
        c.discriminator.base_width = d.value("base_width", c.discriminator.base_width);
        c.discriminator.stride2_stages = d.value("stride2_stages", c.discriminator.stride2_stages);
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    return c;
}

double lr_at(int epoch, const TransferConfig& cfg) {
    if (epoch < 1 || epoch > cfg.epochs) {
        throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
    }
    if (epoch <= cfg.epochs_constant) return cfg.lr;
    const double span = static_cast<double>(cfg.epochs - cfg.epochs_constant);
    return cfg.lr * (1.0 - (epoch - cfg.epochs_constant) / span);
}

// ---- model ----

namespace {

nn::AdamOptions adam_options(const TransferConfig& cfg) { return {cfg.lr, cfg.beta1, cfg.beta2, 1e-8}; }

template <typename T>
double scalar(const Var<T>& v) {
    return static_cast<double>(v.value()[0]);
}

}  // namespace

template <typename T>
CycleGan<T>::CycleGan(const TransferConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      init_rng_(derive_seed(cfg.seed, "init")),
      g_ab(cfg.generator, init_rng_),
      g_ba(cfg.generator, init_rng_),
      d_a(cfg.discriminator, init_rng_),
      d_b(cfg.discriminator, init_rng_),
      opt_g_ab(g_ab.params(), adam_options(cfg)),
      opt_g_ba(g_ba.params(), adam_options(cfg)),
      opt_d_a(d_a.params(), adam_options(cfg)),
      opt_d_b(d_b.params(), adam_options(cfg)),
      pool_a(cfg.pool_capacity, derive_seed(cfg.seed, "pool_a")),
      pool_b(cfg.pool_capacity, derive_seed(cfg.seed, "pool_b")) {}

template <typename T>
typename CycleGan<T>::GeneratorTerms CycleGan<T>::generator_terms(const Var<T>& real_a, const Var<T>& real_b) const {
    GeneratorTerms t;
    t.fake_b = g_ab(real_a);
    t.fake_a = g_ba(real_b);
    const Var<T> rec_a = g_ba(t.fake_b);
    const Var<T> rec_b = g_ab(t.fake_a);
    t.adv_ab = adversarial_loss(d_b(t.fake_b), true);
    t.adv_ba = adversarial_loss(d_a(t.fake_a), true);
    t.cycle_a = cycle_loss(real_a, rec_a);
    t.cycle_b = cycle_loss(real_b, rec_b);
    t.total = t.adv_ab + t.adv_ba + cfg_.lambda_cycle * (t.cycle_a + t.cycle_b);
    if (cfg_.lambda_identity > 0.0) {
        t.identity_a = cycle_loss(real_a, g_ba(real_a));
        t.identity_b = cycle_loss(real_b, g_ab(real_b));
        t.total = t.total + cfg_.lambda_identity * (t.identity_a + t.identity_b);
    }
    return t;
}

template <typename T>
typename CycleGan<T>::DiscriminatorTerms CycleGan<T>::discriminator_terms(const Var<T>& real_a, const Var<T>& real_b,
                                                                          const Var<T>& fake_a,
                                                                          const Var<T>& fake_b) const {
    DiscriminatorTerms t;
    t.d_a = 0.5 * (adversarial_loss(d_a(real_a), true) + adversarial_loss(d_a(fake_a), false));
    t.d_b = 0.5 * (adversarial_loss(d_b(real_b), true) + adversarial_loss(d_b(fake_b), false));
    t.total = t.d_a + t.d_b;
    return t;
}

template <typename T>
LossRecord CycleGan<T>::train_step(const Tensor<T>& batch_a, const Tensor<T>& batch_b) {
    const Var<T> real_a(batch_a), real_b(batch_b);
    LossRecord rec;
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + name + " in train_step");
        return v;
    };

    // Generator update with the discriminators frozen.
    d_a.params().set_requires_grad(false);
    d_b.params().set_requires_grad(false);
    GeneratorTerms g = generator_terms(real_a, real_b);
    rec.adv_ab = check(scalar(g.adv_ab), "loss_G_adv_ab");
    rec.adv_ba = check(scalar(g.adv_ba), "loss_G_adv_ba");
    rec.cycle_a = check(scalar(g.cycle_a), "loss_cycle_a");
    rec.cycle_b = check(scalar(g.cycle_b), "loss_cycle_b");
    if (g.identity_a.defined()) {
        rec.identity_a = check(scalar(g.identity_a), "loss_identity_a");
        rec.identity_b = check(scalar(g.identity_b), "loss_identity_b");
    }
    rec.generator_total = check(scalar(g.total), "loss_G");
    opt_g_ab.zero_grad();
    opt_g_ba.zero_grad();
    nn::backward(g.total);
    opt_g_ab.step();
    opt_g_ba.step();
    d_a.params().set_requires_grad(true);
    d_b.params().set_requires_grad(true);

    // Discriminator update on pooled, detached fakes.
    const Var<T> fake_a(pool_a.query(g.fake_a.value()));
    const Var<T> fake_b(pool_b.query(g.fake_b.value()));
    g = GeneratorTerms{};
    DiscriminatorTerms d = discriminator_terms(real_a, real_b, fake_a, fake_b);
    rec.d_a = check(scalar(d.d_a), "loss_D_a");
    rec.d_b = check(scalar(d.d_b), "loss_D_b");
    opt_d_a.zero_grad();
    opt_d_b.zero_grad();
    nn::backward(d.total);
    opt_d_a.step();
    opt_d_b.step();
    return rec;
}

template <typename T>
void CycleGan<T>::set_lr(double lr) {
    opt_g_ab.set_lr(lr);
    opt_g_ba.set_lr(lr);
    opt_d_a.set_lr(lr);
    opt_d_b.set_lr(lr);
}

template <typename T>
Tensor<T> CycleGan<T>::translate(const Tensor<T>& batch, Direction direction) const {
    nn::NoGradGuard guard;
    const Generator<T>& g = direction == Direction::cell_to_flower ? g_ab : g_ba;
    return g(Var<T>(batch)).value();
}

template class CycleGan<float>;
template class CycleGan<double>;

// ---- history ----

void write_history_csv(const fs::path& file, const std::vector<LossHistoryRow>& history) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "epoch,loss_G_adv_ab,loss_G_adv_ba,loss_cycle_a,loss_cycle_b,loss_D_a,loss_D_b,lr\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& r : history) {
        out << r.epoch << ',' << num(r.loss_G_adv_ab) << ',' << num(r.loss_G_adv_ba) << ',' << num(r.loss_cycle_a)
            << ',' << num(r.loss_cycle_b) << ',' << num(r.loss_D_a) << ',' << num(r.loss_D_b) << ',' << num(r.lr)
            << '\n';
    }
}

std::vector<LossHistoryRow> read_history_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    std::vector<LossHistoryRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string cell;
        std::vector<std::string> parts;
        while (std::getline(fields, cell, ',')) parts.push_back(cell);
        if (parts.size() != 8) throw std::runtime_error("malformed history row in " + file.string() + ": " + line);
        LossHistoryRow r;
        r.epoch = std::stoi(parts[0]);
        r.loss_G_adv_ab = std::stod(parts[1]);
        r.loss_G_adv_ba = std::stod(parts[2]);
        r.loss_cycle_a = std::stod(parts[3]);
        r.loss_cycle_b = std::stod(parts[4]);
        r.loss_D_a = std::stod(parts[5]);
        r.loss_D_b = std::stod(parts[6]);
        r.lr = std::stod(parts[7]);
        rows.push_back(r);
    }
    return rows;
}

// ---- checkpoints ----

namespace {

void write_json(const fs::path& file, const ordered_json& doc) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << doc.dump(2) << '\n';
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    return json::parse(in);
}

void add_prefixed(nn::TensorMap& out, const std::string& prefix, const std::map<std::string, Tensor<float>>& state) {
    for (const auto& [name, t] : state) out.emplace(prefix + name, t);
}

std::map<std::string, Tensor<float>> take_prefixed(const nn::TensorMap& all, const std::string& prefix) {
    std::map<std::string, Tensor<float>> out;
    for (const auto& [name, t] : all) {
        if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
    }
    return out;
}

}  // namespace

void save_checkpoint(const TransferCheckpoint& ckpt, const fs::path& dir) {
    if (!ckpt.model) throw std::invalid_argument("checkpoint has no model");
    const fs::path tmp = dir.string() + ".partial";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    const auto& m = *ckpt.model;

    ordered_json config = ckpt.config.to_json();
    write_json(tmp / "config.json", config);
    write_history_csv(tmp / "history.csv", ckpt.history);
    nn::save_safetensors(tmp / "g_ab.safetensors", m.g_ab.params().state(), {{"network", "G_cell_to_flower"}});
    nn::save_safetensors(tmp / "g_ba.safetensors", m.g_ba.params().state(), {{"network", "G_flower_to_cell"}});
    nn::save_safetensors(tmp / "d_a.safetensors", m.d_a.params().state(), {{"network", "D_cell"}});
    nn::save_safetensors(tmp / "d_b.safetensors", m.d_b.params().state(), {{"network", "D_flower"}});

    nn::TensorMap optim;
    add_prefixed(optim, "g_ab/", m.opt_g_ab.state());
    add_prefixed(optim, "g_ba/", m.opt_g_ba.state());
    add_prefixed(optim, "d_a/", m.opt_d_a.state());
    add_prefixed(optim, "d_b/", m.opt_d_b.state());
    nn::save_safetensors(tmp / "optimizers.safetensors", optim);

    nn::TensorMap pools;
    if (m.pool_a.size() > 0) pools.emplace("pool_a", m.pool_a.stacked());
    if (m.pool_b.size() > 0) pools.emplace("pool_b", m.pool_b.stacked());
    nn::save_safetensors(tmp / "pools.safetensors", pools,
                         {{"pool_a_rng", m.pool_a.rng_state()}, {"pool_b_rng", m.pool_b.rng_state()}});

    write_json(tmp / "state.json", {{"epoch", ckpt.epoch}, {"data_rng", ckpt.data_rng_state}});

    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

TransferCheckpoint load_checkpoint(const fs::path& path) {
    fs::path dir = path;
    if (!fs::exists(dir / "state.json") && fs::exists(dir / "latest")) {
        std::ifstream in(dir / "latest");
        std::string name;
        std::getline(in, name);
        dir = dir / name;
    }
    if (!fs::exists(dir / "state.json")) throw std::runtime_error("no transfer checkpoint at " + path.string());

    TransferCheckpoint ckpt;
    ckpt.directory = dir;
    ckpt.config = TransferConfig::from_json(read_json(dir / "config.json"));
    ckpt.history = read_history_csv(dir / "history.csv");
    const json state = read_json(dir / "state.json");
    ckpt.epoch = state.at("epoch").get<int>();
    ckpt.data_rng_state = state.at("data_rng").get<std::string>();

    auto model = std::make_shared<CycleGan<float>>(ckpt.config);
    model->g_ab.params().load_state(nn::load_safetensors(dir / "g_ab.safetensors"));
    model->g_ba.params().load_state(nn::load_safetensors(dir / "g_ba.safetensors"));
    model->d_a.params().load_state(nn::load_safetensors(dir / "d_a.safetensors"));
    model->d_b.params().load_state(nn::load_safetensors(dir / "d_b.safetensors"));
    const auto optim = nn::load_safetensors(dir / "optimizers.safetensors");
    model->opt_g_ab.load_state(take_prefixed(optim, "g_ab/"));
    model->opt_g_ba.load_state(take_prefixed(optim, "g_ba/"));
    model->opt_d_a.load_state(take_prefixed(optim, "d_a/"));
    model->opt_d_b.load_state(take_prefixed(optim, "d_b/"));
    const auto pools = nn::load_safetensors(dir / "pools.safetensors");
    const auto meta = nn::load_safetensors_metadata(dir / "pools.safetensors");
    const auto stored = [&](const char* name) {
        auto it = pools.find(name);
        return it == pools.end() ? Tensor<float>({0}) : it->second;
    };
    model->pool_a.restore(stored("pool_a"), meta.at("pool_a_rng"));
    model->pool_b.restore(stored("pool_b"), meta.at("pool_b_rng"));
    ckpt.model = std::move(model);
    return ckpt;
}

// ---- training ----

namespace {

std::vector<Image> load_training_images(const DatasetManifest& m, int class_index, int side) {
    std::vector<Image> out;
    for (const auto& r : m.records()) {
        if (r.split == Split::train && r.label && index_of(*r.label) == class_index) out.push_back(load_image(r.path, side));
    }
    return out;
}

// A permutation when the side is the longer one, otherwise `n` draws with replacement.
std::vector<std::size_t> epoch_order(std::size_t available, std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> order;
    if (available == n) {
        order.resize(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        shuffle_in_place(order.begin(), order.end(), rng);
    } else {
        order.reserve(n);
        for (std::size_t i = 0; i < n; ++i) order.push_back(uniform_index(rng, available));
    }
    return order;
}

Tensor<float> gather(const std::vector<Image>& images, const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end) {
    std::vector<Image> picked;
    picked.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) picked.push_back(images[order[i]]);
    return to_batch(picked);
}

std::string epoch_dir_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04d", epoch);
    return buf;
}

void save_to_run(TransferCheckpoint& ckpt, const fs::path& run_dir) {
    const std::string name = epoch_dir_name(ckpt.epoch);
    save_checkpoint(ckpt, run_dir / name);
    ckpt.directory = run_dir / name;
    std::ofstream(run_dir / "latest", std::ios::trunc) << name << '\n';
}

}  // namespace

TransferCheckpoint train_pair(const TransferConfig& cfg, const DatasetManifest& cells, const DatasetManifest& flowers,
                              const TrainOptions& options) {
    cfg.validate();
    if (cells.domain() != Domain::cell || flowers.domain() != Domain::flower) {
        throw std::invalid_argument("train_pair expects a cell manifest and a flower manifest");
    }
    auto count_train = [](const DatasetManifest& m, int cls) {
        std::size_t n = 0;
        for (const auto& r : m.records()) n += r.split == Split::train && r.label && index_of(*r.label) == cls;
        return n;
    };
    if (count_train(cells, index_of(cfg.cell)) == 0) {
        throw TrainingError("no training records for cell class " + std::string(to_string(cfg.cell)));
    }
    if (count_train(flowers, index_of(cfg.flower)) == 0) {
        throw TrainingError("no training records for flower class " + std::string(to_string(cfg.flower)));
    }

    TransferCheckpoint ckpt;
    std::mt19937_64 data_rng(derive_seed(cfg.seed, "data"));
    if (options.resume_from) {
        ckpt = load_checkpoint(*options.resume_from);
        if (!(ckpt.config == cfg)) throw TrainingError("resume config differs from the checkpoint's config");
        restore_rng_state(data_rng, ckpt.data_rng_state);
        spdlog::info("resuming {} <-> {} at epoch {}", to_string(cfg.cell), to_string(cfg.flower), ckpt.epoch + 1);
    } else {
        ckpt.config = cfg;
        ckpt.model = std::make_shared<CycleGan<float>>(cfg);
    }

    const auto images_a = load_training_images(cells, index_of(cfg.cell), cfg.image_size);
    const auto images_b = load_training_images(flowers, index_of(cfg.flower), cfg.image_size);
    const std::size_t n = std::max(images_a.size(), images_b.size());
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps = (n + batch - 1) / batch;
    if (!options.output_dir.empty()) {
        fs::create_directories(options.output_dir);
        write_json(options.output_dir / "config.json", cfg.to_json());
    }

    CycleGan<float>& model = *ckpt.model;
    for (int epoch = ckpt.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        model.set_lr(lr);
        const auto order_a = epoch_order(images_a.size(), n, data_rng);
        const auto order_b = epoch_order(images_b.size(), n, data_rng);
        LossRecord sum;
        for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t begin = s * batch, end = std::min(n, begin + batch);
            const LossRecord r = model.train_step(gather(images_a, order_a, begin, end),
                                                  gather(images_b, order_b, begin, end));
            sum.adv_ab += r.adv_ab;
            sum.adv_ba += r.adv_ba;
            sum.cycle_a += r.cycle_a;
            sum.cycle_b += r.cycle_b;
            sum.d_a += r.d_a;
            sum.d_b += r.d_b;
        }
        const double k = static_cast<double>(steps);
        LossHistoryRow row{epoch, sum.adv_ab / k, sum.adv_ba / k, sum.cycle_a / k, sum.cycle_b / k,
                           sum.d_a / k,  sum.d_b / k,  lr};
        ckpt.history.push_back(row);
        ckpt.epoch = epoch;
        ckpt.data_rng_state = rng_state(data_rng);
        spdlog::info("{} <-> {} epoch {}/{}: cycle_a {:.4f} cycle_b {:.4f} G_adv {:.4f}/{:.4f} D {:.4f}/{:.4f}",
                     to_string(cfg.cell), to_string(cfg.flower), epoch, cfg.epochs, row.loss_cycle_a,
                     row.loss_cycle_b, row.loss_G_adv_ab, row.loss_G_adv_ba, row.loss_D_a, row.loss_D_b);
        if (options.on_epoch) options.on_epoch(row);
        const bool cadence = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        if (!options.output_dir.empty() && (cadence || epoch == cfg.epochs)) save_to_run(ckpt, options.output_dir);
    }
    if (!options.output_dir.empty()) write_history_csv(options.output_dir / "history.csv", ckpt.history);
    return ckpt;
}

// ---- inference ----

std::vector<Image> transform(const std::vector<Image>& imgs, const TransferCheckpoint& ckpt, Direction direction) {
    if (!ckpt.model) throw std::invalid_argument("checkpoint has no model");
    const int side = ckpt.config.image_size;
    for (const auto& img : imgs) {
        if (img.height != side || img.width != side) {
            throw nn::ShapeError("transform expects " + std::to_string(side) + "x" + std::to_string(side) +
                                 " images, got " + std::to_string(img.height) + "x" + std::to_string(img.width));
        }
    }
    std::vector<Image> out;
    out.reserve(imgs.size());
    constexpr std::size_t kChunk = 32;
    for (std::size_t begin = 0; begin < imgs.size(); begin += kChunk) {
        const std::size_t end = std::min(imgs.size(), begin + kChunk);
        const auto batch = to_batch(std::span<const Image>(imgs.data() + begin, end - begin));
        const auto result = ckpt.model->translate(batch, direction);
        for (std::size_t i = 0; i < end - begin; ++i) out.push_back(from_batch(result, static_cast<int>(i)));
    }
    return out;
}

Image transform(const Image& img, const TransferCheckpoint& ckpt, Direction direction) {
    return transform(std::vector<Image>{img}, ckpt, direction).front();
}

Image reconstruct(const Image& img, const TransferCheckpoint& ckpt, Domain start) {
    const Direction there = start == Domain::cell ? Direction::cell_to_flower : Direction::flower_to_cell;
    const Direction back = start == Domain::cell ? Direction::flower_to_cell : Direction::cell_to_flower;
    return transform(transform(img, ckpt, there), ckpt, back);
}

}  // namespace cellbloom::transfer
