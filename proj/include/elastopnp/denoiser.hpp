#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "elastopnp/cnn.hpp"
#include "elastopnp/io.hpp"
#include "elastopnp/phantoms.hpp"
#include "elastopnp/tv.hpp"

namespace elastopnp {

struct TrainConfig {
    int patch_size = 50;
    int batch_size = 16;
    int epochs = 20;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patches_per_image = 8;  // patches drawn per training image per epoch
    double validation_fraction = 0.1;
    // Each training patch uses clean + a*(noisy - clean) with a ~ U[min, 1], so
    // the network also sees the milder noise of PnP iterates. 1 disables it.
    double noise_scale_min = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (patch_size < 1) throw ConfigError("train.patch_size", "must be >= 1");
        if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
        if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
        if (patches_per_image < 1) throw ConfigError("train.patches_per_image", "must be >= 1");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw ConfigError("train.validation_fraction", "must lie in [0,1)");
        if (!(noise_scale_min >= 0.0 && noise_scale_min <= 1.0))
            throw ConfigError("train.noise_scale_min", "must lie in [0,1]");
    }
};

struct TrainHistory {
    std::vector<double> train_loss;  // mean batch loss per epoch (index e-1 for epoch e)
    std::vector<double> val_loss;    // index 0: before training, index e: after epoch e
    int best_epoch = 0;
};

struct TrainResult {
    CnnWeights weights;
    TrainHistory history;
};

/// Applies one of the 8 symmetries of the square: k%4 quarter turns, mirrored when k >= 4.
inline Grid dihedral(const Grid &g, int k) {
    Grid out = g;
    for (int r = 0; r < k % 4; ++r) out = Grid(out.transpose().colwise().reverse());
    if (k >= 4) out = Grid(out.rowwise().reverse());
    return out;
}

/// Mean over images of (1/2)||C_w(noisy) - (noisy - clean)||_F^2.
inline double residual_loss(const CnnArchitecture &arch, const CnnWeights &w, const std::vector<TrainingPair> &set) {
    if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const auto &p : set) acc += 0.5 * (cnn_forward(arch, w, p.noisy) - (p.noisy - p.clean)).squaredNorm();
    return acc / static_cast<double>(set.size());
}

/// Trains the residual network with Adam on randomly placed, randomly
/// flipped/rotated patches; returns the weights with the lowest validation
/// loss. The last layer starts at zero so the untrained network is the identity denoiser.
template <class Rng>
TrainResult cnn_train(const CnnArchitecture &arch, const std::vector<TrainingPair> &train,
                      const std::vector<TrainingPair> &val, const TrainConfig &cfg, Rng &rng) {
    cfg.validate();
    arch.validate();
    if (train.empty()) throw InvalidArgument("cnn_train: empty training set");
    for (const auto &p : train) {
        if (p.noisy.rows() != p.clean.rows() || p.noisy.cols() != p.clean.cols())
            throw InvalidArgument("cnn_train: noisy/clean shape mismatch");
        if (p.noisy.rows() < cfg.patch_size || p.noisy.cols() < cfg.patch_size)
            throw InvalidArgument("cnn_train: patch size exceeds image size");
    }

    TrainResult res;
    res.weights = init_weights(arch, rng);
    res.weights.layers.back().weight.setZero();
    res.weights.layers.back().bias.setZero();
    CnnWeights best = res.weights;
    Adam adam(arch, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    const std::vector<TrainingPair> &monitor = val.empty() ? train : val;
    double best_val = residual_loss(arch, res.weights, monitor);
    res.history.val_loss.push_back(best_val);

    const std::size_t per_epoch = train.size() * static_cast<std::size_t>(cfg.patches_per_image);
    const std::size_t steps = (per_epoch + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::uniform_int_distribution<int> sym(0, 7);
    std::vector<TrainingPair> batch(static_cast<std::size_t>(cfg.batch_size));
    const Index ps = cfg.patch_size;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            for (auto &item : batch) {
                const auto &src = train[pick(rng)];
                const Index r0 = std::uniform_int_distribution<Index>(0, src.noisy.rows() - ps)(rng);
                const Index c0 = std::uniform_int_distribution<Index>(0, src.noisy.cols() - ps)(rng);
                const int k = sym(rng);
                item.noisy = dihedral(src.noisy.block(r0, c0, ps, ps), k);
                item.clean = dihedral(src.clean.block(r0, c0, ps, ps), k);
                if (cfg.noise_scale_min < 1.0) {
                    const double a = std::uniform_real_distribution<double>(cfg.noise_scale_min, 1.0)(rng);
                    item.noisy = item.clean + a * (item.noisy - item.clean);
                }
            }
            LossAndGradient lg = cnn_backward(arch, res.weights, batch);
            if (!std::isfinite(lg.loss) || !lg.grad.all_finite())
                throw NumericalError("cnn_train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(s) + " (loss=" + std::to_string(lg.loss) + ")");
            epoch_loss += lg.loss;
            adam.step(res.weights, lg.grad);
        }
        res.history.train_loss.push_back(epoch_loss / static_cast<double>(steps));
        const double v = residual_loss(arch, res.weights, monitor);
        if (!std::isfinite(v)) throw NumericalError("cnn_train: non-finite validation loss at epoch " + std::to_string(epoch));
        res.history.val_loss.push_back(v);
        if (v < best_val) {
            best_val = v;
            best = res.weights;
            res.history.best_epoch = epoch;
        }
    }
    res.weights = std::move(best);
    return res;
}

/// Splits `data` into training and validation parts by `cfg.validation_fraction`
/// (shuffled with `rng`) and trains.
template <class Rng>
TrainResult cnn_train(const CnnArchitecture &arch, const std::vector<TrainingPair> &data, const TrainConfig &cfg,
                      Rng &rng) {
    if (data.empty()) throw InvalidArgument("cnn_train: empty dataset");
    if (data.size() < 10) throw InvalidArgument("cnn_train: at least 10 training images are required");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.size())));
    std::vector<TrainingPair> train, val;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(data[order[i]]);
    return cnn_train(arch, train, val, cfg, rng);
}

enum class DenoiserKind { identity, gaussian_blur, tv, residual_cnn };

inline std::string to_string(DenoiserKind k) {
    switch (k) {
    case DenoiserKind::identity: return "identity";
    case DenoiserKind::gaussian_blur: return "gaussian_blur";
    case DenoiserKind::tv: return "tv";
    case DenoiserKind::residual_cnn: return "residual_cnn";
    }
    return "?";
}

/// A denoiser usable as the proximal operator of plug-and-play reconstruction.
struct DenoiserModel {
    DenoiserKind kind = DenoiserKind::identity;
    double blur_sigma = 1.0;
    double tv_weight = 0.0;
    int tv_iters = 50;
    CnnArchitecture arch;
    CnnWeights weights;

    static DenoiserModel identity() { return {}; }
    static DenoiserModel gaussian(double sigma) {
        DenoiserModel m;
        m.kind = DenoiserKind::gaussian_blur;
        m.blur_sigma = sigma;
        return m;
    }
    static DenoiserModel total_variation(double weight, int iters) {
        DenoiserModel m;
        m.kind = DenoiserKind::tv;
        m.tv_weight = weight;
        m.tv_iters = iters;
        return m;
    }
    static DenoiserModel residual_cnn(const CnnArchitecture &arch, CnnWeights weights) {
        check_weights(arch, weights);
        DenoiserModel m;
        m.kind = DenoiserKind::residual_cnn;
        m.arch = arch;
        m.weights = std::move(weights);
        return m;
    }

    Grid operator()(const Grid &image) const;
};

inline Grid denoise(const DenoiserModel &model, const Grid &image) {
    if (!image.allFinite()) throw InvalidArgument("denoise: non-finite image");
    switch (model.kind) {
    case DenoiserKind::identity: return image;
    case DenoiserKind::gaussian_blur: return gaussian_blur(image, model.blur_sigma);
    case DenoiserKind::tv: return tv_prox(image, model.tv_weight, model.tv_iters);
    case DenoiserKind::residual_cnn:
        if (image.rows() < model.arch.receptive_field() || image.cols() < model.arch.receptive_field())
            throw InvalidArgument("denoise: image smaller than the network receptive field (" +
                                  std::to_string(model.arch.receptive_field()) + ")");
        return image - cnn_forward(model.arch, model.weights, image);
    }
    throw InvalidArgument("denoise: unknown kind");
}

inline Grid DenoiserModel::operator()(const Grid &image) const { return denoise(*this, image); }

inline constexpr std::string_view model_magic = "EPNPDN1";

/// Serializes a residual CNN: magic, u32 layer count, per layer u32 (in, out, kh, kw),
/// all weight tensors as (out, in, kh, kw) row-major f64, all biases, CRC32.
inline std::vector<std::uint8_t> encode_model(const DenoiserModel &model) {
    if (model.kind != DenoiserKind::residual_cnn)
        throw InvalidArgument("model_save: only residual_cnn models have a file representation");
    check_weights(model.arch, model.weights);
    ByteWriter w;
    w.bytes(model_magic);
    w.put(static_cast<std::uint32_t>(model.arch.layers));
    for (int l = 0; l < model.arch.layers; ++l) {
        w.put(static_cast<std::uint32_t>(model.arch.in_channels(l)));
        w.put(static_cast<std::uint32_t>(model.arch.out_channels(l)));
        w.put(std::uint32_t{3});
        w.put(std::uint32_t{3});
    }
    for (int l = 0; l < model.arch.layers; ++l) {
        const auto &m = model.weights.layers[static_cast<std::size_t>(l)].weight;
        const Index cin = model.arch.in_channels(l);
        for (Index o = 0; o < m.rows(); ++o)
            for (Index i = 0; i < cin; ++i)
                for (int tap = 0; tap < 9; ++tap) w.put(m(o, tap * cin + i));
    }
    for (const auto &layer : model.weights.layers)
        for (Index o = 0; o < layer.bias.size(); ++o) w.put(layer.bias[o]);
    w.seal();
    return w.data();
}

inline DenoiserModel decode_model(std::vector<std::uint8_t> bytes, const std::string &what = "model file") {
    ByteReader r(std::move(bytes), what);
    r.expect_magic(model_magic);
    const auto layers = r.get<std::uint32_t>();
    if (layers < 1 || layers > 1000) throw IoError(what + ": implausible layer count");
    std::vector<std::array<std::uint32_t, 4>> shapes(layers);
    for (auto &s : shapes)
        for (auto &v : s) v = r.get<std::uint32_t>();
    CnnArchitecture arch;
    arch.layers = static_cast<int>(layers);
    arch.channels = layers > 1 ? static_cast<int>(shapes[0][1]) : 1;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto &s = shapes[l];
        if (s[2] != 3 || s[3] != 3 || s[0] != static_cast<std::uint32_t>(arch.in_channels(static_cast<int>(l))) ||
            s[1] != static_cast<std::uint32_t>(arch.out_channels(static_cast<int>(l))))
            throw IoError(what + ": layer " + std::to_string(l) + " shape is not a supported residual stack");
    }
    CnnWeights w = zero_weights(arch);
    for (int l = 0; l < arch.layers; ++l) {
        auto &m = w.layers[static_cast<std::size_t>(l)].weight;
        const Index cin = arch.in_channels(l);
        for (Index o = 0; o < m.rows(); ++o)
            for (Index i = 0; i < cin; ++i)
                for (int tap = 0; tap < 9; ++tap) m(o, tap * cin + i) = r.get<double>();
    }
    for (auto &layer : w.layers)
        for (Index o = 0; o < layer.bias.size(); ++o) layer.bias[o] = r.get<double>();
    r.verify_crc();
    if (!w.all_finite()) throw IoError(what + ": non-finite weights");
    return DenoiserModel::residual_cnn(arch, std::move(w));
}

inline void model_save(const DenoiserModel &model, const std::filesystem::path &path) {
    write_file_atomic(path, encode_model(model));
}

inline DenoiserModel model_load(const std::filesystem::path &path) { return decode_model(read_file(path), path.string()); }

} // namespace elastopnp
