#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elastopnp/error.hpp"
#include "elastopnp/grid.hpp"

namespace elastopnp {

/// Plain convolution stack: `layers` 3x3 "same" convolutions, ReLU after all
/// but the last, single-channel input and output.
struct CnnArchitecture {
    int layers = 10;
    int channels = 32;
    int kernel = 3;

    void validate() const {
        if (layers < 1) throw InvalidArgument("CnnArchitecture: at least one layer is required");
        if (channels < 1) throw InvalidArgument("CnnArchitecture: channel count must be >= 1");
        if (kernel != 3) throw InvalidArgument("CnnArchitecture: only 3x3 kernels are supported");
    }
    int receptive_field() const { return 2 * layers + 1; }
    int in_channels(int l) const { return l == 0 ? 1 : channels; }
    int out_channels(int l) const { return l == layers - 1 ? 1 : channels; }
};

/// One convolution layer. `weight` is out x (9*in) with column index
/// tap*in + c_in, tap = kh*3 + kw.
struct ConvLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct CnnWeights {
    std::vector<ConvLayer> layers;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto &l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }
    bool all_finite() const {
        for (const auto &l : layers)
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }
    CnnWeights &operator+=(const CnnWeights &o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].weight += o.layers[i].weight;
            layers[i].bias += o.layers[i].bias;
        }
        return *this;
    }
    CnnWeights &operator*=(double s) {
        for (auto &l : layers) {
            l.weight *= s;
            l.bias *= s;
        }
        return *this;
    }
};

inline CnnWeights zero_weights(const CnnArchitecture &arch) {
    arch.validate();
    CnnWeights w;
    for (int l = 0; l < arch.layers; ++l)
        w.layers.push_back({Eigen::MatrixXd::Zero(arch.out_channels(l), 9 * arch.in_channels(l)),
                            Eigen::VectorXd::Zero(arch.out_channels(l))});
    return w;
}

/// He-normal initialization with zero biases.
template <class Rng>
CnnWeights init_weights(const CnnArchitecture &arch, Rng &rng) {
    CnnWeights w = zero_weights(arch);
    for (int l = 0; l < arch.layers; ++l) {
        const double fan_in = 9.0 * arch.in_channels(l);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
        auto &m = w.layers[static_cast<std::size_t>(l)].weight;
        for (Index c = 0; c < m.cols(); ++c)
            for (Index r = 0; r < m.rows(); ++r) m(r, c) = normal(rng);
    }
    return w;
}

inline void check_weights(const CnnArchitecture &arch, const CnnWeights &w) {
    arch.validate();
    if (static_cast<int>(w.layers.size()) != arch.layers)
        throw InvalidArgument("cnn: weight layer count does not match the architecture");
    for (int l = 0; l < arch.layers; ++l) {
        const auto &layer = w.layers[static_cast<std::size_t>(l)];
        if (layer.weight.rows() != arch.out_channels(l) || layer.weight.cols() != 9 * arch.in_channels(l) ||
            layer.bias.size() != arch.out_channels(l))
            throw InvalidArgument("cnn: weight shape mismatch in layer " + std::to_string(l));
    }
    if (!w.all_finite()) throw InvalidArgument("cnn: non-finite weights");
}

namespace detail {

// Channel-major activation: rows are channels, columns are pixels (row-major order).
using Activation = Eigen::MatrixXd;

// Patch matrix for a 3x3 same convolution with zero padding: (9*C) x (H*W).
inline Eigen::MatrixXd im2col(const Activation &a, Index h, Index w) {
    const Index c = a.rows();
    Eigen::MatrixXd col = Eigen::MatrixXd::Zero(9 * c, h * w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            const Index p = y * w + x;
            for (int kh = 0; kh < 3; ++kh) {
                const Index yy = y + kh - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kw = 0; kw < 3; ++kw) {
                    const Index xx = x + kw - 1;
                    if (xx < 0 || xx >= w) continue;
                    col.col(p).segment((kh * 3 + kw) * c, c) = a.col(yy * w + xx);
                }
            }
        }
    return col;
}

// Adjoint of im2col.
inline Activation col2im(const Eigen::MatrixXd &col, Index c, Index h, Index w) {
    Activation a = Activation::Zero(c, h * w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            const Index p = y * w + x;
            for (int kh = 0; kh < 3; ++kh) {
                const Index yy = y + kh - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kw = 0; kw < 3; ++kw) {
                    const Index xx = x + kw - 1;
                    if (xx < 0 || xx >= w) continue;
                    a.col(yy * w + xx) += col.col(p).segment((kh * 3 + kw) * c, c);
                }
            }
        }
    return a;
}

struct ForwardTape {
    std::vector<Eigen::MatrixXd> cols;  // layer inputs in patch form
    std::vector<Activation> pre;        // pre-activation outputs
};

inline Activation run_forward(const CnnWeights &w, const Grid &image, ForwardTape *tape) {
    const Index h = image.rows(), wd = image.cols();
    Activation a = Eigen::Map<const Eigen::RowVectorXd>(image.data(), image.size());
    const std::size_t n = w.layers.size();
    if (tape) {
        tape->cols.resize(n);
        tape->pre.resize(n);
    }
    for (std::size_t l = 0; l < n; ++l) {
        Eigen::MatrixXd col = im2col(a, h, wd);
        Activation z = w.layers[l].weight * col;
        z.colwise() += w.layers[l].bias;
        if (tape) {
            tape->cols[l] = std::move(col);
            tape->pre[l] = z;
        }
        a = l + 1 < n ? Activation(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
}

} // namespace detail

/// Predicted residual (noise) image C_w(image).
inline Grid cnn_forward(const CnnArchitecture &arch, const CnnWeights &weights, const Grid &image) {
    check_weights(arch, weights);
    if (!image.allFinite()) throw InvalidArgument("cnn_forward: non-finite input");
    const detail::Activation out = detail::run_forward(weights, image, nullptr);
    return Eigen::Map<const Grid>(out.data(), image.rows(), image.cols());
}

/// A (noisy input, clean target) pair.
struct TrainingPair {
    Grid noisy;
    Grid clean;
};

/// Loss (1/2B) sum_i ||C_w(noisy_i) - (noisy_i - clean_i)||_F^2 and its exact
/// gradient with respect to every weight and bias.
struct LossAndGradient {
    double loss = 0.0;
    CnnWeights grad;
};

inline LossAndGradient cnn_backward(const CnnArchitecture &arch, const CnnWeights &weights,
                                    const std::vector<TrainingPair> &batch) {
    check_weights(arch, weights);
    if (batch.empty()) throw InvalidArgument("cnn_backward: empty batch");
    LossAndGradient out;
    out.grad = zero_weights(arch);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const std::size_t n = weights.layers.size();
    detail::ForwardTape tape;
    for (const auto &pair : batch) {
        if (pair.noisy.rows() != pair.clean.rows() || pair.noisy.cols() != pair.clean.cols())
            throw InvalidArgument("cnn_backward: noisy/clean shape mismatch");
        const Index h = pair.noisy.rows(), wd = pair.noisy.cols();
        const detail::Activation pred = detail::run_forward(weights, pair.noisy, &tape);
        const Grid target = pair.noisy - pair.clean;
        detail::Activation delta =
            pred - Eigen::Map<const Eigen::RowVectorXd>(target.data(), target.size());
        out.loss += 0.5 * inv_b * delta.squaredNorm();
        delta *= inv_b;
        for (std::size_t l = n; l-- > 0;) {
            if (l + 1 < n) delta = delta.cwiseProduct((tape.pre[l].array() > 0.0).cast<double>().matrix());
            out.grad.layers[l].weight.noalias() += delta * tape.cols[l].transpose();
            out.grad.layers[l].bias += delta.rowwise().sum();
            if (l == 0) break;
            const Eigen::MatrixXd dcol = weights.layers[l].weight.transpose() * delta;
            delta = detail::col2im(dcol, weights.layers[l].weight.cols() / 9, h, wd);
        }
    }
    if (!std::isfinite(out.loss)) throw NumericalError("cnn_backward: non-finite loss");
    return out;
}

/// Adam optimizer state over a CnnWeights-shaped parameter set.
class Adam {
public:
    Adam(const CnnArchitecture &arch, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(zero_weights(arch)), v_(zero_weights(arch)) {}

    void step(CnnWeights &w, const CnnWeights &g) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            update(w.layers[l].weight, g.layers[l].weight, m_.layers[l].weight, v_.layers[l].weight, c1, c2);
            update(w.layers[l].bias, g.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias, c1, c2);
        }
    }

private:
    template <class P>
    void update(P &p, const P &g, P &m, P &v, double c1, double c2) const {
        m = b1_ * m + (1.0 - b1_) * g;
        v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
        p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }

    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    CnnWeights m_, v_;
};

} // namespace elastopnp
