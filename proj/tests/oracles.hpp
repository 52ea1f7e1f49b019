// Independent reference computations used only by the tests.
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "elastopnp/cnn.hpp"
#include "elastopnp/fem.hpp"
#include "elastopnp/stat_model.hpp"

namespace oracle {

using elastopnp::Index;
using elastopnp::Vector;

// Constant-modulus bilinear quad stiffness by 3x3 Gauss-Legendre, written
// against explicit shape-function derivatives.
inline Eigen::Matrix<double, 8, 8> constant_element_stiffness(double hx, double hy, double nu, double e) {
    const double pts[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    const double wts[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    const double xa[4] = {-1, 1, 1, -1};
    const double ya[4] = {-1, -1, 1, 1};
    const double lam = e * nu / ((1 + nu) * (1 - 2 * nu));
    const double mu = e / (2 * (1 + nu));
    Eigen::Matrix3d c;
    c << lam + 2 * mu, lam, 0, lam, lam + 2 * mu, 0, 0, 0, mu;
    Eigen::Matrix<double, 8, 8> k = Eigen::Matrix<double, 8, 8>::Zero();
    for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) {
            Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
            for (int a = 0; a < 4; ++a) {
                const double dndx = xa[a] * (1 + ya[a] * pts[q]) / (2 * hx);
                const double dndy = ya[a] * (1 + xa[a] * pts[p]) / (2 * hy);
                b(0, 2 * a) = dndx;
                b(1, 2 * a + 1) = dndy;
                b(2, 2 * a) = dndy;
                b(2, 2 * a + 1) = dndx;
            }
            k += wts[p] * wts[q] * b.transpose() * c * b * (hx * hy / 4);
        }
    return k;
}

// Dense global stiffness for an element-wise constant modulus.
inline Eigen::MatrixXd dense_uniform_stiffness(const elastopnp::Mesh &m, double nu, double e) {
    const auto ke = constant_element_stiffness(m.hx(), m.hy(), nu, e);
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m.dof_count(), m.dof_count());
    for (const auto &el : m.elements) {
        const auto dofs = elastopnp::PsiTensor::element_dofs(el);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) k(dofs[r], dofs[c]) += ke(r, c);
    }
    return k;
}

// Direct 3x3 "same" convolution with zero padding, loop form.
inline elastopnp::Grid naive_cnn(const elastopnp::CnnArchitecture &arch, const elastopnp::CnnWeights &w,
                                 const elastopnp::Grid &img) {
    const Index h = img.rows(), wd = img.cols();
    std::vector<std::vector<double>> act(1, std::vector<double>(img.data(), img.data() + img.size()));
    for (int l = 0; l < arch.layers; ++l) {
        const int cin = arch.in_channels(l), cout = arch.out_channels(l);
        const auto &layer = w.layers[static_cast<std::size_t>(l)];
        std::vector<std::vector<double>> next(static_cast<std::size_t>(cout), std::vector<double>(static_cast<std::size_t>(h * wd)));
        for (int o = 0; o < cout; ++o)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < wd; ++x) {
                    double s = layer.bias[o];
                    for (int i = 0; i < cin; ++i)
                        for (int kh = 0; kh < 3; ++kh)
                            for (int kw = 0; kw < 3; ++kw) {
                                const Index yy = y + kh - 1, xx = x + kw - 1;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                s += layer.weight(o, (kh * 3 + kw) * cin + i) * act[static_cast<std::size_t>(i)][static_cast<std::size_t>(yy * wd + xx)];
                            }
                    next[static_cast<std::size_t>(o)][static_cast<std::size_t>(y * wd + x)] = (l + 1 < arch.layers) ? std::max(s, 0.0) : s;
                }
        act = std::move(next);
    }
    elastopnp::Grid out(h, wd);
    for (Index p = 0; p < h * wd; ++p) out.data()[p] = act[0][static_cast<std::size_t>(p)];
    return out;
}

inline Vector random_positive(Index n, std::mt19937_64 &rng, double lo = 0.05, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

inline Vector random_vector(Index n, std::mt19937_64 &rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = g(rng);
    return v;
}

} // namespace oracle
