#pragma once

#include <cmath>

#include "elastopnp/grid.hpp"

namespace elastopnp {

namespace detail {

// Forward differences with Neumann boundary (zero on the last row/column).
inline void forward_gradient(const Grid &x, Grid &gx, Grid &gy) {
    const Index r = x.rows(), c = x.cols();
    gx.setZero(r, c);
    gy.setZero(r, c);
    if (c > 1) gx.leftCols(c - 1) = x.rightCols(c - 1) - x.leftCols(c - 1);
    if (r > 1) gy.topRows(r - 1) = x.bottomRows(r - 1) - x.topRows(r - 1);
}

// Negative adjoint of forward_gradient.
inline Grid divergence(const Grid &px, const Grid &py) {
    const Index r = px.rows(), c = px.cols();
    Grid d = Grid::Zero(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
            double v = 0.0;
            if (c > 1) {
                if (j < c - 1) v += px(i, j);
                if (j > 0) v -= px(i, j - 1);
            }
            if (r > 1) {
                if (i < r - 1) v += py(i, j);
                if (i > 0) v -= py(i - 1, j);
            }
            d(i, j) = v;
        }
    return d;
}

} // namespace detail

/// Isotropic total variation with forward differences.
inline double total_variation(const Grid &x) {
    Grid gx, gy;
    detail::forward_gradient(x, gx, gy);
    return (gx.array().square() + gy.array().square()).sqrt().sum();
}

/// Dual variable of the TV prox; keeping it between calls warm-starts the iteration.
struct TvDual {
    Grid px, py;
};

/// Approximates argmin_x 1/2 ||x - image||^2 + weight * TV(x) with `iters`
/// steps of Chambolle's dual projection algorithm (dual step 1/8).
inline Grid tv_prox(const Grid &image, double weight, int iters, TvDual *dual = nullptr) {
    if (!(weight >= 0.0)) throw InvalidArgument("tv_prox: weight must be >= 0");
    if (weight == 0.0 || iters <= 0) return image;
    constexpr double tau = 0.125;
    TvDual local;
    TvDual &p = dual ? *dual : local;
    if (p.px.rows() != image.rows() || p.px.cols() != image.cols()) {
        p.px = Grid::Zero(image.rows(), image.cols());
        p.py = Grid::Zero(image.rows(), image.cols());
    }
    Grid gx, gy;
    for (int it = 0; it < iters; ++it) {
        const Grid v = detail::divergence(p.px, p.py) - image / weight;
        detail::forward_gradient(v, gx, gy);
        const auto denom = 1.0 + tau * (gx.array().square() + gy.array().square()).sqrt();
        p.px = (p.px.array() + tau * gx.array()) / denom;
        p.py = (p.py.array() + tau * gy.array()) / denom;
    }
    return image - weight * detail::divergence(p.px, p.py);
}

} // namespace elastopnp
