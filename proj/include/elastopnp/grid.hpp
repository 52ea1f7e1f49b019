#pragma once

#include <Eigen/Core>

#include "elastopnp/error.hpp"
#include "elastopnp/mesh.hpp"

namespace elastopnp {

/// Row-major 2-D field. A nodal vector of a Mesh maps onto a Grid with
/// (ny+1) rows and (nx+1) columns without reordering.
using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Grid to_grid(const Vector &nodal, Index rows, Index cols) {
    if (nodal.size() != rows * cols) throw InvalidArgument("to_grid: size mismatch");
    return Eigen::Map<const Grid>(nodal.data(), rows, cols);
}

inline Grid to_grid(const Vector &nodal, const Mesh &mesh) {
    return to_grid(nodal, mesh.grid_rows(), mesh.grid_cols());
}

inline Vector to_nodal(const Grid &g) { return Eigen::Map<const Vector>(g.data(), g.size()); }

} // namespace elastopnp
