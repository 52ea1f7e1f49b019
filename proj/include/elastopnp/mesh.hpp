#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elastopnp/error.hpp"

namespace elastopnp {

using Index = std::ptrdiff_t;
using Vector = Eigen::VectorXd;

/// Regular grid of bilinear quadrilaterals on [0,width] x [0,height].
///
/// Node (i,j) with i along x (lateral) and j along y (axial) has index
/// j*(nx+1)+i. Node k owns DOFs 2k (lateral) and 2k+1 (axial). Element (i,j)
/// lists its corners counter-clockwise starting at the lower-left node.
struct Mesh {
    Index nx = 0;
    Index ny = 0;
    double width = 0.0;
    double height = 0.0;
    std::vector<std::array<double, 2>> nodes;
    std::vector<std::array<Index, 4>> elements;

    Index node_count() const { return (nx + 1) * (ny + 1); }
    Index dof_count() const { return 2 * node_count(); }
    Index element_count() const { return nx * ny; }
    double hx() const { return width / static_cast<double>(nx); }
    double hy() const { return height / static_cast<double>(ny); }
    Index node_index(Index i, Index j) const { return j * (nx + 1) + i; }

    // Nodal fields are viewed as images with (ny+1) rows and (nx+1) columns.
    Index grid_rows() const { return ny + 1; }
    Index grid_cols() const { return nx + 1; }
};

inline Mesh build_mesh(Index nx, Index ny, double width, double height) {
    if (nx < 1 || ny < 1)
        throw InvalidArgument("build_mesh: element counts must be >= 1");
    if (!(width > 0.0) || !(height > 0.0))
        throw InvalidArgument("build_mesh: physical extents must be > 0");

    Mesh m;
    m.nx = nx;
    m.ny = ny;
    m.width = width;
    m.height = height;
    m.nodes.reserve(static_cast<std::size_t>(m.node_count()));
    for (Index j = 0; j <= ny; ++j)
        for (Index i = 0; i <= nx; ++i)
            m.nodes.push_back({width * static_cast<double>(i) / static_cast<double>(nx),
                               height * static_cast<double>(j) / static_cast<double>(ny)});
    m.elements.reserve(static_cast<std::size_t>(m.element_count()));
    for (Index j = 0; j < ny; ++j)
        for (Index i = 0; i < nx; ++i)
            m.elements.push_back({m.node_index(i, j), m.node_index(i + 1, j),
                                  m.node_index(i + 1, j + 1), m.node_index(i, j + 1)});
    return m;
}

} // namespace elastopnp
