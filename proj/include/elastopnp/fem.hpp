#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "elastopnp/error.hpp"
#include "elastopnp/mesh.hpp"

namespace elastopnp {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using ElementMatrix = Eigen::Matrix<double, 8, 8>;

/// Plane-strain constitutive matrix for unit Young's modulus (Voigt order xx, yy, xy).
inline Eigen::Matrix3d plane_strain_elasticity(double nu) {
    const double s = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Eigen::Matrix3d c;
    c << s * (1.0 - nu), s * nu, 0.0,
         s * nu, s * (1.0 - nu), 0.0,
         0.0, 0.0, s * (1.0 - 2.0 * nu) / 2.0;
    return c;
}

/// The tensor that realizes both K(E) = sum_j E_j K_j and D(u) = [K_1 u, ..., K_N u].
///
/// Every element of a regular grid has the same geometry, so the per-node
/// basis matrices K_j are stored implicitly: `local_[a]` is the 8x8 element
/// stiffness obtained with the modulus field equal to the bilinear shape
/// function of corner a. K_j is the scatter of local_[a] over every element
/// in which node j is corner a.
class PsiTensor {
public:
    PsiTensor(const Mesh &mesh, double nu, std::array<ElementMatrix, 4> local)
        : mesh_(mesh), nu_(nu), local_(std::move(local)) {}

    const Mesh &mesh() const { return mesh_; }
    double poisson_ratio() const { return nu_; }
    Index node_count() const { return mesh_.node_count(); }
    Index dof_count() const { return mesh_.dof_count(); }
    const ElementMatrix &local_basis(int corner) const { return local_[static_cast<std::size_t>(corner)]; }

    /// Materializes K_j as a 2N x 2N sparse matrix.
    SparseMatrix basis(Index j) const {
        if (j < 0 || j >= node_count()) throw InvalidArgument("PsiTensor::basis: node index out of range");
        std::vector<Triplet> trip;
        const Index i = j % (mesh_.nx + 1);
        const Index jj = j / (mesh_.nx + 1);
        // Elements touching node (i,jj) and the corner that node occupies in each.
        const std::array<std::array<Index, 3>, 4> candidates{{
            {i, jj, 0}, {i - 1, jj, 1}, {i - 1, jj - 1, 2}, {i, jj - 1, 3}}};
        for (const auto &c : candidates) {
            if (c[0] < 0 || c[1] < 0 || c[0] >= mesh_.nx || c[1] >= mesh_.ny) continue;
            const auto &el = mesh_.elements[static_cast<std::size_t>(c[1] * mesh_.nx + c[0])];
            scatter(trip, el, local_[static_cast<std::size_t>(c[2])], 1.0);
        }
        SparseMatrix k(dof_count(), dof_count());
        k.setFromTriplets(trip.begin(), trip.end());
        return k;
    }

    static std::array<Index, 8> element_dofs(const std::array<Index, 4> &el) {
        return {2 * el[0], 2 * el[0] + 1, 2 * el[1], 2 * el[1] + 1,
                2 * el[2], 2 * el[2] + 1, 2 * el[3], 2 * el[3] + 1};
    }

    static void scatter(std::vector<Triplet> &trip, const std::array<Index, 4> &el,
                        const ElementMatrix &ke, double scale) {
        const auto dofs = element_dofs(el);
        for (int c = 0; c < 8; ++c)
            for (int r = 0; r < 8; ++r) {
                const double v = scale * ke(r, c);
                if (v != 0.0) trip.emplace_back(dofs[static_cast<std::size_t>(r)], dofs[static_cast<std::size_t>(c)], v);
            }
    }

private:
    Mesh mesh_;
    double nu_;
    std::array<ElementMatrix, 4> local_;
};

namespace detail {

// Natural coordinates of the element corners, counter-clockwise from (-1,-1).
inline constexpr std::array<std::array<double, 2>, 4> corner_xi{{{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}};

inline double shape(int a, double xi, double eta) {
    const auto &c = corner_xi[static_cast<std::size_t>(a)];
    return 0.25 * (1.0 + c[0] * xi) * (1.0 + c[1] * eta);
}

// Strain-displacement matrix of an hx x hy rectangle at (xi, eta).
inline Eigen::Matrix<double, 3, 8> strain_matrix(double xi, double eta, double hx, double hy) {
    Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
    for (int a = 0; a < 4; ++a) {
        const auto &c = corner_xi[static_cast<std::size_t>(a)];
        const double dx = 0.25 * c[0] * (1.0 + c[1] * eta) * 2.0 / hx;
        const double dy = 0.25 * c[1] * (1.0 + c[0] * xi) * 2.0 / hy;
        b(0, 2 * a) = dx;
        b(1, 2 * a + 1) = dy;
        b(2, 2 * a) = dy;
        b(2, 2 * a + 1) = dx;
    }
    return b;
}

} // namespace detail

/// Builds the per-node stiffness basis by 2x2 Gauss quadrature. The modulus
/// inside an element is the bilinear interpolant of its nodal values, so the
/// integrand is at most cubic per axis and the rule is exact.
inline PsiTensor build_psi(const Mesh &mesh, double nu) {
    if (!(nu >= 0.0) || !(nu < 0.5))
        throw InvalidArgument("build_psi: Poisson ratio must satisfy 0 <= nu < 0.5");
    if (mesh.nx < 1 || mesh.ny < 1) throw InvalidArgument("build_psi: empty mesh");

    const Eigen::Matrix3d c = plane_strain_elasticity(nu);
    const double hx = mesh.hx();
    const double hy = mesh.hy();
    const double det_j = 0.25 * hx * hy;
    const double g = 1.0 / std::sqrt(3.0);

    std::array<ElementMatrix, 4> local;
    for (auto &k : local) k.setZero();
    for (double xi : {-g, g})
        for (double eta : {-g, g}) {
            const auto b = detail::strain_matrix(xi, eta, hx, hy);
            const ElementMatrix btcb = b.transpose() * c * b * det_j;
            for (int a = 0; a < 4; ++a) local[static_cast<std::size_t>(a)] += detail::shape(a, xi, eta) * btcb;
        }
    for (auto &k : local) k = 0.5 * (k + k.transpose()).eval();
    return PsiTensor(mesh, nu, local);
}

/// K(E) = sum_j E_j K_j, a 2N x 2N symmetric sparse matrix.
inline SparseMatrix assemble_K(const PsiTensor &psi, const Vector &modulus) {
    const Mesh &mesh = psi.mesh();
    if (modulus.size() != mesh.node_count())
        throw InvalidArgument("assemble_K: modulus length " + std::to_string(modulus.size()) +
                              " does not match node count " + std::to_string(mesh.node_count()));
    if (!modulus.allFinite()) throw InvalidArgument("assemble_K: non-finite modulus");

    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(mesh.element_count()) * 64);
    for (const auto &el : mesh.elements) {
        ElementMatrix ke = ElementMatrix::Zero();
        for (int a = 0; a < 4; ++a) ke += modulus[el[static_cast<std::size_t>(a)]] * psi.local_basis(a);
        PsiTensor::scatter(trip, el, ke, 1.0);
    }
    SparseMatrix k(mesh.dof_count(), mesh.dof_count());
    k.setFromTriplets(trip.begin(), trip.end());
    return k;
}

/// D(u), 2N x N, whose column j is K_j u. D(u) E == K(E) u for every E.
inline SparseMatrix assemble_D(const PsiTensor &psi, const Vector &displacement) {
    const Mesh &mesh = psi.mesh();
    if (displacement.size() != mesh.dof_count())
        throw InvalidArgument("assemble_D: displacement length " + std::to_string(displacement.size()) +
                              " does not match DOF count " + std::to_string(mesh.dof_count()));
    if (!displacement.allFinite()) throw InvalidArgument("assemble_D: non-finite displacement");

    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(mesh.element_count()) * 32);
    Eigen::Matrix<double, 8, 1> ue;
    for (const auto &el : mesh.elements) {
        const auto dofs = PsiTensor::element_dofs(el);
        for (int r = 0; r < 8; ++r) ue[r] = displacement[dofs[static_cast<std::size_t>(r)]];
        for (int a = 0; a < 4; ++a) {
            const Eigen::Matrix<double, 8, 1> col = psi.local_basis(a) * ue;
            for (int r = 0; r < 8; ++r)
                if (col[r] != 0.0) trip.emplace_back(dofs[static_cast<std::size_t>(r)], el[static_cast<std::size_t>(a)], col[r]);
        }
    }
    SparseMatrix d(mesh.dof_count(), mesh.node_count());
    d.setFromTriplets(trip.begin(), trip.end());
    return d;
}

/// Dirichlet constraints plus a uniform normal traction on the top edge.
struct BoundaryConditions {
    std::vector<std::pair<Index, double>> dirichlet;
    double top_traction = 0.0; // negative compresses
    Index pinned_lateral_dof = -1;

    void validate(Index dof_count) const {
        if (dirichlet.size() < 3)
            throw InvalidArgument("BoundaryConditions: at least 3 Dirichlet constraints are required");
        std::vector<Index> ids;
        ids.reserve(dirichlet.size());
        bool lateral = false, axial = false;
        for (const auto &[dof, value] : dirichlet) {
            if (dof < 0 || dof >= dof_count)
                throw InvalidArgument("BoundaryConditions: DOF " + std::to_string(dof) + " out of range");
            if (!std::isfinite(value)) throw InvalidArgument("BoundaryConditions: non-finite prescribed value");
            (dof % 2 == 0 ? lateral : axial) = true;
            ids.push_back(dof);
        }
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            throw InvalidArgument("BoundaryConditions: duplicate Dirichlet DOF");
        if (!lateral || !axial)
            throw InvalidArgument("BoundaryConditions: both lateral and axial motion must be constrained");
        if (pinned_lateral_dof >= 0 && !std::binary_search(ids.begin(), ids.end(), pinned_lateral_dof))
            throw InvalidArgument("BoundaryConditions: pinned lateral DOF is not constrained");
        if (!std::isfinite(top_traction)) throw InvalidArgument("BoundaryConditions: non-finite traction");
    }
};

/// Bottom rollers (u_y = 0), lateral pin at the bottom-left corner, free
/// sides, uniform traction on the top edge.
inline BoundaryConditions default_boundary_conditions(const Mesh &mesh, double top_traction) {
    BoundaryConditions bc;
    bc.top_traction = top_traction;
    bc.pinned_lateral_dof = 2 * mesh.node_index(0, 0);
    bc.dirichlet.emplace_back(bc.pinned_lateral_dof, 0.0);
    for (Index i = 0; i <= mesh.nx; ++i) bc.dirichlet.emplace_back(2 * mesh.node_index(i, 0) + 1, 0.0);
    return bc;
}

/// Consistent nodal loads of the top-edge traction (trapezoidal lumping per edge segment).
inline Vector load_vector(const Mesh &mesh, const BoundaryConditions &bc) {
    Vector f = Vector::Zero(mesh.dof_count());
    const double half = 0.5 * bc.top_traction * mesh.hx();
    for (Index i = 0; i < mesh.nx; ++i) {
        f[2 * mesh.node_index(i, mesh.ny) + 1] += half;
        f[2 * mesh.node_index(i + 1, mesh.ny) + 1] += half;
    }
    return f;
}

/// Split of the DOFs into free and prescribed sets.
struct DofPartition {
    std::vector<Index> free;         // ascending
    std::vector<Index> free_of_dof;  // -1 for prescribed DOFs
    Vector prescribed;               // full length; prescribed values, zero on free DOFs
    SparseMatrix selector;           // n_free x n_dof row selection

    Index dof_count() const { return static_cast<Index>(free_of_dof.size()); }
    Index free_count() const { return static_cast<Index>(free.size()); }

    Vector restrict(const Vector &full) const {
        Vector out(free_count());
        for (Index k = 0; k < free_count(); ++k) out[k] = full[free[static_cast<std::size_t>(k)]];
        return out;
    }

    Vector expand(const Vector &reduced) const {
        Vector out = prescribed;
        for (Index k = 0; k < free_count(); ++k) out[free[static_cast<std::size_t>(k)]] = reduced[k];
        return out;
    }
};

inline DofPartition partition_dofs(const BoundaryConditions &bc, Index dof_count) {
    bc.validate(dof_count);
    DofPartition p;
    p.free_of_dof.assign(static_cast<std::size_t>(dof_count), 0);
    p.prescribed = Vector::Zero(dof_count);
    for (const auto &[dof, value] : bc.dirichlet) {
        p.free_of_dof[static_cast<std::size_t>(dof)] = -1;
        p.prescribed[dof] = value;
    }
    for (Index d = 0; d < dof_count; ++d)
        if (p.free_of_dof[static_cast<std::size_t>(d)] == 0) {
            p.free_of_dof[static_cast<std::size_t>(d)] = static_cast<Index>(p.free.size());
            p.free.push_back(d);
        }
    std::vector<Triplet> trip;
    trip.reserve(p.free.size());
    for (Index k = 0; k < p.free_count(); ++k) trip.emplace_back(k, p.free[static_cast<std::size_t>(k)], 1.0);
    p.selector.resize(p.free_count(), dof_count);
    p.selector.setFromTriplets(trip.begin(), trip.end());
    return p;
}

struct ReducedSystem {
    SparseMatrix op;
    Vector rhs;
};

/// Eliminates the prescribed DOFs of K: returns K_ff and f_f - K_fp u_p.
inline ReducedSystem reduce_stiffness(const SparseMatrix &k, const Vector &f, const DofPartition &part) {
    if (k.rows() != part.dof_count() || k.cols() != part.dof_count() || f.size() != part.dof_count())
        throw InvalidArgument("reduce_stiffness: dimension mismatch");
    const SparseMatrix rows = part.selector * k;
    ReducedSystem out;
    out.op = rows * part.selector.transpose();
    out.rhs = part.restrict(f) - rows * part.prescribed;
    return out;
}

/// Keeps the free rows of D(u): the reduced identity D_f(u) E = K_ff(E) u_f + K_fp(E) u_p
/// holds because D(u) is built from the full displacement vector.
inline ReducedSystem reduce_forward_operator(const SparseMatrix &d, const Vector &f, const DofPartition &part) {
    if (d.rows() != part.dof_count() || f.size() != part.dof_count())
        throw InvalidArgument("reduce_forward_operator: dimension mismatch");
    return {part.selector * d, part.restrict(f)};
}

namespace detail {
// Rejects numerically rank-deficient factors: a squared pivot ratio below 1e-14
// means the matrix is singular to working precision.
inline bool pivots_regular(const Eigen::SimplicialLLT<SparseMatrix> &chol) {
    const Vector d = SparseMatrix(chol.matrixL()).diagonal();
    if (d.size() == 0) return true;
    const double lo = d.cwiseAbs().minCoeff(), hi = d.cwiseAbs().maxCoeff();
    return lo * lo > 1e-14 * hi * hi;
}
} // namespace detail

/// Solves K(E) u = f on the free DOFs by sparse Cholesky.
inline Vector forward_solve(const PsiTensor &psi, const Vector &modulus, const BoundaryConditions &bc) {
    if (modulus.size() == psi.node_count() && (modulus.array() <= 0.0).any())
        throw InvalidArgument("forward_solve: modulus must be strictly positive");
    const DofPartition part = partition_dofs(bc, psi.dof_count());
    const SparseMatrix k = assemble_K(psi, modulus);
    const Vector f = load_vector(psi.mesh(), bc);
    const ReducedSystem sys = reduce_stiffness(k, f, part);

    Eigen::SimplicialLLT<SparseMatrix> chol(sys.op);
    if (chol.info() != Eigen::Success || !detail::pivots_regular(chol))
        throw NumericalError("forward_solve: reduced stiffness is singular (rigid-body mode not removed?)");
    const Vector uf = chol.solve(sys.rhs);
    const double rhs_norm = sys.rhs.norm();
    const double res = (sys.op * uf - sys.rhs).norm();
    if (!uf.allFinite() || (rhs_norm > 0.0 && res > 1e-10 * rhs_norm))
        throw NumericalError("forward_solve: residual " + std::to_string(res) + " exceeds tolerance");
    return part.expand(uf);
}

} // namespace elastopnp
