#include <random>
#include <set>

#include <gtest/gtest.h>
#include <Eigen/Dense>

#include "elastopnp/fem.hpp"
#include "oracles.hpp"

using namespace elastopnp;

TEST(BuildMesh, Counts) {
    const Mesh a = build_mesh(1, 1, 1.0, 1.0);
    EXPECT_EQ(a.node_count(), 4);
    EXPECT_EQ(a.element_count(), 1);
    EXPECT_EQ(a.dof_count(), 8);
    const Mesh b = build_mesh(2, 2, 1.0, 1.0);
    EXPECT_EQ(b.node_count(), 9);
    EXPECT_EQ(b.element_count(), 4);
    const Mesh c = build_mesh(32, 32, 0.04, 0.04);
    EXPECT_EQ(c.node_count(), 1089);
    EXPECT_EQ(c.dof_count(), 2178);
}

TEST(BuildMesh, NumberingAndOrientation) {
    const Mesh m = build_mesh(3, 2, 3.0, 2.0);
    EXPECT_EQ(m.node_index(2, 1), 6);
    EXPECT_DOUBLE_EQ(m.nodes[6][0], 2.0);
    EXPECT_DOUBLE_EQ(m.nodes[6][1], 1.0);
    for (const auto &el : m.elements) {
        std::set<Index> s(el.begin(), el.end());
        EXPECT_EQ(s.size(), 4u);
        double area2 = 0.0;  // shoelace; positive for counter-clockwise
        for (int a = 0; a < 4; ++a) {
            const auto &p = m.nodes[el[a]];
            const auto &q = m.nodes[el[(a + 1) % 4]];
            area2 += p[0] * q[1] - q[0] * p[1];
        }
        EXPECT_GT(area2, 0.0);
    }
}

TEST(BuildMesh, RejectsBadDimensions) {
    EXPECT_THROW(build_mesh(0, 1, 1.0, 1.0), InvalidArgument);
    EXPECT_THROW(build_mesh(1, -2, 1.0, 1.0), InvalidArgument);
    EXPECT_THROW(build_mesh(1, 1, 0.0, 1.0), InvalidArgument);
    EXPECT_THROW(build_mesh(1, 1, 1.0, -1.0), InvalidArgument);
}

TEST(BuildPsi, RejectsIncompressibleLimit) {
    const Mesh m = build_mesh(1, 1, 1.0, 1.0);
    EXPECT_THROW(build_psi(m, 0.5), InvalidArgument);
    EXPECT_THROW(build_psi(m, -0.1), InvalidArgument);
}

TEST(BuildPsi, BasisSymmetricWithRigidNullspace) {
    for (double nu : {0.0, 0.3, 0.45}) {
        const Mesh m = build_mesh(3, 2, 1.5, 1.0);
        const PsiTensor psi = build_psi(m, nu);
        Vector tx = Vector::Zero(m.dof_count()), ty = Vector::Zero(m.dof_count());
        for (Index k = 0; k < m.node_count(); ++k) {
            tx[2 * k] = 1.0;
            ty[2 * k + 1] = 1.0;
        }
        for (Index j = 0; j < m.node_count(); ++j) {
            const Eigen::MatrixXd kj(psi.basis(j));
            const double scale = kj.cwiseAbs().maxCoeff();
            EXPECT_LE((kj - kj.transpose()).cwiseAbs().maxCoeff(), 1e-15 * scale);
            EXPECT_LE((kj * tx).norm(), 1e-13 * scale);
            EXPECT_LE((kj * ty).norm(), 1e-13 * scale);
        }
    }
}

TEST(BuildPsi, SumOfBasisEqualsDirectUnitAssembly) {
    for (auto [nx, ny, nu] : {std::tuple{1, 1, 0.0}, std::tuple{4, 3, 0.3}, std::tuple{5, 5, 0.45}}) {
        const Mesh m = build_mesh(nx, ny, 0.04, 0.03);
        const PsiTensor psi = build_psi(m, nu);
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m.dof_count(), m.dof_count());
        for (Index j = 0; j < m.node_count(); ++j) sum += Eigen::MatrixXd(psi.basis(j));
        const Eigen::MatrixXd direct = oracle::dense_uniform_stiffness(m, nu, 1.0);
        EXPECT_LE((sum - direct).cwiseAbs().maxCoeff(), 1e-13 * direct.cwiseAbs().maxCoeff());
        const Eigen::MatrixXd k1(assemble_K(psi, Vector::Ones(m.node_count())));
        EXPECT_LE((k1 - direct).cwiseAbs().maxCoeff(), 1e-13 * direct.cwiseAbs().maxCoeff());
    }
}

TEST(BuildPsi, BasisConfinedToAdjacentElements) {
    const Mesh m = build_mesh(2, 2, 1.0, 1.0);
    const PsiTensor psi = build_psi(m, 0.45);
    for (Index j = 0; j < m.node_count(); ++j) {
        std::set<Index> allowed;
        for (const auto &el : m.elements)
            if (std::find(el.begin(), el.end(), j) != el.end())
                for (Index n : el) {
                    allowed.insert(2 * n);
                    allowed.insert(2 * n + 1);
                }
        const SparseMatrix kj = psi.basis(j);
        for (int c = 0; c < kj.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(kj, c); it; ++it) {
                EXPECT_TRUE(allowed.count(it.row())) << "node " << j;
                EXPECT_TRUE(allowed.count(it.col())) << "node " << j;
            }
    }
    EXPECT_THROW(psi.basis(9), InvalidArgument);
}

TEST(AssembleK, LinearSymmetricAndRigid) {
    std::mt19937_64 rng(11);
    const Mesh m = build_mesh(4, 4, 0.04, 0.04);
    const PsiTensor psi = build_psi(m, 0.45);
    const Index n = m.node_count();
    EXPECT_EQ(assemble_K(psi, Vector::Zero(n)).norm(), 0.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector e1 = oracle::random_positive(n, rng), e2 = oracle::random_positive(n, rng);
        const Eigen::MatrixXd k1(assemble_K(psi, e1));
        const double kmax = k1.cwiseAbs().maxCoeff();
        EXPECT_LE((k1 - k1.transpose()).cwiseAbs().maxCoeff(), 1e-14 * kmax);
        EXPECT_LE((Eigen::MatrixXd(assemble_K(psi, 2.0 * e1)) - 2.0 * k1).cwiseAbs().maxCoeff(), 1e-15 * kmax);
        const Eigen::MatrixXd sup(assemble_K(psi, 0.3 * e1 - 1.7 * e2));
        const Eigen::MatrixXd lin = 0.3 * k1 - 1.7 * Eigen::MatrixXd(assemble_K(psi, e2));
        EXPECT_LE((sup - lin).cwiseAbs().maxCoeff(), 1e-13 * lin.cwiseAbs().maxCoeff());
        Vector tx = Vector::Zero(2 * n), ty = Vector::Zero(2 * n);
        for (Index k = 0; k < n; ++k) tx[2 * k] = ty[2 * k + 1] = 1.0;
        EXPECT_LE((k1 * tx).norm(), 1e-12 * k1.norm());
        EXPECT_LE((k1 * ty).norm(), 1e-12 * k1.norm());
    }
    EXPECT_THROW(assemble_K(psi, Vector::Ones(n + 1)), InvalidArgument);
}

TEST(AssembleK, ReducedStiffnessPositiveDefinite) {
    std::mt19937_64 rng(5);
    const Mesh m = build_mesh(4, 4, 0.04, 0.04);
    const PsiTensor psi = build_psi(m, 0.45);
    const auto bc = default_boundary_conditions(m, -1e-3);
    const DofPartition part = partition_dofs(bc, m.dof_count());
    for (int trial = 0; trial < 5; ++trial) {
        const Vector e = oracle::random_positive(m.node_count(), rng);
        const auto sys = reduce_stiffness(assemble_K(psi, e), load_vector(m, bc), part);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(sys.op)};
        EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
        // Unreduced: exactly three rigid modes (two translations, one rotation).
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full{Eigen::MatrixXd(assemble_K(psi, e))};
        const double top = full.eigenvalues().maxCoeff();
        int zeros = 0;
        for (Index i = 0; i < full.eigenvalues().size(); ++i) zeros += full.eigenvalues()[i] < 1e-12 * top;
        EXPECT_EQ(zeros, 3);
    }
}

TEST(AssembleD, MatchesStiffnessActionBeforeAndAfterReduction) {
    std::mt19937_64 rng(21);
    for (int n : {4, 8}) {
        const Mesh m = build_mesh(n, n, 0.04, 0.04);
        const PsiTensor psi = build_psi(m, 0.45);
        const auto bc = default_boundary_conditions(m, -1e-3);
        const DofPartition part = partition_dofs(bc, m.dof_count());
        EXPECT_EQ(assemble_D(psi, Vector::Zero(m.dof_count())).norm(), 0.0);
        for (int trial = 0; trial < 10; ++trial) {
            const Vector e = oracle::random_positive(m.node_count(), rng);
            const Vector u = oracle::random_vector(m.dof_count(), rng, 1e-4);
            const SparseMatrix d = assemble_D(psi, u);
            const SparseMatrix k = assemble_K(psi, e);
            const Vector ku = k * u;
            EXPECT_LE((d * e - ku).norm(), 1e-12 * ku.norm());
            const Vector f = oracle::random_vector(m.dof_count(), rng);
            const auto rd = reduce_forward_operator(d, f, part);
            const Vector kfu = part.selector * ku;
            EXPECT_LE((rd.op * e - kfu).norm(), 1e-12 * kfu.norm());
            // Homogeneity in u and column j == K_j u.
            EXPECT_LE((Eigen::MatrixXd(assemble_D(psi, 3.0 * u)) - 3.0 * Eigen::MatrixXd(d)).cwiseAbs().maxCoeff(),
                      1e-15 * Eigen::MatrixXd(d).cwiseAbs().maxCoeff() * 3.0);
            const Index j = trial % m.node_count();
            EXPECT_LE((Vector(d.col(j)) - psi.basis(j) * u).norm(), 1e-14 * ku.norm());
        }
    }
    const PsiTensor psi = build_psi(build_mesh(2, 2, 1, 1), 0.3);
    EXPECT_THROW(assemble_D(psi, Vector::Zero(5)), InvalidArgument);
}

TEST(ReduceSystem, IdentityWithoutDirichletAndLoadConsistency) {
    const Mesh m = build_mesh(5, 3, 0.05, 0.03);
    const PsiTensor psi = build_psi(m, 0.3);
    const auto bc = default_boundary_conditions(m, -2.5);
    const Vector f = load_vector(m, bc);
    double total_y = 0.0, total_x = 0.0;
    for (Index k = 0; k < m.node_count(); ++k) {
        total_x += f[2 * k];
        total_y += f[2 * k + 1];
    }
    EXPECT_NEAR(total_y, -2.5 * 0.05, 1e-12);
    EXPECT_EQ(total_x, 0.0);

    // An empty Dirichlet set leaves the operator untouched.
    DofPartition none;
    none.free_of_dof.resize(static_cast<std::size_t>(m.dof_count()));
    for (Index d = 0; d < m.dof_count(); ++d) {
        none.free.push_back(d);
        none.free_of_dof[static_cast<std::size_t>(d)] = d;
    }
    none.prescribed = Vector::Zero(m.dof_count());
    none.selector.resize(m.dof_count(), m.dof_count());
    none.selector.setIdentity();
    const SparseMatrix k = assemble_K(psi, Vector::Ones(m.node_count()));
    const auto sys = reduce_stiffness(k, f, none);
    EXPECT_EQ((Eigen::MatrixXd(sys.op) - Eigen::MatrixXd(k)).norm(), 0.0);
    EXPECT_EQ((sys.rhs - f).norm(), 0.0);
}

TEST(ReduceSystem, NonzeroPrescribedValuesCorrectRhs) {
    const Mesh m = build_mesh(3, 3, 1.0, 1.0);
    const PsiTensor psi = build_psi(m, 0.3);
    auto bc = default_boundary_conditions(m, 0.0);
    bc.dirichlet.emplace_back(2 * m.node_index(3, 3), 0.01);  // prescribed lateral shift of a top corner
    const Vector e = Vector::Constant(m.node_count(), 2.0);
    const Vector u = forward_solve(psi, e, bc);
    EXPECT_DOUBLE_EQ(u[2 * m.node_index(3, 3)], 0.01);
    const Vector r = assemble_K(psi, e) * u - load_vector(m, bc);
    const DofPartition part = partition_dofs(bc, m.dof_count());
    EXPECT_LE(part.restrict(r).norm(), 1e-12);
}

TEST(BoundaryConditions, Validation) {
    const Mesh m = build_mesh(2, 2, 1.0, 1.0);
    BoundaryConditions bc;
    bc.dirichlet = {{0, 0.0}, {1, 0.0}};
    EXPECT_THROW(bc.validate(m.dof_count()), InvalidArgument);
    bc.dirichlet = {{0, 0.0}, {1, 0.0}, {1, 0.0}};
    EXPECT_THROW(bc.validate(m.dof_count()), InvalidArgument);
    bc.dirichlet = {{0, 0.0}, {1, 0.0}, {99, 0.0}};
    EXPECT_THROW(bc.validate(m.dof_count()), InvalidArgument);
    bc.dirichlet = {{1, 0.0}, {3, 0.0}, {5, 0.0}};
    EXPECT_THROW(bc.validate(m.dof_count()), InvalidArgument);
    EXPECT_NO_THROW(default_boundary_conditions(m, -1.0).validate(m.dof_count()));
}

// Uniaxial plane-strain compression: sigma_yy = -p, sigma_xx = 0 gives
// eps_yy = -(1-nu^2) p / E and eps_xx = nu (1+nu) p / E.
TEST(ForwardSolve, PatchTest) {
    for (double nu : {0.3, 0.45})
        for (int n : {1, 2, 5, 16, 32}) {
            const Mesh m = build_mesh(n, n + 1, 0.04, 0.05);
            const PsiTensor psi = build_psi(m, nu);
            const double p = 2e-3, e0 = 0.125;
            const auto bc = default_boundary_conditions(m, -p);
            const Vector u = forward_solve(psi, Vector::Constant(m.node_count(), e0), bc);
            const double eyy = -(1 - nu * nu) * p / e0;
            const double exx = nu * (1 + nu) * p / e0;
            double worst = 0.0, scale = 0.0;
            for (Index k = 0; k < m.node_count(); ++k) {
                const auto &x = m.nodes[static_cast<std::size_t>(k)];
                worst = std::max({worst, std::abs(u[2 * k] - exx * x[0]), std::abs(u[2 * k + 1] - eyy * x[1])});
                scale = std::max({scale, std::abs(exx * x[0]), std::abs(eyy * x[1])});
            }
            EXPECT_LE(worst, 1e-8 * scale) << "n=" << n << " nu=" << nu;
        }
}

TEST(ForwardSolve, ZeroLoadAndScaling) {
    const Mesh m = build_mesh(6, 6, 0.04, 0.04);
    const PsiTensor psi = build_psi(m, 0.45);
    std::mt19937_64 rng(9);
    const Vector e = oracle::random_positive(m.node_count(), rng, 0.1, 0.8);
    EXPECT_EQ(forward_solve(psi, e, default_boundary_conditions(m, 0.0)).norm(), 0.0);
    const auto bc = default_boundary_conditions(m, -1e-3);
    const Vector u1 = forward_solve(psi, e, bc);
    const Vector u2 = forward_solve(psi, 2.0 * e, bc);
    EXPECT_LE((u1 - 2.0 * u2).norm(), 1e-12 * u1.norm());
}

TEST(ForwardSolve, SingularSystemDetected) {
    const Mesh m = build_mesh(3, 3, 1.0, 1.0);
    const PsiTensor psi = build_psi(m, 0.3);
    BoundaryConditions bc;
    // Three axial constraints on the bottom edge leave lateral translation free.
    bc.dirichlet = {{1, 0.0}, {3, 0.0}, {5, 0.0}, {7, 0.0}};
    bc.top_traction = -1.0;
    EXPECT_THROW(forward_solve(psi, Vector::Ones(m.node_count()), bc), InvalidArgument);
    // Both translations fixed, but rotation about node 0 still moves node 1 only axially.
    bc.dirichlet = {{0, 0.0}, {1, 0.0}, {2, 0.0}};
    EXPECT_THROW(forward_solve(psi, Vector::Ones(m.node_count()), bc), NumericalError);
}
