#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

#include "elastopnp/fem.hpp"

namespace elastopnp {

/// Isotropic noise levels: Sigma_w = sigma_w^2 I (force equation), Sigma_n = sigma_n^2 I
/// (displacement observation). Non-empty diagonal overrides replace the scalar
/// level; `sigma_w_diag` is indexed by free DOF, `sigma_n_diag` by full DOF.
struct NoiseSpec {
    double sigma_w = 0.0;
    double sigma_n = 0.0;
    Vector sigma_w_diag;
    Vector sigma_n_diag;

    void validate() const {
        if (!(sigma_w >= 0.0) || !(sigma_n >= 0.0) || !std::isfinite(sigma_w) || !std::isfinite(sigma_n))
            throw InvalidArgument("NoiseSpec: standard deviations must be finite and >= 0");
        if (sigma_w_diag.size() > 0 && (sigma_w_diag.array() < 0.0).any())
            throw InvalidArgument("NoiseSpec: negative entry in sigma_w override");
        if (sigma_n_diag.size() > 0 && (sigma_n_diag.array() < 0.0).any())
            throw InvalidArgument("NoiseSpec: negative entry in sigma_n override");
    }
};

/// Force vector, noisy displacements and boundary conditions of one experiment.
/// `f` is full length (2N) and already contains the consistent traction loads.
struct MeasurementSet {
    Vector f;
    Vector u_m;
    BoundaryConditions bc;
    NoiseSpec noise;
};

enum class GammaSolveMethod { cholesky, conjugate_gradient };

/// Gamma = Sigma_w + K(E) Sigma_n K(E)^T on the free DOFs, with a cached solver.
///
/// Immutable once built; concurrent calls to solve() are safe.
class CovarianceModel {
public:
    CovarianceModel() = default;

    Index size() const { return gamma_.rows(); }
    const SparseMatrix &matrix() const { return gamma_; }
    const Vector &modulus() const { return modulus_; }
    GammaSolveMethod method() const { return method_; }

    /// Returns x with Gamma x = v.
    Vector solve(const Vector &v) const {
        if (v.size() != size())
            throw InvalidArgument("gamma_solve: vector length " + std::to_string(v.size()) +
                                  " does not match Gamma size " + std::to_string(size()));
        if (diagonal_) return v.cwiseQuotient(diag_);
        if (method_ == GammaSolveMethod::cholesky) return chol_->solve(v);
        Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
        cg.setTolerance(1e-10);
        cg.setMaxIterations(10 * size());
        cg.compute(gamma_);
        Vector x = cg.solve(v);
        if (cg.info() != Eigen::Success) throw NumericalError("gamma_solve: conjugate gradient did not converge");
        return x;
    }

    friend CovarianceModel build_gamma(const PsiTensor &, const DofPartition &, const Vector &,
                                       const NoiseSpec &, GammaSolveMethod);

private:
    SparseMatrix gamma_;
    Vector modulus_;
    Vector diag_;
    bool diagonal_ = false;
    GammaSolveMethod method_ = GammaSolveMethod::cholesky;
    std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> chol_;
};

inline CovarianceModel build_gamma(const PsiTensor &psi, const DofPartition &part, const Vector &modulus,
                                   const NoiseSpec &noise,
                                   GammaSolveMethod method = GammaSolveMethod::cholesky) {
    noise.validate();
    if (modulus.size() != psi.node_count()) throw InvalidArgument("build_gamma: modulus length mismatch");
    if ((modulus.array() <= 0.0).any()) throw InvalidArgument("build_gamma: modulus must be strictly positive");
    const Index nf = part.free_count();
    if (noise.sigma_w_diag.size() > 0 && noise.sigma_w_diag.size() != nf)
        throw InvalidArgument("build_gamma: sigma_w override length must equal the free DOF count");
    if (noise.sigma_n_diag.size() > 0 && noise.sigma_n_diag.size() != psi.dof_count())
        throw InvalidArgument("build_gamma: sigma_n override length must equal the DOF count");

    CovarianceModel cov;
    cov.modulus_ = modulus;
    cov.method_ = method;

    const Vector var_w = noise.sigma_w_diag.size() > 0 ? Vector(noise.sigma_w_diag.array().square())
                                                       : Vector::Constant(nf, noise.sigma_w * noise.sigma_w);
    const bool has_n = noise.sigma_n_diag.size() > 0 ? (noise.sigma_n_diag.array() > 0.0).any() : noise.sigma_n > 0.0;

    SparseMatrix sw(nf, nf);
    sw.reserve(Eigen::VectorXi::Constant(nf, 1));
    for (Index k = 0; k < nf; ++k) sw.insert(k, k) = var_w[k];

    if (!has_n) {
        if ((var_w.array() <= 0.0).any())
            throw NumericalError("build_gamma: Gamma is not positive definite (sigma_w = 0 and sigma_n = 0)");
        cov.gamma_ = sw;
        cov.diag_ = var_w;
        cov.diagonal_ = true;
        return cov;
    }

    const SparseMatrix k_rows = part.selector * assemble_K(psi, modulus);
    SparseMatrix kn;
    if (noise.sigma_n_diag.size() > 0)
        kn = k_rows * noise.sigma_n_diag.asDiagonal();
    else
        kn = noise.sigma_n * k_rows;
    cov.gamma_ = SparseMatrix(kn * kn.transpose()) + sw;
    cov.gamma_.makeCompressed();

    if (method == GammaSolveMethod::cholesky) {
        auto chol = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(cov.gamma_);
        if (chol->info() != Eigen::Success)
            throw NumericalError("build_gamma: Gamma is not positive definite");
        cov.chol_ = std::move(chol);
    }
    return cov;
}

inline Vector gamma_solve(const CovarianceModel &cov, const Vector &v) { return cov.solve(v); }

namespace detail {
inline void check_fidelity_shapes(const Vector &f, const SparseMatrix &d, const Vector &modulus,
                                  const CovarianceModel &cov) {
    if (d.rows() != f.size() || d.cols() != modulus.size() || cov.size() != f.size())
        throw InvalidArgument("data_fidelity: inconsistent shapes");
    if (!f.allFinite() || !modulus.allFinite()) throw InvalidArgument("data_fidelity: non-finite input");
}
} // namespace detail

/// g(E) = 1/2 (f - D E)^T Gamma^{-1} (f - D E).
inline double data_fidelity(const Vector &f, const SparseMatrix &d, const Vector &modulus,
                            const CovarianceModel &cov) {
    detail::check_fidelity_shapes(f, d, modulus, cov);
    const Vector r = f - d * modulus;
    return std::max(0.0, 0.5 * r.dot(cov.solve(r)));
}

/// grad g(E) = -D^T Gamma^{-1} (f - D E), at fixed Gamma.
inline Vector data_fidelity_grad(const Vector &f, const SparseMatrix &d, const Vector &modulus,
                                 const CovarianceModel &cov) {
    detail::check_fidelity_shapes(f, d, modulus, cov);
    const Vector r = f - d * modulus;
    return -(d.transpose() * cov.solve(r));
}

/// Value and gradient sharing one Gamma solve.
inline std::pair<double, Vector> data_fidelity_with_grad(const Vector &f, const SparseMatrix &d,
                                                         const Vector &modulus, const CovarianceModel &cov) {
    detail::check_fidelity_shapes(f, d, modulus, cov);
    const Vector r = f - d * modulus;
    const Vector w = cov.solve(r);
    return {std::max(0.0, 0.5 * r.dot(w)), -(d.transpose() * w)};
}

struct LipschitzEstimate {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    Vector eigenvector;
};

/// Largest eigenvalue of D^T Gamma^{-1} D by power iteration (relative
/// tolerance 1e-4, at most 500 iterations). `warm_start` may carry the
/// eigenvector of a previous estimate.
inline LipschitzEstimate lipschitz_estimate(const SparseMatrix &d, const CovarianceModel &cov,
                                            const Vector &warm_start = Vector(), double rel_tol = 1e-4,
                                            int max_iter = 500) {
    if (d.rows() != cov.size()) throw InvalidArgument("lipschitz_estimate: shape mismatch");
    if (d.nonZeros() == 0) throw InvalidArgument("lipschitz_estimate: operator is zero");
    LipschitzEstimate est;
    Vector v = warm_start.size() == d.cols() && warm_start.norm() > 0.0 ? warm_start : Vector::Ones(d.cols());
    v.normalize();
    double prev = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        Vector w = d.transpose() * cov.solve(d * v);
        const double rayleigh = v.dot(w);
        est.iterations = it;
        est.value = rayleigh;
        const double nw = w.norm();
        if (!(nw > 0.0) || !std::isfinite(nw)) break;
        v = w / nw;
        if (it > 1 && std::abs(rayleigh - prev) <= rel_tol * std::abs(rayleigh)) {
            est.converged = true;
            break;
        }
        prev = rayleigh;
    }
    if (!est.converged)
        std::fprintf(stderr, "warning: lipschitz_estimate did not converge in %d iterations (L=%.6g)\n",
                     est.iterations, est.value);
    est.eigenvector = std::move(v);
    return est;
}

/// Adds i.i.d. Gaussian noise with sigma chosen so that ||u||^2 / E||n||^2 hits
/// `snr_db`. Returns the noisy field and the sigma used. Infinite SNR returns u.
template <class Rng>
std::pair<Vector, double> add_displacement_noise(const Vector &u, double snr_db, Rng &rng) {
    const double power = u.squaredNorm();
    if (!(power > 0.0)) throw InvalidArgument("add_displacement_noise: SNR undefined for a zero field");
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
        throw InvalidArgument("add_displacement_noise: SNR must be a number > -inf");
    if (snr_db == std::numeric_limits<double>::infinity()) return {u, 0.0};
    const double sigma = std::sqrt(power / (static_cast<double>(u.size()) * std::pow(10.0, snr_db / 10.0)));
    std::normal_distribution<double> normal(0.0, sigma);
    Vector out = u;
    for (Index k = 0; k < out.size(); ++k) out[k] += normal(rng);
    return {out, sigma};
}

} // namespace elastopnp
