#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <vector>

#include "elastopnp/grid.hpp"
#include "elastopnp/stat_model.hpp"
#include "elastopnp/tv.hpp"

namespace elastopnp {

enum class StepRule { fixed, backtracking };
enum class Acceleration { none, nesterov };

struct SolverConfig {
    int max_outer = 5;           // Gamma refreshes
    int max_inner = 50;          // proximal-gradient iterations per Gamma
    StepRule step_rule = StepRule::fixed;
    Acceleration acceleration = Acceleration::none;
    double backtrack_factor = 0.5;
    double sufficient_decrease = 1e-4;
    double initial_modulus = 0.125;
    double positivity_floor = 1e-6 * 0.125;
    double tolerance = 1e-5;     // relative change of E between iterates; 0 runs the full budget
    double tv_lambda = 0.0;      // TV weight relative to the Lipschitz constant of g
    int tv_inner = 50;
    double denoiser_strength = 1.0;  // PnP uses (1-s)*z + s*D(z); 1 is the plain denoiser
    double lipschitz_tolerance = 1e-4;
    int lipschitz_max_iter = 500;
    GammaSolveMethod gamma_method = GammaSolveMethod::cholesky;

    void validate() const {
        if (max_outer < 1 || max_inner < 1 || tv_inner < 1 || lipschitz_max_iter < 1)
            throw InvalidArgument("SolverConfig: iteration counts must be >= 1");
        if (!(positivity_floor > 0.0)) throw InvalidArgument("SolverConfig: positivity floor must be > 0");
        if (!(tolerance >= 0.0)) throw InvalidArgument("SolverConfig: tolerance must be >= 0");
        if (!(lipschitz_tolerance > 0.0)) throw InvalidArgument("SolverConfig: Lipschitz tolerance must be > 0");
        if (!(initial_modulus > 0.0)) throw InvalidArgument("SolverConfig: initial modulus must be > 0");
        if (!(tv_lambda >= 0.0)) throw InvalidArgument("SolverConfig: tv_lambda must be >= 0");
        if (!(denoiser_strength > 0.0 && denoiser_strength <= 1.0))
            throw InvalidArgument("SolverConfig: denoiser strength must lie in (0,1]");
        if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
            throw InvalidArgument("SolverConfig: backtrack factor must lie in (0,1)");
    }
};

struct GammaRefresh {
    int iteration = 0;  // index of the first iterate computed with this Gamma
    double lipschitz = 0.0;
    int power_iterations = 0;
};

struct ReconstructionResult {
    Vector modulus;
    std::vector<double> objective;  // one entry per inner iteration
    std::vector<GammaRefresh> refreshes;
    int iterations = 0;
    bool converged = false;
    double seconds = 0.0;
};

/// The reduced forward operator D_f(u^m) and force f_f of one measurement.
struct FidelityProblem {
    DofPartition part;
    SparseMatrix d;
    Vector f;
    NoiseSpec noise;
    Index rows = 0, cols = 0;  // image shape of the nodal field
};

inline FidelityProblem prepare_problem(const MeasurementSet &meas, const PsiTensor &psi) {
    if (meas.u_m.size() != psi.dof_count() || meas.f.size() != psi.dof_count())
        throw InvalidArgument("prepare_problem: measurement does not match the mesh");
    FidelityProblem p;
    p.part = partition_dofs(meas.bc, psi.dof_count());
    ReducedSystem red = reduce_forward_operator(assemble_D(psi, meas.u_m), meas.f, p.part);
    p.d = std::move(red.op);
    p.f = std::move(red.rhs);
    p.noise = meas.noise;
    p.rows = psi.mesh().grid_rows();
    p.cols = psi.mesh().grid_cols();
    return p;
}

inline Vector project_positive(const Vector &modulus, double floor) {
    if (!(floor > 0.0)) throw InvalidArgument("project_positive: floor must be > 0");
    return modulus.cwiseMax(floor);
}

/// Something that maps an image to an image of the same shape.
template <class F>
concept ImageOperator = requires(const F &op, const Grid &g) {
    { op(g) } -> std::convertible_to<Grid>;
};

struct IdentityOperator {
    Grid operator()(const Grid &g) const { return g; }
};

namespace detail {

// Shared proximal-gradient skeleton: gradient step on g, then `prox`, then the
// positivity projection. Gamma is rebuilt from the current iterate at the start
// of every outer cycle. `prox(z, step, L)` receives the point, the step size and
// the current Lipschitz constant; `regularizer(E, L)` adds to the recorded
// objective (zero for ML and PnP).
template <class Prox, class Reg>
ReconstructionResult proximal_gradient(const FidelityProblem &prob, const PsiTensor &psi, const SolverConfig &cfg,
                                       Prox &&prox, Reg &&regularizer, bool guard_monotone,
                                       const Vector *initial = nullptr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ReconstructionResult res;
    Vector e = initial ? *initial : Vector::Constant(psi.node_count(), cfg.initial_modulus);
    e = project_positive(e, cfg.positivity_floor);
    Vector eigvec;
    int increases = 0;
    double objective0 = std::numeric_limits<double>::quiet_NaN();

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        const CovarianceModel cov = build_gamma(psi, prob.part, e, prob.noise, cfg.gamma_method);
        LipschitzEstimate lip = lipschitz_estimate(prob.d, cov, eigvec, cfg.lipschitz_tolerance, cfg.lipschitz_max_iter);
        if (!(lip.value > 0.0) || !std::isfinite(lip.value))
            throw SolverFailure("Lipschitz estimate is not positive");
        eigvec = lip.eigenvector;
        res.refreshes.push_back({res.iterations, lip.value, lip.iterations});
        const double step0 = 1.0 / lip.value;

        Vector e_prev = e;
        double t = 1.0;
        int inner_used = 0;
        bool inner_converged = false;
        for (int inner = 0; inner < cfg.max_inner; ++inner) {
            Vector y = e;
            if (cfg.acceleration == Acceleration::nesterov && inner > 0) {
                const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
                y = e + ((t - 1.0) / t_next) * (e - e_prev);
                t = t_next;
            }
            auto [gval, grad] = data_fidelity_with_grad(prob.f, prob.d, y, cov);
            const double obj = gval + regularizer(y, lip.value);
            if (!std::isfinite(obj) || !grad.allFinite())
                throw SolverFailure("non-finite objective at iteration " + std::to_string(res.iterations));
            res.objective.push_back(obj);
            if (std::isnan(objective0)) objective0 = obj;

            Vector next;
            if (cfg.step_rule == StepRule::fixed) {
                next = project_positive(prox(y - step0 * grad, step0, lip.value), cfg.positivity_floor);
            } else {
                double step = 2.0 * step0;
                int tries = 0;
                for (;;) {
                    next = project_positive(prox(y - step * grad, step, lip.value), cfg.positivity_floor);
                    const double gn = data_fidelity(prob.f, prob.d, next, cov);
                    if (gn <= gval - cfg.sufficient_decrease / step * (next - y).squaredNorm()) break;
                    if (++tries >= 30)
                        throw SolverFailure("backtracking failed at iteration " + std::to_string(res.iterations));
                    step *= cfg.backtrack_factor;
                }
            }
            if (next.rows() != e.rows()) throw InvalidArgument("proximal operator changed the field size");

            if (res.objective.size() > 1) {
                const double prev_obj = res.objective[res.objective.size() - 2];
                increases = obj > prev_obj ? increases + 1 : 0;
                if (guard_monotone && increases >= 10)
                    throw SolverFailure("objective increased for 10 consecutive iterations");
                if (!guard_monotone && obj > 1e6 * std::max(objective0, 1e-300))
                    throw SolverFailure("objective diverged");
            }

            // Adaptive restart: drop the momentum once it points uphill.
            if (cfg.acceleration == Acceleration::nesterov && (y - next).dot(next - e) > 0.0) t = 1.0;

            const double change = (next - e).norm() / std::max(e.norm(), 1e-300);
            e_prev = std::move(e);
            e = std::move(next);
            ++res.iterations;
            ++inner_used;
            if (change < cfg.tolerance) {
                inner_converged = true;
                break;
            }
        }
        if (inner_converged && inner_used == 1) {
            res.converged = true;
            break;
        }
        if (outer == cfg.max_outer - 1) res.converged = inner_converged;
    }
    res.modulus = std::move(e);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace detail

/// Maximum-likelihood estimate: projected gradient on g with positivity only.
inline ReconstructionResult ml_estimate(const FidelityProblem &prob, const PsiTensor &psi, const SolverConfig &cfg) {
    return detail::proximal_gradient(
        prob, psi, cfg, [](const Vector &z, double, double) { return z; }, [](const Vector &, double) { return 0.0; },
        cfg.acceleration == Acceleration::none);
}

/// Plug-and-play reconstruction: gradient step, then the denoiser on the
/// image-shaped iterate (relaxed by cfg.denoiser_strength), then the
/// positivity projection.
template <ImageOperator Denoiser>
ReconstructionResult pnp_reconstruct(const FidelityProblem &prob, const PsiTensor &psi, const Denoiser &denoiser,
                                     const SolverConfig &cfg) {
    const Index rows = prob.rows, cols = prob.cols;
    auto prox = [&](const Vector &z, double, double) {
        const Grid out = denoiser(to_grid(z, rows, cols));
        if (out.rows() != rows || out.cols() != cols)
            throw InvalidArgument("pnp_reconstruct: denoiser changed the image shape");
        if (cfg.denoiser_strength == 1.0) return to_nodal(out);
        return Vector((1.0 - cfg.denoiser_strength) * z + cfg.denoiser_strength * to_nodal(out));
    };
    constexpr bool identity = std::is_same_v<Denoiser, IdentityOperator>;
    return detail::proximal_gradient(prob, psi, cfg, prox, [](const Vector &, double) { return 0.0; },
                                     identity && cfg.acceleration == Acceleration::none);
}

/// TV-regularized reconstruction of g(E) + tv_lambda * L * TV(E), where L is
/// the Lipschitz constant of grad g at the current Gamma. With the fixed step
/// 1/L the TV proximal weight is exactly tv_lambda.
inline ReconstructionResult tv_reconstruct(const FidelityProblem &prob, const PsiTensor &psi, const SolverConfig &cfg) {
    const Index rows = prob.rows, cols = prob.cols;
    TvDual dual;
    auto prox = [&](const Vector &z, double step, double lipschitz) {
        if (cfg.tv_lambda == 0.0) return z;
        return to_nodal(tv_prox(to_grid(z, rows, cols), cfg.tv_lambda * step * lipschitz, cfg.tv_inner, &dual));
    };
    auto reg = [&](const Vector &e, double lipschitz) {
        return cfg.tv_lambda == 0.0 ? 0.0 : cfg.tv_lambda * lipschitz * total_variation(to_grid(e, rows, cols));
    };
    return detail::proximal_gradient(prob, psi, cfg, prox, reg, false);
}

/// One denoiser pass on a finished ML result, then the positivity projection.
template <ImageOperator Denoiser>
ReconstructionResult post_process_from_ml(const FidelityProblem &prob, ReconstructionResult ml, const Denoiser &denoiser,
                                          const SolverConfig &cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid out = denoiser(to_grid(ml.modulus, prob.rows, prob.cols));
    if (out.rows() != prob.rows || out.cols() != prob.cols)
        throw InvalidArgument("post_process_reconstruct: denoiser changed the image shape");
    ml.modulus = project_positive(to_nodal(out), cfg.positivity_floor);
    ml.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ml;
}

/// ML estimate followed by one denoiser pass and the positivity projection.
template <ImageOperator Denoiser>
ReconstructionResult post_process_reconstruct(const FidelityProblem &prob, const PsiTensor &psi,
                                              const Denoiser &denoiser, const SolverConfig &cfg) {
    return post_process_from_ml(prob, ml_estimate(prob, psi, cfg), denoiser, cfg);
}

} // namespace elastopnp
