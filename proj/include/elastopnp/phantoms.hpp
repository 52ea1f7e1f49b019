#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "elastopnp/grid.hpp"
#include "elastopnp/solvers.hpp"

namespace elastopnp {

enum class LesionShape { ellipse, blob };

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Recipe for two-level lesion phantoms. Moduli are in normalized units (x100 kPa).
struct PhantomConfig {
    Index nx = 63;  // elements; the modulus image has (ny+1) x (nx+1) nodes
    Index ny = 63;
    double width = 0.04;
    double height = 0.04;
    Range background{0.10, 0.15};
    Range lesion{0.30, 0.80};
    Range ratio{2.0, 8.0};
    Range semi_axis{0.10, 0.30};  // fraction of the width
    LesionShape shape = LesionShape::ellipse;
    int lesion_count = 1;
    bool smooth_edges = false;
    int max_tries = 1000;

    void validate() const {
        if (nx < 1 || ny < 1) throw ConfigError("phantom.grid", "element counts must be >= 1");
        if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("phantom.size", "extents must be > 0");
        auto check = [](const Range &r, const char *name, bool positive) {
            if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi) || (positive && !(r.lo > 0.0)))
                throw ConfigError(name, "invalid range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
        };
        check(background, "phantom.background", true);
        check(lesion, "phantom.lesion", true);
        check(ratio, "phantom.ratio", true);
        check(semi_axis, "phantom.semi_axis", true);
        if (semi_axis.hi >= 0.5) throw ConfigError("phantom.semi_axis", "semi-axis must stay below half the width");
        if (lesion_count < 1) throw ConfigError("phantom.lesion_count", "must be >= 1");
        if (max_tries < 1) throw ConfigError("phantom.max_tries", "must be >= 1");
    }
};

struct LesionGeometry {
    double cx = 0.0, cy = 0.0;  // physical center
    double a = 0.0, b = 0.0;    // semi-axes
    double angle = 0.0;
    std::array<double, 3> harmonic_amp{};  // blob boundary perturbation, orders 2..4
    std::array<double, 3> harmonic_phase{};

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double xr = c * dx + s * dy, yr = -s * dx + c * dy;
        const double rho = std::sqrt((xr / a) * (xr / a) + (yr / b) * (yr / b));
        const double phi = std::atan2(yr / b, xr / a);
        double boundary = 1.0;
        for (int k = 0; k < 3; ++k)
            boundary += harmonic_amp[static_cast<std::size_t>(k)] *
                        std::cos((k + 2) * phi + harmonic_phase[static_cast<std::size_t>(k)]);
        return rho < boundary;
    }
};

struct Phantom {
    Vector modulus;                    // nodal, length (nx+1)(ny+1)
    std::vector<std::uint8_t> mask;    // 1 inside a lesion
    double background = 0.0;
    double lesion = 0.0;
    double ratio = 0.0;
    std::vector<LesionGeometry> lesions;
};

/// Separable Gaussian smoothing with replicated borders.
inline Grid gaussian_blur(const Grid &img, double sigma) {
    if (!(sigma > 0.0)) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) sum += w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (double &v : w) v /= sum;
    const Index r = img.rows(), c = img.cols();
    Grid tmp(r, c), out(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += w[static_cast<std::size_t>(k + radius)] * img(i, std::clamp<Index>(j + k, 0, c - 1));
            tmp(i, j) = acc;
        }
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += w[static_cast<std::size_t>(k + radius)] * tmp(std::clamp<Index>(i + k, 0, r - 1), j);
            out(i, j) = acc;
        }
    return out;
}

template <class Rng>
Phantom generate_phantom(const PhantomConfig &cfg, Rng &rng) {
    cfg.validate();
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    Phantom ph;
    int tries = 0;
    for (;;) {
        ph.background = uniform(cfg.background.lo, cfg.background.hi);
        ph.lesion = uniform(cfg.lesion.lo, cfg.lesion.hi);
        ph.ratio = ph.lesion / ph.background;
        if (ph.ratio >= cfg.ratio.lo && ph.ratio <= cfg.ratio.hi) break;
        if (++tries >= cfg.max_tries)
            throw ConfigError("phantom.ratio", "no admissible lesion/background pair after " +
                                                   std::to_string(cfg.max_tries) + " draws");
    }

    const Mesh mesh = build_mesh(cfg.nx, cfg.ny, cfg.width, cfg.height);
    const double side = std::min(cfg.width, cfg.height);
    for (int l = 0; l < cfg.lesion_count; ++l) {
        LesionGeometry g;
        g.a = uniform(cfg.semi_axis.lo, cfg.semi_axis.hi) * cfg.width;
        g.b = uniform(cfg.semi_axis.lo, cfg.semi_axis.hi) * cfg.width;
        g.angle = uniform(0.0, std::numbers::pi);
        double reach = 1.0;
        if (cfg.shape == LesionShape::blob)
            for (int k = 0; k < 3; ++k) {
                g.harmonic_amp[static_cast<std::size_t>(k)] = uniform(0.0, 0.1);
                g.harmonic_phase[static_cast<std::size_t>(k)] = uniform(0.0, 2.0 * std::numbers::pi);
                reach += g.harmonic_amp[static_cast<std::size_t>(k)];
            }
        // Keep the bounding circle one element away from the border.
        const double extent = reach * std::max(g.a, g.b);
        const double margin_x = extent + cfg.width / static_cast<double>(cfg.nx);
        const double margin_y = extent + cfg.height / static_cast<double>(cfg.ny);
        if (2.0 * margin_x >= cfg.width || 2.0 * margin_y >= cfg.height || extent >= 0.5 * side)
            throw ConfigError("phantom.semi_axis", "lesion does not fit strictly inside the domain");
        g.cx = uniform(margin_x, cfg.width - margin_x);
        g.cy = uniform(margin_y, cfg.height - margin_y);
        ph.lesions.push_back(g);
    }

    const Index n = mesh.node_count();
    ph.mask.assign(static_cast<std::size_t>(n), 0);
    ph.modulus = Vector::Constant(n, ph.background);
    for (Index k = 0; k < n; ++k) {
        const auto &p = mesh.nodes[static_cast<std::size_t>(k)];
        for (const auto &g : ph.lesions)
            if (g.contains(p[0], p[1])) {
                ph.mask[static_cast<std::size_t>(k)] = 1;
                ph.modulus[k] = ph.lesion;
            }
    }
    if (cfg.smooth_edges) ph.modulus = to_nodal(gaussian_blur(to_grid(ph.modulus, mesh), 1.0));
    return ph;
}

/// Noise model used when a measurement is synthesized: sigma_w is a small
/// fraction of the displacement-induced force noise so Gamma stays well
/// conditioned; noiseless data fall back to Gamma = I.
inline NoiseSpec make_noise_spec(double sigma_n, const PsiTensor &psi, const BoundaryConditions &bc,
                                 double reference_modulus, double sigma_w_rel) {
    NoiseSpec ns;
    ns.sigma_n = sigma_n;
    if (sigma_n > 0.0) {
        const DofPartition part = partition_dofs(bc, psi.dof_count());
        const SparseMatrix k = assemble_K(psi, Vector::Constant(psi.node_count(), reference_modulus));
        double diag = 0.0;
        for (Index dof : part.free) diag += std::abs(k.coeff(dof, dof));
        diag /= static_cast<double>(std::max<Index>(part.free_count(), 1));
        ns.sigma_w = sigma_w_rel * sigma_n * diag;
    } else {
        ns.sigma_w = 1.0;
    }
    return ns;
}

struct MeasurementOptions {
    double snr_db = 35.0;
    double sigma_w_rel = 1e-3;
    double reference_modulus = 0.125;
};

/// Forward-solves the phantom and adds displacement noise at the requested SNR.
template <class Rng>
MeasurementSet synthesize_measurements(const Phantom &phantom, const PsiTensor &psi, const BoundaryConditions &bc,
                                       const MeasurementOptions &opt, Rng &rng) {
    if (phantom.modulus.size() != psi.node_count())
        throw InvalidArgument("synthesize_measurements: phantom grid does not match the mesh");
    MeasurementSet m;
    m.bc = bc;
    m.f = load_vector(psi.mesh(), bc);
    const Vector u = forward_solve(psi, phantom.modulus, bc);
    auto [noisy, sigma] = add_displacement_noise(u, opt.snr_db, rng);
    m.u_m = std::move(noisy);
    m.noise = make_noise_spec(sigma, psi, bc, opt.reference_modulus, opt.sigma_w_rel);
    return m;
}

/// Independent, reproducible random stream for sample `index` of a run seeded with `seed`.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

} // namespace elastopnp
