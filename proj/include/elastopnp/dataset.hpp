#pragma once

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "elastopnp/config.hpp"
#include "elastopnp/io.hpp"

namespace elastopnp {

enum class Split { train, val, test };

inline const char *to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

struct SplitCounts {
    int train = 0, val = 0, test = 0;
};

// Fractions: val and test are floored, train takes the remainder.
inline SplitCounts split_counts(const DatasetSettings &d) {
    const auto &s = d.split;
    if (s.use_counts) return {s.train_count, s.val_count, s.test_count};
    SplitCounts c;
    c.val = static_cast<int>(std::floor(s.val * d.count + 1e-9));
    c.test = static_cast<int>(std::floor(s.test * d.count + 1e-9));
    c.train = d.count - c.val - c.test;
    return c;
}

/// The fixed problem geometry shared by every sample of a run.
struct Geometry {
    Mesh mesh;
    PsiTensor psi;
    BoundaryConditions bc;
};

inline Geometry make_geometry(const MeshSettings &m) {
    Mesh mesh = build_mesh(m.nx, m.ny, m.width, m.height);
    PsiTensor psi = build_psi(mesh, m.poisson_ratio);
    BoundaryConditions bc = default_boundary_conditions(mesh, m.traction);
    return {std::move(mesh), std::move(psi), std::move(bc)};
}

struct DatasetSample {
    int index = 0;
    Split split = Split::train;
    Phantom phantom;
    MeasurementSet measurement;
    Vector ml;  // the noisy network input
    int ml_iterations = 0;
};

struct Dataset {
    RunConfig config;
    std::vector<DatasetSample> samples;

    std::vector<const DatasetSample *> of(Split s) const {
        std::vector<const DatasetSample *> out;
        for (const auto &x : samples)
            if (x.split == s) out.push_back(&x);
        return out;
    }
};

// Runs body(i) for i in [0, n) on `threads` workers. Results must be written to
// per-index slots so the outcome does not depend on scheduling. The first
// exception (lowest index) is rethrown.
template <class F>
void parallel_for(int n, int threads, F &&body) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex mu;
    int failed_at = n;
    std::exception_ptr failure;
    auto worker = [&] {
        for (int i; (i = next.fetch_add(1)) < n;) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Phantom, measurement and ML input for sample `index`; depends only on
/// (config, index), never on the order in which samples are built.
inline DatasetSample make_sample(const RunConfig &cfg, const Geometry &geo, int index, Split split) {
    auto rng = sample_rng(cfg.seed, static_cast<std::uint64_t>(index));
    DatasetSample s;
    s.index = index;
    s.split = split;
    s.phantom = generate_phantom(cfg.phantom, rng);
    s.measurement = synthesize_measurements(s.phantom, geo.psi, geo.bc, cfg.measurement, rng);
    const FidelityProblem prob = prepare_problem(s.measurement, geo.psi);
    const ReconstructionResult ml = ml_estimate(prob, geo.psi, cfg.solver);
    s.ml = ml.modulus;
    s.ml_iterations = ml.iterations;
    return s;
}

inline Dataset build_dataset(const RunConfig &cfg, const Geometry &geo, bool progress = false) {
    cfg.validate();
    const SplitCounts counts = split_counts(cfg.dataset);
    Dataset d;
    d.config = cfg;
    d.samples.resize(static_cast<std::size_t>(cfg.dataset.count));
    std::atomic<int> done{0};
    parallel_for(cfg.dataset.count, cfg.threads, [&](int i) {
        const Split split = i < counts.train ? Split::train : i < counts.train + counts.val ? Split::val : Split::test;
        try {
            d.samples[static_cast<std::size_t>(i)] = make_sample(cfg, geo, i, split);
        } catch (const SolverFailure &e) {
            throw SolverFailure("sample " + std::to_string(i) + ": " + e.what());
        } catch (const NumericalError &e) {
            throw NumericalError("sample " + std::to_string(i) + ": " + e.what());
        }
        const int k = ++done;
        if (progress && (k % 10 == 0 || k == cfg.dataset.count))
            std::fprintf(stderr, "gen-data: %d/%d samples\n", k, cfg.dataset.count);
    });
    return d;
}

// ---- on-disk layout ------------------------------------------------------
// manifest.json, plus per sample: truth_NNNN.grd (modulus), ml_NNNN.grd (ML
// input), disp_NNNN.grd (2 channels: lateral, axial displacement per node).

inline std::string sample_file(const char *prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d.grd", prefix, index);
    return buf;
}

inline GridFile displacement_grid(const Vector &u, const Mesh &mesh) {
    GridFile g;
    g.rows = static_cast<std::uint32_t>(mesh.grid_rows());
    g.cols = static_cast<std::uint32_t>(mesh.grid_cols());
    g.channels = 2;
    g.values.assign(u.data(), u.data() + u.size());  // dof 2k+c is channel c of node k
    return g;
}

inline Vector displacement_from_grid(const GridFile &g, const Mesh &mesh, const std::string &what) {
    if (g.channels != 2 || g.rows != mesh.grid_rows() || g.cols != mesh.grid_cols())
        throw IoError(what + ": expected a 2-channel " + std::to_string(mesh.grid_rows()) + "x" +
                      std::to_string(mesh.grid_cols()) + " displacement grid");
    return Eigen::Map<const Vector>(g.values.data(), static_cast<Index>(g.values.size()));
}

inline Vector nodal_from_grid(const GridFile &g, const Mesh &mesh, const std::string &what) {
    if (g.channels != 1 || g.rows != mesh.grid_rows() || g.cols != mesh.grid_cols())
        throw IoError(what + ": expected a 1-channel " + std::to_string(mesh.grid_rows()) + "x" +
                      std::to_string(mesh.grid_cols()) + " grid");
    return Eigen::Map<const Vector>(g.values.data(), static_cast<Index>(g.values.size()));
}

inline Json dataset_manifest(const Dataset &d) {
    Json j;
    j["format"] = "elastopnp-dataset";
    j["version"] = 1;
    j["phantom_source"] = "procedural (random ellipse/blob inclusions)";
    j["config"] = config_to_json(d.config);
    Json splits = {{"train", Json::array()}, {"val", Json::array()}, {"test", Json::array()}};
    Json samples = Json::array();
    for (const auto &s : d.samples) {
        splits[to_string(s.split)].push_back(s.index);
        samples.push_back({{"index", s.index},
                           {"split", to_string(s.split)},
                           {"truth", sample_file("truth", s.index)},
                           {"ml", sample_file("ml", s.index)},
                           {"displacement", sample_file("disp", s.index)},
                           {"background", s.phantom.background},
                           {"lesion", s.phantom.lesion},
                           {"ratio", s.phantom.ratio},
                           {"sigma_n", s.measurement.noise.sigma_n},
                           {"sigma_w", s.measurement.noise.sigma_w},
                           {"ml_iterations", s.ml_iterations},
                           {"rng", {{"seed", d.config.seed}, {"index", s.index}}}});
    }
    j["splits"] = std::move(splits);
    j["samples"] = std::move(samples);
    return j;
}

inline void write_dataset(const Dataset &d, const std::filesystem::path &dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const Mesh mesh = build_mesh(d.config.mesh.nx, d.config.mesh.ny, d.config.mesh.width, d.config.mesh.height);
    for (const auto &s : d.samples) {
        write_grid(dir / sample_file("truth", s.index), GridFile::from_grid(to_grid(s.phantom.modulus, mesh)));
        write_grid(dir / sample_file("ml", s.index), GridFile::from_grid(to_grid(s.ml, mesh)));
        write_grid(dir / sample_file("disp", s.index), displacement_grid(s.measurement.u_m, mesh));
    }
    write_text_atomic(dir / "manifest.json", dataset_manifest(d).dump(2) + "\n");
}

inline Json read_json_file(const std::filesystem::path &path) {
    const auto bytes = read_file(path);
    try {
        return Json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception &e) {
        throw IoError(path.string() + ": malformed JSON: " + e.what());
    }
}

/// Loads a dataset directory. Phantom masks and lesion geometry are not stored;
/// the modulus, ratio and levels are.
inline Dataset read_dataset(const std::filesystem::path &dir, const Geometry *geo_hint = nullptr) {
    if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    const Json manifest = read_json_file(dir / "manifest.json");
    Dataset d;
    try {
        if (manifest.at("format") != "elastopnp-dataset") throw IoError(dir.string() + ": not a dataset manifest");
        d.config = config_from_json(manifest.at("config"));
    } catch (const nlohmann::json::exception &e) {
        throw IoError(dir.string() + "/manifest.json: " + e.what());
    }
    std::optional<Geometry> own;
    if (!geo_hint) own = make_geometry(d.config.mesh);
    const Geometry &geo = geo_hint ? *geo_hint : *own;
    const Vector f = load_vector(geo.mesh, geo.bc);
    try {
        for (const auto &js : manifest.at("samples")) {
            DatasetSample s;
            s.index = js.at("index").get<int>();
            const std::string split = js.at("split").get<std::string>();
            s.split = split == "train" ? Split::train : split == "val" ? Split::val : Split::test;
            const auto path = [&](const char *key) { return dir / js.at(key).get<std::string>(); };
            s.phantom.modulus = nodal_from_grid(read_grid(path("truth")), geo.mesh, path("truth").string());
            s.phantom.background = js.at("background").get<double>();
            s.phantom.lesion = js.at("lesion").get<double>();
            s.phantom.ratio = js.at("ratio").get<double>();
            s.ml = nodal_from_grid(read_grid(path("ml")), geo.mesh, path("ml").string());
            s.ml_iterations = js.at("ml_iterations").get<int>();
            s.measurement.bc = geo.bc;
            s.measurement.f = f;
            s.measurement.u_m = displacement_from_grid(read_grid(path("displacement")), geo.mesh, path("displacement").string());
            s.measurement.noise.sigma_n = js.at("sigma_n").get<double>();
            s.measurement.noise.sigma_w = js.at("sigma_w").get<double>();
            d.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception &e) {
        throw IoError(dir.string() + "/manifest.json: " + e.what());
    }
    return d;
}

} // namespace elastopnp
