#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "elastopnp/dataset.hpp"
#include "elastopnp/metrics.hpp"

namespace elastopnp {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// ---- denoiser selection ---------------------------------------------------

/// `identity`, `gaussian:<sigma>`, `tv:<weight>` or a model file path.
inline DenoiserModel resolve_denoiser(const std::string &spec) {
    if (spec == "identity") return DenoiserModel::identity();
    auto param = [&](std::size_t prefix) {
        try {
            std::size_t used = 0;
            const double v = std::stod(spec.substr(prefix), &used);
            if (used != spec.size() - prefix || !(v >= 0.0)) throw std::invalid_argument("");
            return v;
        } catch (const std::exception &) {
            throw InvalidArgument("bad denoiser parameter in '" + spec + "'");
        }
    };
    if (spec.rfind("gaussian:", 0) == 0) return DenoiserModel::gaussian(param(9));
    if (spec.rfind("tv:", 0) == 0) return DenoiserModel::total_variation(param(3), 50);
    return model_load(spec);
}

// ---- gen-data ---------------------------------------------------------------

inline Dataset cmd_gen_data(const RunConfig &cfg, const fs::path &out_dir, bool progress = false) {
    const Geometry geo = make_geometry(cfg.mesh);
    Dataset d = build_dataset(cfg, geo, progress);
    write_dataset(d, out_dir);
    return d;
}

// ---- train ------------------------------------------------------------------

struct TrainSummary {
    TrainHistory history;
    double input_mse = 0.0;   // mean ||noisy - clean||^2 over the monitored split
    double output_mse = 0.0;  // same after denoising
    double seconds = 0.0;
    fs::path model_path;
};

inline std::vector<TrainingPair> training_pairs(const Dataset &d, Split split) {
    const Index rows = d.config.mesh.ny + 1, cols = d.config.mesh.nx + 1;
    std::vector<TrainingPair> out;
    for (const DatasetSample *s : d.of(split)) out.push_back({to_grid(s->ml, rows, cols), to_grid(s->phantom.modulus, rows, cols)});
    return out;
}

inline double mean_mse(const std::vector<TrainingPair> &set, const DenoiserModel *model) {
    if (set.empty()) return 0.0;
    double acc = 0.0;
    for (const auto &p : set) acc += ((model ? denoise(*model, p.noisy) : p.noisy) - p.clean).squaredNorm() / static_cast<double>(p.clean.size());
    return acc / static_cast<double>(set.size());
}

/// Trains on the dataset's train split, monitors the val split, and writes
/// denoiser.epnpdn, train_loss.csv and train.json to `out_dir`.
inline TrainSummary cmd_train(const RunConfig &cfg, const fs::path &dataset_dir, const fs::path &out_dir,
                              bool progress = false) {
    const Dataset d = read_dataset(dataset_dir);
    const auto train = training_pairs(d, Split::train);
    const auto val = training_pairs(d, Split::val);
    if (train.size() < 10) throw InvalidArgument("train: the dataset's train split needs at least 10 samples");
    const auto t0 = std::chrono::steady_clock::now();
    auto rng = sample_rng(cfg.seed, 0, 2);
    if (progress) std::fprintf(stderr, "train: %zu train / %zu val images\n", train.size(), val.size());
    TrainResult res = cnn_train(cfg.network, train, val, cfg.train, rng);
    TrainSummary s;
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.history = res.history;
    const DenoiserModel model = DenoiserModel::residual_cnn(cfg.network, std::move(res.weights));
    const auto &monitor = val.empty() ? train : val;
    s.input_mse = mean_mse(monitor, nullptr);
    s.output_mse = mean_mse(monitor, &model);

    ensure_dir(out_dir);
    s.model_path = out_dir / "denoiser.epnpdn";
    model_save(model, s.model_path);
    std::string csv = "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < s.history.val_loss.size(); ++e)
        csv += std::to_string(e) + "," + (e == 0 ? std::string("") : fmt_double(s.history.train_loss[e - 1])) + "," +
               fmt_double(s.history.val_loss[e]) + "\n";
    write_text_atomic(out_dir / "train_loss.csv", csv);
    Json j;
    j["format"] = "elastopnp-train";
    j["train_images"] = train.size();
    j["val_images"] = val.size();
    j["best_epoch"] = s.history.best_epoch;
    j["initial_val_loss"] = s.history.val_loss.front();
    j["best_val_loss"] = s.history.val_loss[static_cast<std::size_t>(s.history.best_epoch)];
    j["val_input_mse"] = s.input_mse;
    j["val_output_mse"] = s.output_mse;
    j["config"] = config_to_json(cfg);
    write_text_atomic(out_dir / "train.json", j.dump(2) + "\n");
    return s;
}

// ---- reconstruct ------------------------------------------------------------

struct ReconstructInput {
    MeasurementSet measurement;
    std::optional<Vector> truth;
};

/// `input` is a dataset directory (with `sample`) or a 2-channel displacement
/// GridFile; a bare file uses measurement.sigma_n from the config.
inline ReconstructInput load_reconstruct_input(const RunConfig &cfg, const Geometry &geo, const fs::path &input,
                                               int sample) {
    ReconstructInput in;
    if (fs::is_directory(input)) {
        const Dataset d = read_dataset(input, &geo);
        for (const auto &s : d.samples)
            if (s.index == sample) {
                in.measurement = s.measurement;
                in.truth = s.phantom.modulus;
                return in;
            }
        throw InvalidArgument("reconstruct: sample " + std::to_string(sample) + " not in " + input.string());
    }
    in.measurement.bc = geo.bc;
    in.measurement.f = load_vector(geo.mesh, geo.bc);
    in.measurement.u_m = displacement_from_grid(read_grid(input), geo.mesh, input.string());
    in.measurement.noise = make_noise_spec(cfg.noise_sigma_n, geo.psi, geo.bc, cfg.measurement.reference_modulus,
                                           cfg.measurement.sigma_w_rel);
    return in;
}

inline ReconstructionResult run_method(const std::string &method, const FidelityProblem &prob, const PsiTensor &psi,
                                       const SolverConfig &solver, const DenoiserModel *denoiser) {
    if (method == "ml") return ml_estimate(prob, psi, solver);
    if (method == "tv") return tv_reconstruct(prob, psi, solver);
    if (method == "pnp" || method == "post") {
        if (!denoiser) throw InvalidArgument("method '" + method + "' needs a denoiser (--model)");
        if (denoiser->kind == DenoiserKind::identity) {
            // Same iterates either way; IdentityOperator also keeps ML's monotonicity guard.
            return method == "pnp" ? pnp_reconstruct(prob, psi, IdentityOperator{}, solver)
                                   : post_process_reconstruct(prob, psi, IdentityOperator{}, solver);
        }
        return method == "pnp" ? pnp_reconstruct(prob, psi, *denoiser, solver)
                               : post_process_reconstruct(prob, psi, *denoiser, solver);
    }
    throw InvalidArgument("unknown method '" + method + "' (expected ml, tv, pnp or post)");
}

struct ReconstructSummary {
    ReconstructionResult result;
    std::optional<double> rms;
};

inline std::string trace_csv(const ReconstructionResult &r) {
    std::string csv = "iteration,objective,gamma_refresh,lipschitz\n";
    std::size_t next = 0;
    double lip = 0.0;
    for (std::size_t i = 0; i < r.objective.size(); ++i) {
        bool refresh = false;
        if (next < r.refreshes.size() && static_cast<std::size_t>(r.refreshes[next].iteration) == i) {
            lip = r.refreshes[next].lipschitz;
            refresh = true;
            ++next;
        }
        csv += std::to_string(i) + "," + fmt_double(r.objective[i]) + "," + (refresh ? "1" : "0") + "," + fmt_double(lip) + "\n";
    }
    return csv;
}

/// Writes estimate.grd, trace.csv and reconstruct.json to `out_dir`.
inline ReconstructSummary cmd_reconstruct(const RunConfig &cfg, const std::string &method, const fs::path &input,
                                          int sample, const std::optional<std::string> &model, const fs::path &out_dir) {
    if ((method == "pnp" || method == "post") && !model)
        throw InvalidArgument("method '" + method + "' requires --model (a model file, identity or gaussian:<sigma>)");
    if (method != "ml" && method != "tv" && method != "pnp" && method != "post")
        throw InvalidArgument("unknown method '" + method + "' (expected ml, tv, pnp or post)");
    std::optional<DenoiserModel> den;
    if (model) den = resolve_denoiser(*model);
    const Geometry geo = make_geometry(cfg.mesh);
    const ReconstructInput in = load_reconstruct_input(cfg, geo, input, sample);
    const FidelityProblem prob = prepare_problem(in.measurement, geo.psi);
    ReconstructSummary s;
    s.result = run_method(method, prob, geo.psi, cfg.solver, den ? &*den : nullptr);
    if (in.truth) s.rms = rms_error(s.result.modulus, *in.truth);

    ensure_dir(out_dir);
    write_grid(out_dir / "estimate.grd", GridFile::from_grid(to_grid(s.result.modulus, geo.mesh)));
    write_text_atomic(out_dir / "trace.csv", trace_csv(s.result));
    Json j;
    j["format"] = "elastopnp-reconstruction";
    j["method"] = method;
    j["input"] = input.string();
    j["sample"] = sample;
    j["model"] = model ? Json(*model) : Json(nullptr);
    j["iterations"] = s.result.iterations;
    j["converged"] = s.result.converged;
    j["final_objective"] = s.result.objective.empty() ? 0.0 : s.result.objective.back();
    j["rms"] = s.rms ? Json(*s.rms) : Json(nullptr);
    j["config"] = config_to_json(cfg);
    write_text_atomic(out_dir / "reconstruct.json", j.dump(2) + "\n");
    return s;
}

// ---- sweep ------------------------------------------------------------------

inline bool has_method(const RunConfig &cfg, const std::string &m) {
    return std::find(cfg.sweep.methods.begin(), cfg.sweep.methods.end(), m) != cfg.sweep.methods.end();
}

/// Returns the grid value with the lowest mean RMS over the first
/// tune_samples validation samples. A candidate whose solver fails scores inf.
template <class Run>
double tune_on_val(const RunConfig &cfg, const std::vector<const DatasetSample *> &val, const std::vector<double> &grid,
                   const char *name, Run &&run, std::vector<std::pair<double, double>> *table, bool progress) {
    if (val.empty())
        throw ConfigError(std::string("sweep.") + name, "tuning needs a non-empty val split (or set a fixed value)");
    const std::size_t n = std::min<std::size_t>(val.size(), static_cast<std::size_t>(cfg.sweep.tune_samples));
    std::vector<double> scores(grid.size() * n);
    parallel_for(static_cast<int>(grid.size() * n), cfg.threads, [&](int k) {
        const std::size_t g = static_cast<std::size_t>(k) / n, i = static_cast<std::size_t>(k) % n;
        try {
            scores[static_cast<std::size_t>(k)] = rms_error(run(*val[i], grid[g]), val[i]->phantom.modulus);
        } catch (const SolverFailure &) {
            scores[static_cast<std::size_t>(k)] = std::numeric_limits<double>::infinity();
        }
    });
    double best = grid.front(), best_score = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += scores[g * n + i] / static_cast<double>(n);
        if (table) table->push_back({grid[g], mean});
        if (progress) std::fprintf(stderr, "sweep: %s %.3g -> mean val RMS %.4f\n", name, grid[g], mean);
        if (mean < best_score) {
            best_score = mean;
            best = grid[g];
        }
    }
    if (!std::isfinite(best_score)) throw SolverFailure(std::string("sweep: every ") + name + " candidate failed");
    return best;
}

/// Runs every configured method on the dataset's test split. Writes report.json,
/// sweep_bins.csv and sweep_phantoms.csv (all deterministic) and timing.json.
inline ExperimentReport cmd_sweep(const RunConfig &cfg, const fs::path &dataset_dir, const std::optional<std::string> &model,
                                  const fs::path &out_dir, bool progress = false) {
    const bool wants_den = has_method(cfg, "pnp") || has_method(cfg, "post");
    if (wants_den && !model) throw InvalidArgument("sweep: methods pnp/post need --model");
    std::optional<DenoiserModel> den;
    if (wants_den) den = resolve_denoiser(*model);
    const Geometry geo = make_geometry(cfg.mesh);
    const Dataset d = read_dataset(dataset_dir, &geo);
    const auto test = d.of(Split::test);
    if (test.empty()) throw InvalidArgument("sweep: the dataset has an empty test split");

    ExperimentReport rep;
    rep.methods = cfg.sweep.methods;
    rep.bins = make_bins(cfg.sweep.bin_lo, cfg.sweep.bin_hi, cfg.sweep.bin_width);
    rep.config = config_to_json(cfg);
    SolverConfig tv_cfg = cfg.solver, pnp_cfg = cfg.solver;
    if (has_method(cfg, "tv")) {
        const auto run = [&](const DatasetSample &s, double lambda) {
            SolverConfig sc = cfg.solver;
            sc.tv_lambda = lambda;
            return tv_reconstruct(prepare_problem(s.measurement, geo.psi), geo.psi, sc).modulus;
        };
        tv_cfg.tv_lambda = cfg.sweep.tv_lambda >= 0.0
                               ? cfg.sweep.tv_lambda
                               : tune_on_val(cfg, d.of(Split::val), cfg.sweep.tv_lambda_grid, "tv_lambda", run,
                                             &rep.tv_tuning, progress);
        rep.tv_lambda = tv_cfg.tv_lambda;
    }
    if (has_method(cfg, "pnp")) {
        const auto run = [&](const DatasetSample &s, double strength) {
            SolverConfig sc = cfg.solver;
            sc.denoiser_strength = strength;
            return pnp_reconstruct(prepare_problem(s.measurement, geo.psi), geo.psi, *den, sc).modulus;
        };
        pnp_cfg.denoiser_strength = cfg.sweep.pnp_strength >= 0.0
                                        ? cfg.sweep.pnp_strength
                                        : tune_on_val(cfg, d.of(Split::val), cfg.sweep.pnp_strength_grid, "pnp_strength",
                                                      run, &rep.pnp_tuning, progress);
        rep.pnp_strength = pnp_cfg.denoiser_strength;
    }

    rep.phantoms.resize(test.size());
    std::atomic<int> done{0};
    parallel_for(static_cast<int>(test.size()), cfg.threads, [&](int k) {
        const DatasetSample &s = *test[static_cast<std::size_t>(k)];
        PhantomResult &pr = rep.phantoms[static_cast<std::size_t>(k)];
        pr.index = s.index;
        pr.ratio = s.phantom.ratio;
        const FidelityProblem prob = prepare_problem(s.measurement, geo.psi);
        auto record = [&](const std::string &m, const ReconstructionResult &r) {
            pr.rms[m] = rms_error(r.modulus, s.phantom.modulus);
            pr.seconds[m] = r.seconds;
            pr.iterations[m] = r.iterations;
        };
        std::optional<ReconstructionResult> ml;
        if (has_method(cfg, "ml") || has_method(cfg, "post")) {
            ml = ml_estimate(prob, geo.psi, cfg.solver);
            if (has_method(cfg, "ml")) record("ml", *ml);
        }
        if (has_method(cfg, "post")) record("post", post_process_from_ml(prob, *ml, *den, cfg.solver));
        if (has_method(cfg, "tv")) record("tv", tv_reconstruct(prob, geo.psi, tv_cfg));
        if (has_method(cfg, "pnp")) record("pnp", pnp_reconstruct(prob, geo.psi, *den, pnp_cfg));
        const int n = ++done;
        if (progress && (n % 10 == 0 || n == static_cast<int>(test.size())))
            std::fprintf(stderr, "sweep: %d/%zu phantoms\n", n, test.size());
    });

    ensure_dir(out_dir);
    write_text_atomic(out_dir / "report.json", report_json(rep, false).dump(2) + "\n");
    write_text_atomic(out_dir / "sweep_bins.csv", report_bins_csv(rep));
    write_text_atomic(out_dir / "sweep_phantoms.csv", report_phantoms_csv(rep));
    Json timing;
    for (const auto &m : rep.methods) {
        double total = 0.0;
        for (const auto &p : rep.phantoms) total += p.seconds.at(m);
        timing[m] = {{"total_seconds", total}, {"mean_seconds", total / static_cast<double>(rep.phantoms.size())}};
    }
    write_text_atomic(out_dir / "timing.json", timing.dump(2) + "\n");
    return rep;
}

} // namespace elastopnp
