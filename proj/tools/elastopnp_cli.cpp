// elastopnp: gen-data | train | reconstruct | sweep
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "elastopnp/harness.hpp"

using namespace elastopnp;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
};

void add_common(CLI::App *app, Common &c, const char *out_help) {
    app->add_option("--config", c.config, "JSON run configuration (defaults used when omitted)");
    app->add_option("--seed", c.seed, "override the config seed");
    app->add_option("--threads", c.threads, "worker threads for per-sample work")->check(CLI::PositiveNumber);
    app->add_option("--out", c.out, out_help)->required();
}

RunConfig resolve(const Common &c) {
    RunConfig cfg = c.config.empty() ? config_from_json(Json::object()) : load_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.train.seed = *c.seed;
    }
    if (c.threads) cfg.threads = *c.threads;
    cfg.validate();
    return cfg;
}

int fail(ExitCode code, const std::string &msg) {
    std::fprintf(stderr, "elastopnp: error: %s\n", msg.c_str());
    return static_cast<int>(code);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Plug-and-play elasticity reconstruction: data generation, denoiser training, reconstruction, sweeps"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "elastopnp 1.0");

    Common gen_c, train_c, rec_c, sweep_c;
    std::string train_data, sweep_data, rec_input, rec_method = "ml";
    std::optional<std::string> rec_model, sweep_model;
    int rec_sample = 0;

    auto *gen = app.add_subcommand("gen-data", "generate phantoms, measurements and ML inputs");
    add_common(gen, gen_c, "dataset directory to write");

    auto *train = app.add_subcommand("train", "train the residual CNN denoiser on a dataset");
    add_common(train, train_c, "directory for the model file and loss curves");
    train->add_option("dataset", train_data, "dataset directory")->required();

    auto *rec = app.add_subcommand("reconstruct", "reconstruct one elasticity image");
    add_common(rec, rec_c, "directory for estimate.grd and trace.csv");
    rec->add_option("input", rec_input, "dataset directory or 2-channel displacement grid file")->required();
    rec->add_option("--sample", rec_sample, "sample index when input is a dataset");
    rec->add_option("--method", rec_method, "ml, tv, pnp or post")->check(CLI::IsMember({"ml", "tv", "pnp", "post"}));
    rec->add_option("--model", rec_model, "denoiser: model file, identity, gaussian:<sigma> or tv:<weight>");

    auto *sweep = app.add_subcommand("sweep", "RMS-vs-ratio sweep over the test split");
    add_common(sweep, sweep_c, "directory for the report");
    sweep->add_option("dataset", sweep_data, "dataset directory")->required();
    sweep->add_option("--model", sweep_model, "denoiser for pnp and post");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return static_cast<int>(ExitCode::config_error);
    }

    try {
        if (*gen) {
            const RunConfig cfg = resolve(gen_c);
            const Dataset d = cmd_gen_data(cfg, gen_c.out, true);
            const SplitCounts c = split_counts(cfg.dataset);
            std::printf("wrote %zu samples (%d train / %d val / %d test) to %s\n", d.samples.size(), c.train, c.val,
                        c.test, gen_c.out.c_str());
        } else if (*train) {
            const RunConfig cfg = resolve(train_c);
            const TrainSummary s = cmd_train(cfg, train_data, train_c.out, true);
            std::printf("best epoch %d, val loss %.6g -> %.6g, val MSE %.6g -> %.6g (%.1f%% lower), %.1f s\n",
                        s.history.best_epoch, s.history.val_loss.front(),
                        s.history.val_loss[static_cast<std::size_t>(s.history.best_epoch)], s.input_mse, s.output_mse,
                        100.0 * (1.0 - s.output_mse / s.input_mse), s.seconds);
            std::printf("model: %s\n", s.model_path.string().c_str());
        } else if (*rec) {
            const RunConfig cfg = resolve(rec_c);
            const ReconstructSummary s = cmd_reconstruct(cfg, rec_method, rec_input, rec_sample, rec_model, rec_c.out);
            std::printf("%s: %d iterations, %.2f s", rec_method.c_str(), s.result.iterations, s.result.seconds);
            if (s.rms) std::printf(", relative RMS %.6g", *s.rms);
            std::printf("\n");
        } else if (*sweep) {
            const RunConfig cfg = resolve(sweep_c);
            const ExperimentReport r = cmd_sweep(cfg, sweep_data, sweep_model, sweep_c.out, true);
            std::printf("%-10s", "bin");
            for (const auto &m : r.methods) std::printf("%10s", m.c_str());
            std::printf("\n");
            for (std::size_t k = 0; k < r.bins.size(); ++k) {
                std::printf("[%.1f,%.1f]", r.bins[k].lo, r.bins[k].hi);
                for (const auto &m : r.methods) {
                    const BinStats st = r.stats(m, static_cast<int>(k));
                    if (st.count)
                        std::printf("%10.4f", st.mean);
                    else
                        std::printf("%10s", "-");
                }
                std::printf("\n");
            }
            if (has_method(cfg, "tv")) std::printf("tv_lambda = %g\n", r.tv_lambda);
            if (has_method(cfg, "pnp")) std::printf("pnp_strength = %g\n", r.pnp_strength);
        }
    } catch (const ConfigError &e) {
        return fail(ExitCode::config_error, e.what());
    } catch (const InvalidArgument &e) {
        return fail(ExitCode::config_error, e.what());
    } catch (const SolverFailure &e) {
        return fail(ExitCode::solver_failure, e.what());
    } catch (const NumericalError &e) {
        return fail(ExitCode::solver_failure, e.what());
    } catch (const IoError &e) {
        return fail(ExitCode::io_error, e.what());
    } catch (const std::exception &e) {
        return fail(ExitCode::solver_failure, std::string("unexpected: ") + e.what());
    }
    return 0;
}
