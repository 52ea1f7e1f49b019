#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "elastopnp/harness.hpp"

using namespace elastopnp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("elastopnp_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig tiny_config() {
    RunConfig c;
    c.seed = 11;
    c.mesh.nx = c.mesh.ny = 11;
    c.phantom.nx = c.phantom.ny = 11;
    c.dataset.count = 14;
    c.dataset.split.use_counts = true;
    c.dataset.split.train_count = 10;
    c.dataset.split.val_count = 2;
    c.dataset.split.test_count = 2;
    c.solver.max_outer = 2;
    c.solver.max_inner = 10;
    c.network.layers = 3;
    c.network.channels = 4;
    c.train.patch_size = 8;
    c.train.epochs = 2;
    c.train.seed = c.seed;
    c.sweep.tune_samples = 2;
    c.sweep.tv_lambda_grid = {1e-3, 1e-2};
    c.sweep.pnp_strength_grid = {0.1, 1.0};
    return c;
}

} // namespace

TEST(SplitCounts, FractionsFloorValAndTest) {
    DatasetSettings d;
    d.count = 10;
    const SplitCounts c = split_counts(d);
    EXPECT_EQ(c.train, 8);
    EXPECT_EQ(c.val, 1);
    EXPECT_EQ(c.test, 1);
    d.count = 7;
    const SplitCounts e = split_counts(d);
    EXPECT_EQ(e.train + e.val + e.test, 7);
    EXPECT_EQ(e.val, 0);
}

TEST(Metrics, RmsErrorDefinition) {
    const Vector e = Vector::LinSpaced(9, 1.0, 3.0);
    EXPECT_EQ(rms_error(e, e), 0.0);
    EXPECT_NEAR(rms_error(2.0 * e, e), 1.0, 1e-15);
    EXPECT_NEAR(rms_error(Vector::Zero(9), e), 1.0, 1e-15);
    EXPECT_THROW(rms_error(e, Vector::Zero(9)), InvalidArgument);
    EXPECT_THROW(rms_error(e, Vector::Ones(3)), InvalidArgument);
}

TEST(Metrics, BinsAreHalfOpenWithClosedLastEdge) {
    const auto bins = make_bins(2.0, 8.0, 1.0);
    ASSERT_EQ(bins.size(), 6u);
    EXPECT_EQ(bin_of(bins, 2.0), 0);
    EXPECT_EQ(bin_of(bins, 2.999), 0);
    EXPECT_EQ(bin_of(bins, 3.0), 1);
    EXPECT_EQ(bin_of(bins, 8.0), 5);
    EXPECT_EQ(bin_of(bins, 1.99), -1);
    EXPECT_EQ(bin_of(bins, 8.01), -1);
}

TEST(Metrics, ReportMeansMatchPerPhantomValues) {
    ExperimentReport r;
    r.methods = {"ml", "pnp"};
    r.bins = make_bins(2.0, 8.0, 1.0);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(2.0, 5.0), v(0.0, 1.0);
    for (int i = 0; i < 40; ++i) {
        PhantomResult p;
        p.index = i;
        p.ratio = u(rng);
        p.rms = {{"ml", v(rng)}, {"pnp", v(rng)}};
        p.seconds = {{"ml", 0.0}, {"pnp", 0.0}};
        p.iterations = {{"ml", 1}, {"pnp", 1}};
        r.phantoms.push_back(p);
    }
    const Json j = report_json(r, false);
    for (std::size_t k = 0; k < r.bins.size(); ++k) {
        double sum = 0.0;
        int n = 0;
        for (const auto &p : r.phantoms)
            if (p.ratio >= r.bins[k].lo && p.ratio < r.bins[k].hi) {
                sum += p.rms.at("pnp");
                ++n;
            }
        const Json &b = j["bins"][k]["pnp"];
        EXPECT_EQ(b["count"].get<int>(), n);
        if (n)
            EXPECT_NEAR(b["mean"].get<double>(), sum / n, 1e-12);
        else
            EXPECT_TRUE(b["mean"].is_null());
    }
    const std::string csv = report_bins_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,bin_lo,bin_hi,count,mean_rms,std_rms");
    EXPECT_NE(csv.find("pnp,7,8,0,,\n"), std::string::npos);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    try {
        config_from_json(parse_json_text(R"({"solver": {"max_iner": 3}})", "test"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError &e) {
        EXPECT_EQ(e.field, "solver.max_iner");
    }
    try {
        config_from_json(parse_json_text(R"({"phantom": {"ratio": [9, 2]}})", "test"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError &e) {
        EXPECT_EQ(e.field.rfind("phantom.ratio", 0), 0u) << e.field;
    }
    EXPECT_THROW(config_from_json(parse_json_text(R"({"seed": "x"})", "test")), ConfigError);
    for (const char *bad : {R"({"sweep": {"pnp_strength": 0}})", R"({"sweep": {"pnp_strength": 1.5}})",
                            R"({"sweep": {"pnp_strength_grid": []}})", R"({"sweep": {"pnp_strength_grid": [0.5, 2]}})"}) {
        try {
            config_from_json(parse_json_text(bad, "test"));
            FAIL() << "expected ConfigError for " << bad;
        } catch (const ConfigError &e) {
            EXPECT_EQ(e.field.rfind("sweep.pnp_strength", 0), 0u) << e.field;
        }
    }
    EXPECT_THROW(parse_json_text("{", "test"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/elastopnp.json"), IoError);
}

TEST(Config, JsonRoundTrip) {
    RunConfig c = tiny_config();
    c.measurement.snr_db = std::numeric_limits<double>::infinity();
    c.solver.acceleration = Acceleration::nesterov;
    const Json j = config_to_json(c);
    const Json k = config_to_json(config_from_json(j));
    EXPECT_EQ(j.dump(), k.dump());
}

TEST(Dataset, WriteReadRoundTripAndDeterministicManifest) {
    const RunConfig c = tiny_config();
    const fs::path a = scratch("ds_a"), b = scratch("ds_b");
    const Dataset d = cmd_gen_data(c, a);
    cmd_gen_data(c, b);
    EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
    EXPECT_EQ(slurp(a / "ml_0013.grd"), slurp(b / "ml_0013.grd"));
    EXPECT_EQ(d.of(Split::train).size(), 10u);
    EXPECT_EQ(d.of(Split::test).size(), 2u);

    const Dataset r = read_dataset(a);
    ASSERT_EQ(r.samples.size(), d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        EXPECT_EQ(r.samples[i].split, d.samples[i].split);
        EXPECT_EQ(r.samples[i].phantom.modulus, d.samples[i].phantom.modulus);
        EXPECT_EQ(r.samples[i].ml, d.samples[i].ml);
        EXPECT_EQ(r.samples[i].measurement.u_m, d.samples[i].measurement.u_m);
        EXPECT_EQ(r.samples[i].measurement.noise.sigma_n, d.samples[i].measurement.noise.sigma_n);
    }
    // The stored ML input is reproducible from the stored measurement.
    const Geometry geo = make_geometry(c.mesh);
    const auto &s = r.samples[3];
    const Vector ml = ml_estimate(prepare_problem(s.measurement, geo.psi), geo.psi, c.solver).modulus;
    EXPECT_LE((ml - s.ml).cwiseAbs().maxCoeff(), 1e-12 * s.ml.cwiseAbs().maxCoeff());
    EXPECT_THROW(read_dataset(scratch("missing")), IoError);
}

TEST(Reconstruct, NoiselessMlRecoversTruth) {
    RunConfig c = tiny_config();
    c.mesh.nx = c.mesh.ny = c.phantom.nx = c.phantom.ny = 15;
    c.dataset.count = 1;
    c.dataset.split.train_count = 1;
    c.dataset.split.val_count = 0;
    c.dataset.split.test_count = 0;
    c.measurement.snr_db = std::numeric_limits<double>::infinity();
    const fs::path ds = scratch("noiseless");
    cmd_gen_data(c, ds);
    c.solver.max_outer = 1;
    c.solver.max_inner = 20000;
    c.solver.tolerance = 1e-13;
    c.solver.acceleration = Acceleration::nesterov;
    const ReconstructSummary ml = cmd_reconstruct(c, "ml", ds, 0, std::nullopt, scratch("noiseless_ml"));
    ASSERT_TRUE(ml.rms.has_value());
    EXPECT_LE(*ml.rms, 1e-6);
}

TEST(Reconstruct, IdentityPnpWritesTheMlEstimate) {
    const RunConfig c = tiny_config();
    const fs::path ds = scratch("ident_ds"), o1 = scratch("ident_ml"), o2 = scratch("ident_pnp");
    cmd_gen_data(c, ds);
    cmd_reconstruct(c, "ml", ds, 12, std::nullopt, o1);
    cmd_reconstruct(c, "pnp", ds, 12, std::string("identity"), o2);
    EXPECT_EQ(slurp(o1 / "estimate.grd"), slurp(o2 / "estimate.grd"));
    EXPECT_EQ(slurp(o1 / "trace.csv"), slurp(o2 / "trace.csv"));
    EXPECT_THROW(cmd_reconstruct(c, "pnp", ds, 12, std::nullopt, o2), InvalidArgument);
    EXPECT_THROW(cmd_reconstruct(c, "bogus", ds, 12, std::nullopt, o2), InvalidArgument);
    EXPECT_THROW(cmd_reconstruct(c, "ml", ds, 99, std::nullopt, o2), InvalidArgument);
}

TEST(Train, ZeroResidualDataKeepsTheIdentity) {
    RunConfig c = tiny_config();
    const Geometry geo = make_geometry(c.mesh);
    Dataset d = build_dataset(c, geo);
    for (auto &s : d.samples) s.ml = s.phantom.modulus;
    const fs::path ds = scratch("clean_ds");
    write_dataset(d, ds);
    const TrainSummary t = cmd_train(c, ds, scratch("clean_train"));
    EXPECT_EQ(t.input_mse, 0.0);
    EXPECT_EQ(t.output_mse, 0.0);
    EXPECT_TRUE(fs::exists(t.model_path));
    const std::string csv = slurp(t.model_path.parent_path() / "train_loss.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss");
    EXPECT_THROW(cmd_train(c, scratch("no_such_dataset"), scratch("clean_train2")), IoError);
}

TEST(Train, DeterministicModelBytes) {
    const RunConfig c = tiny_config();
    const fs::path ds = scratch("train_ds");
    cmd_gen_data(c, ds);
    const TrainSummary a = cmd_train(c, ds, scratch("train_a"));
    const TrainSummary b = cmd_train(c, ds, scratch("train_b"));
    EXPECT_EQ(slurp(a.model_path), slurp(b.model_path));
    EXPECT_EQ(slurp(a.model_path.parent_path() / "train.json"), slurp(b.model_path.parent_path() / "train.json"));
    EXPECT_EQ(a.history.val_loss, b.history.val_loss);
}

TEST(Sweep, DeterministicReportAndOutputs) {
    const RunConfig c = tiny_config();
    const fs::path ds = scratch("sweep_ds"), o1 = scratch("sweep_a"), o2 = scratch("sweep_b");
    cmd_gen_data(c, ds);
    const ExperimentReport r = cmd_sweep(c, ds, std::string("gaussian:0.5"), o1);
    cmd_sweep(c, ds, std::string("gaussian:0.5"), o2);
    for (const char *f : {"report.json", "sweep_bins.csv", "sweep_phantoms.csv"}) EXPECT_EQ(slurp(o1 / f), slurp(o2 / f)) << f;
    EXPECT_TRUE(fs::exists(o1 / "timing.json"));
    ASSERT_EQ(r.phantoms.size(), 2u);
    EXPECT_EQ(r.tv_tuning.size(), 2u);
    EXPECT_EQ(r.pnp_tuning.size(), 2u);
    EXPECT_TRUE(r.pnp_strength == 0.1 || r.pnp_strength == 1.0) << r.pnp_strength;
    EXPECT_EQ(r.phantoms[0].index, 12);
    for (const auto &p : r.phantoms)
        for (const auto &m : r.methods) EXPECT_GT(p.rms.at(m), 0.0) << m;
    EXPECT_THROW(cmd_sweep(c, ds, std::nullopt, o2), InvalidArgument);
}

TEST(Sweep, EmptyTestSplitIsRejected) {
    RunConfig c = tiny_config();
    c.dataset.count = 12;
    c.dataset.split.test_count = 0;
    const fs::path ds = scratch("sweep_empty");
    cmd_gen_data(c, ds);
    EXPECT_THROW(cmd_sweep(c, ds, std::string("identity"), scratch("sweep_empty_out")), InvalidArgument);
}
