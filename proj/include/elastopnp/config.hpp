#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "elastopnp/cnn.hpp"
#include "elastopnp/denoiser.hpp"
#include "elastopnp/phantoms.hpp"
#include "elastopnp/solvers.hpp"

namespace elastopnp {

using Json = nlohmann::ordered_json;

struct MeshSettings {
    Index nx = 63;  // elements; must match phantom grid
    Index ny = 63;
    double width = 0.04;
    double height = 0.04;
    double poisson_ratio = 0.45;
    double traction = -1e-3;  // normal traction on the top edge (compression < 0)
};

// Either fractions that sum to 1 (floor for val/test, remainder to train) or
// explicit counts when `use_counts` is set.
struct SplitSettings {
    double train = 0.8, val = 0.1, test = 0.1;
    bool use_counts = false;
    int train_count = 0, val_count = 0, test_count = 0;
};

struct DatasetSettings {
    int count = 200;
    SplitSettings split;
};

struct SweepSettings {
    std::vector<std::string> methods{"ml", "tv", "post", "pnp"};
    double bin_lo = 2.0, bin_hi = 8.0, bin_width = 1.0;
    // TV weight: a fixed value when tv_lambda >= 0, otherwise picked from the
    // grid on up to tune_samples validation samples.
    double tv_lambda = -1.0;
    std::vector<double> tv_lambda_grid{1e-4, 3.1622776601683795e-4, 1e-3, 3.1622776601683795e-3,
                                       1e-2, 3.1622776601683795e-2, 1e-1};
    // PnP denoiser strength, fixed when >= 0, otherwise tuned like tv_lambda.
    double pnp_strength = -1.0;
    std::vector<double> pnp_strength_grid{0.003, 0.01, 0.03, 0.1, 0.3, 1.0};
    int tune_samples = 20;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;
    MeshSettings mesh;
    PhantomConfig phantom;
    MeasurementOptions measurement;
    double noise_sigma_n = 0.0;  // only for reconstructing a bare displacement file
    DatasetSettings dataset;
    SolverConfig solver;
    CnnArchitecture network;
    TrainConfig train;
    SweepSettings sweep;

    RunConfig() { train.patch_size = 32; }  // 64x64 images

    void validate() const;
};

namespace detail {

// Walks one JSON object, remembers which keys were consumed and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const Json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <class T>
    void get(const char *key, T &out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError(field(key), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError(field(key), "expected an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError(field(key), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw ConfigError(field(key), "expected a string");
            }
            out = it->template get<T>();
        } catch (const nlohmann::json::exception &e) {
            throw ConfigError(field(key), e.what());
        }
        if constexpr (std::is_floating_point_v<T>)
            if (!std::isfinite(static_cast<double>(out))) throw ConfigError(field(key), "must be finite");
    }

    void range(const char *key, Range &out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
            throw ConfigError(field(key), "expected [lo, hi]");
        out = {(*it)[0].get<double>(), (*it)[1].get<double>()};
    }

    const Json *child(const char *key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string field(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }

private:
    const Json &j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
void with_section(ObjectReader &parent, const char *key, F &&body) {
    if (const Json *j = parent.child(key)) {
        ObjectReader r(*j, parent.field(key));
        body(r);
        r.finish();
    }
}

inline std::string lowercase(std::string s) {
    for (char &c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

} // namespace detail

inline void RunConfig::validate() const {
    if (threads < 1) throw ConfigError("threads", "must be >= 1");
    if (mesh.nx < 1 || mesh.ny < 1) throw ConfigError("mesh.nx", "element counts must be >= 1");
    if (!(mesh.width > 0.0) || !(mesh.height > 0.0)) throw ConfigError("mesh.width", "extents must be > 0");
    if (!(mesh.poisson_ratio >= 0.0 && mesh.poisson_ratio < 0.5))
        throw ConfigError("mesh.poisson_ratio", "must lie in [0, 0.5)");
    if (!(mesh.traction != 0.0)) throw ConfigError("mesh.traction", "must be nonzero");
    if (phantom.nx != mesh.nx || phantom.ny != mesh.ny || phantom.width != mesh.width || phantom.height != mesh.height)
        throw ConfigError("phantom", "grid must match the mesh");
    phantom.validate();
    if (!(measurement.snr_db > 0.0)) throw ConfigError("measurement.snr_db", "must be > 0 (use \"inf\" for noiseless)");
    if (!(measurement.sigma_w_rel > 0.0)) throw ConfigError("measurement.sigma_w_rel", "must be > 0");
    if (!(measurement.reference_modulus > 0.0)) throw ConfigError("measurement.reference_modulus", "must be > 0");
    if (!(noise_sigma_n >= 0.0)) throw ConfigError("noise_sigma_n", "must be >= 0");
    if (dataset.count < 1) throw ConfigError("dataset.count", "must be >= 1");
    const auto &s = dataset.split;
    if (s.use_counts) {
        if (s.train_count < 0 || s.val_count < 0 || s.test_count < 0)
            throw ConfigError("dataset.split", "counts must be >= 0");
        if (s.train_count + s.val_count + s.test_count != dataset.count)
            throw ConfigError("dataset.split", "counts must add up to dataset.count");
    } else {
        if (!(s.train >= 0.0 && s.val >= 0.0 && s.test >= 0.0))
            throw ConfigError("dataset.split", "fractions must be >= 0");
        if (std::abs(s.train + s.val + s.test - 1.0) > 1e-9) throw ConfigError("dataset.split", "fractions must sum to 1");
    }
    try {
        solver.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError("solver", e.what());
    }
    try {
        network.validate();
    } catch (const InvalidArgument &e) {
        throw ConfigError("network", e.what());
    }
    train.validate();
    if (train.patch_size > mesh.nx + 1 || train.patch_size > mesh.ny + 1)
        throw ConfigError("train.patch_size", "must not exceed the image size");
    if (sweep.methods.empty()) throw ConfigError("sweep.methods", "must not be empty");
    for (const auto &m : sweep.methods)
        if (m != "ml" && m != "tv" && m != "post" && m != "pnp")
            throw ConfigError("sweep.methods", "unknown method '" + m + "'");
    if (!(sweep.bin_width > 0.0) || !(sweep.bin_lo < sweep.bin_hi))
        throw ConfigError("sweep.bins", "need bin_lo < bin_hi and bin_width > 0");
    if (sweep.tv_lambda < 0.0 && sweep.tv_lambda_grid.empty())
        throw ConfigError("sweep.tv_lambda_grid", "must not be empty when tv_lambda is not fixed");
    for (double l : sweep.tv_lambda_grid)
        if (!(l >= 0.0)) throw ConfigError("sweep.tv_lambda_grid", "entries must be >= 0");
    if (sweep.pnp_strength >= 0.0 && !(sweep.pnp_strength > 0.0 && sweep.pnp_strength <= 1.0))
        throw ConfigError("sweep.pnp_strength", "must lie in (0,1], or be negative to tune it");
    if (sweep.pnp_strength < 0.0 && sweep.pnp_strength_grid.empty())
        throw ConfigError("sweep.pnp_strength_grid", "must not be empty when pnp_strength is not fixed");
    for (double v : sweep.pnp_strength_grid)
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError("sweep.pnp_strength_grid", "entries must lie in (0,1]");
    if (sweep.tune_samples < 1) throw ConfigError("sweep.tune_samples", "must be >= 1");
}

inline RunConfig config_from_json(const Json &root) {
    using detail::ObjectReader;
    using detail::with_section;
    RunConfig c;
    ObjectReader r(root, "");
    r.get("seed", c.seed);
    r.get("threads", c.threads);
    with_section(r, "mesh", [&](ObjectReader &m) {
        m.get("nx", c.mesh.nx);
        m.get("ny", c.mesh.ny);
        m.get("width", c.mesh.width);
        m.get("height", c.mesh.height);
        m.get("poisson_ratio", c.mesh.poisson_ratio);
        m.get("traction", c.mesh.traction);
    });
    c.phantom.nx = c.mesh.nx;
    c.phantom.ny = c.mesh.ny;
    c.phantom.width = c.mesh.width;
    c.phantom.height = c.mesh.height;
    with_section(r, "phantom", [&](ObjectReader &p) {
        p.range("background", c.phantom.background);
        p.range("lesion", c.phantom.lesion);
        p.range("ratio", c.phantom.ratio);
        p.range("semi_axis", c.phantom.semi_axis);
        std::string shape = c.phantom.shape == LesionShape::blob ? "blob" : "ellipse";
        p.get("shape", shape);
        if (shape == "ellipse") c.phantom.shape = LesionShape::ellipse;
        else if (shape == "blob") c.phantom.shape = LesionShape::blob;
        else throw ConfigError("phantom.shape", "expected \"ellipse\" or \"blob\"");
        p.get("lesion_count", c.phantom.lesion_count);
        p.get("smooth_edges", c.phantom.smooth_edges);
        p.get("max_tries", c.phantom.max_tries);
    });
    with_section(r, "measurement", [&](ObjectReader &m) {
        if (const Json *snr = m.child("snr_db")) {
            if (snr->is_string() && detail::lowercase(snr->get<std::string>()) == "inf")
                c.measurement.snr_db = std::numeric_limits<double>::infinity();
            else if (snr->is_number())
                c.measurement.snr_db = snr->get<double>();
            else
                throw ConfigError("measurement.snr_db", "expected a number or \"inf\"");
        }
        m.get("sigma_w_rel", c.measurement.sigma_w_rel);
        m.get("reference_modulus", c.measurement.reference_modulus);
        m.get("sigma_n", c.noise_sigma_n);
    });
    with_section(r, "dataset", [&](ObjectReader &d) {
        d.get("count", c.dataset.count);
        if (const Json *s = d.child("split")) {
            auto &sp = c.dataset.split;
            if (s->is_array()) {
                if (s->size() != 3) throw ConfigError("dataset.split", "expected [train, val, test]");
                for (const auto &v : *s)
                    if (!v.is_number()) throw ConfigError("dataset.split", "expected numbers");
                sp.use_counts = false;
                sp.train = (*s)[0].get<double>();
                sp.val = (*s)[1].get<double>();
                sp.test = (*s)[2].get<double>();
            } else if (s->is_object()) {
                ObjectReader sr(*s, "dataset.split");
                sp.use_counts = true;
                sr.get("train", sp.train_count);
                sr.get("val", sp.val_count);
                sr.get("test", sp.test_count);
                sr.finish();
            } else {
                throw ConfigError("dataset.split", "expected [fractions] or {counts}");
            }
        }
    });
    with_section(r, "solver", [&](ObjectReader &s) {
        auto &v = c.solver;
        s.get("max_outer", v.max_outer);
        s.get("max_inner", v.max_inner);
        std::string step = v.step_rule == StepRule::fixed ? "fixed" : "backtracking";
        s.get("step_rule", step);
        if (step == "fixed") v.step_rule = StepRule::fixed;
        else if (step == "backtracking") v.step_rule = StepRule::backtracking;
        else throw ConfigError("solver.step_rule", "expected \"fixed\" or \"backtracking\"");
        std::string acc = v.acceleration == Acceleration::none ? "none" : "nesterov";
        s.get("acceleration", acc);
        if (acc == "none") v.acceleration = Acceleration::none;
        else if (acc == "nesterov") v.acceleration = Acceleration::nesterov;
        else throw ConfigError("solver.acceleration", "expected \"none\" or \"nesterov\"");
        s.get("backtrack_factor", v.backtrack_factor);
        s.get("sufficient_decrease", v.sufficient_decrease);
        s.get("initial_modulus", v.initial_modulus);
        s.get("positivity_floor", v.positivity_floor);
        s.get("tolerance", v.tolerance);
        s.get("tv_lambda", v.tv_lambda);
        s.get("tv_inner", v.tv_inner);
        s.get("denoiser_strength", v.denoiser_strength);
        s.get("lipschitz_tolerance", v.lipschitz_tolerance);
        s.get("lipschitz_max_iter", v.lipschitz_max_iter);
        std::string gm = v.gamma_method == GammaSolveMethod::cholesky ? "cholesky" : "cg";
        s.get("gamma_method", gm);
        if (gm == "cholesky") v.gamma_method = GammaSolveMethod::cholesky;
        else if (gm == "cg") v.gamma_method = GammaSolveMethod::conjugate_gradient;
        else throw ConfigError("solver.gamma_method", "expected \"cholesky\" or \"cg\"");
    });
    with_section(r, "network", [&](ObjectReader &n) {
        n.get("layers", c.network.layers);
        n.get("channels", c.network.channels);
        n.get("kernel", c.network.kernel);
    });
    with_section(r, "train", [&](ObjectReader &t) {
        t.get("patch_size", c.train.patch_size);
        t.get("batch_size", c.train.batch_size);
        t.get("epochs", c.train.epochs);
        t.get("learning_rate", c.train.learning_rate);
        t.get("beta1", c.train.beta1);
        t.get("beta2", c.train.beta2);
        t.get("epsilon", c.train.epsilon);
        t.get("patches_per_image", c.train.patches_per_image);
        t.get("noise_scale_min", c.train.noise_scale_min);
    });
    with_section(r, "sweep", [&](ObjectReader &s) {
        if (const Json *m = s.child("methods")) {
            if (!m->is_array()) throw ConfigError("sweep.methods", "expected an array of strings");
            c.sweep.methods.clear();
            for (const auto &v : *m) {
                if (!v.is_string()) throw ConfigError("sweep.methods", "expected an array of strings");
                c.sweep.methods.push_back(v.get<std::string>());
            }
        }
        s.get("bin_lo", c.sweep.bin_lo);
        s.get("bin_hi", c.sweep.bin_hi);
        s.get("bin_width", c.sweep.bin_width);
        s.get("tv_lambda", c.sweep.tv_lambda);
        if (const Json *g = s.child("tv_lambda_grid")) {
            if (!g->is_array()) throw ConfigError("sweep.tv_lambda_grid", "expected an array of numbers");
            c.sweep.tv_lambda_grid.clear();
            for (const auto &v : *g) {
                if (!v.is_number()) throw ConfigError("sweep.tv_lambda_grid", "expected an array of numbers");
                c.sweep.tv_lambda_grid.push_back(v.get<double>());
            }
        }
        s.get("pnp_strength", c.sweep.pnp_strength);
        if (const Json *g = s.child("pnp_strength_grid")) {
            if (!g->is_array()) throw ConfigError("sweep.pnp_strength_grid", "expected an array of numbers");
            c.sweep.pnp_strength_grid.clear();
            for (const auto &v : *g) {
                if (!v.is_number()) throw ConfigError("sweep.pnp_strength_grid", "expected an array of numbers");
                c.sweep.pnp_strength_grid.push_back(v.get<double>());
            }
        }
        s.get("tune_samples", c.sweep.tune_samples);
    });
    r.finish();
    c.train.seed = c.seed;
    c.validate();
    return c;
}

inline Json config_to_json(const RunConfig &c) {
    auto range = [](const Range &r) { return Json::array({r.lo, r.hi}); };
    Json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["mesh"] = {{"nx", c.mesh.nx},           {"ny", c.mesh.ny},
                 {"width", c.mesh.width},     {"height", c.mesh.height},
                 {"poisson_ratio", c.mesh.poisson_ratio}, {"traction", c.mesh.traction}};
    j["phantom"] = {{"background", range(c.phantom.background)},
                    {"lesion", range(c.phantom.lesion)},
                    {"ratio", range(c.phantom.ratio)},
                    {"semi_axis", range(c.phantom.semi_axis)},
                    {"shape", c.phantom.shape == LesionShape::blob ? "blob" : "ellipse"},
                    {"lesion_count", c.phantom.lesion_count},
                    {"smooth_edges", c.phantom.smooth_edges},
                    {"max_tries", c.phantom.max_tries}};
    Json snr = std::isinf(c.measurement.snr_db) ? Json("inf") : Json(c.measurement.snr_db);
    j["measurement"] = {{"snr_db", snr},
                        {"sigma_w_rel", c.measurement.sigma_w_rel},
                        {"reference_modulus", c.measurement.reference_modulus},
                        {"sigma_n", c.noise_sigma_n}};
    const auto &sp = c.dataset.split;
    j["dataset"] = {{"count", c.dataset.count},
                    {"split", sp.use_counts ? Json{{"train", sp.train_count}, {"val", sp.val_count}, {"test", sp.test_count}}
                                            : Json::array({sp.train, sp.val, sp.test})}};
    const auto &s = c.solver;
    j["solver"] = {{"max_outer", s.max_outer},
                   {"max_inner", s.max_inner},
                   {"step_rule", s.step_rule == StepRule::fixed ? "fixed" : "backtracking"},
                   {"acceleration", s.acceleration == Acceleration::none ? "none" : "nesterov"},
                   {"backtrack_factor", s.backtrack_factor},
                   {"sufficient_decrease", s.sufficient_decrease},
                   {"initial_modulus", s.initial_modulus},
                   {"positivity_floor", s.positivity_floor},
                   {"tolerance", s.tolerance},
                   {"tv_lambda", s.tv_lambda},
                   {"tv_inner", s.tv_inner},
                   {"denoiser_strength", s.denoiser_strength},
                   {"lipschitz_tolerance", s.lipschitz_tolerance},
                   {"lipschitz_max_iter", s.lipschitz_max_iter},
                   {"gamma_method", s.gamma_method == GammaSolveMethod::cholesky ? "cholesky" : "cg"}};
    j["network"] = {{"layers", c.network.layers}, {"channels", c.network.channels}, {"kernel", c.network.kernel}};
    j["train"] = {{"patch_size", c.train.patch_size},   {"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},           {"learning_rate", c.train.learning_rate},
                  {"beta1", c.train.beta1},             {"beta2", c.train.beta2},
                  {"epsilon", c.train.epsilon},         {"patches_per_image", c.train.patches_per_image},
                  {"noise_scale_min", c.train.noise_scale_min}};
    j["sweep"] = {{"methods", c.sweep.methods},       {"bin_lo", c.sweep.bin_lo},
                  {"bin_hi", c.sweep.bin_hi},         {"bin_width", c.sweep.bin_width},
                  {"tv_lambda", c.sweep.tv_lambda},   {"tv_lambda_grid", c.sweep.tv_lambda_grid},
                  {"pnp_strength", c.sweep.pnp_strength}, {"pnp_strength_grid", c.sweep.pnp_strength_grid},
                  {"tune_samples", c.sweep.tune_samples}};
    return j;
}

inline Json parse_json_text(const std::string &text, const std::string &what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw ConfigError(what, std::string("malformed JSON: ") + e.what());
    }
}

inline RunConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(parse_json_text(ss.str(), path.string()));
}

} // namespace elastopnp
