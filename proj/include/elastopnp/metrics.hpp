#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "elastopnp/config.hpp"

namespace elastopnp {

/// Relative L2 error ||E_hat - E|| / ||E||.
inline double rms_error(const Vector &estimate, const Vector &truth) {
    if (estimate.size() != truth.size()) throw InvalidArgument("rms_error: length mismatch");
    const double n = truth.norm();
    if (!(n > 0.0)) throw InvalidArgument("rms_error: reference field is zero");
    return (estimate - truth).norm() / n;
}

struct RatioBin {
    double lo = 0.0, hi = 0.0;
};

// Half-open bins [lo, lo+w); the last bin also takes its upper edge.
inline std::vector<RatioBin> make_bins(double lo, double hi, double width) {
    if (!(width > 0.0) || !(lo < hi)) throw InvalidArgument("make_bins: need lo < hi and width > 0");
    std::vector<RatioBin> bins;
    const int n = static_cast<int>(std::ceil((hi - lo) / width - 1e-9));
    for (int k = 0; k < n; ++k) bins.push_back({lo + k * width, std::min(hi, lo + (k + 1) * width)});
    return bins;
}

inline int bin_of(const std::vector<RatioBin> &bins, double ratio) {
    for (std::size_t k = 0; k < bins.size(); ++k) {
        const bool last = k + 1 == bins.size();
        if (ratio >= bins[k].lo && (ratio < bins[k].hi || (last && ratio <= bins[k].hi))) return static_cast<int>(k);
    }
    return -1;
}

struct BinStats {
    int count = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for fewer than 2 values
};

inline BinStats bin_stats(const std::vector<double> &v) {
    BinStats s;
    s.count = static_cast<int>(v.size());
    if (v.empty()) return s;
    double acc = 0.0;
    for (double x : v) acc += x;
    s.mean = acc / static_cast<double>(v.size());
    if (v.size() > 1) {
        double sq = 0.0;
        for (double x : v) sq += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
    }
    return s;
}

struct PhantomResult {
    int index = 0;
    double ratio = 0.0;
    std::map<std::string, double> rms;      // per method
    std::map<std::string, double> seconds;  // per method
    std::map<std::string, int> iterations;  // per method
};

struct ExperimentReport {
    std::vector<std::string> methods;
    std::vector<RatioBin> bins;
    std::vector<PhantomResult> phantoms;
    double tv_lambda = 0.0;
    std::vector<std::pair<double, double>> tv_tuning;  // (lambda, mean val RMS)
    double pnp_strength = 0.0;
    std::vector<std::pair<double, double>> pnp_tuning;  // (strength, mean val RMS; inf if it diverged)
    Json config;

    std::vector<double> values(const std::string &method, int bin = -1) const {
        std::vector<double> out;
        for (const auto &p : phantoms)
            if (bin < 0 || bin_of(bins, p.ratio) == bin) out.push_back(p.rms.at(method));
        return out;
    }
    BinStats stats(const std::string &method, int bin) const { return bin_stats(values(method, bin)); }
};

// Deterministic part of the report: everything except wall-clock times.
inline Json report_json(const ExperimentReport &r, bool with_timing) {
    Json j;
    j["format"] = "elastopnp-report";
    j["version"] = 1;
    j["metric"] = "relative L2 error ||E_hat - E||_2 / ||E||_2";
    j["methods"] = r.methods;
    j["tv_lambda"] = r.tv_lambda;
    Json tuning = Json::array();
    for (const auto &[l, v] : r.tv_tuning) tuning.push_back({{"tv_lambda", l}, {"mean_val_rms", v}});
    j["tv_tuning"] = tuning;
    j["pnp_strength"] = r.pnp_strength;
    Json pnp_tuning = Json::array();
    for (const auto &[v, m] : r.pnp_tuning)
        pnp_tuning.push_back({{"pnp_strength", v}, {"mean_val_rms", std::isfinite(m) ? Json(m) : Json(nullptr)}});
    j["pnp_tuning"] = pnp_tuning;
    Json bins = Json::array();
    for (std::size_t k = 0; k < r.bins.size(); ++k) {
        Json b = {{"lo", r.bins[k].lo}, {"hi", r.bins[k].hi}};
        for (const auto &m : r.methods) {
            const BinStats s = r.stats(m, static_cast<int>(k));
            b[m] = s.count ? Json{{"count", s.count}, {"mean", s.mean}, {"std", s.std}}
                           : Json{{"count", 0}, {"mean", nullptr}, {"std", nullptr}};
        }
        bins.push_back(b);
    }
    j["bins"] = bins;
    Json overall;
    for (const auto &m : r.methods) {
        const BinStats s = bin_stats(r.values(m));
        overall[m] = {{"count", s.count}, {"mean", s.mean}, {"std", s.std}};
    }
    j["overall"] = overall;
    Json per = Json::array();
    for (const auto &p : r.phantoms) {
        Json e = {{"index", p.index}, {"ratio", p.ratio}};
        Json rms, it;
        for (const auto &m : r.methods) {
            rms[m] = p.rms.at(m);
            it[m] = p.iterations.at(m);
        }
        e["rms"] = rms;
        e["iterations"] = it;
        if (with_timing) {
            Json sec;
            for (const auto &m : r.methods) sec[m] = p.seconds.at(m);
            e["seconds"] = sec;
        }
        per.push_back(e);
    }
    j["phantoms"] = per;
    j["config"] = r.config;
    return j;
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// One row per ratio bin per method.
inline std::string report_bins_csv(const ExperimentReport &r) {
    std::string out = "method,bin_lo,bin_hi,count,mean_rms,std_rms\n";
    for (const auto &m : r.methods)
        for (std::size_t k = 0; k < r.bins.size(); ++k) {
            const BinStats s = r.stats(m, static_cast<int>(k));
            // empty bins leave the statistics blank
            out += m + "," + fmt_double(r.bins[k].lo) + "," + fmt_double(r.bins[k].hi) + "," + std::to_string(s.count) +
                   "," + (s.count ? fmt_double(s.mean) : "") + "," + (s.count ? fmt_double(s.std) : "") + "\n";
        }
    return out;
}

/// One row per phantom, one RMS column per method.
inline std::string report_phantoms_csv(const ExperimentReport &r) {
    std::string out = "index,ratio";
    for (const auto &m : r.methods) out += ",rms_" + m;
    out += "\n";
    for (const auto &p : r.phantoms) {
        out += std::to_string(p.index) + "," + fmt_double(p.ratio);
        for (const auto &m : r.methods) out += "," + fmt_double(p.rms.at(m));
        out += "\n";
    }
    return out;
}

} // namespace elastopnp
