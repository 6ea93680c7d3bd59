#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowpad/common.hpp"

namespace flowpad {

// Scores are bonafide posteriors in [0,1]; labels use attack=0, bonafide=1.
struct ScoreSet {
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::string> clip_ids;

    void push(double s, int y, std::string id = {}) {
        scores.push_back(s);
        labels.push_back(y);
        clip_ids.push_back(std::move(id));
    }
    size_t size() const { return scores.size(); }
    int n_pos() const { return static_cast<int>(std::count(labels.begin(), labels.end(), 1)); }
    int n_neg() const { return static_cast<int>(labels.size()) - n_pos(); }

    void require_both_classes(const std::string& what) const {
        if (scores.size() != labels.size())
            throw ContractError("ScoreSet length mismatch");
        if (n_pos() == 0 || n_neg() == 0)
            throw MetricUndefined(what + " undefined: need both classes present");
    }
};

struct Confusion {
    long tp = 0, tn = 0, fp = 0, fn = 0;
};

// Bonafide predicted when score >= threshold.
inline Confusion confusion_at(const ScoreSet& s, double threshold) {
    if (!std::isfinite(threshold) &&
        threshold != std::numeric_limits<double>::infinity() &&
        threshold != -std::numeric_limits<double>::infinity())
        throw ContractError("threshold must not be NaN");
    Confusion c;
    for (size_t i = 0; i < s.size(); ++i) {
        bool pred_bona = s.scores[i] >= threshold;
        if (s.labels[i] == 1)
            (pred_bona ? c.tp : c.fn)++;
        else
            (pred_bona ? c.fp : c.tn)++;
    }
    return c;
}

// FAR: attacks accepted as bonafide. FRR: bonafide rejected.
inline double far_of(const Confusion& c) {
    return static_cast<double>(c.fp) / (c.fp + c.tn);
}
inline double frr_of(const Confusion& c) {
    return static_cast<double>(c.fn) / (c.fn + c.tp);
}
inline double tpr_of(const Confusion& c) {
    return static_cast<double>(c.tp) / (c.tp + c.fn);
}

struct RocPoint {
    double threshold, far, frr, tpr;
};

struct SweepResult {
    std::vector<RocPoint> points;  // thresholds ascending
    double auc = 0;
    double eer = 0;
    double eer_threshold = 0;
    double youden = 0;
    double youden_threshold = 0;
};

// Threshold sweep over sorted unique scores plus +-inf sentinels. AUC by
// trapezoidal integration, EER by linear interpolation at the FAR-FRR sign
// change, Youden = max(TPR - FPR).
inline SweepResult sweep(const ScoreSet& s) {
    s.require_both_classes("sweep");
    std::vector<double> th(s.scores);
    std::sort(th.begin(), th.end());
    th.erase(std::unique(th.begin(), th.end()), th.end());
    th.insert(th.begin(), -std::numeric_limits<double>::infinity());
    th.push_back(std::numeric_limits<double>::infinity());

    SweepResult r;
    for (double t : th) {
        Confusion c = confusion_at(s, t);
        r.points.push_back({t, far_of(c), frr_of(c), tpr_of(c)});
    }
    // AUC over (FPR, TPR); FPR == FAR decreases with threshold
    r.auc = 0;
    for (size_t i = 0; i + 1 < r.points.size(); ++i) {
        double x1 = r.points[i].far, x0 = r.points[i + 1].far;
        double y1 = r.points[i].tpr, y0 = r.points[i + 1].tpr;
        r.auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    // Youden over swept thresholds
    r.youden = -1;
    for (const auto& p : r.points) {
        double j = p.tpr - p.far;
        if (j > r.youden) {
            r.youden = j;
            r.youden_threshold = p.threshold;
        }
    }
    // EER: FAR - FRR is non-increasing... it goes from +1 (all accepted) at
    // -inf to -1 at +inf; find the sign change and interpolate.
    r.eer = 0;
    r.eer_threshold = th.front();
    for (size_t i = 0; i + 1 < r.points.size(); ++i) {
        double d0 = r.points[i].far - r.points[i].frr;
        double d1 = r.points[i + 1].far - r.points[i + 1].frr;
        if (d0 == 0.0) {  // flat interval: operate mid-interval
            size_t j = i;
            while (j + 1 < r.points.size() &&
                   r.points[j + 1].far - r.points[j + 1].frr == 0.0)
                ++j;
            r.eer = r.points[i].far;
            // every tau in (th[i-1], th[j]] realizes this confusion; the
            // midpoint maximizes the margin when the threshold is reused on
            // another score set (dev-eer transfer)
            double lo = i > 0 ? r.points[i - 1].threshold : r.points[i].threshold;
            double hi = r.points[j].threshold;
            if (!std::isfinite(lo)) lo = hi;
            if (!std::isfinite(hi)) hi = lo;
            r.eer_threshold = (lo + hi) / 2;
            break;
        }
        if (d0 > 0 && d1 < 0) {  // strict: a touch-zero enters the flat branch
            double t = d0 / (d0 - d1);
            double far_x = r.points[i].far + t * (r.points[i + 1].far - r.points[i].far);
            double frr_x = r.points[i].frr + t * (r.points[i + 1].frr - r.points[i].frr);
            r.eer = (far_x + frr_x) / 2.0;  // equal at the crossing up to rounding
            double a = r.points[i].threshold, b = r.points[i + 1].threshold;
            if (!std::isfinite(a)) a = b;
            if (!std::isfinite(b)) b = a;
            r.eer_threshold = a + t * (b - a);
            break;
        }
    }
    return r;
}

// Threshold policies for HTER reporting.
struct ThresholdPolicy {
    enum Kind { dev_eer, fixed, test_eer } kind = test_eer;
    double tau = 0.5;                    // for fixed
    const ScoreSet* dev = nullptr;       // for dev_eer

    static ThresholdPolicy DevEer(const ScoreSet& dev) { return {dev_eer, 0, &dev}; }
    static ThresholdPolicy Fixed(double t) { return {fixed, t, nullptr}; }
    static ThresholdPolicy TestEer() { return {test_eer, 0, nullptr}; }

    std::string describe() const {
        switch (kind) {
            case dev_eer: return "dev-eer";
            case fixed: return "fixed(" + std::to_string(tau) + ")";
            default: return "test-eer";
        }
    }
};

struct HterResult {
    double hter, far, frr, threshold;
};

inline HterResult hter_at(const ScoreSet& s, const ThresholdPolicy& policy) {
    s.require_both_classes("HTER");
    double tau;
    switch (policy.kind) {
        case ThresholdPolicy::dev_eer:
            if (!policy.dev)
                throw ConfigError("dev-eer threshold policy requires dev scores");
            tau = sweep(*policy.dev).eer_threshold;
            break;
        case ThresholdPolicy::fixed:
            tau = policy.tau;
            break;
        default:
            tau = sweep(s).eer_threshold;
    }
    Confusion c = confusion_at(s, tau);
    double far = far_of(c), frr = frr_of(c);
    return {(far + frr) / 2.0, far, frr, tau};
}

// APCER == FAR and BPCER == FRR under the bonafide-positive convention.
inline std::pair<double, double> apcer_bpcer(const ScoreSet& s, double threshold) {
    s.require_both_classes("APCER/BPCER");
    Confusion c = confusion_at(s, threshold);
    if (c.fp + c.tn == 0 || c.fn + c.tp == 0)
        throw MetricUndefined("APCER/BPCER undefined: zero denominator");
    return {far_of(c), frr_of(c)};
}

inline double acer(double apcer, double bpcer) { return (apcer + bpcer) / 2.0; }

// ---------------------------------------------------------------------------
// Report assembly and artifact formats
// ---------------------------------------------------------------------------

struct EvalReport {
    double accuracy = 0;
    double auc_roc = 0;
    double eer = 0, eer_threshold = 0;
    double hter = 0, far = 0, frr = 0, operating_threshold = 0;
    double youden = 0;
    double apcer = 0, bpcer = 0, acer = 0;
    std::string threshold_policy;
    std::string engine;  // flow engine used at evaluation ("none" for students)
    long n_samples = 0;
};

inline EvalReport evaluate_scores(const ScoreSet& s, const ThresholdPolicy& policy,
                                  const std::string& engine = "none") {
    s.require_both_classes("evaluation");
    EvalReport r;
    SweepResult sw = sweep(s);
    r.auc_roc = sw.auc;
    r.eer = sw.eer;
    r.eer_threshold = sw.eer_threshold;
    r.youden = sw.youden;
    HterResult h = hter_at(s, policy);
    r.hter = h.hter;
    r.far = h.far;
    r.frr = h.frr;
    r.operating_threshold = h.threshold;
    auto [ap, bp] = apcer_bpcer(s, h.threshold);
    r.apcer = ap;
    r.bpcer = bp;
    r.acer = acer(ap, bp);
    Confusion c = confusion_at(s, h.threshold);
    r.accuracy = static_cast<double>(c.tp + c.tn) / s.size();
    r.threshold_policy = policy.describe();
    r.engine = engine;
    r.n_samples = static_cast<long>(s.size());
    return r;
}

// Score CSV: clip_id,label,score with 9 significant digits.
inline void write_score_csv(const ScoreSet& s, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw IoError("cannot write score file: " + path);
    std::fprintf(fp, "clip_id,label,score\n");
    for (size_t i = 0; i < s.size(); ++i)
        std::fprintf(fp, "%s,%d,%.9g\n", s.clip_ids[i].c_str(), s.labels[i],
                     s.scores[i]);
    std::fclose(fp);
}

inline ScoreSet read_score_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read score file: " + path);
    ScoreSet s;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, lab, sc;
        if (!std::getline(ss, id, ',') || !std::getline(ss, lab, ',') ||
            !std::getline(ss, sc, ','))
            throw IoError("malformed score line: " + line);
        s.push(std::stod(sc), std::stoi(lab), id);
    }
    return s;
}

inline std::map<std::string, std::string> report_kv(const EvalReport& r) {
    auto f = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    return {
        {"accuracy", f(r.accuracy)},       {"auc_roc", f(r.auc_roc)},
        {"eer", f(r.eer)},                 {"eer_threshold", f(r.eer_threshold)},
        {"hter", f(r.hter)},               {"far", f(r.far)},
        {"frr", f(r.frr)},                 {"operating_threshold", f(r.operating_threshold)},
        {"youden", f(r.youden)},           {"apcer", f(r.apcer)},
        {"bpcer", f(r.bpcer)},             {"acer", f(r.acer)},
        {"threshold_policy", r.threshold_policy},
        {"engine", r.engine},
        {"n_samples", std::to_string(r.n_samples)},
    };
}

inline void write_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    for (const auto& [k, v] : report_kv(r)) out << k << '=' << v << '\n';
}

inline void write_roc_csv(const SweepResult& sw, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw IoError("cannot write roc file: " + path);
    std::fprintf(fp, "threshold,far,frr,tpr\n");
    for (const auto& p : sw.points)
        std::fprintf(fp, "%.9g,%.9g,%.9g,%.9g\n", p.threshold, p.far, p.frr, p.tpr);
    std::fclose(fp);
}

}  // namespace flowpad
