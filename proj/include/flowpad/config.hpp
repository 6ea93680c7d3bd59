#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "flowpad/common.hpp"
#include "flowpad/preprocess.hpp"

namespace flowpad {

using json = nlohmann::json;

// All defaults are the published training settings: Adam lr 1e-4, batch 16,
// up to 100 epochs, patience 20, eval batch 256, T=3, alpha=0.7, delta_t=1,
// rho=224.
inline json default_config() {
    return json{
        {"dataset", {{"manifest", ""}, {"delta_t", 1}}},
        {"flow",
         {{"engine", "exact"},
          {"normalization", "per-image-max"},
          {"cap", 1.0},
          {"pipeline", "raw-flow"}}},
        {"preprocess",
         {{"rho", 224},
          {"rot_range_deg", 10.0},
          {"scale_min", 0.9},
          {"scale_max", 1.1},
          {"brightness_jitter", 0.15},
          {"mean", {0.485, 0.456, 0.406}},
          {"std", {0.229, 0.224, 0.225}}}},
        {"model",
         {{"encoder", "tiny"},
          {"feature_dim", 128},
          {"width", 16},
          {"head_hidden", 256},
          {"dropout", 0.2}}},
        {"train",
         {{"learning_rate", 1e-4},
          {"batch_size_train", 16},
          {"batch_size_eval", 256},
          {"max_epochs", 100},
          {"patience", 20},
          {"pairs_per_clip", 4}}},
        {"kd", {{"temperature", 3.0}, {"alpha", 0.7}}},
        {"seeds", {1, 2, 3}},
    };
}

namespace cfg_detail {

inline void reject_unknown(const json& user, const json& schema,
                           const std::string& prefix) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!schema.contains(it.key()))
            throw ConfigError("unknown config key: " + prefix + it.key());
        if (it.value().is_object())
            reject_unknown(it.value(), schema.at(it.key()), prefix + it.key() + ".");
    }
}

inline void merge(json& base, const json& user) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) &&
            base[it.key()].is_object())
            merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

template <typename T>
void require(bool ok, const std::string& field, const T& what) {
    if (!ok) {
        std::ostringstream ss;
        ss << "config field '" << field << "': " << what;
        throw ConfigError(ss.str());
    }
}

}  // namespace cfg_detail

// Merge user config over defaults, reject unknown keys, check invariants.
inline json resolve_config(const json& user) {
    json cfg = default_config();
    cfg_detail::reject_unknown(user, cfg, "");
    cfg_detail::merge(cfg, user);
    using cfg_detail::require;
    require(cfg["dataset"]["delta_t"].get<int>() >= 1, "dataset.delta_t", "must be >= 1");
    double T = cfg["kd"]["temperature"].get<double>();
    double a = cfg["kd"]["alpha"].get<double>();
    require(T > 0, "kd.temperature", "must be > 0");
    require(a >= 0 && a <= 1, "kd.alpha", "must be in [0,1]");
    int me = cfg["train"]["max_epochs"].get<int>();
    int pat = cfg["train"]["patience"].get<int>();
    require(cfg["train"]["learning_rate"].get<double>() > 0, "train.learning_rate", "must be > 0");
    require(cfg["train"]["batch_size_train"].get<int>() > 0, "train.batch_size_train", "must be > 0");
    require(cfg["train"]["batch_size_eval"].get<int>() > 0, "train.batch_size_eval", "must be > 0");
    require(me > 0, "train.max_epochs", "must be > 0");
    require(pat > 0 && pat <= me, "train.patience", "must be in [1, max_epochs]");
    require(cfg["train"]["pairs_per_clip"].get<int>() > 0, "train.pairs_per_clip", "must be > 0");
    require(cfg["preprocess"]["rho"].get<int>() >= 32, "preprocess.rho", "must be >= 32");
    double smin = cfg["preprocess"]["scale_min"].get<double>();
    double smax = cfg["preprocess"]["scale_max"].get<double>();
    require(smin > 0 && smin <= smax, "preprocess.scale_min", "need 0 < min <= max");
    double bj = cfg["preprocess"]["brightness_jitter"].get<double>();
    require(bj >= 0 && bj < 1, "preprocess.brightness_jitter", "must be in [0, 1)");
    std::string pipe = cfg["flow"]["pipeline"].get<std::string>();
    require(pipe == "raw-flow" || pipe == "encoded", "flow.pipeline",
            "must be 'raw-flow' or 'encoded'");
    std::string nrm = cfg["flow"]["normalization"].get<std::string>();
    require(nrm == "per-image-max" || nrm == "fixed-cap", "flow.normalization",
            "must be 'per-image-max' or 'fixed-cap'");
    if (nrm == "fixed-cap")
        require(cfg["flow"]["cap"].get<double>() > 0, "flow.cap", "must be > 0");
    require(cfg["seeds"].is_array() && !cfg["seeds"].empty(), "seeds",
            "must be a non-empty list");
    return cfg;
}

inline json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path);
    json user;
    try {
        in >> user;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return resolve_config(user);
}

// Apply a "section.key=value" override; the value is parsed as JSON when
// possible, else taken as a string.
inline void apply_override(json& user, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value: " + kv);
    std::string keypath = kv.substr(0, eq), value = kv.substr(eq + 1);
    json v;
    try {
        v = json::parse(value);
    } catch (...) {
        v = value;
    }
    json* cur = &user;
    size_t pos = 0;
    while (true) {
        size_t dot = keypath.find('.', pos);
        std::string key = keypath.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            (*cur)[key] = v;
            break;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

// FNV-1a over the canonical dump. nlohmann::json keeps object keys sorted,
// so semantically identical configs hash identically.
inline std::string config_hash(const json& cfg) {
    std::string s = cfg.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Typed views over the resolved config.

inline SyncAugConfig sync_aug_config(const json& cfg) {
    SyncAugConfig s;
    s.rho = cfg["preprocess"]["rho"].get<int>();
    s.rot_range_deg = cfg["preprocess"]["rot_range_deg"].get<double>();
    s.scale_min = cfg["preprocess"]["scale_min"].get<double>();
    s.scale_max = cfg["preprocess"]["scale_max"].get<double>();
    s.pipeline = cfg["flow"]["pipeline"].get<std::string>() == "encoded"
                     ? FlowPipeline::encoded
                     : FlowPipeline::raw_flow;
    s.flow_norm = cfg["flow"]["normalization"].get<std::string>() == "fixed-cap"
                      ? Normalization::FixedCap(cfg["flow"]["cap"].get<double>())
                      : Normalization::PerImageMax();
    return s;
}

inline NormStats norm_stats(const json& cfg) {
    NormStats n;
    for (int c = 0; c < 3; ++c) {
        n.mean[c] = cfg["preprocess"]["mean"][c].get<float>();
        n.stdev[c] = cfg["preprocess"]["std"][c].get<float>();
    }
    return n;
}

}  // namespace flowpad
