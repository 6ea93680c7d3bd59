#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "flowpad/common.hpp"
#include "flowpad/flow.hpp"
#include "flowpad/image.hpp"
#include "flowpad/ingest.hpp"

namespace flowpad {

// Desk-scale synthetic spoof-video dataset.
//
// Bonafide clips render a textured ellipse ("face") under a smooth non-rigid
// deformation plus small per-frame local jitter; attack clips render the same
// texture under pure rigid translation (half of them) or no motion at all
// (the other half), so "any motion at all" does not separate the classes.
// Attack clips additionally pass through a replay channel — mild contrast
// flattening, a faint screen-door grid, and a darkened display bezel, all
// pinned to texture coordinates so they move with the content — mirroring the
// appearance artifacts real replay attacks carry; without one, an RGB-only
// model has no learnable cue.
// Ground-truth flow for every consecutive pair is solved to
// fixed-point accuracy and stored as .flo, which lets the `exact` engine
// serve it bit-identically.
//
// Photometric bound: warping frame t by the stored flow reproduces frame t+1
// with mean absolute intensity error below 0.02 (on [0,1]) away from the
// zero-padded border; the only error sources are the fixed-point tolerance
// and bilinear interpolation of the discrete frame.
struct SynthConfig {
    int n_subjects = 6;
    int clips_per_subject = 8;
    int frames_per_clip = 8;
    int height = 128;
    int width = 128;
    std::uint64_t seed = 1;
};

namespace synth_detail {

struct Vec2 {
    double x = 0, y = 0;
};

// Per-subject appearance parameters.
struct SubjectStyle {
    std::array<double, 3> skin{}, bg{};
    double stripe_freq = 6, stripe_angle = 0, stripe_amp = 0.15, stripe_phase = 0;
    double rx = 0.33, ry = 0.42;  // ellipse radii, fraction of W/H
    double eye_dx = 0.13, eye_dy = 0.12, eye_sigma = 0.045;
};

inline SubjectStyle draw_style(Rng& rng) {
    SubjectStyle s;
    // faces are skin-toned: a tight warm hue band keeps bonafide chroma
    // statistics consistent across subjects, like real faces
    double hue = urand(rng, 15, 45);
    float rgb[3];
    hsv_to_rgb(hue, urand(rng, 0.25, 0.5), urand(rng, 0.65, 0.9), rgb);
    s.skin = {rgb[0], rgb[1], rgb[2]};
    hsv_to_rgb(std::fmod(hue + urand(rng, 140, 220), 360.0), urand(rng, 0.08, 0.18),
               urand(rng, 0.15, 0.4), rgb);
    s.bg = {rgb[0], rgb[1], rgb[2]};
    s.stripe_freq = urand(rng, 4, 9);
    s.stripe_angle = urand(rng, 0, kPi);
    s.stripe_amp = urand(rng, 0.10, 0.22);
    s.stripe_phase = urand(rng, 0, 2 * kPi);
    s.rx = urand(rng, 0.28, 0.36);
    s.ry = urand(rng, 0.36, 0.45);
    s.eye_dx = urand(rng, 0.10, 0.15);
    s.eye_dy = urand(rng, 0.09, 0.14);
    return s;
}

inline double smoothstep(double e0, double e1, double x) {
    double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

// Analytic texture, evaluated at continuous canvas coordinates.
inline std::array<double, 3> texture(const SubjectStyle& s, double x, double y,
                                     int W, int H) {
    double nx = x / W - 0.5, ny = y / H - 0.5;
    double e = (nx / s.rx) * (nx / s.rx) + (ny / s.ry) * (ny / s.ry);
    double inside = 1.0 - smoothstep(0.92, 1.08, e);
    double stripes =
        1.0 + s.stripe_amp * std::sin(2 * kPi * s.stripe_freq *
                                          (std::cos(s.stripe_angle) * nx +
                                           std::sin(s.stripe_angle) * ny) +
                                      s.stripe_phase);
    auto gauss = [](double dx, double dy, double sigma) {
        return std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    };
    double dark = 1.0;
    dark -= 0.65 * gauss(nx - s.eye_dx, ny + s.eye_dy, s.eye_sigma);
    dark -= 0.65 * gauss(nx + s.eye_dx, ny + s.eye_dy, s.eye_sigma);
    dark -= 0.45 * gauss(nx, ny - 0.18, 0.06) * gauss(0, ny - 0.18, 1.0);
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
        double face = std::clamp(s.skin[c] * stripes * dark, 0.0, 1.0);
        double bgv = s.bg[c] * (0.85 + 0.3 * (x / W)) ;
        out[c] = std::clamp(bgv + inside * (face - bgv), 0.0, 1.0);
    }
    return out;
}

enum class Motion { deform, rigid, still };

// Replay-channel appearance artifact, drawn per attack clip.
struct ReplayArtifact {
    bool active = false;
    double gamma = 1.0;              // contrast toward mid-gray
    double grid_amp = 0, grid_period = 8;  // screen-door grid, px
    double grid_phase_x = 0, grid_phase_y = 0;
    double bezel_frac = 0.5, bezel_dark = 1.0;  // darkened display border
    double cast = 0;  // cool color-temperature cast of the emitting screen
};

inline ReplayArtifact draw_artifact(Rng& rng, int W) {
    ReplayArtifact a;
    a.active = true;
    a.gamma = urand(rng, 0.70, 0.82);
    a.grid_amp = urand(rng, 0.10, 0.16);
    a.grid_period = urand(rng, 8, 14) * W / 128.0;
    a.grid_phase_x = urand(rng, 0, 2 * kPi);
    a.grid_phase_y = urand(rng, 0, 2 * kPi);
    a.bezel_frac = urand(rng, 0.34, 0.40);
    a.bezel_dark = urand(rng, 0.5, 0.65);
    a.cast = urand(rng, 0.16, 0.25);
    return a;
}

inline std::array<double, 3> apply_artifact(const ReplayArtifact& a,
                                            std::array<double, 3> px,
                                            double tx, double ty, int W, int H) {
    if (!a.active) return px;
    double g = 1.0 + a.grid_amp *
                         std::sin(2 * kPi * tx / a.grid_period + a.grid_phase_x) *
                         std::sin(2 * kPi * ty / a.grid_period + a.grid_phase_y);
    double r = std::max(std::fabs(tx / W - 0.5), std::fabs(ty / H - 0.5));
    double bez = 1.0 - (1.0 - a.bezel_dark) * smoothstep(a.bezel_frac - 0.02,
                                                         a.bezel_frac + 0.02, r);
    const double tint[3] = {1.0 - a.cast, 1.0, 1.0 + a.cast};
    for (int c = 0; c < 3; ++c)
        px[c] = std::clamp((0.5 + a.gamma * (px[c] - 0.5)) * g * bez * tint[c],
                           0.0, 1.0);
    return px;
}

// Per-clip motion model. Frames are rendered as frame_t(x) = Tex(x - B_t(x)).
struct MotionModel {
    Motion kind = Motion::still;
    Vec2 drift;                       // rigid: per-frame translation
    // non-rigid: two sinusoidal displacement waves per axis
    std::array<double, 2> amp_x{}, amp_y{};
    std::array<Vec2, 2> freq;         // cycles across the canvas
    std::array<double, 2> phase{}, omega{};
    // small independent per-frame jitter wave
    double jitter_amp = 0;
    Vec2 jitter_freq;
    std::vector<double> jitter_phase;  // one per frame

    Vec2 displacement(double x, double y, int t, int W, int H) const {
        if (kind == Motion::still) return {};
        if (kind == Motion::rigid) return {drift.x * t, drift.y * t};
        Vec2 d;
        for (int k = 0; k < 2; ++k) {
            double arg = 2 * kPi * (freq[k].x * x / W + freq[k].y * y / H) +
                         phase[k] + omega[k] * t;
            d.x += amp_x[k] * std::sin(arg);
            d.y += amp_y[k] * std::cos(arg);
        }
        if (t < static_cast<int>(jitter_phase.size())) {
            double arg = 2 * kPi * (jitter_freq.x * x / W + jitter_freq.y * y / H) +
                         jitter_phase[t];
            d.x += jitter_amp * std::sin(arg);
            d.y += jitter_amp * std::cos(arg);
        }
        return d;
    }
};

inline MotionModel draw_motion(Rng& rng, Motion kind, int n_frames, int W) {
    MotionModel m;
    m.kind = kind;
    if (kind == Motion::rigid) {
        double ang = urand(rng, 0, 2 * kPi);
        double speed = urand(rng, 0.8, 2.0) * W / 128.0;  // px per frame
        m.drift = {speed * std::cos(ang), speed * std::sin(ang)};
    } else if (kind == Motion::deform) {
        // amplitudes and frequencies are bounded so the displacement field
        // stays a contraction (|dB/dx| < 1) and the flow fixed point converges
        for (int k = 0; k < 2; ++k) {
            m.amp_x[k] = urand(rng, 2.5, 4.5) * W / 128.0;
            m.amp_y[k] = urand(rng, 2.5, 4.5) * W / 128.0;
            m.freq[k] = {urand(rng, 0.9, 1.6), urand(rng, 0.9, 1.6)};
            m.phase[k] = urand(rng, 0, 2 * kPi);
            m.omega[k] = urand(rng, 0.5, 1.1);
        }
        m.jitter_amp = urand(rng, 0.4, 0.8) * W / 128.0;
        m.jitter_freq = {urand(rng, 0.8, 1.8), urand(rng, 0.8, 1.8)};
        m.jitter_phase.resize(n_frames);
        for (auto& p : m.jitter_phase) p = urand(rng, 0, 2 * kPi);
    }
    return m;
}

inline Image render_frame(const SubjectStyle& s, const MotionModel& m,
                          const ReplayArtifact& art, int t, int H, int W) {
    Image img(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            Vec2 d = m.displacement(x, y, t, W, H);
            auto px = texture(s, x - d.x, y - d.y, W, H);
            px = apply_artifact(art, px, x - d.x, y - d.y, W, H);
            img.at(y, x, 0) = static_cast<float>(px[0]);
            img.at(y, x, 1) = static_cast<float>(px[1]);
            img.at(y, x, 2) = static_cast<float>(px[2]);
        }
    return img;
}

// Exact flow for pair (t, t+1): solves u = B_{t+1}(x + u) - B_t(x) by
// fixed-point iteration (the fields are smooth contractions).
inline FlowField exact_flow(const MotionModel& m, int t, int H, int W) {
    FlowField f(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            Vec2 b0 = m.displacement(x, y, t, W, H);
            Vec2 u{0, 0};
            for (int it = 0; it < 8; ++it) {
                Vec2 b1 = m.displacement(x + u.x, y + u.y, t + 1, W, H);
                u = {b1.x - b0.x, b1.y - b0.y};
            }
            f.U(y, x) = static_cast<float>(u.x);
            f.V(y, x) = static_cast<float>(u.y);
        }
    return f;
}

}  // namespace synth_detail

inline DatasetManifest generate_synthetic_dataset(const SynthConfig& cfg,
                                                  const std::string& out_dir) {
    using namespace synth_detail;
    if (cfg.n_subjects < 3)
        throw ContractError("need at least 3 subjects to build 3 disjoint splits");
    if (cfg.frames_per_clip < 4)
        throw ContractError("frames_per_clip must be >= 4");
    if (cfg.height < 64 || cfg.width < 64)
        throw ContractError("resolution must be at least 64x64");
    if (cfg.clips_per_subject < 2)
        throw ContractError("clips_per_subject must be >= 2 (both classes needed)");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("cannot create output directory: " + out_dir);

    // subject-disjoint splits: ~20% dev, ~20% test, at least one subject each
    int n_dev = std::max(1, cfg.n_subjects / 5);
    int n_test = std::max(1, cfg.n_subjects / 5);
    DatasetManifest m;
    m.root = out_dir;
    m.source = "synthetic";

    for (int si = 0; si < cfg.n_subjects; ++si) {
        // one rng stream per subject keeps content independent of split sizes
        Rng srng = make_rng(cfg.seed, 1000 + si);
        SubjectStyle style = draw_style(srng);
        std::string subject = "s" + std::string(si < 9 ? "0" : "") +
                              std::to_string(si + 1);
        Split split = si < cfg.n_subjects - n_dev - n_test ? Split::train
                      : si < cfg.n_subjects - n_test       ? Split::dev
                                                           : Split::test;
        for (int ci = 0; ci < cfg.clips_per_subject; ++ci) {
            bool bonafide = ci < (cfg.clips_per_subject + 1) / 2;
            Motion kind = bonafide              ? Motion::deform
                          : (ci % 2 == 0)      ? Motion::rigid
                                                : Motion::still;
            MotionModel motion = draw_motion(srng, kind, cfg.frames_per_clip,
                                             cfg.width);
            ReplayArtifact art =
                bonafide ? ReplayArtifact{} : draw_artifact(srng, cfg.width);
            ClipRecord clip;
            clip.clip_id = subject + "_c" + std::string(ci < 9 ? "0" : "") +
                           std::to_string(ci + 1);
            clip.label = bonafide ? Label::bonafide : Label::attack;
            clip.subject_id = subject;
            clip.split = split;
            fs::path dir = fs::path(out_dir) / to_string(split) /
                           to_string(clip.label) / subject / clip.clip_id;
            fs::create_directories(dir);
            char buf[32];
            for (int t = 0; t < cfg.frames_per_clip; ++t) {
                Image frame =
                    render_frame(style, motion, art, t, cfg.height, cfg.width);
                std::snprintf(buf, sizeof buf, "frame_%04d.png", t);
                std::string fp = (dir / buf).string();
                save_png(frame, fp);
                clip.frame_paths.push_back(fp);
                if (t + 1 < cfg.frames_per_clip) {
                    FlowField gt = exact_flow(motion, t, cfg.height, cfg.width);
                    std::snprintf(buf, sizeof buf, "flow_%04d.flo", t);
                    std::string op = (dir / buf).string();
                    write_flo(gt, op);
                    clip.flow_paths.push_back(op);
                }
            }
            m.clips.push_back(std::move(clip));
        }
    }
    std::sort(m.clips.begin(), m.clips.end(),
              [](const ClipRecord& a, const ClipRecord& b) {
                  return a.clip_id < b.clip_id;
              });
    detail::validate_manifest(m);
    write_manifest(m, (fs::path(out_dir) / "manifest.txt").string());
    return m;
}

}  // namespace flowpad
