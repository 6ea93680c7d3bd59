#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "flowpad/common.hpp"
#include "flowpad/image.hpp"

namespace flowpad {

// Dense displacement field in pixel units. u positive rightward,
// v positive downward (image coordinates).
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> u, v;

    FlowField() = default;
    FlowField(int h, int w)
        : height(h), width(w),
          u(static_cast<size_t>(h) * w, 0.f),
          v(static_cast<size_t>(h) * w, 0.f) {}

    size_t idx(int y, int x) const { return static_cast<size_t>(y) * width + x; }
    float& U(int y, int x) { return u[idx(y, x)]; }
    float& V(int y, int x) { return v[idx(y, x)]; }
    float U(int y, int x) const { return u[idx(y, x)]; }
    float V(int y, int x) const { return v[idx(y, x)]; }

    bool finite() const {
        for (float x : u) if (!std::isfinite(x)) return false;
        for (float x : v) if (!std::isfinite(x)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// Middlebury .flo interchange format: float32 magic 202021.25, int32 width,
// int32 height, then row-major interleaved float32 (u,v). Little-endian,
// bit-exact.
// ---------------------------------------------------------------------------

constexpr float kFloMagic = 202021.25f;

inline void write_flo(const FlowField& f, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    std::int32_t w = f.width, h = f.height;
    std::fwrite(&kFloMagic, 4, 1, fp);
    std::fwrite(&w, 4, 1, fp);
    std::fwrite(&h, 4, 1, fp);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::fwrite(&f.u[f.idx(y, x)], 4, 1, fp);
            std::fwrite(&f.v[f.idx(y, x)], 4, 1, fp);
        }
    std::fclose(fp);
}

inline FlowField read_flo(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open flow file: " + path);
    float magic = 0;
    std::int32_t w = 0, h = 0;
    if (std::fread(&magic, 4, 1, fp) != 1 || magic != kFloMagic) {
        std::fclose(fp);
        throw IoError("bad .flo magic in " + path);
    }
    if (std::fread(&w, 4, 1, fp) != 1 || std::fread(&h, 4, 1, fp) != 1 ||
        w <= 0 || h <= 0) {
        std::fclose(fp);
        throw IoError("bad .flo header in " + path);
    }
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (std::fread(&f.u[f.idx(y, x)], 4, 1, fp) != 1 ||
                std::fread(&f.v[f.idx(y, x)], 4, 1, fp) != 1) {
                std::fclose(fp);
                throw IoError("truncated .flo file " + path);
            }
        }
    std::fclose(fp);
    return f;
}

// ---------------------------------------------------------------------------
// Flow resampling
// ---------------------------------------------------------------------------

inline float bilinear_scalar(const std::vector<float>& buf, int h, int w,
                             float fy, float fx) {
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    float tx = fx - x0, ty = fy - y0;
    int x1 = std::clamp(x0 + 1, 0, w - 1);
    int y1 = std::clamp(y0 + 1, 0, h - 1);
    x0 = std::clamp(x0, 0, w - 1);
    y0 = std::clamp(y0, 0, h - 1);
    auto at = [&](int y, int x) { return buf[static_cast<size_t>(y) * w + x]; };
    float a = at(y0, x0), b = at(y0, x1), d = at(y1, x0), e = at(y1, x1);
    float top = a + tx * (b - a);
    float bot = d + tx * (e - d);
    return top + ty * (bot - top);
}

// Spatial resampling only; no magnitude correction.
inline FlowField resample_flow(const FlowField& f, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ContractError("flow resize target must be >= 1x1");
    if (out_h == f.height && out_w == f.width) return f;
    FlowField out(out_h, out_w);
    float sy = static_cast<float>(f.height) / out_h;
    float sx = static_cast<float>(f.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            out.U(y, x) = bilinear_scalar(f.u, f.height, f.width, fy, fx);
            out.V(y, x) = bilinear_scalar(f.v, f.height, f.width, fy, fx);
        }
    }
    return out;
}

// Resize with magnitude correction: u *= W'/W, v *= H'/H.
inline FlowField resize_flow(const FlowField& f, int out_h, int out_w) {
    FlowField out = resample_flow(f, out_h, out_w);
    float su = static_cast<float>(out_w) / f.width;
    float sv = static_cast<float>(out_h) / f.height;
    if (su != 1.f || sv != 1.f) {
        for (auto& x : out.u) x *= su;
        for (auto& x : out.v) x *= sv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Engine resolution-adaptation protocol
// ---------------------------------------------------------------------------

struct AdaptRecord {
    int orig_h = 0, orig_w = 0;
    int engine_h = 0, engine_w = 0;
    bool transposed = false;
    bool range_scaled = false;  // [0,1] -> [0,255]
};

enum class PixelRange { unit, byte };

inline int round_up_32(int x) { return ((x + 31) / 32) * 32; }

// Scale to 0-255, transpose so width >= height, resize to multiples of 32.
inline std::tuple<Image, Image, AdaptRecord> adapt_for_engine(
    const Image& a, const Image& b, PixelRange range = PixelRange::unit) {
    if (!a.same_size(b)) throw ContractError("adapt_for_engine: resolution mismatch");
    AdaptRecord rec;
    rec.orig_h = a.height;
    rec.orig_w = a.width;
    Image pa = a, pb = b;
    if (range == PixelRange::unit) {
        rec.range_scaled = true;
        for (auto& v : pa.data) v *= 255.f;
        for (auto& v : pb.data) v *= 255.f;
    }
    if (pa.width < pa.height) {
        rec.transposed = true;
        pa = transpose(pa);
        pb = transpose(pb);
    }
    rec.engine_h = round_up_32(pa.height);
    rec.engine_w = round_up_32(pa.width);
    pa = resize_bilinear(pa, rec.engine_h, rec.engine_w);
    pb = resize_bilinear(pb, rec.engine_h, rec.engine_w);
    return {std::move(pa), std::move(pb), rec};
}

// Invert the adaptation: resize back with magnitude correction, then undo
// the transposition (swapping u and v along with the axes).
inline FlowField restore_flow(const FlowField& f, const AdaptRecord& rec) {
    if (f.height != rec.engine_h || f.width != rec.engine_w)
        throw ContractError("restore_flow: flow does not match AdaptRecord engine size");
    int mid_h = rec.transposed ? rec.orig_w : rec.orig_h;
    int mid_w = rec.transposed ? rec.orig_h : rec.orig_w;
    FlowField out = resize_flow(f, mid_h, mid_w);
    if (rec.transposed) {
        FlowField t(rec.orig_h, rec.orig_w);
        for (int y = 0; y < mid_h; ++y)
            for (int x = 0; x < mid_w; ++x) {
                t.U(x, y) = out.V(y, x);
                t.V(x, y) = out.U(y, x);
            }
        out = std::move(t);
    }
    if (!out.finite()) throw NumericError("restore_flow produced non-finite values");
    return out;
}

// ---------------------------------------------------------------------------
// Colorwheel encoding: hue = direction, saturation = magnitude / M, value = 1.
// Zero flow maps to white.
// ---------------------------------------------------------------------------

struct Normalization {
    enum Mode { per_image_max, fixed_cap } mode = per_image_max;
    double cap = 1.0;
    static Normalization PerImageMax() { return {per_image_max, 1.0}; }
    static Normalization FixedCap(double c) { return {fixed_cap, c}; }
};

inline double flow_magnitude(double u, double v) {
    return std::sqrt(u * u + v * v);
}

// Hue (degrees, [0,360)) and saturation for a single vector given the
// normalizer M.
inline std::pair<double, double> flow_to_hsv(double u, double v, double m_norm) {
    double mag = flow_magnitude(u, v);
    double sat = std::min(mag / m_norm, 1.0);
    double hue = rad2deg(std::atan2(v, u));
    if (hue < 0) hue += 360.0;
    return {hue, sat};
}

inline Image colorwheel_encode(const FlowField& f,
                               Normalization norm = Normalization::PerImageMax()) {
    if (!f.finite()) throw NumericError("colorwheel_encode: non-finite flow");
    double m = norm.cap;
    if (norm.mode == Normalization::per_image_max) {
        m = 0.0;
        for (size_t i = 0; i < f.u.size(); ++i)
            m = std::max(m, flow_magnitude(f.u[i], f.v[i]));
        if (m == 0.0) m = 1.0;  // all-zero flow -> all-white image
    }
    if (m <= 0.0) throw ContractError("colorwheel cap must be > 0");
    Image out(f.height, f.width);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            auto [hue, sat] = flow_to_hsv(f.U(y, x), f.V(y, x), m);
            float rgb[3];
            hsv_to_rgb(hue, sat, 1.0, rgb);
            out.at(y, x, 0) = rgb[0];
            out.at(y, x, 1) = rgb[1];
            out.at(y, x, 2) = rgb[2];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Engines
// ---------------------------------------------------------------------------

// Side-channel hint for engines that serve precomputed flow.
struct FlowHint {
    std::string flo_path;
};

class FlowEngine {
  public:
    virtual ~FlowEngine() = default;
    virtual std::string name() const = 0;
    virtual bool deterministic() const { return true; }
    // Result is at the resolution of `reference`.
    virtual FlowField estimate(const Image& reference, const Image& adjacent,
                               const FlowHint* hint) = 0;
};

inline FlowField estimate_flow(FlowEngine& engine, const Image& reference,
                               const Image& adjacent,
                               const FlowHint* hint = nullptr) {
    if (!reference.same_size(adjacent))
        throw ContractError("estimate_flow: resolution mismatch");
    FlowField f = engine.estimate(reference, adjacent, hint);
    if (f.height != reference.height || f.width != reference.width)
        throw NumericError("engine '" + engine.name() +
                           "' returned flow at wrong resolution");
    if (!f.finite())
        throw NumericError("engine '" + engine.name() + "' produced NaN/Inf flow");
    return f;
}

// Serves the ground-truth .flo stored by the synthetic generator.
class ExactFlowEngine : public FlowEngine {
  public:
    std::string name() const override { return "exact"; }
    FlowField estimate(const Image& reference, const Image&,
                       const FlowHint* hint) override {
        if (!hint || hint->flo_path.empty())
            throw EngineUnavailable(
                "exact flow engine requires stored ground-truth flow "
                "(no .flo hint for this frame pair)");
        FlowField f = read_flo(hint->flo_path);
        if (f.height != reference.height || f.width != reference.width)
            throw ContractError("stored flow resolution mismatch: " + hint->flo_path);
        return f;
    }
};

// Coarse-to-fine Horn-Schunck. Dense, deterministic, no learned weights.
class ClassicalFlowEngine : public FlowEngine {
  public:
    struct Params {
        double alpha = 12.0;   // smoothness weight
        int iterations = 80;   // Jacobi iterations per level
        int min_size = 24;     // stop pyramid when min(h,w)/2 < this
        int max_levels = 5;
    };

    ClassicalFlowEngine() : p_(Params{}) {}
    explicit ClassicalFlowEngine(Params p) : p_(p) {}
    std::string name() const override { return "classical"; }

    FlowField estimate(const Image& reference, const Image& adjacent,
                       const FlowHint*) override {
        Gray a = to_gray(reference), b = to_gray(adjacent);
        std::vector<Gray> pa{a}, pb{b};
        while (static_cast<int>(pa.size()) < p_.max_levels &&
               std::min(pa.back().h, pa.back().w) / 2 >= p_.min_size) {
            pa.push_back(downsample(pa.back()));
            pb.push_back(downsample(pb.back()));
        }
        FlowField flow(pa.back().h, pa.back().w);
        for (int lvl = static_cast<int>(pa.size()) - 1; lvl >= 0; --lvl) {
            if (flow.height != pa[lvl].h || flow.width != pa[lvl].w)
                flow = resize_flow(flow, pa[lvl].h, pa[lvl].w);
            horn_schunck(pa[lvl], pb[lvl], flow);
        }
        return flow;
    }

  private:
    struct Gray {
        int h = 0, w = 0;
        std::vector<float> v;
        float at(int y, int x) const {
            return v[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w +
                     std::clamp(x, 0, w - 1)];
        }
    };

    static Gray to_gray(const Image& img) {
        Gray g{img.height, img.width, {}};
        g.v.resize(static_cast<size_t>(img.height) * img.width);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                g.v[static_cast<size_t>(y) * img.width + x] =
                    0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) +
                    0.114f * img.at(y, x, 2);
        // alpha is tuned for 0-255 intensities; lift [0,1] inputs so the data
        // term is not drowned by the smoothness prior
        float mx = 0.f;
        for (float v : g.v) mx = std::max(mx, v);
        if (mx <= 1.5f)
            for (auto& v : g.v) v *= 255.f;
        return g;
    }

    static Gray downsample(const Gray& g) {
        Gray out{g.h / 2, g.w / 2, {}};
        out.v.resize(static_cast<size_t>(out.h) * out.w);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.v[static_cast<size_t>(y) * out.w + x] =
                    0.25f * (g.at(2 * y, 2 * x) + g.at(2 * y, 2 * x + 1) +
                             g.at(2 * y + 1, 2 * x) + g.at(2 * y + 1, 2 * x + 1));
        return out;
    }

    static float sample(const Gray& g, float fy, float fx) {
        int x0 = static_cast<int>(std::floor(fx));
        int y0 = static_cast<int>(std::floor(fy));
        float tx = fx - x0, ty = fy - y0;
        float a = g.at(y0, x0), b = g.at(y0, x0 + 1);
        float c = g.at(y0 + 1, x0), d = g.at(y0 + 1, x0 + 1);
        float top = a + tx * (b - a);
        float bot = c + tx * (d - c);
        return top + ty * (bot - top);
    }

    void horn_schunck(const Gray& a, const Gray& b, FlowField& flow) const {
        const int h = a.h, w = a.w;
        // warp b towards a by the current flow, then linearize
        std::vector<float> bw(static_cast<size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                bw[static_cast<size_t>(y) * w + x] =
                    sample(b, y + flow.V(y, x), x + flow.U(y, x));
        std::vector<float> ix(bw.size()), iy(bw.size()), it(bw.size());
        auto gat = [&](const std::vector<float>& v, int y, int x) {
            return v[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w +
                     std::clamp(x, 0, w - 1)];
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                size_t i = static_cast<size_t>(y) * w + x;
                ix[i] = 0.5f * (gat(bw, y, x + 1) - gat(bw, y, x - 1) +
                                a.at(y, x + 1) - a.at(y, x - 1)) * 0.5f;
                iy[i] = 0.5f * (gat(bw, y + 1, x) - gat(bw, y - 1, x) +
                                a.at(y + 1, x) - a.at(y - 1, x)) * 0.5f;
                it[i] = bw[i] - a.at(y, x);
            }
        FlowField du(h, w);  // increment on top of the warp
        const float a2 = static_cast<float>(p_.alpha * p_.alpha);
        for (int iter = 0; iter < p_.iterations; ++iter) {
            FlowField next(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    size_t i = static_cast<size_t>(y) * w + x;
                    auto avg = [&](const FlowField& f, bool uc) {
                        auto g = [&](int yy, int xx) {
                            yy = std::clamp(yy, 0, h - 1);
                            xx = std::clamp(xx, 0, w - 1);
                            return uc ? f.U(yy, xx) : f.V(yy, xx);
                        };
                        return 0.25f * (g(y - 1, x) + g(y + 1, x) + g(y, x - 1) +
                                        g(y, x + 1));
                    };
                    float ub = avg(du, true), vb = avg(du, false);
                    float num = ix[i] * ub + iy[i] * vb + it[i];
                    float den = a2 + ix[i] * ix[i] + iy[i] * iy[i];
                    next.U(y, x) = ub - ix[i] * num / den;
                    next.V(y, x) = vb - iy[i] * num / den;
                }
            du = std::move(next);
        }
        for (size_t i = 0; i < flow.u.size(); ++i) {
            flow.u[i] += du.u[i];
            flow.v[i] += du.v[i];
        }
    }

    Params p_;
};

// Adapter for an out-of-repo pretrained flow network; optional at build time.
// Without FLOWPAD_WITH_EXTERNAL_FLOW it reports engine-unavailable so callers
// can fall back per config.
class ExternalFlowEngine : public FlowEngine {
  public:
    explicit ExternalFlowEngine(std::string spec) : spec_(std::move(spec)) {}
    std::string name() const override { return "external:" + spec_; }
    FlowField estimate(const Image&, const Image&, const FlowHint*) override {
#ifdef FLOWPAD_WITH_EXTERNAL_FLOW
        throw EngineUnavailable("external flow engine '" + spec_ +
                                "' has no runner configured");
#else
        throw EngineUnavailable(
            "external flow engine support was not built "
            "(FLOWPAD_WITH_EXTERNAL_FLOW is off); requested: " + spec_);
#endif
    }

  private:
    std::string spec_;
};

// Engine selection string: exact | classical | external:<spec>
inline std::unique_ptr<FlowEngine> make_flow_engine(const std::string& spec) {
    if (spec == "exact") return std::make_unique<ExactFlowEngine>();
    if (spec == "classical") return std::make_unique<ClassicalFlowEngine>();
    if (spec.rfind("external:", 0) == 0)
        return std::make_unique<ExternalFlowEngine>(spec.substr(9));
    if (spec == "none") return nullptr;
    throw ConfigError("unknown flow engine spec: " + spec);
}

}  // namespace flowpad
