#pragma once

#include <array>
#include <cmath>
#include <string>

#include "flowpad/common.hpp"
#include "flowpad/flow.hpp"
#include "flowpad/image.hpp"
#include "flowpad/ingest.hpp"

namespace flowpad {

// Shared geometric parameters, applied to BOTH modalities of one sample.
struct SyncAugParams {
    double rotation_deg = 0.0;
    double scale = 1.0;
};

struct CropRecord {
    int y0 = 0, x0 = 0, side = 0;
};

// Two pipeline orders for the flow modality:
//   raw_flow  (PIPE-A): geometric ops act on the raw field with vector
//                       correction, colorwheel encoding comes last.
//   encoded   (PIPE-B): encode first, then transform the flow image as
//                       plain pixels.
enum class FlowPipeline { raw_flow, encoded };

struct SyncAugConfig {
    int rho = 224;
    double rot_range_deg = 10.0;   // rotation uniform in +-range
    double scale_min = 0.9, scale_max = 1.1;
    FlowPipeline pipeline = FlowPipeline::raw_flow;
    Normalization flow_norm = Normalization::PerImageMax();
};

// Adaptive center crop to the largest square region.
inline std::pair<Image, CropRecord> center_square_crop(const Image& img) {
    int side = std::min(img.height, img.width);
    CropRecord rec{(img.height - side) / 2, (img.width - side) / 2, side};
    return {crop(img, rec.y0, rec.x0, side, side), rec};
}

// Cropping does not rescale displacements; vectors pass through unchanged.
inline std::pair<FlowField, CropRecord> center_square_crop(const FlowField& f) {
    int side = std::min(f.height, f.width);
    CropRecord rec{(f.height - side) / 2, (f.width - side) / 2, side};
    FlowField out(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            out.U(y, x) = f.U(rec.y0 + y, rec.x0 + x);
            out.V(y, x) = f.V(rec.y0 + y, rec.x0 + x);
        }
    return {out, rec};
}

inline Image resize_with_flow_correction(const Image& img, int h, int w) {
    return resize_bilinear(img, h, w);
}
inline FlowField resize_with_flow_correction(const FlowField& f, int h, int w) {
    return resize_flow(f, h, w);
}

// Rotate/scale a flow field about its center: the sampling grid moves like
// an image, and each sampled vector is rotated by theta and multiplied by s.
inline FlowField warp_rotate_scale(const FlowField& f, double theta_deg,
                                   double scale) {
    FlowField out(f.height, f.width);
    double th = deg2rad(theta_deg);
    double ct = std::cos(th), st = std::sin(th);
    double cy = (f.height - 1) / 2.0, cx = (f.width - 1) / 2.0;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double dx = x - cx, dy = y - cy;
            double sx = (ct * dx + st * dy) / scale + cx;
            double sy = (-st * dx + ct * dy) / scale + cy;
            if (sx < -0.5 || sx > f.width - 0.5 || sy < -0.5 || sy > f.height - 0.5)
                continue;  // zero flow outside the source
            float u = bilinear_scalar(f.u, f.height, f.width,
                                      static_cast<float>(sy), static_cast<float>(sx));
            float v = bilinear_scalar(f.v, f.height, f.width,
                                      static_cast<float>(sy), static_cast<float>(sx));
            // forward rotation in image coordinates (y down)
            out.U(y, x) = static_cast<float>(scale * (ct * u - st * v));
            out.V(y, x) = static_cast<float>(scale * (st * u + ct * v));
        }
    return out;
}

inline SyncAugParams sample_aug_params(Rng& rng, const SyncAugConfig& cfg) {
    SyncAugParams p;
    p.rotation_deg = urand(rng, -cfg.rot_range_deg, cfg.rot_range_deg);
    p.scale = urand(rng, cfg.scale_min, cfg.scale_max);
    return p;
}

inline Image apply_geometry(const Image& img, const SyncAugParams& p, int rho) {
    Image out = img;
    if (p.rotation_deg != 0.0 || p.scale != 1.0)
        out = warp_rotate_scale(out, p.rotation_deg, p.scale);
    out = center_square_crop(out).first;
    return resize_bilinear(out, rho, rho);
}

struct AugmentedPair {
    Image rgb;       // rho x rho, still in [0,1]
    Image flow_img;  // rho x rho, in [0,1]
    SyncAugParams params;
};

// SyncAug over an (rgb, encoded-flow-image) pair; both modalities go through
// the identical image pipeline. This is the PIPE-B path and the parameter
// sharing proof hook.
inline AugmentedPair sync_augment_images(const Image& rgb, const Image& flow_img,
                                         const SyncAugParams& p,
                                         const SyncAugConfig& cfg) {
    if (!rgb.same_size(flow_img))
        throw ContractError("sync_augment: modality resolution mismatch");
    return {apply_geometry(rgb, p, cfg.rho), apply_geometry(flow_img, p, cfg.rho), p};
}

inline AugmentedPair sync_augment(const Image& rgb, const FlowField& flow,
                                  SampleMode mode, Rng& rng,
                                  const SyncAugConfig& cfg) {
    if (rgb.height != flow.height || rgb.width != flow.width)
        throw ContractError("sync_augment: rgb/flow resolution mismatch");
    SyncAugParams p;  // eval: deterministic crop + resize only
    if (mode == SampleMode::train) p = sample_aug_params(rng, cfg);
    if (cfg.pipeline == FlowPipeline::encoded)
        return sync_augment_images(rgb, colorwheel_encode(flow, cfg.flow_norm), p, cfg);
    FlowField f = flow;
    if (p.rotation_deg != 0.0 || p.scale != 1.0)
        f = warp_rotate_scale(f, p.rotation_deg, p.scale);
    f = center_square_crop(f).first;
    f = resize_flow(f, cfg.rho, cfg.rho);
    return {apply_geometry(rgb, p, cfg.rho), colorwheel_encode(f, cfg.flow_norm), p};
}

// ---------------------------------------------------------------------------
// Channel normalization
// ---------------------------------------------------------------------------

struct NormStats {
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stdev{0.229f, 0.224f, 0.225f};
    bool operator==(const NormStats&) const = default;
};

inline Image normalize_rgb(const Image& img, const NormStats& s) {
    Image out = img;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = (img.at(y, x, c) - s.mean[c]) / s.stdev[c];
    return out;
}

inline Image denormalize_rgb(const Image& img, const NormStats& s) {
    Image out = img;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(y, x, c) * s.stdev[c] + s.mean[c];
    return out;
}

// Aligned model inputs for one sample.
struct SamplePair {
    Image rgb;       // normalized, 3 x rho x rho
    Image flow_img;  // [0,1], 3 x rho x rho
    Label label = Label::attack;
    std::string clip_id;
};

}  // namespace flowpad
