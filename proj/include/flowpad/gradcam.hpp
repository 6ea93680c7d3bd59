#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flowpad/image.hpp"
#include "flowpad/models.hpp"

namespace flowpad {

// Class-activation map for the bonafide logit: channel weights are the
// spatial means of the logit gradient at the selected conv feature map,
// the weighted sum is rectified, normalized to [0,1], and bilinearly
// upsampled to the input resolution.
struct GradCamResult {
    std::vector<float> heatmap;  // rho x rho in [0,1]
    int height = 0, width = 0;
};

namespace gradcam_detail {

inline int resolve_layer(const nn::Sequential& net, const std::string& selector,
                         int default_idx) {
    if (selector.empty() || selector == "default") {
        if (default_idx < 0) throw ContractError("encoder has no conv layer");
        return default_idx;
    }
    std::string available;
    for (size_t i = 0; i < net.size(); ++i) {
        if (net.layer(i).name() == selector) return static_cast<int>(i);
        available += (available.empty() ? "" : ", ") + net.layer(i).name();
    }
    throw ContractError("layer '" + selector + "' not found; available: " + available);
}

inline GradCamResult cam_from(const nn::Tensor& act, const nn::Tensor& grad,
                              int out_h, int out_w) {
    // act/grad: (1, C, h, w)
    std::vector<double> weights(act.c, 0.0);
    const int hw = act.h * act.w;
    for (int c = 0; c < act.c; ++c) {
        double s = 0;
        for (int j = 0; j < hw; ++j) s += grad.v[static_cast<size_t>(c) * hw + j];
        weights[c] = s / hw;
    }
    std::vector<float> cam(hw, 0.f);
    for (int c = 0; c < act.c; ++c)
        for (int j = 0; j < hw; ++j)
            cam[j] += static_cast<float>(weights[c]) * act.v[static_cast<size_t>(c) * hw + j];
    float mx = 0.f;
    for (auto& v : cam) {
        v = std::max(v, 0.f);  // rectify
        mx = std::max(mx, v);
    }
    if (mx > 0)
        for (auto& v : cam) v /= mx;
    // bilinear upsample to input resolution
    GradCamResult r;
    r.height = out_h;
    r.width = out_w;
    r.heatmap.resize(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * act.h / out_h - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * act.w / out_w - 0.5f;
            r.heatmap[static_cast<size_t>(y) * out_w + x] =
                bilinear_scalar(cam, act.h, act.w, fy, fx);
        }
    }
    return r;
}

}  // namespace gradcam_detail

// Runs forward + backward for one sample through an encoder/head pair and
// extracts the CAM at `layer_idx` of the encoder. `other` is the feature
// vector of the sibling branch (empty for students).
inline GradCamResult gradcam_encoder(Encoder& enc, nn::Sequential& head,
                                     const nn::Tensor& input, int layer_idx,
                                     const nn::Tensor* sibling_features,
                                     bool sibling_first) {
    nn::Tensor feat = enc.net.forward(input, false);
    nn::Tensor fused = feat;
    if (sibling_features)
        fused = sibling_first
                    ? TeacherModel::concat_features(*sibling_features, feat)
                    : TeacherModel::concat_features(feat, *sibling_features);
    head.forward(fused, false);
    nn::Tensor glogit(1, 2, 1, 1);
    glogit.sample(0)[1] = 1.f;  // bonafide logit
    nn::Tensor gfused = head.backward(glogit);
    nn::Tensor gfeat = gfused;
    if (sibling_features) {
        auto [ga, gb] = TeacherModel::split_features(
            gfused, sibling_first ? sibling_features->c : feat.c,
            sibling_first ? feat.c : sibling_features->c);
        gfeat = sibling_first ? gb : ga;
    }
    nn::Tensor captured;
    enc.net.backward(gfeat, layer_idx, &captured);
    const nn::Tensor& act = enc.net.activation(layer_idx);
    return gradcam_detail::cam_from(act, captured, input.h, input.w);
}

// Alpha-blend a jet-style colormap over the (denormalized) input.
inline Image overlay_heatmap(const Image& base, const GradCamResult& cam,
                             float alpha = 0.45f) {
    Image out = base;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            float v = cam.heatmap[static_cast<size_t>(y) * cam.width + x];
            float rgb[3];
            hsv_to_rgb(240.0 * (1.0 - v), 1.0, 1.0, rgb);  // blue -> red
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = std::clamp(
                    (1 - alpha) * out.at(y, x, c) + alpha * rgb[c], 0.f, 1.f);
        }
    return out;
}

}  // namespace flowpad
