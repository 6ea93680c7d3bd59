#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "flowpad/common.hpp"

namespace flowpad {

// Float RGB image, interleaved HWC, values nominally in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height * width * 3

    Image() = default;
    Image(int h, int w, float fill = 0.f)
        : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    bool same_size(const Image& o) const {
        return height == o.height && width == o.width;
    }
    float max_value() const {
        float m = 0.f;
        for (float v : data) m = std::max(m, v);
        return m;
    }
};

inline Image load_png(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot read image: " + path);
    Image img(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            img.at(y, x, 0) = row[x][2] / 255.f;
            img.at(y, x, 1) = row[x][1] / 255.f;
            img.at(y, x, 2) = row[x][0] / 255.f;
        }
    }
    return img;
}

inline void save_png(const Image& img, const std::string& path) {
    cv::Mat bgr(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(img.at(y, x, c), 0.f, 1.f);
                row[x][2 - c] = static_cast<uchar>(std::lround(v * 255.0));
            }
        }
    }
    if (!cv::imwrite(path, bgr)) throw IoError("cannot write image: " + path);
}

// Bilinear sample with clamped borders. Uses the lerp form a + t*(b-a) so
// constant regions are preserved exactly.
inline void bilinear_sample(const Image& img, float fy, float fx, float out[3]) {
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    float tx = fx - x0, ty = fy - y0;
    int x1 = std::clamp(x0 + 1, 0, img.width - 1);
    int y1 = std::clamp(y0 + 1, 0, img.height - 1);
    x0 = std::clamp(x0, 0, img.width - 1);
    y0 = std::clamp(y0, 0, img.height - 1);
    for (int c = 0; c < 3; ++c) {
        float a = img.at(y0, x0, c), b = img.at(y0, x1, c);
        float d = img.at(y1, x0, c), e = img.at(y1, x1, c);
        float top = a + tx * (b - a);
        float bot = d + tx * (e - d);
        out[c] = top + ty * (bot - top);
    }
}

inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ContractError("resize target must be >= 1x1");
    if (out_h == img.height && out_w == img.width) return img;
    Image out(out_h, out_w);
    // align_corners=false convention
    float sy = static_cast<float>(img.height) / out_h;
    float sx = static_cast<float>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            float px[3];
            bilinear_sample(img, fy, fx, px);
            out.at(y, x, 0) = px[0];
            out.at(y, x, 1) = px[1];
            out.at(y, x, 2) = px[2];
        }
    }
    return out;
}

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
        throw ContractError("crop region outside image");
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

inline Image transpose(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(y, x, c);
    return out;
}

// Rotate by theta (counter-clockwise, degrees) and scale about the image
// center, same output size, zero padding outside the source.
inline Image warp_rotate_scale(const Image& img, double theta_deg, double scale) {
    Image out(img.height, img.width);
    double th = deg2rad(theta_deg);
    double ct = std::cos(th), st = std::sin(th);
    double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    // inverse map: rotate by -theta, scale by 1/s
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            double dx = x - cx, dy = y - cy;
            double sxp = (ct * dx + st * dy) / scale + cx;
            double syp = (-st * dx + ct * dy) / scale + cy;
            if (sxp < -0.5 || sxp > img.width - 0.5 || syp < -0.5 ||
                syp > img.height - 0.5)
                continue;  // zero padding
            float px[3];
            bilinear_sample(img, static_cast<float>(syp), static_cast<float>(sxp), px);
            out.at(y, x, 0) = px[0];
            out.at(y, x, 1) = px[1];
            out.at(y, x, 2) = px[2];
        }
    }
    return out;
}

// Standard HSV->RGB, h in degrees [0,360), s,v in [0,1].
inline void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
    h = std::fmod(h, 360.0);
    if (h < 0) h += 360.0;
    double c = v * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    double m = v - c;
    rgb[0] = static_cast<float>(r + m);
    rgb[1] = static_cast<float>(g + m);
    rgb[2] = static_cast<float>(b + m);
}

}  // namespace flowpad
