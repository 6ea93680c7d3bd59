#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowpad/common.hpp"

namespace flowpad::nn {

using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using CMapRM = Eigen::Map<const MatrixRM>;

struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.f) {}

    size_t sample_size() const { return static_cast<size_t>(c) * h * w; }
    float* sample(int i) { return v.data() + i * sample_size(); }
    const float* sample(int i) const { return v.data() + i * sample_size(); }
    bool finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<float> w, g;

    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        size_t total = 1;
        for (int d : shape) total *= d;
        w.assign(total, 0.f);
        g.assign(total, 0.f);
    }
    size_t size() const { return w.size(); }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.f); }
};

struct Shape {
    int c, h, w;
};

class Layer {
  public:
    virtual ~Layer() = default;
    virtual std::string name() const = 0;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual Shape out_shape(Shape in) const { return in; }
    // multiply-accumulate count for one input of the given shape; layers
    // without a documented formula report 0 and are listed as warnings
    virtual long long macs(Shape) const { return 0; }
};

inline void kaiming_uniform(Param& p, int fan_in, Rng& rng) {
    float bound = std::sqrt(6.f / fan_in);
    for (auto& x : p.w) x = static_cast<float>(urand(rng, -bound, bound));
}

// 2D convolution, square kernel, zero padding, via im2col + gemm.
class Conv2d : public Layer {
  public:
    Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng,
           const std::string& tag)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
          weight_(tag + ".weight", {out_c, in_c, k, k}),
          bias_(tag + ".bias", {out_c}), tag_(tag) {
        kaiming_uniform(weight_, in_c * k * k, rng);
    }

    std::string name() const override { return tag_; }
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

    Shape out_shape(Shape in) const override {
        return {out_c_, (in.h + 2 * pad_ - k_) / stride_ + 1,
                (in.w + 2 * pad_ - k_) / stride_ + 1};
    }
    long long macs(Shape in) const override {
        Shape o = out_shape(in);
        return static_cast<long long>(o.h) * o.w * out_c_ * in_c_ * k_ * k_;
    }

    Tensor forward(const Tensor& x, bool) override {
        x_ = x;
        Shape o = out_shape({x.c, x.h, x.w});
        Tensor y(x.n, o.c, o.h, o.w);
        const int cols = o.h * o.w, rows = in_c_ * k_ * k_;
        col_.assign(static_cast<size_t>(x.n) * rows * cols, 0.f);
        CMapRM W(weight_.w.data(), out_c_, rows);
        for (int i = 0; i < x.n; ++i) {
            float* col = col_.data() + static_cast<size_t>(i) * rows * cols;
            im2col(x.sample(i), x.c, x.h, x.w, o.h, o.w, col);
            MapRM C(col, rows, cols);
            MapRM Y(y.sample(i), out_c_, cols);
            Y.noalias() = W * C;
            for (int oc = 0; oc < out_c_; ++oc)
                Y.row(oc).array() += bias_.w[oc];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Shape o = out_shape({x_.c, x_.h, x_.w});
        const int cols = o.h * o.w, rows = in_c_ * k_ * k_;
        Tensor gx(x_.n, x_.c, x_.h, x_.w);
        MapRM dW(weight_.g.data(), out_c_, rows);
        std::vector<float> dcol(static_cast<size_t>(rows) * cols);
        for (int i = 0; i < gy.n; ++i) {
            CMapRM GY(gy.sample(i), out_c_, cols);
            CMapRM C(col_.data() + static_cast<size_t>(i) * rows * cols, rows, cols);
            dW.noalias() += GY * C.transpose();
            for (int oc = 0; oc < out_c_; ++oc) bias_.g[oc] += GY.row(oc).sum();
            MapRM DC(dcol.data(), rows, cols);
            CMapRM W(weight_.w.data(), out_c_, rows);
            DC.noalias() = W.transpose() * GY;
            col2im(dcol.data(), x_.c, x_.h, x_.w, o.h, o.w, gx.sample(i));
        }
        return gx;
    }

  private:
    void im2col(const float* x, int c, int h, int w, int oh, int ow,
                float* col) const {
        for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    float* dst = col + ((ic * k_ + ky) * k_ + kx) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride_ + ky - pad_;
                        for (int ox = 0; ox < ow; ++ox) {
                            int ixx = ox * stride_ + kx - pad_;
                            dst[oy * ow + ox] =
                                (iy >= 0 && iy < h && ixx >= 0 && ixx < w)
                                    ? x[(ic * h + iy) * w + ixx]
                                    : 0.f;
                        }
                    }
                }
    }
    void col2im(const float* col, int c, int h, int w, int oh, int ow,
                float* gx) const {
        for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const float* src = col + ((ic * k_ + ky) * k_ + kx) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            int ixx = ox * stride_ + kx - pad_;
                            if (ixx < 0 || ixx >= w) continue;
                            gx[(ic * h + iy) * w + ixx] += src[oy * ow + ox];
                        }
                    }
                }
    }

    int in_c_, out_c_, k_, stride_, pad_;
    Param weight_, bias_;
    std::string tag_;
    Tensor x_;
    std::vector<float> col_;
};

class ReLU : public Layer {
  public:
    explicit ReLU(std::string tag) : tag_(std::move(tag)) {}
    std::string name() const override { return tag_; }
    Tensor forward(const Tensor& x, bool) override {
        x_ = x;
        Tensor y = x;
        for (auto& v : y.v) v = std::max(v, 0.f);
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        for (size_t i = 0; i < gx.v.size(); ++i)
            if (x_.v[i] <= 0.f) gx.v[i] = 0.f;
        return gx;
    }

  private:
    std::string tag_;
    Tensor x_;
};

class MaxPool2 : public Layer {
  public:
    explicit MaxPool2(std::string tag) : tag_(std::move(tag)) {}
    std::string name() const override { return tag_; }
    Shape out_shape(Shape in) const override { return {in.c, in.h / 2, in.w / 2}; }

    Tensor forward(const Tensor& x, bool) override {
        in_shape_ = {x.c, x.h, x.w};
        Shape o = out_shape(in_shape_);
        Tensor y(x.n, o.c, o.h, o.w);
        arg_.assign(y.v.size(), 0);
        for (int i = 0; i < x.n; ++i) {
            const float* xs = x.sample(i);
            float* ys = y.sample(i);
            size_t base = i * y.sample_size();
            for (int c = 0; c < o.c; ++c)
                for (int oy = 0; oy < o.h; ++oy)
                    for (int ox = 0; ox < o.w; ++ox) {
                        int best = -1;
                        float bv = -std::numeric_limits<float>::infinity();
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                int idx = (c * x.h + 2 * oy + dy) * x.w + 2 * ox + dx;
                                if (xs[idx] > bv) {
                                    bv = xs[idx];
                                    best = idx;
                                }
                            }
                        size_t oidx = (static_cast<size_t>(c) * o.h + oy) * o.w + ox;
                        ys[oidx] = bv;
                        arg_[base + oidx] = best;
                    }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.n, in_shape_.c, in_shape_.h, in_shape_.w);
        for (int i = 0; i < gy.n; ++i) {
            const float* gys = gy.sample(i);
            float* gxs = gx.sample(i);
            size_t base = i * gy.sample_size();
            for (size_t j = 0; j < gy.sample_size(); ++j)
                gxs[arg_[base + j]] += gys[j];
        }
        return gx;
    }

  private:
    std::string tag_;
    Shape in_shape_{};
    std::vector<int> arg_;
};

class GlobalAvgPool : public Layer {
  public:
    explicit GlobalAvgPool(std::string tag) : tag_(std::move(tag)) {}
    std::string name() const override { return tag_; }
    Shape out_shape(Shape in) const override { return {in.c, 1, 1}; }

    Tensor forward(const Tensor& x, bool) override {
        in_shape_ = {x.c, x.h, x.w};
        Tensor y(x.n, x.c, 1, 1);
        float inv = 1.f / (x.h * x.w);
        for (int i = 0; i < x.n; ++i)
            for (int c = 0; c < x.c; ++c) {
                const float* p = x.sample(i) + static_cast<size_t>(c) * x.h * x.w;
                float s = 0;
                for (int j = 0; j < x.h * x.w; ++j) s += p[j];
                y.sample(i)[c] = s * inv;
            }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.n, in_shape_.c, in_shape_.h, in_shape_.w);
        float inv = 1.f / (in_shape_.h * in_shape_.w);
        for (int i = 0; i < gy.n; ++i)
            for (int c = 0; c < in_shape_.c; ++c) {
                float g = gy.sample(i)[c] * inv;
                float* p = gx.sample(i) + static_cast<size_t>(c) * in_shape_.h * in_shape_.w;
                for (int j = 0; j < in_shape_.h * in_shape_.w; ++j) p[j] = g;
            }
        return gx;
    }

  private:
    std::string tag_;
    Shape in_shape_{};
};

class Linear : public Layer {
  public:
    Linear(int in_dim, int out_dim, Rng& rng, const std::string& tag)
        : in_(in_dim), out_(out_dim),
          weight_(tag + ".weight", {out_dim, in_dim}),
          bias_(tag + ".bias", {out_dim}), tag_(tag) {
        kaiming_uniform(weight_, in_dim, rng);
    }

    std::string name() const override { return tag_; }
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    Shape out_shape(Shape) const override { return {out_, 1, 1}; }
    long long macs(Shape) const override {
        return static_cast<long long>(in_) * out_;
    }

    Tensor forward(const Tensor& x, bool) override {
        if (static_cast<int>(x.sample_size()) != in_)
            throw ContractError(tag_ + ": expected input dim " + std::to_string(in_));
        x_ = x;
        Tensor y(x.n, out_, 1, 1);
        CMapRM X(x.v.data(), x.n, in_);
        CMapRM W(weight_.w.data(), out_, in_);
        MapRM Y(y.v.data(), x.n, out_);
        Y.noalias() = X * W.transpose();
        CMapRM b(bias_.w.data(), 1, out_);
        Y.rowwise() += b.row(0);
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.n, in_, 1, 1);
        CMapRM GY(gy.v.data(), gy.n, out_);
        CMapRM X(x_.v.data(), gy.n, in_);
        MapRM dW(weight_.g.data(), out_, in_);
        dW.noalias() += GY.transpose() * X;
        MapRM db(bias_.g.data(), 1, out_);
        db.row(0) += GY.colwise().sum();
        CMapRM W(weight_.w.data(), out_, in_);
        MapRM GX(gx.v.data(), gy.n, in_);
        GX.noalias() = GY * W;
        return gx;
    }

  private:
    int in_, out_;
    Param weight_, bias_;
    std::string tag_;
    Tensor x_;
};

class Dropout : public Layer {
  public:
    Dropout(double p, Rng* rng, std::string tag)
        : p_(p), rng_(rng), tag_(std::move(tag)) {}
    std::string name() const override { return tag_; }

    Tensor forward(const Tensor& x, bool train) override {
        if (!train || p_ <= 0.0) {
            mask_.clear();
            return x;
        }
        Tensor y = x;
        mask_.resize(x.v.size());
        float keep_inv = static_cast<float>(1.0 / (1.0 - p_));
        std::bernoulli_distribution keep(1.0 - p_);
        for (size_t i = 0; i < y.v.size(); ++i) {
            mask_[i] = keep(*rng_) ? keep_inv : 0.f;
            y.v[i] *= mask_[i];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        if (mask_.empty()) return gy;
        Tensor gx = gy;
        for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= mask_[i];
        return gx;
    }

  private:
    double p_;
    Rng* rng_;
    std::string tag_;
    std::vector<float> mask_;
};

// Plain layer stack. Caches the output of every layer during forward so
// grad-CAM can tap intermediate activations and their gradients.
class Sequential {
  public:
    void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
    size_t size() const { return layers_.size(); }
    Layer& layer(size_t i) { return *layers_[i]; }
    const Layer& layer(size_t i) const { return *layers_[i]; }

    Tensor forward(const Tensor& x, bool train, bool check_finite = true) {
        Tensor cur = x;
        acts_.clear();
        for (auto& l : layers_) {
            cur = l->forward(cur, train);
            if (check_finite && !cur.finite())
                throw NumericError("NaN/Inf in activations after layer '" +
                                   l->name() + "'");
            acts_.push_back(cur);
        }
        return cur;
    }

    // Backward from the output gradient; optionally capture the gradient
    // flowing into the output of layer `capture_idx`.
    Tensor backward(const Tensor& gy, int capture_idx = -1,
                    Tensor* captured = nullptr) {
        Tensor cur = gy;
        for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
            if (i == capture_idx && captured) *captured = cur;
            cur = layers_[i]->backward(cur);
        }
        return cur;
    }

    const Tensor& activation(size_t i) const { return acts_[i]; }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        for (auto& l : layers_)
            for (Param* p : l->params()) out.push_back(p);
        return out;
    }

    Shape out_shape(Shape in) const {
        for (const auto& l : layers_) in = l->out_shape(in);
        return in;
    }

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<Tensor> acts_;
};

class Adam {
  public:
    struct Config {
        double lr = 1e-4;
        double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    };

    Adam(std::vector<Param*> params, Config cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (Param* p : params_) {
            m_.emplace_back(p->size(), 0.f);
            v_.emplace_back(p->size(), 0.f);
        }
    }

    void zero_grad() {
        for (Param* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Param& p = *params_[i];
            for (size_t j = 0; j < p.size(); ++j) {
                double g = p.g[j];
                m_[i][j] = static_cast<float>(cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * g);
                v_[i][j] = static_cast<float>(cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * g * g);
                double mh = m_[i][j] / bc1, vh = v_[i][j] / bc2;
                p.w[j] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
            }
        }
    }

  private:
    std::vector<Param*> params_;
    Config cfg_;
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

inline void softmax_row(const float* logits, int n, double* out) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double z = 0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace flowpad::nn
