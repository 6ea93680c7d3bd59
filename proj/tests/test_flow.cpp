#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "flowpad/flow.hpp"

using namespace flowpad;

namespace {

// Smooth analytic luminance pattern, evaluated at continuous coordinates.
double pattern(double x, double y) {
    return 0.5 + 0.25 * std::sin(0.11 * x + 0.3) * std::cos(0.07 * y - 0.2) +
           0.2 * std::sin(0.05 * (x + y));
}

Image make_texture(int h, int w, double shift_x = 0, double shift_y = 0) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = pattern(x - shift_x, y - shift_y);
            img.at(y, x, 0) = static_cast<float>(v);
            img.at(y, x, 1) = static_cast<float>(0.8 * v + 0.1);
            img.at(y, x, 2) = static_cast<float>(1.0 - 0.5 * v);
        }
    return img;
}

// Independent RGB->hue extraction for the equivariance oracle.
double rgb_to_hue(float r, float g, float b) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    double d = mx - mn;
    if (d == 0) return 0;
    double h;
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2;
    else h = (r - g) / d + 4;
    h *= 60;
    return h < 0 ? h + 360 : h;
}

FlowField smooth_flow(int h, int w) {
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.U(y, x) = static_cast<float>(2.0 * std::sin(0.05 * x) + 1.0);
            f.V(y, x) = static_cast<float>(1.5 * std::cos(0.04 * y) - 0.5);
        }
    return f;
}

}  // namespace

TEST_CASE(".flo round trip is bit exact") {
    FlowField f = smooth_flow(17, 23);
    write_flo(f, "rt.flo");
    FlowField g = read_flo("rt.flo");
    REQUIRE(g.height == f.height);
    REQUIRE(g.width == f.width);
    CHECK(g.u == f.u);
    CHECK(g.v == f.v);
    std::remove("rt.flo");
}

TEST_CASE("all-zero flow encodes to all-white") {
    FlowField f(8, 8);
    Image img = colorwheel_encode(f);
    for (float v : img.data) CHECK(v == 1.0f);
}

TEST_CASE("uniform rightward flow encodes to pure red") {
    FlowField f(4, 4);
    for (auto& u : f.u) u = 1.f;
    Image img = colorwheel_encode(f);  // per-image max: saturation 1, hue 0
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(img.at(y, x, 0) == Catch::Approx(1.0));
            CHECK(img.at(y, x, 1) == Catch::Approx(0.0).margin(1e-12));
            CHECK(img.at(y, x, 2) == Catch::Approx(0.0).margin(1e-12));
        }
}

TEST_CASE("per-image-max scale invariance, power-of-two factors bit exact") {
    FlowField f = smooth_flow(12, 12);
    Image base = colorwheel_encode(f);
    for (float s : {0.5f, 2.f, 8.f, 0.0078125f}) {
        FlowField g = f;
        for (auto& u : g.u) u *= s;
        for (auto& v : g.v) v *= s;
        Image scaled = colorwheel_encode(g);
        CHECK(scaled.data == base.data);
    }
}

TEST_CASE("per-image-max scale invariance, arbitrary factors within 1e-6") {
    FlowField f = smooth_flow(10, 14);
    Image base = colorwheel_encode(f);
    for (float s : {0.37f, 3.1f, 117.3f}) {
        FlowField g = f;
        for (auto& u : g.u) u *= s;
        for (auto& v : g.v) v *= s;
        Image scaled = colorwheel_encode(g);
        for (size_t i = 0; i < base.data.size(); ++i)
            CHECK(scaled.data[i] == Catch::Approx(base.data[i]).margin(1e-6));
    }
}

TEST_CASE("rotating flow vectors shifts hue by the same angle") {
    FlowField f = smooth_flow(9, 9);
    const double theta = 90.0;
    double ct = std::cos(deg2rad(theta)), st = std::sin(deg2rad(theta));
    FlowField g(f.height, f.width);
    for (size_t i = 0; i < f.u.size(); ++i) {
        g.u[i] = static_cast<float>(ct * f.u[i] - st * f.v[i]);
        g.v[i] = static_cast<float>(st * f.u[i] + ct * f.v[i]);
    }
    Image a = colorwheel_encode(f), b = colorwheel_encode(g);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            double ha = rgb_to_hue(a.at(y, x, 0), a.at(y, x, 1), a.at(y, x, 2));
            double hb = rgb_to_hue(b.at(y, x, 0), b.at(y, x, 1), b.at(y, x, 2));
            double diff = std::fmod(hb - ha - theta + 720.0, 360.0);
            if (diff > 180) diff -= 360;
            CHECK(std::fabs(diff) < 1e-4);
        }
}

TEST_CASE("hue rotation-equivariance at the hsv level, tolerance 1e-5") {
    Rng rng = make_rng(5);
    for (int i = 0; i < 200; ++i) {
        double u = nrand(rng), v = nrand(rng);
        if (std::hypot(u, v) < 1e-6) continue;
        double th = urand(rng, 0, 360);
        double ct = std::cos(deg2rad(th)), st = std::sin(deg2rad(th));
        double ru = ct * u - st * v, rv = st * u + ct * v;
        auto [h0, s0] = flow_to_hsv(u, v, 10.0);
        auto [h1, s1] = flow_to_hsv(ru, rv, 10.0);
        double diff = std::fmod(h1 - h0 - th + 720.0, 360.0);
        if (diff > 180) diff -= 360;
        CHECK(std::fabs(diff) < 1e-5);
        CHECK(s1 == Catch::Approx(s0).margin(1e-5));
    }
}

TEST_CASE("colorwheel rejects non-finite flow") {
    FlowField f(4, 4);
    f.u[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(colorwheel_encode(f), NumericError);
}

TEST_CASE("adapt_for_engine leaves 224x224 geometry unchanged") {
    Image a = make_texture(224, 224), b = make_texture(224, 224, 1, 0);
    auto [pa, pb, rec] = adapt_for_engine(a, b);
    CHECK(rec.transposed == false);
    CHECK(rec.engine_h == 224);
    CHECK(rec.engine_w == 224);
    CHECK(pa.max_value() > 1.f);  // 0-255 range now
}

TEST_CASE("adapt_for_engine transposes and rounds up to multiples of 32") {
    // H=150, W=100: transpose to 100x150, then 128x160
    Image a = make_texture(150, 100), b = make_texture(150, 100);
    auto [pa, pb, rec] = adapt_for_engine(a, b);
    CHECK(rec.transposed == true);
    CHECK(rec.engine_h == 128);
    CHECK(rec.engine_w == 160);
    CHECK(pa.height == 128);
    CHECK(pa.width == 160);
}

TEST_CASE("adapt_for_engine range handling") {
    Image a = make_texture(64, 64);
    auto [pa, pb, rec] = adapt_for_engine(a, a, PixelRange::unit);
    CHECK(rec.range_scaled);
    CHECK(pa.max_value() > 1.f);
    auto [qa, qb, rec2] = adapt_for_engine(pa, pb, PixelRange::byte);
    CHECK_FALSE(rec2.range_scaled);
}

TEST_CASE("restore_flow with identity record is a bit-exact no-op") {
    FlowField f = smooth_flow(64, 96);
    AdaptRecord rec{64, 96, 64, 96, false, false};
    FlowField g = restore_flow(f, rec);
    CHECK(g.u == f.u);
    CHECK(g.v == f.v);
}

TEST_CASE("restore_flow magnitude correction is exact on uniform fields") {
    FlowField f(320, 320);
    for (auto& u : f.u) u = 32.f;
    AdaptRecord rec{160, 160, 320, 320, false, false};
    FlowField g = restore_flow(f, rec);
    REQUIRE(g.width == 160);
    for (size_t i = 0; i < g.u.size(); ++i) {
        CHECK(g.u[i] == 16.0f);
        CHECK(g.v[i] == 0.0f);
    }
    // displacement as a fraction of width is preserved exactly
    CHECK(g.u[0] / 160.f == f.u[0] / 320.f);
}

TEST_CASE("restore_flow undoes transposition with u/v swap") {
    FlowField f(64, 96);  // engine space (transposed from 96x64 original)
    for (auto& u : f.u) u = 4.f;  // rightward in engine space
    AdaptRecord rec{96, 64, 64, 96, true, false};
    FlowField g = restore_flow(f, rec);
    REQUIRE(g.height == 96);
    REQUIRE(g.width == 64);
    for (size_t i = 0; i < g.u.size(); ++i) {
        CHECK(g.u[i] == 0.0f);
        CHECK(g.v[i] == 4.0f);  // rightward becomes downward after untranspose
    }
}

TEST_CASE("adapt/restore round trip on a smooth field") {
    FlowField f = smooth_flow(100, 150);
    // push through the engine-resolution protocol by hand
    Image a = make_texture(100, 150), b = make_texture(100, 150);
    auto [pa, pb, rec] = adapt_for_engine(a, b);
    FlowField engine_res = resize_flow(f, rec.engine_h, rec.engine_w);
    AdaptRecord no_transpose = rec;
    REQUIRE_FALSE(rec.transposed);  // W=150 >= H=100
    FlowField back = restore_flow(engine_res, no_transpose);
    double epe = 0;
    for (size_t i = 0; i < f.u.size(); ++i)
        epe += std::hypot(back.u[i] - f.u[i], back.v[i] - f.v[i]);
    epe /= f.u.size();
    CHECK(epe < 0.1);
}

TEST_CASE("estimate_flow rejects mismatched resolutions") {
    ClassicalFlowEngine eng;
    Image a = make_texture(64, 64), b = make_texture(64, 96);
    CHECK_THROWS_AS(estimate_flow(eng, a, b), ContractError);
}

TEST_CASE("classical engine: identical images give near-zero flow") {
    ClassicalFlowEngine eng;
    Image a = make_texture(96, 96);
    FlowField f = estimate_flow(eng, a, a);
    float mx = 0;
    for (size_t i = 0; i < f.u.size(); ++i)
        mx = std::max({mx, std::fabs(f.u[i]), std::fabs(f.v[i])});
    CHECK(mx < 0.1f);
}

TEST_CASE("classical engine recovers a 3px translation") {
    ClassicalFlowEngine eng;
    Image a = make_texture(128, 128);
    Image b = make_texture(128, 128, 3.0, 0.0);  // content moved right by 3
    FlowField f = estimate_flow(eng, a, b);
    std::vector<float> us, vs;
    for (int y = 24; y < 104; ++y)
        for (int x = 24; x < 104; ++x) {
            us.push_back(f.U(y, x));
            vs.push_back(f.V(y, x));
        }
    std::nth_element(us.begin(), us.begin() + us.size() / 2, us.end());
    std::nth_element(vs.begin(), vs.begin() + vs.size() / 2, vs.end());
    double mu = us[us.size() / 2], mv = vs[vs.size() / 2];
    CHECK(mu >= 2.5);
    CHECK(mu <= 3.5);
    CHECK(mv >= -0.5);
    CHECK(mv <= 0.5);
}

TEST_CASE("classical engine is deterministic") {
    ClassicalFlowEngine eng;
    Image a = make_texture(96, 96), b = make_texture(96, 96, 1.5, -0.5);
    FlowField f1 = estimate_flow(eng, a, b);
    FlowField f2 = estimate_flow(eng, a, b);
    CHECK(f1.u == f2.u);
    CHECK(f1.v == f2.v);
}

TEST_CASE("exact engine serves the stored .flo bit-identically") {
    FlowField gt = smooth_flow(64, 64);
    write_flo(gt, "gt.flo");
    ExactFlowEngine eng;
    Image a = make_texture(64, 64);
    FlowHint hint{"gt.flo"};
    FlowField f = estimate_flow(eng, a, a, &hint);
    CHECK(f.u == gt.u);
    CHECK(f.v == gt.v);
    std::remove("gt.flo");
}

TEST_CASE("exact engine without stored flow reports engine-unavailable") {
    ExactFlowEngine eng;
    Image a = make_texture(64, 64);
    CHECK_THROWS_AS(estimate_flow(eng, a, a), EngineUnavailable);
    FlowHint empty{};
    CHECK_THROWS_AS(estimate_flow(eng, a, a, &empty), EngineUnavailable);
}

TEST_CASE("engine selection strings") {
    CHECK(make_flow_engine("exact")->name() == "exact");
    CHECK(make_flow_engine("classical")->name() == "classical");
    auto ext = make_flow_engine("external:unimatch");
    CHECK(ext->name() == "external:unimatch");
    Image a = make_texture(64, 64);
    CHECK_THROWS_AS(estimate_flow(*ext, a, a), EngineUnavailable);
    CHECK(make_flow_engine("none") == nullptr);
    CHECK_THROWS_AS(make_flow_engine("bogus"), ConfigError);
}
