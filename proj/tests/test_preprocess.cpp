#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowpad/preprocess.hpp"

using namespace flowpad;

namespace {

Image gradient_image(int h, int w) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = static_cast<float>(x) / w;
            img.at(y, x, 1) = static_cast<float>(y) / h;
            img.at(y, x, 2) = 0.5f;
        }
    return img;
}

}  // namespace

TEST_CASE("center square crop on a 100x180 image takes x offset 40") {
    Image img = gradient_image(100, 180);
    auto [cropped, rec] = center_square_crop(img);
    CHECK(rec.side == 100);
    CHECK(rec.y0 == 0);
    CHECK(rec.x0 == 40);
    CHECK(cropped.height == 100);
    CHECK(cropped.width == 100);
    CHECK(cropped.at(0, 0, 0) == img.at(0, 40, 0));
    CHECK(cropped.at(99, 99, 1) == img.at(99, 139, 1));
}

TEST_CASE("center square crop of a flow field keeps vectors unchanged") {
    FlowField f(80, 120);
    for (int y = 0; y < 80; ++y)
        for (int x = 0; x < 120; ++x) {
            f.U(y, x) = static_cast<float>(x);
            f.V(y, x) = static_cast<float>(y);
        }
    auto [c, rec] = center_square_crop(f);
    CHECK(rec.x0 == 20);
    CHECK(c.U(0, 0) == 20.f);  // pass-through, no rescale
    CHECK(c.V(0, 0) == 0.f);
}

TEST_CASE("flow resize halves magnitudes along with resolution") {
    FlowField f(200, 200);
    for (auto& u : f.u) u = 10.f;
    for (auto& v : f.v) v = 4.f;
    FlowField g = resize_flow(f, 100, 100);
    for (size_t i = 0; i < g.u.size(); ++i) {
        CHECK(g.u[i] == 5.0f);
        CHECK(g.v[i] == 2.0f);
    }
}

TEST_CASE("PIPE-B parameter sharing: identical inputs stay pixel-identical") {
    // feed the same image as both modalities; shared params must transform
    // them identically, bit for bit
    Image img = gradient_image(128, 128);
    SyncAugConfig cfg;
    cfg.rho = 64;
    Rng rng = make_rng(11);
    for (int i = 0; i < 5; ++i) {
        SyncAugParams p = sample_aug_params(rng, cfg);
        AugmentedPair out = sync_augment_images(img, img, p, cfg);
        CHECK(out.rgb.data == out.flow_img.data);
    }
}

TEST_CASE("eval-mode preprocessing is deterministic and rng-independent") {
    Image img = gradient_image(96, 140);
    FlowField f(96, 140);
    for (auto& u : f.u) u = 3.f;
    SyncAugConfig cfg;
    cfg.rho = 64;
    Rng r1 = make_rng(1), r2 = make_rng(999);
    AugmentedPair a = sync_augment(img, f, SampleMode::eval, r1, cfg);
    AugmentedPair b = sync_augment(img, f, SampleMode::eval, r2, cfg);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.flow_img.data == b.flow_img.data);
    CHECK(a.params.rotation_deg == 0.0);
    CHECK(a.params.scale == 1.0);
}

TEST_CASE("train mode with degenerate ranges matches eval output") {
    Image img = gradient_image(96, 96);
    FlowField f(96, 96);
    for (auto& u : f.u) u = 2.f;
    for (auto& v : f.v) v = -1.f;
    SyncAugConfig cfg;
    cfg.rho = 48;
    cfg.rot_range_deg = 0.0;
    cfg.scale_min = cfg.scale_max = 1.0;
    Rng rng = make_rng(3);
    AugmentedPair tr = sync_augment(img, f, SampleMode::train, rng, cfg);
    AugmentedPair ev = sync_augment(img, f, SampleMode::eval, rng, cfg);
    CHECK(tr.rgb.data == ev.rgb.data);
    CHECK(tr.flow_img.data == ev.flow_img.data);
}

TEST_CASE("flow warp rotates sampled vectors, not just the grid") {
    FlowField f(64, 64);
    for (auto& u : f.u) u = 1.f;  // uniform rightward
    FlowField g = warp_rotate_scale(f, 90.0, 1.0);
    // interior pixels: vector (1,0) rotated 90deg CCW in image coords -> (0,1)
    int y = 32, x = 32;
    CHECK(g.U(y, x) == Catch::Approx(0.0).margin(1e-6));
    CHECK(g.V(y, x) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("flow warp scales vector magnitude by s") {
    FlowField f(64, 64);
    for (auto& u : f.u) u = 2.f;
    FlowField g = warp_rotate_scale(f, 0.0, 1.1);
    CHECK(g.U(32, 32) == Catch::Approx(2.2).margin(1e-5));
    CHECK(g.V(32, 32) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("PIPE-A alignment: an impulse lands at the same place in both modalities") {
    // a bright dot in the rgb image and a flow impulse at the same pixel
    // should end up within 1px of each other after a shared warp
    const int n = 128;
    Image rgb(n, n, 0.f);
    FlowField f(n, n);
    const int py = 40, px = 88;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            rgb.at(py + dy, px + dx, 0) = 1.f;
            f.U(py + dy, px + dx) = 5.f;
        }
    SyncAugConfig cfg;
    cfg.rho = n;
    SyncAugParams p{7.0, 1.05};
    Image wrgb = apply_geometry(rgb, p, cfg.rho);
    FlowField wf = warp_rotate_scale(f, p.rotation_deg, p.scale);
    wf = center_square_crop(wf).first;
    wf = resize_flow(wf, cfg.rho, cfg.rho);
    auto argmax = [n](auto&& value) {
        int by = 0, bx = 0;
        float best = -1;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                if (value(y, x) > best) { best = value(y, x); by = y; bx = x; }
        return std::pair{by, bx};
    };
    auto [ry, rx] = argmax([&](int y, int x) { return wrgb.at(y, x, 0); });
    auto [fy, fx] = argmax([&](int y, int x) { return wf.U(y, x); });
    CHECK(std::abs(ry - fy) <= 1);
    CHECK(std::abs(rx - fx) <= 1);
}

TEST_CASE("PIPE-A and PIPE-B agree when no geometry is applied") {
    Image img = gradient_image(100, 100);
    FlowField f(100, 100);
    Rng rng = make_rng(7);
    for (size_t i = 0; i < f.u.size(); ++i) {
        f.u[i] = static_cast<float>(nrand(rng));
        f.v[i] = static_cast<float>(nrand(rng));
    }
    SyncAugConfig a;
    a.rho = 100;  // crop and resize are identities at native square size
    a.pipeline = FlowPipeline::raw_flow;
    SyncAugConfig b = a;
    b.pipeline = FlowPipeline::encoded;
    Rng r1 = make_rng(1), r2 = make_rng(1);
    AugmentedPair pa = sync_augment(img, f, SampleMode::eval, r1, a);
    AugmentedPair pb = sync_augment(img, f, SampleMode::eval, r2, b);
    CHECK(pa.flow_img.data == pb.flow_img.data);
}

TEST_CASE("sampled augmentation parameters respect configured ranges") {
    SyncAugConfig cfg;
    Rng rng = make_rng(42);
    for (int i = 0; i < 1000; ++i) {
        SyncAugParams p = sample_aug_params(rng, cfg);
        CHECK(p.rotation_deg >= -10.0);
        CHECK(p.rotation_deg <= 10.0);
        CHECK(p.scale >= 0.9);
        CHECK(p.scale <= 1.1);
    }
}

TEST_CASE("normalize/denormalize round trip within 1e-6") {
    Image img = gradient_image(32, 32);
    NormStats s;
    Image back = denormalize_rgb(normalize_rgb(img, s), s);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == Catch::Approx(img.data[i]).margin(1e-6));
}

TEST_CASE("sync_augment rejects mismatched modality resolutions") {
    Image img = gradient_image(64, 64);
    FlowField f(64, 96);
    Rng rng = make_rng(1);
    SyncAugConfig cfg;
    CHECK_THROWS_AS(sync_augment(img, f, SampleMode::eval, rng, cfg), ContractError);
}
