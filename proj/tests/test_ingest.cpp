#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowpad/ingest.hpp"
#include "flowpad/synth.hpp"

using namespace flowpad;

namespace {

SynthConfig small_cfg() {
    SynthConfig cfg;
    cfg.n_subjects = 3;
    cfg.clips_per_subject = 4;
    cfg.frames_per_clip = 4;
    cfg.height = 64;
    cfg.width = 64;
    cfg.seed = 7;
    return cfg;
}

const DatasetManifest& shared_dataset() {
    static DatasetManifest m = [] {
        fs::remove_all("synth_small");
        return generate_synthetic_dataset(small_cfg(), "synth_small");
    }();
    return m;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ClipRecord tiny_clip(int n_frames) {
    fs::create_directories("tiny_clip");
    Image img(8, 8, 0.5f);
    ClipRecord c;
    c.clip_id = "tiny";
    for (int t = 0; t < n_frames; ++t) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "tiny_clip/frame_%04d.png", t);
        save_png(img, buf);
        c.frame_paths.push_back(buf);
    }
    return c;
}

}  // namespace

TEST_CASE("sample_pair uses the first frame in eval mode") {
    ClipRecord c = tiny_clip(6);
    Rng rng = make_rng(1);
    for (int i = 0; i < 5; ++i) {
        FramePair p = sample_pair(c, SampleMode::eval, 1, rng);
        CHECK(p.t == 0);
        CHECK(p.delta_t == 1);
    }
}

TEST_CASE("sample_pair on a 2-frame clip always picks t=0") {
    ClipRecord c = tiny_clip(2);
    Rng rng = make_rng(2);
    for (int i = 0; i < 20; ++i)
        CHECK(sample_pair(c, SampleMode::train, 1, rng).t == 0);
}

TEST_CASE("training t is uniform over valid indices (chi-square)") {
    ClipRecord c = tiny_clip(8);  // t in [0,6]
    Rng rng = make_rng(3);
    const int draws = 7000, bins = 7;
    std::vector<int> tally(bins, 0);
    for (int i = 0; i < draws; ++i) {
        int t = sample_pair(c, SampleMode::train, 1, rng).t;
        REQUIRE(t >= 0);
        REQUIRE(t < bins);
        ++tally[t];
    }
    double expected = static_cast<double>(draws) / bins, chi2 = 0;
    for (int k : tally) chi2 += (k - expected) * (k - expected) / expected;
    // chi-square critical value, df=6, alpha=0.01
    CHECK(chi2 < 16.812);
}

TEST_CASE("sample_pair rejects clips shorter than delta_t+1") {
    ClipRecord c = tiny_clip(3);
    Rng rng = make_rng(1);
    CHECK_THROWS_WITH(sample_pair(c, SampleMode::train, 3, rng),
                      Catch::Matchers::ContainsSubstring("tiny"));
    CHECK_THROWS_AS(sample_pair(c, SampleMode::train, 0, rng), ContractError);
}

TEST_CASE("synthetic generator produces the configured counts and splits") {
    const DatasetManifest& m = shared_dataset();
    SynthConfig cfg = small_cfg();
    CHECK(static_cast<int>(m.clips.size()) == cfg.n_subjects * cfg.clips_per_subject);
    auto counts = m.counts();
    // 3 subjects -> 1 train / 1 dev / 1 test; 4 clips each, 2 per class
    for (Split s : {Split::train, Split::dev, Split::test}) {
        CHECK(counts[{s, Label::bonafide}] == 2);
        CHECK(counts[{s, Label::attack}] == 2);
    }
    std::map<std::string, std::set<Split>> subj;
    for (const auto& c : m.clips) subj[c.subject_id].insert(c.split);
    CHECK(subj.size() == 3);
    for (const auto& [sid, splits] : subj) CHECK(splits.size() == 1);
    for (const auto& c : m.clips) {
        CHECK(c.n_frames() == cfg.frames_per_clip);
        CHECK(static_cast<int>(c.flow_paths.size()) == cfg.frames_per_clip - 1);
    }
}

TEST_CASE("bonafide flow varies spatially; rigid attack flow is constant") {
    const DatasetManifest& m = shared_dataset();
    const ClipRecord* deform = nullptr;
    const ClipRecord* rigid = nullptr;
    const ClipRecord* still = nullptr;
    for (const auto& c : m.clips) {
        if (c.label == Label::bonafide && !deform) deform = &c;
        // generator alternates rigid/still over attack clips
        if (c.label == Label::attack) {
            FlowField f = read_flo(c.flow_path(0));
            bool zero = true;
            for (float u : f.u) if (u != 0.f) { zero = false; break; }
            if (zero) { if (!still) still = &c; }
            else if (!rigid) rigid = &c;
        }
    }
    REQUIRE(deform);
    REQUIRE(rigid);
    REQUIRE(still);

    FlowField fd = read_flo(deform->flow_path(0));
    double mean = 0, var = 0;
    for (float u : fd.u) mean += u;
    mean /= fd.u.size();
    for (float u : fd.u) var += (u - mean) * (u - mean);
    var /= fd.u.size();
    CHECK(var > 1e-4);

    FlowField fr = read_flo(rigid->flow_path(0));
    float mag = std::hypot(fr.u[0], fr.v[0]);
    CHECK(mag > 0.1f);
    for (size_t i = 0; i < fr.u.size(); ++i) {
        CHECK(fr.u[i] == fr.u[0]);
        CHECK(fr.v[i] == fr.v[0]);
    }

    FlowField fs_ = read_flo(still->flow_path(0));
    for (size_t i = 0; i < fs_.u.size(); ++i) {
        CHECK(fs_.u[i] == 0.f);
        CHECK(fs_.v[i] == 0.f);
    }
}

TEST_CASE("stored flow photometrically explains the next frame") {
    const DatasetManifest& m = shared_dataset();
    const ClipRecord* deform = nullptr;
    for (const auto& c : m.clips)
        if (c.label == Label::bonafide) { deform = &c; break; }
    REQUIRE(deform);
    Image a = deform->load_frame(0);
    Image b = deform->load_frame(1);
    FlowField f = read_flo(deform->flow_path(0));
    double err = 0;
    int n = 0;
    const int margin = 6;
    for (int y = margin; y < a.height - margin; ++y)
        for (int x = margin; x < a.width - margin; ++x) {
            float tx = x + f.U(y, x), ty = y + f.V(y, x);
            if (tx < 0 || tx > b.width - 1 || ty < 0 || ty > b.height - 1) continue;
            float px[3];
            bilinear_sample(b, ty, tx, px);
            for (int c = 0; c < 3; ++c) err += std::fabs(px[c] - a.at(y, x, c));
            n += 3;
        }
    REQUIRE(n > 0);
    CHECK(err / n < 0.02);
}

TEST_CASE("manifest round trip through disk") {
    const DatasetManifest& m = shared_dataset();
    DatasetManifest r = load_manifest("synth_small");
    REQUIRE(r.clips.size() == m.clips.size());
    for (size_t i = 0; i < m.clips.size(); ++i) {
        CHECK(r.clips[i].clip_id == m.clips[i].clip_id);
        CHECK(r.clips[i].label == m.clips[i].label);
        CHECK(r.clips[i].split == m.clips[i].split);
        CHECK(r.clips[i].subject_id == m.clips[i].subject_id);
        CHECK(r.clips[i].n_frames() == m.clips[i].n_frames());
        CHECK(r.clips[i].flow_paths.size() == m.clips[i].flow_paths.size());
    }
    // loading via the explicit manifest file gives the same result
    DatasetManifest r2 = load_manifest("synth_small/manifest.txt");
    CHECK(r2.clips.size() == r.clips.size());
}

TEST_CASE("subject overlap across splits is rejected with the offender named") {
    DatasetManifest m = shared_dataset();  // copy
    // move one clip of a dev subject into train
    for (auto& c : m.clips)
        if (c.split == Split::dev) { c.split = Split::train; break; }
    try {
        detail::validate_manifest(m);
        FAIL("expected ProtocolViolation");
    } catch (const ProtocolViolation& e) {
        std::string msg = e.what();
        CHECK(msg.find("subject-disjointness") != std::string::npos);
        CHECK(msg.find("s0") != std::string::npos);  // names the subject
    }
}

TEST_CASE("a split missing one class is rejected") {
    DatasetManifest m = shared_dataset();
    std::erase_if(m.clips, [](const ClipRecord& c) {
        return c.split == Split::train && c.label == Label::attack;
    });
    CHECK_THROWS_AS(detail::validate_manifest(m), ProtocolViolation);
}

TEST_CASE("generation is bit-identical under a fixed seed") {
    SynthConfig cfg = small_cfg();
    cfg.n_subjects = 3;
    cfg.clips_per_subject = 2;
    fs::remove_all("synth_a");
    fs::remove_all("synth_b");
    DatasetManifest a = generate_synthetic_dataset(cfg, "synth_a");
    DatasetManifest b = generate_synthetic_dataset(cfg, "synth_b");
    REQUIRE(a.clips.size() == b.clips.size());
    for (size_t i = 0; i < a.clips.size(); ++i) {
        for (int t = 0; t < a.clips[i].n_frames(); ++t)
            CHECK(slurp(a.clips[i].frame_paths[t]) == slurp(b.clips[i].frame_paths[t]));
        for (size_t t = 0; t < a.clips[i].flow_paths.size(); ++t)
            CHECK(slurp(a.clips[i].flow_paths[t]) == slurp(b.clips[i].flow_paths[t]));
    }
    fs::remove_all("synth_a");
    fs::remove_all("synth_b");
}

TEST_CASE("generator precondition checks") {
    SynthConfig cfg = small_cfg();
    cfg.n_subjects = 2;
    CHECK_THROWS_AS(generate_synthetic_dataset(cfg, "synth_bad"), ContractError);
    cfg = small_cfg();
    cfg.frames_per_clip = 3;
    CHECK_THROWS_AS(generate_synthetic_dataset(cfg, "synth_bad"), ContractError);
    cfg = small_cfg();
    cfg.height = 32;
    CHECK_THROWS_AS(generate_synthetic_dataset(cfg, "synth_bad"), ContractError);
}
