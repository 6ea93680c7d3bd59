#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "flowpad/distill.hpp"
#include "flowpad/synth.hpp"

using namespace flowpad;

namespace {

const DatasetManifest& train_dataset() {
    static DatasetManifest m = [] {
        SynthConfig sc;
        sc.n_subjects = 3;
        sc.clips_per_subject = 4;
        sc.frames_per_clip = 4;
        sc.height = 64;
        sc.width = 64;
        sc.seed = 21;
        fs::remove_all("synth_train");
        return generate_synthetic_dataset(sc, "synth_train");
    }();
    return m;
}

json quick_cfg(int max_epochs = 3) {
    json u;
    u["model"]["feature_dim"] = 16;
    u["model"]["width"] = 4;
    u["model"]["head_hidden"] = 8;
    u["preprocess"]["rho"] = 32;
    u["train"]["batch_size_train"] = 8;
    u["train"]["pairs_per_clip"] = 2;
    u["train"]["max_epochs"] = max_epochs;
    u["train"]["patience"] = max_epochs;
    u["train"]["learning_rate"] = 1e-3;
    return resolve_config(u);
}

}  // namespace

TEST_CASE("kd loss with alpha=0 equals the supervised objective, grads included") {
    Rng rng = make_rng(31);
    nn::Tensor logits(16, 2, 1, 1);
    std::vector<int> ys(16);
    std::vector<LogitPair> pairs(16);
    for (int i = 0; i < 16; ++i) {
        for (int c = 0; c < 2; ++c) {
            logits.sample(i)[c] = static_cast<float>(nrand(rng) * 3);
            pairs[i].s_teacher[c] = nrand(rng);  // must be ignored at alpha=0
            pairs[i].s_student[c] = logits.sample(i)[c];
        }
        ys[i] = irand(rng, 0, 1);
        pairs[i].y = ys[i];
    }
    nn::Tensor ce_grad;
    double ce = train_detail::ce_loss_and_grad(logits, ys, ce_grad);
    KDLossResult kr = kd_loss(pairs, {3.0, 0.0});
    CHECK(kr.loss == Catch::Approx(ce).margin(1e-9));
    for (int i = 0; i < 16; ++i)
        for (int c = 0; c < 2; ++c)
            CHECK(kr.grad_student[i][c] ==
                  Catch::Approx(ce_grad.sample(i)[c]).margin(1e-6));
}

TEST_CASE("teacher training runs, logs every epoch, and restores best weights") {
    const DatasetManifest& m = train_dataset();
    json cfg = quick_cfg();
    ExactFlowEngine engine;
    TeacherModel teacher(cfg, 1);
    TrainLog log = train_teacher(m, engine, teacher, cfg, 1);
    REQUIRE_FALSE(log.epochs.empty());
    CHECK(log.epochs.size() <= 3);
    CHECK(log.best_epoch >= 0);
    for (const auto& e : log.epochs) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.dev_accuracy >= 0.0);
        CHECK(e.dev_accuracy <= 1.0);
        CHECK(e.wall_seconds >= 0.0);
    }
    // restored weights reproduce the logged best dev metric
    Pipeline pipe = Pipeline::from_config(cfg, &engine);
    ScoreSet dev = evaluate_teacher(teacher, m, Split::dev, pipe,
                                    cfg["train"]["batch_size_eval"].get<int>());
    auto [metric, acc] = train_detail::dev_metric(dev);
    CHECK(metric == Catch::Approx(log.best_metric).margin(1e-12));

    log.write("train_log.txt");
    std::ifstream in("train_log.txt");
    std::string first;
    std::getline(in, first);
    CHECK(first.find("epoch=0 split=dev loss=") == 0);
    std::remove("train_log.txt");
}

TEST_CASE("training is deterministic under a fixed seed") {
    const DatasetManifest& m = train_dataset();
    json cfg = quick_cfg(2);
    ExactFlowEngine e1, e2;
    TeacherModel a(cfg, 5), b(cfg, 5);
    TrainLog la = train_teacher(m, e1, a, cfg, 5);
    TrainLog lb = train_teacher(m, e2, b, cfg, 5);
    REQUIRE(la.epochs.size() == lb.epochs.size());
    for (size_t i = 0; i < la.epochs.size(); ++i) {
        CHECK(la.epochs[i].train_loss == lb.epochs[i].train_loss);
        CHECK(la.epochs[i].dev_metric == lb.epochs[i].dev_metric);
    }
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->w == pb[i]->w);
}

TEST_CASE("distillation trains the student and leaves the teacher frozen") {
    const DatasetManifest& m = train_dataset();
    json cfg = quick_cfg(2);
    ExactFlowEngine engine;
    TeacherModel teacher(cfg, 1);
    train_teacher(m, engine, teacher, cfg, 1);
    std::vector<float> before = train_detail::snapshot(teacher.params());
    StudentModel student(cfg, 2);
    std::vector<float> s_before = train_detail::snapshot(student.params());
    TrainLog log = distill_student(m, engine, teacher, student, cfg, 2);
    CHECK(train_detail::snapshot(teacher.params()) == before);
    CHECK(train_detail::snapshot(student.params()) != s_before);
    REQUIRE_FALSE(log.epochs.empty());
    for (const auto& e : log.epochs) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("first-epoch loss is reproducible across fresh runs") {
    const DatasetManifest& m = train_dataset();
    json cfg = quick_cfg(1);
    ExactFlowEngine e1, e2;
    TeacherModel a(cfg, 9), b(cfg, 9);
    TrainLog la = train_teacher(m, e1, a, cfg, 9);
    TrainLog lb = train_teacher(m, e2, b, cfg, 9);
    REQUIRE(la.epochs.size() == 1);
    REQUIRE(lb.epochs.size() == 1);
    CHECK(la.epochs[0].train_loss ==
          Catch::Approx(lb.epochs[0].train_loss).margin(1e-6));
}

TEST_CASE("student evaluation works without any flow engine") {
    const DatasetManifest& m = train_dataset();
    json cfg = quick_cfg();
    StudentModel student(cfg, 3);
    Pipeline pipe = Pipeline::from_config(cfg, nullptr);
    ScoreSet s = evaluate_student(student, m, Split::test, pipe, 256);
    CHECK(s.size() == m.split_clips(Split::test).size());
    // the paired path must refuse instead of silently skipping flow
    Rng rng = make_rng(1);
    CHECK_THROWS_AS(
        pipe.make_pair_sample(*m.split_clips(Split::test)[0], SampleMode::eval, rng),
        ConfigError);
}

TEST_CASE("early stopping halts after patience non-improving epochs") {
    EarlyStopper st(2);
    CHECK(st.observe(1.0));
    CHECK_FALSE(st.observe(1.5));
    CHECK_FALSE(st.should_stop());
    CHECK_FALSE(st.observe(1.2));
    CHECK(st.should_stop());
    CHECK(st.best() == 1.0);
}

TEST_CASE("epoch plan repeats each clip pairs_per_clip times") {
    const DatasetManifest& m = train_dataset();
    auto clips = m.split_clips(Split::train);
    Rng rng = make_rng(4);
    auto plan = train_detail::epoch_plan(clips, 3, rng);
    CHECK(plan.size() == clips.size() * 3);
    std::map<const ClipRecord*, int> tally;
    for (const auto* c : plan) ++tally[c];
    for (const auto* c : clips) CHECK(tally[c] == 3);
}
