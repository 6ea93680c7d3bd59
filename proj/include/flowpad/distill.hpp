#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "flowpad/config.hpp"
#include "flowpad/flow.hpp"
#include "flowpad/ingest.hpp"
#include "flowpad/metrics.hpp"
#include "flowpad/models.hpp"
#include "flowpad/preprocess.hpp"

namespace flowpad {

// ---------------------------------------------------------------------------
// KD objective: L = (1-alpha) * CE(y, s_S) + alpha * T^2 * KL(p_T || p_S)
// with p_T = softmax(s_T / T), p_S = softmax(s_S / T). Teacher logits are
// constants; KL direction is teacher-as-reference.
// ---------------------------------------------------------------------------

struct KDConfig {
    double temperature = 3.0;
    double alpha = 0.7;
};

inline KDConfig kd_config(const json& cfg) {
    return {cfg["kd"]["temperature"].get<double>(), cfg["kd"]["alpha"].get<double>()};
}

struct LogitPair {
    double s_teacher[2];
    double s_student[2];
    int y;  // 0 attack, 1 bonafide
};

struct KDLossResult {
    double loss = 0;
    std::vector<std::array<double, 2>> grad_student;  // d loss / d s_S
};

namespace kd_detail {

inline void softmax2(const double s[2], double T, double out[2]) {
    double a = s[0] / T, b = s[1] / T;
    double m = std::max(a, b);
    double ea = std::exp(a - m), eb = std::exp(b - m);
    double z = ea + eb;
    out[0] = ea / z;
    out[1] = eb / z;
}

}  // namespace kd_detail

inline KDLossResult kd_loss(const std::vector<LogitPair>& batch, const KDConfig& kd) {
    if (kd.temperature <= 0) throw ContractError("KD temperature must be > 0");
    if (kd.alpha < 0 || kd.alpha > 1) throw ContractError("KD alpha must be in [0,1]");
    if (batch.empty()) throw ContractError("kd_loss: empty batch");
    for (const auto& p : batch)
        for (int i = 0; i < 2; ++i)
            if (!std::isfinite(p.s_teacher[i]) || !std::isfinite(p.s_student[i]))
                throw NumericError("kd_loss: non-finite logits");

    KDLossResult r;
    r.grad_student.resize(batch.size());
    const double T = kd.temperature, a = kd.alpha;
    const double inv_b = 1.0 / batch.size();
    for (size_t i = 0; i < batch.size(); ++i) {
        const LogitPair& lp = batch[i];
        double ps[2], pt[2], qs[2];
        kd_detail::softmax2(lp.s_student, 1.0, ps);   // hard posterior
        kd_detail::softmax2(lp.s_teacher, T, pt);     // softened teacher
        kd_detail::softmax2(lp.s_student, T, qs);     // softened student
        double ce = -std::log(std::max(ps[lp.y], 1e-300));
        double kl = 0;
        for (int c = 0; c < 2; ++c)
            if (pt[c] > 0) kl += pt[c] * (std::log(pt[c]) - std::log(std::max(qs[c], 1e-300)));
        r.loss += ((1 - a) * ce + a * T * T * kl) * inv_b;
        for (int c = 0; c < 2; ++c) {
            double g_ce = ps[c] - (c == lp.y ? 1.0 : 0.0);
            double g_kl = T * (qs[c] - pt[c]);  // T^2 * (1/T) * (q - p)
            r.grad_student[i][c] = ((1 - a) * g_ce + a * g_kl) * inv_b;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Data pipeline shared by training and evaluation
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size_train = 16;
    int batch_size_eval = 256;
    int max_epochs = 100;
    int patience = 20;
    int pairs_per_clip = 4;
};

inline TrainConfig train_config(const json& cfg) {
    TrainConfig t;
    t.learning_rate = cfg["train"]["learning_rate"].get<double>();
    t.batch_size_train = cfg["train"]["batch_size_train"].get<int>();
    t.batch_size_eval = cfg["train"]["batch_size_eval"].get<int>();
    t.max_epochs = cfg["train"]["max_epochs"].get<int>();
    t.patience = cfg["train"]["patience"].get<int>();
    t.pairs_per_clip = cfg["train"]["pairs_per_clip"].get<int>();
    return t;
}

// Builds aligned model inputs from a clip. Flow estimation runs on-the-fly
// through the configured engine; for the `exact` engine the stored .flo of
// the sampled pair is handed over as a hint.
struct Pipeline {
    SyncAugConfig aug;
    NormStats stats;
    int delta_t = 1;
    double brightness_jitter = 0;  // train-time global gain on the RGB branch
    FlowEngine* engine = nullptr;  // may be null for RGB-only paths

    static Pipeline from_config(const json& cfg, FlowEngine* eng) {
        Pipeline p;
        p.aug = sync_aug_config(cfg);
        p.stats = norm_stats(cfg);
        p.delta_t = cfg["dataset"]["delta_t"].get<int>();
        p.brightness_jitter = cfg["preprocess"]["brightness_jitter"].get<double>();
        p.engine = eng;
        return p;
    }

    // Photometric jitter is RGB-only and train-only: it breaks the shortcut
    // of keying the posterior on per-subject brightness, and deliberately
    // leaves the flow image untouched (SyncAug shares geometry, not light).
    Image jitter_rgb(const Image& img, SampleMode mode, Rng& rng) const {
        if (mode != SampleMode::train || brightness_jitter == 0) return img;
        float g = static_cast<float>(
            urand(rng, 1 - brightness_jitter, 1 + brightness_jitter));
        Image out = img;
        for (auto& v : out.data) v = std::clamp(v * g, 0.f, 1.f);
        return out;
    }

    SamplePair make_pair_sample(const ClipRecord& clip, SampleMode mode,
                                Rng& rng) const {
        if (!engine)
            throw ConfigError("this path needs a flow engine but none is configured");
        FramePair fp;
        try {
            fp = sample_pair(clip, mode, delta_t, rng);
        } catch (const ContractError& e) {
            throw ContractError(std::string(e.what()) + " (clip " + clip.clip_id + ")");
        }
        FlowHint hint{delta_t == 1 ? clip.flow_path(fp.t) : std::string{}};
        FlowField flow = estimate_flow(*engine, fp.reference, fp.adjacent, &hint);
        AugmentedPair ap = sync_augment(fp.reference, flow, mode, rng, aug);
        SamplePair s;
        s.rgb = normalize_rgb(jitter_rgb(ap.rgb, mode, rng), stats);
        s.flow_img = ap.flow_img;
        s.label = clip.label;
        s.clip_id = clip.clip_id;
        return s;
    }

    // RGB-only sample; never touches a flow engine.
    std::pair<Image, Label> make_rgb_sample(const ClipRecord& clip, SampleMode mode,
                                            Rng& rng) const {
        FramePair fp = sample_pair(clip, mode, delta_t, rng);
        SyncAugParams p;
        if (mode == SampleMode::train) p = sample_aug_params(rng, aug);
        Image rgb = apply_geometry(fp.reference, p, aug.rho);
        return {normalize_rgb(jitter_rgb(rgb, mode, rng), stats), clip.label};
    }
};

// ---------------------------------------------------------------------------
// Evaluation (deterministic: first frame, crop + resize only)
// ---------------------------------------------------------------------------

inline ScoreSet evaluate_teacher(TeacherModel& model, const DatasetManifest& m,
                                 Split split, const Pipeline& pipe, int batch_size) {
    auto clips = m.split_clips(split);
    if (clips.empty())
        throw ConfigError("split '" + to_string(split) + "' is empty");
    ScoreSet scores;
    Rng rng = make_rng(0);  // unused on the eval path
    for (size_t start = 0; start < clips.size(); start += batch_size) {
        size_t end = std::min(clips.size(), start + batch_size);
        std::vector<SamplePair> samples;
        for (size_t i = start; i < end; ++i)
            samples.push_back(pipe.make_pair_sample(*clips[i], SampleMode::eval, rng));
        std::vector<const Image*> rgbs, flows;
        for (const auto& s : samples) {
            rgbs.push_back(&s.rgb);
            flows.push_back(&s.flow_img);
        }
        nn::Tensor logits = model.forward(batch_from_images(rgbs),
                                          batch_from_images(flows), false);
        auto post = posteriors(logits);
        for (size_t i = 0; i < samples.size(); ++i)
            scores.push(post[i][1], static_cast<int>(samples[i].label),
                        samples[i].clip_id);
    }
    return scores;
}

inline ScoreSet evaluate_student(StudentModel& model, const DatasetManifest& m,
                                 Split split, const Pipeline& pipe, int batch_size) {
    auto clips = m.split_clips(split);
    if (clips.empty())
        throw ConfigError("split '" + to_string(split) + "' is empty");
    ScoreSet scores;
    Rng rng = make_rng(0);
    for (size_t start = 0; start < clips.size(); start += batch_size) {
        size_t end = std::min(clips.size(), start + batch_size);
        std::vector<Image> rgbs;
        std::vector<Label> labels;
        std::vector<std::string> ids;
        for (size_t i = start; i < end; ++i) {
            auto [img, lab] = pipe.make_rgb_sample(*clips[i], SampleMode::eval, rng);
            rgbs.push_back(std::move(img));
            labels.push_back(lab);
            ids.push_back(clips[i]->clip_id);
        }
        std::vector<const Image*> ptrs;
        for (const auto& r : rgbs) ptrs.push_back(&r);
        auto post = posteriors(model.forward(batch_from_images(ptrs), false));
        for (size_t i = 0; i < rgbs.size(); ++i)
            scores.push(post[i][1], static_cast<int>(labels[i]), ids[i]);
    }
    return scores;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

// Lower is better. Counts epochs since the best; stops after `patience`
// non-improving epochs.
class EarlyStopper {
  public:
    explicit EarlyStopper(int patience) : patience_(patience) {}
    // returns true if this epoch improved on the best
    bool observe(double metric) {
        if (metric < best_) {
            best_ = metric;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }
    bool should_stop() const { return since_best_ >= patience_; }
    double best() const { return best_; }

  private:
    int patience_;
    int since_best_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
    int epoch;
    double train_loss;
    double dev_metric;  // HTER at dev EER, or 1-accuracy fallback
    double dev_accuracy;
    double wall_seconds;
    bool improved;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_metric = 0;
    int stopped_epoch = -1;

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write training log: " + path);
        for (const auto& e : epochs) {
            char buf[256];
            std::snprintf(buf, sizeof buf,
                          "epoch=%d split=dev loss=%.9g accuracy=%.9g hter=%.9g "
                          "wall=%.3f improved=%d",
                          e.epoch, e.train_loss, e.dev_accuracy, e.dev_metric,
                          e.wall_seconds, e.improved ? 1 : 0);
            out << buf << '\n';
        }
        out << "best_epoch=" << best_epoch << " best_metric=" << best_metric
            << " stopped_epoch=" << stopped_epoch << '\n';
    }
};

namespace train_detail {

inline std::vector<float> snapshot(const std::vector<nn::Param*>& params) {
    std::vector<float> out;
    for (const nn::Param* p : params) out.insert(out.end(), p->w.begin(), p->w.end());
    return out;
}

inline void restore(const std::vector<nn::Param*>& params,
                    const std::vector<float>& snap) {
    size_t off = 0;
    for (nn::Param* p : params) {
        std::copy_n(snap.begin() + off, p->size(), p->w.begin());
        off += p->size();
    }
}

// Dev metric for early stopping: HTER at the dev EER threshold when both
// classes are present, else 1 - accuracy at threshold 0.5. A small mean
// cross-entropy tiebreaker keeps the metric strictly improving while HTER is
// saturated (tiny dev splits quantize HTER coarsely), so the best-weights
// snapshot tracks the most confident epoch rather than the first lucky one.
inline std::pair<double, double> dev_metric(const ScoreSet& s) {
    double acc;
    {
        Confusion c = confusion_at(s, 0.5);
        acc = static_cast<double>(c.tp + c.tn) / s.size();
    }
    double ce = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        double p = s.labels[i] == 1 ? s.scores[i] : 1.0 - s.scores[i];
        ce += -std::log(std::max(p, 1e-12));
    }
    ce /= s.size();
    if (s.n_pos() > 0 && s.n_neg() > 0) {
        HterResult h = hter_at(s, ThresholdPolicy::TestEer());
        return {h.hter + 1e-3 * ce, acc};
    }
    return {1.0 - acc + 1e-3 * ce, acc};
}

// Epoch sample plan: pairs_per_clip draws per train clip, shuffled.
inline std::vector<const ClipRecord*> epoch_plan(
    const std::vector<const ClipRecord*>& clips, int pairs_per_clip, Rng& rng) {
    std::vector<const ClipRecord*> plan;
    for (const auto* c : clips)
        for (int k = 0; k < pairs_per_clip; ++k) plan.push_back(c);
    std::shuffle(plan.begin(), plan.end(), rng);
    return plan;
}

inline double ce_loss_and_grad(const nn::Tensor& logits,
                               const std::vector<int>& ys, nn::Tensor& grad) {
    grad = nn::Tensor(logits.n, 2, 1, 1);
    double loss = 0;
    const double inv_b = 1.0 / logits.n;
    for (int i = 0; i < logits.n; ++i) {
        double p[2];
        nn::softmax_row(logits.sample(i), 2, p);
        loss += -std::log(std::max(p[ys[i]], 1e-300)) * inv_b;
        for (int c = 0; c < 2; ++c)
            grad.sample(i)[c] =
                static_cast<float>((p[c] - (c == ys[i] ? 1.0 : 0.0)) * inv_b);
    }
    return loss;
}

}  // namespace train_detail

// Teacher: Adam + cross-entropy, per-epoch dev evaluation, early stopping,
// best-dev weights restored at the end.
inline TrainLog train_teacher(const DatasetManifest& m, FlowEngine& engine,
                              TeacherModel& model, const json& cfg,
                              std::uint64_t seed) {
    TrainConfig tc = train_config(cfg);
    Pipeline pipe = Pipeline::from_config(cfg, &engine);
    auto train_clips = m.split_clips(Split::train);
    if (train_clips.empty()) throw ConfigError("train split is empty");
    if (m.split_clips(Split::dev).empty()) throw ConfigError("dev split is empty");

    nn::Adam opt(model.params(), {tc.learning_rate});
    EarlyStopper stopper(tc.patience);
    TrainLog log;
    std::vector<float> best = train_detail::snapshot(model.params());

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng rng = make_rng(seed, 0, epoch);
        auto plan = train_detail::epoch_plan(train_clips, tc.pairs_per_clip, rng);
        double epoch_loss = 0;
        int n_batches = 0;
        for (size_t start = 0; start < plan.size(); start += tc.batch_size_train) {
            size_t end = std::min(plan.size(), start + tc.batch_size_train);
            std::vector<SamplePair> samples;
            for (size_t i = start; i < end; ++i)
                samples.push_back(
                    pipe.make_pair_sample(*plan[i], SampleMode::train, rng));
            std::vector<const Image*> rgbs, flows;
            std::vector<int> ys;
            for (const auto& s : samples) {
                rgbs.push_back(&s.rgb);
                flows.push_back(&s.flow_img);
                ys.push_back(static_cast<int>(s.label));
            }
            opt.zero_grad();
            nn::Tensor logits = model.forward(batch_from_images(rgbs),
                                              batch_from_images(flows), true);
            nn::Tensor grad;
            epoch_loss += train_detail::ce_loss_and_grad(logits, ys, grad);
            model.backward(grad);
            opt.step();
            ++n_batches;
        }
        epoch_loss /= n_batches;
        ScoreSet dev = evaluate_teacher(model, m, Split::dev, pipe, tc.batch_size_eval);
        auto [metric, acc] = train_detail::dev_metric(dev);
        bool improved = stopper.observe(metric);
        if (improved) {
            best = train_detail::snapshot(model.params());
            log.best_epoch = epoch;
            log.best_metric = metric;
        }
        double wall = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back({epoch, epoch_loss, metric, acc, wall, improved});
        log.stopped_epoch = epoch;
        if (stopper.should_stop()) break;
    }
    train_detail::restore(model.params(), best);
    return log;
}

// Student: frozen teacher logits on (RGB, flow), student trained on the same
// samples' RGB with the KD objective.
inline TrainLog distill_student(const DatasetManifest& m, FlowEngine& engine,
                                TeacherModel& teacher, StudentModel& student,
                                const json& cfg, std::uint64_t seed) {
    TrainConfig tc = train_config(cfg);
    KDConfig kd = kd_config(cfg);
    Pipeline pipe = Pipeline::from_config(cfg, &engine);
    auto train_clips = m.split_clips(Split::train);
    if (train_clips.empty()) throw ConfigError("train split is empty");
    if (m.split_clips(Split::dev).empty()) throw ConfigError("dev split is empty");

    nn::Adam opt(student.params(), {tc.learning_rate});
    EarlyStopper stopper(tc.patience);
    TrainLog log;
    std::vector<float> best = train_detail::snapshot(student.params());

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng rng = make_rng(seed, 0, epoch);
        auto plan = train_detail::epoch_plan(train_clips, tc.pairs_per_clip, rng);
        double epoch_loss = 0;
        int n_batches = 0;
        for (size_t start = 0; start < plan.size(); start += tc.batch_size_train) {
            size_t end = std::min(plan.size(), start + tc.batch_size_train);
            std::vector<SamplePair> samples;
            for (size_t i = start; i < end; ++i)
                samples.push_back(
                    pipe.make_pair_sample(*plan[i], SampleMode::train, rng));
            std::vector<const Image*> rgbs, flows;
            for (const auto& s : samples) {
                rgbs.push_back(&s.rgb);
                flows.push_back(&s.flow_img);
            }
            nn::Tensor rgb_batch = batch_from_images(rgbs);
            nn::Tensor t_logits =
                teacher.forward(rgb_batch, batch_from_images(flows), false);
            nn::Tensor s_logits = student.forward(rgb_batch, true);
            std::vector<LogitPair> pairs(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) {
                int ii = static_cast<int>(i);
                pairs[i] = {{t_logits.sample(ii)[0], t_logits.sample(ii)[1]},
                            {s_logits.sample(ii)[0], s_logits.sample(ii)[1]},
                            static_cast<int>(samples[i].label)};
            }
            KDLossResult kr = kd_loss(pairs, kd);
            epoch_loss += kr.loss;
            nn::Tensor grad(s_logits.n, 2, 1, 1);
            for (int i = 0; i < s_logits.n; ++i)
                for (int c = 0; c < 2; ++c)
                    grad.sample(i)[c] = static_cast<float>(kr.grad_student[i][c]);
            opt.zero_grad();
            student.backward(grad);
            opt.step();
            ++n_batches;
        }
        epoch_loss /= n_batches;
        Pipeline rgb_pipe = pipe;  // student dev eval needs no engine calls
        ScoreSet dev =
            evaluate_student(student, m, Split::dev, rgb_pipe, tc.batch_size_eval);
        auto [metric, acc] = train_detail::dev_metric(dev);
        bool improved = stopper.observe(metric);
        if (improved) {
            best = train_detail::snapshot(student.params());
            log.best_epoch = epoch;
            log.best_metric = metric;
        }
        double wall = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back({epoch, epoch_loss, metric, acc, wall, improved});
        log.stopped_epoch = epoch;
        if (stopper.should_stop()) break;
    }
    train_detail::restore(student.params(), best);
    return log;
}

}  // namespace flowpad
