// flowpad command-line front end: dataset synthesis, teacher training,
// distillation, evaluation, grad-CAM overlays, and throughput benchmarking.

#include <sys/resource.h>
#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowpad/flowpad.hpp"

using namespace flowpad;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_opts(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "experiment config file (JSON)");
    cmd->add_option("--set", o.overrides,
                    "override a config field, e.g. --set kd.alpha=0.5");
}

json resolve_from(const CommonOpts& o) {
    json user = json::object();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw IoError("cannot read config file: " + o.config_path);
        try {
            in >> user;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
    }
    for (const auto& kv : o.overrides) apply_override(user, kv);
    return resolve_config(user);
}

std::unique_ptr<FlowEngine> engine_from(const json& cfg) {
    return make_flow_engine(cfg["flow"]["engine"].get<std::string>());
}

std::string manifest_path(const json& cfg, const std::string& cli_data) {
    if (!cli_data.empty()) return cli_data;
    std::string m = cfg["dataset"]["manifest"].get<std::string>();
    if (m.empty())
        throw ConfigError("no dataset given: pass --data or set dataset.manifest");
    return m;
}

ThresholdPolicy parse_policy(const std::string& spec, const ScoreSet* dev) {
    if (spec == "dev-eer") {
        if (!dev) throw ConfigError("dev-eer policy needs dev scores");
        return ThresholdPolicy::DevEer(*dev);
    }
    if (spec == "test-eer") return ThresholdPolicy::TestEer();
    if (spec.rfind("fixed:", 0) == 0)
        return ThresholdPolicy::Fixed(std::stod(spec.substr(6)));
    throw ConfigError("unknown threshold policy: " + spec +
                      " (expected dev-eer, test-eer, or fixed:<tau>)");
}

void write_resolved_config(const json& cfg, const fs::path& dir) {
    std::ofstream out(dir / "config.json");
    out << cfg.dump(2) << '\n';
}

void print_report(const EvalReport& r) {
    for (const auto& [k, v] : report_kv(r)) std::printf("%s=%s\n", k.c_str(), v.c_str());
}

// Per-seed evaluation artifacts inside a run directory; returns the test report.
template <typename EvalFn>
EvalReport run_dir_eval(EvalFn&& eval_split, const fs::path& dir,
                        const std::string& engine_name) {
    ScoreSet dev = eval_split(Split::dev);
    ScoreSet test = eval_split(Split::test);
    write_score_csv(dev, (dir / "scores_dev.csv").string());
    write_score_csv(test, (dir / "scores_test.csv").string());
    EvalReport rep = evaluate_scores(test, ThresholdPolicy::DevEer(dev), engine_name);
    write_report(rep, (dir / "report.txt").string());
    write_roc_csv(sweep(test), (dir / "roc_test.csv").string());
    return rep;
}

void write_mean_report(const std::vector<EvalReport>& reps, const fs::path& path) {
    if (reps.empty()) return;
    auto mean = [&](auto getter) {
        double s = 0;
        for (const auto& r : reps) s += getter(r);
        return s / reps.size();
    };
    EvalReport m = reps.front();
    m.accuracy = mean([](const EvalReport& r) { return r.accuracy; });
    m.auc_roc = mean([](const EvalReport& r) { return r.auc_roc; });
    m.eer = mean([](const EvalReport& r) { return r.eer; });
    m.eer_threshold = mean([](const EvalReport& r) { return r.eer_threshold; });
    m.hter = mean([](const EvalReport& r) { return r.hter; });
    m.far = mean([](const EvalReport& r) { return r.far; });
    m.frr = mean([](const EvalReport& r) { return r.frr; });
    m.operating_threshold = mean([](const EvalReport& r) { return r.operating_threshold; });
    m.youden = mean([](const EvalReport& r) { return r.youden; });
    m.apcer = mean([](const EvalReport& r) { return r.apcer; });
    m.bpcer = mean([](const EvalReport& r) { return r.bpcer; });
    m.acer = mean([](const EvalReport& r) { return r.acer; });
    std::ofstream out(path);
    out << "seeds=" << reps.size() << '\n';
    for (const auto& [k, v] : report_kv(m)) out << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

int cmd_synth_data(const SynthConfig& sc, const std::string& out_dir) {
    DatasetManifest m = generate_synthetic_dataset(sc, out_dir);
    std::printf("wrote %zu clips to %s\n", m.clips.size(), out_dir.c_str());
    for (Split s : {Split::train, Split::dev, Split::test}) {
        auto counts = m.counts();
        std::printf("  %s: %d bonafide, %d attack\n", to_string(s).c_str(),
                    counts[{s, Label::bonafide}], counts[{s, Label::attack}]);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train-teacher / distill
// ---------------------------------------------------------------------------

int cmd_train_teacher(const CommonOpts& o, const std::string& data,
                      const std::string& runs_root) {
    json cfg = resolve_from(o);
    DatasetManifest m = load_manifest(manifest_path(cfg, data));
    auto engine = engine_from(cfg);
    if (!engine) throw ConfigError("teacher training requires a flow engine");
    std::string hash = config_hash(cfg);
    std::vector<EvalReport> reports;
    for (const auto& s : cfg["seeds"]) {
        std::uint64_t seed = s.get<std::uint64_t>();
        fs::path dir = fs::path(runs_root) / hash / std::to_string(seed);
        fs::create_directories(dir);
        write_resolved_config(cfg, dir);
        std::printf("seed %llu -> %s\n",
                    static_cast<unsigned long long>(seed), dir.string().c_str());
        TeacherModel model(cfg, seed);
        TrainLog log = train_teacher(m, *engine, model, cfg, seed);
        log.write((dir / "log.txt").string());
        save_checkpoint(model, "teacher", (dir / "checkpoint.bin").string());
        Pipeline pipe = Pipeline::from_config(cfg, engine.get());
        int eb = cfg["train"]["batch_size_eval"].get<int>();
        EvalReport rep = run_dir_eval(
            [&](Split sp) { return evaluate_teacher(model, m, sp, pipe, eb); },
            dir, engine->name());
        std::printf("  epochs=%zu best_epoch=%d test_hter=%.4f test_acc=%.4f\n",
                    log.epochs.size(), log.best_epoch, rep.hter, rep.accuracy);
        reports.push_back(rep);
    }
    write_mean_report(reports, fs::path(runs_root) / hash / "mean_report.txt");
    return 0;
}

int cmd_distill(const CommonOpts& o, const std::string& teacher_ckpt,
                const std::string& data, const std::string& runs_root) {
    json cfg = resolve_from(o);
    CheckpointHeader hdr = peek_checkpoint(teacher_ckpt);
    if (hdr.kind != "teacher")
        throw ConfigError("--teacher must point at a teacher checkpoint, got '" +
                          hdr.kind + "'");
    if (hdr.config["preprocess"]["mean"] != cfg["preprocess"]["mean"] ||
        hdr.config["preprocess"]["std"] != cfg["preprocess"]["std"] ||
        hdr.config["preprocess"]["rho"] != cfg["preprocess"]["rho"])
        throw ConfigError(
            "teacher checkpoint preprocessing (rho/mean/std) does not match the "
            "distillation config; refusing to distill across normalizations");
    TeacherModel teacher = load_checkpoint<TeacherModel>(teacher_ckpt, "teacher");
    DatasetManifest m = load_manifest(manifest_path(cfg, data));
    auto engine = engine_from(cfg);
    if (!engine) throw ConfigError("distillation requires a flow engine for the teacher");
    std::string hash = config_hash(cfg);
    std::vector<EvalReport> reports;
    for (const auto& s : cfg["seeds"]) {
        std::uint64_t seed = s.get<std::uint64_t>();
        fs::path dir = fs::path(runs_root) / hash / std::to_string(seed);
        fs::create_directories(dir);
        write_resolved_config(cfg, dir);
        std::printf("seed %llu -> %s\n",
                    static_cast<unsigned long long>(seed), dir.string().c_str());
        StudentModel student(cfg, seed);
        TrainLog log = distill_student(m, *engine, teacher, student, cfg, seed);
        log.write((dir / "log.txt").string());
        save_checkpoint(student, "student", (dir / "checkpoint.bin").string());
        Pipeline pipe = Pipeline::from_config(cfg, nullptr);
        int eb = cfg["train"]["batch_size_eval"].get<int>();
        EvalReport rep = run_dir_eval(
            [&](Split sp) { return evaluate_student(student, m, sp, pipe, eb); },
            dir, "none");
        std::printf("  epochs=%zu best_epoch=%d test_hter=%.4f test_acc=%.4f\n",
                    log.epochs.size(), log.best_epoch, rep.hter, rep.accuracy);
        reports.push_back(rep);
    }
    write_mean_report(reports, fs::path(runs_root) / hash / "mean_report.txt");
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const std::string& ckpt, const std::string& data,
                 const std::string& split_name, const std::string& policy_spec,
                 const std::string& out_dir) {
    CheckpointHeader hdr = peek_checkpoint(ckpt);
    json cfg = hdr.config;  // evaluate with the checkpoint's own preprocessing
    Split split = split_from_string(split_name);
    DatasetManifest m = load_manifest(manifest_path(cfg, data));
    fs::create_directories(out_dir);
    int eb = cfg["train"]["batch_size_eval"].get<int>();

    ScoreSet scores, dev;
    std::string engine_name;
    if (hdr.kind == "teacher") {
        TeacherModel model = load_checkpoint<TeacherModel>(ckpt, "teacher");
        auto engine = engine_from(cfg);
        if (!engine) throw ConfigError("teacher evaluation requires a flow engine");
        Pipeline pipe = Pipeline::from_config(cfg, engine.get());
        scores = evaluate_teacher(model, m, split, pipe, eb);
        if (policy_spec == "dev-eer")
            dev = evaluate_teacher(model, m, Split::dev, pipe, eb);
        engine_name = engine->name();
    } else if (hdr.kind == "student") {
        StudentModel model = load_checkpoint<StudentModel>(ckpt, "student");
        Pipeline pipe = Pipeline::from_config(cfg, nullptr);  // no flow engine
        scores = evaluate_student(model, m, split, pipe, eb);
        if (policy_spec == "dev-eer")
            dev = evaluate_student(model, m, Split::dev, pipe, eb);
        engine_name = "none";
    } else {
        throw IoError("unknown checkpoint kind: " + hdr.kind);
    }

    ThresholdPolicy policy = parse_policy(policy_spec, dev.size() ? &dev : nullptr);
    EvalReport rep = evaluate_scores(scores, policy, engine_name);
    fs::path out(out_dir);
    write_score_csv(scores, (out / ("scores_" + split_name + ".csv")).string());
    write_report(rep, (out / "report.txt").string());
    write_roc_csv(sweep(scores), (out / ("roc_" + split_name + ".csv")).string());
    print_report(rep);
    return 0;
}

// ---------------------------------------------------------------------------
// gradcam
// ---------------------------------------------------------------------------

Image load_eval_rgb(const json& cfg, const Image& raw) {
    int rho = cfg["preprocess"]["rho"].get<int>();
    return normalize_rgb(apply_geometry(raw, {}, rho), norm_stats(cfg));
}

int cmd_gradcam(const std::string& ckpt, const std::string& image_path,
                const std::string& data, const std::string& clip_id,
                const std::string& layer, const std::string& out_prefix) {
    CheckpointHeader hdr = peek_checkpoint(ckpt);
    json cfg = hdr.config;
    NormStats stats = norm_stats(cfg);

    auto emit = [&](const Image& normalized, const GradCamResult& cam,
                    const std::string& suffix) {
        Image base = denormalize_rgb(normalized, stats);
        std::string path = out_prefix + suffix + ".png";
        save_png(overlay_heatmap(base, cam), path);
        std::printf("wrote %s\n", path.c_str());
    };

    if (hdr.kind == "student") {
        if (image_path.empty() && clip_id.empty())
            throw ConfigError("gradcam needs --image or (--data and --clip)");
        StudentModel model = load_checkpoint<StudentModel>(ckpt, "student");
        Image raw;
        if (!image_path.empty()) {
            raw = load_png(image_path);
        } else {
            DatasetManifest m = load_manifest(manifest_path(cfg, data));
            Rng rng = make_rng(0);
            for (const auto& c : m.clips)
                if (c.clip_id == clip_id) raw = c.load_frame(0);
            if (raw.height == 0) throw IoError("clip not found: " + clip_id);
        }
        Image rgb = load_eval_rgb(cfg, raw);
        nn::Tensor in = batch_from_images({&rgb});
        int idx = gradcam_detail::resolve_layer(model.rgb_encoder.net, layer,
                                                model.rgb_encoder.last_conv_idx);
        GradCamResult cam =
            gradcam_encoder(model.rgb_encoder, model.head, in, idx, nullptr, false);
        emit(rgb, cam, "_rgb");
        return 0;
    }
    if (hdr.kind != "teacher") throw IoError("unknown checkpoint kind: " + hdr.kind);

    // teacher: needs the paired sample, one overlay per branch
    if (clip_id.empty())
        throw ConfigError("teacher gradcam needs --data and --clip (paired input)");
    TeacherModel model = load_checkpoint<TeacherModel>(ckpt, "teacher");
    DatasetManifest m = load_manifest(manifest_path(cfg, data));
    const ClipRecord* clip = nullptr;
    for (const auto& c : m.clips)
        if (c.clip_id == clip_id) clip = &c;
    if (!clip) throw IoError("clip not found: " + clip_id);
    auto engine = engine_from(cfg);
    if (!engine) throw ConfigError("teacher gradcam requires a flow engine");
    Pipeline pipe = Pipeline::from_config(cfg, engine.get());
    Rng rng = make_rng(0);
    SamplePair s = pipe.make_pair_sample(*clip, SampleMode::eval, rng);
    nn::Tensor rgb = batch_from_images({&s.rgb});
    nn::Tensor flow = batch_from_images({&s.flow_img});
    nn::Tensor rgb_feat = model.rgb_encoder.net.forward(rgb, false);
    nn::Tensor flow_feat = model.flow_encoder.net.forward(flow, false);

    int ri = gradcam_detail::resolve_layer(model.rgb_encoder.net, layer,
                                           model.rgb_encoder.last_conv_idx);
    GradCamResult rcam = gradcam_encoder(model.rgb_encoder, model.head, rgb, ri,
                                         &flow_feat, false);
    emit(s.rgb, rcam, "_rgb");

    int fi = gradcam_detail::resolve_layer(model.flow_encoder.net, layer,
                                           model.flow_encoder.last_conv_idx);
    GradCamResult fcam = gradcam_encoder(model.flow_encoder, model.head, flow, fi,
                                         &rgb_feat, true);
    // the flow image is already in [0,1]; skip denormalization
    save_png(overlay_heatmap(s.flow_img, fcam), out_prefix + "_flow.png");
    std::printf("wrote %s_flow.png\n", out_prefix.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int cmd_bench(const std::string& ckpt, int batch_size, int n_warmup, int n_iter) {
    if (n_iter <= 0) throw ConfigError("bench needs n_iter >= 1");
    if (batch_size <= 0) throw ConfigError("bench needs batch_size >= 1");
    CheckpointHeader hdr = peek_checkpoint(ckpt);
    json cfg = hdr.config;
    int rho = cfg["preprocess"]["rho"].get<int>();

    Rng rng = make_rng(0);
    auto random_batch = [&](int n) {
        nn::Tensor t(n, 3, rho, rho);
        for (auto& v : t.v) v = static_cast<float>(urand(rng, 0, 1));
        return t;
    };
    auto random_image = [&]() {
        Image img(rho, rho);
        for (auto& v : img.data) v = static_cast<float>(urand(rng, 0, 1));
        return img;
    };

    std::function<void()> one_iter;
    std::string kind = hdr.kind;
    std::unique_ptr<TeacherModel> teacher;
    std::unique_ptr<StudentModel> student;
    std::unique_ptr<ClassicalFlowEngine> flow_engine;
    if (kind == "teacher") {
        teacher = std::make_unique<TeacherModel>(
            load_checkpoint<TeacherModel>(ckpt, "teacher"));
        // teacher inference includes on-the-fly flow estimation
        flow_engine = std::make_unique<ClassicalFlowEngine>();
        Image a = random_image(), b = random_image();
        nn::Tensor rgb = random_batch(batch_size);
        one_iter = [batch_size, a, b, rgb, this_t = teacher.get(),
                    eng = flow_engine.get()]() mutable {
            FlowField f = estimate_flow(*eng, a, b);
            Image enc = colorwheel_encode(f);
            std::vector<const Image*> flows(batch_size, &enc);
            this_t->forward(rgb, batch_from_images(flows), false);
        };
    } else if (kind == "student") {
        student = std::make_unique<StudentModel>(
            load_checkpoint<StudentModel>(ckpt, "student"));
        nn::Tensor rgb = random_batch(batch_size);
        one_iter = [rgb, this_s = student.get()]() mutable {
            this_s->forward(rgb, false);
        };
    } else {
        throw IoError("unknown checkpoint kind: " + kind);
    }

    for (int i = 0; i < n_warmup; ++i) one_iter();
    std::vector<double> lat;
    auto total0 = Clock::now();
    for (int i = 0; i < n_iter; ++i) {
        auto t0 = Clock::now();
        one_iter();
        lat.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    double total = std::chrono::duration<double>(Clock::now() - total0).count();
    std::sort(lat.begin(), lat.end());
    auto pct = [&](double p) {
        size_t i = std::min(lat.size() - 1,
                            static_cast<size_t>(p * (lat.size() - 1) + 0.5));
        return lat[i];
    };
    struct rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    struct utsname un{};
    uname(&un);

    std::printf("kind=%s\n", kind.c_str());
    std::printf("hardware=%s %s\n", un.machine, un.sysname);
    std::printf("batch_size=%d n_warmup=%d n_iter=%d\n", batch_size, n_warmup, n_iter);
    std::printf("throughput_samples_per_s=%.3f\n", batch_size * n_iter / total);
    std::printf("latency_p50_ms=%.3f\n", pct(0.50) * 1e3);
    std::printf("latency_p90_ms=%.3f\n", pct(0.90) * 1e3);
    std::printf("latency_max_ms=%.3f\n", lat.back() * 1e3);
    std::printf("per_sample_latency_ms=%.3f\n", pct(0.50) * 1e3 / batch_size);
    std::printf("fps_equivalent=%.3f\n", 1.0 / pct(0.50) * batch_size);
    std::printf("peak_rss_mb=%.1f\n", ru.ru_maxrss / 1024.0);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training and evaluation toolkit for motion-aware face "
                 "presentation-attack detection"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate the synthetic dataset");
    SynthConfig sc;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--subjects", sc.n_subjects, "number of subjects");
    synth->add_option("--clips-per-subject", sc.clips_per_subject, "clips per subject");
    synth->add_option("--frames", sc.frames_per_clip, "frames per clip");
    synth->add_option("--height", sc.height, "frame height");
    synth->add_option("--width", sc.width, "frame width");
    synth->add_option("--seed", sc.seed, "generation seed");

    // train-teacher
    auto* train = app.add_subcommand("train-teacher", "train the dual-branch teacher");
    CommonOpts train_o;
    std::string train_data, train_runs = "runs";
    add_config_opts(train, train_o);
    train->add_option("--data", train_data, "dataset directory or manifest");
    train->add_option("--runs", train_runs, "root directory for run artifacts");

    // distill
    auto* dist = app.add_subcommand("distill", "distill an RGB-only student");
    CommonOpts dist_o;
    std::string dist_teacher, dist_data, dist_runs = "runs";
    add_config_opts(dist, dist_o);
    dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
    dist->add_option("--data", dist_data, "dataset directory or manifest");
    dist->add_option("--runs", dist_runs, "root directory for run artifacts");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_policy = "dev-eer",
                ev_out = ".";
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory or manifest");
    ev->add_option("--split", ev_split, "split to score (train|dev|test)");
    ev->add_option("--policy", ev_policy,
                   "threshold policy: dev-eer | test-eer | fixed:<tau>");
    ev->add_option("--out", ev_out, "output directory for artifacts");

    // gradcam
    auto* gc = app.add_subcommand("gradcam", "write class-activation overlays");
    std::string gc_ckpt, gc_image, gc_data, gc_clip, gc_layer = "default",
                gc_out = "gradcam";
    gc->add_option("--checkpoint", gc_ckpt, "model checkpoint")->required();
    gc->add_option("--image", gc_image, "input image (student only)");
    gc->add_option("--data", gc_data, "dataset directory or manifest");
    gc->add_option("--clip", gc_clip, "clip id within --data");
    gc->add_option("--layer", gc_layer, "target layer name or 'default'");
    gc->add_option("--out", gc_out, "output path prefix");

    // bench
    auto* be = app.add_subcommand("bench", "measure inference throughput");
    std::string be_ckpt;
    int be_batch = 1, be_warmup = 3, be_iter = 20;
    be->add_option("--checkpoint", be_ckpt, "model checkpoint")->required();
    be->add_option("--batch-size", be_batch, "inference batch size");
    be->add_option("--warmup", be_warmup, "warmup iterations");
    be->add_option("--iters", be_iter, "measured iterations");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth_data(sc, synth_out);
        if (train->parsed()) return cmd_train_teacher(train_o, train_data, train_runs);
        if (dist->parsed())
            return cmd_distill(dist_o, dist_teacher, dist_data, dist_runs);
        if (ev->parsed())
            return cmd_evaluate(ev_ckpt, ev_data, ev_split, ev_policy, ev_out);
        if (gc->parsed())
            return cmd_gradcam(gc_ckpt, gc_image, gc_data, gc_clip, gc_layer, gc_out);
        if (be->parsed()) return cmd_bench(be_ckpt, be_batch, be_warmup, be_iter);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ProtocolViolation& e) {
        std::fprintf(stderr, "protocol error: %s\n", e.what());
        return 1;
    } catch (const MetricUndefined& e) {
        std::fprintf(stderr, "metric error: %s\n", e.what());
        return 1;
    } catch (const EngineUnavailable& e) {
        std::fprintf(stderr, "engine error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 2;
}
