#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowpad/common.hpp"
#include "flowpad/flow.hpp"
#include "flowpad/image.hpp"

namespace flowpad {

namespace fs = std::filesystem;

// Class convention, fixed globally: attack = 0, bonafide = 1. Bonafide is
// the positive class for FAR/FRR.
enum class Label : int { attack = 0, bonafide = 1 };

inline std::string to_string(Label l) {
    return l == Label::bonafide ? "bonafide" : "attack";
}
inline Label label_from_string(const std::string& s) {
    if (s == "bonafide") return Label::bonafide;
    if (s == "attack") return Label::attack;
    throw IoError("unknown label: " + s);
}

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        default: return "test";
    }
}
inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw IoError("unknown split: " + s);
}

// One labeled clip. Holds frame/flow paths, not pixels; frames are decoded
// on demand so records stay cheap to share across loader workers.
struct ClipRecord {
    std::string clip_id;
    std::vector<std::string> frame_paths;          // ordered
    std::vector<std::string> flow_paths;           // flow t -> t+1, may be empty
    Label label = Label::attack;
    std::string subject_id;
    Split split = Split::train;
    double fps = 30.0;  // metadata only

    int n_frames() const { return static_cast<int>(frame_paths.size()); }
    Image load_frame(int t) const {
        if (t < 0 || t >= n_frames())
            throw ContractError("frame index out of range for clip " + clip_id);
        return load_png(frame_paths[t]);
    }
    // Path of stored ground-truth flow for pair (t, t+1), empty if absent.
    std::string flow_path(int t) const {
        if (t < 0 || t >= static_cast<int>(flow_paths.size())) return {};
        return flow_paths[t];
    }
};

struct FramePair {
    Image reference;
    Image adjacent;
    int t = 0;
    int delta_t = 1;
};

struct DatasetManifest {
    std::vector<ClipRecord> clips;
    std::string root;  // directory paths are relative to
    std::string source;  // "synthetic" or "folder-layout"

    std::vector<const ClipRecord*> split_clips(Split s) const {
        std::vector<const ClipRecord*> out;
        for (const auto& c : clips)
            if (c.split == s) out.push_back(&c);
        return out;
    }
    std::map<std::pair<Split, Label>, int> counts() const {
        std::map<std::pair<Split, Label>, int> m;
        for (const auto& c : clips) m[{c.split, c.label}]++;
        return m;
    }
};

enum class SampleMode { train, eval };

// Training: t uniform over all valid indices. Inference: the first frame.
inline FramePair sample_pair(const ClipRecord& clip, SampleMode mode,
                             int delta_t, Rng& rng) {
    if (delta_t < 1) throw ContractError("delta_t must be >= 1");
    if (clip.n_frames() < delta_t + 1)
        throw ContractError("clip too short for delta_t=" +
                            std::to_string(delta_t) + ": " + clip.clip_id + " (" +
                            std::to_string(clip.n_frames()) + " frames)");
    int t = 0;
    if (mode == SampleMode::train) t = irand(rng, 0, clip.n_frames() - 1 - delta_t);
    FramePair p;
    p.t = t;
    p.delta_t = delta_t;
    p.reference = clip.load_frame(t);
    p.adjacent = clip.load_frame(t + delta_t);
    if (!p.reference.same_size(p.adjacent))
        throw ContractError("frames differ in resolution within clip " + clip.clip_id);
    return p;
}

// ---------------------------------------------------------------------------
// Manifest file: one record per line, space separated:
//   clip_id relative_dir label subject_id split
// Clip directories contain frame_%04d.png and optional flow_%04d.flo.
// ---------------------------------------------------------------------------

namespace detail {

inline void index_clip_files(ClipRecord& clip, const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("missing clip directory: " + dir.string());
    std::vector<std::string> frames, flows;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png")
            frames.push_back(e.path().string());
        else if (name.rfind("flow_", 0) == 0 && e.path().extension() == ".flo")
            flows.push_back(e.path().string());
    }
    std::sort(frames.begin(), frames.end());
    std::sort(flows.begin(), flows.end());
    clip.frame_paths = std::move(frames);
    clip.flow_paths = std::move(flows);
    if (clip.n_frames() < 2)
        throw IoError("clip " + clip.clip_id + " has fewer than 2 frames");
}

inline void validate_manifest(const DatasetManifest& m) {
    std::map<std::string, std::set<Split>> subj_splits;
    for (const auto& c : m.clips) subj_splits[c.subject_id].insert(c.split);
    std::vector<std::string> offenders;
    for (const auto& [sid, splits] : subj_splits)
        if (splits.size() > 1) offenders.push_back(sid);
    if (!offenders.empty()) {
        std::string msg = "subject-disjointness violated by:";
        for (const auto& s : offenders) msg += " " + s;
        throw ProtocolViolation(msg);
    }
    auto counts = m.counts();
    for (Split s : {Split::train, Split::test})
        for (Label l : {Label::attack, Label::bonafide})
            if (counts[{s, l}] == 0)
                throw ProtocolViolation("split '" + to_string(s) +
                                        "' has no " + to_string(l) + " clips");
}

}  // namespace detail

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    for (const auto& c : m.clips) {
        fs::path dir = fs::path(c.frame_paths.front()).parent_path();
        out << c.clip_id << ' '
            << fs::relative(dir, m.root).generic_string() << ' '
            << to_string(c.label) << ' ' << c.subject_id << ' '
            << to_string(c.split) << '\n';
    }
}

// Accepts a manifest file or a dataset directory that either contains
// manifest.txt or follows <split>/<label>/<subject>/<clip>/ directly.
inline DatasetManifest load_manifest(const std::string& path) {
    fs::path p(path);
    DatasetManifest m;
    if (fs::is_directory(p) && fs::exists(p / "manifest.txt")) p = p / "manifest.txt";
    if (fs::is_regular_file(p)) {
        m.root = p.parent_path().string();
        m.source = "folder-layout";
        std::ifstream in(p);
        if (!in) throw IoError("cannot read manifest: " + p.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            ClipRecord c;
            std::string rel, label, split;
            if (!(ss >> c.clip_id >> rel >> label >> c.subject_id >> split))
                throw IoError("malformed manifest line: " + line);
            c.label = label_from_string(label);
            c.split = split_from_string(split);
            detail::index_clip_files(c, fs::path(m.root) / rel);
            m.clips.push_back(std::move(c));
        }
    } else if (fs::is_directory(p)) {
        m.root = p.string();
        m.source = "folder-layout";
        for (const char* split : {"train", "dev", "test"}) {
            fs::path sp = p / split;
            if (!fs::is_directory(sp)) continue;
            for (const char* label : {"attack", "bonafide"}) {
                fs::path lp = sp / label;
                if (!fs::is_directory(lp)) continue;
                for (const auto& subj : fs::directory_iterator(lp)) {
                    if (!subj.is_directory()) continue;
                    for (const auto& clipdir : fs::directory_iterator(subj.path())) {
                        if (!clipdir.is_directory()) continue;
                        ClipRecord c;
                        c.clip_id = clipdir.path().filename().string();
                        c.subject_id = subj.path().filename().string();
                        c.label = label_from_string(label);
                        c.split = split_from_string(split);
                        detail::index_clip_files(c, clipdir.path());
                        m.clips.push_back(std::move(c));
                    }
                }
            }
        }
    } else {
        throw IoError("no manifest or dataset directory at: " + path);
    }
    std::sort(m.clips.begin(), m.clips.end(),
              [](const ClipRecord& a, const ClipRecord& b) {
                  return a.clip_id < b.clip_id;
              });
    if (m.clips.empty()) throw IoError("manifest is empty: " + path);
    detail::validate_manifest(m);
    return m;
}

}  // namespace flowpad
