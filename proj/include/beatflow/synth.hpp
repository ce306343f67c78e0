#pragma once

// Synthetic beat-locked music + dance tracks on the TOY5 skeleton.
//
// Every animated channel is env * amp * cos(pi * b(t) + psi) with psi in
// {0, pi}, where b(t) counts beats. All channels therefore stop together on
// each beat, which makes the aggregate joint speed minimal exactly at the
// annotated beat times. During MUTE the beat counter freezes and env decays
// to zero, leaving the rest pose.

#include "beatflow/motion.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace beatflow::synth {

constexpr int kStyles = 4;
constexpr double kMute = 0.0;

struct Segment {
    double start = 0.0;  ///< seconds
    double bpm = 120.0;  ///< kMute (0) for a silent segment
    int style = 0;

    bool mute() const { return bpm == kMute; }
};

struct TrackSpec {
    double duration = 20.0;
    std::vector<Segment> segments;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument unless segments start at 0, strictly increase and lie inside the track.
    void validate() const;
    nlohmann::json to_json() const;
    static TrackSpec from_json(const nlohmann::json& j);
};

struct SynthConfig {
    int sample_rate = 24000;
    double fps = 30.0;
    double noise_floor = 0.005;
    double mute_decay = 0.15;   ///< s, amplitude time constant entering MUTE
    double attack = 0.1;        ///< s, amplitude and style crossfade time constant
};

struct Track {
    TrackSpec spec;
    std::vector<double> audio;        ///< mono PCM at sample_rate
    std::vector<double> beat_times;   ///< seconds, exact
    std::vector<motion::GlobalPose> poses;
    motion::MotionClip clip;          ///< encoded frames, TOY5
};

Track gen_track(const TrackSpec& spec, const SynthConfig& cfg = {});

/// Beat counter b(t): integral of tempo over music segments, frozen during MUTE.
double beat_count(const TrackSpec& spec, double t);
std::vector<double> beat_times(const TrackSpec& spec);

struct CorpusConfig {
    int tracks = 200;
    double duration = 20.0;
    std::vector<double> tempi{60.0, 90.0, 120.0, 150.0};
    double mute_fraction = 0.1;
    int max_segments = 3;
    std::uint64_t seed = 1;
};

std::vector<TrackSpec> make_corpus(const CorpusConfig& cfg);

/// Writes track_NNNN.{wav,bfmo,beats.json} per track plus manifest.jsonl.
void build_dataset(const std::vector<TrackSpec>& specs, const std::filesystem::path& out,
                   const SynthConfig& cfg = {});

struct ManifestEntry {
    std::string id;
    std::filesystem::path wav;
    std::filesystem::path motion;
    std::filesystem::path beats;
    TrackSpec spec;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
std::vector<double> read_beats(const std::filesystem::path& path);

}  // namespace beatflow::synth
