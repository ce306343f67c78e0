#pragma once

// End-to-end wiring: dataset/codec/VAE/denoiser training stages that read
// and write the work directory, and the runtime loop that turns one hop of
// audio into one tick of motion.
//
// Work directory layout:
//   data/       training tracks (manifest.jsonl, WAV, motion, beats)
//   heldout/    held-out tracks, same layout
//   codec.bfck  audio encoder + RVQ codebooks
//   vae.bfck    motion VAE with data and latent statistics
//   denoiser.bfck  denoiser with condition statistics
//   config.ini  resolved config of the last stage that ran

#include "beatflow/audio.hpp"
#include "beatflow/config.hpp"
#include "beatflow/denoiser.hpp"
#include "beatflow/latent.hpp"
#include "beatflow/motion.hpp"
#include "beatflow/sampler.hpp"
#include "beatflow/synth.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace beatflow::pipeline {

namespace fs = std::filesystem;
using nn::Mat;
using nn::RowVec;
using Log = std::function<void(const std::string&)>;

struct Paths {
    fs::path work;
    fs::path data;
    fs::path heldout;
    fs::path codec;
    fs::path vae;
    fs::path denoiser;

    static Paths from(const RunConfig& cfg);
};

/// Writes the resolved config next to the stage outputs.
void archive_config(const RunConfig& cfg, const fs::path& dir);

void run_synth(const RunConfig& cfg, const Log& log);
audio::VqpaeReport run_fit_codec(const RunConfig& cfg, const Log& log);
latent::VaeTrainReport run_train_vae(const RunConfig& cfg, const Log& log);

struct TrainReport {
    std::vector<double> loss;  ///< smoothed loss per log interval
    double seconds = 0.0;
};
TrainReport run_train(const RunConfig& cfg, const Log& log);

struct Models {
    audio::MusicEncoder codec;
    latent::MotionVae vae;
    denoiser::DenoiserNet net;
    latent::Normalizer cond_norm;
    motion::Skeleton skel;

    static std::shared_ptr<const Models> load(const Paths& paths);

    /// Standardized latent of the rest pose at zero velocity.
    RowVec idle_latent() const;
    /// Normalized condition produced by silence.
    RowVec silence_condition() const;
};

/// Per-track training arrays: standardized latents and raw conditions, one row per frame.
struct TrackArrays {
    Mat latents;
    Mat conditions;
    std::vector<double> beats;
};
TrackArrays track_arrays(const audio::MusicEncoder& codec, const latent::MotionVae& vae, const synth::ManifestEntry& e);

/// Monotone millisecond clock; the simulated clock always returns 0.
using NowFn = std::function<double()>;
NowFn wall_now();
NowFn sim_now();

struct TickOutput {
    long tick = 0;  ///< 0-based
    motion::GlobalPose pose;
    motion::MotionFrame frame;  ///< decoded token, valid when emitted
    bool emitted = false;
    long token_index = 0;
    double cond_ms = 0.0;
    double sample_ms = 0.0;
    double decode_ms = 0.0;
    double total_ms = 0.0;
    audio::PaeParams pae;
    bool beat = false;  ///< PAE phase wrapped on this tick
};

/// audio hop -> condition -> sampler step -> VAE decode -> root integration.
class Runtime {
public:
    Runtime(std::shared_ptr<const Models> models, sampler::SamplerParams params, int warmup, std::uint64_t seed,
            const flowmatch::VelocityModel* model_override = nullptr);

    /// Consumes exactly one hop of samples at the codec rate.
    TickOutput step(std::span<const double> hop, const NowFn& now);
    /// Back to tau = 0 with a fresh seed; warmup reapplied.
    void reset(std::uint64_t seed);
    void set_omega(double w) { sampler_.set_omega(w); }
    double omega() const { return sampler_.params().omega; }

    const sampler::StreamSampler& sampler() const { return sampler_; }
    const audio::ConditionExtractor& extractor() const { return extractor_; }
    const Models& models() const { return *models_; }
    long tick() const { return tick_; }

private:
    std::shared_ptr<const Models> models_;
    int warmup_;
    audio::ConditionExtractor extractor_;
    sampler::StreamSampler sampler_;
    motion::StreamDecoder decoder_;
    motion::GlobalPose init_;
    long tick_ = 0;
    double last_phase_ = 0.0;
};

struct Generated {
    motion::MotionClip clip;               ///< frame n = token n + 1, aligned with audio frame n
    std::vector<motion::GlobalPose> poses; ///< decode_stream of clip from initial_pose
    long model_calls = 0;
};

/// Offline streaming rollout over a fixed signal: ticks = frames + l - 1, trailing hops are silence.
Generated generate(std::shared_ptr<const Models> models, std::span<const double> samples, sampler::SamplerParams params,
                   int warmup, std::uint64_t seed, const flowmatch::VelocityModel* model_override = nullptr);

/// Rest pose of the skeleton at the origin.
motion::GlobalPose initial_pose(const motion::Skeleton& skel);

/// Poses of a stored clip, integrated from initial_pose of its skeleton.
std::vector<motion::GlobalPose> clip_poses(const motion::MotionClip& clip);

}  // namespace beatflow::pipeline
