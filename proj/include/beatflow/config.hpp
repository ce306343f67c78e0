#pragma once

// RunConfig: every tunable of the pipeline in one INI file.
//
//   [section]
//   key = value
//
// Unknown sections or keys are rejected; missing keys keep their defaults.
// `set("section.key", "value")` applies the same parsing to flag overrides.

#include "beatflow/audio.hpp"
#include "beatflow/denoiser.hpp"
#include "beatflow/flowmatch.hpp"
#include "beatflow/latent.hpp"
#include "beatflow/metrics.hpp"
#include "beatflow/sampler.hpp"
#include "beatflow/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace beatflow {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DenoiserTrainConfig {
    int steps = 6000;
    int batch = 16;
    int seq_len = 64;   ///< crop length; at most denoiser.max_len
    double lr = 1e-3;
    double lr_final = 1e-4;  ///< cosine decay target
    double clip_norm = 1.0;
    flowmatch::TrainConfig fm;
};

struct ServiceConfig {
    int port = 8765;
    double tick_rate = 30.0;
    bool sim_clock = false;
    int client_queue_limit = 64;  ///< pending frames before a lagging client is dropped
    std::string tracks_dir;       ///< WAV library; empty uses the held-out synth set
    std::string default_track;
    bool drop_overruns = false;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string work_dir = "work";

    synth::CorpusConfig corpus;
    synth::SynthConfig synth;
    int heldout_tracks = 16;

    audio::AudioConfig audio;
    audio::VqpaeTrainConfig codec_train;
    int codec_tracks = 64;  ///< training tracks used to fit the codec

    latent::VaeConfig vae;
    latent::VaeTrainConfig vae_train;

    denoiser::DenoiserConfig denoiser;
    DenoiserTrainConfig train;

    sampler::SamplerParams sampler;
    int warmup_tokens = 30;

    metrics::EvalConfig eval;
    ServiceConfig service;

    static RunConfig load(const std::filesystem::path& path);
    /// Applies one "section.key" = value assignment.
    void set(const std::string& dotted_key, const std::string& value);
    /// Cross-module consistency checks; throws ConfigError.
    void validate() const;
    /// Full resolved config as INI text, in a fixed key order.
    std::string to_ini() const;
    /// Stable 64-bit hash of to_ini().
    std::uint64_t hash() const;

    static std::vector<std::string> keys();
};

/// Environment overrides: BEATFLOW_PORT, BEATFLOW_SEED, BEATFLOW_CONFIG (path, read by callers).
void apply_env_overrides(RunConfig& cfg);

}  // namespace beatflow
