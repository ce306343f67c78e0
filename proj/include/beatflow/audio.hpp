#pragma once

// Causal music conditioning at 30 Hz.
//
// samples -> Frontend (8 log band energies + spectral-flux onset per hop)
//         -> CausalEncoder (dilated causal conv stack) = f_causal
//         -> FFN_vq -> RVQ                              = f_vq
//         -> PAE on one f_causal channel over the last pae_frames frames = f_pae
//
// Frame t covers samples [(t+1)*hop - fft_size, (t+1)*hop). Everything before
// the first sample is treated as silence, so a fresh extractor behaves as if
// the stream had been silent forever.

#include "beatflow/checkpoint.hpp"
#include "beatflow/nn.hpp"
#include "beatflow/random.hpp"

#include <nlohmann/json.hpp>

#include <complex>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace beatflow::audio {

using nn::Mat;
using nn::RowVec;

struct AudioConfig {
    int sample_rate = 24000;
    int hop = 800;  ///< samples per 30 Hz frame
    int fft_size = 1024;
    int bands = 8;
    double fmin = 50.0;
    double fmax = 8000.0;
    double energy_ref = 1e-6;  ///< band feature = log1p(E / energy_ref)
    double window_seconds = 2.0;
    int feature_dim = 16;  ///< D_f, f_causal channels
    int vq_dim = 16;       ///< D_vq, FFN_vq output
    std::vector<int> dilations{1, 2, 4, 8};
    int rvq_stages = 2;
    int rvq_codes = 32;
    int pae_frames = 60;

    double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
    int input_dim() const { return bands + 1; }
    static constexpr int pae_dim = 6;
    int cond_dim() const { return vq_dim + pae_dim; }
    /// Frames of history a fresh encoder needs before it forgets its initial state.
    int receptive_field() const;

    void validate() const;
    nlohmann::json to_json() const;
    static AudioConfig from_json(const nlohmann::json& j);
};

class RateMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Fixed-capacity FIFO of mono samples, zero-padded before stream start.
class AudioRingBuffer {
public:
    AudioRingBuffer(int sample_rate, std::size_t capacity);

    void push(std::span<const double> chunk, int sample_rate);
    /// Exactly capacity() samples, oldest first.
    std::vector<double> window() const;
    /// The newest n samples (n <= capacity), oldest first.
    std::vector<double> newest(std::size_t n) const;
    void clear();

    int sample_rate() const { return rate_; }
    std::size_t capacity() const { return data_.size(); }
    std::uint64_t total_pushed() const { return pushed_; }

private:
    int rate_;
    std::vector<double> data_;
    std::size_t head_ = 0;  ///< index of the oldest sample
    std::uint64_t pushed_ = 0;
};

/// Per-frame band energies and onset strength from the newest fft_size samples.
class Frontend {
public:
    explicit Frontend(const AudioConfig& cfg);

    /// `samples` holds exactly fft_size values ending at the frame end.
    RowVec frame(std::span<const double> samples);
    void reset();

    /// FFT bin ranges [lo, hi) per band.
    const std::vector<std::pair<int, int>>& band_bins() const { return bins_; }

private:
    AudioConfig cfg_;
    std::vector<double> window_;
    std::vector<std::pair<int, int>> bins_;
    RowVec prev_;
};

/// Frontend over a whole signal: one row per complete hop.
Mat frontend_features(const AudioConfig& cfg, std::span<const double> samples);

struct PaeParams {
    double A = 0.0;    ///< amplitude, >= 0
    double F = 0.0;    ///< Hz, in [0, frame_rate / 2]
    double B = 0.0;    ///< offset
    double phi = 0.0;  ///< radians, wrapped to (-pi, pi]
};

/// Dominant-bin Fourier fit of a frame-rate signal whose newest sample is t = 0.
PaeParams pae_extract(std::span<const double> signal, double frame_rate);
/// A * sin(2*pi*F*t - phi) + B with t in seconds (phi in radians).
double pae_reconstruct(const PaeParams& p, double t_seconds);
/// [reconstruction at t = 0, A, sin/cos of pi*F/F_nyq, sin/cos of phi].
RowVec pae_features(const PaeParams& p, double frame_rate);

struct RvqCodebooks {
    std::vector<Mat> stages;  ///< each C x D

    bool fitted() const { return !stages.empty(); }
    int dim() const { return fitted() ? static_cast<int>(stages[0].cols()) : 0; }
    void validate() const;
};

struct RvqFitConfig {
    int restarts = 3;
    int max_iters = 50;
};

/// Stage-wise k-means on residuals. Stages after the first keep a zero
/// codeword so adding a stage never increases any vector's error.
RvqCodebooks rvq_fit(const Mat& features, int stages, int codes, Rng& rng, RvqFitConfig cfg = {});

struct RvqResult {
    std::vector<int> codes;
    RowVec recon;
};

/// Warm-started Lloyd iterations on every stage, keeping the zero codewords.
void rvq_refine(const Mat& features, RvqCodebooks& books, int iters);

/// Greedy nearest codeword per stage; `stages_used` < 0 uses all.
RvqResult rvq_quantize(const RowVec& f, const RvqCodebooks& books, int stages_used = -1);

/// Lloyd k-means with k-means++ seeding; returns k x D centroids.
Mat kmeans(const Mat& data, int k, Rng& rng, int max_iters, bool fixed_zero = false);
double quantization_error(const Mat& data, const Mat& centroids);

/// Encoder weights, codebooks and the PAE channel.
class MusicEncoder {
public:
    explicit MusicEncoder(AudioConfig cfg, std::uint64_t seed = 0);

    const AudioConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    RvqCodebooks& codebooks() { return books_; }
    const RvqCodebooks& codebooks() const { return books_; }
    int pae_channel() const { return pae_channel_; }
    void set_pae_channel(int c);

    /// Per-channel standardization of frontend frames, applied before the conv stack.
    void set_input_stats(RowVec mean, RowVec std);
    bool input_stats_fitted() const { return input_fitted_; }
    const RowVec& input_mean() const { return in_mean_; }
    const RowVec& input_std() const { return in_std_; }
    Mat normalize_input(const Mat& frames) const;

    /// Differentiable causal conv stack over a T x input_dim sequence. Rows
    /// before the first are the silence steady state.
    nn::Var encode(nn::Tape& t, nn::Var inputs) const;
    nn::Var ffn_vq(nn::Tape& t, nn::Var f_causal) const;

    /// Stateful one-frame encoder used by streaming and offline extraction alike.
    class Stepper {
    public:
        explicit Stepper(const MusicEncoder& enc);
        RowVec step(const RowVec& input);
        void reset();

    private:
        const MusicEncoder* enc_;
        std::vector<std::deque<RowVec>> hist_;  ///< per-layer past inputs, newest last
    };

    RowVec ffn_vq_row(const RowVec& f_causal) const;

    void save(Checkpoint& ckpt) const;
    static MusicEncoder load(const Checkpoint& ckpt);

private:
    AudioConfig cfg_;
    nn::ParamSet params_;
    RvqCodebooks books_;
    int pae_channel_ = 0;
    RowVec in_mean_;
    RowVec in_std_;
    bool input_fitted_ = false;
};

/// f_causal for every frame of a fresh window (frames x D_f).
Mat causal_encode(const MusicEncoder& enc, std::span<const double> window);
/// f_causal for a frontend feature sequence (frames x D_f) via the stepper.
Mat encode_features(const MusicEncoder& enc, const Mat& inputs);

struct MusicCondition {
    RowVec f_vq;
    RowVec f_pae;
    long tick = 0;

    RowVec vector() const;
};

class ConditionExtractor {
public:
    explicit ConditionExtractor(const MusicEncoder& enc);

    void reset();
    void push_samples(std::span<const double> chunk, int sample_rate);
    /// Complete hops waiting to be turned into conditions.
    long ticks_available() const;
    /// Consumes one hop; throws UsageError when none is buffered.
    MusicCondition next();
    /// Consumes one hop, zero-filling whatever has not arrived yet.
    MusicCondition next_padded();
    long tick() const { return tick_; }
    const AudioRingBuffer& buffer() const { return ring_; }
    /// Most recent PAE fit (after next()).
    const PaeParams& last_pae() const { return last_pae_; }

private:
    MusicCondition process(std::span<const double> hop);

    const MusicEncoder* enc_;
    AudioRingBuffer ring_;
    Frontend frontend_;
    MusicEncoder::Stepper stepper_;
    std::deque<double> pending_;
    std::deque<double> pae_hist_;
    PaeParams last_pae_;
    long tick_ = 0;
};

/// Conditions for every complete hop of `samples` (rows = ticks).
Mat extract_conditions(const MusicEncoder& enc, std::span<const double> samples);

struct VqpaeTrainConfig {
    int epochs = 20;
    double lr = 2e-3;
    double commitment = 0.25;
    std::uint64_t seed = 0;
};

struct VqpaeReport {
    std::vector<double> heldout_mse;  ///< index 0 is the initial error, then one per epoch
    std::vector<double> train_loss;
};

/// Trains the encoder, FFN_vq and a linear decoder that reconstructs the
/// standardized frontend frame from [f_vq ; f_pae]. On a fresh encoder the
/// input statistics, PAE channel and codebooks are fitted first; codebooks
/// are then refined after every epoch. Inputs are frontend feature sequences.
VqpaeReport vqpae_train(MusicEncoder& enc, const std::vector<Mat>& train, const std::vector<Mat>& heldout,
                        const VqpaeTrainConfig& cfg, const std::function<void(int, double)>& on_epoch = {});

/// Reconstruction MSE (standardized units) of the current weights and codebooks.
double vqpae_eval(const MusicEncoder& enc, const std::vector<Mat>& data);

/// Channel of f_causal whose windows are most concentrated in a single Fourier bin.
int select_pae_channel(const MusicEncoder& enc, const std::vector<Mat>& data);

}  // namespace beatflow::audio
