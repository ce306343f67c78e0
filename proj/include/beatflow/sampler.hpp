#pragma once

// Streaming inference with temporal guidance over a FIFO latent buffer.
//
// Per tick: append a noise token, trim to T, build k_mono over the active
// window and k_trap over the buffer, corrupt the history with fresh noise,
// evaluate v_cond (corrupted history, condition) and v_hist (clean history,
// null condition), mix them with omega, take one Euler step of size 1/l on
// the window and emit the token whose level just reached zero.
//
// Tokens are indexed by birth tick (1, 2, ...). Warmup tokens get indices
// <= 0; they are clean history and never part of the window.

#include "beatflow/flowmatch.hpp"
#include "beatflow/random.hpp"
#include "beatflow/schedules.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace beatflow::sampler {

using nn::Mat;
using nn::RowVec;
using schedules::LevelVector;

struct SamplerParams {
    int window = 10;       ///< l
    double omega = 2.0;    ///< guidance scale
    int ctx = 20;          ///< l_ctx
    int hist_ramp = 20;    ///< l_hist
    int max_len = 120;     ///< T
    /// Draw the history-corruption noise once per token instead of once per tick.
    bool frozen_noise = false;

    double delta() const { return 1.0 / window; }
    schedules::ScheduleParams schedule() const { return {window, ctx, hist_ramp}; }
    void validate() const;
};

struct StreamState {
    Mat buffer;                 ///< n x D_z, oldest first
    Mat conds;                  ///< n x D_c, condition attached to each token at birth
    Mat frozen_eps;             ///< n x D_z, used when frozen_noise is set
    std::vector<long> index;    ///< birth index per token
    std::vector<int> updates;   ///< Euler updates received per token
    long tau = 0;
    long emitted = 0;
    Rng rng;

    long size() const { return buffer.rows(); }
};

class SamplerError : public std::runtime_error {
public:
    SamplerError(const std::string& what, StreamState snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
    const StreamState& snapshot() const { return snapshot_; }

private:
    StreamState snapshot_;
};

/// v_hist + omega * (v_cond - v_hist), evaluated as a blend so omega = 0 and 1 are exact.
Mat temporal_guidance(const Mat& v_hist, const Mat& v_cond, double omega);

/// Copy of `buffer` whose first `history` rows are alpha(k) x + sigma(k) eps.
Mat corrupt_history(const Mat& buffer, const LevelVector& k_trap, long history, const Mat& eps);
Mat corrupt_history(const Mat& buffer, const LevelVector& k_trap, long history, Rng& rng);

/// Levels for the current buffer: k_mono (window tokens only) and k_trap (all).
struct TickLevels {
    LevelVector mono;
    LevelVector trap;
    long history = 0;  ///< tokens before the window
};
TickLevels tick_levels(const StreamState& s, const SamplerParams& p);

struct StepOutput {
    std::optional<RowVec> token;  ///< emitted latent, if any
    long token_index = 0;         ///< birth index of the emitted token
    long tick = 0;
};

/// Velocity model wrapper counting predict() calls.
class CountingModel : public flowmatch::VelocityModel {
public:
    explicit CountingModel(const flowmatch::VelocityModel& inner) : inner_(&inner) {}
    Mat predict(const Mat& x, const LevelVector& levels, const Mat* cond) const override {
        ++calls_;
        return inner_->predict(x, levels, cond);
    }
    long calls() const { return calls_; }

private:
    const flowmatch::VelocityModel* inner_;
    mutable long calls_ = 0;
};

class StreamSampler {
public:
    StreamSampler(const flowmatch::VelocityModel& model, SamplerParams params, int latent_dim, int cond_dim,
                  std::uint64_t seed);

    /// Seeds the buffer with n clean copies of `idle` (n <= T); n = 0 leaves the state unchanged.
    void warmup(const RowVec& idle, const RowVec& idle_cond, int n);
    /// One iteration of the streaming loop with the condition for this tick.
    StepOutput step(const RowVec& cond);
    void reset(std::uint64_t seed);

    void set_omega(double omega);
    const SamplerParams& params() const { return params_; }
    const StreamState& state() const { return state_; }
    long model_calls() const { return counter_.calls(); }

private:
    CountingModel counter_;
    SamplerParams params_;
    int latent_dim_;
    int cond_dim_;
    StreamState state_;
};

}  // namespace beatflow::sampler
