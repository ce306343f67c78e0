#pragma once

// Forward corruption, velocity targets and the masked flow-matching loss,
// plus the training-step contract shared by every velocity model.

#include "beatflow/nn.hpp"
#include "beatflow/random.hpp"
#include "beatflow/schedules.hpp"

#include <array>
#include <span>

namespace beatflow::flowmatch {

using nn::Mat;
using schedules::LevelVector;

struct NoisedSequence {
    Mat tokens;           ///< T x D_z corrupted tokens
    LevelVector levels;   ///< k_t per token
    Mat noise;            ///< T x D_z standard-normal draws used
};

/// Corrupts each token along the linear path with fresh N(0, I) noise.
NoisedSequence corrupt(const Mat& clean, const LevelVector& levels, Rng& rng);
/// Same as corrupt() with caller-supplied noise.
NoisedSequence corrupt_with(const Mat& clean, const LevelVector& levels, Mat noise);

/// v_t = dalpha * x0_t + dsigma * eps_t (= eps_t - x0_t on the linear path).
Mat velocity_target(const Mat& clean, const Mat& noise, const LevelVector& levels);

struct MaskedLoss {
    double sum = 0.0;  ///< sum over tokens with k_t > 0 of squared error
    int active = 0;    ///< number of tokens with k_t > 0
    double mean() const { return active > 0 ? sum / active : 0.0; }
};

MaskedLoss masked_fm_loss(const Mat& v_pred, const Mat& v_target, const LevelVector& levels);

enum class LossNorm { mean, sum };

/// d(loss)/d(v_pred) for the chosen normalization; zero rows where k_t = 0.
Mat masked_fm_loss_grad(const Mat& v_pred, const Mat& v_target, const LevelVector& levels, LossNorm norm);

/// Inference-side contract: v = model(x, k, c); cond == nullptr selects the null condition.
class VelocityModel {
public:
    virtual ~VelocityModel() = default;
    virtual Mat predict(const Mat& x, const LevelVector& levels, const Mat* cond) const = 0;
};

/// Training-side contract: a differentiable forward recorded on a tape.
class TrainableVelocityModel : public VelocityModel {
public:
    virtual nn::ParamSet& params() = 0;
    virtual const nn::ParamSet& params() const = 0;
    virtual nn::Var forward(nn::Tape& tape, const Mat& x, const LevelVector& levels, const Mat* cond) const = 0;

    Mat predict(const Mat& x, const LevelVector& levels, const Mat* cond) const override;
};

struct TrainConfig {
    schedules::ScheduleParams schedule;
    std::array<double, 3> type_probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double p_drop = 0.2;
    LossNorm loss_norm = LossNorm::mean;
    /// Mono/trapezoid draws keep only tokens 1..tau; later tokens are pure
    /// noise and cannot influence earlier outputs under causal attention.
    bool truncate_at_tau = true;
};

struct TrainingExample {
    Mat latents;     ///< T x D_z clean tokens
    Mat conditions;  ///< T x D_c per-token conditions (may be empty when unused)
};

struct StepResult {
    double loss = 0.0;   ///< mean over batch of the normalized per-sequence loss
    int active_tokens = 0;
};

/// One optimizer step on the batch-mean masked loss.
/// Throws std::runtime_error if the loss or gradients are not finite.
StepResult training_step(std::span<const TrainingExample> batch, TrainableVelocityModel& model, nn::Adam& opt,
                         const TrainConfig& cfg, Rng& rng);

/// Loss and parameter gradients for one batch without updating parameters.
StepResult loss_and_grads(std::span<const TrainingExample> batch, const TrainableVelocityModel& model,
                          const TrainConfig& cfg, Rng& rng, nn::Grads& grads);

}  // namespace beatflow::flowmatch
