#pragma once

// Windowed conditional velocity network v(x, k, c): per-token level
// embeddings, condition injection by concatenation, causal self-attention
// with learned relative positions, and exact gradients via nn::Tape.

#include "beatflow/checkpoint.hpp"
#include "beatflow/flowmatch.hpp"
#include "beatflow/nn.hpp"

#include <optional>
#include <stdexcept>

namespace beatflow::denoiser {

using nn::Mat;
using schedules::LevelVector;

struct CapacityError : std::length_error {
    using std::length_error::length_error;
};

struct DenoiserConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_len = 120;       ///< T_max, window capacity in tokens
    int latent_dim = 16;     ///< D_z
    int cond_dim = 22;       ///< D_c
    int level_embed_dim = 16;
    int cond_embed_dim = 32;
    int ffn_mult = 4;
    bool causal = true;      ///< false gives full-window attention

    void validate() const;
    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

/// Sinusoidal features of a noise level k in [0,1].
nn::RowVec embed_level(double k, int dim = 16);

class DenoiserNet final : public flowmatch::TrainableVelocityModel {
public:
    explicit DenoiserNet(DenoiserConfig cfg, std::uint64_t seed = 0);

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamSet& params() override { return params_; }
    const nn::ParamSet& params() const override { return params_; }

    /// x: n x D_z, levels: n, cond: n x D_c or nullptr for the learned null condition.
    nn::Var forward(nn::Tape& tape, const Mat& x, const LevelVector& levels, const Mat* cond) const override;

    /// Records a forward pass for a later backward() call.
    Mat forward_recorded(const Mat& x, const LevelVector& levels, const Mat* cond);
    /// Parameter gradients of <cotangent, output> for the last recorded forward.
    nn::Grads backward(const Mat& cotangent);

    void save(Checkpoint& ckpt) const;
    static DenoiserNet load(const Checkpoint& ckpt);

private:
    DenoiserConfig cfg_;
    nn::ParamSet params_;
    std::optional<nn::Tape> recorded_;
    nn::Var recorded_out_;
};

}  // namespace beatflow::denoiser
