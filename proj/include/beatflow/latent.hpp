#pragma once

// Frame-wise motion VAE: MotionFrame (normalized) <-> D_z latent.
// No temporal mixing, so latent t depends on frame t alone.

#include "beatflow/checkpoint.hpp"
#include "beatflow/nn.hpp"
#include "beatflow/random.hpp"

#include <functional>

namespace beatflow::latent {

using nn::Mat;
using nn::RowVec;

struct VaeConfig {
    int input_dim = 68;  ///< 8 + 12K
    int latent_dim = 16;
    int hidden = 128;
    double kl_weight = 1e-3;  ///< lambda

    void validate() const;
};

/// Per-column affine standardization.
struct Normalizer {
    RowVec mean;
    RowVec std;

    static Normalizer fit(const Mat& rows, double std_floor);
    static Normalizer identity(Eigen::Index dim);
    Mat apply(const Mat& rows) const;
    Mat invert(const Mat& rows) const;
};

struct VaeLoss {
    double recon = 0.0;  ///< mean over frames of the squared L2 reconstruction error
    double kl = 0.0;     ///< mean over frames of KL(q(z|m) || N(0, I))
    double total(double kl_weight) const { return recon + kl_weight * kl; }
};

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)) summed over dimensions, per row.
Eigen::VectorXd gaussian_kl(const Mat& mu, const Mat& logvar);

class MotionVae {
public:
    explicit MotionVae(VaeConfig cfg, std::uint64_t seed = 0);

    const VaeConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    Normalizer& data_norm() { return data_norm_; }
    const Normalizer& data_norm() const { return data_norm_; }
    /// Standardization of posterior means used as the diffusion space.
    Normalizer& latent_norm() { return latent_norm_; }
    const Normalizer& latent_norm() const { return latent_norm_; }

    struct Posterior {
        Mat mu;
        Mat logvar;
    };

    /// Rows are raw frames; normalization is applied internally. Throws on non-finite input.
    Posterior encode(const Mat& frames) const;
    /// Rows are latents; returns de-normalized frames. Throws on non-finite input.
    Mat decode(const Mat& z) const;

    /// Loss on normalized frames with reparameterized sampling from rng.
    VaeLoss loss(const Mat& norm_frames, Rng& rng) const;
    /// Same as loss(); also accumulates gradients of recon + lambda*KL into grads.
    VaeLoss loss_and_grads(const Mat& norm_frames, Rng& rng, nn::Grads& grads) const;
    /// Variant with explicit reparameterization noise (rows x latent_dim).
    VaeLoss loss_and_grads(const Mat& norm_frames, const Mat& eps, nn::Grads* grads) const;

    void save(Checkpoint& ckpt) const;
    static MotionVae load(const Checkpoint& ckpt);

private:
    nn::Var encoder(nn::Tape& t, nn::Var x) const;
    nn::Var decoder(nn::Tape& t, nn::Var z) const;

    VaeConfig cfg_;
    nn::ParamSet params_;
    Normalizer data_norm_;
    Normalizer latent_norm_;
};

struct VaeTrainConfig {
    int epochs = 30;
    int batch = 256;
    double lr = 1e-3;
    double std_floor = 1e-3;
};

struct VaeTrainReport {
    std::vector<double> epoch_loss;
    double final_recon = 0.0;
    double final_kl = 0.0;
};

/// Fits normalization stats on `frames`, trains, then fits latent stats on posterior means.
VaeTrainReport train_vae(MotionVae& vae, const Mat& frames, const VaeTrainConfig& cfg, Rng& rng,
                         const std::function<void(int, double)>& on_epoch = {});

}  // namespace beatflow::latent
