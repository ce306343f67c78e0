#include "beatflow/latent.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace beatflow::latent {

void VaeConfig::validate() const {
    if (input_dim < 1 || latent_dim < 1 || hidden < 1) throw std::invalid_argument("VAE dimensions must be >= 1");
    if (kl_weight < 0.0) throw std::invalid_argument("KL weight must be >= 0");
}

Normalizer Normalizer::fit(const Mat& rows, double std_floor) {
    if (rows.rows() < 1) throw std::invalid_argument("cannot fit normalizer on empty data");
    Normalizer n;
    n.mean = rows.colwise().mean();
    const Mat centered = rows.rowwise() - n.mean;
    n.std = (centered.array().square().colwise().sum() / static_cast<double>(rows.rows())).sqrt().matrix();
    for (Eigen::Index j = 0; j < n.std.size(); ++j) n.std(j) = std::max(n.std(j), std_floor);
    return n;
}

Normalizer Normalizer::identity(Eigen::Index dim) { return Normalizer{RowVec::Zero(dim), RowVec::Ones(dim)}; }

Mat Normalizer::apply(const Mat& rows) const {
    return ((rows.rowwise() - mean).array().rowwise() / std.array()).matrix();
}

Mat Normalizer::invert(const Mat& rows) const {
    return ((rows.array().rowwise() * std.array()).matrix().rowwise() + mean);
}

Eigen::VectorXd gaussian_kl(const Mat& mu, const Mat& logvar) {
    return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).rowwise().sum().matrix();
}

MotionVae::MotionVae(VaeConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int h = cfg_.hidden;
    params_.add("enc1_w", nn::xavier(cfg_.input_dim, h, rng));
    params_.add("enc1_b", Mat::Zero(1, h));
    params_.add("enc2_w", nn::xavier(h, h, rng));
    params_.add("enc2_b", Mat::Zero(1, h));
    params_.add("enc_mu_w", nn::xavier(h, cfg_.latent_dim, rng));
    params_.add("enc_mu_b", Mat::Zero(1, cfg_.latent_dim));
    params_.add("enc_lv_w", nn::xavier(h, cfg_.latent_dim, rng, 0.1));
    params_.add("enc_lv_b", Mat::Zero(1, cfg_.latent_dim));
    params_.add("dec1_w", nn::xavier(cfg_.latent_dim, h, rng));
    params_.add("dec1_b", Mat::Zero(1, h));
    params_.add("dec2_w", nn::xavier(h, h, rng));
    params_.add("dec2_b", Mat::Zero(1, h));
    params_.add("dec_out_w", nn::xavier(h, cfg_.input_dim, rng));
    params_.add("dec_out_b", Mat::Zero(1, cfg_.input_dim));
    data_norm_ = Normalizer::identity(cfg_.input_dim);
    latent_norm_ = Normalizer::identity(cfg_.latent_dim);
}

nn::Var MotionVae::encoder(nn::Tape& t, nn::Var x) const {
    const auto& P = params_;
    nn::Var h = nn::silu(t, nn::linear(t, x, P.at("enc1_w"), &P.at("enc1_b")));
    h = nn::silu(t, nn::linear(t, h, P.at("enc2_w"), &P.at("enc2_b")));
    const nn::Var mu = nn::linear(t, h, P.at("enc_mu_w"), &P.at("enc_mu_b"));
    const nn::Var lv = nn::linear(t, h, P.at("enc_lv_w"), &P.at("enc_lv_b"));
    const nn::Var parts[] = {mu, lv};
    return nn::concat_cols(t, parts);
}

nn::Var MotionVae::decoder(nn::Tape& t, nn::Var z) const {
    const auto& P = params_;
    nn::Var h = nn::silu(t, nn::linear(t, z, P.at("dec1_w"), &P.at("dec1_b")));
    h = nn::silu(t, nn::linear(t, h, P.at("dec2_w"), &P.at("dec2_b")));
    return nn::linear(t, h, P.at("dec_out_w"), &P.at("dec_out_b"));
}

MotionVae::Posterior MotionVae::encode(const Mat& frames) const {
    if (frames.cols() != cfg_.input_dim) throw std::invalid_argument("VAE encode: wrong frame dimension");
    if (!frames.allFinite()) throw std::invalid_argument("VAE encode: non-finite input");
    nn::Tape t(false);
    const Mat& out = t.value(encoder(t, t.constant(data_norm_.apply(frames))));
    return {out.leftCols(cfg_.latent_dim), out.rightCols(cfg_.latent_dim)};
}

Mat MotionVae::decode(const Mat& z) const {
    if (z.cols() != cfg_.latent_dim) throw std::invalid_argument("VAE decode: wrong latent dimension");
    if (!z.allFinite()) throw std::invalid_argument("VAE decode: non-finite latent");
    nn::Tape t(false);
    return data_norm_.invert(t.value(decoder(t, t.constant(z))));
}

VaeLoss MotionVae::loss(const Mat& norm_frames, Rng& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat eps(norm_frames.rows(), cfg_.latent_dim);
    for (Eigen::Index i = 0; i < eps.rows(); ++i)
        for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = n(rng);
    return loss_and_grads(norm_frames, eps, nullptr);
}

VaeLoss MotionVae::loss_and_grads(const Mat& norm_frames, Rng& rng, nn::Grads& grads) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat eps(norm_frames.rows(), cfg_.latent_dim);
    for (Eigen::Index i = 0; i < eps.rows(); ++i)
        for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = n(rng);
    return loss_and_grads(norm_frames, eps, &grads);
}

VaeLoss MotionVae::loss_and_grads(const Mat& norm_frames, const Mat& eps, nn::Grads* grads) const {
    if (norm_frames.rows() < 1) throw std::invalid_argument("VAE loss: empty batch");
    const int dz = cfg_.latent_dim;
    nn::Tape t(grads != nullptr);
    const nn::Var enc = encoder(t, t.constant(norm_frames));
    const nn::Var mu = nn::slice_cols(t, enc, 0, dz);
    const nn::Var lv = nn::slice_cols(t, enc, dz, dz);
    const nn::Var std_dev = nn::exp(t, nn::scale(t, lv, 0.5));
    const nn::Var z = nn::add(t, mu, nn::mul(t, std_dev, t.constant(eps)));
    const nn::Var recon = decoder(t, z);

    const double inv_n = 1.0 / static_cast<double>(norm_frames.rows());
    const Mat diff = t.value(recon) - norm_frames;
    VaeLoss out;
    out.recon = diff.squaredNorm() * inv_n;
    out.kl = gaussian_kl(t.value(mu), t.value(lv)).sum() * inv_n;

    if (grads) {
        const double lam = cfg_.kl_weight;
        t.seed(recon, 2.0 * diff * inv_n);
        t.seed(mu, lam * t.value(mu) * inv_n);
        t.seed(lv, (lam * 0.5 * inv_n) * (t.value(lv).array().exp() - 1.0).matrix());
        t.backward();
        t.accumulate(*grads);
    }
    return out;
}

void MotionVae::save(Checkpoint& ckpt) const {
    ckpt.meta["vae"] = {{"input_dim", cfg_.input_dim},
                        {"latent_dim", cfg_.latent_dim},
                        {"hidden", cfg_.hidden},
                        {"kl_weight", cfg_.kl_weight}};
    ckpt.put(params_, "vae.");
    ckpt.tensors["vae.data_mean"] = data_norm_.mean;
    ckpt.tensors["vae.data_std"] = data_norm_.std;
    ckpt.tensors["vae.latent_mean"] = latent_norm_.mean;
    ckpt.tensors["vae.latent_std"] = latent_norm_.std;
}

MotionVae MotionVae::load(const Checkpoint& ckpt) {
    const auto& m = ckpt.meta.at("vae");
    VaeConfig cfg;
    cfg.input_dim = m.at("input_dim");
    cfg.latent_dim = m.at("latent_dim");
    cfg.hidden = m.at("hidden");
    cfg.kl_weight = m.at("kl_weight");
    MotionVae vae(cfg);
    ckpt.get(vae.params_, "vae.");
    vae.data_norm_ = {ckpt.tensor("vae.data_mean"), ckpt.tensor("vae.data_std")};
    vae.latent_norm_ = {ckpt.tensor("vae.latent_mean"), ckpt.tensor("vae.latent_std")};
    return vae;
}

VaeTrainReport train_vae(MotionVae& vae, const Mat& frames, const VaeTrainConfig& cfg, Rng& rng,
                         const std::function<void(int, double)>& on_epoch) {
    if (frames.rows() < 1) throw std::invalid_argument("train_vae: no frames");
    vae.data_norm() = Normalizer::fit(frames, cfg.std_floor);
    const Mat data = vae.data_norm().apply(frames);
    nn::Adam opt(vae.params(), nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 5.0});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), 0);

    VaeTrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            Mat batch(static_cast<Eigen::Index>(end - start), data.cols());
            for (std::size_t i = start; i < end; ++i) batch.row(static_cast<Eigen::Index>(i - start)) = data.row(order[i]);
            nn::Grads g(vae.params());
            const VaeLoss l = vae.loss_and_grads(batch, rng, g);
            if (!std::isfinite(l.total(vae.config().kl_weight)) || !g.all_finite()) {
                throw std::runtime_error("VAE training diverged at epoch " + std::to_string(epoch));
            }
            opt.step(vae.params(), g);
            total += l.total(vae.config().kl_weight);
            ++batches;
            report.final_recon = l.recon;
            report.final_kl = l.kl;
        }
        report.epoch_loss.push_back(total / std::max(batches, 1));
        if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
    }

    const Mat mu = vae.encode(frames).mu;
    vae.latent_norm() = Normalizer::fit(mu, 1e-6);
    return report;
}

}  // namespace beatflow::latent
