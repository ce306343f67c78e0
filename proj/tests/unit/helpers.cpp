#include "helpers.hpp"

#include <cmath>

namespace bft {

using namespace beatflow;

std::shared_ptr<const pipeline::Models> tiny_models(std::uint64_t seed) {
    audio::AudioConfig ac;
    audio::MusicEncoder codec(ac, seed);
    const Mat z = randn(200, ac.vq_dim, seed + 1).array().tanh().matrix();
    Rng rng(seed);
    codec.codebooks() = audio::rvq_fit(z, ac.rvq_stages, ac.rvq_codes, rng, {1, 10});

    latent::MotionVae vae(latent::VaeConfig{motion::toy5().frame_dim(), 8, 32, 1e-3}, seed + 2);

    denoiser::DenoiserConfig dc;
    dc.d_model = 16;
    dc.n_layers = 1;
    dc.n_heads = 2;
    dc.max_len = 64;
    dc.latent_dim = 8;
    dc.cond_dim = ac.cond_dim();
    dc.level_embed_dim = 8;
    dc.cond_embed_dim = 8;
    dc.ffn_mult = 2;
    denoiser::DenoiserNet net(dc, seed + 3);

    return std::make_shared<const pipeline::Models>(pipeline::Models{
        std::move(codec), std::move(vae), std::move(net), latent::Normalizer::identity(ac.cond_dim()), motion::toy5()});
}

double gradcheck(nn::ParamSet& params, const std::function<double()>& loss, const nn::Grads& analytic, double h,
                 int per_tensor) {
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Mat& w = params[p].value;
        const Eigen::Index n = w.size();
        const Eigen::Index stride = std::max<Eigen::Index>(1, n / per_tensor);
        double diff = 0.0, na = 0.0, nf = 0.0;
        for (Eigen::Index i = 0; i < n; i += stride) {
            const double keep = w.data()[i];
            w.data()[i] = keep + h;
            const double up = loss();
            w.data()[i] = keep - h;
            const double down = loss();
            w.data()[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double g = analytic[p].data()[i];
            diff += (g - fd) * (g - fd);
            na += g * g;
            nf += fd * fd;
        }
        const double scale = std::max(std::sqrt(std::max(na, nf)), 1e-10);
        worst = std::max(worst, std::sqrt(diff) / scale);
    }
    return worst;
}

std::vector<double> click_track(double bpm, double seconds, int rate) {
    std::vector<double> x(static_cast<std::size_t>(seconds * rate), 0.0);
    const double period = 60.0 / bpm;
    for (double t0 = 0.0; t0 < seconds; t0 += period) {
        const auto s0 = static_cast<std::size_t>(std::llround(t0 * rate));
        for (std::size_t i = 0; i < static_cast<std::size_t>(0.02 * rate) && s0 + i < x.size(); ++i) {
            const double t = static_cast<double>(i) / rate;
            x[s0 + i] = 0.8 * std::exp(-t / 0.005) * std::sin(2.0 * M_PI * 1000.0 * t);
        }
    }
    return x;
}

}  // namespace bft
