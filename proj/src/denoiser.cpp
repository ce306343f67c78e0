#include "beatflow/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace beatflow::denoiser {

void DenoiserConfig::validate() const {
    if (d_model < 1 || n_layers < 0 || n_heads < 1 || max_len < 1 || latent_dim < 1 || cond_dim < 1 ||
        level_embed_dim < 2 || cond_embed_dim < 1 || ffn_mult < 1) {
        throw std::invalid_argument("denoiser dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
    if (level_embed_dim % 2 != 0) throw std::invalid_argument("level embedding dimension must be even");
}

nlohmann::json DenoiserConfig::to_json() const {
    return {{"d_model", d_model},         {"n_layers", n_layers},           {"n_heads", n_heads},
            {"max_len", max_len},         {"latent_dim", latent_dim},       {"cond_dim", cond_dim},
            {"level_embed_dim", level_embed_dim}, {"cond_embed_dim", cond_embed_dim},
            {"ffn_mult", ffn_mult},       {"causal", causal}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.max_len = j.at("max_len");
    c.latent_dim = j.at("latent_dim");
    c.cond_dim = j.at("cond_dim");
    c.level_embed_dim = j.at("level_embed_dim");
    c.cond_embed_dim = j.at("cond_embed_dim");
    c.ffn_mult = j.at("ffn_mult");
    c.causal = j.at("causal");
    c.validate();
    return c;
}

nn::RowVec embed_level(double k, int dim) {
    if (!(k >= 0.0 && k <= 1.0)) throw schedules::DomainError("noise level outside [0,1]: " + std::to_string(k));
    nn::RowVec e(dim);
    const int half = dim / 2;
    for (int m = 0; m < half; ++m) {
        // Low frequencies keep the embedding smooth in k.
        const double w = 2.0 * std::numbers::pi * 0.25 * static_cast<double>(m + 1);
        e(2 * m) = std::sin(w * k);
        e(2 * m + 1) = std::cos(w * k);
    }
    return e;
}

DenoiserNet::DenoiserNet(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d_model;
    const int in_dim = cfg_.latent_dim + cfg_.level_embed_dim + cfg_.cond_embed_dim;
    const int hidden = d * cfg_.ffn_mult;

    // Zero-initialized condition path: with all conditions dropped it stays
    // exactly zero, so conditional and null outputs coincide.
    params_.add("null_cond", Mat::Zero(1, cfg_.cond_dim));
    params_.add("cond_w", Mat::Zero(cfg_.cond_dim, cfg_.cond_embed_dim));
    params_.add("cond_b", Mat::Zero(1, cfg_.cond_embed_dim));
    params_.add("in_w", nn::xavier(in_dim, d, rng));
    params_.add("in_b", Mat::Zero(1, d));
    params_.add("pos", nn::normal(cfg_.max_len, d, 0.02, rng));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        params_.add(p + "ln1_g", Mat::Ones(1, d));
        params_.add(p + "ln1_b", Mat::Zero(1, d));
        params_.add(p + "q_w", nn::xavier(d, d, rng));
        params_.add(p + "k_w", nn::xavier(d, d, rng));
        params_.add(p + "v_w", nn::xavier(d, d, rng));
        params_.add(p + "o_w", nn::xavier(d, d, rng, 0.5));
        params_.add(p + "o_b", Mat::Zero(1, d));
        params_.add(p + "ln2_g", Mat::Ones(1, d));
        params_.add(p + "ln2_b", Mat::Zero(1, d));
        params_.add(p + "ff1_w", nn::xavier(d, hidden, rng));
        params_.add(p + "ff1_b", Mat::Zero(1, hidden));
        params_.add(p + "ff2_w", nn::xavier(hidden, d, rng, 0.5));
        params_.add(p + "ff2_b", Mat::Zero(1, d));
    }
    params_.add("lnf_g", Mat::Ones(1, d));
    params_.add("lnf_b", Mat::Zero(1, d));
    params_.add("out_w", nn::xavier(d, cfg_.latent_dim, rng, 0.5));
    params_.add("out_b", Mat::Zero(1, cfg_.latent_dim));
}

nn::Var DenoiserNet::forward(nn::Tape& t, const Mat& x, const LevelVector& levels, const Mat* cond) const {
    const Eigen::Index n = x.rows();
    if (n < 1) throw std::invalid_argument("denoiser input has no tokens");
    if (n > cfg_.max_len) {
        throw CapacityError("window of " + std::to_string(n) + " tokens exceeds capacity " +
                            std::to_string(cfg_.max_len));
    }
    if (x.cols() != cfg_.latent_dim || static_cast<Eigen::Index>(levels.size()) != n) {
        throw std::invalid_argument("denoiser input shape mismatch");
    }
    if (cond && (cond->rows() != n || cond->cols() != cfg_.cond_dim)) {
        throw std::invalid_argument("denoiser condition shape mismatch");
    }
    const auto& P = params_;
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;

    Mat level_feats(n, cfg_.level_embed_dim);
    for (Eigen::Index i = 0; i < n; ++i) level_feats.row(i) = embed_level(levels[static_cast<std::size_t>(i)], cfg_.level_embed_dim);

    nn::Var c;
    if (cond) {
        c = t.constant(*cond);
    } else {
        c = nn::matmul(t, t.constant(Mat::Ones(n, 1)), t.param(P.at("null_cond")));
    }
    const nn::Var cemb = nn::linear(t, c, P.at("cond_w"), &P.at("cond_b"));
    const nn::Var parts[] = {t.constant(x), t.constant(std::move(level_feats)), cemb};
    nn::Var h = nn::linear(t, nn::concat_cols(t, parts), P.at("in_w"), &P.at("in_b"));

    std::vector<int> pos_idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) pos_idx[static_cast<std::size_t>(i)] = static_cast<int>(n - 1 - i);
    h = nn::add(t, h, nn::gather_rows(t, t.param(P.at("pos")), std::move(pos_idx)));

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        nn::Var a = nn::layer_norm(t, h);
        a = nn::add_row(t, nn::mul_row(t, a, t.param(P.at(p + "ln1_g"))), t.param(P.at(p + "ln1_b")));
        const nn::Var q = nn::linear(t, a, P.at(p + "q_w"), nullptr);
        const nn::Var k = nn::linear(t, a, P.at(p + "k_w"), nullptr);
        const nn::Var v = nn::linear(t, a, P.at(p + "v_w"), nullptr);
        std::vector<nn::Var> head_out;
        head_out.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            const nn::Var qh = nn::slice_cols(t, q, hd * dh, dh);
            const nn::Var kh = nn::slice_cols(t, k, hd * dh, dh);
            const nn::Var vh = nn::slice_cols(t, v, hd * dh, dh);
            const nn::Var att = nn::softmax_rows(t, nn::matmul_nt(t, qh, kh), att_scale, cfg_.causal);
            head_out.push_back(nn::matmul(t, att, vh));
        }
        const nn::Var merged = nn::concat_cols(t, head_out);
        h = nn::add(t, h, nn::linear(t, merged, P.at(p + "o_w"), &P.at(p + "o_b")));

        nn::Var f = nn::layer_norm(t, h);
        f = nn::add_row(t, nn::mul_row(t, f, t.param(P.at(p + "ln2_g"))), t.param(P.at(p + "ln2_b")));
        f = nn::gelu(t, nn::linear(t, f, P.at(p + "ff1_w"), &P.at(p + "ff1_b")));
        h = nn::add(t, h, nn::linear(t, f, P.at(p + "ff2_w"), &P.at(p + "ff2_b")));
    }
    nn::Var o = nn::layer_norm(t, h);
    o = nn::add_row(t, nn::mul_row(t, o, t.param(P.at("lnf_g"))), t.param(P.at("lnf_b")));
    return nn::linear(t, o, P.at("out_w"), &P.at("out_b"));
}

Mat DenoiserNet::forward_recorded(const Mat& x, const LevelVector& levels, const Mat* cond) {
    recorded_.emplace(true);
    recorded_out_ = forward(*recorded_, x, levels, cond);
    return recorded_->value(recorded_out_);
}

nn::Grads DenoiserNet::backward(const Mat& cotangent) {
    if (!recorded_) throw std::logic_error("backward() called without a recorded forward pass");
    if (recorded_->has_run_backward()) {
        // Re-seeding a consumed tape would double-count; rebuild from scratch.
        throw std::logic_error("backward() already consumed the recorded forward pass");
    }
    nn::Grads g(params_);
    recorded_->backward(recorded_out_, cotangent);
    recorded_->accumulate(g);
    recorded_.reset();
    return g;
}

void DenoiserNet::save(Checkpoint& ckpt) const {
    ckpt.meta["denoiser"] = cfg_.to_json();
    ckpt.put(params_, "denoiser.");
}

DenoiserNet DenoiserNet::load(const Checkpoint& ckpt) {
    DenoiserNet net(DenoiserConfig::from_json(ckpt.meta.at("denoiser")));
    ckpt.get(net.params_, "denoiser.");
    return net;
}

}  // namespace beatflow::denoiser
