#include "beatflow/sampler.hpp"

#include <string>

namespace beatflow::sampler {

namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

template <typename M>
void drop_front(M& m, Eigen::Index n) {
    const Eigen::Index keep = m.rows() - n;
    M tmp = m.bottomRows(keep);
    m = std::move(tmp);
}

template <typename M>
void append_row(M& m, const RowVec& r) {
    m.conservativeResize(m.rows() + 1, r.size());
    m.row(m.rows() - 1) = r;
}

}  // namespace

void SamplerParams::validate() const {
    if (window < 1) throw std::invalid_argument("sampler window must be >= 1");
    if (max_len < window) throw std::invalid_argument("sampler max length T must be >= window l");
    if (ctx < 0 || hist_ramp < 1) throw std::invalid_argument("invalid sampler schedule params");
    if (!std::isfinite(omega)) throw std::invalid_argument("guidance scale must be finite");
}

Mat temporal_guidance(const Mat& v_hist, const Mat& v_cond, double omega) {
    if (v_hist.rows() != v_cond.rows() || v_hist.cols() != v_cond.cols())
        throw std::invalid_argument("temporal_guidance: shape mismatch");
    // (1 - w) v_hist + w v_cond: same value, and exact at w = 0 and w = 1.
    return (1.0 - omega) * v_hist + omega * v_cond;
}

Mat corrupt_history(const Mat& buffer, const LevelVector& k_trap, long history, const Mat& eps) {
    if (static_cast<long>(k_trap.size()) != buffer.rows()) throw std::invalid_argument("corrupt_history: level count mismatch");
    if (history < 0 || history > buffer.rows()) throw std::invalid_argument("corrupt_history: history out of range");
    if (eps.rows() < history || eps.cols() != buffer.cols()) throw std::invalid_argument("corrupt_history: noise shape mismatch");
    Mat out = buffer;
    for (long i = 0; i < history; ++i) {
        const auto c = schedules::path_coeffs(k_trap[static_cast<std::size_t>(i)]);
        out.row(i) = c.alpha * buffer.row(i) + c.sigma * eps.row(i);
    }
    return out;
}

Mat corrupt_history(const Mat& buffer, const LevelVector& k_trap, long history, Rng& rng) {
    return corrupt_history(buffer, k_trap, history, gaussian(std::max(0L, history), buffer.cols(), rng));
}

TickLevels tick_levels(const StreamState& s, const SamplerParams& p) {
    const auto sp = p.schedule();
    TickLevels L;
    const auto n = static_cast<std::size_t>(s.size());
    L.mono.assign(n, 0.0);
    L.trap.assign(n, 0.0);
    const long first_window = s.tau - p.window + 1;
    for (std::size_t i = 0; i < n; ++i) {
        const long t = s.index[i];
        const double mono = t >= 1 ? schedules::mono_level(t, s.tau, p.window) : 0.0;
        L.mono[i] = mono;
        L.trap[i] = std::max(schedules::hist_level(t, s.tau, sp), mono);
        if (t < first_window || t < 1) ++L.history;
    }
    return L;
}

StreamSampler::StreamSampler(const flowmatch::VelocityModel& model, SamplerParams params, int latent_dim, int cond_dim,
                             std::uint64_t seed)
    : counter_(model), params_(params), latent_dim_(latent_dim), cond_dim_(cond_dim) {
    params_.validate();
    if (latent_dim < 1 || cond_dim < 0) throw std::invalid_argument("sampler dimensions invalid");
    reset(seed);
}

void StreamSampler::reset(std::uint64_t seed) {
    state_ = StreamState{};
    state_.buffer.resize(0, latent_dim_);
    state_.conds.resize(0, cond_dim_);
    state_.frozen_eps.resize(0, latent_dim_);
    state_.rng.seed(seed);
}

void StreamSampler::set_omega(double omega) {
    if (!std::isfinite(omega)) throw std::invalid_argument("guidance scale must be finite");
    params_.omega = omega;
}

void StreamSampler::warmup(const RowVec& idle, const RowVec& idle_cond, int n) {
    if (n < 0 || n > params_.max_len) throw std::invalid_argument("warmup count must be in [0, T]");
    if (n == 0) return;
    if (idle.size() != latent_dim_ || idle_cond.size() != cond_dim_) throw std::invalid_argument("warmup: dimension mismatch");
    if (state_.tau != 0 || state_.size() != 0) throw std::logic_error("warmup must precede the first step");
    for (int i = 0; i < n; ++i) {
        append_row(state_.buffer, idle);
        append_row(state_.conds, idle_cond);
        append_row(state_.frozen_eps, gaussian(1, latent_dim_, state_.rng));
        state_.index.push_back(i - n + 1);
        state_.updates.push_back(0);
    }
}

StepOutput StreamSampler::step(const RowVec& cond) {
    if (cond.size() != cond_dim_) throw std::invalid_argument("sampler step: condition dimension mismatch");
    StreamState& s = state_;
    ++s.tau;
    append_row(s.buffer, gaussian(1, latent_dim_, s.rng));
    append_row(s.conds, cond);
    append_row(s.frozen_eps, gaussian(1, latent_dim_, s.rng));
    s.index.push_back(s.tau);
    s.updates.push_back(0);
    if (s.size() > params_.max_len) {
        const Eigen::Index drop = s.size() - params_.max_len;
        drop_front(s.buffer, drop);
        drop_front(s.conds, drop);
        drop_front(s.frozen_eps, drop);
        s.index.erase(s.index.begin(), s.index.begin() + drop);
        s.updates.erase(s.updates.begin(), s.updates.begin() + drop);
    }

    const TickLevels L = tick_levels(s, params_);
    const Mat x_trap = params_.frozen_noise ? corrupt_history(s.buffer, L.trap, L.history, s.frozen_eps)
                                            : corrupt_history(s.buffer, L.trap, L.history, s.rng);
    const Mat v_cond = counter_.predict(x_trap, L.trap, &s.conds);
    const Mat v_hist = counter_.predict(s.buffer, L.mono, nullptr);
    const Mat v = temporal_guidance(v_hist, v_cond, params_.omega);

    const double delta = params_.delta();
    Mat next = s.buffer;
    for (long i = L.history; i < s.size(); ++i) next.row(i) -= v.row(i) * delta;
    if (!next.allFinite()) {
        throw SamplerError("non-finite window update at tick " + std::to_string(s.tau) + " (buffer " +
                               std::to_string(s.size()) + " tokens, omega " + std::to_string(params_.omega) + ")",
                           s);
    }
    s.buffer = std::move(next);
    for (long i = L.history; i < s.size(); ++i) ++s.updates[static_cast<std::size_t>(i)];

    StepOutput out;
    out.tick = s.tau;
    const long emit = s.tau - params_.window + 1;
    if (emit >= 1) {
        for (long i = 0; i < s.size(); ++i) {
            if (s.index[static_cast<std::size_t>(i)] == emit) {
                out.token = s.buffer.row(i);
                out.token_index = emit;
                ++s.emitted;
                break;
            }
        }
    }
    return out;
}

}  // namespace beatflow::sampler
