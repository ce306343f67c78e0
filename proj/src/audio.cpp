#include "beatflow/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace beatflow::audio {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

std::string layer_name(int i, const char* what) { return "enc" + std::to_string(i) + "_" + what; }

}  // namespace

int AudioConfig::receptive_field() const {
    int rf = 1;
    for (int d : dilations) rf += d;
    return rf;
}

void AudioConfig::validate() const {
    if (sample_rate <= 0 || hop <= 0 || fft_size <= 0) throw std::invalid_argument("audio rates must be positive");
    if (fft_size < hop) throw std::invalid_argument("fft_size must be >= hop");
    if (bands < 1) throw std::invalid_argument("bands must be >= 1");
    if (!(fmin > 0.0 && fmax > fmin && fmax <= sample_rate / 2.0))
        throw std::invalid_argument("band range must satisfy 0 < fmin < fmax <= rate/2");
    if (!(energy_ref > 0.0)) throw std::invalid_argument("energy_ref must be > 0");
    if (feature_dim < 1 || vq_dim < 1) throw std::invalid_argument("feature dims must be >= 1");
    if (dilations.empty()) throw std::invalid_argument("need at least one conv layer");
    for (int d : dilations)
        if (d < 1) throw std::invalid_argument("dilations must be >= 1");
    if (rvq_stages < 1 || rvq_codes < 2) throw std::invalid_argument("RVQ needs >= 1 stage and >= 2 codes");
    if (pae_frames < 2) throw std::invalid_argument("pae_frames must be >= 2");
    if (window_seconds * sample_rate < fft_size) throw std::invalid_argument("audio window shorter than fft_size");
}

nlohmann::json AudioConfig::to_json() const {
    return {{"sample_rate", sample_rate}, {"hop", hop},           {"fft_size", fft_size},
            {"bands", bands},             {"fmin", fmin},         {"fmax", fmax},
            {"energy_ref", energy_ref},   {"window_seconds", window_seconds},
            {"feature_dim", feature_dim}, {"vq_dim", vq_dim},     {"dilations", dilations},
            {"rvq_stages", rvq_stages},   {"rvq_codes", rvq_codes}, {"pae_frames", pae_frames}};
}

AudioConfig AudioConfig::from_json(const nlohmann::json& j) {
    AudioConfig c;
    c.sample_rate = j.at("sample_rate");
    c.hop = j.at("hop");
    c.fft_size = j.at("fft_size");
    c.bands = j.at("bands");
    c.fmin = j.at("fmin");
    c.fmax = j.at("fmax");
    c.energy_ref = j.at("energy_ref");
    c.window_seconds = j.at("window_seconds");
    c.feature_dim = j.at("feature_dim");
    c.vq_dim = j.at("vq_dim");
    c.dilations = j.at("dilations").get<std::vector<int>>();
    c.rvq_stages = j.at("rvq_stages");
    c.rvq_codes = j.at("rvq_codes");
    c.pae_frames = j.at("pae_frames");
    c.validate();
    return c;
}

// ---------------------------------------------------------------- ring buffer

AudioRingBuffer::AudioRingBuffer(int sample_rate, std::size_t capacity) : rate_(sample_rate), data_(capacity, 0.0) {
    if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
    if (capacity == 0) throw std::invalid_argument("ring buffer capacity must be > 0");
}

void AudioRingBuffer::push(std::span<const double> chunk, int sample_rate) {
    if (sample_rate != rate_) {
        throw RateMismatch("chunk sample rate " + std::to_string(sample_rate) + " does not match buffer rate " +
                           std::to_string(rate_));
    }
    const std::size_t cap = data_.size();
    if (chunk.size() >= cap) chunk = chunk.subspan(chunk.size() - cap);
    for (double s : chunk) {
        data_[head_] = s;
        head_ = (head_ + 1) % cap;
    }
    pushed_ += chunk.size();
}

std::vector<double> AudioRingBuffer::window() const { return newest(data_.size()); }

std::vector<double> AudioRingBuffer::newest(std::size_t n) const {
    const std::size_t cap = data_.size();
    if (n > cap) throw std::invalid_argument("requested more samples than the buffer holds");
    std::vector<double> out(n);
    std::size_t idx = (head_ + cap - n) % cap;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = data_[idx];
        idx = (idx + 1) % cap;
    }
    return out;
}

void AudioRingBuffer::clear() {
    std::fill(data_.begin(), data_.end(), 0.0);
    head_ = 0;
    pushed_ = 0;
}

// ------------------------------------------------------------------ frontend

Frontend::Frontend(const AudioConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int n = cfg_.fft_size;
    window_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) window_[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    const double bin_hz = static_cast<double>(cfg_.sample_rate) / n;
    for (int b = 0; b < cfg_.bands; ++b) {
        const double lo_hz = cfg_.fmin * std::pow(cfg_.fmax / cfg_.fmin, static_cast<double>(b) / cfg_.bands);
        const double hi_hz = cfg_.fmin * std::pow(cfg_.fmax / cfg_.fmin, static_cast<double>(b + 1) / cfg_.bands);
        int lo = static_cast<int>(std::ceil(lo_hz / bin_hz));
        int hi = static_cast<int>(std::ceil(hi_hz / bin_hz));
        if (!bins_.empty()) lo = std::max(lo, bins_.back().second);
        hi = std::min(std::max(hi, lo + 1), n / 2 + 1);
        bins_.emplace_back(lo, hi);
    }
    reset();
}

void Frontend::reset() { prev_ = RowVec::Zero(cfg_.bands); }

RowVec Frontend::frame(std::span<const double> samples) {
    const int n = cfg_.fft_size;
    if (static_cast<int>(samples.size()) != n) throw std::invalid_argument("frontend frame needs fft_size samples");
    std::vector<double> buf(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = samples[static_cast<std::size_t>(i)] * window_[static_cast<std::size_t>(i)];
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, buf);

    RowVec out(cfg_.bands + 1);
    const double norm = 1.0 / (static_cast<double>(n) * n);
    double flux = 0.0;
    for (int b = 0; b < cfg_.bands; ++b) {
        double e = 0.0;
        for (int k = bins_[static_cast<std::size_t>(b)].first; k < bins_[static_cast<std::size_t>(b)].second; ++k)
            e += std::norm(spec[static_cast<std::size_t>(k)]);
        e *= norm / (bins_[static_cast<std::size_t>(b)].second - bins_[static_cast<std::size_t>(b)].first);
        out(b) = std::log1p(e / cfg_.energy_ref);
        flux += std::max(0.0, out(b) - prev_(b));
    }
    out(cfg_.bands) = flux;
    prev_ = out.head(cfg_.bands);
    return out;
}

Mat frontend_features(const AudioConfig& cfg, std::span<const double> samples) {
    Frontend fe(cfg);
    const long frames = static_cast<long>(samples.size()) / cfg.hop;
    Mat out(frames, cfg.input_dim());
    std::vector<double> win(static_cast<std::size_t>(cfg.fft_size));
    for (long t = 0; t < frames; ++t) {
        const long end = (t + 1) * cfg.hop;
        for (long i = 0; i < cfg.fft_size; ++i) {
            const long s = end - cfg.fft_size + i;
            win[static_cast<std::size_t>(i)] = s >= 0 ? samples[static_cast<std::size_t>(s)] : 0.0;
        }
        out.row(t) = fe.frame(win);
    }
    return out;
}

// ----------------------------------------------------------------------- PAE

PaeParams pae_extract(std::span<const double> signal, double frame_rate) {
    const std::size_t n = signal.size();
    if (n < 2) throw std::invalid_argument("pae_extract needs at least 2 frames");
    if (!(frame_rate > 0.0)) throw std::invalid_argument("frame rate must be positive");
    PaeParams p;
    p.B = std::accumulate(signal.begin(), signal.end(), 0.0) / static_cast<double>(n);
    std::vector<double> x(n);
    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = signal[i] - p.B;
        dev = std::max(dev, std::abs(x[i]));
    }
    if (dev <= 1e-12 * std::max(1.0, std::abs(p.B))) return p;

    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, x);
    std::size_t best = 1;
    double best_mag = -1.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        const double m = std::abs(spec[k]);
        if (m > best_mag * (1.0 + 1e-9)) {
            best_mag = m;
            best = k;
        }
    }
    const bool nyquist = 2 * best == n;
    p.A = (nyquist ? 1.0 : 2.0) * best_mag / static_cast<double>(n);
    p.F = static_cast<double>(best) * frame_rate / static_cast<double>(n);
    const double theta = std::arg(spec[best]);
    p.phi = wrap_angle(-(theta + kPi / 2.0 + 2.0 * kPi * p.F * static_cast<double>(n - 1) / frame_rate));
    return p;
}

double pae_reconstruct(const PaeParams& p, double t_seconds) {
    return p.A * std::sin(2.0 * kPi * p.F * t_seconds - p.phi) + p.B;
}

RowVec pae_features(const PaeParams& p, double frame_rate) {
    const double nyq = frame_rate / 2.0;
    RowVec f(AudioConfig::pae_dim);
    f << pae_reconstruct(p, 0.0), p.A, std::sin(kPi * p.F / nyq), std::cos(kPi * p.F / nyq), std::sin(p.phi),
        std::cos(p.phi);
    return f;
}

// ----------------------------------------------------------------------- RVQ

void RvqCodebooks::validate() const {
    for (std::size_t q = 0; q < stages.size(); ++q) {
        const Mat& c = stages[q];
        if (!c.allFinite()) throw std::runtime_error("RVQ stage " + std::to_string(q) + " has non-finite codewords");
        if (c.cols() != stages[0].cols()) throw std::runtime_error("RVQ stages disagree on dimension");
        for (Eigen::Index i = 0; i < c.rows(); ++i)
            for (Eigen::Index j = i + 1; j < c.rows(); ++j)
                if ((c.row(i) - c.row(j)).norm() <= 1e-9)
                    throw std::runtime_error("RVQ stage " + std::to_string(q) + " has duplicate codewords");
    }
}

namespace {

Eigen::Index nearest(const Mat& centroids, const RowVec& x, double* dist = nullptr) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (centroids.row(c) - x).squaredNorm();
        if (d < bd) {
            bd = d;
            best = c;
        }
    }
    if (dist) *dist = bd;
    return best;
}

void dedupe(Mat& c, const Mat& data, bool fixed_zero) {
    for (int guard = 0; guard < 4 * c.rows(); ++guard) {
        Eigen::Index dup = -1;
        for (Eigen::Index i = 0; i < c.rows() && dup < 0; ++i)
            for (Eigen::Index j = i + 1; j < c.rows(); ++j)
                if ((c.row(i) - c.row(j)).norm() <= 1e-9) {
                    dup = (fixed_zero && j == 0) ? i : j;
                    break;
                }
        if (dup < 0) return;
        Eigen::Index far = -1;
        double far_d = 1e-18;
        for (Eigen::Index r = 0; r < data.rows(); ++r) {
            double d;
            nearest(c, data.row(r), &d);
            if (d > far_d) {
                far_d = d;
                far = r;
            }
        }
        if (far >= 0) {
            c.row(dup) = data.row(far);
        } else {
            c(dup, dup % c.cols()) += 1e-6 * static_cast<double>(dup + 1);
        }
    }
}

/// Lloyd iterations in place; an empty cluster takes the farthest point.
void lloyd(const Mat& data, Mat& c, int max_iters, bool fixed_zero) {
    const Eigen::Index n = data.rows();
    const auto k = static_cast<int>(c.rows());
    std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        Eigen::VectorXd dist(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const Eigen::Index a = nearest(c, data.row(r), &dist(r));
            if (a != assign[static_cast<std::size_t>(r)]) {
                assign[static_cast<std::size_t>(r)] = a;
                changed = true;
            }
        }
        Mat sum = Mat::Zero(k, data.cols());
        Eigen::VectorXi count = Eigen::VectorXi::Zero(k);
        for (Eigen::Index r = 0; r < n; ++r) {
            sum.row(assign[static_cast<std::size_t>(r)]) += data.row(r);
            ++count(assign[static_cast<std::size_t>(r)]);
        }
        for (int j = 0; j < k; ++j) {
            if (fixed_zero && j == 0) continue;
            if (count(j) > 0) {
                c.row(j) = sum.row(j) / count(j);
            } else {
                Eigen::Index far;
                dist.maxCoeff(&far);
                c.row(j) = data.row(far);
                dist(far) = 0.0;
                changed = true;
            }
        }
        if (!changed) break;
    }
}
}  // namespace

double quantization_error(const Mat& data, const Mat& centroids) {
    if (data.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        double d;
        nearest(centroids, data.row(r), &d);
        total += d;
    }
    return total / static_cast<double>(data.rows());
}

Mat kmeans(const Mat& data, int k, Rng& rng, int max_iters, bool fixed_zero) {
    const Eigen::Index n = data.rows();
    if (n < k) throw std::invalid_argument("k-means needs at least k points");
    Mat c = Mat::Zero(k, data.cols());
    Eigen::VectorXd d2(n);
    if (!fixed_zero) {
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        c.row(0) = data.row(pick(rng));
    }
    for (int j = 1; j < k; ++j) {
        for (Eigen::Index r = 0; r < n; ++r) d2(r) = (c.topRows(j).rowwise() - data.row(r)).rowwise().squaredNorm().minCoeff();
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng), acc = 0.0;
            chosen = n - 1;
            for (Eigen::Index r = 0; r < n; ++r) {
                acc += d2(r);
                if (acc >= target && d2(r) > 0.0) {
                    chosen = r;
                    break;
                }
            }
        } else {
            std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
            chosen = pick(rng);
        }
        c.row(j) = data.row(chosen);
    }

    lloyd(data, c, max_iters, fixed_zero);
    return c;
}

RvqCodebooks rvq_fit(const Mat& features, int stages, int codes, Rng& rng, RvqFitConfig cfg) {
    if (stages < 1) throw std::invalid_argument("RVQ needs at least one stage");
    if (features.rows() < codes) {
        throw std::invalid_argument("RVQ fit needs N >= C (N=" + std::to_string(features.rows()) +
                                    ", C=" + std::to_string(codes) + ")");
    }
    if (!features.allFinite()) throw std::invalid_argument("RVQ fit: non-finite features");
    RvqCodebooks books;
    Mat residual = features;
    for (int q = 0; q < stages; ++q) {
        const bool zero = q > 0;
        Mat best;
        double best_err = std::numeric_limits<double>::infinity();
        for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
            Mat c = kmeans(residual, codes, rng, cfg.max_iters, zero);
            const double e = quantization_error(residual, c);
            if (e < best_err) {
                best_err = e;
                best = std::move(c);
            }
        }
        dedupe(best, residual, zero);
        for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= best.row(nearest(best, residual.row(i)));
        books.stages.push_back(std::move(best));
    }
    return books;
}

void rvq_refine(const Mat& features, RvqCodebooks& books, int iters) {
    if (!books.fitted()) throw UsageError("RVQ codebooks have not been fitted");
    if (features.cols() != books.dim()) throw std::invalid_argument("RVQ refine: dimension mismatch");
    Mat residual = features;
    for (std::size_t q = 0; q < books.stages.size(); ++q) {
        Mat& c = books.stages[q];
        const bool zero = q > 0;
        lloyd(residual, c, iters, zero);
        dedupe(c, residual, zero);
        for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= c.row(nearest(c, residual.row(i)));
    }
}

RvqResult rvq_quantize(const RowVec& f, const RvqCodebooks& books, int stages_used) {
    if (!books.fitted()) throw UsageError("RVQ codebooks have not been fitted");
    if (f.size() != books.dim()) throw std::invalid_argument("RVQ input dimension mismatch");
    const int q_max = stages_used < 0 ? static_cast<int>(books.stages.size())
                                      : std::min(stages_used, static_cast<int>(books.stages.size()));
    RvqResult out;
    out.recon = RowVec::Zero(f.size());
    RowVec residual = f;
    for (int q = 0; q < q_max; ++q) {
        const Mat& c = books.stages[static_cast<std::size_t>(q)];
        const Eigen::Index idx = nearest(c, residual);
        out.codes.push_back(static_cast<int>(idx));
        out.recon += c.row(idx);
        residual -= c.row(idx);
    }
    return out;
}

// ------------------------------------------------------------------- encoder

MusicEncoder::MusicEncoder(AudioConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    int in = cfg_.input_dim();
    for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
        const int li = static_cast<int>(i);
        params_.add(layer_name(li, "w0"), nn::xavier(in, cfg_.feature_dim, rng, 0.8));
        params_.add(layer_name(li, "w1"), nn::xavier(in, cfg_.feature_dim, rng, 0.8));
        params_.add(layer_name(li, "b"), Mat::Zero(1, cfg_.feature_dim));
        in = cfg_.feature_dim;
    }
    params_.add("ffn_w", nn::xavier(cfg_.feature_dim, cfg_.vq_dim, rng));
    params_.add("ffn_b", Mat::Zero(1, cfg_.vq_dim));
    params_.add("dec_w", nn::xavier(cfg_.cond_dim(), cfg_.input_dim(), rng));
    params_.add("dec_b", Mat::Zero(1, cfg_.input_dim()));
    in_mean_ = RowVec::Zero(cfg_.input_dim());
    in_std_ = RowVec::Ones(cfg_.input_dim());
}

void MusicEncoder::set_input_stats(RowVec mean, RowVec std) {
    if (mean.size() != cfg_.input_dim() || std.size() != cfg_.input_dim() || !(std.array() > 0.0).all())
        throw std::invalid_argument("input stats must be input_dim wide with positive std");
    in_mean_ = std::move(mean);
    in_std_ = std::move(std);
    input_fitted_ = true;
}

Mat MusicEncoder::normalize_input(const Mat& frames) const {
    return (frames.rowwise() - in_mean_).array().rowwise() / in_std_.array();
}

void MusicEncoder::set_pae_channel(int c) {
    if (c < 0 || c >= cfg_.feature_dim) throw std::invalid_argument("PAE channel out of range");
    pae_channel_ = c;
}

nn::Var MusicEncoder::encode(nn::Tape& t, nn::Var inputs) const {
    nn::Var h = nn::mul_row(t, nn::add_row(t, inputs, t.constant(-in_mean_)), t.constant(in_std_.cwiseInverse()));
    for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
        const int li = static_cast<int>(i);
        const nn::Var now = nn::matmul(t, h, t.param(params_.at(layer_name(li, "w0"))));
        const nn::Var past = nn::matmul(t, nn::shift_rows(t, h, cfg_.dilations[i]), t.param(params_.at(layer_name(li, "w1"))));
        h = nn::tanh(t, nn::add_row(t, nn::add(t, now, past), t.param(params_.at(layer_name(li, "b")))));
    }
    return h;
}

nn::Var MusicEncoder::ffn_vq(nn::Tape& t, nn::Var f_causal) const {
    return nn::tanh(t, nn::linear(t, f_causal, params_.at("ffn_w"), &params_.at("ffn_b")));
}

RowVec MusicEncoder::ffn_vq_row(const RowVec& f) const {
    return (f * params_.at("ffn_w").value + params_.at("ffn_b").value).array().tanh().matrix();
}

MusicEncoder::Stepper::Stepper(const MusicEncoder& enc) : enc_(&enc) { reset(); }

void MusicEncoder::Stepper::reset() {
    const AudioConfig& cfg = enc_->cfg_;
    hist_.assign(cfg.dilations.size(), {});
    int in = cfg.input_dim();
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
        hist_[i].assign(static_cast<std::size_t>(cfg.dilations[i]), RowVec::Zero(in));
        in = cfg.feature_dim;
    }
    const RowVec zero = RowVec::Zero(cfg.input_dim());
    for (int i = 0; i < cfg.receptive_field(); ++i) step(zero);
}

RowVec MusicEncoder::Stepper::step(const RowVec& input) {
    const AudioConfig& cfg = enc_->cfg_;
    if (input.size() != cfg.input_dim()) throw std::invalid_argument("encoder step: wrong input dimension");
    RowVec h = (input - enc_->in_mean_).cwiseQuotient(enc_->in_std_);
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
        const int li = static_cast<int>(i);
        const auto& P = enc_->params_;
        auto& q = hist_[i];
        RowVec pre = h * P.at(layer_name(li, "w0")).value + q.front() * P.at(layer_name(li, "w1")).value +
                     P.at(layer_name(li, "b")).value;
        q.pop_front();
        q.push_back(h);
        h = pre.array().tanh().matrix();
    }
    return h;
}

void MusicEncoder::save(Checkpoint& ckpt) const {
    nlohmann::json m = cfg_.to_json();
    m["pae_channel"] = pae_channel_;
    m["rvq_fitted"] = books_.fitted();
    ckpt.meta["audio"] = m;
    ckpt.put(params_, "audio.");
    for (std::size_t q = 0; q < books_.stages.size(); ++q) ckpt.tensors["audio.rvq." + std::to_string(q)] = books_.stages[q];
    if (input_fitted_) {
        ckpt.tensors["audio.in_mean"] = in_mean_;
        ckpt.tensors["audio.in_std"] = in_std_;
    }
}

MusicEncoder MusicEncoder::load(const Checkpoint& ckpt) {
    const auto& m = ckpt.meta.at("audio");
    MusicEncoder enc(AudioConfig::from_json(m));
    ckpt.get(enc.params_, "audio.");
    enc.set_pae_channel(m.at("pae_channel"));
    if (ckpt.tensors.count("audio.in_mean")) enc.set_input_stats(ckpt.tensor("audio.in_mean"), ckpt.tensor("audio.in_std"));
    if (m.value("rvq_fitted", false)) {
        for (int q = 0; q < enc.cfg_.rvq_stages; ++q) enc.books_.stages.push_back(ckpt.tensor("audio.rvq." + std::to_string(q)));
        enc.books_.validate();
    }
    return enc;
}

Mat encode_features(const MusicEncoder& enc, const Mat& inputs) {
    MusicEncoder::Stepper st(enc);
    Mat out(inputs.rows(), enc.config().feature_dim);
    for (Eigen::Index t = 0; t < inputs.rows(); ++t) out.row(t) = st.step(inputs.row(t));
    return out;
}

Mat causal_encode(const MusicEncoder& enc, std::span<const double> window) {
    return encode_features(enc, frontend_features(enc.config(), window));
}

// ------------------------------------------------------------------ extractor

RowVec MusicCondition::vector() const {
    RowVec v(f_vq.size() + f_pae.size());
    v << f_vq, f_pae;
    return v;
}

ConditionExtractor::ConditionExtractor(const MusicEncoder& enc)
    : enc_(&enc),
      ring_(enc.config().sample_rate,
            static_cast<std::size_t>(std::max<double>(enc.config().fft_size,
                                                      std::round(enc.config().window_seconds * enc.config().sample_rate)))),
      frontend_(enc.config()),
      stepper_(enc) {
    reset();
}

void ConditionExtractor::reset() {
    ring_.clear();
    frontend_.reset();
    stepper_.reset();
    pending_.clear();
    const RowVec steady = stepper_.step(RowVec::Zero(enc_->config().input_dim()));
    pae_hist_.assign(static_cast<std::size_t>(enc_->config().pae_frames), steady(enc_->pae_channel()));
    last_pae_ = {};
    tick_ = 0;
}

void ConditionExtractor::push_samples(std::span<const double> chunk, int sample_rate) {
    if (sample_rate != ring_.sample_rate()) {
        throw RateMismatch("chunk sample rate " + std::to_string(sample_rate) + " does not match extractor rate " +
                           std::to_string(ring_.sample_rate()));
    }
    pending_.insert(pending_.end(), chunk.begin(), chunk.end());
}

long ConditionExtractor::ticks_available() const {
    return static_cast<long>(pending_.size()) / enc_->config().hop;
}

MusicCondition ConditionExtractor::next() {
    if (ticks_available() < 1) throw UsageError("no complete hop buffered");
    const auto hop = static_cast<std::size_t>(enc_->config().hop);
    std::vector<double> chunk(pending_.begin(), pending_.begin() + static_cast<long>(hop));
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(hop));
    return process(chunk);
}

MusicCondition ConditionExtractor::next_padded() {
    const auto hop = static_cast<std::size_t>(enc_->config().hop);
    std::vector<double> chunk(hop, 0.0);
    const std::size_t have = std::min(hop, pending_.size());
    std::copy(pending_.begin(), pending_.begin() + static_cast<long>(have), chunk.begin());
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(have));
    return process(chunk);
}

MusicCondition ConditionExtractor::process(std::span<const double> hop) {
    const AudioConfig& cfg = enc_->config();
    ring_.push(hop, cfg.sample_rate);
    const std::vector<double> win = ring_.newest(static_cast<std::size_t>(cfg.fft_size));
    const RowVec in = frontend_.frame(win);
    const RowVec f = stepper_.step(in);
    pae_hist_.pop_front();
    pae_hist_.push_back(f(enc_->pae_channel()));
    const std::vector<double> hist(pae_hist_.begin(), pae_hist_.end());
    last_pae_ = pae_extract(hist, cfg.frame_rate());

    MusicCondition c;
    c.f_vq = rvq_quantize(enc_->ffn_vq_row(f), enc_->codebooks()).recon;
    c.f_pae = pae_features(last_pae_, cfg.frame_rate());
    c.tick = tick_++;
    return c;
}

Mat extract_conditions(const MusicEncoder& enc, std::span<const double> samples) {
    ConditionExtractor ex(enc);
    ex.push_samples(samples, enc.config().sample_rate);
    const long n = ex.ticks_available();
    Mat out(n, enc.config().cond_dim());
    for (long t = 0; t < n; ++t) out.row(t) = ex.next().vector();
    return out;
}

// ------------------------------------------------------------------ training

namespace {

/// f_pae rows for a f_causal sequence, with history seeded by the silence steady state.
Mat pae_rows(const MusicEncoder& enc, const Mat& f_causal, double steady) {
    const AudioConfig& cfg = enc.config();
    std::deque<double> hist(static_cast<std::size_t>(cfg.pae_frames), steady);
    Mat out(f_causal.rows(), AudioConfig::pae_dim);
    std::vector<double> buf(hist.size());
    for (Eigen::Index t = 0; t < f_causal.rows(); ++t) {
        hist.pop_front();
        hist.push_back(f_causal(t, enc.pae_channel()));
        std::copy(hist.begin(), hist.end(), buf.begin());
        out.row(t) = pae_features(pae_extract(buf, cfg.frame_rate()), cfg.frame_rate());
    }
    return out;
}

double steady_value(const MusicEncoder& enc) {
    MusicEncoder::Stepper st(enc);
    return st.step(RowVec::Zero(enc.config().input_dim()))(enc.pae_channel());
}

Mat with_prefix(const Mat& seq, int rows) {
    Mat x = Mat::Zero(seq.rows() + rows, seq.cols());
    x.bottomRows(seq.rows()) = seq;
    return x;
}

struct SeqForward {
    nn::Var recon;
    nn::Var z;
    Mat q;
};

SeqForward forward_seq(nn::Tape& t, const MusicEncoder& enc, const Mat& seq, double steady) {
    const AudioConfig& cfg = enc.config();
    const int rf = cfg.receptive_field();
    const nn::Var full = enc.encode(t, t.constant(with_prefix(seq, rf)));
    const nn::Var f = nn::slice_rows(t, full, rf, seq.rows());
    const nn::Var z = enc.ffn_vq(t, f);
    const Mat& zv = t.value(z);
    Mat q(zv.rows(), zv.cols());
    for (Eigen::Index r = 0; r < zv.rows(); ++r) q.row(r) = rvq_quantize(zv.row(r), enc.codebooks()).recon;
    const nn::Var fvq = nn::add(t, z, t.constant(q - zv));
    const nn::Var fpae = t.constant(pae_rows(enc, t.value(f), steady));
    const nn::Var parts[] = {fvq, fpae};
    const nn::Var cond = nn::concat_cols(t, parts);
    return {nn::linear(t, cond, enc.params().at("dec_w"), &enc.params().at("dec_b")), z, std::move(q)};
}

Mat collect_z(const MusicEncoder& enc, const std::vector<Mat>& data, std::size_t max_rows) {
    std::size_t total = 0;
    for (const Mat& s : data) total += static_cast<std::size_t>(s.rows());
    const std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(1, max_rows));
    std::vector<RowVec> rows;
    std::size_t idx = 0;
    for (const Mat& s : data) {
        const Mat f = encode_features(enc, s);
        for (Eigen::Index r = 0; r < f.rows(); ++r, ++idx)
            if (idx % stride == 0) rows.push_back(enc.ffn_vq_row(f.row(r)));
    }
    Mat z(static_cast<Eigen::Index>(rows.size()), enc.config().vq_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) z.row(static_cast<Eigen::Index>(i)) = rows[i];
    return z;
}

void fit_input_stats(MusicEncoder& enc, const std::vector<Mat>& train) {
    // Floor keeps near-silent bands from being amplified into noise.
    constexpr double kStdFloor = 0.05;
    const int d = enc.config().input_dim();
    RowVec sum = RowVec::Zero(d), sq = RowVec::Zero(d);
    double n = 0.0;
    for (const Mat& s : train) {
        sum += s.colwise().sum();
        sq += s.array().square().matrix().colwise().sum();
        n += static_cast<double>(s.rows());
    }
    const RowVec mean = sum / n;
    const RowVec var = (sq / n - mean.array().square().matrix()).cwiseMax(0.0);
    enc.set_input_stats(mean, var.cwiseSqrt().cwiseMax(kStdFloor));
}

}  // namespace

int select_pae_channel(const MusicEncoder& enc, const std::vector<Mat>& data) {
    const AudioConfig& cfg = enc.config();
    const auto n = static_cast<std::size_t>(cfg.pae_frames);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(cfg.feature_dim);
    Eigen::VectorXi count = Eigen::VectorXi::Zero(cfg.feature_dim);
    Eigen::FFT<double> fft;
    std::vector<double> buf(n);
    std::vector<std::complex<double>> spec;
    for (const Mat& s : data) {
        const Mat f = encode_features(enc, s);
        for (Eigen::Index end = static_cast<Eigen::Index>(n); end <= f.rows(); end += 15) {
            for (int c = 0; c < cfg.feature_dim; ++c) {
                const auto col = f.col(c).segment(end - static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
                const double mean = col.mean();
                for (std::size_t i = 0; i < n; ++i) buf[i] = col(static_cast<Eigen::Index>(i)) - mean;
                fft.fwd(spec, buf);
                double total = 0.0, peak = 0.0;
                for (std::size_t k = 1; k <= n / 2; ++k) {
                    const double p = std::norm(spec[k]);
                    total += p;
                    peak = std::max(peak, p);
                }
                if (total < 1e-10) continue;
                score(c) += peak / total;
                ++count(c);
            }
        }
    }
    int best = 0;
    double best_s = -1.0;
    for (int c = 0; c < cfg.feature_dim; ++c) {
        const double s = count(c) > 0 ? score(c) / count(c) : 0.0;
        if (s > best_s) {
            best_s = s;
            best = c;
        }
    }
    return best;
}

double vqpae_eval(const MusicEncoder& enc, const std::vector<Mat>& data) {
    const double steady = steady_value(enc);
    double total = 0.0;
    long count = 0;
    for (const Mat& s : data) {
        nn::Tape t(false);
        const SeqForward fw = forward_seq(t, enc, s, steady);
        total += (t.value(fw.recon) - enc.normalize_input(s)).squaredNorm();
        count += s.size();
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

VqpaeReport vqpae_train(MusicEncoder& enc, const std::vector<Mat>& train, const std::vector<Mat>& heldout,
                        const VqpaeTrainConfig& cfg, const std::function<void(int, double)>& on_epoch) {
    if (train.empty()) throw std::invalid_argument("vqpae_train: empty dataset");
    for (const Mat& s : train)
        if (s.cols() != enc.config().input_dim()) throw std::invalid_argument("vqpae_train: wrong feature dimension");
    Rng rng(cfg.seed);
    if (!enc.input_stats_fitted()) fit_input_stats(enc, train);
    if (!enc.codebooks().fitted()) {
        enc.set_pae_channel(select_pae_channel(enc, train));
        enc.codebooks() = rvq_fit(collect_z(enc, train, 6000), enc.config().rvq_stages, enc.config().rvq_codes, rng);
    }

    VqpaeReport report;
    report.heldout_mse.push_back(vqpae_eval(enc, heldout.empty() ? train : heldout));
    nn::Adam opt(enc.params(), nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Cosine decay to a tenth of the base rate.
        const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 1.0;
        opt.set_lr(cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress))));
        std::shuffle(order.begin(), order.end(), rng);
        const double steady = steady_value(enc);
        double epoch_loss = 0.0;
        for (std::size_t i : order) {
            const Mat& s = train[i];
            if (s.rows() == 0) continue;
            nn::Tape t(true);
            const SeqForward fw = forward_seq(t, enc, s, steady);
            const Mat diff = t.value(fw.recon) - enc.normalize_input(s);
            const Mat commit = t.value(fw.z) - fw.q;
            const double inv_r = 1.0 / static_cast<double>(diff.size());
            const double inv_z = 1.0 / static_cast<double>(commit.size());
            epoch_loss += diff.squaredNorm() * inv_r + cfg.commitment * commit.squaredNorm() * inv_z;
            t.seed(fw.recon, 2.0 * inv_r * diff);
            t.seed(fw.z, 2.0 * cfg.commitment * inv_z * commit);
            t.backward();
            nn::Grads g(enc.params());
            t.accumulate(g);
            if (!g.all_finite()) throw std::runtime_error("vqpae_train diverged at epoch " + std::to_string(epoch));
            opt.step(enc.params(), g);
        }
        rvq_refine(collect_z(enc, train, 6000), enc.codebooks(), 10);
        report.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        report.heldout_mse.push_back(vqpae_eval(enc, heldout.empty() ? train : heldout));
        if (on_epoch) on_epoch(epoch, report.heldout_mse.back());
    }
    return report;
}

}  // namespace beatflow::audio
