// Acceptance run: one PASS/FAIL line per criterion, exit 0 only if all pass.
//
// The desk-scale criteria train the full pipeline once per config hash and
// reuse the artifacts from --work on later runs.

#include "beatflow/audio.hpp"
#include "beatflow/config.hpp"
#include "beatflow/denoiser.hpp"
#include "beatflow/flowmatch.hpp"
#include "beatflow/latent.hpp"
#include "beatflow/metrics.hpp"
#include "beatflow/motion.hpp"
#include "beatflow/pipeline.hpp"
#include "beatflow/sampler.hpp"
#include "beatflow/schedules.hpp"
#include "beatflow/service.hpp"
#include "beatflow/synth.hpp"
#include "beatflow/wav.hpp"

#include "helpers.hpp"

#include <CLI11.hpp>
#include <unsupported/Eigen/FFT>

#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace beatflow;
using bft::Mat;
using bft::randn;
using bft::RowVec;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log_line(const std::string& s) { std::cerr << "  . " << s << '\n'; }

// ---------------------------------------------------------------- desk run

struct Desk {
    RunConfig cfg;
    pipeline::Paths paths;
    double pipeline_seconds = 0.0;
    std::shared_ptr<const pipeline::Models> models;
};

/// Trains synth -> codec -> VAE -> denoiser unless a finished run with the same config exists.
Desk& desk(const fs::path& config, const fs::path& work_root) {
    static std::unique_ptr<Desk> d;
    if (d) return *d;
    d = std::make_unique<Desk>();
    d->cfg = RunConfig::load(config);
    std::ostringstream hex;
    hex << std::hex << d->cfg.hash();
    d->cfg.work_dir = (work_root / hex.str()).string();
    d->cfg.validate();
    d->paths = pipeline::Paths::from(d->cfg);
    const fs::path stamp = d->paths.work / "pipeline.json";
    if (fs::exists(stamp)) {
        d->pipeline_seconds = json::parse(std::ifstream(stamp)).at("seconds").get<double>();
        log_line("reusing desk artifacts in " + d->paths.work.string());
    } else {
        log_line("training desk pipeline in " + d->paths.work.string());
        const auto t0 = std::chrono::steady_clock::now();
        pipeline::run_synth(d->cfg, log_line);
        pipeline::run_fit_codec(d->cfg, log_line);
        pipeline::run_train_vae(d->cfg, log_line);
        pipeline::run_train(d->cfg, log_line);
        d->pipeline_seconds = seconds_since(t0);
        std::ofstream(stamp) << json{{"seconds", d->pipeline_seconds}}.dump() << '\n';
    }
    d->models = pipeline::Models::load(d->paths);
    return *d;
}

std::vector<double> load_wav(const fs::path& p, int rate) {
    wav::Audio a = wav::read_wav(p);
    return a.sample_rate == rate ? a.samples : wav::resample(a.samples, a.sample_rate, rate);
}

// ---------------------------------------------------------------- criteria

Outcome schedule_algebra() {
    using namespace schedules;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = mono_level(30, 30, 10) == 1.0 && mono_level(20, 30, 10) == 0.0 && mono_level(25, 30, 10) == 0.5;
    const ScheduleParams p5{5, 5, 5};
    ok = ok && hist_level(10, 20, p5) == 0.0 && mono_level(10, 20, 5) == 0.0 && trap_level(10, 20, p5) == 0.0;
    ok = ok && hist_level(5, 20, p5) == 1.0 && trap_level(5, 20, p5) == 1.0;
    const bool golden = ok;

    auto clamp01 = [](double x) { return std::min(1.0, std::max(0.0, x)); };
    Rng rng(31);
    std::uniform_int_distribution<int> len(1, 150), small(1, 30);
    long violations = 0;
    for (int draw = 0; draw < 1000; ++draw) {
        const int T = len(rng);
        const long tau = std::uniform_int_distribution<long>(1, T)(rng);
        const ScheduleParams p{small(rng), small(rng), small(rng)};
        const auto mono = monotonic_schedule(T, tau, p.window);
        const auto trap = trapezoid_schedule(T, tau, p);
        for (int i = 0; i < T; ++i) {
            const long t = i + 1;
            const double km = clamp01(static_cast<double>(t - (tau - p.window)) / p.window);
            const double kh = clamp01(static_cast<double>((tau - p.ctx - p.window) - t) / p.hist_ramp);
            const auto u = static_cast<std::size_t>(i);
            if (mono[u] != km || trap[u] != std::max(km, kh) || trap[u] < mono[u] || (km == 1.0 && trap[u] != 1.0))
                ++violations;
        }
    }
    const double secs = seconds_since(t0);
    return {golden && violations == 0 && secs < 1.0,
            std::string("golden ") + (golden ? "exact" : "MISMATCH") + ", " + std::to_string(violations) +
                " dominance violations over 1000 draws, " + fmt(secs * 1e3, 3) + " ms"};
}

Outcome masked_loss_oracle() {
    Rng rng(41);
    std::uniform_int_distribution<int> T(1, 40), D(1, 20);
    std::bernoulli_distribution clean(0.3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    bool ok = true;
    for (int inst = 0; inst < 100; ++inst) {
        const int t = T(rng), d = D(rng);
        const Mat a = randn(t, d, 500 + inst), b = randn(t, d, 900 + inst);
        schedules::LevelVector k(static_cast<std::size_t>(t));
        for (auto& x : k) x = clean(rng) ? 0.0 : u(rng);
        double brute = 0.0;
        for (int i = 0; i < t; ++i)
            if (k[static_cast<std::size_t>(i)] > 0.0)
                for (int j = 0; j < d; ++j) brute += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
        const double got = flowmatch::masked_fm_loss(a, b, k).sum;
        if (brute == 0.0) {
            ok = ok && got == 0.0;
        } else {
            worst = std::max(worst, bft::rel_err(got, brute));
        }
    }
    ok = ok && worst <= 1e-9;
    return {ok, "max relative error " + fmt(worst, 3) + " over 100 instances"};
}

Outcome guidance_algebra() {
    bool ok = true;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Mat h = randn(7, 5, 100 + s), c = randn(7, 5, 200 + s);
        ok = ok && sampler::temporal_guidance(h, c, 1.0) == c && sampler::temporal_guidance(h, c, 0.0) == h;
    }
    return {ok, ok ? "omega=1 -> v_cond, omega=0 -> v_hist, bit-exact on 20 draws" : "mismatch"};
}

void perturb(nn::ParamSet& ps, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : ps) p.value += nn::normal(p.value.rows(), p.value.cols(), 0.1, rng);
}

Outcome gradient_checks() {
    denoiser::DenoiserConfig dc;
    dc.d_model = 8;
    dc.n_layers = 2;
    dc.n_heads = 2;
    dc.max_len = 10;
    dc.latent_dim = 3;
    dc.cond_dim = 4;
    dc.level_embed_dim = 4;
    dc.cond_embed_dim = 4;
    dc.ffn_mult = 2;
    denoiser::DenoiserNet net(dc, 5);
    perturb(net.params(), 6);
    const Mat x = randn(5, 3, 7), c = randn(5, 4, 8), ct = randn(5, 3, 9);
    const schedules::LevelVector k{0.0, 0.2, 0.5, 0.8, 1.0};
    net.forward_recorded(x, k, &c);
    const nn::Grads gd = net.backward(ct);
    const double e_den = bft::gradcheck(net.params(), [&] { return (net.predict(x, k, &c).array() * ct.array()).sum(); }, gd);

    latent::VaeConfig vc;
    vc.input_dim = 6;
    vc.latent_dim = 3;
    vc.hidden = 8;
    vc.kl_weight = 0.3;
    latent::MotionVae vae(vc, 10);
    perturb(vae.params(), 11);
    const Mat f = randn(5, 6, 12), eps = randn(5, 3, 13);
    nn::Grads gv(vae.params());
    vae.loss_and_grads(f, eps, &gv);
    const double e_vae =
        bft::gradcheck(vae.params(), [&] { return vae.loss_and_grads(f, eps, nullptr).total(vc.kl_weight); }, gv);
    return {e_den <= 1e-4 && e_vae <= 1e-4, "denoiser " + fmt(e_den, 3) + ", VAE " + fmt(e_vae, 3) + " (relative)"};
}

/// v = (x - target) / k: the exact linear-path velocity toward a known clean token.
struct TargetOracle : flowmatch::VelocityModel {
    RowVec target;
    Mat predict(const Mat& x, const schedules::LevelVector& k, const Mat*) const override {
        Mat v = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (k[static_cast<std::size_t>(i)] > 0.0) v.row(i) = (x.row(i) - target) / k[static_cast<std::size_t>(i)];
        return v;
    }
};

Outcome algorithm_conformance() {
    TargetOracle m;
    m.target = randn(1, 6, 51);
    sampler::SamplerParams p;
    p.window = 10;
    p.omega = 2.0;
    sampler::StreamSampler s(m, p, 6, 3, 52);
    s.warmup(RowVec::Zero(6), RowVec::Zero(3), 30);
    double worst = 0.0;
    long emitted = 0, bad_updates = 0, bad_calls = 0;
    const int ticks = 300;
    for (int t = 1; t <= ticks; ++t) {
        const auto o = s.step(RowVec::Ones(3));
        if (s.model_calls() != 2L * t) ++bad_calls;
        if (!o.token) continue;
        ++emitted;
        worst = std::max(worst, (*o.token - m.target).cwiseAbs().maxCoeff());
        const auto& st = s.state();
        for (std::size_t i = 0; i < st.index.size(); ++i)
            if (st.index[i] == o.token_index && st.updates[i] != p.window) ++bad_updates;
    }
    const bool ok = worst <= 1e-6 && bad_updates == 0 && bad_calls == 0 && emitted == ticks - p.window + 1;
    return {ok, std::to_string(emitted) + " tokens, max error " + fmt(worst, 3) + ", " + std::to_string(bad_updates) +
                    " with updates != l, " + std::to_string(bad_calls) + " ticks with calls != 2/tick"};
}

Outcome strict_causality(Desk& d) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = synth::read_manifest(d.paths.heldout);
    if (rows.empty()) return {false, "no held-out tracks"};
    const int hop = d.cfg.audio.hop;
    const long ticks = 300;  // 10 s at 30 Hz
    std::vector<double> audio = load_wav(rows.front().wav, d.cfg.audio.sample_rate);
    audio.resize(static_cast<std::size_t>(ticks * hop), 0.0);
    const std::uint64_t seed = split_seed(d.cfg.seed, "causality");

    struct Emit {
        long tick;
        Eigen::VectorXd frame;
        std::vector<motion::Vec3> joints;
    };
    auto run = [&](const std::vector<double>& signal) {
        pipeline::Runtime rt(d.models, d.cfg.sampler, d.cfg.warmup_tokens, seed);
        std::vector<Emit> out;
        for (long t = 0; t < ticks; ++t) {
            const auto o = rt.step(std::span<const double>(signal).subspan(static_cast<std::size_t>(t * hop), hop),
                                   pipeline::sim_now());
            if (o.emitted) out.push_back({t, o.frame.values(), o.pose.joints});
        }
        return out;
    };
    const auto ref = run(audio);
    Rng noise_rng(77);
    std::normal_distribution<double> noise(0.0, 0.3);
    long compared = 0, mismatched = 0;
    int cuts = 0;
    for (long cut = 0; cut < ticks; cut += 23) {
        std::vector<double> alt = audio;
        for (std::size_t i = static_cast<std::size_t>((cut + 1) * hop); i < alt.size(); ++i) alt[i] = noise(noise_rng);
        const auto got = run(alt);
        ++cuts;
        for (std::size_t i = 0; i < ref.size() && ref[i].tick <= cut; ++i) {
            ++compared;
            if (i >= got.size() || got[i].tick != ref[i].tick || got[i].frame != ref[i].frame || got[i].joints != ref[i].joints)
                ++mismatched;
        }
    }
    const double secs = seconds_since(t0);
    return {mismatched == 0 && compared > 0 && secs < 60.0,
            std::to_string(cuts) + " cut points, " + std::to_string(compared) + " emitted frames compared, " +
                std::to_string(mismatched) + " differ, " + fmt(secs, 3) + " s"};
}

struct GenEval {
    metrics::EvalReport report;
    double seconds = 0.0;
};

GenEval generate_and_eval(Desk& d, double omega) {
    const auto t0 = std::chrono::steady_clock::now();
    sampler::SamplerParams sp = d.cfg.sampler;
    sp.omega = omega;
    std::vector<metrics::EvalSequence> gen;
    std::vector<std::vector<motion::GlobalPose>> ref;
    std::string skel_id;
    for (const auto& e : synth::read_manifest(d.paths.heldout)) {
        const auto samples = load_wav(e.wav, d.cfg.audio.sample_rate);
        auto g = pipeline::generate(d.models, samples, sp, d.cfg.warmup_tokens, split_seed(d.cfg.seed, "generate"));
        gen.push_back({std::move(g.poses), synth::read_beats(e.beats)});
        const auto clip = motion::read_motion(e.motion);
        skel_id = clip.skeleton_id;
        ref.push_back(pipeline::clip_poses(clip));
    }
    metrics::EvalConfig ec = d.cfg.eval;
    ec.seed = split_seed(d.cfg.seed, "eval");
    return {metrics::evaluate(gen, ref, motion::skeleton_by_id(skel_id), ec), seconds_since(t0)};
}

Outcome conditional_learning(Desk& d) {
    const GenEval c = generate_and_eval(d, 2.0);
    const GenEval u = generate_and_eval(d, 0.0);
    const double gap = c.report.bas - u.report.bas;
    const bool bas_ok = gap >= 0.05, fid_ok = c.report.fid_k < u.report.fid_k;
    const bool time_ok = d.pipeline_seconds <= 30 * 60;
    return {bas_ok && fid_ok && time_ok,
            "BAS " + fmt(c.report.bas) + " vs " + fmt(u.report.bas) + " (gap " + fmt(gap, 3) + (bas_ok ? " ok" : " < 0.05") +
                "), FID_k " + fmt(c.report.fid_k) + " vs " + fmt(u.report.fid_k) + (fid_ok ? " ok" : " not lower") +
                ", pipeline " + fmt(d.pipeline_seconds / 60.0, 3) + " min on " +
                std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " core(s)"};
}

/// Dominant frequency (Hz) of root-relative joint motion over frames [a, b).
double dominant_frequency(const std::vector<motion::GlobalPose>& poses, long a, long b, double fps) {
    const long n = b - a;
    const int nfft = 2048;
    Eigen::FFT<double> fft;
    std::vector<double> power(nfft / 2 + 1, 0.0);
    const std::size_t joints = poses.front().joints.size();
    for (std::size_t j = 0; j < joints; ++j)
        for (int axis = 0; axis < 3; ++axis) {
            std::vector<double> x(nfft, 0.0);
            double mean = 0.0;
            for (long i = 0; i < n; ++i) {
                const auto& p = poses[static_cast<std::size_t>(a + i)];
                const double v = j == 0 ? p.joints[0][axis] * (axis == 1) : p.joints[j][axis] - p.joints[0][axis];
                x[static_cast<std::size_t>(i)] = v;
                mean += v / n;
            }
            for (long i = 0; i < n; ++i)
                x[static_cast<std::size_t>(i)] = (x[static_cast<std::size_t>(i)] - mean) * (0.5 - 0.5 * std::cos(2 * kPi * i / (n - 1)));
            std::vector<std::complex<double>> X;
            fft.fwd(X, x);
            for (int k = 0; k <= nfft / 2; ++k) power[static_cast<std::size_t>(k)] += std::norm(X[static_cast<std::size_t>(k)]);
        }
    int best = 0;
    double best_p = -1.0;
    for (int k = 1; k <= nfft / 2; ++k) {
        const double f = k * fps / nfft;
        if (f < 0.2 || f > 8.0) continue;
        if (power[static_cast<std::size_t>(k)] > best_p) {
            best_p = power[static_cast<std::size_t>(k)];
            best = k;
        }
    }
    return best * fps / nfft;
}

/// Mean joint speed (m/s) over frames [a, b).
double mean_joint_speed(const std::vector<motion::GlobalPose>& poses, long a, long b, double fps) {
    double sum = 0.0;
    long count = 0;
    for (long i = std::max(1L, a); i < b; ++i)
        for (std::size_t j = 0; j < poses[static_cast<std::size_t>(i)].joints.size(); ++j) {
            sum += (poses[static_cast<std::size_t>(i)].joints[j] - poses[static_cast<std::size_t>(i - 1)].joints[j]).norm() * fps;
            ++count;
        }
    return count ? sum / count : 0.0;
}

struct Transition {
    double f_before = 0.0, f_after = 0.0, halved_at = -1.0;
    double mute_speed = 0.0, idle = 0.0, quiet_at = -1.0;
};

Transition transition_stats(const std::vector<motion::GlobalPose>& poses, const std::vector<motion::GlobalPose>& idle_poses,
                            double fps) {
    const long w = static_cast<long>(3.0 * fps);
    const long sw = static_cast<long>(10.0 * fps), mute = static_cast<long>(20.0 * fps);
    Transition r;
    r.f_before = dominant_frequency(poses, sw - w, sw, fps);
    r.f_after = dominant_frequency(poses, sw, sw + w, fps);
    for (long e = sw + 1; e <= sw + w; ++e) {
        const double ratio = dominant_frequency(poses, e - w, e, fps) / r.f_before;
        if (std::abs(ratio - 0.5) <= 0.1) {
            r.halved_at = (e - sw) / fps;
            break;
        }
    }
    r.idle = mean_joint_speed(idle_poses, static_cast<long>(2 * fps), static_cast<long>(idle_poses.size()), fps);
    const long half = static_cast<long>(0.5 * fps);
    r.mute_speed = mean_joint_speed(poses, mute + static_cast<long>(2 * fps), static_cast<long>(poses.size()), fps);
    for (long s = mute; s + half <= static_cast<long>(poses.size()); ++s)
        if (mean_joint_speed(poses, s, s + half, fps) < 10.0 * r.idle) {
            r.quiet_at = (s - mute) / fps;
            break;
        }
    return r;
}

Outcome music_transition(Desk& d) {
    synth::TrackSpec spec;
    spec.duration = 26.0;
    spec.segments = {{0.0, 120.0, 0}, {10.0, 60.0, 0}, {20.0, synth::kMute, 0}};
    spec.seed = 5;
    const synth::Track tr = synth::gen_track(spec, d.cfg.synth);
    const double fps = d.cfg.audio.frame_rate();
    const auto samples = tr.audio;
    const auto g = pipeline::generate(d.models, samples, d.cfg.sampler, d.cfg.warmup_tokens, split_seed(d.cfg.seed, "transition"));
    const std::vector<double> silence(samples.size(), 0.0);
    const auto idle = pipeline::generate(d.models, silence, d.cfg.sampler, d.cfg.warmup_tokens, split_seed(d.cfg.seed, "transition"));
    const Transition r = transition_stats(g.poses, idle.poses, fps);
    const Transition gt = transition_stats(tr.poses, tr.poses, fps);
    const bool halves = r.halved_at >= 0.0 && std::abs(r.f_after / r.f_before - 0.5) <= 0.1;
    const bool quiet = r.quiet_at >= 0.0 && r.quiet_at <= 2.0 && r.mute_speed < 10.0 * r.idle;
    return {halves && quiet,
            "f " + fmt(r.f_before, 3) + " -> " + fmt(r.f_after, 3) + " Hz (ratio " + fmt(r.f_after / r.f_before, 3) +
                ", first halved window " + (r.halved_at >= 0 ? fmt(r.halved_at, 3) + " s" : "never") + "); mute speed " +
                fmt(r.mute_speed, 3) + " m/s vs idle " + fmt(r.idle, 3) + " m/s, below 10x idle after " +
                (r.quiet_at >= 0 ? fmt(r.quiet_at, 3) + " s" : "never") + " [ground truth f " + fmt(gt.f_before, 3) + " -> " +
                fmt(gt.f_after, 3) + " Hz]"};
}

Outcome metric_oracles() {
    const Mat a = randn(300, 6, 61);
    const double id = metrics::fid(a, a);
    const int n = 10000;
    RowVec shift(4);
    shift << 1.0, -0.5, 0.25, 2.0;
    const Mat g = randn(n, 4, 63).rowwise() + shift;
    const double ms = metrics::fid(randn(n, 4, 62), g);
    const double ms_err = std::abs(ms - shift.squaredNorm()) / shift.squaredNorm();

    const std::vector<double> beats{0.5, 1.0, 1.5, 2.0};
    const bool bas_ok = metrics::bas(beats, beats) == 1.0 && std::abs(metrics::bas({1.1}, beats, 0.1) - std::exp(-0.5)) < 1e-12 &&
                        metrics::bas({}, beats) == 0.0;

    const motion::Skeleton s = motion::toy5();
    std::vector<motion::GlobalPose> pinned(30, motion::rest_pose(s)), sliding;
    for (int i = 0; i < 30; ++i) sliding.push_back(motion::rest_pose(s, motion::Vec3(0.03 * i, 0.0, 0.0)));
    const double f0 = metrics::fsr(pinned, s), f1 = metrics::fsr(sliding, s);

    const bool ok = std::abs(id) <= 1e-6 && ms_err <= 0.05 && bas_ok && f0 == 0.0 && f1 == 1.0;
    return {ok, "FID identity " + fmt(id, 3) + ", mean shift " + fmt(ms) + " vs " + fmt(shift.squaredNorm()) + " (" +
                    fmt(100 * ms_err, 3) + "%), BAS cases " + (bas_ok ? "exact" : "WRONG") + ", FSR " + fmt(f0) + "/" + fmt(f1)};
}

Outcome round_trips() {
    // Motion: a turning, travelling, bobbing trajectory through FK, encoded and re-integrated.
    double motion_err = 0.0;
    for (const motion::Skeleton& s : {motion::toy5(), motion::smpl22()}) {
        std::vector<motion::GlobalPose> traj;
        for (int f = 0; f < 300; ++f) {
            const double t = f / 30.0;
            const motion::Vec3 root(0.8 * std::sin(0.5 * t), s.offsets[0].y() + 0.05 * std::sin(4.0 * t), 0.6 * t);
            std::vector<motion::Mat3> rots(static_cast<std::size_t>(s.joint_count()), motion::Mat3::Identity());
            rots[0] = motion::rot_y(0.7 * t) * motion::rot_x(0.1 * std::sin(3.0 * t));
            for (int j = 1; j < s.joint_count(); ++j)
                rots[static_cast<std::size_t>(j)] = motion::rot_x(0.4 * std::sin(2.0 * t + j)) * motion::rot_z(0.3 * std::cos(1.5 * t + 2 * j));
            traj.push_back(motion::make_pose(s, root, std::move(rots)));
        }
        const auto back = motion::decode_stream(s, motion::encode_sequence(s, traj), traj[0]);
        for (std::size_t f = 0; f < traj.size(); ++f)
            for (std::size_t j = 0; j < traj[f].joints.size(); ++j)
                motion_err = std::max(motion_err, (traj[f].joints[j] - back[f].joints[j]).norm());
    }

    // PAE on on-bin sinusoids, 2 s window at 30 Hz.
    double pae_err = 0.0;
    const int n = 60;
    for (double f : {0.5, 1.0, 2.0, 3.5, 7.0}) {
        std::vector<double> x(n);
        for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = 1.3 * std::sin(2 * kPi * f * i / 30.0 + 0.7) + 0.2;
        const auto p = audio::pae_extract(x, 30.0);
        double err = 0.0, ref = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = audio::pae_reconstruct(p, static_cast<double>(i - (n - 1)) / 30.0);
            err += std::pow(v - x[static_cast<std::size_t>(i)], 2);
            ref += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        }
        pae_err = std::max(pae_err, std::sqrt(err / ref));
    }

    // RVQ: dataset error never increases with more stages.
    const Mat data = randn(600, 5, 71);
    Rng rng(72);
    const auto books = audio::rvq_fit(data, 4, 16, rng);
    std::vector<double> errs;
    for (int q = 1; q <= 4; ++q) {
        double e = 0.0;
        for (Eigen::Index i = 0; i < data.rows(); ++i) e += (audio::rvq_quantize(data.row(i), books, q).recon - data.row(i)).squaredNorm();
        errs.push_back(e / data.rows());
    }
    const bool mono = std::is_sorted(errs.rbegin(), errs.rend());
    return {motion_err <= 1e-4 && pae_err <= 0.01 && mono,
            "motion " + fmt(motion_err, 3) + " m, PAE " + fmt(100 * pae_err, 3) + "% RMS, RVQ stage errors " + fmt(errs[0], 3) +
                " >= " + fmt(errs[1], 3) + " >= " + fmt(errs[2], 3) + " >= " + fmt(errs[3], 3)};
}

std::shared_ptr<const service::TrackLibrary> heldout_library(const Desk& d) {
    return std::make_shared<const service::TrackLibrary>(service::TrackLibrary::from_dir(d.paths.heldout, d.cfg.audio.sample_rate));
}

Outcome throughput(Desk& d) {
    service::Session session(d.models, service::session_config(d.cfg), heldout_library(d), pipeline::wall_now());
    const auto r = service::bench(session, 1000);
    return {r.total.p95 < 33.3, "p95 total " + fmt(r.total.p95, 3) + " ms (p50 " + fmt(r.total.p50, 3) + ", max " +
                                    fmt(r.total.max, 3) + ", sample p95 " + fmt(r.sample.p95, 3) + ") over 1000 ticks"};
}

Outcome replay_determinism(Desk& d) {
    const auto lib = heldout_library(d);
    const auto ids = lib->ids();
    auto cmd = [](long after, const std::string& name, json value) {
        return service::ScriptedCommand{after, json{{"type", "cmd"}, {"cmd", name}, {"value", std::move(value)}}};
    };
    const std::vector<service::ScriptedCommand> script{
        cmd(-1, "set_omega", 1.5),  cmd(40, "mute", true),     cmd(70, "mute", false),
        cmd(90, "tempo_scale", 2.0), cmd(120, "select_track", ids.back()), cmd(150, "set_omega", 0.5),
        cmd(200, "reset", nullptr),  cmd(230, "tempo_scale", 0.5)};
    auto run = [&] {
        service::Session s(d.models, service::session_config(d.cfg), lib, pipeline::sim_now());
        return service::replay(s, script, 300);
    };
    const auto a = run(), b = run();
    std::size_t bytes = 0;
    for (const auto& line : a) bytes += line.size() + 1;
    return {a == b && !a.empty(), std::to_string(a.size()) + " lines, " + std::to_string(bytes) + " bytes, " +
                                      (a == b ? "identical" : "DIFFERENT")};
}

// Not a listed criterion: the held-out VAE reconstruction bar, which needs the desk corpus.
Outcome vae_reconstruction(Desk& d) {
    std::vector<Mat> parts;
    Eigen::Index rows = 0;
    for (const auto& e : synth::read_manifest(d.paths.heldout)) {
        parts.push_back(motion::read_motion(e.motion).frames);
        rows += parts.back().rows();
    }
    Mat ho(rows, parts.front().cols());
    rows = 0;
    for (const auto& p : parts) {
        ho.middleRows(rows, p.rows()) = p;
        rows += p.rows();
    }
    const auto& vae = d.models->vae;
    const Mat mu = vae.encode(ho).mu;
    const RowVec rms = (vae.decode(mu) - ho).colwise().squaredNorm().cwiseSqrt() / std::sqrt(static_cast<double>(ho.rows()));
    const RowVec sd = vae.data_norm().std;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < ho.cols(); ++j)
        if (sd(j) > 1e-2) worst = std::max(worst, rms(j) / sd(j));
    const Mat z = vae.latent_norm().apply(mu);
    const RowVec zsd = ((z.rowwise() - z.colwise().mean()).colwise().squaredNorm() / static_cast<double>(z.rows())).cwiseSqrt();
    const bool ok = worst <= 0.05 && zsd.minCoeff() >= 0.5 && zsd.maxCoeff() <= 2.0;
    return {ok, "worst channel RMS " + fmt(100 * worst, 3) + "% of std, standardized mu std in [" + fmt(zsd.minCoeff(), 3) +
                    ", " + fmt(zsd.maxCoeff(), 3) + "]"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("beatflow acceptance run");
    std::string config = BEATFLOW_DESK_CONFIG;
    std::string work = "acceptance_work";
    std::string only;
    app.add_option("--config", config, "desk-scale config");
    app.add_option("--work", work, "artifact cache root (one subdirectory per config hash)");
    app.add_option("--only", only, "run criteria whose name contains this text");
    CLI11_PARSE(app, argc, argv);

    using Check = std::function<Outcome()>;
    auto with_desk = [&](std::function<Outcome(Desk&)> f) -> Check { return [=] { return f(desk(config, work)); }; };
    const std::vector<std::pair<std::string, Check>> criteria{
        {"schedule-algebra", schedule_algebra},
        {"masked-loss-oracle", masked_loss_oracle},
        {"guidance-algebra", guidance_algebra},
        {"gradient-checks", gradient_checks},
        {"streaming-conformance", algorithm_conformance},
        {"strict-causality", with_desk(strict_causality)},
        {"conditional-learning", with_desk(conditional_learning)},
        {"music-transition", with_desk(music_transition)},
        {"metric-oracles", metric_oracles},
        {"round-trips", round_trips},
        {"throughput", with_desk(throughput)},
        {"replay-determinism", with_desk(replay_determinism)},
        {"vae-reconstruction (supplementary)", with_desk(vae_reconstruction)},
    };
    int failed = 0, ran = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && name.find(only) == std::string::npos) continue;
        ++ran;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 3) << " s]"
                  << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
