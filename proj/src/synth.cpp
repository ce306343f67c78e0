#include "beatflow/synth.hpp"

#include "beatflow/random.hpp"
#include "beatflow/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace beatflow::synth {

namespace {

constexpr double kPi = std::numbers::pi;

// Per-style amplitudes: bounce (m), sway (m), yaw, roll, chest bend/twist/side (rad),
// limb rotations (rad, leaves only).
struct StyleAmp {
    std::array<double, 8> a;
    std::array<double, 8> psi;  // 0 or pi
    double pitch;               // tone Hz
};

const std::array<StyleAmp, kStyles>& styles() {
    static const std::array<StyleAmp, kStyles> s{{
        {{0.06, 0.02, 0.10, 0.05, 0.15, 0.10, 0.30, 0.4}, {0, 0, kPi, 0, 0, kPi, 0, 0}, 220.0},
        {{0.02, 0.08, 0.30, 0.10, 0.05, 0.20, 0.50, 0.6}, {0, kPi, 0, kPi, 0, 0, kPi, kPi}, 330.0},
        {{0.03, 0.03, 0.60, 0.02, 0.10, 0.50, 0.15, 0.8}, {kPi, 0, 0, 0, kPi, 0, 0, 0}, 440.0},
        {{0.08, 0.01, 0.05, 0.08, 0.50, 0.05, 0.20, 0.5}, {0, 0, 0, kPi, 0, kPi, kPi, kPi}, 550.0},
    }};
    return s;
}

const Segment& segment_at(const TrackSpec& spec, double t) {
    std::size_t i = 0;
    while (i + 1 < spec.segments.size() && spec.segments[i + 1].start <= t) ++i;
    return spec.segments[i];
}

double segment_end(const TrackSpec& spec, std::size_t i) {
    return i + 1 < spec.segments.size() ? spec.segments[i + 1].start : spec.duration;
}

}  // namespace

void TrackSpec::validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration)) throw std::invalid_argument("track duration must be > 0");
    if (segments.empty()) throw std::invalid_argument("track needs at least one segment");
    if (segments.front().start != 0.0) throw std::invalid_argument("first segment must start at 0");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (!std::isfinite(s.start) || s.start >= duration) throw std::invalid_argument("segment starts outside the track");
        if (i > 0 && s.start <= segments[i - 1].start) throw std::invalid_argument("segment starts must strictly increase");
        if (!(s.bpm == kMute || (s.bpm > 0.0 && std::isfinite(s.bpm)))) throw std::invalid_argument("segment tempo must be > 0 or MUTE");
        if (s.style < 0 || s.style >= kStyles) throw std::invalid_argument("segment style out of range");
    }
}

nlohmann::json TrackSpec::to_json() const {
    nlohmann::json segs = nlohmann::json::array();
    for (const Segment& s : segments) {
        segs.push_back({{"start", s.start}, {"bpm", s.mute() ? nlohmann::json("MUTE") : nlohmann::json(s.bpm)}, {"style", s.style}});
    }
    return {{"duration", duration}, {"segments", segs}, {"seed", seed}};
}

TrackSpec TrackSpec::from_json(const nlohmann::json& j) {
    TrackSpec t;
    t.duration = j.at("duration");
    t.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("segments")) {
        Segment seg;
        seg.start = s.at("start");
        const auto& bpm = s.at("bpm");
        seg.bpm = bpm.is_string() ? (bpm.get<std::string>() == "MUTE" ? kMute : throw std::invalid_argument("bad bpm"))
                                  : bpm.get<double>();
        seg.style = s.value("style", 0);
        t.segments.push_back(seg);
    }
    t.validate();
    return t;
}

double beat_count(const TrackSpec& spec, double t) {
    double b = 0.0;
    for (std::size_t i = 0; i < spec.segments.size(); ++i) {
        const Segment& s = spec.segments[i];
        if (t <= s.start) break;
        const double end = std::min(t, segment_end(spec, i));
        if (!s.mute()) b += (end - s.start) * s.bpm / 60.0;
    }
    return b;
}

std::vector<double> beat_times(const TrackSpec& spec) {
    spec.validate();
    std::vector<double> out;
    for (std::size_t i = 0; i < spec.segments.size(); ++i) {
        const Segment& s = spec.segments[i];
        if (s.mute()) continue;
        const double b0 = beat_count(spec, s.start);
        const double end = segment_end(spec, i);
        // Integer beat counts reached inside [start, end); tolerance absorbs rounding of b0.
        for (double m = std::ceil(b0 - 1e-9);; m += 1.0) {
            const double t = s.start + (m - b0) * 60.0 / s.bpm;
            if (t >= end - 1e-12) break;
            if (out.empty() || t > out.back() + 1e-9) out.push_back(std::max(t, s.start));
        }
    }
    return out;
}

Track gen_track(const TrackSpec& spec, const SynthConfig& cfg) {
    spec.validate();
    Track tr;
    tr.spec = spec;
    tr.beat_times = beat_times(spec);
    Rng rng(split_seed(spec.seed, "track"));
    const motion::Skeleton skel = motion::toy5();

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double base_yaw = 2.0 * kPi * u01(rng) - kPi;
    const double gain = 0.8 + 0.4 * u01(rng);

    // Motion.
    const int frames = static_cast<int>(std::lround(spec.duration * cfg.fps));
    const double dt = 1.0 / cfg.fps;
    double env = 0.0;
    std::array<double, 8> amp{};
    bool first = true;
    tr.poses.reserve(static_cast<std::size_t>(frames));
    for (int n = 0; n < frames; ++n) {
        const double t = n * dt;
        const Segment& seg = segment_at(spec, t);
        const StyleAmp& st = styles()[static_cast<std::size_t>(seg.style)];
        const double env_target = seg.mute() ? 0.0 : 1.0;
        if (first) {
            env = env_target;
            for (int i = 0; i < 8; ++i) amp[static_cast<std::size_t>(i)] = st.a[static_cast<std::size_t>(i)];
            first = false;
        } else {
            const double tau = seg.mute() ? cfg.mute_decay : cfg.attack;
            env += (env_target - env) * (1.0 - std::exp(-dt / tau));
            const double k = 1.0 - std::exp(-dt / cfg.attack);
            for (int i = 0; i < 8; ++i)
                amp[static_cast<std::size_t>(i)] += (st.a[static_cast<std::size_t>(i)] - amp[static_cast<std::size_t>(i)]) * k;
        }
        const double b = beat_count(spec, t);
        std::array<double, 8> v{};
        for (int i = 0; i < 8; ++i)
            v[static_cast<std::size_t>(i)] =
                gain * env * amp[static_cast<std::size_t>(i)] * std::cos(kPi * b + st.psi[static_cast<std::size_t>(i)]);

        const motion::Mat3 heading = motion::rot_y(base_yaw + v[2]);
        const motion::Vec3 sway = heading * motion::Vec3(v[1], 0.0, 0.0);
        const motion::Vec3 root = motion::Vec3(0.0, skel.offsets[0].y() + v[0], 0.0) + sway;
        std::vector<motion::Mat3> rots(static_cast<std::size_t>(skel.joint_count()), motion::Mat3::Identity());
        rots[0] = heading * motion::rot_z(v[3]);
        rots[3] = motion::rot_x(v[4]) * motion::rot_y(v[5]) * motion::rot_z(v[6]);
        rots[1] = motion::rot_x(v[7]);
        rots[2] = motion::rot_x(-v[7]);
        rots[4] = motion::rot_z(v[7]);
        tr.poses.push_back(motion::make_pose(skel, root, std::move(rots)));
    }
    tr.clip = motion::MotionClip::from_frames(skel.id, cfg.fps, motion::encode_sequence(skel, tr.poses));

    // Audio.
    const std::size_t samples = static_cast<std::size_t>(frames) * static_cast<std::size_t>(std::lround(cfg.sample_rate / cfg.fps));
    tr.audio.assign(samples, 0.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double lp = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        lp += 0.3 * (gauss(rng) - lp);  // one-pole low-pass keeps the floor band-limited
        tr.audio[i] = cfg.noise_floor * lp;
    }
    const double sr = cfg.sample_rate;
    for (std::size_t bi = 0; bi < tr.beat_times.size(); ++bi) {
        const double bt = tr.beat_times[bi];
        const Segment& seg = segment_at(spec, bt);
        const StyleAmp& st = styles()[static_cast<std::size_t>(seg.style)];
        const double period = 60.0 / seg.bpm;
        const double tone_tau = 0.25 * period;
        // Even beats are accented so the audio fixes the sign of the dance phase.
        const bool accent = std::llround(beat_count(spec, bt)) % 2 == 0;
        const double pitch = accent ? st.pitch : 1.5 * st.pitch;
        const double kick_gain = accent ? 0.5 : 0.15;
        const std::size_t s0 = static_cast<std::size_t>(std::ceil(bt * sr - 1e-9));
        const std::size_t len = static_cast<std::size_t>(std::min(period, 6.0 * tone_tau) * sr);
        for (std::size_t j = 0; j < len && s0 + j < samples; ++j) {
            const double t = (static_cast<double>(s0 + j) / sr) - bt;
            if (t < 0.0) continue;
            const double tone = 0.25 * std::exp(-t / tone_tau) * std::sin(2.0 * kPi * pitch * t);
            const double kick = kick_gain * std::exp(-t / 0.04) * std::sin(2.0 * kPi * 60.0 * t);
            tr.audio[s0 + j] += tone + kick;
        }
    }
    return tr;
}

std::vector<TrackSpec> make_corpus(const CorpusConfig& cfg) {
    if (cfg.tracks < 0) throw std::invalid_argument("corpus track count must be >= 0");
    if (cfg.tempi.empty()) throw std::invalid_argument("corpus needs at least one tempo");
    if (cfg.duration < 4.0) throw std::invalid_argument("corpus tracks must be at least 4 s");
    std::vector<TrackSpec> out;
    for (int i = 0; i < cfg.tracks; ++i) {
        Rng rng(split_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        TrackSpec spec;
        spec.duration = cfg.duration;
        spec.seed = split_seed(cfg.seed ^ 0x5eedULL, static_cast<std::uint64_t>(i));
        std::uniform_int_distribution<int> nseg(1, std::max(1, cfg.max_segments));
        std::uniform_int_distribution<std::size_t> tempo(0, cfg.tempi.size() - 1);
        std::uniform_int_distribution<int> style(0, kStyles - 1);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const int count = nseg(rng);
        std::set<int> cuts;
        const int lo = 2, hi = static_cast<int>(cfg.duration) - 2;
        std::uniform_int_distribution<int> cut(lo, std::max(lo, hi));
        for (int guard = 0; static_cast<int>(cuts.size()) < count - 1 && guard < 100; ++guard) cuts.insert(cut(rng));
        std::vector<double> starts{0.0};
        for (int c : cuts) starts.push_back(c);
        for (std::size_t s = 0; s < starts.size(); ++s) {
            Segment seg;
            seg.start = starts[s];
            seg.style = style(rng);
            seg.bpm = cfg.tempi[tempo(rng)];
            if (s > 0 && u01(rng) < cfg.mute_fraction) seg.bpm = kMute;
            spec.segments.push_back(seg);
        }
        spec.validate();
        out.push_back(std::move(spec));
    }
    return out;
}

void build_dataset(const std::vector<TrackSpec>& specs, const std::filesystem::path& out, const SynthConfig& cfg) {
    std::filesystem::create_directories(out);
    std::ofstream manifest(out / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!manifest) throw std::runtime_error("cannot write " + (out / "manifest.jsonl").string());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "track_%04zu", i);
        const Track tr = gen_track(specs[i], cfg);
        const std::string wav = std::string(id) + ".wav";
        const std::string mot = std::string(id) + ".bfmo";
        const std::string beats = std::string(id) + ".beats.json";
        wav::write_wav(out / wav, wav::Audio{cfg.sample_rate, tr.audio}, wav::SampleFormat::float32);
        motion::write_motion(out / mot, tr.clip);
        {
            std::ofstream bj(out / beats, std::ios::binary | std::ios::trunc);
            if (!bj) throw std::runtime_error("cannot write " + (out / beats).string());
            bj << nlohmann::json(tr.beat_times).dump() << '\n';
        }
        nlohmann::json row = {{"id", id}, {"wav", wav}, {"motion", mot}, {"beats", beats}, {"spec", specs[i].to_json()}};
        manifest << row.dump() << '\n';
    }
    if (!manifest) throw std::runtime_error("failed writing manifest");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.jsonl");
    if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.jsonl").string());
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.push_back({j.at("id"), dir / j.at("wav").get<std::string>(), dir / j.at("motion").get<std::string>(),
                       dir / j.at("beats").get<std::string>(), TrackSpec::from_json(j.at("spec"))});
    }
    return out;
}

std::vector<double> read_beats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(in).get<std::vector<double>>();
}

}  // namespace beatflow::synth
