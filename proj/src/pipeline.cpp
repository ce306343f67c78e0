#include "beatflow/pipeline.hpp"

#include "beatflow/wav.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

namespace beatflow::pipeline {

namespace {

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

void say(const Log& log, const std::string& s) {
    if (log) log(s);
}

std::vector<double> load_audio(const fs::path& p, int rate) {
    wav::Audio a = wav::read_wav(p);
    if (a.sample_rate != rate) return wav::resample(a.samples, a.sample_rate, rate);
    return a.samples;
}

}  // namespace

Paths Paths::from(const RunConfig& cfg) {
    Paths p;
    p.work = cfg.work_dir;
    p.data = p.work / "data";
    p.heldout = p.work / "heldout";
    p.codec = p.work / "codec.bfck";
    p.vae = p.work / "vae.bfck";
    p.denoiser = p.work / "denoiser.bfck";
    return p;
}

void archive_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream os(dir / "config.ini", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (dir / "config.ini").string());
    os << cfg.to_ini();
}

void run_synth(const RunConfig& cfg, const Log& log) {
    const Paths p = Paths::from(cfg);
    synth::CorpusConfig train = cfg.corpus;
    train.seed = split_seed(cfg.seed, "corpus");
    synth::CorpusConfig held = cfg.corpus;
    held.tracks = cfg.heldout_tracks;
    held.seed = split_seed(cfg.seed, "heldout");
    say(log, "synth: " + std::to_string(train.tracks) + " training tracks -> " + p.data.string());
    synth::build_dataset(synth::make_corpus(train), p.data, cfg.synth);
    say(log, "synth: " + std::to_string(held.tracks) + " held-out tracks -> " + p.heldout.string());
    synth::build_dataset(synth::make_corpus(held), p.heldout, cfg.synth);
    archive_config(cfg, p.work);
}

audio::VqpaeReport run_fit_codec(const RunConfig& cfg, const Log& log) {
    const Paths p = Paths::from(cfg);
    const auto train_entries = synth::read_manifest(p.data);
    const auto held_entries = synth::read_manifest(p.heldout);
    std::vector<Mat> train, held;
    for (std::size_t i = 0; i < train_entries.size() && static_cast<int>(i) < cfg.codec_tracks; ++i)
        train.push_back(audio::frontend_features(cfg.audio, load_audio(train_entries[i].wav, cfg.audio.sample_rate)));
    for (std::size_t i = 0; i < held_entries.size() && i < 8; ++i)
        held.push_back(audio::frontend_features(cfg.audio, load_audio(held_entries[i].wav, cfg.audio.sample_rate)));
    say(log, "fit-codec: " + std::to_string(train.size()) + " training / " + std::to_string(held.size()) + " held-out tracks");

    audio::MusicEncoder enc(cfg.audio, split_seed(cfg.seed, "codec-init"));
    audio::VqpaeTrainConfig tc = cfg.codec_train;
    tc.seed = split_seed(cfg.seed, "codec-train");
    const auto report = audio::vqpae_train(enc, train, held, tc, [&](int epoch, double mse) {
        say(log, "fit-codec: epoch " + std::to_string(epoch + 1) + " held-out mse " + fmt("%.5f", mse));
    });
    say(log, "fit-codec: initial mse " + fmt("%.5f", report.heldout_mse.front()) + ", final " +
                 fmt("%.5f", report.heldout_mse.back()) + ", PAE channel " + std::to_string(enc.pae_channel()));
    Checkpoint ck;
    ck.kind = "audio-codec";
    enc.save(ck);
    ck.meta["heldout_mse"] = report.heldout_mse;
    save_checkpoint(p.codec, ck);
    archive_config(cfg, p.work);
    return report;
}

latent::VaeTrainReport run_train_vae(const RunConfig& cfg, const Log& log) {
    const Paths p = Paths::from(cfg);
    const auto entries = synth::read_manifest(p.data);
    std::vector<Mat> clips;
    Eigen::Index rows = 0;
    for (const auto& e : entries) {
        clips.push_back(motion::read_motion(e.motion).frames);
        rows += clips.back().rows();
    }
    if (rows == 0) throw std::runtime_error("train-vae: no motion frames in " + p.data.string());
    Mat frames(rows, clips.front().cols());
    Eigen::Index r = 0;
    for (const Mat& c : clips) {
        frames.middleRows(r, c.rows()) = c;
        r += c.rows();
    }
    latent::VaeConfig vc = cfg.vae;
    vc.input_dim = static_cast<int>(frames.cols());
    latent::MotionVae vae(vc, split_seed(cfg.seed, "vae-init"));
    Rng rng(split_seed(cfg.seed, "vae-train"));
    say(log, "train-vae: " + std::to_string(rows) + " frames");
    const auto report = latent::train_vae(vae, frames, cfg.vae_train, rng, [&](int epoch, double loss) {
        say(log, "train-vae: epoch " + std::to_string(epoch + 1) + " loss " + fmt("%.5f", loss));
    });
    Checkpoint ck;
    ck.kind = "motion-vae";
    vae.save(ck);
    ck.meta["final_recon"] = report.final_recon;
    ck.meta["final_kl"] = report.final_kl;
    save_checkpoint(p.vae, ck);
    archive_config(cfg, p.work);
    return report;
}

TrackArrays track_arrays(const audio::MusicEncoder& codec, const latent::MotionVae& vae, const synth::ManifestEntry& e) {
    const motion::MotionClip clip = motion::read_motion(e.motion);
    const std::vector<double> samples = load_audio(e.wav, codec.config().sample_rate);
    TrackArrays t;
    const Mat cond = audio::extract_conditions(codec, samples);
    const Eigen::Index n = std::min<Eigen::Index>(cond.rows(), clip.frames.rows());
    t.latents = vae.latent_norm().apply(vae.encode(clip.frames.topRows(n)).mu);
    t.conditions = cond.topRows(n);
    t.beats = synth::read_beats(e.beats);
    return t;
}

TrainReport run_train(const RunConfig& cfg, const Log& log) {
    const Paths p = Paths::from(cfg);
    const auto codec = audio::MusicEncoder::load(load_checkpoint(p.codec));
    const auto vae = latent::MotionVae::load(load_checkpoint(p.vae));
    const auto entries = synth::read_manifest(p.data);
    if (entries.empty()) throw std::runtime_error("train: no tracks in " + p.data.string());

    say(log, "train: extracting latents and conditions for " + std::to_string(entries.size()) + " tracks");
    std::vector<TrackArrays> tracks;
    Eigen::Index total = 0;
    for (const auto& e : entries) {
        tracks.push_back(track_arrays(codec, vae, e));
        total += tracks.back().conditions.rows();
    }
    Mat all_cond(total, codec.config().cond_dim());
    Eigen::Index r = 0;
    for (const auto& t : tracks) {
        all_cond.middleRows(r, t.conditions.rows()) = t.conditions;
        r += t.conditions.rows();
    }
    const latent::Normalizer cond_norm = latent::Normalizer::fit(all_cond, 1e-3);

    std::vector<flowmatch::TrainingExample> data;
    for (const auto& t : tracks) {
        if (t.latents.rows() < cfg.train.seq_len) continue;
        data.push_back({t.latents, cond_norm.apply(t.conditions)});
    }
    if (data.empty()) throw std::runtime_error("train: every track is shorter than train.seq_len");

    denoiser::DenoiserConfig dc = cfg.denoiser;
    dc.latent_dim = vae.config().latent_dim;
    dc.cond_dim = codec.config().cond_dim();
    denoiser::DenoiserNet net(dc, split_seed(cfg.seed, "denoiser-init"));
    say(log, "train: " + std::to_string(net.params().scalar_count()) + " parameters, " + std::to_string(cfg.train.steps) +
                 " steps x batch " + std::to_string(cfg.train.batch));

    flowmatch::TrainConfig fm = cfg.train.fm;
    fm.schedule = cfg.sampler.schedule();
    nn::Adam opt(net.params(), nn::AdamConfig{cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.clip_norm});
    Rng rng(split_seed(cfg.seed, "denoiser-train"));
    std::uniform_int_distribution<std::size_t> pick_track(0, data.size() - 1);
    const int L = cfg.train.seq_len;

    TrainReport report;
    const auto t0 = std::chrono::steady_clock::now();
    double acc = 0.0;
    int acc_n = 0;
    const int log_every = std::max(1, std::min(200, cfg.train.steps / 20));
    std::vector<flowmatch::TrainingExample> batch(static_cast<std::size_t>(cfg.train.batch));
    for (int step = 0; step < cfg.train.steps; ++step) {
        const double progress = cfg.train.steps > 1 ? static_cast<double>(step) / (cfg.train.steps - 1) : 1.0;
        opt.set_lr(cfg.train.lr_final + 0.5 * (cfg.train.lr - cfg.train.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)));
        for (auto& ex : batch) {
            const auto& src = data[pick_track(rng)];
            std::uniform_int_distribution<Eigen::Index> pick_start(0, src.latents.rows() - L);
            const Eigen::Index s = pick_start(rng);
            ex.latents = src.latents.middleRows(s, L);
            ex.conditions = src.conditions.middleRows(s, L);
        }
        const auto res = flowmatch::training_step(batch, net, opt, fm, rng);
        acc += res.loss;
        ++acc_n;
        if ((step + 1) % log_every == 0 || step + 1 == cfg.train.steps) {
            report.loss.push_back(acc / acc_n);
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            say(log, "train: step " + std::to_string(step + 1) + " loss " + fmt("%.4f", acc / acc_n) + " (" +
                         fmt("%.0f", sec) + " s)");
            acc = 0.0;
            acc_n = 0;
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Checkpoint ck;
    ck.kind = "denoiser";
    net.save(ck);
    ck.tensors["cond.mean"] = cond_norm.mean;
    ck.tensors["cond.std"] = cond_norm.std;
    ck.meta["train_loss"] = report.loss;
    ck.meta["train_seconds"] = report.seconds;
    save_checkpoint(p.denoiser, ck);
    archive_config(cfg, p.work);
    return report;
}

std::shared_ptr<const Models> Models::load(const Paths& paths) {
    auto require = [](const fs::path& f, const char* stage) {
        if (!fs::exists(f)) throw std::runtime_error("missing " + f.string() + " (run `beatflow " + stage + "` first)");
    };
    require(paths.codec, "fit-codec");
    require(paths.vae, "train-vae");
    require(paths.denoiser, "train");
    const Checkpoint dck = load_checkpoint(paths.denoiser);
    auto m = std::make_shared<Models>(Models{audio::MusicEncoder::load(load_checkpoint(paths.codec)),
                                             latent::MotionVae::load(load_checkpoint(paths.vae)),
                                             denoiser::DenoiserNet::load(dck),
                                             latent::Normalizer{dck.tensor("cond.mean"), dck.tensor("cond.std")},
                                             motion::toy5()});
    if (m->net.config().cond_dim != m->codec.config().cond_dim() || m->net.config().latent_dim != m->vae.config().latent_dim)
        throw std::runtime_error("checkpoint dimensions disagree; retrain the denoiser after changing the codec or VAE");
    if (!m->codec.codebooks().fitted()) throw std::runtime_error(paths.codec.string() + " has no fitted codebooks");
    return m;
}

motion::GlobalPose initial_pose(const motion::Skeleton& skel) { return motion::rest_pose(skel); }

std::vector<motion::GlobalPose> clip_poses(const motion::MotionClip& clip) {
    const motion::Skeleton skel = motion::skeleton_by_id(clip.skeleton_id);
    return motion::decode_stream(skel, clip.as_frames(), initial_pose(skel));
}

RowVec Models::idle_latent() const {
    const motion::GlobalPose rest = initial_pose(skel);
    const motion::MotionFrame f = motion::encode_frame(skel, rest, rest);
    return vae.latent_norm().apply(vae.encode(f.values().transpose()).mu);
}

RowVec Models::silence_condition() const {
    audio::ConditionExtractor ex(codec);
    const std::vector<double> hop(static_cast<std::size_t>(codec.config().hop), 0.0);
    ex.push_samples(hop, codec.config().sample_rate);
    return cond_norm.apply(ex.next().vector());
}

NowFn wall_now() {
    return [] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
}

NowFn sim_now() {
    return [] { return 0.0; };
}

Runtime::Runtime(std::shared_ptr<const Models> models, sampler::SamplerParams params, int warmup, std::uint64_t seed,
                 const flowmatch::VelocityModel* model_override)
    : models_(std::move(models)),
      warmup_(warmup),
      extractor_(models_->codec),
      sampler_(model_override ? *model_override : static_cast<const flowmatch::VelocityModel&>(models_->net), params,
               models_->vae.config().latent_dim, models_->codec.config().cond_dim(), seed),
      decoder_(models_->skel, initial_pose(models_->skel)),
      init_(initial_pose(models_->skel)) {
    if (params.max_len > models_->net.config().max_len)
        throw std::invalid_argument("sampler max_len exceeds the denoiser's trained capacity");
    sampler_.warmup(models_->idle_latent(), models_->silence_condition(), warmup_);
}

void Runtime::reset(std::uint64_t seed) {
    extractor_.reset();
    sampler_.reset(seed);
    sampler_.warmup(models_->idle_latent(), models_->silence_condition(), warmup_);
    decoder_.reset(init_);
    last_phase_ = 0.0;
}

TickOutput Runtime::step(std::span<const double> hop, const NowFn& now) {
    const int rate = models_->codec.config().sample_rate;
    if (static_cast<int>(hop.size()) != models_->codec.config().hop)
        throw std::invalid_argument("runtime step needs exactly one hop of samples");
    TickOutput out;
    out.tick = tick_++;
    const double t0 = now();
    extractor_.push_samples(hop, rate);
    const audio::MusicCondition c = extractor_.next();
    const RowVec cond = models_->cond_norm.apply(c.vector());
    out.pae = extractor_.last_pae();
    const double phase = std::remainder(-out.pae.phi, 2.0 * std::numbers::pi);
    out.beat = out.pae.A > 1e-3 && phase < last_phase_ - std::numbers::pi;
    last_phase_ = phase;
    const double t1 = now();
    const sampler::StepOutput s = sampler_.step(cond);
    const double t2 = now();
    if (s.token) {
        const Mat frame = models_->vae.decode(models_->vae.latent_norm().invert(*s.token));
        out.frame = motion::MotionFrame(models_->skel.joint_count(), frame.row(0).transpose());
        out.pose = decoder_.step(out.frame);
        out.emitted = true;
        out.token_index = s.token_index;
    } else {
        out.pose = decoder_.last();
    }
    const double t3 = now();
    out.cond_ms = t1 - t0;
    out.sample_ms = t2 - t1;
    out.decode_ms = t3 - t2;
    out.total_ms = t3 - t0;
    return out;
}

Generated generate(std::shared_ptr<const Models> models, std::span<const double> samples, sampler::SamplerParams params,
                   int warmup, std::uint64_t seed, const flowmatch::VelocityModel* model_override) {
    const int hop = models->codec.config().hop;
    const long frames = static_cast<long>(samples.size()) / hop;
    Runtime rt(models, params, warmup, seed, model_override);
    Generated g;
    std::vector<motion::MotionFrame> out;
    std::vector<double> buf(static_cast<std::size_t>(hop));
    const NowFn now = sim_now();
    const long ticks = frames + params.window - 1;
    for (long t = 0; t < ticks; ++t) {
        for (int i = 0; i < hop; ++i) {
            const long s = t * hop + i;
            buf[static_cast<std::size_t>(i)] = s < static_cast<long>(samples.size()) ? samples[static_cast<std::size_t>(s)] : 0.0;
        }
        const TickOutput o = rt.step(buf, now);
        if (o.emitted && o.token_index <= frames) {
            g.poses.push_back(o.pose);
            out.push_back(o.frame);
        }
    }
    g.model_calls = rt.sampler().model_calls();
    g.clip = motion::MotionClip::from_frames(models->skel.id, models->codec.config().frame_rate(), out);
    return g;
}

}  // namespace beatflow::pipeline
