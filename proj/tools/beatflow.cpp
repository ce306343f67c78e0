// beatflow: dataset synthesis, training stages, offline generation,
// evaluation, live serving and latency benchmarking.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include "beatflow/config.hpp"
#include "beatflow/metrics.hpp"
#include "beatflow/pipeline.hpp"
#include "beatflow/random.hpp"
#include "beatflow/server.hpp"
#include "beatflow/service.hpp"
#include "beatflow/wav.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace beatflow;
using nlohmann::json;

namespace {

struct Globals {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> port;
    bool sim_clock = false;
    std::string work;
};

void log_line(const std::string& s) {
    const std::time_t t = std::time(nullptr);
    char buf[16];
    std::strftime(buf, sizeof buf, "%H:%M:%S", std::localtime(&t));
    std::cerr << '[' << buf << "] " << s << '\n';
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

RunConfig resolve(const Globals& g) {
    RunConfig cfg;
    std::string path = g.config;
    if (path.empty())
        if (const char* env = std::getenv("BEATFLOW_CONFIG")) path = env;
    if (!path.empty()) cfg = RunConfig::load(path);
    apply_env_overrides(cfg);
    for (const auto& s : g.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.port) cfg.service.port = *g.port;
    if (g.sim_clock) cfg.service.sim_clock = true;
    if (!g.work.empty()) cfg.work_dir = g.work;
    cfg.validate();
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

std::vector<double> load_wav(const fs::path& p, int rate) {
    wav::Audio a = wav::read_wav(p);
    return a.sample_rate == rate ? a.samples : wav::resample(a.samples, a.sample_rate, rate);
}

std::vector<fs::path> files_with_ext(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::shared_ptr<const service::TrackLibrary> track_library(const RunConfig& cfg) {
    const pipeline::Paths p = pipeline::Paths::from(cfg);
    const fs::path dir = cfg.service.tracks_dir.empty() ? p.heldout : fs::path(cfg.service.tracks_dir);
    return std::make_shared<const service::TrackLibrary>(service::TrackLibrary::from_dir(dir, cfg.audio.sample_rate));
}

int cmd_generate(const RunConfig& cfg, const std::string& audio_in, const std::string& out, const std::string& audio_dir,
                 const std::string& out_dir) {
    const auto models = pipeline::Models::load(pipeline::Paths::from(cfg));
    auto one = [&](const fs::path& wav_path, const fs::path& out_path) {
        const auto samples = load_wav(wav_path, cfg.audio.sample_rate);
        const auto g = pipeline::generate(models, samples, cfg.sampler, cfg.warmup_tokens, split_seed(cfg.seed, "generate"));
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        motion::write_motion(out_path, g.clip);
        log_line("generate: " + wav_path.filename().string() + " -> " + out_path.string() + " (" +
                 std::to_string(g.clip.frames.rows()) + " frames)");
    };
    if (!audio_in.empty()) {
        if (out.empty()) throw UsageError("generate --audio needs --out");
        one(audio_in, out);
    } else {
        if (audio_dir.empty() || out_dir.empty()) throw UsageError("generate needs --audio/--out or --audio-dir/--out-dir");
        for (const auto& w : files_with_ext(audio_dir, ".wav")) one(w, fs::path(out_dir) / (w.stem().string() + ".bfmo"));
        pipeline::archive_config(cfg, out_dir);
    }
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& motion_dir, const std::string& ref_dir, const std::string& out) {
    std::vector<metrics::EvalSequence> gen;
    std::vector<std::vector<motion::GlobalPose>> ref;
    std::string skel_id;
    for (const auto& f : files_with_ext(motion_dir, ".bfmo")) {
        const auto clip = motion::read_motion(f);
        skel_id = clip.skeleton_id;
        metrics::EvalSequence s;
        s.poses = pipeline::clip_poses(clip);
        for (const fs::path& b : {fs::path(motion_dir) / (f.stem().string() + ".beats.json"),
                                  fs::path(ref_dir) / (f.stem().string() + ".beats.json")})
            if (fs::exists(b)) {
                s.audio_beats = synth::read_beats(b);
                break;
            }
        gen.push_back(std::move(s));
    }
    for (const auto& f : files_with_ext(ref_dir, ".bfmo")) ref.push_back(pipeline::clip_poses(motion::read_motion(f)));
    if (gen.empty() || ref.empty()) throw std::runtime_error("eval needs .bfmo files in both directories");
    metrics::EvalConfig ec = cfg.eval;
    ec.seed = split_seed(cfg.seed, "eval");
    const auto report = metrics::evaluate(gen, ref, motion::skeleton_by_id(skel_id), ec);
    write_json(out, report.to_json());
    return 0;
}

service::Server* g_server = nullptr;
extern "C" void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const RunConfig& cfg) {
    const auto models = pipeline::Models::load(pipeline::Paths::from(cfg));
    service::Session session(models, service::session_config(cfg), track_library(cfg),
                             cfg.service.sim_clock ? pipeline::sim_now() : pipeline::wall_now());
    service::ServerOptions opts;
    opts.address = "0.0.0.0";
    opts.port = cfg.service.port;
    opts.client_queue_limit = cfg.service.client_queue_limit;
    opts.drop_overruns = cfg.service.drop_overruns;
    service::Server server(session, opts, log_line);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    log_line("serve: ws://0.0.0.0:" + std::to_string(server.port()) + " track " + session.track() + ", " +
             std::to_string(cfg.service.tick_rate) + " Hz");
    const long ticks = server.run();
    g_server = nullptr;
    log_line("serve: stopped after " + std::to_string(ticks) + " ticks, " + std::to_string(session.overruns()) + " overruns");
    return 0;
}

int cmd_bench(const RunConfig& cfg, long ticks, const std::string& out) {
    const auto models = pipeline::Models::load(pipeline::Paths::from(cfg));
    service::Session session(models, service::session_config(cfg), track_library(cfg), pipeline::wall_now());
    const auto r = service::bench(session, ticks);
    write_json(out, r.to_json());
    return 0;
}

int cmd_replay(const RunConfig& cfg, const std::string& script_path, long ticks, const std::string& out) {
    const auto models = pipeline::Models::load(pipeline::Paths::from(cfg));
    service::Session session(models, service::session_config(cfg), track_library(cfg),
                             cfg.service.sim_clock ? pipeline::sim_now() : pipeline::wall_now());
    std::vector<service::ScriptedCommand> script;
    if (!script_path.empty()) {
        std::ifstream is(script_path);
        if (!is) throw std::runtime_error("cannot read " + script_path);
        script = service::read_script(is);
    }
    std::ofstream file;
    if (!out.empty() && out != "-") {
        file.open(out, std::ios::trunc);
        if (!file) throw std::runtime_error("cannot write " + out);
    }
    std::ostream& os = file.is_open() ? file : std::cout;
    for (const auto& line : service::replay(session, script, ticks)) os << line << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beatflow: streaming music-to-dance generation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "INI config file (default: $BEATFLOW_CONFIG)");
    app.add_option("--set", g.sets, "override one key, section.key=value (repeatable)");
    app.add_option("--seed", g.seed, "root seed");
    app.add_option("--port", g.port, "websocket port");
    app.add_flag("--sim-clock", g.sim_clock, "simulated clock: zero latencies, deterministic reports");
    app.add_option("--work", g.work, "work directory (run.work_dir)");

    auto* synth = app.add_subcommand("synth", "generate the synthetic training and held-out sets");
    auto* fit = app.add_subcommand("fit-codec", "train the audio encoder and RVQ codebooks");
    auto* vae = app.add_subcommand("train-vae", "train the motion VAE");
    auto* train = app.add_subcommand("train", "train the denoiser");
    auto* all = app.add_subcommand("pipeline", "synth, fit-codec, train-vae and train in sequence");

    std::string audio_in, out, audio_dir, out_dir;
    auto* gen = app.add_subcommand("generate", "offline streaming rollout over WAV input");
    gen->add_option("--audio", audio_in, "input WAV");
    gen->add_option("--out", out, "output motion file (.bfmo or .csv)");
    gen->add_option("--audio-dir", audio_dir, "directory of WAV inputs");
    gen->add_option("--out-dir", out_dir, "output directory for --audio-dir");

    std::string motion_dir, ref_dir, eval_out;
    auto* ev = app.add_subcommand("eval", "metrics of generated motion against a reference set");
    ev->add_option("--motion", motion_dir, "generated .bfmo directory")->required();
    ev->add_option("--ref", ref_dir, "reference .bfmo directory (beats from *.beats.json)")->required();
    ev->add_option("--out", eval_out, "metrics JSON path (default stdout)");

    auto* serve = app.add_subcommand("serve", "run the websocket stream service");

    long bench_ticks = 1000;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "per-tick latency summary with the real clock");
    bench->add_option("--ticks", bench_ticks, "ticks to run")->check(CLI::NonNegativeNumber);
    bench->add_option("--out", bench_out, "JSON path (default stdout)");

    std::string script;
    long replay_ticks = 300;
    std::string replay_out;
    auto* rep = app.add_subcommand("replay", "run a session headless from a command script, print JSON lines");
    rep->add_option("--script", script, "JSON-lines command script");
    rep->add_option("--ticks", replay_ticks, "ticks to run")->check(CLI::NonNegativeNumber);
    rep->add_option("--out", replay_out, "output path (default stdout)");

    auto* keys = app.add_subcommand("config", "print the resolved config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = resolve(g);
        if (*keys) {
            std::cout << cfg.to_ini();
            return 0;
        }
        if (*synth || *all) pipeline::run_synth(cfg, log_line);
        if (*fit || *all) pipeline::run_fit_codec(cfg, log_line);
        if (*vae || *all) pipeline::run_train_vae(cfg, log_line);
        if (*train || *all) pipeline::run_train(cfg, log_line);
        if (*gen) return cmd_generate(cfg, audio_in, out, audio_dir, out_dir);
        if (*ev) return cmd_eval(cfg, motion_dir, ref_dir, eval_out);
        if (*serve) return cmd_serve(cfg);
        if (*bench) return cmd_bench(cfg, bench_ticks, bench_out);
        if (*rep) return cmd_replay(cfg, script, replay_ticks, replay_out);
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "beatflow: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "beatflow: config: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "beatflow: " << e.what() << '\n';
        return 1;
    }
}
