#pragma once

// The 30 Hz session loop and its JSON protocol. A Session owns one Runtime,
// one audio source and the pending command queue; the websocket server and
// the replay/bench drivers all go through Session::tick.

#include "beatflow/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace beatflow::service {

using nlohmann::json;
using pipeline::Models;
using pipeline::NowFn;

struct ProtocolError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Mono tracks at the codec sample rate, keyed by id.
class TrackLibrary {
public:
    void add(std::string id, std::vector<double> samples);
    /// Every *.wav in dir (id = file stem), resampled to `rate`.
    static TrackLibrary from_dir(const std::filesystem::path& dir, int rate);

    bool contains(const std::string& id) const { return tracks_.count(id) > 0; }
    const std::vector<double>& at(const std::string& id) const;
    std::vector<std::string> ids() const;
    bool empty() const { return tracks_.empty(); }

private:
    std::map<std::string, std::vector<double>> tracks_;
};

/// Playback of one track: loops at the end, tempo_scale is the playback rate
/// (linear interpolation), mute emits silence while the position keeps moving.
class AudioSource {
public:
    AudioSource() = default;
    explicit AudioSource(const std::vector<double>* samples) : samples_(samples) {}

    std::vector<double> next(int n);
    void set_tempo(double scale);
    void set_mute(bool m) { muted_ = m; }
    void restart() { pos_ = 0.0; }

    double tempo() const { return tempo_; }
    bool muted() const { return muted_; }
    double position() const { return pos_; }

private:
    const std::vector<double>* samples_ = nullptr;
    double pos_ = 0.0;
    double tempo_ = 1.0;
    bool muted_ = false;
};

enum class CommandType { select_track, mute, tempo_scale, set_omega, reset };

struct Command {
    CommandType type;
    json value;
};

/// Parses {"type":"cmd","cmd":...,"value":...}; throws ProtocolError.
Command parse_command(const json& msg);
std::string to_string(CommandType t);

struct TickReport {
    long tick = 0;
    motion::GlobalPose pose;
    double cond_ms = 0.0;
    double sample_ms = 0.0;
    double decode_ms = 0.0;
    double total_ms = 0.0;
    std::string track;
    double omega = 0.0;
    bool beat = false;
    bool muted = false;
    double tempo = 1.0;
    bool overrun = false;

    json to_json() const;
};

struct SessionConfig {
    double tick_rate = 30.0;
    sampler::SamplerParams sampler;
    int warmup_tokens = 30;
    std::uint64_t seed = 1;
    std::string track;  ///< initial track id

    void validate() const;
};

SessionConfig session_config(const RunConfig& cfg);

class Session {
public:
    Session(std::shared_ptr<const Models> models, SessionConfig cfg, std::shared_ptr<const TrackLibrary> library,
            NowFn now, const flowmatch::VelocityModel* model_override = nullptr);

    /// Validates and queues a command for the next tick boundary. Returns the
    /// ack (or an error reply for malformed or unknown commands).
    json submit(const json& msg);

    /// Applies queued commands, consumes one hop, runs one runtime step.
    TickReport tick();

    /// Ticks completed so far; the next report carries this index.
    long ticks_done() const { return next_tick_; }
    const std::string& track() const { return track_; }
    double omega() const { return runtime_.omega(); }
    const AudioSource& source() const { return source_; }
    const SessionConfig& config() const { return cfg_; }
    const pipeline::Runtime& runtime() const { return runtime_; }
    double budget_ms() const { return 1000.0 / cfg_.tick_rate; }
    long overruns() const { return overruns_; }

    json hello() const;

private:
    void apply(const Command& c);

    std::shared_ptr<const Models> models_;
    SessionConfig cfg_;
    std::shared_ptr<const TrackLibrary> library_;
    NowFn now_;
    pipeline::Runtime runtime_;
    AudioSource source_;
    std::string track_;
    std::deque<Command> pending_;
    long next_tick_ = 0;
    long resets_ = 0;
    long overruns_ = 0;
};

json error_frame(const std::string& message, long tick, bool fatal);

/// One scripted command: submitted after the report for `after_tick` (-1 = before the first tick).
struct ScriptedCommand {
    long after_tick = -1;
    json msg;
};

/// JSON lines of {"after_tick":t,"type":"cmd","cmd":...,"value":...}.
std::vector<ScriptedCommand> read_script(std::istream& is);

/// Runs n_ticks under the session's clock and returns every outbound frame
/// (hello, acks, ticks, errors) serialized one per line.
std::vector<std::string> replay(Session& session, const std::vector<ScriptedCommand>& script, long n_ticks);

struct StageStats {
    double p50 = 0.0;
    double p95 = 0.0;
    double max = 0.0;
};

struct BenchReport {
    long ticks = 0;
    StageStats cond, sample, decode, total;
    double budget_ms = 0.0;
    long overruns = 0;

    json to_json() const;
};

StageStats stage_stats(std::vector<double> v);
BenchReport bench(Session& session, long n_ticks);

}  // namespace beatflow::service
