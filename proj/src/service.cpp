#include "beatflow/service.hpp"

#include "beatflow/random.hpp"
#include "beatflow/wav.hpp"

#include <algorithm>
#include <cmath>
#include <istream>

namespace beatflow::service {

namespace {

json vec3(const motion::Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

void TrackLibrary::add(std::string id, std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("track '" + id + "' is empty");
    tracks_[std::move(id)] = std::move(samples);
}

TrackLibrary TrackLibrary::from_dir(const std::filesystem::path& dir, int rate) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("track directory not found: " + dir.string());
    TrackLibrary lib;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() != ".wav") continue;
        wav::Audio a = wav::read_wav(e.path());
        lib.add(e.path().stem().string(),
                a.sample_rate == rate ? std::move(a.samples) : wav::resample(a.samples, a.sample_rate, rate));
    }
    if (lib.empty()) throw std::runtime_error("no .wav files in " + dir.string());
    return lib;
}

const std::vector<double>& TrackLibrary::at(const std::string& id) const {
    auto it = tracks_.find(id);
    if (it == tracks_.end()) throw std::out_of_range("unknown track '" + id + "'");
    return it->second;
}

std::vector<std::string> TrackLibrary::ids() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tracks_) out.push_back(k);
    return out;
}

std::vector<double> AudioSource::next(int n) {
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    if (!samples_ || samples_->empty()) return out;
    const auto& s = *samples_;
    const double len = static_cast<double>(s.size());
    for (int i = 0; i < n; ++i) {
        if (!muted_) {
            const auto i0 = static_cast<std::size_t>(pos_);
            const double frac = pos_ - static_cast<double>(i0);
            const double a = s[i0];
            const double b = s[(i0 + 1) % s.size()];
            out[static_cast<std::size_t>(i)] = a + frac * (b - a);
        }
        pos_ += tempo_;
        if (pos_ >= len) pos_ = std::fmod(pos_, len);
    }
    return out;
}

void AudioSource::set_tempo(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("tempo scale must be positive");
    tempo_ = scale;
}

std::string to_string(CommandType t) {
    switch (t) {
        case CommandType::select_track: return "select_track";
        case CommandType::mute: return "mute";
        case CommandType::tempo_scale: return "tempo_scale";
        case CommandType::set_omega: return "set_omega";
        case CommandType::reset: return "reset";
    }
    return "?";
}

Command parse_command(const json& msg) {
    if (!msg.is_object()) throw ProtocolError("message must be a JSON object");
    if (msg.value("type", std::string{}) != "cmd") throw ProtocolError("expected \"type\":\"cmd\"");
    if (!msg.contains("cmd") || !msg["cmd"].is_string()) throw ProtocolError("missing \"cmd\"");
    const std::string name = msg["cmd"].get<std::string>();
    const json value = msg.value("value", json());
    Command c{CommandType::reset, value};
    if (name == "select_track") {
        if (!value.is_string()) throw ProtocolError("select_track needs a string track id");
        c.type = CommandType::select_track;
    } else if (name == "mute") {
        if (!value.is_boolean()) throw ProtocolError("mute needs a boolean");
        c.type = CommandType::mute;
    } else if (name == "tempo_scale") {
        if (!value.is_number() || !(value.get<double>() > 0.0) || value.get<double>() > 4.0)
            throw ProtocolError("tempo_scale needs a number in (0, 4]");
        c.type = CommandType::tempo_scale;
    } else if (name == "set_omega") {
        if (!value.is_number() || !std::isfinite(value.get<double>()) || std::abs(value.get<double>()) > 100.0)
            throw ProtocolError("set_omega needs a finite number with |value| <= 100");
        c.type = CommandType::set_omega;
    } else if (name == "reset") {
        c.type = CommandType::reset;
        c.value = json();
    } else {
        throw ProtocolError("unknown command '" + name + "'");
    }
    return c;
}

json TickReport::to_json() const {
    json joints = json::array();
    for (const auto& j : pose.joints) joints.push_back(vec3(j));
    return json{{"type", "tick"},
                {"tick", tick},
                {"pose", {{"root", vec3(pose.root_pos)}, {"joints", std::move(joints)}}},
                {"latency_ms", {{"cond", cond_ms}, {"sample", sample_ms}, {"decode", decode_ms}, {"total", total_ms}}},
                {"track", track},
                {"omega", omega},
                {"beat", beat},
                {"muted", muted},
                {"tempo", tempo},
                {"overrun", overrun}};
}

void SessionConfig::validate() const {
    if (!(tick_rate > 0.0)) throw std::invalid_argument("tick rate must be positive");
    if (warmup_tokens < 0) throw std::invalid_argument("warmup_tokens must be >= 0");
    sampler.validate();
}

SessionConfig session_config(const RunConfig& cfg) {
    SessionConfig s;
    s.tick_rate = cfg.service.tick_rate;
    s.sampler = cfg.sampler;
    s.warmup_tokens = cfg.warmup_tokens;
    s.seed = split_seed(cfg.seed, "session");
    s.track = cfg.service.default_track;
    return s;
}

Session::Session(std::shared_ptr<const Models> models, SessionConfig cfg, std::shared_ptr<const TrackLibrary> library,
                 NowFn now, const flowmatch::VelocityModel* model_override)
    : models_(std::move(models)),
      cfg_((cfg.validate(), std::move(cfg))),
      library_(std::move(library)),
      now_(std::move(now)),
      runtime_(models_, cfg_.sampler, cfg_.warmup_tokens, cfg_.seed, model_override) {
    const double codec_rate = models_->codec.config().frame_rate();
    if (std::abs(codec_rate - cfg_.tick_rate) > 1e-9)
        throw std::invalid_argument("tick rate must equal the codec frame rate (" + std::to_string(codec_rate) + " Hz)");
    if (!library_ || library_->empty()) throw std::invalid_argument("session needs at least one track");
    track_ = cfg_.track.empty() ? library_->ids().front() : cfg_.track;
    source_ = AudioSource(&library_->at(track_));
}

json Session::hello() const {
    const auto& skel = models_->skel;
    return json{{"type", "hello"},
                {"tracks", library_->ids()},
                {"track", track_},
                {"omega", omega()},
                {"tick_rate", cfg_.tick_rate},
                {"next_tick", next_tick_},
                {"skeleton", {{"id", skel.id}, {"names", skel.names}, {"parents", skel.parents}}}};
}

json error_frame(const std::string& message, long tick, bool fatal) {
    return json{{"type", "error"}, {"message", message}, {"tick", tick}, {"fatal", fatal}};
}

json Session::submit(const json& msg) {
    Command c;
    try {
        c = parse_command(msg);
        if (c.type == CommandType::select_track && !library_->contains(c.value.get<std::string>()))
            throw ProtocolError("unknown track '" + c.value.get<std::string>() + "'");
    } catch (const std::exception& e) {
        return error_frame(e.what(), next_tick_ - 1, false);
    }
    pending_.push_back(c);
    return json{{"type", "ack"},
                {"cmd", to_string(c.type)},
                {"value", c.value},
                {"received_tick", next_tick_ - 1},
                {"apply_tick", next_tick_}};
}

void Session::apply(const Command& c) {
    switch (c.type) {
        case CommandType::select_track:
            track_ = c.value.get<std::string>();
            source_ = AudioSource(&library_->at(track_));
            break;
        case CommandType::mute: source_.set_mute(c.value.get<bool>()); break;
        case CommandType::tempo_scale: source_.set_tempo(c.value.get<double>()); break;
        case CommandType::set_omega: runtime_.set_omega(c.value.get<double>()); break;
        case CommandType::reset: runtime_.reset(split_seed(cfg_.seed, static_cast<std::uint64_t>(++resets_))); break;
    }
}

TickReport Session::tick() {
    // Keep the playback state across select_track so tempo/mute survive a switch.
    while (!pending_.empty()) {
        const Command c = pending_.front();
        pending_.pop_front();
        if (c.type == CommandType::select_track) {
            const double tempo = source_.tempo();
            const bool muted = source_.muted();
            apply(c);
            source_.set_tempo(tempo);
            source_.set_mute(muted);
        } else {
            apply(c);
        }
    }
    const std::vector<double> hop = source_.next(models_->codec.config().hop);
    const pipeline::TickOutput o = runtime_.step(hop, now_);
    TickReport r;
    r.tick = next_tick_++;
    r.pose = o.pose;
    r.cond_ms = o.cond_ms;
    r.sample_ms = o.sample_ms;
    r.decode_ms = o.decode_ms;
    r.total_ms = o.total_ms;
    r.track = track_;
    r.omega = omega();
    r.beat = o.beat;
    r.muted = source_.muted();
    r.tempo = source_.tempo();
    r.overrun = o.total_ms > budget_ms();
    if (r.overrun) ++overruns_;
    return r;
}

std::vector<ScriptedCommand> read_script(std::istream& is) {
    std::vector<ScriptedCommand> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ProtocolError("script line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("after_tick") || !j["after_tick"].is_number_integer())
            throw ProtocolError("script line " + std::to_string(lineno) + ": missing integer \"after_tick\"");
        ScriptedCommand c;
        c.after_tick = j["after_tick"].get<long>();
        j.erase("after_tick");
        c.msg = std::move(j);
        out.push_back(std::move(c));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.after_tick < b.after_tick; });
    return out;
}

std::vector<std::string> replay(Session& session, const std::vector<ScriptedCommand>& script, long n_ticks) {
    std::vector<std::string> out;
    out.push_back(session.hello().dump());
    std::size_t next = 0;
    auto flush = [&](long after) {
        while (next < script.size() && script[next].after_tick <= after) out.push_back(session.submit(script[next++].msg).dump());
    };
    flush(session.ticks_done() - 1);
    for (long i = 0; i < n_ticks; ++i) {
        try {
            out.push_back(session.tick().to_json().dump());
        } catch (const std::exception& e) {
            out.push_back(error_frame(e.what(), session.ticks_done(), true).dump());
            break;
        }
        flush(session.ticks_done() - 1);
    }
    return out;
}

StageStats stage_stats(std::vector<double> v) {
    StageStats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    // Nearest-rank percentiles.
    auto rank = [&](double p) {
        const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
        return v[std::clamp<std::size_t>(k, 1, v.size()) - 1];
    };
    s.p50 = rank(0.50);
    s.p95 = rank(0.95);
    s.max = v.back();
    return s;
}

json BenchReport::to_json() const {
    auto st = [](const StageStats& s) { return json{{"p50", s.p50}, {"p95", s.p95}, {"max", s.max}}; };
    json j{{"ticks", ticks}, {"budget_ms", budget_ms}, {"overruns", overruns}};
    if (ticks > 0) j["stages"] = {{"cond", st(cond)}, {"sample", st(sample)}, {"decode", st(decode)}, {"total", st(total)}};
    else j["stages"] = json::object();
    return j;
}

BenchReport bench(Session& session, long n_ticks) {
    BenchReport r;
    r.budget_ms = session.budget_ms();
    std::vector<double> c, s, d, t;
    for (long i = 0; i < n_ticks; ++i) {
        const TickReport rep = session.tick();
        c.push_back(rep.cond_ms);
        s.push_back(rep.sample_ms);
        d.push_back(rep.decode_ms);
        t.push_back(rep.total_ms);
        if (rep.overrun) ++r.overruns;
    }
    r.ticks = n_ticks;
    r.cond = stage_stats(c);
    r.sample = stage_stats(s);
    r.decode = stage_stats(d);
    r.total = stage_stats(t);
    return r;
}

}  // namespace beatflow::service
