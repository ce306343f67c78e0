#include "beatflow/config.hpp"

#include <charconv>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

namespace beatflow {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long x = 0;
    try {
        x = std::stol(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    std::uint64_t x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
    if (pos != v.size() || v.find('-') != std::string::npos)
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    return x;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

// Shortest text that parses back to the same double.
std::string fmt_double(double x) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt_double(v[i]);
    return s;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

using Registry = std::vector<std::pair<std::string, Field>>;

#define BF_INT(member)                                                                               \
    Field {                                                                                          \
        [](RunConfig& c, const std::string& k, const std::string& v) {                               \
            c.member = static_cast<decltype(c.member)>(parse_int(k, v));                            \
        },                                                                                           \
            [](const RunConfig& c) { return std::to_string(c.member); }                              \
    }
#define BF_U64(member)                                                                                                \
    Field {                                                                                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_u64(k, v); },                \
            [](const RunConfig& c) { return std::to_string(c.member); }                                               \
    }
#define BF_DBL(member)                                                                                                \
    Field {                                                                                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); },             \
            [](const RunConfig& c) { return fmt_double(c.member); }                                                   \
    }
#define BF_BOOL(member)                                                                                               \
    Field {                                                                                                           \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); },               \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }                               \
    }
#define BF_STR(member)                                                                                                \
    Field {                                                                                                           \
        [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },                                \
            [](const RunConfig& c) { return c.member; }                                                               \
    }

const Registry& registry() {
    static const Registry r = [] {
        Registry g;
        g.emplace_back("run.seed", BF_U64(seed));
        g.emplace_back("run.work_dir", BF_STR(work_dir));

        g.emplace_back("synth.tracks", BF_INT(corpus.tracks));
        g.emplace_back("synth.heldout_tracks", BF_INT(heldout_tracks));
        g.emplace_back("synth.duration", BF_DBL(corpus.duration));
        g.emplace_back("synth.tempi", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                                 c.corpus.tempi = parse_list(k, v);
                                             },
                                             [](const RunConfig& c) { return fmt_list(c.corpus.tempi); }});
        g.emplace_back("synth.mute_fraction", BF_DBL(corpus.mute_fraction));
        g.emplace_back("synth.max_segments", BF_INT(corpus.max_segments));
        g.emplace_back("synth.noise_floor", BF_DBL(synth.noise_floor));
        g.emplace_back("synth.mute_decay", BF_DBL(synth.mute_decay));
        g.emplace_back("synth.attack", BF_DBL(synth.attack));

        g.emplace_back("audio.sample_rate", BF_INT(audio.sample_rate));
        g.emplace_back("audio.hop", BF_INT(audio.hop));
        g.emplace_back("audio.fft_size", BF_INT(audio.fft_size));
        g.emplace_back("audio.bands", BF_INT(audio.bands));
        g.emplace_back("audio.fmin", BF_DBL(audio.fmin));
        g.emplace_back("audio.fmax", BF_DBL(audio.fmax));
        g.emplace_back("audio.energy_ref", BF_DBL(audio.energy_ref));
        g.emplace_back("audio.window_seconds", BF_DBL(audio.window_seconds));
        g.emplace_back("audio.feature_dim", BF_INT(audio.feature_dim));
        g.emplace_back("audio.vq_dim", BF_INT(audio.vq_dim));
        g.emplace_back("audio.dilations", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                                    c.audio.dilations.clear();
                                                    for (double d : parse_list(k, v)) c.audio.dilations.push_back(static_cast<int>(d));
                                                },
                                                [](const RunConfig& c) {
                                                    std::string s;
                                                    for (std::size_t i = 0; i < c.audio.dilations.size(); ++i)
                                                        s += (i ? ", " : "") + std::to_string(c.audio.dilations[i]);
                                                    return s;
                                                }});
        g.emplace_back("audio.rvq_stages", BF_INT(audio.rvq_stages));
        g.emplace_back("audio.rvq_codes", BF_INT(audio.rvq_codes));
        g.emplace_back("audio.pae_frames", BF_INT(audio.pae_frames));
        g.emplace_back("audio.train_tracks", BF_INT(codec_tracks));
        g.emplace_back("audio.epochs", BF_INT(codec_train.epochs));
        g.emplace_back("audio.lr", BF_DBL(codec_train.lr));
        g.emplace_back("audio.commitment", BF_DBL(codec_train.commitment));

        g.emplace_back("vae.latent_dim", BF_INT(vae.latent_dim));
        g.emplace_back("vae.hidden", BF_INT(vae.hidden));
        g.emplace_back("vae.kl_weight", BF_DBL(vae.kl_weight));
        g.emplace_back("vae.epochs", BF_INT(vae_train.epochs));
        g.emplace_back("vae.batch", BF_INT(vae_train.batch));
        g.emplace_back("vae.lr", BF_DBL(vae_train.lr));
        g.emplace_back("vae.std_floor", BF_DBL(vae_train.std_floor));

        g.emplace_back("denoiser.d_model", BF_INT(denoiser.d_model));
        g.emplace_back("denoiser.layers", BF_INT(denoiser.n_layers));
        g.emplace_back("denoiser.heads", BF_INT(denoiser.n_heads));
        g.emplace_back("denoiser.ffn_mult", BF_INT(denoiser.ffn_mult));
        g.emplace_back("denoiser.max_len", BF_INT(denoiser.max_len));
        g.emplace_back("denoiser.level_embed_dim", BF_INT(denoiser.level_embed_dim));
        g.emplace_back("denoiser.cond_embed_dim", BF_INT(denoiser.cond_embed_dim));
        g.emplace_back("denoiser.causal", BF_BOOL(denoiser.causal));

        g.emplace_back("train.steps", BF_INT(train.steps));
        g.emplace_back("train.batch", BF_INT(train.batch));
        g.emplace_back("train.seq_len", BF_INT(train.seq_len));
        g.emplace_back("train.lr", BF_DBL(train.lr));
        g.emplace_back("train.lr_final", BF_DBL(train.lr_final));
        g.emplace_back("train.clip_norm", BF_DBL(train.clip_norm));
        g.emplace_back("train.p_drop", BF_DBL(train.fm.p_drop));
        g.emplace_back("train.type_probs", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                                     const auto p = parse_list(k, v);
                                                     if (p.size() != 3) throw ConfigError(k + ": expected 3 probabilities");
                                                     c.train.fm.type_probs = {p[0], p[1], p[2]};
                                                 },
                                                 [](const RunConfig& c) {
                                                     return fmt_list({c.train.fm.type_probs[0], c.train.fm.type_probs[1],
                                                                      c.train.fm.type_probs[2]});
                                                 }});
        g.emplace_back("train.loss_norm", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                                    if (v == "mean") c.train.fm.loss_norm = flowmatch::LossNorm::mean;
                                                    else if (v == "sum") c.train.fm.loss_norm = flowmatch::LossNorm::sum;
                                                    else throw ConfigError(k + ": expected 'mean' or 'sum'");
                                                },
                                                [](const RunConfig& c) {
                                                    return std::string(c.train.fm.loss_norm == flowmatch::LossNorm::mean ? "mean" : "sum");
                                                }});
        g.emplace_back("train.truncate_at_tau", BF_BOOL(train.fm.truncate_at_tau));

        g.emplace_back("sampler.window", BF_INT(sampler.window));
        g.emplace_back("sampler.omega", BF_DBL(sampler.omega));
        g.emplace_back("sampler.ctx", BF_INT(sampler.ctx));
        g.emplace_back("sampler.hist_ramp", BF_INT(sampler.hist_ramp));
        g.emplace_back("sampler.max_len", BF_INT(sampler.max_len));
        g.emplace_back("sampler.frozen_noise", BF_BOOL(sampler.frozen_noise));
        g.emplace_back("sampler.warmup_tokens", BF_INT(warmup_tokens));

        g.emplace_back("metrics.segment_seconds", BF_DBL(eval.segment_seconds));
        g.emplace_back("metrics.bas_sigma", BF_DBL(eval.bas_sigma));
        g.emplace_back("metrics.diversity_pairs", BF_INT(eval.diversity_pairs));
        g.emplace_back("metrics.fsr_height", BF_DBL(eval.fsr.height));
        g.emplace_back("metrics.fsr_speed", BF_DBL(eval.fsr.speed));
        g.emplace_back("metrics.fsr_com_acc", BF_DBL(eval.fsr.com_acc));

        g.emplace_back("service.port", BF_INT(service.port));
        g.emplace_back("service.tick_rate", BF_DBL(service.tick_rate));
        g.emplace_back("service.sim_clock", BF_BOOL(service.sim_clock));
        g.emplace_back("service.client_queue_limit", BF_INT(service.client_queue_limit));
        g.emplace_back("service.tracks_dir", BF_STR(service.tracks_dir));
        g.emplace_back("service.default_track", BF_STR(service.default_track));
        g.emplace_back("service.drop_overruns", BF_BOOL(service.drop_overruns));
        return g;
    }();
    return r;
}

const Field* find_field(const std::string& key) {
    for (const auto& [k, f] : registry())
        if (k == key) return &f;
    return nullptr;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : registry()) out.push_back(k);
    return out;
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
    const Field* f = find_field(dotted_key);
    if (!f) throw ConfigError("unknown config key '" + dotted_key + "'");
    f->set(*this, dotted_key, trim(value));
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("key '" + section + "' outside any [section] in " + path.string());
        for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    try {
        audio.validate();
        vae.validate();
        denoiser.validate();
        sampler.validate();
        sampler.schedule().validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (corpus.tracks < 1) throw ConfigError("synth.tracks must be >= 1");
    if (heldout_tracks < 1) throw ConfigError("synth.heldout_tracks must be >= 1");
    if (codec_tracks < 1) throw ConfigError("audio.train_tracks must be >= 1");
    if (std::abs(synth.fps - audio.frame_rate()) > 1e-9) throw ConfigError("audio.sample_rate / audio.hop must equal 30 Hz");
    if (synth.sample_rate != audio.sample_rate) {
        throw ConfigError("audio.sample_rate must match the synthetic audio rate (" + std::to_string(synth.sample_rate) + ")");
    }
    if (vae.latent_dim != denoiser.latent_dim) throw ConfigError("vae.latent_dim must equal the denoiser latent dim");
    if (sampler.max_len > denoiser.max_len) throw ConfigError("sampler.max_len exceeds denoiser.max_len");
    if (train.seq_len < 1 || train.seq_len > denoiser.max_len) throw ConfigError("train.seq_len must be in [1, denoiser.max_len]");
    if (warmup_tokens < 0 || warmup_tokens > sampler.max_len) throw ConfigError("sampler.warmup_tokens must be in [0, sampler.max_len]");
    if (train.steps < 0 || train.batch < 1) throw ConfigError("train.steps must be >= 0 and train.batch >= 1");
    if (!(service.tick_rate > 0.0)) throw ConfigError("service.tick_rate must be > 0");
    if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
    if (!(train.fm.p_drop >= 0.0 && train.fm.p_drop <= 1.0)) throw ConfigError("train.p_drop must be in [0, 1]");
}

std::string RunConfig::to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [k, f] : registry()) {
        const auto dot = k.find('.');
        const std::string s = k.substr(0, dot);
        if (s != section) {
            os << (section.empty() ? "" : "\n") << "[" << s << "]\n";
            section = s;
        }
        os << k.substr(dot + 1) << " = " << f.get(*this) << "\n";
    }
    return os.str();
}

std::uint64_t RunConfig::hash() const { return split_seed(0, to_ini()); }

void apply_env_overrides(RunConfig& cfg) {
    if (const char* p = std::getenv("BEATFLOW_PORT")) cfg.set("service.port", p);
    if (const char* s = std::getenv("BEATFLOW_SEED")) cfg.set("run.seed", s);
}

}  // namespace beatflow
