#include "beatflow/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace beatflow::wav {

namespace {

std::uint32_t u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

}  // namespace

Audio read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw WavError(path.string() + ": not a RIFF/WAVE file");

    int format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* id = bytes.data() + pos;
        const std::size_t len = u32(id + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min(len, bytes.size() - body);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (avail < 16) throw WavError(path.string() + ": truncated fmt chunk");
            format = u16(id + 8);
            channels = u16(id + 10);
            rate = u32(id + 12);
            bits = u16(id + 22);
            if (format == 0xFFFE && avail >= 26) format = u16(id + 8 + 24);  // WAVE_FORMAT_EXTENSIBLE subformat
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = avail;
        }
        pos = body + len + (len & 1);
    }
    if (channels < 1 || rate == 0) throw WavError(path.string() + ": missing or invalid fmt chunk");
    if (!data) throw WavError(path.string() + ": missing data chunk");

    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) {
        throw WavError(path.string() + ": unsupported sample format (need 16-bit PCM or float32), got format " +
                       std::to_string(format) + " with " + std::to_string(bits) + " bits");
    }
    const std::size_t width = static_cast<std::size_t>(bits / 8);
    const std::size_t frames = data_len / (width * static_cast<std::size_t>(channels));
    Audio a;
    a.sample_rate = static_cast<int>(rate);
    a.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const unsigned char* p = data + (f * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) * width;
            if (pcm16) {
                acc += static_cast<std::int16_t>(u16(p)) / 32768.0;
            } else {
                const std::uint32_t bitsv = u32(p);
                float v;
                std::memcpy(&v, &bitsv, 4);
                acc += v;
            }
        }
        a.samples[f] = acc / channels;
    }
    return a;
}

void write_wav(const std::filesystem::path& path, const Audio& audio, SampleFormat fmt) {
    if (audio.sample_rate <= 0) throw WavError("write_wav: invalid sample rate");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw WavError("cannot write " + path.string());
    const std::uint16_t bits = fmt == SampleFormat::pcm16 ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(audio.samples.size() * (bits / 8));
    os.write("RIFF", 4);
    put_u32(os, 36 + data_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(os, 16);
    put_u16(os, fmt == SampleFormat::pcm16 ? 1 : 3);
    put_u16(os, 1);
    put_u32(os, static_cast<std::uint32_t>(audio.sample_rate));
    put_u32(os, static_cast<std::uint32_t>(audio.sample_rate) * (bits / 8));
    put_u16(os, bits / 8);
    put_u16(os, bits);
    os.write("data", 4);
    put_u32(os, data_len);
    for (double s : audio.samples) {
        if (fmt == SampleFormat::pcm16) {
            const long q = std::clamp(std::lround(s * 32768.0), -32768L, 32767L);
            put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
        } else {
            const float v = static_cast<float>(s);
            std::uint32_t b;
            std::memcpy(&b, &v, 4);
            put_u32(os, b);
        }
    }
    if (!os) throw WavError("failed writing " + path.string());
}

std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw std::invalid_argument("resample: rates must be positive");
    if (from_rate == to_rate || x.empty()) return x;
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(x.size()) * to_rate / from_rate));
    std::vector<double> y(n);
    const double step = static_cast<double>(from_rate) / to_rate;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto j = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(j);
        y[i] = j + 1 < x.size() ? x[j] * (1.0 - frac) + x[j + 1] * frac : x[j];
    }
    return y;
}

}  // namespace beatflow::wav
