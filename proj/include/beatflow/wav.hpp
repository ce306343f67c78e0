#pragma once

// RIFF/WAVE reading and writing: PCM 16-bit and IEEE float32, any channel
// count on input (downmixed to mono), mono on output.

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace beatflow::wav {

class WavError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SampleFormat { pcm16, float32 };

struct Audio {
    int sample_rate = 0;
    std::vector<double> samples;  ///< mono, nominally in [-1, 1]

    double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

Audio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Audio& audio, SampleFormat fmt = SampleFormat::pcm16);

/// Linear-interpolation resampling.
std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate);

}  // namespace beatflow::wav
