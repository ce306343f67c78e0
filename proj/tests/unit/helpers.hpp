#pragma once

#include "beatflow/nn.hpp"
#include "beatflow/pipeline.hpp"
#include "beatflow/random.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace bft {

using beatflow::nn::Mat;
using beatflow::nn::RowVec;

inline Mat randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    beatflow::Rng rng(seed);
    return beatflow::nn::normal(r, c, 1.0, rng);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

/// Largest per-tensor relative error ||g - fd|| / max(||g||, ||fd||) between
/// analytic gradients and central finite differences of `loss`. Checks up to
/// `per_tensor` entries of each tensor.
double gradcheck(beatflow::nn::ParamSet& params, const std::function<double()>& loss, const beatflow::nn::Grads& analytic,
                 double h = 1e-5, int per_tensor = 40);

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("beatflow_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Untrained but complete model set: small denoiser, fitted codebooks.
std::shared_ptr<const beatflow::pipeline::Models> tiny_models(std::uint64_t seed = 3);

/// Click track: unit impulses decaying over 20 ms at `bpm`, `seconds` long.
std::vector<double> click_track(double bpm, double seconds, int rate = 24000);

}  // namespace bft
