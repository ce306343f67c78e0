#pragma once

// Noise-level algebra for diffusion forcing: the probability-path
// coefficients and the temporal schedules used by training and streaming.
//
// Token positions follow 1-based indexing: entry i of a LevelVector holds the
// level of token t = i + 1. tau is the index of the newest (noisiest) token.

#include "beatflow/random.hpp"

#include <array>
#include <stdexcept>
#include <vector>

namespace beatflow::schedules {

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Linear (rectified) path: x_k = alpha(k) x0 + sigma(k) eps.
struct PathCoeffs {
    double alpha;
    double sigma;
    double dalpha;
    double dsigma;
};

PathCoeffs path_coeffs(double k);

using LevelVector = std::vector<double>;

struct ScheduleParams {
    int window = 10;     ///< l
    int ctx = 20;        ///< l_ctx, clean context ahead of the re-noised past
    int hist_ramp = 20;  ///< l_hist, ramp length of the re-noised past

    void validate() const;
};

/// Level of token t under the monotone ramp clamp((t - (tau - l)) / l, 0, 1).
double mono_level(long t, long tau, int window);
/// Level of token t under the trapezoid profile max(k_hist, k_mono).
double trap_level(long t, long tau, const ScheduleParams& p);
/// Re-noising term of the trapezoid alone.
double hist_level(long t, long tau, const ScheduleParams& p);

LevelVector random_schedule(int length, Rng& rng);
LevelVector monotonic_schedule(int length, long tau, int window);
LevelVector trapezoid_schedule(int length, long tau, const ScheduleParams& params);

enum class ScheduleType { random = 0, monotonic = 1, trapezoid = 2 };

const char* to_string(ScheduleType t);

struct SampledSchedule {
    ScheduleType type;
    long tau;  ///< drawn step for monotonic/trapezoid; equals length for random
    LevelVector levels;
};

/// Draws a schedule type from `type_probs` (random, monotonic, trapezoid),
/// then tau uniformly in [1, length] for the structured types.
SampledSchedule sample_training_schedule(int length, const std::array<double, 3>& type_probs,
                                         const ScheduleParams& params, Rng& rng);

}  // namespace beatflow::schedules
