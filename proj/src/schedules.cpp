#include "beatflow/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace beatflow::schedules {

PathCoeffs path_coeffs(double k) {
    if (!(k >= 0.0 && k <= 1.0)) throw DomainError("noise level outside [0,1]: " + std::to_string(k));
    return PathCoeffs{1.0 - k, k, -1.0, 1.0};
}

void ScheduleParams::validate() const {
    if (window < 1) throw DomainError("schedule window must be >= 1");
    if (ctx < 0) throw DomainError("schedule context length must be >= 0");
    if (hist_ramp < 1) throw DomainError("schedule history ramp must be >= 1");
}

double mono_level(long t, long tau, int window) {
    if (window < 1) throw DomainError("schedule window must be >= 1");
    const double k = static_cast<double>(t - (tau - window)) / static_cast<double>(window);
    return std::clamp(k, 0.0, 1.0);
}

double hist_level(long t, long tau, const ScheduleParams& p) {
    const double k = static_cast<double>((tau - p.ctx - p.window) - t) / static_cast<double>(p.hist_ramp);
    return std::clamp(k, 0.0, 1.0);
}

double trap_level(long t, long tau, const ScheduleParams& p) {
    return std::max(hist_level(t, tau, p), mono_level(t, tau, p.window));
}

LevelVector random_schedule(int length, Rng& rng) {
    if (length < 1) throw DomainError("schedule length must be >= 1");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LevelVector k(static_cast<std::size_t>(length));
    for (auto& v : k) v = u(rng);
    return k;
}

LevelVector monotonic_schedule(int length, long tau, int window) {
    if (window < 1) throw DomainError("schedule window must be >= 1");
    if (length < 1) throw DomainError("schedule length must be >= 1");
    if (tau < 0 || tau > length) throw DomainError("tau outside [0, T]");
    LevelVector k(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) k[static_cast<std::size_t>(i)] = mono_level(i + 1, tau, window);
    return k;
}

LevelVector trapezoid_schedule(int length, long tau, const ScheduleParams& params) {
    params.validate();
    if (length < 1) throw DomainError("schedule length must be >= 1");
    if (tau < 0 || tau > length) throw DomainError("tau outside [0, T]");
    LevelVector k(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) k[static_cast<std::size_t>(i)] = trap_level(i + 1, tau, params);
    return k;
}

const char* to_string(ScheduleType t) {
    switch (t) {
        case ScheduleType::random: return "random";
        case ScheduleType::monotonic: return "monotonic";
        case ScheduleType::trapezoid: return "trapezoid";
    }
    return "?";
}

SampledSchedule sample_training_schedule(int length, const std::array<double, 3>& type_probs,
                                         const ScheduleParams& params, Rng& rng) {
    double total = 0.0;
    for (double p : type_probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("schedule type probabilities must be finite and >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("schedule type probabilities must sum to 1");
    params.validate();

    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    ScheduleType type = ScheduleType::trapezoid;
    if (r < type_probs[0]) {
        type = ScheduleType::random;
    } else if (r < type_probs[0] + type_probs[1]) {
        type = ScheduleType::monotonic;
    }
    // Guard against r landing in a zero-probability tail through rounding.
    if (type == ScheduleType::trapezoid && type_probs[2] == 0.0) {
        type = type_probs[1] > 0.0 ? ScheduleType::monotonic : ScheduleType::random;
    }

    if (type == ScheduleType::random) return {type, length, random_schedule(length, rng)};
    std::uniform_int_distribution<long> tau_dist(1, length);
    const long tau = tau_dist(rng);
    if (type == ScheduleType::monotonic) return {type, tau, monotonic_schedule(length, tau, params.window)};
    return {type, tau, trapezoid_schedule(length, tau, params)};
}

}  // namespace beatflow::schedules
