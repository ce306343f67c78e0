#include "beatflow/flowmatch.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beatflow::flowmatch {
namespace {

void check_shapes(const Mat& a, const Mat& b, const LevelVector& levels, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || static_cast<std::size_t>(a.rows()) != levels.size()) {
        std::ostringstream os;
        os << what << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols()
           << ", " << levels.size() << " levels)";
        throw std::invalid_argument(os.str());
    }
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

}  // namespace

NoisedSequence corrupt(const Mat& clean, const LevelVector& levels, Rng& rng) {
    return corrupt_with(clean, levels, standard_normal(clean.rows(), clean.cols(), rng));
}

NoisedSequence corrupt_with(const Mat& clean, const LevelVector& levels, Mat noise) {
    check_shapes(clean, noise, levels, "corrupt");
    NoisedSequence out{Mat(clean.rows(), clean.cols()), levels, std::move(noise)};
    for (Eigen::Index t = 0; t < clean.rows(); ++t) {
        const auto c = schedules::path_coeffs(levels[static_cast<std::size_t>(t)]);
        out.tokens.row(t) = c.alpha * clean.row(t) + c.sigma * out.noise.row(t);
    }
    return out;
}

Mat velocity_target(const Mat& clean, const Mat& noise, const LevelVector& levels) {
    check_shapes(clean, noise, levels, "velocity_target");
    Mat v(clean.rows(), clean.cols());
    for (Eigen::Index t = 0; t < clean.rows(); ++t) {
        const auto c = schedules::path_coeffs(levels[static_cast<std::size_t>(t)]);
        v.row(t) = c.dalpha * clean.row(t) + c.dsigma * noise.row(t);
    }
    return v;
}

MaskedLoss masked_fm_loss(const Mat& v_pred, const Mat& v_target, const LevelVector& levels) {
    check_shapes(v_pred, v_target, levels, "masked_fm_loss");
    MaskedLoss loss;
    for (Eigen::Index t = 0; t < v_pred.rows(); ++t) {
        if (levels[static_cast<std::size_t>(t)] > 0.0) {
            loss.sum += (v_pred.row(t) - v_target.row(t)).squaredNorm();
            ++loss.active;
        }
    }
    return loss;
}

Mat masked_fm_loss_grad(const Mat& v_pred, const Mat& v_target, const LevelVector& levels, LossNorm norm) {
    check_shapes(v_pred, v_target, levels, "masked_fm_loss_grad");
    Mat g = Mat::Zero(v_pred.rows(), v_pred.cols());
    int active = 0;
    for (Eigen::Index t = 0; t < v_pred.rows(); ++t) {
        if (levels[static_cast<std::size_t>(t)] > 0.0) {
            g.row(t) = 2.0 * (v_pred.row(t) - v_target.row(t));
            ++active;
        }
    }
    if (norm == LossNorm::mean && active > 0) g /= static_cast<double>(active);
    return g;
}

Mat TrainableVelocityModel::predict(const Mat& x, const LevelVector& levels, const Mat* cond) const {
    nn::Tape tape(false);
    const nn::Var out = forward(tape, x, levels, cond);
    return tape.value(out);
}

StepResult loss_and_grads(std::span<const TrainingExample> batch, const TrainableVelocityModel& model,
                          const TrainConfig& cfg, Rng& rng, nn::Grads& grads) {
    if (batch.empty()) throw std::invalid_argument("training batch is empty");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    StepResult result;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        const int length = static_cast<int>(ex.latents.rows());
        auto sched = schedules::sample_training_schedule(length, cfg.type_probs, cfg.schedule, rng);
        Eigen::Index n = length;
        if (cfg.truncate_at_tau && sched.type != schedules::ScheduleType::random) {
            n = static_cast<Eigen::Index>(sched.tau);
            sched.levels.resize(static_cast<std::size_t>(n));
        }
        const Mat clean = ex.latents.topRows(n);
        const NoisedSequence noised = corrupt(clean, sched.levels, rng);
        const Mat target = velocity_target(clean, noised.noise, sched.levels);
        const bool drop = u(rng) < cfg.p_drop;
        Mat cond;
        const Mat* cond_ptr = nullptr;
        if (!drop && ex.conditions.size() > 0) {
            cond = ex.conditions.topRows(n);
            cond_ptr = &cond;
        }

        nn::Tape tape(true);
        const nn::Var out = model.forward(tape, noised.tokens, sched.levels, cond_ptr);
        const Mat& pred = tape.value(out);
        const MaskedLoss loss = masked_fm_loss(pred, target, sched.levels);
        const double value = cfg.loss_norm == LossNorm::mean ? loss.mean() : loss.sum;
        if (!std::isfinite(value)) {
            std::ostringstream os;
            os << "non-finite flow-matching loss (schedule=" << schedules::to_string(sched.type)
               << ", tau=" << sched.tau << ", tokens=" << n << ")";
            throw std::runtime_error(os.str());
        }
        result.loss += value * inv_batch;
        result.active_tokens += loss.active;
        if (loss.active == 0) continue;
        tape.backward(out, masked_fm_loss_grad(pred, target, sched.levels, cfg.loss_norm) * inv_batch);
        tape.accumulate(grads);
    }
    return result;
}

StepResult training_step(std::span<const TrainingExample> batch, TrainableVelocityModel& model, nn::Adam& opt,
                         const TrainConfig& cfg, Rng& rng) {
    nn::Grads grads(model.params());
    const StepResult r = loss_and_grads(batch, model, cfg, rng, grads);
    if (!grads.all_finite()) throw std::runtime_error("non-finite gradients in training step");
    opt.step(model.params(), grads);
    return r;
}

}  // namespace beatflow::flowmatch
