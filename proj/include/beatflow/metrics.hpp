#pragma once

// Motion quality metrics on world joint positions: kinetic/geometric
// features, Frechet distance, diversity, beat alignment and foot skating.

#include "beatflow/motion.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace beatflow::metrics {

using motion::GlobalPose;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class FeatureKind { kinetic, geometric };

struct FeatureSet {
    FeatureKind kind = FeatureKind::kinetic;
    Mat rows;  ///< N x D_feat
};

/// Per joint: mean speed (m/s), mean acceleration magnitude (m/s^2), speed variance. Needs >= 3 frames.
Vec kinetic_features(const std::vector<GlobalPose>& poses, double fps);
/// Time-averaged pairwise joint distances, then mean vertical extent and mean horizontal spread.
Vec geometric_features(const std::vector<GlobalPose>& poses);

/// Frechet distance between Gaussian fits of the two row sets.
double fid(const Mat& real, const Mat& gen, double jitter = 1e-6);
double fid(const FeatureSet& real, const FeatureSet& gen, double jitter = 1e-6);

/// Mean Euclidean distance over n_pairs seeded random pairs of distinct rows.
double diversity(const Mat& feats, int n_pairs, std::uint64_t seed);

/// Aggregate joint speed per frame (m/s, central differences; ends copy their neighbours).
Vec aggregate_speed(const std::vector<GlobalPose>& poses, double fps);

struct BeatDetectConfig {
    int min_gap = 3;              ///< beats closer than or equal to this many frames are merged
    int window = 8;               ///< frames searched on each side for the prominence reference
    double min_prominence = 0.01; ///< m/s
    double rel_prominence = 0.05; ///< fraction of the lower side maximum
};

/// Local minima of aggregate joint speed with enough prominence. Needs >= 5 frames.
std::vector<int> detect_motion_beats(const std::vector<GlobalPose>& poses, double fps, const BeatDetectConfig& cfg = {});

/// Mean over motion beats of exp(-d^2 / (2 sigma^2)), d = distance to the nearest audio beat.
double bas(const std::vector<double>& motion_beats, const std::vector<double>& audio_beats, double sigma = 0.1);

struct FsrConfig {
    double height = 0.05;   ///< m
    double speed = 0.01;    ///< m/frame, horizontal
    double com_acc = 0.5;   ///< m/s^2, vertical centre-of-mass bound
    double fps = 30.0;
};

double fsr(const std::vector<GlobalPose>& poses, const motion::Skeleton& skel, const FsrConfig& cfg = {});

struct EvalConfig {
    double fps = 30.0;
    double segment_seconds = 5.0;
    double bas_sigma = 0.1;
    int diversity_pairs = 500;
    std::uint64_t seed = 0;
    FsrConfig fsr;
};

struct EvalSequence {
    std::vector<GlobalPose> poses;
    std::vector<double> audio_beats;  ///< seconds
};

struct EvalReport {
    double fid_k = 0.0;
    double fid_g = 0.0;
    double div_k = 0.0;
    double div_g = 0.0;
    double bas = 0.0;
    double fsr = 0.0;
    int n_sequences = 0;

    nlohmann::json to_json() const;
};

/// Splits sequences into fixed-length segments, one feature row per segment.
FeatureSet segment_features(const std::vector<std::vector<GlobalPose>>& seqs, FeatureKind kind, double fps,
                            double segment_seconds);

/// Standardizes both sets with the reference set's per-column mean and std.
std::pair<Mat, Mat> normalize_by_reference(const Mat& real, const Mat& gen);

/// FIDs against `reference`; diversity, BAS and FSR on `generated`.
EvalReport evaluate(const std::vector<EvalSequence>& generated, const std::vector<std::vector<GlobalPose>>& reference,
                    const motion::Skeleton& skel, const EvalConfig& cfg = {});

}  // namespace beatflow::metrics
