#include "beatflow/metrics.hpp"

#include "beatflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace beatflow::metrics {

namespace {

Mat psd_sqrt(const Mat& a) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
    const Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

void check_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite values");
}

}  // namespace

Vec kinetic_features(const std::vector<GlobalPose>& poses, double fps) {
    const int n = static_cast<int>(poses.size());
    if (n < 3) throw std::invalid_argument("kinetic features need at least 3 frames");
    const int k = static_cast<int>(poses[0].joints.size());
    Vec out = Vec::Zero(3 * k);
    for (int j = 0; j < k; ++j) {
        double sum_s = 0.0, sum_s2 = 0.0, sum_a = 0.0;
        const int m = n - 2;
        for (int i = 1; i < n - 1; ++i) {
            const auto& prev = poses[static_cast<std::size_t>(i - 1)].joints[static_cast<std::size_t>(j)];
            const auto& cur = poses[static_cast<std::size_t>(i)].joints[static_cast<std::size_t>(j)];
            const auto& next = poses[static_cast<std::size_t>(i + 1)].joints[static_cast<std::size_t>(j)];
            const double s = (next - prev).norm() * fps / 2.0;
            const double a = (next - 2.0 * cur + prev).norm() * fps * fps;
            sum_s += s;
            sum_s2 += s * s;
            sum_a += a;
        }
        const double mean_s = sum_s / m;
        out(3 * j) = mean_s;
        out(3 * j + 1) = sum_a / m;
        out(3 * j + 2) = std::max(0.0, sum_s2 / m - mean_s * mean_s);
    }
    return out;
}

Vec geometric_features(const std::vector<GlobalPose>& poses) {
    if (poses.empty()) throw std::invalid_argument("geometric features need at least 1 frame");
    const int k = static_cast<int>(poses[0].joints.size());
    const int pairs = k * (k - 1) / 2;
    Vec out = Vec::Zero(pairs + 2);
    for (const GlobalPose& p : poses) {
        int idx = 0;
        for (int a = 0; a < k; ++a)
            for (int b = a + 1; b < k; ++b)
                out(idx++) += (p.joints[static_cast<std::size_t>(a)] - p.joints[static_cast<std::size_t>(b)]).norm();
        double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
        Eigen::Vector2d c = Eigen::Vector2d::Zero();
        for (const auto& j : p.joints) {
            ymin = std::min(ymin, j.y());
            ymax = std::max(ymax, j.y());
            c += Eigen::Vector2d(j.x(), j.z());
        }
        c /= k;
        double spread = 0.0;
        for (const auto& j : p.joints) spread += (Eigen::Vector2d(j.x(), j.z()) - c).norm();
        out(pairs) += ymax - ymin;
        out(pairs + 1) += spread / k;
    }
    return out / static_cast<double>(poses.size());
}

double fid(const Mat& real, const Mat& gen, double jitter) {
    if (real.cols() != gen.cols()) throw std::invalid_argument("fid: feature dimensions differ");
    if (real.rows() < 2 || gen.rows() < 2) throw std::invalid_argument("fid: need at least 2 rows per set");
    check_finite(real, "fid real features");
    check_finite(gen, "fid generated features");
    const Eigen::RowVectorXd mr = real.colwise().mean(), mg = gen.colwise().mean();
    const Mat cr = real.rowwise() - mr, cg = gen.rowwise() - mg;
    const Eigen::Index d = real.cols();
    const Mat I = Mat::Identity(d, d);
    const Mat sr = cr.transpose() * cr / static_cast<double>(real.rows() - 1) + jitter * I;
    const Mat sg = cg.transpose() * cg / static_cast<double>(gen.rows() - 1) + jitter * I;
    const Mat sr_half = psd_sqrt(sr);
    const Mat cross = psd_sqrt(sr_half * sg * sr_half);
    const double v = (mr - mg).squaredNorm() + sr.trace() + sg.trace() - 2.0 * cross.trace();
    return std::max(0.0, v);
}

double fid(const FeatureSet& real, const FeatureSet& gen, double jitter) {
    if (real.kind != gen.kind) throw std::invalid_argument("fid: feature kinds differ");
    return fid(real.rows, gen.rows, jitter);
}

double diversity(const Mat& feats, int n_pairs, std::uint64_t seed) {
    if (feats.rows() < 2) throw std::invalid_argument("diversity needs at least 2 rows");
    if (n_pairs < 1) throw std::invalid_argument("diversity needs n_pairs >= 1");
    check_finite(feats, "diversity features");
    Rng rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, feats.rows() - 1);
    double total = 0.0;
    for (int p = 0; p < n_pairs; ++p) {
        const Eigen::Index i = pick(rng);
        Eigen::Index j = pick(rng);
        while (j == i) j = pick(rng);
        total += (feats.row(i) - feats.row(j)).norm();
    }
    return total / n_pairs;
}

Vec aggregate_speed(const std::vector<GlobalPose>& poses, double fps) {
    const int n = static_cast<int>(poses.size());
    Vec s = Vec::Zero(n);
    if (n < 3) return s;
    for (int i = 1; i < n - 1; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < poses[static_cast<std::size_t>(i)].joints.size(); ++j)
            v += (poses[static_cast<std::size_t>(i + 1)].joints[j] - poses[static_cast<std::size_t>(i - 1)].joints[j]).norm();
        s(i) = v * fps / 2.0;
    }
    s(0) = s(1);
    s(n - 1) = s(n - 2);
    return s;
}

std::vector<int> detect_motion_beats(const std::vector<GlobalPose>& poses, double fps, const BeatDetectConfig& cfg) {
    const int n = static_cast<int>(poses.size());
    if (n < 5) throw std::invalid_argument("motion beat detection needs at least 5 frames");
    const Vec s = aggregate_speed(poses, fps);

    struct Cand {
        int frame;
        double speed;
    };
    std::vector<Cand> cands;
    for (int i = 1; i < n - 1; ++i) {
        if (!(s(i) < s(i - 1))) continue;
        int r = i + 1;
        while (r < n && s(r) == s(i)) ++r;  // plateau: the minimum must rise again on the right
        if (r >= n || !(s(r) > s(i))) continue;
        const int lo = std::max(0, i - cfg.window), hi = std::min(n - 1, i + cfg.window);
        const double left = s.segment(lo, i - lo + 1).maxCoeff();
        const double right = s.segment(i, hi - i + 1).maxCoeff();
        const double ref = std::min(left, right);
        const double prom = ref - s(i);
        if (prom >= std::max(cfg.min_prominence, cfg.rel_prominence * ref)) cands.push_back({i, s(i)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.speed < b.speed; });
    std::vector<int> kept;
    for (const Cand& c : cands) {
        const bool close = std::any_of(kept.begin(), kept.end(), [&](int k) { return std::abs(k - c.frame) <= cfg.min_gap; });
        if (!close) kept.push_back(c.frame);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

double bas(const std::vector<double>& motion_beats, const std::vector<double>& audio_beats, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("BAS sigma must be > 0");
    if (motion_beats.empty() || audio_beats.empty()) return 0.0;
    double total = 0.0;
    for (double m : motion_beats) {
        double best = std::numeric_limits<double>::infinity();
        for (double a : audio_beats) best = std::min(best, (m - a) * (m - a));
        total += std::exp(-best / (2.0 * sigma * sigma));
    }
    return total / static_cast<double>(motion_beats.size());
}

double fsr(const std::vector<GlobalPose>& poses, const motion::Skeleton& skel, const FsrConfig& cfg) {
    if (skel.feet.empty()) throw std::invalid_argument("FSR needs a skeleton with foot joints");
    const int n = static_cast<int>(poses.size());
    if (n < 3) throw std::invalid_argument("FSR needs at least 3 frames");
    auto com_y = [&](int i) {
        double y = 0.0;
        for (const auto& j : poses[static_cast<std::size_t>(i)].joints) y += j.y();
        return y / static_cast<double>(poses[static_cast<std::size_t>(i)].joints.size());
    };
    int count = 0;
    for (int i = 1; i < n - 1; ++i) {
        const double acc = std::abs(com_y(i + 1) - 2.0 * com_y(i) + com_y(i - 1)) * cfg.fps * cfg.fps;
        if (!(acc < cfg.com_acc)) continue;
        bool skating = false;
        for (int f : skel.feet) {
            const auto& cur = poses[static_cast<std::size_t>(i)].joints[static_cast<std::size_t>(f)];
            const auto& prev = poses[static_cast<std::size_t>(i - 1)].joints[static_cast<std::size_t>(f)];
            const double h = std::hypot(cur.x() - prev.x(), cur.z() - prev.z());
            if (cur.y() < cfg.height && h > cfg.speed) skating = true;
        }
        count += skating ? 1 : 0;
    }
    return static_cast<double>(count) / (n - 2);
}

nlohmann::json EvalReport::to_json() const {
    return {{"fid_k", fid_k}, {"fid_g", fid_g}, {"div_k", div_k}, {"div_g", div_g},
            {"bas", bas},     {"fsr", fsr},     {"n_sequences", n_sequences}};
}

FeatureSet segment_features(const std::vector<std::vector<GlobalPose>>& seqs, FeatureKind kind, double fps,
                            double segment_seconds) {
    const auto seg = static_cast<std::size_t>(std::lround(segment_seconds * fps));
    if (seg < 3) throw std::invalid_argument("segments must span at least 3 frames");
    std::vector<Vec> rows;
    for (const auto& s : seqs) {
        for (std::size_t start = 0; start + seg <= s.size(); start += seg) {
            const std::vector<GlobalPose> part(s.begin() + static_cast<long>(start), s.begin() + static_cast<long>(start + seg));
            rows.push_back(kind == FeatureKind::kinetic ? kinetic_features(part, fps) : geometric_features(part));
        }
    }
    FeatureSet fs;
    fs.kind = kind;
    if (rows.empty()) return fs;
    fs.rows.resize(static_cast<Eigen::Index>(rows.size()), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) fs.rows.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return fs;
}

std::pair<Mat, Mat> normalize_by_reference(const Mat& real, const Mat& gen) {
    const Eigen::RowVectorXd mean = real.colwise().mean();
    Eigen::RowVectorXd sd = ((real.rowwise() - mean).array().square().colwise().sum() /
                             std::max<double>(1.0, static_cast<double>(real.rows() - 1)))
                                .sqrt();
    sd = sd.cwiseMax(1e-6);
    auto apply = [&](const Mat& m) -> Mat { return ((m.rowwise() - mean).array().rowwise() / sd.array()).matrix(); };
    return {apply(real), apply(gen)};
}

EvalReport evaluate(const std::vector<EvalSequence>& generated, const std::vector<std::vector<GlobalPose>>& reference,
                    const motion::Skeleton& skel, const EvalConfig& cfg) {
    if (generated.empty()) throw std::invalid_argument("evaluate: no generated sequences");
    std::vector<std::vector<GlobalPose>> gen;
    for (const auto& g : generated) gen.push_back(g.poses);

    EvalReport r;
    r.n_sequences = static_cast<int>(generated.size());
    for (FeatureKind kind : {FeatureKind::kinetic, FeatureKind::geometric}) {
        const FeatureSet fr = segment_features(reference, kind, cfg.fps, cfg.segment_seconds);
        const FeatureSet fg = segment_features(gen, kind, cfg.fps, cfg.segment_seconds);
        if (fr.rows.rows() < 2 || fg.rows.rows() < 2) throw std::invalid_argument("evaluate: too few segments for FID");
        const auto [nr, ng] = normalize_by_reference(fr.rows, fg.rows);
        const double f = fid(nr, ng);
        const double d = diversity(ng, cfg.diversity_pairs, cfg.seed);
        if (kind == FeatureKind::kinetic) {
            r.fid_k = f;
            r.div_k = d;
        } else {
            r.fid_g = f;
            r.div_g = d;
        }
    }
    double bas_sum = 0.0, fsr_sum = 0.0;
    for (const auto& g : generated) {
        std::vector<double> mb;
        for (int f : detect_motion_beats(g.poses, cfg.fps)) mb.push_back(f / cfg.fps);
        bas_sum += bas(mb, g.audio_beats, cfg.bas_sigma);
        fsr_sum += fsr(g.poses, skel, cfg.fsr);
    }
    r.bas = bas_sum / generated.size();
    r.fsr = fsr_sum / generated.size();
    return r;
}

}  // namespace beatflow::metrics
