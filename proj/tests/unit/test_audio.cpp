#include "beatflow/audio.hpp"
#include "beatflow/checkpoint.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace beatflow;
using namespace beatflow::audio;
using bft::randn;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> sinusoid(double a, double f, double b, double phase, int n, double rate) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = a * std::sin(2.0 * kPi * f * i / rate + phase) + b;
    return x;
}

/// Multi-restart Lloyd k-means used as an independent reference.
double kmeans_oracle_error(const Mat& data, int k, int restarts, std::uint64_t seed) {
    Rng rng(seed);
    double best = 1e300;
    std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
    for (int r = 0; r < restarts; ++r) {
        Mat c(k, data.cols());
        for (int j = 0; j < k; ++j) c.row(j) = data.row(pick(rng));
        std::vector<int> assign(static_cast<std::size_t>(data.rows()), 0);
        for (int it = 0; it < 100; ++it) {
            for (Eigen::Index i = 0; i < data.rows(); ++i) {
                Eigen::Index j;
                (c.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&j);
                assign[static_cast<std::size_t>(i)] = static_cast<int>(j);
            }
            Mat sum = Mat::Zero(k, data.cols());
            Eigen::VectorXd cnt = Eigen::VectorXd::Zero(k);
            for (Eigen::Index i = 0; i < data.rows(); ++i) {
                sum.row(assign[static_cast<std::size_t>(i)]) += data.row(i);
                cnt(assign[static_cast<std::size_t>(i)]) += 1.0;
            }
            for (int j = 0; j < k; ++j)
                if (cnt(j) > 0) c.row(j) = sum.row(j) / cnt(j);
        }
        double err = 0.0;
        for (Eigen::Index i = 0; i < data.rows(); ++i) err += (c.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff();
        best = std::min(best, err / static_cast<double>(data.rows()));
    }
    return best;
}

double rvq_error(const Mat& data, const RvqCodebooks& books, int stages) {
    double err = 0.0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) err += (rvq_quantize(data.row(i), books, stages).recon - data.row(i)).squaredNorm();
    return err / static_cast<double>(data.rows());
}

MusicEncoder fitted_encoder(std::uint64_t seed) {
    AudioConfig ac;
    MusicEncoder enc(ac, seed);
    Rng rng(seed);
    enc.codebooks() = rvq_fit(randn(200, ac.vq_dim, seed + 1).array().tanh().matrix(), ac.rvq_stages, ac.rvq_codes, rng, {1, 10});
    return enc;
}

}  // namespace

TEST(RingBuffer, FifoZeroPadAndAssociativity) {
    AudioRingBuffer rb(100, 8);
    for (double v : rb.window()) EXPECT_EQ(v, 0.0);
    const std::vector<double> a{1, 2, 3}, b{4, 5, 6, 7, 8, 9, 10, 11};
    rb.push(a, 100);
    const auto w = rb.window();
    EXPECT_EQ(std::vector<double>(w.end() - 3, w.end()), a);
    EXPECT_EQ(w.front(), 0.0);
    rb.push(b, 100);
    EXPECT_EQ(rb.window(), (std::vector<double>{4, 5, 6, 7, 8, 9, 10, 11}));
    EXPECT_EQ(rb.newest(2), (std::vector<double>{10, 11}));
    EXPECT_EQ(rb.total_pushed(), 11u);

    AudioRingBuffer one(100, 8);
    std::vector<double> cat = a;
    cat.insert(cat.end(), b.begin(), b.end());
    one.push(cat, 100);
    EXPECT_EQ(one.window(), rb.window());
    EXPECT_THROW(rb.push(a, 44100), RateMismatch);
    EXPECT_THROW(rb.newest(9), std::invalid_argument);
}

TEST(Frontend, OnsetSpikesAtClickNotBefore) {
    AudioConfig ac;
    std::vector<double> x(static_cast<std::size_t>(ac.sample_rate), 0.0);
    const std::size_t click = 12345;
    for (std::size_t i = 0; i < 400; ++i) x[click + i] = std::exp(-static_cast<double>(i) / 80.0) * std::sin(0.3 * i);
    const Mat f = frontend_features(ac, x);
    const long first = static_cast<long>(click) / ac.hop;
    for (long t = 0; t < first; ++t) EXPECT_EQ(f(t, ac.bands), 0.0) << "frame " << t;
    EXPECT_GT(f(first, ac.bands), 1.0);
    // The onset channel peaks at the click frame.
    Eigen::Index arg;
    f.col(ac.bands).maxCoeff(&arg);
    EXPECT_EQ(arg, first);
}

TEST(Encoder, CausalAndBiasOnlyOnZeroInput) {
    MusicEncoder enc = fitted_encoder(3);
    Rng rng(4);
    for (auto& p : enc.params()) p.value += nn::normal(p.value.rows(), p.value.cols(), 0.05, rng);
    const int d = enc.config().input_dim();
    const Mat zero = Mat::Zero(40, d);
    const Mat base = encode_features(enc, zero);
    for (Eigen::Index t = 1; t < base.rows(); ++t) EXPECT_EQ(base.row(t), base.row(0));
    for (int j : {0, 7, 25}) {
        Mat imp = zero;
        imp.row(j).setConstant(2.0);
        const Mat out = encode_features(enc, imp);
        EXPECT_EQ(out.topRows(j), base.topRows(j));
        EXPECT_NE(out.row(j), base.row(j));
    }
}

TEST(Rvq, ExactFitOnDistinctPoints) {
    const Mat pts = randn(8, 3, 5);
    Mat data(64, 3);
    for (int i = 0; i < 64; ++i) data.row(i) = pts.row(i % 8);
    Rng rng(6);
    const RvqCodebooks books = rvq_fit(data, 1, 8, rng);
    EXPECT_LT(rvq_error(data, books, 1), 1e-20);
    EXPECT_THROW(rvq_fit(randn(5, 3, 1), 1, 8, rng), std::invalid_argument);
}

TEST(Rvq, ErrorMonotoneInStages) {
    const Mat data = randn(500, 4, 7);
    Rng rng(8);
    const RvqCodebooks books = rvq_fit(data, 3, 16, rng);
    books.validate();
    double prev = rvq_error(data, books, 1);
    for (int q = 2; q <= 3; ++q) {
        const double e = rvq_error(data, books, q);
        EXPECT_LE(e, prev);
        prev = e;
    }
    // Per-vector monotonicity, thanks to the zero codeword.
    for (Eigen::Index i = 0; i < 50; ++i) {
        const double e1 = (rvq_quantize(data.row(i), books, 1).recon - data.row(i)).squaredNorm();
        const double e2 = (rvq_quantize(data.row(i), books, 2).recon - data.row(i)).squaredNorm();
        EXPECT_LE(e2, e1 + 1e-15);
    }
}

TEST(Rvq, GaussianBlobsMatchRestartedOracle) {
    Mat data(600, 2);
    const Mat centers = randn(6, 2, 9) * 5.0;
    const Mat noise = randn(600, 2, 10) * 0.5;
    for (int i = 0; i < 600; ++i) data.row(i) = centers.row(i % 6) + noise.row(i);
    Rng rng(11);
    const RvqCodebooks books = rvq_fit(data, 1, 6, rng);
    const double ours = rvq_error(data, books, 1);
    const double oracle = kmeans_oracle_error(data, 6, 20, 12);
    EXPECT_LE(ours, 1.05 * oracle);
}

TEST(Rvq, QuantizeMatchesBruteForce) {
    const Mat data = randn(300, 3, 13);
    Rng rng(14);
    const RvqCodebooks books = rvq_fit(data, 2, 8, rng);
    const Mat probes = randn(100, 3, 15);
    for (Eigen::Index i = 0; i < probes.rows(); ++i) {
        const RvqResult r = rvq_quantize(probes.row(i), books);
        RowVec residual = probes.row(i);
        RowVec recon = RowVec::Zero(3);
        for (std::size_t q = 0; q < books.stages.size(); ++q) {
            const Mat& c = books.stages[q];
            int best = 0;
            for (int j = 1; j < c.rows(); ++j)
                if ((c.row(j) - residual).squaredNorm() < (c.row(best) - residual).squaredNorm()) best = j;
            EXPECT_EQ(r.codes[q], best);
            recon += c.row(best);
            residual -= c.row(best);
        }
        EXPECT_LT((r.recon - recon).norm(), 1e-12);
    }
    const RowVec cw = books.stages[0].row(3);
    EXPECT_EQ(rvq_quantize(cw, books, 1).recon, cw);
    EXPECT_THROW(rvq_quantize(cw, RvqCodebooks{}), UsageError);
}

TEST(Pae, OnBinSinusoid) {
    const double rate = 30.0;
    const int n = 60;  // bin width 0.5 Hz
    for (double f : {0.5, 1.0, 2.0, 3.5, 7.0}) {
        const auto x = sinusoid(1.7, f, 0.0, 0.4, n, rate);
        const PaeParams p = pae_extract(x, rate);
        EXPECT_EQ(p.F, f);
        EXPECT_NEAR(p.A, 1.7, 0.017);
        EXPECT_NEAR(p.B, 0.0, 1e-6);
        EXPECT_GT(p.phi, -kPi);
        EXPECT_LE(p.phi, kPi);
        // Round trip over the window; the newest sample sits at t = 0.
        double err = 0.0, ref = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = static_cast<double>(i - (n - 1)) / rate;
            err += std::pow(pae_reconstruct(p, t) - x[static_cast<std::size_t>(i)], 2);
            ref += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        }
        EXPECT_LE(std::sqrt(err / ref), 0.01) << "f=" << f;
    }
}

TEST(Pae, DegenerateInputs) {
    const PaeParams c = pae_extract(std::vector<double>(20, 3.25), 30.0);
    EXPECT_EQ(c.A, 0.0);
    EXPECT_DOUBLE_EQ(c.B, 3.25);
    const PaeParams z = pae_extract(std::vector<double>(20, 0.0), 30.0);
    EXPECT_EQ(z.A, 0.0);
    EXPECT_EQ(z.F, 0.0);
    EXPECT_EQ(z.phi, 0.0);
    EXPECT_THROW(pae_extract(std::vector<double>(1, 0.0), 30.0), std::invalid_argument);
}

TEST(Pae, OffBinWithinOneBin) {
    const double rate = 30.0;
    const int n = 60;
    const double width = rate / n;
    for (double f = 0.6; f < 14.0; f += 0.37) {
        const PaeParams p = pae_extract(sinusoid(1.0, f, 0.2, 1.1, n, rate), rate);
        EXPECT_LE(std::abs(p.F - f), width) << "f=" << f;
        EXPECT_GE(p.A, 0.0);
        EXPECT_LE(p.F, rate / 2.0);
    }
}

TEST(Pae, ReconstructFormula) {
    PaeParams p{0.0, 2.0, 0.7, 0.3};
    for (double t : {-1.0, 0.0, 0.37}) EXPECT_EQ(pae_reconstruct(p, t), 0.7);
    p.A = 1.3;
    PaeParams q = p;
    q.phi += 2.0 * kPi;
    for (double t : {-0.8, 0.0, 0.21}) {
        EXPECT_NEAR(pae_reconstruct(p, t), pae_reconstruct(q, t), 1e-12);
        EXPECT_NEAR(pae_reconstruct(p, t), pae_reconstruct(p, t + 1.0 / p.F), 1e-12);
        EXPECT_DOUBLE_EQ(pae_reconstruct(p, t), 1.3 * std::sin(2.0 * kPi * 2.0 * t - 0.3) + 0.7);
    }
}

TEST(Pae, TempoDoublingDoublesFrequency) {
    AudioConfig ac;
    auto onset_freq = [&](double bpm) {
        const Mat f = frontend_features(ac, bft::click_track(bpm, 6.0, ac.sample_rate));
        const Eigen::VectorXd on = f.col(ac.bands).tail(ac.pae_frames);
        return pae_extract(std::vector<double>(on.data(), on.data() + on.size()), ac.frame_rate()).F;
    };
    for (double bpm : {60.0, 90.0}) {
        EXPECT_NEAR(onset_freq(bpm), bpm / 60.0, 0.5);
        EXPECT_DOUBLE_EQ(onset_freq(2.0 * bpm), 2.0 * onset_freq(bpm)) << bpm;
    }
}

TEST(Extractor, CausalSilenceAndErrors) {
    const MusicEncoder enc = fitted_encoder(21);
    const AudioConfig& ac = enc.config();
    auto x = bft::click_track(120.0, 4.0, ac.sample_rate);
    const Mat full = extract_conditions(enc, x);
    EXPECT_EQ(full.rows(), static_cast<Eigen::Index>(x.size()) / ac.hop);
    EXPECT_EQ(full.cols(), ac.cond_dim());
    for (long cut : {10L, 47L, 100L}) {
        std::vector<double> y(x.begin(), x.begin() + cut * ac.hop);
        // Different future audio after the cut.
        for (int i = 0; i < 5000; ++i) y.push_back(std::sin(0.01 * i * i));
        const Mat part = extract_conditions(enc, y);
        EXPECT_EQ(part.topRows(cut), full.topRows(cut));
    }

    const Mat silent = extract_conditions(enc, std::vector<double>(static_cast<std::size_t>(ac.hop) * 90, 0.0));
    const RowVec zero_vq = rvq_quantize(enc.ffn_vq_row(MusicEncoder::Stepper(enc).step(RowVec::Zero(ac.input_dim()))), enc.codebooks()).recon;
    for (Eigen::Index t = 0; t < silent.rows(); ++t) {
        EXPECT_EQ(silent.row(t).head(ac.vq_dim), zero_vq);
        EXPECT_LT(std::abs(silent(t, ac.vq_dim + 1)), 1e-9);  // amplitude
    }

    ConditionExtractor ex(enc);
    EXPECT_THROW(ex.next(), UsageError);
    EXPECT_THROW(ex.push_samples(x, 44100), RateMismatch);
    // Chunked pushes give the same conditions as one push.
    for (std::size_t i = 0; i < x.size(); i += 333) {
        const std::size_t n = std::min<std::size_t>(333, x.size() - i);
        ex.push_samples(std::span<const double>(x.data() + i, n), ac.sample_rate);
        while (ex.ticks_available() > 0) {
            const MusicCondition c = ex.next();
            EXPECT_EQ(c.vector(), full.row(c.tick));
        }
    }
}

TEST(Vqpae, TrainingReducesErrorAndIsDeterministic) {
    AudioConfig ac;
    std::vector<Mat> train, held;
    int i = 0;
    for (double bpm : {60.0, 75.0, 90.0, 105.0, 120.0, 135.0, 150.0, 165.0, 80.0, 140.0}) {
        (i++ < 8 ? train : held).push_back(frontend_features(ac, bft::click_track(bpm, 6.0, ac.sample_rate)));
    }
    EXPECT_THROW(
        {
            MusicEncoder e(ac, 1);
            vqpae_train(e, {}, held, {});
        },
        std::invalid_argument);

    MusicEncoder zero_ep(ac, 1);
    VqpaeTrainConfig c0;
    c0.epochs = 0;
    const auto r0 = vqpae_train(zero_ep, train, held, c0);
    ASSERT_EQ(r0.heldout_mse.size(), 1u);
    const MusicEncoder untouched(ac, 1);
    for (std::size_t p = 0; p < zero_ep.params().size(); ++p)
        if (zero_ep.params()[p].name.rfind("enc", 0) == 0) EXPECT_EQ(zero_ep.params()[p].value, untouched.params()[p].value);

    VqpaeTrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 5;
    MusicEncoder a(ac, 1), b(ac, 1);
    const auto ra = vqpae_train(a, train, held, cfg);
    const auto rb = vqpae_train(b, train, held, cfg);
    EXPECT_EQ(ra.heldout_mse, rb.heldout_mse);
    EXPECT_LE(ra.heldout_mse.back() * 3.0, ra.heldout_mse.front());
    a.codebooks().validate();

    Checkpoint ck;
    ck.kind = "audio-codec";
    a.save(ck);
    const auto dir = bft::temp_dir("codec_ckpt");
    save_checkpoint(dir / "c.bfck", ck);
    const MusicEncoder back = MusicEncoder::load(load_checkpoint(dir / "c.bfck"));
    const auto x = bft::click_track(100.0, 2.0, ac.sample_rate);
    EXPECT_EQ(extract_conditions(back, x), extract_conditions(a, x));
}
