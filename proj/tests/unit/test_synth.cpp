#include "beatflow/metrics.hpp"
#include "beatflow/synth.hpp"
#include "beatflow/wav.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

using namespace beatflow;
using namespace beatflow::synth;

namespace {

TrackSpec single(double bpm, double dur = 6.0, int style = 0) {
    TrackSpec s;
    s.duration = dur;
    s.segments = {{0.0, bpm, style}};
    s.seed = 4;
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Synth, BeatSpacingAndCount) {
    const auto b = beat_times(single(120.0, 6.0));
    ASSERT_EQ(b.size(), 12u);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], 0.5 * i, 1e-12);

    TrackSpec s;
    s.duration = 10.0;
    s.segments = {{0.0, 60.0, 0}, {4.0, kMute, 0}, {6.0, 120.0, 1}};
    const auto bt = beat_times(s);
    for (double t : bt) EXPECT_FALSE(t > 4.0 && t < 6.0);
    EXPECT_DOUBLE_EQ(beat_count(s, 5.0), 4.0);  // frozen during mute
    EXPECT_DOUBLE_EQ(beat_count(s, 7.0), 6.0);
}

TEST(Synth, InvalidSpecs) {
    TrackSpec s = single(120.0);
    s.segments[0].start = 0.5;
    EXPECT_THROW(gen_track(s), std::invalid_argument);
    s = single(120.0);
    s.segments.push_back({8.0, 90.0, 0});  // beyond the end
    EXPECT_THROW(gen_track(s), std::invalid_argument);
    s = single(-5.0);
    EXPECT_THROW(gen_track(s), std::invalid_argument);
    s = single(120.0, 6.0, kStyles);
    EXPECT_THROW(gen_track(s), std::invalid_argument);
    EXPECT_THROW(TrackSpec::from_json(nlohmann::json::parse(R"({"duration":4,"segments":[{"start":0,"bpm":"loud"}]})")),
                 std::invalid_argument);
}

TEST(Synth, MuteDecaysToRest) {
    TrackSpec s;
    s.duration = 8.0;
    s.segments = {{0.0, 120.0, 2}, {4.0, kMute, 2}};
    const Track tr = gen_track(s);
    const double fps = 30.0;
    // Max per-frame joint displacement after 1 s of mute.
    for (std::size_t n = static_cast<std::size_t>(5.0 * fps) + 1; n < tr.poses.size(); ++n)
        for (std::size_t j = 0; j < tr.poses[n].joints.size(); ++j)
            EXPECT_LT((tr.poses[n].joints[j] - tr.poses[n - 1].joints[j]).norm(), 1e-3) << "frame " << n;
}

TEST(Synth, MotionRoundTripsAndIsFinite) {
    CorpusConfig cc;
    cc.tracks = 3;
    cc.seed = 12;
    for (const auto& spec : make_corpus(cc)) {
        const Track tr = gen_track(spec);
        EXPECT_TRUE(tr.clip.frames.allFinite());
        EXPECT_EQ(tr.clip.frames.rows(), static_cast<Eigen::Index>(spec.duration * 30.0));
        const auto back = motion::decode_stream(motion::toy5(), tr.clip.as_frames(), tr.poses.front());
        double worst = 0.0;
        for (std::size_t n = 0; n < back.size(); ++n)
            for (std::size_t j = 0; j < back[n].joints.size(); ++j)
                worst = std::max(worst, (back[n].joints[j] - tr.poses[n].joints[j]).norm());
        EXPECT_LE(worst, 1e-4);
        EXPECT_EQ(tr.audio.size(), static_cast<std::size_t>(spec.duration * 24000));
    }
}

TEST(Synth, CorpusShape) {
    CorpusConfig cc;
    cc.tracks = 60;
    cc.seed = 2;
    const auto specs = make_corpus(cc);
    ASSERT_EQ(specs.size(), 60u);
    int mutes = 0;
    for (const auto& s : specs) {
        s.validate();
        for (const auto& seg : s.segments) {
            if (seg.mute()) ++mutes;
            else EXPECT_NE(std::find(cc.tempi.begin(), cc.tempi.end(), seg.bpm), cc.tempi.end());
        }
    }
    EXPECT_GT(mutes, 0);
    cc.tracks = 0;
    EXPECT_TRUE(make_corpus(cc).empty());
}

TEST(Dataset, ManifestFilesAndDeterminism) {
    CorpusConfig cc;
    cc.tracks = 3;
    cc.duration = 5.0;
    cc.seed = 21;
    const auto specs = make_corpus(cc);
    const auto a = bft::temp_dir("ds_a"), b = bft::temp_dir("ds_b");
    build_dataset(specs, a);
    build_dataset(specs, b);
    const auto rows = read_manifest(a);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        for (const auto& p : {r.wav, r.motion, r.beats}) {
            ASSERT_TRUE(std::filesystem::exists(p)) << p;
            EXPECT_EQ(slurp(p), slurp(b / p.filename()));
        }
        EXPECT_EQ(read_beats(r.beats), beat_times(r.spec));
        EXPECT_EQ(wav::read_wav(r.wav).sample_rate, 24000);
    }
    EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));

    const auto e = bft::temp_dir("ds_empty");
    build_dataset({}, e);
    EXPECT_TRUE(read_manifest(e).empty());
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(e)) files += entry.path().filename() != "manifest.jsonl";
    EXPECT_EQ(files, 0u);
}

TEST(Synth, SpecJsonRoundTrip) {
    TrackSpec s;
    s.duration = 12.0;
    s.segments = {{0.0, 90.0, 3}, {5.0, kMute, 3}, {7.5, 150.0, 1}};
    s.seed = 77;
    const TrackSpec back = TrackSpec::from_json(s.to_json());
    EXPECT_EQ(back.to_json(), s.to_json());
}
