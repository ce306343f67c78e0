#include "beatflow/motion.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace beatflow;
using namespace beatflow::motion;

namespace {

/// Smooth dancing-ish trajectory: turning, travelling, bobbing, limbs swinging.
std::vector<GlobalPose> trajectory(const Skeleton& skel, int n, double phase = 0.0) {
    std::vector<GlobalPose> out;
    for (int f = 0; f < n; ++f) {
        const double t = f / 30.0 + phase;
        const Vec3 root(0.8 * std::sin(0.5 * t), skel.offsets[0].y() + 0.05 * std::sin(4.0 * t), 0.6 * t);
        std::vector<Mat3> rots(static_cast<std::size_t>(skel.joint_count()), Mat3::Identity());
        rots[0] = rot_y(0.7 * t) * rot_x(0.1 * std::sin(3.0 * t)) * rot_z(0.05 * std::cos(2.0 * t));
        for (int j = 1; j < skel.joint_count(); ++j)
            rots[static_cast<std::size_t>(j)] = rot_x(0.4 * std::sin(2.0 * t + j)) * rot_z(0.3 * std::cos(1.5 * t + 2 * j));
        out.push_back(make_pose(skel, root, std::move(rots)));
    }
    return out;
}

double max_joint_error(const std::vector<GlobalPose>& a, const std::vector<GlobalPose>& b) {
    double e = 0.0;
    for (std::size_t f = 0; f < a.size(); ++f)
        for (std::size_t j = 0; j < a[f].joints.size(); ++j) e = std::max(e, (a[f].joints[j] - b[f].joints[j]).norm());
    return e;
}

}  // namespace

TEST(Rot6d, IdentityAndOrthonormality) {
    Rot6 r;
    r << 1, 0, 0, 0, 1, 0;
    EXPECT_TRUE(rot6d_to_matrix(r).isApprox(Mat3::Identity(), 0.0));
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        Rot6 v;
        for (int k = 0; k < 6; ++k) v(k) = n(rng);
        const Mat3 m = rot6d_to_matrix(v);
        EXPECT_LE((m.transpose() * m - Mat3::Identity()).norm(), 1e-9);
        EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
        EXPECT_LE((rot6d_to_matrix(matrix_to_rot6d(m)) - m).norm(), 1e-12);
    }
}

TEST(Rot6d, DegenerateInputThrows) {
    Rot6 v;
    v << 1, 0, 0, 2, 0, 0;
    EXPECT_THROW(rot6d_to_matrix(v), DegenerateRotation);
}

TEST(Fk, IdentityRotationsGiveRestOffsets) {
    const Skeleton s = toy5();
    const std::vector<Mat3> rots(5, Mat3::Identity());
    const auto j = forward_kinematics(s, s.offsets[0], rots);
    EXPECT_TRUE(j[0].isApprox(s.offsets[0]));
    EXPECT_TRUE(j[4].isApprox(s.offsets[0] + s.offsets[3] + s.offsets[4]));
}

TEST(Fk, ThreeJointChainOracle) {
    Skeleton s;
    s.id = "CHAIN";
    s.names = {"base", "a", "b", "tip"};
    s.parents = {-1, 0, 1, 2};
    s.offsets = {Vec3::Zero(), Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0)};
    std::vector<Mat3> rots(4, Mat3::Identity());
    rots[1] = rot_z(M_PI / 2);  // middle of the three unit links
    const auto j = forward_kinematics(s, Vec3::Zero(), rots);
    EXPECT_LE((j[1] - Vec3(1, 0, 0)).norm(), 1e-12);
    EXPECT_LE((j[2] - Vec3(1, 1, 0)).norm(), 1e-12);
    EXPECT_LE((j[3] - Vec3(1, 2, 0)).norm(), 1e-12);
}

TEST(Fk, RootRotationIsEquivariant) {
    const Skeleton s = toy5();
    std::vector<Mat3> rots(5, Mat3::Identity());
    rots[3] = rot_x(0.3);
    const Vec3 root(0.2, 0.9, -0.4);
    const auto base = forward_kinematics(s, root, rots);
    const Mat3 R = rot_y(0.8) * rot_x(0.2);
    rots[0] = R;
    const auto turned = forward_kinematics(s, root, rots);
    for (int j = 0; j < 5; ++j) EXPECT_LE((turned[j] - root - R * (base[j] - root)).norm(), 1e-12);
}

TEST(Encode, StationaryFrame) {
    const Skeleton s = toy5();
    const GlobalPose rest = rest_pose(s);
    const MotionFrame f = encode_frame(s, rest, rest);
    EXPECT_EQ(f.root_vel_xz().norm(), 0.0);
    for (int j = 0; j < 5; ++j) EXPECT_EQ(f.joint_vel(j).norm(), 0.0);
    Rot6 id;
    id << 1, 0, 0, 0, 1, 0;
    EXPECT_LE((f.root_angvel_6d() - id).norm(), 1e-12);
    // Root-frame joint positions of the rest pose: accumulated offsets above the ground point.
    EXPECT_LE((Vec3(f.joint_pos(4)) - (s.offsets[0] + s.offsets[3] + s.offsets[4])).norm(), 1e-12);
}

TEST(Encode, PureTranslationVelocity) {
    const Skeleton s = toy5();
    const GlobalPose a = rest_pose(s);
    const GlobalPose b = rest_pose(s, Vec3(0.03, 0, 0));
    const MotionFrame f = encode_frame(s, a, b);
    EXPECT_NEAR(f.root_vel_xz()(0), 0.03, 1e-12);
    EXPECT_NEAR(f.root_vel_xz()(1), 0.0, 1e-12);
}

TEST(Encode, InvariantToGlobalYawAndTranslation) {
    const Skeleton s = toy5();
    const auto traj = trajectory(s, 3);
    const Mat3 yaw = rot_y(1.234);
    const Vec3 shift(3.0, 0.0, -2.0);
    auto moved = [&](const GlobalPose& p) {
        std::vector<Mat3> r = p.rotations;
        r[0] = yaw * r[0];
        return make_pose(s, yaw * p.root_pos + shift, r);
    };
    const MotionFrame a = encode_frame(s, traj[1], traj[2]);
    const MotionFrame b = encode_frame(s, moved(traj[1]), moved(traj[2]));
    EXPECT_LE((a.values() - b.values()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Decode, RoundTripOver300Frames) {
    for (const Skeleton& s : {toy5(), smpl22()}) {
        const auto traj = trajectory(s, 300);
        const auto frames = encode_sequence(s, traj);
        const auto back = decode_stream(s, frames, traj[0]);
        EXPECT_LE(max_joint_error(traj, back), 1e-4) << s.id;
    }
}

TEST(Decode, ZeroVelocityFramesFreezeCharacter) {
    const Skeleton s = toy5();
    const GlobalPose rest = rest_pose(s);
    const MotionFrame still = encode_frame(s, rest, rest);
    const auto poses = decode_stream(s, std::vector<MotionFrame>(20, still), rest);
    for (const auto& p : poses) EXPECT_LE(max_joint_error({p}, {rest}), 1e-12);
}

TEST(Decode, PrefixStable) {
    const Skeleton s = toy5();
    const auto traj = trajectory(s, 50);
    const auto frames = encode_sequence(s, traj);
    const auto all = decode_stream(s, frames, traj[0]);
    StreamDecoder dec(s, traj[0]);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const GlobalPose p = dec.step(frames[i]);
        for (std::size_t j = 0; j < p.joints.size(); ++j) ASSERT_EQ(p.joints[j], all[i].joints[j]);
    }
}

TEST(Decode, RejectsNonFiniteFrameWithoutStateChange) {
    const Skeleton s = toy5();
    const auto traj = trajectory(s, 4);
    const auto frames = encode_sequence(s, traj);
    StreamDecoder dec(s, traj[0]);
    dec.step(frames[1]);
    const GlobalPose before = dec.last();
    MotionFrame bad = frames[2];
    bad.values()(0) = std::nan("");
    EXPECT_THROW(dec.step(bad), std::invalid_argument);
    EXPECT_EQ(dec.last().joints[2], before.joints[2]);
}

TEST(MotionIo, BinaryAndCsvRoundTrip) {
    const Skeleton s = toy5();
    const auto clip = MotionClip::from_frames(s.id, 30.0, encode_sequence(s, trajectory(s, 25)));
    const auto dir = bft::temp_dir("motion_io");
    write_motion(dir / "a.bfmo", clip);
    write_motion(dir / "a.csv", clip);
    const MotionClip b = read_motion(dir / "a.bfmo");
    EXPECT_EQ(b.frames, clip.frames);
    EXPECT_EQ(b.skeleton_id, "TOY5");
    EXPECT_EQ(b.fps, 30.0);
    const MotionClip c = read_motion(dir / "a.csv");
    EXPECT_LE((c.frames - clip.frames).cwiseAbs().maxCoeff(), 1e-12);
}
