#pragma once

// Canonicalized incremental motion frames (8 + 12K values per frame),
// skeleton definitions, 6-D rotations, forward kinematics and streaming
// root integration.
//
// Frame layout, K joints:
//   [0, 2)          root XZ displacement in the previous heading frame (m/frame)
//   [2, 8)          6-D rotation of R_prev^T R_curr (root orientation increment)
//   [8, 8+3K)       joint positions in the current heading frame (m)
//   [8+3K, 8+6K)    joint displacements since the previous frame, current heading frame (m/frame)
//   [8+6K, 8+12K)   6-D joint rotations; joint 0 relative to the heading, others relative to the parent
//
// The heading frame is the yaw-only rotation of the root orientation, with
// its origin at the root's ground projection. A 6-D rotation is the first
// two columns of the matrix, stacked.

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace beatflow::motion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rot6 = Eigen::Matrix<double, 6, 1>;

struct Skeleton {
    std::string id;
    std::vector<std::string> names;
    std::vector<int> parents;   ///< -1 for the root
    std::vector<Vec3> offsets;  ///< rest offset in the parent frame; root entry is the rest root position
    std::vector<int> feet;      ///< joints used for contact metrics

    int joint_count() const { return static_cast<int>(parents.size()); }
    int frame_dim() const { return 8 + 12 * joint_count(); }
    void validate() const;
};

Skeleton toy5();
Skeleton smpl22();
Skeleton skeleton_by_id(const std::string& id);

constexpr int frame_dim(int joints) { return 8 + 12 * joints; }

/// Thin typed view over one frame vector.
class MotionFrame {
public:
    MotionFrame() = default;
    explicit MotionFrame(int joints);
    MotionFrame(int joints, Eigen::VectorXd values);

    int joints() const { return k_; }
    const Eigen::VectorXd& values() const { return v_; }
    Eigen::VectorXd& values() { return v_; }

    auto root_vel_xz() { return v_.segment<2>(0); }
    auto root_vel_xz() const { return v_.segment<2>(0); }
    auto root_angvel_6d() { return v_.segment<6>(2); }
    auto root_angvel_6d() const { return v_.segment<6>(2); }
    auto joint_pos(int j) { return v_.segment<3>(8 + 3 * j); }
    auto joint_pos(int j) const { return v_.segment<3>(8 + 3 * j); }
    auto joint_vel(int j) { return v_.segment<3>(8 + 3 * k_ + 3 * j); }
    auto joint_vel(int j) const { return v_.segment<3>(8 + 3 * k_ + 3 * j); }
    auto joint_rot_6d(int j) { return v_.segment<6>(8 + 6 * k_ + 6 * j); }
    auto joint_rot_6d(int j) const { return v_.segment<6>(8 + 6 * k_ + 6 * j); }

    bool all_finite() const { return v_.allFinite(); }

private:
    int k_ = 0;
    Eigen::VectorXd v_;
};

struct GlobalPose {
    Vec3 root_pos = Vec3::Zero();
    std::vector<Mat3> rotations;  ///< [0] root world orientation, others parent-relative
    std::vector<Vec3> joints;     ///< world joint positions

    const Mat3& root_rot() const { return rotations.at(0); }
};

struct DegenerateRotation : std::domain_error {
    using std::domain_error::domain_error;
};

Mat3 rot6d_to_matrix(const Rot6& r6);
Rot6 matrix_to_rot6d(const Mat3& r);
Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

/// Yaw angle of a root orientation (rotation of +Z about +Y).
double heading_yaw(const Mat3& r);

std::vector<Vec3> forward_kinematics(const Skeleton& skel, const Vec3& root_pos, const std::vector<Mat3>& rotations);

/// Rest pose with the root at its rest position translated by `ground_offset`.
GlobalPose rest_pose(const Skeleton& skel, const Vec3& ground_offset = Vec3::Zero());
/// Builds a pose (running FK) from root position and local rotations.
GlobalPose make_pose(const Skeleton& skel, const Vec3& root_pos, std::vector<Mat3> rotations);

MotionFrame encode_frame(const Skeleton& skel, const GlobalPose& prev, const GlobalPose& curr);
/// Frame 0 is encoded against itself (zero velocities).
std::vector<MotionFrame> encode_sequence(const Skeleton& skel, const std::vector<GlobalPose>& poses);

/// Streaming decoder: integrates root motion frame by frame, then runs FK.
class StreamDecoder {
public:
    StreamDecoder(Skeleton skel, const GlobalPose& init);

    /// Throws std::invalid_argument on non-finite or malformed frames; state is unchanged then.
    GlobalPose step(const MotionFrame& frame);
    void reset(const GlobalPose& init);

    const Skeleton& skeleton() const { return skel_; }
    const GlobalPose& last() const { return last_; }

private:
    Skeleton skel_;
    Vec3 root_ground_ = Vec3::Zero();
    Mat3 root_rot_ = Mat3::Identity();
    GlobalPose last_;
};

std::vector<GlobalPose> decode_stream(const Skeleton& skel, const std::vector<MotionFrame>& frames,
                                      const GlobalPose& init);

/// Frames as rows of an N x (8+12K) matrix, plus header fields.
struct MotionClip {
    std::string skeleton_id = "TOY5";
    double fps = 30.0;
    Eigen::MatrixXd frames;

    std::vector<MotionFrame> as_frames() const;
    static MotionClip from_frames(const std::string& skeleton_id, double fps, const std::vector<MotionFrame>& frames);
};

/// Text variant: one header line then one comma-separated row per frame.
void write_motion_csv(const std::filesystem::path& path, const MotionClip& clip);
MotionClip read_motion_csv(const std::filesystem::path& path);
/// Binary variant, little-endian: "BFMO", u32 version, u32 id length + id bytes,
/// f64 fps, u64 frames, u32 dim, then frames*dim float64 row-major.
void write_motion_binary(const std::filesystem::path& path, const MotionClip& clip);
MotionClip read_motion_binary(const std::filesystem::path& path);
/// Dispatches on extension: ".csv" text, anything else binary.
void write_motion(const std::filesystem::path& path, const MotionClip& clip);
MotionClip read_motion(const std::filesystem::path& path);

}  // namespace beatflow::motion
