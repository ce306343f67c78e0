#include "beatflow/motion.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace beatflow::motion {

void Skeleton::validate() const {
    const int k = joint_count();
    if (k < 1) throw std::invalid_argument("skeleton has no joints");
    if (static_cast<int>(offsets.size()) != k || static_cast<int>(names.size()) != k) {
        throw std::invalid_argument("skeleton arrays disagree in length");
    }
    int roots = 0;
    for (int j = 0; j < k; ++j) {
        if (parents[j] < 0) {
            ++roots;
            if (j != 0) throw std::invalid_argument("skeleton root must be joint 0");
        } else if (parents[j] >= j) {
            throw std::invalid_argument("skeleton is not topologically sorted");
        }
    }
    if (roots != 1) throw std::invalid_argument("skeleton must have exactly one root");
    for (int f : feet) {
        if (f < 0 || f >= k) throw std::invalid_argument("foot joint index out of range");
    }
}

Skeleton toy5() {
    Skeleton s;
    s.id = "TOY5";
    s.names = {"pelvis", "left_foot", "right_foot", "chest", "right_hand"};
    s.parents = {-1, 0, 0, 0, 3};
    s.offsets = {Vec3(0.0, 0.9, 0.0), Vec3(0.12, -0.9, 0.0), Vec3(-0.12, -0.9, 0.0), Vec3(0.0, 0.45, 0.0),
                 Vec3(-0.45, 0.05, 0.0)};
    s.feet = {1, 2};
    return s;
}

Skeleton smpl22() {
    Skeleton s;
    s.id = "SMPL22";
    s.names = {"pelvis",     "left_hip",       "right_hip",      "spine1",     "left_knee",  "right_knee",
               "spine2",     "left_ankle",     "right_ankle",    "spine3",     "left_foot",  "right_foot",
               "neck",       "left_collar",    "right_collar",   "head",       "left_shoulder", "right_shoulder",
               "left_elbow", "right_elbow",    "left_wrist",     "right_wrist"};
    s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    s.offsets = {Vec3(0.0, 0.93, 0.0),    Vec3(0.06, -0.09, 0.0),   Vec3(-0.06, -0.09, 0.0),
                 Vec3(0.0, 0.11, -0.02),  Vec3(0.04, -0.38, 0.0),   Vec3(-0.04, -0.38, 0.0),
                 Vec3(0.0, 0.14, 0.0),    Vec3(-0.01, -0.40, -0.04), Vec3(0.01, -0.40, -0.04),
                 Vec3(0.0, 0.05, 0.02),   Vec3(0.04, -0.06, 0.12),  Vec3(-0.04, -0.06, 0.12),
                 Vec3(0.0, 0.21, -0.03),  Vec3(0.08, 0.12, -0.01),  Vec3(-0.08, 0.12, -0.01),
                 Vec3(0.0, 0.09, 0.05),   Vec3(0.12, 0.04, -0.02),  Vec3(-0.12, 0.04, -0.02),
                 Vec3(0.26, -0.01, -0.02), Vec3(-0.26, -0.01, -0.02), Vec3(0.25, 0.01, 0.0),
                 Vec3(-0.25, 0.01, 0.0)};
    s.feet = {7, 8, 10, 11};
    return s;
}

Skeleton skeleton_by_id(const std::string& id) {
    if (id == "TOY5") return toy5();
    if (id == "SMPL22") return smpl22();
    throw std::invalid_argument("unknown skeleton id: " + id);
}

MotionFrame::MotionFrame(int joints) : k_(joints), v_(Eigen::VectorXd::Zero(frame_dim(joints))) {}

MotionFrame::MotionFrame(int joints, Eigen::VectorXd values) : k_(joints), v_(std::move(values)) {
    if (v_.size() != frame_dim(joints)) throw std::invalid_argument("motion frame has wrong dimension");
}

Mat3 rot6d_to_matrix(const Rot6& r6) {
    const Vec3 a1 = r6.head<3>();
    const Vec3 a2 = r6.tail<3>();
    if (!r6.allFinite()) throw DegenerateRotation("6-D rotation has non-finite entries");
    const double n1 = a1.norm();
    if (n1 < 1e-9) throw DegenerateRotation("6-D rotation has a zero first column");
    const Vec3 b1 = a1 / n1;
    const Vec3 u2 = a2 - b1.dot(a2) * b1;
    const double n2 = u2.norm();
    if (n2 < 1e-9) throw DegenerateRotation("6-D rotation columns are parallel");
    const Vec3 b2 = u2 / n2;
    Mat3 r;
    r.col(0) = b1;
    r.col(1) = b2;
    r.col(2) = b1.cross(b2);
    return r;
}

Rot6 matrix_to_rot6d(const Mat3& r) {
    Rot6 out;
    out.head<3>() = r.col(0);
    out.tail<3>() = r.col(1);
    return out;
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

double heading_yaw(const Mat3& r) {
    const Vec3 f = r.col(2);
    return std::atan2(f.x(), f.z());
}

std::vector<Vec3> forward_kinematics(const Skeleton& skel, const Vec3& root_pos, const std::vector<Mat3>& rotations) {
    const int k = skel.joint_count();
    if (static_cast<int>(rotations.size()) != k) throw std::invalid_argument("rotation count does not match skeleton");
    std::vector<Vec3> pos(static_cast<std::size_t>(k));
    std::vector<Mat3> world(static_cast<std::size_t>(k));
    pos[0] = root_pos;
    world[0] = rotations[0];
    for (int j = 1; j < k; ++j) {
        const int p = skel.parents[static_cast<std::size_t>(j)];
        world[j] = world[p] * rotations[j];
        pos[j] = pos[p] + world[p] * skel.offsets[j];
    }
    return pos;
}

GlobalPose make_pose(const Skeleton& skel, const Vec3& root_pos, std::vector<Mat3> rotations) {
    GlobalPose pose;
    pose.root_pos = root_pos;
    pose.joints = forward_kinematics(skel, root_pos, rotations);
    pose.rotations = std::move(rotations);
    return pose;
}

GlobalPose rest_pose(const Skeleton& skel, const Vec3& ground_offset) {
    return make_pose(skel, skel.offsets[0] + ground_offset,
                     std::vector<Mat3>(static_cast<std::size_t>(skel.joint_count()), Mat3::Identity()));
}

namespace {

void check_pose(const Skeleton& skel, const GlobalPose& p) {
    if (static_cast<int>(p.rotations.size()) != skel.joint_count() ||
        static_cast<int>(p.joints.size()) != skel.joint_count()) {
        throw std::invalid_argument("pose does not match skeleton " + skel.id);
    }
}

Vec3 ground(const Vec3& p) { return Vec3(p.x(), 0.0, p.z()); }

}  // namespace

MotionFrame encode_frame(const Skeleton& skel, const GlobalPose& prev, const GlobalPose& curr) {
    check_pose(skel, prev);
    check_pose(skel, curr);
    const int k = skel.joint_count();
    MotionFrame f(k);
    const Mat3 hp = rot_y(heading_yaw(prev.root_rot()));
    const Mat3 hc = rot_y(heading_yaw(curr.root_rot()));

    const Vec3 d = hp.transpose() * (curr.root_pos - prev.root_pos);
    f.root_vel_xz() << d.x(), d.z();
    f.root_angvel_6d() = matrix_to_rot6d(prev.root_rot().transpose() * curr.root_rot());

    const Vec3 origin = ground(curr.root_pos);
    for (int j = 0; j < k; ++j) {
        f.joint_pos(j) = hc.transpose() * (curr.joints[j] - origin);
        f.joint_vel(j) = hc.transpose() * (curr.joints[j] - prev.joints[j]);
        f.joint_rot_6d(j) = matrix_to_rot6d(j == 0 ? Mat3(hc.transpose() * curr.root_rot()) : curr.rotations[j]);
    }
    return f;
}

std::vector<MotionFrame> encode_sequence(const Skeleton& skel, const std::vector<GlobalPose>& poses) {
    std::vector<MotionFrame> out;
    out.reserve(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
        out.push_back(encode_frame(skel, i == 0 ? poses[0] : poses[i - 1], poses[i]));
    }
    return out;
}

StreamDecoder::StreamDecoder(Skeleton skel, const GlobalPose& init) : skel_(std::move(skel)) {
    skel_.validate();
    reset(init);
}

void StreamDecoder::reset(const GlobalPose& init) {
    check_pose(skel_, init);
    root_ground_ = ground(init.root_pos);
    root_rot_ = init.root_rot();
    last_ = init;
}

GlobalPose StreamDecoder::step(const MotionFrame& frame) {
    const int k = skel_.joint_count();
    if (frame.joints() != k) throw std::invalid_argument("frame does not match skeleton " + skel_.id);
    if (!frame.all_finite()) throw std::invalid_argument("non-finite motion frame");

    // Compute everything into locals first so a bad frame leaves the state intact.
    std::vector<Mat3> rotations(static_cast<std::size_t>(k));
    Mat3 increment;
    try {
        increment = rot6d_to_matrix(frame.root_angvel_6d());
        for (int j = 0; j < k; ++j) rotations[j] = rot6d_to_matrix(frame.joint_rot_6d(j));
    } catch (const DegenerateRotation& e) {
        throw std::invalid_argument(std::string("malformed motion frame: ") + e.what());
    }

    const Mat3 hp = rot_y(heading_yaw(root_rot_));
    const Vec3 ground_next = root_ground_ + hp * Vec3(frame.root_vel_xz()(0), 0.0, frame.root_vel_xz()(1));
    const Mat3 hc = rot_y(heading_yaw(root_rot_ * increment));
    rotations[0] = hc * rotations[0];
    const Vec3 root_pos(ground_next.x(), frame.joint_pos(0).y(), ground_next.z());

    GlobalPose pose = make_pose(skel_, root_pos, std::move(rotations));
    root_ground_ = ground_next;
    root_rot_ = pose.root_rot();
    last_ = pose;
    return pose;
}

std::vector<GlobalPose> decode_stream(const Skeleton& skel, const std::vector<MotionFrame>& frames,
                                      const GlobalPose& init) {
    StreamDecoder dec(skel, init);
    std::vector<GlobalPose> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(dec.step(f));
    return out;
}

std::vector<MotionFrame> MotionClip::as_frames() const {
    const int k = static_cast<int>((frames.cols() - 8) / 12);
    if (frame_dim(k) != frames.cols()) throw std::invalid_argument("motion clip has invalid frame dimension");
    std::vector<MotionFrame> out;
    out.reserve(static_cast<std::size_t>(frames.rows()));
    for (Eigen::Index i = 0; i < frames.rows(); ++i) out.emplace_back(k, Eigen::VectorXd(frames.row(i).transpose()));
    return out;
}

MotionClip MotionClip::from_frames(const std::string& skeleton_id, double fps, const std::vector<MotionFrame>& frames) {
    MotionClip clip;
    clip.skeleton_id = skeleton_id;
    clip.fps = fps;
    const Eigen::Index dim = frames.empty() ? frame_dim(skeleton_by_id(skeleton_id).joint_count())
                                            : frames.front().values().size();
    clip.frames.resize(static_cast<Eigen::Index>(frames.size()), dim);
    for (std::size_t i = 0; i < frames.size(); ++i) clip.frames.row(static_cast<Eigen::Index>(i)) = frames[i].values().transpose();
    return clip;
}

namespace {

constexpr char kMotionMagic[4] = {'B', 'F', 'M', 'O'};
static_assert(std::endian::native == std::endian::little, "motion IO assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("motion file truncated");
    return v;
}

}  // namespace

void write_motion_csv(const std::filesystem::path& path, const MotionClip& clip) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << "# beatflow-motion skeleton=" << clip.skeleton_id << " fps=" << clip.fps << " frames=" << clip.frames.rows()
       << " dim=" << clip.frames.cols() << "\n";
    os << std::setprecision(17);
    for (Eigen::Index i = 0; i < clip.frames.rows(); ++i) {
        for (Eigen::Index j = 0; j < clip.frames.cols(); ++j) {
            if (j) os << ',';
            os << clip.frames(i, j);
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

MotionClip read_motion_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open motion file " + path.string());
    std::string header;
    std::getline(is, header);
    if (header.rfind("# beatflow-motion", 0) != 0) throw std::runtime_error(path.string() + ": missing motion header");
    MotionClip clip;
    long frames = -1;
    long dim = -1;
    std::istringstream hs(header.substr(17));
    std::string field;
    while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "skeleton") clip.skeleton_id = val;
        else if (key == "fps") clip.fps = std::stod(val);
        else if (key == "frames") frames = std::stol(val);
        else if (key == "dim") dim = std::stol(val);
    }
    if (frames < 0 || dim < 0) throw std::runtime_error(path.string() + ": incomplete motion header");
    clip.frames.resize(frames, dim);
    std::string line;
    for (long i = 0; i < frames; ++i) {
        if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": fewer rows than header says");
        std::istringstream ls(line);
        std::string cell;
        for (long j = 0; j < dim; ++j) {
            if (!std::getline(ls, cell, ',')) throw std::runtime_error(path.string() + ": short row");
            clip.frames(i, j) = std::stod(cell);
        }
    }
    return clip;
}

void write_motion_binary(const std::filesystem::path& path, const MotionClip& clip) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMotionMagic, 4);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(clip.skeleton_id.size()));
    os.write(clip.skeleton_id.data(), static_cast<std::streamsize>(clip.skeleton_id.size()));
    put<double>(os, clip.fps);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(clip.frames.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(clip.frames.cols()));
    for (Eigen::Index i = 0; i < clip.frames.rows(); ++i)
        for (Eigen::Index j = 0; j < clip.frames.cols(); ++j) put<double>(os, clip.frames(i, j));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

MotionClip read_motion_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open motion file " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMotionMagic, 4) != 0) throw std::runtime_error(path.string() + ": not a motion file");
    if (take<std::uint32_t>(is) != 1) throw std::runtime_error(path.string() + ": unsupported motion version");
    MotionClip clip;
    const auto id_len = take<std::uint32_t>(is);
    if (id_len > 256) throw std::runtime_error(path.string() + ": corrupt skeleton id");
    clip.skeleton_id.resize(id_len);
    is.read(clip.skeleton_id.data(), id_len);
    clip.fps = take<double>(is);
    const auto frames = take<std::uint64_t>(is);
    const auto dim = take<std::uint32_t>(is);
    clip.frames.resize(static_cast<Eigen::Index>(frames), dim);
    for (Eigen::Index i = 0; i < clip.frames.rows(); ++i)
        for (Eigen::Index j = 0; j < clip.frames.cols(); ++j) clip.frames(i, j) = take<double>(is);
    return clip;
}

void write_motion(const std::filesystem::path& path, const MotionClip& clip) {
    if (path.extension() == ".csv") write_motion_csv(path, clip);
    else write_motion_binary(path, clip);
}

MotionClip read_motion(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return read_motion_csv(path);
    return read_motion_binary(path);
}

}  // namespace beatflow::motion
