#pragma once

// Operator keypoints -> robot joint targets: angle extraction from a 21-point
// hand skeleton, joint-wise calibration, linear retargeting, EMA smoothing and
// wrist workspace mapping.
//
// Landmark layout (right hand): 0 wrist; thumb 1 CMC, 2 MCP, 3 IP, 4 tip;
// index 5-8, middle 9-12, ring 13-16, pinky 17-20 (MCP, PIP, DIP, tip).
//
// Operator palm frame: y from wrist to middle MCP, x the part of
// (index MCP - pinky MCP) orthogonal to y (radial side), z = x cross y (palm
// side). Each finger's base frame keeps z and takes y along wrist->MCP
// projected into the palm plane; the thumb uses wrist->CMC. Abduction and
// flexion of the first bone follow the robot's abd-then-flex order, PIP/DIP
// (thumb MP/IP) are signed angles between successive bones about the
// abducted flexion axis.

#include <craft/errors.hpp>
#include <craft/hand_model.hpp>
#include <craft/json_util.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace craft {

inline constexpr std::size_t kLandmarkCount = 21;

using Landmarks = std::array<Eigen::Vector3d, kLandmarkCount>;

struct KeypointFrame {
    double t{0.0};
    Landmarks landmarks{};
    Eigen::Isometry3d wrist_pose = Eigen::Isometry3d::Identity();  // wrist relative to torso
    double confidence{1.0};
};

// First landmark (CMC for the thumb, MCP for fingers) of each digit.
inline constexpr std::size_t landmark_base(Digit d) {
    return d == Digit::Thumb ? 1 : 1 + 4 * static_cast<std::size_t>(d);
}

namespace detail {

inline constexpr double kDegenerate = 1e-9;

inline Eigen::Vector3d unit_or_reject(const Eigen::Vector3d& v, const char* what) {
    const double n = v.norm();
    if (!std::isfinite(n) || n < kDegenerate) throw FrameRejected(std::string("degenerate ") + what);
    return v / n;
}

inline double signed_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& axis) {
    return std::atan2(a.cross(b).dot(axis), a.dot(b));
}

// Columns x, y, z of the operator palm frame.
inline Eigen::Matrix3d palm_axes(const Landmarks& lm) {
    const Eigen::Vector3d y = unit_or_reject(lm[9] - lm[0], "palm axis");
    const Eigen::Vector3d across = lm[5] - lm[17];
    const Eigen::Vector3d x = unit_or_reject(across - across.dot(y) * y, "palm width");
    Eigen::Matrix3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = x.cross(y);
    return r;
}

inline Eigen::Matrix3d digit_axes(const Landmarks& lm, const Eigen::Matrix3d& palm, Digit d) {
    const Eigen::Vector3d z = palm.col(2);
    const Eigen::Vector3d toward = lm[landmark_base(d)] - lm[0];
    const Eigen::Vector3d y = unit_or_reject(toward - toward.dot(z) * z, "digit base direction");
    Eigen::Matrix3d r;
    r.col(0) = y.cross(z);
    r.col(1) = y;
    r.col(2) = z;
    return r;
}

}  // namespace detail

// All 20 operator joint angles (DIP/IP are the operator's own, not coupled).
inline JointAngles keypoints_to_angles(const KeypointFrame& frame) {
    const auto& lm = frame.landmarks;
    for (const auto& p : lm)
        if (!p.allFinite()) throw FrameRejected("non-finite landmark");
    const Eigen::Matrix3d palm = detail::palm_axes(lm);
    JointAngles q;
    for (Digit d : kDigits) {
        const std::size_t b = landmark_base(d);
        const Eigen::Matrix3d base = detail::digit_axes(lm, palm, d);
        std::array<Eigen::Vector3d, 3> bone;
        for (std::size_t k = 0; k < 3; ++k) {
            bone[k] = lm[b + k + 1] - lm[b + k];
            if (!(bone[k].norm() >= detail::kDegenerate)) throw FrameRejected("degenerate phalanx");
        }
        const Eigen::Vector3d v = base.transpose() * bone[0];
        const double abd = std::atan2(-v.x(), v.y());
        const double flex = std::atan2(v.z(), std::hypot(v.x(), v.y()));
        const Eigen::Vector3d axis = base * Eigen::Vector3d(std::cos(abd), std::sin(abd), 0.0);
        q[{d, Slot::McpAbd}] = abd;
        q[{d, Slot::McpFlex}] = flex;
        q[{d, Slot::Pip}] = detail::signed_angle(bone[0], bone[1], axis);
        q[{d, Slot::Dip}] = detail::signed_angle(bone[1], bone[2], axis);
    }
    return q;
}

// ---------------------------------------------------------------------------
// Synthetic operator hand (test oracle for the extraction above and source of
// sweep streams for calibration demos).

struct OperatorHandModel {
    // Base landmark (CMC / MCP) positions in the operator palm frame. The
    // middle MCP must lie on +y.
    std::array<Eigen::Vector3d, kDigitCount> bases{
        Eigen::Vector3d(0.025, 0.030, 0.0), Eigen::Vector3d(0.024, 0.090, 0.0), Eigen::Vector3d(0.0, 0.094, 0.0),
        Eigen::Vector3d(-0.019, 0.088, 0.0), Eigen::Vector3d(-0.036, 0.080, 0.0)};
    // Bone lengths after the base landmark, per digit.
    std::array<std::array<double, 3>, kDigitCount> bones{{{0.040, 0.032, 0.028},
                                                          {0.042, 0.025, 0.022},
                                                          {0.046, 0.028, 0.024},
                                                          {0.043, 0.027, 0.023},
                                                          {0.034, 0.020, 0.020}}};
};

// Landmarks realizing q exactly under keypoints_to_angles (|flex| < pi/2).
// `pose` places the palm frame in camera coordinates.
inline Landmarks synthetic_landmarks(const JointAngles& q, const OperatorHandModel& model = {},
                                     const Eigen::Isometry3d& pose = Eigen::Isometry3d::Identity()) {
    Landmarks lm;
    lm[0] = Eigen::Vector3d::Zero();
    for (Digit d : kDigits) {
        const auto i = static_cast<std::size_t>(d);
        const Eigen::Vector3d p0 = model.bases[i];
        const Eigen::Vector3d y = Eigen::Vector3d(p0.x(), p0.y(), 0.0).normalized();
        Eigen::Matrix3d base;
        base.col(1) = y;
        base.col(2) = Eigen::Vector3d::UnitZ();
        base.col(0) = y.cross(Eigen::Vector3d::UnitZ());
        const Eigen::Matrix3d abd = Eigen::AngleAxisd(q[{d, Slot::McpAbd}], Eigen::Vector3d::UnitZ()).toRotationMatrix();
        double angle = q[{d, Slot::McpFlex}];
        const std::array<double, 3> add{0.0, q[{d, Slot::Pip}], q[{d, Slot::Dip}]};
        const std::size_t b = landmark_base(d);
        lm[b] = p0;
        for (std::size_t k = 0; k < 3; ++k) {
            angle += add[k];
            const Eigen::Vector3d dir = base * abd * Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitX()) * Eigen::Vector3d::UnitY();
            lm[b + k + 1] = lm[b + k] + model.bones[i][k] * dir;
        }
    }
    for (auto& p : lm) p = pose * p;
    return lm;
}

// ---------------------------------------------------------------------------
// Calibration

struct OperatorRange {
    PerActive<Limits> range{};
    PerActive<bool> observed{};
};

struct CalibrationResult {
    OperatorRange range;
    std::vector<std::string> under_calibrated;  // max - min < min_span
    std::size_t frames_used{0};
    std::size_t skipped_low_confidence{0};
    std::size_t rejected{0};
};

// Single-writer accumulator of per-joint min/max over a frame stream.
class OperatorCalibrator {
public:
    explicit OperatorCalibrator(double min_confidence = 0.5, double min_span = 0.05)
        : min_confidence_(min_confidence), min_span_(min_span) {}

    // Returns true if the frame contributed.
    bool add(const KeypointFrame& frame) {
        if (!(frame.confidence >= min_confidence_)) {
            ++result_.skipped_low_confidence;
            return false;
        }
        JointAngles q;
        try {
            q = keypoints_to_angles(frame);
        } catch (const FrameRejected&) {
            ++result_.rejected;
            return false;
        }
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k) {
            const double v = q[ids[k]];
            auto& r = result_.range.range[k];
            if (!result_.range.observed[k]) {
                r = {v, v};
                result_.range.observed[k] = true;
            } else {
                r.min = std::min(r.min, v);
                r.max = std::max(r.max, v);
            }
        }
        ++result_.frames_used;
        return true;
    }

    CalibrationResult result() const {
        CalibrationResult out = result_;
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k)
            if (!out.range.observed[k] || out.range.range[k].width() < min_span_)
                out.under_calibrated.push_back(joint_name(ids[k]));
        return out;
    }

private:
    double min_confidence_;
    double min_span_;
    CalibrationResult result_;
};

inline CalibrationResult calibrate_operator(const std::vector<KeypointFrame>& frames) {
    OperatorCalibrator cal;
    for (const auto& f : frames) cal.add(f);
    auto out = cal.result();
    if (out.frames_used == 0) throw ConfigError("calibration stream has no usable frame");
    return out;
}

// Records the robot's joint extremes while each joint is moved through its
// range (by hand on hardware, by sweeping on the virtual bus).
class RobotCalibrator {
public:
    void add(const JointAngles& q) {
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k) {
            const double v = q[ids[k]];
            if (!seen_[k]) {
                limits_[k] = {v, v};
                seen_[k] = true;
            } else {
                limits_[k].min = std::min(limits_[k].min, v);
                limits_[k].max = std::max(limits_[k].max, v);
            }
        }
    }
    const PerActive<Limits>& limits() const { return limits_; }

private:
    PerActive<Limits> limits_{};
    PerActive<bool> seen_{};
};

// ---------------------------------------------------------------------------
// Profile

inline constexpr int kProfileVersion = 1;

struct WorkspaceMap {
    Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();  // torso -> robot base
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    Eigen::Quaterniond mount = Eigen::Quaterniond::Identity();  // applied to wrist orientation
    Eigen::Vector3d box_min{-1.0, -1.0, -1.0};
    Eigen::Vector3d box_max{1.0, 1.0, 1.0};
};

struct CalibrationProfile {
    int version{kProfileVersion};
    PerActive<Limits> robot_limits{};
    PerActive<Limits> operator_range{};
    PerActive<double> spool_offsets{};  // rad, per motor in actuator order
    WorkspaceMap workspace;
    double ema_alpha{0.3};

    void validate() const {
        if (version != kProfileVersion) throw ConfigError("unsupported profile version " + std::to_string(version));
        if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must be in (0, 1]");
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k) {
            if (!(robot_limits[k].min <= robot_limits[k].max))
                throw ConfigError("robot limits inverted on " + joint_name(ids[k]));
            if (!(operator_range[k].min < operator_range[k].max))
                throw ConfigError("operator range of " + joint_name(ids[k]) + " has zero width");
        }
        if (!workspace.linear.allFinite() || !workspace.offset.allFinite())
            throw ConfigError("workspace map must be finite");
        if ((workspace.box_min.array() > workspace.box_max.array()).any())
            throw ConfigError("workspace box is inverted");
    }
};

// Robot limits from the hand spec; operator range left for calibration.
inline CalibrationProfile profile_from_spec(const HandSpec& spec) {
    CalibrationProfile p;
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) p.robot_limits[k] = spec.joint(ids[k]).limits;
    return p;
}

// ---------------------------------------------------------------------------
// Retarget, smooth, wrist

inline double retarget_joint(const Limits& op, const Limits& robot, double theta_op) {
    const double width = op.max - op.min;
    if (!(width > 0.0)) throw ConfigError("zero-width operator range");
    const double u = (theta_op - op.min) / width;
    if (!(u > 0.0)) return robot.min;  // also catches NaN input
    if (u >= 1.0) return robot.max;
    return std::clamp(robot.min + u * (robot.max - robot.min), robot.min, robot.max);
}

inline JointAngles retarget(const CalibrationProfile& profile, const JointAngles& operator_angles) {
    JointAngles q;
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) {
        try {
            q[ids[k]] = retarget_joint(profile.operator_range[k], profile.robot_limits[k], operator_angles[ids[k]]);
        } catch (const ConfigError&) {
            throw ConfigError("zero-width operator range on " + joint_name(ids[k]));
        }
    }
    return project_coupling(q);
}

inline double smooth(double prev, double next, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("ema alpha must be in (0, 1]");
    return alpha * next + (1.0 - alpha) * prev;
}

inline JointAngles smooth(const JointAngles& prev, const JointAngles& next, double alpha) {
    JointAngles out;
    for (JointId id : all_joints()) out[id] = smooth(prev[id], next[id], alpha);
    return out;
}

// Stateful EMA; the first sample passes through.
class TargetSmoother {
public:
    explicit TargetSmoother(double alpha) : alpha_(alpha) { smooth(0.0, 0.0, alpha); }

    JointAngles operator()(const JointAngles& next) {
        state_ = state_ ? smooth(*state_, next, alpha_) : next;
        return *state_;
    }
    void reset() { state_.reset(); }

private:
    double alpha_;
    std::optional<JointAngles> state_;
};

struct WristTarget {
    Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
    bool clamped{false};
};

inline WristTarget retarget_wrist(const CalibrationProfile& profile, const Eigen::Isometry3d& wrist) {
    const auto& w = profile.workspace;
    WristTarget out;
    const Eigen::Vector3d p = w.linear * wrist.translation() + w.offset;
    const Eigen::Vector3d c = p.cwiseMax(w.box_min).cwiseMin(w.box_max);
    out.clamped = (c - p).cwiseAbs().maxCoeff() > 0.0;
    out.pose.linear() = w.mount.toRotationMatrix() * wrist.linear();
    out.pose.translation() = c;
    return out;
}

// ---------------------------------------------------------------------------
// Files

namespace io {

inline json limits_list_to_json(const PerActive<Limits>& l) {
    json out = json::object();
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) out[joint_name(ids[k])] = {l[k].min, l[k].max};
    return out;
}

inline PerActive<Limits> limits_list_from_json(const json& j) {
    PerActive<Limits> out{};
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) {
        const auto name = joint_name(ids[k]);
        if (!j.contains(name)) throw ConfigError("profile missing joint " + name);
        out[k] = {j.at(name).at(0).get<double>(), j.at(name).at(1).get<double>()};
    }
    return out;
}

inline json matrix3_to_json(const Eigen::Matrix3d& m) {
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
}

inline Eigen::Matrix3d matrix3_from_json(const json& j) {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

inline json profile_to_json(const CalibrationProfile& p) {
    json offsets = json::object();
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) offsets[joint_name(ids[k])] = p.spool_offsets[k];
    const auto& w = p.workspace;
    return {{"format", "craft-calibration-profile"},
            {"version", p.version},
            {"ema_alpha", p.ema_alpha},
            {"robot_limits", limits_list_to_json(p.robot_limits)},
            {"operator_range", limits_list_to_json(p.operator_range)},
            {"spool_offsets", offsets},
            {"workspace",
             {{"linear", matrix3_to_json(w.linear)},
              {"offset", vec3_to_json(w.offset)},
              {"mount_quaternion", {w.mount.w(), w.mount.x(), w.mount.y(), w.mount.z()}},
              {"box_min", vec3_to_json(w.box_min)},
              {"box_max", vec3_to_json(w.box_max)}}}};
}

inline CalibrationProfile profile_from_json(const json& j) {
    if (j.value("format", std::string()) != "craft-calibration-profile")
        throw LoadError("not a calibration profile");
    CalibrationProfile p;
    p.version = j.at("version").get<int>();
    p.ema_alpha = j.at("ema_alpha").get<double>();
    p.robot_limits = limits_list_from_json(j.at("robot_limits"));
    p.operator_range = limits_list_from_json(j.at("operator_range"));
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k)
        p.spool_offsets[k] = j.at("spool_offsets").value(joint_name(ids[k]), 0.0);
    const auto& w = j.at("workspace");
    p.workspace.linear = matrix3_from_json(w.at("linear"));
    p.workspace.offset = vec3_from_json(w.at("offset"));
    const auto& q = w.at("mount_quaternion");
    p.workspace.mount = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                           q.at(3).get<double>());
    p.workspace.box_min = vec3_from_json(w.at("box_min"));
    p.workspace.box_max = vec3_from_json(w.at("box_max"));
    p.validate();
    return p;
}

inline std::string profile_to_text(const CalibrationProfile& p) { return profile_to_json(p).dump(2) + "\n"; }

inline CalibrationProfile load_profile(const std::string& path) {
    try {
        return profile_from_json(parse(read_file(path), path));
    } catch (const json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
}

inline void save_profile(const std::string& path, const CalibrationProfile& p) { write_file(path, profile_to_text(p)); }

// Keypoint stream: header line, then one frame per line.
inline constexpr int kKeypointStreamVersion = 1;

inline json keypoint_stream_header() {
    return {{"format", "craft-keypoints"}, {"version", kKeypointStreamVersion}, {"layout", "mediapipe-21"},
            {"units", {{"length", "m"}, {"time", "s"}}}};
}

inline json frame_to_json(const KeypointFrame& f) {
    json lms = json::array();
    for (const auto& p : f.landmarks) lms.push_back(vec3_to_json(p));
    return {{"t", f.t}, {"landmarks", lms}, {"wrist_pose", pose_to_json(f.wrist_pose)}, {"confidence", f.confidence}};
}

inline KeypointFrame frame_from_json(const json& j) {
    KeypointFrame f;
    f.t = j.at("t").get<double>();
    const auto& lms = j.at("landmarks");
    if (!lms.is_array() || lms.size() != kLandmarkCount)
        throw FrameRejected("expected 21 landmarks, got " + std::to_string(lms.is_array() ? lms.size() : 0));
    for (std::size_t i = 0; i < kLandmarkCount; ++i) f.landmarks[i] = vec3_from_json(lms.at(i));
    if (j.contains("wrist_pose")) f.wrist_pose = pose_from_json(j.at("wrist_pose"));
    f.confidence = j.value("confidence", 1.0);
    return f;
}

inline std::string keypoint_stream_to_text(const std::vector<KeypointFrame>& frames) {
    std::string out = keypoint_stream_header().dump() + "\n";
    for (const auto& f : frames) out += frame_to_json(f).dump() + "\n";
    return out;
}

inline std::vector<KeypointFrame> keypoint_stream_from_text(const std::string& text, const std::string& what) {
    std::vector<KeypointFrame> frames;
    std::size_t start = 0, line_no = 0;
    bool header = false;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = parse(line, what + ":" + std::to_string(line_no));
        if (!header) {
            if (j.value("format", std::string()) != "craft-keypoints") throw LoadError(what + ": missing keypoint header");
            if (j.value("version", 0) != kKeypointStreamVersion) throw LoadError(what + ": unsupported keypoint version");
            header = true;
            continue;
        }
        try {
            auto f = frame_from_json(j);
            if (!frames.empty() && !(f.t > frames.back().t))
                throw LoadError(what + ":" + std::to_string(line_no) + ": timestamps must strictly increase");
            frames.push_back(std::move(f));
        } catch (const json::exception& e) {
            throw LoadError(what + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!header) throw LoadError(what + ": empty keypoint stream");
    return frames;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Synthetic streams

// Operator envelope used by the synthetic sweep: flexions within (-pi/2, pi/2).
inline PerActive<Limits> default_operator_envelope() {
    PerActive<Limits> env{};
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) {
        switch (ids[k].slot) {
            case Slot::McpAbd: env[k] = ids[k].digit == Digit::Thumb ? Limits{-0.5, 0.6} : Limits{-0.3, 0.3}; break;
            case Slot::McpFlex: env[k] = Limits{-0.2, 1.4}; break;
            default: env[k] = Limits{0.0, 1.6}; break;
        }
    }
    return env;
}

// Triangle-wave sweep of every active joint across its envelope; endpoints
// are hit exactly and held for `dwell` frames. DIP mirrors PIP at 0.8x.
// Joints use staggered periods so all combinations are visited.
inline std::vector<KeypointFrame> synthetic_sweep(const PerActive<Limits>& env, std::size_t frames, double rate_hz = 30.0,
                                                  const OperatorHandModel& model = {}, std::size_t dwell = 0) {
    std::vector<KeypointFrame> out;
    out.reserve(frames);
    const auto ids = active_joints();
    for (std::size_t i = 0; i < frames; ++i) {
        JointAngles q;
        for (std::size_t k = 0; k < kActiveCount; ++k) {
            const std::size_t half = 30 + 4 * k;  // frames per ramp
            const std::size_t ph = i % (2 * (half + dwell));
            double u = 0.0;
            if (ph < half) u = static_cast<double>(ph) / half;
            else if (ph < half + dwell) u = 1.0;
            else if (ph < 2 * half + dwell) u = static_cast<double>(2 * half + dwell - ph) / half;
            q[ids[k]] = u >= 1.0 ? env[k].max : (u <= 0.0 ? env[k].min : env[k].min + u * env[k].width());
        }
        for (Digit d : kDigits) q[{d, Slot::Dip}] = 0.8 * q[{d, Slot::Pip}];
        KeypointFrame f;
        f.t = static_cast<double>(i) / rate_hz;
        f.landmarks = synthetic_landmarks(q, model);
        f.wrist_pose.translation() = Eigen::Vector3d(0.3 + 0.1 * std::sin(0.5 * f.t), 0.05 * std::cos(0.3 * f.t), 0.4);
        out.push_back(f);
    }
    return out;
}

}  // namespace craft
