#pragma once

// Static description of the 20-joint / 15-actuator hand and its forward and
// inverse kinematics.
//
// Frames. The palm frame has +y pointing from the wrist toward the finger
// bases, +x toward the thumb (radial) side and +z out of the palm (the side
// fingers curl toward). Every digit has a local base frame with the same
// convention: +y along the straight digit, +z toward its flexion side.
// Abduction rotates about the base z axis, flexion about the (abducted) x
// axis; positive flexion curls the digit toward +z.

#include <craft/errors.hpp>

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace craft {

enum class Digit { Thumb = 0, Index = 1, Middle = 2, Ring = 3, Pinky = 4 };

// Thumb aliases: McpFlex = CMC flex, McpAbd = CMC abd, Pip = MP, Dip = IP.
enum class Slot { McpFlex = 0, McpAbd = 1, Pip = 2, Dip = 3 };

enum class JointKind { Revolute, RollingContact };

enum class Segment { Metacarpal, Proximal, Middle, Distal };

inline constexpr std::size_t kDigitCount = 5;
inline constexpr std::size_t kJointCount = 20;
inline constexpr std::size_t kActiveCount = 15;

inline constexpr std::array<Digit, kDigitCount> kDigits{Digit::Thumb, Digit::Index, Digit::Middle,
                                                       Digit::Ring, Digit::Pinky};

struct JointId {
    Digit digit{Digit::Index};
    Slot slot{Slot::McpFlex};

    constexpr std::size_t index() const {
        return static_cast<std::size_t>(digit) * 4 + static_cast<std::size_t>(slot);
    }
    static constexpr JointId from_index(std::size_t i) {
        return {static_cast<Digit>(i / 4), static_cast<Slot>(i % 4)};
    }
    constexpr bool is_follower() const { return slot == Slot::Dip; }
    friend constexpr bool operator==(JointId a, JointId b) {
        return a.digit == b.digit && a.slot == b.slot;
    }
    friend constexpr auto operator<=>(JointId a, JointId b) { return a.index() <=> b.index(); }
};

inline std::string_view digit_name(Digit d) {
    static constexpr std::array<std::string_view, 5> names{"thumb", "index", "middle", "ring",
                                                           "pinky"};
    return names[static_cast<std::size_t>(d)];
}

inline std::optional<Digit> parse_digit(std::string_view s) {
    for (Digit d : kDigits)
        if (digit_name(d) == s) return d;
    return std::nullopt;
}

inline std::string_view slot_name(Slot s, Digit d = Digit::Index) {
    static constexpr std::array<std::string_view, 4> finger{"mcp_flex", "mcp_abd", "pip", "dip"};
    static constexpr std::array<std::string_view, 4> thumb{"cmc_flex", "cmc_abd", "mp", "ip"};
    return (d == Digit::Thumb ? thumb : finger)[static_cast<std::size_t>(s)];
}

// Canonical name, e.g. "index.pip" or "thumb.cmc_abd".
inline std::string joint_name(JointId id) {
    return std::string(digit_name(id.digit)) + "." + std::string(slot_name(id.slot, id.digit));
}

// Accepts canonical names and, for the thumb, both the anatomical aliases
// and the finger slot names.
inline std::optional<JointId> parse_joint(std::string_view s) {
    const auto dot = s.find('.');
    if (dot == std::string_view::npos) return std::nullopt;
    const auto digit = parse_digit(s.substr(0, dot));
    if (!digit) return std::nullopt;
    const auto rest = s.substr(dot + 1);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto slot = static_cast<Slot>(k);
        if (rest == slot_name(slot, Digit::Index) ||
            (*digit == Digit::Thumb && rest == slot_name(slot, Digit::Thumb)))
            return JointId{*digit, slot};
    }
    return std::nullopt;
}

inline constexpr std::array<JointId, kJointCount> all_joints() {
    std::array<JointId, kJointCount> out{};
    for (std::size_t i = 0; i < kJointCount; ++i) out[i] = JointId::from_index(i);
    return out;
}

// Actuator order: digits thumb..pinky, within a digit abd, flex, pip.
// Motor bus id of active joint k is k + 1.
inline constexpr std::array<JointId, kActiveCount> active_joints() {
    std::array<JointId, kActiveCount> out{};
    std::size_t k = 0;
    for (Digit d : kDigits)
        for (Slot s : {Slot::McpAbd, Slot::McpFlex, Slot::Pip}) out[k++] = JointId{d, s};
    return out;
}

inline constexpr std::size_t active_index(JointId id) {
    const std::size_t base = static_cast<std::size_t>(id.digit) * 3;
    switch (id.slot) {
        case Slot::McpAbd: return base;
        case Slot::McpFlex: return base + 1;
        default: return base + 2;  // Dip follows Pip
    }
}

template <class T>
using PerActive = std::array<T, kActiveCount>;

struct Limits {
    double min{0.0};
    double max{0.0};

    double clamp(double v) const { return v < min ? min : (v > max ? max : v); }
    bool contains(double v, double tol = 0.0) const { return v >= min - tol && v <= max + tol; }
    double width() const { return max - min; }
    friend bool operator==(const Limits&, const Limits&) = default;
};

struct JointSpec {
    JointId id;
    JointKind kind{JointKind::Revolute};
    double rolling_radius{0.0};  // m, RollingContact only
    Limits limits;
    std::optional<JointId> leader;  // set for passive followers

    bool active() const { return !leader.has_value(); }
};

struct LinkSpec {
    Digit digit{Digit::Index};
    Segment segment{Segment::Proximal};
    double length{0.0};
    std::optional<JointId> parent_joint;  // nullopt: attached to the palm root
};

// Angles of all 20 joints, indexed by JointId.
class JointAngles {
public:
    JointAngles() { values_.fill(0.0); }

    double& operator[](JointId id) { return values_[id.index()]; }
    double operator[](JointId id) const { return values_[id.index()]; }

    const std::array<double, kJointCount>& values() const { return values_; }
    std::array<double, kJointCount>& values() { return values_; }

    PerActive<double> active() const {
        PerActive<double> out{};
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k) out[k] = (*this)[ids[k]];
        return out;
    }

    // Followers are left untouched; call project_coupling afterwards.
    static JointAngles from_active(const PerActive<double>& a) {
        JointAngles q;
        const auto ids = active_joints();
        for (std::size_t k = 0; k < kActiveCount; ++k) q[ids[k]] = a[k];
        return q;
    }

    friend bool operator==(const JointAngles&, const JointAngles&) = default;

private:
    std::array<double, kJointCount> values_;
};

// Leader wins: every Dip/Ip takes its digit's Pip/Mp angle.
inline JointAngles project_coupling(const JointAngles& raw) {
    JointAngles q = raw;
    for (Digit d : kDigits) q[{d, Slot::Dip}] = q[{d, Slot::Pip}];
    return q;
}

struct HandSpec {
    std::vector<LinkSpec> links;
    std::array<JointSpec, kJointCount> joints;
    Eigen::Isometry3d palm_frame = Eigen::Isometry3d::Identity();
    Eigen::Isometry3d thumb_mount = Eigen::Isometry3d::Identity();
    std::array<double, 4> finger_lateral_offsets{};  // x of index..pinky bases
    double mass{0.8};
    double palm_length{0.095};
    double finger_length{0.103};

    const JointSpec& joint(JointId id) const { return joints[id.index()]; }
    JointSpec& joint(JointId id) { return joints[id.index()]; }

    const LinkSpec* find_link(Digit d, Segment s) const {
        for (const auto& l : links)
            if (l.digit == d && l.segment == s) return &l;
        return nullptr;
    }
    LinkSpec* find_link(Digit d, Segment s) {
        for (auto& l : links)
            if (l.digit == d && l.segment == s) return &l;
        return nullptr;
    }
    double link_length(Digit d, Segment s) const {
        const auto* l = find_link(d, s);
        if (!l) throw ConfigError("missing link " + std::string(digit_name(d)));
        return l->length;
    }
    double digit_length(Digit d) const {
        return link_length(d, Segment::Proximal) + link_length(d, Segment::Middle) +
               link_length(d, Segment::Distal);
    }

    // Base frame of a digit (MCP/CMC center) relative to the palm frame.
    Eigen::Isometry3d digit_base(Digit d) const {
        if (d == Digit::Thumb) return thumb_mount;
        Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
        const auto i = static_cast<std::size_t>(d) - 1;
        t.translation() = Eigen::Vector3d(finger_lateral_offsets[i],
                                          link_length(d, Segment::Metacarpal), 0.0);
        return t;
    }

    void validate() const;
};

namespace detail {

inline std::string segment_name(Segment s) {
    switch (s) {
        case Segment::Metacarpal: return "metacarpal";
        case Segment::Proximal: return "proximal";
        case Segment::Middle: return "middle";
        case Segment::Distal: return "distal";
    }
    return "?";
}

}  // namespace detail

inline void HandSpec::validate() const {
    std::size_t active = 0;
    for (std::size_t i = 0; i < kJointCount; ++i) {
        const auto& j = joints[i];
        const auto name = joint_name(JointId::from_index(i));
        if (j.id.index() != i) throw ConfigError("joint table out of order at " + name);
        if (!(j.limits.min < j.limits.max)) throw ConfigError("empty limits on " + name);
        if (j.kind == JointKind::RollingContact && !(j.rolling_radius > 0.0))
            throw ConfigError("rolling radius must be positive on " + name);
        if (j.id.slot == Slot::Dip) {
            if (!j.leader || *j.leader != JointId{j.id.digit, Slot::Pip})
                throw ConfigError(name + " must follow its digit's pip");
        } else if (j.leader) {
            throw ConfigError(name + " cannot be a passive follower");
        } else {
            ++active;
        }
    }
    if (active != kActiveCount) throw ConfigError("expected 15 active joints");

    // Tree: per digit palm -> [metacarpal] -> mcp_flex -> proximal -> pip ->
    // middle -> dip -> distal. Each link must exist once with the right parent.
    for (Digit d : kDigits) {
        const std::array<std::pair<Segment, std::optional<JointId>>, 3> chain{{
            {Segment::Proximal, JointId{d, Slot::McpFlex}},
            {Segment::Middle, JointId{d, Slot::Pip}},
            {Segment::Distal, JointId{d, Slot::Dip}},
        }};
        for (const auto& [seg, parent] : chain) {
            int count = 0;
            for (const auto& l : links)
                if (l.digit == d && l.segment == seg) {
                    ++count;
                    if (l.parent_joint != parent)
                        throw ConfigError(std::string(digit_name(d)) + " " +
                                          detail::segment_name(seg) + " has wrong parent");
                    if (!(l.length > 0.0))
                        throw ConfigError(std::string(digit_name(d)) + " " +
                                          detail::segment_name(seg) + " has nonpositive length");
                }
            if (count != 1)
                throw ConfigError(std::string(digit_name(d)) + " needs exactly one " +
                                  detail::segment_name(seg) + " link");
        }
        for (const auto& [slot, seg] : {std::pair{Slot::Pip, Segment::Proximal},
                                        std::pair{Slot::Dip, Segment::Middle}}) {
            const auto& j = joint({d, slot});
            if (j.kind == JointKind::RollingContact &&
                !(link_length(d, seg) > 2.0 * j.rolling_radius))
                throw ConfigError(joint_name({d, slot}) + " rolling gap longer than its link");
        }
        if (d != Digit::Thumb) {
            const auto* meta = find_link(d, Segment::Metacarpal);
            if (!meta || meta->parent_joint) throw ConfigError("finger metacarpal must hang off palm");
        }
    }
    for (const auto& l : links)
        if (l.digit == Digit::Thumb && l.segment == Segment::Metacarpal)
            throw ConfigError("thumb base is given by the thumb mount, not a metacarpal link");
    for (Digit d : kDigits) {
        if (d == Digit::Thumb) continue;
        if ((digit_base(d).translation() - thumb_mount.translation()).norm() < 1e-3)
            throw ConfigError("thumb mount coincides with a finger base");
    }
}

// Default geometry. Phalanx split 45/33/25 mm and 5 mm rolling radii are
// placeholders: only the 95 mm palm and 103 mm finger totals are fixed.
inline HandSpec default_hand_spec() {
    HandSpec spec;
    for (std::size_t i = 0; i < kJointCount; ++i) {
        const auto id = JointId::from_index(i);
        JointSpec j;
        j.id = id;
        switch (id.slot) {
            case Slot::McpFlex:
                j.limits = {0.0, 1.57};
                break;
            case Slot::McpAbd:
                j.limits = id.digit == Digit::Thumb ? Limits{-0.8, 0.8} : Limits{-0.35, 0.35};
                break;
            case Slot::Pip:
            case Slot::Dip:
                j.kind = JointKind::RollingContact;
                j.rolling_radius = 0.005;
                j.limits = {0.0, 1.75};
                break;
        }
        if (id.slot == Slot::Dip) j.leader = JointId{id.digit, Slot::Pip};
        spec.joints[i] = j;
    }
    for (Digit d : kDigits) {
        if (d != Digit::Thumb)
            spec.links.push_back({d, Segment::Metacarpal, spec.palm_length, std::nullopt});
        spec.links.push_back({d, Segment::Proximal, 0.045, JointId{d, Slot::McpFlex}});
        spec.links.push_back({d, Segment::Middle, 0.033, JointId{d, Slot::Pip}});
        spec.links.push_back({d, Segment::Distal, 0.025, JointId{d, Slot::Dip}});
    }
    spec.finger_lateral_offsets = {0.027, 0.009, -0.009, -0.027};

    // Lateral thumb: CMC on the radial edge of the palm, axis swung toward the
    // fingers and rotated so that flexion sweeps across the finger pads. The
    // angles are a best guess; override in the hand-spec file.
    Eigen::Isometry3d mount = Eigen::Isometry3d::Identity();
    mount.translation() = Eigen::Vector3d(0.034, 0.030, 0.012);
    mount.linear() = (Eigen::AngleAxisd(-0.55, Eigen::Vector3d::UnitZ()) *
                      Eigen::AngleAxisd(0.35, Eigen::Vector3d::UnitX()) *
                      Eigen::AngleAxisd(-1.1, Eigen::Vector3d::UnitY()))
                         .toRotationMatrix();
    spec.thumb_mount = mount;
    return spec;
}

// ---------------------------------------------------------------------------
// Rolling-contact joint

// Pose of the distal circle frame in the proximal circle frame, in the 2D
// joint plane (x: flexion side, y: proximal link axis). `angle` is the
// distal frame's rotation from the y axis toward +x.
struct PlanarTransform {
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();
    double angle{0.0};

    Eigen::Isometry2d isometry() const {
        Eigen::Isometry2d t = Eigen::Isometry2d::Identity();
        t.translation() = translation;
        t.linear() = Eigen::Rotation2Dd(-angle).toRotationMatrix();
        return t;
    }
};

// Two equal circles of radius r rolling without slip. Each surface traverses
// an arc of r*theta/2, so the distal center sits at 2r(sin(theta/2), cos(theta/2)).
inline PlanarTransform rolling_joint_transform(double theta, double r) {
    if (!(std::abs(theta) <= std::numbers::pi))
        throw DomainError("rolling joint angle outside [-pi, pi]: " + std::to_string(theta));
    if (!(r > 0.0)) throw DomainError("rolling radius must be positive");
    const double half = 0.5 * theta;
    return {Eigen::Vector2d(2.0 * r * std::sin(half), 2.0 * r * std::cos(half)), theta};
}

// The same joint embedded in a digit frame: the joint plane is (z, y) and
// the rotation is about +x.
inline Eigen::Isometry3d rolling_joint_transform_3d(double theta, double r) {
    const auto p = rolling_joint_transform(theta, r);
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.translation() = Eigen::Vector3d(0.0, p.translation.y(), p.translation.x());
    t.linear() = Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitX()).toRotationMatrix();
    return t;
}

// ---------------------------------------------------------------------------
// Forward kinematics

struct DigitPose {
    Eigen::Isometry3d base;  // MCP/CMC center before abduction
    Eigen::Isometry3d mcp;   // after abduction and flexion
    Eigen::Isometry3d pip;   // start of the middle link
    Eigen::Isometry3d dip;   // start of the distal link
    Eigen::Isometry3d tip;
};

using HandPose = std::array<DigitPose, kDigitCount>;

namespace detail {

inline Eigen::Isometry3d translate_y(double d) {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.translation().y() = d;
    return t;
}

inline Eigen::Isometry3d joint_motion(const JointSpec& j, double theta) {
    if (j.kind == JointKind::RollingContact) return rolling_joint_transform_3d(theta, j.rolling_radius);
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.linear() = Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitX()).toRotationMatrix();
    return t;
}

// Distance from a flexion joint's frame to where its motion starts: rolling
// joints begin 2r before the next link (the gap belongs to the link length).
inline double rolling_gap(const JointSpec& j) {
    return j.kind == JointKind::RollingContact ? 2.0 * j.rolling_radius : 0.0;
}

inline DigitPose digit_chain(const HandSpec& spec, Digit d, const JointAngles& q) {
    const auto& pip = spec.joint({d, Slot::Pip});
    const auto& dip = spec.joint({d, Slot::Dip});
    DigitPose out;
    out.base = spec.palm_frame * spec.digit_base(d);
    Eigen::Isometry3d t = out.base;
    t.rotate(Eigen::AngleAxisd(q[{d, Slot::McpAbd}], Eigen::Vector3d::UnitZ()));
    t.rotate(Eigen::AngleAxisd(q[{d, Slot::McpFlex}], Eigen::Vector3d::UnitX()));
    out.mcp = t;
    t = t * translate_y(spec.link_length(d, Segment::Proximal) - rolling_gap(pip)) *
        joint_motion(pip, q[{d, Slot::Pip}]);
    out.pip = t;
    t = t * translate_y(spec.link_length(d, Segment::Middle) - rolling_gap(dip)) *
        joint_motion(dip, q[{d, Slot::Dip}]);
    out.dip = t;
    out.tip = t * translate_y(spec.link_length(d, Segment::Distal));
    return out;
}

}  // namespace detail

inline constexpr double kCouplingTolerance = 1e-9;
inline constexpr double kLimitTolerance = 1e-12;

inline void check_pose(const HandSpec& spec, const JointAngles& q) {
    for (JointId id : all_joints()) {
        const auto& lim = spec.joint(id).limits;
        if (!std::isfinite(q[id]) || !lim.contains(q[id], kLimitTolerance))
            throw LimitError(joint_name(id), q[id], lim.min, lim.max);
    }
    for (Digit d : kDigits)
        if (std::abs(q[{d, Slot::Dip}] - q[{d, Slot::Pip}]) > kCouplingTolerance)
            throw DomainError(std::string(digit_name(d)) + " violates the pip/dip coupling");
}

inline HandPose forward_kinematics(const HandSpec& spec, const JointAngles& q) {
    check_pose(spec, q);
    HandPose out;
    for (Digit d : kDigits) out[static_cast<std::size_t>(d)] = detail::digit_chain(spec, d, q);
    return out;
}

inline DigitPose digit_forward_kinematics(const HandSpec& spec, Digit d, const JointAngles& q) {
    check_pose(spec, q);
    return detail::digit_chain(spec, d, q);
}

// Fingertip position Jacobian of one digit with respect to its four joints,
// columns ordered (abd, flex, pip, dip). No limit checks.
inline Eigen::Matrix<double, 3, 4> digit_joint_jacobian(const HandSpec& spec, Digit d,
                                                        const JointAngles& q) {
    const auto pose = detail::digit_chain(spec, d, q);
    const Eigen::Vector3d tip = pose.tip.translation();
    Eigen::Matrix<double, 3, 4> jac;

    const Eigen::Vector3d abd_axis = pose.base.linear() * Eigen::Vector3d::UnitZ();
    jac.col(0) = abd_axis.cross(tip - pose.base.translation());
    const Eigen::Vector3d flex_axis = pose.mcp.linear() * Eigen::Vector3d::UnitX();
    jac.col(1) = flex_axis.cross(tip - pose.mcp.translation());

    // Rolling joint: the distal frame rotates about the joint axis while its
    // origin moves along the circle of radius 2r at half rate.
    auto flexion_column = [&](const Eigen::Isometry3d& after, const JointSpec& j, double theta) {
        const Eigen::Vector3d axis = after.linear() * Eigen::Vector3d::UnitX();
        Eigen::Vector3d col = axis.cross(tip - after.translation());
        if (j.kind == JointKind::RollingContact) {
            const Eigen::Matrix3d before =
                after.linear() * Eigen::AngleAxisd(-theta, Eigen::Vector3d::UnitX()).toRotationMatrix();
            const double r = j.rolling_radius;
            col += before * Eigen::Vector3d(0.0, -r * std::sin(0.5 * theta), r * std::cos(0.5 * theta));
        }
        return col;
    };
    jac.col(2) = flexion_column(pose.pip, spec.joint({d, Slot::Pip}), q[{d, Slot::Pip}]);
    jac.col(3) = flexion_column(pose.dip, spec.joint({d, Slot::Dip}), q[{d, Slot::Dip}]);
    return jac;
}

// Jacobian over the digit's three active DoF (abd, flex, coupled pip+dip).
inline Eigen::Matrix3d digit_active_jacobian(const HandSpec& spec, Digit d, const JointAngles& q) {
    const auto full = digit_joint_jacobian(spec, d, q);
    Eigen::Matrix3d jac;
    jac.col(0) = full.col(0);
    jac.col(1) = full.col(1);
    jac.col(2) = full.col(2) + full.col(3);
    return jac;
}

// Generalized joint torques J^T F produced by a force applied at the fingertip,
// ordered (abd, flex, pip, dip).
inline Eigen::Vector4d tip_force_joint_torques(const HandSpec& spec, Digit d, const JointAngles& q,
                                               const Eigen::Vector3d& force) {
    return digit_joint_jacobian(spec, d, q).transpose() * force;
}

// ---------------------------------------------------------------------------
// Inverse kinematics

struct IkOptions {
    double damping{1e-3};  // lambda in (J J^T + lambda^2 I)
    int max_iterations{200};
    double tolerance{1e-4};  // m
};

namespace detail {

// One damped least-squares descent from `q`. Joints pinned at a limit with the
// step pointing outward are dropped from the Jacobian for that iteration.
template <class Clamp, class Residual>
JointAngles dls_descent(const HandSpec& spec, Digit d, const Eigen::Vector3d& target, JointAngles q,
                        const IkOptions& opt, Clamp&& clamp_in, Residual&& residual_of, double& err) {
    const std::array<JointId, 3> ids{JointId{d, Slot::McpAbd}, JointId{d, Slot::McpFlex}, JointId{d, Slot::Pip}};
    const double lambda2 = opt.damping * opt.damping;
    err = residual_of(q);
    for (int it = 0; it < opt.max_iterations && err > 1e-9; ++it) {
        const Eigen::Vector3d e = target - digit_chain(spec, d, q).tip.translation();
        Eigen::Matrix3d jac = digit_active_jacobian(spec, d, q);
        Eigen::Vector3d step = Eigen::Vector3d::Zero();
        for (int pass = 0; pass < 2; ++pass) {
            step = jac.transpose() * (jac * jac.transpose() + lambda2 * Eigen::Matrix3d::Identity()).ldlt().solve(e);
            bool pinned = false;
            for (int k = 0; k < 3; ++k) {
                const auto& lim = spec.joint(ids[k]).limits;
                if ((q[ids[k]] <= lim.min && step(k) < 0.0) || (q[ids[k]] >= lim.max && step(k) > 0.0)) {
                    jac.col(k).setZero();
                    pinned = true;
                }
            }
            if (!pinned) break;
        }
        // Backtrack so every accepted step lowers the residual.
        double scale = 1.0;
        bool accepted = false;
        for (int k = 0; k < 12; ++k, scale *= 0.5) {
            JointAngles trial = q;
            for (int c = 0; c < 3; ++c) trial[ids[c]] += scale * step(c);
            trial = clamp_in(trial);
            const double r = residual_of(trial);
            if (r < err) {
                q = trial;
                err = r;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    return q;
}

}  // namespace detail

// Damped least squares over the digit's three active DoF, projecting onto
// joint limits and the coupling after every step. If the descent from `seed`
// stalls, it restarts from a fixed grid of seeds spanning the joint limits.
// Deterministic for a given seed.
inline JointAngles fingertip_ik(const HandSpec& spec, Digit d, const Eigen::Vector3d& target,
                                const JointAngles& seed, const IkOptions& opt = {}) {
    const auto base = detail::digit_chain(spec, d, project_coupling(seed)).base.translation();
    const double reach = spec.digit_length(d) + 0.001;
    const double dist = (target - base).norm();
    if (dist > reach) throw UnreachableError(std::string(digit_name(d)) + " target outside workspace", dist - reach);

    const JointId abd{d, Slot::McpAbd}, flex{d, Slot::McpFlex}, pip{d, Slot::Pip};
    auto clamp_in = [&](JointAngles q) {
        for (JointId id : {abd, flex, pip}) q[id] = spec.joint(id).limits.clamp(q[id]);
        return project_coupling(q);
    };
    auto residual_of = [&](const JointAngles& q) {
        return (target - detail::digit_chain(spec, d, q).tip.translation()).norm();
    };

    double err = 0.0;
    JointAngles best = detail::dls_descent(spec, d, target, clamp_in(seed), opt, clamp_in, residual_of, err);
    double best_err = err;
    if (best_err > opt.tolerance) {
        constexpr std::array<double, 3> fractions{0.2, 0.5, 0.8};
        for (double fa : fractions)
            for (double ff : fractions)
                for (double fp : fractions) {
                    JointAngles q = seed;
                    q[abd] = spec.joint(abd).limits.min + fa * spec.joint(abd).limits.width();
                    q[flex] = spec.joint(flex).limits.min + ff * spec.joint(flex).limits.width();
                    q[pip] = spec.joint(pip).limits.min + fp * spec.joint(pip).limits.width();
                    q = detail::dls_descent(spec, d, target, clamp_in(q), opt, clamp_in, residual_of, err);
                    if (err < best_err) {
                        best = q;
                        best_err = err;
                    }
                    if (best_err <= opt.tolerance) return best;
                }
    }
    if (best_err > opt.tolerance)
        throw UnreachableError(std::string(digit_name(d)) + " IK did not converge", best_err);
    return best;
}

}  // namespace craft
