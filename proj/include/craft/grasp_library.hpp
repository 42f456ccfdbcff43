#pragma once

// Named joint-angle presets for the 33 Feix taxonomy grasps, each carrying
// the geometric predicates that make it that grasp. Angles are authored repo
// data (tools/author_grasps) and checked through forward kinematics.

#include <craft/errors.hpp>
#include <craft/hand_model.hpp>
#include <craft/hand_spec_io.hpp>
#include <craft/json_util.hpp>
#include <craft/sim_engine.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

namespace craft {

enum class GraspCategory { Power, Precision, Intermediate };

inline std::string_view category_name(GraspCategory c) {
    switch (c) {
        case GraspCategory::Power: return "power";
        case GraspCategory::Precision: return "precision";
        case GraspCategory::Intermediate: return "intermediate";
    }
    return "?";
}

inline GraspCategory parse_category(const std::string& s) {
    if (s == "power") return GraspCategory::Power;
    if (s == "precision") return GraspCategory::Precision;
    if (s == "intermediate") return GraspCategory::Intermediate;
    throw ConfigError("unknown grasp category '" + s + "'");
}

// Feix et al. canonical order.
inline constexpr std::array<std::string_view, 33> kFeixGrasps = {
    "Large Diameter",   "Small Diameter",   "Medium Wrap",         "Adducted Thumb",     "Light Tool",
    "Prismatic 4 Finger", "Prismatic 3 Finger", "Prismatic 2 Finger", "Palmar Pinch",     "Power Disk",
    "Power Sphere",     "Precision Disk",   "Precision Sphere",    "Tripod",             "Fixed Hook",
    "Lateral",          "Index Finger Extension", "Extension Type", "Distal Type",       "Writing Tripod",
    "Tripod Variation", "Parallel Extension", "Adduction Grip",    "Tip Pinch",          "Lateral Tripod",
    "Sphere 4 Finger",  "Quadpod",          "Sphere 3 Finger",     "Stick",              "Palmar",
    "Ring",             "Ventral",          "Inferior Pincer"};

enum class PredicateKind {
    Pinch,              // two fingertips closer than tolerance
    PalmSide,           // fingertips on the palm side (z > tolerance) of the palm plane
    LateralOpposition,  // first digit's tip within tolerance of a link of the second digit
    AdductionGap,       // same link of two digits closer than tolerance
    FlatPlane,          // fingertip z spread: all within tolerance of one plane z = c
    Extended,           // base-to-tip distance at least tolerance * digit length
    Sphere,             // fingertips on a ball of given radius with spanning contact normals
};

inline std::string_view predicate_name(PredicateKind k) {
    switch (k) {
        case PredicateKind::Pinch: return "pinch";
        case PredicateKind::PalmSide: return "palm_side";
        case PredicateKind::LateralOpposition: return "lateral_opposition";
        case PredicateKind::AdductionGap: return "adduction_gap";
        case PredicateKind::FlatPlane: return "flat_plane";
        case PredicateKind::Extended: return "extended";
        case PredicateKind::Sphere: return "sphere";
    }
    return "?";
}

inline PredicateKind parse_predicate_kind(const std::string& s) {
    for (auto k : {PredicateKind::Pinch, PredicateKind::PalmSide, PredicateKind::LateralOpposition,
                   PredicateKind::AdductionGap, PredicateKind::FlatPlane, PredicateKind::Extended,
                   PredicateKind::Sphere})
        if (predicate_name(k) == s) return k;
    throw ConfigError("unknown predicate kind '" + s + "'");
}

inline constexpr double kPinchEpsilon = 0.005;
inline constexpr double kAdductionGap = 0.008;
inline constexpr double kFlatPlaneTolerance = 0.003;

struct GraspPredicate {
    PredicateKind kind{PredicateKind::Pinch};
    std::vector<Digit> digits;
    Segment segment{Segment::Distal};  // LateralOpposition, AdductionGap
    double tolerance{kPinchEpsilon};   // m, or a length ratio for Extended
    Eigen::Vector3d center = Eigen::Vector3d::Zero();  // Sphere: nominal object center, palm frame
    double radius{0.0};                                // Sphere
};

struct GraspPreset {
    std::string name;
    GraspCategory category{GraspCategory::Power};
    JointAngles q;
    std::vector<GraspPredicate> predicates;
};

struct PredicateResult {
    std::string description;
    double residual{0.0};  // negative passes
    bool passed{false};
};

struct PresetValidation {
    std::string name;
    bool passed{false};
    std::vector<PredicateResult> results;
};

namespace grasp_detail {

inline Eigen::Vector3d tip(const HandPose& p, Digit d) { return p[static_cast<std::size_t>(d)].tip.translation(); }

inline std::pair<Eigen::Vector3d, Eigen::Vector3d> segment_points(const HandPose& p, Digit d, Segment s) {
    const auto& dp = p[static_cast<std::size_t>(d)];
    switch (s) {
        case Segment::Metacarpal: return {Eigen::Vector3d::Zero(), dp.base.translation()};
        case Segment::Proximal: return {dp.mcp.translation(), dp.pip.translation()};
        case Segment::Middle: return {dp.pip.translation(), dp.dip.translation()};
        case Segment::Distal: return {dp.dip.translation(), dp.tip.translation()};
    }
    return {};
}

inline double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (a + t * ab - p).norm();
}

// Closest distance between segments [p1, q1] and [p2, q2].
inline double segment_segment_distance(const Eigen::Vector3d& p1, const Eigen::Vector3d& q1, const Eigen::Vector3d& p2,
                                       const Eigen::Vector3d& q2) {
    const Eigen::Vector3d d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
    const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
    double s = 0.0, t = 0.0;
    if (a <= 1e-18 && e <= 1e-18) return r.norm();
    if (a <= 1e-18) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = d1.dot(r);
        if (e <= 1e-18) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = d1.dot(d2), denom = a * e - b * b;
            s = denom > 1e-18 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

// Center of the radius-r sphere that best fits the points (least squares on
// distance-to-surface), by Gauss-Newton from `guess`.
inline Eigen::Vector3d fit_sphere_center(const std::vector<Eigen::Vector3d>& pts, double r, Eigen::Vector3d guess) {
    for (int it = 0; it < 50; ++it) {
        Eigen::MatrixXd jac(pts.size(), 3);
        Eigen::VectorXd res(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const Eigen::Vector3d v = guess - pts[i];
            const double n = std::max(v.norm(), 1e-12);
            res(static_cast<Eigen::Index>(i)) = n - r;
            jac.row(static_cast<Eigen::Index>(i)) = (v / n).transpose();
        }
        const Eigen::Matrix3d jtj = jac.transpose() * jac + 1e-12 * Eigen::Matrix3d::Identity();
        const Eigen::Vector3d step = jtj.ldlt().solve(jac.transpose() * res);
        guess -= step;
        if (step.norm() < 1e-12) break;
    }
    return guess;
}

inline std::string digit_list(const std::vector<Digit>& ds) {
    std::string out;
    for (Digit d : ds) out += (out.empty() ? "" : ",") + std::string(digit_name(d));
    return out;
}

inline void require_digits(const GraspPredicate& p, std::size_t n, bool exact) {
    if (exact ? p.digits.size() != n : p.digits.size() < n)
        throw ConfigError(std::string(predicate_name(p.kind)) + " predicate needs " + (exact ? "" : "at least ") +
                          std::to_string(n) + " digits");
}

}  // namespace grasp_detail

inline void validate_predicate(const GraspPredicate& p) {
    using grasp_detail::require_digits;
    switch (p.kind) {
        case PredicateKind::Pinch:
        case PredicateKind::LateralOpposition:
        case PredicateKind::AdductionGap: require_digits(p, 2, true); break;
        case PredicateKind::FlatPlane: require_digits(p, 2, false); break;
        case PredicateKind::PalmSide:
        case PredicateKind::Extended: require_digits(p, 1, false); break;
        case PredicateKind::Sphere:
            require_digits(p, 3, false);
            if (!(p.radius > 0.0)) throw ConfigError("sphere predicate needs a positive radius");
            break;
    }
    if (!std::isfinite(p.tolerance) || (p.kind != PredicateKind::PalmSide && !(p.tolerance > 0.0)))
        throw ConfigError(std::string(predicate_name(p.kind)) + " predicate needs a positive tolerance");
    if (p.kind == PredicateKind::Extended && p.tolerance > 1.0)
        throw ConfigError("extended ratio must be <= 1");
}

// `scale` relaxes every tolerance: distances are multiplied by it, the
// Extended ratio gives up `scale` times its slack from 1, PalmSide margins
// shrink by it.
inline PredicateResult evaluate_predicate(const HandSpec& spec, const HandPose& pose,
                                          const GraspPredicate& p, double scale = 1.0) {
    using namespace grasp_detail;
    PredicateResult r;
    const std::string kind(predicate_name(p.kind));
    switch (p.kind) {
        case PredicateKind::Pinch: {
            const double dist = (tip(pose, p.digits[0]) - tip(pose, p.digits[1])).norm();
            r.residual = dist - p.tolerance * scale;
            r.description = kind + "(" + digit_list(p.digits) + ")";
            break;
        }
        case PredicateKind::PalmSide: {
            double lowest = std::numeric_limits<double>::infinity();
            for (Digit d : p.digits) lowest = std::min(lowest, tip(pose, d).z());
            r.residual = p.tolerance / scale - lowest;
            r.description = kind + "(" + digit_list(p.digits) + ")";
            break;
        }
        case PredicateKind::LateralOpposition: {
            const auto [a, b] = segment_points(pose, p.digits[1], p.segment);
            r.residual = point_segment_distance(tip(pose, p.digits[0]), a, b) - p.tolerance * scale;
            r.description = kind + "(" + digit_list(p.digits) + "," + detail::segment_name(p.segment) + ")";
            break;
        }
        case PredicateKind::AdductionGap: {
            const auto [a1, b1] = segment_points(pose, p.digits[0], p.segment);
            const auto [a2, b2] = segment_points(pose, p.digits[1], p.segment);
            r.residual = segment_segment_distance(a1, b1, a2, b2) - p.tolerance * scale;
            r.description = kind + "(" + digit_list(p.digits) + "," + detail::segment_name(p.segment) + ")";
            break;
        }
        case PredicateKind::FlatPlane: {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (Digit d : p.digits) {
                lo = std::min(lo, tip(pose, d).z());
                hi = std::max(hi, tip(pose, d).z());
            }
            r.residual = (hi - lo) / 2.0 - p.tolerance * scale;
            r.description = kind + "(" + digit_list(p.digits) + ")";
            break;
        }
        case PredicateKind::Extended: {
            const double ratio = 1.0 - (1.0 - p.tolerance) * scale;
            double worst = -std::numeric_limits<double>::infinity();
            for (Digit d : p.digits) {
                const auto& dp = pose[static_cast<std::size_t>(d)];
                const double reach = (dp.tip.translation() - dp.base.translation()).norm();
                worst = std::max(worst, ratio * spec.digit_length(d) - reach);
            }
            r.residual = worst;
            r.description = kind + "(" + digit_list(p.digits) + ")";
            break;
        }
        case PredicateKind::Sphere: {
            // The ball keeps its radius but re-seats: center fitted to the tips.
            std::vector<Eigen::Vector3d> tips;
            for (Digit d : p.digits) tips.push_back(tip(pose, d));
            const Eigen::Vector3d c = fit_sphere_center(tips, p.radius, p.center);
            double worst = -std::numeric_limits<double>::infinity();
            std::vector<double> angles;
            const Eigen::Matrix3d palm = spec.palm_frame.linear();
            for (const auto& t : tips) {
                worst = std::max(worst, std::abs((t - c).norm() - p.radius) - p.tolerance * scale);
                const Eigen::Vector3d local = palm.transpose() * (t - c);
                angles.push_back(std::atan2(local.y(), local.x()));
            }
            // Normals of the required digits must positively span the palm plane.
            r.residual = std::max(worst, max_angular_gap(angles) - std::numbers::pi);
            r.description = kind + "(" + digit_list(p.digits) + ")";
            break;
        }
    }
    r.passed = r.residual < 0.0;
    return r;
}

inline PresetValidation validate_preset(const HandSpec& spec, const GraspPreset& preset, double scale = 1.0) {
    PresetValidation v;
    v.name = preset.name;
    const auto pose = forward_kinematics(spec, preset.q);
    v.passed = !preset.predicates.empty();
    for (const auto& p : preset.predicates) {
        v.results.push_back(evaluate_predicate(spec, pose, p, scale));
        v.passed = v.passed && v.results.back().passed;
    }
    return v;
}

// Copy of `spec` with every phalanx (not the palm) scaled by `factor`.
inline HandSpec scale_phalanges(const HandSpec& spec, double factor) {
    HandSpec out = spec;
    for (auto& l : out.links)
        if (l.segment != Segment::Metacarpal) l.length *= factor;
    out.finger_length *= factor;
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Preset file

inline constexpr int kGraspFileVersion = 1;

namespace io {

inline json predicate_to_json(const GraspPredicate& p) {
    json digits = json::array();
    for (Digit d : p.digits) digits.push_back(digit_name(d));
    json j = {{"kind", predicate_name(p.kind)}, {"digits", digits}, {"tolerance", p.tolerance}};
    if (p.kind == PredicateKind::LateralOpposition || p.kind == PredicateKind::AdductionGap)
        j["segment"] = detail::segment_name(p.segment);
    if (p.kind == PredicateKind::Sphere) {
        j["center"] = vec3_to_json(p.center);
        j["radius"] = p.radius;
    }
    return j;
}

inline GraspPredicate predicate_from_json(const json& j) {
    GraspPredicate p;
    p.kind = parse_predicate_kind(j.at("kind").get<std::string>());
    for (const auto& d : j.at("digits")) {
        const auto digit = parse_digit(d.get<std::string>());
        if (!digit) throw ConfigError("unknown digit '" + d.get<std::string>() + "'");
        p.digits.push_back(*digit);
    }
    p.tolerance = j.at("tolerance").get<double>();
    if (j.contains("segment")) p.segment = parse_segment(j.at("segment").get<std::string>());
    if (j.contains("center")) p.center = vec3_from_json(j.at("center"));
    p.radius = j.value("radius", 0.0);
    validate_predicate(p);
    return p;
}

inline json preset_to_json(const GraspPreset& g) {
    json angles = json::object();
    for (std::size_t i = 0; i < kJointCount; ++i) angles[joint_name(JointId::from_index(i))] = g.q.values()[i];
    json preds = json::array();
    for (const auto& p : g.predicates) preds.push_back(predicate_to_json(p));
    return {{"name", g.name}, {"category", category_name(g.category)}, {"angles", angles}, {"predicates", preds}};
}

inline GraspPreset preset_from_json(const json& j, const HandSpec& spec) {
    GraspPreset g;
    g.name = j.at("name").get<std::string>();
    try {
        g.category = parse_category(j.at("category").get<std::string>());
        const auto& angles = j.at("angles");
        if (angles.size() != kJointCount) throw ConfigError("needs all " + std::to_string(kJointCount) + " angles");
        for (const auto& [name, value] : angles.items()) {
            const auto id = parse_joint(name);
            if (!id) throw ConfigError("unknown joint '" + name + "'");
            g.q[*id] = value.get<double>();
        }
        for (const auto& p : j.at("predicates")) g.predicates.push_back(predicate_from_json(p));
        if (g.predicates.empty()) throw ConfigError("needs at least one validity predicate");
        check_pose(spec, g.q);
    } catch (const Error& e) {
        throw LoadError("grasp '" + g.name + "': " + e.what());
    } catch (const json::exception& e) {
        throw LoadError("grasp '" + g.name + "': " + e.what());
    }
    return g;
}

inline json presets_to_json(const std::vector<GraspPreset>& presets) {
    json arr = json::array();
    for (const auto& g : presets) arr.push_back(preset_to_json(g));
    return {{"format", "craft-grasps"}, {"version", kGraspFileVersion}, {"taxonomy", "feix-33"}, {"grasps", arr}};
}

// All 33 Feix names exactly once; anything else is a load error naming the
// missing, extra or duplicated grasps.
inline std::vector<GraspPreset> presets_from_json(const json& j, const HandSpec& spec) {
    if (j.value("format", std::string()) != "craft-grasps") throw LoadError("not a craft-grasps file");
    if (j.value("version", 0) != kGraspFileVersion)
        throw LoadError("unsupported craft-grasps version " + std::to_string(j.value("version", 0)));
    std::vector<GraspPreset> out;
    std::set<std::string> seen;
    std::vector<std::string> duplicates, extra, missing;
    const std::set<std::string> canonical(kFeixGrasps.begin(), kFeixGrasps.end());
    for (const auto& g : j.at("grasps")) {
        auto preset = preset_from_json(g, spec);
        if (!seen.insert(preset.name).second) duplicates.push_back(preset.name);
        if (!canonical.count(preset.name)) extra.push_back(preset.name);
        out.push_back(std::move(preset));
    }
    for (auto name : kFeixGrasps)
        if (!seen.count(std::string(name))) missing.push_back(std::string(name));
    if (!duplicates.empty() || !extra.empty() || !missing.empty()) {
        std::vector<std::string> names;
        names.insert(names.end(), missing.begin(), missing.end());
        names.insert(names.end(), extra.begin(), extra.end());
        names.insert(names.end(), duplicates.begin(), duplicates.end());
        throw LoadError("grasp file must hold the 33 Feix grasps exactly once (missing " +
                            std::to_string(missing.size()) + ", extra " + std::to_string(extra.size()) +
                            ", duplicate " + std::to_string(duplicates.size()) + ")",
                        names);
    }
    std::sort(out.begin(), out.end(), [](const GraspPreset& a, const GraspPreset& b) {
        auto rank = [](const std::string& n) { return std::find(kFeixGrasps.begin(), kFeixGrasps.end(), n) - kFeixGrasps.begin(); };
        return rank(a.name) < rank(b.name);
    });
    return out;
}

inline std::vector<GraspPreset> load_presets(const std::string& path, const HandSpec& spec) {
    return presets_from_json(parse(read_file(path), path), spec);
}

inline void save_presets(const std::string& path, const std::vector<GraspPreset>& presets) {
    write_file(path, presets_to_json(presets).dump(2) + "\n");
}

}  // namespace io

class GraspLibrary {
public:
    explicit GraspLibrary(std::vector<GraspPreset> presets) : presets_(std::move(presets)) {}

    const std::vector<GraspPreset>& presets() const { return presets_; }

    const GraspPreset* find(std::string_view name) const {
        for (const auto& g : presets_)
            if (g.name == name) return &g;
        return nullptr;
    }

    const GraspPreset& at(std::string_view name) const {
        if (const auto* g = find(name)) return *g;
        throw ConfigError("unknown grasp '" + std::string(name) + "'");
    }

private:
    std::vector<GraspPreset> presets_;
};

}  // namespace craft
