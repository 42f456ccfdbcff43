#pragma once

// Hand-spec file: one JSON document holding the kinematic description and the
// tendon routing. Schema (version 1) is documented in docs/hand_spec.md.

#include <craft/hand_model.hpp>
#include <craft/json_util.hpp>
#include <craft/tendon_transmission.hpp>

#include <cmath>
#include <string>

namespace craft {

inline constexpr int kHandSpecVersion = 1;

struct HandDescription {
    HandSpec spec;
    Transmission transmission;
};

inline HandDescription default_hand_description() {
    auto spec = default_hand_spec();
    auto tr = default_transmission(spec);
    return {std::move(spec), std::move(tr)};
}

namespace io {

inline std::string segment_string(Segment s) { return detail::segment_name(s); }

inline Segment parse_segment(const std::string& s) {
    for (auto seg : {Segment::Metacarpal, Segment::Proximal, Segment::Middle, Segment::Distal})
        if (detail::segment_name(seg) == s) return seg;
    throw ConfigError("unknown segment '" + s + "'");
}

inline JointId joint_from_json(const json& j) {
    const auto name = j.get<std::string>();
    const auto id = parse_joint(name);
    if (!id) throw ConfigError("unknown joint '" + name + "'");
    return *id;
}

inline Digit digit_from_json(const json& j) {
    const auto name = j.get<std::string>();
    const auto d = parse_digit(name);
    if (!d) throw ConfigError("unknown digit '" + name + "'");
    return *d;
}

inline json arms_to_json(const std::map<JointId, double>& arms) {
    json out = json::object();
    for (const auto& [id, a] : arms) out[joint_name(id)] = a;
    return out;
}

inline std::map<JointId, double> arms_from_json(const json& j) {
    std::map<JointId, double> out;
    for (const auto& [name, a] : j.items()) {
        const auto id = parse_joint(name);
        if (!id) throw ConfigError("unknown joint '" + name + "'");
        out[*id] = a.get<double>();
    }
    return out;
}

inline json transmission_to_json(const Transmission& tr) {
    json routes = json::array();
    for (const auto& r : tr.routes()) {
        json jr = {{"id", r.id},
                   {"digit", digit_name(r.digit)},
                   {"function", route_function_name(r.function)},
                   {"motor", r.motor.value},
                   {"moment_arms", arms_to_json(r.moment_arms)},
                   {"wrap_angle_total", r.wrap_angle_total},
                   {"friction_mu", r.friction_mu},
                   {"spool_radius", r.spool_radius},
                   {"slack_offset", r.slack_offset}};
        if (r.antagonist_moment_arms) jr["antagonist_moment_arms"] = arms_to_json(*r.antagonist_moment_arms);
        routes.push_back(std::move(jr));
    }
    json springs = json::array();
    for (const auto& s : tr.springs())
        springs.push_back({{"digit", digit_name(s.digit)}, {"rest_angle", s.rest_angle}, {"stiffness", s.stiffness}});
    return {{"ratchet_step", tr.ratchet_step()}, {"routes", routes}, {"springs", springs}};
}

inline Transmission transmission_from_json(const json& j) {
    std::vector<TendonRoute> routes;
    for (const auto& jr : j.at("routes")) {
        TendonRoute r;
        r.id = jr.at("id").get<std::string>();
        r.digit = digit_from_json(jr.at("digit"));
        const auto fname = jr.at("function").get<std::string>();
        const auto f = parse_route_function(fname);
        if (!f) throw ConfigError("unknown route function '" + fname + "'");
        r.function = *f;
        r.motor = MotorId{jr.at("motor").get<int>()};
        r.moment_arms = arms_from_json(jr.at("moment_arms"));
        if (jr.contains("antagonist_moment_arms"))
            r.antagonist_moment_arms = arms_from_json(jr.at("antagonist_moment_arms"));
        r.wrap_angle_total = jr.value("wrap_angle_total", r.wrap_angle_total);
        r.friction_mu = jr.value("friction_mu", r.friction_mu);
        r.spool_radius = jr.value("spool_radius", r.spool_radius);
        r.slack_offset = jr.value("slack_offset", r.slack_offset);
        routes.push_back(std::move(r));
    }
    std::vector<ReturnSpring> springs;
    for (const auto& js : j.value("springs", json::array()))
        springs.push_back({digit_from_json(js.at("digit")), js.value("rest_angle", 0.0), js.at("stiffness").get<double>()});
    return Transmission(std::move(routes), std::move(springs),
                        j.value("ratchet_step", 5.0 * std::numbers::pi / 180.0));
}

inline json hand_spec_to_json(const HandSpec& spec) {
    json joints = json::array();
    for (const auto& jspec : spec.joints) {
        json jj = {{"id", joint_name(jspec.id)},
                   {"kind", jspec.kind == JointKind::RollingContact ? "rolling_contact" : "revolute"},
                   {"limits", {jspec.limits.min, jspec.limits.max}}};
        if (jspec.kind == JointKind::RollingContact) jj["rolling_radius"] = jspec.rolling_radius;
        if (jspec.leader) jj["follows"] = joint_name(*jspec.leader);
        joints.push_back(std::move(jj));
    }
    json links = json::array();
    for (const auto& l : spec.links)
        links.push_back({{"digit", digit_name(l.digit)},
                         {"segment", segment_string(l.segment)},
                         {"length", l.length},
                         {"parent", l.parent_joint ? joint_name(*l.parent_joint) : std::string("palm")}});
    json offsets = json::object();
    for (std::size_t i = 0; i < 4; ++i) offsets[std::string(digit_name(kDigits[i + 1]))] = spec.finger_lateral_offsets[i];
    return {{"mass", spec.mass},
            {"palm_length", spec.palm_length},
            {"finger_length", spec.finger_length},
            {"palm_frame", pose_to_json(spec.palm_frame)},
            {"thumb_mount", pose_to_json(spec.thumb_mount)},
            {"finger_lateral_offsets", offsets},
            {"joints", joints},
            {"links", links}};
}

inline HandSpec hand_spec_from_json(const json& j) {
    HandSpec spec;
    spec.mass = j.value("mass", spec.mass);
    spec.palm_length = j.value("palm_length", spec.palm_length);
    spec.finger_length = j.value("finger_length", spec.finger_length);
    if (j.contains("palm_frame")) spec.palm_frame = pose_from_json(j.at("palm_frame"));
    spec.thumb_mount = pose_from_json(j.at("thumb_mount"));
    const auto& offsets = j.at("finger_lateral_offsets");
    for (std::size_t i = 0; i < 4; ++i)
        spec.finger_lateral_offsets[i] = offsets.at(std::string(digit_name(kDigits[i + 1]))).get<double>();

    std::array<bool, kJointCount> seen{};
    for (const auto& jj : j.at("joints")) {
        JointSpec js;
        js.id = joint_from_json(jj.at("id"));
        if (seen[js.id.index()]) throw ConfigError("duplicate joint " + joint_name(js.id));
        seen[js.id.index()] = true;
        const auto kind = jj.at("kind").get<std::string>();
        if (kind == "rolling_contact") {
            js.kind = JointKind::RollingContact;
            js.rolling_radius = jj.at("rolling_radius").get<double>();
        } else if (kind != "revolute") {
            throw ConfigError("unknown joint kind '" + kind + "'");
        }
        js.limits = {jj.at("limits").at(0).get<double>(), jj.at("limits").at(1).get<double>()};
        if (jj.contains("follows")) js.leader = joint_from_json(jj.at("follows"));
        spec.joints[js.id.index()] = js;
    }
    for (std::size_t i = 0; i < kJointCount; ++i)
        if (!seen[i]) throw ConfigError("missing joint " + joint_name(JointId::from_index(i)));

    for (const auto& jl : j.at("links")) {
        LinkSpec l;
        l.digit = digit_from_json(jl.at("digit"));
        l.segment = parse_segment(jl.at("segment").get<std::string>());
        l.length = jl.at("length").get<double>();
        const auto parent = jl.value("parent", std::string("palm"));
        if (parent != "palm") {
            const auto id = parse_joint(parent);
            if (!id) throw ConfigError("unknown parent joint '" + parent + "'");
            l.parent_joint = *id;
        }
        spec.links.push_back(l);
    }
    spec.validate();
    for (Digit d : kDigits) {
        if (d == Digit::Thumb) continue;
        if (std::abs(spec.digit_length(d) - spec.finger_length) > 1e-9)
            throw ConfigError(std::string(digit_name(d)) + " phalanges do not sum to finger_length");
        if (std::abs(spec.link_length(d, Segment::Metacarpal) - spec.palm_length) > 1e-9)
            throw ConfigError(std::string(digit_name(d)) + " metacarpal does not match palm_length");
    }
    return spec;
}

inline json hand_description_to_json(const HandDescription& h) {
    json out = {{"format", "craft-hand-spec"}, {"version", kHandSpecVersion}};
    out.update(hand_spec_to_json(h.spec));
    out["transmission"] = transmission_to_json(h.transmission);
    return out;
}

inline HandDescription hand_description_from_json(const json& j) {
    if (j.value("format", std::string()) != "craft-hand-spec")
        throw LoadError("not a hand-spec document");
    if (j.value("version", 0) != kHandSpecVersion)
        throw LoadError("unsupported hand-spec version " + std::to_string(j.value("version", 0)));
    auto spec = hand_spec_from_json(j);
    auto tr = transmission_from_json(j.at("transmission"));
    return {std::move(spec), std::move(tr)};
}

inline HandDescription load_hand_description(const std::string& path) {
    try {
        return hand_description_from_json(parse(read_file(path), path));
    } catch (const json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
}

inline void save_hand_description(const std::string& path, const HandDescription& h) {
    write_file(path, hand_description_to_json(h).dump(2) + "\n");
}

}  // namespace io
}  // namespace craft
