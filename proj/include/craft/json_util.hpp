#pragma once

#include <craft/errors.hpp>

#include <Eigen/Geometry>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace craft {

using json = nlohmann::json;

namespace io {

inline json pose_to_json(const Eigen::Isometry3d& t) {
    const Eigen::Quaterniond q(t.linear());
    const Eigen::Vector3d p = t.translation();
    return {{"position", {p.x(), p.y(), p.z()}}, {"quaternion", {q.w(), q.x(), q.y(), q.z()}}};
}

inline Eigen::Isometry3d pose_from_json(const json& j) {
    const auto& p = j.at("position");
    const auto& q = j.at("quaternion");
    Eigen::Quaterniond quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                            q.at(3).get<double>());
    if (!(quat.norm() > 0.0)) throw ConfigError("zero quaternion");
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.linear() = quat.normalized().toRotationMatrix();
    t.translation() = Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    return t;
}

inline json vec3_to_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

inline Eigen::Vector3d vec3_from_json(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

inline json parse(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw LoadError(what + ": " + e.what());
    }
}

// FNV-1a, used to fingerprint spec and profile documents in session headers.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fingerprint(const json& doc) { return hex64(fnv1a64(doc.dump())); }

}  // namespace io
}  // namespace craft
