#pragma once

// Quasi-static hand simulator and the structural test harnesses.
//
// Each step: motors slew toward their goals (or sag when the required holding
// torque exceeds what the current clamp allows), the spool angles map to a
// kinematic pose through the transmission, every active joint then deflects
// by tau_ext / k (tau_ext = J^T F from the fingertip loads, k the TPU
// stiffness), the PIP/DIP deflections are projected back onto the coupling
// and the result is clamped to the joint limits. Rolling joints are treated as the
// equivalent revolute-plus-equality-constraint pair; there is no inertia.

#include <craft/errors.hpp>
#include <craft/hand_model.hpp>
#include <craft/json_util.hpp>
#include <craft/motor_bus.hpp>
#include <craft/tendon_transmission.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace craft {

using TipForces = std::array<Eigen::Vector3d, kDigitCount>;

inline TipForces zero_tip_forces() {
    TipForces f;
    for (auto& v : f) v.setZero();
    return f;
}

enum class DriveKind { Tendon, DirectDrive };

inline std::string_view drive_name(DriveKind d) { return d == DriveKind::Tendon ? "tendon" : "direct"; }

struct SimParams {
    double joint_stiffness{2.0};      // N*m/rad, may be +inf
    double snap_fit_threshold{0.8};   // N*m at either MCP axis
    bus::MotorParams motor;
};

struct SimModel {
    HandSpec spec;
    Transmission transmission;
    SimParams params;
};

struct SimFlags {
    bool saturation{false};
    bool slack{false};
    bool overload{false};
    std::array<bool, kDigitCount> snap_fit_fault{};

    bool any_snap_fit() const { return std::any_of(snap_fit_fault.begin(), snap_fit_fault.end(), [](bool b) { return b; }); }
};

struct SimState {
    JointAngles q;
    std::vector<bus::VirtualMotor> motors;  // index = motor id - 1
    TipForces tip_forces = zero_tip_forces();
    double t{0.0};
    SimFlags flags;
    std::array<Eigen::Vector2d, kDigitCount> frozen_mcp{};  // (abd, flex) held after a snap-fit fault

    MotorAngles spools() const {
        MotorAngles s{};
        for (std::size_t i = 0; i < kActiveCount; ++i) s[i] = motors[i].present_position;
        return s;
    }
};

// Direct-drive reference: one motor per active DoF with unit mechanical
// advantage (arm = spool radius), no capstan friction and no return springs.
inline Transmission direct_drive_transmission(const HandSpec& spec, double spool_radius = 0.005) {
    (void)spec;
    std::vector<TendonRoute> routes;
    for (Digit d : kDigits) {
        for (auto f : {RouteFunction::McpAbdAdd, RouteFunction::McpFlexExt, RouteFunction::PipDipFlex}) {
            TendonRoute r;
            r.id = std::string(digit_name(d)) + "." + std::string(route_function_name(f)) + ".direct";
            r.digit = d;
            r.function = f;
            r.motor = default_motor(d, f);
            r.spool_radius = spool_radius;
            r.friction_mu = 0.0;
            r.wrap_angle_total = 0.0;
            switch (f) {
                case RouteFunction::McpAbdAdd:
                    r.moment_arms = {{JointId{d, Slot::McpAbd}, spool_radius}};
                    r.antagonist_moment_arms = std::map<JointId, double>{{JointId{d, Slot::McpAbd}, -spool_radius}};
                    break;
                case RouteFunction::McpFlexExt:
                    r.moment_arms = {{JointId{d, Slot::McpFlex}, spool_radius}};
                    r.antagonist_moment_arms = std::map<JointId, double>{{JointId{d, Slot::McpFlex}, -spool_radius}};
                    break;
                case RouteFunction::PipDipFlex:
                    r.moment_arms = {{JointId{d, Slot::Pip}, spool_radius / 2}, {JointId{d, Slot::Dip}, spool_radius / 2}};
                    break;
            }
            routes.push_back(std::move(r));
        }
    }
    return Transmission(std::move(routes), {});
}

// Spool advantage of a route: summed |moment arm| over the spool radius.
inline double spool_advantage(const TendonRoute& r) {
    double arms = 0.0;
    for (const auto& [id, a] : r.moment_arms) arms += std::abs(a);
    return arms / r.spool_radius;
}

// Same routing with every spool radius resized to give `advantage`.
inline Transmission with_spool_advantage(const Transmission& tr, double advantage) {
    if (!(advantage > 0.0)) throw DomainError("spool advantage must be positive");
    std::vector<TendonRoute> routes = tr.routes();
    for (auto& r : routes) {
        double arms = 0.0;
        for (const auto& [id, a] : r.moment_arms) arms += std::abs(a);
        r.spool_radius = arms / advantage;
    }
    return Transmission(std::move(routes), tr.springs(), tr.ratchet_step());
}

inline SimState initial_state(const SimModel& model, const JointAngles& q0) {
    SimState s;
    s.q = project_coupling(q0);
    check_pose(model.spec, s.q);
    const auto spools = joint_to_motor(model.transmission, s.q);
    s.motors.resize(kActiveCount);
    for (std::size_t i = 0; i < kActiveCount; ++i) {
        auto& m = s.motors[i];
        m.id = static_cast<std::uint8_t>(i + 1);
        m.params = model.params.motor;
        m.goal_position = m.present_position = spools[i];
    }
    return s;
}

namespace detail {

// Motor torques each motor must supply at pose q. Friction assists a motor
// that holds or pays out line and opposes one that winds in against tension.
inline MotorAngles required_motor_torques(const SimModel& model, const JointAngles& q, const TipForces& forces,
                                          const std::vector<bus::VirtualMotor>& motors, bool& slack) {
    const auto assist = static_hold_torque(model.spec, model.transmission, q, forces, true);
    const auto oppose = static_hold_torque(model.spec, model.transmission, q, forces, false);
    MotorAngles out{};
    slack = false;
    for (std::size_t i = 0; i < kActiveCount; ++i) {
        const double travel = motors[i].goal_position - motors[i].present_position;
        const bool winding_in = travel != 0.0 && (travel > 0.0) == (assist.motor_torque[i] > 0.0);
        out[i] = winding_in ? oppose.motor_torque[i] : assist.motor_torque[i];
        slack = slack || assist.slack[i];
    }
    return out;
}

inline double deflection(double torque, double stiffness) {
    if (std::isinf(stiffness)) return 0.0;
    return torque / stiffness;
}

// Kinematic pose from spools plus joint compliance, coupled and clamped.
inline JointAngles compliant_pose(const SimModel& model, const MotorAngles& spools, const TipForces& forces,
                                  bool& saturated, std::array<Eigen::Vector2d, kDigitCount>* mcp_torque = nullptr) {
    const auto sol = motor_to_joint(model.spec, model.transmission, spools);
    saturated = sol.saturated;
    JointAngles q = sol.q;
    for (Digit d : kDigits) {
        const auto di = static_cast<std::size_t>(d);
        const Eigen::Vector4d tau = tip_force_joint_torques(model.spec, d, sol.q, forces[di]);
        if (mcp_torque) (*mcp_torque)[di] = Eigen::Vector2d(tau(0), tau(1));
        q[{d, Slot::McpAbd}] += deflection(tau(0), model.params.joint_stiffness);
        q[{d, Slot::McpFlex}] += deflection(tau(1), model.params.joint_stiffness);
        // PIP and DIP each deflect tau/k; the mean is that pair projected back
        // onto the coupling, i.e. the coupled coordinate with stiffness 2k.
        q[{d, Slot::Pip}] += deflection(tau(2) + tau(3), 2.0 * model.params.joint_stiffness);
    }
    for (Digit d : kDigits) {
        for (Slot s : {Slot::McpAbd, Slot::McpFlex}) {
            const double c = model.spec.joint({d, s}).limits.clamp(q[{d, s}]);
            saturated = saturated || c != q[{d, s}];
            q[{d, s}] = c;
        }
        const auto& lp = model.spec.joint({d, Slot::Pip}).limits;
        const auto& ld = model.spec.joint({d, Slot::Dip}).limits;
        const Limits both{std::max(lp.min, ld.min), std::min(lp.max, ld.max)};
        const double c = both.clamp(q[{d, Slot::Pip}]);
        saturated = saturated || c != q[{d, Slot::Pip}];
        q[{d, Slot::Pip}] = c;
    }
    return project_coupling(q);
}

}  // namespace detail

// Pure: same inputs give bit-identical output.
inline SimState step(const SimModel& model, const SimState& state, const MotorAngles& commands, double dt) {
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    SimState s = state;
    for (std::size_t i = 0; i < kActiveCount; ++i) s.motors[i].goal_position = commands[i];

    bool slack = false;
    const auto torques = detail::required_motor_torques(model, s.q, s.tip_forces, s.motors, slack);
    bool overload = false;
    for (std::size_t i = 0; i < kActiveCount; ++i) {
        s.motors[i].load_torque = torques[i];
        s.motors[i].step(dt);
        overload = overload || s.motors[i].overloaded;
    }

    bool saturated = false;
    std::array<Eigen::Vector2d, kDigitCount> mcp_torque{};
    JointAngles q = detail::compliant_pose(model, s.spools(), s.tip_forces, saturated, &mcp_torque);
    for (Digit d : kDigits) {
        const auto di = static_cast<std::size_t>(d);
        if (!s.flags.snap_fit_fault[di] && mcp_torque[di].cwiseAbs().maxCoeff() > model.params.snap_fit_threshold) {
            s.flags.snap_fit_fault[di] = true;
            s.frozen_mcp[di] = Eigen::Vector2d(state.q[{d, Slot::McpAbd}], state.q[{d, Slot::McpFlex}]);
        }
        if (s.flags.snap_fit_fault[di]) {
            q[{d, Slot::McpAbd}] = s.frozen_mcp[di](0);
            q[{d, Slot::McpFlex}] = s.frozen_mcp[di](1);
        }
    }
    s.q = q;
    s.flags.saturation = saturated;
    s.flags.slack = slack;
    s.flags.overload = overload;
    s.t = state.t + dt;
    return s;
}

inline SimState reset_snap_fit(const SimState& state) {
    SimState s = state;
    s.flags.snap_fit_fault.fill(false);
    return s;
}

// Unit vector along which the fingertip moves when the digit closes (MCP flex
// plus the coupled PIP/DIP); loads along its negative pull the digit open.
inline Eigen::Vector3d closing_direction(const HandSpec& spec, Digit d, const JointAngles& q) {
    const Eigen::Matrix3d jac = digit_active_jacobian(spec, d, q);
    return (jac.col(1) + jac.col(2)).normalized();
}

// ---------------------------------------------------------------------------
// Test reports

inline constexpr int kReportVersion = 1;

struct ReportSample {
    double t{0.0};
    std::string model;  // which configuration produced the sample (holding test)
    double load{0.0};
    std::vector<double> commanded;
    std::vector<double> achieved;
    std::vector<double> currents;  // mA
    std::map<std::string, bool> flags;

    friend bool operator==(const ReportSample&, const ReportSample&) = default;
};

struct TestReport {
    std::string kind;
    json config;
    std::vector<ReportSample> samples;
    json summary;
};

inline json sample_to_json(const ReportSample& s) {
    json j = {{"type", "sample"},     {"t", s.t},           {"load", s.load}, {"commanded", s.commanded},
              {"achieved", s.achieved}, {"currents", s.currents}, {"flags", s.flags}};
    if (!s.model.empty()) j["model"] = s.model;
    return j;
}

inline ReportSample sample_from_json(const json& j) {
    ReportSample s;
    s.t = j.at("t").get<double>();
    s.model = j.value("model", std::string());
    s.load = j.at("load").get<double>();
    s.commanded = j.at("commanded").get<std::vector<double>>();
    s.achieved = j.at("achieved").get<std::vector<double>>();
    s.currents = j.at("currents").get<std::vector<double>>();
    s.flags = j.at("flags").get<std::map<std::string, bool>>();
    return s;
}

namespace report_detail {

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b, std::size_t lo, std::size_t hi) {
    double m = 0.0;
    for (std::size_t i = lo; i < hi && i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool flag(const ReportSample& s, const std::string& name) {
    auto it = s.flags.find(name);
    return it != s.flags.end() && it->second;
}

inline json pullout_summary(const json& config, const std::vector<ReportSample>& samples) {
    const auto digit = parse_digit(config.at("digit").get<std::string>());
    if (!digit) throw ConfigError("unknown digit in pullout config");
    const double limit = config.at("deflection_limit_rad").get<double>();
    const std::size_t lo = static_cast<std::size_t>(*digit) * 4, hi = lo + 4;
    double passed = 0.0, worst = 0.0;
    std::optional<double> failed_at, snap_at;
    for (const auto& s : samples) {
        const double defl = max_abs_diff(s.commanded, s.achieved, lo, hi);
        if (!snap_at && flag(s, "snap_fit_fault")) snap_at = s.load;
        if (failed_at) continue;
        if (defl > limit) {
            failed_at = s.load;
        } else {
            passed = s.load;
            worst = std::max(worst, defl);
        }
    }
    return {{"pullout_force_n", passed},
            {"failed_at_n", failed_at ? json(*failed_at) : json(nullptr)},
            {"reached_cap", !failed_at.has_value()},
            {"max_deflection_before_failure_rad", worst},
            {"snap_fit_fault_at_n", snap_at ? json(*snap_at) : json(nullptr)}};
}

inline json repeatability_summary(const std::vector<ReportSample>& samples) {
    std::vector<double> per_sample;
    double max_err = 0.0;
    std::vector<double> currents;
    for (const auto& s : samples) {
        double sum = 0.0;
        for (std::size_t i = 0; i < s.commanded.size(); ++i) {
            const double e = std::abs(s.commanded[i] - s.achieved[i]);
            sum += e;
            max_err = std::max(max_err, e);
        }
        per_sample.push_back(s.commanded.empty() ? 0.0 : sum / static_cast<double>(s.commanded.size()));
        double c = 0.0;
        for (double x : s.currents) c += std::abs(x);
        currents.push_back(c);
    }
    const std::size_t half = per_sample.size() / 2;
    const std::vector<double> first(per_sample.begin(), per_sample.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<double> second(per_sample.begin() + static_cast<std::ptrdiff_t>(half), per_sample.end());
    const double m1 = mean(first), m2 = mean(second);
    return {{"mean_error_rad", mean(per_sample)},
            {"max_error_rad", max_err},
            {"first_half_mean_rad", m1},
            {"second_half_mean_rad", m2},
            {"half_mean_relative_change", std::max(m1, m2) > 0.0 ? std::abs(m1 - m2) / std::max(m1, m2) : 0.0},
            {"mean_total_current_ma", mean(currents)},
            {"samples", samples.size()}};
}

// Non-decreasing total current followed by a plateau: the last 10% of the
// trace stays within 1% of its final value.
inline bool rise_then_plateau(const std::vector<double>& trace) {
    if (trace.size() < 10) return false;
    for (std::size_t i = 1; i < trace.size(); ++i)
        if (trace[i] < trace[i - 1]) return false;
    const double last = trace.back();
    const std::size_t tail = trace.size() - trace.size() / 10;
    for (std::size_t i = tail; i < trace.size(); ++i)
        if (std::abs(trace[i] - last) > 0.01 * std::abs(last)) return false;
    return true;
}

inline json holding_model_summary(const std::vector<ReportSample>& samples, const std::string& model, double limit_ma) {
    std::vector<double> totals;
    double max_motor = 0.0;
    bool failed = false;
    for (const auto& s : samples) {
        if (s.model != model) continue;
        double total = 0.0;
        for (double c : s.currents) {
            total += std::abs(c);
            max_motor = std::max(max_motor, std::abs(c));
        }
        totals.push_back(total);
        failed = failed || flag(s, "overload");
    }
    const double avg = mean(totals);
    return {{"average_total_current_ma", avg},
            {"average_motor_current_ma", avg / static_cast<double>(kActiveCount)},
            {"max_motor_current_ma", max_motor},
            {"within_clamp", max_motor <= limit_ma},
            {"hold_failed", failed},
            {"rise_then_plateau", rise_then_plateau(totals)},
            {"samples", totals.size()}};
}

inline json holding_summary(const json& config, const std::vector<ReportSample>& samples) {
    const double limit = config.at("motor").at("current_limit_ma").get<double>();
    json out = {{"tendon", holding_model_summary(samples, "tendon", limit)},
                {"direct", holding_model_summary(samples, "direct", limit)}};
    const double t = out["tendon"]["average_total_current_ma"].get<double>();
    const double d = out["direct"]["average_total_current_ma"].get<double>();
    out["current_ratio"] = d > 0.0 ? json(t / d) : json(nullptr);
    return out;
}

}  // namespace report_detail

// Summary scalars as a pure function of kind, config and samples.
inline json summarize(const std::string& kind, const json& config, const std::vector<ReportSample>& samples) {
    if (kind == "pullout") return report_detail::pullout_summary(config, samples);
    if (kind == "repeatability") return report_detail::repeatability_summary(samples);
    if (kind == "holding") return report_detail::holding_summary(config, samples);
    throw ConfigError("unknown test kind '" + kind + "'");
}

inline bool verify_report(const TestReport& r) {
    return summarize(r.kind, r.config, r.samples).dump() == r.summary.dump();
}

namespace io {

inline std::string report_to_text(const TestReport& r) {
    std::string out = json({{"type", "header"},
                            {"format", "craft-test-report"},
                            {"version", kReportVersion},
                            {"kind", r.kind},
                            {"config", r.config}})
                          .dump() +
                      "\n";
    for (const auto& s : r.samples) out += sample_to_json(s).dump() + "\n";
    out += json({{"type", "summary"}, {"summary", r.summary}}).dump() + "\n";
    return out;
}

inline TestReport report_from_text(const std::string& text) {
    TestReport r;
    bool header = false, summary = false;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const json j = parse(line, "report");
        const auto type = j.value("type", std::string());
        try {
        if (type == "header") {
            if (j.value("format", std::string()) != "craft-test-report" || j.value("version", 0) != kReportVersion)
                throw LoadError("unsupported test report");
            r.kind = j.at("kind").get<std::string>();
            r.config = j.at("config");
            header = true;
        } else if (type == "sample") {
            r.samples.push_back(sample_from_json(j));
        } else if (type == "summary") {
            r.summary = j.at("summary");
            summary = true;
        }
        } catch (const json::exception& e) {
            throw LoadError(std::string("malformed test report record: ") + e.what());
        }
    }
    if (!header || !summary) throw LoadError("test report missing header or summary");
    return r;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Harness configs

inline json motor_params_to_json(const bus::MotorParams& m) {
    return {{"current_limit_ma", m.current_limit_ma}, {"torque_constant", m.torque_constant},
            {"max_velocity", m.max_velocity},         {"thermal_tau", m.thermal_tau},
            {"thermal_derating", m.thermal_derating}, {"thermal_gain", m.thermal_gain},
            {"sag_velocity", m.sag_velocity}};
}

// Non-finite numbers are written as strings ("inf") so configs stay valid JSON.
inline json number_to_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline double number_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw ConfigError("expected a number, got '" + s + "'");
    }
    return j.get<double>();
}

inline bus::MotorParams motor_params_from_json(const json& j, bus::MotorParams m = {}) {
    if (j.contains("current_limit_ma")) m.current_limit_ma = number_from_json(j.at("current_limit_ma"));
    if (j.contains("torque_constant")) m.torque_constant = number_from_json(j.at("torque_constant"));
    if (j.contains("max_velocity")) m.max_velocity = number_from_json(j.at("max_velocity"));
    if (j.contains("thermal_tau")) m.thermal_tau = number_from_json(j.at("thermal_tau"));
    if (j.contains("thermal_derating")) m.thermal_derating = number_from_json(j.at("thermal_derating"));
    if (j.contains("thermal_gain")) m.thermal_gain = number_from_json(j.at("thermal_gain"));
    if (j.contains("sag_velocity")) m.sag_velocity = number_from_json(j.at("sag_velocity"));
    return m;
}

inline json motor_params_json(const bus::MotorParams& m) {
    json j = motor_params_to_json(m);
    j["current_limit_ma"] = number_to_json(m.current_limit_ma);
    return j;
}

struct PulloutConfig {
    Digit digit{Digit::Index};
    DriveKind drive{DriveKind::Tendon};
    double spool_advantage{2.0};  // tendon drive only
    double force_step{0.1};       // N
    double force_cap{40.0};       // N
    double hold_time{0.5};        // s per force level
    double dt{0.01};
    double deflection_limit{15.0 * std::numbers::pi / 180.0};
    SimParams sim;
};

struct RepeatabilityConfig {
    int cycles{1000};
    double backlash{0.002};      // rad at the motor encoder
    double encoder_noise{0.001};  // rad, standard deviation
    double object_force{1.0};    // N per digit at full closure
    double contact_fraction{0.7};  // closure fraction where the object is first touched
    double dt{0.01};
    int dwell_steps{5};          // steps held after the motors reach their goals
    std::uint64_t seed{42};
    SimParams sim;
};

struct HoldingConfig {
    double mass{2.27};  // kg (5 lb)
    // Share of the weight reacted at the fingertips; the rest rests on the palm.
    double digit_load_fraction{0.4};
    double duration{3600.0};
    double dt{1.0};
    int log_every{10};
    double spool_advantage{2.0};
    double direct_spool_radius{0.005};
    SimParams sim;
};

inline JointAngles full_flexion_pose(const HandSpec& spec, Digit d) {
    JointAngles q;
    q[{d, Slot::McpFlex}] = spec.joint({d, Slot::McpFlex}).limits.max;
    q[{d, Slot::Pip}] = spec.joint({d, Slot::Pip}).limits.max;
    return project_coupling(q);
}

// Power-grasp closure used by the repeatability and holding harnesses.
inline JointAngles default_grasp_pose() {
    JointAngles q;
    for (Digit d : kDigits) {
        q[{d, Slot::McpFlex}] = d == Digit::Thumb ? 0.6 : 1.0;
        q[{d, Slot::Pip}] = d == Digit::Thumb ? 0.5 : 1.2;
    }
    q[{Digit::Thumb, Slot::McpAbd}] = 0.5;
    return project_coupling(q);
}

inline JointAngles default_open_pose() {
    JointAngles q;
    for (Digit d : kDigits) {
        q[{d, Slot::McpFlex}] = 0.05;
        q[{d, Slot::Pip}] = 0.05;
    }
    return project_coupling(q);
}

inline json sim_params_to_json(const SimParams& p) {
    return {{"joint_stiffness", number_to_json(p.joint_stiffness)},
            {"snap_fit_threshold", number_to_json(p.snap_fit_threshold)},
            {"motor", motor_params_json(p.motor)}};
}

inline SimParams sim_params_from_json(const json& j, SimParams p = {}) {
    if (j.contains("joint_stiffness")) p.joint_stiffness = number_from_json(j.at("joint_stiffness"));
    if (j.contains("snap_fit_threshold")) p.snap_fit_threshold = number_from_json(j.at("snap_fit_threshold"));
    if (j.contains("motor")) p.motor = motor_params_from_json(j.at("motor"), p.motor);
    return p;
}

inline json to_json(const PulloutConfig& c) {
    json j = sim_params_to_json(c.sim);
    j.update({{"digit", digit_name(c.digit)},
              {"drive", drive_name(c.drive)},
              {"spool_advantage", c.spool_advantage},
              {"force_step_n", c.force_step},
              {"force_cap_n", c.force_cap},
              {"hold_time_s", c.hold_time},
              {"dt", c.dt},
              {"deflection_limit_rad", c.deflection_limit}});
    return j;
}

inline PulloutConfig pullout_config_from_json(const json& j, PulloutConfig c = {}) {
    c.sim = sim_params_from_json(j, c.sim);
    if (j.contains("digit")) {
        const auto d = parse_digit(j.at("digit").get<std::string>());
        if (!d) throw ConfigError("unknown digit");
        c.digit = *d;
    }
    if (j.contains("drive")) {
        const auto s = j.at("drive").get<std::string>();
        if (s != "tendon" && s != "direct") throw ConfigError("drive must be tendon or direct");
        c.drive = s == "tendon" ? DriveKind::Tendon : DriveKind::DirectDrive;
    }
    c.spool_advantage = j.value("spool_advantage", c.spool_advantage);
    c.force_step = j.value("force_step_n", c.force_step);
    c.force_cap = j.value("force_cap_n", c.force_cap);
    c.hold_time = j.value("hold_time_s", c.hold_time);
    c.dt = j.value("dt", c.dt);
    c.deflection_limit = j.value("deflection_limit_rad", c.deflection_limit);
    return c;
}

inline json to_json(const RepeatabilityConfig& c) {
    json j = sim_params_to_json(c.sim);
    j.update({{"cycles", c.cycles},
              {"backlash_rad", c.backlash},
              {"encoder_noise_rad", c.encoder_noise},
              {"object_force_n", c.object_force},
              {"contact_fraction", c.contact_fraction},
              {"dt", c.dt},
              {"dwell_steps", c.dwell_steps},
              {"seed", c.seed}});
    return j;
}

inline RepeatabilityConfig repeatability_config_from_json(const json& j, RepeatabilityConfig c = {}) {
    c.sim = sim_params_from_json(j, c.sim);
    c.cycles = j.value("cycles", c.cycles);
    c.backlash = j.value("backlash_rad", c.backlash);
    c.encoder_noise = j.value("encoder_noise_rad", c.encoder_noise);
    c.object_force = j.value("object_force_n", c.object_force);
    c.contact_fraction = j.value("contact_fraction", c.contact_fraction);
    c.dt = j.value("dt", c.dt);
    c.dwell_steps = j.value("dwell_steps", c.dwell_steps);
    c.seed = j.value("seed", c.seed);
    if (c.cycles < 1) throw ConfigError("cycles must be >= 1");
    return c;
}

inline json to_json(const HoldingConfig& c) {
    json j = sim_params_to_json(c.sim);
    j.update({{"mass_kg", c.mass},
              {"digit_load_fraction", c.digit_load_fraction},
              {"duration_s", c.duration},
              {"dt", c.dt},
              {"log_every", c.log_every},
              {"spool_advantage", c.spool_advantage},
              {"direct_spool_radius", c.direct_spool_radius}});
    return j;
}

inline HoldingConfig holding_config_from_json(const json& j, HoldingConfig c = {}) {
    c.sim = sim_params_from_json(j, c.sim);
    c.mass = j.value("mass_kg", c.mass);
    c.digit_load_fraction = j.value("digit_load_fraction", c.digit_load_fraction);
    c.duration = j.value("duration_s", c.duration);
    c.dt = j.value("dt", c.dt);
    c.log_every = j.value("log_every", c.log_every);
    c.spool_advantage = j.value("spool_advantage", c.spool_advantage);
    c.direct_spool_radius = j.value("direct_spool_radius", c.direct_spool_radius);
    if (!(c.mass >= 0.0)) throw ConfigError("mass must be >= 0");
    if (!(c.digit_load_fraction >= 0.0 && c.digit_load_fraction <= 1.0))
        throw ConfigError("digit_load_fraction must be in [0, 1]");
    return c;
}

namespace detail {

inline std::vector<double> all_angles(const JointAngles& q) { return {q.values().begin(), q.values().end()}; }

inline std::vector<double> active_angles(const JointAngles& q) {
    const auto a = q.active();
    return {a.begin(), a.end()};
}

inline std::vector<double> motor_currents(const std::vector<bus::VirtualMotor>& motors) {
    std::vector<double> out;
    for (const auto& m : motors) out.push_back(m.present_current);
    return out;
}

inline std::map<std::string, bool> flag_map(const SimFlags& f) {
    return {{"saturation", f.saturation}, {"slack", f.slack}, {"overload", f.overload}, {"snap_fit_fault", f.any_snap_fit()}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pull-out: fully flex one finger, then ramp an opening tip force in fixed
// steps until some joint of that finger deviates from its commanded angle by
// more than the deflection limit.

inline TestReport run_pullout_test(const HandSpec& spec, const Transmission& tendon, const PulloutConfig& cfg) {
    SimModel model{spec,
                   cfg.drive == DriveKind::Tendon ? with_spool_advantage(tendon, cfg.spool_advantage)
                                                  : direct_drive_transmission(spec),
                   cfg.sim};
    const JointAngles commanded = full_flexion_pose(spec, cfg.digit);
    SimState s = initial_state(model, commanded);
    const MotorAngles goals = joint_to_motor(model.transmission, commanded);
    const Eigen::Vector3d pull = -closing_direction(spec, cfg.digit, commanded);
    const int steps = std::max(1, static_cast<int>(std::lround(cfg.hold_time / cfg.dt)));
    const double limit = cfg.deflection_limit;
    const std::size_t lo = static_cast<std::size_t>(cfg.digit) * 4;

    TestReport r;
    r.kind = "pullout";
    r.config = to_json(cfg);
    const long levels = std::lround(cfg.force_cap / cfg.force_step);
    for (long n = 0; n <= levels; ++n) {
        const double force = n * cfg.force_step;
        s.tip_forces = zero_tip_forces();
        s.tip_forces[static_cast<std::size_t>(cfg.digit)] = force * pull;
        for (int k = 0; k < steps; ++k) s = step(model, s, goals, cfg.dt);
        ReportSample sample{s.t, "", force, detail::all_angles(commanded), detail::all_angles(s.q),
                            detail::motor_currents(s.motors), detail::flag_map(s.flags)};
        const double defl = report_detail::max_abs_diff(sample.commanded, sample.achieved, lo, lo + 4);
        r.samples.push_back(std::move(sample));
        if (defl > limit) break;
    }
    r.summary = summarize(r.kind, r.config, r.samples);
    return r;
}

// ---------------------------------------------------------------------------
// Repeatability: grasp-release cycles against a compliant object; tracking
// error is read through motor encoders with backlash and Gaussian noise.

class Encoder {
public:
    Encoder(double backlash, double noise) : backlash_(backlash), noise_(noise) {}

    // Backlash as a dead band: the reading trails the shaft by half the band
    // on the side it last moved from.
    double read(double position, std::mt19937_64& rng) {
        if (position > last_) direction_ = 1.0;
        if (position < last_) direction_ = -1.0;
        last_ = position;
        double v = position - direction_ * backlash_ / 2.0;
        if (noise_ > 0.0) v += std::normal_distribution<double>(0.0, noise_)(rng);
        return v;
    }

private:
    double backlash_;
    double noise_;
    double last_{0.0};
    double direction_{1.0};
};

inline TestReport run_repeatability_test(const HandSpec& spec, const Transmission& tr, const RepeatabilityConfig& cfg,
                                         const JointAngles& grasp = default_grasp_pose(),
                                         const JointAngles& open = default_open_pose()) {
    if (cfg.cycles < 1) throw ConfigError("cycles must be >= 1");
    SimModel model{spec, tr, cfg.sim};
    SimState s = initial_state(model, open);
    std::mt19937_64 rng(cfg.seed);
    std::vector<Encoder> encoders(kActiveCount, Encoder(cfg.backlash, cfg.encoder_noise));
    std::array<Eigen::Vector3d, kDigitCount> push{};
    for (Digit d : kDigits) push[static_cast<std::size_t>(d)] = -closing_direction(spec, d, grasp);

    // Object reaction grows linearly from first contact to full closure.
    auto object_forces = [&](const JointAngles& q) {
        TipForces f = zero_tip_forces();
        for (Digit d : kDigits) {
            const double span = grasp[{d, Slot::Pip}] - open[{d, Slot::Pip}];
            const double u = span != 0.0 ? (q[{d, Slot::Pip}] - open[{d, Slot::Pip}]) / span : 0.0;
            const double press = std::clamp((u - cfg.contact_fraction) / (1.0 - cfg.contact_fraction), 0.0, 1.0);
            f[static_cast<std::size_t>(d)] = cfg.object_force * press * push[static_cast<std::size_t>(d)];
        }
        return f;
    };

    TestReport r;
    r.kind = "repeatability";
    r.config = to_json(cfg);
    for (int c = 0; c < cfg.cycles; ++c) {
        for (const JointAngles* target : {&grasp, &open}) {
            const MotorAngles goals = joint_to_motor(tr, *target);
            int settled = 0;
            for (int k = 0; k < 100000 && settled < cfg.dwell_steps; ++k) {
                s.tip_forces = object_forces(s.q);
                s = step(model, s, goals, cfg.dt);
                bool at_goal = true;
                for (const auto& m : s.motors) at_goal = at_goal && m.present_position == m.goal_position;
                settled = at_goal ? settled + 1 : 0;
            }
            MotorAngles reading{};
            for (std::size_t i = 0; i < kActiveCount; ++i) reading[i] = encoders[i].read(s.motors[i].present_position, rng);
            const auto measured = motor_to_joint(spec, tr, reading).q;
            r.samples.push_back({s.t, "", s.tip_forces[1].norm(), detail::active_angles(*target),
                                 detail::active_angles(measured), detail::motor_currents(s.motors),
                                 detail::flag_map(s.flags)});
        }
    }
    r.summary = summarize(r.kind, r.config, r.samples);
    return r;
}

// ---------------------------------------------------------------------------
// Holding: the fingertip share of a gravity load, split equally over the
// five digits, each share pulling its digit open, held for `duration` on the virtual bus. Currents are
// read back through SyncRead frames. Run once with the tendon drive and once
// with the direct-drive reference.

inline std::vector<ReportSample> run_holding_model(const HandSpec& spec, const Transmission& tr, const SimParams& params,
                                                   const HoldingConfig& cfg, const JointAngles& pose,
                                                   const std::string& label) {
    SimModel model{spec, tr, params};
    bus::VirtualBus vbus(kActiveCount, params.motor);
    bus::BusClient client(vbus);
    const auto ids = bus::all_motor_ids(kActiveCount);
    const MotorAngles goals = joint_to_motor(tr, pose);
    vbus.with_motors([&](auto& ms) {
        for (std::size_t i = 0; i < kActiveCount; ++i) ms[i].goal_position = ms[i].present_position = goals[i];
        return 0;
    });
    std::map<std::uint8_t, double> goal_map;
    for (std::size_t i = 0; i < kActiveCount; ++i) goal_map[ids[i]] = goals[i];
    client.sync_write_goal_positions(goal_map);

    constexpr double g = 9.80665;
    const double share = cfg.mass * cfg.digit_load_fraction * g / static_cast<double>(kDigitCount);
    TipForces forces = zero_tip_forces();
    for (Digit d : kDigits) forces[static_cast<std::size_t>(d)] = -share * closing_direction(spec, d, pose);

    std::vector<ReportSample> out;
    const long steps = std::lround(cfg.duration / cfg.dt);
    for (long k = 1; k <= steps; ++k) {
        // Plant side: pose from the motor shafts, then the torque each motor must supply.
        const auto motors = vbus.snapshot();
        MotorAngles spools{};
        for (std::size_t i = 0; i < kActiveCount; ++i) spools[i] = motors[i].present_position;
        bool saturated = false, slack = false;
        const JointAngles q = detail::compliant_pose(model, spools, forces, saturated);
        const auto torques = detail::required_motor_torques(model, q, forces, motors, slack);
        vbus.with_motors([&](auto& ms) {
            for (std::size_t i = 0; i < kActiveCount; ++i) ms[i].load_torque = torques[i];
            return 0;
        });
        vbus.step(cfg.dt);
        if (k % cfg.log_every != 0) continue;
        const auto currents = client.sync_read_currents(ids);
        bool overload = false;
        for (const auto& m : vbus.snapshot()) overload = overload || m.overloaded;
        ReportSample s;
        s.t = k * cfg.dt;
        s.model = label;
        s.load = cfg.mass;
        s.commanded = detail::all_angles(pose);
        s.achieved = detail::all_angles(q);
        for (auto id : ids) s.currents.push_back(currents.at(id));
        s.flags = {{"saturation", saturated}, {"slack", slack}, {"overload", overload}};
        out.push_back(std::move(s));
    }
    return out;
}

inline TestReport run_holding_test(const HandSpec& spec, const Transmission& tendon, const HoldingConfig& cfg,
                                   const JointAngles& pose = default_grasp_pose()) {
    if (!(cfg.dt > 0.0) || cfg.log_every < 1) throw ConfigError("holding test needs dt > 0 and log_every >= 1");
    TestReport r;
    r.kind = "holding";
    r.config = to_json(cfg);
    r.samples = run_holding_model(spec, with_spool_advantage(tendon, cfg.spool_advantage), cfg.sim, cfg, pose, "tendon");
    auto direct = run_holding_model(spec, direct_drive_transmission(spec, cfg.direct_spool_radius), cfg.sim, cfg, pose,
                                    "direct");
    r.samples.insert(r.samples.end(), direct.begin(), direct.end());
    r.summary = summarize(r.kind, r.config, r.samples);
    return r;
}

// ---------------------------------------------------------------------------
// Sphere grasp check

struct SphereContact {
    double signed_distance{0.0};  // fingertip to sphere surface, m
    bool contact{false};
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // outward sphere normal at the fingertip
};

struct SphereGraspSummary {
    std::array<SphereContact, kDigitCount> digits{};
    int contacts{0};
    bool spanning{false};
    bool closed{false};
    double max_angular_gap{0.0};  // rad, between contact normals in the palm plane
};

inline constexpr double kContactTolerance = 0.002;

// Largest gap between planar directions given as angles; 2*pi for an empty
// set. Directions positively span the plane iff the gap is below pi.
inline double max_angular_gap(std::vector<double> angles) {
    if (angles.empty()) return 2.0 * std::numbers::pi;
    for (double& a : angles) a = std::remainder(a, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    double gap = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double next = i + 1 < angles.size() ? angles[i + 1] : angles[0] + 2.0 * std::numbers::pi;
        gap = std::max(gap, next - angles[i]);
    }
    return gap;
}

// Contact normals projected into the palm plane (the horizontal plane when
// the hand grasps from above) must leave no angular gap of pi or more.
inline SphereGraspSummary check_sphere_grasp(const HandSpec& spec, const JointAngles& q, const Eigen::Vector3d& center,
                                             double radius, double tolerance = kContactTolerance) {
    if (!(radius > 0.0)) throw DomainError("sphere radius must be positive");
    const auto pose = forward_kinematics(spec, q);
    SphereGraspSummary out;
    const Eigen::Matrix3d palm = spec.palm_frame.linear();
    std::vector<double> angles;
    for (Digit d : kDigits) {
        auto& c = out.digits[static_cast<std::size_t>(d)];
        const Eigen::Vector3d tip = pose[static_cast<std::size_t>(d)].tip.translation();
        const Eigen::Vector3d rel = tip - center;
        c.signed_distance = rel.norm() - radius;
        c.normal = rel.norm() > 0.0 ? Eigen::Vector3d(rel.normalized()) : Eigen::Vector3d::Zero();
        c.contact = std::abs(c.signed_distance) <= tolerance;
        if (!c.contact) continue;
        ++out.contacts;
        const Eigen::Vector3d local = palm.transpose() * c.normal;
        if (std::hypot(local.x(), local.y()) > 1e-9) angles.push_back(std::atan2(local.y(), local.x()));
    }
    out.max_angular_gap = max_angular_gap(angles);
    out.spanning = out.max_angular_gap < std::numbers::pi;
    out.closed = out.contacts >= 3 && out.spanning;
    return out;
}

}  // namespace craft
