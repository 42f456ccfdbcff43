#pragma once

// Joint space <-> spool space for the tendon drive, plus static tension and
// motor-torque propagation.
//
// Linear moment-arm model: a route's excursion is sum(a_i * theta_i) with a
// constant signed arm a_i per joint it crosses. Pose-dependent wrap over the
// rolling surfaces is ignored. Antagonistic MCP pairs share one spool, so
// every digit has exactly three routes and the hand has 15 motors.

#include <craft/errors.hpp>
#include <craft/hand_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace craft {

enum class RouteFunction { McpAbdAdd = 0, McpFlexExt = 1, PipDipFlex = 2 };

inline std::string_view route_function_name(RouteFunction f) {
    switch (f) {
        case RouteFunction::McpAbdAdd: return "mcp_abd_add";
        case RouteFunction::McpFlexExt: return "mcp_flex_ext";
        case RouteFunction::PipDipFlex: return "pip_dip_flex";
    }
    return "?";
}

inline std::optional<RouteFunction> parse_route_function(std::string_view s) {
    for (auto f : {RouteFunction::McpAbdAdd, RouteFunction::McpFlexExt, RouteFunction::PipDipFlex})
        if (route_function_name(f) == s) return f;
    return std::nullopt;
}

// Active joint driven by a route function.
inline Slot driven_slot(RouteFunction f) {
    switch (f) {
        case RouteFunction::McpAbdAdd: return Slot::McpAbd;
        case RouteFunction::McpFlexExt: return Slot::McpFlex;
        case RouteFunction::PipDipFlex: return Slot::Pip;
    }
    return Slot::Pip;
}

// Antagonistic pairs can pull both ways; the PIP/DIP flexor cannot push and
// relies on the elastic bands for extension.
inline bool bidirectional(RouteFunction f) { return f != RouteFunction::PipDipFlex; }

// Servo bus id, 1..15.
struct MotorId {
    int value{0};
    std::size_t index() const { return static_cast<std::size_t>(value - 1); }
    friend auto operator<=>(const MotorId&, const MotorId&) = default;
};

// Default binding: the motor of active joint k is k + 1 (actuator order).
inline MotorId default_motor(Digit d, RouteFunction f) {
    return MotorId{static_cast<int>(active_index({d, driven_slot(f)})) + 1};
}

struct TendonRoute {
    std::string id;
    Digit digit{Digit::Index};
    RouteFunction function{RouteFunction::PipDipFlex};
    std::map<JointId, double> moment_arms;  // m, signed
    // Second tendon of an antagonistic pair on the same spool. Its excursion
    // must cancel the agonist's.
    std::optional<std::map<JointId, double>> antagonist_moment_arms;
    double wrap_angle_total{std::numbers::pi};  // rad over all dowels
    double friction_mu{0.1};
    MotorId motor{};
    double spool_radius{0.005};  // m
    double slack_offset{0.0};    // rad
};

struct ReturnSpring {
    Digit digit{Digit::Index};
    double rest_angle{0.0};
    double stiffness{0.01};  // N*m/rad on each of pip and dip
};

using MotorAngles = std::array<double, kActiveCount>;  // indexed by MotorId::index()

inline double excursion(const std::map<JointId, double>& arms, const JointAngles& q) {
    double sum = 0.0;
    for (const auto& [id, a] : arms) sum += a * q[id];
    return sum;
}

inline double excursion(const TendonRoute& route, const JointAngles& q) {
    return excursion(route.moment_arms, q);
}

// e^{-mu*phi} when friction helps hold the load, e^{+mu*phi} when the motor
// has to drag the tendon against it.
inline double capstan_factor(double mu, double phi, bool assist_friction) {
    return std::exp((assist_friction ? -1.0 : 1.0) * mu * phi);
}

// Validated, immutable routing table with per-digit inverses precomputed.
class Transmission {
public:
    Transmission(std::vector<TendonRoute> routes, std::vector<ReturnSpring> springs,
                 double ratchet_step = 5.0 * std::numbers::pi / 180.0)
        : routes_(std::move(routes)), springs_(std::move(springs)), ratchet_step_(ratchet_step) {
        validate_and_factor();
    }

    const std::vector<TendonRoute>& routes() const { return routes_; }
    const std::vector<ReturnSpring>& springs() const { return springs_; }
    double ratchet_step() const { return ratchet_step_; }

    const TendonRoute& route(Digit d, RouteFunction f) const {
        return routes_[by_function_[static_cast<std::size_t>(d)][static_cast<std::size_t>(f)]];
    }
    const TendonRoute& route(MotorId m) const { return routes_[by_motor_.at(m.index())]; }

    const ReturnSpring* spring(Digit d) const {
        for (const auto& s : springs_)
            if (s.digit == d) return &s;
        return nullptr;
    }

    // Rows: routes in RouteFunction order; columns: active coordinates
    // (abd, flex, pip with dip folded in). Units m/rad.
    const Eigen::Matrix3d& moment_matrix(Digit d) const {
        return moment_[static_cast<std::size_t>(d)];
    }
    const Eigen::Matrix3d& moment_matrix_inverse(Digit d) const {
        return moment_inv_[static_cast<std::size_t>(d)];
    }

    Transmission with_route(const TendonRoute& updated) const {
        auto routes = routes_;
        for (auto& r : routes)
            if (r.id == updated.id) r = updated;
        return Transmission(std::move(routes), springs_, ratchet_step_);
    }

private:
    void validate_and_factor() {
        if (!(ratchet_step_ > 0.0)) throw ConfigError("ratchet step must be positive");
        for (auto& row : by_function_) row.fill(kUnset);
        by_motor_.fill(kUnset);
        for (std::size_t i = 0; i < routes_.size(); ++i) {
            const auto& r = routes_[i];
            if (!(r.spool_radius > 0.0)) throw ConfigError("route " + r.id + ": spool radius must be positive");
            if (!(r.friction_mu >= 0.0)) throw ConfigError("route " + r.id + ": friction must be >= 0");
            if (!(r.wrap_angle_total >= 0.0)) throw ConfigError("route " + r.id + ": wrap angle must be >= 0");
            if (r.motor.value < 1 || r.motor.value > static_cast<int>(kActiveCount))
                throw ConfigError("route " + r.id + ": motor id outside 1..15");
            auto& slot = by_function_[static_cast<std::size_t>(r.digit)][static_cast<std::size_t>(r.function)];
            if (slot != kUnset) throw ConfigError("digit " + std::string(digit_name(r.digit)) + " has two " +
                                                  std::string(route_function_name(r.function)) + " routes");
            slot = i;
            if (by_motor_[r.motor.index()] != kUnset)
                throw ConfigError("motor " + std::to_string(r.motor.value) + " bound twice");
            by_motor_[r.motor.index()] = i;
            for (const auto& [id, a] : r.moment_arms)
                if (id.digit != r.digit) throw ConfigError("route " + r.id + " crosses another digit");
            if (r.function == RouteFunction::PipDipFlex) {
                auto arm = [&](Slot s) {
                    auto it = r.moment_arms.find({r.digit, s});
                    return it == r.moment_arms.end() ? 0.0 : it->second;
                };
                if (arm(Slot::Pip) == 0.0 || arm(Slot::Dip) == 0.0)
                    throw ConfigError("route " + r.id + " needs moment arms at pip and dip");
            }
        }
        for (Digit d : kDigits) {
            Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
            for (std::size_t f = 0; f < 3; ++f) {
                const auto i = by_function_[static_cast<std::size_t>(d)][f];
                if (i == kUnset)
                    throw ConfigError("digit " + std::string(digit_name(d)) + " missing route " +
                                      std::string(route_function_name(static_cast<RouteFunction>(f))));
                for (const auto& [id, arm] : routes_[i].moment_arms)
                    a(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(active_index(id) % 3)) += arm;
            }
            const Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
            const double scale = a.cwiseAbs().maxCoeff();
            if (!lu.isInvertible() || std::abs(a.determinant()) < 1e-9 * scale * scale * scale)
                throw ConfigError("moment-arm matrix of " + std::string(digit_name(d)) + " is singular");
            moment_[static_cast<std::size_t>(d)] = a;
            moment_inv_[static_cast<std::size_t>(d)] = lu.inverse();
        }
        for (std::size_t i = 0; i < springs_.size(); ++i) {
            if (!(springs_[i].stiffness > 0.0)) throw ConfigError("spring stiffness must be positive");
            for (std::size_t j = 0; j < i; ++j)
                if (springs_[j].digit == springs_[i].digit) throw ConfigError("two springs on one digit");
        }
    }

    static constexpr std::size_t kUnset = static_cast<std::size_t>(-1);

    std::vector<TendonRoute> routes_;
    std::vector<ReturnSpring> springs_;
    double ratchet_step_;
    std::array<std::array<std::size_t, 3>, kDigitCount> by_function_{};
    std::array<std::size_t, kActiveCount> by_motor_{};
    std::array<Eigen::Matrix3d, kDigitCount> moment_{};
    std::array<Eigen::Matrix3d, kDigitCount> moment_inv_{};
};

// Default routing: pip/dip flexor hugs the rolling surfaces (arm = rolling
// radius), MCP pairs on 10 mm (flex) and 8 mm (abd) arms, 5 mm spools,
// mu = 0.1 over a total wrap of pi.
inline Transmission default_transmission(const HandSpec& spec) {
    std::vector<TendonRoute> routes;
    std::vector<ReturnSpring> springs;
    for (Digit d : kDigits) {
        const std::string prefix(digit_name(d));
        for (auto f : {RouteFunction::McpAbdAdd, RouteFunction::McpFlexExt, RouteFunction::PipDipFlex}) {
            TendonRoute r;
            r.id = prefix + "." + std::string(route_function_name(f));
            r.digit = d;
            r.function = f;
            r.motor = default_motor(d, f);
            switch (f) {
                case RouteFunction::McpAbdAdd:
                    r.moment_arms = {{JointId{d, Slot::McpAbd}, 0.008}};
                    r.antagonist_moment_arms = std::map<JointId, double>{{JointId{d, Slot::McpAbd}, -0.008}};
                    break;
                case RouteFunction::McpFlexExt:
                    r.moment_arms = {{JointId{d, Slot::McpFlex}, 0.010}};
                    r.antagonist_moment_arms = std::map<JointId, double>{{JointId{d, Slot::McpFlex}, -0.010}};
                    break;
                case RouteFunction::PipDipFlex:
                    r.moment_arms = {{JointId{d, Slot::Pip}, spec.joint({d, Slot::Pip}).rolling_radius},
                                     {JointId{d, Slot::Dip}, spec.joint({d, Slot::Dip}).rolling_radius}};
                    break;
            }
            routes.push_back(std::move(r));
        }
        springs.push_back({d, 0.0, 0.01});
    }
    return Transmission(std::move(routes), std::move(springs));
}

inline MotorAngles joint_to_motor(const Transmission& tr, const JointAngles& q) {
    MotorAngles out{};
    for (const auto& r : tr.routes()) {
        const double e = excursion(r, q);
        if (r.antagonist_moment_arms) {
            const double e_ant = excursion(*r.antagonist_moment_arms, q);
            if (std::abs(e + e_ant) > 1e-9)
                throw ConfigError("route " + r.id + ": antagonist excursion does not cancel the agonist");
        }
        out[r.motor.index()] = e / r.spool_radius + r.slack_offset;
    }
    return out;
}

struct JointSolution {
    JointAngles q;
    bool saturated{false};
    PerActive<bool> saturated_joints{};
};

// Unique inverse of the per-digit linear map; out-of-limit solutions are
// clamped and flagged.
inline JointSolution motor_to_joint(const HandSpec& spec, const Transmission& tr,
                                    const MotorAngles& spools) {
    JointSolution out;
    for (Digit d : kDigits) {
        Eigen::Vector3d e;
        for (std::size_t f = 0; f < 3; ++f) {
            const auto& r = tr.route(d, static_cast<RouteFunction>(f));
            e(static_cast<Eigen::Index>(f)) = (spools[r.motor.index()] - r.slack_offset) * r.spool_radius;
        }
        const Eigen::Vector3d theta = tr.moment_matrix_inverse(d) * e;
        const std::array<Slot, 3> slots{Slot::McpAbd, Slot::McpFlex, Slot::Pip};
        for (std::size_t k = 0; k < 3; ++k) {
            const JointId id{d, slots[k]};
            const auto& lim = spec.joint(id).limits;
            const double v = theta(static_cast<Eigen::Index>(k));
            const double c = lim.clamp(v);
            if (c != v || !std::isfinite(v)) {
                out.saturated = true;
                out.saturated_joints[active_index(id)] = true;
            }
            out.q[id] = std::isfinite(v) ? c : lim.clamp(0.0);
        }
    }
    out.q = project_coupling(out.q);
    return out;
}

// Required tendon generalized torque on each of the 20 joints to hold q
// against fingertip forces and the return springs.
inline JointAngles holding_joint_torques(const HandSpec& spec, const Transmission& tr, const JointAngles& q,
                                         const std::array<Eigen::Vector3d, kDigitCount>& tip_forces) {
    JointAngles tau;
    for (Digit d : kDigits) {
        const Eigen::Vector4d ext = tip_force_joint_torques(spec, d, q, tip_forces[static_cast<std::size_t>(d)]);
        tau[{d, Slot::McpAbd}] = -ext(0);
        tau[{d, Slot::McpFlex}] = -ext(1);
        tau[{d, Slot::Pip}] = -ext(2);
        tau[{d, Slot::Dip}] = -ext(3);
        if (const auto* s = tr.spring(d)) {
            tau[{d, Slot::Pip}] += s->stiffness * (q[{d, Slot::Pip}] - s->rest_angle);
            tau[{d, Slot::Dip}] += s->stiffness * (q[{d, Slot::Dip}] - s->rest_angle);
        }
    }
    return tau;
}

struct HoldTorques {
    MotorAngles motor_torque{};  // N*m, signed, indexed by motor
    MotorAngles tension{};       // N, >= 0
    std::array<bool, kActiveCount> slack{};
};

// tau = -J^T F + spring torques, tensions from A^T T = tau (active
// coordinates), motor torque = T * r_spool * e^{-+mu*phi}.
inline HoldTorques static_hold_torque(const HandSpec& spec, const Transmission& tr, const JointAngles& q,
                                      const std::array<Eigen::Vector3d, kDigitCount>& tip_forces,
                                      bool assist_friction) {
    for (const auto& f : tip_forces)
        if (!f.allFinite()) throw DomainError("tip force must be finite");
    const JointAngles tau = holding_joint_torques(spec, tr, q, tip_forces);
    HoldTorques out;
    for (Digit d : kDigits) {
        const Eigen::Vector3d tau_active(tau[{d, Slot::McpAbd}], tau[{d, Slot::McpFlex}],
                                         tau[{d, Slot::Pip}] + tau[{d, Slot::Dip}]);
        const Eigen::Vector3d tension = tr.moment_matrix_inverse(d).transpose() * tau_active;
        for (std::size_t f = 0; f < 3; ++f) {
            const auto& r = tr.route(d, static_cast<RouteFunction>(f));
            const double t = tension(static_cast<Eigen::Index>(f));
            const auto m = r.motor.index();
            if (t < 0.0 && !bidirectional(r.function)) {
                out.slack[m] = true;
                out.tension[m] = 0.0;
                out.motor_torque[m] = 0.0;
                continue;
            }
            out.tension[m] = std::abs(t);
            out.motor_torque[m] = t * r.spool_radius * capstan_factor(r.friction_mu, r.wrap_angle_total, assist_friction);
        }
    }
    return out;
}

// Ratchet take-up: rounds up to whole clicks so the tendon is never left slack.
inline TendonRoute retension(const TendonRoute& route, double measured_slack, double ratchet_step) {
    if (!(measured_slack >= 0.0)) throw DomainError("measured slack must be >= 0");
    TendonRoute out = route;
    const double needed = measured_slack / route.spool_radius;
    const double clicks = std::ceil(needed / ratchet_step - 1e-9);
    out.slack_offset += std::max(0.0, clicks) * ratchet_step;
    return out;
}

}  // namespace craft
