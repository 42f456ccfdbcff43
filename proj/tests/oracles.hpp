#pragma once

// Independent reference computations used only by tests. None of these call
// into the code paths they check.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace craft::oracle {

// Discrete rolling of a distal circle (radius r_distal) over a fixed proximal
// circle (radius r_proximal), advancing the contact point in equal arc steps.
// Each step moves the contact point by ds along the fixed surface and, with no
// slip, rotates the rolling body by ds/r_proximal + ds/r_distal.
struct RollingState {
    double contact_angle{0.0};  // on the proximal circle, from +y toward +x
    double orientation{0.0};    // distal frame rotation, from +y toward +x
    double proximal_path{0.0};  // chord-summed path of the contact on each surface
    double distal_path{0.0};
    Eigen::Vector2d proximal_contact{0.0, 0.0};
    Eigen::Vector2d distal_contact_body{0.0, 0.0};
};

struct Roller {
    double r_proximal;
    double r_distal;
    RollingState state;

    Roller(double rp, double rd) : r_proximal(rp), r_distal(rd) {
        state.proximal_contact = {0.0, rp};
        state.distal_contact_body = {0.0, -rd};
    }

    // Roll until the distal body has turned by `delta` more.
    void roll(double delta, int steps) {
        const double ds = delta / steps / (1.0 / r_proximal + 1.0 / r_distal);
        double distal_arc = std::atan2(-state.distal_contact_body.x(), -state.distal_contact_body.y()) * r_distal;
        for (int i = 0; i < steps; ++i) {
            state.contact_angle += ds / r_proximal;
            state.orientation += ds / r_proximal + ds / r_distal;
            distal_arc += ds;
            const Eigen::Vector2d pc(r_proximal * std::sin(state.contact_angle),
                                     r_proximal * std::cos(state.contact_angle));
            // The distal material point in contact walks the opposite way
            // around its own circle (measured from its bottom point).
            const double beta = distal_arc / r_distal;
            const Eigen::Vector2d dc(-r_distal * std::sin(beta), -r_distal * std::cos(beta));
            state.proximal_path += (pc - state.proximal_contact).norm();
            state.distal_path += (dc - state.distal_contact_body).norm();
            state.proximal_contact = pc;
            state.distal_contact_body = dc;
        }
    }

    Eigen::Vector2d center() const {
        const double d = r_proximal + r_distal;
        return {d * std::sin(state.contact_angle), d * std::cos(state.contact_angle)};
    }
};

// Homogeneous-matrix helpers for hand-composed chains.
inline Eigen::Matrix4d rot_x(double a) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(1, 1) = std::cos(a);
    m(1, 2) = -std::sin(a);
    m(2, 1) = std::sin(a);
    m(2, 2) = std::cos(a);
    return m;
}

inline Eigen::Matrix4d rot_z(double a) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = std::cos(a);
    m(0, 1) = -std::sin(a);
    m(1, 0) = std::sin(a);
    m(1, 1) = std::cos(a);
    return m;
}

inline Eigen::Matrix4d trans(double x, double y, double z) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 3) = x;
    m(1, 3) = y;
    m(2, 3) = z;
    return m;
}

// Bit-at-a-time CRC-16, polynomial 0x8005, init 0, no reflection.
inline std::uint16_t crc16_bitwise(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0;
    for (std::uint8_t byte : data) {
        for (int bit = 7; bit >= 0; --bit) {
            const bool in = (byte >> bit) & 1U;
            const bool top = (crc >> 15) & 1U;
            crc = static_cast<std::uint16_t>(crc << 1);
            if (in != top) crc ^= 0x8005;
        }
    }
    return crc;
}

}  // namespace craft::oracle
