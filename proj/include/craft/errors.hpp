#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace craft {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the domain of a kinematic map (e.g. rolling angle beyond pi).
class DomainError : public Error {
public:
    using Error::Error;
};

class LimitError : public Error {
public:
    LimitError(std::string joint, double value, double lo, double hi)
        : Error("joint " + joint + " = " + std::to_string(value) + " outside [" +
                std::to_string(lo) + ", " + std::to_string(hi) + "]"),
          joint_(std::move(joint)) {}

    const std::string& joint() const noexcept { return joint_; }

private:
    std::string joint_;
};

class UnreachableError : public Error {
public:
    UnreachableError(const std::string& what, double best_residual)
        : Error(what + " (best residual " + std::to_string(best_residual) + " m)"),
          best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

private:
    double best_residual_;
};

// Invalid hand-spec, transmission or calibration configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Keypoint frame that cannot be turned into joint angles.
class FrameRejected : public Error {
public:
    using Error::Error;
};

class EncodeError : public Error {
public:
    using Error::Error;
};

class LoadError : public Error {
public:
    LoadError(const std::string& what, std::vector<std::string> names = {})
        : Error(join(what, names)), names_(std::move(names)) {}

    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    static std::string join(const std::string& what, const std::vector<std::string>& names) {
        std::string out = what;
        for (std::size_t i = 0; i < names.size(); ++i) {
            out += (i == 0 ? ": " : ", ");
            out += names[i];
        }
        return out;
    }

    std::vector<std::string> names_;
};

}  // namespace craft
