#pragma once

// Servo bus: Protocol-2.0-style frame codec, incremental stream parser, a
// virtual bus of simulated position servos, and a small client.
//
// Frame layout (normative for this repo):
//   FF FF FD 00 | id | len_lo len_hi | instruction | params (stuffed) | crc_lo crc_hi
// len = stuffed params + 3 (instruction + CRC). CRC-16 (poly 0x8005, init 0,
// no reflection) covers every byte from the header through the last param.
// Stuffing: each FF FF FD inside the params is followed by an extra FD.
// A Status frame carries the error byte as params[0].

#include <craft/errors.hpp>
#include <craft/json_util.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace craft::bus {

using Bytes = std::vector<std::uint8_t>;

enum class Instruction : std::uint8_t {
    Ping = 0x01,
    Read = 0x02,
    Write = 0x03,
    SyncRead = 0x82,
    SyncWrite = 0x83,
    Status = 0x55,
};

inline bool valid_instruction(std::uint8_t b) {
    switch (static_cast<Instruction>(b)) {
        case Instruction::Ping:
        case Instruction::Read:
        case Instruction::Write:
        case Instruction::SyncRead:
        case Instruction::SyncWrite:
        case Instruction::Status: return true;
    }
    return false;
}

inline constexpr std::uint8_t kBroadcastId = 0xFE;
inline constexpr std::uint8_t kMaxId = 252;
inline constexpr std::size_t kMaxParams = 1024;  // raw bytes, before stuffing
inline constexpr std::size_t kOverhead = 10;
inline constexpr std::array<std::uint8_t, 4> kHeader{0xFF, 0xFF, 0xFD, 0x00};

// Status error codes (low 7 bits of the error byte).
enum class StatusError : std::uint8_t {
    None = 0x00,
    ResultFail = 0x01,
    Instruction = 0x02,
    Crc = 0x03,
    DataRange = 0x04,
    DataLength = 0x05,
    DataLimit = 0x06,
    Access = 0x07,
};

struct BusFrame {
    std::uint8_t id{0};
    Instruction instruction{Instruction::Ping};
    Bytes params;
    std::uint16_t crc{0};  // filled by encode/decode; ignored for equality

    friend bool operator==(const BusFrame& a, const BusFrame& b) {
        return a.id == b.id && a.instruction == b.instruction && a.params == b.params;
    }
};

namespace detail {

inline constexpr std::array<std::uint16_t, 256> make_crc_table() {
    std::array<std::uint16_t, 256> t{};
    for (std::uint16_t i = 0; i < 256; ++i) {
        std::uint16_t c = static_cast<std::uint16_t>(i << 8);
        for (int k = 0; k < 8; ++k) c = static_cast<std::uint16_t>((c & 0x8000) ? (c << 1) ^ 0x8005 : c << 1);
        t[i] = c;
    }
    return t;
}

inline constexpr auto kCrcTable = make_crc_table();

}  // namespace detail

inline std::uint16_t crc16(std::span<const std::uint8_t> data, std::uint16_t crc = 0) {
    for (std::uint8_t b : data)
        crc = static_cast<std::uint16_t>((crc << 8) ^ detail::kCrcTable[((crc >> 8) ^ b) & 0xFF]);
    return crc;
}

inline Bytes stuff(std::span<const std::uint8_t> raw) {
    Bytes out;
    out.reserve(raw.size() + raw.size() / 3 + 1);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out.push_back(raw[i]);
        if (i >= 2 && raw[i - 2] == 0xFF && raw[i - 1] == 0xFF && raw[i] == 0xFD) out.push_back(0xFD);
    }
    return out;
}

// Returns nullopt if a stuffing byte is missing.
inline std::optional<Bytes> unstuff(std::span<const std::uint8_t> stuffed) {
    Bytes out;
    out.reserve(stuffed.size());
    for (std::size_t i = 0; i < stuffed.size(); ++i) {
        out.push_back(stuffed[i]);
        const auto n = out.size();
        if (n >= 3 && out[n - 3] == 0xFF && out[n - 2] == 0xFF && out[n - 1] == 0xFD) {
            if (i + 1 >= stuffed.size() || stuffed[i + 1] != 0xFD) return std::nullopt;
            ++i;
        }
    }
    return out;
}

inline Bytes encode_frame(const BusFrame& f) {
    if (f.params.size() > kMaxParams)
        throw EncodeError("params of " + std::to_string(f.params.size()) + " bytes exceed " + std::to_string(kMaxParams));
    if (f.id > kMaxId && f.id != kBroadcastId) throw EncodeError("invalid bus id " + std::to_string(f.id));
    const Bytes body = stuff(f.params);
    const std::size_t len = body.size() + 3;
    Bytes out(kHeader.begin(), kHeader.end());
    out.reserve(body.size() + kOverhead);
    out.push_back(f.id);
    out.push_back(static_cast<std::uint8_t>(len & 0xFF));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.push_back(static_cast<std::uint8_t>(f.instruction));
    out.insert(out.end(), body.begin(), body.end());
    const std::uint16_t crc = crc16(out);
    out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
    out.push_back(static_cast<std::uint8_t>(crc >> 8));
    return out;
}

struct ParserCounters {
    std::uint64_t frames{0};
    std::uint64_t crc_errors{0};
    std::uint64_t malformed{0};        // bad length, instruction or stuffing
    std::uint64_t bytes_discarded{0};  // skipped while hunting for a header
};

// Incremental decoder. Feed arbitrary chunks; complete valid frames come out
// in order. Partitioning the same byte stream differently yields the same
// frames and counters.
class StreamParser {
public:
    std::vector<BusFrame> feed(std::span<const std::uint8_t> bytes) {
        compact();
        buf_.insert(buf_.end(), bytes.begin(), bytes.end());
        std::vector<BusFrame> out;
        while (true) {
            if (!sync_to_header()) break;
            if (size() < 7) break;
            const std::uint8_t* b = head();
            const std::size_t len = b[5] | (static_cast<std::size_t>(b[6]) << 8);
            const std::uint8_t id = b[4];
            if (len < 3 || len > max_stuffed() + 3 || (id > kMaxId && id != kBroadcastId)) {
                ++counters_.malformed;
                drop(1);
                continue;
            }
            const std::size_t total = 7 + len;
            if (size() < total) break;
            const std::uint16_t crc = crc16(std::span(b, total - 2));
            const std::uint16_t wire = static_cast<std::uint16_t>(b[total - 2] | (b[total - 1] << 8));
            if (crc != wire) {
                ++counters_.crc_errors;
                drop(1);
                continue;
            }
            const std::uint8_t instr = b[7];
            auto params = unstuff(std::span(b + 8, len - 3));
            if (!valid_instruction(instr) || !params) {
                ++counters_.malformed;
                drop(1);
                continue;
            }
            out.push_back({id, static_cast<Instruction>(instr), std::move(*params), crc});
            ++counters_.frames;
            pos_ += total;
        }
        return out;
    }

    const ParserCounters& counters() const { return counters_; }
    std::size_t buffered() const { return size(); }

private:
    static constexpr std::size_t max_stuffed() { return kMaxParams + kMaxParams / 3 + 1; }

    const std::uint8_t* head() const { return buf_.data() + pos_; }
    std::size_t size() const { return buf_.size() - pos_; }

    // Discards bytes up to the next header candidate, keeping a partial
    // header at the end. True when the buffer starts with a full header.
    bool sync_to_header() {
        const std::uint8_t* b = head();
        const std::size_t n = size();
        std::size_t i = 0;
        while (i < n) {
            std::size_t k = 0;
            while (k < kHeader.size() && i + k < n && b[i + k] == kHeader[k]) ++k;
            if (k == kHeader.size() || i + k == n) break;
            ++i;
        }
        if (i > 0) drop(i);
        return size() >= kHeader.size();
    }

    void drop(std::size_t n) {
        counters_.bytes_discarded += n;
        pos_ += n;
    }

    void compact() {
        if (pos_ == 0) return;
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }

    Bytes buf_;
    std::size_t pos_{0};
    ParserCounters counters_;
};

// Convenience: decode a complete buffer with a fresh parser.
inline std::vector<BusFrame> decode_all(std::span<const std::uint8_t> bytes, ParserCounters* counters = nullptr) {
    StreamParser p;
    auto frames = p.feed(bytes);
    if (counters) *counters = p.counters();
    return frames;
}

// ---------------------------------------------------------------------------
// Little-endian helpers and instruction builders

inline void put_le(Bytes& b, std::uint32_t v, std::size_t width) {
    for (std::size_t k = 0; k < width; ++k) b.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

inline std::uint32_t get_le(std::span<const std::uint8_t> b, std::size_t width) {
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < width; ++k) v |= static_cast<std::uint32_t>(b[k]) << (8 * k);
    return v;
}

inline std::int32_t sign_extend(std::uint32_t v, std::size_t width) {
    if (width >= 4) return static_cast<std::int32_t>(v);
    const std::uint32_t bit = 1u << (8 * width - 1);
    return static_cast<std::int32_t>((v ^ bit)) - static_cast<std::int32_t>(bit);
}

inline BusFrame make_ping(std::uint8_t id) { return {id, Instruction::Ping, {}}; }

inline BusFrame make_read(std::uint8_t id, std::uint16_t address, std::uint16_t length) {
    BusFrame f{id, Instruction::Read, {}};
    put_le(f.params, address, 2);
    put_le(f.params, length, 2);
    return f;
}

inline BusFrame make_write(std::uint8_t id, std::uint16_t address, const Bytes& data) {
    BusFrame f{id, Instruction::Write, {}};
    put_le(f.params, address, 2);
    f.params.insert(f.params.end(), data.begin(), data.end());
    return f;
}

inline BusFrame make_sync_write(std::uint16_t address, std::uint16_t length,
                                const std::vector<std::pair<std::uint8_t, Bytes>>& items) {
    BusFrame f{kBroadcastId, Instruction::SyncWrite, {}};
    put_le(f.params, address, 2);
    put_le(f.params, length, 2);
    for (const auto& [id, data] : items) {
        if (data.size() != length) throw EncodeError("sync write item has wrong length");
        f.params.push_back(id);
        f.params.insert(f.params.end(), data.begin(), data.end());
    }
    return f;
}

inline BusFrame make_sync_read(std::uint16_t address, std::uint16_t length, const std::vector<std::uint8_t>& ids) {
    BusFrame f{kBroadcastId, Instruction::SyncRead, {}};
    put_le(f.params, address, 2);
    put_le(f.params, length, 2);
    f.params.insert(f.params.end(), ids.begin(), ids.end());
    return f;
}

inline BusFrame make_status(std::uint8_t id, StatusError err, const Bytes& data = {}) {
    BusFrame f{id, Instruction::Status, {}};
    f.params.reserve(data.size() + 1);
    f.params.push_back(static_cast<std::uint8_t>(err));
    for (std::uint8_t b : data) f.params.push_back(b);
    return f;
}

inline StatusError status_error(const BusFrame& f) {
    return f.params.empty() ? StatusError::ResultFail : static_cast<StatusError>(f.params[0] & 0x7F);
}

inline std::span<const std::uint8_t> status_data(const BusFrame& f) {
    return f.params.empty() ? std::span<const std::uint8_t>() : std::span(f.params).subspan(1);
}

// ---------------------------------------------------------------------------
// Control table

enum class Access { ReadOnly, ReadWrite };

struct Register {
    std::string name;
    std::uint16_t address{0};
    std::uint8_t width{1};
    Access access{Access::ReadOnly};
};

class RegisterMap {
public:
    explicit RegisterMap(std::vector<Register> regs) : regs_(std::move(regs)) {
        std::sort(regs_.begin(), regs_.end(), [](const auto& a, const auto& b) { return a.address < b.address; });
        for (std::size_t i = 0; i < regs_.size(); ++i) {
            const auto& r = regs_[i];
            if (r.width != 1 && r.width != 2 && r.width != 4)
                throw ConfigError("register " + r.name + " has width " + std::to_string(r.width));
            if (i > 0 && regs_[i - 1].address + regs_[i - 1].width > r.address)
                throw ConfigError("register " + r.name + " overlaps " + regs_[i - 1].name);
            for (std::size_t j = 0; j < i; ++j)
                if (regs_[j].name == r.name) throw ConfigError("duplicate register " + r.name);
        }
    }

    const std::vector<Register>& registers() const { return regs_; }

    const Register& at(std::string_view name) const {
        for (const auto& r : regs_)
            if (r.name == name) return r;
        throw ConfigError("unknown register " + std::string(name));
    }

    const Register* starting_at(std::uint16_t address) const {
        for (const auto& r : regs_)
            if (r.address == address) return &r;
        return nullptr;
    }

    // Registers exactly tiling [address, address + length), or empty.
    std::vector<const Register*> span(std::uint16_t address, std::uint16_t length) const {
        std::vector<const Register*> out;
        std::uint32_t at = address;
        const std::uint32_t end = static_cast<std::uint32_t>(address) + length;
        while (at < end) {
            const auto* r = starting_at(static_cast<std::uint16_t>(at));
            if (!r) return {};
            out.push_back(r);
            at += r->width;
        }
        if (at != end) return {};
        return out;
    }

private:
    std::vector<Register> regs_;
};

// XL330-style subset. Addresses vary by firmware; load a different table with
// register_map_from_json when talking to real hardware.
inline RegisterMap default_register_map() {
    return RegisterMap({
        {"ModelNumber", 0, 2, Access::ReadOnly},
        {"FirmwareVersion", 6, 1, Access::ReadOnly},
        {"Id", 7, 1, Access::ReadOnly},
        {"CurrentLimit", 38, 2, Access::ReadWrite},
        {"TorqueEnable", 64, 1, Access::ReadWrite},
        {"HardwareError", 70, 1, Access::ReadOnly},
        {"GoalCurrent", 102, 2, Access::ReadWrite},
        {"GoalPosition", 116, 4, Access::ReadWrite},
        {"PresentCurrent", 126, 2, Access::ReadOnly},
        {"PresentVelocity", 128, 4, Access::ReadOnly},
        {"PresentPosition", 132, 4, Access::ReadOnly},
        {"PresentTemperature", 146, 1, Access::ReadOnly},
    });
}

inline RegisterMap register_map_from_json(const json& j) {
    std::vector<Register> regs;
    for (const auto& jr : j.at("registers")) {
        const auto access = jr.value("access", std::string("r"));
        if (access != "r" && access != "rw") throw ConfigError("register access must be r or rw");
        regs.push_back({jr.at("name").get<std::string>(), jr.at("address").get<std::uint16_t>(),
                        jr.at("width").get<std::uint8_t>(), access == "rw" ? Access::ReadWrite : Access::ReadOnly});
    }
    return RegisterMap(std::move(regs));
}

// Units on the wire.
inline constexpr double kTicksPerRev = 4096.0;
inline constexpr double kRadPerTick = 2.0 * std::numbers::pi / kTicksPerRev;
inline constexpr double kVelocityUnit = 0.229 * 2.0 * std::numbers::pi / 60.0;  // rad/s per raw unit
inline constexpr std::uint16_t kModelNumber = 1200;

inline std::int32_t rad_to_ticks(double rad) { return static_cast<std::int32_t>(std::lround(rad / kRadPerTick)); }
inline double ticks_to_rad(std::int32_t ticks) { return ticks * kRadPerTick; }

// ---------------------------------------------------------------------------
// Virtual motor

struct MotorParams {
    double current_limit_ma{600.0};
    double torque_constant{0.35};   // N*m/A at the output shaft
    double max_velocity{10.0};      // rad/s
    double thermal_tau{300.0};      // s
    double thermal_derating{0.3};   // k_T: torque constant loss at thermal_state 1
    double thermal_gain{1.0};       // k_heat: steady thermal_state per ampere
    double sag_velocity{0.5};       // rad/s when the load overpowers the clamp
};

struct VirtualMotor {
    std::uint8_t id{1};
    MotorParams params;
    double goal_position{0.0};     // rad
    double present_position{0.0};  // rad
    double present_velocity{0.0};  // rad/s
    double present_current{0.0};   // mA
    double thermal_state{0.0};     // 0 = ambient
    double load_torque{0.0};       // N*m the motor must supply to hold; set by the plant
    bool torque_enabled{true};
    bool overloaded{false};

    double effective_torque_constant() const {
        return params.torque_constant * (1.0 - params.thermal_derating * thermal_state);
    }

    double holding_capacity() const { return effective_torque_constant() * params.current_limit_ma / 1000.0; }

    void step(double dt) {
        if (!(dt > 0.0)) throw DomainError("dt must be positive");
        const double before = present_position;
        const double capacity = holding_capacity();
        overloaded = torque_enabled && std::abs(load_torque) > capacity;
        if (!torque_enabled) {
            present_current = 0.0;
            if (load_torque != 0.0) present_position -= std::copysign(params.sag_velocity * dt, load_torque);
        } else {
            const double demand_ma = load_torque / effective_torque_constant() * 1000.0;
            present_current = std::clamp(demand_ma, -params.current_limit_ma, params.current_limit_ma);
            if (overloaded) {
                present_position -= std::copysign(params.sag_velocity * dt, load_torque);
            } else {
                const double err = goal_position - present_position;
                const double max_step = params.max_velocity * dt;
                present_position += std::clamp(err, -max_step, max_step);
            }
        }
        present_velocity = (present_position - before) / dt;
        const double target = params.thermal_gain * std::abs(present_current) / 1000.0;
        thermal_state += (target - thermal_state) * (1.0 - std::exp(-dt / params.thermal_tau));
    }
};

// ---------------------------------------------------------------------------
// Byte-stream transport and the virtual bus

class ByteStream {
public:
    virtual ~ByteStream() = default;
    virtual void write(std::span<const std::uint8_t> bytes) = 0;
    // Returns whatever response bytes are available.
    virtual Bytes read() = 0;
};

// Single-owner state machine. write() only enqueues (safe from any thread);
// read() and step() drain the queue under the same lock, answer from the
// control table, and step() then advances the motors.
class VirtualBus : public ByteStream {
public:
    explicit VirtualBus(std::size_t motor_count = 15, MotorParams params = {},
                        RegisterMap registers = default_register_map())
        : registers_(std::move(registers)) {
        for (std::size_t i = 0; i < motor_count; ++i) {
            VirtualMotor m;
            m.id = static_cast<std::uint8_t>(i + 1);
            m.params = params;
            motors_.push_back(m);
        }
    }

    void write(std::span<const std::uint8_t> bytes) override {
        std::lock_guard lock(mu_);
        inbound_.insert(inbound_.end(), bytes.begin(), bytes.end());
    }

    Bytes read() override {
        std::lock_guard lock(mu_);
        process_locked();
        Bytes out;
        out.swap(outbound_);
        return out;
    }

    // Processes pending requests, then advances every motor by dt.
    void step(double dt) {
        std::lock_guard lock(mu_);
        process_locked();
        for (auto& m : motors_) m.step(dt);
    }

    // Direct access for the plant side (load torques) and for inspection.
    template <class F>
    auto with_motors(F&& f) {
        std::lock_guard lock(mu_);
        return f(motors_);
    }

    std::vector<VirtualMotor> snapshot() const {
        std::lock_guard lock(mu_);
        return motors_;
    }

    ParserCounters counters() const {
        std::lock_guard lock(mu_);
        return parser_.counters();
    }

    // Fault injection: swallow the responses to the next n requests.
    void drop_next_responses(int n) {
        std::lock_guard lock(mu_);
        drop_responses_ = n;
    }

    const RegisterMap& registers() const { return registers_; }

private:
    VirtualMotor* find(std::uint8_t id) {
        for (auto& m : motors_)
            if (m.id == id) return &m;
        return nullptr;
    }

    void process_locked() {
        if (inbound_.empty()) return;
        const auto frames = parser_.feed(inbound_);
        inbound_.clear();
        for (const auto& f : frames) handle(f);
    }

    void respond(const BusFrame& f) {
        const auto bytes = encode_frame(f);
        outbound_.insert(outbound_.end(), bytes.begin(), bytes.end());
    }

    std::uint32_t read_register(const VirtualMotor& m, const Register& r) const {
        const auto& n = r.name;
        if (n == "ModelNumber") return kModelNumber;
        if (n == "FirmwareVersion") return 1;
        if (n == "Id") return m.id;
        if (n == "CurrentLimit") return static_cast<std::uint32_t>(std::lround(m.params.current_limit_ma));
        if (n == "TorqueEnable") return m.torque_enabled ? 1 : 0;
        if (n == "HardwareError") return m.overloaded ? 0x20 : 0;
        if (n == "GoalPosition") return static_cast<std::uint32_t>(rad_to_ticks(m.goal_position));
        if (n == "PresentPosition") return static_cast<std::uint32_t>(rad_to_ticks(m.present_position));
        if (n == "PresentCurrent")
            return static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(m.present_current)));
        if (n == "PresentVelocity")
            return static_cast<std::uint32_t>(static_cast<std::int32_t>(std::lround(m.present_velocity / kVelocityUnit)));
        if (n == "PresentTemperature")
            return static_cast<std::uint32_t>(std::lround(25.0 + 40.0 * m.thermal_state));
        return 0;
    }

    // Returns false when the value is out of range for the register.
    bool write_register(VirtualMotor& m, const Register& r, std::uint32_t raw) {
        const auto& n = r.name;
        if (n == "GoalPosition") {
            m.goal_position = ticks_to_rad(sign_extend(raw, 4));
        } else if (n == "TorqueEnable") {
            if (raw > 1) return false;
            m.torque_enabled = raw == 1;
        } else if (n == "CurrentLimit") {
            if (raw == 0 || raw > 1750) return false;
            m.params.current_limit_ma = raw;
        }
        return true;
    }

    std::optional<Bytes> read_block(const VirtualMotor& m, std::uint16_t address, std::uint16_t length) const {
        const auto regs = registers_.span(address, length);
        if (regs.empty()) return std::nullopt;
        Bytes data;
        for (const auto* r : regs) put_le(data, read_register(m, *r), r->width);
        return data;
    }

    StatusError write_block(VirtualMotor& m, std::uint16_t address, std::span<const std::uint8_t> data) {
        if (data.empty()) return StatusError::DataLength;
        const auto regs = registers_.span(address, static_cast<std::uint16_t>(data.size()));
        if (regs.empty()) return StatusError::Access;
        for (const auto* r : regs)
            if (r->access != Access::ReadWrite) return StatusError::Access;
        std::size_t off = 0;
        for (const auto* r : regs) {
            if (!write_register(m, *r, get_le(data.subspan(off, r->width), r->width))) return StatusError::DataRange;
            off += r->width;
        }
        return StatusError::None;
    }

    void handle(const BusFrame& f) {
        const bool silent = drop_responses_ > 0;
        if (f.instruction != Instruction::Status && drop_responses_ > 0) --drop_responses_;
        auto reply = [&](const BusFrame& s) {
            if (!silent) respond(s);
        };
        const auto& p = f.params;
        switch (f.instruction) {
            case Instruction::Ping: {
                Bytes data;
                put_le(data, kModelNumber, 2);
                data.push_back(1);
                if (f.id == kBroadcastId) {
                    for (const auto& m : motors_) reply(make_status(m.id, StatusError::None, data));
                } else if (find(f.id)) {
                    reply(make_status(f.id, StatusError::None, data));
                }
                return;
            }
            case Instruction::Read: {
                auto* m = find(f.id);
                if (!m) return;
                if (p.size() != 4) return reply(make_status(f.id, StatusError::DataLength));
                const auto block = read_block(*m, static_cast<std::uint16_t>(get_le(p, 2)),
                                              static_cast<std::uint16_t>(get_le(std::span(p).subspan(2), 2)));
                if (!block) return reply(make_status(f.id, StatusError::Access));
                return reply(make_status(f.id, StatusError::None, *block));
            }
            case Instruction::Write: {
                auto* m = find(f.id);
                if (!m) return;
                if (p.size() < 3) return reply(make_status(f.id, StatusError::DataLength));
                const auto err = write_block(*m, static_cast<std::uint16_t>(get_le(p, 2)), std::span(p).subspan(2));
                return reply(make_status(f.id, err));
            }
            case Instruction::SyncWrite: {
                if (p.size() < 4) return;
                const auto address = static_cast<std::uint16_t>(get_le(p, 2));
                const auto length = static_cast<std::uint16_t>(get_le(std::span(p).subspan(2), 2));
                if (length == 0 || (p.size() - 4) % (length + 1u) != 0) return;
                for (std::size_t off = 4; off < p.size(); off += length + 1u)
                    if (auto* m = find(p[off])) write_block(*m, address, std::span(p).subspan(off + 1, length));
                return;
            }
            case Instruction::SyncRead: {
                if (p.size() < 4) return;
                const auto address = static_cast<std::uint16_t>(get_le(p, 2));
                const auto length = static_cast<std::uint16_t>(get_le(std::span(p).subspan(2), 2));
                for (std::size_t off = 4; off < p.size(); ++off) {
                    const auto* m = find(p[off]);
                    if (!m) continue;
                    const auto block = read_block(*m, address, length);
                    reply(block ? make_status(m->id, StatusError::None, *block) : make_status(m->id, StatusError::Access));
                }
                return;
            }
            case Instruction::Status: return;  // not addressed to motors
        }
    }

    mutable std::mutex mu_;
    RegisterMap registers_;
    std::vector<VirtualMotor> motors_;
    StreamParser parser_;
    Bytes inbound_;
    Bytes outbound_;
    int drop_responses_{0};
};

// ---------------------------------------------------------------------------
// Client

class BusTimeout : public Error {
public:
    using Error::Error;
};

class BusStatusError : public Error {
public:
    BusStatusError(std::uint8_t id, StatusError err)
        : Error("motor " + std::to_string(id) + " returned status error " + std::to_string(static_cast<int>(err))),
          id_(id), err_(err) {}
    std::uint8_t id() const { return id_; }
    StatusError error() const { return err_; }

private:
    std::uint8_t id_;
    StatusError err_;
};

// Request/response helper over any ByteStream. Transactions that expect
// replies throw BusTimeout when some are missing.
class BusClient {
public:
    BusClient(ByteStream& stream, RegisterMap registers = default_register_map())
        : stream_(stream), registers_(std::move(registers)) {}

    void send(const BusFrame& f) {
        const auto bytes = encode_frame(f);
        stream_.write(bytes);
        ++sent_;
    }

    std::vector<BusFrame> receive() { return parser_.feed(stream_.read()); }

    // Sends f and collects one status per expected id.
    std::map<std::uint8_t, BusFrame> transact(const BusFrame& f, const std::vector<std::uint8_t>& expect) {
        send(f);
        std::map<std::uint8_t, BusFrame> got;
        for (auto& s : receive())
            if (s.instruction == Instruction::Status) got[s.id] = std::move(s);
        for (auto id : expect)
            if (!got.count(id)) throw BusTimeout("no status from motor " + std::to_string(id));
        return got;
    }

    bool ping(std::uint8_t id) {
        try {
            transact(make_ping(id), {id});
            return true;
        } catch (const BusTimeout&) {
            return false;
        }
    }

    void write_register(std::uint8_t id, std::string_view name, std::int64_t value) {
        const auto& r = registers_.at(name);
        Bytes data;
        put_le(data, static_cast<std::uint32_t>(value), r.width);
        const auto got = transact(make_write(id, r.address, data), {id});
        if (auto e = status_error(got.at(id)); e != StatusError::None) throw BusStatusError(id, e);
    }

    std::int32_t read_register(std::uint8_t id, std::string_view name) {
        const auto& r = registers_.at(name);
        const auto got = transact(make_read(id, r.address, r.width), {id});
        const auto& s = got.at(id);
        if (auto e = status_error(s); e != StatusError::None) throw BusStatusError(id, e);
        const auto data = status_data(s);
        if (data.size() != r.width) throw BusTimeout("short read from motor " + std::to_string(id));
        return sign_extend(get_le(data, r.width), r.width);
    }

    // Goal positions in rad, keyed by motor id. No status is returned.
    void sync_write_goal_positions(const std::map<std::uint8_t, double>& goals) {
        const auto& r = registers_.at("GoalPosition");
        std::vector<std::pair<std::uint8_t, Bytes>> items;
        for (const auto& [id, rad] : goals) {
            Bytes b;
            put_le(b, static_cast<std::uint32_t>(rad_to_ticks(rad)), r.width);
            items.emplace_back(id, std::move(b));
        }
        send(make_sync_write(r.address, r.width, items));
    }

    // Reads one register from many motors; values sign-extended raw units.
    std::map<std::uint8_t, std::int32_t> sync_read(std::string_view name, const std::vector<std::uint8_t>& ids) {
        const auto& r = registers_.at(name);
        const auto got = transact(make_sync_read(r.address, r.width, ids), ids);
        std::map<std::uint8_t, std::int32_t> out;
        for (auto id : ids) {
            const auto& s = got.at(id);
            if (auto e = status_error(s); e != StatusError::None) throw BusStatusError(id, e);
            const auto data = status_data(s);
            if (data.size() != r.width) throw BusTimeout("short sync read from motor " + std::to_string(id));
            out[id] = sign_extend(get_le(data, r.width), r.width);
        }
        return out;
    }

    std::map<std::uint8_t, double> sync_read_positions(const std::vector<std::uint8_t>& ids) {
        std::map<std::uint8_t, double> out;
        for (const auto& [id, raw] : sync_read("PresentPosition", ids)) out[id] = ticks_to_rad(raw);
        return out;
    }

    std::map<std::uint8_t, double> sync_read_currents(const std::vector<std::uint8_t>& ids) {
        std::map<std::uint8_t, double> out;
        for (const auto& [id, raw] : sync_read("PresentCurrent", ids)) out[id] = raw;
        return out;
    }

    std::uint64_t frames_sent() const { return sent_; }
    const ParserCounters& counters() const { return parser_.counters(); }

private:
    ByteStream& stream_;
    RegisterMap registers_;
    StreamParser parser_;
    std::uint64_t sent_{0};
};

inline std::vector<std::uint8_t> all_motor_ids(std::size_t count = 15) {
    std::vector<std::uint8_t> ids;
    for (std::size_t i = 1; i <= count; ++i) ids.push_back(static_cast<std::uint8_t>(i));
    return ids;
}

}  // namespace craft::bus
