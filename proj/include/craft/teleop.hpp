#pragma once

// Teleoperation runtime: keypoint ingest, the fixed-rate control loop
// (retarget, smooth, couple, map to spools, SyncWrite), state fan-out and
// session recording/replay. Networking lives in teleop_net.hpp.

#include <craft/grasp_library.hpp>
#include <craft/hand_spec_io.hpp>
#include <craft/motor_bus.hpp>
#include <craft/retargeting.hpp>
#include <craft/sim_engine.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <variant>

namespace craft {

class CommandRejected : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Hand spec lookup and fingerprints

inline constexpr const char* kSpecEnvVar = "CRAFT_HAND_SPEC";

// Explicit path, else $CRAFT_HAND_SPEC, else the built-in default.
inline HandDescription resolve_hand_description(const std::string& path = {}) {
    if (!path.empty()) return io::load_hand_description(path);
    if (const char* env = std::getenv(kSpecEnvVar); env && *env) return io::load_hand_description(env);
    return default_hand_description();
}

inline std::string spec_hash(const HandDescription& h) { return io::fingerprint(io::hand_description_to_json(h)); }
inline std::string profile_hash(const CalibrationProfile& p) { return io::fingerprint(io::profile_to_json(p)); }

// Profile for runs without keypoint input: robot limits from the hand spec and
// the default operator envelope as a placeholder.
inline CalibrationProfile uncalibrated_profile(const HandSpec& spec) {
    auto p = profile_from_spec(spec);
    p.operator_range = default_operator_envelope();
    return p;
}

// Profile whose robot side is the hand spec and whose operator side is measured
// from a calibration stream.
inline CalibrationProfile calibrate_profile(const HandSpec& spec, const std::vector<KeypointFrame>& frames,
                                            double ema_alpha = 0.3) {
    auto p = profile_from_spec(spec);
    const auto cal = calibrate_operator(frames);
    if (!cal.under_calibrated.empty()) {
        std::string names;
        for (const auto& n : cal.under_calibrated) names += (names.empty() ? "" : ", ") + n;
        throw ConfigError("calibration stream leaves joints under-calibrated: " + names);
    }
    p.operator_range = cal.range.range;
    p.ema_alpha = ema_alpha;
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Queues

// Many producers, one consumer. push never blocks: a full queue loses its
// oldest entry.
template <class T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity = 64) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("queue capacity must be positive");
    }

    void push(T v) {
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            if (items_.size() == capacity_) {
                items_.pop_front();
                ++dropped_;
            }
            items_.push_back(std::move(v));
        }
        cv_.notify_one();
    }

    std::optional<T> try_pop() {
        std::lock_guard lock(mu_);
        return pop_locked();
    }

    // Empty on timeout, or once closed and drained.
    std::optional<T> pop_for(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
        return pop_locked();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_;
    }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }
    std::uint64_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }
    std::size_t capacity() const { return capacity_; }

private:
    std::optional<T> pop_locked() {
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    const std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> items_;
    std::uint64_t dropped_{0};
    bool closed_{false};
};

// Latest-value slot between the ingest thread and the control loop.
template <class T>
class Mailbox {
public:
    void post(T v) {
        std::lock_guard lock(mu_);
        value_ = std::move(v);
        ++seq_;
    }

    // The current value if it is newer than `seen`.
    std::optional<T> take_if_newer(std::uint64_t& seen) const {
        std::lock_guard lock(mu_);
        if (seq_ == seen || !value_) return std::nullopt;
        seen = seq_;
        return value_;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_;
    }

private:
    mutable std::mutex mu_;
    std::optional<T> value_;
    std::uint64_t seq_{0};
    bool closed_{false};
};

inline constexpr std::size_t kSubscriberQueue = 64;

// Fan-out of serialized state messages. publish never blocks on a subscriber.
class StateFanout {
public:
    using Queue = BoundedQueue<std::string>;

    std::shared_ptr<Queue> subscribe(std::size_t capacity = kSubscriberQueue) {
        auto q = std::make_shared<Queue>(capacity);
        std::lock_guard lock(mu_);
        subs_.push_back(q);
        return q;
    }

    void unsubscribe(const std::shared_ptr<Queue>& q) {
        q->close();
        std::lock_guard lock(mu_);
        std::erase(subs_, q);
    }

    void publish(const std::string& msg) {
        std::lock_guard lock(mu_);
        for (auto& q : subs_) q->push(msg);
        ++published_;
    }

    void close_all() {
        std::lock_guard lock(mu_);
        for (auto& q : subs_) q->close();
        subs_.clear();
    }

    std::size_t subscribers() const {
        std::lock_guard lock(mu_);
        return subs_.size();
    }
    std::uint64_t published() const {
        std::lock_guard lock(mu_);
        return published_;
    }

private:
    mutable std::mutex mu_;
    std::vector<std::shared_ptr<Queue>> subs_;
    std::uint64_t published_{0};
};

// ---------------------------------------------------------------------------
// Messages

inline constexpr int kStateVersion = 1;

struct StateFlags {
    bool stale{false};       // no keypoint frame for longer than the stale window
    bool fault{false};       // bus retries exhausted; targets frozen
    bool saturation{false};  // spool positions map outside the joint limits
    bool overload{false};
    bool clamped{false};     // target clamped to the hand's limits this tick
};

struct StateMessage {
    std::uint64_t seq{0};
    double t{0.0};
    std::string mode{"idle"};  // idle | teleop | manual | replay
    JointAngles q;             // from the motor shafts
    PerActive<double> targets{};
    MotorAngles motor_positions{};
    PerActive<double> currents_ma{};
    StateFlags flags;
    double latency_ms{0.0};  // compute time of the tick
};

namespace io {

template <std::size_t N>
json array_to_json(const std::array<double, N>& a) {
    return json(std::vector<double>(a.begin(), a.end()));
}

template <std::size_t N>
std::array<double, N> array_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != N)
        throw LoadError(std::string(what) + " needs " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = j.at(i).get<double>();
    return out;
}

inline json state_to_json(const StateMessage& s) {
    return {{"type", "state"},
            {"version", kStateVersion},
            {"seq", s.seq},
            {"t", s.t},
            {"mode", s.mode},
            {"q", array_to_json(s.q.values())},
            {"targets", array_to_json(s.targets)},
            {"motors", array_to_json(s.motor_positions)},
            {"currents_ma", array_to_json(s.currents_ma)},
            {"flags",
             {{"stale", s.flags.stale},
              {"fault", s.flags.fault},
              {"saturation", s.flags.saturation},
              {"overload", s.flags.overload},
              {"clamped", s.flags.clamped}}},
            {"latency_ms", s.latency_ms}};
}

inline StateMessage state_from_json(const json& j) {
    try {
        if (j.value("type", std::string()) != "state") throw LoadError("not a state message");
        if (j.value("version", 0) != kStateVersion) throw LoadError("unsupported state version");
        StateMessage s;
        s.seq = j.at("seq").get<std::uint64_t>();
        s.t = j.at("t").get<double>();
        s.mode = j.at("mode").get<std::string>();
        s.q.values() = array_from_json<kJointCount>(j.at("q"), "q");
        s.targets = array_from_json<kActiveCount>(j.at("targets"), "targets");
        s.motor_positions = array_from_json<kActiveCount>(j.at("motors"), "motors");
        s.currents_ma = array_from_json<kActiveCount>(j.at("currents_ma"), "currents_ma");
        const auto& f = j.at("flags");
        s.flags = {f.at("stale").get<bool>(), f.at("fault").get<bool>(), f.at("saturation").get<bool>(),
                   f.at("overload").get<bool>(), f.at("clamped").get<bool>()};
        s.latency_ms = j.at("latency_ms").get<double>();
        return s;
    } catch (const json::exception& e) {
        throw LoadError(std::string("state message: ") + e.what());
    }
}

}  // namespace io

// One SyncWrite: the joint targets and the spool goals derived from them.
struct CommandRecord {
    std::uint64_t tick{0};
    double t{0.0};
    PerActive<double> joints{};
    MotorAngles motors{};

    friend bool operator==(const CommandRecord&, const CommandRecord&) = default;
};

namespace io {

inline json command_to_json(const CommandRecord& c) {
    return {{"kind", "command"},
            {"tick", c.tick},
            {"t", c.t},
            {"joints", array_to_json(c.joints)},
            {"motors", array_to_json(c.motors)}};
}

inline CommandRecord command_from_json(const json& j) {
    CommandRecord c;
    c.tick = j.at("tick").get<std::uint64_t>();
    c.t = j.at("t").get<double>();
    c.joints = array_from_json<kActiveCount>(j.at("joints"), "joints");
    c.motors = array_from_json<kActiveCount>(j.at("motors"), "motors");
    return c;
}

// One record per line; two runs agree bit for bit iff these strings match.
inline std::string command_log_text(const std::vector<CommandRecord>& log) {
    std::string out;
    for (const auto& c : log) out += command_to_json(c).dump() + "\n";
    return out;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Console commands

struct JointCommand {
    std::map<JointId, double> targets;  // active joints; the rest keep their target
};
struct GraspCommand {
    std::string name;
};
enum class ReplayAction { Play, Pause, Stop };
struct ReplayCommand {
    ReplayAction action{ReplayAction::Play};
};
struct ResetCommand {};

using Command = std::variant<JointCommand, GraspCommand, ReplayCommand, ResetCommand>;

// {"type": "joints", "targets": {"index.mcp_flex": 0.5}} | {"type": "grasp", "name": ...}
// | {"type": "replay", "action": "play|pause|stop"} | {"type": "reset"}
inline Command parse_command(const json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        if (type == "joints") {
            JointCommand c;
            for (const auto& [name, v] : j.at("targets").items()) {
                const auto id = parse_joint(name);
                if (!id) throw CommandRejected("unknown joint '" + name + "'");
                if (id->slot == Slot::Dip) throw CommandRejected(name + " follows its pip and cannot be commanded");
                if (!v.is_number()) throw CommandRejected(name + " needs a number");
                c.targets[*id] = v.get<double>();
            }
            if (c.targets.empty()) throw CommandRejected("joints command without targets");
            return c;
        }
        if (type == "grasp") return GraspCommand{j.at("name").get<std::string>()};
        if (type == "replay") {
            const auto a = j.at("action").get<std::string>();
            if (a == "play") return ReplayCommand{ReplayAction::Play};
            if (a == "pause") return ReplayCommand{ReplayAction::Pause};
            if (a == "stop") return ReplayCommand{ReplayAction::Stop};
            throw CommandRejected("unknown replay action '" + a + "'");
        }
        if (type == "reset") return ResetCommand{};
        throw CommandRejected("unknown command type '" + type + "'");
    } catch (const json::exception& e) {
        throw CommandRejected(std::string("malformed command: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Virtual plant

// Virtual bus plus the quasi-static hand: each advance reads the shafts,
// loads every motor with the torque it must supply and steps the motors.
class VirtualHand {
public:
    explicit VirtualHand(const HandDescription& hand, SimParams params = {}, const JointAngles& q0 = JointAngles())
        : model_{hand.spec, hand.transmission, params}, bus_(kActiveCount, params.motor) {
        q_ = project_coupling(q0);
        check_pose(model_.spec, q_);
        const auto spools = joint_to_motor(model_.transmission, q_);
        bus_.with_motors([&](auto& ms) {
            for (std::size_t i = 0; i < kActiveCount; ++i) ms[i].goal_position = ms[i].present_position = spools[i];
            return 0;
        });
    }

    bus::VirtualBus& bus() { return bus_; }
    const JointAngles& q() const { return q_; }
    void set_tip_forces(const TipForces& f) { forces_ = f; }

    void advance(double dt) {
        const auto motors = bus_.snapshot();
        MotorAngles spools{};
        for (std::size_t i = 0; i < kActiveCount; ++i) spools[i] = motors[i].present_position;
        bool saturated = false, slack = false;
        const JointAngles q = detail::compliant_pose(model_, spools, forces_, saturated);
        const auto torques = detail::required_motor_torques(model_, q, forces_, motors, slack);
        bus_.with_motors([&](auto& ms) {
            for (std::size_t i = 0; i < kActiveCount; ++i) ms[i].load_torque = torques[i];
            return 0;
        });
        bus_.step(dt);
        const auto after = bus_.snapshot();
        for (std::size_t i = 0; i < kActiveCount; ++i) spools[i] = after[i].present_position;
        q_ = detail::compliant_pose(model_, spools, forces_, saturated);
    }

private:
    SimModel model_;
    bus::VirtualBus bus_;
    JointAngles q_;
    TipForces forces_ = zero_tip_forces();
};

// ---------------------------------------------------------------------------
// Control loop

struct PipelineConfig {
    double rate_hz{30.0};
    double stale_after{0.2};  // s without a fresh frame before targets are held
    int bus_retries{3};
    double min_confidence{0.5};
};

namespace io {

inline json pipeline_config_to_json(const PipelineConfig& c) {
    return {{"rate_hz", c.rate_hz},
            {"stale_after", c.stale_after},
            {"bus_retries", c.bus_retries},
            {"min_confidence", c.min_confidence}};
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    c.rate_hz = j.value("rate_hz", c.rate_hz);
    c.stale_after = j.value("stale_after", c.stale_after);
    c.bus_retries = j.value("bus_retries", c.bus_retries);
    c.min_confidence = j.value("min_confidence", c.min_confidence);
    return c;
}

}  // namespace io

struct PipelineCounters {
    std::uint64_t ticks{0};
    std::uint64_t commands{0};
    std::uint64_t frames_used{0};
    std::uint64_t frames_rejected{0};
    std::uint64_t stale_ticks{0};
    std::uint64_t bus_timeouts{0};
};

class Pipeline {
public:
    struct Tick {
        std::optional<CommandRecord> command;  // empty while faulted
        StateMessage state;
    };

    // `plant` advances the physical side by one period between the write and
    // the read-back; empty for real hardware.
    Pipeline(HandDescription hand, CalibrationProfile profile, PipelineConfig cfg, bus::ByteStream& stream,
             std::function<void(double)> plant = {})
        : hand_(std::move(hand)), profile_(std::move(profile)), cfg_(cfg), client_(stream), plant_(std::move(plant)),
          ids_(bus::all_motor_ids(kActiveCount)) {
        profile_.validate();
        if (!(cfg_.rate_hz > 0.0)) throw ConfigError("control rate must be positive");
        if (!(cfg_.stale_after > 0.0)) throw ConfigError("stale window must be positive");
        if (cfg_.bus_retries < 0) throw ConfigError("bus retries must be >= 0");
        if (!read_back()) throw bus::BusTimeout("hand does not answer on the bus");
        target_ = state_.q;
    }

    const HandDescription& hand() const { return hand_; }
    const CalibrationProfile& profile() const { return profile_; }
    const PipelineConfig& config() const { return cfg_; }
    double period() const { return 1.0 / cfg_.rate_hz; }
    const PipelineCounters& counters() const { return counters_; }
    bool faulted() const { return faulted_; }
    const JointAngles& target() const { return target_; }

    // With an input attached a missing frame stream marks the state stale;
    // the stale window starts when input becomes expected.
    void set_input_expected(bool expected, double now) {
        if (expected && !input_expected_) last_input_ = last_input_ ? std::max(*last_input_, now) : now;
        input_expected_ = expected;
    }
    void set_mode(std::string mode) { mode_ = std::move(mode); }

    Tick tick(std::uint64_t index, double now, const std::optional<KeypointFrame>& frame, double arrival) {
        const auto start = std::chrono::steady_clock::now();
        ++counters_.ticks;
        bool clamped = false;
        if (frame && !faulted_) ingest(*frame, arrival);
        const bool stale = input_expected_ && (!last_input_ || now - *last_input_ > cfg_.stale_after);
        if (stale) ++counters_.stale_ticks;

        const auto& spec = hand_.spec;
        JointAngles goal = target_;
        for (JointId id : active_joints()) {
            const double c = spec.joint(id).limits.clamp(goal[id]);
            clamped = clamped || c != goal[id];
            goal[id] = c;
        }
        goal = project_coupling(goal);
        target_ = goal;

        Tick out;
        if (!faulted_) {
            CommandRecord c;
            c.tick = index;
            c.t = now;
            c.joints = goal.active();
            c.motors = joint_to_motor(hand_.transmission, goal);
            std::map<std::uint8_t, double> goals;
            for (std::size_t i = 0; i < kActiveCount; ++i) goals[ids_[i]] = c.motors[i];
            client_.sync_write_goal_positions(goals);
            ++counters_.commands;
            out.command = c;
            if (plant_) plant_(period());
            if (!read_back()) faulted_ = true;
        } else if (plant_) {
            plant_(period());
        }

        state_.seq = index;
        state_.t = now;
        state_.mode = mode_;
        state_.targets = goal.active();
        state_.flags.stale = stale;
        state_.flags.fault = faulted_;
        state_.flags.clamped = clamped;
        state_.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        out.state = state_;
        return out;
    }

    // Console commands; rejected commands leave the target untouched.
    void apply(const Command& cmd, const GraspLibrary* grasps) {
        if (std::holds_alternative<ResetCommand>(cmd)) {
            if (!read_back()) throw CommandRejected("bus still not answering");
            faulted_ = false;
            return;
        }
        if (faulted_) throw CommandRejected("bus fault: targets frozen until reset");
        if (const auto* j = std::get_if<JointCommand>(&cmd)) {
            JointAngles next = target_;
            for (const auto& [id, v] : j->targets) {
                const auto& lim = hand_.spec.joint(id).limits;
                if (!std::isfinite(v) || !lim.contains(v))
                    throw CommandRejected(joint_name(id) + " = " + std::to_string(v) + " outside [" +
                                          std::to_string(lim.min) + ", " + std::to_string(lim.max) + "]");
                next[id] = v;
            }
            target_ = project_coupling(next);
            mode_ = "manual";
        } else if (const auto* g = std::get_if<GraspCommand>(&cmd)) {
            if (!grasps) throw CommandRejected("no grasp library loaded");
            const auto* preset = grasps->find(g->name);
            if (!preset) throw CommandRejected("unknown grasp '" + g->name + "'");
            check_pose(hand_.spec, preset->q);
            target_ = project_coupling(preset->q);
            mode_ = "manual";
        } else {
            throw CommandRejected("replay control is handled by the service");
        }
    }

private:
    void ingest(const KeypointFrame& frame, double arrival) {
        if (!(frame.confidence >= cfg_.min_confidence)) {
            ++counters_.frames_rejected;
            return;
        }
        JointAngles raw;
        try {
            raw = retarget(profile_, keypoints_to_angles(frame));
        } catch (const FrameRejected&) {
            ++counters_.frames_rejected;
            return;
        }
        ++counters_.frames_used;
        // The first frame passes through; later ones are smoothed against the
        // current target, whatever set it.
        target_ = smoothing_ ? smooth(target_, raw, profile_.ema_alpha) : raw;
        smoothing_ = true;
        last_input_ = arrival;
        if (mode_ != "replay") mode_ = "teleop";
    }

    // Positions and currents, retrying timeouts; false once retries run out.
    bool read_back() {
        for (int attempt = 0;; ++attempt) {
            try {
                const auto pos = client_.sync_read_positions(ids_);
                const auto cur = client_.sync_read_currents(ids_);
                for (std::size_t i = 0; i < kActiveCount; ++i) {
                    state_.motor_positions[i] = pos.at(ids_[i]);
                    state_.currents_ma[i] = cur.at(ids_[i]);
                }
                const auto sol = motor_to_joint(hand_.spec, hand_.transmission, state_.motor_positions);
                state_.q = sol.q;
                state_.flags.saturation = sol.saturated;
                double limit = std::numeric_limits<double>::infinity();
                if (plant_limit_ma_) limit = *plant_limit_ma_;
                state_.flags.overload = false;
                for (double c : state_.currents_ma) state_.flags.overload = state_.flags.overload || std::abs(c) >= limit;
                return true;
            } catch (const bus::BusTimeout&) {
                ++counters_.bus_timeouts;
                if (attempt >= cfg_.bus_retries) return false;
            }
        }
    }

public:
    // Current at which a motor counts as overloaded in the state flags.
    void set_current_limit(double ma) { plant_limit_ma_ = ma; }

private:
    HandDescription hand_;
    CalibrationProfile profile_;
    PipelineConfig cfg_;
    bus::BusClient client_;
    std::function<void(double)> plant_;
    std::vector<std::uint8_t> ids_;
    StateMessage state_;
    JointAngles target_;
    std::optional<double> last_input_;
    std::optional<double> plant_limit_ma_;
    bool smoothing_{false};
    bool input_expected_{false};
    bool faulted_{false};
    std::string mode_{"idle"};
    PipelineCounters counters_;
};

// ---------------------------------------------------------------------------
// Sources

class KeypointSource {
public:
    struct Arrival {
        KeypointFrame frame;
        double at{0.0};
    };
    virtual ~KeypointSource() = default;
    // Latest frame that arrived by `now` and was not returned before.
    virtual std::optional<Arrival> poll(double now) = 0;
    virtual bool finished(double now) const = 0;
    // False while input is intentionally absent (paused playback).
    virtual bool expecting(double) const { return true; }
};

// Recorded frames arriving at their own timestamps (plus `offset`).
class RecordedSource : public KeypointSource {
public:
    explicit RecordedSource(std::vector<KeypointFrame> frames, double offset = 0.0)
        : frames_(std::move(frames)), offset_(offset) {
        for (std::size_t i = 1; i < frames_.size(); ++i)
            if (!(frames_[i].t > frames_[i - 1].t)) throw ConfigError("recorded frames must have increasing t");
    }

    std::optional<Arrival> poll(double now) override {
        std::optional<Arrival> out;
        while (next_ < frames_.size() && frames_[next_].t + offset_ <= now) {
            out = Arrival{frames_[next_], frames_[next_].t + offset_};
            ++next_;
        }
        return out;
    }

    bool finished(double now) const override {
        return next_ == frames_.size() && (frames_.empty() || now >= frames_.back().t + offset_);
    }

    double start() const { return frames_.empty() ? 0.0 : frames_.front().t + offset_; }
    std::size_t delivered() const { return next_; }

private:
    std::vector<KeypointFrame> frames_;
    double offset_;
    std::size_t next_{0};
};

// Live frames posted by an ingest thread; finished once the sender closes.
class LiveSource : public KeypointSource {
public:
    void post(const KeypointFrame& f, double arrival) { box_.post({f, arrival}); }
    void close() { box_.close(); }

    std::optional<Arrival> poll(double) override { return box_.take_if_newer(seen_); }
    bool finished(double) const override { return box_.closed(); }

private:
    Mailbox<Arrival> box_;
    std::uint64_t seen_{0};
};

// Server-side playback of a recorded stream under console control. Starts
// paused; stop rewinds. Never finishes on its own.
class ReplaySource : public KeypointSource {
public:
    explicit ReplaySource(std::vector<KeypointFrame> frames) : frames_(std::move(frames)) {
        if (frames_.empty()) throw ConfigError("replay needs at least one keypoint frame");
        for (std::size_t i = 1; i < frames_.size(); ++i)
            if (!(frames_[i].t > frames_[i - 1].t)) throw ConfigError("recorded frames must have increasing t");
    }

    void control(ReplayAction a, double now) {
        std::lock_guard lock(mu_);
        switch (a) {
            case ReplayAction::Play:
                if (!playing_) anchor_ = now - position_;
                playing_ = true;
                break;
            case ReplayAction::Pause:
                if (playing_) position_ = now - anchor_;
                playing_ = false;
                break;
            case ReplayAction::Stop:
                playing_ = false;
                position_ = 0.0;
                next_ = 0;
                break;
        }
    }

    std::optional<Arrival> poll(double now) override {
        std::lock_guard lock(mu_);
        if (!playing_) return std::nullopt;
        const double pos = now - anchor_;
        std::optional<Arrival> out;
        while (next_ < frames_.size() && frames_[next_].t - frames_.front().t <= pos) {
            out = Arrival{frames_[next_], now};
            ++next_;
        }
        if (next_ == frames_.size()) {
            playing_ = false;
            position_ = pos;
        }
        return out;
    }

    bool finished(double) const override { return false; }
    bool expecting(double) const override {
        std::lock_guard lock(mu_);
        return playing_;
    }
    bool playing() const {
        std::lock_guard lock(mu_);
        return playing_;
    }

private:
    std::vector<KeypointFrame> frames_;
    mutable std::mutex mu_;
    bool playing_{false};
    double anchor_{0.0};
    double position_{0.0};
    std::size_t next_{0};
};

// ---------------------------------------------------------------------------
// Runner

struct PendingCommand {
    Command command;
    json id;
    std::shared_ptr<std::promise<json>> ack;
};

struct RunOptions {
    bool realtime{false};
    double t0{0.0};
    double max_duration{std::numeric_limits<double>::infinity()};
    const std::atomic<bool>* stop{nullptr};
    BoundedQueue<PendingCommand>* commands{nullptr};
    const GraspLibrary* grasps{nullptr};
    // Handles replay control commands; without one they are rejected.
    std::function<void(const ReplayCommand&, double now)> on_replay;
    // Called at the start of every tick, before queued commands are applied.
    std::function<void(std::uint64_t tick)> on_tick;
};

// What the loop saw and did. Inputs (frames, applied console commands,
// input-expected changes) carry the tick they took effect on.
struct PipelineSink {
    std::function<void(std::uint64_t tick, const KeypointFrame&, double arrival)> on_frame;
    std::function<void(std::uint64_t tick, const json& command)> on_applied;
    std::function<void(std::uint64_t tick, bool expected)> on_expect;
    std::function<void(const CommandRecord&)> on_command;
    std::function<void(const StateMessage&)> on_state;
};

struct SessionSummary {
    PipelineCounters counters;
    bool faulted{false};
    double duration{0.0};
    double max_latency_ms{0.0};
    double max_jitter_ms{0.0};
    std::string ended_by;  // source_end | duration | stopped
};

inline json summary_to_json(const SessionSummary& s) {
    return {{"ticks", s.counters.ticks},
            {"commands", s.counters.commands},
            {"frames_used", s.counters.frames_used},
            {"frames_rejected", s.counters.frames_rejected},
            {"stale_ticks", s.counters.stale_ticks},
            {"bus_timeouts", s.counters.bus_timeouts},
            {"faulted", s.faulted},
            {"duration", s.duration},
            {"max_latency_ms", s.max_latency_ms},
            {"max_jitter_ms", s.max_jitter_ms},
            {"ended_by", s.ended_by}};
}

inline SessionSummary summary_from_json(const json& j) {
    SessionSummary s;
    s.counters.ticks = j.at("ticks").get<std::uint64_t>();
    s.counters.commands = j.at("commands").get<std::uint64_t>();
    s.counters.frames_used = j.at("frames_used").get<std::uint64_t>();
    s.counters.frames_rejected = j.at("frames_rejected").get<std::uint64_t>();
    s.counters.stale_ticks = j.at("stale_ticks").get<std::uint64_t>();
    s.counters.bus_timeouts = j.at("bus_timeouts").get<std::uint64_t>();
    s.faulted = j.at("faulted").get<bool>();
    s.duration = j.at("duration").get<double>();
    s.max_latency_ms = j.at("max_latency_ms").get<double>();
    s.max_jitter_ms = j.at("max_jitter_ms").get<double>();
    s.ended_by = j.at("ended_by").get<std::string>();
    return s;
}

// Self-contained form of an applied command. Grasps become the joint targets
// they set, so a session replays without the grasp file.
inline json applied_command_json(const Command& c, const GraspLibrary* grasps) {
    if (const auto* j = std::get_if<JointCommand>(&c)) {
        json t = json::object();
        for (const auto& [id, v] : j->targets) t[joint_name(id)] = v;
        return {{"type", "joints"}, {"targets", t}};
    }
    if (const auto* g = std::get_if<GraspCommand>(&c)) {
        const auto& q = grasps->at(g->name).q;
        json t = json::object();
        for (JointId id : active_joints()) t[joint_name(id)] = q[id];
        return {{"type", "joints"}, {"targets", t}, {"grasp", g->name}};
    }
    return {{"type", "reset"}};
}

namespace detail {

inline void answer(const PendingCommand& p, bool ok, const std::string& error, const JointAngles& target) {
    if (!p.ack) return;
    json a = {{"type", "ack"}, {"id", p.id}, {"ok", ok}};
    if (ok) a["targets"] = io::array_to_json(target.active());
    else a["error"] = error;
    p.ack->set_value(std::move(a));
}

}  // namespace detail

// Ticks t_k = t0 + k / rate. In realtime mode each tick waits for its wall
// clock slot; otherwise ticks run back to back on the virtual clock.
inline SessionSummary run_pipeline(Pipeline& pipe, KeypointSource* source, const PipelineSink& sink,
                                   const RunOptions& opt) {
    using clock = std::chrono::steady_clock;
    SessionSummary out;
    const double dt = pipe.period();
    const auto wall0 = clock::now();
    bool expected = false;
    for (std::uint64_t k = 0;; ++k) {
        const double now = opt.t0 + static_cast<double>(k) * dt;
        if (opt.realtime) {
            const auto slot = wall0 + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(k * dt));
            // Coarse sleep, then yield up to the slot: sleep_until alone
            // overshoots by the scheduler's wake-up latency.
            std::this_thread::sleep_until(slot - std::chrono::milliseconds(2));
            while (clock::now() < slot) std::this_thread::yield();
            const double late = std::chrono::duration<double, std::milli>(clock::now() - slot).count();
            out.max_jitter_ms = std::max(out.max_jitter_ms, late);
        }
        if (opt.stop && opt.stop->load()) {
            out.ended_by = "stopped";
            break;
        }
        if (now - opt.t0 >= opt.max_duration) {
            out.ended_by = "duration";
            break;
        }
        if (opt.on_tick) opt.on_tick(k);
        if (opt.commands) {
            while (auto p = opt.commands->try_pop()) {
                try {
                    if (const auto* r = std::get_if<ReplayCommand>(&p->command)) {
                        if (!opt.on_replay) throw CommandRejected("no replay session loaded");
                        opt.on_replay(*r, now);
                    } else {
                        pipe.apply(p->command, opt.grasps);
                        if (sink.on_applied) sink.on_applied(k, applied_command_json(p->command, opt.grasps));
                    }
                    detail::answer(*p, true, {}, pipe.target());
                } catch (const Error& e) {
                    detail::answer(*p, false, e.what(), pipe.target());
                }
            }
        }
        const bool want = source && source->expecting(now);
        if (want != expected && sink.on_expect) sink.on_expect(k, want);
        expected = want;
        pipe.set_input_expected(want, now);
        std::optional<KeypointFrame> frame;
        double arrival = now;
        if (source) {
            if (auto a = source->poll(now)) {
                frame = std::move(a->frame);
                arrival = a->at;
                if (sink.on_frame) sink.on_frame(k, *frame, arrival);
            }
        }
        const auto tick = pipe.tick(k, now, frame, arrival);
        if (tick.command && sink.on_command) sink.on_command(*tick.command);
        if (sink.on_state) sink.on_state(tick.state);
        out.max_latency_ms = std::max(out.max_latency_ms, tick.state.latency_ms);
        out.duration = now - opt.t0;
        if (source && source->finished(now)) {
            out.ended_by = "source_end";
            break;
        }
    }
    out.counters = pipe.counters();
    out.faulted = pipe.faulted();
    return out;
}

// ---------------------------------------------------------------------------
// Sessions

inline constexpr int kSessionVersion = 1;

struct FrameInput {
    std::uint64_t tick{0};
    double arrival{0.0};
    KeypointFrame frame;
};

struct CommandInput {
    std::uint64_t tick{0};
    json command;  // applied_command_json form
};

struct ExpectInput {
    std::uint64_t tick{0};
    bool expected{false};
};

struct Session {
    std::string spec_hash;
    std::string profile_hash;
    CalibrationProfile profile;
    PipelineConfig config;
    double t0{0.0};
    std::uint64_t ticks{0};
    std::vector<FrameInput> frames;  // frames the loop consumed
    std::vector<CommandInput> console;
    std::vector<ExpectInput> expect;
    std::vector<CommandRecord> commands;
    std::vector<StateMessage> states;
    std::optional<SessionSummary> summary;

    std::vector<KeypointFrame> keypoints() const {
        std::vector<KeypointFrame> out;
        for (const auto& f : frames) out.push_back(f.frame);
        return out;
    }
};

// Collects a Session from a running loop.
class SessionRecorder {
public:
    SessionRecorder(const HandDescription& hand, const CalibrationProfile& profile, const PipelineConfig& cfg,
                    double t0) {
        s_.spec_hash = spec_hash(hand);
        s_.profile_hash = profile_hash(profile);
        s_.profile = profile;
        s_.config = cfg;
        s_.t0 = t0;
    }

    // Sink that records into this recorder, then forwards to `next`.
    PipelineSink sink(PipelineSink next = {}) {
        PipelineSink out;
        out.on_frame = [this, n = next.on_frame](std::uint64_t k, const KeypointFrame& f, double at) {
            lock([&] { s_.frames.push_back({k, at, f}); });
            if (n) n(k, f, at);
        };
        out.on_applied = [this, n = next.on_applied](std::uint64_t k, const json& c) {
            lock([&] { s_.console.push_back({k, c}); });
            if (n) n(k, c);
        };
        out.on_expect = [this, n = next.on_expect](std::uint64_t k, bool e) {
            lock([&] { s_.expect.push_back({k, e}); });
            if (n) n(k, e);
        };
        out.on_command = [this, n = next.on_command](const CommandRecord& c) {
            lock([&] { s_.commands.push_back(c); });
            if (n) n(c);
        };
        out.on_state = [this, n = next.on_state](const StateMessage& m) {
            lock([&] { s_.states.push_back(m); });
            if (n) n(m);
        };
        return out;
    }

    void finish(const SessionSummary& sum) {
        lock([&] {
            s_.summary = sum;
            s_.ticks = sum.counters.ticks;
        });
    }

    Session session() const {
        std::lock_guard l(mu_);
        return s_;
    }

private:
    template <class F>
    void lock(F&& f) {
        std::lock_guard l(mu_);
        f();
    }

    mutable std::mutex mu_;
    Session s_;
};

namespace io {

inline std::string session_to_text(const Session& s) {
    std::string out = json{{"format", "craft-session"},
                           {"version", kSessionVersion},
                           {"spec_hash", s.spec_hash},
                           {"profile_hash", s.profile_hash},
                           {"profile", profile_to_json(s.profile)},
                           {"config", pipeline_config_to_json(s.config)},
                           {"t0", s.t0}}
                          .dump() +
                      "\n";
    // Tick by tick: inputs first, then the command and state they produced.
    std::size_t f = 0, c = 0, e = 0, w = 0, st = 0;
    auto line = [&](const json& j) { out += j.dump() + "\n"; };
    for (std::uint64_t k = 0; k < s.ticks; ++k) {
        for (; e < s.expect.size() && s.expect[e].tick == k; ++e)
            line({{"kind", "input"}, {"tick", k}, {"expected", s.expect[e].expected}});
        for (; c < s.console.size() && s.console[c].tick == k; ++c)
            line({{"kind", "console"}, {"tick", k}, {"command", s.console[c].command}});
        for (; f < s.frames.size() && s.frames[f].tick == k; ++f)
            line({{"kind", "keypoints"},
                  {"tick", k},
                  {"t", s.frames[f].arrival},
                  {"frame", frame_to_json(s.frames[f].frame)}});
        for (; w < s.commands.size() && s.commands[w].tick == k; ++w) line(command_to_json(s.commands[w]));
        for (; st < s.states.size() && s.states[st].seq == k; ++st)
            line({{"kind", "state"}, {"t", s.states[st].t}, {"state", state_to_json(s.states[st])}});
    }
    json end = {{"kind", "end"}, {"ticks", s.ticks}};
    if (s.summary) end["summary"] = summary_to_json(*s.summary);
    line(end);
    return out;
}

inline Session session_from_text(const std::string& text, const std::string& what) {
    Session s;
    std::size_t start = 0, line_no = 0;
    bool header = false, ended = false;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = what + ":" + std::to_string(line_no);
        const json j = parse(line, where);
        try {
            if (!header) {
                if (j.value("format", std::string()) != "craft-session") throw LoadError(where + ": not a session file");
                if (j.value("version", 0) != kSessionVersion)
                    throw LoadError(where + ": unsupported session version");
                s.spec_hash = j.at("spec_hash").get<std::string>();
                s.profile_hash = j.at("profile_hash").get<std::string>();
                s.profile = profile_from_json(j.at("profile"));
                s.config = pipeline_config_from_json(j.at("config"));
                s.t0 = j.at("t0").get<double>();
                header = true;
                continue;
            }
            if (ended) throw LoadError(where + ": record after the end marker");
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "keypoints")
                s.frames.push_back(
                    {j.at("tick").get<std::uint64_t>(), j.at("t").get<double>(), frame_from_json(j.at("frame"))});
            else if (kind == "console")
                s.console.push_back({j.at("tick").get<std::uint64_t>(), j.at("command")});
            else if (kind == "input")
                s.expect.push_back({j.at("tick").get<std::uint64_t>(), j.at("expected").get<bool>()});
            else if (kind == "command") s.commands.push_back(command_from_json(j));
            else if (kind == "state") s.states.push_back(state_from_json(j.at("state")));
            else if (kind == "end") {
                s.ticks = j.at("ticks").get<std::uint64_t>();
                if (j.contains("summary")) s.summary = summary_from_json(j.at("summary"));
                ended = true;
            } else {
                throw LoadError(where + ": unknown record kind '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw LoadError(where + ": " + e.what());
        } catch (const LoadError&) {
            throw;
        } catch (const Error& e) {
            throw LoadError(where + ": " + e.what());
        }
    }
    if (!header) throw LoadError(what + ": empty session file");
    if (!ended) throw LoadError(what + ": truncated session (no end marker)");
    if (s.profile_hash != profile_hash(s.profile))
        throw LoadError(what + ": embedded profile does not match its hash");
    return s;
}

inline Session load_session(const std::string& path) { return session_from_text(read_file(path), path); }
inline void save_session(const std::string& path, const Session& s) { write_file(path, session_to_text(s)); }

}  // namespace io

// Runs a recorded keypoint stream through a fresh virtual hand on the
// virtual clock and records everything the loop saw and sent.
inline Session record_session(const HandDescription& hand, const CalibrationProfile& profile,
                              const PipelineConfig& cfg, std::vector<KeypointFrame> frames) {
    if (frames.empty()) throw ConfigError("session needs at least one keypoint frame");
    VirtualHand plant(hand);
    Pipeline pipe(hand, profile, cfg, plant.bus(), [&](double dt) { plant.advance(dt); });
    pipe.set_current_limit(SimParams{}.motor.current_limit_ma);
    RecordedSource source(std::move(frames));
    SessionRecorder rec(hand, profile, cfg, source.start());
    RunOptions opt;
    opt.t0 = source.start();
    rec.finish(run_pipeline(pipe, &source, rec.sink(), opt));
    return rec.session();
}

namespace detail {

// Feeds a session's inputs back on the ticks they were consumed.
class ScriptedSource : public KeypointSource {
public:
    ScriptedSource(const Session& s, double rate_hz) : s_(s), rate_(rate_hz) {}

    std::optional<Arrival> poll(double now) override {
        const auto k = tick(now);
        while (f_ < s_.frames.size() && s_.frames[f_].tick < k) ++f_;
        if (f_ < s_.frames.size() && s_.frames[f_].tick == k) {
            const auto& in = s_.frames[f_++];
            return Arrival{in.frame, in.arrival};
        }
        return std::nullopt;
    }

    bool finished(double now) const override { return tick(now) + 1 >= s_.ticks; }

    bool expecting(double now) const override {
        bool e = false;
        for (const auto& x : s_.expect) {
            if (x.tick > tick(now)) break;
            e = x.expected;
        }
        return e;
    }

private:
    std::uint64_t tick(double now) const { return static_cast<std::uint64_t>(std::llround((now - s_.t0) * rate_)); }

    const Session& s_;
    double rate_;
    std::size_t f_{0};
};

}  // namespace detail

// Re-runs a session's inputs through its own profile and configuration on a
// fresh virtual hand. The hand must be the one the session was recorded with.
inline Session replay_session(const HandDescription& hand, const Session& recorded) {
    const auto current = spec_hash(hand);
    if (current != recorded.spec_hash)
        throw ConfigError("session was recorded with hand spec " + recorded.spec_hash + ", current spec is " + current);
    if (recorded.ticks == 0) throw ConfigError("session has no ticks");
    VirtualHand plant(hand);
    Pipeline pipe(hand, recorded.profile, recorded.config, plant.bus(), [&](double dt) { plant.advance(dt); });
    pipe.set_current_limit(SimParams{}.motor.current_limit_ma);
    detail::ScriptedSource source(recorded, recorded.config.rate_hz);
    BoundedQueue<PendingCommand> queue(std::max<std::size_t>(1, recorded.console.size()));
    std::size_t next = 0;
    RunOptions opt;
    opt.t0 = recorded.t0;
    opt.commands = &queue;
    opt.on_tick = [&](std::uint64_t k) {
        for (; next < recorded.console.size() && recorded.console[next].tick == k; ++next)
            queue.push({parse_command(recorded.console[next].command), nullptr, nullptr});
    };
    SessionRecorder rec(hand, recorded.profile, recorded.config, recorded.t0);
    rec.finish(run_pipeline(pipe, &source, rec.sink(), opt));
    return rec.session();
}

// Per active joint, the share of the hand's range covered by the given states.
inline PerActive<double> range_coverage(const HandSpec& spec, const std::vector<StateMessage>& states) {
    PerActive<double> out{};
    const auto ids = active_joints();
    for (std::size_t k = 0; k < kActiveCount; ++k) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : states) {
            lo = std::min(lo, s.q[ids[k]]);
            hi = std::max(hi, s.q[ids[k]]);
        }
        out[k] = states.empty() ? 0.0 : (hi - lo) / spec.joint(ids[k]).limits.width();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Service

enum class InputKind { None, Live, Replay };

struct ServiceOptions {
    PipelineConfig pipeline;
    InputKind input{InputKind::None};
    std::vector<KeypointFrame> replay_frames;  // InputKind::Replay
    bool record{false};                         // keep a Session of the run
    std::size_t command_queue{64};
};

// Owns the control loop thread, the virtual hand (or an external bus), the
// state fan-out and the command queue. Network endpoints call into it.
class TeleopService {
public:
    // `hardware` replaces the virtual hand when given.
    TeleopService(HandDescription hand, CalibrationProfile profile, GraspLibrary grasps, ServiceOptions opt = {},
                  bus::ByteStream* hardware = nullptr)
        : hand_(std::move(hand)), grasps_(std::move(grasps)), opt_(std::move(opt)), commands_(opt_.command_queue) {
        bus::ByteStream* stream = hardware;
        std::function<void(double)> plant;
        if (!stream) {
            plant_ = std::make_unique<VirtualHand>(hand_);
            stream = &plant_->bus();
            plant = [this](double dt) { plant_->advance(dt); };
        }
        pipe_ = std::make_unique<Pipeline>(hand_, std::move(profile), opt_.pipeline, *stream, std::move(plant));
        if (plant_) pipe_->set_current_limit(SimParams{}.motor.current_limit_ma);
        if (opt_.input == InputKind::Live) live_ = std::make_unique<LiveSource>();
        if (opt_.input == InputKind::Replay) replay_ = std::make_unique<ReplaySource>(opt_.replay_frames);
        if (opt_.record) recorder_ = std::make_unique<SessionRecorder>(hand_, pipe_->profile(), opt_.pipeline, 0.0);
    }

    ~TeleopService() { stop(); }
    TeleopService(const TeleopService&) = delete;
    TeleopService& operator=(const TeleopService&) = delete;

    void start() {
        if (thread_.joinable()) return;
        t_start_ = std::chrono::steady_clock::now();
        thread_ = std::thread([this] { loop(); });
    }

    // Ends the loop and waits for it; the summary of the run.
    SessionSummary stop() {
        stop_ = true;
        if (thread_.joinable()) thread_.join();
        fanout_.close_all();
        std::lock_guard lock(mu_);
        return summary_;
    }

    bool running() const { return thread_.joinable() && !done_; }
    StateFanout& fanout() { return fanout_; }
    const HandDescription& hand() const { return hand_; }
    const GraspLibrary& grasps() const { return grasps_; }

    // Seconds on the loop clock.
    double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start_).count(); }

    // Parses and queues a console command; the future carries the ack.
    std::future<json> submit(const json& msg) {
        const json id = msg.is_object() ? msg.value("id", json()) : json();
        auto ack = std::make_shared<std::promise<json>>();
        auto fut = ack->get_future();
        try {
            auto cmd = parse_command(msg);
            if (done_) throw CommandRejected("control loop is not running");
            commands_.push({std::move(cmd), id, ack});
        } catch (const Error& e) {
            ack->set_value({{"type", "ack"}, {"id", id}, {"ok", false}, {"error", e.what()}});
        }
        return fut;
    }

    // Frames from the live keypoint socket.
    void post_keypoints(const KeypointFrame& f) {
        if (!live_) throw CommandRejected("service has no live keypoint input");
        live_->post(f, now());
    }

    // The recorded run; empty unless ServiceOptions::record was set.
    Session session() const { return recorder_ ? recorder_->session() : Session{}; }

    // GET /spec: the hand description plus joint names and limits in order.
    json spec_json() const {
        json out = io::hand_description_to_json(hand_);
        json joints = json::array();
        for (JointId id : all_joints()) {
            const auto& lim = hand_.spec.joint(id).limits;
            joints.push_back({{"name", joint_name(id)},
                              {"active", id.slot != Slot::Dip},
                              {"min", lim.min},
                              {"max", lim.max}});
        }
        out["joints_summary"] = joints;
        out["spec_hash"] = spec_hash(hand_);
        out["rate_hz"] = opt_.pipeline.rate_hz;
        return out;
    }

    // GET /grasps
    json grasps_json() const { return io::presets_to_json(grasps_.presets()); }

private:
    void loop() {
        KeypointSource* source = live_ ? static_cast<KeypointSource*>(live_.get()) : replay_.get();
        PipelineSink sink;
        sink.on_state = [this](const StateMessage& m) { fanout_.publish(io::state_to_json(m).dump()); };
        if (recorder_) sink = recorder_->sink(sink);
        RunOptions ro;
        ro.realtime = true;
        ro.stop = &stop_;
        ro.commands = &commands_;
        ro.grasps = &grasps_;
        if (replay_) {
            pipe_->set_mode("replay");
            ro.on_replay = [this](const ReplayCommand& r, double now) { replay_->control(r.action, now); };
        }
        SessionSummary sum;
        try {
            sum = run_pipeline(*pipe_, source, sink, ro);
        } catch (const Error& e) {
            sum.ended_by = std::string("error: ") + e.what();
        }
        done_ = true;
        commands_.close();
        while (auto p = commands_.try_pop()) detail::answer(*p, false, "control loop stopped", pipe_->target());
        if (recorder_) recorder_->finish(sum);
        std::lock_guard lock(mu_);
        summary_ = sum;
    }

    HandDescription hand_;
    GraspLibrary grasps_;
    ServiceOptions opt_;
    std::unique_ptr<VirtualHand> plant_;
    std::unique_ptr<Pipeline> pipe_;
    std::unique_ptr<LiveSource> live_;
    std::unique_ptr<ReplaySource> replay_;
    BoundedQueue<PendingCommand> commands_;
    StateFanout fanout_;
    std::atomic<bool> stop_{false};
    std::atomic<bool> done_{false};
    std::chrono::steady_clock::time_point t_start_{std::chrono::steady_clock::now()};
    std::thread thread_;
    std::unique_ptr<SessionRecorder> recorder_;
    mutable std::mutex mu_;
    SessionSummary summary_;
};

// ---------------------------------------------------------------------------
// Driving the virtual hand to a pose

struct SettleResult {
    bool settled{false};
    double time{0.0};       // s until every joint was within tolerance
    double max_error{0.0};  // rad, at the last tick
    JointAngles q;
};

// Commands `target` through the control loop and ticks until the measured
// pose matches it on every joint.
inline SettleResult settle(Pipeline& pipe, const JointAngles& target, double tol, double max_time) {
    JointCommand cmd;
    for (JointId id : active_joints()) cmd.targets[id] = target[id];
    pipe.apply(cmd, nullptr);
    const auto goal = project_coupling(target);
    SettleResult out;
    const double dt = pipe.period();
    for (std::uint64_t k = 0; k * dt <= max_time; ++k) {
        const auto t = pipe.tick(k, k * dt, std::nullopt, 0.0);
        out.q = t.state.q;
        out.max_error = 0.0;
        for (JointId id : all_joints()) out.max_error = std::max(out.max_error, std::abs(t.state.q[id] - goal[id]));
        out.time = (k + 1) * dt;
        if (out.max_error < tol) {
            out.settled = true;
            break;
        }
    }
    return out;
}

inline SettleResult settle_virtual(const HandDescription& hand, const JointAngles& target, double tol = 1e-3,
                                   double max_time = 5.0) {
    VirtualHand plant(hand);
    Pipeline pipe(hand, uncalibrated_profile(hand.spec), {}, plant.bus(), [&](double dt) { plant.advance(dt); });
    return settle(pipe, target, tol, max_time);
}

// Robot side of calibration on the virtual hand: each joint is moved to both
// extremes in turn and the range is read back from the motor encoders.
inline PerActive<Limits> calibrate_robot_virtual(const HandDescription& hand, double tol = 1e-3) {
    VirtualHand plant(hand);
    Pipeline pipe(hand, uncalibrated_profile(hand.spec), {}, plant.bus(), [&](double dt) { plant.advance(dt); });
    RobotCalibrator cal;
    JointAngles rest;
    for (JointId id : active_joints()) rest[id] = hand.spec.joint(id).limits.clamp(0.0);
    for (JointId id : active_joints()) {
        for (double v : {hand.spec.joint(id).limits.min, hand.spec.joint(id).limits.max}) {
            JointAngles q = rest;
            q[id] = v;
            const auto r = settle(pipe, q, tol, 10.0);
            if (!r.settled)
                throw Error(joint_name(id) + " did not settle at " + std::to_string(v) + " (error " +
                            std::to_string(r.max_error) + " rad)");
            cal.add(r.q);
        }
    }
    return cal.limits();
}

}  // namespace craft
