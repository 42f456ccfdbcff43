// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any
// fail. Every check recomputes its numbers here; nothing is read from other
// test binaries.

#include "oracles.hpp"

#include <craft/grasp_library.hpp>
#include <craft/hand_spec_io.hpp>
#include <craft/motor_bus.hpp>
#include <craft/retargeting.hpp>
#include <craft/sim_engine.hpp>
#include <craft/teleop.hpp>
#include <craft/tendon_transmission.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

using namespace craft;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass{true};
    std::ostringstream detail;

    void need(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(const char* name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s  %-24s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str(), secs);
    std::fflush(stdout);
}

const HandDescription& hand() {
    static const HandDescription h = default_hand_description();
    return h;
}

JointAngles random_pose(const HandSpec& spec, std::mt19937_64& rng, double margin = 0.0) {
    JointAngles q;
    for (JointId id : active_joints()) {
        const auto& l = spec.joint(id).limits;
        q[id] = std::uniform_real_distribution<double>(l.min + margin, l.max - margin)(rng);
    }
    return project_coupling(q);
}

double coupling_gap(const JointAngles& q) {
    double m = 0.0;
    for (Digit d : kDigits) m = std::max(m, std::abs(q[{d, Slot::Dip}] - q[{d, Slot::Pip}]));
    return m;
}

bus::BusFrame random_frame(std::mt19937_64& rng) {
    using bus::Instruction;
    static constexpr std::array<Instruction, 6> kinds{Instruction::Ping,     Instruction::Read,
                                                      Instruction::Write,    Instruction::SyncRead,
                                                      Instruction::SyncWrite, Instruction::Status};
    std::uniform_int_distribution<int> byte(0, 255), id(0, 253), kind(0, 5);
    std::uniform_int_distribution<std::size_t> n(0, 64);
    bus::BusFrame f;
    const int raw = id(rng);
    f.id = static_cast<std::uint8_t>(raw == 253 ? bus::kBroadcastId : raw);
    f.instruction = kinds[static_cast<std::size_t>(kind(rng))];
    const std::size_t count = n(rng);
    for (std::size_t i = 0; i < count; ++i) {
        const int r = byte(rng);
        f.params.push_back(r < 64 ? 0xFF : r < 96 ? 0xFD : static_cast<std::uint8_t>(byte(rng)));
    }
    return f;
}

void rolling_joint(Outcome& o) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> th(0.0, std::numbers::pi), rad(0.002, 0.010);
    double pos = 0.0, ang = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double theta = th(rng), r = rad(rng);
        oracle::Roller roller(r, r);
        roller.roll(theta, 10000);
        const auto t = rolling_joint_transform(theta, r);
        pos = std::max(pos, (t.translation - roller.center()).norm());
        ang = std::max(ang, std::abs(t.angle - roller.state.orientation));
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    o.detail << "max position error " << pos << " m, angle error " << ang << " rad";
    o.need(pos < 1e-9 && ang < 1e-9, "oracle agreement within 1e-9");
    o.need(secs < 1.0, "runtime < 1 s");
}

void coupling(Outcome& o) {
    double worst = 0.0;
    // Random quasi-static trajectories with fingertip loads.
    const SimModel model{hand().spec, hand().transmission, SimParams{}};
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int traj = 0; traj < 5; ++traj) {
        SimState s = initial_state(model, random_pose(model.spec, rng, 0.05));
        for (int i = 0; i < 2000; ++i) {
            if (i % 20 == 0)
                for (auto& f : s.tip_forces) f = Eigen::Vector3d(n(rng), n(rng), n(rng));
            s = step(model, s, joint_to_motor(model.transmission, random_pose(model.spec, rng)), 0.01);
            worst = std::max(worst, coupling_gap(s.q));
        }
    }
    // The virtual hand behind the control loop, over a full teleoperation sweep.
    const auto frames = synthetic_sweep(default_operator_envelope(), 300, 30.0, {}, 15);
    const auto rec = record_session(hand(), calibrate_profile(hand().spec, frames), {}, frames);
    for (const auto& st : rec.states) worst = std::max(worst, coupling_gap(st.q));
    o.detail << "max |dip - pip| " << worst << " rad over 10000 sim steps and " << rec.states.size()
             << " loop ticks";
    o.need(worst < 1e-12, "max gap < 1e-12");
}

void transmission(Outcome& o) {
    const auto& spec = hand().spec;
    const auto& tr = hand().transmission;
    std::mt19937_64 rng(2);
    double worst = 0.0;
    bool saturated = false;
    for (int i = 0; i < 1000; ++i) {
        const auto q = random_pose(spec, rng);
        const auto sol = motor_to_joint(spec, tr, joint_to_motor(tr, q));
        saturated = saturated || sol.saturated;
        for (JointId id : all_joints()) worst = std::max(worst, std::abs(sol.q[id] - q[id]));
    }
    const std::array<Slot, 4> slots{Slot::McpAbd, Slot::McpFlex, Slot::Pip, Slot::Dip};
    const double h = 1e-6;
    double jac = 0.0;
    for (int i = 0; i < 200; ++i) {
        const auto q = random_pose(spec, rng);
        for (Digit d : kDigits) {
            const auto analytic = digit_joint_jacobian(spec, d, q);
            Eigen::Matrix<double, 3, 4> numeric;
            for (int c = 0; c < 4; ++c) {
                JointAngles p = q, m = q;
                p[{d, slots[c]}] += h;
                m[{d, slots[c]}] -= h;
                numeric.col(c) = (detail::digit_chain(spec, d, p).tip.translation() -
                                  detail::digit_chain(spec, d, m).tip.translation()) / (2 * h);
            }
            jac = std::max(jac, (analytic - numeric).norm() / numeric.norm());
        }
    }
    o.detail << "roundtrip " << worst << " rad over 1000 poses, jacobian relative " << jac;
    o.need(worst < 1e-9 && !saturated, "roundtrip < 1e-9");
    o.need(jac < 1e-5, "jacobian < 1e-5 relative");
}

void retargeting(Outcome& o) {
    // Calibrate on one stream, replay it through the profile.
    const auto frames = synthetic_sweep(default_operator_envelope(), 600);
    auto profile = profile_from_spec(hand().spec);
    const auto cal = calibrate_operator(frames);
    o.need(cal.under_calibrated.empty(), "calibration covers every joint");
    profile.operator_range = cal.range.range;
    PerActive<Limits> seen{};
    for (auto& s : seen) s = {1e9, -1e9};
    for (const auto& f : frames) {
        const auto q = retarget(profile, keypoints_to_angles(f));
        for (std::size_t k = 0; k < kActiveCount; ++k) {
            const double v = q[active_joints()[k]];
            seen[k] = {std::min(seen[k].min, v), std::max(seen[k].max, v)};
        }
    }
    double cover = 1.0;
    for (std::size_t k = 0; k < kActiveCount; ++k)
        cover = std::min(cover, seen[k].width() / profile.robot_limits[k].width());
    o.detail << "min range coverage " << cover;
    o.need(cover >= 0.99, "coverage >= 0.99");

    const Limits op{0.1, 0.9}, robot{0.0, 1.571};
    const bool exact = retarget_joint(op, robot, 0.1) == 0.0 && retarget_joint(op, robot, 0.5) == 0.7855 &&
                       retarget_joint(op, robot, 0.9) == 1.571 && retarget_joint(op, robot, 1.2) == 1.571 &&
                       retarget_joint(op, robot, -3.0) == 0.0;
    o.detail << ", examples " << (exact ? "exact" : "inexact");
    o.need(exact, "endpoint/midpoint/clamp exact");

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    bool contracts = true;
    for (double alpha : {0.1, 0.3, 1.0}) {
        for (int i = 0; i < 10000; ++i) {
            const double x = u(rng), prev = u(rng);
            const double out = smooth(prev, x, alpha);
            const double ulp = 4 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(x), std::abs(prev)});
            contracts = contracts && std::abs(out - x) <= (1 - alpha) * std::abs(prev - x) + ulp;
        }
    }
    o.detail << ", EMA contraction " << (contracts ? "holds" : "violated");
    o.need(contracts, "EMA contraction for 0.1, 0.3, 1.0");
}

void repeatability(Outcome& o) {
    const auto t0 = Clock::now();
    const RepeatabilityConfig cfg{};
    const auto r = run_repeatability_test(hand().spec, hand().transmission, cfg);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const double mean = r.summary.at("mean_error_rad").get<double>();
    o.detail << "mean tracking error " << mean << " rad over " << cfg.cycles << " cycles";
    o.need(cfg.cycles == 1000, "1000 cycles");
    o.need(mean < 0.01, "mean < 0.01 rad");
    o.need(verify_report(r), "report verifies");
    o.need(secs < 60.0, "runtime < 60 s");
}

double pullout_force(const PulloutConfig& c) {
    return run_pullout_test(hand().spec, hand().transmission, c).summary.at("pullout_force_n").get<double>();
}

void pullout(Outcome& o) {
    PulloutConfig direct;
    direct.drive = DriveKind::DirectDrive;
    const double dd = pullout_force(direct);
    o.detail << "direct " << dd << " N; tendon";
    for (double adv : {1.2, 1.5, 2.0, 3.0}) {
        PulloutConfig t;
        t.spool_advantage = adv;
        const double f = pullout_force(t);
        o.detail << " " << f;
        o.need(f > dd, "tendon > direct at advantage " + std::to_string(adv));
    }
    o.detail << " N; stiffness sweep";
    double prev = 0.0;
    for (double k : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        PulloutConfig c;
        c.sim.joint_stiffness = k;
        const double f = pullout_force(c);
        o.detail << " " << f;
        o.need(f >= prev, "monotone in stiffness at " + std::to_string(k));
        prev = f;
    }
}

void holding(Outcome& o) {
    const auto r = run_holding_test(hand().spec, hand().transmission, HoldingConfig{});
    const auto& s = r.summary;
    const double ratio = s.at("current_ratio").get<double>();
    const double peak = s.at("tendon").at("max_motor_current_ma").get<double>();
    o.detail << "current ratio " << ratio << ", peak motor current " << peak << " mA";
    o.need(ratio <= 0.5, "ratio <= 0.5");
    o.need(s.at("tendon").at("rise_then_plateau").get<bool>(), "rise then plateau");
    o.need(peak <= 600.0 && s.at("tendon").at("within_clamp").get<bool>(), "never above 600 mA");
    o.need(!s.at("tendon").at("hold_failed").get<bool>(), "hold succeeds");
    std::vector<double> trace;
    for (const auto& smp : r.samples)
        if (smp.model == "tendon") {
            double total = 0.0;
            for (double c : smp.currents) total += std::abs(c);
            for (double c : smp.currents) o.need(std::abs(c) <= 600.0, "sample above clamp");
            trace.push_back(total);
        }
    o.need(report_detail::rise_then_plateau(trace), "recomputed trace shape");
}

void bus_codec(Outcome& o) {
    std::mt19937_64 rng(2);
    int roundtrip_bad = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto f = random_frame(rng);
        const auto bytes = bus::encode_frame(f);
        const auto frames = bus::decode_all(bytes);
        if (frames.size() != 1 || !(frames[0] == f) ||
            frames[0].crc != oracle::crc16_bitwise(std::span(bytes.data(), bytes.size() - 2)))
            ++roundtrip_bad;
    }
    o.detail << "roundtrip failures " << roundtrip_bad << "/10000";
    o.need(roundtrip_bad == 0, "roundtrip");

    int crc_bad = 0;
    std::uniform_int_distribution<int> byte(0, 255), len(0, 300);
    for (int i = 0; i < 10000; ++i) {
        bus::Bytes data(static_cast<std::size_t>(len(rng)));
        for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
        crc_bad += bus::crc16(data) != oracle::crc16_bitwise(data);
    }
    o.detail << ", crc mismatches " << crc_bad;
    o.need(crc_bad == 0, "crc oracle");

    bus::Bytes stream;
    for (int i = 0; i < 300; ++i) {
        auto bytes = bus::encode_frame(random_frame(rng));
        if (i % 7 == 3) bytes[bytes.size() / 2] ^= 0x10;
        stream.insert(stream.end(), bytes.begin(), bytes.end());
        for (int j = byte(rng) % 13; j > 0; --j) stream.push_back(static_cast<std::uint8_t>(byte(rng)));
    }
    const auto whole = bus::decode_all(stream);
    bool invariant = true;
    std::uniform_int_distribution<std::size_t> step(1, 40);
    for (int trial = 0; trial < 50; ++trial) {
        bus::StreamParser p;
        std::vector<bus::BusFrame> got;
        for (std::size_t at = 0; at < stream.size();) {
            const std::size_t n = std::min(step(rng), stream.size() - at);
            auto out = p.feed(std::span(stream.data() + at, n));
            got.insert(got.end(), out.begin(), out.end());
            at += n;
        }
        invariant = invariant && got == whole;
    }
    o.detail << ", chunking " << (invariant ? "invariant" : "varies");
    o.need(invariant, "chunking invariance");

    bus::StreamParser p;
    std::size_t emitted = 0, invalid = 0;
    bus::Bytes soup(1 << 20);
    for (auto& b : soup) {
        const int r = byte(rng);
        b = r < 40 ? 0xFF : r < 60 ? 0xFD : r < 70 ? 0x00 : static_cast<std::uint8_t>(byte(rng));
    }
    std::uniform_int_distribution<std::size_t> chunk(1, 4096);
    for (std::size_t at = 0; at < soup.size();) {
        const std::size_t n = std::min(chunk(rng), soup.size() - at);
        for (const auto& f : p.feed(std::span(soup.data() + at, n))) {
            ++emitted;
            const auto re = bus::encode_frame(f);
            invalid += f.crc != oracle::crc16_bitwise(std::span(re.data(), re.size() - 2));
        }
        at += n;
    }
    o.detail << ", fuzz 1 MiB: " << emitted << " frames emitted, " << invalid << " invalid";
    o.need(invalid == 0, "fuzz emits no invalid frames");
}

void grasps(Outcome& o) {
    const auto presets = io::load_presets(std::string(CRAFT_DATA_DIR) + "/feix_grasps.json", hand().spec);
    o.need(presets.size() == 33, "33 presets");
    int passed = 0;
    for (const auto& g : presets) {
        const bool ok = validate_preset(hand().spec, g).passed;
        passed += ok;
        if (!ok) o.need(false, g.name);
    }
    o.detail << passed << "/" << presets.size() << " presets pass";
    for (double factor : {0.9, 1.1}) {
        const HandSpec scaled = scale_phalanges(hand().spec, factor);
        int p = 0;
        for (const auto& g : presets) {
            const bool ok = validate_preset(scaled, g, 2.0).passed;
            p += ok;
            if (!ok) o.need(false, g.name + " at x" + std::to_string(factor));
        }
        o.detail << ", " << p << "/" << presets.size() << " at links x" << factor;
    }
    o.need(passed == 33, "33/33");
}

void replay(Outcome& o) {
    const auto frames = synthetic_sweep(default_operator_envelope(), 300, 30.0, {}, 15);
    const auto rec = record_session(hand(), calibrate_profile(hand().spec, frames), {}, frames);
    // Through the file format, as a saved session would be.
    const auto loaded = io::session_from_text(io::session_to_text(rec), "session");
    const auto a = io::command_log_text(replay_session(hand(), loaded).commands);
    const auto b = io::command_log_text(replay_session(hand(), loaded).commands);
    o.detail << rec.commands.size() << " commands, logs " << (a == b ? "identical" : "differ") << " ("
             << a.size() << " bytes)";
    o.need(!a.empty(), "non-empty log");
    o.need(a == b, "bit-identical");
    o.need(a == io::command_log_text(rec.commands), "matches the recording");
}

}  // namespace

int main() {
    criterion("rolling-joint", rolling_joint);
    criterion("coupling", coupling);
    criterion("transmission", transmission);
    criterion("retargeting", retargeting);
    criterion("repeatability", repeatability);
    criterion("pullout", pullout);
    criterion("holding", holding);
    criterion("bus-codec", bus_codec);
    criterion("grasp-library", grasps);
    criterion("replay-determinism", replay);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
