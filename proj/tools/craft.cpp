// craft: command-line front end for the simulator, test harnesses and the
// teleop service. Errors go to stderr as one JSON line.

#include <craft/teleop_net.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

using namespace craft;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

void fail_line(const std::string& kind, const std::string& msg, const json& extra = json::object()) {
    json j = {{"error", msg}, {"kind", kind}};
    j.update(extra);
    std::cerr << j.dump() << "\n";
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const LoadError*>(&e)) return "load";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const CommandRejected*>(&e)) return "rejected";
    if (dynamic_cast<const net::StartupError*>(&e)) return "startup";
    if (dynamic_cast<const bus::BusTimeout*>(&e)) return "bus";
    if (dynamic_cast<const Error*>(&e)) return "error";
    return "internal";
}

GraspLibrary load_grasps(const std::string& path, const HandSpec& spec) {
    return GraspLibrary(io::load_presets(path, spec));
}

std::vector<KeypointFrame> load_stream(const std::string& path) {
    return io::keypoint_stream_from_text(io::read_file(path), path);
}

json read_config(const std::string& path) { return path.empty() ? json::object() : io::parse(io::read_file(path), path); }

// Rejects keys the harness would silently ignore.
void check_keys(const json& cfg, const json& defaults) {
    for (const auto& [k, v] : cfg.items())
        if (!defaults.contains(k)) {
            std::string known;
            for (const auto& [d, _] : defaults.items()) known += (known.empty() ? "" : ", ") + d;
            throw ConfigError("unknown config key '" + k + "' (known: " + known + ")");
        }
}

void wait_until(double duration) {
    const auto t0 = std::chrono::steady_clock::now();
    while (!g_interrupted &&
           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < duration)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

std::string default_grasp_file() {
#ifdef CRAFT_DATA_DIR
    return std::string(CRAFT_DATA_DIR) + "/feix_grasps.json";
#else
    return "data/feix_grasps.json";
#endif
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CRAFT hand digital twin and teleoperation toolkit"};
    app.require_subcommand(1);

    std::string spec_path, grasp_path = default_grasp_file();
    app.add_option("--spec", spec_path, std::string("Hand spec file (default: $") + kSpecEnvVar + ", else built-in)");
    app.add_option("--grasps", grasp_path, "Grasp preset file");

    // spec
    auto* spec_cmd = app.add_subcommand("spec", "Write the resolved hand spec");
    std::string spec_out = "craft_hand.json";
    spec_cmd->add_option("--out", spec_out, "Output path");

    // sim / teleop shared server flags
    std::string address = "127.0.0.1";
    unsigned short port = 8765;
    double duration = std::numeric_limits<double>::infinity();
    auto add_server = [&](CLI::App* c) {
        c->add_option("--address", address, "Bind address");
        c->add_option("--port", port, "Port for state/command/keypoint sockets and spec/grasp endpoints");
        c->add_option("--duration", duration, "Stop after this many seconds");
    };

    auto* sim_cmd = app.add_subcommand("sim", "Virtual hand with state server and console endpoints");
    add_server(sim_cmd);
    std::string sim_replay, sim_profile;
    sim_cmd->add_option("--replay", sim_replay, "Session or keypoint stream for console-driven playback");
    sim_cmd->add_option("--profile", sim_profile, "Calibration profile for playback (default: the session's)");

    auto* teleop_cmd = app.add_subcommand("teleop", "Run the teleop pipeline on a keypoint file or live socket");
    add_server(teleop_cmd);
    std::string input, profile_path, record_out;
    bool realtime = false;
    teleop_cmd->add_option("--input", input, "Keypoint stream file, or 'socket' for live frames")->required();
    teleop_cmd->add_option("--profile", profile_path, "Calibration profile")->required()->check(CLI::ExistingFile);
    teleop_cmd->add_option("--record", record_out, "Write the session here");
    teleop_cmd->add_flag("--realtime", realtime, "Pace a file input at the control rate and serve state");

    auto* cal_cmd = app.add_subcommand("calibrate", "Build a calibration profile");
    bool cal_robot = false, cal_operator = false;
    std::string cal_input, cal_base, cal_out = "profile.json";
    double cal_alpha = 0.3;
    auto* robot_flag = cal_cmd->add_flag("--robot", cal_robot, "Measure joint ranges on the virtual hand");
    auto* op_flag = cal_cmd->add_flag("--operator", cal_operator, "Measure the operator range from --input");
    robot_flag->excludes(op_flag);
    cal_cmd->add_option("--input", cal_input, "Keypoint stream (operator calibration)");
    cal_cmd->add_option("--profile", cal_base, "Profile to update (default: from the hand spec)");
    cal_cmd->add_option("--ema-alpha", cal_alpha, "Smoothing factor stored in the profile");
    cal_cmd->add_option("--out", cal_out, "Output profile");

    auto* test_cmd = app.add_subcommand("test", "Structural test harnesses");
    std::string test_kind, test_config, test_out;
    test_cmd->add_option("kind", test_kind, "pullout | repeat | hold")
        ->required()
        ->check(CLI::IsMember({"pullout", "repeat", "hold"}));
    test_cmd->add_option("--config", test_config, "JSON overrides for the harness configuration");
    test_cmd->add_option("--out", test_out, "Report path (default: <kind>_report.jsonl)");

    auto* grasp_cmd = app.add_subcommand("grasp", "Drive the virtual hand to a Feix preset");
    std::string grasp_name;
    double grasp_tol = 1e-3, grasp_time = 5.0;
    grasp_cmd->add_option("name", grasp_name, "Preset name")->required();
    grasp_cmd->add_option("--tolerance", grasp_tol, "Settle tolerance, rad");
    grasp_cmd->add_option("--timeout", grasp_time, "Seconds to wait for settling");

    auto* rec_cmd = app.add_subcommand("record", "Record a session from a keypoint stream");
    std::string rec_input, rec_profile, rec_out;
    rec_cmd->add_option("--input", rec_input, "Keypoint stream")->required()->check(CLI::ExistingFile);
    rec_cmd->add_option("--profile", rec_profile, "Calibration profile (default: calibrate on the input)");
    rec_cmd->add_option("--out", rec_out, "Session file")->required();

    auto* replay_cmd = app.add_subcommand("replay", "Replay a session and compare command logs");
    std::string replay_path, replay_log;
    replay_cmd->add_option("session", replay_path, "Session file")->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--log", replay_log, "Write the replayed command log here");

    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic keypoint sweep");
    std::size_t synth_frames = 600, synth_dwell = 15;
    double synth_rate = 30.0;
    std::string synth_out = "sweep.jsonl";
    synth_cmd->add_option("--frames", synth_frames, "Frame count");
    synth_cmd->add_option("--dwell", synth_dwell, "Frames held at each extreme");
    synth_cmd->add_option("--rate", synth_rate, "Frame rate, Hz");
    synth_cmd->add_option("--out", synth_out, "Output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("usage", e.what());
        return 2;
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    try {
        const HandDescription hand = resolve_hand_description(spec_path);

        if (*spec_cmd) {
            io::save_hand_description(spec_out, hand);
            print({{"wrote", spec_out}, {"spec_hash", spec_hash(hand)}});
            return 0;
        }

        if (*sim_cmd) {
            ServiceOptions opt;
            CalibrationProfile profile = uncalibrated_profile(hand.spec);
            if (!sim_replay.empty()) {
                opt.input = InputKind::Replay;
                const auto text = io::read_file(sim_replay);
                if (text.find("craft-session") != std::string::npos) {
                    auto s = io::session_from_text(text, sim_replay);
                    if (s.spec_hash != spec_hash(hand))
                        throw ConfigError("session was recorded with hand spec " + s.spec_hash);
                    opt.replay_frames = s.keypoints();
                    opt.pipeline = s.config;
                    profile = s.profile;
                } else {
                    opt.replay_frames = io::keypoint_stream_from_text(text, sim_replay);
                    profile = calibrate_profile(hand.spec, opt.replay_frames);
                }
            }
            if (!sim_profile.empty()) profile = io::load_profile(sim_profile);
            TeleopService service(hand, profile, load_grasps(grasp_path, hand.spec), opt);
            net::TeleopServer server(service, {address, port});
            service.start();
            std::cerr << json({{"event", "listening"}, {"address", address}, {"port", server.port()}}).dump() << "\n";
            wait_until(duration);
            server.stop();
            print(summary_to_json(service.stop()));
            return 0;
        }

        if (*teleop_cmd) {
            const auto profile = io::load_profile(profile_path);
            if (input != "socket" && !realtime) {
                auto s = record_session(hand, profile, {}, load_stream(input));
                if (!record_out.empty()) io::save_session(record_out, s);
                print(summary_to_json(*s.summary));
                return s.summary->faulted ? 1 : 0;
            }
            ServiceOptions opt;
            opt.record = !record_out.empty();
            if (input == "socket") {
                opt.input = InputKind::Live;
            } else {
                opt.input = InputKind::Replay;
                opt.replay_frames = load_stream(input);
            }
            TeleopService service(hand, profile, load_grasps(grasp_path, hand.spec), opt);
            net::TeleopServer server(service, {address, port});
            service.start();
            if (opt.input == InputKind::Replay) service.submit({{"type", "replay"}, {"action", "play"}}).get();
            std::cerr << json({{"event", "listening"}, {"address", address}, {"port", server.port()}}).dump() << "\n";
            wait_until(duration);
            server.stop();
            const auto summary = service.stop();
            if (opt.record) io::save_session(record_out, service.session());
            print(summary_to_json(summary));
            return summary.faulted ? 1 : 0;
        }

        if (*cal_cmd) {
            if (!cal_robot && !cal_operator) throw ConfigError("calibrate needs --robot or --operator");
            CalibrationProfile p = cal_base.empty() ? uncalibrated_profile(hand.spec) : io::load_profile(cal_base);
            json report;
            if (cal_robot) {
                p.robot_limits = calibrate_robot_virtual(hand);
                report["robot_limits"] = io::limits_list_to_json(p.robot_limits);
            } else {
                if (cal_input.empty()) throw ConfigError("--operator needs --input <keypoint stream>");
                const auto frames = load_stream(cal_input);
                const auto cal = calibrate_operator(frames);
                report["frames_used"] = cal.frames_used;
                report["skipped_low_confidence"] = cal.skipped_low_confidence;
                report["rejected"] = cal.rejected;
                report["under_calibrated"] = cal.under_calibrated;
                if (!cal.under_calibrated.empty()) {
                    fail_line("config", "operator calibration incomplete", {{"under_calibrated", cal.under_calibrated}});
                    return 1;
                }
                p.operator_range = cal.range.range;
            }
            p.ema_alpha = cal_alpha;
            p.validate();
            io::save_profile(cal_out, p);
            report["wrote"] = cal_out;
            report["profile_hash"] = profile_hash(p);
            print(report);
            return 0;
        }

        if (*test_cmd) {
            const json cfg = read_config(test_config);
            TestReport r;
            if (test_kind == "pullout") {
                check_keys(cfg, to_json(PulloutConfig{}));
                r = run_pullout_test(hand.spec, hand.transmission, pullout_config_from_json(cfg));
            } else if (test_kind == "repeat") {
                check_keys(cfg, to_json(RepeatabilityConfig{}));
                r = run_repeatability_test(hand.spec, hand.transmission, repeatability_config_from_json(cfg));
            } else {
                check_keys(cfg, to_json(HoldingConfig{}));
                r = run_holding_test(hand.spec, hand.transmission, holding_config_from_json(cfg));
            }
            const auto out = test_out.empty() ? test_kind + "_report.jsonl" : test_out;
            io::write_file(out, io::report_to_text(r));
            print({{"kind", r.kind}, {"report", out}, {"summary", r.summary}});
            return 0;
        }

        if (*grasp_cmd) {
            const auto lib = load_grasps(grasp_path, hand.spec);
            const auto* g = lib.find(grasp_name);
            if (!g) {
                std::vector<std::string> names;
                for (const auto& p : lib.presets()) names.push_back(p.name);
                fail_line("unknown_grasp", "unknown grasp '" + grasp_name + "'", {{"valid", names}});
                return 2;
            }
            const auto r = settle_virtual(hand, g->q, grasp_tol, grasp_time);
            print({{"grasp", g->name},
                   {"settled", r.settled},
                   {"time", r.time},
                   {"max_error", r.max_error},
                   {"q", io::array_to_json(r.q.values())}});
            if (!r.settled) {
                fail_line("settle", "hand did not settle at '" + g->name + "'", {{"max_error", r.max_error}});
                return 1;
            }
            return 0;
        }

        if (*rec_cmd) {
            const auto frames = load_stream(rec_input);
            const auto profile = rec_profile.empty() ? calibrate_profile(hand.spec, frames) : io::load_profile(rec_profile);
            const auto s = record_session(hand, profile, {}, frames);
            io::save_session(rec_out, s);
            print({{"wrote", rec_out},
                   {"commands", s.commands.size()},
                   {"command_log_hash", io::hex64(io::fnv1a64(io::command_log_text(s.commands)))},
                   {"summary", summary_to_json(*s.summary)}});
            return 0;
        }

        if (*replay_cmd) {
            const auto recorded = io::load_session(replay_path);
            const auto again = replay_session(hand, recorded);
            const auto log = io::command_log_text(again.commands);
            if (!replay_log.empty()) io::write_file(replay_log, log);
            const bool identical = log == io::command_log_text(recorded.commands);
            print({{"session", replay_path},
                   {"commands", again.commands.size()},
                   {"command_log_hash", io::hex64(io::fnv1a64(log))},
                   {"identical", identical}});
            if (!identical) {
                fail_line("replay", "replayed command log differs from the recording");
                return 1;
            }
            return 0;
        }

        if (*synth_cmd) {
            const auto frames = synthetic_sweep(default_operator_envelope(), synth_frames, synth_rate, {}, synth_dwell);
            io::write_file(synth_out, io::keypoint_stream_to_text(frames));
            print({{"wrote", synth_out}, {"frames", frames.size()}});
            return 0;
        }
    } catch (const std::exception& e) {
        fail_line(error_kind(e), e.what());
        return 1;
    }
    return 0;
}
