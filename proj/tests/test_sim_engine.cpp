#include <craft/hand_spec_io.hpp>
#include <craft/sim_engine.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace craft;

namespace {

const HandDescription& hand() {
    static const HandDescription h = default_hand_description();
    return h;
}

SimModel default_model() { return {hand().spec, hand().transmission, SimParams{}}; }

JointAngles random_pose(const HandSpec& spec, std::mt19937_64& rng, double margin = 0.05) {
    JointAngles q;
    for (JointId id : active_joints()) {
        const auto& l = spec.joint(id).limits;
        q[id] = std::uniform_real_distribution<double>(l.min + margin, l.max - margin)(rng);
    }
    return project_coupling(q);
}

// Fingertip position as a function of the three active coordinates, with
// the DIP riding along with the PIP; differentiated numerically.
Eigen::Matrix3d numeric_jacobian(const HandSpec& spec, Digit d, const JointAngles& q) {
    const JointId ids[3] = {{d, Slot::McpAbd}, {d, Slot::McpFlex}, {d, Slot::Pip}};
    const double h = 1e-6;
    Eigen::Matrix3d jac;
    for (int c = 0; c < 3; ++c) {
        JointAngles p = q, m = q;
        p[ids[c]] += h;
        m[ids[c]] -= h;
        p = project_coupling(p);
        m = project_coupling(m);
        const Eigen::Vector3d tp = digit_forward_kinematics(spec, d, p).tip.translation();
        const Eigen::Vector3d tm = digit_forward_kinematics(spec, d, m).tip.translation();
        jac.col(c) = (tp - tm) / (2 * h);
    }
    return jac;
}

double max_coupling_gap(const JointAngles& q) {
    double m = 0.0;
    for (Digit d : kDigits) m = std::max(m, std::abs(q[{d, Slot::Dip}] - q[{d, Slot::Pip}]));
    return m;
}

bool same_state(const SimState& a, const SimState& b) {
    if (a.q.values() != b.q.values() || a.t != b.t) return false;
    for (std::size_t i = 0; i < a.motors.size(); ++i) {
        const auto &x = a.motors[i], &y = b.motors[i];
        if (x.present_position != y.present_position || x.present_current != y.present_current ||
            x.thermal_state != y.thermal_state)
            return false;
    }
    return true;
}

}  // namespace

TEST(SimStepTest, ZeroCommandsAndLoadsIsAFixedPoint) {
    const auto model = default_model();
    SimState s = initial_state(model, JointAngles{});
    const SimState start = s;
    for (int i = 0; i < 200; ++i) s = step(model, s, s.spools(), 0.01);
    EXPECT_EQ(s.q.values(), start.q.values());
    EXPECT_EQ(s.spools(), start.spools());
    for (const auto& m : s.motors) EXPECT_EQ(m.present_current, 0.0);
    EXPECT_FALSE(s.flags.saturation);
    EXPECT_FALSE(s.flags.overload);
}

TEST(SimStepTest, DeterministicGivenInputs) {
    const auto model = default_model();
    std::mt19937_64 rng(5);
    SimState a = initial_state(model, random_pose(model.spec, rng));
    SimState b = a;
    for (int i = 0; i < 300; ++i) {
        const auto target = joint_to_motor(model.transmission, random_pose(model.spec, rng));
        TipForces f = zero_tip_forces();
        f[i % 5] = Eigen::Vector3d(0.3, -0.5, 0.2) * (i % 7);
        a.tip_forces = b.tip_forces = f;
        a = step(model, a, target, 0.01);
        b = step(model, b, target, 0.01);
        ASSERT_TRUE(same_state(a, b)) << "step " << i;
    }
}

TEST(SimStepTest, QuasiStaticConsistency) {
    const auto model = default_model();
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        SimState s = initial_state(model, random_pose(model.spec, rng));
        const auto goals = joint_to_motor(model.transmission, random_pose(model.spec, rng));
        for (int i = 0; i < 100; ++i) s = step(model, s, goals, 0.01);
        ASSERT_EQ(s.spools(), goals);
        const auto expected = motor_to_joint(model.spec, model.transmission, s.spools()).q;
        EXPECT_EQ(s.q.values(), expected.values());
    }
}

TEST(SimStepTest, ComplianceMatchesHandComputedDeflection) {
    auto model = default_model();
    model.params.joint_stiffness = 2.0;
    JointAngles q0;
    q0[{Digit::Index, Slot::McpAbd}] = 0.1;
    q0[{Digit::Index, Slot::McpFlex}] = 0.5;
    q0[{Digit::Index, Slot::Pip}] = 0.6;
    q0 = project_coupling(q0);
    SimState s = initial_state(model, q0);
    const Eigen::Vector3d force(0.3, -0.4, 0.866);
    s.tip_forces[static_cast<std::size_t>(Digit::Index)] = force.normalized();  // 1 N
    s = step(model, s, s.spools(), 0.01);

    const Eigen::Vector3d tau = numeric_jacobian(model.spec, Digit::Index, q0).transpose() * force.normalized();
    EXPECT_NEAR((s.q[{Digit::Index, Slot::McpAbd}]) - 0.1, tau(0) / 2.0, 1e-6);
    EXPECT_NEAR((s.q[{Digit::Index, Slot::McpFlex}]) - 0.5, tau(1) / 2.0, 1e-6);
    // The numeric PIP column moves both coupled joints, each with stiffness k.
    EXPECT_NEAR((s.q[{Digit::Index, Slot::Pip}]) - 0.6, tau(2) / 4.0, 1e-6);
    EXPECT_EQ((s.q[{Digit::Index, Slot::Dip}]), (s.q[{Digit::Index, Slot::Pip}]));
    // Unloaded digits do not move.
    EXPECT_EQ((s.q[{Digit::Middle, Slot::McpFlex}]), 0.0);
}

TEST(SimStepTest, InfiniteStiffnessDoesNotDeflect) {
    auto model = default_model();
    model.params.joint_stiffness = std::numeric_limits<double>::infinity();
    JointAngles q0;
    q0[{Digit::Ring, Slot::McpFlex}] = 0.7;
    SimState s = initial_state(model, q0);
    s.tip_forces[static_cast<std::size_t>(Digit::Ring)] = Eigen::Vector3d(0, 0, -2.0);
    s = step(model, s, s.spools(), 0.01);
    EXPECT_DOUBLE_EQ((s.q[{Digit::Ring, Slot::McpFlex}]), 0.7);
}

TEST(SimStepTest, CouplingHoldsAlongRandomTrajectories) {
    const auto model = default_model();
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    SimState s = initial_state(model, random_pose(model.spec, rng));
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
        if (i % 20 == 0)
            for (auto& f : s.tip_forces) f = Eigen::Vector3d(n(rng), n(rng), n(rng));
        s = step(model, s, joint_to_motor(model.transmission, random_pose(model.spec, rng, 0.0)), 0.01);
        worst = std::max(worst, max_coupling_gap(s.q));
        check_pose(model.spec, s.q);
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(SimStepTest, CommandsBeyondLimitsSaturate) {
    const auto model = default_model();
    SimState s = initial_state(model, JointAngles{});
    JointAngles over;
    over[{Digit::Middle, Slot::McpFlex}] = 1.5;
    auto goals = joint_to_motor(model.transmission, over);
    goals[default_motor(Digit::Middle, RouteFunction::McpFlexExt).index()] += 2.0;
    for (int i = 0; i < 100; ++i) s = step(model, s, goals, 0.01);
    EXPECT_TRUE(s.flags.saturation);
    EXPECT_EQ((s.q[{Digit::Middle, Slot::McpFlex}]), (model.spec.joint({Digit::Middle, Slot::McpFlex}).limits.max));
}

TEST(SimStepTest, SnapFitFaultFreezesMcpUntilReset) {
    const auto model = default_model();
    JointAngles q0;
    q0[{Digit::Index, Slot::McpFlex}] = 0.4;
    SimState s = initial_state(model, q0);
    const auto di = static_cast<std::size_t>(Digit::Index);
    s.tip_forces[di] = -30.0 * closing_direction(model.spec, Digit::Index, q0);
    s = step(model, s, s.spools(), 0.01);
    ASSERT_TRUE(s.flags.snap_fit_fault[di]);
    EXPECT_FALSE(s.flags.snap_fit_fault[static_cast<std::size_t>(Digit::Middle)]);
    EXPECT_EQ((s.q[{Digit::Index, Slot::McpFlex}]), 0.4);

    // Commanding a new MCP angle does nothing while the fault is latched.
    s.tip_forces = zero_tip_forces();
    JointAngles q1 = q0;
    q1[{Digit::Index, Slot::McpFlex}] = 1.0;
    const auto goals = joint_to_motor(model.transmission, q1);
    for (int i = 0; i < 50; ++i) s = step(model, s, goals, 0.01);
    EXPECT_TRUE(s.flags.snap_fit_fault[di]);
    EXPECT_EQ((s.q[{Digit::Index, Slot::McpFlex}]), 0.4);

    s = reset_snap_fit(s);
    s = step(model, s, goals, 0.01);
    EXPECT_FALSE(s.flags.snap_fit_fault[di]);
    EXPECT_NEAR((s.q[{Digit::Index, Slot::McpFlex}]), 1.0, 1e-12);
}

TEST(SimStepTest, OverloadedMotorSagsOpen) {
    const auto model = default_model();
    JointAngles q0;
    q0[{Digit::Pinky, Slot::McpFlex}] = 0.8;
    q0[{Digit::Pinky, Slot::Pip}] = 0.8;
    q0 = project_coupling(q0);
    SimState s = initial_state(model, q0);
    // Rigid joints and no snap-fit, so only the motors can give way.
    auto soft = model;
    soft.params.snap_fit_threshold = std::numeric_limits<double>::infinity();
    soft.params.joint_stiffness = std::numeric_limits<double>::infinity();
    s.tip_forces[static_cast<std::size_t>(Digit::Pinky)] = -25.0 * closing_direction(model.spec, Digit::Pinky, q0);
    const auto goals = s.spools();
    for (int i = 0; i < 20; ++i) s = step(soft, s, goals, 0.01);
    EXPECT_TRUE(s.flags.overload);
    EXPECT_LT((s.q[{Digit::Pinky, Slot::McpFlex}]), 0.8);
    for (const auto& m : s.motors) EXPECT_LE(std::abs(m.present_current), 600.0);
}

TEST(SimStepTest, RejectsBadInput) {
    const auto model = default_model();
    SimState s = initial_state(model, JointAngles{});
    EXPECT_THROW(step(model, s, s.spools(), 0.0), DomainError);
    JointAngles bad;
    bad[{Digit::Index, Slot::McpFlex}] = 5.0;
    EXPECT_THROW(initial_state(model, bad), LimitError);
}

TEST(TransmissionVariantTest, AdvantageAndDirectDrive) {
    const auto adv3 = with_spool_advantage(hand().transmission, 3.0);
    for (const auto& r : adv3.routes()) EXPECT_NEAR(spool_advantage(r), 3.0, 1e-12);
    const auto dd = direct_drive_transmission(hand().spec);
    for (const auto& r : dd.routes()) {
        EXPECT_NEAR(spool_advantage(r), 1.0, 1e-12);
        EXPECT_EQ(r.friction_mu, 0.0);
    }
    EXPECT_TRUE(dd.springs().empty());
    std::mt19937_64 rng(9);
    for (int i = 0; i < 100; ++i) {
        const auto q = random_pose(hand().spec, rng);
        const auto back = motor_to_joint(hand().spec, dd, joint_to_motor(dd, q)).q;
        for (std::size_t k = 0; k < kJointCount; ++k) ASSERT_NEAR(back.values()[k], q.values()[k], 1e-9);
    }
    EXPECT_THROW(with_spool_advantage(hand().transmission, 0.0), DomainError);
}

// ---------------------------------------------------------------------------

namespace {

double pullout_force(PulloutConfig c) {
    return run_pullout_test(hand().spec, hand().transmission, c).summary.at("pullout_force_n").get<double>();
}

}  // namespace

TEST(PulloutTest, TendonBeatsDirectDriveWhenAdvantageAboveOne) {
    PulloutConfig direct;
    direct.drive = DriveKind::DirectDrive;
    const double dd = pullout_force(direct);
    EXPECT_GT(dd, 0.0);
    for (double adv : {1.2, 1.5, 2.0, 3.0}) {
        PulloutConfig t;
        t.spool_advantage = adv;
        EXPECT_GT(pullout_force(t), dd) << "advantage " << adv;
    }
}

TEST(PulloutTest, MonotoneInStiffness) {
    double prev = 0.0;
    for (double k : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        PulloutConfig c;
        c.sim.joint_stiffness = k;
        const double f = pullout_force(c);
        EXPECT_GE(f, prev) << "k " << k;
        prev = f;
    }
}

TEST(PulloutTest, MonotoneInMotorTorqueLimit) {
    for (DriveKind drive : {DriveKind::Tendon, DriveKind::DirectDrive}) {
        double prev = 0.0;
        for (double limit : {150.0, 300.0, 600.0, 1200.0}) {
            PulloutConfig c;
            c.drive = drive;
            c.sim.motor.current_limit_ma = limit;
            const double f = pullout_force(c);
            EXPECT_GE(f, prev) << drive_name(drive) << " " << limit;
            prev = f;
        }
    }
}

TEST(PulloutTest, RigidUnlimitedHandHitsTheCap) {
    PulloutConfig c;
    c.sim.joint_stiffness = std::numeric_limits<double>::infinity();
    c.sim.motor.current_limit_ma = std::numeric_limits<double>::infinity();
    c.force_cap = 20.0;
    const auto r = run_pullout_test(hand().spec, hand().transmission, c);
    EXPECT_TRUE(r.summary.at("reached_cap").get<bool>());
    EXPECT_NEAR(r.summary.at("pullout_force_n").get<double>(), 20.0, 1e-9);
}

TEST(PulloutTest, ForceLevelsStepByTenthNewton) {
    const auto r = run_pullout_test(hand().spec, hand().transmission, PulloutConfig{});
    ASSERT_GE(r.samples.size(), 3u);
    for (std::size_t i = 0; i < r.samples.size(); ++i) EXPECT_NEAR(r.samples[i].load, 0.1 * i, 1e-12);
    // The last sample is the first failing one.
    EXPECT_FALSE(r.summary.at("reached_cap").get<bool>());
    EXPECT_NEAR(r.summary.at("failed_at_n").get<double>(), r.samples.back().load, 0.0);
}

TEST(ReportTest, SummariesRecomputeBitExactFromLogs) {
    RepeatabilityConfig rc;
    rc.cycles = 50;
    HoldingConfig hc;
    hc.duration = 600;
    for (const auto& r : {run_pullout_test(hand().spec, hand().transmission, PulloutConfig{}),
                          run_repeatability_test(hand().spec, hand().transmission, rc),
                          run_holding_test(hand().spec, hand().transmission, hc)}) {
        EXPECT_TRUE(verify_report(r)) << r.kind;
        const auto text = io::report_to_text(r);
        const auto back = io::report_from_text(text);
        EXPECT_EQ(back.kind, r.kind);
        EXPECT_EQ(back.samples, r.samples);
        EXPECT_TRUE(verify_report(back)) << r.kind;
        EXPECT_EQ(io::report_to_text(back), text);
    }
}

TEST(ReportTest, TamperedSummaryFailsVerification) {
    auto r = run_pullout_test(hand().spec, hand().transmission, PulloutConfig{});
    r.summary["pullout_force_n"] = r.summary["pullout_force_n"].get<double>() + 0.1;
    EXPECT_FALSE(verify_report(r));
    EXPECT_THROW(io::report_from_text("{\"type\":\"sample\"}\n"), Error);
}

TEST(ReportTest, ConfigRoundTrip) {
    PulloutConfig p;
    p.digit = Digit::Ring;
    p.drive = DriveKind::DirectDrive;
    p.sim.joint_stiffness = std::numeric_limits<double>::infinity();
    const auto back = pullout_config_from_json(to_json(p));
    EXPECT_EQ(back.digit, Digit::Ring);
    EXPECT_EQ(back.drive, DriveKind::DirectDrive);
    EXPECT_TRUE(std::isinf(back.sim.joint_stiffness));
    EXPECT_EQ(to_json(back).dump(), to_json(p).dump());
    EXPECT_THROW(pullout_config_from_json(json{{"digit", "toe"}}), ConfigError);
    EXPECT_THROW(holding_config_from_json(json{{"digit_load_fraction", 2.0}}), ConfigError);
    EXPECT_THROW(repeatability_config_from_json(json{{"cycles", 0}}), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(RepeatabilityTest, IdealPlantTracksExactly) {
    RepeatabilityConfig c;
    c.backlash = 0.0;
    c.encoder_noise = 0.0;
    c.cycles = 200;
    const auto r = run_repeatability_test(hand().spec, hand().transmission, c);
    EXPECT_LT(r.summary.at("mean_error_rad").get<double>(), 1e-9);
    EXPECT_LT(r.summary.at("max_error_rad").get<double>(), 1e-9);
}

TEST(RepeatabilityTest, DefaultNoiseStaysUnderThresholdAndStationary) {
    const auto r = run_repeatability_test(hand().spec, hand().transmission, RepeatabilityConfig{});
    EXPECT_EQ(r.samples.size(), 2000u);
    EXPECT_LT(r.summary.at("mean_error_rad").get<double>(), 0.01);
    EXPECT_GT(r.summary.at("mean_error_rad").get<double>(), 0.0);
    EXPECT_LT(r.summary.at("half_mean_relative_change").get<double>(), 0.2);
}

TEST(RepeatabilityTest, SeedMakesRunsReproducible) {
    RepeatabilityConfig c;
    c.cycles = 30;
    const auto a = run_repeatability_test(hand().spec, hand().transmission, c);
    const auto b = run_repeatability_test(hand().spec, hand().transmission, c);
    EXPECT_EQ(a.samples, b.samples);
    c.seed = 43;
    const auto d = run_repeatability_test(hand().spec, hand().transmission, c);
    EXPECT_NE(a.samples, d.samples);
}

TEST(EncoderTest, BacklashTrailsMotion) {
    std::mt19937_64 rng(1);
    Encoder e(0.002, 0.0);
    EXPECT_DOUBLE_EQ(e.read(1.0, rng), 0.999);
    EXPECT_DOUBLE_EQ(e.read(1.0, rng), 0.999);
    EXPECT_DOUBLE_EQ(e.read(0.5, rng), 0.501);
}

// ---------------------------------------------------------------------------

TEST(HoldingTest, TendonDrawsAtMostHalfTheDirectDriveCurrent) {
    const auto r = run_holding_test(hand().spec, hand().transmission, HoldingConfig{});
    const auto& s = r.summary;
    EXPECT_LE(s.at("current_ratio").get<double>(), 0.5);
    EXPECT_FALSE(s.at("tendon").at("hold_failed").get<bool>());
    EXPECT_TRUE(s.at("tendon").at("rise_then_plateau").get<bool>());
    EXPECT_TRUE(s.at("tendon").at("within_clamp").get<bool>());
    EXPECT_LT(s.at("tendon").at("max_motor_current_ma").get<double>(), 600.0);
    EXPECT_EQ(s.at("tendon").at("samples").get<int>(), 360);
}

TEST(HoldingTest, PerMotorTraceRisesThenPlateaus) {
    const auto r = run_holding_test(hand().spec, hand().transmission, HoldingConfig{});
    std::vector<std::vector<double>> traces(kActiveCount);
    for (const auto& s : r.samples)
        if (s.model == "tendon")
            for (std::size_t i = 0; i < kActiveCount; ++i) traces[i].push_back(std::abs(s.currents[i]));
    for (const auto& t : traces) {
        for (std::size_t k = 1; k < t.size(); ++k) ASSERT_GE(t[k], t[k - 1]);
        EXPECT_LE(t.back(), 600.0);
    }
}

TEST(HoldingTest, ZeroMassDrawsAlmostNothing) {
    HoldingConfig c;
    c.mass = 0.0;
    c.duration = 600;
    const auto r = run_holding_test(hand().spec, hand().transmission, c);
    EXPECT_EQ(r.summary.at("direct").at("average_total_current_ma").get<double>(), 0.0);
    // Only the elastic return bands remain for the tendon drive.
    EXPECT_LT(r.summary.at("tendon").at("average_motor_current_ma").get<double>(), 10.0);
}

TEST(HoldingTest, CurrentFallsAsAssistiveFrictionRises) {
    double prev = std::numeric_limits<double>::infinity();
    for (double mu : {0.0, 0.05, 0.1, 0.2, 0.3}) {
        Transmission tr = hand().transmission;
        std::vector<TendonRoute> routes = tr.routes();
        for (auto& route : routes) route.friction_mu = mu;
        tr = Transmission(routes, tr.springs(), tr.ratchet_step());
        HoldingConfig c;
        c.duration = 600;
        const double avg = run_holding_test(hand().spec, tr, c).summary.at("tendon").at("average_total_current_ma").get<double>();
        EXPECT_LT(avg, prev) << "mu " << mu;
        prev = avg;
    }
}

TEST(HoldingTest, OverloadMarksHoldFailedWithSag) {
    HoldingConfig c;
    c.mass = 20.0;
    c.duration = 120;
    const auto r = run_holding_test(hand().spec, hand().transmission, c);
    EXPECT_TRUE(r.summary.at("tendon").at("hold_failed").get<bool>());
    EXPECT_TRUE(r.summary.at("direct").at("hold_failed").get<bool>());
    EXPECT_LE(r.summary.at("direct").at("max_motor_current_ma").get<double>(), 600.0);
    // The sag shows up as achieved angles opening away from the commanded grasp.
    const auto& last = r.samples.back();
    double open = 0.0;
    for (std::size_t i = 0; i < last.commanded.size(); ++i) open = std::max(open, last.commanded[i] - last.achieved[i]);
    EXPECT_GT(open, 0.1);
}

// ---------------------------------------------------------------------------

TEST(SphereGraspTest, FarSphereMakesNoContact) {
    const auto s = check_sphere_grasp(hand().spec, JointAngles{}, Eigen::Vector3d(0, 0, 1.0), 0.03);
    EXPECT_EQ(s.contacts, 0);
    EXPECT_FALSE(s.closed);
    EXPECT_THROW(check_sphere_grasp(hand().spec, JointAngles{}, Eigen::Vector3d::Zero(), 0.0), DomainError);
}

TEST(SphereGraspTest, SignedDistanceMatchesFingertipGeometry) {
    std::mt19937_64 rng(12);
    const auto q = random_pose(hand().spec, rng);
    const Eigen::Vector3d c(0.01, 0.08, 0.05);
    const auto s = check_sphere_grasp(hand().spec, q, c, 0.03);
    const auto pose = forward_kinematics(hand().spec, q);
    for (Digit d : kDigits) {
        const auto i = static_cast<std::size_t>(d);
        EXPECT_NEAR(s.digits[i].signed_distance, (pose[i].tip.translation() - c).norm() - 0.03, 1e-15);
        EXPECT_EQ(s.digits[i].contact, std::abs(s.digits[i].signed_distance) <= 0.002);
    }
}

TEST(SphereGraspTest, AngularGap) {
    const double pi = std::numbers::pi;
    EXPECT_DOUBLE_EQ(max_angular_gap({}), 2 * pi);
    EXPECT_DOUBLE_EQ(max_angular_gap({0.3}), 2 * pi);
    EXPECT_NEAR(max_angular_gap({0.0, 2 * pi / 3, -2 * pi / 3}), 2 * pi / 3, 1e-12);
    EXPECT_NEAR(max_angular_gap({0.0, 0.5, 1.0}), 2 * pi - 1.0, 1e-12);
    // Wrap-around: 3.0 and -3.0 are 0.283 apart, leaving -3.0 to 1.5.
    EXPECT_NEAR(max_angular_gap({3.0, -3.0, 1.5}), 4.5, 1e-12);
    EXPECT_NEAR(max_angular_gap({0.0, pi}), pi, 1e-12);
}

TEST(SphereGraspTest, SingleContactIsNotClosed) {
    std::mt19937_64 rng(13);
    const auto q = random_pose(hand().spec, rng);
    const Eigen::Vector3d tip = forward_kinematics(hand().spec, q)[2].tip.translation();
    const Eigen::Vector3d center = tip + Eigen::Vector3d(0, 0, 0.02);
    const auto s = check_sphere_grasp(hand().spec, q, center, 0.02);
    EXPECT_TRUE(s.digits[2].contact);
    EXPECT_FALSE(s.closed);
}
