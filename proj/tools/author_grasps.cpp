// Authors data/feix_grasps.json: each grasp is posed from explicit angles
// for the digits that only shape the hand and fingertip IK for the contacts,
// then checked against its predicates on the nominal and the +-10% hands.

#include <craft/grasp_library.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <string>
#include <iostream>

using namespace craft;

namespace {

using Vec = Eigen::Vector3d;

constexpr Digit T = Digit::Thumb, I = Digit::Index, M = Digit::Middle, R = Digit::Ring, P = Digit::Pinky;
const std::vector<Digit> kFingers{I, M, R, P};
const std::vector<Digit> kAll{T, I, M, R, P};

class Pose {
public:
    explicit Pose(const HandSpec& spec) : spec_(spec) {}

    Pose& set(Digit d, double abd, double flex, double pip) {
        q_[{d, Slot::McpAbd}] = abd;
        q_[{d, Slot::McpFlex}] = flex;
        q_[{d, Slot::Pip}] = pip;
        q_ = project_coupling(q_);
        return *this;
    }

    Pose& set(const std::vector<Digit>& ds, double abd, double flex, double pip) {
        for (Digit d : ds) set(d, abd, flex, pip);
        return *this;
    }

    Pose& reach(Digit d, const Vec& target) {
        q_ = fingertip_ik(spec_, d, target, q_);
        return *this;
    }

    Vec tip(Digit d) const { return digit_forward_kinematics(spec_, d, q_).tip.translation(); }

    Vec segment_mid(Digit d, Segment s) const { return segment_at(d, s, 0.5); }

    Vec segment_at(Digit d, Segment s, double frac) const {
        const auto [a, b] = grasp_detail::segment_points(forward_kinematics(spec_, q_), d, s);
        return a + frac * (b - a);
    }

    // Retries `attempt` on copies while sweeping one shaping joint outward
    // from its authored value; keeps the first copy whose IK succeeds.
    Pose& sweep(Digit d, Slot slot, const std::function<void(Pose&)>& attempt) {
        return sweep(std::vector<Digit>{d}, slot, attempt);
    }

    Pose& sweep(const std::vector<Digit>& ds, Slot slot, const std::function<void(Pose&)>& attempt) {
        for (int k = 0; k <= 160; ++k) {
            const double delta = (k % 2 ? 1.0 : -1.0) * 0.01 * ((k + 1) / 2);
            Pose trial = *this;
            bool inside = true;
            for (Digit d : ds) {
                const JointId id{d, slot};
                const double v = q_[id] + delta;
                inside = inside && spec_.joint(id).limits.contains(v);
                trial.q_[id] = v;
            }
            if (!inside) continue;
            trial.q_ = project_coupling(trial.q_);
            try {
                attempt(trial);
            } catch (const UnreachableError&) {
                continue;
            }
            q_ = trial.q_;
            return *this;
        }
        throw UnreachableError("sweep of " + std::string(digit_name(ds.front())) + " " +
                                   std::string(slot_name(slot, ds.front())) + " found no reachable contact", 0.0);
    }

    const JointAngles& q() const { return q_; }

private:
    const HandSpec& spec_;
    JointAngles q_;
};

GraspPredicate pinch(Digit a, Digit b) { return {PredicateKind::Pinch, {a, b}, Segment::Distal, kPinchEpsilon}; }

GraspPredicate palm_side(std::vector<Digit> ds, double margin = 0.005) {
    return {PredicateKind::PalmSide, std::move(ds), Segment::Distal, margin};
}

GraspPredicate lateral(Digit tip, Digit link, Segment s) {
    return {PredicateKind::LateralOpposition, {tip, link}, s, kPinchEpsilon};
}

GraspPredicate adduction(Digit a, Digit b, Segment s) {
    return {PredicateKind::AdductionGap, {a, b}, s, kAdductionGap};
}

GraspPredicate flat(std::vector<Digit> ds) {
    return {PredicateKind::FlatPlane, std::move(ds), Segment::Distal, kFlatPlaneTolerance};
}

GraspPredicate extended(std::vector<Digit> ds, double ratio = 0.95) {
    return {PredicateKind::Extended, std::move(ds), Segment::Distal, ratio};
}

GraspPredicate sphere(std::vector<Digit> ds, const Vec& c, double r) {
    return {PredicateKind::Sphere, std::move(ds), Segment::Distal, kContactTolerance, c, r};
}

Vec dir(double x, double y, double z) { return Vec(x, y, z).normalized(); }

// Places each listed digit's tip on the sphere along its direction.
void on_sphere(Pose& p, const Vec& c, double r, const std::vector<std::pair<Digit, Vec>>& placements) {
    for (const auto& [d, n] : placements) p.reach(d, c + r * n);
}

// Pulls each listed tip radially onto the sphere, sweeping the digit's
// flexion until the projected point is reachable.
void to_sphere(Pose& p, const Vec& c, double r, const std::vector<Digit>& ds) {
    for (Digit d : ds) {
        p.sweep(d, Slot::McpFlex, [&](Pose& t) { t.reach(d, c + r * (t.tip(d) - c).normalized()); });
    }
}

using Author = std::function<GraspPreset(const HandSpec&)>;

GraspPreset make(const std::string& name, GraspCategory cat, const Pose& p, std::vector<GraspPredicate> preds) {
    return {name, cat, p.q(), std::move(preds)};
}

std::vector<Author> authors() {
    using C = GraspCategory;
    std::vector<Author> out;

    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.55, 0.8).set(T, 0.0, 0.9, 0.4);
        return make("Large Diameter", C::Power, p, {palm_side(kAll)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.9, 1.3).set(T, 0.2, 0.9, 0.3);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_mid(I, Segment::Middle) + Vec(0, 0, -0.004)); });
        return make("Small Diameter", C::Power, p, {palm_side(kFingers), lateral(T, I, Segment::Middle)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.75, 1.05).set(T, 0.0, 1.0, 0.3);
        return make("Medium Wrap", C::Power, p, {palm_side(kAll)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.95, 0.7).set(T, -0.3, 0.4, 0.1);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_at(I, Segment::Middle, 0.3) + Vec(0.003, 0, 0)); });
        return make("Adducted Thumb", C::Power, p, {palm_side(kFingers), lateral(T, I, Segment::Middle)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.85, 1.2).set(T, 0.0, 0.7, 0.3);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_mid(I, Segment::Middle) + Vec(0.004, 0, 0)); });
        return make("Light Tool", C::Power, p, {palm_side(kFingers), lateral(T, I, Segment::Middle)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.9, 0.5);
        p.sweep(kFingers, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(M)); });
        return make("Prismatic 4 Finger", C::Precision, p, {pinch(T, M), flat(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set({I, M, R}, 0.0, 0.85, 0.55).set(P, 0.0, 1.3, 1.5);
        p.sweep({I, M, R}, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(M)); });
        return make("Prismatic 3 Finger", C::Precision, p, {pinch(T, M), flat({I, M, R})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.8, 0.6).set({M, R, P}, 0.0, 1.2, 1.4);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Prismatic 2 Finger", C::Precision, p, {pinch(T, I), palm_side({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.9, 0.35).set({M, R, P}, 0.0, 0.15, 0.1);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Palmar Pinch", C::Precision, p, {pinch(T, I), extended({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(-0.01, 0.11, 0.04);
        p.set(I, -0.3, 0.5, 0.8).set(M, -0.1, 0.5, 0.8).set(R, 0.1, 0.5, 0.8).set(P, 0.3, 0.5, 0.8).set(T, -0.6, 0.5, 0.3);
        to_sphere(p, c, 0.05, kAll);
        return make("Power Disk", C::Power, p, {sphere(kAll, c, 0.05), palm_side(kAll)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.0, 0.115, 0.045);
        p.set(kFingers, 0.0, 0.5, 0.8).set(T, 0.0, 0.8, 0.3);
        to_sphere(p, c, 0.045, kAll);
        return make("Power Sphere", C::Power, p, {sphere(kAll, c, 0.045), palm_side(kAll)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.0, 0.13, 0.065);
        p.set(kFingers, 0.0, 0.6, 0.6).set(T, 0.0, 0.8, 0.3);
        on_sphere(p, c, 0.04, {{I, dir(0.6, 0.8, 0)}, {M, dir(0.05, 1, 0)}, {R, dir(-0.5, 0.87, 0)},
                               {P, dir(-0.95, 0.3, 0)}, {T, dir(0.3, -0.95, 0)}});
        return make("Precision Disk", C::Precision, p, {sphere(kAll, c, 0.04), flat(kAll)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.0, 0.13, 0.07);
        p.set(kFingers, 0.0, 0.6, 0.6).set(T, 0.0, 0.8, 0.3);
        on_sphere(p, c, 0.03, {{I, dir(0.55, 0.7, 0.3)}, {M, dir(0.05, 0.9, 0.35)}, {R, dir(-0.5, 0.75, 0.3)},
                               {P, dir(-0.9, 0.3, 0.3)}, {T, dir(0.35, -0.9, 0.25)}});
        return make("Precision Sphere", C::Precision, p, {sphere(kAll, c, 0.03)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.35, 0.5, 1.0).set(M, -0.35, 0.5, 1.0).set({R, P}, 0.0, 1.2, 1.4);
        p.reach(T, (p.tip(I) + p.tip(M)) / 2.0);
        return make("Tripod", C::Precision, p, {pinch(T, I), pinch(T, M)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.1, 1.5).set(T, 0.0, 0.0, 0.1);
        return make("Fixed Hook", C::Power, p, {palm_side(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.9, 1.3).set({M, R, P}, 0.0, 1.1, 1.4);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_mid(I, Segment::Middle) + Vec(0.004, 0, 0)); });
        return make("Lateral", C::Intermediate, p, {lateral(T, I, Segment::Middle), palm_side({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.3, 0.0).set({M, R, P}, 0.0, 0.85, 1.2).set(T, 0.0, 0.9, 0.3);
        p.sweep(M, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_mid(M, Segment::Middle) + Vec(0.003, 0, -0.003)); });
        return make("Index Finger Extension", C::Power, p,
                    {extended({I}), palm_side({M, R, P}), lateral(T, M, Segment::Middle)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.0, 0.0).set(T, 0.55, 0.05, 0.0);
        return make("Extension Type", C::Power, p, {flat(kAll), extended(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.25, 0.6, 0.5).set(M, -0.25, 0.6, 0.5).set({R, P}, 0.0, 1.2, 1.4);
        p.sweep({I, M}, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_at(I, Segment::Middle, 0.4) + Vec(0.003, 0, 0)); });
        return make("Distal Type", C::Power, p,
                    {adduction(I, M, Segment::Distal), palm_side({R, P}), lateral(T, I, Segment::Middle)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.35, 0.3, 1.2).set(M, -0.35, 0.3, 1.2).set({R, P}, 0.0, 1.1, 1.3);
        p.reach(T, (p.tip(I) + p.tip(M)) / 2.0);
        return make("Writing Tripod", C::Intermediate, p, {pinch(T, I), lateral(T, M, Segment::Distal)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.35, 0.5, 1.0).set(M, -0.35, 0.6, 1.1).set({R, P}, 0.0, 1.1, 1.3);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        p.sweep(M, Slot::Pip, [](Pose& c) { c.reach(M, c.segment_mid(I, Segment::Distal) + Vec(-0.003, 0, 0)); });
        return make("Tripod Variation", C::Intermediate, p, {pinch(T, I), lateral(M, I, Segment::Distal)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 1.45, 0.25);
        p.sweep(kFingers, Slot::McpFlex, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Parallel Extension", C::Precision, p, {pinch(T, I), extended(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.2, 0.25, 0.15).set(M, -0.2, 0.25, 0.15).set({R, P}, 0.0, 1.2, 1.4).set(T, 0.0, 0.6, 0.3);
        return make("Adduction Grip", C::Intermediate, p, {adduction(I, M, Segment::Proximal), palm_side({R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.7, 1.2).set({M, R, P}, 0.0, 1.1, 1.4);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Tip Pinch", C::Precision, p, {pinch(T, I), palm_side({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.7, 1.0).set(M, 0.0, 0.8, 1.1).set({R, P}, 0.0, 1.2, 1.4);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_mid(I, Segment::Distal) + Vec(0.004, 0, 0)); });
        return make("Lateral Tripod", C::Intermediate, p, {lateral(T, I, Segment::Distal), palm_side({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.0, 0.125, 0.05);
        p.set(kFingers, 0.0, 0.5, 0.8).set(P, 0.0, 1.2, 1.4).set(T, 0.0, 0.8, 0.3);
        on_sphere(p, c, 0.035, {{I, dir(0.6, 0.3, 0.3)}, {M, dir(0, 0.9, 0.45)}, {R, dir(-0.7, 0.5, 0.3)},
                                {T, dir(0.2, -0.9, 0.3)}});
        return make("Sphere 4 Finger", C::Power, p, {sphere({T, I, M, R}, c, 0.035)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.005, 0.13, 0.065);
        p.set(kFingers, 0.0, 0.6, 0.7).set(P, 0.0, 1.2, 1.4).set(T, 0.0, 0.8, 0.3);
        on_sphere(p, c, 0.02, {{I, dir(0.7, 0.5, 0.3)}, {M, dir(0, 0.95, 0.3)}, {R, dir(-0.8, 0.5, 0.3)},
                               {T, dir(0.2, -0.95, 0.2)}});
        return make("Quadpod", C::Precision, p, {sphere({T, I, M, R}, c, 0.02)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        const Vec c(0.012, 0.125, 0.05);
        p.set({I, M}, 0.0, 0.5, 0.8).set({R, P}, 0.0, 1.2, 1.4).set(T, 0.0, 0.8, 0.3);
        on_sphere(p, c, 0.03, {{I, dir(0.75, 0.5, 0.3)}, {M, dir(-0.6, 0.7, 0.3)}, {T, dir(0.1, -0.95, 0.3)}});
        return make("Sphere 3 Finger", C::Power, p, {sphere({T, I, M}, c, 0.03), palm_side({R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.6, 1.0).set(T, 0.0, 0.5, 0.1);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.segment_at(I, Segment::Middle, 0.6) + Vec(0.003, 0, 0.002)); });
        return make("Stick", C::Intermediate, p, {lateral(T, I, Segment::Middle), palm_side({M, R, P})});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 1.0, 0.25).set(T, -0.3, 0.6, 0.1);
        return make("Palmar", C::Power, p, {palm_side(kFingers), flat(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, 0.0, 0.9, 1.5).set({M, R, P}, 0.0, 0.2, 0.2);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Ring", C::Power, p, {pinch(T, I), palm_side({I}, 0.02), extended({M, R, P}, 0.9)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(kFingers, 0.0, 0.5, 1.4).set(T, 0.0, 0.6, 0.1);
        p.sweep(M, Slot::McpFlex, [](Pose& c) { c.reach(T, c.segment_at(M, Segment::Proximal, 0.7) + Vec(0, 0, 0.004)); });
        return make("Ventral", C::Intermediate, p, {lateral(T, M, Segment::Proximal), palm_side(kFingers)});
    });
    out.push_back([](const HandSpec& s) {
        Pose p(s);
        p.set(I, -0.1, 0.7, 0.25).set({M, R, P}, 0.0, 0.3, 0.25);
        p.sweep(I, Slot::Pip, [](Pose& c) { c.reach(T, c.tip(I)); });
        return make("Inferior Pincer", C::Precision, p, {pinch(T, I), extended({M, R, P}, 0.9)});
    });
    return out;
}

void report(const HandSpec& spec, const GraspPreset& g, double scale, const char* tag, bool& ok) {
    const auto v = validate_preset(spec, g, scale);
    ok = ok && v.passed;
    std::printf("%-24s %-6s %s", g.name.c_str(), tag, v.passed ? "pass" : "FAIL");
    for (const auto& r : v.results) std::printf("  %s=%+.4f", r.description.c_str(), r.residual);
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Author the Feix grasp presets"};
    std::string out = "data/feix_grasps.json";
    std::string hand;
    app.add_option("-o,--output", out, "Preset file to write");
    app.add_option("--hand", hand, "Hand spec file (default: built-in)");
    CLI11_PARSE(app, argc, argv);

    const HandSpec spec = hand.empty() ? default_hand_spec() : io::load_hand_description(hand).spec;
    std::vector<GraspPreset> presets;
    bool ok = true;
    const auto table = authors();
    for (std::size_t i = 0; i < table.size(); ++i) {
        try {
            presets.push_back(table[i](spec));
        } catch (const UnreachableError& e) {
            std::fprintf(stderr, "%s: %s\n", std::string(kFeixGrasps[i]).c_str(), e.what());
            ok = false;
            continue;
        }
        const auto& g = presets.back();
        report(spec, g, 1.0, "nom", ok);
        report(scale_phalanges(spec, 0.9), g, 2.0, "x0.9", ok);
        report(scale_phalanges(spec, 1.1), g, 2.0, "x1.1", ok);
    }
    if (ok && presets.size() != kFeixGrasps.size()) {
        std::fprintf(stderr, "authored %zu grasps, expected %zu\n", presets.size(), kFeixGrasps.size());
        return 1;
    }
    if (!ok) {
        std::fprintf(stderr, "some presets fail validation; nothing written\n");
        return 1;
    }
    io::save_presets(out, presets);
    std::printf("wrote %zu presets to %s\n", presets.size(), out.c_str());
    return 0;
}
