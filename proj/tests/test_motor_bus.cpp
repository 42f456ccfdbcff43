#include "oracles.hpp"

#include <craft/motor_bus.hpp>

#include <gtest/gtest.h>

#include <random>
#include <thread>

using namespace craft;
using namespace craft::bus;

namespace {

BusFrame random_frame(std::mt19937_64& rng, std::size_t max_params = 64) {
    static constexpr std::array<Instruction, 6> kinds{Instruction::Ping,     Instruction::Read,
                                                      Instruction::Write,    Instruction::SyncRead,
                                                      Instruction::SyncWrite, Instruction::Status};
    std::uniform_int_distribution<int> byte(0, 255), id(0, 253), kind(0, 5);
    std::uniform_int_distribution<std::size_t> n(0, max_params);
    BusFrame f;
    const int raw_id = id(rng);
    f.id = static_cast<std::uint8_t>(raw_id == 253 ? kBroadcastId : raw_id);
    f.instruction = kinds[static_cast<std::size_t>(kind(rng))];
    const std::size_t count = n(rng);
    for (std::size_t i = 0; i < count; ++i) {
        // Bias toward the header bytes so stuffing is exercised often.
        const int r = byte(rng);
        f.params.push_back(r < 64 ? 0xFF : r < 96 ? 0xFD : static_cast<std::uint8_t>(byte(rng)));
    }
    return f;
}

Bytes concat(const std::vector<Bytes>& parts) {
    Bytes out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

}  // namespace

TEST(Crc, TableMatchesBitwiseOracle) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> byte(0, 255), len(0, 300);
    for (int i = 0; i < 10000; ++i) {
        Bytes data(static_cast<std::size_t>(len(rng)));
        for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
        ASSERT_EQ(crc16(data), oracle::crc16_bitwise(data));
    }
}

TEST(Encode, PingToIdOne) {
    const Bytes expected{0xFF, 0xFF, 0xFD, 0x00, 0x01, 0x03, 0x00, 0x01, 0x19, 0x4E};
    EXPECT_EQ(encode_frame(make_ping(1)), expected);
    const Bytes body(expected.begin(), expected.end() - 2);
    EXPECT_EQ(oracle::crc16_bitwise(body), 0x4E19);
}

TEST(Encode, LengthIsParamsPlusOverhead) {
    BusFrame f{3, Instruction::Write, {0x74, 0x00, 1, 2, 3, 4}};
    EXPECT_EQ(encode_frame(f).size(), f.params.size() + kOverhead);
}

TEST(Encode, StuffsHeaderPatternInParams) {
    BusFrame f{7, Instruction::Write, {0x01, 0xFF, 0xFF, 0xFD, 0x02}};
    const auto bytes = encode_frame(f);
    EXPECT_EQ(bytes.size(), f.params.size() + kOverhead + 1);
    const Bytes body(bytes.begin() + 8, bytes.end() - 2);
    EXPECT_EQ(body, (Bytes{0x01, 0xFF, 0xFF, 0xFD, 0xFD, 0x02}));
    EXPECT_EQ(bytes[5], 9);  // 6 stuffed params + 3
    const auto frames = decode_all(bytes);
    ASSERT_EQ(frames.size(), 1u);
    EXPECT_EQ(frames[0], f);
}

TEST(Encode, RejectsOversizeAndBadId) {
    BusFrame big{1, Instruction::Write, Bytes(kMaxParams + 1, 0)};
    EXPECT_THROW(encode_frame(big), EncodeError);
    BusFrame bad{253, Instruction::Ping, {}};
    EXPECT_THROW(encode_frame(bad), EncodeError);
    BusFrame max{1, Instruction::Write, Bytes(kMaxParams, 0xFF)};
    EXPECT_EQ(decode_all(encode_frame(max)).at(0), max);
}

TEST(Decode, RoundTripTenThousandRandomFrames) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10000; ++i) {
        const auto f = random_frame(rng);
        const auto bytes = encode_frame(f);
        ParserCounters c;
        const auto frames = decode_all(bytes, &c);
        ASSERT_EQ(frames.size(), 1u);
        ASSERT_EQ(frames[0], f);
        ASSERT_EQ(frames[0].crc, oracle::crc16_bitwise(std::span(bytes.data(), bytes.size() - 2)));
        ASSERT_EQ(c.bytes_discarded, 0u);
    }
}

TEST(Decode, FrameSplitAcrossThreeChunks) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 2000; ++i) {
        const auto f = random_frame(rng);
        const auto bytes = encode_frame(f);
        std::uniform_int_distribution<std::size_t> cut(0, bytes.size());
        std::size_t a = cut(rng), b = cut(rng);
        if (a > b) std::swap(a, b);
        StreamParser p;
        std::vector<BusFrame> got;
        for (auto [lo, hi] : {std::pair{std::size_t{0}, a}, std::pair{a, b}, std::pair{b, bytes.size()}}) {
            auto out = p.feed(std::span(bytes.data() + lo, hi - lo));
            got.insert(got.end(), out.begin(), out.end());
        }
        ASSERT_EQ(got.size(), 1u);
        ASSERT_EQ(got[0], f);
    }
}

TEST(Decode, ChunkingInvariance) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> byte(0, 255), junk(0, 12);
    std::vector<Bytes> parts;
    std::vector<BusFrame> sent;
    for (int i = 0; i < 300; ++i) {
        const auto f = random_frame(rng);
        sent.push_back(f);
        auto bytes = encode_frame(f);
        if (i % 7 == 3) bytes[bytes.size() / 2] ^= 0x10;  // some corruption
        parts.push_back(bytes);
        Bytes noise(static_cast<std::size_t>(junk(rng)));
        for (auto& b : noise) b = static_cast<std::uint8_t>(byte(rng));
        parts.push_back(noise);
    }
    const Bytes stream = concat(parts);
    ParserCounters whole_counters;
    const auto whole = decode_all(stream, &whole_counters);
    EXPECT_GT(whole.size(), 200u);
    for (int trial = 0; trial < 50; ++trial) {
        StreamParser p;
        std::vector<BusFrame> got;
        std::uniform_int_distribution<std::size_t> step(1, 40);
        for (std::size_t at = 0; at < stream.size();) {
            const std::size_t n = std::min(step(rng), stream.size() - at);
            auto out = p.feed(std::span(stream.data() + at, n));
            got.insert(got.end(), out.begin(), out.end());
            at += n;
        }
        ASSERT_EQ(got, whole);
        EXPECT_EQ(p.counters().frames, whole_counters.frames);
        EXPECT_EQ(p.counters().crc_errors, whole_counters.crc_errors);
        EXPECT_EQ(p.counters().malformed, whole_counters.malformed);
    }
    // Byte-at-a-time.
    StreamParser p;
    std::vector<BusFrame> got;
    for (std::uint8_t b : stream) {
        auto out = p.feed(std::span(&b, 1));
        got.insert(got.end(), out.begin(), out.end());
    }
    EXPECT_EQ(got, whole);
}

TEST(Decode, CorruptedCrcByteDropsFrame) {
    auto bytes = encode_frame(make_read(5, 132, 4));
    bytes.back() ^= 0x01;
    ParserCounters c;
    EXPECT_TRUE(decode_all(bytes, &c).empty());
    EXPECT_EQ(c.crc_errors, 1u);
    EXPECT_EQ(c.frames, 0u);
}

TEST(Decode, ResynchronizesAfterGarbage) {
    const auto good = encode_frame(make_ping(9));
    auto broken = encode_frame(make_read(2, 132, 4));
    broken[9] ^= 0xAA;
    const Bytes stream = concat({{0x00, 0xFF, 0xFF, 0x12}, broken, {0xFF, 0xFF, 0xFD}, good});
    const auto frames = decode_all(stream);
    ASSERT_EQ(frames.size(), 1u);
    EXPECT_EQ(frames[0], make_ping(9));
}

TEST(Decode, FuzzOneMebibyteNeverEmitsInvalidFrames) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> byte(0, 255);
    StreamParser p;
    std::size_t emitted = 0;
    Bytes soup(1 << 20);
    for (auto& b : soup) {
        // Header-rich soup so the parser sees many candidate frames.
        const int r = byte(rng);
        b = r < 40 ? 0xFF : r < 60 ? 0xFD : r < 70 ? 0x00 : static_cast<std::uint8_t>(byte(rng));
    }
    std::uniform_int_distribution<std::size_t> step(1, 4096);
    for (std::size_t at = 0; at < soup.size();) {
        const std::size_t n = std::min(step(rng), soup.size() - at);
        for (const auto& f : p.feed(std::span(soup.data() + at, n))) {
            ++emitted;
            // The CRC that was on the wire matches the oracle over the
            // canonical encoding of what was emitted.
            const auto re = encode_frame(f);
            ASSERT_EQ(f.crc, oracle::crc16_bitwise(std::span(re.data(), re.size() - 2)));
            ASSERT_LE(f.params.size(), kMaxParams);
        }
        at += n;
    }
    EXPECT_LT(p.buffered(), kMaxParams * 2);
    EXPECT_EQ(p.counters().frames, emitted);
}

TEST(RegisterMapTest, DefaultHasNoOverlapsAndValidWidths) {
    const auto map = default_register_map();
    for (const char* name : {"GoalPosition", "PresentPosition", "PresentCurrent", "TorqueEnable"})
        EXPECT_NO_THROW(map.at(name));
    EXPECT_THROW(RegisterMap({{"A", 10, 4, Access::ReadOnly}, {"B", 12, 2, Access::ReadOnly}}), ConfigError);
    EXPECT_THROW(RegisterMap({{"A", 10, 3, Access::ReadOnly}}), ConfigError);
}

TEST(RegisterMapTest, LoadsFromJson) {
    const json j = {{"registers",
                     {{{"name", "GoalPosition"}, {"address", 30}, {"width", 4}, {"access", "rw"}},
                      {{"name", "PresentPosition"}, {"address", 36}, {"width", 4}}}}};
    const auto map = register_map_from_json(j);
    EXPECT_EQ(map.at("GoalPosition").address, 30);
    EXPECT_EQ(map.at("PresentPosition").access, Access::ReadOnly);
}

TEST(VirtualMotorTest, NoLoadAtGoalDrawsNoCurrent) {
    VirtualMotor m;
    for (int i = 0; i < 100; ++i) m.step(0.01);
    EXPECT_EQ(m.present_current, 0.0);
    EXPECT_EQ(m.present_position, 0.0);
}

TEST(VirtualMotorTest, SlewsAtMaxVelocity) {
    VirtualMotor m;
    m.goal_position = 1.0;
    m.step(0.05);
    EXPECT_NEAR(m.present_position, 0.5, 1e-15);
    m.step(0.1);
    EXPECT_EQ(m.present_position, 1.0);
}

TEST(VirtualMotorTest, SubLimitLoadRisesMonotonicallyToPlateau) {
    VirtualMotor m;
    m.load_torque = 0.1;  // about 286 mA cold
    double prev = 0.0;
    std::vector<double> trace;
    for (int t = 0; t < 3600; ++t) {
        m.step(1.0);
        EXPECT_GE(m.present_current, prev);
        EXPECT_LE(m.present_current, 600.0);
        prev = m.present_current;
        trace.push_back(prev);
    }
    // Closed-form fixed point: I = L/(k(1 - kT*kheat*I)), I in A.
    const double k = 0.35, L = 0.1, kT = 0.3, kheat = 1.0;
    // kT*kheat*I^2 - I + L/k = 0
    const double a = kT * kheat;
    const double fixed = 1000.0 * (1.0 - std::sqrt(1.0 - 4.0 * a * L / k)) / (2.0 * a);
    EXPECT_NEAR(trace.back(), fixed, 0.01);
    EXPECT_GT(trace.back(), trace.front());
    // Plateau: the last 10 minutes barely move.
    EXPECT_LT(trace.back() - trace[trace.size() - 600], 0.05);
    EXPECT_EQ(m.present_position, 0.0);
}

TEST(VirtualMotorTest, OverloadPinsCurrentAndSags) {
    VirtualMotor m;
    m.load_torque = 0.5;  // needs ~1430 mA
    for (int i = 0; i < 10; ++i) m.step(0.1);
    EXPECT_EQ(m.present_current, 600.0);
    EXPECT_TRUE(m.overloaded);
    EXPECT_LT(m.present_position, -0.4);
}

TEST(VirtualBusTest, PingAndUnknownAddress) {
    VirtualBus vbus;
    BusClient client(vbus);
    EXPECT_TRUE(client.ping(1));
    EXPECT_TRUE(client.ping(15));
    EXPECT_FALSE(client.ping(16));

    client.send(make_read(3, 131, 4));
    const auto replies = client.receive();
    ASSERT_EQ(replies.size(), 1u);
    EXPECT_EQ(replies[0].instruction, Instruction::Status);
    EXPECT_EQ(status_error(replies[0]), StatusError::Access);

    client.send(make_write(3, 132, {0, 0, 0, 0}));  // read-only register
    EXPECT_EQ(status_error(client.receive().at(0)), StatusError::Access);
}

TEST(VirtualBusTest, SyncWriteMovesMotorsAndSyncReadReports) {
    VirtualBus vbus;
    BusClient client(vbus);
    std::map<std::uint8_t, double> goals;
    for (auto id : all_motor_ids()) goals[id] = 0.1 * id;
    client.sync_write_goal_positions(goals);
    for (int i = 0; i < 100; ++i) vbus.step(0.01);
    const auto pos = client.sync_read_positions(all_motor_ids());
    for (auto id : all_motor_ids()) EXPECT_NEAR(pos.at(id), 0.1 * id, kRadPerTick / 2 + 1e-12);
    const auto cur = client.sync_read_currents(all_motor_ids());
    for (auto id : all_motor_ids()) EXPECT_EQ(cur.at(id), 0.0);
}

TEST(VirtualBusTest, SignedRegistersRoundTrip) {
    VirtualBus vbus;
    BusClient client(vbus);
    client.write_register(4, "GoalPosition", -1234);
    EXPECT_EQ(client.read_register(4, "GoalPosition"), -1234);
    vbus.with_motors([](auto& ms) { ms[3].load_torque = -0.1; });
    vbus.step(0.01);
    EXPECT_LT(client.read_register(4, "PresentCurrent"), -200);
    EXPECT_THROW(client.write_register(4, "TorqueEnable", 2), BusStatusError);
}

TEST(VirtualBusTest, DroppedResponsesTimeOut) {
    VirtualBus vbus;
    BusClient client(vbus);
    vbus.drop_next_responses(1);
    EXPECT_THROW(client.read_register(1, "PresentPosition"), BusTimeout);
    EXPECT_NO_THROW(client.read_register(1, "PresentPosition"));
}

TEST(VirtualBusTest, ConcurrentWritersAreSerialized) {
    VirtualBus vbus;
    std::vector<std::thread> producers;
    for (int t = 0; t < 4; ++t)
        producers.emplace_back([&vbus, t] {
            for (int i = 0; i < 200; ++i) {
                const auto bytes = encode_frame(make_write(static_cast<std::uint8_t>(t + 1), 116, {1, 0, 0, 0}));
                vbus.write(bytes);
            }
        });
    for (auto& p : producers) p.join();
    vbus.step(0.01);
    EXPECT_EQ(vbus.counters().frames, 800u);
    EXPECT_EQ(vbus.counters().crc_errors, 0u);
}
