#include <accessguard/door.hpp>
#include <accessguard/relay.hpp>

#include "door_reference.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

using namespace accessguard;
using namespace accessguard::door;
using namespace std::chrono_literals;

namespace {

Instant at(long long s) { return from_seconds(s); }

DoorCommand cmd(CommandKind k, Instant t = {}) { return {k, "alice", t, std::nullopt}; }

} // namespace

TEST(DoorMachine, OpenFromLocked)
{
    auto t = handle_command(DoorState::locked(), cmd(CommandKind::Open), at(100), 30s);
    EXPECT_EQ(t.state.mode, Mode::Unlocked);
    EXPECT_EQ(t.state.actuator, Actuator::Energized);
    EXPECT_EQ(t.state.auto_close_at, at(130));
    EXPECT_EQ(t.action, Action::Energize);
    EXPECT_EQ(t.audit.issued_by, "alice");
}

TEST(DoorMachine, CloseFromUnlocked)
{
    auto t = handle_command(DoorState::unlocked(at(0), 30s), cmd(CommandKind::Close), at(5), 30s);
    EXPECT_EQ(t.state, DoorState::locked());
    EXPECT_EQ(t.action, Action::DeEnergize);
}

TEST(DoorMachine, CloseWhenLockedIsAuditedNoOp)
{
    auto t = handle_command(DoorState::locked(), cmd(CommandKind::Close), at(5), 30s);
    EXPECT_EQ(t.state, DoorState::locked());
    EXPECT_EQ(t.action, Action::None);
    EXPECT_EQ(t.audit.outcome, "already locked (no-op)");
}

TEST(DoorMachine, TickDeadlineInclusive)
{
    auto s = DoorState::unlocked(at(0), 10s);
    EXPECT_EQ(tick(s, at(9)).state, s);
    EXPECT_EQ(tick(s, at(9)).action, Action::None);
    EXPECT_EQ(tick(s, at(10)).state, DoorState::locked());
    EXPECT_EQ(tick(s, at(10)).action, Action::DeEnergize);
}

TEST(DoorMachine, OpenExtendsDeadline)
{
    auto s = handle_command(DoorState::locked(), cmd(CommandKind::Open), at(0), 10s).state;
    auto t = handle_command(s, cmd(CommandKind::Open), at(5), 10s);
    EXPECT_EQ(t.action, Action::None);
    EXPECT_EQ(t.state.auto_close_at, at(15));
    EXPECT_EQ(tick(t.state, at(12)).state.mode, Mode::Unlocked);
    EXPECT_EQ(tick(t.state, at(15)).state.mode, Mode::Locked);
}

TEST(DoorController, FailSecureOnEnergizeFailure)
{
    MockActuator relay;
    relay.fail_next = [](bool on) { return !on; };
    DoorController door(relay, 30s);
    auto s = door.command(cmd(CommandKind::Open), at(1));
    EXPECT_EQ(s.mode, Mode::Locked);
    EXPECT_EQ(s.actuator, Actuator::DeEnergized);
    EXPECT_FALSE(relay.powered());
    auto log = door.audit_log();
    ASSERT_EQ(log.size(), 1u);
    EXPECT_NE(log[0].outcome.find("actuator failure"), std::string::npos);
}

TEST(DoorController, ThrowingGatewayIsAFailure)
{
    struct Broken : ActuatorGateway {
        bool energize() override { throw std::runtime_error("relay offline"); }
        bool deenergize() override { return true; }
    } relay;
    DoorController door(relay, 30s);
    EXPECT_EQ(door.command(cmd(CommandKind::Open), at(1)).mode, Mode::Locked);
}

TEST(DoorController, AutoCloseTick)
{
    MockActuator relay;
    DoorController door(relay, 10s);
    door.command(cmd(CommandKind::Open), at(0));
    EXPECT_TRUE(relay.powered());
    door.tick(at(9));
    EXPECT_TRUE(relay.powered());
    door.tick(at(10));
    EXPECT_FALSE(relay.powered());
    EXPECT_EQ(door.snapshot(), DoorState::locked());
    EXPECT_EQ(door.audit_log().back().trigger, "auto-close");
}

// Random command/tick replay against the history-based reference, with
// injected relay failures.
TEST(DoorController, AgreesWithReferenceUnderRandomReplay)
{
    std::mt19937 rng(31);
    for (int run = 0; run < 20; ++run) {
        const Duration hold = std::chrono::seconds(1 + rng() % 20);
        MockActuator relay;
        std::set<Instant> failing;
        Instant now{};
        relay.fail_next = [&](bool on) { return !(on && failing.count(now)); };
        DoorController door(relay, hold);
        accessguard::testing::DoorReference ref(hold);
        for (int step = 0; step < 1000; ++step) {
            now += Duration(rng() % 4000);
            int what = static_cast<int>(rng() % 10);
            if (rng() % 5 == 0)
                failing.insert(now);
            if (what < 3) {
                door.command(cmd(CommandKind::Open, now), now);
                ref.open(now, [&](Instant t) { return !failing.count(t); });
            } else if (what < 5) {
                door.command(cmd(CommandKind::Close, now), now);
                ref.close(now);
            } else {
                door.tick(now);
            }
            auto s = door.snapshot();
            ASSERT_EQ(s, ref.state_at(now)) << "run " << run << " step " << step;
            ASSERT_EQ(s.mode == Mode::Locked, s.actuator == Actuator::DeEnergized);
            ASSERT_EQ(relay.powered(), s.mode == Mode::Unlocked);
        }
    }
}

TEST(DoorController, TickGranularityDoesNotMatter)
{
    std::mt19937 rng(32);
    struct Cmd {
        Instant t;
        CommandKind k;
    };
    std::vector<Cmd> cmds;
    for (int i = 0; i < 200; ++i)
        cmds.push_back({at(static_cast<long long>(rng() % 600)) + Duration(rng() % 1000),
                        rng() % 3 ? CommandKind::Open : CommandKind::Close});
    std::sort(cmds.begin(), cmds.end(), [](auto& a, auto& b) { return a.t < b.t; });

    auto run = [&](Duration step) {
        MockActuator relay;
        DoorController door(relay, 7s);
        std::vector<DoorState> observed;
        std::size_t next = 0;
        for (Instant t = at(0); t <= at(620); t += step) {
            while (next < cmds.size() && cmds[next].t <= t) {
                door.command(cmd(cmds[next].k, cmds[next].t), cmds[next].t);
                ++next;
            }
            door.tick(t);
            if ((t.time_since_epoch() % 1s) == Duration::zero())
                observed.push_back(door.snapshot());
        }
        return observed;
    };
    EXPECT_EQ(run(1s), run(100ms));
}

TEST(HttpRelay, WireContract)
{
    httplib::Server relay;
    std::vector<std::string> seen;
    std::mutex mu;
    relay.Post("/relay", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        {
            std::lock_guard lock(mu);
            seen.push_back(body.at("state").get<std::string>());
        }
        res.set_content(R"({"ok":true})", "application/json");
    });
    int port = relay.bind_to_any_port("127.0.0.1");
    std::thread th([&] { relay.listen_after_bind(); });
    relay.wait_until_ready();

    HttpRelayActuator act("http://127.0.0.1:" + std::to_string(port));
    EXPECT_TRUE(act.energize());
    EXPECT_TRUE(act.deenergize());
    relay.stop();
    th.join();
    EXPECT_EQ(seen, (std::vector<std::string>{"on", "off"}));
}

TEST(HttpRelay, TimeoutAndRefusalAreFailures)
{
    httplib::Server slow;
    slow.Post("/relay", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(600ms);
        res.set_content(R"({"ok":true})", "application/json");
    });
    int port = slow.bind_to_any_port("127.0.0.1");
    std::thread th([&] { slow.listen_after_bind(); });
    slow.wait_until_ready();

    HttpRelayActuator act("http://127.0.0.1:" + std::to_string(port), 150ms);
    MockActuator unused;
    DoorController door(act, 30s);
    EXPECT_EQ(door.command(cmd(CommandKind::Open), at(1)).mode, Mode::Locked);
    slow.stop();
    th.join();

    HttpRelayActuator nowhere("http://127.0.0.1:1", 150ms);
    EXPECT_FALSE(nowhere.energize());
}

TEST(HttpRelay, NegativeAckIsFailure)
{
    httplib::Server relay;
    relay.Post("/relay", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"ok":false})", "application/json");
    });
    int port = relay.bind_to_any_port("127.0.0.1");
    std::thread th([&] { relay.listen_after_bind(); });
    relay.wait_until_ready();
    HttpRelayActuator act("http://127.0.0.1:" + std::to_string(port));
    EXPECT_FALSE(act.energize());
    relay.stop();
    th.join();
}

TEST(TimeUtil, Rfc3339RoundTrip)
{
    EXPECT_EQ(format_rfc3339(from_seconds(0)), "1970-01-01T00:00:00Z");
    auto t = from_seconds(1700000000) + 250ms;
    EXPECT_EQ(format_rfc3339(t), "2023-11-14T22:13:20.250Z");
    EXPECT_EQ(parse_rfc3339(format_rfc3339(t)), t);
    EXPECT_EQ(parse_rfc3339("2023-11-14T22:13:20Z"), from_seconds(1700000000));
    EXPECT_THROW(parse_rfc3339("2023-11-14 22:13:20"), InvalidArgument);
}
