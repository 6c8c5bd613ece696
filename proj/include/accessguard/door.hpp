#pragma once

// Smart door state machine. The lock is an inverted solenoid: de-energized
// means closed, so the only safe failure mode is Locked.

#include <accessguard/timeutil.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace accessguard::door {

enum class Mode { Locked, Unlocked };
enum class Actuator { DeEnergized, Energized };
enum class Action { None, Energize, DeEnergize };
enum class CommandKind { Open, Close };

inline std::string_view to_string(Mode m) { return m == Mode::Locked ? "locked" : "unlocked"; }
inline std::string_view to_string(CommandKind k) { return k == CommandKind::Open ? "open" : "close"; }
inline std::string_view to_string(Action a)
{
    switch (a) {
    case Action::None: return "none";
    case Action::Energize: return "energize";
    case Action::DeEnergize: return "de-energize";
    }
    return "none";
}

struct DoorState {
    Mode mode = Mode::Locked;
    Actuator actuator = Actuator::DeEnergized;
    Instant opened_at{};
    Instant auto_close_at{};

    static DoorState locked() { return {}; }
    static DoorState unlocked(Instant opened, Duration hold)
    {
        return {Mode::Unlocked, Actuator::Energized, opened, opened + hold};
    }

    friend bool operator==(const DoorState&, const DoorState&) = default;
};

struct DoorCommand {
    CommandKind kind = CommandKind::Open;
    std::string issued_by;
    Instant issued_at{};
    std::optional<std::int64_t> correlation;
};

struct AuditEntry {
    Instant at{};
    std::string trigger;  // "open", "close" or "auto-close"
    std::string issued_by;
    std::optional<std::int64_t> correlation;
    Mode from = Mode::Locked;
    Mode to = Mode::Locked;
    Action action = Action::None;
    std::string outcome;
};

struct Transition {
    DoorState state;
    Action action = Action::None;
    AuditEntry audit;
};

inline constexpr Duration kDefaultHold = std::chrono::seconds{30};

struct TickResult {
    DoorState state;
    Action action = Action::None;
};

// Deadline is inclusive: now == auto_close_at locks.
inline TickResult tick(const DoorState& state, Instant now)
{
    if (state.mode == Mode::Unlocked && now >= state.auto_close_at)
        return {DoorState::locked(), Action::DeEnergize};
    return {state, Action::None};
}

// Expires the current state at `now` first, so the result never depends on
// how often tick() ran before the command. Open while unlocked moves the
// deadline to now + hold; it does not add to it.
inline Transition handle_command(const DoorState& state, const DoorCommand& cmd, Instant now,
                                 Duration hold = kDefaultHold)
{
    auto [current, expiry] = tick(state, now);
    Transition t;
    t.audit.at = now;
    t.audit.trigger = std::string(to_string(cmd.kind));
    t.audit.issued_by = cmd.issued_by;
    t.audit.correlation = cmd.correlation;
    t.audit.from = state.mode;

    if (cmd.kind == CommandKind::Open) {
        t.state = DoorState::unlocked(now, hold);
        if (current.mode == Mode::Locked) {
            // Re-assert power even when a lapsed, unticked hold left the
            // solenoid on; the relay call is idempotent and a failure here
            // must still end Locked.
            t.action = Action::Energize;
            t.audit.outcome = "unlocked";
        } else {
            t.action = Action::None;
            t.audit.outcome = "deadline extended";
        }
    } else {
        t.state = DoorState::locked();
        if (current.mode == Mode::Unlocked || expiry == Action::DeEnergize) {
            t.action = Action::DeEnergize;
            t.audit.outcome = current.mode == Mode::Unlocked ? "locked" : "locked (hold had lapsed)";
        } else {
            t.action = Action::None;
            t.audit.outcome = "already locked (no-op)";
        }
    }
    t.audit.to = t.state.mode;
    t.audit.action = t.action;
    return t;
}

// Hardware side of the lock. Both calls return true once the relay has
// acknowledged the new state.
class ActuatorGateway {
public:
    virtual ~ActuatorGateway() = default;
    virtual bool energize() = 0;
    virtual bool deenergize() = 0;
};

class MockActuator : public ActuatorGateway {
public:
    bool energize() override { return apply(true); }
    bool deenergize() override { return apply(false); }

    // Called before each request; returning false simulates a relay failure.
    std::function<bool(bool want_on)> fail_next;

    bool powered() const { return powered_; }
    const std::vector<bool>& calls() const { return calls_; }

private:
    bool apply(bool on)
    {
        calls_.push_back(on);
        if (fail_next && !fail_next(on))
            return false;
        powered_ = on;
        return true;
    }

    bool powered_ = false;
    std::vector<bool> calls_;
};

// Owns the door state. Commands and ticks are serialized through one mutex;
// readers get value snapshots.
class DoorController {
public:
    DoorController(ActuatorGateway& gateway, Duration hold = kDefaultHold) : gateway_(gateway), hold_(hold) {}

    DoorState command(const DoorCommand& cmd, Instant now)
    {
        std::lock_guard lock(mu_);
        auto t = handle_command(state_, cmd, now, hold_);
        apply(t.state, t.action, t.audit);
        return state_;
    }

    DoorState tick(Instant now)
    {
        std::lock_guard lock(mu_);
        auto r = door::tick(state_, now);
        if (r.action != Action::None) {
            AuditEntry e{now, "auto-close", "", std::nullopt, state_.mode, r.state.mode, r.action, "locked"};
            apply(r.state, r.action, e);
        }
        return state_;
    }

    DoorState snapshot() const
    {
        std::lock_guard lock(mu_);
        return state_;
    }

    std::vector<AuditEntry> audit_log() const
    {
        std::lock_guard lock(mu_);
        return audit_;
    }

    Duration hold() const { return hold_; }

private:
    void apply(const DoorState& next, Action action, AuditEntry entry)
    {
        bool ok = true;
        if (action == Action::Energize)
            ok = call(true);
        else if (action == Action::DeEnergize)
            ok = call(false);

        if (!ok && action == Action::Energize) {
            // Fail-secure: if the relay did not confirm power, the door is
            // closed. Make sure it is not left half-on.
            call(false);
            state_ = DoorState::locked();
            entry.to = Mode::Locked;
            entry.outcome = "actuator failure on energize; door remains locked";
        } else {
            state_ = next;
            if (!ok)
                entry.outcome += " (actuator failure on de-energize)";
        }
        audit_.push_back(std::move(entry));
    }

    bool call(bool on)
    {
        try {
            return on ? gateway_.energize() : gateway_.deenergize();
        } catch (const std::exception&) {
            return false;
        }
    }

    ActuatorGateway& gateway_;
    Duration hold_;
    mutable std::mutex mu_;
    DoorState state_;
    std::vector<AuditEntry> audit_;
};

} // namespace accessguard::door
