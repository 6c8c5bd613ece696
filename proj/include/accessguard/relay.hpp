#pragma once

// HTTP client for a Wi-Fi relay switch driving the door solenoid.
//   POST /relay {"state":"on"|"off"}  ->  {"ok":true}
// Anything else, including a timeout, counts as a failed actuation.

#include <accessguard/door.hpp>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <string>

namespace accessguard::door {

class HttpRelayActuator : public ActuatorGateway {
public:
    HttpRelayActuator(std::string base_url, std::chrono::milliseconds timeout = std::chrono::milliseconds{2000})
        : base_url_(std::move(base_url)), timeout_(timeout)
    {
    }

    bool energize() override { return send("on"); }
    bool deenergize() override { return send("off"); }

private:
    bool send(const char* state)
    {
        httplib::Client cli(base_url_);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        nlohmann::json body{{"state", state}};
        auto res = cli.Post("/relay", body.dump(), "application/json");
        if (!res || res->status != 200)
            return false;
        auto reply = nlohmann::json::parse(res->body, nullptr, false);
        return reply.is_object() && reply.value("ok", false) == true;
    }

    std::string base_url_;
    std::chrono::milliseconds timeout_;
};

} // namespace accessguard::door
