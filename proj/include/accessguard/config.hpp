#pragma once

// Service configuration, read from one JSON file. Relative paths are taken
// relative to the directory holding the file.
//
// {
//   "data_dir": "data",
//   "timezone_offset_minutes": 0,
//   "cameras": [{"id": "cam-entrance", "location": "entrance",
//                "source": "frames/entrance", "detections": "frames/entrance.json"}],
//   "gate": {"mode": "binary", "gamma": 1.0, "pixel_threshold": 25,
//            "adaptive_window": 11, "adaptive_offset": 5, "global_threshold": 100000},
//   "orientation": {"tau_deg": 5, "alpha_band_deg": 15, "beta_band_deg": 10},
//   "recognizer": {"grid_x": 8, "grid_y": 8, "unknown_threshold": null,
//                  "threshold_factor": 1.5, "fallback_threshold": 40},
//   "attributes": "attributes.tsv",
//   "head_lift": 180,
//   "door": {"hold_seconds": 30, "relay_url": ""},
//   "notifications": {"window_seconds": 60,
//                     "users": [{"user": "alice", "mms": "+15550100", "email": "a@example.org"}]},
//   "operators": [{"name": "alice", "token": "..."}],
//   "http": {"bind": "127.0.0.1", "port": 8080, "static_dir": "console"}
// }

#include <accessguard/change_gate.hpp>
#include <accessguard/door.hpp>
#include <accessguard/error.hpp>
#include <accessguard/face_geometry.hpp>
#include <accessguard/lbp.hpp>
#include <accessguard/pipeline.hpp>

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace accessguard::config {

namespace fs = std::filesystem;

struct CameraConfig {
    pipeline::CameraSource camera;
    std::optional<fs::path> detections;
};

struct AppConfig {
    fs::path data_dir = "data";
    int utc_offset_minutes = 0;
    std::vector<CameraConfig> cameras;
    gate::GateConfig gate;
    geometry::OrientationConfig orientation;
    lbp::LbpConfig recognizer;
    std::optional<fs::path> attributes;
    int head_lift = geometry::kDefaultHeadLift;
    Duration door_hold = door::kDefaultHold;
    std::string relay_url;  // empty: in-memory actuator
    Duration notify_window = pipeline::kDefaultNotifyWindow;
    std::vector<pipeline::UserPreference> users;
    std::map<std::string, std::string> operator_tokens;  // token -> operator name
    std::string http_bind = "127.0.0.1";
    int http_port = 8080;
    std::optional<fs::path> http_static_dir;  // operator console files

    const CameraConfig* camera(const std::string& id) const
    {
        for (const auto& c : cameras)
            if (c.camera.camera_id == id)
                return &c;
        return nullptr;
    }

    pipeline::PipelineConfig pipeline_config() const { return {gate, orientation, head_lift}; }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out)
{
    if (j.contains(key) && !j[key].is_null())
        out = j[key].get<T>();
}

inline fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace detail

inline AppConfig parse(const nlohmann::json& j, const fs::path& base = ".")
{
    using detail::read_opt;
    if (!j.is_object())
        throw InvalidArgument("config must be a JSON object");
    AppConfig c;
    try {
        if (j.contains("data_dir"))
            c.data_dir = detail::resolve(base, j["data_dir"].get<std::string>());
        else
            c.data_dir = base / "data";
        read_opt(j, "timezone_offset_minutes", c.utc_offset_minutes);
        if (c.utc_offset_minutes < -14 * 60 || c.utc_offset_minutes > 14 * 60)
            throw InvalidArgument("timezone_offset_minutes must be within +/-840");

        std::set<std::string> ids;
        for (const auto& cam : j.value("cameras", nlohmann::json::array())) {
            CameraConfig cc;
            cc.camera.camera_id = cam.at("id").get<std::string>();
            cc.camera.location = cam.at("location").get<std::string>();
            std::string src = cam.value("source", "");
            cc.camera.source = src.starts_with("live:") || src.empty() ? src : detail::resolve(base, src).string();
            if (cam.contains("detections") && !cam["detections"].is_null())
                cc.detections = detail::resolve(base, cam["detections"].get<std::string>());
            if (cc.camera.camera_id.empty() || cc.camera.location.empty())
                throw InvalidArgument("each camera needs a non-empty id and location");
            if (!ids.insert(cc.camera.camera_id).second)
                throw InvalidArgument("camera id '" + cc.camera.camera_id + "' is listed twice");
            c.cameras.push_back(std::move(cc));
        }

        if (j.contains("gate")) {
            const auto& g = j["gate"];
            std::string mode = g.value("mode", "binary");
            if (mode == "binary")
                c.gate.pixel_mode = gate::PixelMode::Binary;
            else if (mode == "adaptive")
                c.gate.pixel_mode = gate::PixelMode::AdaptiveGaussian;
            else
                throw InvalidArgument("gate.mode must be 'binary' or 'adaptive'");
            read_opt(g, "gamma", c.gate.gamma);
            read_opt(g, "pixel_threshold", c.gate.pixel_threshold);
            read_opt(g, "adaptive_window", c.gate.adaptive_window);
            read_opt(g, "adaptive_offset", c.gate.adaptive_offset);
            read_opt(g, "global_threshold", c.gate.global_threshold);
        }
        c.gate.validate();

        if (j.contains("orientation")) {
            const auto& o = j["orientation"];
            read_opt(o, "tau_deg", c.orientation.tau_deg);
            read_opt(o, "alpha_band_deg", c.orientation.alpha_band_deg);
            read_opt(o, "beta_band_deg", c.orientation.beta_band_deg);
        }

        if (j.contains("recognizer")) {
            const auto& r = j["recognizer"];
            read_opt(r, "grid_x", c.recognizer.grid_x);
            read_opt(r, "grid_y", c.recognizer.grid_y);
            read_opt(r, "threshold_factor", c.recognizer.threshold_factor);
            read_opt(r, "fallback_threshold", c.recognizer.fallback_threshold);
            if (r.contains("unknown_threshold") && !r["unknown_threshold"].is_null())
                c.recognizer.unknown_threshold = r["unknown_threshold"].get<double>();
        }
        c.recognizer.validate();

        if (j.contains("attributes") && !j["attributes"].is_null())
            c.attributes = detail::resolve(base, j["attributes"].get<std::string>());
        read_opt(j, "head_lift", c.head_lift);
        if (c.head_lift < 0)
            throw InvalidArgument("head_lift must be non-negative");

        if (j.contains("door")) {
            const auto& d = j["door"];
            double hold = d.value("hold_seconds", 30.0);
            if (!(hold > 0))
                throw InvalidArgument("door.hold_seconds must be positive");
            c.door_hold = Duration(static_cast<long long>(hold * 1000));
            c.relay_url = d.value("relay_url", "");
        }

        if (j.contains("notifications")) {
            const auto& n = j["notifications"];
            double window = n.value("window_seconds", 60.0);
            if (window < 0)
                throw InvalidArgument("notifications.window_seconds must be non-negative");
            c.notify_window = Duration(static_cast<long long>(window * 1000));
            for (const auto& u : n.value("users", nlohmann::json::array())) {
                pipeline::UserPreference p;
                p.user = u.at("user").get<std::string>();
                for (auto ch : {pipeline::Channel::Mms, pipeline::Channel::Email, pipeline::Channel::Call}) {
                    std::string key(pipeline::to_string(ch));
                    if (u.contains(key) && !u[key].is_null())
                        p.destinations[ch] = u[key].get<std::string>();
                }
                c.users.push_back(std::move(p));
            }
        }

        for (const auto& op : j.value("operators", nlohmann::json::array())) {
            auto name = op.at("name").get<std::string>();
            auto token = op.at("token").get<std::string>();
            if (name.empty() || token.empty())
                throw InvalidArgument("operators need a non-empty name and token");
            c.operator_tokens[token] = name;
        }

        if (j.contains("http")) {
            read_opt(j["http"], "bind", c.http_bind);
            read_opt(j["http"], "port", c.http_port);
            if (j["http"].contains("static_dir") && !j["http"]["static_dir"].is_null())
                c.http_static_dir = detail::resolve(base, j["http"]["static_dir"].get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    return c;
}

inline AppConfig load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw InvalidArgument("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    auto base = path.parent_path();
    return parse(j, base.empty() ? fs::path(".") : base);
}

} // namespace accessguard::config
