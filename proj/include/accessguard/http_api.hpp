#pragma once

// HTTP+JSON front of the service.
//
//   GET    /events?since=<id>        events with id > since, oldest first
//   GET    /events/stream[?since=]   server-sent events, one "event" per record
//   GET    /events/<id>/scene        stored scene image (PGM/PPM bytes)
//   GET    /door                     {"mode":"locked"} or unlocked with times
//   POST   /door/open, /door/close   operator token required
//   GET    /summary?period=daily|weekly|monthly[&anchor=<rfc3339>]
//   GET    /profiles
//   POST   /profiles                 operator token required
//   POST   /profiles/<id>/views      operator token required
//   DELETE /profiles/<id>            operator token required
//   POST   /profiles/guidance        {"face_box":[x,y,w,h], "width":W, "height":H}
//                                    or {"face_box":..., "image":<base64 netpbm>}
//
// Tokens come from the X-Operator-Token header or a ?token= query parameter.
// Missing token: 401. Token not on the allow-list: 403. Errors are returned as
// {"error": "..."}.

#include <accessguard/service.hpp>

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace accessguard::http {

namespace fs = std::filesystem;

namespace detail {

inline std::string base64_decode(std::string_view in)
{
    static constexpr std::string_view alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve(in.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    std::size_t pad = 0;
    for (char c : in) {
        if (c == '\n' || c == '\r' || c == ' ')
            continue;
        if (c == '=') {
            ++pad;
            continue;
        }
        if (pad)
            throw InvalidArgument("base64: data after padding");
        auto pos = alphabet.find(c);
        if (pos == std::string_view::npos)
            throw InvalidArgument("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(pos);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xFF));
        }
    }
    if (pad > 2 || bits >= 6)
        throw InvalidArgument("base64: bad length");
    return out;
}

inline Rect rect_from(const nlohmann::json& j, const char* what)
{
    if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const auto& v) { return v.is_number_integer(); }))
        throw InvalidArgument(std::string(what) + " must be [x, y, w, h] integers");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline nlohmann::json parse_body(const httplib::Request& req)
{
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw InvalidArgument("request body must be a JSON object");
    return j;
}

inline std::string require_string(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || !j[key].is_string())
        throw InvalidArgument(std::string("'") + key + "' must be a string");
    return j[key].get<std::string>();
}

inline std::string optional_string(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || j[key].is_null())
        return {};
    return require_string(j, key);
}

inline std::vector<store::CandidateView> candidate_views(const nlohmann::json& body)
{
    if (!body.contains("images") || !body["images"].is_array())
        throw InvalidArgument("'images' must be an array");
    std::vector<store::CandidateView> out;
    for (const auto& item : body["images"]) {
        if (!item.is_object())
            throw InvalidArgument("each image must be an object");
        store::CandidateView v{pipeline::gray(netpbm::decode(base64_decode(require_string(item, "image")))),
                               std::nullopt, std::nullopt};
        if (item.contains("face_box") && !item["face_box"].is_null())
            v.face_box = rect_from(item["face_box"], "face_box");
        if (item.contains("pose") && !item["pose"].is_null())
            v.pose = require_string(item, "pose");
        out.push_back(std::move(v));
    }
    return out;
}

inline nlohmann::json add_result_json(const store::AddResult& r)
{
    nlohmann::json rejected = nlohmann::json::array();
    for (const auto& x : r.rejected) {
        nlohmann::json item{{"index", x.index}, {"reason", x.reason}, {"guidance", nullptr}};
        if (x.guidance)
            item["guidance"] = geometry::to_string(*x.guidance);
        rejected.push_back(std::move(item));
    }
    return {{"subject_id", r.subject_id}, {"views", r.views}, {"rejected", std::move(rejected)}};
}

inline std::int64_t parse_id(const std::string& s, const char* what)
{
    try {
        return store::detail::parse_int(s, what);
    } catch (const StoreError&) {
        throw InvalidArgument(std::string(what) + " must be an integer");
    }
}

inline lbp::SubjectId path_id(const httplib::Request& req) { return parse_id(req.matches[1].str(), "subject id"); }

} // namespace detail

inline nlohmann::json door_json(const door::DoorState& s)
{
    nlohmann::json j{{"mode", door::to_string(s.mode)}};
    if (s.mode == door::Mode::Unlocked) {
        j["opened_at"] = format_rfc3339(s.opened_at);
        j["auto_close_at"] = format_rfc3339(s.auto_close_at);
    }
    return j;
}

inline nlohmann::json event_json(const store::EventRecord& e)
{
    auto j = store::to_json(e);
    j["scene_url"] = "/events/" + std::to_string(e.event_id) + "/scene";
    return j;
}

struct ServerOptions {
    Duration door_tick = std::chrono::milliseconds{250};
    Duration stream_poll = std::chrono::milliseconds{200};
    Duration stream_keepalive = std::chrono::seconds{15};
    std::size_t max_streams = 4;
    std::optional<fs::path> static_dir;  // served at / when set
};

class ApiServer {
public:
    explicit ApiServer(service::Service& svc, ServerOptions opts = {}) : svc_(svc), opts_(std::move(opts))
    {
        routes();
    }

    ~ApiServer() { stop(); }

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    // Binds and serves on a background thread. Port 0 picks a free port;
    // the bound port is returned.
    int start(const std::string& host, int port)
    {
        int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0)
            throw InvalidArgument("cannot bind " + host + ":" + std::to_string(port));
        stopping_ = false;
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        // stop() before the accept loop starts would be lost otherwise.
        server_.wait_until_ready();
        ticker_ = std::thread([this] { tick_loop(); });
        return bound;
    }

    // Blocks until stop() is called from another thread or a signal handler.
    void run(const std::string& host, int port)
    {
        start(host, port);
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_.load(); });
    }

    void stop()
    {
        {
            std::lock_guard lock(mu_);
            if (stopping_ && !listener_.joinable() && !ticker_.joinable())
                return;
            stopping_ = true;
        }
        cv_.notify_all();
        server_.stop();
        if (listener_.joinable())
            listener_.join();
        if (ticker_.joinable())
            ticker_.join();
    }

    httplib::Server& server() { return server_; }

private:
    void tick_loop()
    {
        std::unique_lock lock(mu_);
        while (!stopping_) {
            lock.unlock();
            svc_.door().tick(svc_.now());
            lock.lock();
            cv_.wait_for(lock, opts_.door_tick, [&] { return stopping_.load(); });
        }
    }

    static void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200)
    {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& msg)
    {
        send_json(res, {{"error", msg}}, status);
    }

    // Returns the operator name, or writes 401/403 and returns nothing.
    std::optional<std::string> authorize(const httplib::Request& req, httplib::Response& res) const
    {
        std::string token = req.get_header_value("X-Operator-Token");
        if (token.empty())
            token = req.get_param_value("token");
        if (token.empty()) {
            send_error(res, 401, "operator token required");
            return std::nullopt;
        }
        const auto& tokens = svc_.config().operator_tokens;
        auto it = tokens.find(token);
        if (it == tokens.end()) {
            send_error(res, 403, "token is not on the operator allow-list");
            return std::nullopt;
        }
        return it->second;
    }

    void routes()
    {
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const InvalidArgument& e) {
                send_error(res, 400, e.what());
            } catch (const NotFound& e) {
                send_error(res, 404, e.what());
            } catch (const DuplicatePerson& e) {
                send_error(res, 409, e.what());
            } catch (const StaleReference& e) {
                send_error(res, 409, e.what());
            } catch (const QualityGateError& e) {
                send_error(res, 422, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        });

        if (opts_.static_dir)
            server_.set_mount_point("/", opts_.static_dir->string());

        server_.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
            auto since = since_param(req);
            nlohmann::json out = nlohmann::json::array();
            for (const auto& e : svc_.store().events())
                if (e.event_id > since)
                    out.push_back(event_json(e));
            send_json(res, out);
        });

        server_.Get("/events/stream", [this](const httplib::Request& req, httplib::Response& res) {
            stream_events(req, res);
        });

        server_.Get(R"(/events/(\d+)/scene)", [this](const httplib::Request& req, httplib::Response& res) {
            auto id = detail::parse_id(req.matches[1].str(), "event id");
            auto e = svc_.store().event(id);
            if (!e)
                return send_error(res, 404, "no event " + std::to_string(id));
            std::ifstream in(svc_.store().root() / e->scene_path, std::ios::binary);
            if (!in)
                return send_error(res, 404, "scene image for event " + std::to_string(id) + " is missing");
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            res.set_content(std::move(bytes), e->scene_path.ends_with(".ppm") ? "image/x-portable-pixmap"
                                                                              : "image/x-portable-graymap");
        });

        server_.Get("/door", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, door_json(svc_.door().tick(svc_.now())));
        });
        server_.Post("/door/open", [this](const httplib::Request& req, httplib::Response& res) {
            door_command(req, res, door::CommandKind::Open);
        });
        server_.Post("/door/close", [this](const httplib::Request& req, httplib::Response& res) {
            door_command(req, res, door::CommandKind::Close);
        });

        server_.Get("/summary", [this](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("period"))
                return send_error(res, 400, "period is required (daily, weekly, monthly)");
            auto period = store::parse_period(req.get_param_value("period"));
            Instant anchor = req.has_param("anchor")
                                 ? parse_rfc3339(req.get_param_value("anchor"))
                                 : store::default_anchor(svc_.now(), svc_.config().utc_offset_minutes);
            send_json(res, store::to_json(svc_.store().query_summary(period, anchor)));
        });

        server_.Get("/profiles", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& p : svc_.store().persons())
                out.push_back(store::to_json(p));
            send_json(res, out);
        });

        server_.Post("/profiles/guidance", [](const httplib::Request& req, httplib::Response& res) {
            auto body = detail::parse_body(req);
            if (!body.contains("face_box"))
                throw InvalidArgument("'face_box' is required");
            Rect box = detail::rect_from(body["face_box"], "face_box");
            int w = 0, h = 0;
            if (body.contains("image")) {
                auto frame = netpbm::decode(detail::base64_decode(detail::require_string(body, "image")));
                w = pipeline::frame_width(frame);
                h = pipeline::frame_height(frame);
            } else {
                if (!body.contains("width") || !body["width"].is_number_integer() || !body.contains("height") ||
                    !body["height"].is_number_integer())
                    throw InvalidArgument("give either 'image' or integer 'width' and 'height'");
                w = body["width"].get<int>();
                h = body["height"].get<int>();
            }
            auto g = geometry::guide_capture(w, h, box);
            send_json(res, {{"guidance", geometry::to_string(g)}, {"message", geometry::message(g)}});
        });

        server_.Post("/profiles", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorize(req, res))
                return;
            auto body = detail::parse_body(req);
            store::PersonInfo info;
            info.name = detail::require_string(body, "name");
            info.email = detail::optional_string(body, "email");
            info.contact = detail::optional_string(body, "contact");
            info.address = detail::optional_string(body, "address");
            if (auto rel = detail::optional_string(body, "relationship"); !rel.empty())
                info.relationship = store::parse_relationship(rel);
            bool allow_duplicate = body.value("allow_duplicate", false);
            std::vector<store::CandidateView> images;
            if (body.contains("images"))
                images = detail::candidate_views(body);
            auto r = svc_.store().add_person(std::move(info), images, allow_duplicate);
            send_json(res, detail::add_result_json(r), 201);
        });

        server_.Post(R"(/profiles/(\d+)/views)", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorize(req, res))
                return;
            auto id = detail::path_id(req);
            auto r = svc_.store().add_views(id, detail::candidate_views(detail::parse_body(req)));
            send_json(res, detail::add_result_json(r), 201);
        });

        server_.Delete(R"(/profiles/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorize(req, res))
                return;
            auto id = detail::path_id(req);
            auto removed = svc_.delete_person(id);
            send_json(res, {{"subject_id", id}, {"views_removed", removed}});
        });
    }

    static std::int64_t since_param(const httplib::Request& req)
    {
        if (!req.has_param("since"))
            return 0;
        return detail::parse_id(req.get_param_value("since"), "since");
    }

    void door_command(const httplib::Request& req, httplib::Response& res, door::CommandKind kind)
    {
        auto who = authorize(req, res);
        if (!who)
            return;
        door::DoorCommand cmd{kind, *who, svc_.now(), std::nullopt};
        if (!req.body.empty()) {
            auto body = detail::parse_body(req);
            if (body.contains("correlation") && !body["correlation"].is_null()) {
                if (!body["correlation"].is_number_integer())
                    throw InvalidArgument("'correlation' must be an integer event id");
                cmd.correlation = body["correlation"].get<std::int64_t>();
            }
        }
        auto& d = svc_.door();
        d.tick(cmd.issued_at);
        auto state = d.command(cmd, cmd.issued_at);
        auto j = door_json(state);
        if (kind == door::CommandKind::Open && state.mode != door::Mode::Unlocked) {
            j["error"] = "actuator did not confirm; door remains locked";
            return send_json(res, j, 502);
        }
        send_json(res, j);
    }

    // Replays stored events after `since` (or Last-Event-ID), then follows
    // the bus. Comment lines keep idle connections alive.
    void stream_events(const httplib::Request& req, httplib::Response& res)
    {
        if (active_streams_.fetch_add(1) >= opts_.max_streams) {
            --active_streams_;
            return send_error(res, 503, "too many open event streams");
        }
        std::int64_t since = since_param(req);
        if (req.has_header("Last-Event-ID"))
            since = detail::parse_id(req.get_header_value("Last-Event-ID"), "Last-Event-ID");

        struct State {
            std::shared_ptr<pipeline::EventBus::Subscription> sub;
            std::deque<store::EventRecord> backlog;
            std::int64_t last = 0;
            Instant last_write;
        };
        auto st = std::make_shared<State>();
        st->sub = svc_.bus().subscribe();
        st->last = since;
        for (auto& e : svc_.store().events())
            if (e.event_id > since)
                st->backlog.push_back(std::move(e));
        st->last_write = now_utc();

        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream",
            [this, st](std::size_t, httplib::DataSink& sink) {
                if (stopping_) {
                    sink.done();
                    return true;
                }
                auto write = [&](const std::string& s) {
                    st->last_write = now_utc();
                    return sink.write(s.data(), s.size());
                };
                std::optional<store::EventRecord> e;
                if (!st->backlog.empty()) {
                    e = std::move(st->backlog.front());
                    st->backlog.pop_front();
                } else {
                    e = st->sub->next(opts_.stream_poll);
                }
                if (e && e->event_id > st->last) {
                    st->last = e->event_id;
                    return write("id: " + std::to_string(e->event_id) + "\nevent: event\ndata: " +
                                 event_json(*e).dump() + "\n\n");
                }
                if (now_utc() - st->last_write >= opts_.stream_keepalive)
                    return write(": keepalive\n\n");
                return sink.is_writable();
            },
            [this, st](bool) {
                st->sub->close();
                --active_streams_;
            });
    }

    service::Service& svc_;
    ServerOptions opts_;
    httplib::Server server_;
    std::thread listener_;
    std::thread ticker_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> active_streams_{0};
};

} // namespace accessguard::http
