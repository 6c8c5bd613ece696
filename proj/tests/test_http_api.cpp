#include <accessguard/http_api.hpp>

#include "stream_fixtures.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <future>

using namespace accessguard;
using accessguard::testing::TempDir;
using nlohmann::json;

namespace {

// Settable clock shared between the test and the service.
struct ManualClock {
    std::shared_ptr<std::atomic<Instant::rep>> ms = std::make_shared<std::atomic<Instant::rep>>(0);
    void set(Instant t) { ms->store(t.time_since_epoch().count()); }
    void advance(Duration d) { ms->fetch_add(d.count()); }
    Instant operator()() const { return Instant{Duration{ms->load()}}; }
};

std::string b64_netpbm(const GrayFrame& f) { return httplib::detail::base64_encode(netpbm::encode(f)); }

GrayFrame capture(int subject, int view, int w = 200, int h = 160, int x = 52, int y = 32)
{
    GrayFrame f = accessguard::testing::background(w, h);
    accessguard::testing::paste(f, accessguard::testing::subject_view(subject, view, 2.0), x, y);
    return f;
}

class HttpApi : public ::testing::Test {
protected:
    void SetUp() override { start({}); }

    void start(std::string relay_url)
    {
        fx_ = accessguard::testing::write_john_at_entrance(fixture_dir_.path());
        config::AppConfig cfg;
        cfg.data_dir = data_dir_.path();
        cfg.cameras.push_back({{"cam-entrance", "entrance", fx_.frames.string()}, fx_.detections});
        cfg.attributes = fx_.attributes;
        cfg.users.push_back({"alice", {{pipeline::Channel::Mms, "+15550100"}}});
        cfg.operator_tokens = {{"secret-alice", "alice"}};
        cfg.door_hold = std::chrono::seconds(30);
        cfg.relay_url = std::move(relay_url);
        clock_.set(from_seconds(1700000000));
        svc_ = std::make_unique<service::Service>(cfg, service::Options{clock_, false});
        http::ServerOptions opts;
        opts.door_tick = std::chrono::milliseconds(20);
        opts.stream_poll = std::chrono::milliseconds(20);
        api_ = std::make_unique<http::ApiServer>(*svc_, opts);
        port_ = api_->start("127.0.0.1", 0);
        cli_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        cli_->set_read_timeout(5, 0);
    }

    void TearDown() override
    {
        if (api_)
            api_->stop();
    }

    void restart_with_relay(std::string url)
    {
        api_->stop();
        api_.reset();
        svc_.reset();
        start(std::move(url));
    }

    void enroll_john()
    {
        std::vector<store::CandidateView> views;
        for (const auto& f : accessguard::testing::enrollment_views(1))
            views.push_back({f, Rect{0, 0, 96, 96}, std::nullopt});
        svc_->store().add_person({"John", "", "555-0101", "", store::Relationship::Family}, views);
    }

    httplib::Headers auth() const { return {{"X-Operator-Token", "secret-alice"}}; }

    TempDir fixture_dir_, data_dir_;
    accessguard::testing::StreamFixture fx_;
    ManualClock clock_;
    std::unique_ptr<service::Service> svc_;
    std::unique_ptr<http::ApiServer> api_;
    std::unique_ptr<httplib::Client> cli_;
    int port_ = 0;
};

} // namespace

TEST_F(HttpApi, DoorIsLockedAtStartup)
{
    auto r = cli_->Get("/door");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->body, R"({"mode":"locked"})");
}

TEST_F(HttpApi, DoorCommandsNeedAnAllowListedToken)
{
    auto r = cli_->Post("/door/open", "", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 401);
    r = cli_->Post("/door/open", {{"X-Operator-Token", "guess"}}, "", "application/json");
    EXPECT_EQ(r->status, 403);
    EXPECT_EQ(cli_->Get("/door")->body, R"({"mode":"locked"})");
    EXPECT_TRUE(svc_->door().audit_log().empty());
}

TEST_F(HttpApi, OpenThenAutoClose)
{
    auto r = cli_->Post("/door/open", auth(), R"({"correlation": 7})", "application/json");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200) << r->body;
    auto door = json::parse(cli_->Get("/door")->body);
    EXPECT_EQ(door["mode"], "unlocked");
    EXPECT_EQ(door["opened_at"], "2023-11-14T22:13:20Z");
    EXPECT_EQ(door["auto_close_at"], "2023-11-14T22:13:50Z");
    auto audit = svc_->door().audit_log();
    ASSERT_EQ(audit.size(), 1u);
    EXPECT_EQ(audit[0].issued_by, "alice");
    EXPECT_EQ(audit[0].correlation, 7);

    clock_.advance(std::chrono::seconds(29));
    EXPECT_EQ(json::parse(cli_->Get("/door")->body)["mode"], "unlocked");
    clock_.advance(std::chrono::seconds(1));
    EXPECT_EQ(cli_->Get("/door")->body, R"({"mode":"locked"})");

    // Query token works as well as the header.
    r = cli_->Post("/door/open?token=secret-alice", "", "application/json");
    EXPECT_EQ(r->status, 200);
    r = cli_->Post("/door/close?token=secret-alice", "", "application/json");
    EXPECT_EQ(r->body, R"({"mode":"locked"})");
}

TEST_F(HttpApi, BackgroundTickerClosesTheDoor)
{
    ASSERT_EQ(cli_->Post("/door/open", auth(), "", "application/json")->status, 200);
    clock_.advance(std::chrono::seconds(31));
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    while (svc_->door().snapshot().mode != door::Mode::Locked && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    EXPECT_EQ(svc_->door().snapshot().mode, door::Mode::Locked);
    EXPECT_EQ(svc_->door().audit_log().back().trigger, "auto-close");
}

TEST_F(HttpApi, RelayFailureKeepsDoorLocked)
{
    restart_with_relay("http://127.0.0.1:1");
    auto r = cli_->Post("/door/open", auth(), "", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 502);
    EXPECT_EQ(json::parse(r->body)["mode"], "locked");
    EXPECT_EQ(cli_->Get("/door")->body, R"({"mode":"locked"})");
}

TEST_F(HttpApi, EventsAndScenes)
{
    enroll_john();
    EXPECT_EQ(cli_->Get("/events")->body, "[]");
    svc_->run_camera(*svc_->config().camera("cam-entrance"));

    auto list = json::parse(cli_->Get("/events")->body);
    ASSERT_EQ(list.size(), 1u);
    EXPECT_EQ(list[0]["summary"], "John at entrance talking over the phone");
    EXPECT_EQ(list[0]["scene_url"], "/events/1/scene");
    EXPECT_EQ(cli_->Get("/events?since=1")->body, "[]");
    EXPECT_EQ(cli_->Get("/events?since=x")->status, 400);

    auto scene = cli_->Get("/events/1/scene");
    ASSERT_EQ(scene->status, 200);
    EXPECT_EQ(scene->get_header_value("Content-Type"), "image/x-portable-pixmap");
    auto img = netpbm::decode(scene->body);
    EXPECT_EQ(std::get<RgbFrame>(img), std::get<RgbFrame>(netpbm::read(fx_.frames / "000001.ppm")));
    EXPECT_EQ(cli_->Get("/events/9/scene")->status, 404);
}

TEST_F(HttpApi, SummaryMatchesStoreByteForByte)
{
    enroll_john();
    svc_->run_camera(*svc_->config().camera("cam-entrance"));
    for (auto period : {store::Period::Daily, store::Period::Weekly, store::Period::Monthly}) {
        auto r = cli_->Get("/summary?period=" + std::string(store::to_string(period)));
        ASSERT_EQ(r->status, 200);
        auto expected = store::to_json(svc_->store().query_summary(period, store::default_anchor(clock_(), 0))).dump();
        EXPECT_EQ(r->body, expected);
    }
    EXPECT_EQ(json::parse(cli_->Get("/summary?period=daily")->body)["total"], 1);
    EXPECT_EQ(cli_->Get("/summary?period=yearly")->status, 400);
    EXPECT_EQ(cli_->Get("/summary")->status, 400);
    auto anchored = json::parse(cli_->Get("/summary?period=daily&anchor=2023-11-14T00:00:00Z")->body);
    EXPECT_EQ(anchored["total"], 0);
}

TEST_F(HttpApi, EventStreamReplaysAndFollows)
{
    enroll_john();
    std::promise<std::string> first_event;
    std::thread reader([&] {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(5, 0);
        std::string buf;
        bool delivered = false;
        c.Get("/events/stream", [&](const char* data, std::size_t n) {
            buf.append(data, n);
            if (!delivered && buf.find("\n\n") != std::string::npos) {
                delivered = true;
                first_event.set_value(buf);
            }
            return !delivered;
        });
        if (!delivered)
            first_event.set_value(buf);
    });
    // Give the stream time to subscribe before the event exists.
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    svc_->run_camera(*svc_->config().camera("cam-entrance"));
    auto fut = first_event.get_future();
    ASSERT_EQ(fut.wait_for(std::chrono::seconds(5)), std::future_status::ready);
    auto text = fut.get();
    reader.join();
    EXPECT_TRUE(text.starts_with("id: 1\nevent: event\ndata: ")) << text;
    EXPECT_NE(text.find("John at entrance talking over the phone"), std::string::npos);

    // A late subscriber with since=0 gets the stored backlog.
    std::string replay;
    httplib::Client c("127.0.0.1", port_);
    c.Get("/events/stream?since=0", [&](const char* data, std::size_t n) {
        replay.append(data, n);
        return replay.find("\n\n") == std::string::npos;
    });
    EXPECT_TRUE(replay.starts_with("id: 1\n")) << replay;
}

TEST_F(HttpApi, ProfileLifecycle)
{
    json body{{"name", "Amy"},
              {"contact", "555-0102"},
              {"relationship", "friend"},
              {"images", json::array({{{"image", b64_netpbm(capture(2, 0))}, {"face_box", {52, 32, 96, 96}}},
                                      {{"image", b64_netpbm(capture(2, 1))}, {"face_box", {52, 32, 20, 20}}},
                                      {{"image", b64_netpbm(capture(2, 2))}, {"face_box", {52, 32, 96, 96}},
                                       {"pose", "left"}}})}};
    EXPECT_EQ(cli_->Post("/profiles", body.dump(), "application/json")->status, 401);
    auto r = cli_->Post("/profiles", auth(), body.dump(), "application/json");
    ASSERT_EQ(r->status, 201) << r->body;
    auto added = json::parse(r->body);
    EXPECT_EQ(added["subject_id"], 1);
    EXPECT_EQ(added["views"].size(), 2u);
    ASSERT_EQ(added["rejected"].size(), 1u);
    EXPECT_EQ(added["rejected"][0]["index"], 1);
    EXPECT_EQ(added["rejected"][0]["guidance"], "TooSmallComeCloser");
    EXPECT_EQ(added["rejected"][0]["reason"], "Face is small. come closer");

    EXPECT_EQ(cli_->Post("/profiles", auth(), body.dump(), "application/json")->status, 409);

    json bad{{"name", "Bo"}, {"images", json::array({{{"image", b64_netpbm(capture(3, 0))}, {"face_box", {0, 0, 8, 8}}}})}};
    EXPECT_EQ(cli_->Post("/profiles", auth(), bad.dump(), "application/json")->status, 422);
    EXPECT_EQ(cli_->Post("/profiles", auth(), R"({"name": 5})", "application/json")->status, 400);
    EXPECT_EQ(cli_->Post("/profiles", auth(), R"({"name": "x", "images": [{"image": "!!"}]})", "application/json")->status,
              400);

    json more{{"images", json::array({{{"image", b64_netpbm(capture(2, 3))}, {"face_box", {52, 32, 96, 96}}}})}};
    r = cli_->Post("/profiles/1/views", auth(), more.dump(), "application/json");
    ASSERT_EQ(r->status, 201) << r->body;
    EXPECT_EQ(json::parse(r->body)["views"], json::array({3}));
    EXPECT_EQ(cli_->Post("/profiles/9/views", auth(), more.dump(), "application/json")->status, 404);

    auto list = json::parse(cli_->Get("/profiles")->body);
    ASSERT_EQ(list.size(), 1u);
    EXPECT_EQ(list[0]["name"], "Amy");
    EXPECT_EQ(list[0]["views"].size(), 3u);

    EXPECT_EQ(cli_->Delete("/profiles/1")->status, 401);
    r = cli_->Delete("/profiles/1", auth());
    ASSERT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["views_removed"], 3);
    EXPECT_EQ(cli_->Get("/profiles")->body, "[]");
    EXPECT_EQ(cli_->Delete("/profiles/1", auth())->status, 404);
}

TEST_F(HttpApi, GuidancePhrases)
{
    auto ask = [&](json body) {
        auto r = cli_->Post("/profiles/guidance", body.dump(), "application/json");
        return std::make_pair(r->status, json::parse(r->body));
    };
    auto [s1, tl] = ask({{"width", 640}, {"height", 480}, {"face_box", {0, 0, 100, 100}}});
    EXPECT_EQ(s1, 200);
    EXPECT_EQ(tl, json({{"guidance", "TopLeft"}, {"message", "Face in top left"}}));
    auto [s2, c] = ask({{"width", 640}, {"height", 480}, {"face_box", {270, 190, 100, 100}}});
    EXPECT_EQ(c["message"], "Face in center");
    auto [s3, small] = ask({{"width", 640}, {"height", 480}, {"face_box", {270, 190, 32, 32}}});
    EXPECT_EQ(small["message"], "Face is small. come closer");
    auto [s4, from_image] = ask({{"image", b64_netpbm(capture(1, 0))}, {"face_box", {52, 32, 96, 96}}});
    EXPECT_EQ(s4, 200);
    EXPECT_EQ(from_image["guidance"], geometry::to_string(geometry::guide_capture(200, 160, Rect{52, 32, 96, 96})));
    EXPECT_EQ(ask({{"face_box", {0, 0, 10, 10}}}).first, 400);
    EXPECT_EQ(ask({{"width", 0}, {"height", 480}, {"face_box", {0, 0, 100, 100}}}).first, 400);
}

TEST(Base64, DecodesHttplibEncoding)
{
    for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)})
        EXPECT_EQ(http::detail::base64_decode(httplib::detail::base64_encode(s)), s);
    EXPECT_THROW(http::detail::base64_decode("ab=c"), InvalidArgument);
    EXPECT_THROW(http::detail::base64_decode("a"), InvalidArgument);
}
