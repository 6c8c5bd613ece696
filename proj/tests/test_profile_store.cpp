#include <accessguard/profile_store.hpp>

#include "face_textures.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

using namespace accessguard;
using namespace accessguard::store;
using accessguard::testing::TempDir;
using summary::AttributeLabel;
using std::chrono::hours;
using std::chrono::minutes;

namespace {

CandidateView good_view(std::uint8_t shade = 100)
{
    return {GrayFrame(200, 200, shade), Rect{60, 60, 80, 80}, std::nullopt};
}

CandidateView tiny_view() { return {GrayFrame(200, 200, 50), Rect{90, 90, 30, 30}, std::nullopt}; }

// Low-noise views: inter-subject distances clear 1.5x the intra-subject spread.
CandidateView texture_view(int subject, int view)
{
    return {accessguard::testing::subject_view(subject, view, 2.0), Rect{0, 0, 96, 96}, "frontal"};
}

PersonInfo info(std::string name, std::string contact = "555-0100")
{
    return {std::move(name), "x@example.org", std::move(contact), "1 Main St", Relationship::Family};
}

EventRecord event(Instant t, std::string camera = "cam1", Verdict v = Verdict::unknown(),
                  std::string location = "entrance")
{
    EventRecord e;
    e.timestamp = t;
    e.camera_id = std::move(camera);
    e.location = std::move(location);
    e.verdict = std::move(v);
    e.summary = summary::compose_summary(e.verdict, e.location, {}).sentence;
    e.scene_path = "scenes/x.pgm";
    return e;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Profiles, FirstPersonGetsIdOneWithAllViews)
{
    TempDir dir;
    ProfileStore s(dir.path());
    std::vector<CandidateView> imgs;
    for (int i = 0; i < 5; ++i)
        imgs.push_back(good_view(static_cast<std::uint8_t>(10 * i)));
    auto r = s.add_person(info("John"), imgs);
    EXPECT_EQ(r.subject_id, 1);
    ASSERT_EQ(r.views.size(), 5u);
    EXPECT_EQ(std::set<ViewId>(r.views.begin(), r.views.end()).size(), 5u);
    EXPECT_TRUE(r.rejected.empty());
    auto p = s.person(1);
    ASSERT_TRUE(p);
    EXPECT_EQ(p->views.size(), 5u);
    // Stored view is the face crop.
    auto img = s.view_image(1, r.views[2]);
    EXPECT_EQ(img.width(), 80);
    EXPECT_EQ(img.at(0, 0), 20);
}

TEST(Profiles, SmallFaceRejectedButPersonCreated)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto r = s.add_person(info("Amy"), {good_view(), tiny_view()});
    ASSERT_EQ(r.views.size(), 1u);
    ASSERT_EQ(r.rejected.size(), 1u);
    EXPECT_EQ(r.rejected[0].index, 1u);
    EXPECT_EQ(r.rejected[0].guidance, geometry::CaptureGuidance::TooSmallComeCloser);
    EXPECT_EQ(r.rejected[0].reason, "Face is small. come closer");
}

TEST(Profiles, AllImagesRejected)
{
    TempDir dir;
    ProfileStore s(dir.path());
    CandidateView no_face{GrayFrame(100, 100, 0), std::nullopt, std::nullopt};
    EXPECT_THROW(s.add_person(info("Amy"), {tiny_view(), no_face}), QualityGateError);
    EXPECT_TRUE(s.persons().empty());
    EXPECT_EQ(s.add_person(info("Amy"), {}).subject_id, 1);
}

TEST(Profiles, DuplicateNameAndContact)
{
    TempDir dir;
    ProfileStore s(dir.path());
    s.add_person(info("John"), {good_view()});
    EXPECT_THROW(s.add_person(info("John"), {good_view()}), DuplicatePerson);
    EXPECT_EQ(s.add_person(info("John", "555-0199"), {}).subject_id, 2);
    EXPECT_EQ(s.add_person(info("John"), {}, true).subject_id, 3);
    EXPECT_THROW(s.add_person(info("  "), {}), InvalidArgument);
}

TEST(Profiles, AddViews)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto id = s.add_person(info("John"), {good_view()}).subject_id;
    auto gen = s.generation();
    auto r = s.add_views(id, {good_view(7)});
    ASSERT_EQ(r.views.size(), 1u);
    EXPECT_EQ(r.views[0], 2);
    EXPECT_GT(s.generation(), gen);
    EXPECT_THROW(s.add_views(99, {good_view()}), NotFound);
    EXPECT_THROW(s.add_views(id, {tiny_view()}), QualityGateError);
    auto mixed = s.add_views(id, {tiny_view(), good_view(9)});
    EXPECT_EQ(mixed.views, std::vector<ViewId>{3});
    EXPECT_EQ(mixed.rejected.size(), 1u);
    EXPECT_EQ(s.person(id)->views.size(), 3u);
}

TEST(Profiles, PersistAcrossReopenAndIdsNeverReused)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        s.add_person(info("A"), {good_view()});
        s.add_person(info("B"), {good_view(), good_view(3)});
        s.delete_person(2);
    }
    ProfileStore s(dir.path());
    ASSERT_EQ(s.persons().size(), 1u);
    EXPECT_EQ(s.persons()[0].info.name, "A");
    EXPECT_EQ(s.persons()[0].info.relationship, Relationship::Family);
    EXPECT_EQ(s.add_person(info("C"), {}).subject_id, 3);
}

TEST(Profiles, DeleteOnlyPersonEmptiesStoreAndModel)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto id = s.add_person(info("A"), {texture_view(1, 0), texture_view(1, 1)}).subject_id;
    EXPECT_EQ(s.delete_person(id), 2u);
    EXPECT_TRUE(s.persons().empty());
    EXPECT_THROW(s.delete_person(id), NotFound);
    lbp::LbpRecognizer rec;
    rec.train(s.enrollment());
    EXPECT_FALSE(rec.trained());
}

TEST(Profiles, DeleteLeavesOthersUntouched)
{
    TempDir dir;
    ProfileStore s(dir.path());
    s.add_person(info("A"), {good_view(1)});
    auto b = s.add_person(info("B"), {good_view(2), good_view(3)});
    auto before = s.person(b.subject_id)->views;
    std::vector<std::string> bytes;
    for (const auto& v : before)
        bytes.push_back(slurp(dir.path() / v.path));
    s.delete_person(1);
    auto after = s.person(b.subject_id)->views;
    ASSERT_EQ(after.size(), before.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
        EXPECT_EQ(after[i].path, before[i].path);
        EXPECT_EQ(slurp(dir.path() / after[i].path), bytes[i]);
    }
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "profiles" / "1"));
}

TEST(Profiles, DeleteThenPredictIsUnknown)
{
    TempDir dir;
    ProfileStore s(dir.path());
    for (int subject = 1; subject <= 4; ++subject) {
        std::vector<CandidateView> views;
        for (int v = 0; v < 5; ++v)
            views.push_back(texture_view(subject, v));
        s.add_person(info("P" + std::to_string(subject)), views);
    }
    lbp::LbpRecognizer rec;
    rec.train(s.enrollment());
    auto probe = accessguard::testing::subject_view(3, 50, 2.0);
    ASSERT_EQ(rec.predict(probe).subject, 3);

    s.delete_person(3);
    lbp::LbpRecognizer fast;
    fast.set_model(*rec.model());
    fast.forget(3);
    EXPECT_FALSE(fast.predict(probe).known());

    rec.train(s.enrollment());
    EXPECT_FALSE(rec.predict(probe).known());
    EXPECT_EQ(rec.predict(accessguard::testing::subject_view(2, 50, 2.0)).subject, 2);
}

TEST(Events, SequentialIds)
{
    TempDir dir;
    ProfileStore s(dir.path());
    EXPECT_EQ(s.record_event(event(from_seconds(100))), 1);
    EXPECT_EQ(s.record_event(event(from_seconds(100))), 2);
    EXPECT_EQ(s.record_event(event(from_seconds(50), "cam2")), 3);
    EXPECT_THROW(s.record_event(event(from_seconds(99))), InvalidArgument);
    EXPECT_EQ(s.record_event(event(from_seconds(101))), 4);
}

TEST(Events, StaleReference)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto id = s.add_person(info("John"), {good_view()}).subject_id;
    s.record_event(event(from_seconds(1), "cam1", Verdict::known(id, "John")));
    s.delete_person(id);
    EXPECT_THROW(s.record_event(event(from_seconds(2), "cam1", Verdict::known(id, "John"))), StaleReference);
    EXPECT_THROW(s.record_event(event(from_seconds(2), "cam1", Verdict::known(42, "Nobody"))), StaleReference);
    EXPECT_EQ(s.event_count(), 1u);
}

TEST(Events, TombstonesKeepHistoryReadable)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        auto id = s.add_person(info("John"), {good_view()}).subject_id;
        s.record_event(event(from_seconds(1), "cam1", Verdict::known(id, "John")));
        s.record_event(event(from_seconds(2)));
        EXPECT_FALSE(s.event(1)->tombstoned);
        s.delete_person(id);
        EXPECT_TRUE(s.event(1)->tombstoned);
        EXPECT_FALSE(s.event(2)->tombstoned);
    }
    ProfileStore s(dir.path());
    auto e = s.event(1);
    ASSERT_TRUE(e);
    EXPECT_TRUE(e->tombstoned);
    EXPECT_EQ(e->verdict.name, "John");
}

TEST(Events, RoundTripWithEscapesAttributesNotifications)
{
    TempDir dir;
    EventRecord e = event(from_seconds(1700000000) + std::chrono::milliseconds(5), "cam\t1");
    e.summary = "line one\nline\ttwo \\ end";
    e.attributes = {AttributeLabel::Gun, AttributeLabel::Beard};
    {
        ProfileStore s(dir.path());
        auto id = s.record_event(e);
        s.record_notification(id, {"alice", "sms", "+15550100", DeliveryStatus::Sent});
        s.record_notification(id, {"bob", "email", "bob@example.org", DeliveryStatus::RateLimited});
        EXPECT_THROW(s.record_notification(99, {}), NotFound);
    }
    ProfileStore s(dir.path());
    auto got = s.event(1);
    ASSERT_TRUE(got);
    e.event_id = 1;
    e.notifications = {{"alice", "sms", "+15550100", DeliveryStatus::Sent},
                       {"bob", "email", "bob@example.org", DeliveryStatus::RateLimited}};
    EXPECT_EQ(*got, e);
}

TEST(Events, LocationRelabelAppliesFromThatEventOn)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        s.record_event(event(from_seconds(1), "cam1", Verdict::unknown(), "porch"));
        s.record_event(event(from_seconds(2), "cam1", Verdict::unknown(), "porch"));
        s.record_event(event(from_seconds(3), "cam1", Verdict::unknown(), "front porch"));
    }
    ProfileStore s(dir.path());
    EXPECT_EQ(s.event(1)->location, "porch");
    EXPECT_EQ(s.event(2)->location, "porch");
    EXPECT_EQ(s.event(3)->location, "front porch");
}

TEST(Recovery, TornTrailingRecord)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        for (int i = 0; i < 3; ++i)
            s.record_event(event(from_seconds(i)));
    }
    auto log = dir.path() / "events.log";
    auto intact = slurp(log);
    {
        std::ofstream out(log, std::ios::app | std::ios::binary);
        out << "4\t1970-01-01T00:00:09Z\tcam1\tunkn";
    }
    ProfileStore s(dir.path());
    EXPECT_EQ(s.event_count(), 3u);
    EXPECT_GT(s.recovered_bytes(), 0u);
    EXPECT_EQ(slurp(log), intact);
    EXPECT_EQ(s.record_event(event(from_seconds(10))), 4);
}

TEST(Recovery, ChecksumMismatchOnLastLineIsTorn)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        for (int i = 0; i < 3; ++i)
            s.record_event(event(from_seconds(i)));
    }
    auto log = dir.path() / "events.log";
    auto text = slurp(log);
    text[text.size() - 3] = text[text.size() - 3] == '0' ? '1' : '0';
    {
        std::ofstream out(log, std::ios::trunc | std::ios::binary);
        out << text;
    }
    ProfileStore s(dir.path());
    EXPECT_EQ(s.event_count(), 2u);
}

TEST(Recovery, MidFileCorruptionIsAnError)
{
    TempDir dir;
    {
        ProfileStore s(dir.path());
        for (int i = 0; i < 3; ++i)
            s.record_event(event(from_seconds(i)));
    }
    auto log = dir.path() / "events.log";
    auto text = slurp(log);
    text[text.find("cam1")] = 'k';
    {
        std::ofstream out(log, std::ios::trunc | std::ios::binary);
        out << text;
    }
    EXPECT_THROW(ProfileStore{dir.path()}, StoreError);
}

TEST(Reports, EmptyWindow)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto r = s.query_summary(Period::Daily, from_seconds(86400 * 10));
    EXPECT_EQ(r.total, 0u);
    EXPECT_EQ(r.by_verdict.at("known"), 0u);
    EXPECT_EQ(r.by_verdict.at("unknown"), 0u);
    EXPECT_TRUE(r.unknown_digests.empty());
    EXPECT_EQ(r.end - r.start, std::chrono::duration_cast<Duration>(hours(24)));
}

TEST(Reports, CountsAndDigests)
{
    TempDir dir;
    ProfileStore s(dir.path());
    auto john = s.add_person(info("John"), {good_view()}).subject_id;
    const long long day = 86400;
    s.record_event(event(from_seconds(day * 5 - 1)));  // previous window
    s.record_event(event(from_seconds(day * 5), "cam1", Verdict::known(john, "John")));
    s.record_event(event(from_seconds(day * 5 + 10)));
    s.record_event(event(from_seconds(day * 5 + 20), "cam2", Verdict::unknown(), "garage"));
    s.record_event(event(from_seconds(day * 5 + 30), "cam1", Verdict::known(john, "John")));
    s.record_event(event(from_seconds(day * 5 + 40)));
    s.record_event(event(from_seconds(day * 6)));  // at the anchor: excluded
    auto r = s.query_summary(Period::Daily, from_seconds(day * 6));
    EXPECT_EQ(r.total, 5u);
    EXPECT_EQ(r.by_verdict.at("unknown"), 3u);
    EXPECT_EQ(r.by_verdict.at("known"), 2u);
    EXPECT_EQ(r.by_verdict.at("person_no_face"), 0u);
    EXPECT_EQ(r.by_location.at("entrance"), 4u);
    EXPECT_EQ(r.by_location.at("garage"), 1u);
    ASSERT_EQ(r.unknown_digests.size(), 3u);
    EXPECT_EQ(r.unknown_digests[0].event_id, 3);
    EXPECT_EQ(r.unknown_digests[1].event_id, 4);
    EXPECT_EQ(r.unknown_digests[2].event_id, 6);
}

// Weekly == sum of the seven dailies, and both equal a direct count.
TEST(Reports, WeeklyEqualsSevenDailies)
{
    TempDir dir;
    ProfileStore s(dir.path(), {false});
    auto john = s.add_person(info("John"), {good_view()}).subject_id;
    std::mt19937 rng(5);
    const long long base = 1700000000;
    std::vector<long long> ts(500);
    for (auto& t : ts)
        t = base + static_cast<long long>(rng() % (86400 * 9));
    std::sort(ts.begin(), ts.end());
    const char* cams[] = {"cam1", "cam2", "cam3"};
    for (auto t : ts) {
        int k = static_cast<int>(rng() % 3);
        Verdict v = k == 0 ? Verdict::known(john, "John") : k == 1 ? Verdict::unknown() : Verdict::no_face();
        s.record_event(event(from_seconds(t), "cam1", v, cams[rng() % 3]));
    }
    auto anchor = default_anchor(from_seconds(base + 86400 * 8), 120);
    auto weekly = s.query_summary(Period::Weekly, anchor);
    std::map<std::string, std::size_t> verdicts, locations;
    std::size_t total = 0;
    std::vector<std::int64_t> digests;
    for (int d = 0; d < 7; ++d) {
        auto daily = s.query_summary(Period::Daily, anchor - std::chrono::duration_cast<Duration>(hours(24 * d)));
        total += daily.total;
        for (auto& [k, n] : daily.by_verdict)
            verdicts[k] += n;
        for (auto& [k, n] : daily.by_location)
            locations[k] += n;
        for (auto& dg : daily.unknown_digests)
            digests.push_back(dg.event_id);
    }
    std::sort(digests.begin(), digests.end());
    EXPECT_EQ(weekly.total, total);
    EXPECT_EQ(weekly.by_verdict, verdicts);
    EXPECT_EQ(weekly.by_location, locations);
    std::vector<std::int64_t> weekly_ids;
    for (auto& dg : weekly.unknown_digests)
        weekly_ids.push_back(dg.event_id);
    EXPECT_EQ(weekly_ids, digests);

    std::size_t direct = 0;
    for (auto t : ts)
        direct += from_seconds(t) >= anchor - std::chrono::duration_cast<Duration>(hours(24 * 7)) &&
                  from_seconds(t) < anchor;
    EXPECT_EQ(weekly.total, direct);
    EXPECT_GT(direct, 0u);

    // Replaying the log gives the same answers.
    ProfileStore again(dir.path());
    EXPECT_EQ(to_json(again.query_summary(Period::Weekly, anchor)), to_json(weekly));
    EXPECT_EQ(to_json(again.query_summary(Period::Monthly, anchor)), to_json(s.query_summary(Period::Monthly, anchor)));
}

TEST(Reports, DefaultAnchorIsNextLocalMidnight)
{
    // 2023-11-14T22:13:20Z is 2023-11-15T00:13:20 at UTC+2.
    auto now = from_seconds(1700000000);
    EXPECT_EQ(format_rfc3339(default_anchor(now, 0)), "2023-11-15T00:00:00Z");
    EXPECT_EQ(format_rfc3339(default_anchor(now, 120)), "2023-11-15T22:00:00Z");
    EXPECT_EQ(format_rfc3339(default_anchor(now, -300)), "2023-11-15T05:00:00Z");
    EXPECT_EQ(parse_period("weekly"), Period::Weekly);
    EXPECT_THROW(parse_period("yearly"), InvalidArgument);
}

TEST(Concurrency, ReadersSeeConsistentPrefix)
{
    TempDir dir;
    ProfileStore s(dir.path(), {false});
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::vector<std::thread> readers;
    for (int r = 0; r < 3; ++r)
        readers.emplace_back([&] {
            while (!done) {
                auto ev = s.events();
                for (std::size_t i = 0; i < ev.size(); ++i)
                    if (ev[i].event_id != static_cast<std::int64_t>(i + 1))
                        ++bad;
            }
        });
    for (int i = 0; i < 300; ++i)
        s.record_event(event(from_seconds(i)));
    done = true;
    for (auto& t : readers)
        t.join();
    EXPECT_EQ(bad, 0);
    EXPECT_EQ(s.event_count(), 300u);
}
