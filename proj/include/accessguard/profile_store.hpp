#pragma once

// Personalized profiles and event history on the local filesystem.
//
//   <root>/counters                     next_subject_id=N
//   <root>/profiles/<id>/meta           key=value lines
//   <root>/profiles/<id>/views/<v>.pgm  grayscale face crop
//   <root>/events.log                   one event per line, crc32 last
//   <root>/notifications.log            delivery results per event
//   <root>/cameras.log                  camera -> location, effective from an event id
//   <root>/tombstones.log               deleted subject ids
//
// Every .log line ends in a crc32 (8 hex digits) of the preceding text. On
// open, a partial or corrupt final line is treated as a torn write and cut
// off; corruption anywhere else is an error.

#include <accessguard/error.hpp>
#include <accessguard/face_geometry.hpp>
#include <accessguard/image.hpp>
#include <accessguard/lbp.hpp>
#include <accessguard/summary.hpp>
#include <accessguard/timeutil.hpp>

#include <json.hpp>
#include <zlib.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace accessguard::store {

namespace fs = std::filesystem;
using lbp::SubjectId;
using lbp::ViewId;
using summary::Verdict;

enum class Relationship { Family, Friend, Caregiver };

inline std::string_view to_string(Relationship r)
{
    switch (r) {
    case Relationship::Family: return "family";
    case Relationship::Friend: return "friend";
    case Relationship::Caregiver: return "caregiver";
    }
    return "family";
}

inline Relationship parse_relationship(std::string_view s)
{
    for (auto r : {Relationship::Family, Relationship::Friend, Relationship::Caregiver})
        if (to_string(r) == s)
            return r;
    throw InvalidArgument("unknown relationship '" + std::string(s) + "' (family, friend, caregiver)");
}

struct PersonInfo {
    std::string name;
    std::string email;
    std::string contact;
    std::string address;
    Relationship relationship = Relationship::Family;
};

struct ViewRef {
    ViewId view_id = 0;
    std::string path;  // relative to the store root
    std::optional<std::string> pose;
};

struct PersonRecord {
    SubjectId subject_id = 0;
    PersonInfo info;
    std::vector<ViewRef> views;
};

// One captured image offered as a profile view. The stored view is the face
// crop, converted to grayscale.
struct CandidateView {
    GrayFrame image;
    std::optional<Rect> face_box;
    std::optional<std::string> pose;
};

struct RejectedView {
    std::size_t index = 0;  // position in the submitted list
    std::optional<geometry::CaptureGuidance> guidance;
    std::string reason;
};

struct AddResult {
    SubjectId subject_id = 0;
    std::vector<ViewId> views;
    std::vector<RejectedView> rejected;
};

// The capture quality gate: a face must be present, inside the image, not
// flagged TooSmallComeCloser and at least in the Small size band.
inline std::optional<RejectedView> check_view(const CandidateView& v, std::size_t index = 0)
{
    using geometry::CaptureGuidance;
    if (!v.face_box || v.face_box->empty())
        return RejectedView{index, std::nullopt, "no face found in image"};
    const Rect& box = *v.face_box;
    if (!box.inside(v.image.width(), v.image.height()))
        return RejectedView{index, std::nullopt, "face box lies outside the image"};
    auto g = geometry::guide_capture(v.image.width(), v.image.height(), box);
    if (g == CaptureGuidance::TooSmallComeCloser)
        return RejectedView{index, g, std::string(geometry::message(g))};
    if (geometry::patch_size_band(box) == geometry::SizeBand::Reject)
        return RejectedView{index, g, "face is below the minimum usable size"};
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Events

enum class DeliveryStatus { Sent, Failed, RateLimited };

inline std::string_view to_string(DeliveryStatus s)
{
    switch (s) {
    case DeliveryStatus::Sent: return "sent";
    case DeliveryStatus::Failed: return "failed";
    case DeliveryStatus::RateLimited: return "rate_limited";
    }
    return "failed";
}

inline DeliveryStatus parse_delivery_status(std::string_view s)
{
    for (auto d : {DeliveryStatus::Sent, DeliveryStatus::Failed, DeliveryStatus::RateLimited})
        if (to_string(d) == s)
            return d;
    throw StoreError("unknown delivery status '" + std::string(s) + "'");
}

struct Notification {
    std::string user;
    std::string channel;
    std::string destination;
    DeliveryStatus status = DeliveryStatus::Sent;

    friend bool operator==(const Notification&, const Notification&) = default;
};

struct EventRecord {
    std::int64_t event_id = 0;
    Instant timestamp{};
    std::string camera_id;
    std::string location;
    Verdict verdict;
    summary::AttributeSet attributes;
    std::string summary;
    std::string scene_path;
    std::vector<Notification> notifications;
    bool tombstoned = false;  // the Known subject was deleted later

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

inline std::string encode_verdict(const Verdict& v)
{
    switch (v.kind) {
    case Verdict::Kind::Known: return "known:" + std::to_string(v.subject_id) + ":" + v.name;
    case Verdict::Kind::Unknown: return "unknown";
    case Verdict::Kind::PersonNoFace: return "person_no_face";
    }
    return "unknown";
}

inline Verdict decode_verdict(std::string_view s)
{
    if (s == "unknown")
        return Verdict::unknown();
    if (s == "person_no_face")
        return Verdict::no_face();
    if (s.starts_with("known:")) {
        auto rest = s.substr(6);
        auto colon = rest.find(':');
        if (colon != std::string_view::npos && colon > 0) {
            std::string id(rest.substr(0, colon));
            char* end = nullptr;
            long long v = std::strtoll(id.c_str(), &end, 10);
            if (*end == '\0')
                return Verdict::known(v, std::string(rest.substr(colon + 1)));
        }
    }
    throw StoreError("malformed verdict '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Reports

enum class Period { Daily, Weekly, Monthly };

inline std::string_view to_string(Period p)
{
    switch (p) {
    case Period::Daily: return "daily";
    case Period::Weekly: return "weekly";
    case Period::Monthly: return "monthly";
    }
    return "daily";
}

inline Period parse_period(std::string_view s)
{
    for (auto p : {Period::Daily, Period::Weekly, Period::Monthly})
        if (to_string(p) == s)
            return p;
    throw InvalidArgument("unknown period '" + std::string(s) + "' (daily, weekly, monthly)");
}

// Monthly is a fixed 30-day window so that windows tile without a calendar.
inline Duration period_length(Period p)
{
    using namespace std::chrono;
    switch (p) {
    case Period::Daily: return duration_cast<Duration>(days{1});
    case Period::Weekly: return duration_cast<Duration>(days{7});
    case Period::Monthly: return duration_cast<Duration>(days{30});
    }
    return duration_cast<Duration>(days{1});
}

// The next local midnight after `now`, expressed in UTC. Local time is UTC
// shifted by a fixed offset.
inline Instant default_anchor(Instant now, int utc_offset_minutes)
{
    using namespace std::chrono;
    auto offset = duration_cast<Duration>(minutes{utc_offset_minutes});
    auto local = now + offset;
    return Instant{floor<days>(local) + days{1}} - offset;
}

struct EventDigest {
    std::int64_t event_id = 0;
    Instant timestamp{};
    std::string camera_id;
    std::string location;
    std::string summary;
    std::vector<std::string> attributes;
    std::string scene_path;
};

struct SummaryReport {
    Period period = Period::Daily;
    Instant start{};
    Instant end{};
    std::size_t total = 0;
    std::map<std::string, std::size_t> by_verdict;
    std::map<std::string, std::size_t> by_location;
    std::vector<EventDigest> unknown_digests;  // ordered by event_id
};

inline SummaryReport summarize(const std::vector<EventRecord>& events, Period period, Instant anchor)
{
    SummaryReport r;
    r.period = period;
    r.end = anchor;
    r.start = anchor - period_length(period);
    for (auto k : {Verdict::Kind::Known, Verdict::Kind::Unknown, Verdict::Kind::PersonNoFace})
        r.by_verdict[std::string(summary::to_string(k))] = 0;
    for (const auto& e : events) {
        if (e.timestamp < r.start || e.timestamp >= r.end)
            continue;
        ++r.total;
        ++r.by_verdict[std::string(summary::to_string(e.verdict.kind))];
        ++r.by_location[e.location];
        if (e.verdict.kind == Verdict::Kind::Unknown) {
            EventDigest d{e.event_id, e.timestamp, e.camera_id, e.location, e.summary, {}, e.scene_path};
            for (auto a : e.attributes)
                d.attributes.emplace_back(summary::to_string(a));
            r.unknown_digests.push_back(std::move(d));
        }
    }
    std::sort(r.unknown_digests.begin(), r.unknown_digests.end(),
              [](const auto& a, const auto& b) { return a.event_id < b.event_id; });
    return r;
}

inline nlohmann::json to_json(const Verdict& v)
{
    nlohmann::json j{{"kind", summary::to_string(v.kind)}};
    if (v.kind == Verdict::Kind::Known) {
        j["subject_id"] = v.subject_id;
        j["name"] = v.name;
    }
    return j;
}

inline nlohmann::json to_json(const EventRecord& e)
{
    nlohmann::json attrs = nlohmann::json::array();
    for (auto a : e.attributes)
        attrs.push_back(summary::to_string(a));
    nlohmann::json notes = nlohmann::json::array();
    for (const auto& n : e.notifications)
        notes.push_back({{"user", n.user},
                         {"channel", n.channel},
                         {"destination", n.destination},
                         {"status", to_string(n.status)}});
    return {{"event_id", e.event_id},
            {"timestamp", format_rfc3339(e.timestamp)},
            {"camera_id", e.camera_id},
            {"location", e.location},
            {"verdict", to_json(e.verdict)},
            {"attributes", attrs},
            {"summary", e.summary},
            {"scene", e.scene_path},
            {"notifications", notes},
            {"tombstoned", e.tombstoned}};
}

inline nlohmann::json to_json(const SummaryReport& r)
{
    nlohmann::json digests = nlohmann::json::array();
    for (const auto& d : r.unknown_digests)
        digests.push_back({{"event_id", d.event_id},
                           {"timestamp", format_rfc3339(d.timestamp)},
                           {"camera_id", d.camera_id},
                           {"location", d.location},
                           {"summary", d.summary},
                           {"attributes", d.attributes},
                           {"scene", d.scene_path}});
    return {{"period", to_string(r.period)},
            {"start", format_rfc3339(r.start)},
            {"end", format_rfc3339(r.end)},
            {"total", r.total},
            {"by_verdict", r.by_verdict},
            {"by_location", r.by_location},
            {"unknown_events", digests}};
}

inline nlohmann::json to_json(const PersonRecord& p)
{
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : p.views) {
        nlohmann::json j{{"view_id", v.view_id}, {"path", v.path}};
        if (v.pose)
            j["pose"] = *v.pose;
        views.push_back(j);
    }
    return {{"subject_id", p.subject_id},
            {"name", p.info.name},
            {"email", p.info.email},
            {"contact", p.info.contact},
            {"address", p.info.address},
            {"relationship", to_string(p.info.relationship)},
            {"views", views}};
}

// ---------------------------------------------------------------------------
// Record log

namespace detail {

inline std::string escape_field(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string unescape_field(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (++i == s.size())
            throw StoreError("dangling escape in record field");
        switch (s[i]) {
        case '\\': out += '\\'; break;
        case 't': out += '\t'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        default: throw StoreError(std::string("bad escape \\") + s[i] + " in record field");
        }
    }
    return out;
}

inline std::string crc_hex(std::string_view s)
{
    auto crc = crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

inline std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto p = s.find(sep, start);
        out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
        if (p == std::string_view::npos)
            return out;
        start = p + 1;
    }
}

inline std::int64_t parse_int(std::string_view s, const char* what)
{
    std::string str(s);
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(str.c_str(), &end, 10);
    if (str.empty() || *end != '\0' || errno == ERANGE)
        throw StoreError(std::string("bad ") + what + " '" + str + "'");
    return v;
}

// Append-only file of tab-separated records, each ending in a crc32.
class RecordLog {
public:
    RecordLog(fs::path path, std::size_t fields, bool durable = true)
        : path_(std::move(path)), fields_(fields), durable_(durable)
    {
    }
    ~RecordLog()
    {
        if (fd_ >= 0)
            ::close(fd_);
    }
    RecordLog(const RecordLog&) = delete;
    RecordLog& operator=(const RecordLog&) = delete;

    // Reads every complete record. A torn final line is removed from disk.
    std::vector<std::vector<std::string>> recover()
    {
        std::vector<std::vector<std::string>> out;
        torn_bytes_ = 0;
        if (!fs::exists(path_))
            return out;
        std::string data;
        {
            std::ifstream in(path_, std::ios::binary);
            if (!in)
                throw StoreError("cannot read " + path_.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            data = ss.str();
        }

        std::size_t pos = 0, good_end = 0, lineno = 0;
        while (pos < data.size()) {
            auto nl = data.find('\n', pos);
            ++lineno;
            if (nl == std::string::npos)
                break;  // partial trailing record
            std::string_view line(data.data() + pos, nl - pos);
            auto rec = parse_line(line);
            if (!rec) {
                if (nl + 1 == data.size())
                    break;  // corrupt final record: torn write
                throw StoreError(path_.filename().string() + " line " + std::to_string(lineno) +
                                 " is corrupt (checksum mismatch); restore from backup or remove the line");
            }
            out.push_back(std::move(*rec));
            pos = nl + 1;
            good_end = pos;
        }
        if (good_end < data.size()) {
            torn_bytes_ = data.size() - good_end;
            std::error_code ec;
            fs::resize_file(path_, good_end, ec);
            if (ec)
                throw StoreError("cannot truncate torn record in " + path_.string() + ": " + ec.message());
        }
        return out;
    }

    void append(const std::vector<std::string>& fields)
    {
        if (fields.size() != fields_)
            throw InvalidArgument("record has " + std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(fields_));
        std::string line;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i)
                line += '\t';
            line += escape_field(fields[i]);
        }
        line += '\t';
        line += crc_hex(line.substr(0, line.size() - 1));
        line += '\n';

        if (fd_ < 0) {
            fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
            if (fd_ < 0)
                throw StoreError("cannot open " + path_.string() + ": " + std::strerror(errno) +
                                 "; check permissions and retry");
        }
        std::size_t done = 0;
        while (done < line.size()) {
            auto n = ::write(fd_, line.data() + done, line.size() - done);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                throw StoreError("write to " + path_.string() + " failed: " + std::strerror(errno) +
                                 "; check free space and retry");
            }
            done += static_cast<std::size_t>(n);
        }
        if (durable_ && ::fsync(fd_) != 0)
            throw StoreError("fsync of " + path_.string() + " failed: " + std::strerror(errno) + "; retry");
    }

    std::size_t torn_bytes() const { return torn_bytes_; }
    const fs::path& path() const { return path_; }

private:
    std::optional<std::vector<std::string>> parse_line(std::string_view line) const
    {
        auto tab = line.rfind('\t');
        if (tab == std::string_view::npos || crc_hex(line.substr(0, tab)) != line.substr(tab + 1))
            return std::nullopt;
        auto parts = split(line.substr(0, tab), '\t');
        if (parts.size() != fields_)
            return std::nullopt;
        std::vector<std::string> rec;
        rec.reserve(parts.size());
        for (auto p : parts)
            rec.push_back(unescape_field(p));
        return rec;
    }

    fs::path path_;
    std::size_t fields_;
    bool durable_;
    int fd_ = -1;
    std::size_t torn_bytes_ = 0;
};

// Write-then-rename so readers never see half a file.
inline void write_atomic(const fs::path& path, const std::string& content)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out || !(out << content) || !out.flush())
            throw StoreError("cannot write " + tmp.string() + "; check free space and retry");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw StoreError("cannot replace " + path.string() + ": " + ec.message());
}

inline std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace detail

struct StoreOptions {
    bool durable = true;  // fsync after every appended record
};

// Single writer, many readers: every mutation holds the unique lock, reads
// take the shared lock and see a consistent prefix.
class ProfileStore {
public:
    explicit ProfileStore(fs::path root, StoreOptions opts = {})
        : root_(std::move(root)),
          events_log_(root_ / "events.log", 7, opts.durable),
          notes_log_(root_ / "notifications.log", 5, opts.durable),
          cameras_log_(root_ / "cameras.log", 3, opts.durable),
          tombstones_log_(root_ / "tombstones.log", 2, opts.durable)
    {
        std::error_code ec;
        fs::create_directories(root_ / "profiles", ec);
        if (ec)
            throw StoreError("cannot create store at " + root_.string() + ": " + ec.message());
        load();
    }

    const fs::path& root() const { return root_; }

    // Bytes cut from torn final records when the store was opened.
    std::size_t recovered_bytes() const
    {
        return events_log_.torn_bytes() + notes_log_.torn_bytes() + cameras_log_.torn_bytes() +
               tombstones_log_.torn_bytes();
    }

    // Bumped whenever the enrolled views change; the recognizer should be
    // retrained when this differs from the generation it was trained at.
    std::uint64_t generation() const
    {
        std::shared_lock lock(mu_);
        return generation_;
    }

    // ---- profiles --------------------------------------------------------

    AddResult add_person(PersonInfo info, const std::vector<CandidateView>& images, bool allow_duplicate = false)
    {
        info.name = detail::trim(info.name);
        info.contact = detail::trim(info.contact);
        if (info.name.empty())
            throw InvalidArgument("person name must not be empty");

        std::unique_lock lock(mu_);
        if (!allow_duplicate)
            for (const auto& [id, p] : persons_)
                if (p.info.name == info.name && p.info.contact == info.contact)
                    throw DuplicatePerson("a person named '" + info.name + "' with contact '" + info.contact +
                                          "' already exists (subject " + std::to_string(id) +
                                          "); pass the duplicate override to add anyway");

        auto [accepted, rejected] = screen(images);
        if (!images.empty() && accepted.empty())
            throw QualityGateError("no usable image: " + describe(rejected));

        PersonRecord rec;
        rec.subject_id = next_subject_id_;
        rec.info = std::move(info);
        write_counters(next_subject_id_ + 1);
        next_subject_id_ += 1;

        fs::create_directories(person_dir(rec.subject_id) / "views");
        AddResult result{rec.subject_id, {}, std::move(rejected)};
        ViewId next_view = 1;
        for (const auto* v : accepted)
            result.views.push_back(store_view(rec, next_view++, *v));
        write_meta(rec, next_view);
        persons_[rec.subject_id] = std::move(rec);
        next_view_[result.subject_id] = next_view;
        if (!result.views.empty())
            ++generation_;
        return result;
    }

    AddResult add_views(SubjectId id, const std::vector<CandidateView>& images)
    {
        std::unique_lock lock(mu_);
        auto it = persons_.find(id);
        if (it == persons_.end())
            throw NotFound("no person with subject id " + std::to_string(id));
        auto [accepted, rejected] = screen(images);
        if (!images.empty() && accepted.empty())
            throw QualityGateError("no usable image: " + describe(rejected));

        PersonRecord& rec = it->second;
        AddResult result{id, {}, std::move(rejected)};
        ViewId& next_view = next_view_[id];
        for (const auto* v : accepted)
            result.views.push_back(store_view(rec, next_view++, *v));
        write_meta(rec, next_view);
        if (!result.views.empty())
            ++generation_;
        return result;
    }

    // Removes the profile and its views. Past events keep the name but are
    // reported as tombstoned.
    std::size_t delete_person(SubjectId id)
    {
        std::unique_lock lock(mu_);
        auto it = persons_.find(id);
        if (it == persons_.end())
            throw NotFound("no person with subject id " + std::to_string(id));
        std::size_t removed = it->second.views.size();
        tombstones_log_.append({std::to_string(id), format_rfc3339(now_utc())});
        tombstones_.insert(id);
        std::error_code ec;
        fs::remove_all(person_dir(id), ec);
        if (ec)
            throw StoreError("cannot remove profile directory of subject " + std::to_string(id) + ": " +
                             ec.message());
        persons_.erase(it);
        next_view_.erase(id);
        for (auto& e : events_)
            if (e.verdict.kind == Verdict::Kind::Known && e.verdict.subject_id == id)
                e.tombstoned = true;
        ++generation_;
        return removed;
    }

    std::optional<PersonRecord> person(SubjectId id) const
    {
        std::shared_lock lock(mu_);
        auto it = persons_.find(id);
        if (it == persons_.end())
            return std::nullopt;
        return it->second;
    }

    std::vector<PersonRecord> persons() const
    {
        std::shared_lock lock(mu_);
        std::vector<PersonRecord> out;
        for (const auto& [_, p] : persons_)
            out.push_back(p);
        return out;
    }

    GrayFrame view_image(SubjectId id, ViewId view) const
    {
        std::shared_lock lock(mu_);
        auto it = persons_.find(id);
        if (it == persons_.end())
            throw NotFound("no person with subject id " + std::to_string(id));
        for (const auto& v : it->second.views)
            if (v.view_id == view)
                return load_view(v);
        throw NotFound("subject " + std::to_string(id) + " has no view " + std::to_string(view));
    }

    // All stored views, ready for recognizer training.
    lbp::Enrollment enrollment() const
    {
        std::shared_lock lock(mu_);
        lbp::Enrollment out;
        for (const auto& [id, p] : persons_) {
            auto& list = out[id];
            for (const auto& v : p.views)
                list.push_back({v.view_id, load_view(v)});
        }
        return out;
    }

    // ---- events ----------------------------------------------------------

    std::int64_t record_event(EventRecord e)
    {
        if (e.camera_id.empty())
            throw InvalidArgument("event needs a camera id");
        if (e.location.empty())
            throw InvalidArgument("event needs a location label");
        if (e.summary.empty())
            throw InvalidArgument("event needs a summary sentence");

        std::unique_lock lock(mu_);
        if (e.verdict.kind == Verdict::Kind::Known && !persons_.count(e.verdict.subject_id))
            throw StaleReference("event refers to subject " + std::to_string(e.verdict.subject_id) +
                                 (tombstones_.count(e.verdict.subject_id) ? ", which has been deleted"
                                                                          : ", which does not exist"));
        auto last = last_ts_.find(e.camera_id);
        if (last != last_ts_.end() && e.timestamp < last->second)
            throw InvalidArgument("event timestamp " + format_rfc3339(e.timestamp) + " is earlier than the last event " +
                                  format_rfc3339(last->second) + " from camera " + e.camera_id);

        e.event_id = next_event_id_;
        auto loc = locations_.find(e.camera_id);
        if (loc == locations_.end() || loc->second.rbegin()->second != e.location) {
            cameras_log_.append({e.camera_id, e.location, std::to_string(e.event_id)});
            locations_[e.camera_id][e.event_id] = e.location;
        }

        std::string attrs;
        for (auto a : e.attributes) {
            if (!attrs.empty())
                attrs += ',';
            attrs += summary::to_string(a);
        }
        events_log_.append({std::to_string(e.event_id), format_rfc3339(e.timestamp), e.camera_id,
                            encode_verdict(e.verdict), attrs, e.summary, e.scene_path});
        ++next_event_id_;
        last_ts_[e.camera_id] = e.timestamp;
        e.tombstoned = false;
        index_[e.event_id] = events_.size();
        events_.push_back(std::move(e));
        return events_.back().event_id;
    }

    void record_notification(std::int64_t event_id, const Notification& n)
    {
        std::unique_lock lock(mu_);
        auto it = index_.find(event_id);
        if (it == index_.end())
            throw NotFound("no event " + std::to_string(event_id));
        notes_log_.append({std::to_string(event_id), n.user, n.channel, n.destination, std::string(to_string(n.status))});
        events_[it->second].notifications.push_back(n);
    }

    std::vector<EventRecord> events() const
    {
        std::shared_lock lock(mu_);
        return events_;
    }

    std::optional<EventRecord> event(std::int64_t id) const
    {
        std::shared_lock lock(mu_);
        auto it = index_.find(id);
        if (it == index_.end())
            return std::nullopt;
        return events_[it->second];
    }

    // Events with since <= timestamp < until.
    std::vector<EventRecord> events_between(std::optional<Instant> since, std::optional<Instant> until) const
    {
        std::shared_lock lock(mu_);
        std::vector<EventRecord> out;
        for (const auto& e : events_)
            if ((!since || e.timestamp >= *since) && (!until || e.timestamp < *until))
                out.push_back(e);
        return out;
    }

    std::size_t event_count() const
    {
        std::shared_lock lock(mu_);
        return events_.size();
    }

    SummaryReport query_summary(Period period, Instant anchor) const
    {
        std::shared_lock lock(mu_);
        return summarize(events_, period, anchor);
    }

private:
    fs::path person_dir(SubjectId id) const { return root_ / "profiles" / std::to_string(id); }

    std::pair<std::vector<const CandidateView*>, std::vector<RejectedView>> screen(
        const std::vector<CandidateView>& images) const
    {
        std::vector<const CandidateView*> ok;
        std::vector<RejectedView> bad;
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (auto r = check_view(images[i], i))
                bad.push_back(std::move(*r));
            else
                ok.push_back(&images[i]);
        }
        return {ok, bad};
    }

    static std::string describe(const std::vector<RejectedView>& rejected)
    {
        std::string out;
        for (const auto& r : rejected) {
            if (!out.empty())
                out += "; ";
            out += "image " + std::to_string(r.index) + ": " + r.reason;
        }
        return out;
    }

    ViewId store_view(PersonRecord& rec, ViewId id, const CandidateView& v)
    {
        auto rel = fs::path("profiles") / std::to_string(rec.subject_id) / "views" / (std::to_string(id) + ".pgm");
        netpbm::write(root_ / rel, v.image.crop(*v.face_box));
        rec.views.push_back({id, rel.generic_string(), v.pose});
        return id;
    }

    GrayFrame load_view(const ViewRef& v) const
    {
        auto img = netpbm::read(root_ / v.path);
        if (auto* g = std::get_if<GrayFrame>(&img))
            return *g;
        return to_grayscale(std::get<RgbFrame>(img));
    }

    void write_meta(const PersonRecord& rec, ViewId next_view) const
    {
        using detail::escape_field;
        std::string out;
        out += "name=" + escape_field(rec.info.name) + "\n";
        out += "email=" + escape_field(rec.info.email) + "\n";
        out += "contact=" + escape_field(rec.info.contact) + "\n";
        out += "address=" + escape_field(rec.info.address) + "\n";
        out += "relationship=" + std::string(to_string(rec.info.relationship)) + "\n";
        out += "next_view=" + std::to_string(next_view) + "\n";
        for (const auto& v : rec.views)
            out += "view=" + std::to_string(v.view_id) + "\t" + escape_field(v.path) + "\t" +
                   escape_field(v.pose.value_or("")) + "\n";
        detail::write_atomic(person_dir(rec.subject_id) / "meta", out);
    }

    void write_counters(SubjectId next) const
    {
        detail::write_atomic(root_ / "counters", "next_subject_id=" + std::to_string(next) + "\n");
    }

    PersonRecord read_meta(SubjectId id, ViewId& next_view) const
    {
        using detail::unescape_field;
        auto path = person_dir(id) / "meta";
        std::ifstream in(path);
        if (!in)
            throw StoreError("profile " + std::to_string(id) + " has no meta file");
        PersonRecord rec;
        rec.subject_id = id;
        next_view = 1;
        std::string line;
        while (std::getline(in, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos)
                continue;
            auto key = line.substr(0, eq);
            auto val = std::string_view(line).substr(eq + 1);
            if (key == "name")
                rec.info.name = unescape_field(val);
            else if (key == "email")
                rec.info.email = unescape_field(val);
            else if (key == "contact")
                rec.info.contact = unescape_field(val);
            else if (key == "address")
                rec.info.address = unescape_field(val);
            else if (key == "relationship")
                rec.info.relationship = parse_relationship(val);
            else if (key == "next_view")
                next_view = detail::parse_int(val, "next_view");
            else if (key == "view") {
                auto parts = detail::split(val, '\t');
                if (parts.size() != 3)
                    throw StoreError("malformed view line in " + path.string());
                ViewRef v{detail::parse_int(parts[0], "view id"), unescape_field(parts[1]), std::nullopt};
                if (!parts[2].empty())
                    v.pose = unescape_field(parts[2]);
                next_view = std::max(next_view, v.view_id + 1);
                rec.views.push_back(std::move(v));
            }
        }
        if (rec.info.name.empty())
            throw StoreError("profile " + std::to_string(id) + " has no name");
        return rec;
    }

    void load()
    {
        SubjectId max_seen = 0;
        for (const auto& rec : tombstones_log_.recover()) {
            auto id = detail::parse_int(rec[0], "subject id");
            tombstones_.insert(id);
            max_seen = std::max(max_seen, id);
        }

        for (const auto& entry : fs::directory_iterator(root_ / "profiles")) {
            if (!entry.is_directory())
                continue;
            auto name = entry.path().filename().string();
            if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit))
                continue;
            SubjectId id = detail::parse_int(name, "profile directory");
            if (tombstones_.count(id)) {
                // Deleted but the directory removal did not finish.
                std::error_code ec;
                fs::remove_all(entry.path(), ec);
                continue;
            }
            ViewId next_view = 1;
            persons_[id] = read_meta(id, next_view);
            next_view_[id] = next_view;
            max_seen = std::max(max_seen, id);
        }

        next_subject_id_ = max_seen + 1;
        if (std::ifstream in{root_ / "counters"}) {
            std::string line;
            while (std::getline(in, line))
                if (line.starts_with("next_subject_id="))
                    next_subject_id_ = std::max(next_subject_id_,
                                                detail::parse_int(std::string_view(line).substr(16), "counter"));
        }

        for (const auto& rec : cameras_log_.recover())
            locations_[rec[0]][detail::parse_int(rec[2], "event id")] = rec[1];

        for (const auto& rec : events_log_.recover()) {
            EventRecord e;
            e.event_id = detail::parse_int(rec[0], "event id");
            if (e.event_id != next_event_id_)
                throw StoreError("events.log is not gap-free: expected event " + std::to_string(next_event_id_) +
                                 ", found " + std::to_string(e.event_id));
            try {
                e.timestamp = parse_rfc3339(rec[1]);
            } catch (const InvalidArgument& ex) {
                throw StoreError(std::string("events.log: ") + ex.what());
            }
            e.camera_id = rec[2];
            e.verdict = decode_verdict(rec[3]);
            if (!rec[4].empty())
                for (auto a : detail::split(rec[4], ',')) {
                    auto label = summary::parse_label(a);
                    if (!label)
                        throw StoreError("events.log: unknown attribute '" + std::string(a) + "'");
                    e.attributes.insert(*label);
                }
            e.summary = rec[5];
            e.scene_path = rec[6];
            e.location = location_of(e.camera_id, e.event_id);
            e.tombstoned = e.verdict.kind == Verdict::Kind::Known && tombstones_.count(e.verdict.subject_id) > 0;
            last_ts_[e.camera_id] = e.timestamp;
            index_[e.event_id] = events_.size();
            events_.push_back(std::move(e));
            ++next_event_id_;
        }

        for (const auto& rec : notes_log_.recover()) {
            auto id = detail::parse_int(rec[0], "event id");
            auto it = index_.find(id);
            if (it == index_.end())
                continue;  // delivery recorded for an event lost in a torn write
            events_[it->second].notifications.push_back({rec[1], rec[2], rec[3], parse_delivery_status(rec[4])});
        }
    }

    std::string location_of(const std::string& camera, std::int64_t event_id) const
    {
        auto it = locations_.find(camera);
        if (it == locations_.end())
            return camera;
        auto loc = it->second.upper_bound(event_id);
        if (loc == it->second.begin())
            return camera;
        return std::prev(loc)->second;
    }

    fs::path root_;
    mutable std::shared_mutex mu_;
    detail::RecordLog events_log_;
    detail::RecordLog notes_log_;
    detail::RecordLog cameras_log_;
    detail::RecordLog tombstones_log_;

    std::map<SubjectId, PersonRecord> persons_;
    std::map<SubjectId, ViewId> next_view_;
    std::set<SubjectId> tombstones_;
    SubjectId next_subject_id_ = 1;
    std::uint64_t generation_ = 0;

    std::vector<EventRecord> events_;
    std::map<std::int64_t, std::size_t> index_;
    std::int64_t next_event_id_ = 1;
    std::map<std::string, Instant> last_ts_;
    std::map<std::string, std::map<std::int64_t, std::string>> locations_;
};

} // namespace accessguard::store
