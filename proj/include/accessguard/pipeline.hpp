#pragma once

// Frame-to-alert flow: change gate, person and face detection, orientation,
// recognition, attribute patches, summary, persistence, notification.

#include <accessguard/change_gate.hpp>
#include <accessguard/error.hpp>
#include <accessguard/face_geometry.hpp>
#include <accessguard/image.hpp>
#include <accessguard/lbp.hpp>
#include <accessguard/profile_store.hpp>
#include <accessguard/summary.hpp>
#include <accessguard/timeutil.hpp>

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace accessguard::pipeline {

namespace fs = std::filesystem;
using store::EventRecord;
using summary::Verdict;

struct CameraSource {
    std::string camera_id;
    std::string location;
    std::string source;  // frame directory, or "live:<ref>"
};

// ---------------------------------------------------------------------------
// Detectors

struct FaceDetection {
    Rect box;
    geometry::LandmarkSet landmarks;
};

class PersonDetector {
public:
    virtual ~PersonDetector() = default;
    virtual std::vector<Rect> detect_persons(std::int64_t frame_index, const AnyFrame& frame) = 0;
};

class FaceDetector {
public:
    virtual ~FaceDetector() = default;
    virtual std::optional<FaceDetection> detect_face(std::int64_t frame_index, const AnyFrame& frame,
                                                     const Rect& person_box) = 0;
};

inline int frame_width(const AnyFrame& f)
{
    return std::visit([](const auto& img) { return img.width(); }, f);
}

inline int frame_height(const AnyFrame& f)
{
    return std::visit([](const auto& img) { return img.height(); }, f);
}

inline GrayFrame gray(const AnyFrame& f)
{
    if (auto* g = std::get_if<GrayFrame>(&f))
        return *g;
    return to_grayscale(std::get<RgbFrame>(f));
}

// Detector backed by a JSON document keyed by frame index:
//   {"12": [{"person_box":[x,y,w,h], "face":{"box":[x,y,w,h], "landmarks":[[x,y],...]} | null}]}
class FixtureDetector : public PersonDetector, public FaceDetector {
public:
    struct Entry {
        Rect person_box;
        std::optional<FaceDetection> face;
    };

    FixtureDetector() = default;
    explicit FixtureDetector(std::map<std::int64_t, std::vector<Entry>> frames) : frames_(std::move(frames)) {}

    static FixtureDetector parse(const nlohmann::json& doc)
    {
        if (!doc.is_object())
            throw InvalidArgument("detection fixture must be a JSON object keyed by frame index");
        std::map<std::int64_t, std::vector<Entry>> frames;
        for (const auto& [key, list] : doc.items()) {
            std::int64_t index = 0;
            try {
                std::size_t used = 0;
                index = std::stoll(key, &used);
                if (used != key.size())
                    throw std::invalid_argument(key);
            } catch (const std::exception&) {
                throw InvalidArgument("detection fixture key '" + key + "' is not a frame index");
            }
            if (!list.is_array())
                throw InvalidArgument("detection fixture frame " + key + " must be an array");
            auto& out = frames[index];
            for (const auto& item : list) {
                Entry e;
                e.person_box = rect_from(item.at("person_box"), "person_box");
                if (item.contains("face") && !item["face"].is_null()) {
                    const auto& face = item["face"];
                    const auto& pts = face.at("landmarks");
                    if (!pts.is_array() || pts.size() != 68)
                        throw InvalidArgument("frame " + key + ": landmarks must be 68 [x,y] pairs");
                    std::array<geometry::Point, 68> p{};
                    for (std::size_t i = 0; i < 68; ++i)
                        p[i] = {pts[i].at(0).get<double>(), pts[i].at(1).get<double>()};
                    e.face = FaceDetection{rect_from(face.at("box"), "face box"), geometry::LandmarkSet(p)};
                }
                out.push_back(std::move(e));
            }
        }
        return FixtureDetector(std::move(frames));
    }

    static FixtureDetector load(const fs::path& path)
    {
        std::ifstream in(path);
        if (!in)
            throw InvalidArgument("cannot open detection fixture " + path.string());
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("detection fixture " + path.string() + " is not valid JSON: " + e.what());
        }
        try {
            return parse(doc);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("detection fixture " + path.string() + ": " + e.what());
        }
    }

    std::vector<Rect> detect_persons(std::int64_t index, const AnyFrame& frame) override
    {
        std::vector<Rect> out;
        auto it = frames_.find(index);
        if (it == frames_.end())
            return out;
        for (const auto& e : it->second) {
            check_inside(e.person_box, frame, index);
            out.push_back(e.person_box);
        }
        return out;
    }

    std::optional<FaceDetection> detect_face(std::int64_t index, const AnyFrame& frame, const Rect& person) override
    {
        auto it = frames_.find(index);
        if (it == frames_.end())
            return std::nullopt;
        for (const auto& e : it->second)
            if (e.person_box == person) {
                if (e.face)
                    check_inside(e.face->box, frame, index);
                return e.face;
            }
        return std::nullopt;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json doc = nlohmann::json::object();
        for (const auto& [index, list] : frames_) {
            auto& arr = doc[std::to_string(index)] = nlohmann::json::array();
            for (const auto& e : list) {
                nlohmann::json item{{"person_box", rect_json(e.person_box)}, {"face", nullptr}};
                if (e.face) {
                    nlohmann::json pts = nlohmann::json::array();
                    for (std::size_t i = 0; i < 68; ++i)
                        pts.push_back({e.face->landmarks[i].x, e.face->landmarks[i].y});
                    item["face"] = {{"box", rect_json(e.face->box)}, {"landmarks", pts}};
                }
                arr.push_back(item);
            }
        }
        return doc;
    }

private:
    static Rect rect_from(const nlohmann::json& j, const char* what)
    {
        if (!j.is_array() || j.size() != 4)
            throw InvalidArgument(std::string(what) + " must be [x, y, w, h]");
        Rect r{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
        if (r.empty())
            throw InvalidArgument(std::string(what) + " must have positive size");
        return r;
    }

    static nlohmann::json rect_json(const Rect& r) { return {r.x, r.y, r.width, r.height}; }

    static void check_inside(const Rect& r, const AnyFrame& frame, std::int64_t index)
    {
        if (!r.inside(frame_width(frame), frame_height(frame)))
            throw InvalidArgument("detection fixture frame " + std::to_string(index) + ": box [" +
                                  std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.width) +
                                  "," + std::to_string(r.height) + "] lies outside the frame");
    }

    std::map<std::int64_t, std::vector<Entry>> frames_;
};

// ---------------------------------------------------------------------------
// Notifications

enum class Channel { Mms, Email, Call };

inline std::string_view to_string(Channel c)
{
    switch (c) {
    case Channel::Mms: return "mms";
    case Channel::Email: return "email";
    case Channel::Call: return "call";
    }
    return "mms";
}

inline Channel parse_channel(std::string_view s)
{
    for (auto c : {Channel::Mms, Channel::Email, Channel::Call})
        if (to_string(c) == s)
            return c;
    throw InvalidArgument("unknown notification channel '" + std::string(s) + "' (mms, email, call)");
}

struct UserPreference {
    std::string user;
    std::map<Channel, std::string> destinations;
};

struct NotificationMessage {
    Channel channel = Channel::Mms;
    std::string destination;
    std::string subject;
    std::string body;
    std::string attachment;
};

inline std::string message_body(const EventRecord& e)
{
    std::string body = e.summary + "\n";
    body += "Facial description: " + summary::facial_description(e.attributes) + "\n";
    body += "Time: " + format_rfc3339(e.timestamp) + "\n";
    body += "Location: " + e.location + "\n";
    return body;
}

inline NotificationMessage build_message(const EventRecord& e, Channel channel, std::string destination)
{
    return {channel, std::move(destination), "Activity at " + e.location, message_body(e), e.scene_path};
}

class Transport {
public:
    virtual ~Transport() = default;
    // Throws on delivery failure.
    virtual void send(std::int64_t event_id, const NotificationMessage& msg) = 0;
};

// Writes outbox/<channel>/<event_id>.txt under `root`; several recipients of
// the same event on one channel share the file.
class OutboxTransport : public Transport {
public:
    explicit OutboxTransport(fs::path root) : root_(std::move(root)) {}

    void send(std::int64_t event_id, const NotificationMessage& msg) override
    {
        auto dir = root_ / "outbox" / std::string(to_string(msg.channel));
        std::error_code ec;
        fs::create_directories(dir, ec);
        std::lock_guard lock(mu_);
        std::ofstream out(dir / (std::to_string(event_id) + ".txt"), std::ios::app | std::ios::binary);
        if (!out)
            throw StoreError("cannot write outbox file for event " + std::to_string(event_id));
        out << "to: " << msg.destination << "\n"
            << "subject: " << msg.subject << "\n"
            << "attachment: " << msg.attachment << "\n\n"
            << msg.body << "\n";
        if (!out.flush())
            throw StoreError("cannot write outbox file for event " + std::to_string(event_id));
    }

private:
    fs::path root_;
    std::mutex mu_;
};

// At most one notification per (user, camera) per window. Failed attempts
// count; only suppressed ones do not.
class RateLimiter {
public:
    explicit RateLimiter(Duration window) : window_(window) {}

    bool admit(const std::string& user, const std::string& camera, Instant now)
    {
        std::lock_guard lock(mu_);
        auto key = std::make_pair(user, camera);
        auto it = last_.find(key);
        if (it != last_.end() && now < it->second + window_)
            return false;
        last_[key] = now;
        return true;
    }

    Duration window() const { return window_; }

private:
    Duration window_;
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, Instant> last_;
};

inline constexpr Duration kDefaultNotifyWindow = std::chrono::seconds{60};

class Notifier {
public:
    Notifier(std::vector<UserPreference> prefs, std::map<Channel, Transport*> transports,
             Duration window = kDefaultNotifyWindow)
        : prefs_(std::move(prefs)), transports_(std::move(transports)), limiter_(window)
    {
    }

    // One delivery record per (user, channel). Never throws for transport
    // problems; they come back as Failed.
    std::vector<store::Notification> notify(const EventRecord& e)
    {
        std::vector<store::Notification> out;
        for (const auto& p : prefs_) {
            if (p.destinations.empty())
                continue;
            bool admitted = limiter_.admit(p.user, e.camera_id, e.timestamp);
            for (const auto& [channel, dest] : p.destinations) {
                store::Notification n{p.user, std::string(to_string(channel)), dest, store::DeliveryStatus::Sent};
                if (!admitted) {
                    n.status = store::DeliveryStatus::RateLimited;
                } else {
                    auto t = transports_.find(channel);
                    try {
                        if (t == transports_.end() || !t->second)
                            throw InvalidState("no transport for channel");
                        t->second->send(e.event_id, build_message(e, channel, dest));
                    } catch (const std::exception&) {
                        n.status = store::DeliveryStatus::Failed;
                    }
                }
                out.push_back(std::move(n));
            }
        }
        return out;
    }

private:
    std::vector<UserPreference> prefs_;
    std::map<Channel, Transport*> transports_;
    RateLimiter limiter_;
};

// ---------------------------------------------------------------------------
// Event fan-out for live subscribers

class EventBus {
public:
    class Subscription {
    public:
        explicit Subscription(std::size_t capacity) : capacity_(capacity) {}

        std::optional<EventRecord> next(Duration timeout)
        {
            std::unique_lock lock(mu_);
            cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
            if (queue_.empty())
                return std::nullopt;
            auto e = std::move(queue_.front());
            queue_.pop_front();
            return e;
        }

        void close()
        {
            {
                std::lock_guard lock(mu_);
                closed_ = true;
            }
            cv_.notify_all();
        }

        bool closed() const
        {
            std::lock_guard lock(mu_);
            return closed_;
        }

    private:
        friend class EventBus;
        void push(const EventRecord& e)
        {
            {
                std::lock_guard lock(mu_);
                if (closed_)
                    return;
                if (queue_.size() == capacity_)
                    queue_.pop_front();  // slow reader loses the oldest
                queue_.push_back(e);
            }
            cv_.notify_one();
        }

        std::size_t capacity_;
        mutable std::mutex mu_;
        std::condition_variable cv_;
        std::deque<EventRecord> queue_;
        bool closed_ = false;
    };

    std::shared_ptr<Subscription> subscribe(std::size_t capacity = 256)
    {
        auto s = std::make_shared<Subscription>(capacity);
        std::lock_guard lock(mu_);
        subs_.push_back(s);
        return s;
    }

    void publish(const EventRecord& e)
    {
        std::vector<std::shared_ptr<Subscription>> live;
        {
            std::lock_guard lock(mu_);
            std::erase_if(subs_, [](const auto& w) { return w.expired(); });
            for (const auto& w : subs_)
                if (auto s = w.lock())
                    live.push_back(std::move(s));
        }
        for (auto& s : live)
            s->push(e);
    }

    void close_all()
    {
        std::lock_guard lock(mu_);
        for (const auto& w : subs_)
            if (auto s = w.lock())
                s->close();
    }

private:
    std::mutex mu_;
    std::vector<std::weak_ptr<Subscription>> subs_;
};

// ---------------------------------------------------------------------------
// Frames on disk

struct FrameFile {
    std::int64_t index = 0;
    fs::path path;
};

// Numbered frames: files named <digits>.pgm or <digits>.ppm, in numeric order.
inline std::vector<FrameFile> list_frames(const fs::path& dir)
{
    std::error_code ec;
    if (!fs::is_directory(dir, ec))
        throw InvalidArgument("frame source " + dir.string() + " is not a readable directory");
    static const std::regex name(R"(^(\d+)\.(pgm|ppm)$)");
    std::vector<FrameFile> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        auto file = entry.path().filename().string();
        if (entry.is_regular_file() && std::regex_match(file, m, name))
            out.push_back({std::stoll(m[1].str()), entry.path()});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].index == out[i - 1].index)
            throw InvalidArgument("frame index " + std::to_string(out[i].index) + " appears twice in " +
                                  dir.string());
    return out;
}

inline std::string scene_name(const std::string& camera, std::int64_t index, const AnyFrame& frame)
{
    std::string safe;
    for (char c : camera)
        safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    char num[32];
    std::snprintf(num, sizeof num, "%06lld", static_cast<long long>(index));
    return "scenes/" + safe + "_" + num + "." + netpbm::extension(frame);
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
    gate::GateConfig gate;
    geometry::OrientationConfig orientation;
    int head_lift = geometry::kDefaultHeadLift;
};

struct PersonOutcome {
    Rect person_box;
    std::optional<Rect> face_box;
    Verdict verdict;
    std::optional<geometry::OrientationEstimate> orientation;
    bool needs_frontalization = false;
    std::optional<double> distance;
    summary::AttributeSet attributes;
};

struct FrameResult {
    std::int64_t frame_index = 0;
    std::int64_t score = 0;
    bool active = false;
    std::vector<PersonOutcome> persons;
    std::optional<EventRecord> event;
    std::vector<std::string> notes;  // degraded stages
    Duration elapsed{};
};

struct StreamStats {
    std::size_t frames = 0;
    std::size_t active_frames = 0;
    std::size_t events = 0;
    Duration total{};
    Duration slowest{};

    double frames_per_second() const
    {
        return total.count() > 0 ? 1000.0 * static_cast<double>(frames) / static_cast<double>(total.count()) : 0.0;
    }
};

struct PipelineDeps {
    store::ProfileStore& store;
    PersonDetector& persons;
    FaceDetector& faces;
    lbp::FaceRecognizer& recognizer;
    const summary::AttributeClassifier& classifier;
    Notifier* notifier = nullptr;
    EventBus* bus = nullptr;
    std::function<Instant()> clock = now_utc;
};

class Pipeline {
public:
    Pipeline(PipelineDeps deps, PipelineConfig cfg) : d_(std::move(deps)), cfg_(std::move(cfg))
    {
        cfg_.gate.validate();
    }

    FrameResult process_frame(const CameraSource& cam, std::int64_t index, const AnyFrame& frame,
                              const AnyFrame& prev)
    {
        auto started = std::chrono::steady_clock::now();
        FrameResult r;
        r.frame_index = index;
        if (frame_width(frame) != frame_width(prev) || frame_height(frame) != frame_height(prev))
            throw InvalidArgument("frame " + std::to_string(index) + " differs in size from the previous frame");

        const GrayFrame cur = gray(frame);
        auto decision = gate::detect_change(gray(prev), cur, cfg_.gate);
        r.score = decision.score;
        r.active = decision.active;
        if (r.active) {
            for (const auto& box : d_.persons.detect_persons(index, frame))
                r.persons.push_back(analyse_person(index, frame, cur, box, r.notes));
            if (!r.persons.empty())
                r.event = emit(cam, index, frame, r);
        }
        r.elapsed = std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - started);
        return r;
    }

    StreamStats run_stream(const CameraSource& cam, const std::function<void(const FrameResult&)>& on_frame = {})
    {
        if (cam.source.starts_with("live:"))
            throw InvalidArgument("camera " + cam.camera_id +
                                  ": live capture is not available in this build; use a frame directory");
        auto frames = list_frames(cam.source);
        StreamStats stats;
        std::optional<AnyFrame> prev;
        for (const auto& f : frames) {
            AnyFrame cur = netpbm::read(f.path);
            ++stats.frames;
            if (prev) {
                auto r = process_frame(cam, f.index, cur, *prev);
                stats.active_frames += r.active;
                stats.events += r.event.has_value();
                stats.total += r.elapsed;
                stats.slowest = std::max(stats.slowest, r.elapsed);
                if (on_frame)
                    on_frame(r);
            }
            prev = std::move(cur);
        }
        return stats;
    }

private:
    PersonOutcome analyse_person(std::int64_t index, const AnyFrame& frame, const GrayFrame& cur, const Rect& box,
                                 std::vector<std::string>& notes)
    {
        PersonOutcome p;
        p.person_box = box;
        GrayFrame person_crop = cur.crop(box);

        auto face = d_.faces.detect_face(index, frame, box);
        if (!face) {
            p.verdict = Verdict::no_face();
            p.attributes = attributes(nullptr, person_crop, notes);
            return p;
        }
        p.face_box = face->box;

        try {
            p.orientation = geometry::estimate_orientation(face->landmarks, cfg_.orientation.tau_deg);
            p.needs_frontalization = geometry::needs_frontalization(*p.orientation, cfg_.orientation);
        } catch (const std::exception& e) {
            notes.push_back(std::string("orientation unavailable: ") + e.what());
        }

        p.verdict = recognise(cur.crop(face->box), p, notes);

        std::optional<geometry::PatchSet<1>> patches;
        try {
            patches = geometry::crop_patches(cur, face->landmarks, face->box, cfg_.head_lift);
        } catch (const std::exception& e) {
            notes.push_back(std::string("face patches unavailable: ") + e.what());
        }
        p.attributes = attributes(patches ? &*patches : nullptr, person_crop, notes);
        return p;
    }

    Verdict recognise(const GrayFrame& face, PersonOutcome& p, std::vector<std::string>& notes)
    {
        try {
            sync_recognizer();
            auto res = d_.recognizer.predict(face);
            p.distance = res.best_distance;
            if (!res.subject)
                return Verdict::unknown();
            auto person = d_.store.person(*res.subject);
            if (!person) {
                notes.push_back("recognizer matched subject " + std::to_string(*res.subject) +
                                ", which is no longer enrolled");
                return Verdict::unknown();
            }
            return Verdict::known(person->subject_id, person->info.name);
        } catch (const std::exception& e) {
            notes.push_back(std::string("recognizer failed: ") + e.what());
            return Verdict::unknown();
        }
    }

    summary::AttributeSet attributes(const geometry::PatchSet<1>* patches, const GrayFrame& person_crop,
                                     std::vector<std::string>& notes)
    {
        try {
            return summary::classify_attributes(patches, &person_crop, d_.classifier);
        } catch (const std::exception& e) {
            notes.push_back(std::string("attributes unavailable: ") + e.what());
            return {};
        }
    }

    void sync_recognizer()
    {
        std::lock_guard lock(train_mu_);
        auto gen = d_.store.generation();
        if (trained_generation_ && *trained_generation_ == gen)
            return;
        d_.recognizer.train(d_.store.enrollment());
        trained_generation_ = gen;
    }

    static std::size_t headline(const std::vector<PersonOutcome>& persons)
    {
        for (auto kind : {Verdict::Kind::Known, Verdict::Kind::Unknown})
            for (std::size_t i = 0; i < persons.size(); ++i)
                if (persons[i].verdict.kind == kind)
                    return i;
        return 0;
    }

    EventRecord emit(const CameraSource& cam, std::int64_t index, const AnyFrame& frame, FrameResult& r)
    {
        const auto& lead = r.persons[headline(r.persons)];
        EventRecord e;
        e.timestamp = d_.clock();
        e.camera_id = cam.camera_id;
        e.location = cam.location;
        e.verdict = lead.verdict;
        e.attributes = lead.attributes;
        e.summary = summary::compose_summary(lead.verdict, cam.location, lead.attributes).sentence;
        e.scene_path = scene_name(cam.camera_id, index, frame);

        auto scene = d_.store.root() / e.scene_path;
        std::error_code ec;
        fs::create_directories(scene.parent_path(), ec);
        try {
            netpbm::write(scene, frame);
        } catch (const std::exception& ex) {
            throw StoreError(std::string("cannot save scene image: ") + ex.what());
        }

        e.event_id = d_.store.record_event(e);
        if (d_.notifier)
            for (const auto& n : d_.notifier->notify(e)) {
                d_.store.record_notification(e.event_id, n);
                e.notifications.push_back(n);
            }
        if (d_.bus)
            d_.bus->publish(e);
        return e;
    }

    PipelineDeps d_;
    PipelineConfig cfg_;
    std::mutex train_mu_;
    std::optional<std::uint64_t> trained_generation_;
};

} // namespace accessguard::pipeline
