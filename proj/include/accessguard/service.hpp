#pragma once

// Wires configuration into running parts: store, recognizer, attribute
// classifier, notifier with outbox transports, event bus and door.

#include <accessguard/config.hpp>
#include <accessguard/door.hpp>
#include <accessguard/lbp.hpp>
#include <accessguard/pipeline.hpp>
#include <accessguard/profile_store.hpp>
#include <accessguard/relay.hpp>
#include <accessguard/summary.hpp>

#include <functional>
#include <memory>

namespace accessguard::service {

namespace fs = std::filesystem;

struct Options {
    std::function<Instant()> clock = now_utc;
    bool durable = true;
};

class Service {
public:
    explicit Service(config::AppConfig cfg, Options opts = {})
        : cfg_(std::move(cfg)),
          clock_(std::move(opts.clock)),
          store_(cfg_.data_dir, store::StoreOptions{opts.durable}),
          recognizer_(cfg_.recognizer),
          classifier_(cfg_.attributes ? summary::ManifestClassifier::load(*cfg_.attributes)
                                      : summary::ManifestClassifier{}),
          outbox_(cfg_.data_dir),
          notifier_(cfg_.users,
                    {{pipeline::Channel::Mms, &outbox_},
                     {pipeline::Channel::Email, &outbox_},
                     {pipeline::Channel::Call, &outbox_}},
                    cfg_.notify_window),
          actuator_(make_actuator(cfg_)),
          door_(*actuator_, cfg_.door_hold)
    {
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const config::AppConfig& config() const { return cfg_; }
    store::ProfileStore& store() { return store_; }
    lbp::LbpRecognizer& recognizer() { return recognizer_; }
    pipeline::EventBus& bus() { return bus_; }
    door::DoorController& door() { return door_; }
    Instant now() const { return clock_(); }

    // Profile removal also drops the subject's templates right away so the
    // next frame cannot match them even before a retrain.
    std::size_t delete_person(lbp::SubjectId id)
    {
        auto n = store_.delete_person(id);
        recognizer_.forget(id);
        return n;
    }

    pipeline::StreamStats run_camera(const config::CameraConfig& cam,
                                     const std::function<void(const pipeline::FrameResult&)>& on_frame = {})
    {
        auto detector = cam.detections ? pipeline::FixtureDetector::load(*cam.detections) : pipeline::FixtureDetector{};
        pipeline::Pipeline p({store_, detector, detector, recognizer_, classifier_, &notifier_, &bus_, clock_},
                             cfg_.pipeline_config());
        return p.run_stream(cam.camera, on_frame);
    }

    // One directory of frames attributed to a configured camera.
    pipeline::StreamStats ingest(const std::string& camera_id, const fs::path& frames,
                                 std::optional<fs::path> detections,
                                 const std::function<void(const pipeline::FrameResult&)>& on_frame = {})
    {
        const auto* cam = cfg_.camera(camera_id);
        if (!cam)
            throw InvalidArgument("camera '" + camera_id + "' is not in the configuration");
        config::CameraConfig c = *cam;
        c.camera.source = frames.string();
        if (detections)
            c.detections = std::move(detections);
        return run_camera(c, on_frame);
    }

private:
    static std::unique_ptr<door::ActuatorGateway> make_actuator(const config::AppConfig& cfg)
    {
        if (cfg.relay_url.empty())
            return std::make_unique<door::MockActuator>();
        return std::make_unique<door::HttpRelayActuator>(cfg.relay_url);
    }

    config::AppConfig cfg_;
    std::function<Instant()> clock_;
    store::ProfileStore store_;
    lbp::LbpRecognizer recognizer_;
    summary::ManifestClassifier classifier_;
    pipeline::OutboxTransport outbox_;
    pipeline::Notifier notifier_;
    pipeline::EventBus bus_;
    std::unique_ptr<door::ActuatorGateway> actuator_;
    door::DoorController door_;
};

} // namespace accessguard::service
