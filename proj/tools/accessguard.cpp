// accessguard command-line tool.

#include <accessguard/config.hpp>
#include <accessguard/http_api.hpp>
#include <accessguard/service.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <thread>

using namespace accessguard;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::string data_dir;
};

config::AppConfig load_config(const Common& c)
{
    config::AppConfig cfg = c.config_path.empty() ? config::AppConfig{} : config::load(c.config_path);
    if (!c.data_dir.empty())
        cfg.data_dir = c.data_dir;
    return cfg;
}

void print_frame(const pipeline::CameraSource& cam, const pipeline::FrameResult& r)
{
    for (const auto& n : r.notes)
        std::cerr << cam.camera_id << " frame " << r.frame_index << ": " << n << "\n";
    if (r.event)
        std::cout << r.event->event_id << "\t" << format_rfc3339(r.event->timestamp) << "\t" << cam.camera_id << "\t"
                  << r.event->summary << "\n"
                  << std::flush;
}

void print_stats(const std::string& camera, const pipeline::StreamStats& s)
{
    std::cerr << camera << ": frames=" << s.frames << " active=" << s.active_frames << " events=" << s.events
              << " slowest_ms=" << s.slowest.count() << " fps=" << s.frames_per_second() << "\n";
}

// path@x,y,w,h[@pose]
store::CandidateView parse_image_arg(const std::string& arg)
{
    auto at = arg.find('@');
    if (at == std::string::npos)
        throw InvalidArgument("image '" + arg + "' needs a face box: path@x,y,w,h[@pose]");
    std::string path = arg.substr(0, at);
    std::string rest = arg.substr(at + 1);
    std::optional<std::string> pose;
    if (auto at2 = rest.find('@'); at2 != std::string::npos) {
        pose = rest.substr(at2 + 1);
        rest = rest.substr(0, at2);
    }
    int x, y, w, h;
    char tail;
    if (std::sscanf(rest.c_str(), "%d,%d,%d,%d%c", &x, &y, &w, &h, &tail) != 4)
        throw InvalidArgument("bad face box '" + rest + "' (expected x,y,w,h)");
    return {pipeline::gray(netpbm::read(path)), Rect{x, y, w, h}, pose};
}

std::vector<store::CandidateView> parse_images(const std::vector<std::string>& args)
{
    std::vector<store::CandidateView> out;
    for (const auto& a : args)
        out.push_back(parse_image_arg(a));
    return out;
}

void report_add(const store::AddResult& r)
{
    std::cout << "subject " << r.subject_id << ": " << r.views.size() << " view(s) stored\n";
    for (const auto& x : r.rejected)
        std::cout << "  image " << x.index << " rejected: " << x.reason << "\n";
}

sigset_t shutdown_signals()
{
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    return set;
}

int serve(const Common& common, bool with_cameras)
{
    // Block the signals before any thread starts so only sigwait sees them.
    auto sigs = shutdown_signals();
    pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

    auto cfg = load_config(common);
    service::Service svc(cfg);
    http::ServerOptions opts;
    opts.static_dir = cfg.http_static_dir;
    http::ApiServer api(svc, opts);
    int port = api.start(cfg.http_bind, cfg.http_port);
    std::cerr << "listening on " << cfg.http_bind << ":" << port << "\n";

    std::vector<std::thread> cameras;
    if (with_cameras)
        for (const auto& cam : cfg.cameras)
            cameras.emplace_back([&svc, cam] {
                try {
                    auto stats = svc.run_camera(cam, [&](const auto& r) { print_frame(cam.camera, r); });
                    print_stats(cam.camera.camera_id, stats);
                } catch (const std::exception& e) {
                    std::cerr << cam.camera.camera_id << ": " << e.what() << "\n";
                }
            });

    int sig = 0;
    sigwait(&sigs, &sig);
    std::cerr << "shutting down\n";
    api.stop();
    for (auto& t : cameras)
        t.join();
    return 0;
}

httplib::Client door_client(const std::string& server)
{
    httplib::Client cli(server);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(10, 0);
    return cli;
}

int door_request(const std::string& server, const std::string& token, const std::string& verb)
{
    auto cli = door_client(server);
    httplib::Result res = verb == "status"
                              ? cli.Get("/door")
                              : cli.Post("/door/" + verb, {{"X-Operator-Token", token}}, "", "application/json");
    if (!res) {
        std::cerr << "cannot reach " << server << ": " << httplib::to_string(res.error()) << "\n";
        return 1;
    }
    std::cout << res->body << "\n";
    return res->status == 200 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Home access monitoring: change-gated recognition, event summaries, door control"};
    app.require_subcommand(1);
    app.fallthrough();  // parent options may follow a subcommand
    Common common;
    app.add_option("-c,--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("-d,--data-dir", common.data_dir, "Data directory (overrides the configuration)");

    // run
    auto* run = app.add_subcommand("run", "Process every configured camera source");
    std::vector<std::string> only;
    run->add_option("--camera", only, "Restrict to these camera ids");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Process one directory of numbered PGM/PPM frames");
    std::string ingest_dir, ingest_camera, ingest_detections;
    ingest->add_option("dir", ingest_dir, "Frame directory")->required()->check(CLI::ExistingDirectory);
    ingest->add_option("--camera", ingest_camera, "Configured camera id the frames come from")->required();
    ingest->add_option("--detections", ingest_detections, "Detection fixture JSON")->check(CLI::ExistingFile);

    // evaluate-gate
    auto* eval = app.add_subcommand("evaluate-gate", "Score the change gate against a labelled frame manifest");
    std::string manifest, csv_path, mode;
    std::optional<std::int64_t> global_threshold;
    std::optional<int> pixel_threshold;
    std::optional<double> gamma;
    eval->add_option("manifest", manifest, "Lines of frame_path<TAB>0|1")->required()->check(CLI::ExistingFile);
    eval->add_option("--csv", csv_path, "Write per-frame index,score,active,label");
    eval->add_option("--mode", mode, "binary or adaptive")->check(CLI::IsMember({"binary", "adaptive"}));
    eval->add_option("--global-threshold", global_threshold, "Changed-pixel score threshold");
    eval->add_option("--pixel-threshold", pixel_threshold, "Per-pixel difference threshold");
    eval->add_option("--gamma", gamma, "Gamma applied to both frames");

    // profile
    auto* profile = app.add_subcommand("profile", "Manage enrolled people");
    profile->require_subcommand(1);
    auto* padd = profile->add_subcommand("add", "Create a profile");
    store::PersonInfo info;
    std::string relationship = "family";
    std::vector<std::string> images;
    bool allow_duplicate = false;
    padd->add_option("--name", info.name)->required();
    padd->add_option("--email", info.email);
    padd->add_option("--contact", info.contact);
    padd->add_option("--address", info.address);
    padd->add_option("--relationship", relationship)->check(CLI::IsMember({"family", "friend", "caregiver"}));
    padd->add_option("--image", images, "Face image as path@x,y,w,h[@pose]; repeatable");
    padd->add_flag("--allow-duplicate", allow_duplicate, "Accept a second profile with the same name and contact");

    auto* pviews = profile->add_subcommand("add-views", "Add face views to a profile");
    lbp::SubjectId view_subject = 0;
    std::vector<std::string> view_images;
    pviews->add_option("id", view_subject)->required();
    pviews->add_option("--image", view_images, "Face image as path@x,y,w,h[@pose]; repeatable")->required();

    auto* pdel = profile->add_subcommand("delete", "Delete a profile and its views");
    lbp::SubjectId del_subject = 0;
    pdel->add_option("id", del_subject)->required();

    auto* plist = profile->add_subcommand("list", "List profiles as JSON");

    // door
    auto* door_cmd = app.add_subcommand("door", "Operate the door through a running server");
    door_cmd->require_subcommand(1);
    std::string server = "http://127.0.0.1:8080";
    std::string token;
    door_cmd->add_option("--server", server, "Server base URL");
    door_cmd->add_option("--token", token, "Operator token")->envname("ACCESSGUARD_TOKEN");
    door_cmd->add_subcommand("open", "Unlock; the door relocks after the hold time");
    door_cmd->add_subcommand("close", "Lock now");
    door_cmd->add_subcommand("status", "Show the door state");

    // summary
    auto* summary_cmd = app.add_subcommand("summary", "Event report for the period ending at the next local midnight");
    summary_cmd->require_subcommand(1);
    std::string anchor;
    summary_cmd->add_option("--anchor", anchor, "Report end instant (RFC 3339 UTC) instead of the next midnight");
    for (const char* p : {"daily", "weekly", "monthly"})
        summary_cmd->add_subcommand(p, std::string(p) + " report");

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "HTTP API and door timer; also runs cameras unless --no-cameras");
    bool no_cameras = false;
    serve_cmd->add_flag("--no-cameras", no_cameras);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            auto cfg = load_config(common);
            service::Service svc(cfg);
            int failures = 0;
            for (const auto& cam : cfg.cameras) {
                if (!only.empty() && std::find(only.begin(), only.end(), cam.camera.camera_id) == only.end())
                    continue;
                try {
                    auto stats = svc.run_camera(cam, [&](const auto& r) { print_frame(cam.camera, r); });
                    print_stats(cam.camera.camera_id, stats);
                } catch (const Error& e) {
                    std::cerr << cam.camera.camera_id << ": " << e.what() << "\n";
                    ++failures;
                }
            }
            return failures ? 1 : 0;
        }
        if (ingest->parsed()) {
            service::Service svc(load_config(common));
            std::optional<fs::path> det;
            if (!ingest_detections.empty())
                det = ingest_detections;
            const auto* cam = svc.config().camera(ingest_camera);
            auto stats = svc.ingest(ingest_camera, ingest_dir, det, [&](const auto& r) {
                print_frame(cam->camera, r);
            });
            print_stats(ingest_camera, stats);
            return 0;
        }
        if (eval->parsed()) {
            auto cfg = common.config_path.empty() ? gate::GateConfig{} : load_config(common).gate;
            if (mode == "binary")
                cfg.pixel_mode = gate::PixelMode::Binary;
            else if (mode == "adaptive")
                cfg.pixel_mode = gate::PixelMode::AdaptiveGaussian;
            if (global_threshold)
                cfg.global_threshold = *global_threshold;
            if (pixel_threshold)
                cfg.pixel_threshold = *pixel_threshold;
            if (gamma)
                cfg.gamma = *gamma;
            cfg.validate();
            auto ev = gate::evaluate_gate(gate::load_manifest(manifest), cfg);
            std::cout << gate::format_result(ev) << "\n";
            if (!csv_path.empty()) {
                std::ofstream out(csv_path);
                out << gate::format_csv(ev);
                if (!out)
                    throw StoreError("cannot write " + csv_path);
            }
            return 0;
        }
        if (profile->parsed()) {
            auto cfg = load_config(common);
            store::ProfileStore store(cfg.data_dir);
            if (padd->parsed()) {
                info.relationship = store::parse_relationship(relationship);
                report_add(store.add_person(info, parse_images(images), allow_duplicate));
            } else if (pviews->parsed()) {
                report_add(store.add_views(view_subject, parse_images(view_images)));
            } else if (pdel->parsed()) {
                auto n = store.delete_person(del_subject);
                std::cout << "deleted subject " << del_subject << " (" << n << " view(s))\n";
            } else if (plist->parsed()) {
                nlohmann::json out = nlohmann::json::array();
                for (const auto& p : store.persons())
                    out.push_back(store::to_json(p));
                std::cout << out.dump(2) << "\n";
            }
            return 0;
        }
        if (door_cmd->parsed()) {
            auto verb = door_cmd->get_subcommands().front()->get_name();
            if (verb != "status" && token.empty()) {
                std::cerr << "door " << verb << " needs --token or ACCESSGUARD_TOKEN\n";
                return 2;
            }
            return door_request(server, token, verb);
        }
        if (summary_cmd->parsed()) {
            auto cfg = load_config(common);
            store::ProfileStore store(cfg.data_dir);
            auto period = store::parse_period(summary_cmd->get_subcommands().front()->get_name());
            Instant end = anchor.empty() ? store::default_anchor(now_utc(), cfg.utc_offset_minutes)
                                         : parse_rfc3339(anchor);
            std::cout << store::to_json(store.query_summary(period, end)).dump(2) << "\n";
            return 0;
        }
        if (serve_cmd->parsed())
            return serve(common, !no_cameras);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
