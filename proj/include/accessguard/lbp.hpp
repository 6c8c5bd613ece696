#pragma once

// Local binary pattern face recognizer: radius-1, 8-neighbour codes, per-cell
// code histograms over a spatial grid, chi-square nearest neighbour matching,
// and an Unknown verdict past a distance threshold.

#include <accessguard/error.hpp>
#include <accessguard/image.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace accessguard::lbp {

using SubjectId = std::int64_t;
using ViewId = std::int64_t;

inline constexpr int kBins = 256;

// Neighbour order (bit 0..7): top-left, top, top-right, right, bottom-right,
// bottom, bottom-left, left. A bit is set when neighbour >= centre.
// `n` is the 3x3 neighbourhood in row-major order.
inline std::uint8_t lbp_code(const std::array<std::uint8_t, 9>& n)
{
    static constexpr std::array<int, 8> kOrder = {0, 1, 2, 5, 8, 7, 6, 3};
    const std::uint8_t centre = n[4];
    unsigned code = 0;
    for (int bit = 0; bit < 8; ++bit)
        if (n[kOrder[bit]] >= centre)
            code |= 1u << bit;
    return static_cast<std::uint8_t>(code);
}

struct CodeMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> codes;

    std::uint8_t at(int x, int y) const { return codes[static_cast<std::size_t>(y) * width + x]; }
    friend bool operator==(const CodeMap&, const CodeMap&) = default;
};

inline CodeMap lbp_image(const GrayFrame& face)
{
    if (face.width() < 3 || face.height() < 3)
        throw InvalidArgument("lbp_image: face must be at least 3x3");
    CodeMap m{face.width() - 2, face.height() - 2, {}};
    m.codes.resize(static_cast<std::size_t>(m.width) * m.height);
    for (int y = 1; y < face.height() - 1; ++y) {
        for (int x = 1; x < face.width() - 1; ++x) {
            const std::uint8_t c = face.at(x, y);
            unsigned code = 0;
            code |= (face.at(x - 1, y - 1) >= c) << 0;
            code |= (face.at(x, y - 1) >= c) << 1;
            code |= (face.at(x + 1, y - 1) >= c) << 2;
            code |= (face.at(x + 1, y) >= c) << 3;
            code |= (face.at(x + 1, y + 1) >= c) << 4;
            code |= (face.at(x, y + 1) >= c) << 5;
            code |= (face.at(x - 1, y + 1) >= c) << 6;
            code |= (face.at(x - 1, y) >= c) << 7;
            m.codes[static_cast<std::size_t>(y - 1) * m.width + (x - 1)] = static_cast<std::uint8_t>(code);
        }
    }
    return m;
}

struct LbpConfig {
    int grid_x = 8;
    int grid_y = 8;
    bool normalize_cells = true;
    // Faces are resampled to canonical_size x canonical_size before coding.
    int canonical_size = 96;
    // When unset, derived at train time as threshold_factor times the largest
    // intra-subject template distance, or fallback_threshold if no subject has
    // two views.
    std::optional<double> unknown_threshold;
    double threshold_factor = 1.5;
    double fallback_threshold = 40.0;

    void validate() const
    {
        if (grid_x < 1 || grid_y < 1)
            throw InvalidArgument("LBP grid must be at least 1x1");
        if (canonical_size < 3 || grid_x > canonical_size - 2 || grid_y > canonical_size - 2)
            throw InvalidArgument("LBP grid larger than the canonical code map");
        if (unknown_threshold && !(*unknown_threshold > 0))
            throw InvalidArgument("unknown_threshold must be positive");
        if (!(threshold_factor > 0) || !(fallback_threshold > 0))
            throw InvalidArgument("threshold_factor and fallback_threshold must be positive");
    }
};

// Cells partition the code map row-major; the last row/column of cells absorbs
// the remainder pixels.
inline std::vector<double> grid_histogram(const CodeMap& codes, const LbpConfig& cfg)
{
    if (cfg.grid_x < 1 || cfg.grid_y < 1)
        throw InvalidArgument("grid_histogram: grid must be at least 1x1");
    if (cfg.grid_x > codes.width || cfg.grid_y > codes.height)
        throw InvalidArgument("grid_histogram: grid larger than code map");

    const int cell_w = codes.width / cfg.grid_x;
    const int cell_h = codes.height / cfg.grid_y;
    std::vector<double> hist(static_cast<std::size_t>(cfg.grid_x) * cfg.grid_y * kBins, 0.0);
    for (int gy = 0; gy < cfg.grid_y; ++gy) {
        const int y0 = gy * cell_h;
        const int y1 = gy == cfg.grid_y - 1 ? codes.height : y0 + cell_h;
        for (int gx = 0; gx < cfg.grid_x; ++gx) {
            const int x0 = gx * cell_w;
            const int x1 = gx == cfg.grid_x - 1 ? codes.width : x0 + cell_w;
            double* cell = hist.data() + (static_cast<std::size_t>(gy) * cfg.grid_x + gx) * kBins;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    cell[codes.at(x, y)] += 1.0;
            if (cfg.normalize_cells) {
                const double n = static_cast<double>(x1 - x0) * (y1 - y0);
                for (int b = 0; b < kBins; ++b)
                    cell[b] /= n;
            }
        }
    }
    return hist;
}

// Sum over bins with h1 + h2 > 0 of (h1 - h2)^2 / (h1 + h2).
inline double chi_square(std::span<const double> h1, std::span<const double> h2)
{
    if (h1.size() != h2.size())
        throw InvalidArgument("chi_square: histogram length mismatch");
    double d = 0;
    for (std::size_t i = 0; i < h1.size(); ++i) {
        const double s = h1[i] + h2[i];
        if (s > 0) {
            const double diff = h1[i] - h2[i];
            d += diff * diff / s;
        }
    }
    return d;
}

inline std::vector<double> face_features(const GrayFrame& face, const LbpConfig& cfg)
{
    if (face.width() < 3 || face.height() < 3)
        throw InvalidArgument("face must be at least 3x3");
    return grid_histogram(lbp_image(resize_bilinear(face, cfg.canonical_size, cfg.canonical_size)), cfg);
}

struct FaceTemplate {
    SubjectId subject_id = 0;
    ViewId view_id = 0;
    std::vector<double> features;

    friend bool operator==(const FaceTemplate&, const FaceTemplate&) = default;
};

struct EnrollmentView {
    ViewId view_id = 0;
    GrayFrame face;
};

using Enrollment = std::map<SubjectId, std::vector<EnrollmentView>>;

struct RecognitionResult {
    std::optional<SubjectId> subject;  // empty = Unknown
    double best_distance = 0;
    // Best distance among templates of any other subject.
    std::optional<double> runner_up_distance;

    bool known() const { return subject.has_value(); }
};

struct LbpModel {
    LbpConfig cfg;
    double unknown_threshold = 0;
    std::vector<FaceTemplate> templates;  // sorted by (subject_id, view_id)

    bool empty() const { return templates.empty(); }
};

inline LbpModel train(const Enrollment& enrollment, const LbpConfig& cfg = {})
{
    cfg.validate();
    std::size_t total = 0;
    for (const auto& [_, views] : enrollment)
        total += views.size();
    if (total == 0)
        throw InvalidArgument("train: enrollment has no images");

    LbpModel model;
    model.cfg = cfg;
    model.templates.reserve(total);
    for (const auto& [subject, views] : enrollment) {
        for (const auto& v : views) {
            const GrayFrame& f = v.face;
            if (f.width() < 3 || f.height() < 3 || f.width() < cfg.grid_x + 2 || f.height() < cfg.grid_y + 2)
                throw InvalidArgument("train: image for subject " + std::to_string(subject) + " view " +
                                      std::to_string(v.view_id) + " is too small (" + std::to_string(f.width()) +
                                      "x" + std::to_string(f.height()) + ")");
            model.templates.push_back({subject, v.view_id, face_features(f, cfg)});
        }
    }
    std::stable_sort(model.templates.begin(), model.templates.end(), [](const auto& a, const auto& b) {
        return std::tie(a.subject_id, a.view_id) < std::tie(b.subject_id, b.view_id);
    });

    if (cfg.unknown_threshold) {
        model.unknown_threshold = *cfg.unknown_threshold;
    } else {
        double max_intra = -1;
        for (std::size_t i = 0; i < model.templates.size(); ++i)
            for (std::size_t j = i + 1; j < model.templates.size(); ++j) {
                if (model.templates[i].subject_id != model.templates[j].subject_id)
                    break;
                max_intra = std::max(max_intra,
                                     chi_square(model.templates[i].features, model.templates[j].features));
            }
        model.unknown_threshold = max_intra > 0 ? cfg.threshold_factor * max_intra : cfg.fallback_threshold;
    }
    return model;
}

// Ties resolve to the lowest (subject_id, view_id).
inline RecognitionResult predict(const GrayFrame& face, const LbpModel& model)
{
    if (model.empty())
        throw InvalidState("predict: model has no templates");
    const auto query = face_features(face, model.cfg);

    const FaceTemplate* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    std::vector<double> dist(model.templates.size());
    for (std::size_t i = 0; i < model.templates.size(); ++i) {
        dist[i] = chi_square(query, model.templates[i].features);
        if (dist[i] < best_d) {
            best_d = dist[i];
            best = &model.templates[i];
        }
    }

    RecognitionResult r;
    r.best_distance = best_d;
    for (std::size_t i = 0; i < model.templates.size(); ++i)
        if (model.templates[i].subject_id != best->subject_id &&
            (!r.runner_up_distance || dist[i] < *r.runner_up_distance))
            r.runner_up_distance = dist[i];
    if (best_d <= model.unknown_threshold)
        r.subject = best->subject_id;
    return r;
}

// Backend-neutral recognizer. Alternative backends (embedding networks etc.)
// implement the same two calls.
class FaceRecognizer {
public:
    virtual ~FaceRecognizer() = default;
    virtual void train(const Enrollment& enrollment) = 0;
    virtual RecognitionResult predict(const GrayFrame& face) const = 0;
    virtual bool trained() const = 0;
    // Drops every template of one subject without retraining the rest.
    virtual void forget(SubjectId subject) = 0;
};

inline LbpModel without_subject(LbpModel m, SubjectId subject)
{
    std::erase_if(m.templates, [subject](const FaceTemplate& t) { return t.subject_id == subject; });
    return m;
}

class LbpRecognizer : public FaceRecognizer {
public:
    explicit LbpRecognizer(LbpConfig cfg = {}) : cfg_(std::move(cfg)) {}

    void train(const Enrollment& enrollment) override
    {
        std::size_t total = 0;
        for (const auto& [_, v] : enrollment)
            total += v.size();
        auto next = total == 0 ? std::make_shared<const LbpModel>(LbpModel{cfg_, 0, {}})
                               : std::make_shared<const LbpModel>(lbp::train(enrollment, cfg_));
        std::lock_guard lock(mu_);
        model_ = std::move(next);
    }

    RecognitionResult predict(const GrayFrame& face) const override
    {
        auto m = model();
        if (!m)
            throw InvalidState("recognizer has not been trained");
        return lbp::predict(face, *m);
    }

    bool trained() const override
    {
        auto m = model();
        return m && !m->empty();
    }

    void forget(SubjectId subject) override
    {
        std::lock_guard lock(mu_);
        if (model_)
            model_ = std::make_shared<const LbpModel>(without_subject(*model_, subject));
    }

    std::shared_ptr<const LbpModel> model() const
    {
        std::lock_guard lock(mu_);
        return model_;
    }

    void set_model(LbpModel m)
    {
        auto next = std::make_shared<const LbpModel>(std::move(m));
        std::lock_guard lock(mu_);
        model_ = std::move(next);
    }

private:
    LbpConfig cfg_;
    mutable std::mutex mu_;
    std::shared_ptr<const LbpModel> model_;
};

// ---------------------------------------------------------------------------
// Model container. Text, versioned, hex-float values so a load/save cycle is
// byte-identical. Feature vectors are written sparsely as index:value pairs.

namespace detail {

inline std::string hexfloat(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_double(const std::string& s)
{
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw InvalidArgument("model: bad number '" + s + "'");
    return v;
}

} // namespace detail

inline constexpr std::string_view kModelMagic = "accessguard-lbp-model";
inline constexpr int kModelVersion = 1;

inline std::string serialize(const LbpModel& m)
{
    std::ostringstream out;
    const auto& c = m.cfg;
    out << kModelMagic << ' ' << kModelVersion << '\n';
    out << "radius 1 neighbors 8 grid " << c.grid_x << ' ' << c.grid_y << " normalize " << (c.normalize_cells ? 1 : 0)
        << " canonical " << c.canonical_size << '\n';
    out << "threshold_rule " << (c.unknown_threshold ? detail::hexfloat(*c.unknown_threshold) : "derived") << ' '
        << detail::hexfloat(c.threshold_factor) << ' ' << detail::hexfloat(c.fallback_threshold) << '\n';
    out << "unknown_threshold " << detail::hexfloat(m.unknown_threshold) << '\n';
    out << "templates " << m.templates.size() << '\n';
    for (const auto& t : m.templates) {
        std::size_t nnz = 0;
        for (double v : t.features)
            nnz += v != 0.0;
        out << t.subject_id << ' ' << t.view_id << ' ' << t.features.size() << ' ' << nnz;
        for (std::size_t i = 0; i < t.features.size(); ++i)
            if (t.features[i] != 0.0)
                out << ' ' << i << ':' << detail::hexfloat(t.features[i]);
        out << '\n';
    }
    return out.str();
}

inline LbpModel deserialize(const std::string& text)
{
    std::istringstream in(text);
    auto expect = [&](std::string_view word) {
        std::string w;
        if (!(in >> w) || w != word)
            throw InvalidArgument("model: expected '" + std::string(word) + "'");
    };
    auto read_int = [&]() {
        long long v;
        if (!(in >> v))
            throw InvalidArgument("model: expected integer");
        return v;
    };
    auto read_word = [&]() {
        std::string w;
        if (!(in >> w))
            throw InvalidArgument("model: unexpected end of input");
        return w;
    };

    expect(kModelMagic);
    if (read_int() != kModelVersion)
        throw InvalidArgument("model: unsupported version");
    LbpModel m;
    expect("radius");
    if (read_int() != 1)
        throw InvalidArgument("model: only radius 1 is supported");
    expect("neighbors");
    if (read_int() != 8)
        throw InvalidArgument("model: only 8 neighbours are supported");
    expect("grid");
    m.cfg.grid_x = static_cast<int>(read_int());
    m.cfg.grid_y = static_cast<int>(read_int());
    expect("normalize");
    m.cfg.normalize_cells = read_int() != 0;
    expect("canonical");
    m.cfg.canonical_size = static_cast<int>(read_int());
    expect("threshold_rule");
    auto rule = read_word();
    if (rule != "derived")
        m.cfg.unknown_threshold = detail::parse_double(rule);
    m.cfg.threshold_factor = detail::parse_double(read_word());
    m.cfg.fallback_threshold = detail::parse_double(read_word());
    m.cfg.validate();
    expect("unknown_threshold");
    m.unknown_threshold = detail::parse_double(read_word());
    expect("templates");
    auto n = read_int();
    const std::size_t dims = static_cast<std::size_t>(m.cfg.grid_x) * m.cfg.grid_y * kBins;
    for (long long i = 0; i < n; ++i) {
        FaceTemplate t;
        t.subject_id = read_int();
        t.view_id = read_int();
        auto len = static_cast<std::size_t>(read_int());
        if (len != dims)
            throw InvalidArgument("model: template length does not match grid");
        t.features.assign(len, 0.0);
        auto nnz = read_int();
        for (long long k = 0; k < nnz; ++k) {
            auto entry = read_word();
            auto colon = entry.find(':');
            if (colon == std::string::npos)
                throw InvalidArgument("model: malformed feature entry");
            auto idx = std::stoull(entry.substr(0, colon));
            if (idx >= len)
                throw InvalidArgument("model: feature index out of range");
            t.features[idx] = detail::parse_double(entry.substr(colon + 1));
        }
        m.templates.push_back(std::move(t));
    }
    return m;
}

} // namespace accessguard::lbp
