#pragma once

// Frame-to-frame change gating: gamma correction, absolute differencing,
// per-pixel thresholding (fixed or Gaussian-adaptive), then a global
// threshold on the summed binary mask.

#include <accessguard/error.hpp>
#include <accessguard/image.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace accessguard::gate {

enum class PixelMode { Binary, AdaptiveGaussian };

// Minimum score for a fully changed 32x32 face-sized region.
inline constexpr std::int64_t kConservativeThreshold = 32 * 32 * 255;
inline constexpr std::int64_t kDefaultGlobalThreshold = 100000;

struct GateConfig {
    double gamma = 1.0;
    PixelMode pixel_mode = PixelMode::Binary;
    int pixel_threshold = 25;
    int adaptive_window = 11;
    int adaptive_offset = 5;
    std::int64_t global_threshold = kDefaultGlobalThreshold;

    GateConfig& conservative()
    {
        global_threshold = kConservativeThreshold;
        return *this;
    }

    void validate() const
    {
        if (!(gamma > 0) || !std::isfinite(gamma))
            throw InvalidArgument("gamma must be positive");
        if (pixel_threshold < 0 || pixel_threshold > 255)
            throw InvalidArgument("pixel_threshold must be in [0,255]");
        if (adaptive_window < 3 || adaptive_window % 2 == 0)
            throw InvalidArgument("adaptive_window must be odd and >= 3");
        if (global_threshold < 0)
            throw InvalidArgument("global_threshold must be non-negative");
    }
};

struct ChangeDecision {
    std::int64_t score = 0;
    bool active = false;
    GrayFrame binary_mask;
};

inline GrayFrame gamma_correct(const GrayFrame& frame, double gamma)
{
    if (!(gamma > 0) || !std::isfinite(gamma))
        throw InvalidArgument("gamma must be positive");
    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) {
        double out = std::round(255.0 * std::pow(v / 255.0, gamma));
        lut[v] = static_cast<std::uint8_t>(std::clamp(out, 0.0, 255.0));
    }
    GrayFrame out = frame;
    for (auto& p : out.pixels())
        p = lut[p];
    return out;
}

inline GrayFrame frame_diff(const GrayFrame& a, const GrayFrame& b)
{
    if (!a.same_shape(b))
        throw InvalidArgument("frame_diff: dimension mismatch");
    GrayFrame out(a.width(), a.height());
    auto pa = a.pixels();
    auto pb = b.pixels();
    auto po = out.pixels();
    for (std::size_t i = 0; i < po.size(); ++i)
        po[i] = static_cast<std::uint8_t>(pa[i] > pb[i] ? pa[i] - pb[i] : pb[i] - pa[i]);
    return out;
}

inline GrayFrame binarize(const GrayFrame& diff, int threshold)
{
    if (threshold < 0 || threshold > 255)
        throw InvalidArgument("binarize: threshold must be in [0,255]");
    GrayFrame out(diff.width(), diff.height());
    auto pd = diff.pixels();
    auto po = out.pixels();
    for (std::size_t i = 0; i < po.size(); ++i)
        po[i] = pd[i] > threshold ? 255 : 0;
    return out;
}

namespace detail {

// Normalized 1-D Gaussian; sigma follows the usual ksize-derived rule.
inline std::vector<double> gaussian_kernel(int window)
{
    double sigma = 0.3 * ((window - 1) * 0.5 - 1) + 0.8;
    std::vector<double> k(window);
    double sum = 0;
    int half = window / 2;
    for (int i = 0; i < window; ++i) {
        double d = i - half;
        k[i] = std::exp(-(d * d) / (2 * sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k)
        v /= sum;
    return k;
}

// Mirror without repeating the edge pixel: -1 -> 1, n -> n-2.
inline int reflect101(int i, int n)
{
    if (n == 1)
        return 0;
    while (i < 0 || i >= n) {
        if (i < 0)
            i = -i;
        if (i >= n)
            i = 2 * n - 2 - i;
    }
    return i;
}

} // namespace detail

// Local threshold = Gaussian-weighted window mean (rounded to an integer
// intensity) minus offset; pixel is set when strictly above it.
inline GrayFrame adaptive_binarize(const GrayFrame& diff, int window, int offset)
{
    if (window < 3 || window % 2 == 0)
        throw InvalidArgument("adaptive window must be odd and >= 3");
    if (window > std::min(diff.width(), diff.height()))
        throw InvalidArgument("adaptive window larger than frame");

    const auto kernel = detail::gaussian_kernel(window);
    const int half = window / 2;
    const int w = diff.width();
    const int h = diff.height();

    // Separable pass: horizontal then vertical.
    std::vector<double> horiz(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = 0; k < window; ++k)
                acc += kernel[k] * diff.at(detail::reflect101(x + k - half, w), y);
            horiz[static_cast<std::size_t>(y) * w + x] = acc;
        }

    GrayFrame out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = 0; k < window; ++k)
                acc += kernel[k] * horiz[static_cast<std::size_t>(detail::reflect101(y + k - half, h)) * w + x];
            long mean = std::lround(acc);
            out.at(x, y) = diff.at(x, y) > mean - offset ? 255 : 0;
        }
    return out;
}

inline std::int64_t mask_score(const GrayFrame& mask)
{
    std::int64_t set = 0;
    for (auto p : mask.pixels())
        set += p == 255;
    return set * 255;
}

inline ChangeDecision detect_change(const GrayFrame& prev, const GrayFrame& curr, const GateConfig& cfg)
{
    cfg.validate();
    if (!prev.same_shape(curr))
        throw InvalidArgument("detect_change: dimension mismatch");

    GrayFrame diff = cfg.gamma == 1.0 ? frame_diff(prev, curr)
                                      : frame_diff(gamma_correct(prev, cfg.gamma), gamma_correct(curr, cfg.gamma));
    ChangeDecision d;
    d.binary_mask = cfg.pixel_mode == PixelMode::Binary
                        ? binarize(diff, cfg.pixel_threshold)
                        : adaptive_binarize(diff, cfg.adaptive_window, cfg.adaptive_offset);
    d.score = mask_score(d.binary_mask);
    d.active = d.score >= cfg.global_threshold;
    return d;
}

struct LabeledFrame {
    GrayFrame frame;
    bool active = false;
};

struct GateRow {
    std::size_t index = 0;
    std::int64_t score = 0;
    bool active = false;
    bool label = false;
};

struct GateEvaluation {
    double precision = 1.0;
    double recall = 1.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    std::size_t true_negatives = 0;
    std::vector<GateRow> rows;
};

// Each consecutive pair (i-1, i) predicts the label of frame i. Ratios with an
// empty denominator are reported as 1.0.
inline GateEvaluation evaluate_gate(const std::vector<LabeledFrame>& stream, const GateConfig& cfg)
{
    if (stream.size() < 2)
        throw InvalidArgument("evaluate_gate: stream needs at least two frames");
    GateEvaluation ev;
    for (std::size_t i = 1; i < stream.size(); ++i) {
        auto d = detect_change(stream[i - 1].frame, stream[i].frame, cfg);
        bool label = stream[i].active;
        ev.rows.push_back({i, d.score, d.active, label});
        if (d.active && label)
            ++ev.true_positives;
        else if (d.active)
            ++ev.false_positives;
        else if (label)
            ++ev.false_negatives;
        else
            ++ev.true_negatives;
    }
    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    ev.precision = ratio(ev.true_positives, ev.true_positives + ev.false_positives);
    ev.recall = ratio(ev.true_positives, ev.true_positives + ev.false_negatives);
    return ev;
}

// Manifest: one `frame_path<TAB>label` per line, label 0 or 1. Relative paths
// resolve against the manifest's directory. Blank lines and '#' comments are
// skipped.
inline std::vector<LabeledFrame> load_manifest(const std::filesystem::path& manifest)
{
    std::ifstream in(manifest);
    if (!in)
        throw InvalidArgument("cannot open manifest " + manifest.string());
    std::vector<LabeledFrame> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        auto tab = line.rfind('\t');
        if (tab == std::string::npos)
            throw InvalidArgument("manifest line " + std::to_string(lineno) + ": expected path<TAB>label");
        std::string label = line.substr(tab + 1);
        if (label != "0" && label != "1")
            throw InvalidArgument("manifest line " + std::to_string(lineno) + ": label must be 0 or 1");
        std::filesystem::path p = line.substr(0, tab);
        if (p.is_relative())
            p = manifest.parent_path() / p;
        out.push_back({to_grayscale(netpbm::read(p)), label == "1"});
    }
    return out;
}

inline std::string format_result(const GateEvaluation& ev)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "precision=%.6f recall=%.6f", ev.precision, ev.recall);
    return buf;
}

inline std::string format_csv(const GateEvaluation& ev)
{
    std::string out = "index,score,active,label\n";
    for (const auto& r : ev.rows)
        out += std::to_string(r.index) + "," + std::to_string(r.score) + "," + (r.active ? "1" : "0") + "," +
               (r.label ? "1" : "0") + "\n";
    return out;
}

} // namespace accessguard::gate
