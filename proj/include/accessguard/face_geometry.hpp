#pragma once

// Landmark-driven face geometry: head tilt from the jaw/nose triangle, roll
// from the eye centroids, the frontalization gate, attribute patch cropping and
// capture guidance for profile enrollment.

#include <accessguard/error.hpp>
#include <accessguard/image.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace accessguard::geometry {

struct Point {
    double x = 0;
    double y = 0;

    friend bool operator==(const Point&, const Point&) = default;
};

// 68-point facial landmark layout:
//   0-16 jaw, 17-26 brows, 27-35 nose, 36-41 left eye, 42-47 right eye,
//   48-67 mouth.
class LandmarkSet {
public:
    static constexpr std::size_t kCount = 68;

    LandmarkSet() = default;

    explicit LandmarkSet(const std::array<Point, kCount>& points) : points_(points)
    {
        for (const auto& p : points_)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw InvalidArgument("landmark coordinates must be finite");
    }

    const Point& operator[](std::size_t i) const { return points_[i]; }
    const std::array<Point, kCount>& points() const { return points_; }

    bool inside(int width, int height) const
    {
        for (const auto& p : points_)
            if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height)
                return false;
        return true;
    }

private:
    std::array<Point, kCount> points_{};
};

using FaceBox = Rect;

enum class Tilt { Up, Down, Neutral };

inline std::string_view to_string(Tilt t)
{
    switch (t) {
    case Tilt::Up: return "up";
    case Tilt::Down: return "down";
    case Tilt::Neutral: return "neutral";
    }
    return "neutral";
}

struct OrientationEstimate {
    double alpha_deg = 120;
    double beta_deg = 0;
    Tilt tilt = Tilt::Neutral;
};

struct OrientationConfig {
    double tau_deg = 5;
    double alpha_band_deg = 15;
    double beta_band_deg = 10;
};

// Interior angle of an upright frontal face's jaw/nose triangle.
inline constexpr double kFrontalApexDeg = 120.0;

namespace detail {

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

inline Point centroid(const LandmarkSet& l, std::size_t first, std::size_t last)
{
    Point c;
    for (std::size_t i = first; i <= last; ++i) {
        c.x += l[i].x;
        c.y += l[i].y;
    }
    double n = static_cast<double>(last - first + 1);
    return {c.x / n, c.y / n};
}

} // namespace detail

// Acute angle between two lines given by their slopes, computed from the
// direction vectors (1, m1) and (1, m2). Lines with 1 + m1*m2 == 0 are
// perpendicular and return 90.
inline double line_angle(double m1, double m2)
{
    if (!std::isfinite(m1) || !std::isfinite(m2))
        throw InvalidArgument("line_angle: slopes must be finite");
    double dot = 1.0 + m1 * m2;
    if (dot == 0.0)
        return 90.0;
    double cross = m2 - m1;
    return std::atan2(std::abs(cross), std::abs(dot)) * detail::kRadToDeg;
}

inline Tilt classify_tilt(double alpha_deg, double tau_deg)
{
    if (alpha_deg > kFrontalApexDeg + tau_deg)
        return Tilt::Up;
    if (alpha_deg < kFrontalApexDeg - tau_deg)
        return Tilt::Down;
    return Tilt::Neutral;
}

// Maps an inclination in degrees into (-90, 90]; a line has no direction.
inline double normalize_inclination(double deg)
{
    deg = std::fmod(deg, 180.0);
    if (deg <= -90.0)
        deg += 180.0;
    else if (deg > 90.0)
        deg -= 180.0;
    return deg;
}

// alpha: interior angle at the nose tip (33) of the triangle formed with the
// jaw endpoints (0, 16). beta: inclination of the line through the two eye
// centroids, image coordinates (y down), 0 = horizontal.
inline OrientationEstimate estimate_orientation(const LandmarkSet& l, double tau_deg = 5)
{
    const Point& a = l[0];
    const Point& c = l[33];
    const Point& b = l[16];
    double ux = a.x - c.x, uy = a.y - c.y;
    double vx = b.x - c.x, vy = b.y - c.y;
    double cross = ux * vy - uy * vx;
    double dot = ux * vx + uy * vy;
    double scale = std::hypot(ux, uy) * std::hypot(vx, vy);
    if (scale == 0.0 || std::abs(cross) <= 1e-12 * scale)
        throw DegenerateGeometry("landmarks 0, 33 and 16 are collinear");

    OrientationEstimate est;
    est.alpha_deg = std::atan2(std::abs(cross), dot) * detail::kRadToDeg;

    Point left = detail::centroid(l, 36, 41);
    Point right = detail::centroid(l, 42, 47);
    est.beta_deg = normalize_inclination(std::atan2(right.y - left.y, right.x - left.x) * detail::kRadToDeg);
    est.tilt = classify_tilt(est.alpha_deg, tau_deg);
    return est;
}

inline bool needs_frontalization(const OrientationEstimate& est, double alpha_band_deg, double beta_band_deg)
{
    return std::abs(est.alpha_deg - kFrontalApexDeg) > alpha_band_deg || std::abs(est.beta_deg) > beta_band_deg;
}

inline bool needs_frontalization(const OrientationEstimate& est, const OrientationConfig& cfg)
{
    return needs_frontalization(est, cfg.alpha_band_deg, cfg.beta_band_deg);
}

// ---------------------------------------------------------------------------
// Attribute patches

enum class PatchKind { Eye, Head, Beard, Mustache };

inline std::string_view to_string(PatchKind k)
{
    switch (k) {
    case PatchKind::Eye: return "eye";
    case PatchKind::Head: return "head";
    case PatchKind::Beard: return "beard";
    case PatchKind::Mustache: return "mustache";
    }
    return "?";
}

struct PatchRects {
    Rect eye;
    Rect head;
    Rect beard;
    Rect mustache;

    const Rect& get(PatchKind k) const
    {
        switch (k) {
        case PatchKind::Eye: return eye;
        case PatchKind::Head: return head;
        case PatchKind::Beard: return beard;
        case PatchKind::Mustache: return mustache;
        }
        return eye;
    }
};

template <int Channels>
struct PatchSet {
    PatchRects rects;
    Image<Channels> eye;
    Image<Channels> head;
    Image<Channels> beard;
    Image<Channels> mustache;

    const Image<Channels>& get(PatchKind k) const
    {
        switch (k) {
        case PatchKind::Eye: return eye;
        case PatchKind::Head: return head;
        case PatchKind::Beard: return beard;
        case PatchKind::Mustache: return mustache;
        }
        return eye;
    }
};

inline constexpr int kDefaultHeadLift = 180;

namespace detail {

inline int px(double v) { return static_cast<int>(std::lround(v)); }

inline Rect span_rect(PatchKind kind, int row0, int row1, int col0, int col1)
{
    if (row1 <= row0 || col1 <= col0)
        throw DegenerateLandmarks(std::string(to_string(kind)),
                                  "degenerate landmarks: " + std::string(to_string(kind)) + " patch rows [" +
                                      std::to_string(row0) + "," + std::to_string(row1) + ") cols [" +
                                      std::to_string(col0) + "," + std::to_string(col1) + ") is empty");
    return {col0, row0, col1 - col0, row1 - row0};
}

} // namespace detail

// Patch rectangles as half-open row/col spans:
//   eye      rows [l19.y, l29.y)              cols [l0.x, l16.x)
//   head     rows [max(0, box.y - lift), l24.y) cols [box.x, l16.x)
//   beard    rows [l4.y, l8.y)                cols [l4.x, l12.x)
//   mustache rows [l30.y, l4.y)               cols [l4.x, l12.x)
// Landmark coordinates are rounded to the nearest pixel.
inline PatchRects patch_rects(const LandmarkSet& l, const FaceBox& box, int head_lift = kDefaultHeadLift)
{
    using detail::px;
    int head_top = box.y - head_lift <= 0 ? 0 : box.y - head_lift;
    PatchRects r;
    r.eye = detail::span_rect(PatchKind::Eye, px(l[19].y), px(l[29].y), px(l[0].x), px(l[16].x));
    r.head = detail::span_rect(PatchKind::Head, head_top, px(l[24].y), box.x, px(l[16].x));
    r.beard = detail::span_rect(PatchKind::Beard, px(l[4].y), px(l[8].y), px(l[4].x), px(l[12].x));
    r.mustache = detail::span_rect(PatchKind::Mustache, px(l[30].y), px(l[4].y), px(l[4].x), px(l[12].x));
    return r;
}

template <int Channels>
PatchSet<Channels> crop_patches(const Image<Channels>& image, const LandmarkSet& l, const FaceBox& box,
                                int head_lift = kDefaultHeadLift)
{
    if (box.empty())
        throw InvalidArgument("face box must have positive area");
    if (!box.inside(image.width(), image.height()) || !l.inside(image.width(), image.height()))
        throw InvalidArgument("face box or landmarks outside the image");
    PatchSet<Channels> ps;
    ps.rects = patch_rects(l, box, head_lift);
    ps.eye = image.crop(ps.rects.eye);
    ps.head = image.crop(ps.rects.head);
    ps.beard = image.crop(ps.rects.beard);
    ps.mustache = image.crop(ps.rects.mustache);
    return ps;
}

enum class SizeBand { Reject, Small, Medium, Large };

inline std::string_view to_string(SizeBand b)
{
    switch (b) {
    case SizeBand::Reject: return "reject";
    case SizeBand::Small: return "small";
    case SizeBand::Medium: return "medium";
    case SizeBand::Large: return "large";
    }
    return "?";
}

// Classified by the shorter side: <20 reject, [20,32) small, [32,64) medium,
// >=64 large.
inline SizeBand patch_size_band(const Rect& r)
{
    int side = std::min(r.width, r.height);
    if (side < 20)
        return SizeBand::Reject;
    if (side < 32)
        return SizeBand::Small;
    if (side < 64)
        return SizeBand::Medium;
    return SizeBand::Large;
}

// ---------------------------------------------------------------------------
// Capture guidance

enum class CaptureGuidance {
    TooSmallComeCloser,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    LeftEdge,
    TopEdge,
    RightEdge,
    BottomEdge,
    Center,
};

inline constexpr std::array kAllGuidance = {
    CaptureGuidance::TooSmallComeCloser, CaptureGuidance::TopLeft,    CaptureGuidance::TopRight,
    CaptureGuidance::BottomLeft,         CaptureGuidance::BottomRight, CaptureGuidance::LeftEdge,
    CaptureGuidance::TopEdge,            CaptureGuidance::RightEdge,   CaptureGuidance::BottomEdge,
    CaptureGuidance::Center,
};

inline std::string_view to_string(CaptureGuidance g)
{
    switch (g) {
    case CaptureGuidance::TooSmallComeCloser: return "TooSmallComeCloser";
    case CaptureGuidance::TopLeft: return "TopLeft";
    case CaptureGuidance::TopRight: return "TopRight";
    case CaptureGuidance::BottomLeft: return "BottomLeft";
    case CaptureGuidance::BottomRight: return "BottomRight";
    case CaptureGuidance::LeftEdge: return "LeftEdge";
    case CaptureGuidance::TopEdge: return "TopEdge";
    case CaptureGuidance::RightEdge: return "RightEdge";
    case CaptureGuidance::BottomEdge: return "BottomEdge";
    case CaptureGuidance::Center: return "Center";
    }
    return "Center";
}

// User-facing feedback phrase.
inline std::string_view message(CaptureGuidance g)
{
    switch (g) {
    case CaptureGuidance::TooSmallComeCloser: return "Face is small. come closer";
    case CaptureGuidance::TopLeft: return "Face in top left";
    case CaptureGuidance::TopRight: return "Face in top right";
    case CaptureGuidance::BottomLeft: return "Face in bottom left";
    case CaptureGuidance::BottomRight: return "Face in bottom right";
    case CaptureGuidance::LeftEdge: return "Face in left edge";
    case CaptureGuidance::TopEdge: return "Face in top edge";
    case CaptureGuidance::RightEdge: return "Face in right edge";
    case CaptureGuidance::BottomEdge: return "Face in bottom edge";
    case CaptureGuidance::Center: return "Face in center";
    }
    return "Face in center";
}

// Corner probes around the face box with integer halving. Note x2 = x1 + 3w/2
// reduces to about x + w while x4 = x + 3w/2; both are kept as written. The
// first matching rule wins.
inline CaptureGuidance guide_capture(int frame_width, int frame_height, const FaceBox& box)
{
    if (frame_width <= 0 || frame_height <= 0)
        throw InvalidArgument("frame dimensions must be positive");
    const long x = box.x, y = box.y, width = box.width, height = box.height;
    const long w = frame_width, h = frame_height;

    const long x1 = x - width / 2;
    const long y1 = y - height / 2;
    const long x2 = x1 + 3 * width / 2;
    const long y2 = y - height / 2;
    const long x3 = x - width / 2;
    const long y3 = y + 3 * height / 2;
    const long x4 = x + 3 * width / 2;
    const long y4 = y + 3 * height / 2;

    if (width * height <= 1024)
        return CaptureGuidance::TooSmallComeCloser;
    if (x1 <= 0 && y1 <= 0)
        return CaptureGuidance::TopLeft;
    if (x2 >= w && y2 <= 0)
        return CaptureGuidance::TopRight;
    if (x3 <= 0 && y3 >= h)
        return CaptureGuidance::BottomLeft;
    if (x4 >= w && y4 >= h)
        return CaptureGuidance::BottomRight;
    if (x1 <= 0)
        return CaptureGuidance::LeftEdge;
    if (y1 <= 0)
        return CaptureGuidance::TopEdge;
    if (x2 >= w)
        return CaptureGuidance::RightEdge;
    if (y4 >= h)
        return CaptureGuidance::BottomEdge;
    return CaptureGuidance::Center;
}

} // namespace accessguard::geometry
