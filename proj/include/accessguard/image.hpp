#pragma once

#include <accessguard/error.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace accessguard {

// Axis-aligned pixel rectangle; rows [y, y+height), cols [x, x+width).
struct Rect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    int right() const { return x + width; }
    int bottom() const { return y + height; }
    bool empty() const { return width <= 0 || height <= 0; }
    bool inside(int image_width, int image_height) const
    {
        return x >= 0 && y >= 0 && right() <= image_width && bottom() <= image_height;
    }

    friend bool operator==(const Rect&, const Rect&) = default;
};

// Row-major interleaved 8-bit image.
template <int Channels>
class Image {
public:
    static_assert(Channels == 1 || Channels == 3);
    static constexpr int channels = Channels;

    Image() = default;

    Image(int width, int height, std::uint8_t fill = 0)
        : width_(width), height_(height)
    {
        check_dims(width, height);
        pixels_.assign(static_cast<std::size_t>(width) * height * Channels, fill);
    }

    Image(int width, int height, std::vector<std::uint8_t> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels))
    {
        check_dims(width, height);
        if (pixels_.size() != static_cast<std::size_t>(width) * height * Channels)
            throw InvalidArgument("pixel buffer size does not match " + std::to_string(width) + "x" +
                                  std::to_string(height));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return pixels_.empty(); }
    std::size_t size() const { return pixels_.size(); }

    std::uint8_t& at(int x, int y, int c = 0)
    {
        return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const
    {
        return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
    }

    std::span<const std::uint8_t> pixels() const { return pixels_; }
    std::span<std::uint8_t> pixels() { return pixels_; }

    bool same_shape(const Image& other) const
    {
        return width_ == other.width_ && height_ == other.height_;
    }

    Image crop(const Rect& r) const
    {
        if (r.empty() || !r.inside(width_, height_))
            throw InvalidArgument("crop rectangle outside image");
        Image out(r.width, r.height);
        for (int y = 0; y < r.height; ++y) {
            auto src = pixels_.begin() + (static_cast<std::ptrdiff_t>(r.y + y) * width_ + r.x) * Channels;
            std::copy(src, src + static_cast<std::ptrdiff_t>(r.width) * Channels,
                      out.pixels_.begin() + static_cast<std::ptrdiff_t>(y) * r.width * Channels);
        }
        return out;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    static void check_dims(int width, int height)
    {
        if (width <= 0 || height <= 0)
            throw InvalidArgument("image dimensions must be positive");
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

using GrayFrame = Image<1>;
using RgbFrame = Image<3>;
using AnyFrame = std::variant<GrayFrame, RgbFrame>;

// Luma 0.299/0.587/0.114 with round-half-up, done in integers so results are
// bit-exact across platforms.
inline GrayFrame to_grayscale(const RgbFrame& rgb)
{
    GrayFrame out(rgb.width(), rgb.height());
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x) {
            unsigned v = 299u * rgb.at(x, y, 0) + 587u * rgb.at(x, y, 1) + 114u * rgb.at(x, y, 2);
            out.at(x, y) = static_cast<std::uint8_t>((v + 500u) / 1000u);
        }
    return out;
}

inline GrayFrame to_grayscale(const AnyFrame& frame)
{
    if (const auto* g = std::get_if<GrayFrame>(&frame))
        return *g;
    return to_grayscale(std::get<RgbFrame>(frame));
}

// Bilinear resize with half-pixel centers and 11-bit fixed-point weights.
// Weights along each axis sum to exactly 2048, so a uniform intensity offset
// survives resizing unchanged.
inline GrayFrame resize_bilinear(const GrayFrame& src, int width, int height)
{
    if (width <= 0 || height <= 0)
        throw InvalidArgument("resize target must be positive");
    if (src.width() == width && src.height() == height)
        return src;

    constexpr int kBits = 11;
    constexpr int kOne = 1 << kBits;

    struct Tap {
        int i0, i1, w0, w1;
    };
    auto taps = [](int src_len, int dst_len) {
        std::vector<Tap> out(dst_len);
        double scale = static_cast<double>(src_len) / dst_len;
        for (int d = 0; d < dst_len; ++d) {
            double s = (d + 0.5) * scale - 0.5;
            if (s < 0)
                s = 0;
            int i0 = static_cast<int>(s);
            if (i0 > src_len - 1)
                i0 = src_len - 1;
            int i1 = std::min(i0 + 1, src_len - 1);
            int w1 = static_cast<int>((s - i0) * kOne + 0.5);
            if (w1 > kOne)
                w1 = kOne;
            out[d] = {i0, i1, kOne - w1, w1};
        }
        return out;
    };
    auto tx = taps(src.width(), width);
    auto ty = taps(src.height(), height);

    GrayFrame out(width, height);
    constexpr std::int64_t kRound = std::int64_t{1} << (2 * kBits - 1);
    for (int y = 0; y < height; ++y) {
        const Tap& vy = ty[y];
        for (int x = 0; x < width; ++x) {
            const Tap& vx = tx[x];
            std::int64_t acc = std::int64_t{vy.w0} * (vx.w0 * src.at(vx.i0, vy.i0) + vx.w1 * src.at(vx.i1, vy.i0)) +
                               std::int64_t{vy.w1} * (vx.w0 * src.at(vx.i0, vy.i1) + vx.w1 * src.at(vx.i1, vy.i1));
            out.at(x, y) = static_cast<std::uint8_t>((acc + kRound) >> (2 * kBits));
        }
    }
    return out;
}

// Binary netpbm (P5 gray / P6 rgb, maxval 255).
namespace netpbm {

namespace detail {

inline void skip_ws_and_comments(std::istream& in)
{
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

inline int read_header_int(std::istream& in)
{
    skip_ws_and_comments(in);
    int v = -1;
    if (!(in >> v))
        throw InvalidArgument("malformed netpbm header");
    return v;
}

} // namespace detail

inline AnyFrame decode(std::string_view bytes)
{
    std::istringstream in{std::string(bytes)};
    char magic[2] = {};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw InvalidArgument("not a binary PGM/PPM image");
    int w = detail::read_header_int(in);
    int h = detail::read_header_int(in);
    int maxval = detail::read_header_int(in);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw InvalidArgument("unsupported netpbm dimensions or maxval");
    in.get();
    int ch = magic[1] == '5' ? 1 : 3;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * ch);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size()))
        throw InvalidArgument("truncated netpbm pixel data");
    if (ch == 1)
        return GrayFrame(w, h, std::move(px));
    return RgbFrame(w, h, std::move(px));
}

template <int Channels>
std::string encode(const Image<Channels>& img)
{
    std::string out = (Channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) + " " +
                      std::to_string(img.height()) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels().data()), img.pixels().size());
    return out;
}

inline AnyFrame read(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw InvalidArgument("cannot open image " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

template <int Channels>
void write(const std::filesystem::path& path, const Image<Channels>& img)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    auto bytes = encode(img);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw StoreError("cannot write image " + path.string());
}

inline void write(const std::filesystem::path& path, const AnyFrame& img)
{
    std::visit([&](const auto& i) { write(path, i); }, img);
}

inline std::string extension(const AnyFrame& img)
{
    return std::holds_alternative<GrayFrame>(img) ? "pgm" : "ppm";
}

} // namespace netpbm

} // namespace accessguard
