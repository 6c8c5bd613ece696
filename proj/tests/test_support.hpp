#pragma once

#include <accessguard/image.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace accessguard::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "ag")
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

inline GrayFrame random_frame(std::mt19937& rng, int w, int h, int lo = 0, int hi = 255)
{
    std::uniform_int_distribution<int> d(lo, hi);
    GrayFrame f(w, h);
    for (auto& p : f.pixels())
        p = static_cast<std::uint8_t>(d(rng));
    return f;
}

// Sets `count` pixels (row-major from the top-left) to `value`.
inline GrayFrame with_pixels_set(GrayFrame f, int count, std::uint8_t value = 255)
{
    auto px = f.pixels();
    for (int i = 0; i < count; ++i)
        px[i] = value;
    return f;
}

inline GrayFrame fill_rect(GrayFrame f, Rect r, std::uint8_t value)
{
    for (int y = r.y; y < r.bottom(); ++y)
        for (int x = r.x; x < r.right(); ++x)
            f.at(x, y) = value;
    return f;
}

} // namespace accessguard::testing
