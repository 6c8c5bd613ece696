#pragma once

#include <accessguard/lbp.hpp>

namespace accessguard::testing {

// Reference coder written independently from the production loop: explicit
// (dx, dy) offsets walked clockwise from the top-left neighbour.
inline lbp::CodeMap brute_lbp(const GrayFrame& img)
{
    static constexpr int kOffsets[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}};
    lbp::CodeMap m{img.width() - 2, img.height() - 2, {}};
    for (int y = 1; y + 1 < img.height(); ++y)
        for (int x = 1; x + 1 < img.width(); ++x) {
            int code = 0;
            for (int b = 0; b < 8; ++b)
                if (img.at(x + kOffsets[b][0], y + kOffsets[b][1]) >= img.at(x, y))
                    code += 1 << b;
            m.codes.push_back(static_cast<std::uint8_t>(code));
        }
    return m;
}

} // namespace accessguard::testing
