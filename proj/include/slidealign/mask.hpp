#pragma once

#include <cstdint>
#include <vector>

#include "slidealign/error.hpp"

namespace sa {

// Dense H x W class-id image. Class ids are small (0 background, 1 tumor,
// 2 non-tumor); 255 is the conventional ignore label.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int height, int width, uint8_t fill = 0)
        : h(height), w(width), data(static_cast<size_t>(height) * width, fill) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return data.size(); }

    bool same_size(const Mask& o) const { return h == o.h && w == o.w; }
    bool operator==(const Mask& o) const = default;
};

constexpr int kIgnoreLabel = 255;

}  // namespace sa
