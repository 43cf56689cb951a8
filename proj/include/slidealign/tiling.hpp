#pragma once

#include <span>
#include <vector>

#include "slidealign/mask.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

// One moving window: origin of the patch plus the half-open kept rectangle
// (absolute image coordinates) whose pixels this window alone writes.
struct Window {
    int x0 = 0, y0 = 0;      // patch origin
    int kx0 = 0, ky0 = 0;    // kept region, inclusive start
    int kx1 = 0, ky1 = 0;    // kept region, exclusive end
};

struct WindowGrid {
    int h = 0, w = 0;
    int patch = 0;
    int overlap = 0;
    std::vector<Window> windows;  // row-major over (y, x) grid positions
};

// Overlapping window plan with center-crop stitching: stride = patch -
// overlap, the final origin is clamped to the image border, interior kept
// regions are the central (patch - overlap) square and edge kept regions
// extend to the border. Kept regions partition the image exactly.
WindowGrid plan_windows(int h, int w, int patch = 256, int overlap = 128);

// Argmax of each window's logits written into its kept region. One logits
// tensor (C x patch x patch) per window, in grid order. Argmax ties resolve
// to the lowest class id.
Mask stitch(const WindowGrid& grid, std::span<const Tensor> window_logits);

}  // namespace sa
