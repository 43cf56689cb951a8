#include "slidealign/tiling.hpp"

namespace sa {

namespace {

std::vector<int> axis_origins(int size, int patch, int stride) {
    std::vector<int> origins;
    for (int o = 0; o + patch <= size; o += stride) origins.push_back(o);
    // clamp a final window to the border when the regular grid falls short
    if (origins.back() + patch < size) origins.push_back(size - patch);
    return origins;
}

// Kept-region boundaries along one axis: midpoints of consecutive window
// overlaps, extended to the image border at both ends. For the regular grid
// this is exactly the central (patch - overlap) crop.
std::vector<int> axis_bounds(const std::vector<int>& origins, int size, int patch) {
    std::vector<int> b(origins.size() + 1);
    b[0] = 0;
    for (size_t i = 1; i < origins.size(); ++i) b[i] = (origins[i] + origins[i - 1] + patch) / 2;
    b[origins.size()] = size;
    return b;
}

}  // namespace

WindowGrid plan_windows(int h, int w, int patch, int overlap) {
    require(patch >= 1 && patch <= h && patch <= w, ErrKind::dimension,
            "patch must fit inside the image");
    require(overlap >= 0 && overlap < patch, ErrKind::dimension, "overlap must be < patch");
    WindowGrid grid;
    grid.h = h;
    grid.w = w;
    grid.patch = patch;
    grid.overlap = overlap;
    const int stride = patch - overlap;
    const auto ys = axis_origins(h, patch, stride);
    const auto xs = axis_origins(w, patch, stride);
    const auto yb = axis_bounds(ys, h, patch);
    const auto xb = axis_bounds(xs, w, patch);
    grid.windows.reserve(ys.size() * xs.size());
    for (size_t iy = 0; iy < ys.size(); ++iy) {
        for (size_t ix = 0; ix < xs.size(); ++ix) {
            Window win;
            win.y0 = ys[iy];
            win.x0 = xs[ix];
            win.ky0 = yb[iy];
            win.ky1 = yb[iy + 1];
            win.kx0 = xb[ix];
            win.kx1 = xb[ix + 1];
            grid.windows.push_back(win);
        }
    }
    return grid;
}

Mask stitch(const WindowGrid& grid, std::span<const Tensor> window_logits) {
    require(window_logits.size() == grid.windows.size(), ErrKind::contract,
            "stitch needs one logits block per window");
    Mask out(grid.h, grid.w);
    for (size_t wi = 0; wi < grid.windows.size(); ++wi) {
        const Window& win = grid.windows[wi];
        const Tensor& logits = window_logits[wi];
        require(logits.ndim() == 3 && logits.dim(1) == grid.patch && logits.dim(2) == grid.patch,
                ErrKind::dimension, "window logits must be C x patch x patch");
        const int classes = logits.dim(0);
        const size_t plane = static_cast<size_t>(grid.patch) * grid.patch;
        for (int y = win.ky0; y < win.ky1; ++y) {
            for (int x = win.kx0; x < win.kx1; ++x) {
                const size_t p = static_cast<size_t>(y - win.y0) * grid.patch + (x - win.x0);
                int best = 0;
                double best_v = logits[static_cast<int64_t>(p)];
                for (int c = 1; c < classes; ++c) {
                    const double v = logits[static_cast<int64_t>(c * plane + p)];
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                out.at(y, x) = static_cast<uint8_t>(best);
            }
        }
    }
    return out;
}

}  // namespace sa
