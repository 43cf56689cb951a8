#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidealign/mask.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

// 8-bit interleaved RGB image, the on-disk and in-memory form of rendered
// slides. Model inputs are produced per patch by dividing by 255.
struct Image8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> rgb;  // h * w * 3, row-major, interleaved

    Image8() = default;
    Image8(int height, int width) : h(height), w(width), rgb(static_cast<size_t>(height) * width * 3, 0) {}

    uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

// Round-to-nearest quantization of a 3 x H x W tensor in [0, 1].
Image8 quantize_image(const Tensor& img);

// 3 x H x W tensor in [0, 1] (values v / 255).
Tensor dequantize_image(const Image8& img);

void write_ppm(const std::string& path, const Image8& img);
Image8 read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Mask& mask);
Mask read_pgm(const std::string& path);

}  // namespace sa
