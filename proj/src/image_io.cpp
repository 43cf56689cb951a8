#include "slidealign/image_io.hpp"

#include <cmath>
#include <fstream>

namespace sa {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& is) {
    std::string tok;
    while (is >> tok) {
        if (tok[0] != '#') return tok;
        std::string rest;
        std::getline(is, rest);
    }
    fail(ErrKind::io, "unexpected end of image header");
}

void read_header(std::istream& is, const char* magic, int& w, int& h) {
    require(next_token(is) == magic, ErrKind::io, std::string("bad image magic, expected ") + magic);
    w = std::stoi(next_token(is));
    h = std::stoi(next_token(is));
    const int maxval = std::stoi(next_token(is));
    require(w > 0 && h > 0 && maxval == 255, ErrKind::io, "unsupported image header");
    is.get();  // single whitespace before the binary payload
}

}  // namespace

Image8 quantize_image(const Tensor& img) {
    require(img.ndim() == 3 && img.dim(0) == 3, ErrKind::dimension, "image tensor must be 3xHxW");
    const int h = img.dim(1), w = img.dim(2);
    Image8 out(h, w);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img[static_cast<int64_t>(c * plane + static_cast<size_t>(y) * w + x)];
                const double q = std::round(std::min(1.0, std::max(0.0, v)) * 255.0);
                out.at(y, x, c) = static_cast<uint8_t>(q);
            }
    return out;
}

Tensor dequantize_image(const Image8& img) {
    Tensor out({3, img.h, img.w});
    const size_t plane = static_cast<size_t>(img.h) * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                out[static_cast<int64_t>(c * plane + static_cast<size_t>(y) * img.w + x)] =
                    img.at(y, x, c) / 255.0;
    return out;
}

void write_ppm(const std::string& path, const Image8& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrKind::io, "cannot write image: " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    require(os.good(), ErrKind::io, "image write failed: " + path);
}

Image8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrKind::io, "cannot read image: " + path);
    int w = 0, h = 0;
    read_header(is, "P6", w, h);
    Image8 img(h, w);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    require(is.good(), ErrKind::io, "truncated image: " + path);
    return img;
}

void write_pgm(const std::string& path, const Mask& mask) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrKind::io, "cannot write mask: " + path);
    os << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(mask.data.data()),
             static_cast<std::streamsize>(mask.data.size()));
    require(os.good(), ErrKind::io, "mask write failed: " + path);
}

Mask read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrKind::io, "cannot read mask: " + path);
    int w = 0, h = 0;
    read_header(is, "P5", w, h);
    Mask mask(h, w);
    is.read(reinterpret_cast<char*>(mask.data.data()), static_cast<std::streamsize>(mask.data.size()));
    require(is.good(), ErrKind::io, "truncated mask: " + path);
    return mask;
}

}  // namespace sa
