#include "slidealign/synth.hpp"

#include <algorithm>
#include <cmath>

namespace sa {

namespace {

// Value noise in [0, 1]: random lattice, bilinear interpolation with
// smoothstep easing. Cheap, deterministic texture primitive.
Tensor value_noise(int size, int grid, Rng& rng) {
    const int g = grid + 1;
    std::vector<double> lattice(static_cast<size_t>(g) * g);
    for (double& v : lattice) v = rng.uniform();
    auto lat = [&](int y, int x) { return lattice[static_cast<size_t>(y) * g + x]; };
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    Tensor out({size, size});
    for (int y = 0; y < size; ++y) {
        const double fy = static_cast<double>(y) / size * grid;
        const int iy = static_cast<int>(fy);
        const double ty = smooth(fy - iy);
        for (int x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x) / size * grid;
            const int ix = static_cast<int>(fx);
            const double tx = smooth(fx - ix);
            const double top = lat(iy, ix) * (1.0 - tx) + lat(iy, ix + 1) * tx;
            const double bot = lat(iy + 1, ix) * (1.0 - tx) + lat(iy + 1, ix + 1) * tx;
            out[static_cast<int64_t>(y) * size + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const size_t idx = std::min(values.size() - 1, static_cast<size_t>(q * values.size()));
    return values[idx];
}

void bilinear_resample(const Tensor& src, Tensor& dst) {
    const int sh = src.dim(1), sw = src.dim(2);
    const int dh = dst.dim(1), dw = dst.dim(2);
    const size_t splane = static_cast<size_t>(sh) * sw;
    const size_t dplane = static_cast<size_t>(dh) * dw;
    for (int y = 0; y < dh; ++y) {
        const double fy = (y + 0.5) * sh / dh - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, sh - 1);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double ty = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < dw; ++x) {
            const double fx = (x + 0.5) * sw / dw - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, sw - 1);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double tx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double* p = src.data() + c * splane;
                const double top = p[static_cast<size_t>(y0) * sw + x0] * (1 - tx) +
                                   p[static_cast<size_t>(y0) * sw + x1] * tx;
                const double bot = p[static_cast<size_t>(y1) * sw + x0] * (1 - tx) +
                                   p[static_cast<size_t>(y1) * sw + x1] * tx;
                dst.data()[c * dplane + static_cast<size_t>(y) * dw + x] =
                    top * (1 - ty) + bot * ty;
            }
        }
    }
}

void gaussian_blur(Tensor& img, double sigma) {
    const int h = img.dim(1), w = img.dim(2);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (double& v : k) v /= sum;
    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> tmp(plane);
    for (int c = 0; c < 3; ++c) {
        double* p = img.data() + c * plane;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           p[static_cast<size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
                tmp[static_cast<size_t>(y) * w + x] = acc;
            }
        for (int x = 0; x < w; ++x)
            for (int y = 0; y < h; ++y) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
                p[static_cast<size_t>(y) * w + x] = acc;
            }
    }
}

}  // namespace

bool ScannerProfile::is_identity() const {
    static constexpr std::array<double, 9> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return color_matrix == eye && gamma == 1.0 && brightness == 0.0 && blur_sigma == 0.0 &&
           scale == 1.0 && noise_sigma == 0.0;
}

// Two moderately shifted training scanners on opposite sides of the
// reference (warm/dark vs. cool/bright) and two hold-outs that interpolate
// between the reference and a seen scanner, so the hold-out shift lies inside
// the span the multi-domain set covers.
std::vector<ScannerProfile> default_profiles() {
    std::vector<ScannerProfile> p(5);
    p[0].name = "reference";
    p[0].noise_sigma = 0.004;
    p[0].seed = 101;

    p[1].name = "warm_soft";
    p[1].color_matrix = {1.07, 0.04, 0.00, 0.02, 1.00, 0.02, 0.00, 0.02, 0.93};
    p[1].gamma = 1.08;
    p[1].brightness = 0.02;
    p[1].blur_sigma = 0.9;
    p[1].scale = 0.88;
    p[1].noise_sigma = 0.012;
    p[1].seed = 102;

    p[2].name = "cool_fine";
    p[2].color_matrix = {0.94, 0.02, 0.00, 0.00, 1.02, 0.02, 0.02, 0.02, 1.06};
    p[2].gamma = 0.93;
    p[2].brightness = -0.015;
    p[2].blur_sigma = 0.2;
    p[2].scale = 1.08;
    p[2].noise_sigma = 0.018;
    p[2].seed = 103;

    p[3].name = "warm_mild";
    p[3].color_matrix = {1.04, 0.02, 0.00, 0.01, 1.00, 0.01, 0.00, 0.01, 0.96};
    p[3].gamma = 1.05;
    p[3].brightness = 0.01;
    p[3].blur_sigma = 0.55;
    p[3].scale = 0.93;
    p[3].noise_sigma = 0.010;
    p[3].seed = 104;

    p[4].name = "cool_mild";
    p[4].color_matrix = {0.965, 0.01, 0.00, 0.00, 1.01, 0.01, 0.01, 0.01, 1.035};
    p[4].gamma = 0.96;
    p[4].brightness = -0.008;
    p[4].blur_sigma = 0.35;
    p[4].scale = 1.05;
    p[4].noise_sigma = 0.014;
    p[4].seed = 105;
    return p;
}

VirtualSlide generate_slide(uint64_t seed, int size, int slide_id) {
    require(size >= 32, ErrKind::config, "slide size too small");
    VirtualSlide slide;
    slide.id = slide_id;
    slide.seed = seed;
    slide.mask = Mask(size, size);
    slide.image = Tensor({3, size, size});

    Rng layout_rng(derive_seed(seed, "layout"));
    Rng tex_rng(derive_seed(seed, "texture"));

    // Two smooth fields define the region layout; quantile thresholds pin the
    // class area fractions so each class always covers well over 5%.
    Tensor f1 = value_noise(size, 4, layout_rng);
    {
        Tensor f1b = value_noise(size, 8, layout_rng);
        for (int64_t i = 0; i < f1.numel(); ++i) f1[i] += 0.5 * f1b[i];
    }
    Tensor f2 = value_noise(size, 3, layout_rng);
    {
        Tensor f2b = value_noise(size, 6, layout_rng);
        for (int64_t i = 0; i < f2.numel(); ++i) f2[i] += 0.4 * f2b[i];
    }
    const double bg_thr = quantile({f1.values().begin(), f1.values().end()}, 0.30);
    std::vector<double> tissue_f2;
    tissue_f2.reserve(static_cast<size_t>(f2.numel()));
    for (int64_t i = 0; i < f1.numel(); ++i)
        if (f1[i] >= bg_thr) tissue_f2.push_back(f2[i]);
    const double tumor_thr = quantile(std::move(tissue_f2), 0.5);

    // Texture fields: tumor is a dark violet high-frequency texture with
    // nuclei-like speckles, non-tumor a smoother pink, background near-white.
    Tensor hf = value_noise(size, size / 8, tex_rng);
    Tensor speckle = value_noise(size, size / 4, tex_rng);
    Tensor lf = value_noise(size, 5, tex_rng);
    Rng jitter_rng(derive_seed(seed, "jitter"));

    const size_t plane = static_cast<size_t>(size) * size;
    // per-slide stain variation (+-6% per channel), like staining intensity
    // differences between specimens; keeps class cues relative, not absolute
    Rng stain_rng(derive_seed(seed, "stain"));
    double tumor_base[3] = {0.48, 0.27, 0.55};
    double non_tumor_base[3] = {0.86, 0.60, 0.70};
    for (int c = 0; c < 3; ++c) {
        tumor_base[c] *= stain_rng.uniform(0.94, 1.06);
        non_tumor_base[c] *= stain_rng.uniform(0.94, 1.06);
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int64_t i = static_cast<int64_t>(y) * size + x;
            double rgb[3];
            uint8_t cls;
            if (f1[i] < bg_thr) {
                cls = kClassBackground;
                const double g = 0.955 + 0.03 * hf[i];
                for (int c = 0; c < 3; ++c)
                    rgb[c] = g + 0.004 * (jitter_rng.uniform() - 0.5);
            } else if (f2[i] >= tumor_thr) {
                cls = kClassTumor;
                const double mod = 0.72 + 0.45 * hf[i];
                const double dark = speckle[i] > 0.62 ? 0.5 : 1.0;
                for (int c = 0; c < 3; ++c) rgb[c] = tumor_base[c] * mod * dark;
            } else {
                cls = kClassNonTumor;
                const double mod = 0.80 + 0.24 * lf[i];
                for (int c = 0; c < 3; ++c) rgb[c] = non_tumor_base[c] * mod;
            }
            slide.mask.at(y, x) = cls;
            for (int c = 0; c < 3; ++c)
                slide.image[static_cast<int64_t>(c * plane) + i] = std::clamp(rgb[c], 0.0, 1.0);
        }
    }
    return slide;
}

Tensor render_domain(const VirtualSlide& slide, const ScannerProfile& profile) {
    if (profile.is_identity()) return slide.image;
    Tensor img = slide.image;
    const int h = img.dim(1), w = img.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;

    if (profile.scale != 1.0) {
        const int sh = std::max(8, static_cast<int>(std::lround(h * profile.scale)));
        const int sw = std::max(8, static_cast<int>(std::lround(w * profile.scale)));
        Tensor shrunk({3, sh, sw});
        bilinear_resample(img, shrunk);
        Tensor back({3, h, w});
        bilinear_resample(shrunk, back);
        img = std::move(back);
    }
    if (profile.blur_sigma > 0.0) gaussian_blur(img, profile.blur_sigma);

    const auto& m = profile.color_matrix;
    for (size_t i = 0; i < plane; ++i) {
        const double r = img[static_cast<int64_t>(i)];
        const double g = img[static_cast<int64_t>(plane + i)];
        const double b = img[static_cast<int64_t>(2 * plane + i)];
        img[static_cast<int64_t>(i)] = m[0] * r + m[1] * g + m[2] * b;
        img[static_cast<int64_t>(plane + i)] = m[3] * r + m[4] * g + m[5] * b;
        img[static_cast<int64_t>(2 * plane + i)] = m[6] * r + m[7] * g + m[8] * b;
    }
    for (int64_t i = 0; i < img.numel(); ++i) {
        double v = std::max(0.0, img[i]);
        if (profile.gamma != 1.0) v = std::pow(v, profile.gamma);
        img[i] = v + profile.brightness;
    }
    if (profile.noise_sigma > 0.0) {
        Rng noise_rng(derive_seed(profile.seed, "render-noise", slide.seed));
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] += profile.noise_sigma * noise_rng.normal();
    }
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    return img;
}

Mask label_background(const Tensor& image) {
    require(image.ndim() == 3 && image.dim(0) == 3, ErrKind::dimension, "image must be 3xHxW");
    const int h = image.dim(1), w = image.dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    Mask out(h, w);
    for (size_t i = 0; i < plane; ++i) {
        const double gray = (image[static_cast<int64_t>(i)] + image[static_cast<int64_t>(plane + i)] +
                             image[static_cast<int64_t>(2 * plane + i)]) /
                            3.0;
        out.data[i] = gray > kBackgroundGrayThreshold ? 1 : 0;
    }
    return out;
}

std::vector<PatchOrigin> sample_patch_origins(const Mask& mask, const SampleSpec& spec,
                                              uint64_t seed) {
    require(spec.patch >= 1 && spec.patch <= mask.h && spec.patch <= mask.w, ErrKind::dimension,
            "patch does not fit the slide");
    require(spec.per_slide >= 1, ErrKind::config, "per_slide must be >= 1");
    const int n = spec.per_slide;
    int quota[kNumClasses];
    quota[kClassBackground] = static_cast<int>(std::lround(spec.bg_frac * n));
    const int rest = n - quota[kClassBackground];
    quota[kClassTumor] = (rest + 1) / 2;  // tie-break: tumor takes the extra patch
    quota[kClassNonTumor] = rest / 2;

    Rng rng(seed);
    std::vector<PatchOrigin> out;
    out.reserve(static_cast<size_t>(n));
    auto draw = [&]() -> PatchOrigin {
        PatchOrigin o;
        o.x = static_cast<int>(rng.uniform_int(mask.w - spec.patch + 1));
        o.y = static_cast<int>(rng.uniform_int(mask.h - spec.patch + 1));
        int64_t count[kNumClasses] = {0, 0, 0};
        for (int y = o.y; y < o.y + spec.patch; ++y)
            for (int x = o.x; x < o.x + spec.patch; ++x) ++count[mask.at(y, x)];
        o.majority_class = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (count[c] > count[o.majority_class]) o.majority_class = c;
        return o;
    };

    int64_t attempts = 0;
    const int64_t max_attempts = 400LL * n;
    while (static_cast<int>(out.size()) < n && attempts < max_attempts) {
        ++attempts;
        PatchOrigin o = draw();
        if (quota[o.majority_class] > 0) {
            --quota[o.majority_class];
            out.push_back(o);
        }
    }
    // Fallback when a class quota is unreachable (class absent or too
    // scattered): hand the remainder to whatever classes still come up.
    int64_t fallback_attempts = 0;
    while (static_cast<int>(out.size()) < n && fallback_attempts < 100LL * n) {
        ++fallback_attempts;
        out.push_back(draw());
    }
    require(static_cast<int>(out.size()) == n, ErrKind::data, "patch sampling failed to fill quota");
    return out;
}

ZScoreStats compute_zscore_stats(const std::vector<const Image8*>& images,
                                 const std::vector<const Mask*>& masks) {
    require(images.size() == masks.size() && !images.empty(), ErrKind::data,
            "zscore stats need matching image/mask lists");
    double sum[3] = {0, 0, 0};
    int64_t count = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        const Image8& img = *images[i];
        const Mask& mask = *masks[i];
        require(img.h == mask.h && img.w == mask.w, ErrKind::data, "image/mask size mismatch");
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                if (mask.at(y, x) == kClassBackground) continue;
                ++count;
                for (int c = 0; c < 3; ++c) sum[c] += img.at(y, x, c) / 255.0;
            }
    }
    require(count > 0, ErrKind::data, "no tissue pixels for zscore stats");
    ZScoreStats stats;
    for (int c = 0; c < 3; ++c) stats.mean[c] = sum[c] / count;
    // second pass keeps constant channels at exactly ~zero variance
    double sq[3] = {0, 0, 0};
    for (size_t i = 0; i < images.size(); ++i) {
        const Image8& img = *images[i];
        const Mask& mask = *masks[i];
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                if (mask.at(y, x) == kClassBackground) continue;
                for (int c = 0; c < 3; ++c) {
                    const double d = img.at(y, x, c) / 255.0 - stats.mean[c];
                    sq[c] += d * d;
                }
            }
    }
    for (int c = 0; c < 3; ++c) {
        stats.stddev[c] = std::sqrt(sq[c] / count);
        require(stats.stddev[c] > 1e-12, ErrKind::numeric, "degenerate data: zero channel stddev");
    }
    return stats;
}

void zscore_normalize(Tensor& chw, const ZScoreStats& stats) {
    require(chw.ndim() == 3 && chw.dim(0) == 3, ErrKind::dimension, "patch must be 3xHxW");
    const size_t plane = static_cast<size_t>(chw.dim(1)) * chw.dim(2);
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < plane; ++i) {
            double& v = chw[static_cast<int64_t>(c * plane + i)];
            v = (v - stats.mean[c]) / stats.stddev[c];
        }
}

Tensor extract_patch(const Image8& img, int x0, int y0, int patch, const ZScoreStats* stats) {
    require(x0 >= 0 && y0 >= 0 && x0 + patch <= img.w && y0 + patch <= img.h, ErrKind::dimension,
            "patch origin out of bounds");
    Tensor out({3, patch, patch});
    const size_t plane = static_cast<size_t>(patch) * patch;
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
            for (int c = 0; c < 3; ++c)
                out[static_cast<int64_t>(c * plane + static_cast<size_t>(y) * patch + x)] =
                    img.at(y0 + y, x0 + x, c) / 255.0;
    if (stats) zscore_normalize(out, *stats);
    return out;
}

Mask extract_mask_patch(const Mask& mask, int x0, int y0, int patch) {
    require(x0 >= 0 && y0 >= 0 && x0 + patch <= mask.w && y0 + patch <= mask.h, ErrKind::dimension,
            "mask patch origin out of bounds");
    Mask out(patch, patch);
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) out.at(y, x) = mask.at(y0 + y, x0 + x);
    return out;
}

}  // namespace sa
