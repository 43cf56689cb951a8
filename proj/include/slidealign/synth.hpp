#pragma once

#include <array>
#include <string>
#include <vector>

#include "slidealign/image_io.hpp"
#include "slidealign/mask.hpp"
#include "slidealign/rng.hpp"
#include "slidealign/tensor.hpp"

namespace sa {

constexpr int kClassBackground = 0;
constexpr int kClassTumor = 1;
constexpr int kClassNonTumor = 2;
constexpr int kNumClasses = 3;

// Strictly-above threshold of the background labeling rule, on the [0, 1]
// scale of 8-bit grayscale value 235.
constexpr double kBackgroundGrayThreshold = 235.0 / 255.0;

// Synthetic stand-in for one specimen: a base rendering plus the per-pixel
// class mask shared verbatim by every domain rendering of the slide.
struct VirtualSlide {
    int id = 0;
    uint64_t seed = 0;
    Tensor image;  // 3 x H x W in [0, 1]
    Mask mask;
};

// Parametric nuisance transform simulating one scanner. Applied in the fixed
// order scale -> blur -> color -> gamma -> brightness -> noise; output is
// clipped to [0, 1] and keeps the slide dimensions, so the mask stays valid.
struct ScannerProfile {
    std::string name;
    std::array<double, 9> color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    double gamma = 1.0;
    double brightness = 0.0;
    double blur_sigma = 0.0;
    double scale = 1.0;
    double noise_sigma = 0.0;
    uint64_t seed = 0;

    bool is_identity() const;
};

// The built-in five-domain set: an identity-like reference, two moderately
// shifted "seen" scanners and two more strongly shifted hold-outs.
std::vector<ScannerProfile> default_profiles();

VirtualSlide generate_slide(uint64_t seed, int size, int slide_id = 0);

Tensor render_domain(const VirtualSlide& slide, const ScannerProfile& profile);

// 1 where the pixel is background by the grayscale rule: channel mean
// strictly above 235/255.
Mask label_background(const Tensor& image);

struct PatchOrigin {
    int x = 0;
    int y = 0;
    int majority_class = 0;
};

struct SampleSpec {
    int per_slide = 50;
    double bg_frac = 0.10;
    int patch = 64;
};

// Guided patch sampling on one slide: round(bg_frac * n) background-majority
// patches, the remainder split between tumor and non-tumor majority (tumor
// takes the odd one). Patch class = majority pixel class of the mask crop.
// If a quota cannot be filled the remainder falls back to unconstrained
// draws. Deterministic in `seed`.
std::vector<PatchOrigin> sample_patch_origins(const Mask& mask, const SampleSpec& spec,
                                              uint64_t seed);

struct ZScoreStats {
    std::array<double, 3> mean = {0, 0, 0};
    std::array<double, 3> stddev = {1, 1, 1};
};

// Per-channel mean/std over tissue (non-background mask) pixels of the given
// images; the caller passes reference-domain renderings of the training
// slides only, and the same stats normalize every domain.
ZScoreStats compute_zscore_stats(const std::vector<const Image8*>& images,
                                 const std::vector<const Mask*>& masks);

void zscore_normalize(Tensor& chw, const ZScoreStats& stats);

// 3 x P x P crop as doubles in [0, 1], optionally z-scored.
Tensor extract_patch(const Image8& img, int x0, int y0, int patch,
                     const ZScoreStats* stats = nullptr);

Mask extract_mask_patch(const Mask& mask, int x0, int y0, int patch);

}  // namespace sa
