#pragma once

#include <string>
#include <vector>

#include "slidealign/synth.hpp"

namespace sa {

struct DatasetParams {
    int slide_size = 256;
    int train_slides = 12;
    int val_slides = 3;
    int test_slides = 5;
    uint64_t seed = 1234;
    int reference_domain = 0;
    std::vector<int> train_domains = {0, 1, 2};
    std::vector<int> holdout_domains = {3, 4};
};

struct SplitSpec {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// Textual record of everything needed to reproduce a generated dataset:
// seeds, scanner profiles, the slide-level split and the z-score stats of the
// reference-domain training tissue.
struct Manifest {
    int version = 1;
    DatasetParams params;
    std::vector<ScannerProfile> profiles;
    std::vector<uint64_t> slide_seeds;  // indexed by slide id
    SplitSpec split;
    ZScoreStats zscore;

    int num_slides() const { return static_cast<int>(slide_seeds.size()); }
    int num_domains() const { return static_cast<int>(profiles.size()); }
};

std::string slide_image_name(int slide_id, int domain);
std::string slide_mask_name(int slide_id);

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

// Generate slides, render every domain, write images/masks/manifest into the
// directory of manifest_path. Returns the manifest.
Manifest generate_dataset(const DatasetParams& params, const std::vector<ScannerProfile>& profiles,
                          const std::string& manifest_path);

// In-memory dataset: every rendering of every slide plus the shared masks.
class Dataset {
public:
    static Dataset load(const std::string& manifest_path);

    const Manifest& manifest() const { return manifest_; }
    const Mask& mask(int slide_id) const { return masks_[static_cast<size_t>(slide_id)]; }
    const Image8& image(int domain, int slide_id) const {
        return images_[static_cast<size_t>(domain)][static_cast<size_t>(slide_id)];
    }

private:
    Manifest manifest_;
    std::vector<Mask> masks_;                 // [slide]
    std::vector<std::vector<Image8>> images_;  // [domain][slide]
};

}  // namespace sa
