#include "slidealign/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace sa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json profile_to_json(const ScannerProfile& p) {
    return json{{"name", p.name},
                {"color_matrix", p.color_matrix},
                {"gamma", p.gamma},
                {"brightness", p.brightness},
                {"blur_sigma", p.blur_sigma},
                {"scale", p.scale},
                {"noise_sigma", p.noise_sigma},
                {"seed", p.seed}};
}

ScannerProfile profile_from_json(const json& j) {
    ScannerProfile p;
    p.name = j.at("name").get<std::string>();
    p.color_matrix = j.at("color_matrix").get<std::array<double, 9>>();
    p.gamma = j.at("gamma").get<double>();
    p.brightness = j.at("brightness").get<double>();
    p.blur_sigma = j.at("blur_sigma").get<double>();
    p.scale = j.at("scale").get<double>();
    p.noise_sigma = j.at("noise_sigma").get<double>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

}  // namespace

std::string slide_image_name(int slide_id, int domain) {
    return "slide" + std::to_string(slide_id) + "_d" + std::to_string(domain) + ".ppm";
}

std::string slide_mask_name(int slide_id) {
    return "slide" + std::to_string(slide_id) + "_mask.pgm";
}

void write_manifest(const std::string& path, const Manifest& m) {
    json j;
    j["version"] = m.version;
    j["params"] = {{"slide_size", m.params.slide_size},
                   {"train_slides", m.params.train_slides},
                   {"val_slides", m.params.val_slides},
                   {"test_slides", m.params.test_slides},
                   {"seed", m.params.seed},
                   {"reference_domain", m.params.reference_domain},
                   {"train_domains", m.params.train_domains},
                   {"holdout_domains", m.params.holdout_domains}};
    j["profiles"] = json::array();
    for (const auto& p : m.profiles) j["profiles"].push_back(profile_to_json(p));
    j["slide_seeds"] = m.slide_seeds;
    j["split"] = {{"train", m.split.train}, {"val", m.split.val}, {"test", m.split.test}};
    j["zscore"] = {{"mean", m.zscore.mean}, {"stddev", m.zscore.stddev}};
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), ErrKind::io, "cannot write manifest: " + path);
    os << j.dump(2) << "\n";
    require(os.good(), ErrKind::io, "manifest write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), ErrKind::data, "manifest not found: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrKind::data, "manifest parse error: " + std::string(e.what()));
    }
    Manifest m;
    try {
        m.version = j.at("version").get<int>();
        require(m.version == 1, ErrKind::data, "unsupported manifest version");
        const json& p = j.at("params");
        m.params.slide_size = p.at("slide_size").get<int>();
        m.params.train_slides = p.at("train_slides").get<int>();
        m.params.val_slides = p.at("val_slides").get<int>();
        m.params.test_slides = p.at("test_slides").get<int>();
        m.params.seed = p.at("seed").get<uint64_t>();
        m.params.reference_domain = p.at("reference_domain").get<int>();
        m.params.train_domains = p.at("train_domains").get<std::vector<int>>();
        m.params.holdout_domains = p.at("holdout_domains").get<std::vector<int>>();
        for (const json& pj : j.at("profiles")) m.profiles.push_back(profile_from_json(pj));
        m.slide_seeds = j.at("slide_seeds").get<std::vector<uint64_t>>();
        m.split.train = j.at("split").at("train").get<std::vector<int>>();
        m.split.val = j.at("split").at("val").get<std::vector<int>>();
        m.split.test = j.at("split").at("test").get<std::vector<int>>();
        m.zscore.mean = j.at("zscore").at("mean").get<std::array<double, 3>>();
        m.zscore.stddev = j.at("zscore").at("stddev").get<std::array<double, 3>>();
    } catch (const json::exception& e) {
        fail(ErrKind::data, "manifest field error: " + std::string(e.what()));
    }
    return m;
}

Manifest generate_dataset(const DatasetParams& params, const std::vector<ScannerProfile>& profiles,
                          const std::string& manifest_path) {
    require(!profiles.empty(), ErrKind::config, "no scanner profiles");
    require(params.reference_domain >= 0 &&
                params.reference_domain < static_cast<int>(profiles.size()),
            ErrKind::config, "reference domain out of range");
    for (int d : params.train_domains)
        require(d >= 0 && d < static_cast<int>(profiles.size()), ErrKind::config,
                "train domain out of range");
    for (int d : params.holdout_domains)
        for (int t : params.train_domains)
            require(d != t, ErrKind::config, "holdout domain also listed as a train domain");
    const int total = params.train_slides + params.val_slides + params.test_slides;
    require(total >= 3, ErrKind::config, "need at least one slide per split");

    const fs::path dir = fs::path(manifest_path).parent_path();
    if (!dir.empty()) fs::create_directories(dir);

    Manifest m;
    m.params = params;
    m.profiles = profiles;

    // Deterministic slide-level split: shuffle ids, then carve train/val/test.
    std::vector<int> ids(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) ids[static_cast<size_t>(i)] = i;
    Rng split_rng(derive_seed(params.seed, "split"));
    split_rng.shuffle(ids);
    m.split.train.assign(ids.begin(), ids.begin() + params.train_slides);
    m.split.val.assign(ids.begin() + params.train_slides,
                       ids.begin() + params.train_slides + params.val_slides);
    m.split.test.assign(ids.begin() + params.train_slides + params.val_slides, ids.end());

    std::vector<Mask> masks(static_cast<size_t>(total));
    std::vector<Image8> ref_images(static_cast<size_t>(total));
    for (int sid = 0; sid < total; ++sid) {
        const uint64_t slide_seed = derive_seed(params.seed, "slide", static_cast<uint64_t>(sid));
        m.slide_seeds.push_back(slide_seed);
        const VirtualSlide slide = generate_slide(slide_seed, params.slide_size, sid);
        masks[static_cast<size_t>(sid)] = slide.mask;
        write_pgm((dir / slide_mask_name(sid)).string(), slide.mask);
        for (int d = 0; d < static_cast<int>(profiles.size()); ++d) {
            const Image8 img = quantize_image(render_domain(slide, profiles[static_cast<size_t>(d)]));
            if (d == params.reference_domain) ref_images[static_cast<size_t>(sid)] = img;
            write_ppm((dir / slide_image_name(sid, d)).string(), img);
        }
    }

    // z-score stats over tissue pixels of reference-domain training slides.
    std::vector<const Image8*> stat_imgs;
    std::vector<const Mask*> stat_masks;
    for (int sid : m.split.train) {
        stat_imgs.push_back(&ref_images[static_cast<size_t>(sid)]);
        stat_masks.push_back(&masks[static_cast<size_t>(sid)]);
    }
    m.zscore = compute_zscore_stats(stat_imgs, stat_masks);

    write_manifest(manifest_path, m);
    return m;
}

Dataset Dataset::load(const std::string& manifest_path) {
    Dataset ds;
    ds.manifest_ = read_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    const int slides = ds.manifest_.num_slides();
    const int domains = ds.manifest_.num_domains();
    ds.masks_.reserve(static_cast<size_t>(slides));
    for (int sid = 0; sid < slides; ++sid) {
        const fs::path p = dir / slide_mask_name(sid);
        require(fs::exists(p), ErrKind::data, "missing mask file: " + p.string());
        ds.masks_.push_back(read_pgm(p.string()));
    }
    ds.images_.resize(static_cast<size_t>(domains));
    for (int d = 0; d < domains; ++d) {
        ds.images_[static_cast<size_t>(d)].reserve(static_cast<size_t>(slides));
        for (int sid = 0; sid < slides; ++sid) {
            const fs::path p = dir / slide_image_name(sid, d);
            require(fs::exists(p), ErrKind::data, "missing domain rendering: " + p.string());
            ds.images_[static_cast<size_t>(d)].push_back(read_ppm(p.string()));
        }
    }
    return ds;
}

}  // namespace sa
