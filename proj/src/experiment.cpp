#include "slidealign/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>

#include "slidealign/checkpoint.hpp"
#include "slidealign/metrics.hpp"
#include "slidealign/optimizer.hpp"
#include "slidealign/ssl_loss.hpp"
#include "slidealign/tiling.hpp"

namespace sa {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// modes and config
// ---------------------------------------------------------------------------

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::baseline_single: return "baseline_single";
        case Mode::baseline_multi: return "baseline_multi";
        case Mode::pretrained_single: return "pretrained_single";
        case Mode::pretrained_multi: return "pretrained_multi";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    for (Mode m : all_modes())
        if (name == mode_name(m)) return m;
    fail(ErrKind::config, "unknown mode: " + name);
}

bool mode_uses_pretraining(Mode m) {
    return m == Mode::pretrained_single || m == Mode::pretrained_multi;
}

bool mode_is_multi_domain(Mode m) {
    return m == Mode::baseline_multi || m == Mode::pretrained_multi;
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrKind::config, std::string("config field '") + key + "': " + e.what());
    }
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_f4(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string hash_hex(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    c.manifest = get_or<std::string>(j, "manifest", c.manifest);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
    c.seeds = get_or<std::vector<uint64_t>>(j, "seeds", c.seeds);
    c.mode = mode_from_name(get_or<std::string>(j, "mode", mode_name(c.mode)));
    c.val_per_slide = get_or<int>(j, "val_per_slide", c.val_per_slide);
    c.base_lr_ratio = get_or<double>(j, "base_lr_ratio", c.base_lr_ratio);
    c.verbose = get_or<bool>(j, "verbose", c.verbose);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        c.dataset.slide_size = get_or<int>(d, "slide_size", c.dataset.slide_size);
        c.dataset.train_slides = get_or<int>(d, "train_slides", c.dataset.train_slides);
        c.dataset.val_slides = get_or<int>(d, "val_slides", c.dataset.val_slides);
        c.dataset.test_slides = get_or<int>(d, "test_slides", c.dataset.test_slides);
        c.dataset.seed = get_or<uint64_t>(d, "seed", c.dataset.seed);
        c.dataset.reference_domain = get_or<int>(d, "reference_domain", c.dataset.reference_domain);
        c.dataset.train_domains = get_or<std::vector<int>>(d, "train_domains", c.dataset.train_domains);
        c.dataset.holdout_domains =
            get_or<std::vector<int>>(d, "holdout_domains", c.dataset.holdout_domains);
    }
    if (j.contains("stage1")) {
        const json& s = j.at("stage1");
        c.stage1.epochs = get_or<int>(s, "epochs", c.stage1.epochs);
        c.stage1.batch = get_or<int>(s, "batch", c.stage1.batch);
        c.stage1.max_lr = get_or<double>(s, "max_lr", c.stage1.max_lr);
        c.stage1.lambda = get_or<double>(s, "lambda", c.stage1.lambda);
        c.stage1.per_slide = get_or<int>(s, "per_slide", c.stage1.per_slide);
        c.stage1.bg_frac = get_or<double>(s, "bg_frac", c.stage1.bg_frac);
    }
    if (j.contains("stage2")) {
        const json& s = j.at("stage2");
        c.stage2.epochs = get_or<int>(s, "epochs", c.stage2.epochs);
        c.stage2.batch = get_or<int>(s, "batch", c.stage2.batch);
        c.stage2.max_lr = get_or<double>(s, "max_lr", c.stage2.max_lr);
        c.stage2.per_slide = get_or<int>(s, "per_slide", c.stage2.per_slide);
        c.stage2.bg_frac = get_or<double>(s, "bg_frac", c.stage2.bg_frac);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        c.model.block_channels = get_or<std::vector<int>>(m, "block_channels", c.model.block_channels);
        c.model.patch = get_or<int>(m, "patch", c.model.patch);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        c.eval.window = get_or<int>(e, "window", c.eval.window);
        c.eval.overlap = get_or<int>(e, "overlap", c.eval.overlap);
    }

    require(!c.seeds.empty(), ErrKind::config, "seeds must not be empty");
    require(c.stage1.batch >= 2, ErrKind::config, "stage1 batch must be >= 2");
    require(c.stage1.epochs >= 1 && c.stage2.epochs >= 1, ErrKind::config, "epochs must be >= 1");
    require(c.stage2.batch >= 1, ErrKind::config, "stage2 batch must be >= 1");
    require(c.stage1.lambda > 0.0, ErrKind::config, "lambda must be positive");
    require(c.stage1.max_lr > 0.0 && c.stage2.max_lr > 0.0, ErrKind::config, "max_lr must be positive");
    require(c.base_lr_ratio > 0.0 && c.base_lr_ratio <= 1.0, ErrKind::config,
            "base_lr_ratio must lie in (0, 1]");
    require(c.val_per_slide >= 1, ErrKind::config, "val_per_slide must be >= 1");
    require(c.model.patch >= 8, ErrKind::config, "patch must be >= 8");
    require(c.model.block_channels.size() >= 2, ErrKind::config, "need at least 2 encoder blocks");
    for (int ch : c.model.block_channels)
        require(ch >= 1, ErrKind::config, "block channels must be positive");
    require(c.stage1.bg_frac >= 0.0 && c.stage1.bg_frac <= 1.0, ErrKind::config,
            "bg_frac must lie in [0, 1]");
    require(c.stage2.bg_frac >= 0.0 && c.stage2.bg_frac <= 1.0, ErrKind::config,
            "bg_frac must lie in [0, 1]");
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["manifest"] = c.manifest;
    j["out_dir"] = c.out_dir;
    j["seeds"] = c.seeds;
    j["mode"] = mode_name(c.mode);
    j["val_per_slide"] = c.val_per_slide;
    j["base_lr_ratio"] = c.base_lr_ratio;
    j["verbose"] = c.verbose;
    j["dataset"] = {{"slide_size", c.dataset.slide_size},
                    {"train_slides", c.dataset.train_slides},
                    {"val_slides", c.dataset.val_slides},
                    {"test_slides", c.dataset.test_slides},
                    {"seed", c.dataset.seed},
                    {"reference_domain", c.dataset.reference_domain},
                    {"train_domains", c.dataset.train_domains},
                    {"holdout_domains", c.dataset.holdout_domains}};
    j["stage1"] = {{"epochs", c.stage1.epochs}, {"batch", c.stage1.batch},
                   {"max_lr", c.stage1.max_lr}, {"lambda", c.stage1.lambda},
                   {"per_slide", c.stage1.per_slide}, {"bg_frac", c.stage1.bg_frac}};
    j["stage2"] = {{"epochs", c.stage2.epochs}, {"batch", c.stage2.batch},
                   {"max_lr", c.stage2.max_lr}, {"per_slide", c.stage2.per_slide},
                   {"bg_frac", c.stage2.bg_frac}};
    j["model"] = {{"block_channels", c.model.block_channels}, {"patch", c.model.patch}};
    j["eval"] = {{"window", c.eval.window}, {"overlap", c.eval.overlap}};
    return j;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    require(is.good(), ErrKind::config, "cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrKind::config, "config parse error: " + std::string(e.what()));
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        require(eq != std::string::npos && eq > 0, ErrKind::config,
                "override must be key.path=value: " + ov);
        std::string ptr = "/" + ov.substr(0, eq);
        std::replace(ptr.begin(), ptr.end(), '.', '/');
        const std::string raw = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // bare strings stay strings
        }
        try {
            j[json::json_pointer(ptr)] = value;
        } catch (const json::exception& e) {
            fail(ErrKind::config, "bad override '" + ov + "': " + e.what());
        }
    }
    return config_from_json(j);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("mode");
    j.erase("seeds");
    j.erase("out_dir");
    j.erase("verbose");
    return fnv1a64(j.dump());
}

// ---------------------------------------------------------------------------
// engine internals
// ---------------------------------------------------------------------------

namespace {

struct Loc {
    int slide = 0;
    int x = 0;
    int y = 0;
};

uint64_t hash_locations(std::span<const Loc> locs) {
    uint64_t h = fnv1a64("patch-order");
    for (const Loc& l : locs) {
        h = fnv1a64_mix(h, static_cast<uint64_t>(l.slide));
        h = fnv1a64_mix(h, static_cast<uint64_t>(l.x));
        h = fnv1a64_mix(h, static_cast<uint64_t>(l.y));
    }
    return h;
}

// Buffered deterministic CSV of (epoch, domain, metric, value, seed) rows.
class MetricsCsv {
public:
    explicit MetricsCsv(uint64_t seed) : seed_(seed) { rows_ << "epoch,domain,metric,value,seed\n"; }

    void row(int epoch, int domain, const std::string& metric, double value) {
        rows_ << epoch << "," << domain << "," << metric << "," << fmt_g17(value) << "," << seed_
              << "\n";
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc | std::ios::binary);
        require(os.good(), ErrKind::io, "cannot write metrics csv: " + path);
        os << rows_.str();
        require(os.good(), ErrKind::io, "metrics csv write failed: " + path);
    }

private:
    uint64_t seed_;
    std::ostringstream rows_;
};

struct CsvRow {
    int epoch = 0;
    int domain = 0;
    std::string metric;
    double value = 0.0;
};

std::vector<CsvRow> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), ErrKind::io, "cannot read metrics csv: " + path);
    std::vector<CsvRow> rows;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        CsvRow r;
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        r.epoch = std::stoi(field);
        std::getline(ls, field, ',');
        r.domain = std::stoi(field);
        std::getline(ls, r.metric, ',');
        std::getline(ls, field, ',');
        r.value = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    int n = 0;
};

MeanStd mean_std(const std::vector<double>& v) {
    MeanStd m;
    m.n = static_cast<int>(v.size());
    if (m.n == 0) return m;
    for (double x : v) m.mean += x;
    m.mean /= m.n;
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / m.n);
    return m;
}

}  // namespace

struct Engine::Impl {
    std::optional<Dataset> dataset;

    void log(const ExperimentConfig& cfg, const std::string& msg) const {
        if (cfg.verbose) std::fprintf(stderr, "[slidealign] %s\n", msg.c_str());
    }
};

Engine::Engine(ExperimentConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {}

Engine::~Engine() = default;

std::string Engine::run_dir() const {
    return (fs::path(cfg_.out_dir) / hash_hex(config_hash(cfg_))).string();
}

const Dataset& Engine::dataset() {
    if (!impl_->dataset) impl_->dataset = Dataset::load(cfg_.manifest);
    const Manifest& m = impl_->dataset->manifest();
    require(m.params.reference_domain < m.num_domains(), ErrKind::data,
            "manifest reference domain out of range");
    return *impl_->dataset;
}

void Engine::gen_data() {
    impl_->dataset.reset();
    impl_->log(cfg_, "generating dataset into " + cfg_.manifest);
    generate_dataset(cfg_.dataset, default_profiles(), cfg_.manifest);
    impl_->log(cfg_, "dataset ready");
}

namespace {

// Shared helpers bound to one loaded dataset + config.
struct Pipeline {
    const ExperimentConfig& cfg;
    const Dataset& ds;

    const Manifest& manifest() const { return ds.manifest(); }
    int reference_domain() const { return manifest().params.reference_domain; }

    EncoderConfig encoder_config() const { return EncoderConfig{3, cfg.model.block_channels}; }

    // Manifest audit: no training domain may be a hold-out domain.
    void check_holdout_exclusion(const std::vector<int>& training_domains) const {
        for (int d : training_domains)
            for (int h : manifest().params.holdout_domains)
                require(d != h, ErrKind::data,
                        "hold-out domain " + std::to_string(h) + " would enter a training batch");
    }

    void check_patch_size() const {
        const int ds_factor = encoder_downsample(encoder_config());
        require(cfg.model.patch % ds_factor == 0, ErrKind::config,
                "patch size must be divisible by the encoder downsampling factor " +
                    std::to_string(ds_factor));
        require(cfg.model.patch <= manifest().params.slide_size, ErrKind::config,
                "patch larger than the slide");
    }

    // Fixed validation patch locations; identical for both stages and all
    // modes of one seed.
    std::vector<Loc> validation_locations(uint64_t seed) const {
        SampleSpec spec{cfg.val_per_slide, cfg.stage2.bg_frac, cfg.model.patch};
        std::vector<Loc> locs;
        for (int sid : manifest().split.val) {
            const auto origins = sample_patch_origins(
                ds.mask(sid), spec, derive_seed(seed, "val-sample", static_cast<uint64_t>(sid)));
            for (const auto& o : origins) locs.push_back({sid, o.x, o.y});
        }
        return locs;
    }

    // Fresh guided sample of training locations for one epoch, shuffled into
    // the actual training order. Depends on (seed, stage tag, epoch) only.
    std::vector<Loc> epoch_locations(uint64_t seed, const char* stage, int epoch, int per_slide,
                                     double bg_frac) const {
        SampleSpec spec{per_slide, bg_frac, cfg.model.patch};
        std::vector<Loc> locs;
        for (int sid : manifest().split.train) {
            const auto origins = sample_patch_origins(
                ds.mask(sid), spec,
                derive_seed(seed, std::string(stage) + ".sample", static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(sid)));
            for (const auto& o : origins) locs.push_back({sid, o.x, o.y});
        }
        Rng shuffle_rng(
            derive_seed(seed, std::string(stage) + ".shuffle", static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(locs);
        return locs;
    }

    Tensor stack_patches(int domain, std::span<const Loc> locs) const {
        const int p = cfg.model.patch;
        Tensor out({static_cast<int>(locs.size()), 3, p, p});
        const int64_t block = 3LL * p * p;
        for (size_t i = 0; i < locs.size(); ++i) {
            const Tensor patch =
                extract_patch(ds.image(domain, locs[i].slide), locs[i].x, locs[i].y, p,
                              &manifest().zscore);
            std::copy(patch.data(), patch.data() + block, out.data() + static_cast<int64_t>(i) * block);
        }
        return out;
    }

    // Bottleneck representations of the given locations in one domain,
    // forward-only, chunked to bound tape memory.
    Tensor encode_locations(const Encoder& enc, int domain, std::span<const Loc> locs) const {
        const int r = enc.rep_dim();
        Tensor reps({static_cast<int>(locs.size()), r});
        constexpr size_t kChunk = 32;
        for (size_t off = 0; off < locs.size(); off += kChunk) {
            const size_t n = std::min(kChunk, locs.size() - off);
            Tape tape;
            const NodeId x = tape.constant(stack_patches(domain, locs.subspan(off, n)));
            const Tensor& out = tape.value(enc.encode(tape, x));
            std::copy(out.data(), out.data() + static_cast<int64_t>(n) * r,
                      reps.data() + static_cast<int64_t>(off) * r);
        }
        return reps;
    }

    // Mean cosine distance from the reference domain to every other domain at
    // the encoder bottleneck, over the validation locations.
    std::vector<double> alignment_trace(const Encoder& enc, std::span<const Loc> val_locs) const {
        const int domains = manifest().num_domains();
        std::vector<double> out(static_cast<size_t>(domains), 0.0);
        const Tensor ref = encode_locations(enc, reference_domain(), val_locs);
        for (int d = 0; d < domains; ++d) {
            if (d == reference_domain()) continue;
            out[static_cast<size_t>(d)] =
                mean_pairwise_cosine_distance(ref, encode_locations(enc, d, val_locs));
        }
        return out;
    }

    std::vector<int> finetune_domains(Mode mode) const {
        if (mode_is_multi_domain(mode)) return manifest().params.train_domains;
        return {reference_domain()};
    }

    // Validation mIoU over the mode's domain set: one confusion matrix across
    // every validation patch, classes with zero union excluded.
    double validation_miou(const Segmenter& seg, std::span<const Loc> val_locs,
                           const std::vector<int>& domains) const {
        const int p = cfg.model.patch;
        ConfusionMatrix cm(kNumClasses);
        constexpr size_t kChunk = 16;
        for (int d : domains) {
            for (size_t off = 0; off < val_locs.size(); off += kChunk) {
                const size_t n = std::min(kChunk, val_locs.size() - off);
                const auto chunk = val_locs.subspan(off, n);
                Tape tape;
                const NodeId logits = seg.forward(tape, tape.constant(stack_patches(d, chunk)));
                const Tensor& lv = tape.value(logits);
                const size_t plane = static_cast<size_t>(p) * p;
                for (size_t i = 0; i < n; ++i) {
                    Mask pred(p, p);
                    for (size_t px = 0; px < plane; ++px) {
                        int best = 0;
                        double bv = lv[static_cast<int64_t>((i * kNumClasses) * plane + px)];
                        for (int c = 1; c < kNumClasses; ++c) {
                            const double v =
                                lv[static_cast<int64_t>((i * kNumClasses + c) * plane + px)];
                            if (v > bv) {
                                bv = v;
                                best = c;
                            }
                        }
                        pred.data[px] = static_cast<uint8_t>(best);
                    }
                    cm.accumulate(pred,
                                  extract_mask_patch(ds.mask(chunk[i].slide), chunk[i].x,
                                                     chunk[i].y, p));
                }
            }
        }
        return cm.miou();
    }
};

Tensor targets_for(const Dataset& ds, std::span<const std::pair<Loc, int>> samples, int patch) {
    Tensor t({static_cast<int>(samples.size()), patch, patch});
    const int64_t block = static_cast<int64_t>(patch) * patch;
    for (size_t i = 0; i < samples.size(); ++i) {
        const Mask m = extract_mask_patch(ds.mask(samples[i].first.slide), samples[i].first.x,
                                          samples[i].first.y, patch);
        for (int64_t k = 0; k < block; ++k)
            t[static_cast<int64_t>(i) * block + k] = static_cast<double>(m.data[static_cast<size_t>(k)]);
    }
    return t;
}

}  // namespace

PretrainResult Engine::pretrain(uint64_t seed) {
    const Dataset& data = dataset();
    const Manifest& m = data.manifest();
    Pipeline pipe{cfg_, data};
    require(m.params.train_domains.size() >= 2, ErrKind::config,
            "pretraining needs at least 2 training domains in the manifest");
    pipe.check_holdout_exclusion(m.params.train_domains);
    pipe.check_patch_size();

    const fs::path dir = fs::path(run_dir()) / ("seed" + std::to_string(seed)) / "pretrain";
    fs::create_directories(dir);

    ParamStore store;
    Rng enc_rng(derive_seed(seed, "init.encoder"));
    Rng proj_rng(derive_seed(seed, "init.projector"));
    Encoder enc(pipe.encoder_config(), store, enc_rng);
    Projector proj(ProjectorConfig::fourfold(enc.rep_dim()), store, proj_rng);

    const int batch = cfg_.stage1.batch;
    const int locs_per_epoch = static_cast<int>(m.split.train.size()) * cfg_.stage1.per_slide;
    const int steps_per_epoch = locs_per_epoch / batch;
    require(steps_per_epoch >= 1, ErrKind::config,
            "stage1 batch larger than the per-epoch patch count");

    Adam adam(store.all());
    const CyclicLr lr{cfg_.base_lr_ratio * cfg_.stage1.max_lr, cfg_.stage1.max_lr, steps_per_epoch};
    const TupleLossConfig tuple_cfg{cfg_.stage1.lambda, 1e-9};

    const std::vector<Loc> val_locs = pipe.validation_locations(seed);
    MetricsCsv csv(seed);
    PretrainResult result;

    auto record_trace = [&](int epoch) {
        const auto trace = pipe.alignment_trace(enc, val_locs);
        for (int d = 0; d < m.num_domains(); ++d) {
            if (d == pipe.reference_domain()) continue;
            csv.row(epoch, d, "cosine_distance", trace[static_cast<size_t>(d)]);
        }
        result.trace.push_back(trace);
    };

    record_trace(0);
    int64_t step = 0;
    for (int epoch = 1; epoch <= cfg_.stage1.epochs; ++epoch) {
        const auto locs = pipe.epoch_locations(seed, "s1", epoch, cfg_.stage1.per_slide,
                                               cfg_.stage1.bg_frac);
        double loss_sum = 0.0;
        int batches = 0;
        // partial batches are dropped: the tuple loss standardizes per batch
        for (size_t off = 0; off + batch <= locs.size(); off += static_cast<size_t>(batch)) {
            const std::span<const Loc> blocs(locs.data() + off, static_cast<size_t>(batch));
            Tape tape;
            std::vector<NodeId> embeddings;
            embeddings.reserve(m.params.train_domains.size());
            for (int d : m.params.train_domains) {
                const NodeId x = tape.constant(pipe.stack_patches(d, blocs));
                embeddings.push_back(proj.forward(tape, enc.encode(tape, x)));
            }
            const NodeId loss = barlow_tuple_loss(tape, embeddings, tuple_cfg);
            store.zero_grad();
            tape.backward(loss);
            adam.step(lr.at(step++));
            loss_sum += tape.value(loss).item();
            ++batches;
        }
        csv.row(epoch, -1, "pretrain_loss", loss_sum / batches);
        record_trace(epoch);
        impl_->log(cfg_, "pretrain seed " + std::to_string(seed) + " epoch " +
                             std::to_string(epoch) + "/" + std::to_string(cfg_.stage1.epochs) +
                             " loss " + fmt_g17(loss_sum / batches));
    }

    json meta;
    meta["stage"] = "pretrain";
    meta["seed"] = seed;
    meta["config_hash"] = hash_hex(config_hash(cfg_));
    meta["block_channels"] = cfg_.model.block_channels;
    meta["epochs"] = cfg_.stage1.epochs;
    result.checkpoint = (dir / "encoder.ckpt").string();
    save_checkpoint(result.checkpoint, meta, store);
    csv.save((dir / "metrics.csv").string());
    return result;
}

FinetuneResult Engine::finetune(Mode mode, uint64_t seed) {
    const Dataset& data = dataset();
    const Manifest& m = data.manifest();
    Pipeline pipe{cfg_, data};
    pipe.check_patch_size();

    const fs::path seed_dir = fs::path(run_dir()) / ("seed" + std::to_string(seed));
    const fs::path dir = seed_dir / mode_name(mode);
    fs::create_directories(dir);

    ParamStore store;
    Rng enc_rng(derive_seed(seed, "init.encoder"));
    Rng dec_rng(derive_seed(seed, "init.decoder"));
    Segmenter seg(SegmenterConfig{pipe.encoder_config(), kNumClasses}, store, enc_rng, dec_rng);
    if (mode_uses_pretraining(mode)) {
        const std::string ck_path = (seed_dir / "pretrain" / "encoder.ckpt").string();
        require(fs::exists(ck_path), ErrKind::io,
                "missing pretrain checkpoint (run pretrain first): " + ck_path);
        apply_checkpoint(load_checkpoint(ck_path), store, "encoder.");
    }

    const std::vector<int> domains = pipe.finetune_domains(mode);
    pipe.check_holdout_exclusion(domains);
    const int batch = cfg_.stage2.batch;
    const int locs_per_epoch = static_cast<int>(m.split.train.size()) * cfg_.stage2.per_slide;
    const int samples_per_epoch = locs_per_epoch * static_cast<int>(domains.size());
    const int steps_per_epoch = (samples_per_epoch + batch - 1) / batch;
    require(steps_per_epoch >= 1, ErrKind::config, "stage2 has no training samples");

    Adam adam(store.all());
    const CyclicLr lr{cfg_.base_lr_ratio * cfg_.stage2.max_lr, cfg_.stage2.max_lr, steps_per_epoch};
    const std::vector<Loc> val_locs = pipe.validation_locations(seed);

    MetricsCsv csv(seed);
    std::ostringstream patch_order;
    patch_order << "epoch,patch_order_hash\n";
    uint64_t combined_hash = fnv1a64("patch-order-all");

    auto record_cosine = [&](int epoch) {
        const auto trace = pipe.alignment_trace(seg.encoder(), val_locs);
        for (int d = 0; d < m.num_domains(); ++d) {
            if (d == pipe.reference_domain()) continue;
            csv.row(epoch, d, "cosine_distance", trace[static_cast<size_t>(d)]);
        }
    };

    // Best-checkpoint tracking starts from the untrained model at epoch 0.
    double best_miou = pipe.validation_miou(seg, val_locs, domains);
    int best_epoch = 0;
    std::vector<Tensor> best_values;
    auto snapshot = [&]() {
        best_values.clear();
        best_values.reserve(store.size());
        for (size_t i = 0; i < store.size(); ++i) best_values.push_back(store.at(i)->value);
    };
    snapshot();
    csv.row(0, -1, "val_miou", best_miou);
    record_cosine(0);

    int64_t step = 0;
    for (int epoch = 1; epoch <= cfg_.stage2.epochs; ++epoch) {
        const auto locs = pipe.epoch_locations(seed, "s2", epoch, cfg_.stage2.per_slide,
                                               cfg_.stage2.bg_frac);
        const uint64_t h = hash_locations(locs);
        combined_hash = fnv1a64_mix(combined_hash, h);
        patch_order << epoch << "," << h << "\n";

        // Location-major expansion: every mode consumes the same location
        // sequence; multi-domain modes train each location once per domain.
        std::vector<std::pair<Loc, int>> samples;
        samples.reserve(locs.size() * domains.size());
        for (const Loc& l : locs)
            for (int d : domains) samples.emplace_back(l, d);

        double loss_sum = 0.0;
        int batches = 0;
        for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(batch)) {
            const size_t n = std::min(static_cast<size_t>(batch), samples.size() - off);
            const std::span<const std::pair<Loc, int>> bs(samples.data() + off, n);
            const int p = cfg_.model.patch;
            Tensor x({static_cast<int>(n), 3, p, p});
            const int64_t block = 3LL * p * p;
            for (size_t i = 0; i < n; ++i) {
                const Tensor patch = extract_patch(data.image(bs[i].second, bs[i].first.slide),
                                                   bs[i].first.x, bs[i].first.y, p, &m.zscore);
                std::copy(patch.data(), patch.data() + block,
                          x.data() + static_cast<int64_t>(i) * block);
            }
            Tape tape;
            const NodeId logits = seg.forward(tape, tape.constant(std::move(x)));
            const CeDiceLoss loss = ce_dice_loss(tape, logits, targets_for(data, bs, p));
            store.zero_grad();
            tape.backward(loss.total);
            adam.step(lr.at(step++));
            loss_sum += tape.value(loss.total).item();
            ++batches;
        }

        const double val_miou = pipe.validation_miou(seg, val_locs, domains);
        csv.row(epoch, -1, "train_loss", loss_sum / batches);
        csv.row(epoch, -1, "val_miou", val_miou);
        record_cosine(epoch);
        if (val_miou > best_miou) {
            best_miou = val_miou;
            best_epoch = epoch;
            snapshot();
        }
        impl_->log(cfg_, std::string(mode_name(mode)) + " seed " + std::to_string(seed) +
                             " epoch " + std::to_string(epoch) + "/" +
                             std::to_string(cfg_.stage2.epochs) + " loss " +
                             fmt_g17(loss_sum / batches) + " val_miou " + fmt_g17(val_miou));
    }

    // restore the selected epoch before saving
    for (size_t i = 0; i < store.size(); ++i) store.at(i)->value = best_values[i];

    json meta;
    meta["stage"] = "finetune";
    meta["mode"] = mode_name(mode);
    meta["seed"] = seed;
    meta["config_hash"] = hash_hex(config_hash(cfg_));
    meta["selected_epoch"] = best_epoch;
    meta["best_val_miou"] = best_miou;

    FinetuneResult result;
    result.checkpoint = (dir / "segmenter.ckpt").string();
    result.selected_epoch = best_epoch;
    result.best_val_miou = best_miou;
    result.patch_order_hash = combined_hash;
    save_checkpoint(result.checkpoint, meta, store);
    csv.save((dir / "metrics.csv").string());
    {
        std::ofstream os(dir / "patch_order.csv", std::ios::trunc | std::ios::binary);
        os << patch_order.str();
        require(os.good(), ErrKind::io, "cannot write patch_order.csv");
    }
    {
        json record;
        record["mode"] = mode_name(mode);
        record["seed"] = seed;
        record["config_hash"] = hash_hex(config_hash(cfg_));
        record["selected_epoch"] = best_epoch;
        record["best_val_miou"] = best_miou;
        record["patch_order_hash"] = combined_hash;
        std::ofstream os(dir / "run_record.json", std::ios::trunc | std::ios::binary);
        os << record.dump(2) << "\n";
        require(os.good(), ErrKind::io, "cannot write run_record.json");
    }
    return result;
}

EvalResult Engine::evaluate(Mode mode, uint64_t seed) {
    const Dataset& data = dataset();
    const Manifest& m = data.manifest();
    Pipeline pipe{cfg_, data};
    pipe.check_patch_size();

    const fs::path seed_dir = fs::path(run_dir()) / ("seed" + std::to_string(seed));
    const std::string ck_path = (seed_dir / mode_name(mode) / "segmenter.ckpt").string();
    require(fs::exists(ck_path), ErrKind::io,
            "missing segmenter checkpoint (run finetune first): " + ck_path);

    ParamStore store;
    Rng dummy_a(0), dummy_b(1);
    Segmenter seg(SegmenterConfig{pipe.encoder_config(), kNumClasses}, store, dummy_a, dummy_b);
    restore_checkpoint(load_checkpoint(ck_path), store);

    const int window = cfg_.eval.window > 0 ? cfg_.eval.window : cfg_.model.patch;
    const int overlap = cfg_.eval.overlap > 0 ? cfg_.eval.overlap : window / 2;
    const int ds_factor = encoder_downsample(pipe.encoder_config());
    require(window % ds_factor == 0, ErrKind::config,
            "eval window must be divisible by the encoder downsampling factor");
    require(overlap < window, ErrKind::config, "eval overlap must be smaller than the window");

    const fs::path dir = seed_dir / (std::string("eval_") + mode_name(mode));
    fs::create_directories(dir / "masks");

    // reference domain first so concordance has its baseline masks
    std::vector<int> order;
    order.push_back(pipe.reference_domain());
    for (int d = 0; d < m.num_domains(); ++d)
        if (d != pipe.reference_domain()) order.push_back(d);

    std::map<int, Mask> ref_masks;  // by slide id
    EvalResult result;
    result.miou.assign(static_cast<size_t>(m.num_domains()), 0.0);
    result.concordance.assign(static_cast<size_t>(m.num_domains()), 0.0);

    for (int d : order) {
        ConfusionMatrix cm(kNumClasses);
        double conc_sum = 0.0;
        for (int sid : m.split.test) {
            const Image8& img = data.image(d, sid);
            const WindowGrid grid = plan_windows(img.h, img.w, window, overlap);
            std::vector<Tensor> window_logits;
            window_logits.reserve(grid.windows.size());
            constexpr size_t kChunk = 16;
            for (size_t off = 0; off < grid.windows.size(); off += kChunk) {
                const size_t n = std::min(kChunk, grid.windows.size() - off);
                Tensor x({static_cast<int>(n), 3, window, window});
                const int64_t block = 3LL * window * window;
                for (size_t i = 0; i < n; ++i) {
                    const Window& win = grid.windows[off + i];
                    const Tensor patch =
                        extract_patch(img, win.x0, win.y0, window, &m.zscore);
                    std::copy(patch.data(), patch.data() + block,
                              x.data() + static_cast<int64_t>(i) * block);
                }
                Tape tape;
                const Tensor& lv = tape.value(seg.forward(tape, tape.constant(std::move(x))));
                const int64_t lblock = static_cast<int64_t>(kNumClasses) * window * window;
                for (size_t i = 0; i < n; ++i) {
                    Tensor one({kNumClasses, window, window});
                    std::copy(lv.data() + static_cast<int64_t>(i) * lblock,
                              lv.data() + static_cast<int64_t>(i + 1) * lblock, one.data());
                    window_logits.push_back(std::move(one));
                }
            }
            Mask stitched = stitch(grid, window_logits);
            write_pgm((dir / "masks" / ("slide" + std::to_string(sid) + "_d" + std::to_string(d) +
                                        ".pgm"))
                          .string(),
                      stitched);
            cm.accumulate(stitched, data.mask(sid));
            if (d == pipe.reference_domain()) {
                conc_sum += 1.0;  // concordance(ref, ref)
                ref_masks[sid] = std::move(stitched);
            } else {
                conc_sum += concordance(ref_masks.at(sid), stitched, kNumClasses);
            }
        }
        result.miou[static_cast<size_t>(d)] = cm.miou();
        result.concordance[static_cast<size_t>(d)] = conc_sum / static_cast<double>(m.split.test.size());
        impl_->log(cfg_, std::string("eval ") + mode_name(mode) + " seed " + std::to_string(seed) +
                             " domain " + std::to_string(d) + " miou " +
                             fmt_g17(result.miou[static_cast<size_t>(d)]));
    }

    std::ostringstream csv;
    csv << "domain,metric,value,seed\n";
    for (int d = 0; d < m.num_domains(); ++d)
        csv << d << ",miou," << fmt_g17(result.miou[static_cast<size_t>(d)]) << "," << seed << "\n";
    for (int d = 0; d < m.num_domains(); ++d)
        csv << d << ",concordance," << fmt_g17(result.concordance[static_cast<size_t>(d)]) << ","
            << seed << "\n";
    std::ofstream os(dir / "eval.csv", std::ios::trunc | std::ios::binary);
    os << csv.str();
    require(os.good(), ErrKind::io, "cannot write eval.csv");
    return result;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct RunScan {
    std::vector<uint64_t> seeds;
    // [seed][mode present]
    std::map<uint64_t, std::vector<Mode>> finetuned;
    std::map<uint64_t, bool> pretrained;
    std::map<uint64_t, std::vector<Mode>> evaluated;
};

RunScan scan_runs(const fs::path& root) {
    RunScan scan;
    if (!fs::exists(root)) return scan;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("seed", 0) != 0) continue;
        uint64_t seed = 0;
        try {
            seed = std::stoull(name.substr(4));
        } catch (...) {
            continue;
        }
        scan.seeds.push_back(seed);
        scan.finetuned[seed];
        scan.evaluated[seed];
        scan.pretrained[seed] = fs::exists(entry.path() / "pretrain" / "metrics.csv");
        for (Mode m : all_modes()) {
            if (fs::exists(entry.path() / mode_name(m) / "metrics.csv"))
                scan.finetuned[seed].push_back(m);
            if (fs::exists(entry.path() / (std::string("eval_") + mode_name(m)) / "eval.csv"))
                scan.evaluated[seed].push_back(m);
        }
    }
    std::sort(scan.seeds.begin(), scan.seeds.end());
    return scan;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    os << text;
    require(os.good(), ErrKind::io, "cannot write report file: " + path.string());
}

}  // namespace

void Engine::report() const {
    const fs::path root(run_dir());
    const RunScan scan = scan_runs(root);
    bool any = false;
    for (uint64_t s : scan.seeds)
        if (scan.pretrained.at(s) || !scan.finetuned.at(s).empty() || !scan.evaluated.at(s).empty())
            any = true;
    require(any, ErrKind::contract, "no run records under " + root.string());

    const fs::path rep = root / "report";
    fs::create_directories(rep);
    json summary;
    summary["config_hash"] = hash_hex(config_hash(cfg_));

    // ---- pretraining alignment traces (Fig. 3a analog) ----
    {
        // (epoch, domain) -> values across seeds
        std::map<std::pair<int, int>, std::vector<double>> agg;
        for (uint64_t s : scan.seeds) {
            if (!scan.pretrained.at(s)) continue;
            const auto rows = read_metrics_csv(
                (root / ("seed" + std::to_string(s)) / "pretrain" / "metrics.csv").string());
            for (const auto& r : rows)
                if (r.metric == "cosine_distance") agg[{r.epoch, r.domain}].push_back(r.value);
        }
        std::ostringstream csv;
        csv << "epoch,domain,mean,std,n\n";
        json jtrace = json::array();
        for (const auto& [key, values] : agg) {
            const MeanStd ms = mean_std(values);
            csv << key.first << "," << key.second << "," << fmt_g17(ms.mean) << ","
                << fmt_g17(ms.std) << "," << ms.n << "\n";
            jtrace.push_back({{"epoch", key.first},
                              {"domain", key.second},
                              {"mean", ms.mean},
                              {"std", ms.std},
                              {"n", ms.n}});
        }
        write_text(rep / "alignment_pretrain.csv", csv.str());
        summary["alignment_pretrain"] = jtrace;
    }

    // ---- stage-2 cosine traces, per mode and pooled (Fig. 3b analog) ----
    {
        std::map<std::tuple<std::string, int, int>, std::vector<double>> by_mode;
        std::map<std::pair<std::string, int>, std::vector<double>> pooled;  // (init, epoch)
        for (uint64_t s : scan.seeds) {
            for (Mode mode : scan.finetuned.at(s)) {
                const auto rows = read_metrics_csv(
                    (root / ("seed" + std::to_string(s)) / mode_name(mode) / "metrics.csv")
                        .string());
                const std::string init = mode_uses_pretraining(mode) ? "pretrained" : "baseline";
                for (const auto& r : rows) {
                    if (r.metric != "cosine_distance") continue;
                    by_mode[{mode_name(mode), r.epoch, r.domain}].push_back(r.value);
                    pooled[{init, r.epoch}].push_back(r.value);
                }
            }
        }
        std::ostringstream c1;
        c1 << "mode,epoch,domain,mean,std,n\n";
        for (const auto& [key, values] : by_mode) {
            const MeanStd ms = mean_std(values);
            c1 << std::get<0>(key) << "," << std::get<1>(key) << "," << std::get<2>(key) << ","
               << fmt_g17(ms.mean) << "," << fmt_g17(ms.std) << "," << ms.n << "\n";
        }
        write_text(rep / "stage2_cosine_by_mode.csv", c1.str());
        std::ostringstream c2;
        c2 << "init,epoch,mean,std,n\n";
        json jpooled = json::array();
        for (const auto& [key, values] : pooled) {
            const MeanStd ms = mean_std(values);
            c2 << key.first << "," << key.second << "," << fmt_g17(ms.mean) << ","
               << fmt_g17(ms.std) << "," << ms.n << "\n";
            jpooled.push_back(
                {{"init", key.first}, {"epoch", key.second}, {"mean", ms.mean}, {"std", ms.std}});
        }
        write_text(rep / "stage2_cosine_pooled.csv", c2.str());
        summary["stage2_cosine_pooled"] = jpooled;
    }

    // ---- mIoU and concordance tables (Table 1 / Fig. 4 analogs) ----
    const Manifest* manifest = nullptr;
    std::optional<Manifest> manifest_storage;
    try {
        manifest_storage = read_manifest(cfg_.manifest);
        manifest = &*manifest_storage;
    } catch (const Error&) {
        manifest = nullptr;  // tables fall back to numeric domain labels
    }

    for (const char* metric : {"miou", "concordance"}) {
        std::map<std::pair<std::string, int>, std::vector<double>> agg;  // (mode, domain)
        int max_domain = -1;
        for (uint64_t s : scan.seeds) {
            for (Mode mode : scan.evaluated.at(s)) {
                const fs::path p = root / ("seed" + std::to_string(s)) /
                                   (std::string("eval_") + mode_name(mode)) / "eval.csv";
                std::ifstream is(p);
                std::string line;
                std::getline(is, line);
                while (std::getline(is, line)) {
                    if (line.empty()) continue;
                    std::istringstream ls(line);
                    std::string f0, f1, f2;
                    std::getline(ls, f0, ',');
                    std::getline(ls, f1, ',');
                    std::getline(ls, f2, ',');
                    if (f1 != metric) continue;
                    const int d = std::stoi(f0);
                    max_domain = std::max(max_domain, d);
                    agg[{mode_name(mode), d}].push_back(std::stod(f2));
                }
            }
        }
        std::ostringstream longcsv;
        longcsv << "mode,domain,mean,std,n\n";
        json jlong = json::array();
        for (const auto& [key, values] : agg) {
            const MeanStd ms = mean_std(values);
            longcsv << key.first << "," << key.second << "," << fmt_g17(ms.mean) << ","
                    << fmt_g17(ms.std) << "," << ms.n << "\n";
            jlong.push_back({{"mode", key.first},
                             {"domain", key.second},
                             {"mean", ms.mean},
                             {"std", ms.std},
                             {"n", ms.n}});
        }
        write_text(rep / (std::string(metric) + "_long.csv"), longcsv.str());
        summary[std::string(metric) + "_long"] = jlong;

        // wide table: one row per mode, one column per domain
        std::ostringstream wide;
        wide << "mode";
        for (int d = 0; d <= max_domain; ++d) {
            std::string label = "domain" + std::to_string(d);
            if (manifest && d < manifest->num_domains())
                label = manifest->profiles[static_cast<size_t>(d)].name;
            wide << "," << label;
        }
        wide << "\n";
        for (Mode mode : all_modes()) {
            bool have = false;
            for (const auto& [key, values] : agg)
                if (key.first == mode_name(mode)) have = true;
            if (!have) continue;
            wide << mode_name(mode);
            for (int d = 0; d <= max_domain; ++d) {
                const auto it = agg.find({mode_name(mode), d});
                if (it == agg.end()) {
                    wide << ",";
                    continue;
                }
                const MeanStd ms = mean_std(it->second);
                wide << "," << fmt_f4(ms.mean) << "±" << fmt_f4(ms.std);
            }
            wide << "\n";
        }
        write_text(rep / (std::string(metric) + "_table.csv"), wide.str());
    }

    summary["seeds"] = scan.seeds;
    write_text(rep / "summary.json", summary.dump(2) + "\n");
    impl_->log(cfg_, "report written to " + (rep).string());
}

}  // namespace sa
