#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidealign/dataset.hpp"
#include "slidealign/model.hpp"

namespace sa {

// The four experiment arms: initialization (fresh vs. pretrained encoder)
// crossed with the fine-tuning domain set (reference only vs. all training
// domains).
enum class Mode { baseline_single, baseline_multi, pretrained_single, pretrained_multi };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);
bool mode_uses_pretraining(Mode m);
bool mode_is_multi_domain(Mode m);
inline std::vector<Mode> all_modes() {
    return {Mode::baseline_single, Mode::baseline_multi, Mode::pretrained_single,
            Mode::pretrained_multi};
}

struct Stage1Params {
    int epochs = 200;
    int batch = 64;
    double max_lr = 1e-6;
    double lambda = 5e-3;
    int per_slide = 50;
    double bg_frac = 0.10;
};

struct Stage2Params {
    int epochs = 100;
    int batch = 8;
    double max_lr = 1e-4;
    int per_slide = 50;
    double bg_frac = 0.10;
};

struct ModelParams {
    std::vector<int> block_channels = {8, 16, 32, 64};
    int patch = 64;
};

struct EvalParams {
    int window = 0;   // 0: use the training patch size
    int overlap = 0;  // 0: half the window
};

struct ExperimentConfig {
    std::string manifest = "data/manifest.json";
    std::string out_dir = "runs";
    std::vector<uint64_t> seeds = {1, 2, 3};
    Mode mode = Mode::baseline_single;
    int val_per_slide = 50;
    double base_lr_ratio = 0.1;  // cyclic base_lr = ratio * max_lr
    DatasetParams dataset;
    Stage1Params stage1;
    Stage2Params stage2;
    ModelParams model;
    EvalParams eval;
    bool verbose = true;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Load a config file and apply "dotted.path=value" overrides on the raw JSON
// before parsing.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

// Hash of the reproducibility-relevant config subset (everything except
// mode, seed list, output directory and verbosity). Runs of all modes and
// seeds of one configuration share a run directory keyed by this hash.
uint64_t config_hash(const ExperimentConfig& cfg);

struct PretrainResult {
    std::string checkpoint;
    // epoch -> (domain -> mean cosine distance to the reference domain)
    std::vector<std::vector<double>> trace;
};

struct FinetuneResult {
    std::string checkpoint;
    int selected_epoch = 0;
    double best_val_miou = 0.0;
    uint64_t patch_order_hash = 0;  // over all epochs
};

struct EvalResult {
    std::vector<double> miou;         // per domain
    std::vector<double> concordance;  // per domain, vs. the reference masks
};

class Engine {
public:
    explicit Engine(ExperimentConfig cfg);
    ~Engine();

    const ExperimentConfig& config() const { return cfg_; }
    std::string run_dir() const;

    // Generate the synthetic multi-scanner dataset described by the config's
    // dataset section into the manifest's directory.
    void gen_data();

    PretrainResult pretrain(uint64_t seed);
    FinetuneResult finetune(Mode mode, uint64_t seed);
    EvalResult evaluate(Mode mode, uint64_t seed);

    // Aggregate every run found under the run directory into the report
    // bundle (alignment traces, mIoU table, concordance table).
    void report() const;

    const Dataset& dataset();

private:
    struct Impl;
    ExperimentConfig cfg_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace sa
