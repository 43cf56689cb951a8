// Command-line driver for the slidealign engine. Talks to the engine
// exclusively through the C API; exit codes are the sa_status values, so
// config (2), data (3) and numeric (4) failures are distinguishable.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slidealign/capi.h"

namespace {

struct EngineDeleter {
    void operator()(sa_engine* e) const { sa_engine_close(e); }
};
using EnginePtr = std::unique_ptr<sa_engine, EngineDeleter>;

struct CommonOpts {
    std::string config;
    std::vector<std::string> overrides;
    std::vector<uint64_t> seeds;
    std::string mode;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_mode) {
    cmd->add_option("-c,--config", opts.config, "experiment config (JSON)")->required();
    cmd->add_option("--set", opts.overrides,
                    "config override as dotted.path=value (repeatable)");
    cmd->add_option("--seed", opts.seeds, "seed subset (default: all seeds in the config)");
    if (with_mode)
        cmd->add_option("--mode", opts.mode,
                        "baseline_single | baseline_multi | pretrained_single | pretrained_multi");
}

int open_engine(const CommonOpts& opts, EnginePtr& engine) {
    std::vector<const char*> ovs;
    ovs.reserve(opts.overrides.size());
    for (const auto& s : opts.overrides) ovs.push_back(s.c_str());
    sa_engine* raw = nullptr;
    const sa_status st = sa_engine_open(opts.config.c_str(), ovs.data(), ovs.size(), &raw);
    if (st != SA_OK) {
        std::fprintf(stderr, "error: %s\n", sa_last_error());
        return st;
    }
    engine.reset(raw);
    return SA_OK;
}

std::vector<uint64_t> effective_seeds(const EnginePtr& engine, const CommonOpts& opts) {
    if (!opts.seeds.empty()) return opts.seeds;
    std::vector<uint64_t> seeds;
    for (size_t i = 0; i < sa_engine_num_seeds(engine.get()); ++i)
        seeds.push_back(sa_engine_seed(engine.get(), i));
    return seeds;
}

int check(const EnginePtr& engine, sa_status st) {
    if (st != SA_OK) {
        std::fprintf(stderr, "error: %s\n", sa_engine_error(engine.get()));
        return st;
    }
    return SA_OK;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised multi-scanner alignment pipeline"};
    app.require_subcommand(1);

    CommonOpts gen_opts, pre_opts, fin_opts, eval_opts, rep_opts;
    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic multi-scanner dataset");
    add_common(gen, gen_opts, false);
    CLI::App* pre = app.add_subcommand("pretrain", "stage 1: self-supervised alignment pretraining");
    add_common(pre, pre_opts, false);
    CLI::App* fin = app.add_subcommand("finetune", "stage 2: supervised segmentation fine-tuning");
    add_common(fin, fin_opts, true);
    CLI::App* evl = app.add_subcommand("eval", "tiled full-slide evaluation of a fine-tuned model");
    add_common(evl, eval_opts, true);
    CLI::App* rep = app.add_subcommand("report", "aggregate all runs into the report bundle");
    add_common(rep, rep_opts, false);

    CLI11_PARSE(app, argc, argv);

    EnginePtr engine;
    if (gen->parsed()) {
        if (int rc = open_engine(gen_opts, engine)) return rc;
        return check(engine, sa_gen_data(engine.get()));
    }
    if (pre->parsed()) {
        if (int rc = open_engine(pre_opts, engine)) return rc;
        for (uint64_t seed : effective_seeds(engine, pre_opts)) {
            std::printf("pretrain seed %llu -> %s\n", static_cast<unsigned long long>(seed),
                        sa_engine_run_dir(engine.get()));
            if (int rc = check(engine, sa_pretrain(engine.get(), seed))) return rc;
        }
        return 0;
    }
    if (fin->parsed()) {
        if (int rc = open_engine(fin_opts, engine)) return rc;
        const char* mode = fin_opts.mode.empty() ? nullptr : fin_opts.mode.c_str();
        for (uint64_t seed : effective_seeds(engine, fin_opts)) {
            std::printf("finetune %s seed %llu\n", mode ? mode : "(config mode)",
                        static_cast<unsigned long long>(seed));
            if (int rc = check(engine, sa_finetune(engine.get(), mode, seed))) return rc;
        }
        return 0;
    }
    if (evl->parsed()) {
        if (int rc = open_engine(eval_opts, engine)) return rc;
        const char* mode = eval_opts.mode.empty() ? nullptr : eval_opts.mode.c_str();
        for (uint64_t seed : effective_seeds(engine, eval_opts)) {
            std::printf("eval %s seed %llu\n", mode ? mode : "(config mode)",
                        static_cast<unsigned long long>(seed));
            if (int rc = check(engine, sa_eval(engine.get(), mode, seed))) return rc;
        }
        return 0;
    }
    if (rep->parsed()) {
        if (int rc = open_engine(rep_opts, engine)) return rc;
        if (int rc = check(engine, sa_report(engine.get()))) return rc;
        std::printf("report: %s/report\n", sa_engine_run_dir(engine.get()));
        return 0;
    }
    return SA_ERR_USAGE;
}
