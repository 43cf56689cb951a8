#include "slidealign/capi.h"

#include <string>

#include "slidealign/experiment.hpp"

using sa::Engine;
using sa::ErrKind;
using sa::Error;

struct sa_engine {
    Engine engine;
    std::string last_error;
    std::string run_dir;

    explicit sa_engine(sa::ExperimentConfig cfg) : engine(std::move(cfg)) {
        run_dir = engine.run_dir();
    }
};

namespace {

thread_local std::string g_last_error;

sa_status status_of(ErrKind kind) {
    switch (kind) {
        case ErrKind::config: return SA_ERR_CONFIG;
        case ErrKind::data: return SA_ERR_DATA;
        case ErrKind::label: return SA_ERR_DATA;
        case ErrKind::numeric: return SA_ERR_NUMERIC;
        case ErrKind::io: return SA_ERR_IO;
        case ErrKind::dimension: return SA_ERR_CONTRACT;
        case ErrKind::contract: return SA_ERR_CONTRACT;
        case ErrKind::batch_size: return SA_ERR_CONTRACT;
        case ErrKind::metric: return SA_ERR_NUMERIC;
    }
    return SA_ERR_INTERNAL;
}

template <typename Fn>
sa_status guarded(sa_engine* engine, Fn&& fn) {
    if (!engine) return SA_ERR_USAGE;
    engine->last_error.clear();
    try {
        fn();
        return SA_OK;
    } catch (const Error& e) {
        engine->last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        engine->last_error = e.what();
        return SA_ERR_INTERNAL;
    }
}

}  // namespace

extern "C" {

const char* sa_version(void) { return "0.1.0"; }

const char* sa_last_error(void) { return g_last_error.c_str(); }

sa_status sa_engine_open(const char* config_path, const char* const* overrides, size_t n_overrides,
                         sa_engine** out) {
    if (!config_path || !out || (n_overrides > 0 && !overrides)) return SA_ERR_USAGE;
    *out = nullptr;
    try {
        std::vector<std::string> ovs;
        ovs.reserve(n_overrides);
        for (size_t i = 0; i < n_overrides; ++i) ovs.emplace_back(overrides[i]);
        *out = new sa_engine(sa::load_config(config_path, ovs));
        return SA_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SA_ERR_INTERNAL;
    }
}

void sa_engine_close(sa_engine* engine) { delete engine; }

const char* sa_engine_error(const sa_engine* engine) {
    return engine ? engine->last_error.c_str() : "null engine";
}

const char* sa_engine_run_dir(const sa_engine* engine) {
    return engine ? engine->run_dir.c_str() : "";
}

size_t sa_engine_num_seeds(const sa_engine* engine) {
    return engine ? engine->engine.config().seeds.size() : 0;
}

uint64_t sa_engine_seed(const sa_engine* engine, size_t index) {
    if (!engine || index >= engine->engine.config().seeds.size()) return 0;
    return engine->engine.config().seeds[index];
}

sa_status sa_gen_data(sa_engine* engine) {
    return guarded(engine, [&] { engine->engine.gen_data(); });
}

sa_status sa_pretrain(sa_engine* engine, uint64_t seed) {
    return guarded(engine, [&] { engine->engine.pretrain(seed); });
}

sa_status sa_finetune(sa_engine* engine, const char* mode, uint64_t seed) {
    return guarded(engine, [&] {
        const sa::Mode m = mode ? sa::mode_from_name(mode) : engine->engine.config().mode;
        engine->engine.finetune(m, seed);
    });
}

sa_status sa_eval(sa_engine* engine, const char* mode, uint64_t seed) {
    return guarded(engine, [&] {
        const sa::Mode m = mode ? sa::mode_from_name(mode) : engine->engine.config().mode;
        engine->engine.evaluate(m, seed);
    });
}

sa_status sa_report(sa_engine* engine) {
    return guarded(engine, [&] { engine->engine.report(); });
}

}  // extern "C"
