#ifndef SLIDEALIGN_CAPI_H
#define SLIDEALIGN_CAPI_H

/* C API of the slidealign engine. The engine is an opaque handle created
 * from a JSON experiment config; every operation returns a status code and
 * the last error message is retrievable from the handle. The CLI is a thin
 * client of this header. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SA_API __declspec(dllexport)
#else
#define SA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sa_status {
    SA_OK = 0,
    SA_ERR_USAGE = 1,    /* bad arguments to the API itself */
    SA_ERR_CONFIG = 2,   /* invalid or inconsistent configuration */
    SA_ERR_DATA = 3,     /* dataset/manifest problems */
    SA_ERR_NUMERIC = 4,  /* NaN/Inf or degenerate numerics */
    SA_ERR_IO = 5,       /* file I/O failures */
    SA_ERR_CONTRACT = 6, /* violated internal precondition */
    SA_ERR_INTERNAL = 7
} sa_status;

typedef struct sa_engine sa_engine;

SA_API const char* sa_version(void);

/* Error message of the most recent failing call on any thread when no engine
 * exists yet (e.g. a failed sa_engine_open). */
SA_API const char* sa_last_error(void);

/* Create an engine from a JSON config file. `overrides` holds n_overrides
 * strings of the form "dotted.path=value" applied to the raw JSON. */
SA_API sa_status sa_engine_open(const char* config_path, const char* const* overrides,
                                size_t n_overrides, sa_engine** out);

SA_API void sa_engine_close(sa_engine* engine);

/* Last error message recorded on this engine, empty string if none. */
SA_API const char* sa_engine_error(const sa_engine* engine);

/* Run directory (out_dir/<config-hash>) every verb writes into. */
SA_API const char* sa_engine_run_dir(const sa_engine* engine);

SA_API size_t sa_engine_num_seeds(const sa_engine* engine);
SA_API uint64_t sa_engine_seed(const sa_engine* engine, size_t index);

/* The five pipeline verbs. `mode` is one of baseline_single, baseline_multi,
 * pretrained_single, pretrained_multi; NULL selects the config's mode. */
SA_API sa_status sa_gen_data(sa_engine* engine);
SA_API sa_status sa_pretrain(sa_engine* engine, uint64_t seed);
SA_API sa_status sa_finetune(sa_engine* engine, const char* mode, uint64_t seed);
SA_API sa_status sa_eval(sa_engine* engine, const char* mode, uint64_t seed);
SA_API sa_status sa_report(sa_engine* engine);

#ifdef __cplusplus
}
#endif

#endif /* SLIDEALIGN_CAPI_H */
