#ifndef NEAT_NEAT_H
#define NEAT_NEAT_H

/* C interface to the neat early-exit pipeline.
 *
 * Objects are opaque handles created by neat_*_create/load functions and
 * released with the matching neat_*_free. Every fallible call returns a
 * neat_status; on failure neat_last_error() describes the problem for the
 * calling thread until its next failing call. Strings returned through
 * `char**` out-parameters are owned by the caller and released with
 * neat_free_string.
 *
 * Handles are not synchronized. Models, exit sets and configs are never
 * mutated by generation, calibration or replay, so they may be shared
 * between threads that only read them. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NEAT_API __declspec(dllexport)
#elif defined(NEAT_BUILDING_LIBRARY)
#define NEAT_API __attribute__((visibility("default")))
#else
#define NEAT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum neat_status {
  NEAT_OK = 0,
  NEAT_ERR_INVALID_ARGUMENT = 1,
  NEAT_ERR_DIMENSION = 2,
  NEAT_ERR_VOCABULARY = 3,
  NEAT_ERR_FORMAT = 4,
  NEAT_ERR_VALIDATION = 5,
  NEAT_ERR_COVERAGE = 6,
  NEAT_ERR_COMPATIBILITY = 7,
  NEAT_ERR_PATH = 8,
  NEAT_ERR_CALIBRATION_INPUT = 9,
  NEAT_ERR_NO_SIGNAL = 10,
  NEAT_ERR_IO = 11,
  NEAT_ERR_INTERNAL = 12
} neat_status;

typedef struct neat_model neat_model_t;
typedef struct neat_config neat_config_t;
typedef struct neat_exit_set neat_exit_set_t;
typedef struct neat_generation neat_generation_t;
typedef struct neat_calibration neat_calibration_t;
typedef struct neat_replay neat_replay_t;

typedef struct neat_dims {
  uint32_t layers;
  uint32_t d_model;
  uint32_t d_ff;
  uint32_t vocab;
  uint32_t heads;
} neat_dims;

/* Output flavour of the render functions. */
typedef enum neat_format { NEAT_FORMAT_TABLE = 0, NEAT_FORMAT_RECORDS = 1 } neat_format;

NEAT_API const char* neat_last_error(void);
NEAT_API const char* neat_status_name(neat_status status);
NEAT_API void neat_free_string(char* s);
NEAT_API const char* neat_version(void);

/* ---- configuration ---- */

NEAT_API neat_status neat_config_default(uint32_t vocab, neat_config_t** out);
NEAT_API neat_status neat_config_load(const char* path, neat_config_t** out);
NEAT_API neat_status neat_config_clone(const neat_config_t* config, neat_config_t** out);
/* Numeric parameters by name: tau_sim, tau_sup, tau_mag, tau_com, tau_cons,
 * tau_ent, k, min_set_size, check_stride, warmup_steps,
 * calibration_set_size, max_steps, seed, temperature. */
NEAT_API neat_status neat_config_set(neat_config_t* config, const char* name, double value);
NEAT_API neat_status neat_config_get(const neat_config_t* config, const char* name, double* out);
/* "full", "suppress-only" or "exit-only". */
NEAT_API neat_status neat_config_set_mode(neat_config_t* config, const char* mode);
/* "greedy" or "categorical". */
NEAT_API neat_status neat_config_set_sampling(neat_config_t* config, const char* sampling);
NEAT_API neat_status neat_config_to_json(const neat_config_t* config, char** out);
NEAT_API void neat_config_free(neat_config_t* config);

/* ---- models ---- */

NEAT_API neat_status neat_model_init_random(const neat_dims* dims, uint64_t seed, neat_model_t** out);
/* Toy model with one planted exit neuron (see the model card). */
NEAT_API neat_status neat_model_init_planted(uint64_t seed, neat_model_t** out);
NEAT_API neat_status neat_model_load(const char* path, neat_model_t** out);
NEAT_API neat_status neat_model_save(const neat_model_t* model, const char* path);
NEAT_API neat_status neat_model_dims(const neat_model_t* model, neat_dims* out);
/* Prompts for the model, one per line as space-separated token ids. Planted
 * models draw from their reasoning chain; others from content tokens. */
NEAT_API neat_status neat_model_prompts(const neat_model_t* model, size_t count, uint64_t seed, char** out);
NEAT_API void neat_model_free(neat_model_t* model);

/* ---- exit-neuron sets ---- */

NEAT_API neat_status neat_exit_set_load(const char* path, neat_exit_set_t** out);
NEAT_API neat_status neat_exit_set_save(const neat_exit_set_t* set, const char* path);
NEAT_API size_t neat_exit_set_size(const neat_exit_set_t* set);
NEAT_API neat_status neat_exit_set_dims(const neat_exit_set_t* set, neat_dims* out);
NEAT_API void neat_exit_set_free(neat_exit_set_t* set);

/* ---- generation ---- */

/* `set` may be NULL for vanilla decoding. */
NEAT_API neat_status neat_generate(const neat_model_t* model, const neat_config_t* config, const uint32_t* prompt,
                                   size_t prompt_length, const neat_exit_set_t* set, int record_trace,
                                   neat_generation_t** out);
NEAT_API size_t neat_generation_length(const neat_generation_t* gen);
NEAT_API const uint32_t* neat_generation_tokens(const neat_generation_t* gen);
/* "termination-token", "controller-exit" or "max-steps". */
NEAT_API const char* neat_generation_stop_reason(const neat_generation_t* gen);
NEAT_API neat_status neat_generation_write_trace(const neat_generation_t* gen, const char* path);
/* Decision log with the given reference (vanilla) length; 0 omits it. */
NEAT_API neat_status neat_generation_decision_log(const neat_generation_t* gen, const char* name,
                                                  uint32_t reference_length, char** out);
NEAT_API void neat_generation_free(neat_generation_t* gen);

/* ---- calibration ---- */

typedef enum neat_calibration_status {
  NEAT_CALIBRATION_OK = 0,
  NEAT_CALIBRATION_EMPTY = 1,
  NEAT_CALIBRATION_BELOW_FLOOR = 2
} neat_calibration_status;

/* Reads the traces (in parallel), scores raw snapshots against `model` when
 * given, and selects the exit-neuron set. */
NEAT_API neat_status neat_calibrate(const char* const* trace_paths, size_t count, const neat_model_t* model,
                                    const neat_config_t* config, neat_calibration_t** out);
NEAT_API neat_calibration_status neat_calibration_result(const neat_calibration_t* cal);
NEAT_API neat_status neat_calibration_render(const neat_calibration_t* cal, neat_format format, char** out);
/* Fails with NEAT_ERR_NO_SIGNAL when the selection is empty. */
NEAT_API neat_status neat_calibration_exit_set(const neat_calibration_t* cal, neat_exit_set_t** out);
NEAT_API void neat_calibration_free(neat_calibration_t* cal);

/* ---- replay and reporting ---- */

/* Traces the set does not cover are skipped and listed in the report. */
NEAT_API neat_status neat_replay(const char* const* trace_paths, size_t count, const neat_exit_set_t* set,
                                 const neat_config_t* config, neat_replay_t** out);
NEAT_API neat_status neat_replay_render(const neat_replay_t* replay, neat_format format, char** out);
NEAT_API double neat_replay_mean_length_reduction(const neat_replay_t* replay);
NEAT_API size_t neat_replay_skipped(const neat_replay_t* replay);
NEAT_API uint32_t neat_replay_counterfactual_suppressions(const neat_replay_t* replay);
/* Writes one .neatdec per replayed trace into `directory`. */
NEAT_API neat_status neat_replay_write_logs(const neat_replay_t* replay, const char* directory);
NEAT_API void neat_replay_free(neat_replay_t* replay);

/* Aggregates .neatdec files. */
NEAT_API neat_status neat_report(const char* const* log_paths, size_t count, neat_format format, char** out);

#ifdef __cplusplus
}
#endif

#endif /* NEAT_NEAT_H */
