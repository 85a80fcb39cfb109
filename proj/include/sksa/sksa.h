#ifndef SKSA_SKSA_H
#define SKSA_SKSA_H

#include <stddef.h>
#include <stdint.h>

#if defined(SKSA_BUILDING)
#define SKSA_API __attribute__((visibility("default")))
#else
#define SKSA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sksa_status {
    SKSA_OK = 0,
    SKSA_INVALID_ARGUMENT = 1,
    SKSA_ZERO_VECTOR = 2,
    SKSA_NON_FINITE = 3,
    SKSA_DIMENSION_MISMATCH = 4,
    SKSA_DUPLICATE_ID = 5,
    SKSA_EMPTY_INDEX = 6,
    SKSA_IO_FAILURE = 7,
    SKSA_BAD_MAGIC = 8,
    SKSA_UNSUPPORTED_VERSION = 9,
    SKSA_TRUNCATED_FILE = 10,
    SKSA_BACKEND_TIMEOUT = 11,
    SKSA_MALFORMED_RESPONSE = 12,
    SKSA_BACKEND_REFUSAL = 13,
    SKSA_BACKEND_ERROR = 14,
    SKSA_PARSE_FAILURE = 15,
    SKSA_UNKNOWN_TOOL = 16,
    SKSA_BAD_ARGUMENTS = 17,
    SKSA_MAX_ITERATIONS_EXCEEDED = 18,
    SKSA_EMPTY_UPDATE = 19,
    SKSA_MISSING_SKETCH = 20,
    SKSA_UNKNOWN_MODE = 21,
    SKSA_FIXTURE_MISSING = 22,
    SKSA_BUSY = 23,
    SKSA_UNKNOWN_SESSION = 24,
    SKSA_PARSE_ERROR = 25,
    SKSA_MISSING_FIELD = 26,
    SKSA_IMAGE_READ_ERROR = 27,
    SKSA_EMPTY_CATALOG = 28,
    SKSA_BUILD_INTERRUPTED = 29,
    SKSA_NOT_FOUND = 30,
    SKSA_JUDGE_CONFLICT = 31,
    SKSA_INTERNAL = 99
} sksa_status;

typedef struct sksa_index sksa_index;
typedef struct sksa_engine sksa_engine;

SKSA_API const char* sksa_version(void);
SKSA_API const char* sksa_status_name(sksa_status status);
/* Message of the last failed call on this thread; "" if none. */
SKSA_API const char* sksa_last_error(void);
/* Frees any string returned through a char** out-parameter. */
SKSA_API void sksa_string_free(char* s);

/* ---- index ---------------------------------------------------------- */

/* backend: "mock" or "http". On success *report_json (nullable) receives
   {"records": n, "dim": d, "out": path}. */
SKSA_API sksa_status sksa_index_build(const char* catalog_path, const char* out_path, uint32_t dim,
                                      int strict_images, const char* backend, char** report_json);
SKSA_API sksa_status sksa_index_load(const char* path, sksa_index** out);
SKSA_API void sksa_index_free(sksa_index* index);
SKSA_API size_t sksa_index_size(const sksa_index* index);
SKSA_API uint32_t sksa_index_dim(const sksa_index* index);
/* *passed is 1 when every check holds; *report_text is human readable. */
SKSA_API sksa_status sksa_index_verify(const sksa_index* index, const char* catalog_path, int* passed,
                                       char** report_text);
/* Embeds image bytes with the backend's embedder and ranks. *results_tsv has
   one "id<TAB>score" line per result. */
SKSA_API sksa_status sksa_index_query_image(const sksa_index* index, const char* backend, const uint8_t* image,
                                            size_t image_len, size_t k, char** results_tsv);

/* ---- engine (orchestrator + memory + backends) ----------------------- */

/* config_json keys: index (required), memory, backend ("mock"|"http"),
   generate ("mock"|"passthrough"|"http"), chat_fixture, prompts_dir, k,
   max_iterations. */
SKSA_API sksa_status sksa_engine_create(const char* config_json, sksa_engine** out);
SKSA_API void sksa_engine_free(sksa_engine* engine);
/* mode: "full", "no_refine", "tools_only", "memory_only". */
SKSA_API sksa_status sksa_engine_session_create(sksa_engine* engine, const char* mode, char** session_id);
/* sketch may be NULL. *result_json receives the step result wire form. */
SKSA_API sksa_status sksa_engine_step(sksa_engine* engine, const char* session_id, const char* query,
                                      const uint8_t* sketch, size_t sketch_len, char** result_json);
/* Replays a JSON-lines transcript in a fresh session; *golden_json is the timing-free record. */
SKSA_API sksa_status sksa_engine_replay(sksa_engine* engine, const char* transcript_path, const char* mode,
                                        char** golden_json);
/* Starts the HTTP service in the background; *port receives the bound port. */
SKSA_API sksa_status sksa_engine_serve_start(sksa_engine* engine, const char* host, int port,
                                             const char* cors_origin, int* bound_port);
SKSA_API void sksa_engine_serve_stop(sksa_engine* engine);
/* Blocks serving until the process is signalled. */
SKSA_API sksa_status sksa_engine_serve(sksa_engine* engine, const char* host, int port, const char* cors_origin);

/* ---- evaluation ----------------------------------------------------- */

/* command: "latency", "success", "personalize", "ablations".
   config_json keys: index (required), samples, judge ("scripted:<file>",
   "tagmatch", "http"), likert_judge, n, mode, backend, generate,
   chat_fixture, parallelism, latency_runs.
   *report_json receives {"text": ..., "csv": ..., ...}. */
SKSA_API sksa_status sksa_eval_run(const char* command, const char* config_json, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
