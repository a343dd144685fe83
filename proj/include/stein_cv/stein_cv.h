#ifndef STEIN_CV_H_
#define STEIN_CV_H_

#include <stddef.h>
#include <stdint.h>

#if defined(STEIN_CV_BUILDING_LIBRARY)
#define SCV_API __attribute__((visibility("default")))
#else
#define SCV_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scv_status {
  SCV_OK = 0,
  SCV_CHECK_FAILED = 1,
  SCV_ERR_CONFIG = 2,
  SCV_ERR_INVALID_ARGUMENT = 3,
  SCV_ERR_DIMENSION = 4,
  SCV_ERR_UNSUPPORTED = 5,
  SCV_ERR_NUMERIC = 6,
  SCV_ERR_DIVERGENCE = 7,
  SCV_ERR_IO = 8,
  SCV_ERR_INTERNAL = 9
} scv_status;

typedef enum scv_experiment {
  SCV_VARIANCE_EVAL = 0,
  SCV_TRAIN = 1,
  SCV_IDENTITY_CHECK = 2
} scv_experiment;

typedef struct scv_config scv_config;
typedef struct scv_report scv_report;

SCV_API const char* scv_version(void);
SCV_API const char* scv_status_string(scv_status status);
/* Message of the last failing call on this thread, "" if none. */
SCV_API const char* scv_last_error(void);

SCV_API scv_status scv_config_load(const char* path, scv_config** out);
SCV_API scv_status scv_config_parse(const char* text, scv_config** out);
SCV_API scv_status scv_config_set_kind(scv_config* config, scv_experiment kind);
/* Also replaces the training seed list with {seed}. */
SCV_API scv_status scv_config_set_seed(scv_config* config, uint64_t seed);
SCV_API scv_status scv_config_set_threads(scv_config* config, int threads);
/* *out is released with scv_string_free. */
SCV_API scv_status scv_config_render(const scv_config* config, char** out);
/* out receives 16 hex digits and a terminating NUL. */
SCV_API scv_status scv_config_hash(const scv_config* config, char out[17]);
SCV_API void scv_config_free(scv_config* config);

/* SCV_OK with a report even when identity checks fail; see scv_report_all_passed. */
SCV_API scv_status scv_run(const scv_config* config, scv_report** out);

SCV_API int scv_report_all_passed(const scv_report* report);
SCV_API size_t scv_report_num_rows(const scv_report* report);
SCV_API scv_status scv_report_csv(const scv_report* report, char** out);
SCV_API scv_status scv_report_write(const scv_report* report, const char* path);
SCV_API void scv_report_free(scv_report* report);

SCV_API void scv_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif  // STEIN_CV_H_
