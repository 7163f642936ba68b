#ifndef BHFL_BHFL_H
#define BHFL_BHFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(BHFL_BUILDING_LIBRARY)
#define BHFL_API __attribute__((visibility("default")))
#else
#define BHFL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bhfl_status {
  BHFL_OK = 0,
  BHFL_ERR_CONFIG = 1,   /* invalid configuration or missing dataset */
  BHFL_ERR_RUN = 2,      /* failure while running or writing results */
  BHFL_ERR_USAGE = 3,    /* null handle, bad argument */
  BHFL_ERR_NUMERIC = 4,  /* non-finite values */
} bhfl_status;

typedef struct bhfl_config bhfl_config;
typedef struct bhfl_bundle bhfl_bundle;

/* Called after every evaluated round. Returning nonzero cancels the run. */
typedef int (*bhfl_progress_fn)(void* user, uint64_t seed, int round, int rounds, double average);

/* Message of the last failing call on this thread; never NULL. */
BHFL_API const char* bhfl_last_error(void);
BHFL_API const char* bhfl_version(void);

/* Strings returned through char** are owned by the caller. */
BHFL_API void bhfl_string_free(char* s);

BHFL_API bhfl_status bhfl_config_default(bhfl_config** out);
BHFL_API bhfl_status bhfl_config_load(const char* path, bhfl_config** out);
BHFL_API bhfl_status bhfl_config_from_json(const char* text, bhfl_config** out);
/* "key=value", dotted keys for nested objects. */
BHFL_API bhfl_status bhfl_config_override(bhfl_config* cfg, const char* assignment);
BHFL_API bhfl_status bhfl_config_validate(const bhfl_config* cfg);
BHFL_API bhfl_status bhfl_config_to_json(const bhfl_config* cfg, char** out);
BHFL_API bhfl_status bhfl_config_hash(const bhfl_config* cfg, char** out);
BHFL_API void bhfl_config_free(bhfl_config* cfg);

/* Runs every seed listed in the config, in order. */
BHFL_API bhfl_status bhfl_run(const bhfl_config* cfg, bhfl_progress_fn progress, void* user,
                              bhfl_bundle** out);
BHFL_API bhfl_status bhfl_bundle_write(const bhfl_bundle* bundle, const char* dir, int force);
BHFL_API bhfl_status bhfl_bundle_load(const char* dir, bhfl_bundle** out);
BHFL_API bhfl_status bhfl_bundle_summary_json(const bhfl_bundle* bundle, char** out);
BHFL_API bhfl_status bhfl_bundle_equal(const bhfl_bundle* a, const bhfl_bundle* b, int* equal);
BHFL_API void bhfl_bundle_free(bhfl_bundle* bundle);

BHFL_API bhfl_status bhfl_compare(const bhfl_bundle* const* bundles, size_t count, char** table);

/* suites: comma-separated names or NULL for all; fault: NULL or "none" for a
   healthy run. all_pass may be NULL. */
BHFL_API bhfl_status bhfl_oracles(const char* suites, const char* fault, char** report_json,
                                  int* all_pass);

/* Describes a config file, a results directory or a dequantizer checkpoint. */
BHFL_API bhfl_status bhfl_inspect(const char* path, char** text);

#ifdef __cplusplus
}
#endif

#endif
