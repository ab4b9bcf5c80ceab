/* Copyright 2026 The VFPT Lab Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License. */

/* C interface to the VFPT lab library. Every handle is opaque; every
 * fallible call returns a vfpt_status and records a message retrievable
 * with vfpt_last_error() on the calling thread. */

#ifndef VFPT_VFPT_H_
#define VFPT_VFPT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VFPT_API __declspec(dllexport)
#else
#define VFPT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vfpt_status {
  VFPT_OK = 0,
  VFPT_ERR_CONFIG = 1,
  VFPT_ERR_SELFTEST = 2,
  VFPT_ERR_IO = 3,
  VFPT_ERR_INTERNAL = 4
} vfpt_status;

typedef struct vfpt_config vfpt_config;
typedef struct vfpt_checkpoint vfpt_checkpoint;

/* Message of the last failed call on this thread ("" if none). */
VFPT_API const char* vfpt_last_error(void);
/* Offending config key of the last failed call, or "". */
VFPT_API const char* vfpt_last_error_key(void);

VFPT_API const char* vfpt_build_id(void);
VFPT_API size_t vfpt_command_count(void);
VFPT_API const char* vfpt_command_name(size_t index);

/* Configuration with every key at its default. */
VFPT_API vfpt_status vfpt_config_new(vfpt_config** out);
VFPT_API vfpt_status vfpt_config_load(const char* path, vfpt_config** out);
VFPT_API vfpt_status vfpt_config_parse(const char* text, vfpt_config** out);
/* key is "section.name", e.g. "prompt.alpha". */
VFPT_API vfpt_status vfpt_config_set(vfpt_config* config, const char* key, const char* value);
/* assignment is "section.name=value". */
VFPT_API vfpt_status vfpt_config_apply(vfpt_config* config, const char* assignment);
VFPT_API vfpt_status vfpt_config_validate(const vfpt_config* config);
/* Writes the resolved config text into buffer (NUL-terminated, truncated
 * to capacity) and returns the full length excluding the terminator. */
VFPT_API size_t vfpt_config_to_string(const vfpt_config* config, char* buffer, size_t capacity);
VFPT_API void vfpt_config_free(vfpt_config* config);

/* Runs one subcommand. A failed selftest returns VFPT_ERR_SELFTEST. */
VFPT_API vfpt_status vfpt_run(const vfpt_config* config, const char* command);
/* One-line summary of the last vfpt_run on this thread. */
VFPT_API const char* vfpt_last_summary(void);
VFPT_API size_t vfpt_last_artifact_count(void);
VFPT_API const char* vfpt_last_artifact(size_t index);

VFPT_API vfpt_status vfpt_checkpoint_load(const char* path, vfpt_checkpoint** out);
VFPT_API size_t vfpt_checkpoint_count(const vfpt_checkpoint* checkpoint);
VFPT_API const char* vfpt_checkpoint_name(const vfpt_checkpoint* checkpoint, size_t index);
VFPT_API size_t vfpt_checkpoint_numel(const vfpt_checkpoint* checkpoint, size_t index);
VFPT_API const double* vfpt_checkpoint_data(const vfpt_checkpoint* checkpoint, size_t index);
VFPT_API uint64_t vfpt_checkpoint_checksum(const vfpt_checkpoint* checkpoint);
VFPT_API void vfpt_checkpoint_free(vfpt_checkpoint* checkpoint);

#ifdef __cplusplus
}
#endif

#endif /* VFPT_VFPT_H_ */
