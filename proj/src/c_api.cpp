// Copyright 2026 The VFPT Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vfpt/vfpt.h"

#include <cstring>
#include <new>
#include <string>
#include <vector>

#include "vfpt/errors.hpp"
#include "vfpt/io.hpp"
#include "vfpt/runner.hpp"

struct vfpt_config {
  vfpt::io::RunConfig value;
};

struct vfpt_checkpoint {
  std::vector<std::string> names;
  std::vector<vfpt::Tensor> tensors;
  std::uint64_t checksum = 0;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_key;
thread_local vfpt::runner::Outcome last_outcome;

void clear_error() {
  last_error.clear();
  last_key.clear();
}

vfpt_status fail(vfpt_status status, std::string message, std::string key = {}) {
  last_error = std::move(message);
  last_key = std::move(key);
  return status;
}

template <typename Fn>
vfpt_status guarded(Fn&& fn) {
  clear_error();
  try {
    return fn();
  } catch (const vfpt::ConfigError& e) {
    return fail(VFPT_ERR_CONFIG, e.what(), e.key());
  } catch (const vfpt::FormatError& e) {
    return fail(VFPT_ERR_IO,
                std::string(e.what()) + " (byte offset " + std::to_string(e.offset()) + ")");
  } catch (const vfpt::IoError& e) {
    return fail(VFPT_ERR_IO, e.what());
  } catch (const vfpt::Error& e) {
    return fail(VFPT_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(VFPT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(VFPT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(VFPT_ERR_INTERNAL, "unknown error");
  }
}

vfpt_status require(const void* p, const char* what) {
  if (p == nullptr) return fail(VFPT_ERR_CONFIG, std::string(what) + " is null");
  return VFPT_OK;
}

}  // namespace

extern "C" {

const char* vfpt_last_error(void) { return last_error.c_str(); }
const char* vfpt_last_error_key(void) { return last_key.c_str(); }
const char* vfpt_build_id(void) { return vfpt::runner::build_id(); }

size_t vfpt_command_count(void) { return vfpt::runner::commands().size(); }

const char* vfpt_command_name(size_t index) {
  const auto& names = vfpt::runner::commands();
  return index < names.size() ? names[index].c_str() : nullptr;
}

vfpt_status vfpt_config_new(vfpt_config** out) {
  if (require(out, "out") != VFPT_OK) return VFPT_ERR_CONFIG;
  return guarded([&] {
    *out = new vfpt_config{};
    return VFPT_OK;
  });
}

vfpt_status vfpt_config_load(const char* path, vfpt_config** out) {
  if (require(out, "out") != VFPT_OK || require(path, "path") != VFPT_OK) return VFPT_ERR_CONFIG;
  return guarded([&] {
    *out = new vfpt_config{vfpt::io::load_run_config(path)};
    return VFPT_OK;
  });
}

vfpt_status vfpt_config_parse(const char* text, vfpt_config** out) {
  if (require(out, "out") != VFPT_OK || require(text, "text") != VFPT_OK) return VFPT_ERR_CONFIG;
  return guarded([&] {
    *out = new vfpt_config{vfpt::io::parse_run_config(text)};
    return VFPT_OK;
  });
}

vfpt_status vfpt_config_set(vfpt_config* config, const char* key, const char* value) {
  if (require(config, "config") != VFPT_OK || require(key, "key") != VFPT_OK ||
      require(value, "value") != VFPT_OK) {
    return VFPT_ERR_CONFIG;
  }
  return guarded([&] {
    vfpt::io::set_value(config->value, key, value);
    return VFPT_OK;
  });
}

vfpt_status vfpt_config_apply(vfpt_config* config, const char* assignment) {
  if (require(config, "config") != VFPT_OK || require(assignment, "assignment") != VFPT_OK) {
    return VFPT_ERR_CONFIG;
  }
  return guarded([&] {
    vfpt::io::apply_override(config->value, assignment);
    return VFPT_OK;
  });
}

vfpt_status vfpt_config_validate(const vfpt_config* config) {
  if (require(config, "config") != VFPT_OK) return VFPT_ERR_CONFIG;
  return guarded([&] {
    config->value.validate();
    return VFPT_OK;
  });
}

size_t vfpt_config_to_string(const vfpt_config* config, char* buffer, size_t capacity) {
  if (config == nullptr) return 0;
  const std::string text = vfpt::io::to_text(config->value);
  if (buffer != nullptr && capacity > 0) {
    const std::size_t n = std::min(text.size(), capacity - 1);
    std::memcpy(buffer, text.data(), n);
    buffer[n] = '\0';
  }
  return text.size();
}

void vfpt_config_free(vfpt_config* config) { delete config; }

vfpt_status vfpt_run(const vfpt_config* config, const char* command) {
  if (require(config, "config") != VFPT_OK || require(command, "command") != VFPT_OK) {
    return VFPT_ERR_CONFIG;
  }
  last_outcome = {};
  return guarded([&] {
    last_outcome = vfpt::runner::run(command, config->value);
    if (!last_outcome.ok) return fail(VFPT_ERR_SELFTEST, last_outcome.summary);
    return VFPT_OK;
  });
}

const char* vfpt_last_summary(void) { return last_outcome.summary.c_str(); }
size_t vfpt_last_artifact_count(void) { return last_outcome.artifacts.size(); }

const char* vfpt_last_artifact(size_t index) {
  return index < last_outcome.artifacts.size() ? last_outcome.artifacts[index].c_str() : nullptr;
}

vfpt_status vfpt_checkpoint_load(const char* path, vfpt_checkpoint** out) {
  if (require(out, "out") != VFPT_OK || require(path, "path") != VFPT_OK) return VFPT_ERR_CONFIG;
  return guarded([&] {
    const vfpt::NamedTensors loaded = vfpt::io::load_checkpoint(path);
    auto* ckpt = new vfpt_checkpoint{};
    for (const auto& [name, tensor] : loaded) {
      ckpt->names.push_back(name);
      ckpt->tensors.push_back(tensor);
    }
    ckpt->checksum = loaded.checksum();
    *out = ckpt;
    return VFPT_OK;
  });
}

size_t vfpt_checkpoint_count(const vfpt_checkpoint* checkpoint) {
  return checkpoint ? checkpoint->names.size() : 0;
}

const char* vfpt_checkpoint_name(const vfpt_checkpoint* checkpoint, size_t index) {
  if (!checkpoint || index >= checkpoint->names.size()) return nullptr;
  return checkpoint->names[index].c_str();
}

size_t vfpt_checkpoint_numel(const vfpt_checkpoint* checkpoint, size_t index) {
  if (!checkpoint || index >= checkpoint->tensors.size()) return 0;
  return checkpoint->tensors[index].numel();
}

const double* vfpt_checkpoint_data(const vfpt_checkpoint* checkpoint, size_t index) {
  if (!checkpoint || index >= checkpoint->tensors.size()) return nullptr;
  return checkpoint->tensors[index].data().data();
}

uint64_t vfpt_checkpoint_checksum(const vfpt_checkpoint* checkpoint) {
  return checkpoint ? checkpoint->checksum : 0;
}

void vfpt_checkpoint_free(vfpt_checkpoint* checkpoint) { delete checkpoint; }

}  // extern "C"
