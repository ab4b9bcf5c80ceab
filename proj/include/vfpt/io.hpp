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

// Checkpoint container, run configuration and artifact plumbing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vfpt/analysis.hpp"
#include "vfpt/backbone.hpp"
#include "vfpt/data.hpp"
#include "vfpt/named_tensors.hpp"
#include "vfpt/prompt.hpp"
#include "vfpt/train.hpp"

namespace vfpt::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout (all integers little-endian):
///   "VFPT" | u32 version | u64 count |
///   count x { u32 name_len | name | u8 dtype (1 = f64) | u32 rank |
///             rank x u64 dim | numel x f64 }
std::string encode_checkpoint(const NamedTensors& tensors);
/// Throws FormatError with the byte offset of the first fault.
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);
/// FNV-1a over the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// `<stem>.vfpt` holding `images` [N, 1, H, W] and `labels` [N], plus
/// `<stem>_labels.csv` with header `index,label`.
void export_dataset(const std::filesystem::path& dir, const std::string& stem,
                    const Dataset& data);

/// Prompt settings stored next to the tuned tensors so a checkpoint can be
/// reloaded without the original config.
Tensor encode_prompt_config(const PromptConfig& config);
PromptConfig decode_prompt_config(const Tensor& encoded);

struct RunSettings {
  std::uint64_t seed = 0;
  std::string output_dir = "vfpt_out";
  std::string backbone;  // backbone checkpoint; empty = seeded random init
  std::string model;     // tuned checkpoint for eval and analysis
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t image_index = 0;  // validation image for attention export
};

struct RunConfig {
  RunSettings run;
  BackboneConfig backbone;
  PromptConfig prompt;
  TrainConfig train;
  TaskSpec data;
  analysis::AnalysisConfig analysis;

  void validate() const;
};

/// Sectioned key = value text with sections [run], [backbone], [prompt],
/// [train], [data] and [analysis]. Unknown sections or keys throw
/// ConfigError naming the key; absent keys keep their defaults.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies `section.key=value`.
void apply_override(RunConfig& config, std::string_view assignment);
void set_value(RunConfig& config, const std::string& key, const std::string& value);
/// Every key with its resolved value, in the same text format.
std::string to_text(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace vfpt::io
