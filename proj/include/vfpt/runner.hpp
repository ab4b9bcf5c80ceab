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

// Subcommand drivers behind the command-line tool. Each one reads a
// RunConfig, writes its artifacts atomically under run.output_dir and
// finishes with manifest_<command>.json.

#pragma once

#include <string>
#include <vector>

#include "vfpt/io.hpp"

namespace vfpt::runner {

struct Outcome {
  std::vector<std::string> artifacts;  // file names inside output_dir
  std::string summary;                 // one human-readable line
  bool ok = true;                      // false only for a failed selftest
};

const std::vector<std::string>& commands();

/// Runs `command` (one of commands()). Throws ConfigError for an unknown
/// command or invalid config, IoError / FormatError for file problems.
Outcome run(const std::string& command, const io::RunConfig& config);

/// Git-describe style identifier of this build.
const char* build_id();

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// FFT oracle, gradient checks, adjoint identity and the alpha = 0
/// equivalence, at reduced sizes.
std::vector<SelftestCheck> selftest(std::uint64_t seed);

}  // namespace vfpt::runner
