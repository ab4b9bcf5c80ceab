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

// Command-line front end. Talks to the library only through vfpt.h.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vfpt/vfpt.h"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  std::string backbone;
  std::string model;
  std::optional<unsigned long long> seed;
  std::string alphas;
  std::optional<unsigned> seed_count;
};

using ConfigPtr = std::unique_ptr<vfpt_config, decltype(&vfpt_config_free)>;

int report(vfpt_status status) {
  const std::string key = vfpt_last_error_key();
  std::fprintf(stderr, "error: %s", vfpt_last_error());
  if (!key.empty()) std::fprintf(stderr, " [key: %s]", key.c_str());
  std::fputc('\n', stderr);
  return static_cast<int>(status);
}

int set(vfpt_config* config, const char* key, const std::string& value) {
  const vfpt_status s = vfpt_config_set(config, key, value.c_str());
  return s == VFPT_OK ? 0 : report(s);
}

int execute(const std::string& command, const Options& opt) {
  vfpt_config* raw = nullptr;
  vfpt_status s = opt.config_path.empty() ? vfpt_config_new(&raw)
                                          : vfpt_config_load(opt.config_path.c_str(), &raw);
  if (s != VFPT_OK) return report(s);
  ConfigPtr config(raw, &vfpt_config_free);

  for (const auto& assignment : opt.overrides) {
    s = vfpt_config_apply(config.get(), assignment.c_str());
    if (s != VFPT_OK) return report(s);
  }
  int rc = 0;
  if (!opt.output.empty() && (rc = set(config.get(), "run.output_dir", opt.output))) return rc;
  if (!opt.backbone.empty() && (rc = set(config.get(), "run.backbone", opt.backbone))) return rc;
  if (!opt.model.empty() && (rc = set(config.get(), "run.model", opt.model))) return rc;
  if (opt.seed && (rc = set(config.get(), "run.seed", std::to_string(*opt.seed)))) return rc;
  if (!opt.alphas.empty() && (rc = set(config.get(), "run.alphas", opt.alphas))) return rc;
  if (opt.seed_count) {
    std::string seeds;
    for (unsigned i = 0; i < *opt.seed_count; ++i) seeds += (i ? "," : "") + std::to_string(i);
    if ((rc = set(config.get(), "train.seeds", seeds))) return rc;
  }

  s = vfpt_run(config.get(), command.c_str());
  if (s != VFPT_OK && s != VFPT_ERR_SELFTEST) return report(s);
  std::printf("%s: %s\n", command.c_str(), vfpt_last_summary());
  for (std::size_t i = 0; i < vfpt_last_artifact_count(); ++i) {
    std::printf("  wrote %s\n", vfpt_last_artifact(i));
  }
  if (s == VFPT_ERR_SELFTEST) return report(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual Fourier prompt tuning lab"};
  app.set_version_flag("--version", std::string(vfpt_build_id()));
  app.require_subcommand(1);

  Options opt;
  std::string chosen;
  for (std::size_t i = 0; i < vfpt_command_count(); ++i) {
    const std::string name = vfpt_command_name(i);
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", opt.config_path, "Run configuration file")
        ->check(CLI::ExistingFile);
    sub->add_option("-s,--set", opt.overrides, "Override, section.key=value")
        ->allow_extra_args(false);
    sub->add_option("-o,--output", opt.output, "Output directory");
    sub->add_option("--seed", opt.seed, "Run seed");
    if (name != "pretrain" && name != "selftest") {
      sub->add_option("--backbone", opt.backbone, "Backbone checkpoint");
    }
    if (name == "eval" || name == "landscape" || name == "hessian-map" || name == "attention") {
      sub->add_option("--model", opt.model, "Tuned checkpoint");
    }
    if (name == "sweep-alpha") {
      sub->add_option("--alphas", opt.alphas, "Comma-separated alpha values");
      sub->add_option("--seeds", opt.seed_count, "Number of seeds, run as 0..n-1")
          ->check(CLI::PositiveNumber);
    }
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(VFPT_ERR_CONFIG);
  }
  return execute(chosen, opt);
}
