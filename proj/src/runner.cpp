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

#include "vfpt/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "vfpt/analysis.hpp"
#include "vfpt/errors.hpp"
#include "vfpt/random.hpp"

#ifndef VFPT_BUILD_ID
#define VFPT_BUILD_ID "unknown"
#endif

namespace vfpt::runner {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kNormalizationEntry = "normalization";
constexpr const char* kPromptConfigEntry = "prompt.config";

// Collects artifacts for one command and writes the manifest last.
class Artifacts {
 public:
  Artifacts(const io::RunConfig& config, std::string command)
      : config_(config), command_(std::move(command)), dir_(config.run.output_dir),
        start_(std::chrono::steady_clock::now()) {}

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, std::string_view content) {
    guard(name);
    io::write_atomic(path(name), content);
    names_.push_back(name);
  }

  void write_checkpoint(const std::string& name, const NamedTensors& tensors) {
    guard(name);
    io::save_checkpoint(path(name), tensors);
    names_.push_back(name);
  }

  Outcome finish(std::string summary, bool ok = true) {
    json m;
    m["command"] = command_;
    m["build_id"] = build_id();
    m["seed"] = config_.run.seed;
    m["config"] = io::to_text(config_);
    json hashes = json::object();
    for (const auto& n : names_) hashes[n] = io::file_digest(path(n));
    m["artifacts"] = hashes;
    m["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    m["ok"] = ok;
    const std::string manifest = "manifest_" + command_ + ".json";
    io::write_atomic(path(manifest), m.dump(2) + "\n");
    Outcome out;
    out.artifacts = names_;
    out.artifacts.push_back(manifest);
    out.summary = std::move(summary);
    out.ok = ok;
    return out;
  }

 private:
  void guard(const std::string& name) const {
    const fs::path target = fs::weakly_canonical(path(name));
    for (const auto& input : {config_.run.backbone, config_.run.model}) {
      if (!input.empty() && fs::weakly_canonical(input) == target) {
        throw ConfigError("output " + target.string() + " would overwrite an input checkpoint",
                          "run.output_dir");
      }
    }
  }

  const io::RunConfig& config_;
  std::string command_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> names_;
};

struct LoadedBackbone {
  Backbone backbone;
  Normalization norm;
};

LoadedBackbone load_backbone(const io::RunConfig& c) {
  if (c.run.backbone.empty()) {
    auto bb = Backbone::initialize(c.backbone, c.run.seed);
    bb.freeze();
    return {std::move(bb), source_statistics(c.run.seed, c.backbone.image_size)};
  }
  const NamedTensors t = io::load_checkpoint(c.run.backbone);
  Backbone bb = Backbone::from_tensors(t);
  Normalization norm;
  if (const Tensor* n = t.find(kNormalizationEntry)) {
    if (n->numel() != 2) throw FormatError("malformed normalization entry", 0);
    norm = {n->data()[0], n->data()[1]};
  } else {
    norm = source_statistics(c.run.seed, bb.config().image_size);
  }
  return {std::move(bb), norm};
}

TaskData load_task(const io::RunConfig& c, const Backbone& bb, const Normalization& norm) {
  if (c.data.image_size != bb.config().image_size) {
    throw ConfigError("data.image_size " + std::to_string(c.data.image_size) +
                          " does not match the backbone image size " +
                          std::to_string(bb.config().image_size),
                      "data.image_size");
  }
  const TaskData raw = generate(c.data);
  return {normalize(raw.train, norm), normalize(raw.val, norm), normalize(raw.test, norm)};
}

TunedModel load_model(const io::RunConfig& c, const Backbone& bb) {
  if (c.run.model.empty()) throw ConfigError("run.model must name a tuned checkpoint", "run.model");
  const NamedTensors t = io::load_checkpoint(c.run.model);
  const Tensor* p = t.find(kPromptConfigEntry);
  const PromptConfig prompt = p ? io::decode_prompt_config(*p) : c.prompt;
  return TunedModel::from_tensors(bb, prompt, t);
}

NamedTensors model_checkpoint(const TunedModel& model) {
  NamedTensors t = model.tensors();
  t.add(kPromptConfigEntry, io::encode_prompt_config(model.prompt));
  return t;
}

std::string to_csv(const std::function<void(std::ostream&)>& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

Outcome run_pretrain(const io::RunConfig& c) {
  Artifacts art(c, "pretrain");
  const Normalization norm = source_statistics(c.run.seed, c.backbone.image_size);
  TaskSpec spec = c.data;
  spec.num_classes = c.backbone.num_classes_pretrain;
  if (spec.image_size != c.backbone.image_size) {
    throw ConfigError("data.image_size must equal backbone.image_size", "data.image_size");
  }
  const TaskData raw = generate(spec);
  const TaskData data{normalize(raw.train, norm), normalize(raw.val, norm),
                      normalize(raw.test, norm)};
  const PretrainResult r = pretrain(c.backbone, data, c.train, c.run.seed);
  NamedTensors t = r.backbone.tensors();
  t.add(kNormalizationEntry, Tensor::from({2}, Buffer{norm.mean, norm.std}));
  art.write_checkpoint("backbone.vfpt", t);
  art.write("pretrain_epochs.csv", to_csv([&](std::ostream& o) { write_epoch_csv(o, r.record); }));
  art.write("pretrain_summary.json", summary_json(r.record) + "\n");
  return art.finish("pretrain val accuracy " + fmt("%.4f", r.record.final_val_accuracy));
}

Outcome run_tune(const io::RunConfig& c) {
  Artifacts art(c, "tune");
  const auto [bb, norm] = load_backbone(c);
  const TaskData data = load_task(c, bb, norm);
  const TuneResult r = tune(bb, c.prompt, data, c.data.num_classes, c.train, c.train.base_lr,
                            c.train.weight_decay, c.run.seed);
  art.write_checkpoint("model.vfpt", model_checkpoint(r.model));
  art.write("epochs.csv", to_csv([&](std::ostream& o) { write_epoch_csv(o, r.record); }));
  json s = json::parse(summary_json(r.record));
  const ParameterCount pc = count_parameters(bb, r.model.bank, &r.model.head);
  s["tuned_parameters"] = pc.tuned;
  s["total_parameters"] = pc.total;
  s["tuned_percent"] = pc.percent;
  s["prompt_parameters"] = r.model.bank.prompt_parameter_count();
  art.write("summary.json", s.dump(2) + "\n");
  return art.finish("val accuracy " + fmt("%.4f", r.record.final_val_accuracy) +
                    ", test accuracy " + fmt("%.4f", r.record.test_accuracy));
}

Outcome run_eval(const io::RunConfig& c) {
  Artifacts art(c, "eval");
  const auto [bb, norm] = load_backbone(c);
  const TaskData data = load_task(c, bb, norm);
  const TunedModel model = load_model(c, bb);
  const Evaluation val = evaluate(model, data.val, c.train.batch_size);
  const Evaluation test = evaluate(model, data.test, c.train.batch_size);
  json j;
  j["val_accuracy"] = val.accuracy;
  j["val_loss"] = val.loss;
  j["test_accuracy"] = test.accuracy;
  j["test_loss"] = test.loss;
  art.write("eval.json", j.dump(2) + "\n");
  return art.finish("val accuracy " + fmt("%.4f", val.accuracy) + ", test accuracy " +
                    fmt("%.4f", test.accuracy));
}

Outcome run_sweep(const io::RunConfig& c) {
  Artifacts art(c, "sweep-alpha");
  const auto [bb, norm] = load_backbone(c);
  const TaskData data = load_task(c, bb, norm);
  const auto rows = alpha_sweep(bb, c.prompt, data, c.data.num_classes, c.train, c.run.alphas,
                                c.train.seeds, c.train.base_lr, c.train.weight_decay);
  const auto summary = summarize_sweep(rows);
  art.write("sweep.csv", to_csv([&](std::ostream& o) { write_sweep_csv(o, rows); }));
  art.write("alpha_curve.csv",
            to_csv([&](std::ostream& o) { write_sweep_summary_csv(o, summary); }));
  return art.finish(std::to_string(rows.size()) + " runs over " +
                    std::to_string(summary.size()) + " alpha values");
}

Outcome run_grid(const io::RunConfig& c) {
  Artifacts art(c, "grid-search");
  const auto [bb, norm] = load_backbone(c);
  const TaskData data = load_task(c, bb, norm);
  const GridResult g = grid_search(bb, c.prompt, data, c.data.num_classes, c.train, c.run.seed);
  art.write("grid.csv", to_csv([&](std::ostream& o) { write_grid_csv(o, g); }));
  json j;
  j["any_valid"] = g.any_valid;
  if (g.any_valid) {
    j["lr"] = g.cells[g.best].lr;
    j["weight_decay"] = g.cells[g.best].weight_decay;
    j["final_val_accuracy"] = g.cells[g.best].record.final_val_accuracy;
  }
  j["backbone_unchanged"] = g.backbone_checksum_before == g.backbone_checksum_after;
  art.write("grid_best.json", j.dump(2) + "\n");
  if (!g.any_valid) return art.finish("every grid cell diverged");
  return art.finish("best lr " + fmt("%g", g.cells[g.best].lr) + ", weight decay " +
                    fmt("%g", g.cells[g.best].weight_decay));
}

struct AnalysisSetup {
  LoadedBackbone loaded;
  TunedModel model;
  analysis::Subset subset;
};

AnalysisSetup analysis_setup(const io::RunConfig& c) {
  auto loaded = load_backbone(c);
  const TaskData data = load_task(c, loaded.backbone, loaded.norm);
  TunedModel model = load_model(c, loaded.backbone);
  auto subset = analysis::fixed_subset(data.train, c.analysis.subset_size, c.analysis.seed);
  return {std::move(loaded), std::move(model), std::move(subset)};
}

std::string subset_csv(const analysis::Subset& s) {
  std::string out = "index\n";
  for (auto i : s.indices) out += std::to_string(i) + '\n';
  return out;
}

std::string directions_csv(const analysis::Direction& d1, const analysis::Direction& d2) {
  std::ostringstream out;
  out.precision(17);
  out << "tensor,parameter_norm,raw_norm_1,raw_norm_2\n";
  for (std::size_t k = 0; k < d1.norms.size(); ++k) {
    out << d1.norms[k].name << ',' << d1.norms[k].parameter_norm << ',' << d1.norms[k].raw_norm
        << ',' << d2.norms[k].raw_norm << '\n';
  }
  return out.str();
}

void write_image(Artifacts& art, const std::string& stem, std::span<const double> values,
                 std::size_t rows, std::size_t cols) {
  std::ostringstream img, scale;
  const auto s = analysis::write_pgm(img, values, rows, cols);
  analysis::write_pgm_scaling(scale, s);
  art.write(stem + ".pgm", img.str());
  art.write(stem + "_pgm.txt", scale.str());
}

Outcome run_landscape(const io::RunConfig& c, bool hessian) {
  Artifacts art(c, hessian ? "hessian-map" : "landscape");
  c.analysis.validate();
  const AnalysisSetup setup = analysis_setup(c);
  const analysis::ModelObjective obj(setup.model, setup.subset.data, c.analysis.batch_size);
  const auto theta = obj.parameters();
  const auto d1 = analysis::random_direction(obj.layout(), theta, mix_seed(c.analysis.seed, 1));
  const auto d2 = analysis::random_direction(obj.layout(), theta, mix_seed(c.analysis.seed, 2));
  const auto grid = hessian
                        ? analysis::convexity_map(obj, theta, d1.values, d2.values, c.analysis)
                        : analysis::landscape(obj, theta, d1.values, d2.values,
                                              c.analysis.resolution);
  const std::string stem = hessian ? "hessian" : "landscape";
  art.write(stem + ".csv", to_csv([&](std::ostream& o) { analysis::write_grid_csv(o, grid); }));
  art.write("subset.csv", subset_csv(setup.subset));
  art.write("directions.csv", directions_csv(d1, d2));
  std::vector<double> image;
  for (const auto& cell : grid.cells) image.push_back(hessian ? cell.ratio : cell.value);
  write_image(art, hessian ? "ratio" : "landscape", image, grid.resolution, grid.resolution);
  if (!hessian) {
    const auto& center = grid.at(grid.resolution / 2, grid.resolution / 2);
    return art.finish("center loss " + fmt("%.6f", center.value));
  }
  json j;
  j["convex_fraction"] = grid.convex_fraction;
  j["tau"] = c.analysis.tau;
  j["flagged_cells"] = grid.flagged;
  j["cells"] = grid.cells.size();
  art.write("hessian_summary.json", j.dump(2) + "\n");
  return art.finish("convex fraction " + fmt("%.4f", grid.convex_fraction) + " (tau " +
                    fmt("%g", c.analysis.tau) + ", " + std::to_string(grid.flagged) +
                    " flagged)");
}

Outcome run_attention(const io::RunConfig& c) {
  Artifacts art(c, "attention");
  const auto [bb, norm] = load_backbone(c);
  const TaskData data = load_task(c, bb, norm);
  const TunedModel model = load_model(c, bb);
  if (c.run.image_index >= data.val.size()) {
    throw ConfigError("image_index beyond the validation split", "run.image_index");
  }
  const auto map = analysis::attention_export(model, data.val.image(c.run.image_index));
  art.write("attention.csv",
            to_csv([&](std::ostream& o) { analysis::write_attention_csv(o, map); }));
  art.write("segments.csv", to_csv([&](std::ostream& o) { analysis::write_segments(o, map); }));
  write_image(art, "attention", map.values, map.size, map.size);
  return art.finish("prompt column mean " + fmt("%.5f", map.prompt_column_mean) +
                    ", patch column mean " + fmt("%.5f", map.patch_column_mean));
}

Outcome run_selftest(const io::RunConfig& c) {
  Artifacts art(c, "selftest");
  const auto checks = selftest(c.run.seed);
  std::string report;
  bool ok = true;
  for (const auto& ch : checks) {
    report += std::string(ch.passed ? "PASS " : "FAIL ") + ch.name + ": " + ch.detail + '\n';
    ok = ok && ch.passed;
  }
  art.write("selftest.txt", report);
  return art.finish(std::to_string(checks.size()) + " checks, " + (ok ? "all passed" : "FAILED"),
                    ok);
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"pretrain",  "tune",        "eval",
                                              "sweep-alpha", "grid-search", "landscape",
                                              "hessian-map", "attention",   "selftest"};
  return names;
}

const char* build_id() { return VFPT_BUILD_ID; }

Outcome run(const std::string& command, const io::RunConfig& config) {
  if (command != "selftest") config.validate();
  if (command == "pretrain") return run_pretrain(config);
  if (command == "tune") return run_tune(config);
  if (command == "eval") return run_eval(config);
  if (command == "sweep-alpha") return run_sweep(config);
  if (command == "grid-search") return run_grid(config);
  if (command == "landscape") return run_landscape(config, false);
  if (command == "hessian-map") return run_landscape(config, true);
  if (command == "attention") return run_attention(config);
  if (command == "selftest") return run_selftest(config);
  throw ConfigError("unknown command '" + command + "'", "command");
}

}  // namespace vfpt::runner
