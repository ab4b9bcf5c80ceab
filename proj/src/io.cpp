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

#include "vfpt/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vfpt/errors.hpp"

namespace vfpt::io {
namespace {

constexpr char kMagic[4] = {'V', 'F', 'P', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T take(const char* what) {
    require(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::span<const std::uint8_t> take_bytes(std::uint64_t n, const char* what) {
    require(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void require(std::uint64_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated ") + what, pos_);
    }
  }

  std::uint64_t pos() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + text + "' is not a nonnegative integer for " + key, key);
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + text + "' is not a number for " + key, key);
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F format) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format(values[i]);
  }
  return out;
}

struct Field {
  std::string key;  // section.name
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field uint_field(const std::string& key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(
                parse_uint(key, v));
          },
          [member](const RunConfig& c) { return std::to_string(member(c)); }};
}

template <typename Member>
Field double_field(const std::string& key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) { member(c) = parse_double(key, v); },
          [member](const RunConfig& c) { return format_double(member(c)); }};
}

template <typename Member>
Field string_field(const std::string& key, Member member) {
  return {key, [member](RunConfig& c, const std::string& v) { member(c) = trim(v); },
          [member](const RunConfig& c) { return member(c); }};
}

template <typename Member>
Field double_list_field(const std::string& key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
            member(c) = std::move(out);
          },
          [member](const RunConfig& c) { return join(member(c), format_double); }};
}

template <typename T, typename Member>
Field uint_list_field(const std::string& key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            std::vector<T> out;
            for (const auto& item : split_list(v)) {
              out.push_back(static_cast<T>(parse_uint(key, item)));
            }
            member(c) = std::move(out);
          },
          [member](const RunConfig& c) {
            return join(member(c), [](T x) { return std::to_string(x); });
          }};
}

template <typename Member, typename Parse>
Field enum_field(const std::string& key, Member member, Parse parse) {
  return {key, [member, parse](RunConfig& c, const std::string& v) { member(c) = parse(trim(v)); },
          [member](const RunConfig& c) { return std::string(to_string(member(c))); }};
}

#define VFPT_MEMBER(path) [](auto& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      uint_field("run.seed", VFPT_MEMBER(run.seed)),
      string_field("run.output_dir", VFPT_MEMBER(run.output_dir)),
      string_field("run.backbone", VFPT_MEMBER(run.backbone)),
      string_field("run.model", VFPT_MEMBER(run.model)),
      double_list_field("run.alphas", VFPT_MEMBER(run.alphas)),
      uint_field("run.image_index", VFPT_MEMBER(run.image_index)),

      uint_field("backbone.image_size", VFPT_MEMBER(backbone.image_size)),
      uint_field("backbone.patch_size", VFPT_MEMBER(backbone.patch_size)),
      uint_field("backbone.channels", VFPT_MEMBER(backbone.channels)),
      uint_field("backbone.depth", VFPT_MEMBER(backbone.depth)),
      uint_field("backbone.width", VFPT_MEMBER(backbone.width)),
      uint_field("backbone.heads", VFPT_MEMBER(backbone.heads)),
      uint_field("backbone.mlp_ratio", VFPT_MEMBER(backbone.mlp_ratio)),
      uint_field("backbone.num_classes_pretrain", VFPT_MEMBER(backbone.num_classes_pretrain)),

      uint_field("prompt.length", VFPT_MEMBER(prompt.length)),
      double_field("prompt.alpha", VFPT_MEMBER(prompt.alpha)),
      enum_field("prompt.location", VFPT_MEMBER(prompt.location), parse_location),
      uint_list_field<std::size_t>("prompt.depth_set", VFPT_MEMBER(prompt.depth_set)),
      enum_field("prompt.dim_mode", VFPT_MEMBER(prompt.dim_mode), parse_dim_mode),
      enum_field("prompt.transform", VFPT_MEMBER(prompt.transform), parse_transform),
      enum_field("prompt.variant", VFPT_MEMBER(prompt.variant), parse_variant),

      uint_field("train.epochs", VFPT_MEMBER(train.epochs)),
      uint_field("train.batch_size", VFPT_MEMBER(train.batch_size)),
      double_field("train.base_lr", VFPT_MEMBER(train.base_lr)),
      double_field("train.weight_decay", VFPT_MEMBER(train.weight_decay)),
      double_field("train.momentum", VFPT_MEMBER(train.momentum)),
      uint_field("train.warmup_epochs", VFPT_MEMBER(train.warmup_epochs)),
      double_list_field("train.lr_grid", VFPT_MEMBER(train.lr_grid)),
      double_list_field("train.wd_grid", VFPT_MEMBER(train.wd_grid)),
      uint_list_field<std::uint64_t>("train.seeds", VFPT_MEMBER(train.seeds)),

      string_field("data.name", VFPT_MEMBER(data.name)),
      enum_field("data.kind", VFPT_MEMBER(data.kind), parse_task_kind),
      uint_field("data.num_classes", VFPT_MEMBER(data.num_classes)),
      uint_field("data.train_count", VFPT_MEMBER(data.train_count)),
      uint_field("data.val_count", VFPT_MEMBER(data.val_count)),
      uint_field("data.test_count", VFPT_MEMBER(data.test_count)),
      uint_field("data.image_size", VFPT_MEMBER(data.image_size)),
      double_field("data.noise_std", VFPT_MEMBER(data.noise_std)),
      uint_field("data.seed", VFPT_MEMBER(data.seed)),

      uint_field("analysis.resolution", VFPT_MEMBER(analysis.resolution)),
      uint_field("analysis.subset_size", VFPT_MEMBER(analysis.subset_size)),
      uint_field("analysis.batch_size", VFPT_MEMBER(analysis.batch_size)),
      double_field("analysis.tau", VFPT_MEMBER(analysis.tau)),
      double_field("analysis.tolerance", VFPT_MEMBER(analysis.tolerance)),
      uint_field("analysis.max_iterations", VFPT_MEMBER(analysis.max_iterations)),
      uint_field("analysis.seed", VFPT_MEMBER(analysis.seed)),
  };
  return table;
}

#undef VFPT_MEMBER

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'", key);
}

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, tensors.size());
  std::set<std::string> names;
  for (const auto& [name, t] : tensors) {
    if (!names.insert(name).second) throw ContractError("duplicate tensor name '" + name + "'");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, kDtypeF64);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take_bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad magic", 0);
  const std::uint64_t version_at = r.pos();
  const auto version = r.take<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const auto count = r.take<std::uint64_t>("entry count");
  NamedTensors out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = r.take<std::uint32_t>("name length");
    const std::uint64_t name_at = r.pos();
    const auto raw = r.take_bytes(name_len, "name");
    std::string name(raw.begin(), raw.end());
    if (out.find(name)) throw FormatError("duplicate tensor name '" + name + "'", name_at);
    const std::uint64_t dtype_at = r.pos();
    const auto dtype = r.take<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) {
      throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_at);
    }
    const std::uint64_t rank_at = r.pos();
    const auto rank = r.take<std::uint32_t>("rank");
    if (rank > kMaxRank) throw FormatError("rank " + std::to_string(rank) + " too large", rank_at);
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      const std::uint64_t dim_at = r.pos();
      d = r.take<std::uint64_t>("dims");
      if (d == 0) throw FormatError("zero-sized dimension in '" + name + "'", dim_at);
      numel = numel > r.remaining() / d ? r.remaining() + 1 : numel * d;
    }
    const std::uint64_t values_at = r.pos();
    if (numel > r.remaining() / sizeof(double)) {
      throw FormatError("truncated values of '" + name + "'", values_at);
    }
    Buffer values(numel);
    for (auto& v : values) v = std::bit_cast<double>(r.take<std::uint64_t>("values"));
    out.add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last entry", r.pos());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_atomic(path, encode_checkpoint(tensors));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return decode_checkpoint(
      {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) {
    throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return buf.str();
}

std::string file_digest(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto h =
      checksum_bytes({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void export_dataset(const std::filesystem::path& dir, const std::string& stem,
                    const Dataset& data) {
  const std::size_t n = data.size();
  const std::size_t s = data.image_size();
  NamedTensors t;
  t.add("images", Tensor::from({n, 1, s, s}, Buffer(data.pixels().begin(), data.pixels().end())));
  Buffer labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(data.labels()[i]);
  t.add("labels", Tensor::from({n}, std::move(labels)));
  save_checkpoint(dir / (stem + ".vfpt"), t);
  std::string csv = "index,label\n";
  for (std::size_t i = 0; i < n; ++i) {
    csv += std::to_string(i) + ',' + std::to_string(data.labels()[i]) + '\n';
  }
  write_atomic(dir / (stem + "_labels.csv"), csv);
}

Tensor encode_prompt_config(const PromptConfig& c) {
  Buffer v{static_cast<double>(c.length),
           c.alpha,
           static_cast<double>(c.location),
           static_cast<double>(c.dim_mode),
           static_cast<double>(c.transform),
           static_cast<double>(c.variant),
           static_cast<double>(c.depth_set.size())};
  for (std::size_t d : c.depth_set) v.push_back(static_cast<double>(d));
  const std::size_t n = v.size();
  return Tensor::from({n}, std::move(v));
}

PromptConfig decode_prompt_config(const Tensor& encoded) {
  const auto v = encoded.data();
  if (v.size() < 7 || v.size() != 7 + static_cast<std::size_t>(v[6])) {
    throw FormatError("malformed prompt.config entry", 0);
  }
  auto as_enum = [&](std::size_t i, int count) {
    const double x = v[i];
    if (!(x >= 0.0 && x < count) || x != std::floor(x)) {
      throw FormatError("malformed prompt.config entry", 0);
    }
    return static_cast<int>(x);
  };
  PromptConfig c;
  c.length = static_cast<std::size_t>(v[0]);
  c.alpha = v[1];
  c.location = static_cast<PromptLocation>(as_enum(2, 3));
  c.dim_mode = static_cast<DimMode>(as_enum(3, 3));
  c.transform = static_cast<TransformType>(as_enum(4, 4));
  c.variant = static_cast<PromptVariant>(as_enum(5, 2));
  for (std::size_t i = 7; i < v.size(); ++i) c.depth_set.push_back(static_cast<std::size_t>(v[i]));
  return c;
}

void RunConfig::validate() const {
  backbone.validate();
  prompt.validate(backbone.depth);
  train.validate(true);
  data.validate();
  analysis.validate();
  if (data.image_size != backbone.image_size) {
    throw ConfigError("data.image_size must equal backbone.image_size", "data.image_size");
  }
  if (run.output_dir.empty()) throw ConfigError("output_dir must be set", "run.output_dir");
  for (double a : run.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alphas must lie in [0, 1]", "run.alphas");
  }
}

RunConfig parse_run_config(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("malformed config at line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> sections{"run", "backbone", "prompt",
                                              "train", "data", "analysis"};
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) {
      throw ConfigError("key '" + section + "' outside a section", section);
    }
    if (!sections.count(section)) {
      throw ConfigError("unknown config section [" + section + "]", section);
    }
    for (const auto& [name, value] : body) {
      set_value(config, section + "." + name, value.data());
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path));
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set_value(config, trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string to_text(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += '[' + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + '\n';
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace vfpt::io
