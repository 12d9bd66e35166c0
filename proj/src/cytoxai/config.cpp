#include "cytoxai/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <functional>
#include <map>
#include <set>

#include "cytoxai/error.hpp"
#include "cytoxai/explain.hpp"
#include "cytoxai/persistence.hpp"

namespace cytoxai {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Thrown by value parsers; the caller adds key and line.
struct BadValue {
  std::string expected;
};

template <class T>
T parse_number(std::string_view v, const char* expected) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) throw BadValue{expected};
  return out;
}

int to_int(std::string_view v) { return parse_number<int>(v, "an integer"); }
double to_double(std::string_view v) { return parse_number<double>(v, "a number"); }
std::uint64_t to_u64(std::string_view v) { return parse_number<std::uint64_t>(v, "a non-negative integer"); }

bool to_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw BadValue{"true or false"};
}

template <class Fn>
auto to_enum(std::string_view v, Fn parse, const char* expected) {
  try {
    return parse(v);
  } catch (const ArgumentError&) {
    throw BadValue{expected};
  }
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

template <class T, class Fn>
std::string join(const std::vector<T>& items, Fn fn) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fn(items[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CX_INT(KEY, MEMBER)                                                \
  Field {                                                                  \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = to_int(v); },   \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }        \
  }
#define CX_DOUBLE(KEY, MEMBER)                                               \
  Field {                                                                    \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = to_double(v); },  \
        [](const RunConfig& c) { return fmt_double(c.MEMBER); }              \
  }
#define CX_BOOL(KEY, MEMBER)                                                 \
  Field {                                                                    \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = to_bool(v); },    \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); } \
  }
#define CX_STRING(KEY, MEMBER)                                                 \
  Field {                                                                      \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = std::string(v); },  \
        [](const RunConfig& c) { return std::string(c.MEMBER); }               \
  }
#define CX_PATH(KEY, MEMBER)                                                   \
  Field {                                                                      \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = std::string(v); },  \
        [](const RunConfig& c) { return c.MEMBER.string(); }                   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"run.seed", [](RunConfig& c, std::string_view v) { c.seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      CX_PATH("dataset.root", dataset_root),
      CX_DOUBLE("dataset.size_bin_width", size_bin_width),
      CX_PATH("output.dir", output_dir),
      CX_DOUBLE("split.train", ratios.train),
      CX_DOUBLE("split.val", ratios.val),
      CX_DOUBLE("split.test", ratios.test),
      CX_INT("augment.factor", augment_factor),
      {"augment.kinds",
       [](RunConfig& c, std::string_view v) {
         c.augment_kinds.clear();
         for (auto item : split_list(v)) {
           c.augment_kinds.push_back(to_enum(item, parse_augment_kind, "a list of augmentation kinds"));
         }
       },
       [](const RunConfig& c) {
         return join(c.augment_kinds, [](AugmentKind k) { return std::string(augment_kind_name(k)); });
       }},
      CX_BOOL("augment.replacement", augment_replacement),
      CX_DOUBLE("augment.rotate_degrees", augment_params.rotate_degrees),
      CX_DOUBLE("augment.translate_fraction", augment_params.translate_fraction),
      CX_DOUBLE("augment.scale_min", augment_params.scale_min),
      CX_DOUBLE("augment.scale_max", augment_params.scale_max),
      CX_DOUBLE("augment.shear_degrees", augment_params.shear_degrees),
      CX_DOUBLE("augment.zoom_min", augment_params.zoom_min),
      CX_DOUBLE("augment.zoom_max", augment_params.zoom_max),
      CX_DOUBLE("augment.pad_fraction", augment_params.pad_fraction),
      CX_DOUBLE("augment.noise_sigma", augment_params.noise_sigma),
      CX_DOUBLE("augment.contrast_min", augment_params.contrast_min),
      CX_DOUBLE("augment.contrast_max", augment_params.contrast_max),
      CX_DOUBLE("augment.brightness_delta", augment_params.brightness_delta),
      CX_DOUBLE("augment.pixel_shift", augment_params.pixel_shift),
      {"model.architecture",
       [](RunConfig& c, std::string_view v) {
         c.encoder.architecture = to_enum(v, parse_architecture, "an architecture name");
       },
       [](const RunConfig& c) { return std::string(architecture_name(c.encoder.architecture)); }},
      {"model.freeze_depth",
       [](RunConfig& c, std::string_view v) {
         if (v == "auto") {
           c.encoder.freeze_depth.reset();
         } else {
           c.encoder.freeze_depth = to_int(v);
         }
       },
       [](const RunConfig& c) {
         return c.encoder.freeze_depth ? std::to_string(*c.encoder.freeze_depth) : std::string("auto");
       }},
      CX_BOOL("model.pretrained", encoder.pretrained),
      CX_INT("model.input_size", encoder.input_size),
      CX_PATH("model.weights_dir", encoder.weights_dir),
      {"train.mode",
       [](RunConfig& c, std::string_view v) {
         c.train.mode = to_enum(v, parse_train_mode, "standard, cost-sensitive or contrastive");
       },
       [](const RunConfig& c) { return std::string(train_mode_name(c.train.mode)); }},
      CX_INT("train.epochs", train.epochs),
      CX_DOUBLE("train.learning_rate", train.learning_rate),
      CX_INT("train.batch_size", train.batch_size),
      CX_DOUBLE("train.dropout", train.dropout_rate),
      {"train.class_weights",
       [](RunConfig& c, std::string_view v) {
         if (v == "auto") {
           c.train.class_weights.reset();
           return;
         }
         std::vector<double> w;
         for (auto item : split_list(v)) w.push_back(to_double(item));
         c.train.class_weights = std::move(w);
       },
       [](const RunConfig& c) {
         return c.train.class_weights ? join(*c.train.class_weights, fmt_double) : std::string("auto");
       }},
      {"train.weights_split",
       [](RunConfig& c, std::string_view v) { c.weights_split = to_enum(v, parse_split, "train, val or test"); },
       [](const RunConfig& c) { return std::string(split_name(c.weights_split)); }},
      {"contrastive.loss",
       [](RunConfig& c, std::string_view v) {
         c.train.contrastive.loss = to_enum(v, parse_contrastive_loss, "npairs, ntxent or triplet");
       },
       [](const RunConfig& c) { return std::string(contrastive_loss_name(c.train.contrastive.loss)); }},
      CX_DOUBLE("contrastive.temperature", train.contrastive.temperature),
      CX_DOUBLE("contrastive.margin", train.contrastive.margin),
      {"contrastive.projection_dims",
       [](RunConfig& c, std::string_view v) {
         c.train.contrastive.projection_dims.clear();
         for (auto item : split_list(v)) c.train.contrastive.projection_dims.push_back(to_int(item));
       },
       [](const RunConfig& c) {
         return join(c.train.contrastive.projection_dims, [](int d) { return std::to_string(d); });
       }},
      CX_BOOL("contrastive.stage2_augmented", train.contrastive.stage2_augmented),
      CX_STRING("explain.method", explain.method),
      CX_STRING("explain.layer", explain.layer),
      CX_INT("explain.class", explain.class_index),
      CX_INT("explain.lime_samples", explain.lime_samples),
      CX_INT("explain.lime_segments", explain.lime_segments),
      CX_DOUBLE("explain.lime_kernel_width", explain.lime_kernel_width),
      CX_DOUBLE("explain.lime_lambda", explain.lime_lambda),
      CX_INT("explain.top_k", explain.top_k),
  };
  return table;
}

#undef CX_INT
#undef CX_DOUBLE
#undef CX_BOOL
#undef CX_STRING
#undef CX_PATH

void sync_seeds(RunConfig& c) {
  c.encoder.seed = c.seed;
  c.train.seed = c.seed;
}

}  // namespace

std::string RunConfig::loss_name() const {
  switch (train.mode) {
    case TrainMode::standard: return "categorical_ce";
    case TrainMode::cost_sensitive: return "weighted_ce";
    case TrainMode::contrastive: return std::string(contrastive_loss_name(train.contrastive.loss));
  }
  return "?";
}

void RunConfig::validate() const {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0 && ratios.val >= 0 && ratios.test > 0) || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split ratios must be positive and sum to 1, got {} + {} + {}", ratios.train,
                                  ratios.val, ratios.test));
  }
  if (!(size_bin_width > 0)) throw ConfigError("dataset.size_bin_width must be > 0");
  if (augment_factor < 0) throw ConfigError(fmt::format("augment.factor must be >= 0, got {}", augment_factor));
  if (augment_factor > 0 && augment_kinds.empty()) throw ConfigError("augment.kinds is empty");
  if (!augment_replacement && augment_factor > static_cast<int>(augment_kinds.size())) {
    throw ConfigError(fmt::format("augment.factor {} exceeds the {} configured kinds without replacement",
                                  augment_factor, augment_kinds.size()));
  }
  const auto& a = augment_params;
  if (!(a.scale_min > 0 && a.scale_min <= a.scale_max) || !(a.zoom_min > 0 && a.zoom_min <= a.zoom_max) ||
      !(a.contrast_min >= 0 && a.contrast_min <= a.contrast_max) || a.noise_sigma < 0 || a.pad_fraction < 0 ||
      a.translate_fraction < 0 || a.brightness_delta < 0 || a.pixel_shift < 0) {
    throw ConfigError("augmentation parameters are out of range");
  }
  if (encoder.input_size < 32) throw ConfigError(fmt::format("model.input_size must be >= 32, got {}", encoder.input_size));
  if (encoder.freeze_depth && *encoder.freeze_depth < 0) throw ConfigError("model.freeze_depth must be >= 0");
  if (encoder.architecture == Architecture::tiny && encoder.pretrained) {
    throw ConfigError("the tiny architecture has no pretrained weights; set model.pretrained = false");
  }
  TrainConfig t = train;
  if (t.mode == TrainMode::cost_sensitive && !t.class_weights) t.class_weights = std::vector<double>(kNumClasses, 1.0);
  t.validate();
  if (weights_split == Split::unassigned) throw ConfigError("train.weights_split must be train, val or test");
  for (int d : train.contrastive.projection_dims) {
    if (d < 1) throw ConfigError("contrastive.projection_dims must be positive");
  }
  if (explain.method != "lime") {
    try {
      parse_cam_method(explain.method);
    } catch (const ArgumentError&) {
      throw ConfigError(fmt::format("explain.method '{}' is not one of gradcam, gradcampp, scorecam, layercam, lime",
                                    explain.method));
    }
  }
  if (explain.lime_segments < 2) throw ConfigError("explain.lime_segments must be >= 2");
  if (explain.lime_samples < 1) throw ConfigError("explain.lime_samples must be >= 1");
  if (explain.lime_lambda < 0) throw ConfigError("explain.lime_lambda must be >= 0");
  if (explain.top_k < 0) throw ConfigError("explain.top_k must be >= 0");
}

RunConfig parse_config(std::string_view text) {
  std::map<std::string, const Field*, std::less<>> by_key;
  for (const auto& f : fields()) by_key.emplace(f.key, &f);
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value', got '{}'", line_no, line));
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(fmt::format("line {}: unknown key '{}'", line_no, key));
    if (!seen.emplace(key).second) throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
    try {
      it->second->set(config, value);
    } catch (const BadValue& bad) {
      throw ConfigError(fmt::format("line {}: {}: expected {}, got '{}'", line_no, key, bad.expected, value));
    }
  }
  sync_seeds(config);
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void apply_override(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    RunConfig next = config;
    try {
      f.set(next, trim(value));
    } catch (const BadValue& bad) {
      throw ConfigError(fmt::format("{}: expected {}, got '{}'", key, bad.expected, value));
    }
    sync_seeds(next);
    config = std::move(next);
    return;
  }
  throw ConfigError(fmt::format("unknown key '{}'", key));
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(config));
  return out;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(serialize_config(config)); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace cytoxai
