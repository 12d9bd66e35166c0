#include "cytoxai/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <opencv2/imgproc.hpp>

#include "cytoxai/error.hpp"
#include "cytoxai/persistence.hpp"
#include "cytoxai/random.hpp"

namespace cytoxai {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array kClasses = {CellClass::dyskeratotic, CellClass::koilocytotic, CellClass::metaplastic,
                                 CellClass::parabasal, CellClass::superficial_intermediate};

constexpr std::array kKinds = {AugmentKind::rotate, AugmentKind::translate, AugmentKind::scale,
                               AugmentKind::shear,  AugmentKind::zoom,      AugmentKind::flip,
                               AugmentKind::pad,    AugmentKind::noise,     AugmentKind::contrast,
                               AugmentKind::brightness, AugmentKind::pixel_shift};

std::string fold(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".bmp" || ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// SIPaKMeD nests images as im_X/im_X/CROPPED/*.bmp; follow that chain if present.
fs::path resolve_class_dir(fs::path dir) {
  const std::string key = fold(dir.filename().string());
  for (int step = 0; step < 2; ++step) {
    fs::path next;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_directory()) continue;
      const std::string name = fold(e.path().filename().string());
      if (name == key || name == "cropped") next = e.path();
    }
    if (next.empty()) break;
    dir = next;
  }
  return dir;
}

std::size_t split_index(Split s) { return static_cast<std::size_t>(s); }

}  // namespace

std::string_view class_name(CellClass c) {
  switch (c) {
    case CellClass::dyskeratotic: return "Dyskeratotic";
    case CellClass::koilocytotic: return "Koilocytotic";
    case CellClass::metaplastic: return "Metaplastic";
    case CellClass::parabasal: return "Parabasal";
    case CellClass::superficial_intermediate: return "SuperficialIntermediate";
  }
  return "?";
}

std::span<const CellClass> all_classes() { return kClasses; }

std::optional<CellClass> match_class_name(std::string_view text) {
  std::string key = fold(text);
  if (key.starts_with("im") && key.size() > 2) {
    for (CellClass c : kClasses) {
      if (key.substr(2) == fold(class_name(c))) return c;
    }
  }
  for (CellClass c : kClasses) {
    if (key == fold(class_name(c))) return c;
  }
  return std::nullopt;
}

CellClass parse_class(std::string_view text) {
  if (auto c = match_class_name(text)) return *c;
  throw ArgumentError(fmt::format("unknown class label '{}'", text));
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  for (Split s : {Split::train, Split::val, Split::test, Split::unassigned}) {
    if (split_name(s) == text) return s;
  }
  throw ArgumentError(fmt::format("unknown split '{}'", text));
}

std::string_view augment_kind_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::rotate: return "rotate";
    case AugmentKind::translate: return "translate";
    case AugmentKind::scale: return "scale";
    case AugmentKind::shear: return "shear";
    case AugmentKind::zoom: return "zoom";
    case AugmentKind::flip: return "flip";
    case AugmentKind::pad: return "pad";
    case AugmentKind::noise: return "noise";
    case AugmentKind::contrast: return "contrast";
    case AugmentKind::brightness: return "brightness";
    case AugmentKind::pixel_shift: return "pixel_shift";
  }
  return "?";
}

AugmentKind parse_augment_kind(std::string_view text) {
  for (AugmentKind k : kKinds) {
    if (augment_kind_name(k) == text) return k;
  }
  throw ArgumentError(fmt::format("unknown augmentation kind '{}'", text));
}

std::span<const AugmentKind> all_augment_kinds() { return kKinds; }

// ---------------------------------------------------------------- ingest

std::size_t IngestResult::per_class_sum() const {
  std::size_t s = 0;
  for (auto n : per_class) s += n;
  return s;
}

IngestResult ingest_dataset(const fs::path& root) {
  std::string expected;
  for (CellClass c : kClasses) expected += fmt::format("{}{}", expected.empty() ? "" : ", ", class_name(c));
  if (!fs::is_directory(root)) throw ConfigError(fmt::format("dataset root {} is not a directory", root.string()));

  std::array<fs::path, kNumClasses> dirs;
  std::vector<std::string> extra;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    const auto c = match_class_name(e.path().filename().string());
    if (!c) {
      extra.push_back(e.path().filename().string());
      continue;
    }
    auto& slot = dirs[static_cast<std::size_t>(*c)];
    if (!slot.empty()) {
      throw ConfigError(fmt::format("two folders map to class {}: {} and {}", class_name(*c),
                                    slot.filename().string(), e.path().filename().string()));
    }
    slot = e.path();
  }
  std::vector<std::string> missing;
  for (CellClass c : kClasses) {
    if (dirs[static_cast<std::size_t>(c)].empty()) missing.emplace_back(class_name(c));
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = fmt::format("dataset root {} must hold one folder per class ({})", root.string(), expected);
    if (!missing.empty()) msg += fmt::format("; missing: {}", fmt::join(missing, ", "));
    if (!extra.empty()) msg += fmt::format("; unexpected: {}", fmt::join(extra, ", "));
    throw ConfigError(msg);
  }

  IngestResult result;
  for (CellClass c : kClasses) {
    const fs::path dir = resolve_class_dir(dirs[static_cast<std::size_t>(c)]);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        const Image img = load_image(f);
        ImageRecord r;
        r.id = fmt::format("{}/{}", class_name(c), f.filename().string());
        r.path = fs::absolute(f);
        r.label = c;
        r.width = img.width;
        r.height = img.height;
        result.records.push_back(std::move(r));
        ++result.per_class[static_cast<std::size_t>(c)];
      } catch (const IoError& e) {
        result.rejects.push_back({f, e.what()});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------- size statistics

SizeStats compute_size_stats(std::span<const ImageRecord> records, double bin_width) {
  if (records.empty()) throw ArgumentError("size statistics need at least one record");
  if (!(bin_width > 0)) throw ArgumentError("histogram bin width must be positive");
  SizeStats s;
  s.bin_width = bin_width;
  s.min_size = {records[0].width, records[0].height};
  s.max_size = s.min_size;
  for (const auto& r : records) {
    if (r.width < 1 || r.height < 1) throw ArgumentError(fmt::format("record {} has no size", r.id));
    s.min_size = {std::min(s.min_size.first, r.width), std::min(s.min_size.second, r.height)};
    s.max_size = {std::max(s.max_size.first, r.width), std::max(s.max_size.second, r.height)};
  }
  auto bins = [&](int lo, int hi) { return static_cast<std::size_t>(std::floor((hi - lo) / bin_width)) + 1; };
  const std::size_t nw = bins(s.min_size.first, s.max_size.first);
  const std::size_t nh = bins(s.min_size.second, s.max_size.second);
  s.width_histogram = {double(s.min_size.first), bin_width, std::vector<std::size_t>(nw)};
  s.height_histogram = {double(s.min_size.second), bin_width, std::vector<std::size_t>(nh)};
  s.joint.assign(nw, std::vector<std::size_t>(nh));
  auto wbin = [&](int w) { return static_cast<std::size_t>(std::floor((w - s.min_size.first) / bin_width)); };
  auto hbin = [&](int h) { return static_cast<std::size_t>(std::floor((h - s.min_size.second) / bin_width)); };
  for (const auto& r : records) {
    ++s.width_histogram.counts[wbin(r.width)];
    ++s.height_histogram.counts[hbin(r.height)];
    ++s.joint[wbin(r.width)][hbin(r.height)];
  }
  double best_area = 0;
  for (std::size_t i = 0; i < nw; ++i) {
    for (std::size_t j = 0; j < nh; ++j) {
      const double cw = s.width_histogram.edge(i) + bin_width / 2, ch = s.height_histogram.edge(j) + bin_width / 2;
      const std::size_t n = s.joint[i][j];
      if (n > s.modal_count || (n == s.modal_count && n > 0 && cw * ch < best_area)) {
        s.modal_count = n;
        s.modal_bin = {i, j};
        s.modal_bin_center = {cw, ch};
        best_area = cw * ch;
      }
    }
  }
  double sw = 0, sh = 0;
  for (const auto& r : records) {
    if (wbin(r.width) == s.modal_bin.first && hbin(r.height) == s.modal_bin.second) {
      sw += r.width;
      sh += r.height;
    }
  }
  s.modal_size = {sw / double(s.modal_count), sh / double(s.modal_count)};
  return s;
}

// ---------------------------------------------------------------- split

std::array<std::array<std::size_t, 3>, kNumClasses> SplitManifest::per_class_counts() const {
  std::array<std::array<std::size_t, 3>, kNumClasses> out{};
  for (const auto& r : records) {
    if (r.split != Split::unassigned) ++out[static_cast<std::size_t>(r.label)][split_index(r.split)];
  }
  return out;
}

std::array<std::size_t, 3> SplitManifest::split_counts() const {
  std::array<std::size_t, 3> out{};
  for (const auto& r : records) {
    if (r.split != Split::unassigned) ++out[split_index(r.split)];
  }
  return out;
}

std::vector<const ImageRecord*> SplitManifest::select(Split s) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

const ImageRecord* SplitManifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

SplitManifest stratified_split(std::vector<ImageRecord> records, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ArgumentError(fmt::format("split ratios must be nonnegative and sum to 1 (got {}, {}, {})", ratios.train,
                                    ratios.val, ratios.test));
  }
  if (ratios.train + ratios.val <= 0) throw ArgumentError("train and val ratios cannot both be zero");
  const std::size_t needed = (ratios.train > 0) + (ratios.val > 0) + (ratios.test > 0);
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].provenance != Provenance::original) {
      throw ArgumentError(fmt::format("record {} is augmented; split originals only", records[i].id));
    }
    by_class[static_cast<std::size_t>(records[i].label)].push_back(i);
  }
  for (CellClass c : kClasses) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    if (idx.size() < needed) {
      throw ArgumentError(fmt::format("class {} has {} record(s); at least {} are needed, one per non-empty split",
                                      class_name(c), idx.size(), needed));
    }
    // Order by id first so the outcome does not depend on input order.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
    Rng rng(mix_seed(seed, fnv1a(class_name(c))));
    rng.shuffle(idx.begin(), idx.end());
    const auto n = static_cast<long>(idx.size());
    const long n_test = std::lround(double(n) * ratios.test);
    const long n_val = std::lround(double(n - n_test) * ratios.val / (ratios.train + ratios.val));
    for (long k = 0; k < n; ++k) {
      records[idx[k]].split = k < n_test ? Split::test : k < n_test + n_val ? Split::val : Split::train;
    }
  }
  SplitManifest m;
  m.records = std::move(records);
  m.ratios = ratios;
  m.seed = seed;
  return m;
}

// ---------------------------------------------------------------- augmentation

namespace {

Image warp(const Image& image, const cv::Matx23d& m) {
  if (m == cv::Matx23d(1, 0, 0, 0, 1, 0)) return image;
  Image out(image.width, image.height, image.channels);
  const int type = CV_32FC(image.channels);
  const cv::Mat src(image.height, image.width, type, const_cast<float*>(image.pixels.data()));
  cv::Mat dst(out.height, out.width, type, out.pixels.data());
  cv::warpAffine(src, dst, cv::Mat(m), dst.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return out;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

}  // namespace

Image augment_image(const Image& image, AugmentKind kind, const AugmentParams& p, std::uint64_t seed) {
  Rng rng(seed);
  const double cx = (image.width - 1) / 2.0, cy = (image.height - 1) / 2.0;
  auto symmetric = [&](double r) { return rng.uniform(-r, r); };
  switch (kind) {
    case AugmentKind::rotate: {
      const double a = radians(symmetric(p.rotate_degrees));
      const double c = std::cos(a), s = std::sin(a);
      return warp(image, {c, s, (1 - c) * cx - s * cy, -s, c, s * cx + (1 - c) * cy});
    }
    case AugmentKind::translate: {
      const double tx = symmetric(p.translate_fraction) * image.width;
      const double ty = symmetric(p.translate_fraction) * image.height;
      return warp(image, {1, 0, tx, 0, 1, ty});
    }
    case AugmentKind::scale: {
      const double s = rng.uniform(p.scale_min, p.scale_max);
      return warp(image, {s, 0, (1 - s) * cx, 0, s, (1 - s) * cy});
    }
    case AugmentKind::shear: {
      const double t = std::tan(radians(symmetric(p.shear_degrees)));
      return warp(image, {1, t, -t * cy, 0, 1, 0});
    }
    case AugmentKind::zoom: {
      const double zx = rng.uniform(p.zoom_min, p.zoom_max), zy = rng.uniform(p.zoom_min, p.zoom_max);
      return warp(image, {zx, 0, (1 - zx) * cx, 0, zy, (1 - zy) * cy});
    }
    case AugmentKind::flip: {
      Image out = image;
      const bool horizontal = rng.bernoulli(0.5);
      for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
          const int sx = horizontal ? image.width - 1 - x : x;
          const int sy = horizontal ? y : image.height - 1 - y;
          for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
        }
      }
      return out;
    }
    case AugmentKind::pad: {
      // Replicate-pad each side, then resize back: the content shrinks off-centre.
      auto margin = [&](int extent) { return static_cast<int>(std::lround(rng.uniform(0, p.pad_fraction) * extent)); };
      const int l = margin(image.width), r = margin(image.width), t = margin(image.height), b = margin(image.height);
      if (l + r + t + b == 0) return image;
      Image padded(image.width + l + r, image.height + t + b, image.channels);
      for (int y = 0; y < padded.height; ++y) {
        for (int x = 0; x < padded.width; ++x) {
          const int sx = std::clamp(x - l, 0, image.width - 1), sy = std::clamp(y - t, 0, image.height - 1);
          for (int c = 0; c < image.channels; ++c) padded.at(x, y, c) = image.at(sx, sy, c);
        }
      }
      return resize_bilinear(padded, image.width, image.height);
    }
    case AugmentKind::noise: {
      Image out = image;
      for (auto& v : out.pixels) v = clamp01(v + p.noise_sigma * rng.normal());
      return out;
    }
    case AugmentKind::contrast: {
      const double f = rng.uniform(p.contrast_min, p.contrast_max);
      Image out = image;
      for (int c = 0; c < image.channels; ++c) {
        double mean = 0;
        for (std::size_t i = c; i < image.pixels.size(); i += image.channels) mean += image.pixels[i];
        mean /= double(image.width) * image.height;
        for (std::size_t i = c; i < out.pixels.size(); i += image.channels) {
          out.pixels[i] = clamp01(mean + (image.pixels[i] - mean) * f);
        }
      }
      return out;
    }
    case AugmentKind::brightness: {
      const double d = symmetric(p.brightness_delta);
      Image out = image;
      for (auto& v : out.pixels) v = clamp01(v + d);
      return out;
    }
    case AugmentKind::pixel_shift: {
      std::vector<double> shift(image.channels);
      for (auto& s : shift) s = symmetric(p.pixel_shift);
      Image out = image;
      for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = clamp01(out.pixels[i] + shift[i % image.channels]);
      return out;
    }
  }
  throw ArgumentError("unknown augmentation kind");
}

SplitManifest augment_training_set(const SplitManifest& manifest, int factor, std::span<const AugmentKind> kinds,
                                   bool replacement, std::uint64_t seed) {
  if (factor < 0) throw ArgumentError("augmentation factor must be nonnegative");
  if (factor == 0) return manifest;
  if (kinds.empty()) throw ArgumentError("no augmentation kinds configured");
  if (!replacement && static_cast<std::size_t>(factor) > kinds.size()) {
    throw ArgumentError(fmt::format("factor {} exceeds the {} configured augmentation kinds; enable replacement or "
                                    "configure more kinds",
                                    factor, kinds.size()));
  }
  SplitManifest out = manifest;
  out.augmentation_factor = factor;
  out.augmentation_kinds.assign(kinds.begin(), kinds.end());
  for (const auto& r : manifest.records) {
    if (r.provenance != Provenance::original || r.split != Split::train) continue;
    Rng rng(mix_seed(seed, fnv1a(r.id)));
    std::vector<AugmentKind> chosen(kinds.begin(), kinds.end());
    if (replacement) {
      chosen.clear();
      for (int i = 0; i < factor; ++i) chosen.push_back(kinds[rng.below(kinds.size())]);
    } else {
      rng.shuffle(chosen.begin(), chosen.end());
      chosen.resize(static_cast<std::size_t>(factor));
    }
    for (int i = 0; i < factor; ++i) {
      ImageRecord child = r;
      const AugmentKind k = chosen[static_cast<std::size_t>(i)];
      child.id = fmt::format("{}#{}{}", r.id, augment_kind_name(k), i);
      child.provenance = Provenance::augmented;
      child.kind = k;
      child.seed = mix_seed(mix_seed(seed, fnv1a(r.id)), fnv1a(augment_kind_name(k)) + static_cast<unsigned>(i));
      child.parent_id = r.id;
      out.records.push_back(std::move(child));
    }
  }
  return out;
}

// ---------------------------------------------------------------- manifest files

namespace {

json record_json(const ImageRecord& r) {
  json j = {{"id", r.id},
            {"path", r.path.string()},
            {"label", class_name(r.label)},
            {"split", split_name(r.split)},
            {"provenance", r.provenance == Provenance::original ? "original" : "augmented"},
            {"parent_id", r.parent_id.empty() ? json(nullptr) : json(r.parent_id)},
            {"kind", r.kind ? json(augment_kind_name(*r.kind)) : json(nullptr)},
            {"seed", r.seed ? json(*r.seed) : json(nullptr)},
            {"width", r.width},
            {"height", r.height}};
  return j;
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.label = parse_class(j.at("label").get<std::string>());
  r.split = parse_split(j.at("split").get<std::string>());
  const auto prov = j.at("provenance").get<std::string>();
  if (prov != "original" && prov != "augmented") throw IoError("bad provenance '" + prov + "'");
  r.provenance = prov == "original" ? Provenance::original : Provenance::augmented;
  if (!j.at("parent_id").is_null()) r.parent_id = j.at("parent_id").get<std::string>();
  if (!j.at("kind").is_null()) r.kind = parse_augment_kind(j.at("kind").get<std::string>());
  if (!j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  return r;
}

json params_json(const AugmentParams& p) {
  return {{"rotate_degrees", p.rotate_degrees}, {"translate_fraction", p.translate_fraction},
          {"scale_min", p.scale_min},           {"scale_max", p.scale_max},
          {"shear_degrees", p.shear_degrees},   {"zoom_min", p.zoom_min},
          {"zoom_max", p.zoom_max},             {"pad_fraction", p.pad_fraction},
          {"noise_sigma", p.noise_sigma},       {"contrast_min", p.contrast_min},
          {"contrast_max", p.contrast_max},     {"brightness_delta", p.brightness_delta},
          {"pixel_shift", p.pixel_shift}};
}

AugmentParams params_from_json(const json& j) {
  AugmentParams p;
  p.rotate_degrees = j.at("rotate_degrees");
  p.translate_fraction = j.at("translate_fraction");
  p.scale_min = j.at("scale_min");
  p.scale_max = j.at("scale_max");
  p.shear_degrees = j.at("shear_degrees");
  p.zoom_min = j.at("zoom_min");
  p.zoom_max = j.at("zoom_max");
  p.pad_fraction = j.at("pad_fraction");
  p.noise_sigma = j.at("noise_sigma");
  p.contrast_min = j.at("contrast_min");
  p.contrast_max = j.at("contrast_max");
  p.brightness_delta = j.at("brightness_delta");
  p.pixel_shift = j.at("pixel_shift");
  return p;
}

std::string records_text(const SplitManifest& m) {
  std::string out;
  for (const auto& r : m.records) out += record_json(r).dump() + "\n";
  return out;
}

}  // namespace

std::string serialize_manifest(const SplitManifest& m) {
  json kinds = json::array();
  for (auto k : m.augmentation_kinds) kinds.push_back(augment_kind_name(k));
  const json header = {{"type", "cytoxai-manifest"},
                       {"tool_version", kToolVersion},
                       {"ratios", {{"train", m.ratios.train}, {"val", m.ratios.val}, {"test", m.ratios.test}}},
                       {"seed", m.seed},
                       {"augmentation_factor", m.augmentation_factor},
                       {"augmentation_kinds", kinds},
                       {"augment_params", params_json(m.augment_params)},
                       {"image_size", m.image_size},
                       {"config_hash", m.config_hash},
                       {"records", m.records.size()}};
  return header.dump() + "\n" + records_text(m);
}

std::string manifest_hash(const SplitManifest& m) { return sha256_hex(records_text(m)); }

void write_manifest(const SplitManifest& m, const fs::path& path) { write_file_atomic(path, serialize_manifest(m)); }

SplitManifest read_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  SplitManifest m;
  std::size_t pos = 0, line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!header_seen) {
        if (j.value("type", "") != "cytoxai-manifest") throw IoError("missing manifest header");
        const auto& r = j.at("ratios");
        m.ratios = {r.at("train"), r.at("val"), r.at("test")};
        m.seed = j.at("seed").get<std::uint64_t>();
        m.augmentation_factor = j.at("augmentation_factor");
        for (const auto& k : j.at("augmentation_kinds")) m.augmentation_kinds.push_back(parse_augment_kind(k.get<std::string>()));
        m.augment_params = params_from_json(j.at("augment_params"));
        m.image_size = j.at("image_size");
        m.config_hash = j.value("config_hash", "");
        header_seen = true;
      } else {
        m.records.push_back(record_from_json(j));
      }
    } catch (const json::exception& e) {
      throw IoError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    } catch (const ArgumentError& e) {
      throw IoError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  if (!header_seen) throw IoError(path.string() + " is empty");
  return m;
}

// ---------------------------------------------------------------- image store

const Image& ImageStore::original(const ImageRecord& record) {
  auto it = cache_.find(record.id);
  if (it == cache_.end()) {
    const int s = manifest_->image_size;
    it = cache_.emplace(record.id, resize_bilinear(load_image(record.path), s, s)).first;
  }
  return it->second;
}

Image ImageStore::load(const ImageRecord& record) {
  if (record.provenance == Provenance::original) return original(record);
  if (index_.empty()) {
    for (const auto& r : manifest_->records) index_.emplace(r.id, &r);
  }
  const auto found = index_.find(record.parent_id);
  const ImageRecord* parent = found == index_.end() ? nullptr : found->second;
  if (!parent) throw IoError(fmt::format("augmented record {} has no parent {}", record.id, record.parent_id));
  if (!record.kind || !record.seed) throw IoError(fmt::format("augmented record {} lacks kind or seed", record.id));
  return augment_image(original(*parent), *record.kind, manifest_->augment_params, *record.seed);
}

}  // namespace cytoxai
