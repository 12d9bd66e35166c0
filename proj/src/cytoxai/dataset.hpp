#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/image.hpp"

namespace cytoxai {

// Alphabetical, which is also the order class weights are listed in.
enum class CellClass { dyskeratotic, koilocytotic, metaplastic, parabasal, superficial_intermediate };
inline constexpr int kNumClasses = 5;

std::string_view class_name(CellClass c);
std::span<const CellClass> all_classes();
// Accepts canonical names and folder spellings such as "im_Superficial-Intermediate".
std::optional<CellClass> match_class_name(std::string_view text);
CellClass parse_class(std::string_view text);

enum class Split { train, val, test, unassigned };
std::string_view split_name(Split s);
Split parse_split(std::string_view text);

enum class Provenance { original, augmented };

enum class AugmentKind { rotate, translate, scale, shear, zoom, flip, pad, noise, contrast, brightness, pixel_shift };
std::string_view augment_kind_name(AugmentKind k);
AugmentKind parse_augment_kind(std::string_view text);
std::span<const AugmentKind> all_augment_kinds();

struct ImageRecord {
  std::string id;
  std::filesystem::path path;
  CellClass label = CellClass::dyskeratotic;
  Split split = Split::unassigned;
  int width = 0;
  int height = 0;
  Provenance provenance = Provenance::original;
  std::optional<AugmentKind> kind;
  std::optional<std::uint64_t> seed;
  std::string parent_id;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Reject {
  std::filesystem::path path;
  std::string reason;
};

struct IngestResult {
  std::vector<ImageRecord> records;
  std::vector<Reject> rejects;
  std::array<std::size_t, kNumClasses> per_class{};
  std::size_t per_class_sum() const;
};

// One subdirectory per class. A class folder that itself holds a same-named
// folder and/or a CROPPED folder is descended into (the SIPaKMeD archive
// layout); scanning is otherwise non-recursive. Files other than
// bmp/png/jpg/jpeg are ignored, undecodable images are collected as rejects.
IngestResult ingest_dataset(const std::filesystem::path& root);

struct Histogram {
  double origin = 0.0;
  double bin_width = 5.0;
  std::vector<std::size_t> counts;

  double edge(std::size_t i) const { return origin + bin_width * static_cast<double>(i); }
};

struct SizeStats {
  double bin_width = 5.0;
  Histogram width_histogram, height_histogram;
  // joint[w_bin][h_bin]
  std::vector<std::vector<std::size_t>> joint;
  std::pair<std::size_t, std::size_t> modal_bin{0, 0};
  std::size_t modal_count = 0;
  // Centre of the modal bin, and the mean size of the images that fall in it.
  std::pair<double, double> modal_bin_center{0, 0};
  std::pair<double, double> modal_size{0, 0};
  std::pair<int, int> min_size{0, 0};
  std::pair<int, int> max_size{0, 0};
};

// Bins are anchored at the smallest width/height. Ties between equally full
// bins go to the smaller bin area.
SizeStats compute_size_stats(std::span<const ImageRecord> records, double bin_width = 5.0);

struct SplitRatios {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

struct AugmentParams {
  double rotate_degrees = 30.0;
  double translate_fraction = 0.10;
  double scale_min = 0.9, scale_max = 1.1;
  double shear_degrees = 10.0;
  double zoom_min = 0.9, zoom_max = 1.1;
  double pad_fraction = 0.10;
  double noise_sigma = 0.02;
  double contrast_min = 0.8, contrast_max = 1.2;
  double brightness_delta = 0.10;
  double pixel_shift = 0.05;

  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

struct SplitManifest {
  std::vector<ImageRecord> records;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  int augmentation_factor = 0;
  std::vector<AugmentKind> augmentation_kinds;
  AugmentParams augment_params;
  int image_size = 110;
  // Hash of the run config that produced the manifest (empty when unknown).
  std::string config_hash;

  // [class][split] for train, val, test.
  std::array<std::array<std::size_t, 3>, kNumClasses> per_class_counts() const;
  std::array<std::size_t, 3> split_counts() const;
  std::vector<const ImageRecord*> select(Split s) const;
  const ImageRecord* find(std::string_view id) const;
};

// Two-stage stratified split: per class, round(n * test) records go to test,
// then round(rest * val / (train + val)) to val, the remainder to train.
SplitManifest stratified_split(std::vector<ImageRecord> records, SplitRatios ratios, std::uint64_t seed);

// Output has the input's dimensions. Deterministic in (kind, params, seed).
Image augment_image(const Image& image, AugmentKind kind, const AugmentParams& params, std::uint64_t seed);

// Adds `factor` augmented children per original train record. Without
// replacement the kinds of one record's children are distinct.
SplitManifest augment_training_set(const SplitManifest& manifest, int factor, std::span<const AugmentKind> kinds,
                                   bool replacement, std::uint64_t seed);

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest read_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const SplitManifest& manifest);
// SHA-256 over the serialized records (header excluded).
std::string manifest_hash(const SplitManifest& manifest);

// Supplies the pixels of a record at the manifest image size.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Image load(const ImageRecord& record) = 0;
};

// Decodes originals once (resized to the manifest image size) and rebuilds
// augmented records from their parent on demand.
class ImageStore final : public ImageSource {
 public:
  explicit ImageStore(const SplitManifest& manifest) : manifest_(&manifest) {}
  Image load(const ImageRecord& record) override;

 private:
  const Image& original(const ImageRecord& record);
  const SplitManifest* manifest_;
  std::map<std::string, Image> cache_;
  std::map<std::string, const ImageRecord*, std::less<>> index_;
};

}  // namespace cytoxai
