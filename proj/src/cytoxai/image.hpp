#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace cytoxai {

// Interleaved (HWC) float image with values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Decodes bmp/png/jpg into RGB. Throws IoError when the file cannot be decoded.
Image load_image(const std::filesystem::path& path);
// Writes an 8-bit image; the format follows the extension. Atomic (temp + rename).
void save_image(const Image& image, const std::filesystem::path& path);

// Bilinear resampling with half-pixel centres and edge clamping. Same-size
// input is returned unchanged.
Image resize_bilinear(const Image& image, int width, int height);

// Single-plane variant used for heatmap upsampling.
std::vector<double> resize_plane(std::span<const double> plane, int width, int height, int out_width, int out_height);

}  // namespace cytoxai
