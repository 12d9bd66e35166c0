#include "cytoxai/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "cytoxai/error.hpp"
#include "cytoxai/persistence.hpp"

namespace cytoxai {

namespace {

struct Tap {
  int i0, i1;
  double f;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    int i0 = static_cast<int>(std::floor(s));
    double f = s - i0;
    if (i0 >= in - 1) {
      i0 = in - 1;
      f = 0.0;
    }
    taps[d] = {i0, std::min(i0 + 1, in - 1), f};
  }
  return taps;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  Image out(bgr.cols, bgr.rows, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = row[x][2 - c] / 255.0f;
    }
  }
  return out;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3 && image.channels != 1) throw ArgumentError("save_image: unsupported channel count");
  cv::Mat mat(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const int src_c = image.channels == 3 ? 2 - c : 0;
        const float v = std::clamp(image.at(x, y, src_c), 0.0f, 1.0f);
        row[x * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  std::vector<unsigned char> buffer;
  std::string ext = path.extension().string();
  if (ext.empty()) ext = ".png";
  if (!cv::imencode(ext, mat, buffer)) throw IoError("cannot encode image " + path.string());
  write_file_atomic(path, std::string(buffer.begin(), buffer.end()));
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width < 1 || height < 1) throw ArgumentError("resize target must be at least 1x1");
  if (image.width == width && image.height == height) return image;
  const auto xs = bilinear_taps(image.width, width);
  const auto ys = bilinear_taps(image.height, height);
  Image out(width, height, image.channels);
  for (int y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(tx.i0, ty.i0, c) * (1.0 - tx.f) + image.at(tx.i1, ty.i0, c) * tx.f;
        const double bottom = image.at(tx.i0, ty.i1, c) * (1.0 - tx.f) + image.at(tx.i1, ty.i1, c) * tx.f;
        out.at(x, y, c) = static_cast<float>(top * (1.0 - ty.f) + bottom * ty.f);
      }
    }
  }
  return out;
}

std::vector<double> resize_plane(std::span<const double> plane, int width, int height, int out_width,
                                 int out_height) {
  if (plane.size() != static_cast<std::size_t>(width) * height) throw ArgumentError("resize_plane: size mismatch");
  if (out_width < 1 || out_height < 1) throw ArgumentError("resize target must be at least 1x1");
  if (width == out_width && height == out_height) return {plane.begin(), plane.end()};
  const auto xs = bilinear_taps(width, out_width);
  const auto ys = bilinear_taps(height, out_height);
  std::vector<double> out(static_cast<std::size_t>(out_width) * out_height);
  for (int y = 0; y < out_height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < out_width; ++x) {
      const Tap& tx = xs[x];
      const double top = plane[ty.i0 * width + tx.i0] * (1.0 - tx.f) + plane[ty.i0 * width + tx.i1] * tx.f;
      const double bottom = plane[ty.i1 * width + tx.i0] * (1.0 - tx.f) + plane[ty.i1 * width + tx.i1] * tx.f;
      out[static_cast<std::size_t>(y) * out_width + x] = top * (1.0 - ty.f) + bottom * ty.f;
    }
  }
  return out;
}

}  // namespace cytoxai
