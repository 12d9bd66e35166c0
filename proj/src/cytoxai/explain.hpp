#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/image.hpp"
#include "cytoxai/losses.hpp"
#include "cytoxai/model_zoo.hpp"

namespace cytoxai {

// K feature maps of H x W, stored channel-major: data[(k * H + y) * W + x].
struct FeatureMaps {
  int channels = 0, height = 0, width = 0;
  std::vector<double> data;

  FeatureMaps() = default;
  FeatureMaps(int k, int h, int w, double fill = 0.0)
      : channels(k), height(h), width(w), data(static_cast<std::size_t>(k) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int k, int y, int x) { return data[(static_cast<std::size_t>(k) * height + y) * width + x]; }
  double at(int k, int y, int x) const { return data[(static_cast<std::size_t>(k) * height + y) * width + x]; }
  std::span<const double> channel(int k) const { return {data.data() + k * plane(), plane()}; }
};

struct ActivationStack {
  FeatureMaps maps;
  std::string layer;
  int class_index = 0;
  double score = 0.0;
};

// First-order gradients of the class score. GradCAM++ derives its higher
// orders from these (exponential-score convention).
struct GradientStack {
  FeatureMaps maps;
};

enum class CamMethod { gradcam, gradcampp, scorecam, layercam };
std::string_view cam_method_name(CamMethod method);
CamMethod parse_cam_method(std::string_view name);

struct Heatmap {
  int width = 0, height = 0;
  std::vector<double> values;
  std::string method;
  int class_index = 0;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Low-resolution maps before upsampling and normalisation.
std::vector<double> grad_cam_map(const ActivationStack& act, const GradientStack& grad);
std::vector<double> grad_cam_pp_map(const ActivationStack& act, const GradientStack& grad);
std::vector<double> layer_cam_map(const ActivationStack& act, const GradientStack& grad);

// Bilinear upsampling to out_w x out_h followed by min-max normalisation;
// a constant map becomes all zeros, or all ones when positive.
Heatmap finalize_heatmap(std::span<const double> map, int width, int height, int out_width, int out_height,
                         std::string method, int class_index);

Heatmap grad_cam(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height);
Heatmap grad_cam_pp(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height);
Heatmap layer_cam(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height);

// Scores (N x classes) for a batch of images.
using ScorePredictor = std::function<RowMatrix(std::span<const Image>)>;

// Mask of channel k: min-max normalised A_k upsampled to the image size (all
// zero for a constant channel).
std::vector<double> score_cam_mask(const ActivationStack& act, int k, int width, int height);
Image apply_mask(const Image& image, std::span<const double> mask);

// Channel weights are the softmax of y_c(masked_k) - y_c(zero image). Masked
// forwards run in chunks of `batch_size`; the result does not depend on it.
Heatmap score_cam(const ScorePredictor& predictor, const Image& image, const ActivationStack& act,
                  int batch_size = 16);

struct CamOptions {
  // -1: the predicted class.
  int class_index = -1;
  // Empty: the model's last convolution.
  std::string layer;
  int batch_size = 16;
};

// Activations and gradients of the pre-softmax class score at a layer of a
// classifier model, in evaluation mode.
std::pair<ActivationStack, GradientStack> capture_cam_inputs(Model& model, const Image& image,
                                                             const CamOptions& options = {});
Heatmap explain_cam(Model& model, const Image& image, CamMethod method, const CamOptions& options = {});

// Per-pixel segment ids in [0, count).
struct SuperpixelMap {
  int width = 0, height = 0;
  int count = 0;
  std::vector<int> labels;

  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

// SLIC (OpenCV ximgproc) over CIELab with connectivity enforcement; images
// without any colour variation get a regular grid instead.
SuperpixelMap segment_superpixels(const Image& image, int n_segments);
SuperpixelMap grid_segments(int width, int height, int n_segments);

struct LimeConfig {
  int n_samples = 1000;
  // <= 0: 0.25 * sqrt(segment count).
  double kernel_width = 0.0;
  double ridge_lambda = 1.0;
  int top_k = 5;
  std::uint64_t seed = 0;
  int batch_size = 32;
};

struct LimeExplanation {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double r2 = 0.0;
  // Positive segments by decreasing coefficient, at most top_k.
  std::vector<int> top_segments;
  int class_index = 0;
  std::uint64_t seed = 0;
};

// Probabilities (N x classes) for a batch of images.
using ProbabilityPredictor = std::function<RowMatrix(std::span<const Image>)>;

LimeExplanation lime_explain(const ProbabilityPredictor& predictor, const Image& image,
                             const SuperpixelMap& segments, int class_index, const LimeConfig& config = {});

enum class OverlayMode { cam, lime_positive, lime_pros_cons };

struct OverlayOptions {
  double cam_blend = 0.4;
  double dim_factor = 0.3;
  // Pros/cons tint only segments whose |coefficient| reaches this fraction of
  // the largest |coefficient|.
  double significance = 0.05;
  double tint_blend = 0.5;
};

// out = (1 - blend) * image + blend * h * viridis(h).
Image render_cam_overlay(const Image& image, const Heatmap& heatmap, const OverlayOptions& options = {});
Image render_lime_overlay(const Image& image, const LimeExplanation& explanation, const SuperpixelMap& segments,
                          OverlayMode mode, const OverlayOptions& options = {});

// Rows of comma-separated values.
std::string heatmap_to_csv(const Heatmap& heatmap);

}  // namespace cytoxai
