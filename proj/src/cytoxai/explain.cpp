#include "cytoxai/explain.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <opencv2/imgproc.hpp>
#include <opencv2/ximgproc/slic.hpp>
#include <stdexcept>

#include "cytoxai/error.hpp"
#include "cytoxai/random.hpp"

namespace cytoxai {

std::string_view cam_method_name(CamMethod method) {
  switch (method) {
    case CamMethod::gradcam: return "gradcam";
    case CamMethod::gradcampp: return "gradcampp";
    case CamMethod::scorecam: return "scorecam";
    case CamMethod::layercam: return "layercam";
  }
  return "?";
}

CamMethod parse_cam_method(std::string_view name) {
  for (CamMethod m : {CamMethod::gradcam, CamMethod::gradcampp, CamMethod::scorecam, CamMethod::layercam}) {
    if (cam_method_name(m) == name) return m;
  }
  throw ArgumentError(fmt::format("unknown CAM method '{}' (gradcam, gradcampp, scorecam, layercam)", name));
}

namespace {

void check_maps(const FeatureMaps& m, std::string_view what) {
  if (m.channels < 1 || m.height < 1 || m.width < 1) throw ArgumentError(fmt::format("{} stack is empty", what));
  if (m.data.size() != static_cast<std::size_t>(m.channels) * m.plane()) {
    throw ArgumentError(fmt::format("{} stack holds {} values, expected {}", what, m.data.size(),
                                    static_cast<std::size_t>(m.channels) * m.plane()));
  }
}

void check_pair(const ActivationStack& act, const GradientStack& grad) {
  check_maps(act.maps, "activation");
  check_maps(grad.maps, "gradient");
  const auto& a = act.maps;
  const auto& g = grad.maps;
  if (a.channels != g.channels || a.height != g.height || a.width != g.width) {
    throw ArgumentError(fmt::format("activations are {}x{}x{} but gradients {}x{}x{}", a.channels, a.height, a.width,
                                    g.channels, g.height, g.width));
  }
}

// ReLU(sum_k w_k A_k)
std::vector<double> weighted_sum(const FeatureMaps& a, std::span<const double> w) {
  std::vector<double> map(a.plane(), 0.0);
  for (int k = 0; k < a.channels; ++k) {
    const auto ch = a.channel(k);
    for (std::size_t i = 0; i < map.size(); ++i) map[i] += w[k] * ch[i];
  }
  for (double& v : map) v = std::max(v, 0.0);
  return map;
}

constexpr double kDenominatorGuard = 1e-8;

}  // namespace

std::vector<double> grad_cam_map(const ActivationStack& act, const GradientStack& grad) {
  check_pair(act, grad);
  const auto& g = grad.maps;
  std::vector<double> alpha(g.channels);
  for (int k = 0; k < g.channels; ++k) {
    const auto ch = g.channel(k);
    alpha[k] = std::accumulate(ch.begin(), ch.end(), 0.0) / static_cast<double>(g.plane());
  }
  return weighted_sum(act.maps, alpha);
}

std::vector<double> grad_cam_pp_map(const ActivationStack& act, const GradientStack& grad) {
  check_pair(act, grad);
  const auto& a = act.maps;
  const auto& g = grad.maps;
  std::vector<double> w(g.channels, 0.0);
  for (int k = 0; k < g.channels; ++k) {
    const auto ak = a.channel(k);
    const auto gk = g.channel(k);
    const double sum_a = std::accumulate(ak.begin(), ak.end(), 0.0);
    for (std::size_t i = 0; i < gk.size(); ++i) {
      const double g1 = gk[i], g2 = g1 * g1, g3 = g2 * g1;
      const double den = 2.0 * g2 + sum_a * g3;
      const double alpha = (g1 == 0.0 || std::abs(den) < kDenominatorGuard) ? 0.0 : g2 / den;
      w[k] += alpha * std::max(g1, 0.0);
    }
  }
  return weighted_sum(a, w);
}

std::vector<double> layer_cam_map(const ActivationStack& act, const GradientStack& grad) {
  check_pair(act, grad);
  const auto& a = act.maps;
  const auto& g = grad.maps;
  std::vector<double> map(a.plane(), 0.0);
  for (int k = 0; k < a.channels; ++k) {
    const auto ak = a.channel(k);
    const auto gk = g.channel(k);
    for (std::size_t i = 0; i < map.size(); ++i) map[i] += std::max(gk[i], 0.0) * ak[i];
  }
  for (double& v : map) v = std::max(v, 0.0);
  return map;
}

Heatmap finalize_heatmap(std::span<const double> map, int width, int height, int out_width, int out_height,
                         std::string method, int class_index) {
  Heatmap h;
  h.width = out_width;
  h.height = out_height;
  h.method = std::move(method);
  h.class_index = class_index;
  h.values = resize_plane(map, width, height, out_width, out_height);
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  const double mn = *lo, mx = *hi;
  if (mx > mn) {
    for (double& v : h.values) v = (v - mn) / (mx - mn);
  } else {
    std::fill(h.values.begin(), h.values.end(), mx > 0.0 ? 1.0 : 0.0);
  }
  return h;
}

Heatmap grad_cam(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height) {
  return finalize_heatmap(grad_cam_map(act, grad), act.maps.width, act.maps.height, out_width, out_height, "gradcam",
                          act.class_index);
}

Heatmap grad_cam_pp(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height) {
  return finalize_heatmap(grad_cam_pp_map(act, grad), act.maps.width, act.maps.height, out_width, out_height,
                          "gradcampp", act.class_index);
}

Heatmap layer_cam(const ActivationStack& act, const GradientStack& grad, int out_width, int out_height) {
  return finalize_heatmap(layer_cam_map(act, grad), act.maps.width, act.maps.height, out_width, out_height,
                          "layercam", act.class_index);
}

std::vector<double> score_cam_mask(const ActivationStack& act, int k, int width, int height) {
  const auto ch = act.maps.channel(k);
  const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
  std::vector<double> norm(ch.size(), 0.0);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < ch.size(); ++i) norm[i] = (ch[i] - *lo) / (*hi - *lo);
  }
  return resize_plane(norm, act.maps.width, act.maps.height, width, height);
}

Image apply_mask(const Image& image, std::span<const double> mask) {
  if (mask.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw ArgumentError("mask does not match the image size");
  }
  Image out = image;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    for (int c = 0; c < image.channels; ++c) {
      float& v = out.pixels[p * image.channels + c];
      v = static_cast<float>(v * mask[p]);
    }
  }
  return out;
}

Heatmap score_cam(const ScorePredictor& predictor, const Image& image, const ActivationStack& act, int batch_size) {
  check_maps(act.maps, "activation");
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  const int c = act.class_index;
  const int k_count = act.maps.channels;
  const Image zero(image.width, image.height, image.channels, 0.0f);
  const RowMatrix base_scores = predictor(std::span<const Image>(&zero, 1));
  if (base_scores.rows() != 1 || c < 0 || c >= base_scores.cols()) {
    throw ArgumentError(fmt::format("predictor returned {}x{} scores for class {}", base_scores.rows(),
                                    base_scores.cols(), c));
  }
  const double baseline = base_scores(0, c);
  std::vector<double> delta(k_count);
  for (int first = 0; first < k_count; first += batch_size) {
    const int last = std::min(k_count, first + batch_size);
    std::vector<Image> masked;
    for (int k = first; k < last; ++k) masked.push_back(apply_mask(image, score_cam_mask(act, k, image.width, image.height)));
    RowMatrix scores;
    try {
      scores = predictor(masked);
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("score_cam: predictor failed on channels {}..{}: {}", first, last - 1,
                                           e.what()));
    }
    if (scores.rows() != last - first || c >= scores.cols()) {
      throw std::runtime_error(fmt::format("score_cam: predictor returned {} rows for channels {}..{}",
                                           scores.rows(), first, last - 1));
    }
    for (int k = first; k < last; ++k) delta[k] = scores(k - first, c) - baseline;
  }
  const double m = *std::max_element(delta.begin(), delta.end());
  std::vector<double> w(k_count);
  double total = 0.0;
  for (int k = 0; k < k_count; ++k) total += (w[k] = std::exp(delta[k] - m));
  for (double& v : w) v /= total;
  return finalize_heatmap(weighted_sum(act.maps, w), act.maps.width, act.maps.height, image.width, image.height,
                          "scorecam", c);
}

namespace {

RowMatrix logits_of(Model& model, std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  nn::Network& net = model.network();
  const int logits = model.logits_node();
  const nn::Tensor& t = net.forward(model.make_batch(ptrs), false, logits);
  RowMatrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

}  // namespace

std::pair<ActivationStack, GradientStack> capture_cam_inputs(Model& model, const Image& image,
                                                             const CamOptions& options) {
  const int logits = model.logits_node();
  if (logits < 0) throw ArgumentError("CAM needs a model with a classifier head");
  nn::Network& net = model.network();
  int layer = model.last_conv_node();
  if (!options.layer.empty()) {
    const auto found = net.find(options.layer);
    if (!found) throw ArgumentError(fmt::format("no layer named '{}'", options.layer));
    layer = *found;
  }
  if (net.output_shape(layer).size() != 3) {
    throw ArgumentError(fmt::format("layer '{}' does not produce feature maps", net.layer(layer).name()));
  }
  const RowMatrix scores = logits_of(model, std::span<const Image>(&image, 1));
  int cls = options.class_index;
  if (cls < 0) {
    Eigen::Index arg;
    scores.row(0).maxCoeff(&arg);
    cls = static_cast<int>(arg);
  }
  if (cls >= scores.cols()) throw ArgumentError(fmt::format("class {} outside [0, {})", cls, scores.cols()));
  nn::Tensor seed({1, static_cast<int>(scores.cols())});
  seed[cls] = 1.0f;
  const int capture[] = {layer};
  net.backward(seed, logits, capture);
  const nn::Tensor& a = net.value(layer);
  const nn::Tensor& g = net.gradient(layer);
  ActivationStack act;
  act.maps = FeatureMaps(a.dim(1), a.dim(2), a.dim(3));
  GradientStack grad;
  grad.maps = FeatureMaps(a.dim(1), a.dim(2), a.dim(3));
  for (std::size_t i = 0; i < act.maps.data.size(); ++i) {
    act.maps.data[i] = a[i];
    grad.maps.data[i] = g.empty() ? 0.0 : g[i];
  }
  act.layer = net.layer(layer).name();
  act.class_index = cls;
  act.score = scores(0, cls);
  return {std::move(act), std::move(grad)};
}

Heatmap explain_cam(Model& model, const Image& image, CamMethod method, const CamOptions& options) {
  const auto [act, grad] = capture_cam_inputs(model, image, options);
  switch (method) {
    case CamMethod::gradcam: return grad_cam(act, grad, image.width, image.height);
    case CamMethod::gradcampp: return grad_cam_pp(act, grad, image.width, image.height);
    case CamMethod::layercam: return layer_cam(act, grad, image.width, image.height);
    case CamMethod::scorecam:
      return score_cam([&](std::span<const Image> batch) { return logits_of(model, batch); }, image, act,
                       options.batch_size);
  }
  throw ArgumentError("unknown CAM method");
}

SuperpixelMap grid_segments(int width, int height, int n_segments) {
  if (width < 1 || height < 1) throw ArgumentError("cannot segment an empty image");
  if (n_segments < 1) throw ArgumentError("need at least one segment");
  const int nx = std::clamp(static_cast<int>(std::lround(std::sqrt(double(n_segments) * width / height))), 1, width);
  const int ny = std::clamp(static_cast<int>(std::lround(double(n_segments) / nx)), 1, height);
  SuperpixelMap map;
  map.width = width;
  map.height = height;
  map.count = nx * ny;
  map.labels.resize(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      map.labels[static_cast<std::size_t>(y) * width + x] = (y * ny / height) * nx + x * nx / width;
    }
  }
  return map;
}

SuperpixelMap segment_superpixels(const Image& image, int n_segments) {
  if (n_segments < 2) throw ArgumentError("need at least two segments");
  if (image.empty() || image.channels != 3) throw ArgumentError("superpixels need a non-empty RGB image");
  bool uniform = true;
  for (std::size_t i = 3; i < image.pixels.size() && uniform; ++i) {
    uniform = std::abs(image.pixels[i] - image.pixels[i % 3]) < 1e-6f;
  }
  if (uniform) return grid_segments(image.width, image.height, n_segments);

  cv::Mat rgb(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
  cv::Mat lab;
  cv::cvtColor(rgb, lab, cv::COLOR_RGB2Lab);
  // The seed grid and the connectivity pass both move the final count away
  // from the request, so nearby region sizes are tried and the closest kept.
  const double base = std::sqrt(double(image.width) * image.height / n_segments);
  const int lo = std::max(2, static_cast<int>(std::floor(base * 0.6)));
  const int hi = std::max(lo, static_cast<int>(std::ceil(base * 1.2)));
  cv::Mat labels;
  int best_gap = -1;
  for (int region = lo; region <= hi; ++region) {
    auto slic = cv::ximgproc::createSuperpixelSLIC(lab, cv::ximgproc::SLIC, region, 10.0f);
    slic->iterate(10);
    slic->enforceLabelConnectivity(25);
    cv::Mat candidate;
    slic->getLabels(candidate);
    double mx = 0;
    cv::minMaxLoc(candidate, nullptr, &mx);
    std::vector<char> used(static_cast<std::size_t>(mx) + 1, 0);
    int count = 0;
    for (int y = 0; y < candidate.rows; ++y) {
      const int* row = candidate.ptr<int>(y);
      for (int x = 0; x < candidate.cols; ++x) {
        if (!used[row[x]]) {
          used[row[x]] = 1;
          ++count;
        }
      }
    }
    const int gap = std::abs(count - n_segments);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      labels = candidate;
    }
  }

  SuperpixelMap map;
  map.width = image.width;
  map.height = image.height;
  map.labels.resize(static_cast<std::size_t>(image.width) * image.height);
  std::vector<int> remap;
  for (int y = 0; y < image.height; ++y) {
    const int* row = labels.ptr<int>(y);
    for (int x = 0; x < image.width; ++x) {
      const int raw = row[x];
      if (raw >= static_cast<int>(remap.size())) remap.resize(raw + 1, -1);
      if (remap[raw] < 0) remap[raw] = map.count++;
      map.labels[static_cast<std::size_t>(y) * image.width + x] = remap[raw];
    }
  }
  return map;
}

LimeExplanation lime_explain(const ProbabilityPredictor& predictor, const Image& image, const SuperpixelMap& segments,
                             int class_index, const LimeConfig& config) {
  if (segments.width != image.width || segments.height != image.height) {
    throw ArgumentError("segmentation does not match the image size");
  }
  const int d = segments.count;
  if (d < 1) throw ArgumentError("segmentation has no segments");
  if (config.n_samples < d + 1) {
    throw ArgumentError(fmt::format("LIME needs at least {} samples for {} segments, got {}", d + 1, d,
                                    config.n_samples));
  }
  if (config.batch_size < 1) throw ArgumentError("batch size must be positive");
  if (config.ridge_lambda < 0) throw ArgumentError("ridge lambda must be >= 0");
  const double kw = config.kernel_width > 0 ? config.kernel_width : 0.25 * std::sqrt(static_cast<double>(d));
  const int n = config.n_samples;

  Rng rng(config.seed);
  Eigen::MatrixXd z = Eigen::MatrixXd::Ones(n, d);
  std::vector<int> order(d);
  for (int s = 1; s < n; ++s) {
    const int off = 1 + static_cast<int>(rng.below(d));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    for (int j = 0; j < off; ++j) z(s, order[j]) = 0.0;
  }

  std::array<double, 3> mean{0, 0, 0};
  const std::size_t pixels = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) mean[c] += image.pixels[p * 3 + c];
  }
  for (double& m : mean) m /= static_cast<double>(pixels);

  Eigen::VectorXd y(n);
  for (int first = 0; first < n; first += config.batch_size) {
    const int last = std::min(n, first + config.batch_size);
    std::vector<Image> batch;
    for (int s = first; s < last; ++s) {
      Image img = image;
      for (std::size_t p = 0; p < pixels; ++p) {
        if (z(s, segments.labels[p]) == 0.0) {
          for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = static_cast<float>(mean[c]);
        }
      }
      batch.push_back(std::move(img));
    }
    const RowMatrix probs = predictor(batch);
    if (probs.rows() != last - first || class_index < 0 || class_index >= probs.cols()) {
      throw ArgumentError(fmt::format("predictor returned {}x{} values for class {}", probs.rows(), probs.cols(),
                                      class_index));
    }
    for (int s = first; s < last; ++s) y(s) = probs(s - first, class_index);
  }

  Eigen::VectorXd w(n);
  const double root_d = std::sqrt(static_cast<double>(d));
  for (int s = 0; s < n; ++s) {
    const double on = z.row(s).sum();
    const double dist = on > 0 ? 1.0 - on / (std::sqrt(on) * root_d) : 1.0;
    w(s) = std::exp(-dist * dist / (kw * kw));
  }
  const double w_sum = w.sum();
  const Eigen::RowVectorXd z_mean = (w.transpose() * z) / w_sum;
  const double y_mean = w.dot(y) / w_sum;
  const Eigen::MatrixXd zc = z.rowwise() - z_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  const Eigen::MatrixXd wz = zc.array().colwise() * w.array();
  Eigen::MatrixXd gram = wz.transpose() * zc;
  gram.diagonal().array() += config.ridge_lambda;
  const Eigen::VectorXd beta = gram.ldlt().solve(wz.transpose() * yc);

  LimeExplanation out;
  out.coefficients.assign(beta.data(), beta.data() + d);
  out.intercept = y_mean - z_mean.dot(beta);
  out.class_index = class_index;
  out.seed = config.seed;
  const Eigen::VectorXd resid = y - ((z * beta).array() + out.intercept).matrix();
  const double ss_res = (w.array() * resid.array().square()).sum();
  const double ss_tot = (w.array() * yc.array().square()).sum();
  out.r2 = ss_tot > 0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : (ss_res <= 1e-24 ? 1.0 : 0.0);
  // Round-off from a flat response must not count as evidence.
  constexpr double kPositiveFloor = 1e-12;
  std::vector<int> positive;
  for (int j = 0; j < d; ++j) {
    if (beta(j) > kPositiveFloor) positive.push_back(j);
  }
  std::stable_sort(positive.begin(), positive.end(), [&](int a, int b) { return beta(a) > beta(b); });
  if (static_cast<int>(positive.size()) > config.top_k) positive.resize(std::max(config.top_k, 0));
  out.top_segments = std::move(positive);
  return out;
}

namespace {

const std::array<std::array<float, 3>, 256>& viridis() {
  static const auto table = [] {
    cv::Mat ramp(1, 256, CV_8UC1);
    for (int i = 0; i < 256; ++i) ramp.at<unsigned char>(0, i) = static_cast<unsigned char>(i);
    cv::Mat colored;
    cv::applyColorMap(ramp, colored, cv::COLORMAP_VIRIDIS);
    std::array<std::array<float, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const auto bgr = colored.at<cv::Vec3b>(0, i);
      t[i] = {bgr[2] / 255.0f, bgr[1] / 255.0f, bgr[0] / 255.0f};
    }
    return t;
  }();
  return table;
}

void check_overlay_size(const Image& image, int width, int height) {
  if (image.width != width || image.height != height) {
    throw ArgumentError(fmt::format("overlay is {}x{} but the image is {}x{}", width, height, image.width,
                                    image.height));
  }
  if (image.channels != 3) throw ArgumentError("overlays need an RGB image");
}

}  // namespace

Image render_cam_overlay(const Image& image, const Heatmap& heatmap, const OverlayOptions& options) {
  check_overlay_size(image, heatmap.width, heatmap.height);
  const auto& lut = viridis();
  const float keep = static_cast<float>(1.0 - options.cam_blend);
  Image out = image;
  for (std::size_t p = 0; p < heatmap.values.size(); ++p) {
    const double h = std::clamp(heatmap.values[p], 0.0, 1.0);
    const auto& color = lut[static_cast<std::size_t>(std::lround(h * 255.0))];
    for (int c = 0; c < 3; ++c) {
      out.pixels[p * 3 + c] = keep * image.pixels[p * 3 + c] + static_cast<float>(options.cam_blend * h) * color[c];
    }
  }
  return out;
}

Image render_lime_overlay(const Image& image, const LimeExplanation& explanation, const SuperpixelMap& segments,
                          OverlayMode mode, const OverlayOptions& options) {
  check_overlay_size(image, segments.width, segments.height);
  if (static_cast<int>(explanation.coefficients.size()) != segments.count) {
    throw ArgumentError("explanation and segmentation disagree on the segment count");
  }
  Image out = image;
  const std::size_t pixels = segments.labels.size();
  if (mode == OverlayMode::lime_positive) {
    std::vector<char> keep(segments.count, 0);
    for (int s : explanation.top_segments) keep.at(s) = 1;
    for (std::size_t p = 0; p < pixels; ++p) {
      if (keep[segments.labels[p]]) continue;
      for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] *= static_cast<float>(options.dim_factor);
    }
    return out;
  }
  if (mode != OverlayMode::lime_pros_cons) throw ArgumentError("CAM overlays need a heatmap");
  double max_abs = 0;
  for (double v : explanation.coefficients) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0) return out;
  const float t = static_cast<float>(options.tint_blend);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double coef = explanation.coefficients[segments.labels[p]];
    if (std::abs(coef) < options.significance * max_abs) continue;
    const std::array<float, 3> tint = coef > 0 ? std::array<float, 3>{0, 1, 0} : std::array<float, 3>{1, 0, 0};
    for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] = (1 - t) * image.pixels[p * 3 + c] + t * tint[c];
  }
  return out;
}

std::string heatmap_to_csv(const Heatmap& heatmap) {
  std::string out;
  for (int y = 0; y < heatmap.height; ++y) {
    for (int x = 0; x < heatmap.width; ++x) {
      if (x) out += ',';
      out += fmt::format("{:.6g}", heatmap.at(x, y));
    }
    out += '\n';
  }
  return out;
}

}  // namespace cytoxai
