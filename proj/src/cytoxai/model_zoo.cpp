#include "cytoxai/model_zoo.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cstdlib>

#include "cytoxai/error.hpp"
#include "cytoxai/weights_io.hpp"

namespace cytoxai {

using nn::Activation;
using nn::ActivationKind;
using nn::Conv2D;
using nn::Conv2DOptions;
using nn::Padding;

namespace {

constexpr std::array kArchitectures = {Architecture::resnet50, Architecture::mobilenetv2, Architecture::densenet169,
                                       Architecture::vgg16,    Architecture::vgg19,       Architecture::tiny};

Conv2DOptions conv(int filters, int kernel, int stride = 1, Padding padding = Padding::valid, bool bias = true,
                   bool relu = false) {
  return Conv2DOptions{filters, kernel, stride, padding, bias, relu};
}

// ---------------------------------------------------------------- VGG

int build_vgg(nn::Network& net, int x, std::span<const int> convs_per_block) {
  constexpr int filters[] = {64, 128, 256, 512, 512};
  for (int b = 0; b < 5; ++b) {
    for (int c = 0; c < convs_per_block[b]; ++c) {
      x = net.add<Conv2D>({x}, fmt::format("block{}_conv{}", b + 1, c + 1),
                          conv(filters[b], 3, 1, Padding::same, true, true));
    }
    x = net.add<nn::MaxPool2D>({x}, fmt::format("block{}_pool", b + 1), 2, 2);
  }
  return x;
}

// ---------------------------------------------------------------- ResNet50

constexpr float kResNetEps = 1.001e-5f;

int resnet_block(nn::Network& net, int x, int filters, int stride, bool conv_shortcut, const std::string& name) {
  int shortcut = x;
  if (conv_shortcut) {
    shortcut = net.add<Conv2D>({x}, name + "_0_conv", conv(4 * filters, 1, stride));
    shortcut = net.add<nn::BatchNorm>({shortcut}, name + "_0_bn", kResNetEps);
  }
  int y = net.add<Conv2D>({x}, name + "_1_conv", conv(filters, 1, stride));
  y = net.add<nn::BatchNorm>({y}, name + "_1_bn", kResNetEps);
  y = net.add<Activation>({y}, name + "_1_relu", ActivationKind::relu);
  y = net.add<Conv2D>({y}, name + "_2_conv", conv(filters, 3, 1, Padding::same));
  y = net.add<nn::BatchNorm>({y}, name + "_2_bn", kResNetEps);
  y = net.add<Activation>({y}, name + "_2_relu", ActivationKind::relu);
  y = net.add<Conv2D>({y}, name + "_3_conv", conv(4 * filters, 1));
  y = net.add<nn::BatchNorm>({y}, name + "_3_bn", kResNetEps);
  y = net.add<nn::Add>({shortcut, y}, name + "_add");
  return net.add<Activation>({y}, name + "_out", ActivationKind::relu);
}

int resnet_stack(nn::Network& net, int x, int filters, int blocks, int stride, const std::string& name) {
  x = resnet_block(net, x, filters, stride, true, name + "_block1");
  for (int i = 2; i <= blocks; ++i) x = resnet_block(net, x, filters, 1, false, name + "_block" + std::to_string(i));
  return x;
}

int build_resnet50(nn::Network& net, int x) {
  x = net.add<nn::ZeroPadding2D>({x}, "conv1_pad", nn::Pads{3, 3, 3, 3});
  x = net.add<Conv2D>({x}, "conv1_conv", conv(64, 7, 2));
  x = net.add<nn::BatchNorm>({x}, "conv1_bn", kResNetEps);
  x = net.add<Activation>({x}, "conv1_relu", ActivationKind::relu);
  x = net.add<nn::ZeroPadding2D>({x}, "pool1_pad", nn::Pads{1, 1, 1, 1});
  x = net.add<nn::MaxPool2D>({x}, "pool1_pool", 3, 2);
  x = resnet_stack(net, x, 64, 3, 1, "conv2");
  x = resnet_stack(net, x, 128, 4, 2, "conv3");
  x = resnet_stack(net, x, 256, 6, 2, "conv4");
  return resnet_stack(net, x, 512, 3, 2, "conv5");
}

// ---------------------------------------------------------------- MobileNetV2

constexpr float kMobileEps = 1e-3f;
constexpr float kMobileMomentum = 0.999f;

int make_divisible(double v, int divisor = 8) {
  int out = std::max(divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
  if (out < 0.9 * v) out += divisor;
  return out;
}

int inverted_residual(nn::Network& net, int x, int filters, int stride, int expansion, int block_id) {
  const int in_channels = net.output_shape(x)[0];
  const int pointwise = make_divisible(filters);
  std::string prefix = "block_" + std::to_string(block_id) + "_";
  int y = x;
  if (block_id) {
    y = net.add<Conv2D>({y}, prefix + "expand", conv(expansion * in_channels, 1, 1, Padding::same, false));
    y = net.add<nn::BatchNorm>({y}, prefix + "expand_BN", kMobileEps, kMobileMomentum);
    y = net.add<Activation>({y}, prefix + "expand_relu", ActivationKind::relu6);
  } else {
    prefix = "expanded_conv_";
  }
  if (stride == 2) {
    // Keras correct_pad: one extra row/column at the bottom/right for even sizes.
    const auto& s = net.output_shape(y);
    const nn::Pads pads{1 - (1 - s[1] % 2), 1, 1 - (1 - s[2] % 2), 1};
    y = net.add<nn::ZeroPadding2D>({y}, prefix + "pad", pads);
  }
  y = net.add<nn::DepthwiseConv2D>({y}, prefix + "depthwise", 3, stride, stride == 1 ? Padding::same : Padding::valid);
  y = net.add<nn::BatchNorm>({y}, prefix + "depthwise_BN", kMobileEps, kMobileMomentum);
  y = net.add<Activation>({y}, prefix + "depthwise_relu", ActivationKind::relu6);
  y = net.add<Conv2D>({y}, prefix + "project", conv(pointwise, 1, 1, Padding::same, false));
  y = net.add<nn::BatchNorm>({y}, prefix + "project_BN", kMobileEps, kMobileMomentum);
  if (in_channels == pointwise && stride == 1) return net.add<nn::Add>({x, y}, prefix + "add");
  return y;
}

int build_mobilenetv2(nn::Network& net, int x) {
  x = net.add<Conv2D>({x}, "Conv1", conv(make_divisible(32), 3, 2, Padding::same, false));
  x = net.add<nn::BatchNorm>({x}, "bn_Conv1", kMobileEps, kMobileMomentum);
  x = net.add<Activation>({x}, "Conv1_relu", ActivationKind::relu6);
  struct Block {
    int filters, stride, expansion;
  };
  constexpr Block blocks[] = {{16, 1, 1},  {24, 2, 6},  {24, 1, 6},  {32, 2, 6},  {32, 1, 6},  {32, 1, 6},
                              {64, 2, 6},  {64, 1, 6},  {64, 1, 6},  {64, 1, 6},  {96, 1, 6},  {96, 1, 6},
                              {96, 1, 6},  {160, 2, 6}, {160, 1, 6}, {160, 1, 6}, {320, 1, 6}};
  for (int id = 0; id < static_cast<int>(std::size(blocks)); ++id) {
    x = inverted_residual(net, x, blocks[id].filters, blocks[id].stride, blocks[id].expansion, id);
  }
  x = net.add<Conv2D>({x}, "Conv_1", conv(1280, 1, 1, Padding::valid, false));
  x = net.add<nn::BatchNorm>({x}, "Conv_1_bn", kMobileEps, kMobileMomentum);
  return net.add<Activation>({x}, "out_relu", ActivationKind::relu6);
}

// ---------------------------------------------------------------- DenseNet169

constexpr float kDenseEps = 1.001e-5f;

int dense_conv_block(nn::Network& net, int x, int growth, const std::string& name) {
  int y = net.add<nn::BatchNorm>({x}, name + "_0_bn", kDenseEps);
  y = net.add<Activation>({y}, name + "_0_relu", ActivationKind::relu);
  y = net.add<Conv2D>({y}, name + "_1_conv", conv(4 * growth, 1, 1, Padding::valid, false));
  y = net.add<nn::BatchNorm>({y}, name + "_1_bn", kDenseEps);
  y = net.add<Activation>({y}, name + "_1_relu", ActivationKind::relu);
  y = net.add<Conv2D>({y}, name + "_2_conv", conv(growth, 3, 1, Padding::same, false));
  return net.add<nn::Concatenate>({x, y}, name + "_concat");
}

int transition_block(nn::Network& net, int x, double reduction, const std::string& name) {
  x = net.add<nn::BatchNorm>({x}, name + "_bn", kDenseEps);
  x = net.add<Activation>({x}, name + "_relu", ActivationKind::relu);
  const int channels = static_cast<int>(net.output_shape(x)[0] * reduction);
  x = net.add<Conv2D>({x}, name + "_conv", conv(channels, 1, 1, Padding::valid, false));
  return net.add<nn::AvgPool2D>({x}, name + "_pool", 2, 2);
}

int build_densenet169(nn::Network& net, int x) {
  constexpr int blocks[] = {6, 12, 32, 32};
  x = net.add<nn::ZeroPadding2D>({x}, "zero_padding2d", nn::Pads{3, 3, 3, 3});
  x = net.add<Conv2D>({x}, "conv1_conv", conv(64, 7, 2, Padding::valid, false));
  x = net.add<nn::BatchNorm>({x}, "conv1_bn", kDenseEps);
  x = net.add<Activation>({x}, "conv1_relu", ActivationKind::relu);
  x = net.add<nn::ZeroPadding2D>({x}, "zero_padding2d_1", nn::Pads{1, 1, 1, 1});
  x = net.add<nn::MaxPool2D>({x}, "pool1", 3, 2);
  for (int stage = 0; stage < 4; ++stage) {
    const std::string name = "conv" + std::to_string(stage + 2);
    for (int i = 0; i < blocks[stage]; ++i) x = dense_conv_block(net, x, 32, name + "_block" + std::to_string(i + 1));
    if (stage < 3) x = transition_block(net, x, 0.5, "pool" + std::to_string(stage + 2));
  }
  x = net.add<nn::BatchNorm>({x}, "bn", kDenseEps);
  return net.add<Activation>({x}, "relu", ActivationKind::relu);
}

// ---------------------------------------------------------------- tiny

int build_tiny(nn::Network& net, int x) {
  const int filters[3] = {16, 32, 64};
  for (int i = 0; i < 3; ++i) {
    const std::string id = std::to_string(i + 1);
    if (i > 0) x = net.add<nn::MaxPool2D>({x}, "pool" + std::to_string(i), 2, 2);
    x = net.add<Conv2D>({x}, "conv" + id, conv(filters[i], 3, i == 0 ? 2 : 1, Padding::same, false, false));
    x = net.add<nn::BatchNorm>({x}, "bn" + id, 1e-3, 0.9);
    x = net.add<Activation>({x}, "relu" + id, ActivationKind::relu);
  }
  return x;
}

bool is_conv(const nn::Layer& layer) { return layer.type() == "Conv2D" || layer.type() == "DepthwiseConv2D"; }

}  // namespace

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::resnet50: return "resnet50";
    case Architecture::mobilenetv2: return "mobilenetv2";
    case Architecture::densenet169: return "densenet169";
    case Architecture::vgg16: return "vgg16";
    case Architecture::vgg19: return "vgg19";
    case Architecture::tiny: return "tiny";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  for (Architecture a : kArchitectures) {
    if (architecture_name(a) == name) return a;
  }
  throw ArgumentError(fmt::format("unknown architecture '{}' (expected one of resnet50, mobilenetv2, densenet169, "
                                  "vgg16, vgg19, tiny)",
                                  name));
}

std::span<const Architecture> all_architectures() { return kArchitectures; }

int default_freeze_depth(Architecture arch) {
  switch (arch) {
    case Architecture::resnet50: return 86;
    case Architecture::mobilenetv2: return 100;
    case Architecture::densenet169: return 249;
    case Architecture::vgg16: return 13;
    case Architecture::vgg19: return 17;
    case Architecture::tiny: return 0;
  }
  return 0;
}

Preprocessing preprocessing_for(Architecture arch) {
  switch (arch) {
    case Architecture::resnet50:
    case Architecture::vgg16:
    case Architecture::vgg19: return Preprocessing::caffe;
    case Architecture::mobilenetv2: return Preprocessing::tf;
    case Architecture::densenet169: return Preprocessing::torch;
    case Architecture::tiny: return Preprocessing::unit;
  }
  return Preprocessing::unit;
}

void HeadSpec::validate() const {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
  if (num_classes < 2) throw ArgumentError("a classifier head needs at least two classes");
  if (kind == HeadKind::projection) {
    if (projection_dims.empty()) throw ArgumentError("projection head needs at least one dense layer");
    for (int d : projection_dims) {
      if (d < 1) throw ArgumentError("projection dimensions must be positive");
    }
  }
}

std::string_view head_kind_name(HeadKind kind) { return kind == HeadKind::classifier ? "classifier" : "projection"; }

HeadKind parse_head_kind(std::string_view name) {
  if (name == "classifier") return HeadKind::classifier;
  if (name == "projection") return HeadKind::projection;
  throw ArgumentError(fmt::format("unknown head kind '{}'", name));
}

nn::Tensor Model::make_batch(std::span<const Image* const> images) const {
  const int s = encoder_.input_size;
  nn::Tensor batch({static_cast<int>(images.size()), 3, s, s});
  const Preprocessing mode = preprocessing_for(encoder_.architecture);
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.width != s || img.height != s || img.channels != 3) {
      throw ArgumentError(fmt::format("image is {}x{}x{}, model expects {}x{}x3", img.width, img.height,
                                      img.channels, s, s));
    }
    float* dst = batch.data() + b * 3 * plane;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        for (int c = 0; c < 3; ++c) {
          const float v = img.at(x, y, c);
          float out = v;
          int channel = c;
          switch (mode) {
            case Preprocessing::caffe: {
              // RGB -> BGR on a 0..255 scale, ImageNet mean removed.
              constexpr float mean_bgr[] = {103.939f, 116.779f, 123.68f};
              channel = 2 - c;
              out = v * 255.0f - mean_bgr[channel];
              break;
            }
            case Preprocessing::tf: out = v * 2.0f - 1.0f; break;
            case Preprocessing::torch: {
              constexpr float mean[] = {0.485f, 0.456f, 0.406f};
              constexpr float stddev[] = {0.229f, 0.224f, 0.225f};
              out = (v - mean[c]) / stddev[c];
              break;
            }
            case Preprocessing::unit: break;
          }
          dst[channel * plane + static_cast<std::size_t>(y) * s + x] = out;
        }
      }
    }
  }
  return batch;
}

const nn::Tensor& Model::predict(const nn::Tensor& batch) { return net_.forward(batch, false); }

std::filesystem::path pretrained_weights_path(const EncoderSpec& spec) {
  std::filesystem::path dir = spec.weights_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("CYTOXAI_WEIGHTS_DIR"); env && *env) {
      dir = env;
    } else if (const char* home = std::getenv("HOME"); home && *home) {
      dir = std::filesystem::path(home) / ".cache" / "cytoxai";
    } else {
      dir = ".";
    }
  }
  return dir / (std::string(architecture_name(spec.architecture)) + "_notop.cxw");
}

Model build_encoder(const EncoderSpec& spec) {
  if (spec.input_size < 32) throw ArgumentError("input size must be at least 32 pixels");
  if (spec.pretrained && spec.architecture == Architecture::tiny) {
    throw ArgumentError("the tiny encoder has no pretrained weights");
  }
  Model model;
  model.encoder_ = spec;
  nn::Network& net = model.net_;
  const int input = net.add_input("input_layer", {3, spec.input_size, spec.input_size});
  int out = input;
  switch (spec.architecture) {
    case Architecture::vgg16: {
      constexpr int convs[] = {2, 2, 3, 3, 3};
      out = build_vgg(net, input, convs);
      break;
    }
    case Architecture::vgg19: {
      constexpr int convs[] = {2, 2, 4, 4, 4};
      out = build_vgg(net, input, convs);
      break;
    }
    case Architecture::resnet50: out = build_resnet50(net, input); break;
    case Architecture::mobilenetv2: out = build_mobilenetv2(net, input); break;
    case Architecture::densenet169: out = build_densenet169(net, input); break;
    case Architecture::tiny: out = build_tiny(net, input); break;
  }
  net.set_output(out);
  model.feature_node_ = out;
  model.encoder_layers_ = net.keras_order(out);
  for (int n : model.encoder_layers_) {
    if (is_conv(net.layer(n))) model.last_conv_node_ = n;
  }
  net.initialize(spec.seed);

  if (spec.pretrained) {
    const auto path = pretrained_weights_path(spec);
    if (!std::filesystem::exists(path)) {
      throw FetchError(fmt::format(
          "pretrained ImageNet weights for '{0}' not found at {1}. This tool never downloads weights. On a machine "
          "with network access run `python3 tools/export_keras_weights.py --arch {0} --out {0}_notop.cxw` and copy "
          "the file to {1} (or point CYTOXAI_WEIGHTS_DIR at its directory); set model.pretrained = false to train "
          "from a seeded random initialisation instead.",
          architecture_name(spec.architecture), path.string()));
    }
    assign_weights(net, read_weight_bundle(path), true);
  }
  apply_freeze_policy(model, spec.effective_freeze_depth());
  return model;
}

void apply_freeze_policy(Model& model, int depth) {
  const int count = static_cast<int>(model.encoder_layers_.size());
  if (depth < 0 || depth > count) {
    throw ArgumentError(fmt::format("freeze depth {} out of range: {} has {} layers", depth,
                                    architecture_name(model.encoder_.architecture), count));
  }
  for (int i = 0; i < count; ++i) model.net_.layer(model.encoder_layers_[i]).set_trainable(i >= depth);
  model.freeze_depth_ = depth;
  model.encoder_.freeze_depth = depth;
}

void attach_head(Model& model, const HeadSpec& head, std::uint64_t seed) {
  head.validate();
  if (model.head_) throw ArgumentError("model already has a head");
  nn::Network& net = model.net_;
  const std::size_t first_new = net.size();
  int x = net.add<nn::GlobalAvgPool>({model.feature_node_}, "head_pool");
  if (head.kind == HeadKind::classifier) {
    x = net.add<nn::Dropout>({x}, "head_dropout", head.dropout_rate);
    x = net.add<nn::Dense>({x}, "head_logits", head.num_classes);
    model.logits_node_ = x;
    x = net.add<nn::Softmax>({x}, "head_softmax");
  } else {
    for (std::size_t i = 0; i < head.projection_dims.size(); ++i) {
      x = net.add<nn::Dense>({x}, fmt::format("proj_dense_{}", i + 1), head.projection_dims[i]);
      if (i + 1 < head.projection_dims.size()) {
        x = net.add<Activation>({x}, fmt::format("proj_relu_{}", i + 1), ActivationKind::relu);
      }
    }
    x = net.add<nn::L2Normalize>({x}, "proj_l2");
  }
  net.set_output(x);
  for (std::size_t n = first_new; n < net.size(); ++n) {
    nn::Layer& layer = net.layer(static_cast<int>(n));
    Rng rng(mix_seed(seed, fnv1a(layer.name())));
    layer.initialize(rng);
  }
  model.head_ = head;
}

std::size_t copy_matching_weights(const nn::Network& from, nn::Network& to) {
  std::size_t copied = 0;
  for (std::size_t n = 0; n < to.size(); ++n) {
    nn::Layer& dst = to.layer(static_cast<int>(n));
    const auto src_node = from.find(dst.name());
    if (!src_node) continue;
    const nn::Layer& src = from.layer(*src_node);
    for (auto& w : dst.weights()) {
      for (const auto& sw : src.weights()) {
        if (sw.name == w.name && sw.value.shape() == w.value.shape()) {
          w.value = sw.value;
          ++copied;
        }
      }
    }
  }
  return copied;
}

}  // namespace cytoxai
