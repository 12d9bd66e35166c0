#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/image.hpp"
#include "cytoxai/nn/network.hpp"

namespace cytoxai {

// `tiny` is a three-convolution encoder for smoke tests and toy benchmarks; the
// other five mirror the Keras application graphs layer for layer.
enum class Architecture { resnet50, mobilenetv2, densenet169, vgg16, vgg19, tiny };

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);
std::span<const Architecture> all_architectures();

// Leading layers frozen by default: resnet50 86, mobilenetv2 100,
// densenet169 249, vgg16 13, vgg19 17 (tiny 0).
int default_freeze_depth(Architecture arch);

// Input scaling expected by the pretrained weights of each architecture.
enum class Preprocessing { caffe, tf, torch, unit };
Preprocessing preprocessing_for(Architecture arch);

struct EncoderSpec {
  Architecture architecture = Architecture::vgg16;
  // Unset: the architecture default.
  std::optional<int> freeze_depth;
  bool pretrained = true;
  int input_size = 110;
  std::uint64_t seed = 0;
  // Where `<arch>_notop.cxw` files are looked up when pretrained. Empty:
  // $CYTOXAI_WEIGHTS_DIR, then ~/.cache/cytoxai.
  std::filesystem::path weights_dir;

  int effective_freeze_depth() const { return freeze_depth.value_or(default_freeze_depth(architecture)); }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

enum class HeadKind { classifier, projection };

struct HeadSpec {
  HeadKind kind = HeadKind::classifier;
  double dropout_rate = 0.5;
  int num_classes = 5;
  std::vector<int> projection_dims{256, 128};

  void validate() const;
};

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);

class Model {
 public:
  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }
  const EncoderSpec& encoder_spec() const { return encoder_; }
  const std::optional<HeadSpec>& head_spec() const { return head_; }

  // Encoder layers in Keras `model.layers` order; index 0 is the input layer.
  const std::vector<int>& encoder_layers() const { return encoder_layers_; }
  int feature_node() const { return feature_node_; }
  // Last convolution of the encoder, the default CAM target.
  int last_conv_node() const { return last_conv_node_; }
  int feature_dim() const { return net_.output_shape(feature_node_).at(0); }
  // Classifier: pre-softmax scores. -1 for projection heads.
  int logits_node() const { return logits_node_; }
  int output_node() const { return net_.output(); }
  int freeze_depth() const { return freeze_depth_; }
  int input_size() const { return encoder_.input_size; }

  // NCHW batch from images already at input_size, with architecture scaling.
  nn::Tensor make_batch(std::span<const Image* const> images) const;
  // Evaluation-mode forward to the output node.
  const nn::Tensor& predict(const nn::Tensor& batch);

 private:
  friend Model build_encoder(const EncoderSpec& spec);
  friend void apply_freeze_policy(Model& model, int depth);
  friend void attach_head(Model& model, const HeadSpec& head, std::uint64_t seed);

  nn::Network net_;
  EncoderSpec encoder_;
  std::optional<HeadSpec> head_;
  std::vector<int> encoder_layers_;
  int feature_node_ = -1;
  int last_conv_node_ = -1;
  int logits_node_ = -1;
  int freeze_depth_ = 0;
};

// Builds the encoder graph. Pretrained weights are loaded from the local cache;
// missing files raise FetchError with offline export instructions. Without
// pretraining, weights are initialised from spec.seed.
Model build_encoder(const EncoderSpec& spec);

// Marks the first `depth` encoder layers non-trainable and the rest trainable.
void apply_freeze_policy(Model& model, int depth);

// Global average pooling followed by either dropout + dense + softmax, or a
// dense projection stack ending in L2 normalisation.
void attach_head(Model& model, const HeadSpec& head, std::uint64_t seed);

// Copies every weight whose (layer, weight) name exists in both networks.
// Returns the number of tensors copied.
std::size_t copy_matching_weights(const nn::Network& from, nn::Network& to);

std::filesystem::path pretrained_weights_path(const EncoderSpec& spec);

}  // namespace cytoxai
