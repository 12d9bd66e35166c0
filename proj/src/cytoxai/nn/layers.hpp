#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/nn/tensor.hpp"
#include "cytoxai/random.hpp"

namespace cytoxai::nn {

struct Weight {
  std::string name;
  Tensor value;
  Tensor grad;
  // Moving statistics are weights that no optimizer touches.
  bool trainable = true;
};

enum class Padding { valid, same };

// Explicit spatial padding resolved at build time.
struct Pads {
  int top = 0, bottom = 0, left = 0, right = 0;
};

// TensorFlow-compatible padding for one spatial axis; returns the output extent.
int resolve_padding(int in, int kernel, int stride, Padding padding, int& before, int& after);

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual std::string_view type() const = 0;

  // Input shapes exclude the batch axis. Allocates weights and returns the output shape.
  virtual Shape build(std::span<const Shape> inputs) = 0;
  virtual void initialize(Rng& /*rng*/) {}
  virtual void forward(std::span<const Tensor* const> in, Tensor& out, bool training) = 0;
  // Null grad_in entries are skipped. Input gradients are accumulated, weight
  // gradients are accumulated only while the layer is trainable.
  virtual void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                        std::span<Tensor* const> grad_in) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  bool trainable() const { return trainable_; }
  void set_trainable(bool trainable) { trainable_ = trainable; }

  std::vector<Weight>& weights() { return weights_; }
  const std::vector<Weight>& weights() const { return weights_; }
  Weight* find_weight(std::string_view name);
  bool has_trainable_weights() const;
  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;

 protected:
  Weight& add_weight(std::string name, Shape shape, bool trainable = true);

  std::string name_;
  bool trainable_ = true;
  std::vector<Weight> weights_;
};

template <class Derived>
class LayerImpl : public Layer {
 public:
  using Layer::Layer;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Derived>(static_cast<const Derived&>(*this));
  }
};

class InputLayer final : public LayerImpl<InputLayer> {
 public:
  InputLayer(std::string name, Shape shape) : LayerImpl(std::move(name)), shape_(std::move(shape)) {}
  std::string_view type() const override { return "InputLayer"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor&, std::span<Tensor* const>) override {}

 private:
  Shape shape_;
};

struct Conv2DOptions {
  int filters = 1;
  int kernel = 3;
  int stride = 1;
  Padding padding = Padding::valid;
  bool use_bias = true;
  // Fused ReLU, as in Keras Conv2D(activation="relu").
  bool relu = false;
};

class Conv2D final : public LayerImpl<Conv2D> {
 public:
  Conv2D(std::string name, Conv2DOptions options) : LayerImpl(std::move(name)), opt_(options) {}
  std::string_view type() const override { return "Conv2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void initialize(Rng& rng) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
  const Conv2DOptions& options() const { return opt_; }

 private:
  bool pointwise() const;
  Conv2DOptions opt_;
  int in_c_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  Pads pads_;
  std::vector<float> col_;
};

class DepthwiseConv2D final : public LayerImpl<DepthwiseConv2D> {
 public:
  DepthwiseConv2D(std::string name, int kernel, int stride, Padding padding, bool use_bias = false)
      : LayerImpl(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding), use_bias_(use_bias) {}
  std::string_view type() const override { return "DepthwiseConv2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void initialize(Rng& rng) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  int kernel_, stride_;
  Padding padding_;
  bool use_bias_;
  int c_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  Pads pads_;
};

// Uses batch statistics only when called in training mode on a trainable layer,
// otherwise the moving statistics (frozen batch norm runs in inference mode).
class BatchNorm final : public LayerImpl<BatchNorm> {
 public:
  BatchNorm(std::string name, float epsilon = 1e-3f, float momentum = 0.99f)
      : LayerImpl(std::move(name)), epsilon_(epsilon), momentum_(momentum) {}
  std::string_view type() const override { return "BatchNormalization"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  float epsilon_, momentum_;
  bool used_batch_stats_ = false;
  std::vector<float> mean_, inv_std_;
};

enum class ActivationKind { relu, relu6 };

class Activation final : public LayerImpl<Activation> {
 public:
  Activation(std::string name, ActivationKind kind) : LayerImpl(std::move(name)), kind_(kind) {}
  std::string_view type() const override { return kind_ == ActivationKind::relu ? "Activation" : "ReLU"; }
  Shape build(std::span<const Shape> inputs) override { return inputs[0]; }
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  ActivationKind kind_;
};

class ZeroPadding2D final : public LayerImpl<ZeroPadding2D> {
 public:
  ZeroPadding2D(std::string name, Pads pads) : LayerImpl(std::move(name)), pads_(pads) {}
  std::string_view type() const override { return "ZeroPadding2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  Pads pads_;
};

class MaxPool2D final : public LayerImpl<MaxPool2D> {
 public:
  MaxPool2D(std::string name, int pool, int stride, Padding padding = Padding::valid)
      : LayerImpl(std::move(name)), pool_(pool), stride_(stride), padding_(padding) {}
  std::string_view type() const override { return "MaxPooling2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  int pool_, stride_;
  Padding padding_;
  int c_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  Pads pads_;
  std::vector<std::int32_t> argmax_;
};

class AvgPool2D final : public LayerImpl<AvgPool2D> {
 public:
  AvgPool2D(std::string name, int pool, int stride) : LayerImpl(std::move(name)), pool_(pool), stride_(stride) {}
  std::string_view type() const override { return "AveragePooling2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  int pool_, stride_;
  int c_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
};

class Add final : public LayerImpl<Add> {
 public:
  using LayerImpl::LayerImpl;
  std::string_view type() const override { return "Add"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
};

// Channel-axis concatenation.
class Concatenate final : public LayerImpl<Concatenate> {
 public:
  using LayerImpl::LayerImpl;
  std::string_view type() const override { return "Concatenate"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
};

class GlobalAvgPool final : public LayerImpl<GlobalAvgPool> {
 public:
  using LayerImpl::LayerImpl;
  std::string_view type() const override { return "GlobalAveragePooling2D"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
};

// Inverted dropout; identity outside training.
class Dropout final : public LayerImpl<Dropout> {
 public:
  Dropout(std::string name, double rate) : LayerImpl(std::move(name)), rate_(rate), rng_(0) {}
  std::string_view type() const override { return "Dropout"; }
  Shape build(std::span<const Shape> inputs) override { return inputs[0]; }
  void initialize(Rng& rng) override { rng_ = Rng(rng.next()); }
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  double rate_;
  Rng rng_;
  std::vector<float> mask_;
  bool masked_ = false;
};

class Dense final : public LayerImpl<Dense> {
 public:
  Dense(std::string name, int units, bool use_bias = true)
      : LayerImpl(std::move(name)), units_(units), use_bias_(use_bias) {}
  std::string_view type() const override { return "Dense"; }
  Shape build(std::span<const Shape> inputs) override;
  void initialize(Rng& rng) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;

 private:
  int units_;
  bool use_bias_;
  int in_features_ = 0;
};

class Softmax final : public LayerImpl<Softmax> {
 public:
  using LayerImpl::LayerImpl;
  std::string_view type() const override { return "Softmax"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
};

// Row-wise x / sqrt(max(|x|^2, 1e-12)).
class L2Normalize final : public LayerImpl<L2Normalize> {
 public:
  using LayerImpl::LayerImpl;
  std::string_view type() const override { return "L2Normalize"; }
  Shape build(std::span<const Shape> inputs) override;
  void forward(std::span<const Tensor* const> in, Tensor& out, bool training) override;
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                std::span<Tensor* const> grad_in) override;
};

}  // namespace cytoxai::nn
