#include "cytoxai/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cytoxai/error.hpp"

namespace cytoxai::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void expect_inputs(const Layer& layer, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ArgumentError(layer.name() + ": expected " + std::to_string(want) + " input(s), got " +
                        std::to_string(got));
  }
}

Shape expect_image_shape(const Layer& layer, std::span<const Shape> inputs) {
  expect_inputs(layer, inputs.size(), 1);
  if (inputs[0].size() != 3) {
    throw ArgumentError(layer.name() + ": expected a (C, H, W) input, got " + to_string(inputs[0]));
  }
  return inputs[0];
}

Shape batch_shape(int n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void glorot_uniform(Tensor& t, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-limit, limit));
}

void im2col(const float* x, int c, int h, int w, int k, int stride, const Pads& pads, int oh, int ow, float* col) {
  const int p = oh * ow;
  for (int ci = 0; ci < c; ++ci) {
    const float* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * p;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pads.top + ki;
          float* dst = row + y * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pads.left + kj;
            dst[xo] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int c, int h, int w, int k, int stride, const Pads& pads, int oh, int ow, float* dx) {
  const int p = oh * ow;
  for (int ci = 0; ci < c; ++ci) {
    float* plane = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * p;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pads.top + ki;
          if (iy < 0 || iy >= h) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * w;
          const float* src = row + y * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pads.left + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace

int resolve_padding(int in, int kernel, int stride, Padding padding, int& before, int& after) {
  if (padding == Padding::valid) {
    before = after = 0;
    if (in < kernel) return 0;
    return (in - kernel) / stride + 1;
  }
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  before = total / 2;
  after = total - before;
  return out;
}

// ---------------------------------------------------------------- Layer

Weight* Layer::find_weight(std::string_view name) {
  for (auto& w : weights_) {
    if (w.name == name) return &w;
  }
  return nullptr;
}

bool Layer::has_trainable_weights() const {
  if (!trainable_) return false;
  return std::any_of(weights_.begin(), weights_.end(), [](const Weight& w) { return w.trainable; });
}

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += w.value.size();
  return n;
}

std::size_t Layer::trainable_parameter_count() const {
  if (!trainable_) return 0;
  std::size_t n = 0;
  for (const auto& w : weights_) {
    if (w.trainable) n += w.value.size();
  }
  return n;
}

Weight& Layer::add_weight(std::string name, Shape shape, bool trainable) {
  Weight w;
  w.name = std::move(name);
  w.value = Tensor(shape);
  w.grad = Tensor(shape);
  w.trainable = trainable;
  weights_.push_back(std::move(w));
  return weights_.back();
}

// ---------------------------------------------------------------- InputLayer

Shape InputLayer::build(std::span<const Shape> inputs) {
  expect_inputs(*this, inputs.size(), 0);
  return shape_;
}

void InputLayer::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  if (Shape(x.shape().begin() + 1, x.shape().end()) != shape_) {
    throw ArgumentError("input shape mismatch: expected " + to_string(batch_shape(x.dim(0), shape_)) + ", got " +
                        to_string(x.shape()));
  }
  out = x;
}

// ---------------------------------------------------------------- Conv2D

bool Conv2D::pointwise() const {
  return opt_.kernel == 1 && opt_.stride == 1 && pads_.top == 0 && pads_.left == 0 && pads_.bottom == 0 &&
         pads_.right == 0;
}

Shape Conv2D::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  in_c_ = s[0];
  in_h_ = s[1];
  in_w_ = s[2];
  out_h_ = resolve_padding(in_h_, opt_.kernel, opt_.stride, opt_.padding, pads_.top, pads_.bottom);
  out_w_ = resolve_padding(in_w_, opt_.kernel, opt_.stride, opt_.padding, pads_.left, pads_.right);
  if (out_h_ < 1 || out_w_ < 1) {
    throw ArgumentError(name_ + ": input " + to_string(s) + " is smaller than the kernel");
  }
  weights_.clear();
  add_weight("kernel", {opt_.filters, in_c_, opt_.kernel, opt_.kernel});
  if (opt_.use_bias) add_weight("bias", {opt_.filters});
  return {opt_.filters, out_h_, out_w_};
}

void Conv2D::initialize(Rng& rng) {
  const double receptive = static_cast<double>(opt_.kernel) * opt_.kernel;
  glorot_uniform(weights_[0].value, in_c_ * receptive, opt_.filters * receptive, rng);
  if (opt_.use_bias) weights_[1].value.fill(0.0f);
}

void Conv2D::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const int p = out_h_ * out_w_;
  const int depth = in_c_ * opt_.kernel * opt_.kernel;
  out.reset({n, opt_.filters, out_h_, out_w_});
  ConstMatrixMap kernel(weights_[0].value.data(), opt_.filters, depth);
  if (!pointwise()) col_.resize(static_cast<std::size_t>(depth) * p);
  for (int b = 0; b < n; ++b) {
    const float* xb = x.data() + static_cast<std::size_t>(b) * x.stride0();
    const float* cols = xb;
    if (!pointwise()) {
      im2col(xb, in_c_, in_h_, in_w_, opt_.kernel, opt_.stride, pads_, out_h_, out_w_, col_.data());
      cols = col_.data();
    }
    MatrixMap y(out.data() + static_cast<std::size_t>(b) * out.stride0(), opt_.filters, p);
    y.noalias() = kernel * ConstMatrixMap(cols, depth, p);
    if (opt_.use_bias) {
      const float* bias = weights_[1].value.data();
      for (int f = 0; f < opt_.filters; ++f) y.row(f).array() += bias[f];
    }
    if (opt_.relu) y = y.cwiseMax(0.0f);
  }
}

void Conv2D::backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                      std::span<Tensor* const> grad_in) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const int p = out_h_ * out_w_;
  const int depth = in_c_ * opt_.kernel * opt_.kernel;
  ConstMatrixMap kernel(weights_[0].value.data(), opt_.filters, depth);
  MatrixMap kernel_grad(weights_[0].grad.data(), opt_.filters, depth);
  std::vector<float> dcol;
  std::vector<float> masked;
  if (!pointwise()) col_.resize(static_cast<std::size_t>(depth) * p);
  for (int b = 0; b < n; ++b) {
    const float* xb = x.data() + static_cast<std::size_t>(b) * x.stride0();
    const float* gb = grad_out.data() + static_cast<std::size_t>(b) * grad_out.stride0();
    if (opt_.relu) {
      const float* yb = out.data() + static_cast<std::size_t>(b) * out.stride0();
      masked.resize(static_cast<std::size_t>(opt_.filters) * p);
      for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = yb[i] > 0.0f ? gb[i] : 0.0f;
      gb = masked.data();
    }
    ConstMatrixMap dy(gb, opt_.filters, p);
    if (trainable_) {
      const float* cols = xb;
      if (!pointwise()) {
        im2col(xb, in_c_, in_h_, in_w_, opt_.kernel, opt_.stride, pads_, out_h_, out_w_, col_.data());
        cols = col_.data();
      }
      kernel_grad.noalias() += dy * ConstMatrixMap(cols, depth, p).transpose();
      if (opt_.use_bias) {
        float* bias_grad = weights_[1].grad.data();
        for (int f = 0; f < opt_.filters; ++f) bias_grad[f] += dy.row(f).sum();
      }
    }
    if (grad_in[0] != nullptr) {
      float* dxb = grad_in[0]->data() + static_cast<std::size_t>(b) * grad_in[0]->stride0();
      if (pointwise()) {
        MatrixMap(dxb, depth, p).noalias() += kernel.transpose() * dy;
      } else {
        dcol.resize(static_cast<std::size_t>(depth) * p);
        MatrixMap(dcol.data(), depth, p).noalias() = kernel.transpose() * dy;
        col2im(dcol.data(), in_c_, in_h_, in_w_, opt_.kernel, opt_.stride, pads_, out_h_, out_w_, dxb);
      }
    }
  }
}

// ---------------------------------------------------------------- DepthwiseConv2D

Shape DepthwiseConv2D::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  c_ = s[0];
  in_h_ = s[1];
  in_w_ = s[2];
  out_h_ = resolve_padding(in_h_, kernel_, stride_, padding_, pads_.top, pads_.bottom);
  out_w_ = resolve_padding(in_w_, kernel_, stride_, padding_, pads_.left, pads_.right);
  if (out_h_ < 1 || out_w_ < 1) {
    throw ArgumentError(name_ + ": input " + to_string(s) + " is smaller than the kernel");
  }
  weights_.clear();
  add_weight("kernel", {c_, 1, kernel_, kernel_});
  if (use_bias_) add_weight("bias", {c_});
  return {c_, out_h_, out_w_};
}

void DepthwiseConv2D::initialize(Rng& rng) {
  const double receptive = static_cast<double>(kernel_) * kernel_;
  glorot_uniform(weights_[0].value, c_ * receptive, receptive, rng);
  if (use_bias_) weights_[1].value.fill(0.0f);
}

void DepthwiseConv2D::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  out.reset({n, c_, out_h_, out_w_});
  const float* k = weights_[0].value.data();
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < c_; ++c) {
      const float* plane = x.data() + (static_cast<std::size_t>(b) * c_ + c) * in_h_ * in_w_;
      float* dst = out.data() + (static_cast<std::size_t>(b) * c_ + c) * out_h_ * out_w_;
      const float* kc = k + static_cast<std::size_t>(c) * kernel_ * kernel_;
      const float bias = use_bias_ ? weights_[1].value[c] : 0.0f;
      for (int y = 0; y < out_h_; ++y) {
        for (int xo = 0; xo < out_w_; ++xo) {
          float acc = bias;
          for (int i = 0; i < kernel_; ++i) {
            const int iy = y * stride_ - pads_.top + i;
            if (iy < 0 || iy >= in_h_) continue;
            for (int j = 0; j < kernel_; ++j) {
              const int ix = xo * stride_ - pads_.left + j;
              if (ix < 0 || ix >= in_w_) continue;
              acc += plane[iy * in_w_ + ix] * kc[i * kernel_ + j];
            }
          }
          dst[y * out_w_ + xo] = acc;
        }
      }
    }
  }
}

void DepthwiseConv2D::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                               std::span<Tensor* const> grad_in) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const float* k = weights_[0].value.data();
  float* kg = weights_[0].grad.data();
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < c_; ++c) {
      const std::size_t in_off = (static_cast<std::size_t>(b) * c_ + c) * in_h_ * in_w_;
      const float* plane = x.data() + in_off;
      float* dplane = grad_in[0] ? grad_in[0]->data() + in_off : nullptr;
      const float* dy = grad_out.data() + (static_cast<std::size_t>(b) * c_ + c) * out_h_ * out_w_;
      const float* kc = k + static_cast<std::size_t>(c) * kernel_ * kernel_;
      float* kgc = kg + static_cast<std::size_t>(c) * kernel_ * kernel_;
      float bias_acc = 0.0f;
      for (int y = 0; y < out_h_; ++y) {
        for (int xo = 0; xo < out_w_; ++xo) {
          const float g = dy[y * out_w_ + xo];
          bias_acc += g;
          for (int i = 0; i < kernel_; ++i) {
            const int iy = y * stride_ - pads_.top + i;
            if (iy < 0 || iy >= in_h_) continue;
            for (int j = 0; j < kernel_; ++j) {
              const int ix = xo * stride_ - pads_.left + j;
              if (ix < 0 || ix >= in_w_) continue;
              if (trainable_) kgc[i * kernel_ + j] += g * plane[iy * in_w_ + ix];
              if (dplane) dplane[iy * in_w_ + ix] += g * kc[i * kernel_ + j];
            }
          }
        }
      }
      if (trainable_ && use_bias_) weights_[1].grad[c] += bias_acc;
    }
  }
}

// ---------------------------------------------------------------- BatchNorm

Shape BatchNorm::build(std::span<const Shape> inputs) {
  expect_inputs(*this, inputs.size(), 1);
  const int c = inputs[0].at(0);
  weights_.clear();
  add_weight("gamma", {c}).value.fill(1.0f);
  add_weight("beta", {c});
  add_weight("moving_mean", {c}, false);
  add_weight("moving_variance", {c}, false).value.fill(1.0f);
  return inputs[0];
}

void BatchNorm::forward(std::span<const Tensor* const> in, Tensor& out, bool training) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const int c = x.dim(1);
  const std::size_t spatial = x.size() / (static_cast<std::size_t>(n) * c);
  const float* gamma = weights_[0].value.data();
  const float* beta = weights_[1].value.data();
  float* moving_mean = weights_[2].value.data();
  float* moving_var = weights_[3].value.data();
  used_batch_stats_ = training && trainable_;
  mean_.assign(c, 0.0f);
  inv_std_.assign(c, 0.0f);
  out.reset(x.shape());
  const double count = static_cast<double>(n) * spatial;
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (used_batch_stats_) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = x.data() + (static_cast<std::size_t>(b) * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
      }
      mean = sum / count;
      for (int b = 0; b < n; ++b) {
        const float* p = x.data() + (static_cast<std::size_t>(b) * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      moving_mean[ch] = static_cast<float>(moving_mean[ch] * momentum_ + mean * (1.0 - momentum_));
      moving_var[ch] = static_cast<float>(moving_var[ch] * momentum_ + var * (1.0 - momentum_));
    } else {
      mean = moving_mean[ch];
      var = moving_var[ch];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(var + epsilon_));
    mean_[ch] = static_cast<float>(mean);
    inv_std_[ch] = inv;
    const float scale = gamma[ch] * inv;
    const float shift = beta[ch] - static_cast<float>(mean) * scale;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
      const float* p = x.data() + off;
      float* q = out.data() + off;
      for (std::size_t i = 0; i < spatial; ++i) q[i] = p[i] * scale + shift;
    }
  }
}

void BatchNorm::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                         std::span<Tensor* const> grad_in) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const int c = x.dim(1);
  const std::size_t spatial = x.size() / (static_cast<std::size_t>(n) * c);
  const float* gamma = weights_[0].value.data();
  const double count = static_cast<double>(n) * spatial;
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xhat = (x.data()[off + i] - mean_[ch]) * inv_std_[ch];
        sum_dy += grad_out.data()[off + i];
        sum_dy_xhat += grad_out.data()[off + i] * xhat;
      }
    }
    if (trainable_) {
      weights_[0].grad[ch] += static_cast<float>(sum_dy_xhat);
      weights_[1].grad[ch] += static_cast<float>(sum_dy);
    }
    if (grad_in[0] == nullptr) continue;
    const double g = gamma[ch] * inv_std_[ch];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
      float* dx = grad_in[0]->data() + off;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double dy = grad_out.data()[off + i];
        if (used_batch_stats_) {
          const double xhat = (x.data()[off + i] - mean_[ch]) * inv_std_[ch];
          dx[i] += static_cast<float>(g * (dy - sum_dy / count - xhat * sum_dy_xhat / count));
        } else {
          dx[i] += static_cast<float>(g * dy);
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Activation

void Activation::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  out.reset(x.shape());
  const float cap = kind_ == ActivationKind::relu6 ? 6.0f : std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i], 0.0f), cap);
}

void Activation::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                          std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const Tensor& x = *in[0];
  const float cap = kind_ == ActivationKind::relu6 ? 6.0f : std::numeric_limits<float>::infinity();
  Tensor& dx = *grad_in[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0f && x[i] < cap) dx[i] += grad_out[i];
  }
}

// ---------------------------------------------------------------- ZeroPadding2D

Shape ZeroPadding2D::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  return {s[0], s[1] + pads_.top + pads_.bottom, s[2] + pads_.left + pads_.right};
}

void ZeroPadding2D::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h + pads_.top + pads_.bottom, ow = w + pads_.left + pads_.right;
  out.reset({n, c, oh, ow});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < h; ++y) {
      std::copy(src + y * w, src + (y + 1) * w, dst + (y + pads_.top) * ow + pads_.left);
    }
  }
}

void ZeroPadding2D::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                             std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const Tensor& x = *in[0];
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h + pads_.top + pads_.bottom, ow = w + pads_.left + pads_.right;
  for (int p = 0; p < n * c; ++p) {
    float* dst = grad_in[0]->data() + static_cast<std::size_t>(p) * h * w;
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < h; ++y) {
      for (int xo = 0; xo < w; ++xo) dst[y * w + xo] += src[(y + pads_.top) * ow + xo + pads_.left];
    }
  }
}

// ---------------------------------------------------------------- MaxPool2D

Shape MaxPool2D::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  c_ = s[0];
  in_h_ = s[1];
  in_w_ = s[2];
  out_h_ = resolve_padding(in_h_, pool_, stride_, padding_, pads_.top, pads_.bottom);
  out_w_ = resolve_padding(in_w_, pool_, stride_, padding_, pads_.left, pads_.right);
  if (out_h_ < 1 || out_w_ < 1) throw ArgumentError(name_ + ": input " + to_string(s) + " smaller than pool");
  return {c_, out_h_, out_w_};
}

void MaxPool2D::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  out.reset({n, c_, out_h_, out_w_});
  argmax_.assign(out.size(), -1);
  for (int p = 0; p < n * c_; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
    float* dst = out.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    std::int32_t* arg = argmax_.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    for (int y = 0; y < out_h_; ++y) {
      for (int xo = 0; xo < out_w_; ++xo) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_i = -1;
        for (int i = 0; i < pool_; ++i) {
          const int iy = y * stride_ - pads_.top + i;
          if (iy < 0 || iy >= in_h_) continue;
          for (int j = 0; j < pool_; ++j) {
            const int ix = xo * stride_ - pads_.left + j;
            if (ix < 0 || ix >= in_w_) continue;
            const float v = src[iy * in_w_ + ix];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = iy * in_w_ + ix;
            }
          }
        }
        dst[y * out_w_ + xo] = best;
        arg[y * out_w_ + xo] = best_i;
      }
    }
  }
}

void MaxPool2D::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                         std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const int n = in[0]->dim(0);
  for (int p = 0; p < n * c_; ++p) {
    float* dst = grad_in[0]->data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    const std::int32_t* arg = argmax_.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    for (int i = 0; i < out_h_ * out_w_; ++i) dst[arg[i]] += src[i];
  }
}

// ---------------------------------------------------------------- AvgPool2D

Shape AvgPool2D::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  c_ = s[0];
  in_h_ = s[1];
  in_w_ = s[2];
  int a, b;
  out_h_ = resolve_padding(in_h_, pool_, stride_, Padding::valid, a, b);
  out_w_ = resolve_padding(in_w_, pool_, stride_, Padding::valid, a, b);
  if (out_h_ < 1 || out_w_ < 1) throw ArgumentError(name_ + ": input " + to_string(s) + " smaller than pool");
  return {c_, out_h_, out_w_};
}

void AvgPool2D::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  out.reset({n, c_, out_h_, out_w_});
  const float scale = 1.0f / static_cast<float>(pool_ * pool_);
  for (int p = 0; p < n * c_; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
    float* dst = out.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    for (int y = 0; y < out_h_; ++y) {
      for (int xo = 0; xo < out_w_; ++xo) {
        float acc = 0.0f;
        for (int i = 0; i < pool_; ++i) {
          for (int j = 0; j < pool_; ++j) acc += src[(y * stride_ + i) * in_w_ + xo * stride_ + j];
        }
        dst[y * out_w_ + xo] = acc * scale;
      }
    }
  }
}

void AvgPool2D::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                         std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const int n = in[0]->dim(0);
  const float scale = 1.0f / static_cast<float>(pool_ * pool_);
  for (int p = 0; p < n * c_; ++p) {
    float* dst = grad_in[0]->data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
    for (int y = 0; y < out_h_; ++y) {
      for (int xo = 0; xo < out_w_; ++xo) {
        const float g = src[y * out_w_ + xo] * scale;
        for (int i = 0; i < pool_; ++i) {
          for (int j = 0; j < pool_; ++j) dst[(y * stride_ + i) * in_w_ + xo * stride_ + j] += g;
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Add / Concatenate

Shape Add::build(std::span<const Shape> inputs) {
  if (inputs.size() < 2) throw ArgumentError(name_ + ": needs at least two inputs");
  for (const auto& s : inputs) {
    if (s != inputs[0]) throw ArgumentError(name_ + ": shape mismatch " + to_string(s) + " vs " + to_string(inputs[0]));
  }
  return inputs[0];
}

void Add::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  out = *in[0];
  for (std::size_t k = 1; k < in.size(); ++k) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[k])[i];
  }
}

void Add::backward(std::span<const Tensor* const>, const Tensor&, const Tensor& grad_out,
                   std::span<Tensor* const> grad_in) {
  for (Tensor* g : grad_in) {
    if (g == nullptr) continue;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grad_out[i];
  }
}

Shape Concatenate::build(std::span<const Shape> inputs) {
  if (inputs.size() < 2) throw ArgumentError(name_ + ": needs at least two inputs");
  Shape out = inputs[0];
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    if (inputs[k].size() != out.size() || !std::equal(out.begin() + 1, out.end(), inputs[k].begin() + 1)) {
      throw ArgumentError(name_ + ": incompatible shapes for concatenation");
    }
    out[0] += inputs[k][0];
  }
  return out;
}

void Concatenate::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const int n = in[0]->dim(0);
  Shape shape = in[0]->shape();
  shape[1] = 0;
  for (const Tensor* t : in) shape[1] += t->dim(1);
  out.reset(shape);
  const std::size_t out_stride = out.stride0();
  for (int b = 0; b < n; ++b) {
    float* dst = out.data() + b * out_stride;
    for (const Tensor* t : in) {
      const std::size_t len = t->stride0();
      std::copy(t->data() + b * len, t->data() + (b + 1) * len, dst);
      dst += len;
    }
  }
}

void Concatenate::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                           std::span<Tensor* const> grad_in) {
  const int n = in[0]->dim(0);
  const std::size_t out_stride = grad_out.stride0();
  for (int b = 0; b < n; ++b) {
    const float* src = grad_out.data() + b * out_stride;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t len = in[k]->stride0();
      if (grad_in[k] != nullptr) {
        float* dst = grad_in[k]->data() + b * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
      src += len;
    }
  }
}

// ---------------------------------------------------------------- GlobalAvgPool

Shape GlobalAvgPool::build(std::span<const Shape> inputs) {
  const Shape s = expect_image_shape(*this, inputs);
  return {s[0]};
}

void GlobalAvgPool::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  out.reset({n, c});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + p * spatial;
    double acc = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) acc += src[i];
    out[p] = static_cast<float>(acc / static_cast<double>(spatial));
  }
}

void GlobalAvgPool::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                             std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const Tensor& x = *in[0];
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const float scale = 1.0f / static_cast<float>(spatial);
  for (int p = 0; p < n * c; ++p) {
    float* dst = grad_in[0]->data() + p * spatial;
    const float g = grad_out[p] * scale;
    for (std::size_t i = 0; i < spatial; ++i) dst[i] += g;
  }
}

// ---------------------------------------------------------------- Dropout

void Dropout::forward(std::span<const Tensor* const> in, Tensor& out, bool training) {
  out = *in[0];
  masked_ = training && rate_ > 0.0;
  if (!masked_) return;
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate_));
  mask_.resize(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask_[i] = rng_.uniform() < rate_ ? 0.0f : keep_scale;
    out[i] *= mask_[i];
  }
}

void Dropout::backward(std::span<const Tensor* const>, const Tensor&, const Tensor& grad_out,
                       std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  Tensor& dx = *grad_in[0];
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += masked_ ? grad_out[i] * mask_[i] : grad_out[i];
}

// ---------------------------------------------------------------- Dense

Shape Dense::build(std::span<const Shape> inputs) {
  expect_inputs(*this, inputs.size(), 1);
  if (inputs[0].size() != 1) throw ArgumentError(name_ + ": expected a flat feature input, got " + to_string(inputs[0]));
  in_features_ = inputs[0][0];
  weights_.clear();
  add_weight("kernel", {in_features_, units_});
  if (use_bias_) add_weight("bias", {units_});
  return {units_};
}

void Dense::initialize(Rng& rng) {
  glorot_uniform(weights_[0].value, in_features_, units_, rng);
  if (use_bias_) weights_[1].value.fill(0.0f);
}

void Dense::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  out.reset({n, units_});
  MatrixMap y(out.data(), n, units_);
  y.noalias() = ConstMatrixMap(x.data(), n, in_features_) * ConstMatrixMap(weights_[0].value.data(), in_features_, units_);
  if (use_bias_) {
    for (int b = 0; b < n; ++b) {
      for (int u = 0; u < units_; ++u) y(b, u) += weights_[1].value[u];
    }
  }
}

void Dense::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& grad_out,
                     std::span<Tensor* const> grad_in) {
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  ConstMatrixMap dy(grad_out.data(), n, units_);
  if (trainable_) {
    MatrixMap(weights_[0].grad.data(), in_features_, units_).noalias() +=
        ConstMatrixMap(x.data(), n, in_features_).transpose() * dy;
    if (use_bias_) {
      for (int u = 0; u < units_; ++u) weights_[1].grad[u] += dy.col(u).sum();
    }
  }
  if (grad_in[0] != nullptr) {
    MatrixMap(grad_in[0]->data(), n, in_features_).noalias() +=
        dy * ConstMatrixMap(weights_[0].value.data(), in_features_, units_).transpose();
  }
}

// ---------------------------------------------------------------- Softmax / L2Normalize

Shape Softmax::build(std::span<const Shape> inputs) {
  expect_inputs(*this, inputs.size(), 1);
  return inputs[0];
}

void Softmax::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  out.reset(x.shape());
  const int n = x.dim(0);
  const std::size_t k = x.stride0();
  for (int b = 0; b < n; ++b) {
    const float* src = x.data() + b * k;
    float* dst = out.data() + b * k;
    const float mx = *std::max_element(src, src + k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(static_cast<double>(src[i]) - mx);
    for (std::size_t i = 0; i < k; ++i) dst[i] = static_cast<float>(std::exp(static_cast<double>(src[i]) - mx) / sum);
  }
}

void Softmax::backward(std::span<const Tensor* const>, const Tensor& out, const Tensor& grad_out,
                       std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const int n = out.dim(0);
  const std::size_t k = out.stride0();
  for (int b = 0; b < n; ++b) {
    const float* y = out.data() + b * k;
    const float* dy = grad_out.data() + b * k;
    float* dx = grad_in[0]->data() + b * k;
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += static_cast<double>(dy[i]) * y[i];
    for (std::size_t i = 0; i < k; ++i) dx[i] += static_cast<float>(y[i] * (dy[i] - dot));
  }
}

Shape L2Normalize::build(std::span<const Shape> inputs) {
  expect_inputs(*this, inputs.size(), 1);
  return inputs[0];
}

void L2Normalize::forward(std::span<const Tensor* const> in, Tensor& out, bool) {
  const Tensor& x = *in[0];
  out.reset(x.shape());
  const int n = x.dim(0);
  const std::size_t k = x.stride0();
  for (int b = 0; b < n; ++b) {
    const float* src = x.data() + b * k;
    double sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) sq += static_cast<double>(src[i]) * src[i];
    const double inv = 1.0 / std::sqrt(std::max(sq, 1e-12));
    for (std::size_t i = 0; i < k; ++i) out[b * k + i] = static_cast<float>(src[i] * inv);
  }
}

void L2Normalize::backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& grad_out,
                           std::span<Tensor* const> grad_in) {
  if (grad_in[0] == nullptr) return;
  const Tensor& x = *in[0];
  const int n = x.dim(0);
  const std::size_t k = x.stride0();
  for (int b = 0; b < n; ++b) {
    const float* src = x.data() + b * k;
    const float* y = out.data() + b * k;
    const float* dy = grad_out.data() + b * k;
    float* dx = grad_in[0]->data() + b * k;
    double sq = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      sq += static_cast<double>(src[i]) * src[i];
      dot += static_cast<double>(y[i]) * dy[i];
    }
    if (sq > 1e-12) {
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t i = 0; i < k; ++i) dx[i] += static_cast<float>((dy[i] - y[i] * dot) * inv);
    } else {
      for (std::size_t i = 0; i < k; ++i) dx[i] += static_cast<float>(dy[i] * 1e6);
    }
  }
}

}  // namespace cytoxai::nn
