#include <doctest.h>

#include <cmath>
#include <functional>

#include "cytoxai/nn/network.hpp"
#include "cytoxai/nn/optimizer.hpp"

using namespace cytoxai;
using namespace cytoxai::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal() * scale);
  return t;
}

// Loss = sum(out * probe). Compares analytic gradients of the input and of every
// trainable weight with central differences.
void check_gradients(Network& net, Tensor batch, bool training = true, double tol = 2e-2) {
  Rng rng(99);
  net.forward(batch, training);
  const Tensor probe = random_tensor(net.value(net.output()).shape(), rng);
  auto loss = [&]() {
    const Tensor& out = net.forward(batch, training);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += double(out[i]) * probe[i];
    return s;
  };
  net.zero_grad();
  loss();
  const int capture[] = {net.input()};
  net.backward(probe, -1, capture);
  const Tensor input_grad = net.gradient(net.input());

  auto numeric = [&](float& x) {
    const float saved = x;
    const float h = 2e-3f * std::max(1.0f, std::abs(saved));
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    return (up - down) / (2.0 * h);
  };
  auto compare = [&](double analytic, double num, const std::string& what) {
    INFO(what);
    CHECK(analytic == doctest::Approx(num).epsilon(tol).scale(1.0));
  };
  for (std::size_t i = 0; i < batch.size(); i += std::max<std::size_t>(1, batch.size() / 40)) {
    compare(input_grad[i], numeric(batch.data()[i]), "input " + std::to_string(i));
  }
  for (std::size_t n = 0; n < net.size(); ++n) {
    Layer& layer = net.layer(static_cast<int>(n));
    if (!layer.trainable()) continue;
    for (auto& w : layer.weights()) {
      if (!w.trainable) continue;
      const Tensor analytic = w.grad;
      for (std::size_t i = 0; i < w.value.size(); i += std::max<std::size_t>(1, w.value.size() / 20)) {
        compare(analytic[i], numeric(w.value.data()[i]), layer.name() + "/" + w.name + "[" + std::to_string(i) + "]");
      }
    }
  }
}

Network single(std::unique_ptr<Layer> layer, Shape input_shape, std::uint64_t seed = 5) {
  Network net;
  const int in = net.add_input("in", std::move(input_shape));
  net.add(std::move(layer), {in});
  net.initialize(seed);
  return net;
}

}  // namespace

TEST_CASE("padding resolution follows TensorFlow") {
  int before = 0, after = 0;
  CHECK(resolve_padding(110, 3, 2, Padding::same, before, after) == 55);
  CHECK(before == 0);
  CHECK(after == 1);
  CHECK(resolve_padding(7, 3, 1, Padding::same, before, after) == 7);
  CHECK(before == 1);
  CHECK(after == 1);
  CHECK(resolve_padding(7, 3, 2, Padding::valid, before, after) == 3);
}

TEST_CASE("conv2d gradients") {
  Rng rng(1);
  for (int stride : {1, 2}) {
    for (Padding pad : {Padding::valid, Padding::same}) {
      for (int k : {1, 3}) {
        CAPTURE(stride);
        CAPTURE(k);
        Network net = single(std::make_unique<Conv2D>("c", Conv2DOptions{4, k, stride, pad, true, false}), {3, 7, 6});
        check_gradients(net, random_tensor({2, 3, 7, 6}, rng));
      }
    }
  }
}

TEST_CASE("fused relu matches a separate activation layer") {
  // Finite differences are unreliable across relu kinks, so compare with the unfused graph.
  Rng rng(11);
  Network fused = single(std::make_unique<Conv2D>("c", Conv2DOptions{4, 3, 1, Padding::same, true, true}), {2, 5, 5});
  Network plain;
  const int in = plain.add_input("in", {2, 5, 5});
  const int c = plain.add<Conv2D>({in}, "c", Conv2DOptions{4, 3, 1, Padding::same, true, false});
  plain.add<Activation>({c}, "r", ActivationKind::relu);
  plain.initialize(5);
  const Tensor x = random_tensor({2, 2, 5, 5}, rng);
  const Tensor probe = random_tensor({2, 4, 5, 5}, rng);
  const int capture[] = {0};
  for (Network* net : {&fused, &plain}) {
    net->zero_grad();
    net->forward(x, true);
    net->backward(probe, -1, capture);
  }
  const Tensor& yf = fused.value(fused.output());
  const Tensor& yp = plain.value(plain.output());
  for (std::size_t i = 0; i < yf.size(); ++i) CHECK(yf[i] == yp[i]);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(fused.gradient(0)[i] == doctest::Approx(plain.gradient(0)[i]));
  const Tensor& kf = fused.layer(1).weights()[0].grad;
  const Tensor& kp = plain.layer(1).weights()[0].grad;
  for (std::size_t i = 0; i < kf.size(); ++i) CHECK(kf[i] == doctest::Approx(kp[i]));
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(2);
  Network net = single(std::make_unique<Conv2D>("c", Conv2DOptions{2, 3, 2, Padding::same, true, false}), {2, 6, 5});
  const Tensor x = random_tensor({1, 2, 6, 5}, rng);
  const Tensor& y = net.forward(x, false);
  const auto& w = net.layer(1).weights();
  const Tensor& kernel = w[0].value;
  const Tensor& bias = w[1].value;
  // out 3x3; TF same with stride 2: pad rows (0,1)... rows 6 -> pad total 1 -> top 0; cols 5 -> total 2 -> left 1.
  for (int o = 0; o < 2; ++o) {
    for (int oy = 0; oy < 3; ++oy) {
      for (int ox = 0; ox < 3; ++ox) {
        double s = bias[o];
        for (int c = 0; c < 2; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 0, ix = ox * 2 + kx - 1;
              if (iy < 0 || iy >= 6 || ix < 0 || ix >= 5) continue;
              s += double(kernel[((o * 2 + c) * 3 + ky) * 3 + kx]) * x[(c * 6 + iy) * 5 + ix];
            }
          }
        }
        CHECK(y[(o * 3 + oy) * 3 + ox] == doctest::Approx(s).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("depthwise, pooling, padding and activation gradients") {
  Rng rng(3);
  for (int stride : {1, 2}) {
    Network dw = single(std::make_unique<DepthwiseConv2D>("d", 3, stride, Padding::same, true), {3, 6, 6});
    check_gradients(dw, random_tensor({2, 3, 6, 6}, rng));
  }
  Network mp = single(std::make_unique<MaxPool2D>("m", 3, 2), {2, 7, 7});
  check_gradients(mp, random_tensor({2, 2, 7, 7}, rng));
  Network ap = single(std::make_unique<AvgPool2D>("a", 2, 2), {2, 6, 6});
  check_gradients(ap, random_tensor({2, 2, 6, 6}, rng));
  Network zp = single(std::make_unique<ZeroPadding2D>("z", Pads{1, 2, 0, 1}), {2, 3, 3});
  check_gradients(zp, random_tensor({1, 2, 3, 3}, rng));
  Network gap = single(std::make_unique<GlobalAvgPool>("g"), {3, 4, 5});
  check_gradients(gap, random_tensor({2, 3, 4, 5}, rng));
  Network relu = single(std::make_unique<Activation>("r", ActivationKind::relu), {2, 4, 4});
  check_gradients(relu, random_tensor({2, 2, 4, 4}, rng));
  Network relu6 = single(std::make_unique<Activation>("r", ActivationKind::relu6), {2, 4, 4});
  check_gradients(relu6, random_tensor({2, 2, 4, 4}, rng, 4.0));
}

TEST_CASE("batch norm gradients in training and inference mode") {
  Rng rng(4);
  Network bn = single(std::make_unique<BatchNorm>("bn", 1e-3f), {3, 3, 3});
  for (auto& w : bn.layer(1).weights()) {
    if (w.trainable) w.value = random_tensor(w.value.shape(), rng, 0.5);
  }
  check_gradients(bn, random_tensor({3, 3, 3, 3}, rng), true, 3e-2);
  check_gradients(bn, random_tensor({3, 3, 3, 3}, rng), false);
}

TEST_CASE("frozen batch norm uses moving statistics even in training mode") {
  Rng rng(5);
  Network bn = single(std::make_unique<BatchNorm>("bn"), {2, 2, 2});
  bn.layer(1).set_trainable(false);
  const Tensor x = random_tensor({4, 2, 2, 2}, rng);
  const Tensor a = bn.forward(x, true);
  const Tensor b = bn.forward(x, false);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("dense, softmax, l2 normalize, add and concatenate gradients") {
  Rng rng(6);
  Network dense = single(std::make_unique<Dense>("d", 4), {6});
  check_gradients(dense, random_tensor({3, 6}, rng));
  Network sm = single(std::make_unique<Softmax>("s"), {5});
  check_gradients(sm, random_tensor({3, 5}, rng));
  Network l2 = single(std::make_unique<L2Normalize>("l"), {5});
  check_gradients(l2, random_tensor({3, 5}, rng));

  Network graph;
  const int in = graph.add_input("in", {2, 3, 3});
  const int a = graph.add<Conv2D>({in}, "a", Conv2DOptions{2, 1, 1, Padding::valid, true, false});
  const int b = graph.add<Conv2D>({in}, "b", Conv2DOptions{3, 3, 1, Padding::same, false, false});
  const int sum = graph.add<Add>({in, a}, "sum");
  graph.add<Concatenate>({sum, b}, "cat");
  graph.initialize(8);
  check_gradients(graph, random_tensor({2, 2, 3, 3}, rng));
}

TEST_CASE("softmax is stable for large logits") {
  Network sm = single(std::make_unique<Softmax>("s"), {3});
  Tensor x({1, 3});
  x[0] = 1000;
  x[1] = 999;
  x[2] = -1000;
  const Tensor& y = sm.forward(x, false);
  CHECK(std::isfinite(y[0]));
  CHECK(y[0] + y[1] + y[2] == doctest::Approx(1.0));
  CHECK(y[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("dropout is identity at inference and inverted in training") {
  Network d = single(std::make_unique<Dropout>("d", 0.5), {1000});
  Tensor x({1, 1000}, 1.0f);
  const Tensor& inf = d.forward(x, false);
  for (std::size_t i = 0; i < inf.size(); ++i) REQUIRE(inf[i] == 1.0f);
  const Tensor& tr = d.forward(x, true);
  int zeros = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    REQUIRE((tr[i] == 0.0f || tr[i] == 2.0f));
    zeros += tr[i] == 0.0f;
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}

TEST_CASE("frozen layers receive no weight updates") {
  Rng rng(9);
  Network net;
  const int in = net.add_input("in", {4});
  const int a = net.add<Dense>({in}, "a", 3);
  net.add<Dense>({a}, "b", 2);
  net.initialize(1);
  net.layer(a).set_trainable(false);
  const Tensor before_a = net.layer(a).weights()[0].value;
  const Tensor before_b = net.layer(2).weights()[0].value;
  Adam adam(AdamOptions{});
  net.zero_grad();
  net.forward(random_tensor({2, 4}, rng), true);
  net.backward(random_tensor({2, 2}, rng));
  adam.step(net);
  const Tensor& after_a = net.layer(a).weights()[0].value;
  const Tensor& after_b = net.layer(2).weights()[0].value;
  bool b_changed = false;
  for (std::size_t i = 0; i < after_a.size(); ++i) CHECK(after_a[i] == before_a[i]);
  for (std::size_t i = 0; i < after_b.size(); ++i) b_changed |= after_b[i] != before_b[i];
  CHECK(b_changed);
}

TEST_CASE("adam first step moves each weight by the learning rate") {
  Network net;
  const int in = net.add_input("in", {2});
  net.add<Dense>({in}, "d", 1);
  net.initialize(1);
  auto& kernel = net.layer(1).weights()[0];
  const Tensor before = kernel.value;
  Tensor x({1, 2});
  x[0] = 1.0f;
  x[1] = -2.0f;
  Tensor g({1, 1}, 1.0f);
  net.zero_grad();
  net.forward(x, true);
  net.backward(g);
  Adam adam(AdamOptions{0.01});
  adam.step(net);
  // m_hat = g, v_hat = g^2 after bias correction: step = lr * g / (|g| + eps).
  CHECK(kernel.value[0] == doctest::Approx(before[0] - 0.01).epsilon(1e-4));
  CHECK(kernel.value[1] == doctest::Approx(before[1] + 0.01).epsilon(1e-4));
}

TEST_CASE("network copies are independent") {
  Network net;
  const int in = net.add_input("in", {2});
  net.add<Dense>({in}, "d", 2);
  net.initialize(3);
  Network copy = net;
  copy.layer(1).weights()[0].value.fill(0.0f);
  CHECK(net.layer(1).weights()[0].value[0] != 0.0f);
  CHECK_THROWS(net.add<Dense>({in}, "d", 2));
}
