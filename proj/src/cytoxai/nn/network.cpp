#include "cytoxai/nn/network.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "cytoxai/error.hpp"

namespace cytoxai::nn {

Network::Network(const Network& other) : input_(other.input_), output_(other.output_) {
  nodes_.reserve(other.nodes_.size());
  for (const auto& n : other.nodes_) {
    Node copy;
    copy.layer = n.layer->clone();
    copy.inputs = n.inputs;
    copy.shape = n.shape;
    nodes_.push_back(std::move(copy));
  }
}

Network& Network::operator=(const Network& other) {
  if (this != &other) *this = Network(other);
  return *this;
}

int Network::add_input(std::string name, Shape shape) {
  if (input_ >= 0) throw ArgumentError("network already has an input");
  input_ = add(std::make_unique<InputLayer>(std::move(name), shape), {});
  return input_;
}

int Network::add(std::unique_ptr<Layer> layer, std::vector<int> inputs) {
  std::vector<Shape> shapes;
  for (int i : inputs) {
    if (i < 0 || i >= static_cast<int>(nodes_.size())) throw ArgumentError("unknown input node for " + layer->name());
    shapes.push_back(nodes_[i].shape);
  }
  if (find(layer->name())) throw ArgumentError("duplicate layer name " + layer->name());
  Node node;
  node.shape = layer->build(shapes);
  node.layer = std::move(layer);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  output_ = static_cast<int>(nodes_.size()) - 1;
  return output_;
}

std::optional<int> Network::find(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].layer->name() == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<int> Network::keras_order(int output) const {
  // Depth-first discovery (pre-order) and post-order finish list from the output.
  std::vector<int> discovery(nodes_.size(), -1);
  std::vector<int> finished;
  std::vector<char> done(nodes_.size(), 0);
  int counter = 0;
  std::function<void(int)> visit = [&](int n) {
    if (done[n]) return;
    if (discovery[n] < 0) discovery[n] = counter++;
    for (int i : nodes_[n].inputs) visit(i);
    done[n] = 1;
    finished.push_back(n);
  };
  visit(output);

  std::vector<int> depth(nodes_.size(), 0);
  for (auto it = finished.rbegin(); it != finished.rend(); ++it) {
    for (int parent : nodes_[*it].inputs) depth[parent] = std::max(depth[parent], depth[*it] + 1);
  }
  std::vector<int> order = finished;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (depth[a] != depth[b]) return depth[a] > depth[b];
    return discovery[a] < discovery[b];
  });
  return order;
}

void Network::initialize(std::uint64_t seed) {
  for (auto& n : nodes_) {
    Rng rng(mix_seed(seed, fnv1a(n.layer->name())));
    n.layer->initialize(rng);
  }
}

const Tensor& Network::forward(const Tensor& batch, bool training, int until) {
  if (input_ < 0) throw ArgumentError("network has no input");
  if (until < 0) until = output_;
  std::vector<char> needed(nodes_.size(), 0);
  needed[until] = 1;
  for (int n = until; n >= 0; --n) {
    if (!needed[n]) continue;
    for (int i : nodes_[n].inputs) needed[i] = 1;
  }
  for (int n = 0; n <= until; ++n) {
    if (!needed[n]) continue;
    Node& node = nodes_[n];
    std::vector<const Tensor*> in;
    if (n == input_) {
      in.push_back(&batch);
    } else {
      for (int i : node.inputs) in.push_back(&nodes_[i].value);
    }
    node.layer->forward(in, node.value, training);
  }
  return nodes_[until].value;
}

void Network::backward(const Tensor& grad, int from, std::span<const int> capture) {
  if (from < 0) from = output_;
  if (grad.shape() != nodes_[from].value.shape()) {
    throw ArgumentError("gradient shape " + to_string(grad.shape()) + " does not match node output " +
                        to_string(nodes_[from].value.shape()));
  }
  const std::size_t count = nodes_.size();
  std::vector<char> upstream(count, 0);
  upstream[from] = 1;
  for (int n = from; n >= 0; --n) {
    if (!upstream[n]) continue;
    for (int i : nodes_[n].inputs) upstream[i] = 1;
  }
  std::vector<char> wants(count, 0);
  for (int n = 0; n <= from; ++n) {
    if (!upstream[n]) continue;
    bool w = nodes_[n].layer->has_trainable_weights() ||
             std::find(capture.begin(), capture.end(), n) != capture.end();
    for (int i : nodes_[n].inputs) w = w || wants[i];
    wants[n] = w;
  }
  for (auto& node : nodes_) node.grad = Tensor();
  nodes_[from].grad = grad;
  for (int n = from; n >= 0; --n) {
    Node& node = nodes_[n];
    if (!wants[n] || node.grad.empty() || n == input_) continue;
    std::vector<const Tensor*> in;
    std::vector<Tensor*> grad_in;
    for (int i : node.inputs) {
      in.push_back(&nodes_[i].value);
      if (wants[i]) {
        if (nodes_[i].grad.empty()) nodes_[i].grad.reset(nodes_[i].value.shape());
        grad_in.push_back(&nodes_[i].grad);
      } else {
        grad_in.push_back(nullptr);
      }
    }
    node.layer->backward(in, node.value, node.grad, grad_in);
    const bool keep = std::find(capture.begin(), capture.end(), n) != capture.end() || n == from;
    if (!keep) node.grad = Tensor();
  }
}

void Network::zero_grad() {
  for (auto& n : nodes_) {
    for (auto& w : n.layer->weights()) w.grad.fill(0.0f);
  }
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) total += n.layer->parameter_count();
  return total;
}

std::size_t Network::trainable_parameter_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) total += n.layer->trainable_parameter_count();
  return total;
}

}  // namespace cytoxai::nn
