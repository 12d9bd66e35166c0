#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/nn/layers.hpp"

namespace cytoxai::nn {

// Directed acyclic graph of layers, one node per layer. Nodes are created in a
// topological order (inputs first) and evaluated in creation order.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  int add_input(std::string name, Shape shape);
  int add(std::unique_ptr<Layer> layer, std::vector<int> inputs);
  template <class L, class... Args>
  int add(std::vector<int> inputs, Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...), std::move(inputs));
  }

  void set_output(int node) { output_ = node; }
  int output() const { return output_; }
  int input() const { return input_; }
  std::size_t size() const { return nodes_.size(); }

  Layer& layer(int node) { return *nodes_.at(node).layer; }
  const Layer& layer(int node) const { return *nodes_.at(node).layer; }
  const std::vector<int>& inputs_of(int node) const { return nodes_.at(node).inputs; }
  const Shape& output_shape(int node) const { return nodes_.at(node).shape; }
  std::optional<int> find(std::string_view name) const;

  // Layer listing in the order a Keras functional model reports `model.layers`:
  // decreasing depth from `output`, ties broken by depth-first discovery order.
  std::vector<int> keras_order(int output) const;

  // Seeds every layer initializer from (seed, layer name).
  void initialize(std::uint64_t seed);

  // Evaluates nodes needed for `until` (default: the output node).
  const Tensor& forward(const Tensor& batch, bool training, int until = -1);
  const Tensor& value(int node) const { return nodes_.at(node).value; }

  // Back-propagates `grad` from node `from` (default: output). Weight
  // gradients accumulate in trainable layers; gradients of `capture` nodes are
  // kept and readable with gradient().
  void backward(const Tensor& grad, int from = -1, std::span<const int> capture = {});
  const Tensor& gradient(int node) const { return nodes_.at(node).grad; }

  void zero_grad();
  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;

 private:
  struct Node {
    std::unique_ptr<Layer> layer;
    std::vector<int> inputs;
    Shape shape;
    Tensor value;
    Tensor grad;
  };
  std::vector<Node> nodes_;
  int input_ = -1;
  int output_ = -1;
};

}  // namespace cytoxai::nn
