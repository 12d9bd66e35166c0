#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cytoxai/nn/network.hpp"

namespace cytoxai::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Adam with bias correction folded into the step size. Only weights of
// trainable layers that are themselves trainable are updated.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : opt_(options) {}
  void step(Network& net);
  std::int64_t iterations() const { return t_; }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  AdamOptions opt_;
  std::int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace cytoxai::nn
