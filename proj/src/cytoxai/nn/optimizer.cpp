#include "cytoxai/nn/optimizer.hpp"

#include <cmath>

namespace cytoxai::nn {

void Adam::step(Network& net) {
  ++t_;
  const double alpha = opt_.learning_rate * std::sqrt(1.0 - std::pow(opt_.beta2, static_cast<double>(t_))) /
                       (1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
  const float b1 = static_cast<float>(opt_.beta1), b2 = static_cast<float>(opt_.beta2);
  const float a = static_cast<float>(alpha), eps = static_cast<float>(opt_.epsilon);
  for (std::size_t n = 0; n < net.size(); ++n) {
    Layer& layer = net.layer(static_cast<int>(n));
    if (!layer.trainable()) continue;
    for (auto& w : layer.weights()) {
      if (!w.trainable) continue;
      Slot& slot = slots_[layer.name() + "/" + w.name];
      if (slot.m.empty()) {
        slot.m.assign(w.value.size(), 0.0f);
        slot.v.assign(w.value.size(), 0.0f);
      }
      float* value = w.value.data();
      const float* grad = w.grad.data();
      for (std::size_t i = 0; i < w.value.size(); ++i) {
        const float g = grad[i];
        slot.m[i] += (g - slot.m[i]) * (1.0f - b1);
        slot.v[i] += (g * g - slot.v[i]) * (1.0f - b2);
        value[i] -= a * slot.m[i] / (std::sqrt(slot.v[i]) + eps);
      }
    }
  }
}

}  // namespace cytoxai::nn
