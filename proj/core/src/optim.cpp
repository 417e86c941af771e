#include "jqas/optim.hpp"

namespace jqas {

void SgdConfig::validate() const {
  // lr == 0 is accepted: it freezes weights, which the step contracts rely on.
  if (!(learning_rate >= 0.0)) throw ConfigError("sgd.learning_rate must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd.momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("sgd.weight_decay must be >= 0");
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                const SgdConfig& cfg, bool decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw ShapeError("sgd_update: param/grad/velocity lengths differ");
  }
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mom = static_cast<T>(cfg.momentum);
  const T wd = decay ? static_cast<T>(cfg.weight_decay) : T{0};
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mom * velocity[i] + grad[i] + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
void Sgd<T>::add_param(std::string name, Var<T> param, bool decay) {
  Tensor<T> velocity(param.shape());
  slots_.push_back(Slot{std::move(name), std::move(param), decay, std::move(velocity)});
}

template <typename T>
void Sgd<T>::step() {
  for (auto& slot : slots_) {
    const Tensor<T>& g = slot.param.grad();
    if (g.size() != slot.param.value().size()) continue;
    sgd_update<T>(slot.param.value_mut().data(), g.data(), slot.velocity.data(), cfg_,
                  slot.decay);
    slot.param.zero_grad();
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                const SgdConfig&, bool);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                 const SgdConfig&, bool);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace jqas
