#pragma once

#include <span>
#include <string>
#include <vector>

#include "jqas/autograd.hpp"

namespace jqas {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 3e-4;

  void validate() const;
};

/// One momentum-SGD update on a flat parameter:
///   v <- momentum*v + grad + weight_decay*param   (decay only when `decay`)
///   param <- param - lr*v
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                const SgdConfig& cfg, bool decay);

template <typename T>
class Sgd {
 public:
  struct Slot {
    std::string name;
    Var<T> param;
    bool decay = true;
    Tensor<T> velocity;
  };

  explicit Sgd(SgdConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void add_param(std::string name, Var<T> param, bool decay);
  /// Applies one update to every slot that has a gradient, then clears grads.
  void step();
  void zero_grad();

  const SgdConfig& config() const { return cfg_; }
  void set_config(const SgdConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
  }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  SgdConfig cfg_;
  std::vector<Slot> slots_;
};

}  // namespace jqas
