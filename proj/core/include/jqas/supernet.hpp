#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "jqas/autograd.hpp"
#include "jqas/quantizer.hpp"
#include "jqas/random.hpp"
#include "jqas/superkernel.hpp"

namespace jqas {

/// Static shape of one searchable MBConv group.
struct LayerGeometry {
  std::size_t index = 0;
  std::size_t block = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t in_size = 0;   // spatial H == W at the group input
  std::size_t out_size = 0;  // spatial H == W at the group output
  bool residual = false;
  bool skip_allowed = false;

  std::size_t hidden(int expand) const { return static_cast<std::size_t>(expand) * in_channels; }
};

/// MobileNetV2-like backbone: stem conv, num_blocks blocks of MBConv groups
/// (one group in the first and last block), global pooling and a dense head.
struct BackboneConfig {
  std::size_t num_blocks = 5;
  std::size_t groups_per_block = 4;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> block_channels{8, 16, 24, 32, 40};
  std::vector<std::size_t> block_strides{1, 2, 2, 2, 1};
  std::size_t num_classes = 10;
  std::size_t input_resolution = 32;
  std::size_t input_channels = 3;
  // Exposes the skip option on residual groups inside the middle blocks.
  bool skip_search = false;

  void validate() const;
  std::size_t searchable_layers() const;
  std::vector<LayerGeometry> layers() const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// The searchable object s = {architecture, quantization policy}: one
/// choice per searchable layer.
struct ModelSpec {
  std::vector<LayerChoice> layers;

  std::size_t size() const { return layers.size(); }
  /// Lengths match, bits are in {4,8,16}, skips only where allowed.
  void validate(const BackboneConfig& cfg) const;

  static ModelSpec uniform(std::size_t num_layers, LayerChoice choice);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct SearchSpaceCount {
  boost::multiprecision::cpp_int n_arch;
  boost::multiprecision::cpp_int n_quant;
  boost::multiprecision::cpp_int total;
};

SearchSpaceCount count_space(const BackboneConfig& cfg);

struct ModelSize {
  double conv_weight_bytes = 0.0;  // group convolutions at the group bit width
  double other_bytes = 0.0;        // stem, batch norm and head at 32 bits
  double total() const { return conv_weight_bytes + other_bytes; }
};

ModelSize model_size_bytes(const ModelSpec& spec, const BackboneConfig& cfg);

/// How one group is realised in a forward pass.
struct GroupRealization {
  KernelMasks masks;
  std::optional<quant::BitMasks> quant;  // nullopt: full-precision weights
};

template <typename T>
struct MbConvGroup {
  LayerGeometry geom;
  Var<T> expand_weight;  // [6*in, in, 1, 1]
  Var<T> bn1_gamma, bn1_beta;
  SuperKernel<T> depthwise;  // [6*in, 1, 5, 5]
  Var<T> bn2_gamma, bn2_beta;
  Var<T> project_weight;  // [out, 6*in, 1, 1]
  Var<T> bn3_gamma, bn3_beta;
};

template <typename T>
MbConvGroup<T> make_group(const LayerGeometry& geom, Rng& rng);

/// pointwise expand -> BN -> ReLU6 -> depthwise -> BN -> ReLU6 -> channel
/// mask -> linear pointwise -> BN (-> skip gate) (-> residual add).
template <typename T>
Var<T> forward_group(const MbConvGroup<T>& group, const Var<T>& x, const GroupRealization& r);

struct NamedParam {
  std::string name;
  Var<float> var;
  bool decay = true;
};

class SuperNet {
 public:
  static SuperNet build(const BackboneConfig& cfg, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return groups_.size(); }
  std::vector<MbConvGroup<float>>& groups() { return groups_; }
  const std::vector<MbConvGroup<float>>& groups() const { return groups_; }

  Var<float> forward(const Tensor<float>& batch, const std::vector<GroupRealization>& plan) const;

  /// Soft relaxation; optional per-layer subset dropout.
  Var<float> forward_soft(const Tensor<float>& batch,
                          const std::vector<SubsetDropout>* dropout = nullptr,
                          bool quantize = true) const;
  /// Hard 0/1 masks and fixed bit widths from `spec`.
  Var<float> forward_spec(const Tensor<float>& batch, const ModelSpec& spec,
                          bool quantize = true) const;
  /// Soft, sampled (spec drawn from `rng`) or hard (determinized) forward.
  /// The realised spec is written to `realized` for sampled/hard modes.
  Var<float> forward(const Tensor<float>& batch, ComposeMode mode, Rng* rng = nullptr,
                     ModelSpec* realized = nullptr) const;

  std::vector<GroupRealization> soft_plan(const std::vector<SubsetDropout>* dropout,
                                          bool quantize) const;
  std::vector<GroupRealization> spec_plan(const ModelSpec& spec, bool quantize) const;

  std::vector<DecisionArgs> decision_args() const;
  ModelSpec determinize() const;
  ModelSpec sample_spec(Rng& rng) const;

  /// Every trainable tensor with a stable name; thresholds are not included.
  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;

  /// t_k5, t_e3, t_e6, t_q_9_16, t_q_5_8 per layer, layer-major.
  std::vector<float> thresholds() const;
  void set_thresholds(const std::vector<float>& flat);

  /// Replaces the classifier head with a freshly initialised one.
  void reset_head(std::size_t num_classes, Rng& rng);

  Var<float> stem_weight, stem_gamma, stem_beta;
  Var<float> head_weight, head_bias;

 private:
  Var<float> stem(const Tensor<float>& batch) const;
  Var<float> head(const Var<float>& features) const;

  BackboneConfig cfg_;
  std::vector<MbConvGroup<float>> groups_;
};

struct SubNetGroup {
  LayerGeometry geom;
  LayerChoice choice;
  Var<float> expand_weight;  // [e*in, in, 1, 1]
  Var<float> bn1_gamma, bn1_beta;
  Var<float> depthwise;  // [e*in, 1, k, k]
  Var<float> bn2_gamma, bn2_beta;
  Var<float> project_weight;  // [out, e*in, 1, 1]
  Var<float> bn3_gamma, bn3_beta;
};

/// Compact discrete network: materialised kernels, reduced channels, skipped
/// groups removed, group weights quantized at the chosen bit width.
class SubNet {
 public:
  const BackboneConfig& config() const { return cfg_; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<SubNetGroup>& groups() const { return groups_; }

  Var<float> forward(const Tensor<float>& batch, bool quantize = true) const;
  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;

  Var<float> stem_weight, stem_gamma, stem_beta;
  Var<float> head_weight, head_bias;

 private:
  friend SubNet extract_subnet(const SuperNet& net, const ModelSpec& spec);
  friend SubNet subnet_from_parameters(const BackboneConfig& cfg, const ModelSpec& spec,
                                       const std::vector<NamedParam>& params);

  BackboneConfig cfg_;
  ModelSpec spec_;
  std::vector<SubNetGroup> groups_;
};

/// Deep-copies the weights selected by `spec` out of the supernet.
SubNet extract_subnet(const SuperNet& net, const ModelSpec& spec);

/// Rebuilds a subnet from named parameters (as written by its archive).
SubNet subnet_from_parameters(const BackboneConfig& cfg, const ModelSpec& spec,
                              const std::vector<NamedParam>& params);

}  // namespace jqas
