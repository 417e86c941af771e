#include "jqas/supernet.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "jqas/ops.hpp"
#include "jqas/sigmoid.hpp"

namespace jqas {

// ---------------------------------------------------------------------------
// Configuration and search-space bookkeeping

void BackboneConfig::validate() const {
  if (num_blocks < 2) throw ConfigError("backbone.num_blocks must be >= 2");
  if (groups_per_block < 1) throw ConfigError("backbone.groups_per_block must be >= 1");
  if (block_channels.size() != num_blocks) {
    throw ConfigError("backbone.block_channels has " + std::to_string(block_channels.size()) +
                      " entries, expected num_blocks = " + std::to_string(num_blocks));
  }
  if (block_strides.size() != num_blocks) {
    throw ConfigError("backbone.block_strides has " + std::to_string(block_strides.size()) +
                      " entries, expected num_blocks = " + std::to_string(num_blocks));
  }
  if (stem_channels == 0) throw ConfigError("backbone.stem_channels must be > 0");
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (block_channels[b] == 0) {
      throw ConfigError("backbone.block_channels[" + std::to_string(b) + "] must be > 0");
    }
    if (block_strides[b] != 1 && block_strides[b] != 2) {
      throw ConfigError("backbone.block_strides[" + std::to_string(b) + "] must be 1 or 2");
    }
  }
  if (num_classes < 2) throw ConfigError("backbone.num_classes must be >= 2");
  if (input_resolution < 1) throw ConfigError("backbone.input_resolution must be >= 1");
  if (input_channels < 1) throw ConfigError("backbone.input_channels must be >= 1");
}

std::size_t BackboneConfig::searchable_layers() const {
  return (num_blocks - 2) * groups_per_block + 2;
}

std::vector<LayerGeometry> BackboneConfig::layers() const {
  std::vector<LayerGeometry> out;
  std::size_t in = stem_channels, size = input_resolution, index = 0;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const bool edge = b == 0 || b + 1 == num_blocks;
    const std::size_t groups = edge ? 1 : groups_per_block;
    for (std::size_t g = 0; g < groups; ++g) {
      LayerGeometry geom;
      geom.index = index++;
      geom.block = b;
      geom.in_channels = in;
      geom.out_channels = block_channels[b];
      geom.stride = g == 0 ? block_strides[b] : 1;
      geom.in_size = size;
      geom.out_size = (size - 1) / geom.stride + 1;
      geom.residual = geom.stride == 1 && geom.in_channels == geom.out_channels;
      geom.skip_allowed = skip_search && geom.residual && !edge;
      out.push_back(geom);
      in = geom.out_channels;
      size = geom.out_size;
    }
  }
  return out;
}

void ModelSpec::validate(const BackboneConfig& cfg) const {
  const auto geoms = cfg.layers();
  if (layers.size() != geoms.size()) {
    throw ConfigError("model spec has " + std::to_string(layers.size()) +
                      " layers, backbone has " + std::to_string(geoms.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& c = layers[i];
    if (!quant::is_search_bits(c.bits)) {
      throw ConfigError("layer " + std::to_string(i) + ": bits must be 4, 8 or 16");
    }
    if (c.arch.skip()) {
      if (!geoms[i].skip_allowed) {
        throw ConfigError("layer " + std::to_string(i) + ": skip is not allowed here");
      }
      continue;
    }
    if (c.arch.kernel != 3 && c.arch.kernel != 5) {
      throw ConfigError("layer " + std::to_string(i) + ": kernel must be 3 or 5");
    }
    if (c.arch.expand != 3 && c.arch.expand != 6) {
      throw ConfigError("layer " + std::to_string(i) + ": expand must be 0, 3 or 6");
    }
  }
}

ModelSpec ModelSpec::uniform(std::size_t num_layers, LayerChoice choice) {
  return ModelSpec{std::vector<LayerChoice>(num_layers, choice)};
}

SearchSpaceCount count_space(const BackboneConfig& cfg) {
  using boost::multiprecision::cpp_int;
  SearchSpaceCount count{1, 1, 1};
  for (const auto& geom : cfg.layers()) {
    count.n_arch *= geom.skip_allowed ? 5 : 4;
    count.n_quant *= 3;
  }
  count.total = count.n_arch * count.n_quant;
  return count;
}

ModelSize model_size_bytes(const ModelSpec& spec, const BackboneConfig& cfg) {
  spec.validate(cfg);
  ModelSize size;
  double other_params = static_cast<double>(cfg.stem_channels * cfg.input_channels * 9 +
                                            2 * cfg.stem_channels);
  const auto geoms = cfg.layers();
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    const auto& c = spec.layers[i];
    if (c.arch.skip()) continue;
    const auto& g = geoms[i];
    const double hidden = static_cast<double>(g.hidden(c.arch.expand));
    const double k2 = static_cast<double>(c.arch.kernel * c.arch.kernel);
    const double conv = hidden * g.in_channels + hidden * k2 + g.out_channels * hidden;
    size.conv_weight_bytes += conv * c.bits / 8.0;
    other_params += 4.0 * hidden + 2.0 * g.out_channels;
  }
  other_params += static_cast<double>(cfg.block_channels.back() * cfg.num_classes + cfg.num_classes);
  size.other_bytes = other_params * 4.0;
  return size;
}

// ---------------------------------------------------------------------------
// MBConv group

namespace {

template <typename T>
Var<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> w(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(normal(rng, 0.0, stddev));
  return Var<T>(std::move(w), true);
}

template <typename T>
Var<T> constant(std::size_t n, T value) {
  return Var<T>(Tensor<T>(Shape{n}, value), true);
}

template <typename T>
Tensor<T> masked_quantize(const Tensor<T>& w, const Tensor<T>* mask, const quant::BitMasks& bits) {
  if (!mask) {
    return Tensor<T>(w.shape(), quant::bit_share<T>(quant::decompose<T>(w.data()), bits));
  }
  Tensor<T> composed(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) composed[i] = w[i] * (*mask)[i];
  const std::vector<T> active = gather_active(composed, *mask);
  if (active.empty()) return composed;
  return scatter_active(quant::bit_share<T>(quant::decompose<T>(active), bits), *mask);
}

// Masked (and optionally quantized) view of a weight; the gradient reaches
// the float weight through the mask only (straight-through quantizer).
template <typename T>
Var<T> effective_weight(const Var<T>& w, const Tensor<T>* mask,
                        const std::optional<quant::BitMasks>& bits) {
  if (!mask && !bits) return w;
  if (!bits) {
    Tensor<T> value(w.shape());
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = w.value()[i] * (*mask)[i];
    return ops::straight_through(w, std::move(value), *mask);
  }
  return ops::straight_through(w, masked_quantize(w.value(), mask, *bits),
                               mask ? *mask : Tensor<T>());
}

// Row mask for [rows, cols, 1, 1] weights keeping rows [0, active_rows).
template <typename T>
Tensor<T> row_mask(const Shape& shape, std::size_t active_rows) {
  Tensor<T> m(shape);
  const std::size_t cols = shape[1];
  for (std::size_t r = 0; r < active_rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] = T{1};
  return m;
}

// Column mask for [rows, cols, 1, 1] weights keeping columns [0, active_cols).
template <typename T>
Tensor<T> col_mask(const Shape& shape, std::size_t active_cols) {
  Tensor<T> m(shape);
  const std::size_t rows = shape[0], cols = shape[1];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < active_cols; ++c) m[r * cols + c] = T{1};
  return m;
}

}  // namespace

template <typename T>
MbConvGroup<T> make_group(const LayerGeometry& geom, Rng& rng) {
  MbConvGroup<T> g;
  g.geom = geom;
  const std::size_t hidden = geom.hidden(static_cast<int>(kMaxExpand));
  g.expand_weight = he_normal<T>(Shape{hidden, geom.in_channels, 1, 1}, geom.in_channels, rng);
  g.bn1_gamma = constant<T>(hidden, T{1});
  g.bn1_beta = constant<T>(hidden, T{0});
  g.depthwise = make_superkernel<T>(geom.in_channels, geom.skip_allowed, rng);
  g.bn2_gamma = constant<T>(hidden, T{1});
  g.bn2_beta = constant<T>(hidden, T{0});
  g.project_weight = he_normal<T>(Shape{geom.out_channels, hidden, 1, 1}, hidden, rng);
  g.bn3_gamma = constant<T>(geom.out_channels, T{1});
  g.bn3_beta = constant<T>(geom.out_channels, T{0});
  return g;
}

template <typename T>
Var<T> forward_group(const MbConvGroup<T>& g, const Var<T>& x, const GroupRealization& r) {
  const KernelMasks& m = r.masks;
  if (m.keep == 0.0) {
    if (!g.geom.residual) throw std::invalid_argument("skip realised on a non-residual group");
    return x;
  }
  const std::size_t hidden = g.depthwise.channels();
  const std::size_t half = hidden / 2;
  const bool upper_off = m.upper_channels == 0.0;

  Tensor<T> expand_mask, project_mask;
  if (upper_off) {
    expand_mask = row_mask<T>(g.expand_weight.shape(), half);
    project_mask = col_mask<T>(g.project_weight.shape(), half);
  }
  const Tensor<T> dw_mask = kernel_mask<T>(g.geom.in_channels, m);

  const Var<T> we = effective_weight(g.expand_weight, upper_off ? &expand_mask : nullptr, r.quant);
  const Var<T> wd = effective_weight(g.depthwise.weights, &dw_mask, r.quant);
  const Var<T> wp =
      effective_weight(g.project_weight, upper_off ? &project_mask : nullptr, r.quant);

  Var<T> h = ops::relu6(ops::batchnorm_batchstats(ops::conv2d(x, we, 1, 0, 1), g.bn1_gamma,
                                                  g.bn1_beta));
  h = ops::relu6(ops::batchnorm_batchstats(
      ops::conv2d(h, wd, static_cast<int>(g.geom.stride), 2, static_cast<int>(hidden)),
      g.bn2_gamma, g.bn2_beta));
  if (m.upper_channels != 1.0) {
    std::vector<T> factors(hidden, T{1});
    for (std::size_t c = half; c < hidden; ++c) factors[c] = static_cast<T>(m.upper_channels);
    h = ops::channel_scale<T>(h, factors);
  }
  Var<T> y = ops::batchnorm_batchstats(ops::conv2d(h, wp, 1, 0, 1), g.bn3_gamma, g.bn3_beta);
  if (m.keep != 1.0) y = ops::scale(y, static_cast<T>(m.keep));
  if (g.geom.residual) y = ops::add(x, y);
  return y;
}

template MbConvGroup<float> make_group<float>(const LayerGeometry&, Rng&);
template MbConvGroup<double> make_group<double>(const LayerGeometry&, Rng&);
template Var<float> forward_group<float>(const MbConvGroup<float>&, const Var<float>&,
                                         const GroupRealization&);
template Var<double> forward_group<double>(const MbConvGroup<double>&, const Var<double>&,
                                           const GroupRealization&);

// ---------------------------------------------------------------------------
// SuperNet

SuperNet SuperNet::build(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  SuperNet net;
  net.cfg_ = cfg;
  net.stem_weight = he_normal<float>(Shape{cfg.stem_channels, cfg.input_channels, 3, 3},
                                     cfg.input_channels * 9, rng);
  net.stem_gamma = constant<float>(cfg.stem_channels, 1.0f);
  net.stem_beta = constant<float>(cfg.stem_channels, 0.0f);
  for (const auto& geom : cfg.layers()) net.groups_.push_back(make_group<float>(geom, rng));
  net.reset_head(cfg.num_classes, rng);
  return net;
}

void SuperNet::reset_head(std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  cfg_.num_classes = num_classes;
  const std::size_t features = cfg_.block_channels.back();
  Tensor<float> w(Shape{features, num_classes});
  const double stddev = std::sqrt(1.0 / static_cast<double>(features));
  for (auto& v : w.data()) v = static_cast<float>(normal(rng, 0.0, stddev));
  head_weight = Var<float>(std::move(w), true);
  head_bias = constant<float>(num_classes, 0.0f);
}

namespace {

void check_batch(const Tensor<float>& batch, const BackboneConfig& cfg) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != cfg.input_channels || s[2] != cfg.input_resolution ||
      s[3] != cfg.input_resolution) {
    throw ShapeError("batch shape " + shape_str(s) + " does not match backbone input [N," +
                     std::to_string(cfg.input_channels) + "," +
                     std::to_string(cfg.input_resolution) + "," +
                     std::to_string(cfg.input_resolution) + "]");
  }
}

}  // namespace

Var<float> SuperNet::stem(const Tensor<float>& batch) const {
  check_batch(batch, cfg_);
  return ops::relu6(ops::batchnorm_batchstats(ops::conv2d(Var<float>(batch), stem_weight, 1, 1, 1),
                                              stem_gamma, stem_beta));
}

Var<float> SuperNet::head(const Var<float>& features) const {
  return ops::dense(ops::global_avg_pool(features), head_weight, head_bias);
}

Var<float> SuperNet::forward(const Tensor<float>& batch,
                             const std::vector<GroupRealization>& plan) const {
  if (plan.size() != groups_.size()) {
    throw ShapeError("forward plan has " + std::to_string(plan.size()) + " entries for " +
                     std::to_string(groups_.size()) + " layers");
  }
  Var<float> x = stem(batch);
  for (std::size_t i = 0; i < groups_.size(); ++i) x = forward_group(groups_[i], x, plan[i]);
  return head(x);
}

std::vector<GroupRealization> SuperNet::soft_plan(const std::vector<SubsetDropout>* dropout,
                                                  bool quantize) const {
  if (dropout && dropout->size() != groups_.size()) {
    throw ShapeError("dropout plan length does not match layer count");
  }
  std::vector<GroupRealization> plan(groups_.size());
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto p = decision_probabilities(groups_[i].depthwise);
    plan[i].masks = masks_from(p);
    if (dropout) {
      plan[i].masks.outer_taps *= (*dropout)[i].outer_scale;
      plan[i].masks.upper_channels *= (*dropout)[i].upper_scale;
    }
    if (quantize) plan[i].quant = quant::BitMasks{p.drop_9_16, p.drop_5_8};
  }
  return plan;
}

std::vector<GroupRealization> SuperNet::spec_plan(const ModelSpec& spec, bool quantize) const {
  spec.validate(cfg_);
  std::vector<GroupRealization> plan(groups_.size());
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    plan[i].masks = masks_from(spec.layers[i].arch);
    if (quantize) plan[i].quant = quant::masks_for_bits(spec.layers[i].bits);
  }
  return plan;
}

Var<float> SuperNet::forward_soft(const Tensor<float>& batch,
                                  const std::vector<SubsetDropout>* dropout, bool quantize) const {
  return forward(batch, soft_plan(dropout, quantize));
}

Var<float> SuperNet::forward_spec(const Tensor<float>& batch, const ModelSpec& spec,
                                  bool quantize) const {
  return forward(batch, spec_plan(spec, quantize));
}

Var<float> SuperNet::forward(const Tensor<float>& batch, ComposeMode mode, Rng* rng,
                             ModelSpec* realized) const {
  switch (mode) {
    case ComposeMode::Soft:
      return forward_soft(batch);
    case ComposeMode::Sampled: {
      if (!rng) throw std::invalid_argument("sampled forward needs an RNG");
      ModelSpec spec = sample_spec(*rng);
      if (realized) *realized = spec;
      return forward_spec(batch, spec);
    }
    case ComposeMode::Hard: {
      ModelSpec spec = determinize();
      if (realized) *realized = spec;
      return forward_spec(batch, spec);
    }
  }
  throw std::invalid_argument("unknown compose mode");
}

std::vector<DecisionArgs> SuperNet::decision_args() const {
  std::vector<DecisionArgs> out;
  out.reserve(groups_.size());
  for (const auto& g : groups_) out.push_back(jqas::decision_args(g.depthwise));
  return out;
}

ModelSpec SuperNet::determinize() const {
  ModelSpec spec;
  for (const auto& g : groups_) spec.layers.push_back(jqas::determinize(g.depthwise));
  return spec;
}

ModelSpec SuperNet::sample_spec(Rng& rng) const {
  ModelSpec spec;
  for (const auto& g : groups_) {
    spec.layers.push_back(
        sample_choice(decision_probabilities(g.depthwise), g.depthwise.skip_allowed, rng));
  }
  return spec;
}

namespace {

std::string layer_prefix(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "layer%02zu.", index);
  return buf;
}

std::size_t total_size(const std::vector<NamedParam>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace

std::vector<NamedParam> SuperNet::parameters() const {
  std::vector<NamedParam> out{{"stem.weight", stem_weight, true},
                              {"stem.bn.gamma", stem_gamma, false},
                              {"stem.bn.beta", stem_beta, false}};
  for (const auto& g : groups_) {
    const std::string p = layer_prefix(g.geom.index);
    out.push_back({p + "expand", g.expand_weight, true});
    out.push_back({p + "bn1.gamma", g.bn1_gamma, false});
    out.push_back({p + "bn1.beta", g.bn1_beta, false});
    out.push_back({p + "depthwise", g.depthwise.weights, true});
    out.push_back({p + "bn2.gamma", g.bn2_gamma, false});
    out.push_back({p + "bn2.beta", g.bn2_beta, false});
    out.push_back({p + "project", g.project_weight, true});
    out.push_back({p + "bn3.gamma", g.bn3_gamma, false});
    out.push_back({p + "bn3.beta", g.bn3_beta, false});
  }
  out.push_back({"head.weight", head_weight, true});
  out.push_back({"head.bias", head_bias, false});
  return out;
}

std::size_t SuperNet::parameter_count() const { return total_size(parameters()); }

std::vector<float> SuperNet::thresholds() const {
  std::vector<float> flat;
  flat.reserve(groups_.size() * 5);
  for (const auto& g : groups_) {
    const auto& sk = g.depthwise;
    flat.insert(flat.end(), {sk.arch.kernel5, sk.arch.keep, sk.arch.expand6, sk.quant.t_9_16,
                             sk.quant.t_5_8});
  }
  return flat;
}

void SuperNet::set_thresholds(const std::vector<float>& flat) {
  if (flat.size() != groups_.size() * 5) {
    throw ShapeError("threshold vector has " + std::to_string(flat.size()) + " entries, expected " +
                     std::to_string(groups_.size() * 5));
  }
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    auto& sk = groups_[i].depthwise;
    sk.arch = {flat[5 * i], flat[5 * i + 1], flat[5 * i + 2]};
    sk.quant = {flat[5 * i + 3], flat[5 * i + 4]};
  }
}

// ---------------------------------------------------------------------------
// SubNet

namespace {

Var<float> leading(const Var<float>& v, std::size_t n) {
  const auto d = v.value().data();
  return Var<float>(Tensor<float>(Shape{n}, std::vector<float>(d.begin(), d.begin() + n)), true);
}

Var<float> fixed_quant(const Var<float>& w, int bits, bool quantize) {
  if (!quantize) return w;
  return ops::straight_through(w, Tensor<float>(w.shape(), quant::quantize<float>(w.value().data(), bits)),
                               Tensor<float>());
}

SubNetGroup allocate_group(const LayerGeometry& geom, const LayerChoice& choice) {
  SubNetGroup g;
  g.geom = geom;
  g.choice = choice;
  const std::size_t hidden = geom.hidden(choice.arch.expand);
  const std::size_t k = static_cast<std::size_t>(choice.arch.kernel);
  auto zeros = [](Shape s) { return Var<float>(Tensor<float>(std::move(s)), true); };
  g.expand_weight = zeros({hidden, geom.in_channels, 1, 1});
  g.bn1_gamma = zeros({hidden});
  g.bn1_beta = zeros({hidden});
  g.depthwise = zeros({hidden, 1, k, k});
  g.bn2_gamma = zeros({hidden});
  g.bn2_beta = zeros({hidden});
  g.project_weight = zeros({geom.out_channels, hidden, 1, 1});
  g.bn3_gamma = zeros({geom.out_channels});
  g.bn3_beta = zeros({geom.out_channels});
  return g;
}

}  // namespace

SubNet extract_subnet(const SuperNet& net, const ModelSpec& spec) {
  const BackboneConfig& cfg = net.config();
  spec.validate(cfg);
  SubNet sub;
  sub.cfg_ = cfg;
  sub.spec_ = spec;
  sub.stem_weight = net.stem_weight.detached_copy(true);
  sub.stem_gamma = net.stem_gamma.detached_copy(true);
  sub.stem_beta = net.stem_beta.detached_copy(true);
  sub.head_weight = net.head_weight.detached_copy(true);
  sub.head_bias = net.head_bias.detached_copy(true);

  for (std::size_t i = 0; i < net.groups().size(); ++i) {
    const auto& src = net.groups()[i];
    const LayerChoice& choice = spec.layers[i];
    if (choice.arch.skip()) continue;
    SubNetGroup g = allocate_group(src.geom, choice);
    const std::size_t hidden = src.geom.hidden(choice.arch.expand);
    const std::size_t full_hidden = src.depthwise.channels();
    const std::size_t in = src.geom.in_channels;
    const std::size_t k = static_cast<std::size_t>(choice.arch.kernel);
    const std::size_t tap_offset = (kMaxKernel - k) / 2;

    auto& we = g.expand_weight.value_mut();
    for (std::size_t i2 = 0; i2 < hidden * in; ++i2) we[i2] = src.expand_weight.value()[i2];
    g.bn1_gamma = leading(src.bn1_gamma, hidden);
    g.bn1_beta = leading(src.bn1_beta, hidden);

    auto& wd = g.depthwise.value_mut();
    const auto& sd = src.depthwise.weights.value();
    for (std::size_t c = 0; c < hidden; ++c)
      for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) {
          wd[(c * k + y) * k + x] =
              sd[c * kKernelTaps + (y + tap_offset) * kMaxKernel + (x + tap_offset)];
        }
    g.bn2_gamma = leading(src.bn2_gamma, hidden);
    g.bn2_beta = leading(src.bn2_beta, hidden);

    auto& wp = g.project_weight.value_mut();
    const auto& sp = src.project_weight.value();
    for (std::size_t o = 0; o < src.geom.out_channels; ++o)
      for (std::size_t c = 0; c < hidden; ++c) wp[o * hidden + c] = sp[o * full_hidden + c];
    g.bn3_gamma = src.bn3_gamma.detached_copy(true);
    g.bn3_beta = src.bn3_beta.detached_copy(true);
    sub.groups_.push_back(std::move(g));
  }
  return sub;
}

Var<float> SubNet::forward(const Tensor<float>& batch, bool quantize) const {
  check_batch(batch, cfg_);
  Var<float> x = ops::relu6(ops::batchnorm_batchstats(
      ops::conv2d(Var<float>(batch), stem_weight, 1, 1, 1), stem_gamma, stem_beta));
  for (const auto& g : groups_) {
    const int bits = g.choice.bits;
    const int k = g.choice.arch.kernel;
    const int hidden = static_cast<int>(g.depthwise.shape()[0]);
    Var<float> h = ops::relu6(ops::batchnorm_batchstats(
        ops::conv2d(x, fixed_quant(g.expand_weight, bits, quantize), 1, 0, 1), g.bn1_gamma,
        g.bn1_beta));
    h = ops::relu6(ops::batchnorm_batchstats(
        ops::conv2d(h, fixed_quant(g.depthwise, bits, quantize), static_cast<int>(g.geom.stride),
                    k / 2, hidden),
        g.bn2_gamma, g.bn2_beta));
    Var<float> y = ops::batchnorm_batchstats(
        ops::conv2d(h, fixed_quant(g.project_weight, bits, quantize), 1, 0, 1), g.bn3_gamma,
        g.bn3_beta);
    x = g.geom.residual ? ops::add(x, y) : y;
  }
  return ops::dense(ops::global_avg_pool(x), head_weight, head_bias);
}

std::vector<NamedParam> SubNet::parameters() const {
  std::vector<NamedParam> out{{"stem.weight", stem_weight, true},
                              {"stem.bn.gamma", stem_gamma, false},
                              {"stem.bn.beta", stem_beta, false}};
  for (const auto& g : groups_) {
    const std::string p = layer_prefix(g.geom.index);
    out.push_back({p + "expand", g.expand_weight, true});
    out.push_back({p + "bn1.gamma", g.bn1_gamma, false});
    out.push_back({p + "bn1.beta", g.bn1_beta, false});
    out.push_back({p + "depthwise", g.depthwise, true});
    out.push_back({p + "bn2.gamma", g.bn2_gamma, false});
    out.push_back({p + "bn2.beta", g.bn2_beta, false});
    out.push_back({p + "project", g.project_weight, true});
    out.push_back({p + "bn3.gamma", g.bn3_gamma, false});
    out.push_back({p + "bn3.beta", g.bn3_beta, false});
  }
  out.push_back({"head.weight", head_weight, true});
  out.push_back({"head.bias", head_bias, false});
  return out;
}

std::size_t SubNet::parameter_count() const { return total_size(parameters()); }

SubNet subnet_from_parameters(const BackboneConfig& cfg, const ModelSpec& spec,
                              const std::vector<NamedParam>& params) {
  cfg.validate();
  spec.validate(cfg);
  SubNet sub;
  sub.cfg_ = cfg;
  sub.spec_ = spec;
  auto zeros = [](Shape s) { return Var<float>(Tensor<float>(std::move(s)), true); };
  sub.stem_weight = zeros({cfg.stem_channels, cfg.input_channels, 3, 3});
  sub.stem_gamma = zeros({cfg.stem_channels});
  sub.stem_beta = zeros({cfg.stem_channels});
  sub.head_weight = zeros({cfg.block_channels.back(), cfg.num_classes});
  sub.head_bias = zeros({cfg.num_classes});
  const auto geoms = cfg.layers();
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    if (!spec.layers[i].arch.skip()) sub.groups_.push_back(allocate_group(geoms[i], spec.layers[i]));
  }
  std::map<std::string, const NamedParam*> by_name;
  for (const auto& p : params) by_name[p.name] = &p;
  for (auto& slot : sub.parameters()) {
    auto it = by_name.find(slot.name);
    if (it == by_name.end()) throw DataError("subnet archive is missing tensor '" + slot.name + "'");
    const auto& src = it->second->var.value();
    if (src.size() != slot.var.value().size()) {
      throw DataError("subnet tensor '" + slot.name + "' has " + std::to_string(src.size()) +
                      " values, expected " + std::to_string(slot.var.value().size()));
    }
    auto dst = slot.var.value_mut().data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return sub;
}

}  // namespace jqas
