#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "jqas/dataset.hpp"
#include "jqas/supernet.hpp"

namespace jqas {

struct RewardConfig {
  double mu = 0.5;
  double nu = 0.5;
  double lat_threshold = 20.0;  // ms
  double acc_threshold = 0.9;   // fraction
  double over_slope = 0.5;
  std::optional<double> latency_normalizer;  // defaults to lat_threshold

  double normalizer() const { return latency_normalizer.value_or(lat_threshold); }
  void validate() const;
};

/// Leaky form: lat - thr below the threshold, over_slope * (lat - thr) at or above it.
double soften_latency(double latency_ms, const RewardConfig& cfg);
/// acc - thr below the threshold, over_slope * (acc - thr) at or above it.
double soften_accuracy(double accuracy, const RewardConfig& cfg);
/// -mu * soften_latency / normalizer + nu * soften_accuracy.
double reward(double accuracy, double latency_ms, const RewardConfig& cfg);

struct LatencyKey {
  std::size_t layer = 0;
  int kernel = 3;
  int expand = 3;
  int bits = 16;

  friend auto operator<=>(const LatencyKey&, const LatencyKey&) = default;
};

std::string to_string(const LatencyKey& key);

class LatencyTable {
 public:
  std::map<LatencyKey, double> entries;
  std::optional<double> overhead_ms;

  /// Parses `layer,kernel,expand,bits,latency_ms` rows plus `overhead,,,,<ms>`.
  static LatencyTable parse_csv(std::string_view text);
  static LatencyTable load(const std::filesystem::path& path, const BackboneConfig& cfg);

  /// Every problem with the table for this backbone; empty when valid.
  std::vector<std::string> problems(const BackboneConfig& cfg) const;
  /// Throws DataError listing every problem.
  void validate(const BackboneConfig& cfg) const;

  double overhead() const { return overhead_ms.value_or(0.0); }
  /// Latency of one realised layer; 0 for a skipped layer.
  double layer_latency(std::size_t layer, const LayerChoice& choice) const;
  std::string to_csv() const;
};

double estimate_latency(const ModelSpec& spec, const LatencyTable& table);

/// Latency expected under independent per-layer decision probabilities.
double expected_latency(const std::vector<DecisionProbabilities>& probs,
                        const std::vector<LayerGeometry>& layers, const LatencyTable& table);

std::size_t depthwise_macs(std::size_t channels, int kernel, std::size_t out_h, std::size_t out_w);
/// Expand, depthwise and projection MACs of one group at (kernel, expand).
std::size_t group_macs(const LayerGeometry& geom, int kernel, int expand);

struct BitFactors {
  double b4 = 0.55;
  double b8 = 0.7;
  double b16 = 1.0;
  double at(int bits) const;
};

LatencyTable synth_latency_table(const BackboneConfig& cfg, double coeff_ms_per_mmac,
                                 const BitFactors& factors = {}, double overhead_ms = 0.0);

struct EvaluatedModel {
  ModelSpec spec;
  double accuracy = 0.0;
  double latency_ms = 0.0;
  double reward = 0.0;
};

/// a dominates b: no worse in both objectives and strictly better in one.
bool dominates(const EvaluatedModel& a, const EvaluatedModel& b);
/// Per-input flag: true when no other model dominates it.
std::vector<bool> non_dominated_flags(const std::vector<EvaluatedModel>& models);
/// Non-dominated subset ordered by latency ascending (input order on ties).
std::vector<EvaluatedModel> pareto_front(const std::vector<EvaluatedModel>& models);

std::size_t count_correct(const Tensor<float>& logits, const std::vector<int>& labels);

/// Top-1 accuracy of the hard-mode supernet realising `spec`.
double evaluate_accuracy(const SuperNet& net, const ModelSpec& spec,
                         const std::vector<Batch>& batches);
double evaluate_accuracy(const SubNet& net, const std::vector<Batch>& batches);

}  // namespace jqas
