#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jqas/checkpoint.hpp"
#include "jqas/dataset.hpp"
#include "jqas/objective.hpp"
#include "jqas/optim.hpp"
#include "jqas/supernet.hpp"

namespace jqas {

struct SearchConfig {
  std::size_t max_epochs = 100;
  std::size_t samples_per_update = 8;
  std::size_t warmup_epochs = 20;
  double dropout_rate = 0.2;
  double threshold_lr = 0.05;
  double baseline_decay = 0.9;
  bool use_baseline = true;
  std::size_t batch_size = 256;
  std::uint64_t rng_seed = 0;
  std::size_t val_batches_per_sample = 8;
  // Unset: three times max_epochs.
  std::optional<std::size_t> retrain_epochs;
  bool inherit_weights = true;
  bool quantize = true;
  // Weight decay on the depthwise super-kernels shrinks the group-Lasso norms
  // that the thresholds are compared against.
  bool superkernel_weight_decay = true;
  std::size_t recent_models = 10;
  SgdConfig sgd;

  std::size_t retrain_epoch_count() const { return retrain_epochs.value_or(3 * max_epochs); }
  void validate() const;
};

nlohmann::json to_json(const SearchConfig& cfg);
/// Reads the fields present in `j` on top of `base`.
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});
nlohmann::json to_json(const RewardConfig& cfg);
RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig base = {});

/// Mutable search state. Holds shared parameter handles, so it is move-only.
struct SearchState {
  SearchConfig cfg;
  RewardConfig reward;
  SuperNet net;
  std::unique_ptr<Sgd<float>> optimizer;
  Rng rng;
  std::size_t epoch = 0;
  double baseline = 0.0;
  bool baseline_set = false;
  std::vector<EpochRecord> history;
  std::vector<EvaluatedModel> recent;

  SearchState() = default;
  SearchState(SearchState&&) = default;
  SearchState& operator=(SearchState&&) = default;
  SearchState(const SearchState&) = delete;
  SearchState& operator=(const SearchState&) = delete;
};

/// Fresh state, or a warm start from `warm`: weights and thresholds are
/// copied, the head is reinitialised when the class count changes, and the
/// epoch counter, optimizer velocity and baseline start over.
SearchState initialize(const SearchConfig& cfg, const RewardConfig& reward,
                       const BackboneConfig& backbone, const Checkpoint* warm = nullptr);

/// Continues exactly where `ckpt` stopped (same backbone required).
SearchState resume(const Checkpoint& ckpt, const SearchConfig& cfg, const RewardConfig& reward);

Checkpoint make_checkpoint(const SearchState& state);

/// One soft-mode SGD step on the weights; returns the batch loss.
double weight_step(SearchState& state, const Batch& batch);

struct ThresholdStepReport {
  std::vector<EvaluatedModel> samples;
  double mean_reward = 0.0;
  double baseline_used = 0.0;
};

/// Samples N specs, scores them on a random subset of `val_batches` and
/// moves the thresholds along the REINFORCE estimate.
ThresholdStepReport threshold_step(SearchState& state, const std::vector<Batch>& val_batches,
                                   const LatencyTable& table);

/// Generic score-function step shared by threshold_step and the tests:
/// returns (1/N) sum (R_i - b) g_i and updates the EMA baseline.
std::vector<double> reinforce_estimate(const std::vector<double>& rewards,
                                       const std::vector<std::vector<double>>& grad_log_p,
                                       double& baseline, bool& baseline_set, double decay,
                                       bool use_baseline);

std::vector<DecisionProbabilities> current_probabilities(const SuperNet& net);

/// Training pass, threshold update and epoch bookkeeping.
EpochRecord run_epoch(SearchState& state, const Dataset& train, const std::vector<Batch>& val,
                      const LatencyTable& table);

struct SearchResult {
  BackboneConfig backbone;
  ModelSpec spec;
  std::vector<EpochRecord> history;
  std::vector<EvaluatedModel> recent;
  double final_accuracy = 0.0;
  double final_latency_ms = 0.0;
  double model_size_bytes = 0.0;
  std::size_t retrain_epochs = 0;
  std::vector<double> retrain_loss;
  SubNet subnet;
  Checkpoint checkpoint;

  nlohmann::json to_json() const;
};

SearchResult search_result_from_json(const nlohmann::json& j);

/// Determinize, extract, retrain and package the result.
SearchResult finalize(SearchState& state, const Dataset& train, const std::vector<Batch>& val,
                      const LatencyTable& table);

/// Runs epochs until max_epochs, then finalizes.
SearchResult run_search(SearchState& state, const Dataset& train, const Dataset& val,
                        const LatencyTable& table);

SearchResult run_search(const SearchConfig& cfg, const RewardConfig& reward,
                        const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                        const LatencyTable& table, const Checkpoint* warm = nullptr);

struct LayerDrift {
  std::string name;
  double mean_abs_change = 0.0;
  double rms_before = 0.0;
  double ratio() const { return rms_before > 0 ? mean_abs_change / rms_before : 0.0; }
};

/// Per-tensor weight drift between a checkpoint and the current supernet.
std::vector<LayerDrift> weight_drift(const Checkpoint& before, const SuperNet& after);
nlohmann::json to_json(const std::vector<LayerDrift>& drift);

/// First 1-based epoch whose val accuracy reaches `target`.
std::optional<std::size_t> epochs_to_target(const std::vector<EpochRecord>& history, double target);

struct EvolveResult {
  SearchResult result;
  std::vector<LayerDrift> drift;
};

/// Lifelong re-search warm-started from `ckpt` on new data.
EvolveResult evolve(const Checkpoint& ckpt, const SearchConfig& cfg, const RewardConfig& reward,
                    const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                    const LatencyTable& table);

}  // namespace jqas
