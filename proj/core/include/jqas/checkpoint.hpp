#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "jqas/archive.hpp"
#include "jqas/objective.hpp"
#include "jqas/supernet.hpp"

namespace jqas {

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EvaluatedModel& m);
EvaluatedModel evaluated_from_json(const nlohmann::json& j);

/// Field names whose values differ, ignoring num_classes when `ignore_classes`.
std::vector<std::string> backbone_diff(const BackboneConfig& a, const BackboneConfig& b,
                                       bool ignore_classes);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double expected_latency_ms = 0.0;
  double mean_reward = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_from_json(const nlohmann::json& j);

/// Everything needed to resume or warm-start a search.
struct Checkpoint {
  BackboneConfig backbone;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double baseline = 0.0;
  bool baseline_set = false;
  std::string rng_state;
  std::vector<EpochRecord> history;
  std::vector<EvaluatedModel> recent;
  std::vector<NamedArray> weights;
  std::vector<float> thresholds;  // five per layer, layer-major
  std::vector<NamedArray> velocity;
};

inline constexpr int kCheckpointVersion = 1;

Archive to_archive(const Checkpoint& ckpt);
Checkpoint checkpoint_from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Subnet archive: manifest carries the backbone and spec, arrays the weights.
Archive subnet_to_archive(const SubNet& net);
SubNet subnet_from_archive(const Archive& archive);

}  // namespace jqas
