#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jqas/dataset.hpp"
#include "jqas/objective.hpp"
#include "jqas/search.hpp"

namespace jqas::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct DatasetDescriptor {
  std::filesystem::path path;  // archive written by `ingest`
  std::vector<int> classes;    // empty: all classes
  std::size_t num_classes = 0;  // head size; 0: classes.size() or the archive's count
  std::uint64_t split_seed = 0;
};

struct LatencySource {
  std::optional<std::filesystem::path> table;
  double coeff_ms_per_mmac = 20.0;
  double overhead_ms = 0.0;
  BitFactors bit_factors;
};

struct RunConfig {
  BackboneConfig backbone;
  SearchConfig search;
  RewardConfig reward;
  DatasetDescriptor data;
  LatencySource latency;
  std::filesystem::path output;
};

/// Parses a config document; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// Resolves a relative output directory against $JQAS_OUTPUT_ROOT when set.
std::filesystem::path resolve_output(const std::filesystem::path& out);

/// Throws ConfigError if `dir` holds files and `force` is false.
void prepare_output(const std::filesystem::path& dir, bool force);

struct LoadedData {
  Dataset train;
  Dataset val;
};

/// Reads an ingested archive, applies the class subset and splits train in half.
LoadedData load_data(const DatasetDescriptor& d, const BackboneConfig& backbone);

void save_dataset(const std::filesystem::path& path, const Dataset& train, const Dataset& test,
                  const ChannelStats& stats, const std::string& source);

LatencyTable make_latency_table(const LatencySource& src, const BackboneConfig& backbone);

struct IngestArgs {
  std::string kind;  // cifar10 | synthetic
  std::filesystem::path source;
  std::filesystem::path out;
  std::size_t downsample = 1;
  SyntheticConfig synthetic;
  std::size_t test_samples = 0;  // synthetic held-out samples
  bool force = false;
};

struct SearchArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> mu;
  std::optional<double> nu;
  bool force = false;
};

struct EvolveArgs {
  SearchArgs search;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> reference;  // from-scratch result.json
  std::optional<double> target;
};

struct ReportArgs {
  std::filesystem::path result;
  std::filesystem::path out;
  bool force = false;
};

struct LatencyArgs {
  std::string action;  // make-synthetic | validate
  std::filesystem::path config;
  std::filesystem::path table;
  double coeff_ms_per_mmac = 20.0;
  double overhead_ms = 0.0;
  bool force = false;
};

int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err);
int cmd_search(const SearchArgs& args, std::ostream& out, std::ostream& err);
int cmd_evolve(const EvolveArgs& args, std::ostream& out, std::ostream& err);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);
int cmd_latency(const LatencyArgs& args, std::ostream& out, std::ostream& err);

}  // namespace jqas::cli
