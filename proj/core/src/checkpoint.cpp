#include "jqas/checkpoint.hpp"

#include "jqas/error.hpp"

namespace jqas {

using nlohmann::json;

namespace {

// Manifest lookups report the missing field instead of a bare json error.
const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) {
    throw DataError(std::string("manifest field '") + name + "' is missing");
  }
  return j.at(name);
}

template <typename U>
U get(const json& j, const char* name) {
  try {
    return field(j, name).get<U>();
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field '") + name + "': " + e.what());
  }
}

}  // namespace

json to_json(const BackboneConfig& c) {
  return {{"num_blocks", c.num_blocks},
          {"groups_per_block", c.groups_per_block},
          {"stem_channels", c.stem_channels},
          {"block_channels", c.block_channels},
          {"block_strides", c.block_strides},
          {"num_classes", c.num_classes},
          {"input_resolution", c.input_resolution},
          {"input_channels", c.input_channels},
          {"skip_search", c.skip_search}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  c.num_blocks = get<std::size_t>(j, "num_blocks");
  c.groups_per_block = get<std::size_t>(j, "groups_per_block");
  c.stem_channels = get<std::size_t>(j, "stem_channels");
  c.block_channels = get<std::vector<std::size_t>>(j, "block_channels");
  c.block_strides = get<std::vector<std::size_t>>(j, "block_strides");
  c.num_classes = get<std::size_t>(j, "num_classes");
  c.input_resolution = get<std::size_t>(j, "input_resolution");
  c.input_channels = get<std::size_t>(j, "input_channels");
  c.skip_search = get<bool>(j, "skip_search");
  return c;
}

std::vector<std::string> backbone_diff(const BackboneConfig& a, const BackboneConfig& b,
                                       bool ignore_classes) {
  const json ja = to_json(a), jb = to_json(b);
  std::vector<std::string> out;
  for (const auto& [key, value] : ja.items()) {
    if (ignore_classes && key == "num_classes") continue;
    if (value != jb.at(key)) out.push_back(key + ": " + value.dump() + " vs " + jb.at(key).dump());
  }
  return out;
}

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& c : spec.layers) {
    layers.push_back({{"kernel", c.arch.kernel}, {"expand", c.arch.expand}, {"bits", c.bits}});
  }
  return layers;
}

ModelSpec spec_from_json(const json& j) {
  if (!j.is_array()) throw DataError("model spec must be a JSON array of layers");
  ModelSpec spec;
  for (const auto& l : j) {
    spec.layers.push_back({{get<int>(l, "kernel"), get<int>(l, "expand")}, get<int>(l, "bits")});
  }
  return spec;
}

json to_json(const EvaluatedModel& m) {
  return {{"spec", to_json(m.spec)},
          {"accuracy", m.accuracy},
          {"latency_ms", m.latency_ms},
          {"reward", m.reward}};
}

EvaluatedModel evaluated_from_json(const json& j) {
  return {spec_from_json(field(j, "spec")), get<double>(j, "accuracy"),
          get<double>(j, "latency_ms"), get<double>(j, "reward")};
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_accuracy", r.val_accuracy},
          {"expected_latency_ms", r.expected_latency_ms},
          {"mean_reward", r.mean_reward}};
}

EpochRecord epoch_from_json(const json& j) {
  return {get<std::size_t>(j, "epoch"), get<double>(j, "train_loss"),
          get<double>(j, "val_accuracy"), get<double>(j, "expected_latency_ms"),
          get<double>(j, "mean_reward")};
}

Archive to_archive(const Checkpoint& c) {
  Archive a;
  json history = json::array(), recent = json::array();
  for (const auto& r : c.history) history.push_back(to_json(r));
  for (const auto& m : c.recent) recent.push_back(to_json(m));
  a.manifest = {{"kind", "checkpoint"},
                {"version", kCheckpointVersion},
                {"backbone", to_json(c.backbone)},
                {"seed", c.seed},
                {"epoch", c.epoch},
                {"baseline", c.baseline},
                {"baseline_set", c.baseline_set},
                {"rng_state", c.rng_state},
                {"history", history},
                {"recent", recent}};
  for (const auto& w : c.weights) a.arrays.push_back({"weight." + w.name, w.data});
  a.arrays.push_back({"thresholds", Tensor<float>(Shape{c.thresholds.size()}, c.thresholds)});
  for (const auto& v : c.velocity) a.arrays.push_back({"velocity." + v.name, v.data});
  return a;
}

Checkpoint checkpoint_from_archive(const Archive& a) {
  const json& m = a.manifest;
  if (!m.is_object() || m.value("kind", "") != "checkpoint") {
    throw DataError("archive is not a search checkpoint");
  }
  if (get<int>(m, "version") != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + field(m, "version").dump());
  }
  Checkpoint c;
  c.backbone = backbone_from_json(field(m, "backbone"));
  c.seed = get<std::uint64_t>(m, "seed");
  c.epoch = get<std::size_t>(m, "epoch");
  c.baseline = get<double>(m, "baseline");
  c.baseline_set = get<bool>(m, "baseline_set");
  c.rng_state = get<std::string>(m, "rng_state");
  for (const auto& r : field(m, "history")) c.history.push_back(epoch_from_json(r));
  for (const auto& r : field(m, "recent")) c.recent.push_back(evaluated_from_json(r));
  bool have_thresholds = false;
  for (const auto& arr : a.arrays) {
    if (arr.name.rfind("weight.", 0) == 0) {
      c.weights.push_back({arr.name.substr(7), arr.data});
    } else if (arr.name.rfind("velocity.", 0) == 0) {
      c.velocity.push_back({arr.name.substr(9), arr.data});
    } else if (arr.name == "thresholds") {
      c.thresholds.assign(arr.data.data().begin(), arr.data.data().end());
      have_thresholds = true;
    } else {
      throw DataError("unexpected checkpoint array '" + arr.name + "'");
    }
  }
  if (!have_thresholds) throw DataError("checkpoint has no thresholds array");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_archive(path, to_archive(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  try {
    return checkpoint_from_archive(read_archive(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Archive subnet_to_archive(const SubNet& net) {
  Archive a;
  a.manifest = {{"kind", "subnet"},
                {"version", kCheckpointVersion},
                {"backbone", to_json(net.config())},
                {"spec", to_json(net.spec())}};
  for (const auto& p : net.parameters()) a.arrays.push_back({p.name, p.var.value()});
  return a;
}

SubNet subnet_from_archive(const Archive& a) {
  const json& m = a.manifest;
  if (!m.is_object() || m.value("kind", "") != "subnet") throw DataError("archive is not a subnet");
  const BackboneConfig cfg = backbone_from_json(field(m, "backbone"));
  const ModelSpec spec = spec_from_json(field(m, "spec"));
  std::vector<NamedParam> params;
  for (const auto& arr : a.arrays) params.push_back({arr.name, Var<float>(arr.data), true});
  try {
    return subnet_from_parameters(cfg, spec, params);
  } catch (const ConfigError& e) {
    throw DataError(std::string("subnet archive: ") + e.what());
  }
}

}  // namespace jqas
