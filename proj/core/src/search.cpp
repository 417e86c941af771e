#include "jqas/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "jqas/error.hpp"
#include "jqas/ops.hpp"

namespace jqas {

using nlohmann::json;

void SearchConfig::validate() const {
  if (samples_per_update < 1) throw ConfigError("search.samples_per_update must be >= 1");
  if (warmup_epochs > max_epochs) {
    throw ConfigError("search.warmup_epochs (" + std::to_string(warmup_epochs) +
                      ") exceeds search.max_epochs (" + std::to_string(max_epochs) + ")");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("search.dropout_rate must lie in [0,1)");
  }
  if (!(threshold_lr > 0.0)) throw ConfigError("search.threshold_lr must be > 0");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) {
    throw ConfigError("search.baseline_decay must lie in [0,1)");
  }
  if (batch_size < 2) throw ConfigError("search.batch_size must be >= 2");
  if (val_batches_per_sample < 1) throw ConfigError("search.val_batches_per_sample must be >= 1");
  if (recent_models < 1) throw ConfigError("search.recent_models must be >= 1");
  sgd.validate();
}

json to_json(const SearchConfig& c) {
  json j = {{"max_epochs", c.max_epochs},
            {"samples_per_update", c.samples_per_update},
            {"warmup_epochs", c.warmup_epochs},
            {"dropout_rate", c.dropout_rate},
            {"threshold_lr", c.threshold_lr},
            {"baseline_decay", c.baseline_decay},
            {"use_baseline", c.use_baseline},
            {"batch_size", c.batch_size},
            {"rng_seed", c.rng_seed},
            {"val_batches_per_sample", c.val_batches_per_sample},
            {"inherit_weights", c.inherit_weights},
            {"quantize", c.quantize},
            {"superkernel_weight_decay", c.superkernel_weight_decay},
            {"recent_models", c.recent_models},
            {"learning_rate", c.sgd.learning_rate},
            {"momentum", c.sgd.momentum},
            {"weight_decay", c.sgd.weight_decay}};
  j["retrain_epochs"] = c.retrain_epochs ? json(*c.retrain_epochs) : json(nullptr);
  return j;
}

namespace {

template <typename U>
void read(const json& j, const char* key, U& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<U>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string("unknown config key ") + section + "." + key);
    }
  }
}

}  // namespace

SearchConfig search_config_from_json(const json& j, SearchConfig c) {
  reject_unknown(j,
                 {"max_epochs", "samples_per_update", "warmup_epochs", "dropout_rate",
                  "threshold_lr", "baseline_decay", "use_baseline", "batch_size", "rng_seed",
                  "val_batches_per_sample", "retrain_epochs", "inherit_weights", "quantize",
                  "superkernel_weight_decay", "recent_models", "learning_rate", "momentum",
                  "weight_decay"},
                 "search");
  read(j, "max_epochs", c.max_epochs, "search");
  read(j, "samples_per_update", c.samples_per_update, "search");
  read(j, "warmup_epochs", c.warmup_epochs, "search");
  read(j, "dropout_rate", c.dropout_rate, "search");
  read(j, "threshold_lr", c.threshold_lr, "search");
  read(j, "baseline_decay", c.baseline_decay, "search");
  read(j, "use_baseline", c.use_baseline, "search");
  read(j, "batch_size", c.batch_size, "search");
  read(j, "rng_seed", c.rng_seed, "search");
  read(j, "val_batches_per_sample", c.val_batches_per_sample, "search");
  read(j, "inherit_weights", c.inherit_weights, "search");
  read(j, "quantize", c.quantize, "search");
  read(j, "superkernel_weight_decay", c.superkernel_weight_decay, "search");
  read(j, "recent_models", c.recent_models, "search");
  read(j, "learning_rate", c.sgd.learning_rate, "search");
  read(j, "momentum", c.sgd.momentum, "search");
  read(j, "weight_decay", c.sgd.weight_decay, "search");
  if (j.contains("retrain_epochs")) {
    if (j.at("retrain_epochs").is_null()) {
      c.retrain_epochs.reset();
    } else {
      std::size_t n = 0;
      read(j, "retrain_epochs", n, "search");
      c.retrain_epochs = n;
    }
  }
  return c;
}

json to_json(const RewardConfig& c) {
  json j = {{"mu", c.mu},
            {"nu", c.nu},
            {"lat_threshold", c.lat_threshold},
            {"acc_threshold", c.acc_threshold},
            {"over_slope", c.over_slope}};
  j["latency_normalizer"] = c.latency_normalizer ? json(*c.latency_normalizer) : json(nullptr);
  return j;
}

RewardConfig reward_config_from_json(const json& j, RewardConfig c) {
  reject_unknown(j,
                 {"mu", "nu", "lat_threshold", "acc_threshold", "over_slope",
                  "latency_normalizer"},
                 "reward");
  read(j, "mu", c.mu, "reward");
  read(j, "nu", c.nu, "reward");
  read(j, "lat_threshold", c.lat_threshold, "reward");
  read(j, "acc_threshold", c.acc_threshold, "reward");
  read(j, "over_slope", c.over_slope, "reward");
  if (j.contains("latency_normalizer")) {
    if (j.at("latency_normalizer").is_null()) {
      c.latency_normalizer.reset();
    } else {
      double v = 0.0;
      read(j, "latency_normalizer", v, "reward");
      c.latency_normalizer = v;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// State construction

namespace {

bool is_superkernel(const std::string& name) {
  const std::string suffix = ".depthwise";
  return name.size() > suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::unique_ptr<Sgd<float>> make_optimizer(const SuperNet& net, const SearchConfig& cfg) {
  auto opt = std::make_unique<Sgd<float>>(cfg.sgd);
  for (const auto& p : net.parameters()) {
    const bool decay = p.decay && (cfg.superkernel_weight_decay || !is_superkernel(p.name));
    opt->add_param(p.name, p.var, decay);
  }
  return opt;
}

void copy_into(Tensor<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                    ", expected " + shape_str(dst.shape()));
  }
  dst = src;
}

std::map<std::string, const Tensor<float>*> index_arrays(const std::vector<NamedArray>& arrays) {
  std::map<std::string, const Tensor<float>*> out;
  for (const auto& a : arrays) out[a.name] = &a.data;
  return out;
}

// Loads checkpoint weights into `net`; head tensors are skipped when
// `keep_head` is false.
void load_weights(SuperNet& net, const Checkpoint& ckpt, bool keep_head) {
  const auto arrays = index_arrays(ckpt.weights);
  for (auto& p : net.parameters()) {
    const bool head = p.name.rfind("head.", 0) == 0;
    if (head && !keep_head) continue;
    const auto it = arrays.find(p.name);
    if (it == arrays.end()) throw DataError("checkpoint is missing tensor '" + p.name + "'");
    copy_into(p.var.value_mut(), *it->second, p.name);
  }
  net.set_thresholds(ckpt.thresholds);
}

}  // namespace

SearchState initialize(const SearchConfig& cfg, const RewardConfig& reward,
                       const BackboneConfig& backbone, const Checkpoint* warm) {
  cfg.validate();
  reward.validate();
  backbone.validate();
  SearchState s;
  s.cfg = cfg;
  s.reward = reward;
  s.rng = Rng(cfg.rng_seed);
  s.net = SuperNet::build(backbone, s.rng);
  if (warm) {
    const auto diff = backbone_diff(warm->backbone, backbone, true);
    if (!diff.empty()) {
      std::string msg = "checkpoint backbone does not match the requested backbone:";
      for (const auto& d : diff) msg += "\n  " + d;
      throw ConfigError(msg);
    }
    load_weights(s.net, *warm, warm->backbone.num_classes == backbone.num_classes);
  }
  s.optimizer = make_optimizer(s.net, cfg);
  return s;
}

SearchState resume(const Checkpoint& ckpt, const SearchConfig& cfg, const RewardConfig& reward) {
  cfg.validate();
  reward.validate();
  SearchState s;
  s.cfg = cfg;
  s.reward = reward;
  Rng scratch(cfg.rng_seed);
  s.net = SuperNet::build(ckpt.backbone, scratch);
  load_weights(s.net, ckpt, true);
  s.optimizer = make_optimizer(s.net, cfg);
  const auto velocity = index_arrays(ckpt.velocity);
  for (auto& slot : s.optimizer->slots()) {
    const auto it = velocity.find(slot.name);
    if (it == velocity.end()) throw DataError("checkpoint has no velocity for '" + slot.name + "'");
    copy_into(slot.velocity, *it->second, "velocity." + slot.name);
  }
  s.rng = rng_from_state(ckpt.rng_state);
  s.epoch = ckpt.epoch;
  s.baseline = ckpt.baseline;
  s.baseline_set = ckpt.baseline_set;
  s.history = ckpt.history;
  s.recent = ckpt.recent;
  return s;
}

Checkpoint make_checkpoint(const SearchState& s) {
  Checkpoint c;
  c.backbone = s.net.config();
  c.seed = s.cfg.rng_seed;
  c.epoch = s.epoch;
  c.baseline = s.baseline;
  c.baseline_set = s.baseline_set;
  c.rng_state = rng_state(s.rng);
  c.history = s.history;
  c.recent = s.recent;
  for (const auto& p : s.net.parameters()) c.weights.push_back({p.name, p.var.value()});
  c.thresholds = s.net.thresholds();
  for (const auto& slot : s.optimizer->slots()) c.velocity.push_back({slot.name, slot.velocity});
  return c;
}

// ---------------------------------------------------------------------------
// Steps

double weight_step(SearchState& s, const Batch& batch) {
  std::vector<SubsetDropout> dropout;
  const bool warm = s.epoch < s.cfg.warmup_epochs && s.cfg.dropout_rate > 0.0;
  if (warm) {
    for (std::size_t i = 0; i < s.net.num_layers(); ++i)
      dropout.push_back(subset_dropout(s.cfg.dropout_rate, s.rng));
  }
  const auto plan = s.net.soft_plan(warm ? &dropout : nullptr, s.cfg.quantize);
  const Var<float> logits = s.net.forward(batch.images, plan);
  const Var<float> loss = ops::softmax_cross_entropy(logits, std::span<const int>(batch.labels));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    throw NumericError("non-finite training loss " + std::to_string(value) + " at epoch " +
                       std::to_string(s.epoch));
  }
  s.optimizer->zero_grad();
  backward(loss);
  s.optimizer->step();
  return value;
}

std::vector<double> reinforce_estimate(const std::vector<double>& rewards,
                                       const std::vector<std::vector<double>>& grad_log_p,
                                       double& baseline, bool& baseline_set, double decay,
                                       bool use_baseline) {
  if (rewards.empty() || rewards.size() != grad_log_p.size()) {
    throw std::invalid_argument("reinforce_estimate: need one gradient per reward");
  }
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();
  if (use_baseline && !baseline_set) {
    baseline = mean;
    baseline_set = true;
  }
  const double b = use_baseline ? baseline : 0.0;
  std::vector<double> g(grad_log_p.front().size(), 0.0);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (grad_log_p[i].size() != g.size()) {
      throw std::invalid_argument("reinforce_estimate: gradient length mismatch");
    }
    const double adv = rewards[i] - b;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += adv * grad_log_p[i][k];
  }
  for (double& v : g) v /= static_cast<double>(rewards.size());
  if (use_baseline) baseline = decay * baseline + (1.0 - decay) * mean;
  return g;
}

std::vector<DecisionProbabilities> current_probabilities(const SuperNet& net) {
  std::vector<DecisionProbabilities> out;
  for (const auto& a : net.decision_args()) out.push_back(DecisionProbabilities::from_args(a));
  return out;
}

ThresholdStepReport threshold_step(SearchState& s, const std::vector<Batch>& val,
                                   const LatencyTable& table) {
  if (val.empty()) throw DataError("validation set is empty");
  // One random subset of validation batches shared by every sample.
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(s.cfg.val_batches_per_sample, val.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(s.rng() % (val.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<Batch> subset;
  for (std::size_t i = 0; i < take; ++i) subset.push_back(val[order[i]]);

  const auto args = s.net.decision_args();
  const auto& groups = s.net.groups();
  std::vector<DecisionProbabilities> probs;
  for (const auto& a : args) probs.push_back(DecisionProbabilities::from_args(a));

  ThresholdStepReport report;
  std::vector<double> rewards;
  std::vector<std::vector<double>> grads;
  for (std::size_t n = 0; n < s.cfg.samples_per_update; ++n) {
    ModelSpec spec;
    for (std::size_t l = 0; l < groups.size(); ++l) {
      spec.layers.push_back(sample_choice(probs[l], groups[l].depthwise.skip_allowed, s.rng));
    }
    EvaluatedModel m;
    m.spec = spec;
    m.accuracy = evaluate_accuracy(s.net, spec, subset);
    m.latency_ms = estimate_latency(spec, table);
    m.reward = reward(m.accuracy, m.latency_ms, s.reward);
    std::vector<double> g;
    g.reserve(groups.size() * 5);
    for (std::size_t l = 0; l < groups.size(); ++l) {
      const auto lg = log_probability_gradient(args[l], spec.layers[l],
                                               groups[l].depthwise.skip_allowed);
      g.insert(g.end(), {lg.kernel5, lg.keep, lg.expand6, lg.t_9_16, lg.t_5_8});
    }
    rewards.push_back(m.reward);
    grads.push_back(std::move(g));
    report.samples.push_back(std::move(m));
  }
  report.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();
  report.baseline_used = s.cfg.use_baseline && s.baseline_set ? s.baseline : report.mean_reward;
  const auto g = reinforce_estimate(rewards, grads, s.baseline, s.baseline_set,
                                    s.cfg.baseline_decay, s.cfg.use_baseline);
  auto t = s.net.thresholds();
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k] = static_cast<float>(t[k] + s.cfg.threshold_lr * g[k]);
  }
  s.net.set_thresholds(t);

  for (const auto& m : report.samples) s.recent.push_back(m);
  if (s.recent.size() > s.cfg.recent_models) {
    s.recent.erase(s.recent.begin(), s.recent.end() - static_cast<std::ptrdiff_t>(s.cfg.recent_models));
  }
  return report;
}

EpochRecord run_epoch(SearchState& s, const Dataset& train, const std::vector<Batch>& val,
                      const LatencyTable& table) {
  const auto batches = make_batches(train, s.cfg.batch_size, &s.rng);
  if (batches.empty()) throw DataError("training set yields no batches");
  double loss = 0.0;
  for (const auto& b : batches) loss += weight_step(s, b);
  const auto report = threshold_step(s, val, table);
  ++s.epoch;
  EpochRecord r;
  r.epoch = s.epoch;
  r.train_loss = loss / static_cast<double>(batches.size());
  r.val_accuracy = evaluate_accuracy(s.net, s.net.determinize(), val);
  r.expected_latency_ms =
      expected_latency(current_probabilities(s.net), s.net.config().layers(), table);
  r.mean_reward = report.mean_reward;
  s.history.push_back(r);
  return r;
}

// ---------------------------------------------------------------------------
// Finalisation

json SearchResult::to_json() const {
  json hist = json::array(), rec = json::array(), front = json::array();
  for (const auto& r : history) hist.push_back(jqas::to_json(r));
  for (const auto& m : recent) rec.push_back(jqas::to_json(m));
  return {{"kind", "search_result"},
          {"version", kCheckpointVersion},
          {"backbone", jqas::to_json(backbone)},
          {"spec", jqas::to_json(spec)},
          {"history", hist},
          {"recent_models", rec},
          {"final_accuracy", final_accuracy},
          {"final_latency_ms", final_latency_ms},
          {"model_size_bytes", model_size_bytes},
          {"retrain_epochs", retrain_epochs},
          {"retrain_loss", retrain_loss}};
}

SearchResult search_result_from_json(const json& j) {
  try {
    if (!j.is_object() || j.value("kind", "") != "search_result") {
      throw DataError("not a search result document");
    }
    SearchResult r;
    r.backbone = backbone_from_json(j.at("backbone"));
    r.spec = spec_from_json(j.at("spec"));
    for (const auto& h : j.at("history")) r.history.push_back(epoch_from_json(h));
    for (const auto& m : j.at("recent_models")) r.recent.push_back(evaluated_from_json(m));
    r.final_accuracy = j.at("final_accuracy").get<double>();
    r.final_latency_ms = j.at("final_latency_ms").get<double>();
    r.model_size_bytes = j.at("model_size_bytes").get<double>();
    r.retrain_epochs = j.at("retrain_epochs").get<std::size_t>();
    r.retrain_loss = j.at("retrain_loss").get<std::vector<double>>();
    r.spec.validate(r.backbone);
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt search result: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt search result: ") + e.what());
  }
}

SearchResult finalize(SearchState& s, const Dataset& train, const std::vector<Batch>& val,
                      const LatencyTable& table) {
  SearchResult r;
  r.backbone = s.net.config();
  r.spec = s.net.determinize();
  r.history = s.history;
  r.recent = s.recent;
  r.checkpoint = make_checkpoint(s);
  if (s.cfg.inherit_weights) {
    r.subnet = extract_subnet(s.net, r.spec);
  } else {
    Rng fresh(s.cfg.rng_seed ^ 0x5eed5eedULL);
    r.subnet = extract_subnet(SuperNet::build(r.backbone, fresh), r.spec);
  }

  Sgd<float> opt(s.cfg.sgd);
  for (const auto& p : r.subnet.parameters()) opt.add_param(p.name, p.var, p.decay);
  r.retrain_epochs = s.cfg.retrain_epoch_count();
  for (std::size_t e = 0; e < r.retrain_epochs; ++e) {
    double total = 0.0;
    const auto batches = make_batches(train, s.cfg.batch_size, &s.rng);
    for (const auto& b : batches) {
      const Var<float> loss = ops::softmax_cross_entropy(
          r.subnet.forward(b.images, s.cfg.quantize), std::span<const int>(b.labels));
      if (!std::isfinite(loss.value()[0])) {
        throw NumericError("non-finite retraining loss at retrain epoch " + std::to_string(e));
      }
      total += loss.value()[0];
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    r.retrain_loss.push_back(batches.empty() ? 0.0 : total / batches.size());
  }
  r.final_accuracy = evaluate_accuracy(r.subnet, val);
  r.final_latency_ms = estimate_latency(r.spec, table);
  r.model_size_bytes = model_size_bytes(r.spec, r.backbone).total();
  return r;
}

SearchResult run_search(SearchState& s, const Dataset& train, const Dataset& val,
                        const LatencyTable& table) {
  table.validate(s.net.config());
  const auto val_batches = make_batches(val, s.cfg.batch_size);
  while (s.epoch < s.cfg.max_epochs) run_epoch(s, train, val_batches, table);
  return finalize(s, train, val_batches, table);
}

SearchResult run_search(const SearchConfig& cfg, const RewardConfig& reward,
                        const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                        const LatencyTable& table, const Checkpoint* warm) {
  SearchState s = initialize(cfg, reward, backbone, warm);
  return run_search(s, train, val, table);
}

// ---------------------------------------------------------------------------
// Lifelong evolution

std::vector<LayerDrift> weight_drift(const Checkpoint& before, const SuperNet& after) {
  const auto arrays = index_arrays(before.weights);
  std::vector<LayerDrift> out;
  for (const auto& p : after.parameters()) {
    if (!p.decay || p.name.rfind("head.", 0) == 0) continue;
    const auto it = arrays.find(p.name);
    if (it == arrays.end() || it->second->shape() != p.var.shape()) continue;
    const auto& a = *it->second;
    const auto& b = p.var.value();
    double change = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      change += std::abs(static_cast<double>(b[i]) - a[i]);
      sq += static_cast<double>(a[i]) * a[i];
    }
    out.push_back({p.name, change / a.size(), std::sqrt(sq / a.size())});
  }
  return out;
}

json to_json(const std::vector<LayerDrift>& drift) {
  json arr = json::array();
  for (const auto& d : drift) {
    arr.push_back({{"tensor", d.name},
                   {"mean_abs_change", d.mean_abs_change},
                   {"rms_before", d.rms_before},
                   {"ratio", d.ratio()}});
  }
  return arr;
}

std::optional<std::size_t> epochs_to_target(const std::vector<EpochRecord>& history,
                                            double target) {
  for (const auto& r : history)
    if (r.val_accuracy >= target) return r.epoch;
  return std::nullopt;
}

EvolveResult evolve(const Checkpoint& ckpt, const SearchConfig& cfg, const RewardConfig& reward,
                    const BackboneConfig& backbone, const Dataset& train, const Dataset& val,
                    const LatencyTable& table) {
  SearchState s = initialize(cfg, reward, backbone, &ckpt);
  table.validate(s.net.config());
  const auto val_batches = make_batches(val, s.cfg.batch_size);
  while (s.epoch < s.cfg.max_epochs) run_epoch(s, train, val_batches, table);
  EvolveResult out;
  out.drift = weight_drift(ckpt, s.net);
  out.result = finalize(s, train, val_batches, table);
  return out;
}

}  // namespace jqas
