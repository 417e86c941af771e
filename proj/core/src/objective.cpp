#include "jqas/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "jqas/archive.hpp"
#include "jqas/error.hpp"

namespace jqas {

void RewardConfig::validate() const {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("reward.mu must be in [0,1]");
  if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("reward.nu must be in [0,1]");
  if (std::abs(mu + nu - 1.0) > 1e-9) {
    throw ConfigError("reward.mu + reward.nu must equal 1 (got " + std::to_string(mu + nu) + ")");
  }
  if (!(lat_threshold > 0.0)) throw ConfigError("reward.lat_threshold must be > 0");
  if (!(acc_threshold >= 0.0 && acc_threshold <= 1.0)) {
    throw ConfigError("reward.acc_threshold must be in [0,1]");
  }
  if (!(over_slope >= 0.0)) throw ConfigError("reward.over_slope must be >= 0");
  if (latency_normalizer && !(*latency_normalizer > 0.0)) {
    throw ConfigError("reward.latency_normalizer must be > 0");
  }
}

double soften_latency(double latency_ms, const RewardConfig& cfg) {
  const double d = latency_ms - cfg.lat_threshold;
  return latency_ms < cfg.lat_threshold ? d : cfg.over_slope * d;
}

double soften_accuracy(double accuracy, const RewardConfig& cfg) {
  const double d = accuracy - cfg.acc_threshold;
  return accuracy < cfg.acc_threshold ? d : cfg.over_slope * d;
}

double reward(double accuracy, double latency_ms, const RewardConfig& cfg) {
  return -cfg.mu * soften_latency(latency_ms, cfg) / cfg.normalizer() +
         cfg.nu * soften_accuracy(accuracy, cfg);
}

// ---------------------------------------------------------------------------
// Latency tables

std::string to_string(const LatencyKey& k) {
  return "(layer " + std::to_string(k.layer) + ", kernel " + std::to_string(k.kernel) +
         ", expand " + std::to_string(k.expand) + ", bits " + std::to_string(k.bits) + ")";
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& s, std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("latency table line " + std::to_string(line) + ": bad " + field + " '" + s +
                    "'");
  }
}

}  // namespace

LatencyTable LatencyTable::parse_csv(std::string_view text) {
  LatencyTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "layer,kernel,expand,bits,latency_ms") {
        throw DataError("latency table header must be 'layer,kernel,expand,bits,latency_ms'");
      }
      header = true;
      continue;
    }
    auto cells = split_csv(line);
    for (auto& c : cells) c = trim(c);
    if (cells.size() != 5) {
      throw DataError("latency table line " + std::to_string(line_no) + ": expected 5 fields, got " +
                      std::to_string(cells.size()));
    }
    const double ms = parse_number(cells[4], line_no, "latency_ms");
    if (!(ms >= 0.0) || !std::isfinite(ms)) {
      throw DataError("latency table line " + std::to_string(line_no) +
                      ": latency must be finite and >= 0");
    }
    if (cells[0] == "overhead") {
      if (table.overhead_ms) {
        throw DataError("latency table line " + std::to_string(line_no) + ": duplicate overhead row");
      }
      table.overhead_ms = ms;
      continue;
    }
    LatencyKey key;
    const double layer = parse_number(cells[0], line_no, "layer");
    if (layer < 0 || layer != std::floor(layer)) {
      throw DataError("latency table line " + std::to_string(line_no) + ": bad layer index");
    }
    key.layer = static_cast<std::size_t>(layer);
    key.kernel = static_cast<int>(parse_number(cells[1], line_no, "kernel"));
    key.expand = static_cast<int>(parse_number(cells[2], line_no, "expand"));
    key.bits = static_cast<int>(parse_number(cells[3], line_no, "bits"));
    if (key.kernel != 3 && key.kernel != 5) {
      throw DataError("latency table line " + std::to_string(line_no) + ": kernel must be 3 or 5");
    }
    if (key.expand != 0 && key.expand != 3 && key.expand != 6) {
      throw DataError("latency table line " + std::to_string(line_no) +
                      ": expand must be 0, 3 or 6");
    }
    if (!quant::is_search_bits(key.bits)) {
      throw DataError("latency table line " + std::to_string(line_no) +
                      ": bits must be 4, 8 or 16");
    }
    if (key.expand == 0 && ms != 0.0) {
      throw DataError("latency table line " + std::to_string(line_no) +
                      ": skip (expand 0) entries must be 0");
    }
    if (!table.entries.emplace(key, ms).second) {
      throw DataError("latency table line " + std::to_string(line_no) + ": duplicate key " +
                      to_string(key));
    }
  }
  if (!header) throw DataError("latency table is empty");
  return table;
}

LatencyTable LatencyTable::load(const std::filesystem::path& path, const BackboneConfig& cfg) {
  LatencyTable t = parse_csv(read_file(path));
  t.validate(cfg);
  return t;
}

std::vector<std::string> LatencyTable::problems(const BackboneConfig& cfg) const {
  std::vector<std::string> out;
  if (!overhead_ms) out.push_back("missing overhead row");
  const std::size_t layers = cfg.layers().size();
  for (std::size_t l = 0; l < layers; ++l)
    for (int k : {3, 5})
      for (int e : {3, 6})
        for (int b : {4, 8, 16}) {
          const LatencyKey key{l, k, e, b};
          if (!entries.count(key)) out.push_back("missing key " + to_string(key));
        }
  for (const auto& [key, ms] : entries) {
    if (key.layer >= layers) out.push_back("key " + to_string(key) + " beyond the backbone's layers");
  }
  return out;
}

void LatencyTable::validate(const BackboneConfig& cfg) const {
  const auto issues = problems(cfg);
  if (issues.empty()) return;
  std::string msg = "latency table invalid (" + std::to_string(issues.size()) + " problems):";
  for (const auto& i : issues) msg += "\n  " + i;
  throw DataError(msg);
}

double LatencyTable::layer_latency(std::size_t layer, const LayerChoice& c) const {
  if (c.arch.skip()) return 0.0;
  const auto it = entries.find({layer, c.arch.kernel, c.arch.expand, c.bits});
  if (it == entries.end()) {
    throw DataError("latency table has no entry " +
                    to_string({layer, c.arch.kernel, c.arch.expand, c.bits}));
  }
  return it->second;
}

std::string LatencyTable::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "layer,kernel,expand,bits,latency_ms\n";
  for (const auto& [k, ms] : entries)
    out << k.layer << ',' << k.kernel << ',' << k.expand << ',' << k.bits << ',' << ms << '\n';
  if (overhead_ms) out << "overhead,,,," << *overhead_ms << '\n';
  return out.str();
}

double estimate_latency(const ModelSpec& spec, const LatencyTable& table) {
  double total = table.overhead();
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    total += table.layer_latency(i, spec.layers[i]);
  return total;
}

double expected_latency(const std::vector<DecisionProbabilities>& probs,
                        const std::vector<LayerGeometry>& layers, const LatencyTable& table) {
  if (probs.size() != layers.size()) throw ShapeError("expected_latency: length mismatch");
  double total = table.overhead();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const double keep = layers[i].skip_allowed ? p.keep : 1.0;
    const double bit_p[3] = {1.0 - p.drop_9_16, p.drop_9_16 * (1.0 - p.drop_5_8),
                             p.drop_9_16 * p.drop_5_8};
    const int bit_v[3] = {16, 8, 4};
    double layer = 0.0;
    for (int k : {3, 5}) {
      const double pk = k == 5 ? p.kernel5 : 1.0 - p.kernel5;
      for (int e : {3, 6}) {
        const double pe = e == 6 ? p.expand6 : 1.0 - p.expand6;
        for (int b = 0; b < 3; ++b)
          layer += pk * pe * bit_p[b] * table.layer_latency(i, {{k, e}, bit_v[b]});
      }
    }
    total += keep * layer;
  }
  return total;
}

std::size_t depthwise_macs(std::size_t channels, int kernel, std::size_t out_h, std::size_t out_w) {
  return static_cast<std::size_t>(kernel * kernel) * channels * out_h * out_w;
}

std::size_t group_macs(const LayerGeometry& g, int kernel, int expand) {
  const std::size_t hidden = g.hidden(expand);
  const std::size_t in_px = g.in_size * g.in_size, out_px = g.out_size * g.out_size;
  return g.in_channels * hidden * in_px + depthwise_macs(hidden, kernel, g.out_size, g.out_size) +
         hidden * g.out_channels * out_px;
}

double BitFactors::at(int bits) const {
  switch (bits) {
    case 4:
      return b4;
    case 8:
      return b8;
    case 16:
      return b16;
    default:
      throw std::invalid_argument("no bit factor for " + std::to_string(bits) + " bits");
  }
}

LatencyTable synth_latency_table(const BackboneConfig& cfg, double coeff,
                                 const BitFactors& factors, double overhead_ms) {
  if (!(coeff > 0.0)) throw ConfigError("latency coefficient must be > 0");
  if (!(overhead_ms >= 0.0)) throw ConfigError("latency overhead must be >= 0");
  LatencyTable t;
  t.overhead_ms = overhead_ms;
  for (const auto& g : cfg.layers())
    for (int k : {3, 5})
      for (int e : {3, 6})
        for (int b : {4, 8, 16}) {
          t.entries[{g.index, k, e, b}] =
              static_cast<double>(group_macs(g, k, e)) / 1e6 * coeff * factors.at(b);
        }
  return t;
}

// ---------------------------------------------------------------------------
// Pareto bookkeeping

bool dominates(const EvaluatedModel& a, const EvaluatedModel& b) {
  return a.accuracy >= b.accuracy && a.latency_ms <= b.latency_ms &&
         (a.accuracy > b.accuracy || a.latency_ms < b.latency_ms);
}

std::vector<bool> non_dominated_flags(const std::vector<EvaluatedModel>& models) {
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (models[a].latency_ms != models[b].latency_ms)
      return models[a].latency_ms < models[b].latency_ms;
    return models[a].accuracy > models[b].accuracy;
  });
  std::vector<bool> flags(models.size(), false);
  bool any_before = false;
  double best_before = 0.0;  // best accuracy at strictly lower latency
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double lat = models[order[i]].latency_ms;
    const double top = models[order[i]].accuracy;
    while (j < order.size() && models[order[j]].latency_ms == lat) {
      const double acc = models[order[j]].accuracy;
      flags[order[j]] = acc == top && (!any_before || acc > best_before);
      ++j;
    }
    if (!any_before || top > best_before) best_before = top;
    any_before = true;
    i = j;
  }
  return flags;
}

std::vector<EvaluatedModel> pareto_front(const std::vector<EvaluatedModel>& models) {
  const auto flags = non_dominated_flags(models);
  std::vector<EvaluatedModel> front;
  for (std::size_t i = 0; i < models.size(); ++i)
    if (flags[i]) front.push_back(models[i]);
  std::stable_sort(front.begin(), front.end(),
                   [](const auto& a, const auto& b) { return a.latency_ms < b.latency_ms; });
  return front;
}

// ---------------------------------------------------------------------------
// Accuracy

std::size_t count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("count_correct: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.raw() + i * k;
    const auto best = static_cast<int>(std::max_element(row, row + k) - row);
    if (best == labels[i]) ++correct;
  }
  return correct;
}

namespace {

template <typename Forward>
double accuracy_over(const std::vector<Batch>& batches, Forward forward) {
  if (batches.empty()) throw DataError("validation set is empty");
  NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  for (const auto& b : batches) {
    correct += count_correct(forward(b.images).value(), b.labels);
    total += b.labels.size();
  }
  if (total == 0) throw DataError("validation set is empty");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

double evaluate_accuracy(const SuperNet& net, const ModelSpec& spec,
                         const std::vector<Batch>& batches) {
  const auto plan = net.spec_plan(spec, true);
  return accuracy_over(batches, [&](const Tensor<float>& x) { return net.forward(x, plan); });
}

double evaluate_accuracy(const SubNet& net, const std::vector<Batch>& batches) {
  return accuracy_over(batches, [&](const Tensor<float>& x) { return net.forward(x, true); });
}

}  // namespace jqas
