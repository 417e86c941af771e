#include <gtest/gtest.h>

#include <cmath>

#include "jqas/checkpoint.hpp"
#include "jqas/search.hpp"
#include "jqas/sigmoid.hpp"
#include "toy.hpp"

using namespace jqas;

namespace {

std::vector<Tensor<float>> weights_of(const SuperNet& net) {
  std::vector<Tensor<float>> out;
  for (const auto& p : net.parameters()) out.push_back(p.var.value());
  return out;
}

struct ToySetup {
  BackboneConfig bb = toy::backbone();
  toy::Data d = toy::data(4, 256, 128, 0.6);
  LatencyTable table = synth_latency_table(bb, 20.0);
  std::vector<Batch> val = make_batches(d.val, 32);
  RewardConfig reward = toy::reward(0.5, 0.5 * (estimate_latency(ModelSpec::uniform(4, {{3, 3}, 4}), table) +
                                                 estimate_latency(ModelSpec::uniform(4, {{5, 6}, 16}), table)));
};

}  // namespace

TEST(Initialize, EveryProbabilityIsHalf) {
  auto s = initialize(toy::search(2), toy::reward(0.5, 1.0), toy::backbone());
  const auto geoms = s.net.config().layers();
  const auto probs = current_probabilities(s.net);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    EXPECT_NEAR(probs[i].kernel5, 0.5, 1e-6);
    EXPECT_NEAR(probs[i].expand6, 0.5, 1e-6);
    EXPECT_NEAR(probs[i].drop_9_16, 0.5, 1e-6);
    EXPECT_NEAR(probs[i].drop_5_8, 0.5, 1e-6);
    EXPECT_NEAR(probs[i].keep, geoms[i].skip_allowed ? 0.5 : 1.0, 1e-6);
  }
}

TEST(Initialize, RejectsInvalidConfigs) {
  auto cfg = toy::search(2);
  cfg.warmup_epochs = 5;
  EXPECT_THROW(initialize(cfg, toy::reward(0.5, 1.0), toy::backbone()), ConfigError);
  EXPECT_THROW(initialize(toy::search(2), toy::reward(1.5, 1.0), toy::backbone()), ConfigError);
}

TEST(Alternation, WeightStepLeavesThresholds) {
  ToySetup t;
  auto s = initialize(toy::search(2), t.reward, t.bb);
  const auto before = s.net.thresholds();
  const auto w0 = weights_of(s.net);
  auto batches = make_batches(t.d.train, 32);
  for (int i = 0; i < 3; ++i) weight_step(s, batches[i]);
  EXPECT_EQ(s.net.thresholds(), before);
  EXPECT_NE(weights_of(s.net), w0);
}

TEST(Alternation, ThresholdStepLeavesWeights) {
  ToySetup t;
  auto s = initialize(toy::search(2), t.reward, t.bb);
  const auto w0 = weights_of(s.net);
  const auto t0 = s.net.thresholds();
  threshold_step(s, t.val, t.table);
  EXPECT_EQ(weights_of(s.net), w0);
  EXPECT_NE(s.net.thresholds(), t0);
}

TEST(WeightStep, ZeroLearningRateKeepsWeights) {
  ToySetup t;
  auto cfg = toy::search(2);
  cfg.sgd.learning_rate = 0.0;
  auto s = initialize(cfg, t.reward, t.bb);
  const auto w0 = weights_of(s.net);
  auto batches = make_batches(t.d.train, 32);
  for (int i = 0; i < 3; ++i) weight_step(s, batches[i]);
  EXPECT_EQ(weights_of(s.net), w0);
}

TEST(WeightStep, OverfitsAFixedBatch) {
  ToySetup t;
  auto cfg = toy::search(2);
  cfg.warmup_epochs = 0;
  auto s = initialize(cfg, t.reward, t.bb);
  const auto batch = make_batches(t.d.train, 16).front();
  const double first = weight_step(s, batch);
  double last = first;
  for (int i = 0; i < 49; ++i) last = weight_step(s, batch);
  EXPECT_LT(last, 0.5 * first);
}

TEST(Reinforce, SingleDecisionExample) {
  // p = 0.5, outcome "on", R = 1, no baseline.
  double baseline = 0.0;
  bool set = false;
  const auto g =
      reinforce_estimate({1.0}, {{include_grad(0.0, true)}}, baseline, set, 0.9, false);
  EXPECT_DOUBLE_EQ(g[0], -0.5);
  // Gradient ascent on t moves the threshold down, which raises p.
  EXPECT_GT(sigmoid(0.0 - (0.0 + 0.1 * g[0])), 0.5);
}

TEST(Reinforce, ZeroAdvantageGivesZeroUpdate) {
  double baseline = 0.7;
  bool set = true;
  const auto g = reinforce_estimate({0.7, 0.7, 0.7}, {{0.3, -0.1}, {-0.5, 0.2}, {0.1, 0.9}},
                                    baseline, set, 0.9, true);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
}

TEST(Reinforce, BaselineStartsAtFirstMeanThenTracks) {
  double baseline = 0.0;
  bool set = false;
  reinforce_estimate({1.0, 3.0}, {{0.0}, {0.0}}, baseline, set, 0.9, true);
  EXPECT_TRUE(set);
  EXPECT_DOUBLE_EQ(baseline, 2.0);
  reinforce_estimate({4.0}, {{0.0}}, baseline, set, 0.9, true);
  EXPECT_DOUBLE_EQ(baseline, 0.9 * 2.0 + 0.1 * 4.0);
}

TEST(Reinforce, UnbiasedOnTwoDecisions) {
  // Decision i is on with probability sigmoid(n_i - t_i).
  const double n1 = 0.3, n2 = -0.8, t1 = 0.1, t2 = 0.2;
  const double rew[2][2] = {{0.2, 1.0}, {-0.5, 0.7}};
  auto expectation = [&](double a, double b) {
    const double p = sigmoid(n1 - a), q = sigmoid(n2 - b);
    return (1 - p) * (1 - q) * rew[0][0] + (1 - p) * q * rew[0][1] + p * (1 - q) * rew[1][0] +
           p * q * rew[1][1];
  };
  const double h = 1e-6;
  const double exact1 = (expectation(t1 + h, t2) - expectation(t1 - h, t2)) / (2 * h);
  const double exact2 = (expectation(t1, t2 + h) - expectation(t1, t2 - h)) / (2 * h);

  Rng rng(1);
  const int n = 20000;
  double s1 = 0, s2 = 0, q1 = 0, q2 = 0;
  double baseline = 0;
  bool set = false;
  for (int i = 0; i < n; ++i) {
    const bool o1 = bernoulli(rng, sigmoid(n1 - t1)), o2 = bernoulli(rng, sigmoid(n2 - t2));
    const auto g = reinforce_estimate({rew[o1][o2]},
                                      {{include_grad(n1 - t1, o1), include_grad(n2 - t2, o2)}},
                                      baseline, set, 0.9, false);
    s1 += g[0];
    s2 += g[1];
    q1 += g[0] * g[0];
    q2 += g[1] * g[1];
  }
  const double m1 = s1 / n, m2 = s2 / n;
  const double se1 = std::sqrt((q1 / n - m1 * m1) / n), se2 = std::sqrt((q2 / n - m2 * m2) / n);
  EXPECT_NEAR(m1, exact1, 3 * se1);
  EXPECT_NEAR(m2, exact2, 3 * se2);
}

TEST(Reinforce, BanditFindsBetterArm) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    double t = 0.0, baseline = 0.0;
    bool set = false;
    for (int step = 0; step < 200; ++step) {
      std::vector<double> rewards;
      std::vector<std::vector<double>> grads;
      for (int k = 0; k < 8; ++k) {
        const bool on = bernoulli(rng, sigmoid(-t));
        rewards.push_back(on ? 1.0 : 0.0);
        grads.push_back({include_grad(-t, on)});
      }
      t += 1.0 * reinforce_estimate(rewards, grads, baseline, set, 0.9, true)[0];
    }
    EXPECT_GT(sigmoid(-t), 0.95) << seed;
  }
}

TEST(ThresholdStep, LatencyOnlyRewardFindsDominantOption) {
  const auto bb = toy::backbone();
  LatencyTable table;
  table.overhead_ms = 0.0;
  for (const auto& g : bb.layers())
    for (int k : {3, 5})
      for (int e : {3, 6})
        for (int b : {4, 8, 16}) {
          table.entries[{g.index, k, e, b}] = 1.0 + (k == 5) + (e == 6) + (b == 8) + 2.0 * (b == 16);
        }
  RewardConfig r = toy::reward(1.0, 5.0);
  r.latency_normalizer = 1.0;
  const auto d = toy::data(4, 16, 16, 0.6);
  const auto val = make_batches(d.val, 16);
  int converged = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = toy::search(1);
    cfg.rng_seed = seed;
    cfg.threshold_lr = 2.0;
    cfg.samples_per_update = 8;
    auto s = initialize(cfg, r, bb);
    for (int step = 0; step < 150; ++step) threshold_step(s, val, table);
    const auto spec = s.net.determinize();
    bool ok = true;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      if (bb.layers()[i].skip_allowed) {
        ok &= spec.layers[i].arch.skip();
      } else {
        ok &= spec.layers[i] == LayerChoice{{3, 3}, 4};
      }
    }
    converged += ok;
  }
  EXPECT_EQ(converged, 10);
}

TEST(ThresholdStep, KeepsTheMostRecentModels) {
  ToySetup t;
  auto cfg = toy::search(2);
  cfg.recent_models = 10;
  cfg.samples_per_update = 4;
  auto s = initialize(cfg, t.reward, t.bb);
  threshold_step(s, t.val, t.table);
  EXPECT_EQ(s.recent.size(), 4u);
  for (int i = 0; i < 3; ++i) threshold_step(s, t.val, t.table);
  EXPECT_EQ(s.recent.size(), 10u);
  for (const auto& m : s.recent) {
    EXPECT_DOUBLE_EQ(m.latency_ms, estimate_latency(m.spec, t.table));
    EXPECT_DOUBLE_EQ(m.reward, reward(m.accuracy, m.latency_ms, t.reward));
  }
}

TEST(RunSearch, ZeroEpochsDeterminizesFromInit) {
  ToySetup t;
  auto cfg = toy::search(0);
  cfg.warmup_epochs = 0;
  cfg.retrain_epochs = 2;
  auto s = initialize(cfg, t.reward, t.bb);
  const auto spec0 = s.net.determinize();
  auto r = run_search(s, t.d.train, t.d.val, t.table);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.spec, spec0);
  EXPECT_EQ(r.retrain_loss.size(), 2u);
  EXPECT_GT(r.final_accuracy, 0.0);
}

TEST(RunSearch, SameSeedGivesIdenticalResultJson) {
  ToySetup t;
  const auto a = run_search(toy::search(2), t.reward, t.bb, t.d.train, t.d.val, t.table);
  const auto b = run_search(toy::search(2), t.reward, t.bb, t.d.train, t.d.val, t.table);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.history.size(), 2u);
  auto other = toy::search(2);
  other.rng_seed = 8;
  const auto c = run_search(other, t.reward, t.bb, t.d.train, t.d.val, t.table);
  EXPECT_NE(a.to_json().dump(), c.to_json().dump());
}

TEST(RunSearch, ResultRoundTripsThroughJson) {
  ToySetup t;
  const auto a = run_search(toy::search(1), t.reward, t.bb, t.d.train, t.d.val, t.table);
  const auto back = search_result_from_json(nlohmann::json::parse(a.to_json().dump()));
  EXPECT_EQ(back.to_json(), a.to_json());
  auto broken = a.to_json();
  broken.erase("history");
  EXPECT_THROW(search_result_from_json(broken), DataError);
}

TEST(RunSearch, RetrainedSubnetMatchesExtractedStructure) {
  ToySetup t;
  auto s = initialize(toy::search(1), t.reward, t.bb);
  auto r = run_search(s, t.d.train, t.d.val, t.table);
  EXPECT_EQ(r.spec, s.net.determinize());
  const auto probe = extract_subnet(s.net, r.spec).parameters();
  const auto got = r.subnet.parameters();
  ASSERT_EQ(probe.size(), got.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(probe[i].name, got[i].name);
    EXPECT_EQ(probe[i].var.shape(), got[i].var.shape());
  }
}

TEST(Checkpoint, ResumeReproducesUninterruptedRun) {
  ToySetup t;
  const auto cfg = toy::search(4);
  const auto val = make_batches(t.d.val, cfg.batch_size);
  auto full = initialize(cfg, t.reward, t.bb);
  for (int e = 0; e < 4; ++e) run_epoch(full, t.d.train, val, t.table);

  auto part = initialize(cfg, t.reward, t.bb);
  for (int e = 0; e < 2; ++e) run_epoch(part, t.d.train, val, t.table);
  const auto bytes = encode_archive(to_archive(make_checkpoint(part)));
  auto resumed = resume(checkpoint_from_archive(decode_archive(bytes)), cfg, t.reward);
  for (int e = 0; e < 2; ++e) run_epoch(resumed, t.d.train, val, t.table);

  EXPECT_EQ(resumed.history, full.history);
  EXPECT_EQ(resumed.net.thresholds(), full.net.thresholds());
  EXPECT_EQ(weights_of(resumed.net), weights_of(full.net));
}

TEST(Checkpoint, WarmStartWithMoreClassesKeepsBody) {
  ToySetup t;
  auto s = initialize(toy::search(1), t.reward, t.bb);
  run_epoch(s, t.d.train, t.val, t.table);
  const auto ckpt = make_checkpoint(s);
  auto wide = t.bb;
  wide.num_classes = 104;
  auto w = initialize(toy::search(1), t.reward, wide, &ckpt);
  std::map<std::string, Tensor<float>> saved;
  for (const auto& a : ckpt.weights) saved[a.name] = a.data;
  for (const auto& p : w.net.parameters()) {
    if (p.name.rfind("head.", 0) == 0) {
      EXPECT_EQ(p.var.shape().back(), 104u);
    } else {
      EXPECT_EQ(p.var.value(), saved.at(p.name)) << p.name;
    }
  }
  EXPECT_EQ(w.net.thresholds(), ckpt.thresholds);
  EXPECT_EQ(w.epoch, 0u);
}

TEST(Checkpoint, DifferentBackboneIsRejectedWithDiff) {
  ToySetup t;
  auto s = initialize(toy::search(1), t.reward, t.bb);
  const auto ckpt = make_checkpoint(s);
  auto other = t.bb;
  other.block_channels = {4, 4, 12};
  try {
    initialize(toy::search(1), t.reward, other, &ckpt);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("block_channels"), std::string::npos);
  }
}

TEST(Evolve, SameDataOneEpochRetainsAccuracy) {
  const auto bb = toy::backbone();
  const auto d = toy::data(4, 512, 256, 1.0);
  const auto table = synth_latency_table(bb, 20.0);
  const auto reward = toy::reward(0.5, 10.0);
  auto cfg = toy::search(12);
  auto first = run_search(cfg, reward, bb, d.train, d.val, table);
  cfg.max_epochs = 1;
  cfg.warmup_epochs = 0;
  auto ev = evolve(first.checkpoint, cfg, reward, bb, d.train, d.val, table);
  ASSERT_EQ(ev.result.history.size(), 1u);
  EXPECT_NEAR(ev.result.history[0].val_accuracy, first.history.back().val_accuracy, 0.02);
  EXPECT_FALSE(ev.drift.empty());
}

TEST(Evolve, EpochsToTarget) {
  std::vector<EpochRecord> h{{1, 0, 0.5, 0, 0}, {2, 0, 0.8, 0, 0}, {3, 0, 0.7, 0, 0}};
  EXPECT_EQ(epochs_to_target(h, 0.75), 2u);
  EXPECT_EQ(epochs_to_target(h, 0.5), 1u);
  EXPECT_FALSE(epochs_to_target(h, 0.9).has_value());
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto cfg = toy::search(3);
  cfg.superkernel_weight_decay = false;
  EXPECT_EQ(to_json(search_config_from_json(to_json(cfg))), to_json(cfg));
  EXPECT_THROW(search_config_from_json({{"max_epoch", 3}}), ConfigError);
  EXPECT_THROW(search_config_from_json({{"max_epochs", "three"}}), ConfigError);
  auto r = toy::reward(0.2, 4.0);
  r.latency_normalizer = 2.0;
  EXPECT_EQ(to_json(reward_config_from_json(to_json(r))), to_json(r));
}
