#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "jqas/archive.hpp"
#include "jqas/checkpoint.hpp"
#include "jqas/dataset.hpp"
#include "jqas/random.hpp"
#include "jqas/search.hpp"
#include "toy.hpp"

using namespace jqas;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("jqas_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Synthetic, SameSeedSameData) {
  SyntheticConfig c;
  c.samples = 64;
  const auto a = make_synthetic(c), b = make_synthetic(c);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  c.sample_seed = 2;
  EXPECT_NE(make_synthetic(c).images, a.images);
}

TEST(Synthetic, ClassTemplatesIndependentOfClassCount) {
  SyntheticConfig c;
  c.samples = 400;
  c.noise = 0.0;
  c.max_shift = 0;
  const auto four = make_synthetic(c);
  c.num_classes = 10;
  const auto ten = make_synthetic(c);
  // With no noise and no shift every class-0 image is the class-0 template.
  auto first_of = [](const Dataset& d, int cls) {
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == cls) return i;
    return d.size();
  };
  const std::size_t per = 3 * 8 * 8;
  const auto i4 = first_of(four, 0), i10 = first_of(ten, 0);
  ASSERT_LT(i4, four.size());
  ASSERT_LT(i10, ten.size());
  for (std::size_t p = 0; p < per; ++p)
    EXPECT_FLOAT_EQ(four.images[i4 * per + p], ten.images[i10 * per + p]);
}

TEST(Synthetic, ModesPerClassGivesDistinctTemplates) {
  SyntheticConfig c;
  c.samples = 200;
  c.noise = 0.0;
  c.max_shift = 0;
  c.modes_per_class = 3;
  const auto d = make_synthetic(c);
  // Without noise or shift, amplitude only scales a template; compare directions.
  const std::size_t per = 3 * 8 * 8;
  std::vector<std::vector<double>> seen;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] != 0) continue;
    std::vector<double> v(per);
    double norm = 0;
    for (std::size_t p = 0; p < per; ++p) norm += d.images[i * per + p] * d.images[i * per + p];
    for (std::size_t p = 0; p < per; ++p) v[p] = d.images[i * per + p] / std::sqrt(norm);
    bool known = false;
    for (const auto& s : seen) {
      double dot = 0;
      for (std::size_t p = 0; p < per; ++p) dot += s[p] * v[p];
      known = known || dot > 1 - 1e-6;
    }
    if (!known) seen.push_back(v);
  }
  EXPECT_EQ(seen.size(), 3u);
  c.modes_per_class = 0;
  EXPECT_THROW(make_synthetic(c), ConfigError);
}

TEST(Dataset, NormalizeGivesZeroMeanUnitStd) {
  SyntheticConfig c;
  c.samples = 200;
  auto d = make_synthetic(c);
  normalize(d, channel_stats(d));
  const auto s = channel_stats(d);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    EXPECT_NEAR(s.mean[ch], 0.0, 1e-4);
    EXPECT_NEAR(s.stddev[ch], 1.0, 1e-3);
  }
}

TEST(Dataset, ClassSubsetRelabels) {
  SyntheticConfig c;
  c.samples = 300;
  c.num_classes = 6;
  const auto d = make_synthetic(c);
  const auto s = class_subset(d, {4, 1});
  EXPECT_EQ(s.num_classes, 2u);
  std::size_t expected = 0;
  for (int l : d.labels) expected += (l == 4 || l == 1);
  EXPECT_EQ(s.size(), expected);
  for (int l : s.labels) EXPECT_TRUE(l == 0 || l == 1);
  EXPECT_EQ(class_subset(d, {4, 1}, 10).num_classes, 10u);
}

TEST(Dataset, SplitHalfPartitions) {
  SyntheticConfig c;
  c.samples = 101;
  const auto d = make_synthetic(c);
  const auto [a, b] = split_half(d, 5);
  EXPECT_EQ(a.size() + b.size(), 101u);
  EXPECT_EQ(a.size(), 50u);
}

TEST(Dataset, BatchesDropSingletonTail) {
  SyntheticConfig c;
  c.samples = 65;
  const auto d = make_synthetic(c);
  const auto b = make_batches(d, 32);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].labels.size(), 32u);
  EXPECT_THROW(make_batches(d, 1), ConfigError);
}

TEST(Dataset, DownsampleAverages) {
  Dataset d;
  d.num_classes = 2;
  d.labels = {0};
  d.images = Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 6});
  const auto s = downsample(d, 2);
  EXPECT_EQ(s.images.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(s.images[0], 3.0f);
  EXPECT_THROW(downsample(d, 3), ConfigError);
}

TEST(Cifar, ReadsRecords) {
  const auto dir = scratch("cifar_ok");
  std::vector<unsigned char> bytes(2 * 3073, 0);
  bytes[0] = 3;
  bytes[1] = 255;
  bytes[3073] = 9;
  write_bytes(dir / "one.bin", bytes);
  const auto d = load_cifar10_file(dir / "one.bin");
  EXPECT_EQ(d.labels, (std::vector<int>{3, 9}));
  EXPECT_FLOAT_EQ(d.images[0], 1.0f);
  EXPECT_FLOAT_EQ(d.images[1], 0.0f);
}

TEST(Cifar, BadRecordLengthReportsOffset) {
  const auto dir = scratch("cifar_len");
  write_bytes(dir / "short.bin", std::vector<unsigned char>(3073 + 100, 0));
  const auto msg = message_of([&] { load_cifar10_file(dir / "short.bin"); });
  EXPECT_NE(msg.find("byte offset 3073"), std::string::npos) << msg;
}

TEST(Cifar, BadLabelReportsOffset) {
  const auto dir = scratch("cifar_label");
  std::vector<unsigned char> bytes(3 * 3073, 0);
  bytes[2 * 3073] = 12;
  write_bytes(dir / "label.bin", bytes);
  const auto msg = message_of([&] { load_cifar10_file(dir / "label.bin"); });
  EXPECT_NE(msg.find("label 12"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 6146"), std::string::npos) << msg;
}

TEST(Cifar, MissingBatchFile) {
  const auto dir = scratch("cifar_missing");
  const auto msg = message_of([&] { load_cifar10(dir, true); });
  EXPECT_NE(msg.find("data_batch_1.bin"), std::string::npos) << msg;
}

TEST(Archive, RoundTrip) {
  Archive a;
  a.manifest = {{"kind", "test"}, {"n", 3}};
  a.put("x", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  a.put("empty", Tensor<float>(Shape{0}));
  const auto b = decode_archive(encode_archive(a));
  EXPECT_EQ(b.manifest, a.manifest);
  EXPECT_EQ(b.get("x"), a.get("x"));
  EXPECT_TRUE(b.has("empty"));
  EXPECT_THROW(b.get("y"), DataError);
}

TEST(Archive, CorruptionAndTruncationAreDetected) {
  Archive a;
  a.put("x", Tensor<float>({4}, {1, 2, 3, 4}));
  const auto bytes = encode_archive(a);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_NE(message_of([&] { decode_archive(flipped); }).find("checksum"), std::string::npos);
  EXPECT_THROW(decode_archive(bytes.substr(0, bytes.size() - 7)), DataError);
  EXPECT_THROW(decode_archive("JQ"), DataError);
  EXPECT_THROW(decode_archive(std::string(64, 'x')), DataError);
}

TEST(Archive, FileRoundTrip) {
  const auto dir = scratch("archive_file");
  Archive a;
  a.put("w", Tensor<float>({1}, {2.5f}));
  write_archive(dir / "a.jqar", a);
  EXPECT_EQ(read_archive(dir / "a.jqar").get("w"), a.get("w"));
  EXPECT_THROW(read_archive(dir / "none.jqar"), DataError);
}

TEST(Rng, StateRoundTrip) {
  Rng r(42);
  for (int i = 0; i < 5; ++i) uniform01(r);
  auto copy = rng_from_state(rng_state(r));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(uniform01(r), uniform01(copy));
  EXPECT_THROW(rng_from_state("not a state"), DataError);
}

TEST(CheckpointFile, RoundTripPreservesEverything) {
  const auto bb = toy::backbone();
  const auto d = toy::data(4, 64, 64, 0.6);
  auto s = initialize(toy::search(2), toy::reward(0.5, 4.0), bb);
  run_epoch(s, d.train, make_batches(d.val, 32), synth_latency_table(bb, 20.0));
  const auto c = make_checkpoint(s);
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "c.jqar", c);
  const auto r = load_checkpoint(dir / "c.jqar");
  EXPECT_EQ(r.backbone, c.backbone);
  EXPECT_EQ(r.epoch, 1u);
  EXPECT_EQ(r.history, c.history);
  EXPECT_EQ(r.thresholds, c.thresholds);
  EXPECT_EQ(r.rng_state, c.rng_state);
  EXPECT_EQ(r.baseline, c.baseline);
  ASSERT_EQ(r.weights.size(), c.weights.size());
  for (std::size_t i = 0; i < r.weights.size(); ++i) EXPECT_EQ(r.weights[i].data, c.weights[i].data);
  ASSERT_EQ(r.recent.size(), c.recent.size());
  for (std::size_t i = 0; i < r.recent.size(); ++i) EXPECT_EQ(r.recent[i].spec, c.recent[i].spec);
  EXPECT_THROW(load_checkpoint(dir / "missing.jqar"), DataError);
}

TEST(CheckpointFile, SubnetArchiveIsNotACheckpoint) {
  const auto bb = toy::backbone();
  Rng rng(0);
  auto net = SuperNet::build(bb, rng);
  const auto sub = extract_subnet(net, net.determinize());
  const auto arch = subnet_to_archive(sub);
  EXPECT_THROW(checkpoint_from_archive(arch), DataError);
  const auto back = subnet_from_archive(decode_archive(encode_archive(arch)));
  EXPECT_EQ(back.parameter_count(), sub.parameter_count());
}

TEST(Json, SpecAndBackboneRoundTrip) {
  const auto bb = toy::backbone();
  EXPECT_EQ(backbone_from_json(to_json(bb)), bb);
  auto spec = ModelSpec::uniform(bb.searchable_layers(), {{5, 3}, 8});
  spec.layers[2] = {{3, 0}, 4};
  EXPECT_EQ(spec_from_json(to_json(spec)), spec);
  auto other = bb;
  other.stem_channels = 6;
  other.num_classes = 9;
  const auto diff = backbone_diff(bb, other, true);
  ASSERT_EQ(diff.size(), 1u);
  EXPECT_EQ(diff[0].rfind("stem_channels", 0), 0u) << diff[0];
  EXPECT_EQ(backbone_diff(bb, other, false).size(), 2u);
}
