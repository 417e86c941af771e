#include "jqas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "jqas/error.hpp"

namespace jqas {

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be NCHW");
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// [C, R, R] smooth pattern: a Gaussian blob and an oriented wave per channel.
std::vector<double> primitive(std::size_t channels, std::size_t res, Rng& rng) {
  std::vector<double> p(channels * res * res);
  const double r = static_cast<double>(res);
  for (std::size_t c = 0; c < channels; ++c) {
    const double cx = uniform01(rng) * r, cy = uniform01(rng) * r;
    const double sigma = r * (0.15 + 0.25 * uniform01(rng));
    const double amp = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double theta = uniform01(rng) * kPi;
    const double freq = (0.5 + 1.5 * uniform01(rng)) * 2.0 * kPi / r;
    const double phase = uniform01(rng) * 2.0 * kPi;
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double blob = amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        const double wave =
            0.5 * std::sin(freq * (std::cos(theta) * x + std::sin(theta) * y) + phase);
        p[(c * res + y) * res + x] = blob + wave;
      }
  }
  return p;
}

std::vector<double> class_template(const std::vector<std::vector<double>>& bank, std::uint64_t seed,
                                   int cls) {
  Rng rng(mix(seed, 1000 + static_cast<std::uint64_t>(cls)));
  std::vector<double> t(bank.front().size(), 0.0);
  for (int k = 0; k < 3; ++k) {
    const auto& p = bank[static_cast<std::size_t>(uniform01(rng) * bank.size()) % bank.size()];
    const double w = 2.0 * uniform01(rng) - 1.0;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += w * p[i];
  }
  double sq = 0.0;
  for (double v : t) sq += v * v;
  const double rms = std::sqrt(sq / t.size());
  if (rms > 0) {
    for (double& v : t) v /= rms;
  }
  return t;
}

}  // namespace

Dataset make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("synthetic.num_classes must be >= 2");
  if (cfg.samples < 2) throw ConfigError("synthetic.samples must be >= 2");
  if (cfg.resolution < 1 || cfg.channels < 1) throw ConfigError("synthetic shape must be positive");
  if (cfg.primitives < 1) throw ConfigError("synthetic.primitives must be >= 1");
  if (cfg.noise < 0) throw ConfigError("synthetic.noise must be >= 0");
  if (cfg.modes_per_class < 1) throw ConfigError("synthetic.modes_per_class must be >= 1");

  Rng bank_rng(mix(cfg.seed, 0));
  std::vector<std::vector<double>> bank;
  for (std::size_t i = 0; i < cfg.primitives; ++i)
    bank.push_back(primitive(cfg.channels, cfg.resolution, bank_rng));
  // templates[c * modes + m]; mode 0 is the single-mode template.
  const std::size_t modes = cfg.modes_per_class;
  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < cfg.num_classes; ++c)
    for (std::size_t m = 0; m < modes; ++m)
      templates.push_back(
          class_template(bank, m == 0 ? cfg.seed : mix(cfg.seed, 500 + m), static_cast<int>(c)));

  const std::size_t res = cfg.resolution, ch = cfg.channels;
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.images = Tensor<float>(Shape{cfg.samples, ch, res, res});
  ds.labels.resize(cfg.samples);
  Rng rng(mix(cfg.seed, mix(cfg.sample_seed, 7)));
  const int span = 2 * cfg.max_shift + 1;
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    const int label = static_cast<int>(n % cfg.num_classes);
    ds.labels[n] = label;
    const std::size_t mode =
        modes > 1 ? static_cast<std::size_t>(uniform01(rng) * modes) % modes : 0;
    const auto& t = templates[static_cast<std::size_t>(label) * modes + mode];
    const double amp = 0.8 + 0.4 * uniform01(rng);
    const int sx = static_cast<int>(uniform01(rng) * span) - cfg.max_shift;
    const int sy = static_cast<int>(uniform01(rng) * span) - cfg.max_shift;
    float* out = ds.images.raw() + n * ch * res * res;
    const int r = static_cast<int>(res);
    for (std::size_t c = 0; c < ch; ++c)
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
          const int ty = ((y - sy) % r + r) % r, tx = ((x - sx) % r + r) % r;
          const double v = amp * t[(c * res + ty) * res + tx] + normal(rng, 0.0, cfg.noise);
          out[(c * res + y) * res + x] = static_cast<float>(v);
        }
  }
  return ds;
}

namespace {

constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;
constexpr std::size_t kCifarBatchRecords = 10000;

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    const std::size_t whole = bytes.size() / kCifarRecord;
    throw DataError(path.string() + ": malformed record at byte offset " +
                    std::to_string(whole * kCifarRecord) + " (file has " +
                    std::to_string(bytes.size()) + " bytes, expected a multiple of " +
                    std::to_string(kCifarRecord) + ")");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.num_classes = 10;
  ds.images = Tensor<float>(Shape{n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * kCifarRecord;
    const int label = bytes[offset];
    if (label >= 10) {
      throw DataError(path.string() + ": label " + std::to_string(label) +
                      " outside [0,10) at byte offset " + std::to_string(offset));
    }
    ds.labels[i] = label;
    float* out = ds.images.raw() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) out[p] = bytes[offset + 1 + p] / 255.0f;
  }
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& dir, bool train) {
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  std::vector<Dataset> parts;
  for (const auto& name : files) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw DataError("missing CIFAR-10 file " + path.string());
    const auto bytes = std::filesystem::file_size(path);
    if (bytes != kCifarBatchRecords * kCifarRecord) {
      throw DataError(path.string() + ": expected " +
                      std::to_string(kCifarBatchRecords * kCifarRecord) + " bytes, got " +
                      std::to_string(bytes));
    }
    parts.push_back(load_cifar10_file(path));
  }
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset ds;
  ds.num_classes = 10;
  ds.images = Tensor<float>(Shape{total, 3, 32, 32});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), ds.images.raw() + at * kCifarPixels);
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return ds;
}

ChannelStats channel_stats(const Dataset& ds) {
  const std::size_t n = ds.size(), c = ds.channels(), hw = ds.resolution() * ds.resolution();
  if (n == 0) throw DataError("cannot compute statistics of an empty dataset");
  ChannelStats stats{std::vector<float>(c), std::vector<float>(c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = ds.images.raw() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(n * hw);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    stats.mean[ch] = static_cast<float>(mean);
    stats.stddev[ch] = static_cast<float>(std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0);
  }
  return stats;
}

void normalize(Dataset& ds, const ChannelStats& stats) {
  const std::size_t n = ds.size(), c = ds.channels(), hw = ds.resolution() * ds.resolution();
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw DataError("channel statistics do not match the dataset's channel count");
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = ds.images.raw() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) p[k] = (p[k] - stats.mean[ch]) / stats.stddev[ch];
    }
}

Dataset downsample(const Dataset& ds, std::size_t factor) {
  if (factor == 0 || ds.resolution() % factor != 0) {
    throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide resolution " +
                      std::to_string(ds.resolution()));
  }
  if (factor == 1) return ds;
  const std::size_t n = ds.size(), c = ds.channels(), r = ds.resolution(), o = r / factor;
  Dataset out;
  out.num_classes = ds.num_classes;
  out.labels = ds.labels;
  out.images = Tensor<float>(Shape{n, c, o, o});
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (std::size_t i = 0; i < n * c; ++i) {
    const float* src = ds.images.raw() + i * r * r;
    float* dst = out.images.raw() + i * o * o;
    for (std::size_t y = 0; y < o; ++y)
      for (std::size_t x = 0; x < o; ++x) {
        float acc = 0.0f;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            acc += src[(y * factor + dy) * r + x * factor + dx];
        dst[y * o + x] = acc * inv;
      }
  }
  return out;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t per = ds.channels() * ds.resolution() * ds.resolution();
  Dataset out;
  out.num_classes = ds.num_classes;
  out.images = Tensor<float>(Shape{indices.size(), ds.channels(), ds.resolution(), ds.resolution()});
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= ds.size()) throw DataError("subset index " + std::to_string(i) + " out of range");
    std::copy_n(ds.images.raw() + i * per, per, out.images.raw() + k * per);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

Dataset class_subset(const Dataset& ds, const std::vector<int>& classes, std::size_t num_classes) {
  std::vector<int> relabel(ds.num_classes, -1);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const int c = classes[k];
    if (c < 0 || static_cast<std::size_t>(c) >= ds.num_classes) {
      throw ConfigError("class " + std::to_string(c) + " not present in the dataset");
    }
    relabel[c] = static_cast<int>(k);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (relabel[ds.labels[i]] >= 0) keep.push_back(i);
  Dataset out = subset(ds, keep);
  for (auto& l : out.labels) l = relabel[l];
  out.num_classes = num_classes ? num_classes : classes.size();
  if (out.num_classes < classes.size()) throw ConfigError("num_classes smaller than class list");
  return out;
}

std::pair<Dataset, Dataset> split_half(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const std::size_t half = order.size() / 2;
  return {subset(ds, {order.begin(), order.begin() + half}),
          subset(ds, {order.begin() + half, order.end()})};
}

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, Rng* shuffle) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>((*shuffle)() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  const std::size_t per = ds.channels() * ds.resolution() * ds.resolution();
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    if (n < 2) break;
    Batch b;
    b.images = Tensor<float>(Shape{n, ds.channels(), ds.resolution(), ds.resolution()});
    b.labels.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = order[start + k];
      std::copy_n(ds.images.raw() + i * per, per, b.images.raw() + k * per);
      b.labels[k] = ds.labels[i];
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace jqas
