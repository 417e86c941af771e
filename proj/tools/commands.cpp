#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "jqas/archive.hpp"
#include "jqas/checkpoint.hpp"
#include "jqas/error.hpp"

namespace jqas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string("unknown config key ") + section + "." + key);
    }
  }
}

template <typename U>
void read(const json& j, const char* key, U& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<U>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + " has the wrong type");
  }
}

json read_json_file(const fs::path& path, bool config) {
  if (!fs::exists(path)) {
    if (config) throw ConfigError("config file not found: " + path.string());
    throw DataError("file not found: " + path.string());
  }
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    const std::string msg = path.string() + " is not valid JSON: " + e.what();
    if (config) throw ConfigError(msg);
    throw DataError(msg);
  }
}

// Maps library exceptions to the documented exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kRuntimeError;
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

}  // namespace

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"backbone", "search", "reward", "data", "latency", "output"}, "config");
  RunConfig c;
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    reject_unknown(b,
                   {"num_blocks", "groups_per_block", "stem_channels", "block_channels",
                    "block_strides", "num_classes", "input_resolution", "input_channels",
                    "skip_search"},
                   "backbone");
    read(b, "num_blocks", c.backbone.num_blocks, "backbone");
    read(b, "groups_per_block", c.backbone.groups_per_block, "backbone");
    read(b, "stem_channels", c.backbone.stem_channels, "backbone");
    read(b, "block_channels", c.backbone.block_channels, "backbone");
    read(b, "block_strides", c.backbone.block_strides, "backbone");
    read(b, "num_classes", c.backbone.num_classes, "backbone");
    read(b, "input_resolution", c.backbone.input_resolution, "backbone");
    read(b, "input_channels", c.backbone.input_channels, "backbone");
    read(b, "skip_search", c.backbone.skip_search, "backbone");
  }
  if (j.contains("search")) c.search = search_config_from_json(j.at("search"));
  if (j.contains("reward")) c.reward = reward_config_from_json(j.at("reward"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"path", "classes", "num_classes", "split_seed"}, "data");
    std::string path;
    read(d, "path", path, "data");
    c.data.path = path;
    read(d, "classes", c.data.classes, "data");
    read(d, "num_classes", c.data.num_classes, "data");
    read(d, "split_seed", c.data.split_seed, "data");
  }
  if (j.contains("latency")) {
    const json& l = j.at("latency");
    reject_unknown(l, {"table", "coeff_ms_per_mmac", "overhead_ms", "bit_factors"}, "latency");
    if (l.contains("table")) {
      std::string t;
      read(l, "table", t, "latency");
      c.latency.table = fs::path(t);
    }
    read(l, "coeff_ms_per_mmac", c.latency.coeff_ms_per_mmac, "latency");
    read(l, "overhead_ms", c.latency.overhead_ms, "latency");
    if (l.contains("bit_factors")) {
      const json& f = l.at("bit_factors");
      reject_unknown(f, {"4", "8", "16"}, "latency.bit_factors");
      read(f, "4", c.latency.bit_factors.b4, "latency.bit_factors");
      read(f, "8", c.latency.bit_factors.b8, "latency.bit_factors");
      read(f, "16", c.latency.bit_factors.b16, "latency.bit_factors");
    }
  }
  std::string out;
  read(j, "output", out, "config");
  c.output = out;
  return c;
}

json to_json(const RunConfig& c) {
  json latency = {{"coeff_ms_per_mmac", c.latency.coeff_ms_per_mmac},
                  {"overhead_ms", c.latency.overhead_ms},
                  {"bit_factors",
                   {{"4", c.latency.bit_factors.b4},
                    {"8", c.latency.bit_factors.b8},
                    {"16", c.latency.bit_factors.b16}}}};
  if (c.latency.table) latency["table"] = c.latency.table->string();
  return {{"backbone", jqas::to_json(c.backbone)},
          {"search", jqas::to_json(c.search)},
          {"reward", jqas::to_json(c.reward)},
          {"data",
           {{"path", c.data.path.string()},
            {"classes", c.data.classes},
            {"num_classes", c.data.num_classes},
            {"split_seed", c.data.split_seed}}},
          {"latency", latency},
          {"output", c.output.string()}};
}

fs::path resolve_output(const fs::path& out) {
  if (out.is_absolute()) return out;
  if (const char* root = std::getenv("JQAS_OUTPUT_ROOT"); root && *root) return fs::path(root) / out;
  return out;
}

void prepare_output(const fs::path& dir, bool force) {
  if (dir.empty()) throw ConfigError("no output directory given");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is a file");
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("output directory " + dir.string() +
                        " is not empty (pass --force to overwrite)");
    }
  }
}

void save_dataset(const fs::path& path, const Dataset& train, const Dataset& test,
                  const ChannelStats& stats, const std::string& source) {
  Archive a;
  a.manifest = {{"kind", "dataset"},
                {"source", source},
                {"num_classes", train.num_classes},
                {"channels", train.channels()},
                {"resolution", train.resolution()},
                {"train_records", train.size()},
                {"test_records", test.size()},
                {"mean", stats.mean},
                {"std", stats.stddev}};
  auto labels = [](const Dataset& d) {
    return Tensor<float>(Shape{d.size()}, std::vector<float>(d.labels.begin(), d.labels.end()));
  };
  a.arrays.push_back({"train.images", train.images});
  a.arrays.push_back({"train.labels", labels(train)});
  a.arrays.push_back({"test.images", test.images});
  a.arrays.push_back({"test.labels", labels(test)});
  write_archive(path, a);
}

LoadedData load_data(const DatasetDescriptor& d, const BackboneConfig& backbone) {
  if (d.path.empty()) throw ConfigError("data.path is required");
  if (!fs::exists(d.path)) throw ConfigError("data.path does not exist: " + d.path.string());
  const Archive a = read_archive(d.path);
  if (a.manifest.value("kind", "") != "dataset") {
    throw DataError(d.path.string() + " is not an ingested dataset archive");
  }
  Dataset all;
  all.num_classes = a.manifest.at("num_classes").get<std::size_t>();
  all.images = a.get("train.images");
  for (float v : a.get("train.labels").data()) all.labels.push_back(static_cast<int>(v));
  all.validate();

  if (!d.classes.empty()) {
    all = class_subset(all, d.classes, d.num_classes);
  } else if (d.num_classes) {
    if (d.num_classes < all.num_classes) {
      throw ConfigError("data.num_classes is smaller than the archive's class count");
    }
    all.num_classes = d.num_classes;
  }
  if (all.channels() != backbone.input_channels || all.resolution() != backbone.input_resolution) {
    throw ConfigError("dataset images are " + std::to_string(all.channels()) + "x" +
                      std::to_string(all.resolution()) + "x" + std::to_string(all.resolution()) +
                      " but the backbone expects " + std::to_string(backbone.input_channels) + "x" +
                      std::to_string(backbone.input_resolution) + "x" +
                      std::to_string(backbone.input_resolution));
  }
  if (all.num_classes != backbone.num_classes) {
    throw ConfigError("dataset has " + std::to_string(all.num_classes) +
                      " classes but backbone.num_classes is " +
                      std::to_string(backbone.num_classes));
  }
  auto [train, val] = split_half(all, d.split_seed);
  return {std::move(train), std::move(val)};
}

LatencyTable make_latency_table(const LatencySource& src, const BackboneConfig& backbone) {
  if (src.table) {
    if (!fs::exists(*src.table)) {
      throw ConfigError("latency.table does not exist: " + src.table->string());
    }
    return LatencyTable::load(*src.table, backbone);
  }
  return synth_latency_table(backbone, src.coeff_ms_per_mmac, src.bit_factors, src.overhead_ms);
}

// ---------------------------------------------------------------------------

int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.out.empty()) throw ConfigError("--out is required");
    const fs::path dest = resolve_output(args.out);
    if (fs::exists(dest) && !args.force) {
      throw ConfigError(dest.string() + " exists (pass --force to overwrite)");
    }
    Dataset train, test;
    std::string source;
    if (args.kind == "cifar10") {
      if (args.source.empty()) throw ConfigError("--src is required for cifar10");
      if (!fs::is_directory(args.source)) {
        throw ConfigError("CIFAR-10 directory not found: " + args.source.string());
      }
      train = load_cifar10(args.source, true);
      test = load_cifar10(args.source, false);
      source = "cifar10";
    } else if (args.kind == "synthetic") {
      SyntheticConfig sc = args.synthetic;
      train = make_synthetic(sc);
      if (args.test_samples > 0) {
        sc.samples = args.test_samples;
        sc.sample_seed = args.synthetic.sample_seed + 1;
        test = make_synthetic(sc);
      } else {
        test = subset(train, {});
      }
      source = "synthetic";
    } else {
      throw ConfigError("unknown dataset kind '" + args.kind + "' (expected cifar10 or synthetic)");
    }
    if (args.downsample > 1) {
      train = downsample(train, args.downsample);
      test = downsample(test, args.downsample);
    }
    const ChannelStats stats = channel_stats(train);
    normalize(train, stats);
    if (test.size() > 0) normalize(test, stats);
    save_dataset(dest, train, test, stats, source);
    out << "wrote " << dest.string() << ": " << train.size() << " train + " << test.size()
        << " test records, " << train.num_classes << " classes, " << train.channels() << "x"
        << train.resolution() << "x" << train.resolution() << "\n";
    return kOk;
  });
}

namespace {

RunConfig load_run_config(const SearchArgs& args) {
  if (args.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = run_config_from_json(read_json_file(args.config, true));
  if (args.output) cfg.output = *args.output;
  if (args.seed) cfg.search.rng_seed = *args.seed;
  if (args.epochs) {
    cfg.search.max_epochs = *args.epochs;
    cfg.search.warmup_epochs = std::min(cfg.search.warmup_epochs, *args.epochs);
  }
  if (args.mu) cfg.reward.mu = *args.mu;
  if (args.nu) cfg.reward.nu = *args.nu;
  if (args.mu && !args.nu) cfg.reward.nu = 1.0 - *args.mu;
  if (args.nu && !args.mu) cfg.reward.mu = 1.0 - *args.nu;
  cfg.backbone.validate();
  cfg.search.validate();
  cfg.reward.validate();
  cfg.output = resolve_output(cfg.output);
  return cfg;
}

void write_search_artifacts(const fs::path& dir, const RunConfig& cfg, const SearchResult& r) {
  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.jqar", r.checkpoint);
  write_archive(dir / "subnet.jqar", subnet_to_archive(r.subnet));
  write_text(dir / "result.json", r.to_json().dump(2) + "\n");
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
}

void print_summary(std::ostream& out, const SearchResult& r) {
  out << std::fixed << std::setprecision(4) << "epochs " << r.history.size() << ", final accuracy "
      << r.final_accuracy << ", latency " << r.final_latency_ms << " ms, size "
      << r.model_size_bytes / 1024.0 << " KiB\n";
}

}  // namespace

int cmd_search(const SearchArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(args);
    prepare_output(cfg.output, args.force);
    const LatencyTable table = make_latency_table(cfg.latency, cfg.backbone);
    const LoadedData data = load_data(cfg.data, cfg.backbone);
    const SearchResult r =
        run_search(cfg.search, cfg.reward, cfg.backbone, data.train, data.val, table);
    write_search_artifacts(cfg.output, cfg, r);
    print_summary(out, r);
    out << "artifacts in " << cfg.output.string() << "\n";
    return kOk;
  });
}

int cmd_evolve(const EvolveArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(args.search);
    prepare_output(cfg.output, args.search.force);
    if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    const LatencyTable table = make_latency_table(cfg.latency, cfg.backbone);
    const LoadedData data = load_data(cfg.data, cfg.backbone);
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const EvolveResult ev =
        evolve(ckpt, cfg.search, cfg.reward, cfg.backbone, data.train, data.val, table);
    write_search_artifacts(cfg.output, cfg, ev.result);

    json report = {{"drift", to_json(ev.drift)}};
    std::optional<SearchResult> reference;
    if (args.reference) reference = search_result_from_json(read_json_file(*args.reference, false));
    double target = 0.0;
    if (args.target) {
      target = *args.target;
    } else if (reference && !reference->history.empty()) {
      target = reference->history.back().val_accuracy - 0.01;
    } else if (!ev.result.history.empty()) {
      target = ev.result.history.back().val_accuracy - 0.01;
    }
    const auto mine = epochs_to_target(ev.result.history, target);
    report["target_accuracy"] = target;
    report["epochs_to_target"] = mine ? json(*mine) : json(nullptr);
    if (reference) {
      const auto theirs = epochs_to_target(reference->history, target);
      report["reference_epochs_to_target"] = theirs ? json(*theirs) : json(nullptr);
    }
    write_text(cfg.output / "evolve.json", report.dump(2) + "\n");
    print_summary(out, ev.result);
    out << "epochs to target " << target << ": "
        << (mine ? std::to_string(*mine) : std::string("not reached")) << "\n";
    return kOk;
  });
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.result.empty()) throw ConfigError("--result is required");
    const SearchResult r = search_result_from_json(read_json_file(args.result, false));
    const fs::path dir = resolve_output(args.out);
    prepare_output(dir, args.force);
    fs::create_directories(dir);

    std::ostringstream curves;
    curves << std::setprecision(17) << "epoch,val_acc,expected_latency,reward\n";
    for (const auto& h : r.history) {
      curves << h.epoch << ',' << h.val_accuracy << ',' << h.expected_latency_ms << ','
             << h.mean_reward << '\n';
    }
    write_text(dir / "curves.csv", curves.str());

    const auto flags = non_dominated_flags(r.recent);
    std::ostringstream pareto;
    pareto << std::setprecision(17) << "index,accuracy,latency_ms,reward,non_dominated\n";
    for (std::size_t i = 0; i < r.recent.size(); ++i) {
      pareto << i << ',' << r.recent[i].accuracy << ',' << r.recent[i].latency_ms << ','
             << r.recent[i].reward << ',' << (flags[i] ? 1 : 0) << '\n';
    }
    write_text(dir / "pareto.csv", pareto.str());

    json layers = json::array();
    for (std::size_t i = 0; i < r.spec.layers.size(); ++i) {
      const auto& c = r.spec.layers[i];
      layers.push_back(
          {{"layer", i}, {"kernel", c.arch.kernel}, {"expand", c.arch.expand}, {"bits", c.bits}});
    }
    write_text(dir / "spec.json", json{{"layers", layers}}.dump(2) + "\n");
    out << "wrote curves.csv (" << r.history.size() << " epochs), pareto.csv (" << r.recent.size()
        << " models), spec.json (" << r.spec.layers.size() << " layers) to " << dir.string()
        << "\n";
    return kOk;
  });
}

int cmd_latency(const LatencyArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.config.empty()) throw ConfigError("--config is required");
    const RunConfig cfg = run_config_from_json(read_json_file(args.config, true));
    cfg.backbone.validate();
    if (args.table.empty()) throw ConfigError("--table is required");
    if (args.action == "make-synthetic") {
      const fs::path dest = resolve_output(args.table);
      if (fs::exists(dest) && !args.force) {
        throw ConfigError(dest.string() + " exists (pass --force to overwrite)");
      }
      const LatencyTable t =
          synth_latency_table(cfg.backbone, args.coeff_ms_per_mmac, cfg.latency.bit_factors,
                              args.overhead_ms);
      write_text(dest, t.to_csv());
      out << "wrote " << t.entries.size() << " entries to " << dest.string() << "\n";
      return kOk;
    }
    if (args.action == "validate") {
      if (!fs::exists(args.table)) throw DataError("latency table not found: " + args.table.string());
      const LatencyTable t = LatencyTable::parse_csv(read_file(args.table));
      const auto problems = t.problems(cfg.backbone);
      if (!problems.empty()) {
        err << "latency table " << args.table.string() << " has " << problems.size()
            << " problems:\n";
        for (const auto& p : problems) err << "  " << p << "\n";
        return kDataError;
      }
      out << "latency table " << args.table.string() << " is valid (" << t.entries.size()
          << " entries)\n";
      return kOk;
    }
    throw ConfigError("unknown latency action '" + args.action +
                      "' (expected make-synthetic or validate)");
  });
}

}  // namespace jqas::cli
