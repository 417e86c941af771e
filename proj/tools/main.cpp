#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace jqas::cli;

namespace {

void add_search_options(CLI::App* cmd, SearchArgs& a) {
  cmd->add_option("-c,--config", a.config, "run config (JSON)")->required();
  cmd->add_option("-o,--output", a.output, "output directory (overrides config)");
  cmd->add_option("--seed", a.seed, "rng seed");
  cmd->add_option("--epochs", a.epochs, "search epochs");
  cmd->add_option("--mu", a.mu, "latency weight");
  cmd->add_option("--nu", a.nu, "accuracy weight");
  cmd->add_flag("-f,--force", a.force, "overwrite a non-empty output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint architecture and mixed-precision search"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ing = app.add_subcommand("ingest", "decode, normalize and archive a dataset");
  ing->add_option("kind", ingest.kind, "cifar10 | synthetic")->required();
  ing->add_option("--src", ingest.source, "CIFAR-10 binary directory");
  ing->add_option("--out", ingest.out, "archive path")->required();
  ing->add_option("--downsample", ingest.downsample, "average-pool factor");
  ing->add_option("--classes", ingest.synthetic.num_classes, "synthetic classes");
  ing->add_option("--samples", ingest.synthetic.samples, "synthetic train samples");
  ing->add_option("--test-samples", ingest.test_samples, "synthetic held-out samples");
  ing->add_option("--resolution", ingest.synthetic.resolution, "synthetic image size");
  ing->add_option("--noise", ingest.synthetic.noise, "synthetic noise std");
  ing->add_option("--modes", ingest.synthetic.modes_per_class, "synthetic templates per class");
  ing->add_option("--seed", ingest.synthetic.seed, "synthetic template seed");
  ing->add_option("--sample-seed", ingest.synthetic.sample_seed, "synthetic sample seed");
  ing->add_flag("-f,--force", ingest.force, "overwrite an existing archive");

  SearchArgs search;
  auto* srch = app.add_subcommand("search", "run search, retrain and write artifacts");
  add_search_options(srch, search);

  EvolveArgs evolve;
  auto* evo = app.add_subcommand("evolve", "warm-start a search from a checkpoint");
  add_search_options(evo, evolve.search);
  evo->add_option("--checkpoint", evolve.checkpoint, "checkpoint from a previous stage")
      ->required();
  evo->add_option("--reference", evolve.reference, "from-scratch result.json to compare with");
  evo->add_option("--target", evolve.target, "accuracy target for epochs-to-target");

  ReportArgs report;
  auto* rep = app.add_subcommand("report", "write curves, Pareto data and the per-layer spec");
  rep->add_option("result", report.result, "result.json")->required();
  rep->add_option("-o,--out", report.out, "report directory")->required();
  rep->add_flag("-f,--force", report.force, "overwrite a non-empty report directory");

  LatencyArgs latency;
  auto* lat = app.add_subcommand("latency", "generate or validate a latency table");
  lat->add_option("action", latency.action, "make-synthetic | validate")->required();
  lat->add_option("-c,--config", latency.config, "run config providing the backbone")->required();
  lat->add_option("-t,--table", latency.table, "table CSV")->required();
  lat->add_option("--coeff", latency.coeff_ms_per_mmac, "ms per million MACs");
  lat->add_option("--overhead", latency.overhead_ms, "fixed overhead in ms");
  lat->add_flag("-f,--force", latency.force, "overwrite an existing table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (*ing) return cmd_ingest(ingest, std::cout, std::cerr);
  if (*srch) return cmd_search(search, std::cout, std::cerr);
  if (*evo) return cmd_evolve(evolve, std::cout, std::cerr);
  if (*rep) return cmd_report(report, std::cout, std::cerr);
  return cmd_latency(latency, std::cout, std::cerr);
}
