// SPDX-License-Identifier: Apache-2.0
//
// tilecl verify | bench | demo
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tilecl/errors.hpp"
#include "tilecl/harness.hpp"

int main(int argc, char** argv) {
  using namespace tilecl;

  CLI::App app{"Tiled contrastive loss: oracle verification, memory sweeps and demo runs"};
  app.set_config("--config", "", "TOML/INI file with flag defaults (command-line flags win)");
  app.require_subcommand(1, 1);

  RunConfig cfg;
  std::vector<std::string> strategies;
  std::string dtype = "f64";
  std::string fault = "none";
  std::string features, output, gnuplot;

  app.add_option("--batch-size", cfg.batch_sizes, "Batch size b (bench: ascending comma list)")
      ->delimiter(',');
  app.add_option("--dim", cfg.dim, "Feature dimension c");
  app.add_option("--workers", cfg.workers, "Ring workers n");
  app.add_option("--tile-rows", cfg.tile_rows, "Tile rows t_r");
  app.add_option("--tile-cols", cfg.tile_cols, "Tile columns t_c");
  app.add_option("--strategy", strategies, "vanilla|local|cross|inf (bench: comma list)")
      ->delimiter(',')
      ->check(CLI::IsMember({"vanilla", "local", "cross", "inf"}));
  app.add_option("--scale", cfg.scale, "Similarity scale (inverse temperature)");
  app.add_option("--seed", cfg.seed, "Feature generation seed");
  app.add_option("--dtype", dtype, "Floating type")->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--bidirectional", cfg.bidirectional, "Also run the text->image direction");
  app.add_option("--backbone-bytes", cfg.backbone_bytes, "Backbone memory for the peak formula");
  app.add_option("--repeats", cfg.repeats, "Timing repeats per bench configuration");
  app.add_option("--mem-ceiling-bytes", cfg.mem_ceiling_bytes,
                 "Tracked loss-buffer ceiling; bench rows above it report oom");
  app.add_option("--parallelism", cfg.parallelism, "OpenMP threads per worker (0 = auto)");
  app.add_option("--features-file", features, "TLSE binary feature file to use instead of --seed");
  app.add_option("--output", output, "Write CSV here instead of stdout (bench)");
  app.add_option("--gnuplot", gnuplot, "Also write a gnuplot script for the bench CSV");
  app.add_option("--inject-fault", fault, "Deliberate fault for mutation testing (verify)")
      ->check(CLI::IsMember({"none", "merge-sign", "schedule-off-by-one", "no-max-shift"}));

  auto* verify = app.add_subcommand("verify", "Run the property suite against the oracle");
  auto* bench = app.add_subcommand("bench", "Sweep batch sizes and emit memory CSV");
  auto* demo = app.add_subcommand("demo", "Run one configuration and print a summary");
  for (auto* sub : {verify, bench, demo}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    for (const auto& s : strategies) cfg.strategies.push_back(*parse_strategy(s));
    cfg.dtype_width = dtype == "f32" ? 4 : 8;
    cfg.fault = *parse_fault(fault);
    if (!features.empty()) cfg.features_file = features;
    if (!output.empty()) cfg.output = output;
    if (!gnuplot.empty()) cfg.gnuplot = gnuplot;

    if (verify->parsed()) return cmd_verify(cfg, std::cout);
    if (bench->parsed()) return cmd_bench(cfg, std::cout, std::cerr);
    return cmd_demo(cfg, std::cout);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIoError;
  } catch (const Error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfigError;
  }
}
