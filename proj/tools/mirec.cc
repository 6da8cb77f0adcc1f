// Command-line driver for the retrieval pipeline.
//
//   mirec [--config PATH] [--set KEY=VALUE]... [--seed N] [--mode MODE] <stage>

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mirec/errors.h"
#include "mirec/pipeline.h"

int main(int argc, char** argv) {
  CLI::App app{"Multi-index generative retrieval pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string mode;
  bool synthetic = false;
  bool verbose = false;
  app.add_option("--config", config_path, "Config file of 'section.key = value' lines")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one setting, section.key=value");
  app.add_option("--seed", seed, "Global seed (run.seed)");
  app.add_option("--mode", mode, "Fusion mode for rerank")
      ->check(CLI::IsMember({"full", "ceid-only", "seid-only", "conf-only", "cons-only"}));
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  const char* stages[] = {"prepare", "embed-collab", "build-index", "train-scorers",
                          "retrieve", "rerank",      "evaluate",    "analyze", "all"};
  for (const char* name : stages) {
    auto* sub = app.add_subcommand(name);
    if (std::string(name) == "prepare" || std::string(name) == "all")
      sub->add_flag("--synthetic", synthetic, "Generate a seeded synthetic dataset");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string stage_name = app.get_subcommands().front()->get_name();

  try {
    auto cfg = config_path.empty() ? mirec::PipelineConfig()
                                   : mirec::load_pipeline_config(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (!seed.empty()) cfg.set("run.seed", seed);
    if (!mode.empty()) cfg.set("rerank.mode", mode);
    mirec::run_stage(mirec::parse_stage(stage_name), cfg, {synthetic, verbose});
  } catch (const mirec::ConfigError& e) {
    std::cerr << "mirec " << stage_name << ": config error: " << e.what() << '\n';
    return 2;
  } catch (const mirec::MissingArtifactError& e) {
    std::cerr << "mirec " << stage_name << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "mirec " << stage_name << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
