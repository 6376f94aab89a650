#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fixture.hpp"
#include "instopt/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic demo workspace for the instopt pipeline"};
  instopt::fixture::DemoSpec spec;
  std::string out_dir = "demo";
  app.add_option("--out-dir", out_dir, "Directory to create")->capture_default_str();
  app.add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  app.add_option("--near-duplicates", spec.near_duplicates, "Planted near-duplicates")
      ->capture_default_str();
  app.add_option("--instances", spec.instances_per_category, "Eval instances per category")
      ->capture_default_str();
  app.add_option("--target-size", spec.target_size, "optimize.target_size in the config")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    instopt::fixture::write_demo(out_dir, spec);
  } catch (const std::exception& e) {
    std::cerr << instopt::error_json(e, "fixture") << '\n';
    return instopt::exit_code_for(e);
  }
  std::cout << "wrote demo workspace to " << out_dir << '\n';
  return 0;
}
