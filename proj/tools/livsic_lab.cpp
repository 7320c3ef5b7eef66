// livsic-lab <experiment> --config <path> [--seed S] [--out DIR]

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "livsic/lab.hpp"

namespace lab = livsic::lab;

int main(int argc, char** argv) {
  CLI::App app{"Experiments on skew products over hyperbolic bases"};
  std::string experiment, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("experiment", experiment, "experiment name")
      ->required()
      ->check(CLI::IsMember(lab::experiments()));
  app.add_option("--config", config_path, "JSON config")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out_dir, "output directory (default: config 'output', else ./out)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  lab::ResolvedConfig cfg;
  try {
    cfg = lab::load_config(config_path, experiment, seed);
  } catch (const livsic::Error& e) {
    std::cerr << e.what() << "\n";
    return livsic::exit_code(e.code());
  }
  const std::filesystem::path dir = !out_dir.empty() ? out_dir : (!cfg.output.empty() ? cfg.output : "out");
  const int workers = livsic::default_workers();
  const auto t0 = std::chrono::steady_clock::now();
  int rc = 0;
  try {
    const auto out = lab::run(cfg, workers);
    lab::write_outputs(dir, out);
    rc = out.exit_code;
    std::cout << experiment << ": " << out.report.at("verdict").get<std::string>() << "\n";
  } catch (const livsic::Error& e) {
    std::cerr << e.what() << "\n";
    rc = livsic::exit_code(e.code());
    try {
      std::filesystem::create_directories(dir);
      lab::write_text(dir / "report.json", lab::report_text(lab::error_report(cfg, e)));
    } catch (const std::exception&) {
    }
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 5;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    const lab::json timing{{"wall_seconds", secs}, {"workers", workers}, {"output", dir.string()}};
    lab::write_text(dir / "timing.json", timing.dump(2) + "\n");
  } catch (const std::exception&) {
  }
  return rc;
}
