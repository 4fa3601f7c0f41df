#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tvmagi/config.hpp"
#include "tvmagi/errors.hpp"
#include "tvmagi/runner.hpp"

namespace {

struct Cli {
  std::string config_path;
  std::string method = "tvmagi";
  std::string data_path;
  std::string result_dir;
  std::string out_dir;
  std::string reference_path;
  std::int64_t seed = -1;
  int workers = 0;
  int level = 0;
  double nu_theta = 0.0;
  bool skip_hmc = false;
};

// flags override the parsed config; seed shifts every stochastic stage
tvmagi::RunConfig effective_config(const Cli& cli) {
  tvmagi::RunConfig cfg;
  if (!cli.config_path.empty()) cfg = tvmagi::parse_config_file(cli.config_path);
  if (cli.seed >= 0) {
    cfg.sim_seed = static_cast<std::uint64_t>(cli.seed);
    cfg.tvmagi.seed = static_cast<std::uint64_t>(cli.seed);
    cfg.filter.seed = static_cast<std::uint64_t>(cli.seed);
  }
  if (cli.skip_hmc) cfg.tvmagi.skip_hmc = true;
  if (cli.level > 0) cfg.tvmagi.discretization_level = cli.level;
  if (cli.nu_theta > 0.0) cfg.tvmagi.nu_theta = cli.nu_theta;
  if (cli.workers > 0) cfg.workers = cli.workers;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-varying ODE parameter inference"};
  app.require_subcommand(0, 1);
  Cli cli;

  app.add_option("--write-config-reference", cli.reference_path,
                 "write every config key with its default value to this path and exit");

  CLI::App* sim = app.add_subcommand("simulate", "generate a noisy dataset from a case study");
  sim->add_option("--config", cli.config_path, "config file");
  sim->add_option("--seed", cli.seed, "override every seed in the config");
  sim->add_option("--out-dir", cli.out_dir, "output directory")->required();

  CLI::App* inf = app.add_subcommand("infer", "fit one method to a dataset");
  inf->add_option("--config", cli.config_path, "config file");
  inf->add_option("--method", cli.method, "tvmagi | rk4 | ekf | ukf | enkf | eakf");
  inf->add_option("--data", cli.data_path, "dataset directory or observations file")->required();
  inf->add_option("--out-dir", cli.out_dir, "output directory")->required();
  inf->add_option("--seed", cli.seed, "override every seed in the config");
  inf->add_flag("--skip-hmc", cli.skip_hmc, "point estimates only, no sampled intervals");
  inf->add_option("--discretization-level", cli.level, "grid points per observation gap");
  inf->add_option("--nu-theta", cli.nu_theta, "kernel smoothness of the parameter process");

  CLI::App* rep = app.add_subcommand("replicate", "simulate + fit + score, many replications");
  rep->add_option("--config", cli.config_path, "config file");
  rep->add_option("--method", cli.method, "tvmagi | rk4 | ekf | ukf | enkf | eakf");
  rep->add_option("--out-dir", cli.out_dir, "output directory")->required();
  rep->add_option("--seed", cli.seed, "override every seed in the config");
  rep->add_option("--workers", cli.workers, "parallel replications");
  rep->add_flag("--skip-hmc", cli.skip_hmc, "point estimates only, no sampled intervals");
  rep->add_option("--discretization-level", cli.level, "grid points per observation gap");
  rep->add_option("--nu-theta", cli.nu_theta, "kernel smoothness of the parameter process");

  CLI::App* ev = app.add_subcommand("evaluate", "score an inference result against the truth");
  ev->add_option("--config", cli.config_path, "config file");
  ev->add_option("--data", cli.data_path, "dataset directory")->required();
  ev->add_option("--result", cli.result_dir, "inference output directory")->required();
  ev->add_option("--out-dir", cli.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!cli.reference_path.empty()) {
      std::ofstream out(cli.reference_path, std::ios::binary);
      if (!out) throw tvmagi::IoError("cannot write " + cli.reference_path);
      out << tvmagi::config_reference();
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 2;
    }
    tvmagi::RunConfig cfg = effective_config(cli);
    if (sim->parsed()) {
      tvmagi::cmd_simulate(cfg, cli.out_dir);
    } else if (inf->parsed()) {
      tvmagi::MethodRun run = tvmagi::cmd_infer(cfg, cli.method, cli.data_path, cli.out_dir);
      std::cerr << cli.method << " finished in " << run.wall_clock_sec << "s\n";
    } else if (ev->parsed()) {
      tvmagi::cmd_evaluate(cfg, cli.data_path, cli.result_dir, cli.out_dir);
    } else if (rep->parsed()) {
      int failed = tvmagi::cmd_replicate(cfg, cli.method, cli.out_dir);
      if (failed > 0)
        std::cerr << failed << " of " << cfg.replications << " replications failed\n";
      if (failed == cfg.replications) return 3;
    }
    return 0;
  } catch (const tvmagi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
