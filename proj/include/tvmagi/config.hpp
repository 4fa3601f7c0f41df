#pragma once

#include <string>

#include "tvmagi/adam.hpp"
#include "tvmagi/filters.hpp"
#include "tvmagi/pipeline.hpp"

namespace tvmagi {

// One experiment, fully determined: which case study, how to simulate, and
// how each method is tuned. Parsed from a sectioned key-value text file.
struct RunConfig {
  // [model]
  std::string model_name = "lv";

  // [simulate]
  std::uint64_t sim_seed = 1;
  double noise = -1.0;    // observation noise level; < 0 keeps the case study default
  int sim_substeps = 40;

  // [tvmagi]
  TvmagiConfig tvmagi;

  // [filter]
  FilterConfig filter;

  // [rk4] least-squares benchmark
  AdamConfig rk_opt;
  int rk_substeps = 10;

  // [replicate]
  int replications = 10;
  int workers = 1;

  RunConfig() {
    rk_opt.lr = 0.05;
    rk_opt.max_iters = 20000;
    rk_opt.tol = 1e-9;
    rk_opt.stall_window = 200;
  }
};

RunConfig parse_config_file(const std::string& path);
// `label` stands in for the file name in error messages
RunConfig parse_config_text(const std::string& text, const std::string& label);

// every section and key with its default value, as parseable config text
std::string config_reference();

}  // namespace tvmagi
