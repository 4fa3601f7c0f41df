#include "tvmagi/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "tvmagi/csv.hpp"
#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

struct Cursor {
  std::string label;
  int line = 0;
};

[[noreturn]] void fail(const Cursor& c, const std::string& msg) {
  throw ConfigError(c.label + ":" + std::to_string(c.line) + ": " + msg);
}

double num(const Cursor& c, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    fail(c, "expected a number, got '" + v + "'");
  }
}

int integer(const Cursor& c, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    fail(c, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t unsigned64(const Cursor& c, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    fail(c, "expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool boolean(const Cursor& c, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(c, "expected true or false, got '" + v + "'");
}

Eigen::VectorXd number_list(const Cursor& c, const std::string& v) {
  std::vector<double> vals;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    std::string cell = trim(comma == std::string::npos ? v.substr(start)
                                                       : v.substr(start, comma - start));
    if (!cell.empty()) vals.push_back(num(c, cell));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<int>(vals.size()));
}

void apply(RunConfig& cfg, const Cursor& c, const std::string& section, const std::string& key,
           const std::string& value) {
  TvmagiConfig& tv = cfg.tvmagi;
  if (section == "model") {
    if (key == "name") {
      cfg.model_name = value;
      return;
    }
  } else if (section == "simulate") {
    if (key == "seed") {
      cfg.sim_seed = unsigned64(c, value);
      return;
    }
    if (key == "noise") {
      cfg.noise = num(c, value);
      return;
    }
    if (key == "substeps") {
      cfg.sim_substeps = integer(c, value);
      return;
    }
  } else if (section == "tvmagi") {
    if (key == "discretization_level") {
      tv.discretization_level = integer(c, value);
      return;
    }
    if (key == "nu_x") {
      tv.nu_x = num(c, value);
      return;
    }
    if (key == "nu_theta") {
      tv.nu_theta = num(c, value);
      return;
    }
    if (key == "theta_phi2_lo") {
      tv.theta_phi2_bounds.lo = num(c, value);
      return;
    }
    if (key == "theta_phi2_hi") {
      tv.theta_phi2_bounds.hi = num(c, value);
      return;
    }
    if (key == "stage1_lr") {
      tv.adam_stage1.lr = num(c, value);
      return;
    }
    if (key == "stage1_iters") {
      tv.adam_stage1.max_iters = integer(c, value);
      return;
    }
    if (key == "stage2_lr") {
      tv.adam_stage2.lr = num(c, value);
      return;
    }
    if (key == "stage2_iters") {
      tv.adam_stage2.max_iters = integer(c, value);
      return;
    }
    if (key == "stage4_lr") {
      tv.adam_stage4.lr = num(c, value);
      return;
    }
    if (key == "stage4_iters") {
      tv.adam_stage4.max_iters = integer(c, value);
      return;
    }
    if (key == "stage4_polish") {
      tv.stage4_polish = integer(c, value);
      return;
    }
    if (key == "hmc_step_size") {
      tv.hmc.step_size = num(c, value);
      return;
    }
    if (key == "hmc_leapfrog_steps") {
      tv.hmc.leapfrog_steps = integer(c, value);
      return;
    }
    if (key == "hmc_samples") {
      tv.hmc.n_samples = integer(c, value);
      return;
    }
    if (key == "hmc_burn_in_ratio") {
      tv.hmc.burn_in_ratio = num(c, value);
      return;
    }
    if (key == "hmc_seed") {
      tv.hmc.seed = unsigned64(c, value);
      return;
    }
    if (key == "skip_hmc") {
      tv.skip_hmc = boolean(c, value);
      return;
    }
    if (key == "sigma_floor") {
      tv.sigma_floor = num(c, value);
      return;
    }
    if (key == "jitter") {
      tv.jitter = num(c, value);
      return;
    }
    if (key == "seed") {
      tv.seed = unsigned64(c, value);
      return;
    }
  } else if (section == "filter") {
    if (key == "method") {
      cfg.filter.method = parse_filter_method(value);
      return;
    }
    if (key == "ensemble_size") {
      cfg.filter.ensemble_size = integer(c, value);
      return;
    }
    if (key == "inflation") {
      cfg.filter.inflation = num(c, value);
      return;
    }
    if (key == "seed") {
      cfg.filter.seed = unsigned64(c, value);
      return;
    }
    if (key == "substeps") {
      cfg.filter.substeps = integer(c, value);
      return;
    }
    if (key == "param_walk_sd") {
      cfg.filter.param_walk_sd = number_list(c, value);
      return;
    }
    if (key == "state_process_sd") {
      cfg.filter.state_process_sd = number_list(c, value);
      return;
    }
    if (key == "obs_sd") {
      cfg.filter.obs_sd = number_list(c, value);
      return;
    }
  } else if (section == "rk4") {
    if (key == "lr") {
      cfg.rk_opt.lr = num(c, value);
      return;
    }
    if (key == "iters") {
      cfg.rk_opt.max_iters = integer(c, value);
      return;
    }
    if (key == "substeps") {
      cfg.rk_substeps = integer(c, value);
      return;
    }
  } else if (section == "replicate") {
    if (key == "n") {
      cfg.replications = integer(c, value);
      return;
    }
    if (key == "workers") {
      cfg.workers = integer(c, value);
      return;
    }
  } else {
    fail(c, "unknown section [" + section + "]");
  }
  fail(c, "unknown key '" + key + "' in [" + section + "]");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& label) {
  RunConfig cfg;
  Cursor c{label, 0};
  std::string section;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++c.line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(c, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(c, "empty section name");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(c, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(c, "empty key");
    if (section.empty()) fail(c, "key '" + key + "' appears before any [section]");
    if (!seen.insert(section + "." + key).second)
      fail(c, "duplicate key '" + key + "' in [" + section + "]");
    apply(cfg, c, section, key, value);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string config_reference() {
  RunConfig d;
  std::ostringstream out;
  auto fd = [](double v) { return format_double(v); };
  out << "# every section and key with its default value\n";
  out << "\n[model]\n";
  out << "# case study: seird | lv | hiv\n";
  out << "name = " << d.model_name << "\n";
  out << "\n[simulate]\n";
  out << "seed = " << d.sim_seed << "\n";
  out << "# observation noise level on the log scale; negative keeps the case study default\n";
  out << "noise = " << fd(d.noise) << "\n";
  out << "substeps = " << d.sim_substeps << "\n";
  out << "\n[tvmagi]\n";
  out << "discretization_level = " << d.tvmagi.discretization_level << "\n";
  out << "nu_x = " << fd(d.tvmagi.nu_x) << "\n";
  out << "nu_theta = " << fd(d.tvmagi.nu_theta) << "\n";
  out << "# bandwidth bounds for the time-varying parameter kernels; hi = 0 picks them\n";
  out << "# from the grid spacing\n";
  out << "theta_phi2_lo = " << fd(d.tvmagi.theta_phi2_bounds.lo) << "\n";
  out << "theta_phi2_hi = " << fd(d.tvmagi.theta_phi2_bounds.hi) << "\n";
  out << "stage1_lr = " << fd(d.tvmagi.adam_stage1.lr) << "\n";
  out << "stage1_iters = " << d.tvmagi.adam_stage1.max_iters << "\n";
  out << "stage2_lr = " << fd(d.tvmagi.adam_stage2.lr) << "\n";
  out << "stage2_iters = " << d.tvmagi.adam_stage2.max_iters << "\n";
  out << "stage4_lr = " << fd(d.tvmagi.adam_stage4.lr) << "\n";
  out << "stage4_iters = " << d.tvmagi.adam_stage4.max_iters << "\n";
  out << "stage4_polish = " << d.tvmagi.stage4_polish << "\n";
  out << "hmc_step_size = " << fd(d.tvmagi.hmc.step_size) << "\n";
  out << "hmc_leapfrog_steps = " << d.tvmagi.hmc.leapfrog_steps << "\n";
  out << "hmc_samples = " << d.tvmagi.hmc.n_samples << "\n";
  out << "hmc_burn_in_ratio = " << fd(d.tvmagi.hmc.burn_in_ratio) << "\n";
  out << "hmc_seed = " << d.tvmagi.hmc.seed << "\n";
  out << "skip_hmc = " << (d.tvmagi.skip_hmc ? "true" : "false") << "\n";
  out << "sigma_floor = " << fd(d.tvmagi.sigma_floor) << "\n";
  out << "jitter = " << fd(d.tvmagi.jitter) << "\n";
  out << "seed = " << d.tvmagi.seed << "\n";
  out << "\n[filter]\n";
  out << "# ekf | ukf | enkf | eakf\n";
  out << "method = " << filter_method_name(d.filter.method) << "\n";
  out << "ensemble_size = " << d.filter.ensemble_size << "\n";
  out << "inflation = " << fd(d.filter.inflation) << "\n";
  out << "seed = " << d.filter.seed << "\n";
  out << "substeps = " << d.filter.substeps << "\n";
  out << "# per-parameter random walk; empty picks two percent of the initial magnitude\n";
  out << "param_walk_sd =\n";
  out << "# per-component additive process noise; empty means zero\n";
  out << "state_process_sd =\n";
  out << "# per-component observation noise; empty derives it from the noise level\n";
  out << "obs_sd =\n";
  out << "\n[rk4]\n";
  out << "lr = " << fd(d.rk_opt.lr) << "\n";
  out << "iters = " << d.rk_opt.max_iters << "\n";
  out << "substeps = " << d.rk_substeps << "\n";
  out << "\n[replicate]\n";
  out << "n = " << d.replications << "\n";
  out << "workers = " << d.workers << "\n";
  return out.str();
}

}  // namespace tvmagi
