#include "sapg_cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sapg/error.hpp"
#include "sapg/sampler.hpp"

namespace sapg::cli {

std::string to_string(Problem p) {
  switch (p) {
    case Problem::denoise_synthesis_l1:
      return "denoise_synthesis_l1";
    case Problem::deblur_tv:
      return "deblur_tv";
    case Problem::deblur_wavelet_l1:
      return "deblur_wavelet_l1";
    case Problem::deblur_tv_unknown_sigma:
      return "deblur_tv_unknown_sigma";
    case Problem::custom:
      return "custom";
  }
  return "custom";
}

Problem problem_from_string(const std::string& s) {
  for (auto p : {Problem::denoise_synthesis_l1, Problem::deblur_tv, Problem::deblur_wavelet_l1,
                 Problem::deblur_tv_unknown_sigma, Problem::custom}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorKind::config, "experiment.problem: unknown problem '" + s + "'");
}

ExperimentConfig preset(Problem problem) {
  ExperimentConfig c;
  c.problem = problem;
  auto& s = c.sapg;
  s.theta0 = {1.0};
  s.stop = {1e-3, 1000};
  switch (problem) {
    case Problem::denoise_synthesis_l1:
      c.input = {"synthetic", 256, 256, "laplace_coefficients", 1.0};
      c.model.op = "synthesis";
      c.model.regulariser = "l1";
      c.model.wavelet_kind = WaveletKind::orthogonal;
      c.model.wavelet_levels = 4;
      c.theta_min = 1e-3;
      c.theta_max = 100.0;
      s.algorithm = Algorithm::alg1;
      s.theta0 = {0.5};
      s.weights.n0 = 20;
      s.stop.max_iters = 500;
      s.log_scale = false;
      break;
    case Problem::deblur_tv:
    case Problem::deblur_tv_unknown_sigma:
      c.input = {"synthetic", 128, 128, "phantom", 1.0};
      c.model.op = "blur";
      c.model.regulariser = "tv";
      c.model.blur_size = 9;
      c.model.lipschitz_factor = 0.99 * 0.99;
      c.model.pgm_maxval = 255;
      c.theta_min = 1e-4;
      c.theta_max = 10.0;
      s.algorithm = problem == Problem::deblur_tv ? Algorithm::alg1 : Algorithm::alg4;
      s.theta0 = {0.01};
      s.warmup = 300;
      s.weights.n0 = 25;
      s.log_scale = true;
      s.kernel.lambda_factor = 5.0;
      s.kernel.lambda_cap = 2.0;
      c.c0_over_d = 10.0;
      s.stop.max_iters = 3000;
      s.sigma.stages = 3;
      s.sigma.tolerance = 1e-3;
      c.sigma_c0_over_d = 10.0;
      break;
    case Problem::deblur_wavelet_l1:
      c.input = {"synthetic", 128, 128, "phantom", 1.0};
      c.model.op = "blur_synthesis";
      c.model.regulariser = "l1";
      c.model.blur_size = 9;
      c.model.wavelet_kind = WaveletKind::undecimated;
      c.model.wavelet_levels = 3;
      c.model.lipschitz_factor = 0.98 * 0.98;
      c.model.pgm_maxval = 255;
      c.theta_min = 1e-4;
      c.theta_max = 10.0;
      s.algorithm = Algorithm::alg1;
      s.theta0 = {0.01};
      s.warmup = 0;
      s.weights.n0 = 20;
      s.log_scale = true;
      s.kernel.lambda_factor = 5.0;
      c.c0_over_d = 10.0;
      s.stop.max_iters = 3000;
      break;
    case Problem::custom:
      break;
  }
  return c;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::uint64_t repetition_seed(std::uint64_t master_seed, std::size_t rep) {
  return splitmix64(master_seed + static_cast<std::uint64_t>(rep));
}

namespace {

using Setter = std::function<void(const std::string&)>;

double to_double(const std::string& field, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, field + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t to_count(const std::string& field, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, field + ": expected a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::config, field + ": expected true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& field, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(to_double(field, item.substr(b, e - b + 1)));
  }
  return out;
}

std::map<std::string, Setter> setters(ExperimentConfig& c) {
  std::map<std::string, Setter> m;
  auto& s = c.sapg;
  auto num = [&m](const std::string& key, double& target) {
    m[key] = [key, &target](const std::string& v) { target = to_double(key, v); };
  };
  auto count = [&m](const std::string& key, std::size_t& target) {
    m[key] = [key, &target](const std::string& v) { target = static_cast<std::size_t>(to_count(key, v)); };
  };
  auto flag = [&m](const std::string& key, bool& target) {
    m[key] = [key, &target](const std::string& v) { target = to_bool(key, v); };
  };
  auto text = [&m](const std::string& key, std::string& target) {
    m[key] = [&target](const std::string& v) { target = v; };
  };
  auto opt = [&m](const std::string& key, std::optional<double>& target) {
    m[key] = [key, &target](const std::string& v) {
      if (v.empty() || v == "auto") {
        target.reset();
      } else {
        target = to_double(key, v);
      }
    };
  };

  count("experiment.repetitions", c.repetitions);
  m["experiment.master_seed"] = [&c](const std::string& v) { c.master_seed = to_count("experiment.master_seed", v); };
  m["experiment.output_dir"] = [&c](const std::string& v) { c.output_dir = v; };
  count("experiment.workers", c.workers);

  text("input.source", c.input.source);
  count("input.rows", c.input.rows);
  count("input.cols", c.input.cols);
  text("input.generator", c.input.generator);
  num("input.true_theta", c.input.true_theta);
  count("input.prior_steps", c.input.prior_steps);

  m["noise.kind"] = [&c](const std::string& v) { c.noise.kind = noise_kind_from_string(v); };
  num("noise.snr_db", c.noise.snr_db);

  text("model.likelihood", c.model.likelihood);
  text("model.operator", c.model.op);
  text("model.regulariser", c.model.regulariser);
  count("model.blur_size", c.model.blur_size);
  m["model.wavelet_kind"] = [&c](const std::string& v) {
    if (v == "orthogonal") {
      c.model.wavelet_kind = WaveletKind::orthogonal;
    } else if (v == "undecimated") {
      c.model.wavelet_kind = WaveletKind::undecimated;
    } else {
      throw Error(ErrorKind::config, "model.wavelet_kind: expected orthogonal|undecimated, got '" + v + "'");
    }
  };
  count("model.wavelet_levels", c.model.wavelet_levels);
  num("model.lipschitz_factor", c.model.lipschitz_factor);
  num("model.laplace_smoothing", c.model.laplace_smoothing);
  count("model.tv_inner_iters", c.model.tv_inner_iters);
  flag("model.tv_warm_start", c.model.tv_warm_start);
  num("model.fixed_ridge", c.model.fixed_ridge);
  num("model.elastic_rho", c.model.elastic_rho);
  num("model.squared_coefficient", c.model.squared_coefficient);
  m["model.pgm_maxval"] = [&c](const std::string& v) {
    c.model.pgm_maxval = static_cast<int>(to_count("model.pgm_maxval", v));
  };

  m["sapg.algorithm"] = [&s](const std::string& v) { s.algorithm = algorithm_from_string(v); };
  m["sapg.theta0"] = [&s](const std::string& v) { s.theta0 = to_list("sapg.theta0", v); };
  num("sapg.theta_min", c.theta_min);
  num("sapg.theta_max", c.theta_max);
  opt("sapg.c0", c.c0);
  opt("sapg.c0_over_d", c.c0_over_d);
  num("sapg.exponent", s.schedule.exponent);
  m["sapg.scale"] = [&s](const std::string& v) { s.schedule.scale = to_list("sapg.scale", v); };
  count("sapg.n0", s.weights.n0);
  count("sapg.n1", s.weights.n1);
  m["sapg.tail"] = [&s](const std::string& v) { s.weights.tail = weight_tail_from_string(v); };
  num("sapg.tolerance", s.stop.tolerance);
  count("sapg.max_iters", s.stop.max_iters);
  count("sapg.warmup", s.warmup);
  count("sapg.samples_per_iteration", s.samples_per_iteration);
  count("sapg.posterior_thinning", s.posterior_thinning);
  count("sapg.prior_thinning", s.prior_thinning);
  flag("sapg.log_scale", s.log_scale);
  num("sapg.lambda_factor", s.kernel.lambda_factor);
  num("sapg.lambda_cap", s.kernel.lambda_cap);
  num("sapg.gamma_fraction", s.kernel.gamma_fraction);
  num("sapg.prior_gamma_fraction", s.kernel.prior_gamma_fraction);
  opt("sapg.gamma", s.kernel.gamma);
  opt("sapg.lambda", s.kernel.lambda);
  opt("sapg.prior_gamma", s.kernel.prior_gamma);
  opt("sapg.prior_lambda", s.kernel.prior_lambda);
  flag("sapg.smooth_gradient", s.kernel.smooth_gradient);
  flag("sapg.enforce_stability", s.kernel.enforce_stability);
  flag("sapg.record_chains", s.record_chains);

  num("sigma.snr_min_db", c.sigma_snr_min_db);
  num("sigma.snr_max_db", c.sigma_snr_max_db);
  num("sigma.c0_over_d", c.sigma_c0_over_d);
  num("sigma.exponent", s.sigma.schedule.exponent);
  count("sigma.stages", s.sigma.stages);
  num("sigma.tolerance", s.sigma.tolerance);

  num("map.tol", c.map.tol);
  count("map.max_iters", c.map.max_iters);
  flag("map.monotone", c.map.monotone);

  count("sweep.points", c.sweep.points);
  num("sweep.low_factor", c.sweep.low_factor);
  num("sweep.high_factor", c.sweep.high_factor);
  m["sweep.theta"] = [&c](const std::string& v) { c.sweep.theta = to_list("sweep.theta", v); };
  return m;
}

void validate(const ExperimentConfig& c) {
  if (c.repetitions == 0) throw Error(ErrorKind::config, "experiment.repetitions: must be >= 1");
  if (c.workers == 0) throw Error(ErrorKind::config, "experiment.workers: must be >= 1");
  if (c.input.rows == 0 || c.input.cols == 0) throw Error(ErrorKind::config, "input.rows/cols: must be >= 1");
  if (!(c.theta_min > 0.0) || !(c.theta_max >= c.theta_min)) {
    throw Error(ErrorKind::config, "sapg.theta_min/theta_max: need 0 < theta_min <= theta_max");
  }
  if (c.sapg.theta0.empty()) throw Error(ErrorKind::config, "sapg.theta0: missing");
  for (double t : c.sapg.theta0) {
    if (t < c.theta_min || t > c.theta_max) throw Error(ErrorKind::config, "sapg.theta0: outside [theta_min, theta_max]");
  }
  if (c.model.likelihood != "gaussian" && c.model.likelihood != "laplace") {
    throw Error(ErrorKind::config, "model.likelihood: expected gaussian|laplace, got '" + c.model.likelihood + "'");
  }
  if (c.sapg.algorithm == Algorithm::alg4 && c.model.likelihood != "gaussian") {
    throw Error(ErrorKind::config, "sapg.algorithm: alg4 needs model.likelihood = gaussian");
  }
  if (c.problem == Problem::deblur_tv_unknown_sigma && c.sapg.algorithm != Algorithm::alg4) {
    throw Error(ErrorKind::config, "sapg.algorithm: deblur_tv_unknown_sigma runs alg4");
  }
  if (!(c.sigma_snr_max_db > c.sigma_snr_min_db)) {
    throw Error(ErrorKind::config, "sigma.snr_min_db/snr_max_db: need snr_min_db < snr_max_db");
  }
  if (c.sweep.points == 0 && c.sweep.theta.empty()) throw Error(ErrorKind::config, "sweep.points: must be >= 1");
  if (!(c.sweep.low_factor > 0.0) || !(c.sweep.high_factor >= c.sweep.low_factor)) {
    throw Error(ErrorKind::config, "sweep.low_factor/high_factor: need 0 < low <= high");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const Overrides& overrides) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::config, std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  const auto problem_key = tree.get_optional<std::string>("experiment.problem");
  ExperimentConfig c = preset(problem_key ? problem_from_string(*problem_key) : Problem::custom);

  const auto table = setters(c);
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw Error(ErrorKind::config, "config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : keys) {
      const std::string path = section + "." + key;
      if (path == "experiment.problem") continue;
      const auto it = table.find(path);
      if (it == table.end()) throw Error(ErrorKind::config, path + ": unknown key");
      it->second(value.data());
    }
  }

  std::string hashed = text;
  if (overrides.seed) {
    c.master_seed = *overrides.seed;
    hashed += "\n#seed=" + std::to_string(*overrides.seed);
  }
  if (overrides.workers) c.workers = *overrides.workers;
  if (overrides.out) c.output_dir = *overrides.out;
  c.config_hash = fnv1a_hex(hashed);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

}  // namespace sapg::cli
