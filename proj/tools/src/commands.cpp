#include "sapg_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <thread>

#include "json.hpp"
#include "sapg/csv.hpp"
#include "sapg/error.hpp"
#include "sapg/image_io.hpp"
#include "sapg/map.hpp"
#include "sapg/oracle.hpp"
#include "sapg/prox.hpp"
#include "sapg/sampler.hpp"
#include "sapg_cli/problem.hpp"

namespace sapg::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::filesystem::path repetition_dir(const std::filesystem::path& out, std::size_t rep) {
  char name[32];
  std::snprintf(name, sizeof name, "rep_%03zu", rep);
  return out / name;
}

namespace {

std::mutex log_mutex;

void log_line(const std::string& line) {
  std::lock_guard lock(log_mutex);
  std::cerr << line << '\n';
}

std::string join(std::span<const double> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) s += ',';
    s += io::format_double(values[i]);
  }
  return s;
}

// Runs task(i) for i in [0, count) on up to `workers` threads; rethrows the
// failure of the lowest index after all tasks finish.
template <class Task>
void parallel_for(std::size_t count, std::size_t workers, Task task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

io::Metadata metadata_for(const ExperimentConfig& c, std::uint64_t seed) {
  return {{"config_hash", c.config_hash}, {"seed", std::to_string(seed)}, {"problem", to_string(c.problem)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
}

void write_image(const fs::path& stem, const ImageVector& image, int maxval, const io::Metadata& meta) {
  io::write_raw(fs::path(stem.string() + ".raw"), image, meta);
  if (maxval > 0 && !image.shape().is_1d) io::write_pgm(fs::path(stem.string() + ".pgm"), image, maxval, meta);
}

struct ThetaSource {
  std::vector<double> theta;
  std::optional<double> sigma2;
};

ThetaSource theta_for(const ExperimentConfig& c, std::size_t rep, const std::optional<std::vector<double>>& theta) {
  if (theta) return {*theta, std::nullopt};
  const fs::path summary = repetition_dir(c.output_dir, rep) / "summary.json";
  if (!fs::exists(summary)) {
    throw Error(ErrorKind::io, "no theta source: pass --theta or run estimate first (missing '" + summary.string() + "')");
  }
  const json j = read_json(summary);
  ThetaSource s;
  s.theta = j.at("theta_bar").get<std::vector<double>>();
  if (j.contains("sigma2_bar")) s.sigma2 = j.at("sigma2_bar").get<double>();
  return s;
}

std::vector<double> broadcast(std::vector<double> theta, std::size_t dim) {
  if (theta.size() == 1 && dim > 1) theta.assign(dim, theta[0]);
  if (theta.size() != dim) throw_dimension("--theta", dim, theta.size());
  return theta;
}

struct Reconstruction {
  ImageVector image;
  Metrics metrics;
  MapResult result;
};

Reconstruction reconstruct(const ProblemInstance& p, const PosteriorModel& model, std::span<const double> theta) {
  Reconstruction r;
  r.result = solve_map(model, theta, p.map);
  r.image = p.to_image->apply(r.result.x_hat);
  r.image.set_tag(DomainTag::pixel);
  r.metrics = evaluate(r.image, p.truth);
  return r;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config:
    case ErrorKind::dimension:
    case ErrorKind::domain:
      return kExitConfig;
    case ErrorKind::divergence:
    case ErrorKind::convergence:
      return kExitDivergence;
    case ErrorKind::io:
      return kExitIo;
  }
  return kExitFailure;
}

template <class Body>
int guarded(const char* command, Body body) {
  try {
    return body();
  } catch (const Error& e) {
    log_line(std::string(command) + ": " + e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    log_line(std::string(command) + ": " + e.what());
    return kExitFailure;
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_estimate(const ExperimentConfig& c) {
  return guarded("estimate", [&] {
    make_dirs(c.output_dir);
    struct Outcome {
      std::uint64_t seed = 0;
      SapgResult result;
    };
    std::vector<Outcome> outcomes(c.repetitions);

    parallel_for(c.repetitions, c.workers, [&](std::size_t rep) {
      const auto start = std::chrono::steady_clock::now();
      const ProblemInstance p = build_problem(c, rep);
      const fs::path dir = repetition_dir(c.output_dir, rep);
      make_dirs(dir);
      auto meta = metadata_for(c, p.seed);
      meta.emplace_back("repetition", std::to_string(rep));

      SapgResult result = run_sapg(p.sapg, *p.model);
      write_trace_csv(dir / "theta_trace.csv", result.trace, meta);
      write_chain_csv(dir / "chain_posterior.csv", result.posterior_records, meta);
      if (!result.prior_records.empty()) write_chain_csv(dir / "chain_prior.csv", result.prior_records, meta);
      json summary = json::parse(summary_json(result, p.sapg, meta));
      summary["noise_sigma2"] = p.sigma2;
      write_text(dir / "summary.json", summary.dump(2) + "\n");
      write_image(dir / "observation", p.y, c.model.pgm_maxval, meta);
      write_image(dir / "truth", p.truth, c.model.pgm_maxval, meta);
      if (result.divergence) {
        const auto& d = *result.divergence;
        json j = {{"chain", d.chain},   {"message", d.message}, {"gamma", d.gamma},         {"lambda", d.lambda},
                  {"theta", d.theta},   {"step", d.step},       {"iteration", d.iteration}, {"config_hash", c.config_hash},
                  {"seed", p.seed}};
        write_text(dir / "divergence.json", j.dump(2) + "\n");
      }

      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log_line(dir.filename().string() + ": theta_bar=" + join(result.theta_bar) +
               " iterations=" + std::to_string(result.iterations) + " stopped_by=" + result.stopped_by + " (" +
               std::to_string(secs) + " s)");
      outcomes[rep] = {p.seed, std::move(result)};
    });

    // Aggregate over repetitions.
    const std::size_t k = outcomes.front().result.theta_bar.size();
    std::vector<double> mean(k, 0.0);
    std::vector<double> sd(k, 0.0);
    std::vector<double> iterations;
    std::size_t diverged = 0;
    json runs = json::array();
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      const auto& res = outcomes[r].result;
      for (std::size_t i = 0; i < k; ++i) mean[i] += res.theta_bar[i] / static_cast<double>(outcomes.size());
      iterations.push_back(static_cast<double>(res.iterations));
      if (res.divergence) ++diverged;
      json run = {{"repetition", r}, {"seed", outcomes[r].seed}, {"theta_bar", res.theta_bar}};
      if (res.sigma2_bar) run["sigma2_bar"] = *res.sigma2_bar;
      run["iterations"] = res.iterations;
      run["stopped_by"] = res.stopped_by;
      runs.push_back(run);
    }
    for (const auto& o : outcomes) {
      for (std::size_t i = 0; i < k; ++i) {
        const double e = o.result.theta_bar[i] - mean[i];
        sd[i] += e * e;
      }
    }
    for (double& v : sd) v = outcomes.size() > 1 ? std::sqrt(v / static_cast<double>(outcomes.size() - 1)) : 0.0;

    json agg = {{"problem", to_string(c.problem)},
                {"algorithm", to_string(c.sapg.algorithm)},
                {"config_hash", c.config_hash},
                {"master_seed", c.master_seed},
                {"repetitions", c.repetitions},
                {"theta_bar_mean", mean},
                {"theta_bar_sd", sd},
                {"iterations_median", median(iterations)},
                {"diverged", diverged},
                {"runs", runs}};
    write_text(c.output_dir / "summary.json", agg.dump(2) + "\n");
    return diverged > 0 ? kExitDivergence : kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_map(const ExperimentConfig& c, const std::optional<std::vector<double>>& theta) {
  return guarded("map", [&] {
    make_dirs(c.output_dir);
    parallel_for(c.repetitions, c.workers, [&](std::size_t rep) {
      const ProblemInstance p = build_problem(c, rep);
      const ThetaSource source = theta_for(c, rep, theta);
      const auto model = source.sigma2 ? with_noise_variance(*p.model, *source.sigma2) : p.model;
      const auto th = broadcast(source.theta, model->theta_dim());

      const Reconstruction r = reconstruct(p, *model, th);
      const fs::path dir = repetition_dir(c.output_dir, rep);
      make_dirs(dir);
      auto meta = metadata_for(c, p.seed);
      meta.emplace_back("theta", join(th));
      write_image(dir / "reconstruction", r.image, c.model.pgm_maxval, meta);
      write_objective_csv(dir / "objective_trace.csv", r.result.objective_trace, meta);
      json j = {{"theta", th}};
      if (source.sigma2) j["sigma2"] = *source.sigma2;
      j["mse_db"] = r.metrics.mse_db;
      j["psnr"] = r.metrics.psnr;
      j["observation_psnr"] = psnr(p.y, p.truth);
      j["iterations"] = r.result.iterations;
      j["converged"] = r.result.converged;
      j["residual"] = r.result.residual;
      j["config_hash"] = c.config_hash;
      j["seed"] = p.seed;
      write_text(dir / "metrics.json", j.dump(2) + "\n");
      log_line(dir.filename().string() + ": psnr=" + io::format_double(r.metrics.psnr) +
               " mse_db=" + io::format_double(r.metrics.mse_db));
    });
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_sweep(const ExperimentConfig& c, const std::optional<std::vector<double>>& theta) {
  return guarded("sweep", [&] {
    make_dirs(c.output_dir);
    const ProblemInstance p = build_problem(c, 0);
    const bool explicit_grid = !c.sweep.theta.empty();
    std::optional<ThetaSource> estimate;
    if (theta || !explicit_grid) estimate = theta_for(c, 0, theta);
    const auto model = estimate && estimate->sigma2 ? with_noise_variance(*p.model, *estimate->sigma2) : p.model;
    const std::size_t k = model->theta_dim();
    const std::vector<double> centre = estimate ? broadcast(estimate->theta, k) : std::vector<double>{};

    // Rows: the grid, then the estimate itself (if any).
    std::vector<double> factors;
    std::vector<std::vector<double>> grid;
    if (explicit_grid) {
      for (double t : c.sweep.theta) {
        factors.push_back(centre.empty() ? 1.0 : t / centre[0]);
        grid.push_back(std::vector<double>(k, t));
      }
    } else {
      const std::size_t n = c.sweep.points;
      const double lo = std::log(c.sweep.low_factor);
      const double hi = std::log(c.sweep.high_factor);
      for (std::size_t i = 0; i < n; ++i) {
        const double f = n == 1 ? c.sweep.low_factor
                                : std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
        factors.push_back(f);
        std::vector<double> t = centre;
        for (double& v : t) v *= f;
        grid.push_back(std::move(t));
      }
    }
    const std::size_t grid_points = grid.size();
    if (!centre.empty()) {
      factors.push_back(1.0);
      grid.push_back(centre);
    }

    std::vector<Reconstruction> rows(grid.size());
    parallel_for(grid.size(), c.workers, [&](std::size_t i) { rows[i] = reconstruct(p, *model, grid[i]); });

    io::CsvTable table;
    table.metadata = metadata_for(c, p.seed);
    table.columns = {"factor"};
    for (std::size_t i = 0; i < k; ++i) table.columns.push_back("theta_" + std::to_string(i + 1));
    for (const char* col : {"mse_db", "psnr", "iterations", "converged", "is_estimate"}) table.columns.push_back(col);
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::vector<double> row{factors[i]};
      row.insert(row.end(), grid[i].begin(), grid[i].end());
      row.push_back(rows[i].metrics.mse_db);
      row.push_back(rows[i].metrics.psnr);
      row.push_back(static_cast<double>(rows[i].result.iterations));
      row.push_back(rows[i].result.converged ? 1.0 : 0.0);
      row.push_back(i >= grid_points ? 1.0 : 0.0);
      table.rows.push_back(std::move(row));
      if (i < grid_points && rows[i].metrics.mse_db < rows[best].metrics.mse_db) best = i;
    }
    io::write_csv(c.output_dir / "sweep.csv", table);

    json j = {{"grid_points", grid_points},
              {"argmin_theta", grid[best]},
              {"min_mse_db", rows[best].metrics.mse_db},
              {"max_psnr", rows[best].metrics.psnr}};
    if (!centre.empty()) {
      const double at = rows.back().metrics.mse_db;
      j["theta_bar"] = centre;
      j["mse_db_at_estimate"] = at;
      j["gap_db"] = at - std::min(at, rows[best].metrics.mse_db);
    }
    j["config_hash"] = c.config_hash;
    j["seed"] = p.seed;
    write_text(c.output_dir / "sweep.json", j.dump(2) + "\n");
    log_line("sweep: min mse_db=" + io::format_double(rows[best].metrics.mse_db) + " at theta=" + join(grid[best]));
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> column_of(const std::vector<ChainRecord>& records, bool log_prob) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(log_prob ? r.log_prob : r.g.at(0));
  return out;
}

void write_acf(const fs::path& path, std::span<const double> acf, const io::Metadata& meta) {
  io::CsvTable t;
  t.metadata = meta;
  t.columns = {"lag", "acf"};
  for (std::size_t i = 0; i < acf.size(); ++i) t.rows.push_back({static_cast<double>(i), acf[i]});
  io::write_csv(path, t);
}

// ACF and integrated autocorrelation time of the first statistic; nullopt when
// the series is too short or constant.
std::optional<double> acf_report(const std::vector<ChainRecord>& records, const fs::path& path,
                                 const io::Metadata& meta) {
  const auto series = column_of(records, false);
  if (series.size() < 8) return std::nullopt;
  const std::size_t max_lag = std::min<std::size_t>(100, series.size() / 4);
  try {
    write_acf(path, autocorrelation(series, max_lag), meta);
    return integrated_autocorrelation_time(series, max_lag);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

int cmd_diagnose(const ExperimentConfig& c) {
  return guarded("diagnose", [&] {
    std::size_t found = 0;
    for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
      const fs::path dir = repetition_dir(c.output_dir, rep);
      const fs::path trace_path = dir / "theta_trace.csv";
      const fs::path chain_path = dir / "chain_posterior.csv";
      if (!fs::exists(trace_path) || !fs::exists(chain_path)) {
        if (rep == 0) throw Error(ErrorKind::io, "missing trace files in '" + dir.string() + "'");
        continue;
      }
      ++found;
      const json summary = fs::exists(dir / "summary.json") ? read_json(dir / "summary.json") : json::object();
      const std::uint64_t seed = summary.value("seed", repetition_seed(c.master_seed, rep));
      const auto meta = metadata_for(c, seed);

      const ThetaTrace trace = read_trace_csv(trace_path);
      const auto posterior = read_chain_csv(chain_path);
      const std::optional<std::vector<ChainRecord>> prior =
          fs::exists(dir / "chain_prior.csv") ? std::optional(read_chain_csv(dir / "chain_prior.csv")) : std::nullopt;

      io::CsvTable lp;
      lp.metadata = meta;
      lp.columns = {"iteration", "log_prob"};
      for (const auto& r : posterior) lp.rows.push_back({static_cast<double>(r.iteration), r.log_prob});
      io::write_csv(dir / "logprob_trace.csv", lp);

      // Gradient residual relative to the size of the statistic it balances.
      io::CsvTable gr;
      gr.metadata = meta;
      gr.columns = {"n", "stage", "grad_norm", "relative_residual"};
      double last_relative = 0.0;
      for (const auto& r : trace.records) {
        const double scale = vec::norm2(r.g);
        last_relative = scale > 0.0 ? r.grad_norm / scale : r.grad_norm;
        gr.rows.push_back({static_cast<double>(r.n), static_cast<double>(r.stage), r.grad_norm, last_relative});
      }
      io::write_csv(dir / "grad_residual.csv", gr);

      const auto iat_post = acf_report(posterior, dir / "acf_posterior.csv", meta);
      std::optional<double> iat_prior;
      if (prior) iat_prior = acf_report(*prior, dir / "acf_prior.csv", meta);

      const auto log_probs = column_of(posterior, true);
      const bool diverged = fs::exists(dir / "divergence.json") || summary.value("stopped_by", "") == "divergence";
      json j = {{"stabilised", !diverged && !log_probs.empty() && is_stabilised(log_probs)},
                {"diverged", diverged},
                {"records", posterior.size()},
                {"final_relative_residual", last_relative}};
      j["iat_posterior"] = iat_post ? json(*iat_post) : json(nullptr);
      j["iat_prior"] = iat_prior ? json(*iat_prior) : json(nullptr);
      j["imbalance_ratio"] = iat_post && iat_prior ? json(*iat_prior / *iat_post) : json(nullptr);
      j["config_hash"] = c.config_hash;
      j["seed"] = seed;
      write_text(dir / "diagnosis.json", j.dump(2) + "\n");
      log_line(dir.filename().string() + ": stabilised=" + (j["stabilised"].get<bool>() ? "true" : "false") +
               " diverged=" + (diverged ? "true" : "false"));
    }
    if (found == 0) throw Error(ErrorKind::io, "no repetition directories under '" + c.output_dir.string() + "'");
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------

int cmd_oracle_suite(const std::filesystem::path& out_dir) {
  return guarded("oracle-suite", [&] {
    make_dirs(out_dir);
    json checks = json::array();
    bool all = true;
    auto record = [&](const std::string& name, double error, double tolerance) {
      const bool pass = std::isfinite(error) && error <= tolerance;
      all = all && pass;
      checks.push_back({{"check", name}, {"error", error}, {"tolerance", tolerance}, {"pass", pass}});
      log_line(std::string(pass ? "PASS " : "FAIL ") + name + " error=" + io::format_double(error));
    };

    // Homogeneity identity against quadrature of log Z.
    const std::vector<std::pair<std::string, RegulariserPtr>> regs = {
        {"l1", std::make_shared<L1Regulariser>(2)}, {"squared_norm", std::make_shared<SquaredNormRegulariser>(2)}};
    for (const auto& [name, reg] : regs) {
      const double alpha = reg->homogeneity().alpha;
      for (double t : {0.5, 1.0, 3.0}) {
        const double h = 1e-3 * t;
        const double up = oracle::quadrature_log_z(*reg, std::vector<double>{t + h});
        const double dn = oracle::quadrature_log_z(*reg, std::vector<double>{t - h});
        const double fd = (up - dn) / (2.0 * h);
        const double exact = -2.0 / (alpha * t);
        record("logz_derivative_" + name + "_theta_" + io::format_double(t), std::abs(fd - exact) / std::abs(exact),
               1e-3);
      }
    }

    // Fisher identity on a two-pixel denoising toy.
    {
      const Shape s = Shape::line(2);
      auto op = std::make_shared<IdentityOperator>(s);
      auto like = std::make_shared<GaussianLikelihood>(op, ImageVector::line({0.7, -1.3}), 0.5);
      const PosteriorModel model(like, std::make_shared<L1Regulariser>(2), ThetaDomain::scalar(1e-3, 1e3));
      for (double t : {0.5, 1.0, 3.0}) {
        const std::vector<double> th{t};
        const double fisher = oracle::quadrature_grad_marginal(model, th)[0];
        const double fd = oracle::finite_difference_grad_marginal(model, th)[0];
        record("fisher_identity_theta_" + io::format_double(t), std::abs(fisher - fd) / std::abs(fd), 1e-3);
      }
    }

    // Proximal maps against the brute-force solver.
    {
      std::mt19937_64 rng(7);
      std::normal_distribution<double> normal(0.0, 1.0);
      auto random_image = [&](Shape shape) {
        ImageVector v(shape);
        for (double& x : v.raw()) x = normal(rng);
        return v;
      };
      const ImageVector x = random_image(Shape::line(6));
      const double lambda = 0.4;
      const auto brute_l1 = oracle::brute_prox(oracle::NormSum::weighted_l1(std::vector<double>(6, 1.0)), lambda, x);
      const ImageVector soft = soft_threshold(x, lambda);
      record("prox_soft_threshold", std::sqrt(vec::dist_sq(soft.values(), brute_l1.point.values())), 1e-4);

      for (std::size_t n : {2, 3}) {
        const Shape shape = Shape::image(n, n);
        const ImageVector img = random_image(shape);
        const auto brute = oracle::brute_prox(oracle::NormSum::tv(shape, 1.0), lambda, img);
        const auto ours = prox_tv_iso(img, lambda, TvProxOptions{20000, 0.0});
        record("prox_tv_" + std::to_string(n) + "x" + std::to_string(n),
               std::sqrt(vec::dist_sq(ours.point.values(), brute.point.values())), 1e-4);
      }
    }

    json j = {{"all_pass", all}, {"checks", checks}};
    write_text(out_dir / "oracle_suite.json", j.dump(2) + "\n");
    return all ? kExitOk : kExitFailure;
  });
}

}  // namespace sapg::cli
