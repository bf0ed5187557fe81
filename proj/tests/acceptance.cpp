// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any fail.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "sapg/oracle.hpp"
#include "sapg/prox.hpp"
#include "sapg/sapg.hpp"
#include "sapg_cli/commands.hpp"
#include "sapg_cli/problem.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sapg;
using namespace sapg::cli;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;
std::size_t g_workers = 0;

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig experiment(const std::string& text, const std::string& name) {
  const fs::path out = g_work / name;
  fs::remove_all(out);
  return parse_config(text, {.workers = g_workers, .out = out});
}

// ---------------------------------------------------------------------------

Outcome synthetic_denoising() {
  auto c = load_config(fs::path(SAPG_PRESET_DIR) / "denoise_synthesis_l1.ini",
                       {.workers = g_workers, .out = g_work / "c1"});
  fs::remove_all(c.output_dir);
  if (cmd_estimate(c) != kExitOk) return {false, "estimate failed"};
  const json s = read_json(c.output_dir / "summary.json");
  const double m = s["theta_bar_mean"][0];
  const double med = s["iterations_median"];
  const std::size_t runs = s["runs"].size();
  const bool ok = runs == 50 && m >= 0.97 && m <= 1.03 && med <= 60;
  return {ok, "runs=" + std::to_string(runs) + " mean theta_bar=" + fmt(m, 5) + " (need [0.97, 1.03]), median iters=" +
                  fmt(med) + " (need <= 60)"};
}

Outcome laplace_noise_robustness() {
  const std::string base =
      "[experiment]\nproblem = denoise_synthesis_l1\nrepetitions = 20\nmaster_seed = 2\n"
      "[noise]\nkind = laplace\nsnr_db = 40\n[model]\nlikelihood = ";
  double means[2];
  const char* likelihoods[2] = {"gaussian", "laplace"};
  for (int k = 0; k < 2; ++k) {
    auto c = experiment(base + likelihoods[k] + "\n", std::string("c2_") + likelihoods[k]);
    if (cmd_estimate(c) != kExitOk) return {false, std::string("estimate failed for ") + likelihoods[k]};
    means[k] = read_json(c.output_dir / "summary.json")["theta_bar_mean"][0];
  }
  const double rel = std::abs(means[0] - means[1]) / means[1];
  return {rel < 0.05, "mean theta_bar gaussian=" + fmt(means[0], 5) + " laplace=" + fmt(means[1], 5) +
                          " rel diff=" + fmt(rel, 3) + " (need < 0.05)"};
}

Outcome homogeneity_identity() {
  double worst = 0.0;
  const L1Regulariser l1(2);
  const SquaredNormRegulariser sq(2);
  const std::pair<const Regulariser*, double> cases[] = {{&l1, 1.0}, {&sq, 2.0}};
  for (const auto& [reg, alpha] : cases) {
    for (double theta : {0.5, 1.0, 3.0}) {
      const double h = 1e-4 * theta;
      std::vector<double> up{theta + h}, down{theta - h};
      const double fd = (oracle::quadrature_log_z(*reg, up) - oracle::quadrature_log_z(*reg, down)) / (2.0 * h);
      const double formula = -2.0 / (alpha * theta);
      worst = std::max(worst, std::abs(fd - formula) / std::abs(formula));
    }
  }
  return {worst < 1e-3, "max rel error=" + fmt(worst, 3) + " (need < 1e-3)"};
}

PosteriorModel fisher_toy() {
  auto y = ImageVector::line({2.5, -1.5});
  auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(y.shape()), y, 0.5);
  return PosteriorModel(like, std::make_shared<L1Regulariser>(2), ThetaDomain::scalar(1e-2, 100));
}

Outcome fisher_identity() {
  const auto model = fisher_toy();
  double worst = 0.0;
  for (double theta : {0.3, 0.7, 1.5}) {
    std::vector<double> t{theta};
    const double fisher = oracle::quadrature_grad_marginal(model, t)[0];
    const double fd = oracle::finite_difference_grad_marginal(model, t)[0];
    worst = std::max(worst, std::abs(fisher - fd) / std::abs(fd));
  }
  const double star = oracle::quadrature_marginal_argmax(model, 0.2, 5.0);

  SapgConfig c;
  c.theta0 = {1.0};
  c.schedule.c0 = 0.05;
  c.weights.n0 = 5000;
  c.stop = {1e-12, 400000};
  c.kernel.gamma = 0.01;
  c.kernel.lambda = 0.02;
  c.seed = 1;
  const double theta_bar = run_sapg(c, model).theta_bar[0];
  const double rel = std::abs(theta_bar - star) / star;
  return {worst < 1e-3 && rel < 0.02, "fisher vs fd max rel=" + fmt(worst, 3) + " (need < 1e-3); theta*=" +
                                          fmt(star, 5) + " sapg=" + fmt(theta_bar, 5) + " rel=" + fmt(rel, 3) +
                                          " (need < 0.02)"};
}

Outcome conjugate_gaussian() {
  const std::size_t d = 256;
  const double sigma2 = 1.0, theta_true = 0.5;
  double worst = 0.0;
  for (std::size_t rep = 0; rep < 10; ++rep) {
    std::mt19937_64 rng(repetition_seed(5, rep));
    std::normal_distribution<double> n(0.0, std::sqrt(sigma2 + 1.0 / (2.0 * theta_true)));
    ImageVector y(Shape::line(d));
    for (double& v : y.raw()) v = n(rng);
    auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(y.shape()), y, sigma2);
    PosteriorModel m(like, std::make_shared<SquaredNormRegulariser>(d), ThetaDomain::scalar(1e-3, 100));
    const double target = oracle::gaussian_marginal_mle(y.values(), sigma2, 100.0);

    SapgConfig c;
    c.theta0 = {1.0};
    c.schedule.c0 = 10.0 / d;
    c.log_scale = true;
    c.warmup = 300;
    c.weights.n0 = 4000;
    c.stop = {1e-12, 40000};
    c.kernel.smooth_gradient = true;
    c.kernel.gamma = 0.005;
    c.seed = repetition_seed(5, rep);
    const double est = run_sapg(c, m).theta_bar[0];
    worst = std::max(worst, std::abs(est - target) / target);
  }
  return {worst < 0.05, "max rel error over 10 reps=" + fmt(worst, 3) + " (need < 0.05)"};
}

Outcome ula_bias_law() {
  auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(Shape::line(1)),
                                                   ImageVector(Shape::line(1)), 1.0);
  PosteriorModel m(like, std::make_shared<ZeroRegulariser>(1), ThetaDomain::scalar(0.1, 10));
  const std::vector<double> theta{1.0};
  double worst = 0.0;
  std::string detail;
  for (double gamma : {0.05, 0.1, 0.2}) {
    const double expected = oracle::ula_gaussian_stationary_variance(gamma, 1.0);
    std::mt19937_64 rng(derive_seed(6, static_cast<std::uint64_t>(gamma * 1000)));
    std::normal_distribution<double> start(0.0, std::sqrt(expected));
    ChainState s(ImageVector::line({start(rng)}), rng());
    double sumsq = 0.0;
    const int steps = 1000000;
    for (int k = 0; k < steps; ++k) {
      myula_posterior_step(m, s, theta, {gamma, 1.0, false});
      sumsq += s.x[0] * s.x[0];
    }
    const double rel = std::abs(sumsq / steps - expected) / expected;
    worst = std::max(worst, rel);
    detail += " gamma=" + fmt(gamma, 2) + ":" + fmt(rel, 3);
  }
  return {worst < 0.01, "rel error" + detail + " (need < 0.01)"};
}

Outcome prox_correctness() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  auto random = [&](Shape s) {
    ImageVector x(s);
    for (double& v : x.raw()) v = n(rng);
    return x;
  };
  auto max_diff = [](const ImageVector& a, const ImageVector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
  };
  const TvProxOptions tight{20000, 0.0};
  const auto y3 = random(Shape::line(3));
  const BlockList blocks{{0, 1, 1.0}, {1, 2, 1.0}};
  const std::vector<double> block_theta{0.4, 1.2};

  struct Case {
    std::string name;
    Shape shape;
    std::function<ImageVector(const ImageVector&)> prox;
    oracle::NormSum g;
    double lambda;
  };
  const std::vector<double> ones3(3, 1.0);
  std::vector<Case> cases = {
      {"soft_threshold", Shape::line(3), [](const ImageVector& x) { return soft_threshold(x, 0.7); },
       oracle::NormSum::weighted_l1(ones3), 0.7},
      {"weighted_l1_blocks", Shape::line(3),
       [&](const ImageVector& x) { return prox_weighted_l1_blocks(x, block_theta, blocks, 1.0); },
       oracle::NormSum::weighted_l1(std::vector<double>{0.4, 1.2, 1.2}), 1.0},
      {"l1_residual", Shape::line(3), [&](const ImageVector& x) { return prox_l1_residual(x, y3, 0.9); },
       oracle::NormSum::weighted_l1(ones3, y3.values()), 0.9},
      {"tv_2x2", Shape::image(2, 2), [&](const ImageVector& x) { return prox_tv_iso(x, 0.8, tight).point; },
       oracle::NormSum::tv(Shape::image(2, 2), 1.0), 0.8},
      {"tv_3x3", Shape::image(3, 3), [&](const ImageVector& x) { return prox_tv_iso(x, 0.8, tight).point; },
       oracle::NormSum::tv(Shape::image(3, 3), 1.0), 0.8},
  };

  bool ok = true;
  std::string detail;
  for (const auto& cs : cases) {
    double err = 0.0;
    for (int k = 0; k < 5; ++k) {
      auto x = random(cs.shape);
      err = std::max(err, max_diff(cs.prox(x), oracle::brute_prox(cs.g, cs.lambda, x).point));
    }
    // Firm nonexpansiveness: <Px - Py, x - y> >= ||Px - Py||^2.
    double worst_violation = 0.0;
    for (int k = 0; k < 100; ++k) {
      auto a = random(cs.shape), b = random(cs.shape);
      auto pa = cs.prox(a), pb = cs.prox(b);
      const auto dp = pa - pb;
      worst_violation =
          std::max(worst_violation, vec::norm2_sq(dp.values()) - vec::dot(dp.values(), (a - b).values()));
    }
    const bool case_ok = err < 1e-4 && worst_violation <= 1e-8;
    ok = ok && case_ok;
    detail += " " + cs.name + ":err=" + fmt(err, 2) + ",fne=" + fmt(worst_violation, 2);
  }
  return {ok, detail.substr(1) + " (need err < 1e-4, fne <= 1e-8)"};
}

PosteriorModel l1_toy(std::size_t d, double ridge, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution sign;
  std::normal_distribution<double> n(0.0, 0.5);
  ImageVector y(Shape::line(d));
  for (double& v : y.raw()) v = (sign(rng) ? 1.0 : -1.0) * e(rng) + n(rng);
  auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(y.shape()), y, 0.25);
  return PosteriorModel(like, std::make_shared<L1Regulariser>(d, ridge), ThetaDomain::scalar(1e-2, 100));
}

Outcome algorithm_equivalences() {
  // (a) one-block alg2 against alg1.
  auto c = load_config(fs::path(SAPG_PRESET_DIR) / "denoise_synthesis_l1.ini");
  auto p = build_problem(c, 0);
  const auto& reg = p.model->regulariser();
  PosteriorModel blocks(p.model->likelihood_ptr(),
                        std::make_shared<BlockL1Regulariser>(reg.dim(), BlockList{{0, reg.dim(), 1.0}}),
                        p.model->theta_domain());
  const auto r1 = run_sapg(p.sapg, *p.model);
  auto alg2 = p.sapg;
  alg2.algorithm = Algorithm::alg2;
  const auto r2 = run_sapg(alg2, blocks);
  bool identical = r1.trace.records.size() == r2.trace.records.size() && r1.theta_bar == r2.theta_bar;
  for (std::size_t i = 0; identical && i < r1.trace.records.size(); ++i) {
    identical = r1.trace.records[i].theta == r2.trace.records[i].theta;
  }

  // (b) alg3 with a vanishing ridge against alg1 on plain l1.
  const std::size_t d = 16;
  SapgConfig s;
  s.theta0 = {1.0};
  s.schedule.c0 = 1.0 / d;
  s.weights.n0 = 5000;
  s.stop = {1e-12, 200000};
  s.seed = 8;
  const double a1 = run_sapg(s, l1_toy(d, 0.0, 8)).theta_bar[0];
  s.algorithm = Algorithm::alg3;
  s.kernel.prior_lambda = 0.02;
  s.kernel.prior_gamma_fraction = 0.25;
  const double a3 = run_sapg(s, l1_toy(d, 1e-4, 8)).theta_bar[0];
  const double rel = std::abs(a3 - a1) / a1;
  return {identical && rel < 0.05, std::string("(a) alg2 one block ") + (identical ? "bit-identical" : "DIFFERS") +
                                       " over " + std::to_string(r1.trace.records.size()) + " iters; (b) alg1=" +
                                       fmt(a1, 5) + " alg3=" + fmt(a3, 5) + " rel=" + fmt(rel, 3) + " (need < 0.05)"};
}

const char* kJointSigma =
    "[experiment]\nproblem = deblur_tv_unknown_sigma\nmaster_seed = 1\n"
    "[input]\ngenerator = tv_prior\nrows = 64\ncols = 64\ntrue_theta = 0.1\n"
    "[noise]\nsnr_db = 20\n[model]\nblur_size = 1\n"
    "[sapg]\nn0 = 4000\nmax_iters = 12000\ntolerance = 1e-12\nlambda_cap = 0.25\n";

Outcome joint_sigma_estimation() {
  auto joint = experiment(std::string(kJointSigma) + "[sigma]\ntolerance = 1e-12\n", "c9_joint");
  std::string known_text = kJointSigma;
  known_text.replace(known_text.find("deblur_tv_unknown_sigma"), 23, "deblur_tv");
  auto known = experiment(known_text, "c9_known");
  if (cmd_estimate(joint) != kExitOk || cmd_estimate(known) != kExitOk) return {false, "estimate failed"};
  const json a = read_json(repetition_dir(joint.output_dir, 0) / "summary.json");
  const json b = read_json(repetition_dir(known.output_dir, 0) / "summary.json");
  const double s2 = a["sigma2_bar"], truth = a["noise_sigma2"];
  const double ta = a["theta_bar"][0], tb = b["theta_bar"][0];
  const double s2_rel = std::abs(s2 - truth) / truth, t_rel = std::abs(ta - tb) / tb;
  const double sigma_min = build_problem(joint, 0).sapg.sigma.lower;
  bool monotone = true;
  std::string gammas;
  const auto& stages = a["stages"];
  for (std::size_t i = 0; i < stages.size(); ++i) {
    gammas += (i ? "," : "") + fmt(stages[i]["gamma"].get<double>(), 3);
    if (i > 0 && stages[i - 1]["sigma2_bar"].get<double>() > sigma_min &&
        stages[i]["gamma"].get<double>() < stages[i - 1]["gamma"].get<double>()) {
      monotone = false;
    }
  }
  const bool ok = s2_rel < 0.1 && t_rel < 0.1 && monotone && stages.size() == 3;
  return {ok, "sigma2_bar=" + fmt(s2, 5) + " truth=" + fmt(truth, 5) + " rel=" + fmt(s2_rel, 3) +
                  "; theta_bar=" + fmt(ta, 4) + " known-sigma=" + fmt(tb, 4) + " rel=" + fmt(t_rel, 3) +
                  " (need both < 0.1); stage gamma=" + gammas + (monotone ? " non-decreasing" : " DECREASING")};
}

Outcome close_to_optimal_mse() {
  auto c = load_config(fs::path(SAPG_PRESET_DIR) / "deblur_tv.ini", {.workers = g_workers, .out = g_work / "c10"});
  fs::remove_all(c.output_dir);
  c.repetitions = 1;
  if (cmd_estimate(c) != kExitOk) return {false, "estimate failed"};
  if (cmd_sweep(c, std::nullopt) != kExitOk) return {false, "sweep failed"};
  const json s = read_json(c.output_dir / "sweep.json");
  const double gap = s["gap_db"];
  const std::size_t points = s["grid_points"];
  return {gap <= 0.5 && points == 12, "theta_bar=" + fmt(s["theta_bar"][0].get<double>()) + " MSE there=" +
                                          fmt(s["mse_db_at_estimate"].get<double>(), 5) + " dB, grid min=" +
                                          fmt(s["min_mse_db"].get<double>(), 5) + " dB at " +
                                          fmt(s["argmin_theta"][0].get<double>()) + ", gap=" + fmt(gap, 3) +
                                          " dB over " + std::to_string(points) + " points (need <= 0.5)"};
}

std::map<std::string, std::string> run_pipeline(const std::string& text, const std::string& name) {
  auto c = experiment(text, name);
  if (cmd_estimate(c) != kExitOk) throw std::runtime_error("estimate failed in " + name);
  if (cmd_map(c, std::nullopt) != kExitOk) throw std::runtime_error("map failed in " + name);
  c.sweep.points = 4;
  if (cmd_sweep(c, std::nullopt) != kExitOk) throw std::runtime_error("sweep failed in " + name);
  if (cmd_diagnose(c) != kExitOk) throw std::runtime_error("diagnose failed in " + name);
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(c.output_dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), c.output_dir).string()] = slurp(e.path());
  }
  return files;
}

Outcome determinism() {
  const std::string experiments[] = {
      "[experiment]\nproblem = denoise_synthesis_l1\nrepetitions = 3\nmaster_seed = 11\n"
      "[input]\nrows = 64\ncols = 64\n",
      "[experiment]\nproblem = deblur_tv_unknown_sigma\nmaster_seed = 11\n[input]\nrows = 32\ncols = 32\n"
      "[sapg]\nmax_iters = 60\n",
  };
  std::size_t compared = 0;
  for (std::size_t k = 0; k < std::size(experiments); ++k) {
    const auto first = run_pipeline(experiments[k], "c11_" + std::to_string(k) + "_a");
    const auto second = run_pipeline(experiments[k], "c11_" + std::to_string(k) + "_b");
    if (first != second) {
      for (const auto& [name, bytes] : first) {
        auto it = second.find(name);
        if (it == second.end() || it->second != bytes) return {false, "differs: " + name};
      }
      return {false, "file sets differ"};
    }
    compared += first.size();
  }
  return {true, std::to_string(compared) + " output files byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAPG acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for experiment outputs");
  app.add_option("--only", only, "Run only these criteria (1-11)")->delimiter(',');
  app.add_option("--workers", g_workers, "Worker threads for repetitions (0 = all cores)");
  CLI11_PARSE(app, argc, argv);
  if (g_workers == 0) g_workers = std::max(1u, std::thread::hardware_concurrency());
  g_work = work;
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
      {"synthetic denoising reproduction", synthetic_denoising},
      {"Laplace-noise robustness", laplace_noise_robustness},
      {"homogeneity identity vs quadrature", homogeneity_identity},
      {"Fisher identity and toy argmax", fisher_identity},
      {"conjugate Gaussian closed form", conjugate_gaussian},
      {"ULA bias law", ula_bias_law},
      {"prox correctness", prox_correctness},
      {"algorithm equivalences", algorithm_equivalences},
      {"joint sigma estimation", joint_sigma_estimation},
      {"close-to-optimal MSE", close_to_optimal_mse},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
