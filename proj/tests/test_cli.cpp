#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sapg/error.hpp"
#include "sapg_cli/commands.hpp"
#include "sapg_cli/problem.hpp"

namespace fs = std::filesystem;
using namespace sapg;
using namespace sapg::cli;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sapg_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string small_denoising(const fs::path& out, std::size_t reps = 2) {
  return "[experiment]\nproblem = denoise_synthesis_l1\nrepetitions = " + std::to_string(reps) +
         "\nmaster_seed = 4\noutput_dir = " + out.string() +
         "\n[input]\nrows = 32\ncols = 32\n[model]\nwavelet_levels = 2\n[sapg]\nmax_iters = 40\n";
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

}  // namespace

TEST(Config, HashAndSeeds) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_NE(repetition_seed(1, 0), repetition_seed(1, 1));
  EXPECT_EQ(repetition_seed(9, 3), repetition_seed(9, 3));
}

TEST(Config, PresetsLoadAndValidate) {
  for (const char* name : {"denoise_synthesis_l1", "deblur_tv", "deblur_wavelet_l1", "deblur_tv_unknown_sigma"}) {
    auto c = load_config(fs::path(SAPG_PRESET_DIR) / (std::string(name) + ".ini"));
    EXPECT_EQ(to_string(c.problem), name);
    EXPECT_FALSE(c.config_hash.empty());
  }
  auto l1 = preset(Problem::denoise_synthesis_l1);
  EXPECT_EQ(l1.input.rows, 256u);
  EXPECT_FALSE(l1.sapg.log_scale);
  auto tv = preset(Problem::deblur_tv);
  EXPECT_TRUE(tv.sapg.log_scale);
  EXPECT_EQ(tv.model.blur_size, 9u);
  EXPECT_EQ(preset(Problem::deblur_tv_unknown_sigma).sapg.algorithm, Algorithm::alg4);
}

TEST(Config, ErrorsNameTheField) {
  try {
    parse_config("[experiment]\nproblem = deblur_tv\n[sapg]\nthetta0 = 1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("sapg.thetta0"), std::string::npos);
  }
  EXPECT_EQ(kind_of([] { parse_config("[sapg]\nmax_iters = many\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { parse_config("[experiment]\nrepetitions = 0\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { load_config("/nonexistent/config.ini"); }), ErrorKind::io);
}

TEST(Config, OverridesAndHash) {
  const std::string text = "[experiment]\nproblem = deblur_tv\nmaster_seed = 3\n";
  auto a = parse_config(text);
  auto b = parse_config(text, {.seed = 8, .workers = 2, .out = "elsewhere"});
  EXPECT_EQ(a.master_seed, 3u);
  EXPECT_EQ(b.master_seed, 8u);
  EXPECT_EQ(b.workers, 2u);
  EXPECT_EQ(b.output_dir, fs::path("elsewhere"));
  EXPECT_NE(a.config_hash, b.config_hash);
  EXPECT_EQ(a.config_hash, parse_config(text).config_hash);
}

TEST(Problem, AlgorithmMustMatchRegulariser) {
  auto c = parse_config("[experiment]\nproblem = custom\n[model]\nregulariser = elastic_net\n[sapg]\nalgorithm = alg1\n");
  EXPECT_EQ(kind_of([&] { build_problem(c, 0); }), ErrorKind::config);
}

TEST(Problem, SyntheticInstancesAreReproducible) {
  auto c = parse_config(small_denoising(fresh_dir("unused")));
  auto a = build_problem(c, 0);
  auto b = build_problem(c, 0);
  auto other = build_problem(c, 1);
  EXPECT_EQ(a.y.raw(), b.y.raw());
  EXPECT_NE(a.y.raw(), other.y.raw());
  EXPECT_EQ(a.truth.shape(), Shape::image(32, 32));
  EXPECT_NEAR(a.sigma2, sigma2_for_snr(a.truth, 30.0), 1e-12 * a.sigma2);
}

TEST(Problem, TvPriorGenerator) {
  auto c = parse_config(
      "[experiment]\nproblem = deblur_tv\n[input]\ngenerator = tv_prior\nrows = 16\ncols = 16\ntrue_theta = 0.1\n"
      "prior_steps = 2000\n[model]\nblur_size = 1\n");
  auto p = build_problem(c, 0);
  EXPECT_NEAR(vec::mean(p.truth.values()), 128.0, 1e-9);
  EXPECT_EQ(p.truth.raw(), build_problem(c, 0).truth.raw());
}

TEST(Phantom, RangeAndDeterminism) {
  auto a = phantom(64, 64, 3);
  EXPECT_EQ(a.raw(), phantom(64, 64, 3).raw());
  const auto [lo, hi] = std::minmax_element(a.raw().begin(), a.raw().end());
  EXPECT_GE(*lo, 0.0);
  EXPECT_LE(*hi, 255.0);
  EXPECT_GT(*hi - *lo, 50.0);
}

TEST(Commands, EstimateMapSweepDiagnose) {
  const auto out = fresh_dir("pipeline");
  auto c = parse_config(small_denoising(out));
  ASSERT_EQ(cmd_estimate(c), kExitOk);
  for (std::size_t rep = 0; rep < 2; ++rep) {
    const auto dir = repetition_dir(out, rep);
    EXPECT_TRUE(fs::exists(dir / "theta_trace.csv"));
    EXPECT_TRUE(fs::exists(dir / "summary.json"));
  }
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_NE(slurp(repetition_dir(out, 0) / "theta_trace.csv").find(c.config_hash), std::string::npos);

  ASSERT_EQ(cmd_map(c, std::nullopt), kExitOk);
  const auto metrics = slurp(repetition_dir(out, 0) / "metrics.json");
  EXPECT_NE(metrics.find("psnr"), std::string::npos);
  EXPECT_TRUE(fs::exists(repetition_dir(out, 0) / "reconstruction.raw"));

  c.sweep.points = 3;
  ASSERT_EQ(cmd_sweep(c, std::nullopt), kExitOk);
  EXPECT_TRUE(fs::exists(out / "sweep.csv"));
  ASSERT_EQ(cmd_diagnose(c), kExitOk);
  EXPECT_TRUE(fs::exists(repetition_dir(out, 0) / "diagnosis.json"));
  EXPECT_TRUE(fs::exists(repetition_dir(out, 0) / "acf_posterior.csv"));
}

TEST(Commands, ThetaOverrideReproducesMetrics) {
  const auto out = fresh_dir("override");
  auto c = parse_config(small_denoising(out, 1));
  ASSERT_EQ(cmd_estimate(c), kExitOk);
  ASSERT_EQ(cmd_map(c, std::nullopt), kExitOk);
  const auto first = slurp(repetition_dir(out, 0) / "metrics.json");
  const auto summary = slurp(repetition_dir(out, 0) / "summary.json");
  const auto pos = summary.find("\"theta_bar\"");
  ASSERT_NE(pos, std::string::npos);
  const double theta = std::stod(summary.substr(summary.find('[', pos) + 1));
  ASSERT_EQ(cmd_map(c, std::vector<double>{theta}), kExitOk);
  EXPECT_EQ(slurp(repetition_dir(out, 0) / "metrics.json"), first);
}

TEST(Commands, MissingThetaSourceIsIoError) {
  auto c = parse_config(small_denoising(fresh_dir("missing")));
  EXPECT_EQ(cmd_map(c, std::nullopt), kExitIo);
  EXPECT_EQ(cmd_diagnose(c), kExitIo);
}

TEST(Commands, RerunIsByteIdentical) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  auto ca = parse_config(small_denoising(a));
  auto cb = ca;
  cb.output_dir = b;
  cb.workers = 2;
  ASSERT_EQ(cmd_estimate(ca), kExitOk);
  ASSERT_EQ(cmd_estimate(cb), kExitOk);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
  }
}

TEST(Commands, DivergenceExitCode) {
  const auto out = fresh_dir("diverge");
  auto c = parse_config(small_denoising(out, 1) + "gamma = 50\nenforce_stability = false\nwarmup = 500\n");
  EXPECT_EQ(cmd_estimate(c), kExitDivergence);
  EXPECT_TRUE(fs::exists(repetition_dir(out, 0) / "divergence.json"));
}
