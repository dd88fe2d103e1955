#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "retinexdual/config.hpp"
#include "retinexdual/data.hpp"
#include "retinexdual/errors.hpp"
#include "retinexdual/metrics.hpp"
#include "retinexdual/objectives.hpp"
#include "retinexdual/retinex.hpp"

namespace fs = std::filesystem;
using namespace retinexdual;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("retinexdual_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_pair(const fs::path& root, const std::string& stem, std::uint64_t seed) {
  auto clean = synth_clean(20, 24, seed);
  write_png((root / "gt" / (stem + ".png")).string(), clean);
  write_png((root / "input" / (stem + ".png")).string(), synth_degrade(clean, "haze", seed));
}

}  // namespace

TEST_CASE("psnr closed forms") {
  auto a = torch::rand({3, 8, 8}, torch::kFloat64);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a + 0.1, a) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, a.narrow(2, 0, 4)), ShapeError);
}

TEST_CASE("psnr matches a scalar loop and is symmetric") {
  auto a = torch::rand({8, 8}, torch::kFloat64), b = torch::rand({8, 8}, torch::kFloat64);
  double mse = 0;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double d = a[i][j].item<double>() - b[i][j].item<double>();
      mse += d * d;
    }
  }
  mse /= 64;
  CHECK(std::abs(psnr(a, b) - 10 * std::log10(1 / mse)) < 1e-9);
  CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("ssim metric shares the loss core") {
  auto a = torch::rand({1, 3, 24, 24}, torch::kFloat64);
  auto b = torch::rand({1, 3, 24, 24}, torch::kFloat64);
  CHECK(ssim_metric(a, a) == 1.0);
  CHECK(ssim_metric(a, 1 - a) < 1.0);
  CHECK(std::abs(ssim_metric(a, b) - (1 - ssim_loss(a, b).item<double>())) < 1e-12);
}

TEST_CASE("synthetic degradations") {
  auto clean = synth_clean(32, 32, 1);
  CHECK(clean.sizes() == torch::IntArrayRef({3, 32, 32}));
  CHECK(clean.min().item<double>() >= 0.0);
  CHECK(clean.max().item<double>() <= 1.0);
  CHECK(torch::equal(apply_haze(clean, 1.0, 0.8), clean));
  auto gray = torch::full({3, 8, 8}, 0.81);
  CHECK(apply_lowlight(gray, 2.0, 0.0, 0).sub(0.6561).abs().max().item<double>() < 1e-6);
  for (const char* kind : {"haze", "blur", "rain", "lowlight"}) {
    CAPTURE(kind);
    auto a = synth_degrade(clean, kind, 5), b = synth_degrade(clean, kind, 5), c = synth_degrade(clean, kind, 6);
    CHECK(torch::equal(a, b));
    CHECK(!torch::equal(a, c));
    CHECK(a.sizes() == clean.sizes());
  }
  CHECK_THROWS_AS(synth_degrade(clean, "snow", 0), DataError);
}

TEST_CASE("localized blur touches at most a quarter of the image") {
  auto clean = synth_clean(64, 64, 2);
  auto blurred = synth_degrade(clean, "blur", 3);
  auto changed = ((blurred - clean).abs().amax(0) > 0).to(torch::kFloat64).mean().item<double>();
  CHECK(changed <= 0.25);
  CHECK(changed > 0.0);
}

TEST_CASE("frequency gap verdicts") {
  auto clean = synth_clean(64, 64, 4);
  auto same = frequency_gap(clean, clean);
  CHECK(std::isinf(same.psnr_spatial));
  CHECK(std::isinf(same.psnr_frequency));
  CHECK(same.verdict == GapVerdict::kGlobalDominant);
  int haze_global = 0, blur_local = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto c = synth_clean(64, 64, 100 + s);
    haze_global += frequency_gap(synth_degrade(c, "haze", s), c).verdict == GapVerdict::kGlobalDominant;
    blur_local += frequency_gap(synth_degrade(c, "blur", s), c).verdict == GapVerdict::kLocalDominant;
  }
  CHECK(haze_global >= 9);
  CHECK(blur_local >= 9);
}

TEST_CASE("paired loader orders by stem and round-trips 8-bit data") {
  TempDir dir("loader");
  for (const char* stem : {"c", "a", "b"}) write_pair(dir.path, stem, stem[0]);
  auto samples = load_paired_dataset(dir.path.string());
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].identifier == "a");
  CHECK(samples[2].identifier == "c");
  CHECK(samples[1].clean.sizes() == torch::IntArrayRef({3, 20, 24}));
  auto quantized = (synth_clean(20, 24, 'b') * 255).round() / 255;
  CHECK((samples[1].clean - quantized).abs().max().item<double>() < 1e-6);
}

TEST_CASE("orphans are listed by stem") {
  TempDir dir("orphan");
  write_pair(dir.path, "a", 1);
  write_png((dir.path / "input" / "lonely.png").string(), synth_clean(20, 20, 1));
  try {
    list_paired_files(dir.path.string());
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }
}

TEST_CASE("16-bit images are rejected") {
  TempDir dir("depth");
  write_pair(dir.path, "a", 1);
  cv::Mat deep(20, 24, CV_16UC3, cv::Scalar(1000, 2000, 3000));
  cv::imwrite((dir.path / "input" / "a.png").string(), deep);
  try {
    load_paired_dataset(dir.path.string());
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("8-bit") != std::string::npos);
    CHECK(msg.find("'a'") != std::string::npos);
  }
}

TEST_CASE("missing layout and unreadable files") {
  TempDir dir("layout");
  CHECK_THROWS_AS(list_paired_files((dir.path / "nope").string()), DataError);
  CHECK_THROWS_AS(list_paired_files(dir.path.string()), DataError);
  write_pair(dir.path, "a", 1);
  std::ofstream(dir.path / "gt" / "a.png") << "not an image";
  CHECK_THROWS_AS(load_paired_dataset(dir.path.string()), DataError);
}

TEST_CASE("synthetic dataset writer") {
  TempDir dir("synth");
  write_synthetic_dataset(dir.path.string(), 3, 32, "lowlight", 0);
  auto samples = load_paired_dataset(dir.path.string());
  CHECK(samples.size() == 3);
  CHECK(psnr(samples[0].degraded, samples[0].clean) < 30.0);
}

TEST_CASE("parameter counts per module") {
  RetinexDual model(Config::preset_named("desk"));
  auto counts = count_params(*model);
  std::int64_t direct = 0;
  for (const auto& p : model->parameters()) direct += p.numel();
  CHECK(counts.total == direct);
  CHECK(counts.of("global_embedding") == 32 * 8);
  CHECK(counts.of("decomposer") == (3 * 16 * 9 + 16) + (16 * 16 * 9 + 16) + (16 * 4 + 4));
  CHECK(counts.of("missing") == 0);
}
