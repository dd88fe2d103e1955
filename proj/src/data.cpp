#include "retinexdual/data.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "retinexdual/errors.hpp"
#include "retinexdual/tensor_ops.hpp"

namespace fs = std::filesystem;

namespace retinexdual {

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image(entry.path())) continue;
    const auto stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second) {
      throw DataError("duplicate stem '" + stem + "' in " + dir.string());
    }
  }
  return out;
}

fs::path find_subdir(const fs::path& root, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    if (fs::is_directory(root / name)) return root / name;
  }
  throw DataError("dataset root '" + root.string() + "' has no '" + *names.begin() + "' directory");
}

double uniform(at::Generator& gen, double lo, double hi) {
  return lo + (hi - lo) * torch::rand({}, gen, torch::kFloat64).item<double>();
}

std::int64_t randint(at::Generator& gen, std::int64_t lo, std::int64_t hi_inclusive) {
  return torch::randint(lo, hi_inclusive + 1, {1}, gen, torch::kInt64).item<std::int64_t>();
}

cv::Mat to_mat(const torch::Tensor& chw) {
  auto hwc = chw.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  cv::Mat view(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>());
  return view.clone();
}

torch::Tensor from_mat(const cv::Mat& mat) {
  auto t = torch::from_blob(mat.data, {mat.rows, mat.cols, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).clone();
}

torch::Tensor require_chw(const torch::Tensor& image, const char* what) {
  auto x = image.dim() == 4 && image.size(0) == 1 ? image[0] : image;
  if (x.dim() != 3 || x.size(0) != 3) {
    throw ShapeError(std::string(what) + ": expected [3, H, W], got " + shape_string(image));
  }
  return x;
}

}  // namespace

std::vector<PairedFile> list_paired_files(const std::string& root) {
  const fs::path base(root);
  if (!fs::is_directory(base)) throw DataError("dataset root '" + root + "' does not exist");
  const auto degraded = images_by_stem(find_subdir(base, {"input", "Input"}));
  const auto clean = images_by_stem(find_subdir(base, {"gt", "GT"}));
  std::vector<std::string> orphans;
  for (const auto& [stem, path] : degraded) {
    if (!clean.count(stem)) orphans.push_back("input/" + stem);
  }
  for (const auto& [stem, path] : clean) {
    if (!degraded.count(stem)) orphans.push_back("gt/" + stem);
  }
  if (!orphans.empty()) {
    std::string msg = "unpaired files in '" + root + "':";
    for (const auto& o : orphans) msg += " " + o;
    throw DataError(msg);
  }
  std::vector<PairedFile> files;
  for (const auto& [stem, path] : degraded) {
    files.push_back({stem, path.string(), clean.at(stem).string()});
  }
  return files;
}

PairedSample load_pair(const PairedFile& file) {
  PairedSample sample;
  sample.identifier = file.identifier;
  try {
    sample.degraded = read_image(file.degraded_path);
    sample.clean = read_image(file.clean_path);
  } catch (const DataError& e) {
    throw DataError("sample '" + file.identifier + "': " + e.what());
  }
  if (sample.degraded.sizes() != sample.clean.sizes()) {
    throw DataError("sample '" + file.identifier + "': input " + shape_string(sample.degraded) + " and gt " +
                    shape_string(sample.clean) + " differ in size");
  }
  return sample;
}

std::vector<PairedSample> load_paired_dataset(const std::string& root) {
  std::vector<PairedSample> out;
  for (const auto& file : list_paired_files(root)) out.push_back(load_pair(file));
  return out;
}

std::vector<std::string> list_images(const std::string& path) {
  std::vector<std::string> out;
  if (fs::is_regular_file(path)) {
    out.push_back(path);
  } else if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && is_image(entry.path())) out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
  } else {
    throw DataError("no such file or directory: '" + path + "'");
  }
  return out;
}

torch::Tensor read_image(const std::string& path) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot read image '" + path + "'");
  if (raw.depth() != CV_8U) {
    throw DataError("'" + path + "' is not 8-bit (only 8-bit PNG/JPEG images are supported)");
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw DataError("'" + path + "' has an unsupported channel count");
  }
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

void write_png(const std::string& path, const torch::Tensor& image) {
  auto chw = require_chw(image, "write_png");
  auto bytes = chw.detach().to(torch::kCPU, torch::kFloat32).clamp(0, 1).mul(255.0).round().to(torch::kUInt8);
  auto hwc = bytes.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  if (!cv::imwrite(path, bgr)) throw DataError("cannot write image '" + path + "'");
}

torch::Tensor synth_clean(std::int64_t height, std::int64_t width, std::uint64_t seed) {
  constexpr double kBeta = 1.5;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto fy = torch::fft::fftfreq(height, opts).view({-1, 1});
  auto fx = torch::fft::fftfreq(width, opts).view({1, -1});
  auto radius = torch::sqrt(fx * fx + fy * fy);
  radius.index_put_({0, 0}, 1.0);
  auto filter = radius.pow(-kBeta);
  filter.index_put_({0, 0}, 0.0);

  auto base = torch::randn({height, width}, gen, opts);
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < 3; ++c) {
    auto noise = 0.7 * base + 0.3 * torch::randn({height, width}, gen, opts);
    auto field = torch::real(torch::fft::ifft2(torch::fft::fft2(noise) * filter));
    field = (field - field.mean()) / field.std(/*unbiased=*/false);
    channels.push_back(0.5 + 0.15 * field + uniform(gen, -0.1, 0.1));
  }
  return torch::stack(channels).clamp(0, 1).to(torch::kFloat32);
}

torch::Tensor apply_haze(const torch::Tensor& clean, double transmission, double airlight) {
  return clean * transmission + airlight * (1.0 - transmission);
}

torch::Tensor apply_lowlight(const torch::Tensor& clean, double gamma, double noise_std, std::uint64_t seed) {
  auto dark = clean.pow(gamma);
  if (noise_std > 0.0) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    dark = dark + noise_std * torch::randn(clean.sizes(), gen, clean.options());
  }
  return dark.clamp(0, 1);
}

torch::Tensor apply_local_blur(const torch::Tensor& clean, double sigma, std::int64_t top, std::int64_t left,
                               std::int64_t height, std::int64_t width) {
  auto chw = require_chw(clean, "apply_local_blur");
  cv::Mat blurred;
  cv::GaussianBlur(to_mat(chw), blurred, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  auto out = chw.clone();
  using torch::indexing::Slice;
  auto patch = from_mat(blurred).to(chw.dtype()).index({Slice(), Slice(top, top + height), Slice(left, left + width)});
  out.index_put_({Slice(), Slice(top, top + height), Slice(left, left + width)}, patch);
  return out;
}

namespace {

torch::Tensor apply_rain(const torch::Tensor& clean, at::Generator& gen) {
  auto chw = require_chw(clean, "rain");
  const auto h = chw.size(1), w = chw.size(2);
  const double density = uniform(gen, 0.002, 0.006);
  const double angle = uniform(gen, -30.0, 30.0) * std::numbers::pi / 180.0;
  const int length = static_cast<int>(randint(gen, 7, 15));
  const double strength = uniform(gen, 0.5, 0.8);

  auto seeds = (torch::rand({h, w}, gen, torch::kFloat32) < density).to(torch::kFloat32).contiguous();
  cv::Mat seed_mat(static_cast<int>(h), static_cast<int>(w), CV_32F, seeds.data_ptr<float>());
  cv::Mat kernel = cv::Mat::zeros(length, length, CV_32F);
  const double c = (length - 1) / 2.0;
  const double dx = std::sin(angle) * c, dy = std::cos(angle) * c;
  cv::line(kernel, cv::Point2d(c - dx, c - dy), cv::Point2d(c + dx, c + dy), cv::Scalar(1.0), 1, cv::LINE_AA);
  cv::Mat streaks;
  cv::filter2D(seed_mat, streaks, CV_32F, kernel, cv::Point(-1, -1), 0, cv::BORDER_CONSTANT);
  auto mask = torch::from_blob(streaks.data, {h, w}, torch::kFloat32).clone().clamp(0, 1);
  return (chw + strength * mask.unsqueeze(0).to(chw.dtype())).clamp(0, 1);
}

}  // namespace

torch::Tensor synth_degrade(const torch::Tensor& clean, std::string_view kind, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  if (kind == "haze") {
    const double t = uniform(gen, 0.4, 0.8);
    const double a = uniform(gen, 0.7, 1.0);
    return apply_haze(clean, t, a);
  }
  if (kind == "blur") {
    auto chw = require_chw(clean, "blur");
    const auto h = chw.size(1), w = chw.size(2);
    const auto ph = h / 2, pw = w / 2;
    const auto top = randint(gen, 0, h - ph);
    const auto left = randint(gen, 0, w - pw);
    const double sigma = uniform(gen, 2.0, 4.0);
    return apply_local_blur(chw, sigma, top, left, ph, pw);
  }
  if (kind == "rain") return apply_rain(clean, gen);
  if (kind == "lowlight") {
    const double gamma = uniform(gen, 2.0, 4.0);
    const double noise = uniform(gen, 0.002, 0.01);
    const auto noise_seed = static_cast<std::uint64_t>(randint(gen, 0, (std::int64_t{1} << 62)));
    return apply_lowlight(clean, gamma, noise, noise_seed);
  }
  throw DataError("unknown degradation kind '" + std::string(kind) + "' (expected haze, blur, rain or lowlight)");
}

void write_synthetic_dataset(const std::string& root, std::int64_t count, std::int64_t size, std::string_view kind,
                             std::uint64_t seed) {
  if (count <= 0 || size < 16) throw ConfigError("synthetic dataset needs count > 0 and size >= 16");
  const fs::path base(root);
  fs::create_directories(base / "input");
  fs::create_directories(base / "gt");
  for (std::int64_t i = 0; i < count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%04lld", static_cast<long long>(i));
    const auto item_seed = seed * 1000003ULL + static_cast<std::uint64_t>(i);
    auto clean = synth_clean(size, size, item_seed);
    auto degraded = synth_degrade(clean, kind, item_seed + 7919ULL);
    write_png((base / "gt" / (std::string(stem) + ".png")).string(), clean);
    write_png((base / "input" / (std::string(stem) + ".png")).string(), degraded);
  }
}

}  // namespace retinexdual
