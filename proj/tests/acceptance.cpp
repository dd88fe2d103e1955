// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is nonzero if any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "retinexdual/checkpoint.hpp"
#include "retinexdual/config.hpp"
#include "retinexdual/data.hpp"
#include "retinexdual/fia.hpp"
#include "retinexdual/gssm.hpp"
#include "retinexdual/metrics.hpp"
#include "retinexdual/objectives.hpp"
#include "retinexdual/retinex.hpp"
#include "retinexdual/samba.hpp"
#include "retinexdual/selective_scan.hpp"
#include "retinexdual/training.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace retinexdual;

namespace {

// Tolerances and budgets.
constexpr int kScanInstances = 200;
constexpr double kScanTolF32 = 1e-6;
constexpr double kScanTolF64 = 1e-10;
constexpr double kScanBudgetSeconds = 30.0;
constexpr double kGradientTol = 1e-4;
constexpr double kGradientBudgetSeconds = 300.0;
constexpr double kReportTol = 1e-10;
constexpr double kFftRoundTripTol = 1e-5;
constexpr int kGapTrials = 50;
constexpr double kGapRate = 0.90;
constexpr double kGapBudgetSeconds = 120.0;
constexpr double kOverfitGainDb = 3.0;
constexpr double kOverfitLossDrop = 0.50;
constexpr double kOverfitBudgetSeconds = 1200.0;
constexpr std::int64_t kFiaMin = 150000;
constexpr std::int64_t kFiaMax = 250000;
constexpr double kReferenceTotal = 4.726e6;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename M>
void straight_through_off(M& module) {
  for (const auto& m : module.modules()) {
    if (auto* p = m->template as<ClassificationPolicyImpl>()) p->straight_through = false;
  }
}

// 1. Selective scan against the loop reference.
void scan_oracle(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2024);
  auto draw = [&](std::int64_t lo, std::int64_t hi) {
    return torch::randint(lo, hi + 1, {1}, gen, torch::kInt64).item<std::int64_t>();
  };
  double worst32 = 0, worst64 = 0;
  for (int i = 0; i < kScanInstances; ++i) {
    const auto length = draw(1, 256), states = draw(1, 16), channels = draw(1, 8);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto u = torch::randn({length, channels}, gen, opts);
    auto delta = torch::rand({length, channels}, gen, opts) * 0.5 + 1e-3;
    auto a = -(torch::rand({channels, states}, gen, opts) * 4 + 0.05);
    auto b = torch::randn({length, states}, gen, opts);
    auto c = torch::randn({length, states}, gen, opts);
    auto d = torch::randn({channels}, gen, opts);
    for (auto dtype : {torch::kFloat64, torch::kFloat32}) {
      std::vector<torch::Tensor> in{u.to(dtype), delta.to(dtype), a.to(dtype), b.to(dtype), c.to(dtype), d.to(dtype)};
      auto ref = testing::reference_scan(length, channels, states, testing::to_vector(in[0]),
                                         testing::to_vector(in[1]), testing::to_vector(in[2]),
                                         testing::to_vector(in[3]), testing::to_vector(in[4]),
                                         testing::to_vector(in[5]));
      auto got = testing::to_vector(selective_scan(in[0], in[1], in[2], in[3], in[4], in[5]));
      double worst = 0;
      for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref[k] - got[k]));
      (dtype == torch::kFloat64 ? worst64 : worst32) = std::max(dtype == torch::kFloat64 ? worst64 : worst32, worst);
    }
  }
  const double elapsed = seconds_since(start);
  o.detail << "instances=" << kScanInstances << " max_err_f32=" << worst32 << " max_err_f64=" << worst64
           << " time=" << elapsed << "s";
  o.require(worst32 < kScanTolF32, "float32 error");
  o.require(worst64 < kScanTolF64, "float64 error");
  o.require(elapsed < kScanBudgetSeconds, "runtime");
}

// 2. Finite-difference gradients at float64 on 8x8 inputs.
void gradient_suite(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  torch::manual_seed(7);
  auto f64 = torch::TensorOptions().dtype(torch::kFloat64).requires_grad(true);
  std::vector<std::pair<std::string, double>> errors;
  auto record = [&](const std::string& name, const std::function<torch::Tensor()>& f,
                    const std::vector<torch::Tensor>& vars) {
    errors.emplace_back(name, testing::check_gradients(f, vars, 32).max_error);
  };

  {
    auto r = torch::rand({1, 3, 8, 8}, f64), l = torch::rand({1, 1, 8, 8}, f64);
    record("recompose", [&] { return testing::probe(recompose(r, l)); }, {r, l});
  }
  {
    Rdb rdb(4, std::array<std::int64_t, 3>{1, 2, 3});
    rdb->to(torch::kFloat64);
    auto x = torch::randn({1, 4, 8, 8}, f64);
    auto vars = testing::parameters_of(*rdb);
    vars.push_back(x);
    record("rdb_forward", [&] { return testing::probe(rdb->forward(x)); }, vars);
  }
  {
    SambOptions so;
    so.channels = 2;
    so.gssm.state_dim = 3;
    so.gssm.num_embeddings = 3;
    so.gssm.embedding_rank = 2;
    so.gssm.positional_grid = 4;
    Samb samb(so);
    samb->to(torch::kFloat64);
    samb->eval();
    straight_through_off(*samb);
    auto x = torch::randn({1, 2, 8, 8}, f64);
    auto vars = testing::parameters_of(*samb);
    vars.push_back(x);
    record("samb_forward", [&] { return testing::probe(samb->forward(x)); }, vars);
  }
  {
    GssmOptions go;
    go.channels = 6;
    go.inner = 6;
    go.state_dim = 4;
    go.num_embeddings = 4;
    go.embedding_rank = 3;
    go.positional_grid = 4;
    Gssm gssm(go);
    gssm->to(torch::kFloat64);
    gssm->eval();
    straight_through_off(*gssm);
    auto x = torch::randn({1, 6, 8, 8}, f64);
    auto vars = testing::parameters_of(*gssm);
    vars.push_back(x);
    record("gssm_forward", [&] { return testing::probe(gssm->forward(x)); }, vars);
  }
  {
    Fcb fcb(FcbOptions{3, true, true});
    fcb->to(torch::kFloat64);
    auto x = torch::randn({1, 3, 8, 8}, f64);
    auto vars = testing::parameters_of(*fcb);
    vars.push_back(x);
    record("fcb_forward", [&] { return testing::probe(fcb->forward(x)); }, vars);
  }
  {
    auto target = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto pred = torch::rand({1, 3, 8, 8}, f64);
    auto extractor = FeatureExtractorImpl::random(1234);
    extractor->to(torch::kFloat64);
    record("charbonnier", [&] { return charbonnier(pred, target); }, {pred});
    record("fft_l1", [&] { return fft_l1(pred, target); }, {pred});
    record("ssim_loss", [&] { return ssim_loss(pred, target); }, {pred});
    record("perceptual", [&] { return perceptual(pred, target, *extractor); }, {pred});
  }
  const double elapsed = seconds_since(start);
  for (const auto& [name, err] : errors) {
    o.detail << name << "=" << err << " ";
    o.require(err < kGradientTol, name);
  }
  o.detail << "time=" << elapsed << "s";
  o.require(elapsed < kGradientBudgetSeconds, "runtime");
}

// 3. Zero correction heads: restore is the clamped recomposition of the decomposition.
void retinex_closure(Outcome& o) {
  torch::manual_seed(3);
  RetinexDual model(Config::preset_named("desk"));
  model->zero_correction_heads();
  model->eval();
  auto image = synth_clean(48, 64, 3).unsqueeze(0);
  auto out = model->forward(image);
  auto pair = model->decompose(image);
  const bool closure = torch::equal(out.final_image, recompose(pair.reflectance, pair.illumination).clamp(0, 1));
  bool levels = true;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& lv = out.retinex_pyramid[i];
    levels = levels && torch::equal(out.pyramid_raw[i], lv.reflectance * lv.illumination) &&
             torch::equal(out.pyramid[i], out.pyramid_raw[i].clamp(0, 1));
  }
  o.detail << "restore==clamp(R*L): " << closure << " levels==R_i*L_i: " << levels;
  o.require(closure, "closure");
  o.require(levels, "pyramid levels");
}

// 4. Loss report arithmetic and toggles.
void loss_arithmetic(Outcome& o) {
  auto extractor = FeatureExtractorImpl::random(1234);
  extractor->to(torch::kFloat64);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  auto gt = ground_truth_pyramid(torch::rand({2, 3, 32, 32}, gen, torch::kFloat64));
  auto pred = ground_truth_pyramid(torch::rand({2, 3, 32, 32}, gen, torch::kFloat64));
  auto weights = LossWeights::from_config(LossConfig{}, AblationConfig{});
  auto report = total_loss(pred, gt, weights, extractor.get());
  double independent = 0;
  for (const auto& level : report.levels) {
    double inner = 0;
    for (const auto& [name, value] : level.terms) inner += weights.lambda(name) * value;
    independent += weights.levels[level.level] * inner;
  }
  const double resum = std::abs(report.total - independent);
  const bool lambdas = weights.cb == 1.0 && weights.fft == 0.1 && weights.ssim == 0.5 && weights.perceptual == 0.4;
  const bool levels = weights.levels == std::array<double, 3>{1.0, 0.5, 0.25};

  AblationConfig single;
  single.multilevel = false;
  auto single_report = total_loss(pred, gt, LossWeights::from_config(LossConfig{}, single), extractor.get());
  auto zeroed = weights;
  zeroed.levels = {1.0, 0.0, 0.0};
  const bool multilevel = single_report.levels.size() == 1 &&
                          single_report.total == total_loss(pred, gt, zeroed, extractor.get()).total;
  AblationConfig flat;
  flat.scaling = false;
  auto flat_weights = LossWeights::from_config(LossConfig{}, flat);
  auto flat_report = total_loss(pred, gt, flat_weights, extractor.get());
  double flat_expected = 0;
  for (const auto& level : flat_report.levels) {
    for (const auto& [name, value] : level.terms) flat_expected += weights.lambda(name) * value;
  }
  const bool scaling = flat_weights.levels == std::array<double, 3>{1.0, 1.0, 1.0} &&
                       std::abs(flat_report.total - flat_expected) < kReportTol;

  o.detail << "resum_err=" << resum << " lambdas=" << lambdas << " levels=" << levels
           << " multilevel_toggle=" << multilevel << " scaling_toggle=" << scaling;
  o.require(resum < kReportTol, "re-summation");
  o.require(lambdas && levels, "weights");
  o.require(multilevel, "multilevel toggle");
  o.require(scaling, "scaling toggle");
}

// 5. Spectral round trip, permutation inverse, one-hot policy, decay bound.
void identities(Outcome& o) {
  torch::manual_seed(5);
  auto x = torch::rand({2, 3, 37, 50});
  const double round_trip = (fft_reconstruct(fft_decompose(x), 37, 50) - x).abs().max().item<double>();

  auto tokens = torch::randn({2, 300, 8});
  auto groups = torch::randint(0, 16, {2, 300}, torch::kInt64);
  auto [sorted, order] = sgn_unfold(tokens, groups);
  const bool fold = torch::equal(sgn_fold(sorted, order), tokens);

  auto logits = torch::randn({2, 300, 16}, torch::requires_grad());
  auto y = classify(logits, true, 1.0, true).assignment;
  const bool one_hot = ((y == 1).sum(-1) == 1).all().item<bool>() && ((y == 0).sum(-1) == 15).all().item<bool>();

  AttentiveScan ase(8, 16);
  auto p = ase->project(torch::randn({2, 300, 8}));
  const double max_decay = zoh_decay(p.delta, ase->a()).abs().max().item<double>();
  const bool positive_delta = p.delta.min().item<double>() > 0;

  o.detail << "fft_round_trip=" << round_trip << " fold_exact=" << fold << " one_hot=" << one_hot
           << " max|Abar|=" << max_decay;
  o.require(round_trip < kFftRoundTripTol, "fft round trip");
  o.require(fold, "sgn fold");
  o.require(one_hot, "one-hot rows");
  o.require(positive_delta && max_decay < 1.0, "decay bound");
}

// 6. Spatial vs frequency PSNR on synthetic haze and localized blur.
void frequency_direction(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  int haze_global = 0, blur_local = 0;
  for (int t = 0; t < kGapTrials; ++t) {
    auto clean = synth_clean(64, 64, 10000 + static_cast<std::uint64_t>(t));
    haze_global += frequency_gap(synth_degrade(clean, "haze", t), clean).verdict == GapVerdict::kGlobalDominant;
    blur_local += frequency_gap(synth_degrade(clean, "blur", t), clean).verdict == GapVerdict::kLocalDominant;
  }
  const double elapsed = seconds_since(start);
  const double haze_rate = haze_global / static_cast<double>(kGapTrials);
  const double blur_rate = blur_local / static_cast<double>(kGapTrials);
  o.detail << "haze_global=" << haze_rate << " blur_local=" << blur_rate << " time=" << elapsed << "s";
  o.require(haze_rate >= kGapRate, "haze direction");
  o.require(blur_rate >= kGapRate, "blur direction");
  o.require(elapsed < kGapBudgetSeconds, "runtime");
}

// 7. Desk overfit on eight 64x64 synthetic low-light pairs.
void desk_overfit(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<PairedSample> data;
  for (int i = 0; i < 8; ++i) {
    auto clean = synth_clean(64, 64, 700 + static_cast<std::uint64_t>(i));
    data.push_back({synth_degrade(clean, "lowlight", 800 + static_cast<std::uint64_t>(i)), clean,
                    "p" + std::to_string(i)});
  }
  Config config = Config::preset_named("desk");
  const auto dir = fs::temp_directory_path() / "retinexdual_acceptance_overfit";
  fs::remove_all(dir);
  auto result = fit(data, config, dir.string());
  auto report = evaluate(*result.model, data);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += result.losses[static_cast<std::size_t>(i)] / 10;
    tail += result.losses[result.losses.size() - 1 - static_cast<std::size_t>(i)] / 10;
  }
  const double gain = report.mean_psnr - report.mean_input_psnr;
  const double drop = 1.0 - tail / head;
  const double elapsed = seconds_since(start);
  o.detail << "steps=" << config.train.max_steps << " input_psnr=" << report.mean_input_psnr
           << " restored_psnr=" << report.mean_psnr << " gain=" << gain << "dB loss_start=" << head
           << " loss_end=" << tail << " drop=" << drop << " time=" << elapsed << "s";
  o.require(gain >= kOverfitGainDb, "psnr gain");
  o.require(drop >= kOverfitLossDrop, "loss drop");
  o.require(elapsed < kOverfitBudgetSeconds, "runtime");
  fs::remove_all(dir);
}

// 8. Parameter accounting.
void parameter_accounting(Outcome& o) {
  torch::nn::Conv2d conv(conv_options(3, 16, 3));
  torch::nn::Linear linear(10, 7);
  ChannelLayerNorm norm(12);
  const bool units = count_params(*conv).total == 3 * 3 * 3 * 16 + 16 && count_params(*linear).total == 10 * 7 + 7 &&
                     count_params(*norm).total == 2 * 12;
  Decomposer decomposer(16);
  const bool decomposer_ok = count_params(*decomposer).total == (3 * 16 * 9 + 16) + (16 * 16 * 9 + 16) + (16 * 4 + 4);

  RetinexDual full(Config::preset_named("full"));
  const auto counts = count_params(*full);
  const auto fia = counts.of("illumination_fia");
  const double delta = static_cast<double>(counts.total) - kReferenceTotal;
  o.detail << "unit_layers=" << units << " decomposer=" << decomposer_ok << " full_fia=" << fia
           << " full_total=" << counts.total << " reference=" << kReferenceTotal << " delta=" << delta << " ("
           << 100.0 * delta / kReferenceTotal << "%, informational)";
  o.require(units && decomposer_ok, "closed-form layer sums");
  o.require(fia >= kFiaMin && fia <= kFiaMax, "fia size");
}

// 9. Replay, checkpoint round trip, repeatable inference.
void determinism(Outcome& o) {
  std::vector<PairedSample> data;
  for (int i = 0; i < 2; ++i) {
    auto clean = synth_clean(64, 64, 40 + static_cast<std::uint64_t>(i));
    data.push_back({synth_degrade(clean, "haze", 50 + static_cast<std::uint64_t>(i)), clean, std::to_string(i)});
  }
  Config config = Config::preset_named("desk");
  config.train.seed = 9;
  auto run = [&] {
    Trainer trainer(config);
    PatchSampler sampler(data, config.train.patch, config.train.batch, true, 1);
    std::vector<double> losses;
    for (int i = 0; i < 5; ++i) losses.push_back(trainer.step(sampler.next()).total);
    return std::make_pair(losses, trainer.model());
  };
  auto [first, model] = run();
  auto [second, unused] = run();
  const bool replay = first == second;

  const auto path = (fs::temp_directory_path() / "retinexdual_acceptance.ckpt").string();
  save_checkpoint(path, *model);
  auto loaded = load_checkpoint(path);
  bool params = true;
  auto reloaded = loaded->named_parameters();
  for (const auto& item : model->named_parameters()) params = params && torch::equal(item.value(), reloaded[item.key()]);
  model->eval();
  auto image = data[0].degraded.unsqueeze(0);
  auto a = loaded->forward(image).final_image;
  auto b = loaded->forward(image).final_image;
  const bool restore_same = torch::equal(a, b) && torch::equal(a, model->forward(image).final_image);
  fs::remove(path);

  o.detail << "replay_through_step5=" << replay << " checkpoint_params_exact=" << params
           << " eval_restore_identical=" << restore_same;
  o.require(replay, "replay");
  o.require(params, "checkpoint");
  o.require(restore_same, "eval restore");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, void (*)(Outcome&)>> criteria{
      {"scan oracle equivalence", scan_oracle},
      {"gradient suite", gradient_suite},
      {"retinex closure and zero-branch fixed point", retinex_closure},
      {"loss report arithmetic and toggles", loss_arithmetic},
      {"fft and permutation identities", identities},
      {"spatial vs frequency direction", frequency_direction},
      {"desk overfit", desk_overfit},
      {"parameter accounting", parameter_accounting},
      {"determinism and serialization", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome outcome;
    try {
      criteria[i].second(outcome);
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail << " [exception: " << e.what() << "]";
    }
    failures += !outcome.pass;
    std::cout << "criterion " << id << " " << (outcome.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << outcome.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
