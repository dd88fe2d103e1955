#include "retinexdual/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <json.hpp>

#include "retinexdual/checkpoint.hpp"
#include "retinexdual/config.hpp"
#include "retinexdual/data.hpp"
#include "retinexdual/errors.hpp"
#include "retinexdual/metrics.hpp"
#include "retinexdual/tiling.hpp"
#include "retinexdual/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retinexdual {

namespace {

struct ConfigFlags {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> ablations;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Configuration preset")->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--config", config_path, "JSON configuration file (replaces the preset)");
    cmd->add_option("--set", overrides, "Override a field: section.key=value (repeatable)");
    cmd->add_option("--ablate", ablations, "Ablation switch: name=off (repeatable)");
    cmd->add_option("--seed", seed, "Training seed");
  }

  Config build() const {
    Config c = config_path.empty() ? Config::preset_named(preset) : Config::from_file(config_path);
    for (const auto& o : overrides) c.apply_override(o);
    for (const auto& a : ablations) c.apply_ablation(a);
    if (seed) c.train.seed = *seed;
    c.validate();
    return c;
  }
};

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json score_record(const ImageScore& s) {
  return {{"id", s.identifier},          {"psnr", finite_or_null(s.psnr)},
          {"ssim", s.ssim},              {"input_psnr", finite_or_null(s.input_psnr)},
          {"input_ssim", s.input_ssim}};
}

json summary_record(const EvalReport& r) {
  return {{"summary", true},
          {"count", r.images.size()},
          {"mean_psnr", finite_or_null(r.mean_psnr)},
          {"mean_ssim", r.mean_ssim},
          {"mean_input_psnr", finite_or_null(r.mean_input_psnr)},
          {"mean_input_ssim", r.mean_input_ssim}};
}

class Commands {
 public:
  Commands(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  void train(const ConfigFlags& flags, const std::string& data, const std::string& val_data,
             const std::string& out_dir, std::int64_t tile) {
    const auto config = flags.build();
    const auto dataset = load_paired_dataset(data);
    FitOptions options;
    options.tile = tile;
    if (!val_data.empty()) options.validation = load_paired_dataset(val_data);
    const auto interval = std::max<std::int64_t>(1, config.train.max_steps / 20);
    options.on_record = [&](const json& record) {
      if (record.contains("val_psnr") || record.at("step").get<std::int64_t>() % interval == 0) {
        err_ << record.dump() << '\n';
      }
    };
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "config.json") << config.to_json().dump(2) << '\n';
    auto result = fit(dataset, config, out_dir, options);
    out_ << json{{"best_checkpoint", result.best_checkpoint},
                 {"last_checkpoint", result.last_checkpoint},
                 {"log", result.log_path},
                 {"best_step", result.best_step},
                 {"best_psnr", finite_or_null(result.best_psnr)}}
                .dump()
         << '\n';
  }

  void restore(const std::string& checkpoint, const std::string& input, const std::string& out_dir,
               std::int64_t tile) {
    auto model = load_checkpoint(checkpoint);
    const auto files = list_images(input);
    if (files.empty()) throw DataError("no images found at '" + input + "'");
    for (const auto& path : files) {
      bool tiled = false;
      auto restored = restore_image(*model, read_image(path), tile, kDefaultTileOverlap, &tiled);
      const auto target = fs::path(out_dir) / (fs::path(path).stem().string() + "_restored.png");
      write_png(target.string(), restored);
      out_ << json{{"input", path}, {"output", target.string()}, {"tiled", tiled}}.dump() << '\n';
    }
  }

  void evaluate_cmd(const std::string& checkpoint, const std::string& data, std::int64_t tile,
                    const std::string& out_dir) {
    auto model = load_checkpoint(checkpoint);
    const auto report = evaluate(*model, load_paired_dataset(data), tile);
    std::ofstream table;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      table.open(fs::path(out_dir) / "metrics.jsonl");
    }
    auto emit = [&](const json& record) {
      out_ << record.dump() << '\n';
      if (table.is_open()) table << record.dump() << '\n';
    };
    for (const auto& s : report.images) emit(score_record(s));
    emit(summary_record(report));
  }

  void analyze(const std::string& data) {
    const auto files = list_paired_files(data);
    if (files.empty()) throw DataError("dataset '" + data + "' is empty");
    std::map<std::string, std::int64_t> histogram{{"global-dominant", 0}, {"local-dominant", 0}};
    for (const auto& file : files) {
      const auto sample = load_pair(file);
      const auto r = frequency_gap(sample.degraded, sample.clean);
      ++histogram[to_string(r.verdict)];
      out_ << json{{"id", sample.identifier},
                   {"psnr_spatial", finite_or_null(r.psnr_spatial)},
                   {"psnr_frequency", finite_or_null(r.psnr_frequency)},
                   {"verdict", to_string(r.verdict)}}
                  .dump()
           << '\n';
    }
    out_ << json{{"summary", true}, {"count", files.size()}, {"verdicts", histogram}}.dump() << '\n';
  }

  void count(const ConfigFlags& flags) {
    const auto config = flags.build();
    RetinexDual model(config);
    const auto counts = count_params(*model);
    for (const auto& [name, n] : counts.modules) out_ << json{{"module", name}, {"params", n}}.dump() << '\n';
    out_ << json{{"module", "total"}, {"params", counts.total}, {"preset", config.preset}}.dump() << '\n';
  }

  void ablate(const ConfigFlags& flags, const std::string& data, const std::string& out_dir, std::int64_t tile) {
    const auto dataset = load_paired_dataset(data);
    std::vector<std::pair<std::string, std::vector<std::string>>> variants{{"baseline", {}}};
    for (const auto& a : flags.ablations) variants.push_back({a, {a}});
    ConfigFlags base = flags;
    base.ablations.clear();
    for (const auto& [name, switches] : variants) {
      ConfigFlags variant = base;
      variant.ablations = switches;
      const auto config = variant.build();
      auto dir = fs::path(out_dir) / (name == "baseline" ? name : sanitize(name));
      FitOptions options;
      options.tile = tile;
      auto result = fit(dataset, config, dir.string(), options);
      const auto report = evaluate(*result.model, dataset, tile);
      out_ << json{{"variant", name},
                   {"params", count_params(*result.model).total},
                   {"mean_psnr", finite_or_null(report.mean_psnr)},
                   {"mean_ssim", report.mean_ssim},
                   {"final_loss", result.losses.empty() ? json(nullptr) : json(result.losses.back())}}
                  .dump()
           << '\n';
    }
  }

  void synthesize(const std::string& out_dir, const std::string& kind, std::int64_t count, std::int64_t size,
                  std::uint64_t seed) {
    write_synthetic_dataset(out_dir, count, size, kind, seed);
    out_ << json{{"root", out_dir}, {"kind", kind}, {"count", count}, {"size", size}}.dump() << '\n';
  }

 private:
  static std::string sanitize(std::string s) {
    for (auto& ch : s) {
      if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    }
    return s;
  }

  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retinex-guided dual-branch image restoration"};
  app.require_subcommand(1);
  Commands commands(out, err);
  std::function<void()> action;

  ConfigFlags train_flags;
  std::string data, val_data, out_dir = "runs/train", checkpoint, input;
  std::int64_t tile = 512;
  auto* train = app.add_subcommand("train", "Train a model on a paired dataset");
  train_flags.attach(train);
  train->add_option("--data", data, "Dataset root holding input/ and gt/")->required();
  train->add_option("--val", val_data, "Validation dataset root (default: the training set)");
  train->add_option("--out", out_dir, "Output directory for checkpoints and the log");
  train->add_option("--tile", tile, "Tile size for validation inference");
  train->callback([&] { action = [&] { commands.train(train_flags, data, val_data, out_dir, tile); }; });

  auto* restore = app.add_subcommand("restore", "Restore an image or a directory of images");
  std::string restore_out = "restored";
  restore->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  restore->add_option("input", input, "Image file or directory")->required();
  restore->add_option("--out", restore_out, "Output directory");
  restore->add_option("--tile", tile, "Tile size; larger images are processed in overlapping tiles");
  restore->callback([&] { action = [&] { commands.restore(checkpoint, input, restore_out, tile); }; });

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a paired dataset");
  std::string eval_out;
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--data", data, "Dataset root holding input/ and gt/")->required();
  evaluate->add_option("--tile", tile, "Tile size");
  evaluate->add_option("--out", eval_out, "Also write metrics.jsonl to this directory");
  evaluate->callback([&] { action = [&] { commands.evaluate_cmd(checkpoint, data, tile, eval_out); }; });

  auto* analyze = app.add_subcommand("analyze-frequency", "Spatial vs frequency PSNR of degraded/clean pairs");
  analyze->add_option("--data", data, "Dataset root holding input/ and gt/")->required();
  analyze->callback([&] { action = [&] { commands.analyze(data); }; });

  ConfigFlags count_flags;
  auto* count = app.add_subcommand("count-params", "Parameter counts per top-level module");
  count_flags.attach(count);
  count->callback([&] { action = [&] { commands.count(count_flags); }; });

  ConfigFlags ablate_flags;
  std::string ablate_out = "runs/ablate";
  auto* ablate = app.add_subcommand("ablate", "Train and score a baseline plus one variant per --ablate switch");
  ablate_flags.attach(ablate);
  ablate->add_option("--data", data, "Dataset root holding input/ and gt/")->required();
  ablate->add_option("--out", ablate_out, "Output directory");
  ablate->add_option("--tile", tile, "Tile size for evaluation");
  ablate->callback([&] { action = [&] { commands.ablate(ablate_flags, data, ablate_out, tile); }; });

  auto* synth = app.add_subcommand("synthesize", "Write a seeded synthetic paired dataset");
  std::string synth_out, kind = "lowlight";
  std::int64_t synth_count = 8, synth_size = 64;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Dataset root to create")->required();
  synth->add_option("--kind", kind, "haze, blur, rain or lowlight");
  synth->add_option("--count", synth_count, "Number of pairs");
  synth->add_option("--size", synth_size, "Square image size");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->callback(
      [&] { action = [&] { commands.synthesize(synth_out, kind, synth_count, synth_size, synth_seed); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (action) action();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const NonFiniteInputError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace retinexdual
