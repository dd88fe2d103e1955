#include "retinexdual/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "retinexdual/errors.hpp"

namespace retinexdual {

using nlohmann::json;

std::string to_string(Branch branch) {
  switch (branch) {
    case Branch::kNone: return "none";
    case Branch::kSamba: return "samba";
    case Branch::kFia: return "fia";
  }
  return "none";
}

Branch parse_branch(std::string_view text) {
  if (text == "none" || text == "off") return Branch::kNone;
  if (text == "samba") return Branch::kSamba;
  if (text == "fia") return Branch::kFia;
  throw ConfigError("unknown branch '" + std::string(text) + "' (expected samba, fia, or none)");
}

namespace {

// Reads the fields of one JSON section, rejecting keys that are not bound.
class SectionReader {
 public:
  SectionReader(const json& section, std::string path) : section_(section), path_(std::move(path)) {
    if (!section_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  SectionReader& field(const std::string& key, T& out) {
    known_.push_back(key);
    auto it = section_.find(key);
    if (it == section_.end()) return *this;
    try {
      read(*it, out);
    } catch (const ConfigError& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  void finish() const {
    for (auto it = section_.begin(); it != section_.end(); ++it) {
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end()) {
        throw ConfigError(path_ + "." + it.key() + ": unknown key");
      }
    }
  }

 private:
  static void read(const json& v, double& out) {
    if (!v.is_number()) throw ConfigError("expected a number, got " + v.dump());
    out = v.get<double>();
  }
  static void read(const json& v, std::int64_t& out) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer, got " + v.dump());
    out = v.get<std::int64_t>();
  }
  static void read(const json& v, std::uint64_t& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError("expected a non-negative integer, got " + v.dump());
    }
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, bool& out) {
    if (!v.is_boolean()) throw ConfigError("expected a boolean, got " + v.dump());
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out) {
    if (!v.is_string()) throw ConfigError("expected a string, got " + v.dump());
    out = v.get<std::string>();
  }
  static void read(const json& v, Branch& out) {
    if (!v.is_string()) throw ConfigError("expected a branch name, got " + v.dump());
    out = parse_branch(v.get<std::string>());
  }
  template <typename T, std::size_t N>
  static void read(const json& v, std::array<T, N>& out) {
    if (!v.is_array() || v.size() != N) {
      throw ConfigError("expected an array of " + std::to_string(N) + " values, got " + v.dump());
    }
    for (std::size_t i = 0; i < N; ++i) read(v[i], out[i]);
  }

  const json& section_;
  std::string path_;
  std::vector<std::string> known_;
};

json read_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

// Parses the textual value of an override using the type of the value it replaces.
json parse_like(const json& current, const std::string& text, const std::string& key) {
  auto fail = [&](const std::string& expected) {
    return ConfigError(key + ": cannot parse '" + text + "' as " + expected);
  };
  if (current.is_boolean()) {
    if (text == "true" || text == "on" || text == "1") return true;
    if (text == "false" || text == "off" || text == "0") return false;
    throw fail("a boolean");
  }
  if (current.is_number_integer()) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(text, &used);
    } catch (const std::exception&) {
      throw fail("an integer");
    }
    if (used != text.size()) throw fail("an integer");
    return v;
  }
  if (current.is_number()) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      throw fail("a number");
    }
    if (used != text.size()) throw fail("a number");
    return v;
  }
  if (current.is_array()) {
    json parsed;
    try {
      parsed = json::parse(text);
    } catch (const json::parse_error&) {
      throw fail("a JSON array");
    }
    if (!parsed.is_array() || parsed.size() != current.size()) throw fail("an array of matching length");
    return parsed;
  }
  return text;
}

}  // namespace

Config Config::preset_named(std::string_view name) {
  Config c;
  if (name == "desk") {
    c.preset = "desk";
    return c;
  }
  if (name == "full") {
    c.preset = "full";
    c.model.decomposer_width = 40;
    c.model.level_widths = {40, 80, 160};
    c.model.gssb_per_samb = 2;
    c.model.state_dim = 16;
    c.model.num_embeddings = 128;
    c.model.embedding_rank = 64;
    c.model.fia_width = 64;
    c.model.fia_blocks = 4;
    c.train.patch = 768;
    c.train.batch = 6;
    c.train.max_steps = 300000;
    c.train.val_every = 5000;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or full)");
}

json Config::to_json() const {
  json j;
  j["preset"] = preset;
  j["model"] = {
      {"decomposer_width", model.decomposer_width},
      {"level_widths", model.level_widths},
      {"dilation_rates", model.dilation_rates},
      {"gssb_per_samb", model.gssb_per_samb},
      {"state_dim", model.state_dim},
      {"num_embeddings", model.num_embeddings},
      {"embedding_rank", model.embedding_rank},
      {"inner_expand", model.inner_expand},
      {"positional_grid", model.positional_grid},
      {"fia_width", model.fia_width},
      {"fia_blocks", model.fia_blocks},
      {"policy_temperature", model.policy_temperature},
      {"max_untiled_pixels", model.max_untiled_pixels},
  };
  j["loss"] = {
      {"lambda_cb", loss.lambda_cb},
      {"lambda_fft", loss.lambda_fft},
      {"lambda_ssim", loss.lambda_ssim},
      {"lambda_perceptual", loss.lambda_perceptual},
      {"charbonnier_eps", loss.charbonnier_eps},
      {"level_weights", loss.level_weights},
      {"extractor_weights", loss.extractor_weights},
      {"extractor_seed", loss.extractor_seed},
  };
  j["train"] = {
      {"lr_init", train.lr_init},
      {"lr_final", train.lr_final},
      {"max_steps", train.max_steps},
      {"patch", train.patch},
      {"batch", train.batch},
      {"seed", train.seed},
      {"weight_decay", train.weight_decay},
      {"beta1", train.beta1},
      {"beta2", train.beta2},
      {"grad_clip", train.grad_clip},
      {"val_every", train.val_every},
      {"flip_augment", train.flip_augment},
  };
  j["ablation"] = {
      {"cb", ablation.cb},
      {"fft", ablation.fft},
      {"ssim", ablation.ssim},
      {"perceptual", ablation.perceptual},
      {"multilevel", ablation.multilevel},
      {"scaling", ablation.scaling},
      {"reflectance_branch", to_string(ablation.reflectance_branch)},
      {"illumination_branch", to_string(ablation.illumination_branch)},
      {"multiscale", ablation.multiscale},
      {"gssb", ablation.gssb},
      {"fourier", ablation.fourier},
  };
  return j;
}

Config Config::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  std::string preset = "desk";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("preset: expected a string");
    preset = it->get<std::string>();
  }
  Config c = preset_named(preset);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    if (key == "preset") continue;
    if (key == "model") {
      SectionReader(*it, "model")
          .field("decomposer_width", c.model.decomposer_width)
          .field("level_widths", c.model.level_widths)
          .field("dilation_rates", c.model.dilation_rates)
          .field("gssb_per_samb", c.model.gssb_per_samb)
          .field("state_dim", c.model.state_dim)
          .field("num_embeddings", c.model.num_embeddings)
          .field("embedding_rank", c.model.embedding_rank)
          .field("inner_expand", c.model.inner_expand)
          .field("positional_grid", c.model.positional_grid)
          .field("fia_width", c.model.fia_width)
          .field("fia_blocks", c.model.fia_blocks)
          .field("policy_temperature", c.model.policy_temperature)
          .field("max_untiled_pixels", c.model.max_untiled_pixels)
          .finish();
    } else if (key == "loss") {
      SectionReader(*it, "loss")
          .field("lambda_cb", c.loss.lambda_cb)
          .field("lambda_fft", c.loss.lambda_fft)
          .field("lambda_ssim", c.loss.lambda_ssim)
          .field("lambda_perceptual", c.loss.lambda_perceptual)
          .field("charbonnier_eps", c.loss.charbonnier_eps)
          .field("level_weights", c.loss.level_weights)
          .field("extractor_weights", c.loss.extractor_weights)
          .field("extractor_seed", c.loss.extractor_seed)
          .finish();
    } else if (key == "train") {
      SectionReader(*it, "train")
          .field("lr_init", c.train.lr_init)
          .field("lr_final", c.train.lr_final)
          .field("max_steps", c.train.max_steps)
          .field("patch", c.train.patch)
          .field("batch", c.train.batch)
          .field("seed", c.train.seed)
          .field("weight_decay", c.train.weight_decay)
          .field("beta1", c.train.beta1)
          .field("beta2", c.train.beta2)
          .field("grad_clip", c.train.grad_clip)
          .field("val_every", c.train.val_every)
          .field("flip_augment", c.train.flip_augment)
          .finish();
    } else if (key == "ablation") {
      SectionReader(*it, "ablation")
          .field("cb", c.ablation.cb)
          .field("fft", c.ablation.fft)
          .field("ssim", c.ablation.ssim)
          .field("perceptual", c.ablation.perceptual)
          .field("multilevel", c.ablation.multilevel)
          .field("scaling", c.ablation.scaling)
          .field("reflectance_branch", c.ablation.reflectance_branch)
          .field("illumination_branch", c.ablation.illumination_branch)
          .field("multiscale", c.ablation.multiscale)
          .field("gssb", c.ablation.gssb)
          .field("fourier", c.ablation.fourier)
          .finish();
    } else {
      throw ConfigError(key + ": unknown key");
    }
  }
  c.validate();
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(read_json_text(buffer.str(), path));
}

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));

  json j = to_json();
  if (key.find('.') == std::string::npos) {
    // A bare leaf name resolves when exactly one section owns it.
    std::vector<std::string> owners;
    for (const char* section : {"model", "loss", "train", "ablation"}) {
      if (j[section].contains(key)) owners.emplace_back(section);
    }
    if (owners.size() == 1) {
      key = owners.front() + "." + key;
    } else if (owners.empty()) {
      throw ConfigError(key + ": unknown key");
    } else {
      throw ConfigError(key + ": ambiguous key, qualify it with a section");
    }
  }
  const auto dot = key.find('.');
  const std::string section = key.substr(0, dot);
  const std::string leaf = key.substr(dot + 1);
  if (!j.contains(section) || !j[section].is_object() || !j[section].contains(leaf)) {
    throw ConfigError(key + ": unknown key");
  }
  j[section][leaf] = parse_like(j[section][leaf], value, key);
  *this = from_json(j);
}

void Config::apply_ablation(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("ablation '" + std::string(assignment) + "' is not of the form key=off");
  }
  std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  if (key.rfind("ablation.", 0) == 0) key = key.substr(9);

  static const std::map<std::string, std::string> aliases = {
      {"loss.cb", "cb"},
      {"loss.fft", "fft"},
      {"loss.ssim", "ssim"},
      {"loss.perceptual", "perceptual"},
      {"loss.p", "perceptual"},
      {"loss.multilevel", "multilevel"},
      {"loss.scaling", "scaling"},
      {"arch.multiscale", "multiscale"},
      {"samba.multiscale", "multiscale"},
      {"arch.gssb", "gssb"},
      {"samba.gssb", "gssb"},
      {"arch.fourier", "fourier"},
      {"fia.fourier", "fourier"},
      {"arch.reflectance", "reflectance_branch"},
      {"arch.illumination", "illumination_branch"},
  };
  if (key == "arch.fia" || key == "arch.samba") {
    const bool off = value == "off" || value == "false" || value == "0";
    const bool on = value == "on" || value == "true" || value == "1";
    if (!off && !on) throw ConfigError(key + ": expected on or off, got '" + value + "'");
    if (key == "arch.fia") {
      ablation.illumination_branch = off ? Branch::kNone : Branch::kFia;
    } else {
      ablation.reflectance_branch = off ? Branch::kNone : Branch::kSamba;
    }
    validate();
    return;
  }
  if (auto it = aliases.find(key); it != aliases.end()) key = it->second;
  apply_override("ablation." + key + "=" + value);
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(model.decomposer_width > 0, "model.decomposer_width: must be positive");
  for (std::size_t i = 0; i < 3; ++i) {
    require(model.level_widths[i] > 0, "model.level_widths: widths must be positive");
    require(model.dilation_rates[i] > 0, "model.dilation_rates: rates must be positive");
  }
  require(model.level_widths[0] <= model.level_widths[1] && model.level_widths[1] <= model.level_widths[2],
          "model.level_widths: must be non-decreasing with depth");
  require(model.gssb_per_samb >= 1, "model.gssb_per_samb: must be at least 1");
  require(model.state_dim >= 1, "model.state_dim: must be at least 1");
  require(model.num_embeddings >= 2, "model.num_embeddings: must be at least 2");
  require(model.embedding_rank >= 1, "model.embedding_rank: must be at least 1");
  require(model.inner_expand > 0, "model.inner_expand: must be positive");
  require(model.positional_grid >= 1, "model.positional_grid: must be at least 1");
  require(model.fia_width >= 1 && model.fia_blocks >= 0, "model.fia_*: invalid FIA shape");
  require(model.policy_temperature >= 0, "model.policy_temperature: must be non-negative");
  require(model.max_untiled_pixels > 0, "model.max_untiled_pixels: must be positive");

  require(loss.lambda_cb >= 0 && loss.lambda_fft >= 0 && loss.lambda_ssim >= 0 && loss.lambda_perceptual >= 0,
          "loss.lambda_*: weights must be non-negative");
  require(loss.charbonnier_eps > 0, "loss.charbonnier_eps: must be positive");
  for (double w : loss.level_weights) require(w >= 0, "loss.level_weights: must be non-negative");

  require(train.lr_init > 0 && train.lr_final >= 0, "train.lr_*: learning rates must be positive");
  require(train.lr_final <= train.lr_init, "train.lr_final: must not exceed train.lr_init");
  require(train.max_steps >= 0, "train.max_steps: must be non-negative");
  require(train.patch >= 16 && train.patch % 4 == 0, "train.patch: must be >= 16 and divisible by 4");
  require(train.batch >= 1, "train.batch: must be at least 1");
  require(train.weight_decay >= 0, "train.weight_decay: must be non-negative");
  require(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1,
          "train.beta*: must lie in [0, 1)");
  require(train.grad_clip >= 0, "train.grad_clip: must be non-negative (0 disables)");
  require(train.val_every >= 1, "train.val_every: must be at least 1");
}

}  // namespace retinexdual
