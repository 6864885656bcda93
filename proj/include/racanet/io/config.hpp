#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "racanet/core/error.hpp"

namespace racanet {

using json = nlohmann::json;

// Geometry-adaptive Gaussian policy for density/soft-label generation:
// sigma_i = clamp(beta * mean distance to `knn` nearest neighbors, lo, hi),
// falling back to `fallback` when fewer than knn+1 points exist.
struct SigmaPolicy {
  double beta = 0.3;
  double sigma_min = 2.0;
  double sigma_max = 15.0;
  double fallback = 4.0;
  int knn = 3;
};

// Network + training configuration. The full-scale schedule this tool's
// defaults derive from is: backbone channels (32,64,128,160), projection dims
// (32,32,64,64), crop 256, batch 16, lr 1e-5 (stage 1) / 1e-4 (stage 2),
// epochs 30/300. The desk and tiny presets shrink everything so the whole
// pipeline runs on a single CPU core.
struct ModelConfig {
  std::array<int, 4> channels{32, 64, 128, 160};
  std::array<int, 4> proj_dims{32, 32, 64, 64};
  int ka = 3;  // anchor window; matching radius k_delta = (ka-1)/2
  int kn = 3;  // redistribution neighborhood (in anchors)
  double lambda_cons = 0.1;
  double sigma_bayes = 8.0;
  double smooth_sigma = 3.0;
  SigmaPolicy sigma_policy;
  int crop = 256;
  double flip_p = 0.5;
  int batch = 16;
  double lr_pretrain = 1e-5;
  double lr_train = 1e-4;
  double weight_decay = 1e-4;
  int epochs_pretrain = 30;
  int epochs_train = 300;
  int eval_every = 5;  // stage-2 eval cadence, in epochs
  uint64_t seed = 17;

  int k_delta() const { return (ka - 1) / 2; }

  void validate() const {
    if (ka < 1 || ka % 2 == 0) throw ConfigError("config", "ka must be odd and >= 1");
    if (kn < 1 || kn % 2 == 0) throw ConfigError("config", "kn must be odd and >= 1");
    if (lambda_cons < 0) throw ConfigError("config", "lambda_cons must be >= 0");
    if (crop < 32 || crop % 32 != 0) throw ConfigError("config", "crop must be a positive multiple of 32");
    if (batch < 1) throw ConfigError("config", "batch must be >= 1");
    for (int c : channels)
      if (c < 1) throw ConfigError("config", "channels must be positive");
    for (int d : proj_dims)
      if (d < 1) throw ConfigError("config", "proj_dims must be positive");
    if (epochs_pretrain < 0 || epochs_train < 0) throw ConfigError("config", "epochs must be >= 0");
    if (eval_every < 1) throw ConfigError("config", "eval_every must be >= 1");
  }

  // Covers exactly the fields that determine parameter shapes; checkpoints
  // remain loadable across ka / kn / lambda sweeps.
  uint64_t fingerprint() const {
    std::ostringstream os;
    os << "racanet-v1;C=";
    for (int c : channels) os << c << ",";
    os << ";d=";
    for (int d : proj_dims) os << d << ",";
    uint64_t h = 1469598103934665603ull;
    for (char ch : os.str()) {
      h ^= static_cast<uint8_t>(ch);
      h *= 1099511628211ull;
    }
    return h;
  }

  static ModelConfig desk() {
    ModelConfig c;
    c.channels = {16, 32, 48, 64};
    c.proj_dims = {16, 16, 32, 32};
    c.crop = 64;
    c.batch = 4;
    c.lr_pretrain = 1e-3;
    c.lr_train = 1e-3;
    c.epochs_pretrain = 30;
    c.epochs_train = 30;
    c.eval_every = 5;
    return c;
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.channels = {8, 16, 32, 32};
    c.proj_dims = {8, 8, 16, 16};
    c.crop = 64;
    c.batch = 4;
    c.lr_pretrain = 3e-3;
    c.lr_train = 3e-3;
    c.epochs_pretrain = 5;
    c.epochs_train = 5;
    c.eval_every = 1;
    return c;
  }
};

struct CorruptionConfig {
  double rgb_atten_prob = 0.0;   // whole-image illumination attenuation on rgb
  double atten_min = 0.08;
  double atten_max = 0.25;
  double clutter_prob = 0.0;     // hot blobs + speckle noise on thermal
  int clutter_blobs = 6;
  double clutter_amp = 0.7;
  double noise_sigma = 0.06;
};

// Synthetic bimodal scene parameters. The thermal person layer is re-rendered
// under a per-region integer pixel shift; corruption degrades one modality.
struct SceneSpec {
  int width = 96, height = 96;
  int count_min = 8, count_max = 24;
  double person_sigma_min = 2.2, person_sigma_max = 4.0;
  double person_aspect_min = 0.7, person_aspect_max = 1.4;
  double rgb_contrast_min = 0.25, rgb_contrast_max = 0.45;
  bool rgb_polarity_random = true;  // false: persons brighten all rgb channels
  // Per-person micro-texture rendered identically in both modalities (head /
  // clothing detail visible in both bands). Zero keeps pure Gaussian blobs.
  double person_texture_amp = 0.0;
  double person_texture_wavelength = 7.0;  // pixels
  // Envelope exponent: 1 is a Gaussian; higher values flatten the blob top
  // so interior intensity is texture- rather than peak-dominated.
  double person_envelope_power = 1.0;
  double thermal_peak_min = 0.7, thermal_peak_max = 0.95;
  double rgb_base_min = 0.25, rgb_base_max = 0.55;
  double thermal_base_min = 0.08, thermal_base_max = 0.18;
  double texture_amp_rgb = 0.05, texture_amp_thermal = 0.02;
  int shift_max = 4;   // |shift| bound in pixels (full resolution)
  int shift_step = 1;  // shifts are drawn on this grid
  int regions_x = 1, regions_y = 1;
  std::optional<std::array<int, 2>> forced_shift;  // overrides the draw for all regions
  double min_sep = 7.0;  // minimum center distance between persons
  int max_place_attempts = 200;
  CorruptionConfig corruption;
  uint64_t seed = 0;

  void validate() const {
    if (width < 32 || height < 32 || width % 32 != 0 || height % 32 != 0)
      throw ConfigError("config", "canvas must be a multiple of 32 in both dims");
    if (count_min < 0 || count_max < count_min) throw ConfigError("config", "bad count_range");
    if (shift_max < 0 || shift_step < 1) throw ConfigError("config", "bad shift settings");
    if (regions_x < 1 || regions_y < 1) throw ConfigError("config", "bad region grid");
    if (min_sep <= 0) throw ConfigError("config", "min_sep must be positive");
  }
};

struct SynthConfig {
  SceneSpec scene;
  int n_train = 48, n_val = 16, n_test = 16;
};

// ---- JSON (de)serialization -------------------------------------------------

namespace detail {
template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config", "bad value for key '" + key + "': " + e.what());
  }
}
inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError("config", where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("config", "unknown key '" + it.key() + "' in " + where);
  }
}
}  // namespace detail

inline json to_json(const SigmaPolicy& p) {
  return json{{"beta", p.beta},
              {"sigma_min", p.sigma_min},
              {"sigma_max", p.sigma_max},
              {"fallback", p.fallback},
              {"knn", p.knn}};
}

inline SigmaPolicy sigma_policy_from_json(const json& j) {
  detail::check_keys(j, {"beta", "sigma_min", "sigma_max", "fallback", "knn"}, "sigma_policy");
  SigmaPolicy p;
  p.beta = detail::get_or(j, "beta", p.beta);
  p.sigma_min = detail::get_or(j, "sigma_min", p.sigma_min);
  p.sigma_max = detail::get_or(j, "sigma_max", p.sigma_max);
  p.fallback = detail::get_or(j, "fallback", p.fallback);
  p.knn = detail::get_or(j, "knn", p.knn);
  return p;
}

inline json to_json(const ModelConfig& c) {
  return json{{"channels", c.channels},
              {"proj_dims", c.proj_dims},
              {"ka", c.ka},
              {"kn", c.kn},
              {"k_delta", c.k_delta()},
              {"lambda_cons", c.lambda_cons},
              {"sigma_bayes", c.sigma_bayes},
              {"smooth_sigma", c.smooth_sigma},
              {"sigma_policy", to_json(c.sigma_policy)},
              {"crop", c.crop},
              {"flip_p", c.flip_p},
              {"batch", c.batch},
              {"lr_pretrain", c.lr_pretrain},
              {"lr_train", c.lr_train},
              {"weight_decay", c.weight_decay},
              {"epochs_pretrain", c.epochs_pretrain},
              {"epochs_train", c.epochs_train},
              {"eval_every", c.eval_every},
              {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const json& j, ModelConfig base = ModelConfig::desk()) {
  detail::check_keys(j,
                     {"preset", "channels", "proj_dims", "ka", "kn", "k_delta", "lambda_cons",
                      "sigma_bayes", "smooth_sigma", "sigma_policy", "crop", "flip_p", "batch",
                      "lr_pretrain", "lr_train", "weight_decay", "epochs_pretrain", "epochs_train",
                      "eval_every", "seed"},
                     "model config");
  ModelConfig c = base;
  if (j.contains("preset")) {
    std::string p = j.at("preset").get<std::string>();
    if (p == "desk")
      c = ModelConfig::desk();
    else if (p == "tiny")
      c = ModelConfig::tiny();
    else if (p == "full")
      c = ModelConfig{};
    else
      throw ConfigError("config", "unknown preset '" + p + "'");
  }
  c.channels = detail::get_or(j, "channels", c.channels);
  c.proj_dims = detail::get_or(j, "proj_dims", c.proj_dims);
  c.ka = detail::get_or(j, "ka", c.ka);
  c.kn = detail::get_or(j, "kn", c.kn);
  if (j.contains("k_delta")) {
    int kd = j.at("k_delta").get<int>();
    if (2 * kd + 1 != c.ka)
      throw ConfigError("config", "k_delta inconsistent with ka (ka = 2*k_delta + 1)");
  }
  c.lambda_cons = detail::get_or(j, "lambda_cons", c.lambda_cons);
  c.sigma_bayes = detail::get_or(j, "sigma_bayes", c.sigma_bayes);
  c.smooth_sigma = detail::get_or(j, "smooth_sigma", c.smooth_sigma);
  if (j.contains("sigma_policy")) c.sigma_policy = sigma_policy_from_json(j.at("sigma_policy"));
  c.crop = detail::get_or(j, "crop", c.crop);
  c.flip_p = detail::get_or(j, "flip_p", c.flip_p);
  c.batch = detail::get_or(j, "batch", c.batch);
  c.lr_pretrain = detail::get_or(j, "lr_pretrain", c.lr_pretrain);
  c.lr_train = detail::get_or(j, "lr_train", c.lr_train);
  c.weight_decay = detail::get_or(j, "weight_decay", c.weight_decay);
  c.epochs_pretrain = detail::get_or(j, "epochs_pretrain", c.epochs_pretrain);
  c.epochs_train = detail::get_or(j, "epochs_train", c.epochs_train);
  c.eval_every = detail::get_or(j, "eval_every", c.eval_every);
  c.seed = detail::get_or(j, "seed", c.seed);
  c.validate();
  return c;
}

inline json to_json(const CorruptionConfig& c) {
  return json{{"rgb_atten_prob", c.rgb_atten_prob}, {"atten_min", c.atten_min},
              {"atten_max", c.atten_max},           {"clutter_prob", c.clutter_prob},
              {"clutter_blobs", c.clutter_blobs},   {"clutter_amp", c.clutter_amp},
              {"noise_sigma", c.noise_sigma}};
}

inline CorruptionConfig corruption_from_json(const json& j) {
  detail::check_keys(j,
                     {"rgb_atten_prob", "atten_min", "atten_max", "clutter_prob", "clutter_blobs",
                      "clutter_amp", "noise_sigma"},
                     "corruption");
  CorruptionConfig c;
  c.rgb_atten_prob = detail::get_or(j, "rgb_atten_prob", c.rgb_atten_prob);
  c.atten_min = detail::get_or(j, "atten_min", c.atten_min);
  c.atten_max = detail::get_or(j, "atten_max", c.atten_max);
  c.clutter_prob = detail::get_or(j, "clutter_prob", c.clutter_prob);
  c.clutter_blobs = detail::get_or(j, "clutter_blobs", c.clutter_blobs);
  c.clutter_amp = detail::get_or(j, "clutter_amp", c.clutter_amp);
  c.noise_sigma = detail::get_or(j, "noise_sigma", c.noise_sigma);
  return c;
}

inline json to_json(const SceneSpec& s) {
  json j{{"canvas", {s.width, s.height}},
         {"count_range", {s.count_min, s.count_max}},
         {"person_sigma", {s.person_sigma_min, s.person_sigma_max}},
         {"person_aspect", {s.person_aspect_min, s.person_aspect_max}},
         {"rgb_contrast", {s.rgb_contrast_min, s.rgb_contrast_max}},
         {"rgb_polarity_random", s.rgb_polarity_random},
         {"person_texture_amp", s.person_texture_amp},
         {"person_texture_wavelength", s.person_texture_wavelength},
         {"person_envelope_power", s.person_envelope_power},
         {"thermal_peak", {s.thermal_peak_min, s.thermal_peak_max}},
         {"rgb_base", {s.rgb_base_min, s.rgb_base_max}},
         {"thermal_base", {s.thermal_base_min, s.thermal_base_max}},
         {"texture_amp", {s.texture_amp_rgb, s.texture_amp_thermal}},
         {"shift_range", s.shift_max},
         {"shift_step", s.shift_step},
         {"regions", {s.regions_x, s.regions_y}},
         {"min_sep", s.min_sep},
         {"max_place_attempts", s.max_place_attempts},
         {"corruption", to_json(s.corruption)},
         {"seed", s.seed}};
  if (s.forced_shift) j["forced_shift"] = *s.forced_shift;
  return j;
}

inline SceneSpec scene_spec_from_json(const json& j) {
  detail::check_keys(j,
                     {"canvas", "count_range", "person_sigma", "person_aspect", "rgb_contrast",
                      "rgb_polarity_random", "person_texture_amp", "person_texture_wavelength",
                      "person_envelope_power",
                      "thermal_peak", "rgb_base", "thermal_base", "texture_amp", "shift_range",
                      "shift_step", "regions", "forced_shift", "min_sep", "max_place_attempts",
                      "corruption", "seed"},
                     "scene");
  SceneSpec s;
  auto pair_of = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    auto v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError("config", std::string(key) + " must be [lo, hi]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  if (j.contains("canvas")) {
    auto v = j.at("canvas");
    if (!v.is_array() || v.size() != 2) throw ConfigError("config", "canvas must be [w, h]");
    s.width = v[0].get<int>();
    s.height = v[1].get<int>();
  }
  if (j.contains("count_range")) {
    auto v = j.at("count_range");
    if (!v.is_array() || v.size() != 2) throw ConfigError("config", "count_range must be [min, max]");
    s.count_min = v[0].get<int>();
    s.count_max = v[1].get<int>();
  }
  pair_of("person_sigma", s.person_sigma_min, s.person_sigma_max);
  pair_of("person_aspect", s.person_aspect_min, s.person_aspect_max);
  pair_of("rgb_contrast", s.rgb_contrast_min, s.rgb_contrast_max);
  s.rgb_polarity_random = detail::get_or(j, "rgb_polarity_random", s.rgb_polarity_random);
  s.person_texture_amp = detail::get_or(j, "person_texture_amp", s.person_texture_amp);
  s.person_texture_wavelength =
      detail::get_or(j, "person_texture_wavelength", s.person_texture_wavelength);
  s.person_envelope_power = detail::get_or(j, "person_envelope_power", s.person_envelope_power);
  pair_of("thermal_peak", s.thermal_peak_min, s.thermal_peak_max);
  pair_of("rgb_base", s.rgb_base_min, s.rgb_base_max);
  pair_of("thermal_base", s.thermal_base_min, s.thermal_base_max);
  pair_of("texture_amp", s.texture_amp_rgb, s.texture_amp_thermal);
  s.shift_max = detail::get_or(j, "shift_range", s.shift_max);
  s.shift_step = detail::get_or(j, "shift_step", s.shift_step);
  if (j.contains("regions")) {
    auto v = j.at("regions");
    if (!v.is_array() || v.size() != 2) throw ConfigError("config", "regions must be [rx, ry]");
    s.regions_x = v[0].get<int>();
    s.regions_y = v[1].get<int>();
  }
  if (j.contains("forced_shift")) {
    auto v = j.at("forced_shift");
    if (!v.is_array() || v.size() != 2) throw ConfigError("config", "forced_shift must be [dx, dy]");
    s.forced_shift = std::array<int, 2>{v[0].get<int>(), v[1].get<int>()};
  }
  s.min_sep = detail::get_or(j, "min_sep", s.min_sep);
  s.max_place_attempts = detail::get_or(j, "max_place_attempts", s.max_place_attempts);
  if (j.contains("corruption")) s.corruption = corruption_from_json(j.at("corruption"));
  s.seed = detail::get_or(j, "seed", s.seed);
  s.validate();
  return s;
}

inline json to_json(const SynthConfig& c) {
  return json{{"scene", to_json(c.scene)},
              {"n_train", c.n_train},
              {"n_val", c.n_val},
              {"n_test", c.n_test}};
}

inline SynthConfig synth_config_from_json(const json& j) {
  detail::check_keys(j, {"scene", "n_train", "n_val", "n_test"}, "synth config");
  SynthConfig c;
  if (j.contains("scene")) c.scene = scene_spec_from_json(j.at("scene"));
  c.n_train = detail::get_or(j, "n_train", c.n_train);
  c.n_val = detail::get_or(j, "n_val", c.n_val);
  c.n_test = detail::get_or(j, "n_test", c.n_test);
  if (c.n_train < 0 || c.n_val < 0 || c.n_test < 0)
    throw ConfigError("config", "split sizes must be >= 0");
  return c;
}

inline json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open config file " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config", "parse error in " + path + ": " + e.what());
  }
}

inline void dump_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("malformed-file", "cannot write " + path);
  f << j.dump(2) << "\n";
}

}  // namespace racanet
