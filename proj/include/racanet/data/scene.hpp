#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "racanet/core/rng.hpp"
#include "racanet/core/tensor.hpp"
#include "racanet/io/config.hpp"

namespace racanet {

struct PointAnnotation {
  double x = 0.0, y = 0.0;
};

// One coarsely aligned RGB/thermal pair with point annotations. `meta` is
// populated by the generator (true shift field, corruption descriptor) and
// null for ingested datasets.
struct SamplePair {
  Tensor rgb;      // {3,H,W} in [0,1]
  Tensor thermal;  // {1,H,W} in [0,1]
  std::vector<PointAnnotation> points;
  json meta;

  int height() const { return rgb.dim(1); }
  int width() const { return rgb.dim(2); }
};

namespace detail {

struct PersonTexture {
  double amp = 0.0;
  double wavelength = 7.0;
  double envelope_power = 1.0;
  std::array<double, 2> angle{0.0, 0.0};
  std::array<double, 2> phase{0.0, 0.0};
};

struct Person {
  double x, y;          // center (rgb frame)
  double sigma, aspect; // gaussian axes: sigma and sigma*aspect
  double theta;
  std::array<double, 3> rgb_delta;  // signed contrast per channel
  double thermal_peak;
  PersonTexture texture;  // shared micro-pattern, rendered in both modalities
};

inline void add_gaussian_blob(Tensor& img, int channel, double cx, double cy, double sx,
                              double sy, double theta, double amp,
                              const PersonTexture* tex = nullptr) {
  int H = img.dim(1), W = img.dim(2);
  double reach = 3.5 * std::max(sx, sy);
  int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + reach)));
  int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + reach)));
  double ct = std::cos(theta), st = std::sin(theta);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x - cx, dy = y - cy;
      double u = ct * dx + st * dy;
      double v = -st * dx + ct * dy;
      double q = (u / sx) * (u / sx) + (v / sy) * (v / sy);
      if (q > 12.25) continue;  // 3.5 sigma support
      double envelope = std::exp(-0.5 * q);
      if (tex && tex->envelope_power != 1.0)
        envelope = std::exp(-0.5 * std::pow(q / 2.0, tex->envelope_power));
      double value = amp * envelope;
      if (tex && tex->amp > 0.0) {
        double mod = 0.0;
        for (int k = 0; k < 2; ++k) {
          double proj = dx * std::cos(tex->angle[static_cast<size_t>(k)]) +
                        dy * std::sin(tex->angle[static_cast<size_t>(k)]);
          mod += std::cos(2.0 * M_PI * proj / tex->wavelength + tex->phase[static_cast<size_t>(k)]);
        }
        value *= 1.0 + tex->amp * 0.5 * mod;
      }
      img.at(channel, y, x) += value;
    }
}

// Low-frequency cosine texture shared by all channels it is applied to.
inline Tensor make_texture(int H, int W, Rng& rng) {
  struct Wave {
    double fx, fy, phase;
  };
  std::array<Wave, 3> waves;
  for (auto& w : waves) {
    w.fx = rng.uniform(0.5, 3.0);
    w.fy = rng.uniform(0.5, 3.0);
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  Tensor t(Shape{H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = 0.0;
      for (const auto& w : waves)
        v += std::cos(2.0 * M_PI * (w.fx * x / W + w.fy * y / H) + w.phase);
      t.at(y, x) = v / 3.0;
    }
  return t;
}

inline void quantize_8bit(Tensor& img) {
  for (int i = 0; i < img.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, img[i]));
    img[i] = std::lround(v * 255.0) / 255.0;
  }
}

}  // namespace detail

// Deterministic synthetic scene: textured rgb with colored anisotropic person
// blobs; thermal re-renders the person layer as bright blobs under the
// per-region shift field. meta records the true shifts and corruption.
inline SamplePair generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int W = spec.width, H = spec.height;

  std::array<double, 3> rgb_base;
  for (auto& v : rgb_base) v = rng.uniform(spec.rgb_base_min, spec.rgb_base_max);
  double thermal_base = rng.uniform(spec.thermal_base_min, spec.thermal_base_max);
  Tensor tex_rgb = detail::make_texture(H, W, rng);
  Tensor tex_t = detail::make_texture(H, W, rng);

  int count = rng.randint(spec.count_min, spec.count_max);

  // Per-region integer shift field for the thermal rendering.
  int q = spec.shift_step > 0 ? spec.shift_max / spec.shift_step : 0;
  std::vector<std::array<int, 2>> shifts(static_cast<size_t>(spec.regions_x) * spec.regions_y);
  for (auto& s : shifts) {
    if (spec.forced_shift) {
      s = *spec.forced_shift;
    } else if (q > 0) {
      s = {rng.randint(-q, q) * spec.shift_step, rng.randint(-q, q) * spec.shift_step};
    } else {
      s = {0, 0};
    }
  }

  // Centers keep two sigmas plus the shift from the border; outer blob tails
  // may clip, as they would in real footage.
  double margin = std::ceil(2.0 * spec.person_sigma_max * std::max(1.0, spec.person_aspect_max)) +
                  spec.shift_max + 1.0;
  if (2.0 * margin >= std::min(W, H) && count > 0)
    throw DataError("placement-failure", "canvas too small for person margin");

  std::vector<detail::Person> persons;
  persons.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_place_attempts; ++attempt) {
      double x = rng.uniform(margin, W - margin);
      double y = rng.uniform(margin, H - margin);
      bool ok = true;
      for (const auto& p : persons) {
        double dx = p.x - x, dy = p.y - y;
        if (dx * dx + dy * dy < spec.min_sep * spec.min_sep) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      detail::Person p;
      p.x = x;
      p.y = y;
      p.sigma = rng.uniform(spec.person_sigma_min, spec.person_sigma_max);
      p.aspect = rng.uniform(spec.person_aspect_min, spec.person_aspect_max);
      p.theta = rng.uniform(0.0, M_PI);
      for (int c = 0; c < 3; ++c) {
        double mag = rng.uniform(spec.rgb_contrast_min, spec.rgb_contrast_max);
        bool neg = spec.rgb_polarity_random && rng.uniform() < 0.5;
        p.rgb_delta[static_cast<size_t>(c)] = neg ? -mag : mag;
      }
      p.thermal_peak = rng.uniform(spec.thermal_peak_min, spec.thermal_peak_max);
      p.texture.amp = spec.person_texture_amp;
      p.texture.wavelength = spec.person_texture_wavelength;
      p.texture.envelope_power = spec.person_envelope_power;
      for (int k = 0; k < 2; ++k) {
        p.texture.angle[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * M_PI);
        p.texture.phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * M_PI);
      }
      persons.push_back(p);
      placed = true;
      break;
    }
    if (!placed)
      throw DataError("placement-failure",
                      "could not place person " + std::to_string(i) + " of " +
                          std::to_string(count) + " within the overlap bound");
  }

  SamplePair out;
  out.rgb = Tensor(Shape{3, H, W});
  out.thermal = Tensor(Shape{1, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.rgb.at(c, y, x) = rgb_base[static_cast<size_t>(c)] + spec.texture_amp_rgb * tex_rgb.at(y, x);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      out.thermal.at(0, y, x) = thermal_base + spec.texture_amp_thermal * tex_t.at(y, x);

  double region_w = static_cast<double>(W) / spec.regions_x;
  double region_h = static_cast<double>(H) / spec.regions_y;
  for (const auto& p : persons) {
    double sx = p.sigma, sy = p.sigma * p.aspect;
    for (int c = 0; c < 3; ++c)
      detail::add_gaussian_blob(out.rgb, c, p.x, p.y, sx, sy, p.theta,
                                p.rgb_delta[static_cast<size_t>(c)], &p.texture);
    int rx = std::min(spec.regions_x - 1, static_cast<int>(p.x / region_w));
    int ry = std::min(spec.regions_y - 1, static_cast<int>(p.y / region_h));
    const auto& s = shifts[static_cast<size_t>(ry) * spec.regions_x + rx];
    detail::add_gaussian_blob(out.thermal, 0, p.x + s[0], p.y + s[1], sx, sy, p.theta,
                              p.thermal_peak - thermal_base, &p.texture);
    out.points.push_back({p.x, p.y});
  }

  json corruption{{"type", "none"}};
  double u_atten = rng.uniform();
  if (u_atten < spec.corruption.rgb_atten_prob) {
    double factor = rng.uniform(spec.corruption.atten_min, spec.corruption.atten_max);
    for (int i = 0; i < out.rgb.size(); ++i) out.rgb[i] *= factor;
    corruption = json{{"type", "rgb_atten"}, {"factor", factor}};
  } else if (rng.uniform() < spec.corruption.clutter_prob) {
    for (int b = 0; b < spec.corruption.clutter_blobs; ++b) {
      double cx = rng.uniform(0.0, W);
      double cy = rng.uniform(0.0, H);
      double sig = rng.uniform(2.0, 6.0);
      double amp = rng.uniform(0.3, spec.corruption.clutter_amp);
      detail::add_gaussian_blob(out.thermal, 0, cx, cy, sig, sig, 0.0, amp);
    }
    for (int i = 0; i < out.thermal.size(); ++i)
      out.thermal[i] += rng.normal(0.0, spec.corruption.noise_sigma);
    corruption = json{{"type", "thermal_clutter"},
                      {"blobs", spec.corruption.clutter_blobs},
                      {"noise_sigma", spec.corruption.noise_sigma}};
  }

  detail::quantize_8bit(out.rgb);
  detail::quantize_8bit(out.thermal);

  json jshifts = json::array();
  for (const auto& s : shifts) jshifts.push_back({s[0], s[1]});
  out.meta = json{{"regions", {spec.regions_x, spec.regions_y}},
                  {"shifts", jshifts},
                  {"corruption", corruption},
                  {"count", count},
                  {"seed", spec.seed}};
  return out;
}

}  // namespace racanet
