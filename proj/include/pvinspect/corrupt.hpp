#pragma once

// Deterministic corruption generator: additive Gaussian noise, Gaussian blur
// and composed geometric transforms at five severities.
//
// Random draws depend on (seed, image content, kind) but not on severity, so
// the same image at increasing severity sees the same draws with larger
// magnitudes. Deviation from the clean image therefore grows with severity.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pvinspect/error.hpp"
#include "pvinspect/parallel.hpp"
#include "pvinspect/random.hpp"
#include "pvinspect/raster.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

enum class CorruptionKind { GaussianNoise, GaussianBlur, Geometric };

inline constexpr std::string_view canonical_name(CorruptionKind k) noexcept {
  switch (k) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::GaussianBlur: return "gaussian_blur";
    case CorruptionKind::Geometric: return "geometric";
  }
  return "gaussian_noise";
}

inline CorruptionKind parse_corruption_kind(std::string_view s) {
  const std::string key = detail::label_key(s);
  if (key == "gaussiannoise" || key == "noise") return CorruptionKind::GaussianNoise;
  if (key == "gaussianblur" || key == "blur") return CorruptionKind::GaussianBlur;
  if (key == "geometric") return CorruptionKind::Geometric;
  throw config_error("InvalidCorruption", "unknown corruption kind '" + std::string(s) + "'");
}

inline constexpr int kNumSeverities = 5;

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (severity < 1 || severity > kNumSeverities)
      throw config_error("InvalidCorruption", "severity must lie in 1..5, got " + std::to_string(severity));
  }
};

struct GeometricLevel {
  double max_rotation_deg = 0.0;
  double max_shear = 0.0;
  double occlusion_fraction = 0.0;
  double flip_probability = 0.5;

  bool operator==(const GeometricLevel&) const = default;
};

struct SeverityTable {
  std::array<double, kNumSeverities> noise_variance = {0.01, 0.045, 0.08, 0.115, 0.15};
  std::array<double, kNumSeverities> blur_sigma = {0.5, 1.0, 1.5, 2.0, 3.0};
  std::array<GeometricLevel, kNumSeverities> geometric = make_geometric();

  bool operator==(const SeverityTable&) const = default;

  // Rotation bound 9s degrees, shear bound 0.04s, occlusion 4s% of the area.
  static std::array<GeometricLevel, kNumSeverities> make_geometric() {
    std::array<GeometricLevel, kNumSeverities> g{};
    for (int s = 1; s <= kNumSeverities; ++s) g[s - 1] = {9.0 * s, 0.04 * s, 0.04 * s, 0.5};
    return g;
  }

  void validate() const {
    if (noise_variance.front() != 0.01 || noise_variance.back() != 0.15)
      throw config_error("InvalidSeverityTable", "noise variance must run from 0.01 to 0.15");
    for (int i = 1; i < kNumSeverities; ++i) {
      if (!(noise_variance[i] > noise_variance[i - 1]) || !(blur_sigma[i] > blur_sigma[i - 1]))
        throw config_error("InvalidSeverityTable", "noise and blur entries must increase with severity");
      const auto &a = geometric[i - 1], &b = geometric[i];
      if (!(b.max_rotation_deg > a.max_rotation_deg) || !(b.max_shear > a.max_shear) ||
          !(b.occlusion_fraction > a.occlusion_fraction) || b.flip_probability < a.flip_probability)
        throw config_error("InvalidSeverityTable", "geometric entries must increase with severity");
    }
    for (double s : blur_sigma)
      if (!(s > 0)) throw config_error("InvalidSeverityTable", "blur sigma must be positive");
    for (const auto& g : geometric)
      if (g.occlusion_fraction < 0 || g.occlusion_fraction > 1 || g.flip_probability < 0 || g.flip_probability > 1)
        throw config_error("InvalidSeverityTable", "occlusion and flip entries must lie in [0, 1]");
  }
};

inline nlohmann::ordered_json to_json(const SeverityTable& t) {
  nlohmann::ordered_json j;
  j["noise_variance"] = t.noise_variance;
  j["blur_sigma"] = t.blur_sigma;
  auto geo = nlohmann::ordered_json::array();
  for (const auto& g : t.geometric) {
    nlohmann::ordered_json e;
    e["max_rotation_deg"] = g.max_rotation_deg;
    e["max_shear"] = g.max_shear;
    e["occlusion_fraction"] = g.occlusion_fraction;
    e["flip_probability"] = g.flip_probability;
    geo.push_back(std::move(e));
  }
  j["geometric"] = std::move(geo);
  return j;
}

// Missing keys keep their defaults.
inline SeverityTable severity_table_from_json(const nlohmann::json& j) {
  SeverityTable t;
  auto read5 = [&](const char* key, std::array<double, kNumSeverities>& dst) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != kNumSeverities)
      throw config_error("InvalidSeverityTable", std::string(key) + " needs exactly 5 entries");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  read5("noise_variance", t.noise_variance);
  read5("blur_sigma", t.blur_sigma);
  if (j.contains("geometric")) {
    const auto& g = j.at("geometric");
    if (!g.is_array() || g.size() != kNumSeverities)
      throw config_error("InvalidSeverityTable", "geometric needs exactly 5 entries");
    for (std::size_t i = 0; i < kNumSeverities; ++i) {
      auto& lvl = t.geometric[i];
      lvl.max_rotation_deg = g[i].value("max_rotation_deg", lvl.max_rotation_deg);
      lvl.max_shear = g[i].value("max_shear", lvl.max_shear);
      lvl.occlusion_fraction = g[i].value("occlusion_fraction", lvl.occlusion_fraction);
      lvl.flip_probability = g[i].value("flip_probability", lvl.flip_probability);
    }
  }
  t.validate();
  return t;
}

inline std::string severity_table_digest(const SeverityTable& t) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(t).dump())));
  return std::string("fnv1a64:") + buf;
}

inline std::uint64_t corruption_seed(const Raster& image, const CorruptionSpec& spec) {
  return derive_seed(spec.seed, content_hash(image), static_cast<std::uint64_t>(spec.kind));
}

// Zero-mean Gaussian field with the given variance, one value per sample.
inline std::vector<double> gaussian_noise_field(std::size_t n, double variance, std::uint64_t seed) {
  Rng rng(seed);
  const double sd = std::sqrt(variance);
  std::vector<double> out(n);
  for (double& v : out) v = sd * rng.normal();
  return out;
}

struct CorruptionResult {
  Raster image;
  std::map<std::string, std::string> params;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline void occlude(Raster& img, double fraction, Rng& rng, std::map<std::string, std::string>& params) {
  const double u_aspect = rng.uniform(), u_x = rng.uniform(), u_y = rng.uniform();
  if (fraction <= 0.0) return;
  const double area = fraction * static_cast<double>(img.width() * img.height());
  const double aspect = std::exp(std::log(0.5) + u_aspect * (std::log(2.0) - std::log(0.5)));
  const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1,
                                         img.width());
  const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area / static_cast<double>(w))), 1,
                                         img.height());
  const auto x0 = static_cast<std::size_t>(u_x * static_cast<double>(img.width() - w + 1));
  const auto y0 = static_cast<std::size_t>(u_y * static_cast<double>(img.height() - h + 1));
  std::vector<double> fill(img.channels(), 0.0);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) fill[c] += img.at(x, y, c);
  for (double& f : fill) f /= static_cast<double>(img.width() * img.height());
  for (std::size_t y = y0; y < std::min(y0 + h, img.height()); ++y)
    for (std::size_t x = x0; x < std::min(x0 + w, img.width()); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) img.at(x, y, c) = static_cast<float>(fill[c]);
  params["occlusion"] = std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(w) + "x" +
                        std::to_string(h);
}

}  // namespace detail

inline CorruptionResult corrupt_with_params(const Raster& image, const CorruptionSpec& spec,
                                            const SeverityTable& table = {}) {
  spec.validate();
  const std::size_t s = static_cast<std::size_t>(spec.severity - 1);
  const std::uint64_t seed = corruption_seed(image, spec);
  CorruptionResult out;
  out.params["kind"] = canonical_name(spec.kind);
  out.params["severity"] = std::to_string(spec.severity);
  out.params["seed"] = std::to_string(spec.seed);

  switch (spec.kind) {
    case CorruptionKind::GaussianNoise: {
      const auto noise = gaussian_noise_field(image.data().size(), table.noise_variance[s], seed);
      out.image = image;
      auto d = out.image.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = clip01(static_cast<double>(d[i]) + noise[i]);
      out.params["variance"] = detail::fmt_double(table.noise_variance[s]);
      break;
    }
    case CorruptionKind::GaussianBlur: {
      out.image = gaussian_blur(image, table.blur_sigma[s]);
      out.params["sigma"] = detail::fmt_double(table.blur_sigma[s]);
      break;
    }
    case CorruptionKind::Geometric: {
      // Composition order: flip, rotate, shear, occlude.
      const GeometricLevel& g = table.geometric[s];
      Rng rng(seed);
      const double u_flip = rng.uniform(), u_rot = rng.uniform(), u_shear = rng.uniform();
      Raster img = image;
      const bool flipped = u_flip < g.flip_probability;
      if (flipped) img = flip_horizontal(img);
      const double angle = (2.0 * u_rot - 1.0) * g.max_rotation_deg;
      img = rotate(img, angle);
      const double shear = (2.0 * u_shear - 1.0) * g.max_shear;
      img = shear_x(img, shear);
      detail::occlude(img, g.occlusion_fraction, rng, out.params);
      out.image = std::move(img);
      out.params["flip"] = flipped ? "1" : "0";
      out.params["rotation_deg"] = detail::fmt_double(angle);
      out.params["shear"] = detail::fmt_double(shear);
      out.params["order"] = "flip,rotate,shear,occlude";
      break;
    }
  }
  return out;
}

inline Raster corrupt(const Raster& image, const CorruptionSpec& spec, const SeverityTable& table = {}) {
  return corrupt_with_params(image, spec, table).image;
}

struct RecordFailure {
  std::string id;
  std::string message;
};

struct CorruptManifestResult {
  DatasetManifest manifest;
  std::vector<RecordFailure> failures;
};

// Corrupts every record once into out_dir/<id>.png. Records that fail to
// decode are reported and left out of the output manifest.
inline CorruptManifestResult corrupt_manifest(const DatasetManifest& m, const CorruptionSpec& spec,
                                              const std::filesystem::path& out_dir, const SeverityTable& table = {},
                                              std::size_t jobs = 1) {
  spec.validate();
  table.validate();
  std::vector<std::optional<SampleRecord>> done(m.records.size());
  std::vector<std::string> errors(m.records.size());
  parallel_for(m.records.size(), jobs, [&](std::size_t i) {
    const SampleRecord& src = m.records[i];
    try {
      auto res = corrupt_with_params(read_png(src.path), spec, table);
      const auto path = out_dir / (src.id + ".png");
      write_png(res.image, path);
      SampleRecord r = src;
      r.path = path.string();
      for (auto& [k, v] : res.params) r.meta["corruption." + k] = v;
      done[i] = std::move(r);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  CorruptManifestResult out;
  for (std::size_t i = 0; i < done.size(); ++i) {
    if (done[i])
      out.manifest.records.push_back(std::move(*done[i]));
    else
      out.failures.push_back({m.records[i].id, errors[i]});
  }
  return out;
}

}  // namespace pvinspect
