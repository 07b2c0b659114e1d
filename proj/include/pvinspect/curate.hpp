#pragma once

// Dataset curation: quota undersampling per (provenance, modality) stratum,
// minority-class augmentation up to a target band, and stratified splitting.

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
#include <tuple>
#include <unordered_map>
#include <vector>

#include "pvinspect/error.hpp"
#include "pvinspect/parallel.hpp"
#include "pvinspect/random.hpp"
#include "pvinspect/raster.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

// ---------------------------------------------------------------------------
// Undersampling
// ---------------------------------------------------------------------------

struct QuotaPolicy {
  DefectClass cls = DefectClass::Crack;
  double retention_fraction = 0.4;

  void validate() const {
    if (!(retention_fraction > 0.0 && retention_fraction <= 1.0))
      throw config_error("InvalidQuota", "retention_fraction must lie in (0, 1]");
  }
};

// round(fraction * n) with halves rounded up.
inline std::size_t retention_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
}

inline DatasetManifest undersample(const DatasetManifest& m, const QuotaPolicy& policy, std::uint64_t seed,
                                   std::vector<std::string>* warnings = nullptr) {
  policy.validate();
  std::map<std::pair<std::string, Modality>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].label == policy.cls) strata[{m.records[i].provenance, m.records[i].modality}].push_back(i);
  if (strata.empty() && warnings)
    warnings->push_back("EmptyStratum: no records of class " + std::string(canonical_name(policy.cls)));

  std::vector<bool> keep(m.records.size(), true);
  for (auto& [key, members] : strata) {
    const std::size_t k = retention_count(policy.retention_fraction, members.size());
    Rng rng(derive_seed(seed, fnv1a64("undersample"), index_of(policy.cls), fnv1a64(key.first),
                        static_cast<std::uint64_t>(key.second)));
    auto order = members;
    rng.shuffle(order);
    for (std::size_t j = k; j < order.size(); ++j) keep[order[j]] = false;
  }
  DatasetManifest out;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (keep[i]) out.records.push_back(m.records[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugmentKind { Rotate, FlipH, FlipV, Brightness, Contrast, UniformNoise };

inline constexpr std::string_view canonical_name(AugmentKind k) noexcept {
  switch (k) {
    case AugmentKind::Rotate: return "rotate";
    case AugmentKind::FlipH: return "flip_h";
    case AugmentKind::FlipV: return "flip_v";
    case AugmentKind::Brightness: return "brightness";
    case AugmentKind::Contrast: return "contrast";
    case AugmentKind::UniformNoise: return "uniform_noise";
  }
  return "rotate";
}

inline AugmentKind parse_augment_kind(std::string_view s) {
  for (auto k : {AugmentKind::Rotate, AugmentKind::FlipH, AugmentKind::FlipV, AugmentKind::Brightness,
                 AugmentKind::Contrast, AugmentKind::UniformNoise})
    if (canonical_name(k) == s) return k;
  throw config_error("InvalidAugmentPlan", "unknown augmentation op '" + std::string(s) + "'");
}

// Parameter values each op may take.
inline std::vector<double> allowed_params(AugmentKind k) {
  switch (k) {
    case AugmentKind::Rotate: return {-30.0, -15.0, 15.0, 30.0};
    case AugmentKind::FlipH:
    case AugmentKind::FlipV: return {0.0};
    case AugmentKind::Brightness: return {0.8, 1.2};
    case AugmentKind::Contrast: return {1.3};
    case AugmentKind::UniformNoise: return {0.1};
  }
  return {};
}

struct AugmentOp {
  AugmentKind kind = AugmentKind::FlipH;
  std::vector<double> params;  // one is drawn per application
};

struct AugmentPlan {
  std::size_t target_min = 1500;
  std::size_t target_max = 1800;
  std::vector<AugmentOp> ops = default_ops();

  static std::vector<AugmentOp> default_ops() {
    std::vector<AugmentOp> ops;
    for (auto k : {AugmentKind::Rotate, AugmentKind::FlipH, AugmentKind::FlipV, AugmentKind::Brightness,
                   AugmentKind::Contrast, AugmentKind::UniformNoise})
      ops.push_back({k, allowed_params(k)});
    return ops;
  }

  void validate() const {
    if (target_min > target_max) throw config_error("InvalidAugmentPlan", "target_min exceeds target_max");
    if (ops.empty()) throw config_error("InvalidAugmentPlan", "plan has no ops");
    for (const auto& op : ops) {
      if (op.params.empty())
        throw config_error("InvalidAugmentPlan", "op '" + std::string(canonical_name(op.kind)) + "' has no params");
      const auto allowed = allowed_params(op.kind);
      for (double p : op.params)
        if (std::find(allowed.begin(), allowed.end(), p) == allowed.end())
          throw config_error("InvalidAugmentPlan", "parameter " + std::to_string(p) + " not allowed for op '" +
                                                       std::string(canonical_name(op.kind)) + "'");
    }
  }
};

struct AugmentJob {
  std::string source_id;
  std::string new_id;
  AugmentKind kind = AugmentKind::FlipH;
  double param = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const AugmentJob&) const = default;

  std::string tag() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", param);
    return "src=" + source_id + ";op=" + std::string(canonical_name(kind)) + ";param=" + buf;
  }
};

// Source id encoded in an augmentation tag, if any.
inline std::optional<std::string> augmentation_source(const SampleRecord& r) {
  if (!r.augmentation_tag) return std::nullopt;
  const std::string& t = *r.augmentation_tag;
  if (t.rfind("src=", 0) != 0) return std::nullopt;
  return t.substr(4, t.find(';') - 4);
}

inline Raster apply_augmentation(const Raster& src, AugmentKind kind, double param, std::uint64_t seed) {
  switch (kind) {
    case AugmentKind::Rotate: return rotate(src, param);
    case AugmentKind::FlipH: return flip_horizontal(src);
    case AugmentKind::FlipV: return flip_vertical(src);
    case AugmentKind::Brightness: return brightness(src, param);
    case AugmentKind::Contrast: return contrast(src, param);
    case AugmentKind::UniformNoise: {
      Rng rng(seed);
      return add_uniform_noise(src, param, rng);
    }
  }
  return src;
}

// Jobs that bring `cls` up to plan.target_min. Empty when the class already
// reaches the band's lower edge.
inline std::vector<AugmentJob> plan_augmentation(const DatasetManifest& m, DefectClass cls, const AugmentPlan& plan,
                                                 std::uint64_t seed) {
  plan.validate();
  std::vector<const SampleRecord*> sources;
  std::size_t count = 0;
  for (const auto& r : m.records) {
    if (r.label != cls) continue;
    ++count;
    if (!r.augmentation_tag) sources.push_back(&r);
  }
  if (count >= plan.target_min) return {};
  if (sources.empty())
    throw input_error("NoSourceImages", "class " + std::string(canonical_name(cls)) + " has no source images");

  const std::size_t needed = plan.target_min - count;
  std::vector<AugmentJob> jobs;
  jobs.reserve(needed);
  for (std::size_t j = 0; j < needed; ++j) {
    const std::uint64_t job_seed = derive_seed(seed, fnv1a64("augment"), index_of(cls), j);
    Rng rng(job_seed);
    const SampleRecord& src = *sources[rng.below(sources.size())];
    const AugmentOp& op = plan.ops[rng.below(plan.ops.size())];
    const double param = op.params[rng.below(op.params.size())];
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "__aug%05zu", j);
    jobs.push_back({src.id, src.id + suffix, op.kind, param, rng.next_u64()});
  }
  return jobs;
}

struct AugmentIo {
  std::filesystem::path output_dir;  // synthesized PNGs are written here
  std::size_t jobs = 1;
};

// Plans, renders and appends synthetic records. Source images are only read.
inline DatasetManifest augment_class(const DatasetManifest& m, DefectClass cls, const AugmentPlan& plan,
                                     std::uint64_t seed, const AugmentIo& io) {
  const auto jobs = plan_augmentation(m, cls, plan, seed);
  if (jobs.empty()) return m;
  DatasetManifest out = m;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < m.records.size(); ++i) by_id.emplace(m.records[i].id, i);
  for (const auto& job : jobs)
    if (by_id.count(job.new_id))
      throw invariant_error("DuplicateId", "augmented id '" + job.new_id + "' already exists");

  std::vector<SampleRecord> added(jobs.size());
  parallel_for(jobs.size(), io.jobs, [&](std::size_t i) {
    const auto& job = jobs[i];
    const SampleRecord& src = m.records[by_id.at(job.source_id)];
    const Raster img = apply_augmentation(read_png(src.path), job.kind, job.param, job.seed);
    const auto path = io.output_dir / (job.new_id + ".png");
    write_png(img, path);
    SampleRecord r = src;
    r.id = job.new_id;
    r.path = path.string();
    r.augmentation_tag = job.tag();
    r.meta.clear();
    added[i] = std::move(r);
  });
  for (auto& r : added) out.records.push_back(std::move(r));
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw config_error("InvalidSplitSpec", "split fractions must be nonnegative and sum to 1");
  }
};

// Largest-remainder apportionment of n over (train, val, test); ties in the
// remainder go to the earlier split.
inline std::array<std::size_t, 3> allocate_split_counts(std::size_t n, const SplitSpec& spec) {
  const std::array<double, 3> f = {spec.train, spec.val, spec.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double q = f[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

// Splits original records per (class, modality) stratum; augmented records
// follow their source so no synthetic view of an image crosses splits.
inline DatasetManifest split(const DatasetManifest& m, const SplitSpec& spec) {
  spec.validate();
  for (const auto& r : m.records)
    if (r.split != Split::Unassigned)
      throw input_error("AlreadySplit", "record '" + r.id + "' already has split " + std::string(canonical_name(r.split)));

  DatasetManifest out = m;
  std::map<std::pair<DefectClass, Modality>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < out.records.size(); ++i)
    if (!out.records[i].augmentation_tag) strata[{out.records[i].label, out.records[i].modality}].push_back(i);

  constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Val, Split::Test};
  for (auto& [key, members] : strata) {
    const auto counts = allocate_split_counts(members.size(), spec);
    Rng rng(derive_seed(spec.seed, fnv1a64("split"), index_of(key.first), static_cast<std::uint64_t>(key.second)));
    auto order = members;
    rng.shuffle(order);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < counts[s]; ++j) out.records[order[pos++]].split = kSplits[s];
  }

  std::unordered_map<std::string, Split> split_of;
  for (const auto& r : out.records)
    if (!r.augmentation_tag) split_of.emplace(r.id, r.split);
  for (auto& r : out.records) {
    if (!r.augmentation_tag) continue;
    const auto src = augmentation_source(r);
    auto it = src ? split_of.find(*src) : split_of.end();
    if (it == split_of.end())
      throw input_error("OrphanAugmentation", "augmented record '" + r.id + "' has no source in the manifest");
    r.split = it->second;
  }
  return out;
}

}  // namespace pvinspect
