#pragma once

// Subcommand implementations. Each writes only under its run directory and
// leaves a copy of the effective config plus a provenance record there.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvinspect/pvinspect.hpp"
#include "run_config.hpp"

namespace pvinspect::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kInputError = 3, kInternalError = 4 };

inline int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return kConfigError;
    case ErrorCategory::Input: return kInputError;
    case ErrorCategory::Invariant: return kInternalError;
  }
  return kInternalError;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string("fnv1a64:") + buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw input_error("FileNotFound", "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw input_error("WriteFailed", "cannot write " + p.string());
  out << content;
}

inline std::string file_digest(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a64("");
    for (const auto& f : files) {
      h = fnv1a64(f.lexically_relative(p).generic_string(), h);
      h = fnv1a64(read_file(f), h);
    }
    return hex64(h);
  }
  return hex64(fnv1a64(read_file(p)));
}

struct RunContext {
  std::string command;
  RunConfig config;
  fs::path out_dir;
  std::vector<std::pair<std::string, fs::path>> inputs;
  std::ostream* log = &std::cerr;
};

inline void begin_run(const RunContext& ctx) {
  ctx.config.validate();
  if (ctx.out_dir.empty()) throw config_error("ConfigInvalid", "an output directory (--out) is required");
  for (const auto& [name, p] : ctx.inputs)
    if (!fs::exists(p)) throw input_error("FileNotFound", name + " not found: " + p.string());
  fs::create_directories(ctx.out_dir);
  write_file(ctx.out_dir / "config.json", to_json(ctx.config).dump(2) + "\n");
}

// Timestamps live only here so every other output is reproducible.
inline void finish_run(const RunContext& ctx) {
  nlohmann::ordered_json p;
  p["command"] = ctx.command;
  p["version"] = kVersion;
  p["report_grammar"] = kReportGrammarVersion;
  p["severity_table"] = severity_table_digest(ctx.config.corrupt.table);
  p["config_hash"] = hex64(fnv1a64(to_json(ctx.config).dump()));
  p["seed"] = ctx.config.seed;
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  for (const auto& [name, path] : ctx.inputs) inputs[name] = {{"path", path.string()}, {"digest", file_digest(path)}};
  p["inputs"] = std::move(inputs);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char ts[32];
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  p["timestamp"] = ts;
  write_file(ctx.out_dir / "provenance.json", p.dump(2) + "\n");
}

inline nlohmann::ordered_json error_record(const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  return j;
}

inline DatasetManifest load_manifest_absolute(const fs::path& path) {
  auto m = load_manifest(path);
  absolutize_paths(m, fs::absolute(path).parent_path());
  return m;
}

inline void save_manifest_relative(DatasetManifest m, const fs::path& path) {
  relativize_paths(m, fs::absolute(path).parent_path());
  save_manifest(m, path);
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

struct CurateArgs {
  std::optional<fs::path> manifest;
  std::optional<fs::path> tree;  // <root>/<dataset>/<modality>/<label>/<file>.png
  std::optional<fs::path> label_map;
};

inline DatasetManifest scan_tree(const fs::path& root, const LabelMap& map) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  DatasetManifest m;
  for (const auto& f : files) {
    const auto rel = f.lexically_relative(root);
    std::vector<std::string> parts;
    for (const auto& part : rel) parts.push_back(part.string());
    if (parts.size() != 4)
      throw input_error("TreeLayout", "expected <dataset>/<modality>/<label>/<file>.png, got " + rel.generic_string());
    SampleRecord r;
    r.id = parts[0] + "/" + parts[1] + "/" + parts[2] + "/" + f.stem().string();
    r.path = fs::absolute(f).lexically_normal().string();
    r.provenance = parts[0];
    r.modality = parse_modality(parts[1]);
    r.label = apply_label_map(map, parts[2], parts[0]);
    m.records.push_back(std::move(r));
  }
  return m;
}

inline int cmd_curate(RunContext ctx, const CurateArgs& args) {
  if (args.manifest.has_value() == args.tree.has_value())
    throw config_error("ConfigInvalid", "curate needs exactly one of --manifest or --tree");
  if (args.manifest) ctx.inputs.emplace_back("manifest", *args.manifest);
  if (args.tree) ctx.inputs.emplace_back("tree", *args.tree);
  if (args.label_map) ctx.inputs.emplace_back("label_map", *args.label_map);
  begin_run(ctx);
  const RunConfig& cfg = ctx.config;

  DatasetManifest m;
  if (args.manifest) {
    m = load_manifest_absolute(*args.manifest);
  } else {
    const LabelMap map = args.label_map ? load_label_map(*args.label_map) : LabelMap{};
    m = scan_tree(*args.tree, map);
  }
  const std::size_t n_in = m.size();

  std::vector<std::string> warnings;
  for (const auto& q : cfg.curate.quotas) m = undersample(m, q, cfg.seed, &warnings);

  if (cfg.curate.augment) {
    std::vector<DefectClass> classes = cfg.curate.augment_classes;
    if (classes.empty())
      for (DefectClass c : kAllClasses)
        if (m.count(c) > 0 && m.count(c) < cfg.curate.plan.target_min) classes.push_back(c);
    for (DefectClass c : classes)
      m = augment_class(m, c, cfg.curate.plan, cfg.seed, {ctx.out_dir / "augmented", cfg.jobs});
  }

  SplitSpec spec = cfg.curate.split;
  spec.seed = cfg.seed;
  m = split(m, spec);
  save_manifest_relative(m, ctx.out_dir / "manifest.jsonl");

  nlohmann::ordered_json summary;
  summary["input_records"] = n_in;
  summary["output_records"] = m.size();
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (DefectClass c : kAllClasses) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : m.records)
      if (r.label == c) ++counts[std::string(canonical_name(r.split))];
    if (!counts.empty()) per_class[std::string(canonical_name(c))] = counts;
  }
  summary["per_class"] = std::move(per_class);
  summary["warnings"] = warnings;
  write_file(ctx.out_dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& w : warnings) *ctx.log << "warning: " << w << "\n";
  finish_run(ctx);
  return kOk;
}

// ---------------------------------------------------------------------------
// corrupt
// ---------------------------------------------------------------------------

inline std::string show_severity_table(const SeverityTable& t) {
  return to_json(t).dump(2) + "\n" + "digest: " + severity_table_digest(t) + "\n";
}

inline int cmd_corrupt(RunContext ctx, const fs::path& manifest_path) {
  ctx.inputs.emplace_back("manifest", manifest_path);
  begin_run(ctx);
  const RunConfig& cfg = ctx.config;
  const CorruptionSpec spec{cfg.corrupt.kind, cfg.corrupt.severity, cfg.seed};
  const auto m = load_manifest_absolute(manifest_path);
  auto res = corrupt_manifest(m, spec, ctx.out_dir / "images", cfg.corrupt.table, cfg.jobs);
  save_manifest_relative(res.manifest, ctx.out_dir / "manifest.jsonl");
  std::string failures;
  for (const auto& f : res.failures) {
    nlohmann::ordered_json j;
    j["id"] = f.id;
    j["message"] = f.message;
    failures += j.dump() + "\n";
  }
  write_file(ctx.out_dir / "failures.jsonl", failures);
  if (!res.failures.empty()) *ctx.log << "warning: " << res.failures.size() << " records failed to decode\n";
  finish_run(ctx);
  return kOk;
}

// ---------------------------------------------------------------------------
// reward / validate-reports
// ---------------------------------------------------------------------------

struct ReportEntry {
  std::string id;
  std::optional<DefectClass> label;
  std::string text;
};

// One JSON object per line: {"id", "label", "report_text" | "report_path"}.
// report_path resolves against the manifest's directory.
inline std::vector<ReportEntry> load_report_entries(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("FileNotFound", "cannot open " + path.string());
  const auto base = fs::absolute(path).parent_path();
  std::vector<ReportEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ReportEntry e;
      e.id = j.value("id", "line" + std::to_string(lineno));
      if (auto it = j.find("label"); it != j.end() && !it->is_null()) e.label = parse_label(it->get<std::string>());
      if (j.contains("report_text"))
        e.text = j.at("report_text").get<std::string>();
      else if (j.contains("report_path"))
        e.text = read_file(base / j.at("report_path").get<std::string>());
      else
        throw input_error("ManifestParseError", "record needs report_text or report_path");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw input_error("ManifestParseError", path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.category(), e.kind(), path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline int cmd_reward(RunContext ctx, const fs::path& pairs_path) {
  ctx.inputs.emplace_back("pairs", pairs_path);
  begin_run(ctx);
  const auto entries = load_report_entries(pairs_path);
  std::string out;
  double sum = 0.0;
  for (const auto& e : entries) {
    if (!e.label) throw input_error("MissingLabel", "record '" + e.id + "' has no label");
    const auto b = score(e.text, *e.label);
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["label"] = canonical_name(*e.label);
    j["r_cls"] = b.r_cls;
    j["r_steps"] = b.r_steps;
    j["r_prob"] = b.r_prob;
    j["r_pen"] = b.r_pen;
    j["n_steps"] = b.n_steps;
    j["total"] = b.total;
    j["binary"] = binary_reward(b);
    out += j.dump() + "\n";
    sum += b.total;
  }
  write_file(ctx.out_dir / "rewards.jsonl", out);
  *ctx.log << entries.size() << " reports scored, mean total "
           << (entries.empty() ? 0.0 : sum / static_cast<double>(entries.size())) << "\n";
  finish_run(ctx);
  return kOk;
}

inline int cmd_validate_reports(RunContext ctx, const fs::path& input, bool fail_on_error) {
  ctx.inputs.emplace_back("reports", input);
  begin_run(ctx);
  const auto entries = load_report_entries(input);
  std::string out;
  std::size_t rejected = 0;
  for (const auto& e : entries) {
    const auto findings = validate_text(e.text);
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["accepted"] = !has_errors(findings);
    auto arr = nlohmann::ordered_json::array();
    for (const auto& f : findings)
      arr.push_back({{"code", to_string(f.code)},
                     {"severity", to_string(f.severity)},
                     {"begin", f.location.begin},
                     {"end", f.location.end},
                     {"message", f.message}});
    j["findings"] = std::move(arr);
    out += j.dump() + "\n";
    if (has_errors(findings)) ++rejected;
  }
  write_file(ctx.out_dir / "findings.jsonl", out);
  *ctx.log << entries.size() << " reports checked, " << rejected << " rejected\n";
  finish_run(ctx);
  if (fail_on_error && rejected > 0)
    throw input_error("ReportsRejected", std::to_string(rejected) + " reports have error-level findings");
  return kOk;
}

// ---------------------------------------------------------------------------
// aggregate / eval
// ---------------------------------------------------------------------------

inline int cmd_aggregate(RunContext ctx, const fs::path& predictions_path) {
  ctx.inputs.emplace_back("predictions", predictions_path);
  begin_run(ctx);
  auto records = load_prediction_manifest(predictions_path);
  std::map<std::string, std::size_t> rules;
  for (auto& r : records) ++rules[std::string(canonical_name(aggregate_record(r).rule_fired))];
  save_prediction_manifest(records, ctx.out_dir / "predictions.jsonl");
  nlohmann::ordered_json summary;
  summary["records"] = records.size();
  summary["rules_fired"] = rules;
  write_file(ctx.out_dir / "summary.json", summary.dump(2) + "\n");
  finish_run(ctx);
  return kOk;
}

struct EvalInput {
  std::vector<LabeledPrediction> predictions;
  std::string confidence_source;
};

// Decisions supply class and confidence; single-view records use the view's
// class and its maximum answer probability; multi-view records without a
// decision are aggregated first.
inline EvalInput to_labeled(std::vector<PredictionRecord> records) {
  EvalInput out;
  std::map<std::string, std::size_t> sources;
  for (auto& r : records) {
    if (!r.label) throw input_error("MissingLabel", "record '" + r.id + "' has no label");
    LabeledPrediction p{r.id, *r.label, DefectClass::CleanPanel, 0.0};
    if (!r.decision && r.views.size() == 1) {
      const auto v = to_view_prediction(r.views[0]);
      p.predicted_class = v.predicted_class;
      if (v.probabilities) {
        for (const auto& [c, q] : *v.probabilities) p.confidence = std::max(p.confidence, q);
        ++sources["max_answer_probability"];
      } else {
        p.confidence = 1.0;
        ++sources["single_view_without_probabilities"];
      }
    } else {
      if (!r.decision) aggregate_record(r);
      p.predicted_class = r.decision->final_class;
      p.confidence = r.decision->confidence;
      ++sources["tta_aggregate"];
    }
    out.predictions.push_back(std::move(p));
  }
  for (const auto& [name, n] : sources) out.confidence_source += (out.confidence_source.empty() ? "" : ",") + name;
  return out;
}

struct EvalArgs {
  fs::path predictions;
  std::optional<fs::path> baseline;
};

inline int cmd_eval(RunContext ctx, const EvalArgs& args) {
  ctx.inputs.emplace_back("predictions", args.predictions);
  if (args.baseline) ctx.inputs.emplace_back("baseline", *args.baseline);
  begin_run(ctx);
  const RunConfig& cfg = ctx.config;
  const auto input = to_labeled(load_prediction_manifest(args.predictions));
  const auto metrics = classification_metrics(input.predictions);
  const auto curve = risk_coverage(input.predictions);

  auto report = to_json(metrics);
  nlohmann::ordered_json sel;
  sel["aurc"] = curve.aurc;
  sel["aurc_partial"] = {{"lo", cfg.eval.band_lo}, {"hi", cfg.eval.band_hi},
                         {"value", partial_aurc(curve, cfg.eval.band_lo, cfg.eval.band_hi)}};
  nlohmann::ordered_json at = nlohmann::ordered_json::object();
  for (double c : kReportCoverages) {
    char key[16];
    std::snprintf(key, sizeof key, "%.1f", c);
    at[key] = risk_at_coverage(curve, c);
  }
  sel["risk_at_coverage"] = std::move(at);
  sel["confidence_source"] = input.confidence_source;
  sel["tie_breaking"] = "stable_input_order";
  report["selective_prediction"] = std::move(sel);
  write_file(ctx.out_dir / "metrics.json", report.dump(2) + "\n");
  write_file(ctx.out_dir / "rc_curve.csv", curve_csv(curve));

  std::vector<std::pair<std::string, const RiskCoverageCurve*>> plotted = {{"predictions", &curve}};
  RiskCoverageCurve base_curve;
  if (args.baseline) {
    base_curve = risk_coverage(to_labeled(load_prediction_manifest(*args.baseline)).predictions);
    write_file(ctx.out_dir / "comparison.csv", comparison_csv(compare_curves(base_curve, curve)));
    plotted.insert(plotted.begin(), {"baseline", &base_curve});
  }
  if (cfg.eval.plot) write_file(ctx.out_dir / "rc_curve.svg", render_rc_svg(plotted));
  finish_run(ctx);
  return kOk;
}

// ---------------------------------------------------------------------------
// rl-sim
// ---------------------------------------------------------------------------

inline std::string trace_csv(const std::vector<rl::TracePoint>& trace) {
  std::string out = "step,expected_reward\n";
  char buf[64];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f\n", p.step, p.expected_reward);
    out += buf;
  }
  return out;
}

inline std::vector<rl::TracePoint> run_rl_sim(const RunConfig& cfg) {
  const rl::EnumerableEnv env = cfg.rl.env == EnvKind::Bandit
                                    ? rl::EnumerableEnv::bandit(cfg.rl.bandit_rewards)
                                    : rl::EnumerableEnv::chain(cfg.rl.chain_vocab, cfg.rl.chain_target);
  rl::TabularSequencePolicy policy(env.vocab(), env.horizon());
  return rl::train_toy(policy, env, cfg.rl.train, cfg.rl.steps, cfg.seed);
}

inline int cmd_rl_sim(RunContext ctx) {
  begin_run(ctx);
  const auto trace = run_rl_sim(ctx.config);
  write_file(ctx.out_dir / "trace.csv", trace_csv(trace));
  *ctx.log << "final expected reward " << trace.back().expected_reward << "\n";
  finish_run(ctx);
  return kOk;
}

// ---------------------------------------------------------------------------
// extract-views
// ---------------------------------------------------------------------------

inline int cmd_extract_views(RunContext ctx, const fs::path& image_path) {
  ctx.inputs.emplace_back("image", image_path);
  begin_run(ctx);
  const Raster img = read_png(image_path);
  const auto views = extract_views(img);
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (ViewKind v : kAllViews) {
    const auto w = view_window(v, img.width(), img.height());
    const std::string file = std::string(canonical_name(v)) + ".png";
    write_png(views[static_cast<std::size_t>(v)], ctx.out_dir / file);
    index.push_back({{"view", canonical_name(v)},
                     {"file", file},
                     {"x", w.x},
                     {"y", w.y},
                     {"width", w.width},
                     {"height", w.height}});
  }
  write_file(ctx.out_dir / "views.json", index.dump(2) + "\n");
  finish_run(ctx);
  return kOk;
}

}  // namespace pvinspect::cli
