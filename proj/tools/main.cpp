#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "commands.hpp"

namespace {

using namespace pvinspect;
using namespace pvinspect::cli;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "Run configuration (JSON)");
  sub->add_option("--seed", o.seed, "Override the configured seed");
  sub->add_option("--jobs", o.jobs, "Per-record worker threads");
  sub->add_option("--out", o.out, "Run output directory");
}

RunConfig base_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  return c;
}

// "<class>=<fraction>"
QuotaPolicy parse_quota(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw config_error("ConfigInvalid", "quota must look like class=fraction: " + s);
  try {
    return {parse_label(s.substr(0, eq)), std::stod(s.substr(eq + 1))};
  } catch (const std::logic_error&) {
    throw config_error("ConfigInvalid", "bad quota fraction: " + s);
  } catch (const Error& e) {
    throw config_error("ConfigInvalid", e.what());
  }
}

// "train/val/test"
SplitSpec parse_split_spec(const std::string& s) {
  SplitSpec spec;
  if (std::sscanf(s.c_str(), "%lf/%lf/%lf", &spec.train, &spec.val, &spec.test) != 3)
    throw config_error("ConfigInvalid", "split must look like 0.7/0.15/0.15: " + s);
  const double total = spec.train + spec.val + spec.test;
  if (total > 1.5) {  // percentages
    spec.train /= 100.0;
    spec.val /= 100.0;
    spec.test /= 100.0;
  }
  return spec;
}

void report_error(const std::string& kind, const std::string& message, int code, const std::string& out) {
  const auto rec = error_record(kind, message, code);
  std::cerr << rec.dump() << "\n";
  if (out.empty()) return;
  try {
    write_file(std::filesystem::path(out) / "error.json", rec.dump(2) + "\n");
  } catch (...) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photovoltaic defect inspection toolkit"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print version and contract digests");

  CommonOptions common;
  std::function<int(RunContext)> action;
  auto make_ctx = [&](const char* name) {
    RunContext ctx;
    ctx.command = name;
    ctx.config = base_config(common);
    ctx.out_dir = common.out;
    return ctx;
  };

  // curate
  auto* curate = app.add_subcommand("curate", "Undersample, augment and split a dataset manifest");
  add_common(curate, common);
  CurateArgs curate_args;
  std::string manifest_in, tree_in, label_map_in, augment_plan_in, split_in;
  std::vector<std::string> quotas;
  bool no_augment = false;
  curate->add_option("--manifest", manifest_in, "Input dataset manifest (JSONL)");
  curate->add_option("--tree", tree_in, "Image tree <root>/<dataset>/<modality>/<label>/*.png");
  curate->add_option("--label-map", label_map_in, "Raw label to class mapping");
  curate->add_option("--quota", quotas, "Retention quota class=fraction (repeatable)");
  curate->add_option("--augment-plan", augment_plan_in, "Augment plan file (JSON augment section)");
  curate->add_flag("--no-augment", no_augment, "Skip minority-class augmentation");
  curate->add_option("--split", split_in, "Split fractions train/val/test");
  curate->callback([&] {
    action = [&](RunContext ctx) {
      if (!quotas.empty()) {
        ctx.config.curate.quotas.clear();
        for (const auto& q : quotas) ctx.config.curate.quotas.push_back(parse_quota(q));
      }
      if (!augment_plan_in.empty()) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(read_file(augment_plan_in));
        } catch (const nlohmann::json::exception& e) {
          throw config_error("ConfigInvalid", "augment plan: " + std::string(e.what()));
        }
        if (!doc.contains("augment")) doc = {{"augment", doc}};
        const auto plan = run_config_from_json({{"curate", doc}}).curate;
        ctx.config.curate.plan = plan.plan;
        ctx.config.curate.augment_classes = plan.augment_classes;
        ctx.config.curate.augment = plan.augment;
      }
      if (no_augment) ctx.config.curate.augment = false;
      if (!split_in.empty()) ctx.config.curate.split = parse_split_spec(split_in);
      if (!manifest_in.empty()) curate_args.manifest = manifest_in;
      if (!tree_in.empty()) curate_args.tree = tree_in;
      if (!label_map_in.empty()) curate_args.label_map = label_map_in;
      return cmd_curate(std::move(ctx), curate_args);
    };
  });

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "Apply a corruption at one severity to every manifest image");
  add_common(corrupt, common);
  std::string corrupt_manifest_in, kind_in;
  std::optional<int> severity_in;
  bool show_table = false;
  corrupt->add_option("--manifest", corrupt_manifest_in, "Input dataset manifest (JSONL)");
  corrupt->add_option("--kind", kind_in, "gaussian_noise | gaussian_blur | geometric");
  corrupt->add_option("--severity", severity_in, "Severity level 1..5");
  corrupt->add_flag("--show-table", show_table, "Print the effective severity table and exit");
  corrupt->callback([&] {
    action = [&](RunContext ctx) {
      if (!kind_in.empty()) {
        try {
          ctx.config.corrupt.kind = parse_corruption_kind(kind_in);
        } catch (const Error& e) {
          throw config_error("ConfigInvalid", e.what());
        }
      }
      if (severity_in) ctx.config.corrupt.severity = *severity_in;
      if (show_table) {
        ctx.config.corrupt.table.validate();
        std::cout << show_severity_table(ctx.config.corrupt.table);
        return static_cast<int>(kOk);
      }
      if (corrupt_manifest_in.empty()) throw config_error("ConfigInvalid", "corrupt needs --manifest");
      return cmd_corrupt(std::move(ctx), corrupt_manifest_in);
    };
  });

  // reward
  auto* reward = app.add_subcommand("reward", "Score (report, label) pairs");
  add_common(reward, common);
  std::string pairs_in;
  reward->add_option("--input", pairs_in, "JSONL of {id, label, report_text | report_path}")->required();
  reward->callback([&] { action = [&](RunContext ctx) { return cmd_reward(std::move(ctx), pairs_in); }; });

  // validate-reports
  auto* validate = app.add_subcommand("validate-reports", "Lint generated reports");
  add_common(validate, common);
  std::string reports_in;
  bool fail_on_error = false;
  validate->add_option("--input", reports_in, "JSONL of {id, report_text | report_path}")->required();
  validate->add_flag("--fail-on-error", fail_on_error, "Exit 3 when any report has an error finding");
  validate->callback([&] {
    action = [&](RunContext ctx) { return cmd_validate_reports(std::move(ctx), reports_in, fail_on_error); };
  });

  // aggregate
  auto* aggregate = app.add_subcommand("aggregate", "Resolve six-view predictions into final decisions");
  add_common(aggregate, common);
  std::string predictions_in;
  aggregate->add_option("--input", predictions_in, "Prediction manifest (JSONL)")->required();
  aggregate->callback([&] { action = [&](RunContext ctx) { return cmd_aggregate(std::move(ctx), predictions_in); }; });

  // eval
  auto* eval = app.add_subcommand("eval", "Classification metrics and risk-coverage analysis");
  add_common(eval, common);
  std::string eval_in, baseline_in;
  bool plot = false;
  std::vector<double> band;
  eval->add_option("--input", eval_in, "Prediction manifest (JSONL)")->required();
  eval->add_option("--baseline", baseline_in, "Second manifest to compare against");
  eval->add_flag("--plot", plot, "Also write rc_curve.svg");
  eval->add_option("--band", band, "Partial AURC coverage band lo hi")->expected(2);
  eval->callback([&] {
    action = [&](RunContext ctx) {
      if (plot) ctx.config.eval.plot = true;
      if (band.size() == 2) {
        ctx.config.eval.band_lo = band[0];
        ctx.config.eval.band_hi = band[1];
      }
      EvalArgs args{eval_in, std::nullopt};
      if (!baseline_in.empty()) args.baseline = baseline_in;
      return cmd_eval(std::move(ctx), args);
    };
  });

  // rl-sim
  auto* rlsim = app.add_subcommand("rl-sim", "Train a tabular policy on a toy environment");
  add_common(rlsim, common);
  std::string method_in;
  std::optional<std::size_t> k_in, steps_in;
  rlsim->add_option("--method", method_in, "rloo | ppo");
  rlsim->add_option("--k", k_in, "Samples per group");
  rlsim->add_option("--steps", steps_in, "Training steps");
  rlsim->callback([&] {
    action = [&](RunContext ctx) {
      if (!method_in.empty()) {
        try {
          ctx.config.rl.train.method = rl::parse_method(method_in);
        } catch (const Error& e) {
          throw config_error("ConfigInvalid", e.what());
        }
      }
      if (k_in) ctx.config.rl.train.k = *k_in;
      if (steps_in) ctx.config.rl.steps = *steps_in;
      return cmd_rl_sim(std::move(ctx));
    };
  });

  // extract-views
  auto* views = app.add_subcommand("extract-views", "Write the six test-time views of an image");
  add_common(views, common);
  std::string image_in;
  views->add_option("--image", image_in, "Input PNG")->required();
  views->callback([&] { action = [&](RunContext ctx) { return cmd_extract_views(std::move(ctx), image_in); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("UsageError", e.what(), kConfigError, "");
    return kConfigError;
  }

  if (version) {
    std::cout << "pvinspect " << kVersion << "\n"
              << "report grammar " << kReportGrammarVersion << "\n"
              << "severity table " << severity_table_digest(SeverityTable{}) << "\n";
    return kOk;
  }
  if (!action) {
    std::cerr << app.help();
    return kConfigError;
  }

  const char* name = app.get_subcommands().front()->get_name().c_str();
  try {
    return action(make_ctx(name));
  } catch (const Error& e) {
    const int code = exit_code_for(e.category());
    report_error(e.kind(), e.what(), code, common.out);
    return code;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("IoError", e.what(), kInputError, common.out);
    return kInputError;
  } catch (const std::exception& e) {
    report_error("InternalError", e.what(), kInternalError, common.out);
    return kInternalError;
  }
}
