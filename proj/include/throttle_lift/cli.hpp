#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "throttle_lift/config.hpp"
#include "throttle_lift/csv.hpp"
#include "throttle_lift/dataio.hpp"
#include "throttle_lift/errors.hpp"
#include "throttle_lift/estimators.hpp"
#include "throttle_lift/inference.hpp"
#include "throttle_lift/montecarlo.hpp"
#include "throttle_lift/parallel.hpp"
#include "throttle_lift/sim.hpp"

namespace throttle_lift::cli {

inline constexpr const char* version = "0.1.0";

enum ExitCode : int { ok = 0, usage_error = 2, data_error = 3, degenerate = 4 };

inline int exit_code_for(ErrorClass c) {
  switch (c) {
    case ErrorClass::usage: return usage_error;
    case ErrorClass::data: return data_error;
    case ErrorClass::degeneracy: return degenerate;
  }
  return data_error;
}

namespace detail {

inline std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

inline CampaignConfig load_config(const std::string& path) {
  if (path.empty()) return CampaignConfig{};
  const std::string text = csv::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

inline StratifyOptions stratify_options(const std::string& bin_width, bool weighted) {
  StratifyOptions opts;
  opts.weighted = weighted;
  if (bin_width != "exact") {
    const auto w = csv::parse_double(bin_width);
    if (!w || !(*w > 0.0)) throw Error(ErrorClass::usage, "--bin-width must be 'exact' or a positive number");
    opts.bin_width = *w;
  }
  return opts;
}

inline void warn_dropped(const LateResult& res, std::ostream& err) {
  for (const auto& d : res.dropped) err << "warning: dropped stratum p=" << d.p << " (" << d.reason << ")\n";
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---- subcommands ----

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log;
  double bid_step = 1.0;
  bool throttled_out = false;
};

inline int run_simulate(const SimulateArgs& a, Streams io) {
  CampaignConfig config = load_config(a.config);
  if (a.seed) config.seed = *a.seed;
  const CampaignRun run = run_campaign(config);
  const std::filesystem::path dir(a.out);
  const std::string records = records_to_csv(run.records);
  const std::string potentials = potentials_to_csv(run.potentials);
  const std::string trace = trace_to_csv(run.pacing_trace);
  std::string log;
  if (!a.log.empty()) {
    LogExportOptions lo;
    lo.bid_step = a.bid_step;
    lo.throttled_out_column = a.throttled_out;
    log = log_to_csv(export_log(run, config, lo));
  }
  csv::write_atomic(dir / "records.csv", records);
  csv::write_atomic(dir / "potentials.csv", potentials);
  csv::write_atomic(dir / "trace.csv", trace);
  if (!a.log.empty()) csv::write_atomic(a.log, log);

  double spent = 0.0;
  for (const auto& r : run.records) spent += r.expenditure;
  io.out << "simulate: " << run.records.size() << " auctions over " << run.pacing_trace.size()
         << " intervals, spent " << fixed(spent, 2) << " of " << fixed(config.budget, 2) << ", seed " << config.seed
         << "\n";
  return ok;
}

struct EstimateArgs {
  std::string records;
  std::string method = "all";
  std::string bin_width = "exact";
  bool weighted = false;
  std::string out;
};

inline int run_estimate(const EstimateArgs& a, Streams io) {
  const auto records = read_records_csv(a.records);
  const StratifyOptions opts = stratify_options(a.bin_width, a.weighted);
  const bool all = a.method == "all";
  double n = 0.0;
  for (const auto& r : records) n += a.weighted ? r.weight : 1.0;

  std::string table = "method,estimate,n,p,n_p,itt_y,itt_d,n_co_hat,tau_p,w_p\n";
  auto method_row = [&](const std::string& name, std::optional<double> v) {
    table += name + ',' + csv::format_optional(v) + ',' + csv::format_number(n) + ",,,,,,,\n";
  };
  std::string summary;
  std::optional<LateResult> late;
  if (all || a.method == "late") {
    late = estimate_late(records, opts);
    warn_dropped(*late, io.err);
    method_row("late", late->tau_hat);
    summary += "tau_hat=" + fixed(late->tau_hat);
    std::optional<double> lift;
    try {
      lift = conversion_lift(late->tau_hat, mean_outcome_exposed(records, a.weighted));
    } catch (const DegenerateArm&) {
    }
    method_row("conversion_lift", lift);
    summary += std::string(" lift=") + (lift ? fixed(*lift) : "NA");
  }
  if (all || a.method == "ols") {
    const double v = ols_estimate(records, a.weighted);
    method_row("ols", v);
    summary += (summary.empty() ? "" : " ") + std::string("ols=") + fixed(v);
  }
  if (all || a.method == "iv") {
    const double v = naive_iv_wald(records, a.weighted);
    method_row("iv", v);
    summary += (summary.empty() ? "" : " ") + std::string("iv=") + fixed(v);
  }
  if (late) {
    for (std::size_t i = 0; i < late->strata.size(); ++i) {
      const auto& s = late->strata[i];
      table += "stratum,,," + csv::format_number(s.p) + ',' + csv::format_number(s.n_p) + ',' +
               csv::format_number(s.itt_y) + ',' + csv::format_number(s.itt_d) + ',' + csv::format_number(s.n_co_hat) +
               ',' + csv::format_number(s.tau_p) + ',' + csv::format_number(late->weights[i].second) + '\n';
    }
  }
  if (!a.out.empty()) csv::write_atomic(a.out, table);
  io.out << "estimate: " << summary << " n=" << csv::format_number(n) << "\n";
  return ok;
}

struct BootstrapArgs {
  std::string records;
  std::string policy = "ladder";
  std::string policy_config;
  std::optional<double> probability;
  std::int64_t b = 200;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string bin_width = "exact";
  std::string empty_arm = "borrow";
  std::string out;
  unsigned threads = 1;
};

inline int run_bootstrap(const BootstrapArgs& a, Streams io) {
  const auto records = read_records_csv(a.records);
  BootstrapOptions opts;
  opts.replicates = a.b;
  opts.alpha = a.alpha;
  opts.seed = a.seed;
  opts.threads = a.threads;
  opts.stratify = stratify_options(a.bin_width, false);
  opts.empty_arm = a.empty_arm == "discard" ? EmptyArmRule::discard : EmptyArmRule::borrow;

  BootstrapResult res;
  if (a.policy == "constant") {
    double p = 0.0;
    if (a.probability) {
      p = *a.probability;
    } else if (!a.policy_config.empty()) {
      try {
        p = nlohmann::json::parse(csv::read_file(a.policy_config)).at("probability").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(a.policy_config + ": " + e.what());
      }
    } else {
      throw Error(ErrorClass::usage, "constant policy needs --probability or --policy-config");
    }
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorClass::usage, "constant probability must lie in (0,1)");
    res = bootstrap_inference(records, ConstantPolicy{p}, opts);
  } else {
    res = bootstrap_inference(records, LadderPolicy(load_config(a.policy_config)), opts);
  }
  const std::string table = "method,tau_hat,se,ci_low,ci_high,B,failed\nbootstrap," + csv::format_number(res.tau_hat) +
                            ',' + csv::format_number(res.se) + ',' + csv::format_number(res.ci_percentile.low) + ',' +
                            csv::format_number(res.ci_percentile.high) + ',' + std::to_string(res.b_count) + ',' +
                            std::to_string(res.failed_replicates) + '\n';
  if (!a.out.empty()) csv::write_atomic(a.out, table);
  io.out << "bootstrap: tau_hat=" << fixed(res.tau_hat) << " se=" << fixed(res.se) << " ci=[" << fixed(res.ci_percentile.low)
         << ", " << fixed(res.ci_percentile.high) << "] B=" << res.b_count << " failed=" << res.failed_replicates << "\n";
  return ok;
}

struct VarianceArgs {
  std::string records;
  double alpha = 0.05;
  std::string bin_width = "exact";
  bool weighted = false;
  std::string out;
};

inline int run_variance(const VarianceArgs& a, Streams io) {
  const auto records = read_records_csv(a.records);
  const auto late = estimate_late(records, stratify_options(a.bin_width, a.weighted));
  warn_dropped(late, io.err);
  const auto av = analytic_variance(late.strata, late.tau_hat, late.n_total);
  const auto ci = normal_ci(late.tau_hat, av.variance, a.alpha);
  const double se = std::sqrt(av.variance);
  const std::string table = "method,tau_hat,se,ci_low,ci_high\nanalytic," + csv::format_number(late.tau_hat) + ',' +
                            csv::format_number(se) + ',' + csv::format_number(ci.low) + ',' +
                            csv::format_number(ci.high) + '\n';
  if (!a.out.empty()) csv::write_atomic(a.out, table);
  io.out << "variance: tau_hat=" << fixed(late.tau_hat) << " se=" << fixed(se) << " ci=[" << fixed(ci.low) << ", "
         << fixed(ci.high) << "]\n";
  return ok;
}

struct MontecarloArgs {
  std::string config;
  std::int64_t r = 200;
  std::int64_t b = 200;
  bool bootstrap = false;
  bool analytic = false;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string empty_arm = "borrow";
  unsigned threads = 1;
};

inline int run_montecarlo(const MontecarloArgs& a, Streams io) {
  const CampaignConfig config = load_config(a.config);
  ReplicationOptions opts;
  opts.replicates = a.r;
  opts.with_bootstrap = a.bootstrap;
  opts.with_analytic = a.analytic;
  opts.bootstrap_replicates = a.b;
  opts.master_seed = a.seed;
  opts.threads = a.threads;
  opts.empty_arm = a.empty_arm == "discard" ? EmptyArmRule::discard : EmptyArmRule::borrow;
  const auto report = run_replications(config, opts);

  if (!a.out_dir.empty()) {
    const std::filesystem::path dir(a.out_dir);
    const std::string t1 = table1_csv(report), t2 = table2_csv(report), reps = replicates_csv(report);
    const std::string md = emit_report(report, ReportFormat::markdown);
    csv::write_atomic(dir / "table1.csv", t1);
    csv::write_atomic(dir / "table2.csv", t2);
    csv::write_atomic(dir / "replicates.csv", reps);
    csv::write_atomic(dir / "report.md", md);
  }
  const auto* tau = report.method("tau_hat");
  io.out << "montecarlo: R=" << report.r_count << " bias=" << fixed(tau->bias) << " rmse=" << fixed(tau->rmse)
         << " sd=" << fixed(report.empirical_sd);
  for (const auto& c : report.coverage)
    io.out << ' ' << c.method << "_se=" << fixed(c.mean_se) << ' ' << c.method << "_coverage=" << fixed(c.coverage, 3);
  io.out << "\n";
  return ok;
}

struct IngestArgs {
  std::string log;
  std::string emit_records;
};

inline int run_ingest(const IngestArgs& a, Streams io) {
  const auto rows = parse_log(a.log);
  const auto sets = impute_throttled_controls(rows);
  const auto rw = reweight_controls(sets);
  for (const auto& [hour, p] : rw.dropped)
    io.err << "warning: no matched controls in hour " << hour << " at p=" << p << "; interval dropped\n";
  std::size_t controls = 0;
  for (const auto& s : sets) controls += s.controls.size();
  if (!a.emit_records.empty()) csv::write_atomic(a.emit_records, records_to_csv(rw.records, true));
  io.out << "ingest: " << rows.size() << " rows, " << sets.size() << " matched sets, " << controls
         << " matched controls, " << rw.records.size() << " records emitted, " << rw.dropped.size()
         << " intervals dropped\n";
  return ok;
}

}  // namespace detail

// Parses argv (argv[0] is the program name), runs the subcommand and returns
// the process exit code.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Throttled-campaign simulation and lift estimation", "throttle_lift"};
  app.set_version_flag("--version", std::string("throttle_lift ") + version);
  app.require_subcommand(1);
  unsigned threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default: THROTTLE_LIFT_THREADS or hardware)")
      ->check(CLI::PositiveNumber);

  detail::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate one campaign and write its tables");
  simulate->add_option("--config", sim.config, "JSON campaign config (defaults when omitted)");
  simulate->add_option("--seed", sim.seed, "Override the config seed");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--log", sim.log, "Also write a logged-auction CSV");
  simulate->add_option("--bid-step", sim.bid_step, "Rounding grid for logged competitor bids")
      ->check(CLI::PositiveNumber);
  simulate->add_flag("--throttled-out", sim.throttled_out, "Log throttle labels in a throttled_out column");

  detail::EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Stratified LATE and baseline estimates");
  estimate->add_option("--records", est.records, "Records CSV")->required();
  estimate->add_option("--method", est.method, "late, ols, iv or all")
      ->check(CLI::IsMember({"late", "ols", "iv", "all"}));
  estimate->add_option("--bin-width", est.bin_width, "'exact' or a bin width for p");
  estimate->add_flag("--weighted", est.weighted, "Use the weight column");
  estimate->add_option("--out", est.out, "Output CSV");

  detail::BootstrapArgs boot;
  auto* bootstrap = app.add_subcommand("bootstrap", "Algorithm-aware bootstrap of the LATE");
  bootstrap->add_option("--records", boot.records, "Records CSV")->required();
  bootstrap->add_option("--policy", boot.policy, "ladder or constant")->check(CLI::IsMember({"ladder", "constant"}));
  bootstrap->add_option("--policy-config", boot.policy_config, "JSON campaign config for the policy");
  bootstrap->add_option("--probability", boot.probability, "Probability of the constant policy");
  bootstrap->add_option("--B", boot.b, "Bootstrap replicates")->check(CLI::Range(std::int64_t{2}, std::int64_t{1} << 40));
  bootstrap->add_option("--alpha", boot.alpha, "CI level is 1 - alpha");
  bootstrap->add_option("--seed", boot.seed, "Bootstrap seed");
  bootstrap->add_option("--bin-width", boot.bin_width, "'exact' or a bin width for p");
  bootstrap->add_option("--empty-arm", boot.empty_arm, "borrow or discard")
      ->check(CLI::IsMember({"borrow", "discard"}));
  bootstrap->add_option("--out", boot.out, "Output CSV");

  detail::VarianceArgs var;
  auto* variance = app.add_subcommand("variance", "Analytic variance and normal CI of the LATE");
  variance->add_option("--records", var.records, "Records CSV")->required();
  variance->add_option("--alpha", var.alpha, "CI level is 1 - alpha");
  variance->add_option("--bin-width", var.bin_width, "'exact' or a bin width for p");
  variance->add_flag("--weighted", var.weighted, "Use the weight column");
  variance->add_option("--out", var.out, "Output CSV");

  detail::MontecarloArgs mc;
  auto* montecarlo = app.add_subcommand("montecarlo", "Replicate campaigns and summarize estimator performance");
  montecarlo->add_option("--config", mc.config, "JSON campaign config (defaults when omitted)");
  montecarlo->add_option("--R", mc.r, "Replicates")->check(CLI::PositiveNumber);
  montecarlo->add_option("--B", mc.b, "Bootstrap replicates per campaign")
      ->check(CLI::Range(std::int64_t{2}, std::int64_t{1} << 40));
  montecarlo->add_flag("--bootstrap", mc.bootstrap, "Run bootstrap and analytic inference");
  montecarlo->add_flag("--analytic", mc.analytic, "Run analytic inference");
  montecarlo->add_option("--seed", mc.seed, "Master seed");
  montecarlo->add_option("--out-dir", mc.out_dir, "Directory for table1.csv, table2.csv, replicates.csv");
  montecarlo->add_option("--empty-arm", mc.empty_arm, "borrow or discard")
      ->check(CLI::IsMember({"borrow", "discard"}));

  detail::IngestArgs ing;
  auto* ingest = app.add_subcommand("ingest", "Match throttled auctions in a platform log and reweight controls");
  ingest->add_option("--log", ing.log, "Logged-auction CSV")->required();
  ingest->add_option("--emit-records", ing.emit_records, "Weighted records CSV");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back(args.empty() ? "throttle_lift" : args.front().c_str());
  for (std::size_t i = 1; i < args.size(); ++i) argv.push_back(args[i].c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  }

  const detail::Streams io{out, err};
  try {
    if (*simulate) return detail::run_simulate(sim, io);
    if (*estimate) return detail::run_estimate(est, io);
    if (*bootstrap) {
      boot.threads = threads;
      return detail::run_bootstrap(boot, io);
    }
    if (*variance) return detail::run_variance(var, io);
    if (*montecarlo) {
      mc.threads = threads;
      return detail::run_montecarlo(mc, io);
    }
    if (*ingest) return detail::run_ingest(ing, io);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.error_class());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return data_error;
  }
  return usage_error;
}

inline int dispatch(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace throttle_lift::cli
