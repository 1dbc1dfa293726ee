#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "throttle_lift/config.hpp"
#include "throttle_lift/csv.hpp"
#include "throttle_lift/errors.hpp"
#include "throttle_lift/estimators.hpp"
#include "throttle_lift/inference.hpp"
#include "throttle_lift/parallel.hpp"
#include "throttle_lift/rng.hpp"
#include "throttle_lift/sim.hpp"

namespace throttle_lift {

struct ReplicateResult {
  std::int64_t index = 0;
  std::uint64_t seed = 0;  // campaign seed of this replicate
  std::optional<double> true_late;
  std::optional<double> tau_hat;
  std::optional<double> ols;
  std::optional<double> iv;
  std::optional<double> se_analytic;
  std::optional<double> se_bootstrap;
  std::optional<ConfidenceInterval> ci_analytic;
  std::optional<ConfidenceInterval> ci_bootstrap;
  std::int64_t bootstrap_failed = 0;
  std::vector<std::string> errors;
};

struct MethodSummary {
  std::string method;
  std::int64_t n = 0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
};

struct CoverageSummary {
  std::string method;
  std::int64_t n = 0;
  double mean_se = 0.0;
  double coverage = 0.0;
};

struct ReplicationOptions {
  std::int64_t replicates = 200;
  bool with_bootstrap = false;
  bool with_analytic = false;  // implied by with_bootstrap
  std::int64_t bootstrap_replicates = 200;
  double alpha = 0.05;
  std::uint64_t master_seed = 0;
  unsigned threads = 1;
  EmptyArmRule empty_arm = EmptyArmRule::borrow;
};

struct ReplicationReport {
  std::int64_t r_count = 0;
  std::uint64_t master_seed = 0;
  std::string config_digest;
  bool with_analytic = false;
  bool with_bootstrap = false;
  std::int64_t b_count = 0;
  double alpha = 0.05;
  std::vector<ReplicateResult> replicates;
  std::vector<MethodSummary> summary;     // tau_LATE, tau_hat, OLS, IV
  std::vector<CoverageSummary> coverage;  // analytic, bootstrap (when run)
  double empirical_sd = std::numeric_limits<double>::quiet_NaN();  // SD of tau_hat across replicates
  double error_sd = std::numeric_limits<double>::quiet_NaN();      // SD of tau_hat - true_late

  const MethodSummary* method(std::string_view name) const {
    for (const auto& m : summary)
      if (m.method == name) return &m;
    return nullptr;
  }
  const CoverageSummary* ci_method(std::string_view name) const {
    for (const auto& c : coverage)
      if (c.method == name) return &c;
    return nullptr;
  }
};

namespace detail {

template <class F>
std::optional<double> guarded(ReplicateResult& rep, const char* what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    rep.errors.push_back(std::string(what) + ": " + e.what());
    return std::nullopt;
  }
}

inline ReplicateResult run_one_replicate(const CampaignConfig& base, const ReplicationOptions& opts, std::int64_t r) {
  ReplicateResult rep;
  rep.index = r;
  rep.seed = derive_seed(opts.master_seed, Stream::replicate, static_cast<std::uint64_t>(r));
  CampaignConfig config = base;
  config.seed = rep.seed;
  const CampaignRun run = run_campaign(config);

  rep.true_late = guarded(rep, "true_late", [&] { return true_late(run.potentials); });
  rep.ols = guarded(rep, "ols", [&] { return ols_estimate(run.records); });
  rep.iv = guarded(rep, "iv", [&] { return naive_iv_wald(run.records); });
  std::optional<LateResult> late;
  try {
    late = estimate_late(run.records);
    rep.tau_hat = late->tau_hat;
  } catch (const Error& e) {
    rep.errors.push_back(std::string("tau_hat: ") + e.what());
  }
  if (!late) return rep;

  if (opts.with_analytic || opts.with_bootstrap) {
    try {
      const auto av = analytic_variance(late->strata, late->tau_hat, late->n_total);
      rep.se_analytic = std::sqrt(av.variance);
      rep.ci_analytic = normal_ci(late->tau_hat, av.variance, opts.alpha);
    } catch (const Error& e) {
      rep.errors.push_back(std::string("analytic: ") + e.what());
    }
  }
  if (opts.with_bootstrap) {
    BootstrapOptions bo;
    bo.replicates = opts.bootstrap_replicates;
    bo.alpha = opts.alpha;
    bo.seed = derive_seed(opts.master_seed, Stream::bootstrap, static_cast<std::uint64_t>(r));
    bo.empty_arm = opts.empty_arm;
    try {
      const auto br = bootstrap_inference(run.records, LadderPolicy(config), bo);
      rep.se_bootstrap = br.se;
      rep.ci_bootstrap = br.ci_percentile;
      rep.bootstrap_failed = br.failed_replicates;
    } catch (const Error& e) {
      rep.errors.push_back(std::string("bootstrap: ") + e.what());
    }
  }
  return rep;
}

inline double sd_of(const std::vector<double>& xs) {
  return xs.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(sample_variance(xs));
}

}  // namespace detail

// Aggregates replicate rows in index order.
inline void summarize_replicates(ReplicationReport& report) {
  report.summary.clear();
  report.coverage.clear();

  auto method_summary = [&](const char* name, std::optional<double> ReplicateResult::*field) {
    MethodSummary m;
    m.method = name;
    double sum = 0, err = 0, sq = 0;
    for (const auto& rep : report.replicates) {
      const auto& est = rep.*field;
      if (!est || !rep.true_late) continue;
      ++m.n;
      sum += *est;
      err += *est - *rep.true_late;
      sq += (*est - *rep.true_late) * (*est - *rep.true_late);
    }
    if (m.n > 0) {
      const auto n = static_cast<double>(m.n);
      m.mean = sum / n;
      m.bias = err / n;
      m.rmse = std::sqrt(sq / n);
    } else {
      m.mean = m.bias = m.rmse = std::numeric_limits<double>::quiet_NaN();
    }
    report.summary.push_back(m);
  };
  method_summary("tau_LATE", &ReplicateResult::true_late);
  method_summary("tau_hat", &ReplicateResult::tau_hat);
  method_summary("OLS", &ReplicateResult::ols);
  method_summary("IV", &ReplicateResult::iv);

  std::vector<double> taus, errors;
  for (const auto& rep : report.replicates) {
    if (!rep.tau_hat) continue;
    taus.push_back(*rep.tau_hat);
    if (rep.true_late) errors.push_back(*rep.tau_hat - *rep.true_late);
  }
  report.empirical_sd = detail::sd_of(taus);
  report.error_sd = detail::sd_of(errors);

  auto coverage_summary = [&](const char* name, std::optional<double> ReplicateResult::*se,
                              std::optional<ConfidenceInterval> ReplicateResult::*ci) {
    CoverageSummary c;
    c.method = name;
    std::int64_t covered = 0;
    double se_sum = 0;
    for (const auto& rep : report.replicates) {
      if (!(rep.*ci) || !rep.true_late) continue;
      ++c.n;
      se_sum += *(rep.*se);
      const auto& interval = *(rep.*ci);
      if (interval.low <= *rep.true_late && *rep.true_late <= interval.high) ++covered;
    }
    if (c.n > 0) {
      c.mean_se = se_sum / static_cast<double>(c.n);
      c.coverage = static_cast<double>(covered) / static_cast<double>(c.n);
    } else {
      c.mean_se = c.coverage = std::numeric_limits<double>::quiet_NaN();
    }
    report.coverage.push_back(c);
  };
  if (report.with_analytic || report.with_bootstrap)
    coverage_summary("analytic", &ReplicateResult::se_analytic, &ReplicateResult::ci_analytic);
  if (report.with_bootstrap)
    coverage_summary("bootstrap", &ReplicateResult::se_bootstrap, &ReplicateResult::ci_bootstrap);
}

// R independent campaigns, each seeded from master_seed by replicate index.
// Estimator failures are recorded on the replicate and leave it out of the
// affected summaries only.
inline ReplicationReport run_replications(const CampaignConfig& config, const ReplicationOptions& opts) {
  if (opts.replicates < 1) throw Error(ErrorClass::usage, "need at least one replicate");
  if (opts.with_bootstrap && opts.bootstrap_replicates < 2)
    throw Error(ErrorClass::usage, "bootstrap needs at least 2 replicates");
  config.validate();

  ReplicationReport report;
  report.r_count = opts.replicates;
  report.master_seed = opts.master_seed;
  report.config_digest = config_digest(config);
  report.with_analytic = opts.with_analytic || opts.with_bootstrap;
  report.with_bootstrap = opts.with_bootstrap;
  report.b_count = opts.with_bootstrap ? opts.bootstrap_replicates : 0;
  report.alpha = opts.alpha;
  report.replicates.resize(static_cast<std::size_t>(opts.replicates));
  parallel_for(report.replicates.size(), opts.threads, [&](std::size_t r) {
    report.replicates[r] = detail::run_one_replicate(config, opts, static_cast<std::int64_t>(r));
  });
  summarize_replicates(report);
  return report;
}

inline ReplicationReport run_replications(const CampaignConfig& config, std::int64_t r_count, bool with_bootstrap,
                                          std::int64_t b_count, std::uint64_t master_seed) {
  ReplicationOptions opts;
  opts.replicates = r_count;
  opts.with_bootstrap = with_bootstrap;
  opts.bootstrap_replicates = b_count;
  opts.master_seed = master_seed;
  return run_replications(config, opts);
}

// ---- rendering ----

inline std::string table1_csv(const ReplicationReport& report) {
  std::string out = "method,n,mean,bias,rmse\n";
  for (const auto& m : report.summary) {
    out += m.method + ',' + std::to_string(m.n) + ',' + csv::format_number(m.mean) + ',' + csv::format_number(m.bias) +
           ',' + csv::format_number(m.rmse) + '\n';
  }
  return out;
}

// Standard errors and coverage. The two reference rows hold the spread of
// tau_hat across replicates and the spread of its error against each
// replicate's own true LATE; they have no coverage.
inline std::string table2_csv(const ReplicationReport& report) {
  const bool with_coverage = !report.coverage.empty();
  std::string out = with_coverage ? "method,n,se,coverage\n" : "method,n,se\n";
  std::int64_t n_tau = 0, n_err = 0;
  for (const auto& rep : report.replicates) {
    if (!rep.tau_hat) continue;
    ++n_tau;
    if (rep.true_late) ++n_err;
  }
  auto row = [&](const std::string& name, std::int64_t n, double se, std::optional<double> cov) {
    out += name + ',' + std::to_string(n) + ',' + csv::format_number(se);
    if (with_coverage) out += ',' + csv::format_optional(cov);
    out += '\n';
  };
  row("empirical_sd", n_tau, report.empirical_sd, std::nullopt);
  row("error_sd", n_err, report.error_sd, std::nullopt);
  for (const auto& c : report.coverage) row(c.method, c.n, c.mean_se, c.coverage);
  return out;
}

namespace detail {

inline std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace detail

inline std::string replicates_csv(const ReplicationReport& report) {
  std::string out = "replicate,seed,true_late,tau_hat,ols,iv";
  if (report.with_analytic) out += ",se_analytic,ci_analytic_low,ci_analytic_high";
  if (report.with_bootstrap) out += ",se_bootstrap,ci_bootstrap_low,ci_bootstrap_high,bootstrap_failed";
  out += ",error\n";
  auto ci_fields = [](const std::optional<double>& se, const std::optional<ConfidenceInterval>& ci) {
    return ',' + csv::format_optional(se) + ',' + (ci ? csv::format_number(ci->low) : std::string()) + ',' +
           (ci ? csv::format_number(ci->high) : std::string());
  };
  for (const auto& rep : report.replicates) {
    out += std::to_string(rep.index) + ',' + std::to_string(rep.seed) + ',' + csv::format_optional(rep.true_late) +
           ',' + csv::format_optional(rep.tau_hat) + ',' + csv::format_optional(rep.ols) + ',' +
           csv::format_optional(rep.iv);
    if (report.with_analytic) out += ci_fields(rep.se_analytic, rep.ci_analytic);
    if (report.with_bootstrap)
      out += ci_fields(rep.se_bootstrap, rep.ci_bootstrap) + ',' + std::to_string(rep.bootstrap_failed);
    std::string err;
    for (const auto& e : rep.errors) err += (err.empty() ? "" : "; ") + detail::sanitize_field(e);
    out += ',' + err + '\n';
  }
  return out;
}

enum class ReportFormat : std::uint8_t { csv, markdown };

// CSV: the replicate table, then the method table, then the standard-error
// table, separated by blank lines. Markdown: the two summary tables.
inline std::string emit_report(const ReplicationReport& report, ReportFormat format) {
  if (format == ReportFormat::csv) return replicates_csv(report) + '\n' + table1_csv(report) + '\n' + table2_csv(report);

  auto fixed = [](double x, int digits = 4) {
    if (std::isnan(x)) return std::string("NA");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return std::string(buf);
  };
  std::ostringstream md;
  md << "R = " << report.r_count << ", master seed " << report.master_seed << ", config " << report.config_digest;
  if (report.with_bootstrap) md << ", B = " << report.b_count;
  md << "\n\n| Method | Mean | Bias | RMSE |\n|---|---:|---:|---:|\n";
  for (const auto& m : report.summary)
    md << "| " << m.method << " | " << fixed(m.mean) << " | " << fixed(m.bias) << " | " << fixed(m.rmse) << " |\n";
  md << "\n| | SE | Coverage |\n|---|---:|---:|\n";
  md << "| SD of tau_hat | " << fixed(report.empirical_sd) << " | |\n";
  md << "| SD of tau_hat - tau_LATE | " << fixed(report.error_sd) << " | |\n";
  for (const auto& c : report.coverage)
    md << "| " << c.method << " | " << fixed(c.mean_se) << " | " << fixed(100.0 * c.coverage, 1) << "% |\n";
  return md.str();
}

// Summary numbers recovered from emit_report's CSV output.
struct ParsedReport {
  std::size_t replicate_rows = 0;
  std::vector<MethodSummary> summary;
  std::vector<CoverageSummary> coverage;
  double empirical_sd = std::numeric_limits<double>::quiet_NaN();
  double error_sd = std::numeric_limits<double>::quiet_NaN();
};

inline ParsedReport parse_report_csv(std::string_view text) {
  ParsedReport out;
  std::istringstream in{std::string(text)};
  csv::LineReader reader(in);
  std::string line;
  int section = -1;
  bool expect_header = true;
  auto number = [&](std::string_view s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto v = csv::parse_double(s);
    if (!v) throw ParseError(reader.line_number(), "bad number '" + std::string(s) + "'");
    return *v;
  };
  auto integer = [&](std::string_view s) {
    const auto v = csv::parse_int(s);
    if (!v) throw ParseError(reader.line_number(), "bad integer '" + std::string(s) + "'");
    return *v;
  };
  while (reader.next(line)) {
    if (line.empty()) {
      expect_header = true;
      continue;
    }
    if (expect_header) {
      ++section;
      expect_header = false;
      continue;
    }
    const auto f = csv::split(line);
    if (section == 0) {
      ++out.replicate_rows;
    } else if (section == 1) {
      if (f.size() != 5) throw ParseError(reader.line_number(), "expected 5 fields");
      out.summary.push_back({std::string(f[0]), integer(f[1]), number(f[2]), number(f[3]), number(f[4])});
    } else if (section == 2) {
      if (f.size() < 3) throw ParseError(reader.line_number(), "expected at least 3 fields");
      if (f[0] == "empirical_sd") out.empirical_sd = number(f[2]);
      else if (f[0] == "error_sd") out.error_sd = number(f[2]);
      else out.coverage.push_back({std::string(f[0]), integer(f[1]), number(f[2]), f.size() > 3 ? number(f[3]) : 0.0});
    } else {
      throw ParseError(reader.line_number(), "unexpected section");
    }
  }
  return out;
}

}  // namespace throttle_lift
