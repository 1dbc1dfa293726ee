#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "throttle_lift/errors.hpp"
#include "throttle_lift/records.hpp"

namespace throttle_lift {

// How participation probabilities are grouped into strata. Exact grouping
// (the default) compares the stored double values; binned grouping maps p to
// floor(p / width) * width.
struct StratifyOptions {
  std::optional<double> bin_width;
  bool weighted = false;
};

inline double stratum_key(double p, const StratifyOptions& opts) {
  if (!opts.bin_width) return p;
  const double w = *opts.bin_width;
  // The small offset keeps values such as 0.3 / 0.01 = 29.999999999999996 in
  // the bin their decimal spelling names.
  return std::floor(p / w + 1e-9) * w;
}

inline std::map<double, std::vector<AuctionRecord>> stratify(std::span<const AuctionRecord> records,
                                                              const StratifyOptions& opts = {}) {
  std::map<double, std::vector<AuctionRecord>> groups;
  for (const auto& r : records) groups[stratum_key(r.participation_prob, opts)].push_back(r);
  return groups;
}

// Weighted first and second moments of (Y, D) within one assignment arm.
struct ArmMoments {
  double w = 0.0;
  double wy = 0.0;
  double wyy = 0.0;
  double wd = 0.0;
  double wdd = 0.0;
  double wyd = 0.0;

  void add(double y, double d, double weight) {
    w += weight;
    wy += weight * y;
    wyy += weight * y * y;
    wd += weight * d;
    wdd += weight * d * d;
    wyd += weight * y * d;
  }

  double mean_y() const { return wy / w; }
  double mean_d() const { return wd / w; }
  // Sample (co)variances with an (n - 1) denominator, n the weight sum.
  double var_y() const { return std::max(0.0, (wyy - wy * wy / w) / (w - 1.0)); }
  double var_d() const { return std::max(0.0, (wdd - wd * wd / w) / (w - 1.0)); }
  double cov_yd() const { return (wyd - wy * wd / w) / (w - 1.0); }
};

struct StratumStats {
  double p = 0.0;
  double n_p = 0.0;
  double n_p1 = 0.0;
  double n_p0 = 0.0;
  double itt_y = std::numeric_limits<double>::quiet_NaN();
  double itt_d = std::numeric_limits<double>::quiet_NaN();
  double n_co_hat = std::numeric_limits<double>::quiet_NaN();
  double tau_p = std::numeric_limits<double>::quiet_NaN();
  // n-scaled variance components of the two ITT estimates, n being the
  // total sample size passed to summarize_strata.
  double sigma_y = std::numeric_limits<double>::quiet_NaN();
  double sigma_d = std::numeric_limits<double>::quiet_NaN();
  double sigma_yd = std::numeric_limits<double>::quiet_NaN();
  // Within-arm sample moments backing the sigma components.
  double var_y1 = std::numeric_limits<double>::quiet_NaN();
  double var_y0 = std::numeric_limits<double>::quiet_NaN();
  double var_d1 = std::numeric_limits<double>::quiet_NaN();
  double cov_yd1 = std::numeric_limits<double>::quiet_NaN();

  bool has_both_arms() const { return n_p1 > 0.0 && n_p0 > 0.0; }
};

struct IttEstimate {
  double itt_y = 0.0;
  double itt_d = 0.0;
};

namespace detail {

struct StratumMoments {
  ArmMoments treated;
  ArmMoments control;
};

inline StratumStats stats_from_moments(double p, const StratumMoments& m, double n_total) {
  StratumStats s;
  s.p = p;
  s.n_p1 = m.treated.w;
  s.n_p0 = m.control.w;
  s.n_p = s.n_p1 + s.n_p0;
  if (s.n_p1 > 0.0) {
    s.itt_d = m.treated.mean_d();
    s.n_co_hat = s.n_p * s.itt_d;
  }
  if (s.has_both_arms()) {
    s.itt_y = m.treated.mean_y() - m.control.mean_y();
    if (s.itt_d > 0.0) s.tau_p = s.itt_y / s.itt_d;
  }
  if (s.n_p1 > 1.0) {
    s.var_y1 = m.treated.var_y();
    s.var_d1 = m.treated.var_d();
    s.cov_yd1 = m.treated.cov_yd();
  }
  if (s.n_p0 > 1.0) s.var_y0 = m.control.var_y();
  if (s.n_p1 > 1.0 && s.n_p0 > 1.0) {
    s.sigma_y = n_total * (s.var_y1 / s.n_p1 + s.var_y0 / s.n_p0);
    s.sigma_d = n_total * s.var_d1 / s.n_p1;
    s.sigma_yd = n_total * s.cov_yd1 / s.n_p1;
  }
  return s;
}

inline double record_weight(const AuctionRecord& r, bool weighted) { return weighted ? r.weight : 1.0; }

}  // namespace detail

// Per-stratum aggregates for every distinct (or binned) p, sorted by p.
// Strata with an empty arm are still reported; their undefined fields are NaN.
inline std::vector<StratumStats> summarize_strata(std::span<const AuctionRecord> records,
                                                  const StratifyOptions& opts = {}) {
  std::map<double, detail::StratumMoments> moments;
  double n_total = 0.0;
  auto it = moments.end();
  double last_key = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : records) {
    const double key = stratum_key(r.participation_prob, opts);
    if (it == moments.end() || key != last_key) {
      it = moments.try_emplace(key).first;
      last_key = key;
    }
    const double w = detail::record_weight(r, opts.weighted);
    (r.participated ? it->second.treated : it->second.control).add(r.outcome, r.exposed ? 1.0 : 0.0, w);
    n_total += w;
  }
  std::vector<StratumStats> out;
  out.reserve(moments.size());
  for (const auto& [p, m] : moments) out.push_back(detail::stats_from_moments(p, m, n_total));
  return out;
}

inline IttEstimate stratum_itt(std::span<const AuctionRecord> stratum, bool weighted = false) {
  detail::StratumMoments m;
  for (const auto& r : stratum)
    (r.participated ? m.treated : m.control).add(r.outcome, r.exposed ? 1.0 : 0.0, detail::record_weight(r, weighted));
  const double p = stratum.empty() ? std::numeric_limits<double>::quiet_NaN() : stratum.front().participation_prob;
  if (!(m.treated.w > 0.0)) throw DegenerateStratum(p, "no participated units");
  if (!(m.control.w > 0.0)) throw DegenerateStratum(p, "no non-participated units");
  return {m.treated.mean_y() - m.control.mean_y(), m.treated.mean_d()};
}

inline double stratum_late(const StratumStats& stats) {
  if (!(stats.itt_d > 0.0)) throw ZeroFirstStage("stratum p=" + std::to_string(stats.p) + " has no observed compliers");
  return stats.itt_y / stats.itt_d;
}

struct DroppedStratum {
  double p = 0.0;
  std::string reason;
};

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
  double alpha = 0.05;
  std::string method;
};

struct LateResult {
  double tau_hat = 0.0;
  std::vector<std::pair<double, double>> weights;  // p -> w_p, ascending p
  std::vector<StratumStats> strata;                // retained strata only
  std::vector<DroppedStratum> dropped;
  double n_total = 0.0;  // sample size of the retained strata
  std::optional<double> variance_analytic;
  std::optional<double> variance_bootstrap;
  std::optional<ConfidenceInterval> ci;
};

// Complier-weighted average of per-stratum LATEs. Strata with an empty arm or
// no observed compliers are dropped and listed in `dropped`.
inline LateResult weighted_late(std::span<const StratumStats> strata) {
  LateResult out;
  double complier_total = 0.0;
  for (const auto& s : strata) {
    if (!s.has_both_arms()) {
      out.dropped.push_back({s.p, s.n_p1 > 0.0 ? "no non-participated units" : "no participated units"});
      continue;
    }
    if (!(s.itt_d > 0.0)) {
      out.dropped.push_back({s.p, "zero first stage"});
      continue;
    }
    out.strata.push_back(s);
    complier_total += s.n_co_hat;
    out.n_total += s.n_p;
  }
  if (out.strata.empty()) throw NoCompliers("no stratum has both arms and a positive first stage");

  double tau = 0.0;
  for (const auto& s : out.strata) {
    const double w = s.n_co_hat / complier_total;
    out.weights.emplace_back(s.p, w);
    tau += w * stratum_late(s);
  }
  out.tau_hat = tau;
  return out;
}

// The same estimator written as total ITT over total compliers, over the
// strata weighted_late would retain.
inline double ratio_form_late(std::span<const StratumStats> strata) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : strata) {
    if (!s.has_both_arms() || !(s.itt_d > 0.0)) continue;
    num += s.n_p * s.itt_y;
    den += s.n_p * s.itt_d;
  }
  if (!(den > 0.0)) throw NoCompliers();
  return num / den;
}

inline LateResult estimate_late(std::span<const AuctionRecord> records, const StratifyOptions& opts = {}) {
  const auto strata = summarize_strata(records, opts);
  return weighted_late(strata);
}

// Difference in mean outcome by exposure status.
inline double ols_estimate(std::span<const AuctionRecord> records, bool weighted = false) {
  double w1 = 0, y1 = 0, w0 = 0, y0 = 0;
  for (const auto& r : records) {
    const double w = detail::record_weight(r, weighted);
    if (r.exposed) {
      w1 += w;
      y1 += w * r.outcome;
    } else {
      w0 += w;
      y0 += w * r.outcome;
    }
  }
  if (!(w1 > 0.0)) throw DegenerateArm("no exposed units");
  if (!(w0 > 0.0)) throw DegenerateArm("no unexposed units");
  return y1 / w1 - y0 / w0;
}

// Marginal Wald ratio that ignores the participation probabilities.
inline double naive_iv_wald(std::span<const AuctionRecord> records, bool weighted = false) {
  ArmMoments treated, control;
  for (const auto& r : records)
    (r.participated ? treated : control).add(r.outcome, r.exposed ? 1.0 : 0.0, detail::record_weight(r, weighted));
  if (!(treated.w > 0.0)) throw DegenerateArm("no participated units");
  if (!(control.w > 0.0)) throw DegenerateArm("no non-participated units");
  const double first_stage = treated.mean_d() - control.mean_d();
  if (first_stage == 0.0) throw ZeroFirstStage();
  return (treated.mean_y() - control.mean_y()) / first_stage;
}

inline double mean_outcome_exposed(std::span<const AuctionRecord> records, bool weighted = false) {
  double w1 = 0, y1 = 0;
  for (const auto& r : records) {
    if (!r.exposed) continue;
    const double w = detail::record_weight(r, weighted);
    w1 += w;
    y1 += w * r.outcome;
  }
  if (!(w1 > 0.0)) throw DegenerateArm("no exposed units");
  return y1 / w1;
}

// tau / (E[Y | D=1] - tau). Empty when the implied baseline conversion is
// not positive, which rules out participation as a valid instrument.
inline std::optional<double> conversion_lift(double tau, double mean_y_given_d1) {
  const double baseline = mean_y_given_d1 - tau;
  if (!(baseline > 0.0)) return std::nullopt;
  return tau / baseline;
}

// Ground-truth LATE over all units that would win if the campaign participated.
inline double true_late(std::span<const PotentialUnit> potentials) {
  double effect = 0.0;
  std::int64_t compliers = 0;
  for (const auto& u : potentials) {
    if (!u.d1) continue;
    ++compliers;
    effect += static_cast<double>(u.y1) - static_cast<double>(u.y0);
  }
  if (compliers == 0) throw NoCompliers();
  return effect / static_cast<double>(compliers);
}

}  // namespace throttle_lift
