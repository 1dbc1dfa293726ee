#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "throttle_lift/errors.hpp"
#include "throttle_lift/estimators.hpp"
#include "throttle_lift/numeric.hpp"
#include "throttle_lift/parallel.hpp"
#include "throttle_lift/records.hpp"
#include "throttle_lift/rng.hpp"
#include "throttle_lift/sim.hpp"

namespace throttle_lift {

// A throttling algorithm: an initial probability plus a state machine that
// consumes one interval of logged history at a time and emits the next
// interval's participation probability. The state is built only from the
// records fed to it.
template <class P>
concept ThrottlePolicy = requires(const P& policy, typename P::State& state, std::int64_t t,
                                  std::span<const AuctionRecord> block) {
  { policy.initial_probability() } -> std::convertible_to<double>;
  { policy.initial_state() } -> std::same_as<typename P::State>;
  { policy.next_probability(state, t, block) } -> std::convertible_to<double>;
};

static_assert(ThrottlePolicy<LadderPolicy>);

// Ignores history entirely.
struct ConstantPolicy {
  struct State {};
  double probability = 0.5;

  double initial_probability() const { return probability; }
  State initial_state() const { return {}; }
  double next_probability(State&, std::int64_t, std::span<const AuctionRecord>) const { return probability; }
};

// A schedule fixed before the campaign starts: interval t always runs at
// path[t] (the last entry repeats past the end).
struct FixedSchedulePolicy {
  struct State {};
  std::vector<double> path;

  double initial_probability() const { return path.front(); }
  State initial_state() const { return {}; }
  double next_probability(State&, std::int64_t t, std::span<const AuctionRecord>) const {
    const auto next = static_cast<std::size_t>(t + 1);
    return next < path.size() ? path[next] : path.back();
  }
};

// Observed records of one interval, split by assignment arm.
struct IntervalArms {
  std::int64_t interval_index = 0;
  std::vector<AuctionRecord> participated;
  std::vector<AuctionRecord> not_participated;
  double observed_probability = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return participated.size() + not_participated.size(); }
};

// Groups records by interval 0..max_interval; intervals without records are
// kept as empty blocks so that a policy steps through every interval.
inline std::vector<IntervalArms> group_by_interval(std::span<const AuctionRecord> records) {
  std::int64_t last = -1;
  for (const auto& r : records) last = std::max(last, r.interval_index);
  std::vector<IntervalArms> out(static_cast<std::size_t>(last + 1));
  for (std::size_t t = 0; t < out.size(); ++t) out[t].interval_index = static_cast<std::int64_t>(t);
  for (const auto& r : records) {
    auto& block = out[static_cast<std::size_t>(r.interval_index)];
    (r.participated ? block.participated : block.not_participated).push_back(r);
    block.observed_probability = r.participation_prob;
  }
  return out;
}

// Observed p_t path, carrying the previous value through empty intervals.
inline std::vector<double> observed_probability_path(std::span<const IntervalArms> intervals, double fallback) {
  std::vector<double> path;
  path.reserve(intervals.size());
  double last = fallback;
  for (const auto& block : intervals) {
    if (!std::isnan(block.observed_probability)) last = block.observed_probability;
    path.push_back(last);
  }
  return path;
}

// What the bootstrap does when it must resample from an observed arm that
// has no rows in that interval.
enum class EmptyArmRule : std::uint8_t {
  discard,  // throw EmptyArm; the replicate is counted as failed
  borrow,   // resample that arm from the nearest interval where it is nonempty
};

namespace detail {

inline void resample_into(std::vector<AuctionRecord>& out, const std::vector<AuctionRecord>& source, std::int64_t m,
                          std::int64_t interval, double p, Rng& rng) {
  const auto size = static_cast<double>(source.size());
  for (std::int64_t k = 0; k < m; ++k) {
    const auto idx = static_cast<std::size_t>(uniform01(rng) * size);
    AuctionRecord r = source[idx];
    r.interval_index = interval;
    r.participation_prob = p;
    out.push_back(r);
  }
}

// Nearest interval (earlier wins ties) whose `participated` arm is nonempty.
inline const std::vector<AuctionRecord>* nearest_arm(std::span<const IntervalArms> intervals, std::size_t t,
                                                     bool participated) {
  auto arm = [&](std::size_t i) -> const std::vector<AuctionRecord>& {
    return participated ? intervals[i].participated : intervals[i].not_participated;
  };
  for (std::size_t d = 1; d < intervals.size(); ++d) {
    if (d <= t && !arm(t - d).empty()) return &arm(t - d);
    if (t + d < intervals.size() && !arm(t + d).empty()) return &arm(t + d);
  }
  return nullptr;
}

}  // namespace detail

// One draw of the algorithm-aware bootstrap. Each interval keeps its observed
// size; the participation count is Binomial(n_t, p_t^b) with p_t^b replayed
// by `policy` on the bootstrap history, and each arm is resampled with
// replacement from the same observed arm. Fills `out` (cleared first) and
// returns the bootstrap probability path.
template <ThrottlePolicy Policy>
std::vector<double> bootstrap_sample_into(std::span<const IntervalArms> intervals, const Policy& policy, Rng& rng,
                                          std::vector<AuctionRecord>& out,
                                          EmptyArmRule rule = EmptyArmRule::discard) {
  out.clear();
  std::vector<double> path;
  path.reserve(intervals.size());
  auto state = policy.initial_state();
  double p = policy.initial_probability();
  for (std::size_t t = 0; t < intervals.size(); ++t) {
    const auto& block = intervals[t];
    path.push_back(p);
    const auto n = static_cast<std::int64_t>(block.size());
    const std::size_t begin = out.size();
    if (n > 0) {
      std::binomial_distribution<std::int64_t> draw(n, p);
      const std::int64_t n1 = draw(rng);
      const std::int64_t n0 = n - n1;
      const auto* treated = &block.participated;
      const auto* control = &block.not_participated;
      if (n1 > 0 && treated->empty()) {
        treated = rule == EmptyArmRule::borrow ? detail::nearest_arm(intervals, t, true) : nullptr;
        if (treated == nullptr) throw EmptyArm(block.interval_index, 1);
      }
      if (n0 > 0 && control->empty()) {
        control = rule == EmptyArmRule::borrow ? detail::nearest_arm(intervals, t, false) : nullptr;
        if (control == nullptr) throw EmptyArm(block.interval_index, 0);
      }
      detail::resample_into(out, *treated, n1, block.interval_index, p, rng);
      detail::resample_into(out, *control, n0, block.interval_index, p, rng);
    }
    const std::span<const AuctionRecord> appended(out.data() + begin, out.size() - begin);
    p = policy.next_probability(state, block.interval_index, appended);
  }
  return path;
}

template <ThrottlePolicy Policy>
std::vector<AuctionRecord> bootstrap_sample(std::span<const IntervalArms> intervals, const Policy& policy, Rng& rng,
                                            EmptyArmRule rule = EmptyArmRule::discard) {
  std::vector<AuctionRecord> out;
  bootstrap_sample_into(intervals, policy, rng, out, rule);
  return out;
}

// Type-7 (linear interpolation) quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

struct BootstrapResult {
  double tau_hat = 0.0;
  std::vector<double> replicates;  // successful replicates, in replicate-index order
  double variance = 0.0;
  double se = 0.0;
  ConfidenceInterval ci_percentile;
  std::int64_t b_count = 0;
  std::uint64_t seed = 0;
  std::int64_t failed_replicates = 0;
};

struct BootstrapOptions {
  std::int64_t replicates = 200;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  StratifyOptions stratify{};
  double max_failure_rate = 0.2;
  EmptyArmRule empty_arm = EmptyArmRule::borrow;
};

// Reverse-percentile interval [tau - xi_{1-a/2}, tau - xi_{a/2}], xi the
// quantiles of (tau^b - tau).
inline ConfidenceInterval reverse_percentile_ci(double tau_hat, std::span<const double> replicates, double alpha) {
  std::vector<double> deltas;
  deltas.reserve(replicates.size());
  for (double r : replicates) deltas.push_back(r - tau_hat);
  std::sort(deltas.begin(), deltas.end());
  return {tau_hat - quantile_sorted(deltas, 1.0 - alpha / 2.0), tau_hat - quantile_sorted(deltas, alpha / 2.0), alpha,
          "bootstrap"};
}

template <ThrottlePolicy Policy>
BootstrapResult bootstrap_inference(std::span<const AuctionRecord> records, const Policy& policy,
                                    const BootstrapOptions& opts) {
  if (opts.replicates < 2) throw Error(ErrorClass::usage, "bootstrap needs at least 2 replicates");
  if (!(opts.alpha > 0.0 && opts.alpha <= 1.0)) throw Error(ErrorClass::usage, "alpha must lie in (0, 1]");

  BootstrapResult out;
  out.b_count = opts.replicates;
  out.seed = opts.seed;
  out.tau_hat = estimate_late(records, opts.stratify).tau_hat;

  const std::vector<IntervalArms> intervals = group_by_interval(records);
  const auto b_count = static_cast<std::size_t>(opts.replicates);
  std::vector<std::optional<double>> draws(b_count);
  parallel_for(b_count, opts.threads, [&](std::size_t b) {
    Rng rng = make_rng(derive_seed(opts.seed, Stream::bootstrap, b));
    std::vector<AuctionRecord> sample;
    sample.reserve(records.size());
    try {
      bootstrap_sample_into(intervals, policy, rng, sample, opts.empty_arm);
      draws[b] = estimate_late(sample, opts.stratify).tau_hat;
    } catch (const EmptyArm&) {
    } catch (const NoCompliers&) {
    }
  });

  for (const auto& d : draws) {
    if (d) out.replicates.push_back(*d);
    else ++out.failed_replicates;
  }
  const double failure_rate = static_cast<double>(out.failed_replicates) / static_cast<double>(b_count);
  if (failure_rate > opts.max_failure_rate || out.replicates.size() < 2)
    throw TooManyFailures(std::to_string(out.failed_replicates) + " of " + std::to_string(b_count) +
                          " bootstrap replicates failed");

  out.variance = sample_variance(out.replicates);
  out.se = std::sqrt(out.variance);
  out.ci_percentile = reverse_percentile_ci(out.tau_hat, out.replicates, opts.alpha);
  return out;
}

struct StratumVariance {
  double p = 0.0;
  double sigma_y = 0.0;
  double sigma_d = 0.0;
  double sigma_yd = 0.0;
  double contribution = 0.0;  // this stratum's term of omega_hat
};

struct AnalyticVariance {
  double omega_hat = 0.0;
  double variance = 0.0;  // omega_hat / n_total
  std::vector<StratumVariance> per_stratum;
};

// Delta-method variance of the complier-weighted LATE, treating the
// probabilities as fixed. `strata` are the retained strata of weighted_late.
inline AnalyticVariance analytic_variance(std::span<const StratumStats> strata, double tau_hat, double n_total) {
  if (!(n_total > 0.0)) throw NoCompliers("empty sample");
  double complier_total = 0.0;
  for (const auto& s : strata) complier_total += s.n_co_hat;
  if (!(complier_total > 0.0)) throw NoCompliers();

  AnalyticVariance out;
  for (const auto& s : strata) {
    if (s.n_p1 < 2.0 || s.n_p0 < 2.0)
      throw InsufficientStratum(s.p, "each arm needs at least two units for a sample variance");
    if (!(s.itt_d > 0.0)) throw ZeroFirstStage("stratum p=" + std::to_string(s.p) + " has no observed compliers");
    StratumVariance v;
    v.p = s.p;
    v.sigma_y = n_total * (s.var_y1 / s.n_p1 + s.var_y0 / s.n_p0);
    v.sigma_d = n_total * s.var_d1 / s.n_p1;
    v.sigma_yd = n_total * s.cov_yd1 / s.n_p1;
    const double w = s.n_co_hat / complier_total;
    v.contribution = w * w * (v.sigma_y + v.sigma_d * tau_hat * tau_hat - 2.0 * v.sigma_yd * tau_hat) /
                     (s.itt_d * s.itt_d);
    out.omega_hat += v.contribution;
    out.per_stratum.push_back(v);
  }
  out.omega_hat = std::max(0.0, out.omega_hat);
  out.variance = out.omega_hat / n_total;
  return out;
}

// tau +/- z_{1 - alpha/2} * sqrt(variance).
inline ConfidenceInterval normal_ci(double tau_hat, double variance, double alpha) {
  if (!(variance >= 0.0)) throw Error(ErrorClass::degeneracy, "variance must be nonnegative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorClass::usage, "alpha must lie in (0, 1]");
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(variance);
  return {tau_hat - half, tau_hat + half, alpha, "analytic"};
}

}  // namespace throttle_lift
