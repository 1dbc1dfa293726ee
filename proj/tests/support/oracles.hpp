#pragma once

// Reference computations written directly from the textbook formulas, with no
// code shared with the library, plus small fixture builders.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "throttle_lift/records.hpp"

namespace oracle {

using throttle_lift::AuctionRecord;

inline AuctionRecord row(double p, bool z, bool d, double y, double w = 1.0, std::int64_t interval = 0) {
  AuctionRecord r;
  r.participation_prob = p;
  r.participated = z;
  r.exposed = d;
  r.outcome = y;
  r.weight = w;
  r.interval_index = interval;
  return r;
}

// (sum over strata of n_p * ITT_Y) / (sum of n_p * ITT_D), skipping strata
// with an empty arm or no exposed participants.
inline double ratio_late(const std::vector<AuctionRecord>& rows) {
  struct Sums {
    double n1 = 0, n0 = 0, y1 = 0, y0 = 0, d1 = 0;
  };
  std::map<double, Sums> by_p;
  for (const auto& r : rows) {
    auto& s = by_p[r.participation_prob];
    if (r.participated) {
      s.n1 += 1;
      s.y1 += r.outcome;
      s.d1 += r.exposed ? 1 : 0;
    } else {
      s.n0 += 1;
      s.y0 += r.outcome;
    }
  }
  double num = 0, den = 0;
  for (const auto& [p, s] : by_p) {
    if (s.n1 == 0 || s.n0 == 0 || s.d1 == 0) continue;
    const double n = s.n1 + s.n0;
    num += n * (s.y1 / s.n1 - s.y0 / s.n0);
    den += n * (s.d1 / s.n1);
  }
  return num / den;
}

// Difference in means of Y between arms divided by the difference in means
// of D, ignoring p.
inline double wald(const std::vector<AuctionRecord>& rows) {
  double n1 = 0, n0 = 0, y1 = 0, y0 = 0, d1 = 0, d0 = 0;
  for (const auto& r : rows) {
    if (r.participated) {
      ++n1;
      y1 += r.outcome;
      d1 += r.exposed;
    } else {
      ++n0;
      y0 += r.outcome;
      d0 += r.exposed;
    }
  }
  return (y1 / n1 - y0 / n0) / (d1 / n1 - d0 / n0);
}

// Two-sample variance of a difference in means, unbiased per arm.
inline double neyman_variance(const std::vector<double>& treated, const std::vector<double>& control) {
  auto var_over_n = [](const std::vector<double>& x) {
    double m = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size());
  };
  return var_over_n(treated) + var_over_n(control);
}

// Random small multi-stratum fixture: every stratum gets both arms and at
// least one exposed participant, so no stratum is dropped.
inline std::vector<AuctionRecord> random_fixture(std::mt19937_64& gen, int strata, int min_rows, int max_rows) {
  static const double probs[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> ps(std::begin(probs), std::end(probs));
  std::shuffle(ps.begin(), ps.end(), gen);
  std::uniform_int_distribution<int> size(min_rows, max_rows);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<AuctionRecord> out;
  for (int s = 0; s < strata; ++s) {
    const double p = ps[static_cast<std::size_t>(s)];
    const int n = size(gen);
    for (int i = 0; i < n; ++i) {
      const bool z = i == 0 ? true : (i == 1 ? false : u(gen) < p);
      const bool d = z && (i == 0 || u(gen) < 0.6);
      const double y = u(gen) < (d ? 0.5 : 0.2) ? 1.0 : 0.0;
      out.push_back(row(p, z, d, y));
    }
  }
  std::shuffle(out.begin(), out.end(), gen);
  return out;
}

// Upper 1 - alpha point of a chi-square with k degrees of freedom
// (Wilson-Hilferty), given the matching standard normal quantile z.
inline double chi_square_upper(double k, double z) {
  const double a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

inline double binomial_pmf(int n, int k, double p) {
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                  (n - k) * std::log1p(-p));
}

// Pearson statistic of observed counts of k successes out of n against
// Binomial(n, p), pooling adjacent outcomes until each expected count is at
// least 5. Returns (statistic, degrees of freedom).
inline std::pair<double, int> binomial_chi_square(const std::vector<int>& draws, int n, double p) {
  std::vector<double> observed(static_cast<std::size_t>(n + 1), 0.0);
  for (int k : draws) observed[static_cast<std::size_t>(k)] += 1.0;
  const double total = static_cast<double>(draws.size());
  std::vector<std::pair<double, double>> cells;  // (observed, expected)
  double obs = 0, exp = 0;
  for (int k = 0; k <= n; ++k) {
    obs += observed[static_cast<std::size_t>(k)];
    exp += total * binomial_pmf(n, k, p);
    if (exp >= 5.0) {
      cells.emplace_back(obs, exp);
      obs = exp = 0;
    }
  }
  if (!cells.empty()) {
    cells.back().first += obs;
    cells.back().second += exp;
  } else {
    cells.emplace_back(obs, exp);
  }
  double stat = 0;
  for (const auto& [o, e] : cells) stat += (o - e) * (o - e) / e;
  return {stat, static_cast<int>(cells.size()) - 1};
}

}  // namespace oracle
