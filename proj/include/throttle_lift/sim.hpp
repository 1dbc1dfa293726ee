#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "throttle_lift/config.hpp"
#include "throttle_lift/errors.hpp"
#include "throttle_lift/numeric.hpp"
#include "throttle_lift/records.hpp"
#include "throttle_lift/rng.hpp"

namespace throttle_lift {

// Customer arrival before any participation decision.
struct Arrival {
  double arrival_time = 0.0;  // minutes
  CustomerType customer_type = CustomerType::L;
  double competitor_bid = 0.0;
  bool y0 = false;
  bool y1 = false;
};

// Bookkeeping the pacing algorithm sees at the end of interval t.
struct PacingState {
  std::int64_t interval_index = 0;
  double remaining_budget = 0.0;             // B_t
  double recent_avg_expenditure = 0.0;       // e_t
  double expected_remaining_auctions = 0.0;  // N_t
  double current_probability = 0.5;          // p_t, in force during interval t
  std::int64_t budget_guard_skips = 0;       // participations skipped for lack of budget
};

struct CampaignRun {
  std::vector<AuctionRecord> records;
  std::vector<PotentialUnit> potentials;
  std::vector<std::pair<std::int64_t, double>> probability_path;
  std::vector<PacingState> pacing_trace;
};

// Per-state transition parameters of a two-state chain with stationary
// H-share `h_share` and lag-1 autocorrelation `rho`.
struct TypeChain {
  double stay_h = 1.0;
  double stay_l = 1.0;
};

inline TypeChain type_chain(double h_share, double rho) {
  // P(H->L) + P(L->H) = 1 - rho, split in proportion to keep h_share stationary.
  return {1.0 - (1.0 - h_share) * (1.0 - rho), 1.0 - h_share * (1.0 - rho)};
}

namespace detail {

// Draws the next customer type from either serial-correlation process.
class TypeSequence {
 public:
  TypeSequence(const CampaignConfig& config, Rng& rng)
      : process_(config.type_process),
        rho_(config.type_serial_correlation),
        innovation_scale_(std::sqrt(1.0 - rho_ * rho_)),
        threshold_(normal_quantile(1.0 - config.h_share)),
        chain_(type_chain(config.h_share, rho_)) {
    if (process_ == TypeProcess::markov) {
      type_ = bernoulli(rng, config.h_share) ? CustomerType::H : CustomerType::L;
    } else {
      latent_ = normal_(rng);
      type_ = latent_ > threshold_ ? CustomerType::H : CustomerType::L;
    }
  }

  CustomerType current() const { return type_; }

  CustomerType advance(Rng& rng) {
    if (process_ == TypeProcess::markov) {
      const double stay = type_ == CustomerType::H ? chain_.stay_h : chain_.stay_l;
      if (!bernoulli(rng, stay)) type_ = type_ == CustomerType::H ? CustomerType::L : CustomerType::H;
    } else {
      latent_ = rho_ * latent_ + innovation_scale_ * normal_(rng);
      type_ = latent_ > threshold_ ? CustomerType::H : CustomerType::L;
    }
    return type_;
  }

  double latent() const { return latent_; }

 private:
  TypeProcess process_;
  double rho_;
  double innovation_scale_;
  double threshold_;
  TypeChain chain_;
  std::normal_distribution<double> normal_;
  double latent_ = 0.0;
  CustomerType type_ = CustomerType::L;
};

}  // namespace detail

inline std::vector<Arrival> generate_arrivals(const CampaignConfig& config, Rng& rng) {
  std::vector<Arrival> out;
  const double rate = config.arrival_rate_per_minute();
  const double horizon = config.duration_minutes();
  if (!(rate > 0.0) || !(horizon > 0.0)) return out;
  out.reserve(static_cast<std::size_t>(rate * horizon * 1.1) + 16);

  std::exponential_distribution<double> gap(rate);
  detail::TypeSequence types(config, rng);
  bool first = true;
  double t = 0.0;
  while (true) {
    t += gap(rng);
    if (t >= horizon) break;
    const CustomerType type = first ? types.current() : types.advance(rng);
    first = false;
    const bool is_h = type == CustomerType::H;
    const BidRange range = is_h ? config.h_competitor_bid_range : config.l_competitor_bid_range;
    const double base = is_h ? config.h_base_rate : config.l_base_rate;
    const double lift = is_h ? config.h_lift : config.l_lift;
    Arrival a;
    a.arrival_time = t;
    a.customer_type = type;
    a.competitor_bid = range.low + (range.high - range.low) * uniform01(rng);
    // One uniform couples both potential outcomes so that y1 >= y0.
    const double u = uniform01(rng);
    a.y0 = u < base;
    a.y1 = u < base + lift;
    out.push_back(a);
  }
  return out;
}

struct AuctionOutcome {
  bool won = false;
  double price = 0.0;
};

// Second-price auction against the highest competing bid. Exact ties lose.
constexpr AuctionOutcome run_auction(double bid, double competitor_bid) noexcept {
  if (bid > competitor_bid) return {true, competitor_bid};
  return {false, 0.0};
}

// r_t = (B_t / e_t) / N_t. Returns +infinity when no auctions remain.
inline double pacing_score(const PacingState& state) {
  if (!(state.recent_avg_expenditure > 0.0))
    throw ConfigError("pacing score needs a positive average expenditure per participation");
  if (!(state.expected_remaining_auctions > 0.0)) return std::numeric_limits<double>::infinity();
  return (state.remaining_budget / state.recent_avg_expenditure) / state.expected_remaining_auctions;
}

// Step function from score to participation probability. Scores below the
// lowest threshold clamp to the lowest rung.
inline double ladder_probability(double score, std::span<const ProbabilityRung> ladder) {
  double p = ladder.front().probability;
  for (const auto& rung : ladder) {
    if (score >= rung.threshold) p = rung.probability;
    else break;
  }
  return p;
}

// The score-and-ladder pacing algorithm. It maps logged history to the next
// interval's participation probability and sees nothing but the records it
// is fed, so the bootstrap can replay it on resampled histories.
class LadderPolicy {
 public:
  struct State {
    double spent = 0.0;
    double last_avg_expenditure = 0.0;
    double current_probability = 0.5;
    PacingState last;
  };

  explicit LadderPolicy(const CampaignConfig& config)
      : budget_(config.budget),
        bid_(config.bid),
        rate_per_minute_(config.arrival_rate_per_minute()),
        interval_minutes_(config.interval_minutes),
        duration_minutes_(config.duration_minutes()),
        ladder_(config.prob_ladder),
        p0_(config.initial_probability) {}

  double initial_probability() const { return p0_; }

  State initial_state() const {
    State s;
    s.last_avg_expenditure = bid_;
    s.current_probability = p0_;
    return s;
  }

  double budget() const { return budget_; }

  // Consumes the records of interval t and returns p_{t+1}.
  double next_probability(State& state, std::int64_t t, std::span<const AuctionRecord> block) const {
    double interval_spend = 0.0;
    std::int64_t participations = 0;
    for (const auto& r : block) {
      if (!r.participated) continue;
      ++participations;
      interval_spend += r.expenditure;
      state.spent += r.expenditure;
    }
    // Intervals with no participations, or no spend, carry e_t forward.
    if (participations > 0 && interval_spend > 0.0)
      state.last_avg_expenditure = interval_spend / static_cast<double>(participations);

    PacingState ps;
    ps.interval_index = t;
    ps.remaining_budget = std::max(0.0, budget_ - state.spent);
    ps.recent_avg_expenditure = state.last_avg_expenditure;
    const double remaining_minutes =
        std::max(0.0, duration_minutes_ - static_cast<double>(t + 1) * interval_minutes_);
    ps.expected_remaining_auctions = rate_per_minute_ * remaining_minutes;
    ps.current_probability = state.current_probability;
    state.last = ps;

    const double next = ladder_probability(pacing_score(ps), ladder_);
    state.current_probability = next;
    return next;
  }

 private:
  double budget_;
  double bid_;
  double rate_per_minute_;
  double interval_minutes_;
  double duration_minutes_;
  std::vector<ProbabilityRung> ladder_;
  double p0_;
};

inline CampaignRun run_campaign(const CampaignConfig& config) {
  config.validate();
  Rng arrival_rng = make_rng(derive_seed(config.seed, Stream::arrivals));
  Rng assign_rng = make_rng(derive_seed(config.seed, Stream::assignment));
  const std::vector<Arrival> arrivals = generate_arrivals(config, arrival_rng);

  CampaignRun run;
  run.records.reserve(arrivals.size());
  run.potentials.reserve(arrivals.size());
  const std::size_t intervals = config.interval_count();
  run.probability_path.reserve(intervals);
  run.pacing_trace.reserve(intervals);

  const LadderPolicy policy(config);
  LadderPolicy::State state = policy.initial_state();
  double p = policy.initial_probability();
  double spent = 0.0;
  std::size_t next_arrival = 0;

  for (std::size_t t = 0; t < intervals; ++t) {
    const double interval_end = static_cast<double>(t + 1) * config.interval_minutes;
    const std::size_t block_begin = run.records.size();
    std::int64_t guard_skips = 0;
    run.probability_path.emplace_back(static_cast<std::int64_t>(t), p);

    while (next_arrival < arrivals.size() && arrivals[next_arrival].arrival_time < interval_end) {
      const Arrival& a = arrivals[next_arrival];
      const auto id = static_cast<std::int64_t>(next_arrival);
      ++next_arrival;

      PotentialUnit u;
      u.unit_id = id;
      u.arrival_time = a.arrival_time;
      u.customer_type = a.customer_type;
      u.competitor_bid = a.competitor_bid;
      const AuctionOutcome potential = run_auction(config.bid, a.competitor_bid);
      u.d1 = potential.won;
      u.e1 = potential.price;
      u.y0 = a.y0;
      u.y1 = a.y1;
      run.potentials.push_back(u);

      AuctionRecord r;
      r.unit_id = id;
      r.interval_index = static_cast<std::int64_t>(t);
      r.participation_prob = p;
      r.participated = bernoulli(assign_rng, p);
      r.competitor_bid = a.competitor_bid;
      if (r.participated) {
        if (config.budget - spent < config.bid) {
          ++guard_skips;
        } else {
          r.exposed = u.d1;
          r.expenditure = u.d1 ? u.e1 : 0.0;
          spent += r.expenditure;
        }
      }
      r.outcome = (r.exposed ? u.y1 : u.y0) ? 1.0 : 0.0;
      run.records.push_back(r);
    }

    const std::span<const AuctionRecord> block(run.records.data() + block_begin, run.records.size() - block_begin);
    const double next = policy.next_probability(state, static_cast<std::int64_t>(t), block);
    PacingState ps = state.last;
    ps.budget_guard_skips = guard_skips;
    run.pacing_trace.push_back(ps);
    p = next;
  }
  return run;
}

}  // namespace throttle_lift
