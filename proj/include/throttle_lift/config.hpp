#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "throttle_lift/errors.hpp"

namespace throttle_lift {

// One step of the probability ladder: scores at or above `threshold` (and
// below the next rung's threshold) map to `probability`.
struct ProbabilityRung {
  double threshold = 0.0;
  double probability = 0.5;
};

inline std::vector<ProbabilityRung> default_ladder() {
  return {{0.3, 0.3}, {0.5, 0.5}, {0.7, 0.7}, {0.9, 0.9}};
}

// How serial correlation of customer types is generated.
//  latent_ar1: a stationary Gaussian AR(1) with lag-1 correlation rho,
//              thresholded so that P(H) = h_share.
//  markov:     a two-state chain whose binary lag-1 autocorrelation is rho.
enum class TypeProcess : std::uint8_t { latent_ar1, markov };

inline const char* to_string(TypeProcess p) { return p == TypeProcess::markov ? "markov" : "latent_ar1"; }

struct BidRange {
  double low = 0.0;
  double high = 0.0;
};

// Parameters of a simulated throttled campaign. Defaults reproduce the
// 24-hour, $10,000 budget, $5 bid scenario.
struct CampaignConfig {
  double budget = 10000.0;
  double bid = 5.0;
  double duration_hours = 24.0;
  double interval_minutes = 5.0;
  double arrival_rate_per_day = 10000.0;
  double type_serial_correlation = 0.99;
  TypeProcess type_process = TypeProcess::latent_ar1;
  double h_share = 0.5;
  double h_base_rate = 0.4;
  double h_lift = 0.4;
  double l_base_rate = 0.1;
  double l_lift = 0.1;
  BidRange h_competitor_bid_range{4.0, 7.0};
  BidRange l_competitor_bid_range{1.0, 6.0};
  std::vector<ProbabilityRung> prob_ladder = default_ladder();
  double initial_probability = 0.9;
  double overlap_eta = 0.05;
  std::uint64_t seed = 0;

  double duration_minutes() const { return duration_hours * 60.0; }
  double arrival_rate_per_minute() const { return arrival_rate_per_day / 1440.0; }

  // Number of pacing intervals 0..T covering the campaign.
  std::size_t interval_count() const {
    return static_cast<std::size_t>(std::ceil(duration_minutes() / interval_minutes - 1e-9));
  }

  void validate() const;
};

inline void CampaignConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(budget > 0.0, "budget must be positive");
  require(bid > 0.0, "bid must be positive");
  require(duration_hours > 0.0, "duration_hours must be positive");
  require(interval_minutes > 0.0, "interval_minutes must be positive");
  require(arrival_rate_per_day >= 0.0, "arrival_rate_per_day must be nonnegative");
  require(type_serial_correlation >= 0.0 && type_serial_correlation < 1.0, "type_serial_correlation must lie in [0,1)");
  require(h_share >= 0.0 && h_share <= 1.0, "h_share must lie in [0,1]");
  for (double r : {h_base_rate, h_lift, l_base_rate, l_lift}) require(r >= 0.0 && r <= 1.0, "rates must lie in [0,1]");
  require(h_base_rate + h_lift <= 1.0, "h_base_rate + h_lift must not exceed 1");
  require(l_base_rate + l_lift <= 1.0, "l_base_rate + l_lift must not exceed 1");
  for (const auto& r : {h_competitor_bid_range, l_competitor_bid_range})
    require(r.low >= 0.0 && r.low <= r.high, "competitor bid range must satisfy 0 <= low <= high");
  require(overlap_eta > 0.0 && overlap_eta < 0.5, "overlap_eta must lie in (0, 0.5)");
  require(!prob_ladder.empty(), "prob_ladder must not be empty");
  for (std::size_t i = 0; i < prob_ladder.size(); ++i) {
    const auto& rung = prob_ladder[i];
    require(std::isfinite(rung.threshold), "ladder thresholds must be finite");
    require(rung.probability > overlap_eta && rung.probability < 1.0 - overlap_eta,
            "ladder probabilities must lie in (eta, 1 - eta)");
    if (i > 0) require(rung.threshold > prob_ladder[i - 1].threshold, "ladder thresholds must be strictly increasing");
  }
  require(initial_probability > overlap_eta && initial_probability < 1.0 - overlap_eta,
          "initial_probability must lie in (eta, 1 - eta)");
}

inline void to_json(nlohmann::json& j, const ProbabilityRung& r) {
  j = nlohmann::json{{"threshold", r.threshold}, {"probability", r.probability}};
}

inline void to_json(nlohmann::json& j, const BidRange& r) { j = nlohmann::json::array({r.low, r.high}); }

inline void to_json(nlohmann::json& j, const CampaignConfig& c) {
  j = nlohmann::json{{"budget", c.budget},
                     {"bid", c.bid},
                     {"duration_hours", c.duration_hours},
                     {"interval_minutes", c.interval_minutes},
                     {"arrival_rate_per_day", c.arrival_rate_per_day},
                     {"type_serial_correlation", c.type_serial_correlation},
                     {"type_process", to_string(c.type_process)},
                     {"h_share", c.h_share},
                     {"h_base_rate", c.h_base_rate},
                     {"h_lift", c.h_lift},
                     {"l_base_rate", c.l_base_rate},
                     {"l_lift", c.l_lift},
                     {"h_competitor_bid_range", c.h_competitor_bid_range},
                     {"l_competitor_bid_range", c.l_competitor_bid_range},
                     {"prob_ladder", c.prob_ladder},
                     {"initial_probability", c.initial_probability},
                     {"overlap_eta", c.overlap_eta},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys are rejected so that typos
// do not silently fall back to the default scenario.
inline CampaignConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("top-level value must be an object");
  CampaignConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "budget") c.budget = v.get<double>();
      else if (k == "bid") c.bid = v.get<double>();
      else if (k == "duration_hours") c.duration_hours = v.get<double>();
      else if (k == "interval_minutes") c.interval_minutes = v.get<double>();
      else if (k == "arrival_rate_per_day") c.arrival_rate_per_day = v.get<double>();
      else if (k == "type_serial_correlation") c.type_serial_correlation = v.get<double>();
      else if (k == "type_process") {
        const auto name = v.get<std::string>();
        if (name == "markov") c.type_process = TypeProcess::markov;
        else if (name == "latent_ar1") c.type_process = TypeProcess::latent_ar1;
        else throw ConfigError("type_process must be \"latent_ar1\" or \"markov\"");
      } else if (k == "h_share") c.h_share = v.get<double>();
      else if (k == "h_base_rate") c.h_base_rate = v.get<double>();
      else if (k == "h_lift") c.h_lift = v.get<double>();
      else if (k == "l_base_rate") c.l_base_rate = v.get<double>();
      else if (k == "l_lift") c.l_lift = v.get<double>();
      else if (k == "h_competitor_bid_range" || k == "l_competitor_bid_range") {
        if (!v.is_array() || v.size() != 2) throw ConfigError(k + " must be [low, high]");
        BidRange r{v[0].get<double>(), v[1].get<double>()};
        (k[0] == 'h' ? c.h_competitor_bid_range : c.l_competitor_bid_range) = r;
      } else if (k == "prob_ladder") {
        if (!v.is_array()) throw ConfigError("prob_ladder must be an array");
        c.prob_ladder.clear();
        for (const auto& rung : v) {
          if (rung.is_array() && rung.size() == 2)
            c.prob_ladder.push_back({rung[0].get<double>(), rung[1].get<double>()});
          else
            c.prob_ladder.push_back({rung.at("threshold").get<double>(), rung.at("probability").get<double>()});
        }
      } else if (k == "initial_probability") c.initial_probability = v.get<double>();
      else if (k == "overlap_eta") c.overlap_eta = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

// Short stable fingerprint of a config (FNV-1a over its canonical JSON).
inline std::string config_digest(const CampaignConfig& c) {
  nlohmann::json j = c;
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace throttle_lift
