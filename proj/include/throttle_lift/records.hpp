#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "throttle_lift/errors.hpp"

namespace throttle_lift {

enum class CustomerType : std::uint8_t { H, L };

inline const char* to_string(CustomerType t) { return t == CustomerType::H ? "H" : "L"; }

// Simulator-side ground truth for one eligible auction. D(0) is identically
// zero (one-sided compliance) and is not stored.
struct PotentialUnit {
  std::int64_t unit_id = 0;
  double arrival_time = 0.0;  // minutes since campaign start
  CustomerType customer_type = CustomerType::L;
  double competitor_bid = 0.0;  // highest competing bid
  bool d1 = false;              // D(1): win under participation
  bool y0 = false;
  bool y1 = false;
  double e1 = 0.0;  // E(1): second-price payment under participation
};

// One observed auction row (p, Z, D, Y, X, E).
struct AuctionRecord {
  std::int64_t unit_id = 0;
  std::int64_t interval_index = 0;
  double participation_prob = 0.5;
  bool participated = false;
  bool exposed = false;
  double outcome = 0.0;
  double expenditure = 0.0;
  // Pretreatment side information. NaN when not logged.
  double competitor_bid = std::numeric_limits<double>::quiet_NaN();
  double weight = 1.0;
};

// Returns an empty string when the record satisfies every row invariant,
// otherwise a description of the first violation.
inline std::string record_violation(const AuctionRecord& r) {
  if (!(r.participation_prob > 0.0 && r.participation_prob < 1.0)) return "participation probability outside (0,1)";
  if (!r.participated && r.exposed) return "exposed without participation";
  if (!r.participated && r.expenditure != 0.0) return "expenditure without participation";
  if (!(r.weight >= 0.0) || !std::isfinite(r.weight)) return "negative or non-finite weight";
  if (!std::isfinite(r.outcome)) return "non-finite outcome";
  if (r.interval_index < 0) return "negative interval index";
  return {};
}

}  // namespace throttle_lift
