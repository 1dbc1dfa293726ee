#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "throttle_lift/csv.hpp"
#include "throttle_lift/errors.hpp"
#include "throttle_lift/records.hpp"
#include "throttle_lift/sim.hpp"

namespace throttle_lift {

// ---- simulator tables ----

inline std::string records_to_csv(std::span<const AuctionRecord> records, bool with_weight = false) {
  std::string out = with_weight ? "unit_id,interval,p,Z,D,Y,E,competitor_bid,weight\n" : "unit_id,interval,p,Z,D,Y,E,competitor_bid\n";
  for (const auto& r : records) {
    out += std::to_string(r.unit_id) + ',' + std::to_string(r.interval_index) + ',' +
           csv::format_number(r.participation_prob) + ',' + (r.participated ? '1' : '0') + ',' +
           (r.exposed ? '1' : '0') + ',' + csv::format_number(r.outcome) + ',' + csv::format_number(r.expenditure) +
           ',' + csv::format_number(r.competitor_bid);
    if (with_weight) out += ',' + csv::format_number(r.weight);
    out += '\n';
  }
  return out;
}

inline std::string potentials_to_csv(std::span<const PotentialUnit> potentials) {
  std::string out = "unit_id,type,d1,y0,y1\n";
  for (const auto& u : potentials) {
    out += std::to_string(u.unit_id) + ',' + to_string(u.customer_type) + ',' + (u.d1 ? '1' : '0') + ',' +
           (u.y0 ? '1' : '0') + ',' + (u.y1 ? '1' : '0') + '\n';
  }
  return out;
}

inline std::string trace_to_csv(std::span<const PacingState> trace) {
  std::string out = "interval,B,e,N,p,guard_skips\n";
  for (const auto& s : trace) {
    out += std::to_string(s.interval_index) + ',' + csv::format_number(s.remaining_budget) + ',' +
           csv::format_number(s.recent_avg_expenditure) + ',' + csv::format_number(s.expected_remaining_auctions) +
           ',' + csv::format_number(s.current_probability) + ',' + std::to_string(s.budget_guard_skips) + '\n';
  }
  return out;
}

namespace detail {

struct ColumnMap {
  std::map<std::string, std::size_t, std::less<>> index;
  std::size_t width = 0;

  std::optional<std::size_t> find(std::string_view name) const {
    const auto it = index.find(name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

inline ColumnMap read_header(csv::LineReader& reader, std::span<const std::string_view> required,
                             std::span<const std::string_view> optional_cols) {
  std::string header;
  if (!reader.next(header)) throw SchemaMismatch("missing header row");
  ColumnMap cols;
  cols.index = csv::header_index(header);
  cols.width = cols.index.size();
  for (auto name : required)
    if (!cols.find(name)) throw SchemaMismatch("missing column '" + std::string(name) + "'");
  for (const auto& [name, _] : cols.index) {
    const bool known = std::find(required.begin(), required.end(), name) != required.end() ||
                       std::find(optional_cols.begin(), optional_cols.end(), name) != optional_cols.end();
    if (!known) throw SchemaMismatch("unexpected column '" + name + "'");
  }
  return cols;
}

class RowParser {
 public:
  RowParser(const ColumnMap& cols, std::vector<std::string_view> fields, std::size_t line)
      : cols_(cols), fields_(std::move(fields)), line_(line) {
    if (fields_.size() != cols_.width)
      throw ParseError(line_, "expected " + std::to_string(cols_.width) + " fields, found " +
                                  std::to_string(fields_.size()));
  }

  bool has(std::string_view name) const { return cols_.find(name).has_value(); }
  std::string_view raw(std::string_view name) const { return fields_[*cols_.find(name)]; }

  double number(std::string_view name) const {
    const auto v = csv::parse_double(raw(name));
    if (!v) throw ParseError(line_, "column '" + std::string(name) + "' is not a number");
    return *v;
  }
  std::optional<double> optional_number(std::string_view name) const {
    if (!has(name) || raw(name).empty()) return std::nullopt;
    return number(name);
  }
  std::int64_t integer(std::string_view name) const {
    const auto v = csv::parse_int(raw(name));
    if (!v) throw ParseError(line_, "column '" + std::string(name) + "' is not an integer");
    return *v;
  }
  bool binary(std::string_view name) const {
    const auto v = csv::parse_binary(raw(name));
    if (!v) throw ParseError(line_, "column '" + std::string(name) + "' must be 0 or 1");
    return *v;
  }
  std::size_t line() const { return line_; }

 private:
  const ColumnMap& cols_;
  std::vector<std::string_view> fields_;
  std::size_t line_;
};

}  // namespace detail

inline std::vector<AuctionRecord> parse_records(std::istream& in) {
  static constexpr std::string_view required[] = {"unit_id", "interval", "p", "Z", "D", "Y", "E"};
  static constexpr std::string_view optional_cols[] = {"competitor_bid", "weight"};
  csv::LineReader reader(in);
  const auto cols = detail::read_header(reader, required, optional_cols);
  std::vector<AuctionRecord> out;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const detail::RowParser row(cols, csv::split(line), reader.line_number());
    AuctionRecord r;
    r.unit_id = row.integer("unit_id");
    r.interval_index = row.integer("interval");
    r.participation_prob = row.number("p");
    r.participated = row.binary("Z");
    r.exposed = row.binary("D");
    r.outcome = row.number("Y");
    r.expenditure = row.number("E");
    if (auto cb = row.optional_number("competitor_bid")) r.competitor_bid = *cb;
    if (auto w = row.optional_number("weight")) r.weight = *w;
    if (auto bad = record_violation(r); !bad.empty()) throw ParseError(reader.line_number(), bad);
    out.push_back(r);
  }
  return out;
}

inline std::vector<AuctionRecord> read_records_csv(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  return parse_records(in);
}

// ---- logged auctions ----

struct LoggedAuction {
  std::string auction_id;
  double timestamp = 0.0;  // seconds
  std::int64_t hour_bucket = 0;
  bool participated = false;
  std::optional<double> participation_prob;
  bool exposed = false;
  double outcome = 0.0;
  std::vector<std::string> competitor_ids;
  std::vector<double> competitor_bids;
  std::optional<double> focal_bid;
  std::optional<bool> throttled_out;
};

struct LogSchemaOptions {
  char list_delimiter = '|';
  std::size_t max_competitors = 20;
};

inline std::vector<LoggedAuction> parse_log(std::istream& in, const LogSchemaOptions& opts = {}) {
  static constexpr std::string_view required[] = {"auction_id", "timestamp", "hour",           "participated",
                                                  "p",          "exposed",   "outcome",        "competitor_ids",
                                                  "competitor_bids"};
  static constexpr std::string_view optional_cols[] = {"focal_bid", "throttled_out"};
  csv::LineReader reader(in);
  const auto cols = detail::read_header(reader, required, optional_cols);
  std::vector<LoggedAuction> out;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const detail::RowParser row(cols, csv::split(line), reader.line_number());
    const std::size_t ln = reader.line_number();
    LoggedAuction a;
    a.auction_id = std::string(row.raw("auction_id"));
    if (a.auction_id.empty()) throw ParseError(ln, "empty auction_id");
    a.timestamp = row.number("timestamp");
    a.hour_bucket = row.integer("hour");
    a.participated = row.binary("participated");
    a.participation_prob = row.optional_number("p");
    a.exposed = row.binary("exposed");
    a.outcome = row.number("outcome");
    if (!a.participated && a.exposed) throw ParseError(ln, "exposed without participation");
    if (a.participated && !a.participation_prob) throw ParseError(ln, "participated row without p");
    if (a.participation_prob && !(*a.participation_prob > 0.0 && *a.participation_prob < 1.0))
      throw ParseError(ln, "p outside (0,1)");

    const auto ids = row.raw("competitor_ids");
    const auto bids = row.raw("competitor_bids");
    if (!ids.empty())
      for (auto id : csv::split(ids, opts.list_delimiter)) a.competitor_ids.emplace_back(id);
    if (!bids.empty()) {
      for (auto b : csv::split(bids, opts.list_delimiter)) {
        const auto v = csv::parse_double(b);
        if (!v) throw ParseError(ln, "bad competitor bid '" + std::string(b) + "'");
        a.competitor_bids.push_back(*v);
      }
    }
    if (a.competitor_ids.size() != a.competitor_bids.size())
      throw ParseError(ln, "competitor_ids and competitor_bids differ in length");
    if (a.competitor_ids.size() > opts.max_competitors)
      throw ParseError(ln, "more than " + std::to_string(opts.max_competitors) + " competitors");

    a.focal_bid = row.optional_number("focal_bid");
    if (row.has("throttled_out")) {
      if (!row.raw("throttled_out").empty()) a.throttled_out = row.binary("throttled_out");
      if (a.throttled_out.value_or(false) && a.participated)
        throw ParseError(ln, "throttled_out row marked as participated");
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<LoggedAuction> parse_log(const std::filesystem::path& path, const LogSchemaOptions& opts = {}) {
  auto in = csv::open_input(path);
  return parse_log(in, opts);
}

inline std::string log_to_csv(std::span<const LoggedAuction> rows, const LogSchemaOptions& opts = {}) {
  const bool focal = std::any_of(rows.begin(), rows.end(), [](const auto& a) { return a.focal_bid.has_value(); });
  const bool throttled =
      std::any_of(rows.begin(), rows.end(), [](const auto& a) { return a.throttled_out.has_value(); });
  std::string out = "auction_id,timestamp,hour,participated,p,exposed,outcome,competitor_ids,competitor_bids";
  if (focal) out += ",focal_bid";
  if (throttled) out += ",throttled_out";
  out += '\n';
  for (const auto& a : rows) {
    out += a.auction_id + ',' + csv::format_number(a.timestamp) + ',' + std::to_string(a.hour_bucket) + ',' +
           (a.participated ? '1' : '0') + ',' + csv::format_optional(a.participation_prob) + ',' +
           (a.exposed ? '1' : '0') + ',' + csv::format_number(a.outcome) + ',';
    for (std::size_t i = 0; i < a.competitor_ids.size(); ++i)
      out += (i ? std::string(1, opts.list_delimiter) : std::string()) + a.competitor_ids[i];
    out += ',';
    for (std::size_t i = 0; i < a.competitor_bids.size(); ++i)
      out += (i ? std::string(1, opts.list_delimiter) : std::string()) + csv::format_number(a.competitor_bids[i]);
    if (focal) out += ',' + csv::format_optional(a.focal_bid);
    if (throttled) out += ',' + std::string(a.throttled_out ? (*a.throttled_out ? "1" : "0") : "");
    out += '\n';
  }
  return out;
}

// ---- matching ----

struct MatchKey {
  std::int64_t hour_bucket = 0;
  std::vector<std::string> competitor_ids;
  std::vector<double> competitor_bids;

  auto operator<=>(const MatchKey&) const = default;
  bool operator==(const MatchKey&) const = default;

  std::string to_string() const {
    std::string s = "(" + std::to_string(hour_bucket) + ";";
    for (std::size_t i = 0; i < competitor_ids.size(); ++i)
      s += (i ? "|" : "") + competitor_ids[i] + "=" + csv::format_number(competitor_bids[i]);
    return s + ")";
  }
};

// Competitor list sorted by id with the bids permuted alongside.
inline MatchKey canonical_key(const LoggedAuction& a) {
  std::vector<std::size_t> order(a.competitor_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::tie(a.competitor_ids[i], a.competitor_bids[i]) < std::tie(a.competitor_ids[j], a.competitor_bids[j]);
  });
  MatchKey k;
  k.hour_bucket = a.hour_bucket;
  for (auto i : order) {
    k.competitor_ids.push_back(a.competitor_ids[i]);
    k.competitor_bids.push_back(a.competitor_bids[i]);
  }
  return k;
}

struct MatchedSet {
  MatchKey key;
  double participation_prob = 0.5;
  std::vector<LoggedAuction> treated;
  std::vector<LoggedAuction> controls;
  std::vector<double> control_weight;  // one per control, filled by assign_control_weights
};

namespace detail {

inline constexpr double probability_tolerance = 1e-9;

inline double common_probability(const std::vector<LoggedAuction>& treated, const std::string& key) {
  const double p = *treated.front().participation_prob;
  for (const auto& a : treated)
    if (std::abs(*a.participation_prob - p) > probability_tolerance) throw InconsistentProbability(key);
  return p;
}

}  // namespace detail

// Interval of a matched set for reweighting: its hour bucket and probability.
using ReweightInterval = std::pair<std::int64_t, double>;

// Per interval, spreads n_{t,0} = sum over sets of n_{s,1}(1 - p)/p equally
// over every matched control in that interval. Intervals without controls
// get no weights; their keys are returned.
inline std::vector<ReweightInterval> assign_control_weights(std::vector<MatchedSet>& sets) {
  std::map<ReweightInterval, std::pair<double, std::size_t>> totals;  // (n_{t,0}, m)
  for (const auto& s : sets) {
    auto& [n0, m] = totals[{s.key.hour_bucket, s.participation_prob}];
    n0 += static_cast<double>(s.treated.size()) * (1.0 - s.participation_prob) / s.participation_prob;
    m += s.controls.size();
  }
  std::vector<ReweightInterval> empty;
  for (const auto& [k, v] : totals)
    if (v.second == 0) empty.push_back(k);
  for (auto& s : sets) {
    const auto& [n0, m] = totals[{s.key.hour_bucket, s.participation_prob}];
    s.control_weight.assign(s.controls.size(), m > 0 ? n0 / static_cast<double>(m) : 0.0);
  }
  return empty;
}

// Exact-key matching of non-participated rows to participated ones. Keys
// with no participated row are dropped: those auctions may have failed
// targeting rather than been throttled. When the log carries an explicit
// throttled_out column, the labelled rows are used directly and every row
// of an hour bucket shares one set.
inline std::vector<MatchedSet> impute_throttled_controls(std::span<const LoggedAuction> rows) {
  const bool labelled = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& a) {
    return a.participated || a.throttled_out.has_value();
  }) && std::any_of(rows.begin(), rows.end(), [](const auto& a) { return a.throttled_out.has_value(); });

  std::map<MatchKey, MatchedSet> groups;
  for (const auto& a : rows) {
    MatchKey key;
    if (labelled) {
      if (!a.participated && !*a.throttled_out) continue;
      key.hour_bucket = a.hour_bucket;
    } else {
      key = canonical_key(a);
    }
    auto& set = groups[key];
    set.key = key;
    (a.participated ? set.treated : set.controls).push_back(a);
  }

  std::vector<MatchedSet> out;
  for (auto& [key, set] : groups) {
    if (set.treated.empty()) continue;
    set.participation_prob = detail::common_probability(set.treated, key.to_string());
    for (auto& c : set.controls) c.participation_prob = set.participation_prob;
    out.push_back(std::move(set));
  }
  assign_control_weights(out);
  return out;
}

// Rows of matched sets, treated first, in key order.
inline std::vector<LoggedAuction> flatten(std::span<const MatchedSet> sets) {
  std::vector<LoggedAuction> out;
  for (const auto& s : sets) {
    out.insert(out.end(), s.treated.begin(), s.treated.end());
    out.insert(out.end(), s.controls.begin(), s.controls.end());
  }
  return out;
}

struct Reweighted {
  std::vector<AuctionRecord> records;
  std::vector<ReweightInterval> dropped;  // intervals without matched controls
};

// Weighted records for the estimators: treated rows weigh 1, matched
// controls share n_{t,0} within their interval.
inline Reweighted reweight_controls(std::span<const MatchedSet> input) {
  std::vector<MatchedSet> sets(input.begin(), input.end());
  Reweighted out;
  out.dropped = assign_control_weights(sets);
  auto is_dropped = [&](const MatchedSet& s) {
    return std::find(out.dropped.begin(), out.dropped.end(), ReweightInterval{s.key.hour_bucket, s.participation_prob}) !=
           out.dropped.end();
  };
  std::int64_t next_id = 0;
  auto to_record = [&](const LoggedAuction& a, double p, double weight) {
    AuctionRecord r;
    r.unit_id = csv::parse_int(a.auction_id).value_or(next_id);
    ++next_id;
    r.interval_index = a.hour_bucket;
    r.participation_prob = p;
    r.participated = a.participated;
    r.exposed = a.exposed;
    r.outcome = a.outcome;
    if (!a.competitor_bids.empty())
      r.competitor_bid = *std::max_element(a.competitor_bids.begin(), a.competitor_bids.end());
    r.weight = weight;
    return r;
  };
  for (const auto& s : sets) {
    if (is_dropped(s)) continue;
    for (const auto& a : s.treated) out.records.push_back(to_record(a, s.participation_prob, 1.0));
    for (std::size_t i = 0; i < s.controls.size(); ++i)
      out.records.push_back(to_record(s.controls[i], s.participation_prob, s.control_weight[i]));
  }
  return out;
}

// ---- synthetic logs ----

struct LogExportOptions {
  std::int64_t intervals_per_bucket = 1;  // pacing intervals per hour bucket
  double bid_step = 1.0;                  // logged bids are rounded to this grid
  bool throttled_out_column = false;      // log throttle labels directly
};

// Renders a simulated campaign as a platform log. Each customer type has its
// own top competitor, so the competitor key carries the type and a rounded
// highest competing bid. Non-participated rows carry no probability.
inline std::vector<LoggedAuction> export_log(const CampaignRun& run, const CampaignConfig& config,
                                             const LogExportOptions& opts = {}) {
  if (opts.intervals_per_bucket < 1) throw Error(ErrorClass::usage, "intervals_per_bucket must be at least 1");
  if (!(opts.bid_step > 0.0)) throw Error(ErrorClass::usage, "bid_step must be positive");
  std::vector<LoggedAuction> out;
  out.reserve(run.records.size());
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    const auto& r = run.records[i];
    const auto& u = run.potentials[i];
    LoggedAuction a;
    a.auction_id = std::to_string(r.unit_id);
    a.timestamp = u.arrival_time * 60.0;
    a.hour_bucket = r.interval_index / opts.intervals_per_bucket;
    a.participated = r.participated;
    if (r.participated) {
      a.participation_prob = r.participation_prob;
      a.focal_bid = config.bid;
    }
    a.exposed = r.exposed;
    a.outcome = r.outcome;
    a.competitor_ids = {u.customer_type == CustomerType::H ? "comp_h" : "comp_l"};
    a.competitor_bids = {std::round(u.competitor_bid / opts.bid_step) * opts.bid_step};
    if (opts.throttled_out_column) a.throttled_out = !r.participated;
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace throttle_lift
