#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "throttle_lift/dataio.hpp"
#include "throttle_lift/estimators.hpp"

using namespace throttle_lift;

namespace {

const std::string log_header =
    "auction_id,timestamp,hour,participated,p,exposed,outcome,competitor_ids,competitor_bids\n";

std::vector<LoggedAuction> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_log(in);
}

LoggedAuction logged(std::int64_t hour, bool z, std::optional<double> p, std::vector<std::string> ids,
                     std::vector<double> bids, bool d = false, double y = 0.0) {
  LoggedAuction a;
  static int next = 0;
  a.auction_id = "a" + std::to_string(next++);
  a.hour_bucket = hour;
  a.participated = z;
  a.participation_prob = p;
  a.exposed = d;
  a.outcome = y;
  a.competitor_ids = std::move(ids);
  a.competitor_bids = std::move(bids);
  return a;
}

}  // namespace

TEST_CASE("log parsing") {
  SECTION("header only") { CHECK(parse(log_header).empty()); }

  SECTION("three rows") {
    const auto rows = parse(log_header +
                            "1,10.5,0,1,0.9,1,1,c1|c2,3|4\n"
                            "2,11,0,0,,0,0,c2|c1,4|3\n"
                            "3,12,1,1,0.5,0,0,,\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].participation_prob == 0.9);
    CHECK(rows[0].competitor_ids == std::vector<std::string>{"c1", "c2"});
    CHECK(rows[1].competitor_bids == std::vector<double>{4, 3});
    CHECK_FALSE(rows[1].participation_prob.has_value());
    CHECK(rows[2].competitor_ids.empty());
    CHECK(canonical_key(rows[0]) == canonical_key(rows[1]));
  }

  SECTION("row violations carry the line number") {
    try {
      parse(log_header + "1,0,0,1,0.9,1,1,c1,3\n2,0,0,0,,1,0,c1,3\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse(log_header + "1,0,0,1,,0,0,c1,3\n"), ParseError);
    CHECK_THROWS_AS(parse(log_header + "1,0,0,1,1.0,0,0,c1,3\n"), ParseError);
    CHECK_THROWS_AS(parse(log_header + "1,0,0,1,0.5,0,0,c1|c2,3\n"), ParseError);
    CHECK_THROWS_AS(parse(log_header + "1,0,0,1,0.5,0,0,c1\n"), ParseError);
  }

  SECTION("too many competitors") {
    std::string ids, bids;
    for (int i = 0; i < 21; ++i) {
      ids += (i ? "|c" : "c") + std::to_string(i);
      bids += (i ? "|" : "") + std::to_string(i);
    }
    CHECK_THROWS_AS(parse(log_header + "1,0,0,1,0.5,0,0," + ids + "," + bids + "\n"), ParseError);
  }

  SECTION("schema mismatches") {
    CHECK_THROWS_AS(parse("auction_id,timestamp\n"), SchemaMismatch);
    CHECK_THROWS_AS(parse(""), SchemaMismatch);
    CHECK_THROWS_AS(parse("auction_id,timestamp,hour,participated,p,exposed,outcome,competitor_ids,competitor_bids,x\n"),
                    SchemaMismatch);
  }

  SECTION("round trip through CSV") {
    const auto rows = parse(log_header + "1,10.5,0,1,0.9,1,1,c1|c2,3|4\n2,11,0,0,,0,0,c2,4\n");
    const auto again = parse(log_to_csv(rows));
    REQUIRE(again.size() == 2);
    CHECK(again[0].competitor_bids == rows[0].competitor_bids);
    CHECK(log_to_csv(again) == log_to_csv(rows));
  }
}

TEST_CASE("matching throttled controls") {
  SECTION("two treated and three controls share a key") {
    std::vector<LoggedAuction> rows{logged(0, true, 0.6, {"x", "y"}, {1, 2}), logged(0, true, 0.6, {"y", "x"}, {2, 1}),
                                    logged(0, false, {}, {"x", "y"}, {1, 2}), logged(0, false, {}, {"x", "y"}, {1, 2}),
                                    logged(0, false, {}, {"y", "x"}, {2, 1})};
    const auto sets = impute_throttled_controls(rows);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].treated.size() == 2);
    CHECK(sets[0].controls.size() == 3);
    CHECK(sets[0].participation_prob == 0.6);
    for (const auto& c : sets[0].controls) CHECK(c.participation_prob == 0.6);
  }

  SECTION("keys without a participated row are dropped") {
    std::vector<LoggedAuction> rows{logged(0, true, 0.6, {"x"}, {1}), logged(0, false, {}, {"x"}, {2}),
                                    logged(1, false, {}, {"x"}, {1})};
    const auto sets = impute_throttled_controls(rows);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].controls.empty());
  }

  SECTION("disagreeing probabilities within a key") {
    std::vector<LoggedAuction> rows{logged(0, true, 0.6, {"x"}, {1}), logged(0, true, 0.7, {"x"}, {1})};
    CHECK_THROWS_AS(impute_throttled_controls(rows), InconsistentProbability);
    std::vector<LoggedAuction> close{logged(0, true, 0.6, {"x"}, {1}), logged(0, true, 0.6 + 1e-12, {"x"}, {1})};
    CHECK_NOTHROW(impute_throttled_controls(close));
  }

  SECTION("matching is idempotent") {
    std::vector<LoggedAuction> rows{logged(0, true, 0.6, {"x"}, {1}), logged(0, false, {}, {"x"}, {1}),
                                    logged(0, false, {}, {"z"}, {1}), logged(2, true, 0.3, {"x"}, {1}),
                                    logged(2, false, {}, {"x"}, {1})};
    const auto once = flatten(impute_throttled_controls(rows));
    const auto twice = flatten(impute_throttled_controls(once));
    REQUIRE(once.size() == 4);
    REQUIRE(twice.size() == once.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i].auction_id == once[i].auction_id);
  }

  SECTION("throttle labels group a whole hour") {
    std::vector<LoggedAuction> rows{logged(0, true, 0.5, {"x"}, {1}), logged(0, false, {}, {"y"}, {9}),
                                    logged(0, false, {}, {"z"}, {3})};
    rows[0].throttled_out = false;
    rows[1].throttled_out = true;
    rows[2].throttled_out = false;  // not throttled: failed targeting
    const auto sets = impute_throttled_controls(rows);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].controls.size() == 1);
    CHECK(sets[0].controls[0].auction_id == rows[1].auction_id);
  }
}

TEST_CASE("control weights") {
  auto make_set = [](std::int64_t hour, double p, std::size_t n1, std::size_t m) {
    MatchedSet s;
    s.key.hour_bucket = hour;
    s.participation_prob = p;
    for (std::size_t i = 0; i < n1; ++i) s.treated.push_back(logged(hour, true, p, {}, {}));
    for (std::size_t i = 0; i < m; ++i) s.controls.push_back(logged(hour, false, {}, {}, {}));
    return s;
  };

  SECTION("ninety treated at 0.9 over five controls") {
    std::vector<MatchedSet> sets{make_set(0, 0.9, 90, 5)};
    CHECK(assign_control_weights(sets).empty());
    for (double w : sets[0].control_weight) CHECK(w == Catch::Approx(2.0));
  }

  SECTION("p = 0.5 with as many controls as treated") {
    std::vector<MatchedSet> sets{make_set(0, 0.5, 7, 7)};
    assign_control_weights(sets);
    for (double w : sets[0].control_weight) CHECK(w == Catch::Approx(1.0));
  }

  SECTION("weights are pooled across the sets of an interval") {
    std::vector<MatchedSet> sets{make_set(0, 0.8, 40, 1), make_set(0, 0.8, 0, 3), make_set(1, 0.8, 4, 1)};
    const auto empty = assign_control_weights(sets);
    CHECK(empty.empty());
    double total = 0;
    for (std::size_t s = 0; s < 2; ++s)
      for (double w : sets[s].control_weight) total += w;
    CHECK(total == Catch::Approx(40 * 0.2 / 0.8).epsilon(1e-9));
    CHECK(sets[2].control_weight[0] == Catch::Approx(1.0));
  }

  SECTION("an interval with no controls is dropped") {
    std::vector<MatchedSet> sets{make_set(0, 0.5, 4, 4), make_set(1, 0.5, 4, 0)};
    const auto res = reweight_controls(sets);
    REQUIRE(res.dropped.size() == 1);
    CHECK(res.dropped[0].first == 1);
    CHECK(res.records.size() == 8);
    for (const auto& r : res.records) CHECK(r.interval_index == 0);
  }
}

TEST_CASE("reweighted synthetic logs") {
  CampaignConfig c;
  c.seed = 13;
  const auto run = run_campaign(c);
  const auto log = export_log(run, c);
  REQUIRE(log.size() == run.records.size());
  const auto res = reweight_controls(impute_throttled_controls(log));

  // Per interval, the weighted controls restore n1 (1 - p) / p.
  std::map<std::int64_t, std::pair<double, double>> per_interval;  // treated count, control weight
  double p_of[400] = {};
  for (const auto& r : res.records) {
    auto& [n1, w0] = per_interval[r.interval_index];
    if (r.participated) n1 += 1;
    else w0 += r.weight;
    p_of[r.interval_index] = r.participation_prob;
  }
  for (const auto& [t, v] : per_interval) {
    const double p = p_of[t];
    REQUIRE(v.second == Catch::Approx(v.first * (1 - p) / p).epsilon(1e-9));
  }

  std::int64_t treated = 0;
  for (const auto& r : run.records) treated += r.participated;
  std::int64_t kept = 0;
  for (const auto& r : res.records) kept += r.participated;
  CHECK(kept == treated - static_cast<std::int64_t>(
                              std::count_if(log.begin(), log.end(), [&](const LoggedAuction& a) {
                                return a.participated && std::any_of(res.dropped.begin(), res.dropped.end(),
                                                                     [&](const auto& d) { return d.first == a.hour_bucket; });
                              })));
  CHECK(std::isfinite(estimate_late(res.records, {std::nullopt, true}).tau_hat));
}

TEST_CASE("labelled synthetic logs keep every control") {
  CampaignConfig c;
  c.seed = 13;
  const auto run = run_campaign(c);
  LogExportOptions opts;
  opts.throttled_out_column = true;
  const auto sets = impute_throttled_controls(export_log(run, c, opts));
  std::size_t controls = 0;
  for (const auto& s : sets) controls += s.controls.size();
  std::size_t expected = 0;
  for (const auto& r : run.records) expected += !r.participated;
  CHECK(controls == expected);
}

TEST_CASE("records CSV round trip") {
  CampaignConfig c;
  c.seed = 2;
  c.arrival_rate_per_day = 500;
  const auto run = run_campaign(c);
  std::istringstream in(records_to_csv(run.records));
  const auto back = parse_records(in);
  REQUIRE(back.size() == run.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].unit_id == run.records[i].unit_id);
    REQUIRE(back[i].participation_prob == run.records[i].participation_prob);
    REQUIRE(back[i].expenditure == run.records[i].expenditure);
    REQUIRE(back[i].competitor_bid == run.records[i].competitor_bid);
    REQUIRE(back[i].exposed == run.records[i].exposed);
  }
  CHECK(records_to_csv(back) == records_to_csv(run.records));

  std::istringstream bad("unit_id,interval,p,Z,D,Y,E\n1,0,0.5,0,1,0,0\n");
  CHECK_THROWS_AS(parse_records(bad), ParseError);
  std::istringstream extra("unit_id,interval,p,Z,D,Y,E,colour\n");
  CHECK_THROWS_AS(parse_records(extra), SchemaMismatch);
  std::istringstream weighted("unit_id,interval,p,Z,D,Y,E,weight\n1,0,0.5,0,0,0,0,2.5\n");
  CHECK(parse_records(weighted).at(0).weight == 2.5);
}
