#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eta/data.hpp"
#include "eta/error.hpp"
#include "support.hpp"

using namespace eta;
using namespace eta::data;
using testing::random_tensor;

namespace {

std::vector<ProbeRecord> on_link(LinkIndex l, Timestamp t0, std::vector<double> speeds) {
  std::vector<ProbeRecord> out;
  for (std::size_t i = 0; i < speeds.size(); ++i)
    out.push_back({l, t0 + static_cast<Timestamp>(i), speeds[i]});
  return out;
}

FeatureTables random_tables(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto t = zero_feature_tables(32);
  for (auto* table : {&t.road_class, &t.crossing, &t.signal, &t.lanes, &t.numeric, &t.dynamic,
                      &t.position, &t.route_flag, &t.time_of_week})
    *table = random_tensor(rng, table->shape());
  return t;
}

}  // namespace

TEST_CASE("slot statistics") {
  SUBCASE("singleton") {
    const auto s = slot_stats(on_link(0, 0, {30.0}), 0, 0);
    CHECK(s == SlotStats{30.0, 30.0, 30.0, 30.0, 1});
  }
  SUBCASE("even count median averages the central pair") {
    const auto s = slot_stats(on_link(0, 10, {40.0, 10.0, 30.0, 20.0}), 0, 0);
    std::vector<double> sorted = {10.0, 20.0, 30.0, 40.0};
    const double median = 0.5 * (sorted[1] + sorted[2]);
    CHECK(s.median == median);
    CHECK(s.max == 40.0);
    CHECK(s.min == 10.0);
    CHECK(s.mean == 25.0);
    CHECK(s.count == 4);
  }
  SUBCASE("empty slot") { CHECK(slot_stats({}, 0, 0) == SlotStats{}); }
  SUBCASE("half-open slot and other links excluded") {
    std::vector<ProbeRecord> r = {{0, 299, 10.0}, {0, 300, 50.0}, {1, 100, 70.0}};
    CHECK(slot_stats(r, 0, 0).count == 1);
    CHECK(slot_stats(r, 0, 300).mean == 50.0);
  }
  SUBCASE("permutation invariant and ordered") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 80.0);
    std::vector<ProbeRecord> r;
    for (int i = 0; i < 25; ++i) r.push_back({0, i * 7, u(rng)});
    const auto base = slot_stats(r, 0, 0);
    for (int rep = 0; rep < 5; ++rep) {
      std::shuffle(r.begin(), r.end(), rng);
      CHECK(slot_stats(r, 0, 0) == base);
      CHECK(ProbeIndex(r, 1).slot_stats(0, 0) == base);
    }
    CHECK(base.min <= base.median);
    CHECK(base.median <= base.max);
  }
}

TEST_CASE("dynamic window") {
  SUBCASE("layout and boundary membership") {
    std::vector<ProbeRecord> r = {{0, 3599, 42.0}};
    const ProbeIndex idx(r, 1);
    const auto w = dynamic_window(idx, 0, 3600);
    for (std::size_t s = 0; s < kWindowSlots; ++s) CHECK(w[s].count == (s == 11 ? 1u : 0u));
    CHECK(w[11].mean == 42.0);
  }
  SUBCASE("all empty") {
    const ProbeIndex idx({}, 1);
    for (const auto& s : dynamic_window(idx, 0, 3600)) CHECK(s == SlotStats{});
  }
  SUBCASE("slots partition the hour") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<Timestamp> t(0, 9000);
    std::vector<ProbeRecord> r;
    for (int i = 0; i < 400; ++i) r.push_back({0, t(rng), 30.0});
    const ProbeIndex idx(r, 1);
    const Timestamp req = 7000;
    std::uint32_t total = 0;
    for (const auto& s : dynamic_window(idx, 0, req)) total += s.count;
    const auto inside = std::count_if(r.begin(), r.end(), [&](const ProbeRecord& p) {
      return p.timestamp >= req - 3600 && p.timestamp < req;
    });
    CHECK(total == static_cast<std::uint32_t>(inside));
  }
  SUBCASE("flattening scales speeds and counts") {
    DynamicFeatures dyn{};
    dyn[0] = SlotStats{50.0, 60.0, 40.0, 52.0, 3};
    const auto flat = flatten_dynamic(dyn);
    CHECK(flat[0] == doctest::Approx(0.5));
    CHECK(flat[1] == doctest::Approx(0.6));
    CHECK(flat[4] == doctest::Approx(std::log1p(3.0)));
    CHECK(flat[5] == 0.0);
  }
}

TEST_CASE("featurize") {
  const auto net = testing::chain_network(2);
  const auto& link = net.link(0);
  const auto scaling = compute_scaling(net);
  LinkContext ctx{3, true, 17};

  SUBCASE("zero tables and empty window give the zero vector") {
    const auto x = featurize(link, DynamicFeatures{}, ctx, scaling, zero_feature_tables(32));
    CHECK(std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; }));
    CHECK(x.size() == 32);
  }
  const FeatureTables tables = random_tables(5);
  SUBCASE("route flag flips exactly its own summand") {
    LinkContext off = ctx;
    off.on_route = false;
    const auto on_x = featurize(link, DynamicFeatures{}, ctx, scaling, tables);
    const auto off_x = featurize(link, DynamicFeatures{}, off, scaling, tables);
    for (std::size_t j = 0; j < 32; ++j)
      CHECK(on_x[j] - off_x[j] ==
            doctest::Approx(tables.route_flag.at(1, j) - tables.route_flag.at(0, j)).epsilon(1e-12));
  }
  SUBCASE("doubling the dynamic stats doubles the dynamic summand") {
    DynamicFeatures dyn{};
    for (std::size_t s = 0; s < kWindowSlots; ++s)
      dyn[s] = SlotStats{20.0 + s, 30.0 + s, 10.0 + s, 21.0 + s, 0};
    DynamicFeatures twice = dyn;
    for (auto& s : twice) s = SlotStats{2 * s.median, 2 * s.max, 2 * s.min, 2 * s.mean, 0};
    const auto base = featurize(link, DynamicFeatures{}, ctx, scaling, tables);
    const auto one = featurize(link, dyn, ctx, scaling, tables);
    const auto two = featurize(link, twice, ctx, scaling, tables);
    // Direct matrix-vector oracle for the dynamic projection.
    const auto flat = flatten_dynamic(dyn);
    for (std::size_t j = 0; j < 32; ++j) {
      double proj = 0.0;
      for (std::size_t f = 0; f < kDynamicWidth; ++f) proj += flat[f] * tables.dynamic.at(f, j);
      CHECK(one[j] - base[j] == doctest::Approx(proj).epsilon(1e-10));
      CHECK(two[j] - base[j] == doctest::Approx(2.0 * proj).epsilon(1e-10));
    }
  }
  SUBCASE("summands are recoverable by zeroing the other groups") {
    FeatureTables only_pos = zero_feature_tables(32);
    only_pos.position = tables.position;
    const auto x = featurize(link, DynamicFeatures{}, ctx, scaling, only_pos);
    for (std::size_t j = 0; j < 32; ++j) CHECK(x[j] == tables.position.at(3, j));
    const auto off = featurize(link, DynamicFeatures{}, ctx, scaling, only_pos, {false, true});
    CHECK(std::all_of(off.begin(), off.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("deterministic") {
    CHECK(featurize(link, DynamicFeatures{}, ctx, scaling, tables) ==
          featurize(link, DynamicFeatures{}, ctx, scaling, tables));
  }
}

TEST_CASE("trips") {
  SUBCASE("total is the sum of link times") {
    const auto t = make_trip({0, 1}, 100, {12.5, 7.25});
    CHECK(t.total_time == 19.75);
    CHECK(t.labeled());
  }
  SUBCASE("bad labels are rejected") {
    CHECK_THROWS_AS(make_trip({0, 1}, 0, {1.0}), LengthMismatch);
    CHECK_THROWS_AS(make_trip({0, 1}, 0, {1.0, 0.0}), NonPositiveLabel);
    CHECK_FALSE(make_trip({0}, 0, {}).labeled());
  }
  const auto net = testing::chain_network(3);
  SUBCASE("trip file round trip, optional header and unlabeled rows") {
    std::vector<LabeledTrip> trips = {make_trip({0, 1, 2}, 3600, {10.5, 20.25, 1.0 / 3.0}),
                                      make_trip({1}, 7200, {})};
    std::stringstream buf;
    write_trips(buf, trips, net);
    const auto back = read_trips(buf, net);
    REQUIRE(back.size() == 2);
    CHECK(back[0].route == trips[0].route);
    CHECK(back[0].link_times == trips[0].link_times);
    CHECK_FALSE(back[1].labeled());
    std::stringstream no_header("1,2\t50\t3,4\n");
    CHECK(read_trips(no_header, net).front().total_time == 7.0);
    std::stringstream unknown("1,9\t50\t3,4\n");
    CHECK_THROWS_AS(read_trips(unknown, net), DataError);
  }
  SUBCASE("probe file round trip") {
    std::vector<ProbeRecord> probes = {{0, 10, 33.5}, {2, 20, 0.0}};
    std::stringstream buf;
    write_probes(buf, probes, net);
    CHECK(read_probes(buf, net) == probes);
    std::stringstream negative("1,10,-3\n");
    CHECK_THROWS_AS(read_probes(negative, net), DataError);
  }
}

TEST_CASE("time of week and scaling") {
  CHECK(slot_of_week(0) == 0);
  CHECK(slot_of_week(299) == 0);
  CHECK(slot_of_week(300) == 1);
  CHECK(slot_of_week(kWeekSeconds + 600) == 2);
  CHECK(slot_of_week(-1) == kTimeOfWeekSlots - 1);
  const auto net = testing::chain_network(4);
  const auto s = compute_scaling(net);
  CHECK(s.stddev[0] == 1.0);  // identical lengths: zero spread replaced by 1
  const auto v = static_numeric(net.link(0), s);
  CHECK(v[0] == 0.0);
  CHECK(lane_bucket(1) == 0);
  CHECK(lane_bucket(9) == 3);
}
