#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "eta/csgraph.hpp"
#include "eta/error.hpp"
#include "eta/world.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace eta;
using namespace eta::csgraph;
using roadnet::Relation;

TEST_CASE("pearson") {
  std::vector<double> a(24);
  for (int i = 0; i < 24; ++i) a[i] = i + 1.0;
  SUBCASE("self correlation") { CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15)); }
  SUBCASE("anti correlation") {
    std::vector<double> b(24);
    for (int i = 0; i < 24; ++i) b[i] = 7.0 - a[i];
    CHECK(pearson(a, b) == doctest::Approx(-1.0).epsilon(1e-15));
  }
  SUBCASE("zero variance maps to zero") {
    const std::vector<double> flat(24, 1.0);
    CHECK(pearson(a, flat) == 0.0);
  }
  SUBCASE("one swapped pair matches the textbook formula") {
    auto b = a;
    std::swap(b[0], b[23]);
    CHECK(std::abs(pearson(a, b) - oracle::pearson(a, b)) < 1e-12);
  }
  SUBCASE("symmetric, shift and positive scale invariant") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 50; ++rep) {
      const auto x = testing::random_tensor(rng, {24});
      const auto y = testing::random_tensor(rng, {24});
      std::vector<double> xs(x.values().begin(), x.values().end());
      std::vector<double> ys(y.values().begin(), y.values().end());
      const double r = pearson(xs, ys);
      CHECK(pearson(ys, xs) == doctest::Approx(r).epsilon(1e-13));
      for (auto& v : xs) v = 3.5 * v + 11.0;
      CHECK(pearson(xs, ys) == doctest::Approx(r).epsilon(1e-12));
    }
  }
  SUBCASE("paired slots") {
    TravelTimeSeries s, t;
    for (std::size_t k = 0; k < kSeriesSlots; ++k) {
      s.values[k] = static_cast<double>(k);
      t.values[k] = static_cast<double>(k * k);
      s.present[k] = true;
      t.present[k] = k % 3 == 0;  // 8 shared slots
    }
    std::vector<double> xa, xb;
    for (std::size_t k = 0; k < kSeriesSlots; k += 3) {
      xa.push_back(s.values[k]);
      xb.push_back(t.values[k]);
    }
    CHECK(paired_pearson(s, t) == doctest::Approx(oracle::pearson(xa, xb)).epsilon(1e-12));
    t.present[0] = false;  // 7 shared slots
    CHECK(paired_pearson(s, t) == 0.0);
  }
}

TEST_CASE("candidates from a route") {
  CHECK(candidates_from_route(11, 5) == std::vector<std::size_t>{0, 1, 2, 3, 7, 8, 9, 10});
  CHECK(candidates_from_route(3, 0) == std::vector<std::size_t>{2});
  CHECK(candidates_from_route(1, 0).empty());
}

TEST_CASE("mining") {
  SUBCASE("single route with one injected pair") {
    const auto s = testing::correlated_chain(1, 1, 4, 5);
    const data::ProbeIndex idx(s.probes, s.net.size());
    MiningOptions opt;
    opt.min_cooccurrence = 1;
    const auto r = mine_high_order(s.trips, idx, s.net, opt);
    REQUIRE(r.edges.size() == 2);
    CHECK(r.edges[0].link == 1);
    CHECK(r.edges[0].neighbor == 4);
    CHECK(r.edges[1].link == 4);
    CHECK(r.edges[1].neighbor == 1);
    for (const auto& c : r.scores) {
      const bool injected = (c.link == 1 && c.neighbor == 4) || (c.link == 4 && c.neighbor == 1);
      if (!injected) CHECK(c.score == 0.0);
    }
    // Brute-force scores of every candidate pair.
    const auto brute = oracle::mine_scores(s.trips, s.probes, s.net);
    REQUIRE(brute.size() == r.scores.size());
    for (const auto& c : r.scores) {
      const auto& o = brute.at({c.link, c.neighbor});
      CHECK(std::abs(o.score - c.score) < 1e-10);
      CHECK(o.count == c.count);
    }
  }
  SUBCASE("single observation is dropped under the default support threshold") {
    const auto s = testing::correlated_chain(1, 1, 4, 5);
    const data::ProbeIndex idx(s.probes, s.net.size());
    CHECK(mine_high_order(s.trips, idx, s.net).edges.empty());
  }
  SUBCASE("K = 0 gives no edges") {
    const auto s = testing::correlated_chain(3, 1, 4, 5);
    const data::ProbeIndex idx(s.probes, s.net.size());
    MiningOptions opt;
    opt.top_k = 0;
    CHECK(mine_high_order(s.trips, idx, s.net, opt).edges.empty());
  }
  SUBCASE("junction-adjacent candidates are excluded") {
    // Loop 0->1->2->3->0: route positions 0 and 3 are three apart yet share
    // junction 0.
    std::vector<roadnet::Link> links = {
        testing::make_link(1, 0, 1), testing::make_link(2, 1, 2), testing::make_link(3, 2, 3),
        testing::make_link(4, 3, 0), testing::make_link(5, 0, 5)};
    const roadnet::RoadNetwork net(links);
    std::vector<data::ProbeRecord> probes;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(5.0, 50.0);
    for (int k = 0; k < 24; ++k) {
      const double v = u(rng);
      for (roadnet::LinkIndex l = 0; l < net.size(); ++l)
        probes.push_back({l, k * 300 + 5, v + l});  // all perfectly correlated
    }
    const data::ProbeIndex idx(probes, net.size());
    const std::vector<data::LabeledTrip> trips(
        2, data::make_trip({0, 1, 2, 3, 4}, 7200, std::vector<double>(5, 10.0)));
    const auto r = mine_high_order(trips, idx, net);
    bool saw_adjacent_candidate = false;
    for (const auto& c : r.scores)
      saw_adjacent_candidate |= net.adjacent(c.link, c.neighbor) && c.score > 0.0;
    CHECK(saw_adjacent_candidate);
    for (const auto& e : r.edges) CHECK_FALSE(net.adjacent(e.link, e.neighbor));
    CHECK_FALSE(r.edges.empty());
  }
}

TEST_CASE("graph construction") {
  SUBCASE("empty probes leave relation 6 empty") {
    const auto s = testing::correlated_chain(3, 1, 4, 5);
    const data::ProbeIndex empty({}, s.net.size());
    const auto g = build(s.net, s.trips, empty);
    CHECK(g.edge_count(Relation::HighOrder) == 0);
    CHECK(g == first_order_graph(s.net));
  }
  SUBCASE("two-link network") {
    const auto net = testing::chain_network(2);
    const auto g = first_order_graph(net);
    CHECK(g.neighbors(Relation::Downstream, 0).size() == 1);
    CHECK(g.neighbors(Relation::Upstream, 1).size() == 1);
    CHECK(g.edge_count(Relation::HighOrder) == 0);
    std::size_t total = 0;
    for (std::size_t r = 0; r < 5; ++r) total += g.edge_count(roadnet::relation_from_slot(r));
    CHECK(total == net.edge_count());
  }
  SUBCASE("duplicate and self edges are rejected") {
    CongestionSensitiveGraph g(3);
    g.add_edge(Relation::HighOrder, 0, 2, 1.0);
    CHECK_THROWS_AS(g.add_edge(Relation::HighOrder, 0, 2, 1.0), DataError);
    CHECK_THROWS_AS(g.add_edge(Relation::HighOrder, 1, 1, 1.0), DataError);
  }
}

TEST_CASE("mined graph on a synthetic grid") {
  world::WorldConfig cfg;
  cfg.grid = 5;
  cfg.trips = 600;
  cfg.span_hours = 6;
  cfg.seed = 3;
  const auto w = world::generate_world(cfg);
  const data::ProbeIndex idx(w.probes, w.net.size());
  const auto g = build(w.net, w.trips, idx);
  REQUIRE(g.edge_count(Relation::HighOrder) > 0);

  // Route distance of every co-occurring pair, by exhaustive enumeration.
  std::set<std::pair<roadnet::LinkIndex, roadnet::LinkIndex>> within_2_to_5;
  for (const auto& t : w.trips)
    for (std::size_t i = 0; i < t.route.size(); ++i)
      for (std::size_t j = 0; j < t.route.size(); ++j) {
        const auto gap = i > j ? i - j : j - i;
        if (gap >= 2 && gap <= 5) within_2_to_5.insert({t.route[i], t.route[j]});
      }
  for (roadnet::LinkIndex l = 0; l < w.net.size(); ++l) {
    const auto nbrs = g.neighbors(Relation::HighOrder, l);
    CHECK(nbrs.size() <= 5);
    for (auto n : nbrs) {
      CHECK(within_2_to_5.count({l, n}) == 1);
      CHECK_FALSE(w.net.adjacent(l, n));
    }
  }

  SUBCASE("corpus order does not change the selection") {
    auto shuffled = w.trips;
    std::mt19937_64 rng(1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = mine_high_order(w.trips, idx, w.net);
    const auto b = mine_high_order(shuffled, idx, w.net);
    REQUIRE(a.edges.size() == b.edges.size());
    for (std::size_t i = 0; i < a.edges.size(); ++i) {
      CHECK(a.edges[i].link == b.edges[i].link);
      CHECK(a.edges[i].neighbor == b.edges[i].neighbor);
      CHECK(a.edges[i].score == doctest::Approx(b.edges[i].score).epsilon(1e-12));
    }
  }
  SUBCASE("threads do not change the result") {
    MiningOptions opt;
    opt.threads = 3;
    const auto a = mine_high_order(w.trips, idx, w.net);
    const auto b = mine_high_order(w.trips, idx, w.net, opt);
    CHECK(a.edges == b.edges);
    CHECK(a.scores == b.scores);
  }
  SUBCASE("smaller K caps the out-degree") {
    MiningOptions opt;
    opt.top_k = 3;
    const auto g3 = build(w.net, w.trips, idx, opt);
    for (roadnet::LinkIndex l = 0; l < w.net.size(); ++l)
      CHECK(g3.neighbors(Relation::HighOrder, l).size() <= 3);
  }
  SUBCASE("graph file round trip") {
    std::stringstream buf;
    write_graph(buf, g, w.net);
    const auto back = read_graph(buf, w.net);
    CHECK(back.edge_count(Relation::HighOrder) == g.edge_count(Relation::HighOrder));
    for (std::size_t r = 0; r < roadnet::kRelationCount; ++r)
      for (roadnet::LinkIndex l = 0; l < w.net.size(); ++l) {
        const auto rel = roadnet::relation_from_slot(r);
        const auto x = g.neighbors(rel, l), y = back.neighbors(rel, l);
        CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
      }
    std::stringstream bad("CSGRAPH 1 3 0 0 0 0 0 1\n");
    CHECK_THROWS_AS(read_graph(bad, w.net), DataError);
  }
}
