#include "eta/csgraph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>

#include "eta/error.hpp"

namespace eta::csgraph {
namespace {

// Travel times are computed from probe speeds; stopped probes are floored to
// this speed so a slot mean stays finite.
constexpr double kMinProbeSpeed = 1.0;  // km/h

struct PairScore {
  LinkIndex link;
  LinkIndex neighbor;
  double score;
};

std::vector<PairScore> score_route(const data::LabeledTrip& trip, const data::ProbeIndex& probes,
                                   const roadnet::RoadNetwork& net, std::size_t min_pairs) {
  const std::size_t m = trip.route.size();
  std::vector<PairScore> out;
  if (m < 3) return out;
  std::vector<TravelTimeSeries> series(m);
  for (std::size_t i = 0; i < m; ++i) {
    series[i] = travel_time_series(probes, net.link(trip.route[i]), trip.route[i], trip.departure);
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j : candidates_from_route(m, i)) {
      const LinkIndex a = trip.route[i], b = trip.route[j];
      if (a == b) continue;
      // A looping route can pair the same links twice; the first
      // co-occurrence counts.
      const bool seen = std::any_of(out.begin(), out.end(), [&](const PairScore& p) {
        return p.link == a && p.neighbor == b;
      });
      if (seen) continue;
      out.push_back({a, b, paired_pearson(series[i], series[j], min_pairs)});
    }
  }
  return out;
}

}  // namespace

TravelTimeSeries travel_time_series(const data::ProbeIndex& probes, const roadnet::Link& link,
                                    LinkIndex index, data::Timestamp reference_time) {
  TravelTimeSeries s;
  const data::Timestamp first =
      reference_time - static_cast<data::Timestamp>(kSeriesSlots) * data::kSlotSeconds;
  for (std::size_t k = 0; k < kSeriesSlots; ++k) {
    const data::Timestamp from = first + static_cast<data::Timestamp>(k) * data::kSlotSeconds;
    const auto obs = probes.range(index, from, from + data::kSlotSeconds);
    if (obs.empty()) continue;
    double total = 0.0;
    for (const auto& o : obs) total += link.length / (std::max(o.speed, kMinProbeSpeed) / 3.6);
    s.values[k] = total / static_cast<double>(obs.size());
    s.present[k] = true;
  }
  return s;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch("pearson: series lengths differ");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  if (*amin == *amax || *bmin == *bmax) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double paired_pearson(const TravelTimeSeries& a, const TravelTimeSeries& b,
                      std::size_t min_pairs) {
  std::vector<double> xa, xb;
  xa.reserve(kSeriesSlots);
  xb.reserve(kSeriesSlots);
  for (std::size_t k = 0; k < kSeriesSlots; ++k) {
    if (a.present[k] && b.present[k]) {
      xa.push_back(a.values[k]);
      xb.push_back(b.values[k]);
    }
  }
  if (xa.size() < std::max<std::size_t>(min_pairs, 2)) return 0.0;
  return pearson(xa, xb);
}

std::vector<std::size_t> candidates_from_route(std::size_t route_length, std::size_t i) {
  std::vector<std::size_t> out;
  for (std::size_t k = 5; k >= 2; --k) {
    if (i >= k) out.push_back(i - k);
  }
  for (std::size_t k = 2; k <= 5; ++k) {
    if (i + k < route_length) out.push_back(i + k);
  }
  return out;
}

MiningResult mine_high_order(std::span<const data::LabeledTrip> trips,
                             const data::ProbeIndex& probes, const roadnet::RoadNetwork& net,
                             const MiningOptions& options) {
  MiningResult result;
  if (options.top_k == 0 || trips.empty()) return result;

  std::vector<std::vector<PairScore>> per_route(trips.size());
  const unsigned workers =
      std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(trips.size())));
  auto work = [&](unsigned w) {
    for (std::size_t r = w; r < trips.size(); r += workers) {
      per_route[r] = score_route(trips[r], probes, net, options.min_paired_slots);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  // Sequential merge in corpus order keeps the floating-point sums stable.
  std::unordered_map<std::uint64_t, std::size_t> slot;
  for (const auto& route_scores : per_route) {
    for (const PairScore& p : route_scores) {
      const std::uint64_t key = (static_cast<std::uint64_t>(p.link) << 32) | p.neighbor;
      auto [it, inserted] = slot.try_emplace(key, result.scores.size());
      if (inserted) result.scores.push_back({p.link, p.neighbor, 0.0, 0});
      CandidateScore& c = result.scores[it->second];
      c.score += p.score;
      c.count += 1;
    }
  }
  std::sort(result.scores.begin(), result.scores.end(), [](const auto& x, const auto& y) {
    return x.link != y.link ? x.link < y.link : x.neighbor < y.neighbor;
  });

  // Per-link selection over the sorted score list.
  std::vector<const CandidateScore*> pool;
  for (std::size_t begin = 0; begin < result.scores.size();) {
    std::size_t end = begin;
    while (end < result.scores.size() && result.scores[end].link == result.scores[begin].link) ++end;
    pool.clear();
    for (std::size_t i = begin; i < end; ++i) {
      const CandidateScore& c = result.scores[i];
      if (c.count < options.min_cooccurrence || !(c.score > 0.0)) continue;
      if (net.adjacent(c.link, c.neighbor)) continue;
      pool.push_back(&c);
    }
    std::sort(pool.begin(), pool.end(), [](const CandidateScore* x, const CandidateScore* y) {
      if (x->score != y->score) return x->score > y->score;
      if (x->count != y->count) return x->count > y->count;
      return x->neighbor < y->neighbor;
    });
    const std::size_t keep = std::min(pool.size(), options.top_k);
    for (std::size_t i = 0; i < keep; ++i) {
      result.edges.push_back({pool[i]->link, pool[i]->neighbor, pool[i]->score});
    }
    begin = end;
  }
  return result;
}

CongestionSensitiveGraph::CongestionSensitiveGraph(std::size_t link_count)
    : link_count_(link_count), scores_(link_count) {
  for (auto& rel : neighbors_) rel.assign(link_count, {});
}

std::span<const LinkIndex> CongestionSensitiveGraph::neighbors(Relation r, LinkIndex link) const {
  return neighbors_[roadnet::relation_slot(r)].at(link);
}

std::size_t CongestionSensitiveGraph::edge_count(Relation r) const {
  std::size_t n = 0;
  for (const auto& list : neighbors_[roadnet::relation_slot(r)]) n += list.size();
  return n;
}

double CongestionSensitiveGraph::high_order_score(LinkIndex link, LinkIndex neighbor) const {
  const auto& list = neighbors_[roadnet::relation_slot(Relation::HighOrder)].at(link);
  auto it = std::lower_bound(list.begin(), list.end(), neighbor);
  if (it == list.end() || *it != neighbor) return 0.0;
  return scores_[link][static_cast<std::size_t>(it - list.begin())];
}

void CongestionSensitiveGraph::add_edge(Relation r, LinkIndex link, LinkIndex neighbor,
                                        double score) {
  if (link >= link_count_ || neighbor >= link_count_) {
    throw DataError("graph edge references an unknown link");
  }
  if (link == neighbor) throw DataError("graph self-edge on link index " + std::to_string(link));
  auto& list = neighbors_[roadnet::relation_slot(r)][link];
  auto it = std::lower_bound(list.begin(), list.end(), neighbor);
  if (it != list.end() && *it == neighbor) throw DataError("duplicate graph edge");
  const auto pos = it - list.begin();
  list.insert(it, neighbor);
  if (r == Relation::HighOrder) scores_[link].insert(scores_[link].begin() + pos, score);
}

CongestionSensitiveGraph CongestionSensitiveGraph::without_high_order() const {
  CongestionSensitiveGraph g = *this;
  for (auto& list : g.neighbors_[roadnet::relation_slot(Relation::HighOrder)]) list.clear();
  for (auto& s : g.scores_) s.clear();
  return g;
}

CongestionSensitiveGraph first_order_graph(const roadnet::RoadNetwork& net) {
  CongestionSensitiveGraph g(net.size());
  for (LinkIndex t = 0; t < net.size(); ++t) {
    for (LinkIndex n : net.neighbors(t)) g.add_edge(roadnet::classify_first_order(net, t, n), t, n);
  }
  return g;
}

CongestionSensitiveGraph build(const roadnet::RoadNetwork& net,
                               std::span<const data::LabeledTrip> trips,
                               const data::ProbeIndex& probes, const MiningOptions& options) {
  CongestionSensitiveGraph g = first_order_graph(net);
  for (const HighOrderEdge& e : mine_high_order(trips, probes, net, options).edges) {
    g.add_edge(Relation::HighOrder, e.link, e.neighbor, e.score);
  }
  return g;
}

void write_graph(std::ostream& out, const CongestionSensitiveGraph& g,
                 const roadnet::RoadNetwork& net) {
  if (g.link_count() != net.size()) throw DataError("graph and network sizes differ");
  out << "CSGRAPH 1 " << g.link_count();
  for (std::size_t s = 0; s < roadnet::kRelationCount; ++s) {
    out << ' ' << g.edge_count(roadnet::relation_from_slot(s));
  }
  out << '\n';
  for (std::size_t s = 0; s < roadnet::kRelationCount; ++s) {
    const Relation r = roadnet::relation_from_slot(s);
    for (LinkIndex l = 0; l < g.link_count(); ++l) {
      for (LinkIndex n : g.neighbors(r, l)) {
        out << (s + 1) << ' ' << net.link(l).id << ' ' << net.link(n).id;
        if (r == Relation::HighOrder) out << ' ' << data::format_double(g.high_order_score(l, n));
        out << '\n';
      }
    }
  }
}

CongestionSensitiveGraph read_graph(std::istream& in, const roadnet::RoadNetwork& net) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("graph file is empty");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::size_t links = 0;
  std::array<std::size_t, roadnet::kRelationCount> counts{};
  header >> magic >> version >> links;
  for (auto& c : counts) header >> c;
  if (!header || magic != "CSGRAPH") throw ParseError("bad graph header");
  if (version != 1) throw ParseError("unsupported graph version " + std::to_string(version));
  if (links != net.size()) throw DataError("graph link count does not match the network");

  CongestionSensitiveGraph g(links);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    int rel = 0;
    roadnet::LinkId a = 0, b = 0;
    double score = 0.0;
    row >> rel >> a >> b;
    if (!row || rel < 1 || rel > 6) {
      throw ParseError("graph line " + std::to_string(line_no) + ": malformed edge");
    }
    if (rel == 6 && !(row >> score)) {
      throw ParseError("graph line " + std::to_string(line_no) + ": missing score");
    }
    g.add_edge(static_cast<Relation>(rel), net.index_of(a), net.index_of(b), score);
  }
  for (std::size_t s = 0; s < roadnet::kRelationCount; ++s) {
    if (g.edge_count(roadnet::relation_from_slot(s)) != counts[s]) {
      throw ParseError("graph relation " + std::to_string(s + 1) + " edge count mismatch");
    }
  }
  return g;
}

}  // namespace eta::csgraph
