#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "eta/data.hpp"
#include "eta/roadnet.hpp"

namespace eta::csgraph {

using roadnet::LinkIndex;
using roadnet::Relation;

inline constexpr std::size_t kSeriesSlots = 24;  // two hours of 5-minute slots

/// Mean link travel time per 5-minute slot over the two hours before a
/// reference time. Slots without probes are flagged absent.
struct TravelTimeSeries {
  std::array<double, kSeriesSlots> values{};
  std::array<bool, kSeriesSlots> present{};
};

TravelTimeSeries travel_time_series(const data::ProbeIndex& probes, const roadnet::Link& link,
                                    LinkIndex index, data::Timestamp reference_time);

/// Sample Pearson correlation of two equal-length series. Returns 0 when
/// either series has zero variance or fewer than two points.
double pearson(std::span<const double> a, std::span<const double> b);

/// Pearson correlation over the slots present in both series; 0 when fewer
/// than `min_pairs` slots remain.
double paired_pearson(const TravelTimeSeries& a, const TravelTimeSeries& b,
                      std::size_t min_pairs = 8);

/// Route positions 2..5 steps before or after position i, ascending.
std::vector<std::size_t> candidates_from_route(std::size_t route_length, std::size_t i);

struct CandidateScore {
  LinkIndex link = 0;
  LinkIndex neighbor = 0;
  double score = 0.0;        // sum of per-route correlations
  std::uint32_t count = 0;   // routes in which the pair co-occurred

  friend bool operator==(const CandidateScore&, const CandidateScore&) = default;
};

struct HighOrderEdge {
  LinkIndex link = 0;      // link whose neighborhood gains the edge
  LinkIndex neighbor = 0;  // selected high-order neighbor
  double score = 0.0;

  friend bool operator==(const HighOrderEdge&, const HighOrderEdge&) = default;
};

struct MiningOptions {
  std::size_t top_k = 5;
  std::uint32_t min_cooccurrence = 2;
  std::size_t min_paired_slots = 8;
  unsigned threads = 1;
};

struct MiningResult {
  std::vector<CandidateScore> scores;  // every accumulated pair, sorted by (link, neighbor)
  std::vector<HighOrderEdge> edges;    // sorted by (link, rank)
};

/// Scores every (link, candidate) co-occurrence of the route corpus by the
/// correlation of their travel-time series in the two hours before each
/// trip's departure, sums per pair, and keeps for each link the top-K
/// positively scored neighbors that are not junction-adjacent. Ties go to the
/// higher co-occurrence count, then the lower neighbor index.
MiningResult mine_high_order(std::span<const data::LabeledTrip> trips,
                             const data::ProbeIndex& probes, const roadnet::RoadNetwork& net,
                             const MiningOptions& options = {});

/// Six typed neighbor sets over the link set: relations 1..5 partition the
/// road network edges, relation 6 holds mined high-order edges.
class CongestionSensitiveGraph {
 public:
  CongestionSensitiveGraph() = default;
  explicit CongestionSensitiveGraph(std::size_t link_count);

  std::size_t link_count() const noexcept { return link_count_; }
  std::span<const LinkIndex> neighbors(Relation r, LinkIndex link) const;
  std::size_t edge_count(Relation r) const;
  /// Score of a high-order edge, 0 if absent.
  double high_order_score(LinkIndex link, LinkIndex neighbor) const;

  /// Adds `neighbor` to the relation-r neighborhood of `link`. Lists are kept
  /// sorted; duplicates are rejected with DataError.
  void add_edge(Relation r, LinkIndex link, LinkIndex neighbor, double score = 0.0);

  /// Copy with relation 6 emptied.
  CongestionSensitiveGraph without_high_order() const;

  friend bool operator==(const CongestionSensitiveGraph&,
                         const CongestionSensitiveGraph&) = default;

 private:
  std::size_t link_count_ = 0;
  // [relation][link] -> sorted neighbor list
  std::array<std::vector<std::vector<LinkIndex>>, roadnet::kRelationCount> neighbors_;
  // high-order scores aligned with neighbors_[5][link]
  std::vector<std::vector<double>> scores_;
};

/// First-order relations from the road network only.
CongestionSensitiveGraph first_order_graph(const roadnet::RoadNetwork& net);

/// First-order relations plus mined high-order edges.
CongestionSensitiveGraph build(const roadnet::RoadNetwork& net,
                               std::span<const data::LabeledTrip> trips,
                               const data::ProbeIndex& probes, const MiningOptions& options = {});

/// Graph file:
///   "CSGRAPH 1 <links> <e1> <e2> <e3> <e4> <e5> <e6>"
///   then one edge per line: "<relation> <link id> <neighbor id>", with the
///   accumulated score appended for relation 6. Sorted by relation, link,
///   neighbor.
void write_graph(std::ostream& out, const CongestionSensitiveGraph& g,
                 const roadnet::RoadNetwork& net);
CongestionSensitiveGraph read_graph(std::istream& in, const roadnet::RoadNetwork& net);

}  // namespace eta::csgraph
