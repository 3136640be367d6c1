#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace eta::roadnet {

using LinkId = std::int64_t;      // external identifier, as stored in files
using LinkIndex = std::uint32_t;  // dense position inside a RoadNetwork
using JunctionId = std::int64_t;

inline constexpr std::uint32_t kRoadClasses = 4;
inline constexpr std::uint32_t kCrossingKinds = 3;
inline constexpr std::uint32_t kSignalKinds = 3;
inline constexpr std::uint32_t kLaneBuckets = 4;  // 1, 2, 3, 4+
inline constexpr std::uint32_t kHopCap = 255;

struct Link {
  LinkId id = 0;
  JunctionId start = 0;
  JunctionId end = 0;
  double length = 0.0;       // meters
  double width = 0.0;        // meters
  std::uint32_t lanes = 1;
  std::uint32_t road_class = 0;
  double speed_limit = 0.0;  // km/h
  std::uint32_t crossing_kind = 0;
  std::uint32_t signal_kind = 0;

  friend bool operator==(const Link&, const Link&) = default;
};

/// Neighbor relation of a junction-sharing link pair, seen from the target
/// link t = (u -> v). Values 1..5 double as relation ids of the
/// congestion-sensitive graph; id 6 is reserved for mined high-order edges.
enum class Relation : std::uint8_t {
  EntryOutflow = 1,  // neighbor also starts at u
  Upstream = 2,      // neighbor ends at u
  Downstream = 3,    // neighbor starts at v
  ExitInflow = 4,    // neighbor also ends at v
  ReverseTwin = 5,   // neighbor is v -> u
  HighOrder = 6,
};

inline constexpr std::size_t kRelationCount = 6;
inline constexpr std::size_t kFirstOrderRelations = 5;

constexpr std::size_t relation_slot(Relation r) { return static_cast<std::size_t>(r) - 1; }
constexpr Relation relation_from_slot(std::size_t slot) {
  return static_cast<Relation>(slot + 1);
}

/// Directed road network. Edges are all ordered pairs of distinct links that
/// share at least one junction; they are derived, never stored.
/// Immutable after construction.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  /// Validates every link and builds junction incidence. Throws DataError.
  explicit RoadNetwork(std::vector<Link> links);

  std::size_t size() const noexcept { return links_.size(); }
  const Link& link(LinkIndex i) const { return links_[i]; }
  std::span<const Link> links() const noexcept { return links_; }

  std::optional<LinkIndex> find(LinkId id) const;
  /// Throws DataError for unknown ids.
  LinkIndex index_of(LinkId id) const;

  /// Junction-sharing links of `i`, ascending, excluding `i`.
  std::span<const LinkIndex> neighbors(LinkIndex i) const {
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  bool adjacent(LinkIndex a, LinkIndex b) const;
  /// Number of ordered edges.
  std::size_t edge_count() const noexcept { return adjacency_.size(); }

  std::span<const LinkIndex> leaving(JunctionId j) const;
  std::span<const LinkIndex> entering(JunctionId j) const;

 private:
  std::vector<Link> links_;
  std::unordered_map<LinkId, LinkIndex> by_id_;
  std::unordered_map<JunctionId, std::vector<LinkIndex>> leaving_;
  std::unordered_map<JunctionId, std::vector<LinkIndex>> entering_;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<LinkIndex> adjacency_;
};

/// Route as dense link indices into a RoadNetwork.
using Route = std::vector<LinkIndex>;

/// Throws NotAdjacent when the two links share no junction.
Relation classify_first_order(const RoadNetwork& net, LinkIndex target, LinkIndex neighbor);

/// Shortest edge-path length from origin to target, clipped at `cap`;
/// unreachable targets map to `cap`.
std::uint32_t hop_distance(const RoadNetwork& net, LinkIndex origin, LinkIndex target,
                           std::uint32_t cap = kHopCap);

/// hop_distance from `origin` to every link in one breadth-first sweep.
std::vector<std::uint32_t> hop_distances(const RoadNetwork& net, LinkIndex origin,
                                         std::uint32_t cap = kHopCap);

struct RouteViolation {
  std::size_t index = 0;
  std::string reason;
};

/// Empty result when the route is a non-empty, junction-connected sequence
/// without immediate repeats.
std::optional<RouteViolation> validate_route(const RoadNetwork& net, std::span<const LinkIndex> route);

/// One JSON object per line with fields id, start, end, length, width,
/// lanes, road_class, speed_limit, crossing_kind, signal_kind. Extra fields
/// (e.g. geometry) are ignored on read.
RoadNetwork read_network(std::istream& in);
void write_network(std::ostream& out, const RoadNetwork& net);

}  // namespace eta::roadnet
