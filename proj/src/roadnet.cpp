#include "eta/roadnet.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "eta/error.hpp"

namespace eta::roadnet {
namespace {

const std::vector<LinkIndex> kNoLinks;

void validate_link(const Link& l) {
  const std::string where = "link " + std::to_string(l.id) + ": ";
  if (l.start == l.end) throw DataError(where + "start and end junction coincide");
  if (!(l.length > 0.0) || !std::isfinite(l.length)) throw DataError(where + "length must be > 0");
  if (!(l.width > 0.0) || !std::isfinite(l.width)) throw DataError(where + "width must be > 0");
  if (!(l.speed_limit > 0.0) || !std::isfinite(l.speed_limit)) {
    throw DataError(where + "speed_limit must be > 0");
  }
  if (l.lanes < 1) throw DataError(where + "lanes must be >= 1");
  if (l.road_class >= kRoadClasses) throw DataError(where + "road_class out of range");
  if (l.crossing_kind >= kCrossingKinds) throw DataError(where + "crossing_kind out of range");
  if (l.signal_kind >= kSignalKinds) throw DataError(where + "signal_kind out of range");
}

}  // namespace

RoadNetwork::RoadNetwork(std::vector<Link> links) : links_(std::move(links)) {
  by_id_.reserve(links_.size());
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const Link& l = links_[i];
    validate_link(l);
    if (!by_id_.emplace(l.id, static_cast<LinkIndex>(i)).second) {
      throw DataError("duplicate link id " + std::to_string(l.id));
    }
    leaving_[l.start].push_back(static_cast<LinkIndex>(i));
    entering_[l.end].push_back(static_cast<LinkIndex>(i));
  }
  std::vector<LinkIndex> nbrs;
  for (std::size_t i = 0; i < links_.size(); ++i) {
    nbrs.clear();
    for (JunctionId j : {links_[i].start, links_[i].end}) {
      for (LinkIndex k : leaving(j)) nbrs.push_back(k);
      for (LinkIndex k : entering(j)) nbrs.push_back(k);
    }
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    for (LinkIndex k : nbrs) {
      if (k != i) adjacency_.push_back(k);
    }
    offsets_.push_back(static_cast<std::uint32_t>(adjacency_.size()));
  }
}

std::optional<LinkIndex> RoadNetwork::find(LinkId id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

LinkIndex RoadNetwork::index_of(LinkId id) const {
  if (auto i = find(id)) return *i;
  throw DataError("unknown link id " + std::to_string(id));
}

bool RoadNetwork::adjacent(LinkIndex a, LinkIndex b) const {
  const auto n = neighbors(a);
  return std::binary_search(n.begin(), n.end(), b);
}

std::span<const LinkIndex> RoadNetwork::leaving(JunctionId j) const {
  auto it = leaving_.find(j);
  return it == leaving_.end() ? std::span<const LinkIndex>(kNoLinks) : it->second;
}

std::span<const LinkIndex> RoadNetwork::entering(JunctionId j) const {
  auto it = entering_.find(j);
  return it == entering_.end() ? std::span<const LinkIndex>(kNoLinks) : it->second;
}

Relation classify_first_order(const RoadNetwork& net, LinkIndex target, LinkIndex neighbor) {
  const Link& t = net.link(target);
  const Link& n = net.link(neighbor);
  if (target != neighbor) {
    if (n.start == t.end && n.end == t.start) return Relation::ReverseTwin;
    if (n.end == t.start) return Relation::Upstream;
    if (n.start == t.end) return Relation::Downstream;
    if (n.start == t.start) return Relation::EntryOutflow;
    if (n.end == t.end) return Relation::ExitInflow;
  }
  throw NotAdjacent("links " + std::to_string(t.id) + " and " + std::to_string(n.id) +
                    " share no junction");
}

std::vector<std::uint32_t> hop_distances(const RoadNetwork& net, LinkIndex origin,
                                         std::uint32_t cap) {
  std::vector<std::uint32_t> dist(net.size(), cap);
  if (origin >= net.size()) throw DataError("hop_distances: origin out of range");
  std::deque<LinkIndex> frontier{origin};
  dist[origin] = 0;
  while (!frontier.empty()) {
    const LinkIndex cur = frontier.front();
    frontier.pop_front();
    const std::uint32_t next = dist[cur] + 1;
    if (next >= cap) continue;
    for (LinkIndex n : net.neighbors(cur)) {
      if (dist[n] != cap) continue;
      dist[n] = next;
      frontier.push_back(n);
    }
  }
  // The origin may have been overwritten only if cap == 0.
  if (cap == 0) dist[origin] = 0;
  return dist;
}

std::uint32_t hop_distance(const RoadNetwork& net, LinkIndex origin, LinkIndex target,
                           std::uint32_t cap) {
  if (target >= net.size()) throw DataError("hop_distance: target out of range");
  return hop_distances(net, origin, cap)[target];
}

std::optional<RouteViolation> validate_route(const RoadNetwork& net,
                                             std::span<const LinkIndex> route) {
  if (route.empty()) return RouteViolation{0, "route must contain at least one link"};
  for (std::size_t k = 0; k < route.size(); ++k) {
    if (route[k] >= net.size()) return RouteViolation{k, "unknown link"};
    if (k == 0) continue;
    if (route[k] == route[k - 1]) return RouteViolation{k, "immediate repetition"};
    if (net.link(route[k - 1]).end != net.link(route[k]).start) {
      return RouteViolation{k, "not connected to the previous link"};
    }
  }
  return std::nullopt;
}

RoadNetwork read_network(std::istream& in) {
  std::vector<Link> links;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Link l;
      l.id = j.at("id").get<LinkId>();
      l.start = j.at("start").get<JunctionId>();
      l.end = j.at("end").get<JunctionId>();
      l.length = j.at("length").get<double>();
      l.width = j.at("width").get<double>();
      l.lanes = j.at("lanes").get<std::uint32_t>();
      l.road_class = j.at("road_class").get<std::uint32_t>();
      l.speed_limit = j.at("speed_limit").get<double>();
      l.crossing_kind = j.at("crossing_kind").get<std::uint32_t>();
      l.signal_kind = j.at("signal_kind").get<std::uint32_t>();
      links.push_back(l);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("network line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return RoadNetwork(std::move(links));
}

void write_network(std::ostream& out, const RoadNetwork& net) {
  for (const Link& l : net.links()) {
    nlohmann::ordered_json j;
    j["id"] = l.id;
    j["start"] = l.start;
    j["end"] = l.end;
    j["length"] = l.length;
    j["width"] = l.width;
    j["lanes"] = l.lanes;
    j["road_class"] = l.road_class;
    j["speed_limit"] = l.speed_limit;
    j["crossing_kind"] = l.crossing_kind;
    j["signal_kind"] = l.signal_kind;
    out << j.dump() << '\n';
  }
}

}  // namespace eta::roadnet
