#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "eta/data.hpp"
#include "eta/roadnet.hpp"

namespace eta::world {

using data::Timestamp;
using roadnet::LinkIndex;

struct WorldConfig {
  std::size_t grid = 8;               // junctions per side
  double free_speed_min = 20.0;       // km/h
  double free_speed_max = 60.0;       // km/h
  double length_min = 200.0;          // meters
  double length_max = 600.0;          // meters
  double event_rate = 0.05;           // congestion events per link per hour
  Timestamp event_duration_min = 1200;  // seconds, rounded to whole slots
  Timestamp event_duration_max = 5400;
  double severity_min = 0.1;          // speed multiplier on the event link
  double severity_max = 0.3;
  double decay = 0.6;                 // per-hop decay of the slowdown
  Timestamp lag = 300;                // seconds per upstream hop, whole slots
  std::size_t propagation_hops = 4;
  std::size_t trips = 6000;
  double span_hours = 24.0;           // departures are spread over this window
  Timestamp warmup = 7200;            // history before the first departure
  std::size_t min_route_links = 2;
  double probe_rate = 3.0;            // mean probes per link per slot
  double probe_noise = 2.0;           // km/h standard deviation
  std::uint64_t seed = 7;

  /// Throws UsageError on an invalid combination.
  void validate() const;
};

/// Reads a JSON object with any subset of the WorldConfig fields. Unknown
/// keys and wrong types raise UsageError.
WorldConfig parse_config(std::istream& in);
void write_config(std::ostream& out, const WorldConfig& config);

/// 4-neighbor grid, two directed links per street; 2*2*n*(n-1) links.
roadnet::RoadNetwork generate_network(const WorldConfig& config);

struct CongestionEvent {
  LinkIndex link = 0;
  Timestamp start = 0;     // slot-aligned
  Timestamp duration = 0;  // whole slots
  double severity = 1.0;
};

/// Speed multiplier of a link `hops` upstream of an event:
/// 1 - (1 - severity) * decay^hops.
double propagation_multiplier(double severity, double decay, std::size_t hops);

/// Piecewise-constant speed per link and 5-minute slot. Times beyond the
/// horizon read the nearest simulated slot.
class SpeedField {
 public:
  SpeedField() = default;
  SpeedField(std::vector<double> free_flow, std::size_t slots);

  std::size_t link_count() const noexcept { return free_flow_.size(); }
  std::size_t slots() const noexcept { return slots_; }
  double free_flow(LinkIndex link) const { return free_flow_.at(link); }
  double speed(LinkIndex link, double time) const;
  double slot_speed(LinkIndex link, std::size_t slot) const {
    return speed_[link * slots_ + slot];
  }

  /// Multiplies the speed of `link` over slots [first, last) by `factor`.
  void apply(LinkIndex link, std::size_t first, std::size_t last, double factor);

 private:
  std::vector<double> free_flow_;
  std::vector<double> speed_;
  std::size_t slots_ = 0;
};

/// Upstream links (T2 chains) of `link` with their hop counts, up to `max_hops`,
/// in breadth-first order; the link itself is hop 0.
std::vector<std::pair<LinkIndex, std::size_t>> upstream_links(const roadnet::RoadNetwork& net,
                                                             LinkIndex link,
                                                             std::size_t max_hops);

struct Simulation {
  SpeedField field;
  std::vector<CongestionEvent> events;
};

/// Draws congestion events over [0, horizon) and realizes their
/// upstream-propagating slowdowns on the speed field.
Simulation simulate(const WorldConfig& config, const roadnet::RoadNetwork& net,
                    const std::vector<double>& free_flow, Timestamp horizon);

/// Applies given events to a fresh field (exposed for tests).
SpeedField realize(const WorldConfig& config, const roadnet::RoadNetwork& net,
                   const std::vector<double>& free_flow, std::size_t slots,
                   const std::vector<CongestionEvent>& events);

/// Link travel times when entering the route at `departure`, each link's speed
/// taken at its entry time.
std::vector<double> traverse(const SpeedField& field, const roadnet::RoadNetwork& net,
                             const roadnet::Route& route, double departure);

struct World {
  roadnet::RoadNetwork net;
  std::vector<double> free_flow;
  Simulation sim;
  std::vector<data::LabeledTrip> trips;  // sorted by departure
  std::vector<data::ProbeRecord> probes; // sorted by link, then time
};

/// Free-flow speed per link, drawn alongside the network.
std::vector<double> free_flow_speeds(const WorldConfig& config, const roadnet::RoadNetwork& net);

std::vector<data::LabeledTrip> sample_trips(const WorldConfig& config,
                                            const roadnet::RoadNetwork& net,
                                            const SpeedField& field);
std::vector<data::ProbeRecord> sample_probes(const WorldConfig& config, const SpeedField& field);

World generate_world(const WorldConfig& config);

/// Writes network.jsonl, trips.tsv, probes.csv and world.json into `dir`.
void write_world(const std::filesystem::path& dir, const World& world, const WorldConfig& config);

}  // namespace eta::world
