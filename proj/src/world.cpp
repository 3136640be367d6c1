#include "eta/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <random>

#include <json.hpp>

#include "eta/error.hpp"

namespace eta::world {
namespace {

using nlohmann::ordered_json;

// Independent generator per stage so that, e.g., more trips never shift the
// network or the events.
enum class Stream : std::uint64_t { Network = 1, Events = 2, Trips = 3, Probes = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(s) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return std::mt19937_64(z ^ (z >> 31));
}

constexpr double kClassLimits[roadnet::kRoadClasses] = {60.0, 50.0, 40.0, 30.0};

struct DrawnNetwork {
  std::vector<roadnet::Link> links;
  std::vector<double> free_flow;
};

DrawnNetwork draw_network(const WorldConfig& c) {
  c.validate();
  auto rng = stream_rng(c.seed, Stream::Network);
  std::uniform_real_distribution<double> length(c.length_min, c.length_max);
  std::uniform_real_distribution<double> speed(c.free_speed_min, c.free_speed_max);
  std::uniform_int_distribution<std::uint32_t> kind(0, 2);
  std::uniform_int_distribution<std::uint32_t> coin(0, 1);

  DrawnNetwork out;
  const auto n = static_cast<roadnet::JunctionId>(c.grid);
  auto street = [&](roadnet::JunctionId a, roadnet::JunctionId b) {
    const double len = length(rng);
    const std::uint32_t crossing = kind(rng), signal = kind(rng);
    for (int dir = 0; dir < 2; ++dir) {
      const double v = speed(rng);
      roadnet::Link l;
      l.id = static_cast<roadnet::LinkId>(out.links.size() + 1);
      l.start = dir == 0 ? a : b;
      l.end = dir == 0 ? b : a;
      l.length = len;
      // Slowest class whose limit still admits the free-flow speed.
      std::uint32_t cls = roadnet::kRoadClasses - 1;
      while (cls > 0 && kClassLimits[cls] < v) --cls;
      l.road_class = cls;
      l.speed_limit = std::max(kClassLimits[cls], std::ceil(v));
      l.lanes = static_cast<std::uint32_t>(roadnet::kRoadClasses - cls) / 2 + 1 + coin(rng);
      l.width = 3.5 * l.lanes;
      l.crossing_kind = crossing;
      l.signal_kind = signal;
      out.links.push_back(l);
      out.free_flow.push_back(v);
    }
  };
  for (roadnet::JunctionId r = 0; r < n; ++r) {
    for (roadnet::JunctionId col = 0; col < n; ++col) {
      const roadnet::JunctionId j = r * n + col;
      if (col + 1 < n) street(j, j + 1);
      if (r + 1 < n) street(j, j + n);
    }
  }
  return out;
}

std::size_t slot_index(double t) {
  return t <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(t / data::kSlotSeconds));
}

}  // namespace

void WorldConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("world config: " + m); };
  if (grid < 2) fail("grid must be at least 2");
  if (!(free_speed_min > 0.0 && free_speed_min <= free_speed_max)) fail("bad free-flow speed range");
  if (!(length_min > 0.0 && length_min <= length_max)) fail("bad length range");
  if (!(event_rate >= 0.0) || !std::isfinite(event_rate)) fail("event_rate must be >= 0");
  if (event_duration_min <= 0 || event_duration_min > event_duration_max)
    fail("bad event duration range");
  if (!(severity_min > 0.0 && severity_min <= severity_max && severity_max <= 1.0))
    fail("severity range must lie in (0, 1]");
  if (!(decay >= 0.0 && decay < 1.0)) fail("decay must lie in [0, 1)");
  if (lag < 0 || lag % data::kSlotSeconds != 0) fail("lag must be a non-negative multiple of 300");
  if (!(span_hours > 0.0)) fail("span_hours must be positive");
  if (warmup < 0) fail("warmup must be non-negative");
  if (min_route_links < 1) fail("min_route_links must be at least 1");
  if (min_route_links > 2 * (grid - 1)) fail("min_route_links exceeds the grid diameter");
  if (!(probe_rate >= 0.0)) fail("probe_rate must be >= 0");
  if (!(probe_noise >= 0.0)) fail("probe_noise must be >= 0");
}

WorldConfig parse_config(std::istream& in) {
  WorldConfig c;
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("world config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("world config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "grid") c.grid = value.get<std::size_t>();
      else if (key == "free_speed_min") c.free_speed_min = value.get<double>();
      else if (key == "free_speed_max") c.free_speed_max = value.get<double>();
      else if (key == "length_min") c.length_min = value.get<double>();
      else if (key == "length_max") c.length_max = value.get<double>();
      else if (key == "event_rate") c.event_rate = value.get<double>();
      else if (key == "event_duration_min") c.event_duration_min = value.get<Timestamp>();
      else if (key == "event_duration_max") c.event_duration_max = value.get<Timestamp>();
      else if (key == "severity_min") c.severity_min = value.get<double>();
      else if (key == "severity_max") c.severity_max = value.get<double>();
      else if (key == "decay") c.decay = value.get<double>();
      else if (key == "lag") c.lag = value.get<Timestamp>();
      else if (key == "propagation_hops") c.propagation_hops = value.get<std::size_t>();
      else if (key == "trips") c.trips = value.get<std::size_t>();
      else if (key == "span_hours") c.span_hours = value.get<double>();
      else if (key == "warmup") c.warmup = value.get<Timestamp>();
      else if (key == "min_route_links") c.min_route_links = value.get<std::size_t>();
      else if (key == "probe_rate") c.probe_rate = value.get<double>();
      else if (key == "probe_noise") c.probe_noise = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw UsageError("world config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("world config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_config(std::ostream& out, const WorldConfig& c) {
  ordered_json j;
  j["grid"] = c.grid;
  j["free_speed_min"] = c.free_speed_min;
  j["free_speed_max"] = c.free_speed_max;
  j["length_min"] = c.length_min;
  j["length_max"] = c.length_max;
  j["event_rate"] = c.event_rate;
  j["event_duration_min"] = c.event_duration_min;
  j["event_duration_max"] = c.event_duration_max;
  j["severity_min"] = c.severity_min;
  j["severity_max"] = c.severity_max;
  j["decay"] = c.decay;
  j["lag"] = c.lag;
  j["propagation_hops"] = c.propagation_hops;
  j["trips"] = c.trips;
  j["span_hours"] = c.span_hours;
  j["warmup"] = c.warmup;
  j["min_route_links"] = c.min_route_links;
  j["probe_rate"] = c.probe_rate;
  j["probe_noise"] = c.probe_noise;
  j["seed"] = c.seed;
  out << j.dump(2) << '\n';
}

roadnet::RoadNetwork generate_network(const WorldConfig& config) {
  return roadnet::RoadNetwork(draw_network(config).links);
}

std::vector<double> free_flow_speeds(const WorldConfig& config, const roadnet::RoadNetwork& net) {
  auto drawn = draw_network(config);
  if (drawn.free_flow.size() != net.size())
    throw UsageError("network does not match the world config");
  return drawn.free_flow;
}

double propagation_multiplier(double severity, double decay, std::size_t hops) {
  return 1.0 - (1.0 - severity) * std::pow(decay, static_cast<double>(hops));
}

SpeedField::SpeedField(std::vector<double> free_flow, std::size_t slots)
    : free_flow_(std::move(free_flow)), slots_(std::max<std::size_t>(slots, 1)) {
  speed_.resize(free_flow_.size() * slots_);
  for (std::size_t l = 0; l < free_flow_.size(); ++l)
    std::fill_n(speed_.begin() + l * slots_, slots_, free_flow_[l]);
}

double SpeedField::speed(LinkIndex link, double time) const {
  return speed_[link * slots_ + std::min(slot_index(time), slots_ - 1)];
}

void SpeedField::apply(LinkIndex link, std::size_t first, std::size_t last, double factor) {
  last = std::min(last, slots_);
  for (std::size_t s = first; s < last; ++s) speed_[link * slots_ + s] *= factor;
}

std::vector<std::pair<LinkIndex, std::size_t>> upstream_links(const roadnet::RoadNetwork& net,
                                                             LinkIndex link,
                                                             std::size_t max_hops) {
  std::vector<std::pair<LinkIndex, std::size_t>> out{{link, 0}};
  std::vector<bool> seen(net.size(), false);
  seen[link] = true;
  for (std::size_t head = 0; head < out.size(); ++head) {
    const auto [cur, hops] = out[head];
    if (hops == max_hops) continue;
    const auto& l = net.link(cur);
    for (LinkIndex up : net.entering(l.start)) {
      if (seen[up] || net.link(up).start == l.end) continue;  // skip the reverse twin
      seen[up] = true;
      out.emplace_back(up, hops + 1);
    }
  }
  return out;
}

SpeedField realize(const WorldConfig& config, const roadnet::RoadNetwork& net,
                   const std::vector<double>& free_flow, std::size_t slots,
                   const std::vector<CongestionEvent>& events) {
  SpeedField field(free_flow, slots);
  const std::size_t lag_slots = static_cast<std::size_t>(config.lag / data::kSlotSeconds);
  for (const auto& e : events) {
    const std::size_t first = slot_index(static_cast<double>(e.start));
    const std::size_t len = static_cast<std::size_t>(e.duration / data::kSlotSeconds);
    for (const auto& [link, hops] : upstream_links(net, e.link, config.propagation_hops)) {
      const double m = propagation_multiplier(e.severity, config.decay, hops);
      if (m >= 1.0) continue;
      const std::size_t begin = first + hops * lag_slots;
      field.apply(link, begin, begin + len, m);
    }
  }
  return field;
}

Simulation simulate(const WorldConfig& config, const roadnet::RoadNetwork& net,
                    const std::vector<double>& free_flow, Timestamp horizon) {
  config.validate();
  const std::size_t slots = static_cast<std::size_t>((horizon + data::kSlotSeconds - 1) /
                                                     data::kSlotSeconds);
  auto rng = stream_rng(config.seed, Stream::Events);
  std::uniform_real_distribution<double> severity(config.severity_min, config.severity_max);
  const auto dmin = config.event_duration_min / data::kSlotSeconds;
  const auto dmax = std::max(dmin, config.event_duration_max / data::kSlotSeconds);
  std::uniform_int_distribution<Timestamp> duration(std::max<Timestamp>(dmin, 1), std::max<Timestamp>(dmax, 1));
  // Each slot starts an event on a link with probability rate * slot / hour.
  const double p = std::min(1.0, config.event_rate * data::kSlotSeconds / 3600.0);
  std::bernoulli_distribution starts(p);

  Simulation sim;
  for (LinkIndex l = 0; l < net.size(); ++l) {
    for (std::size_t s = 0; s < slots; ++s) {
      if (!starts(rng)) continue;
      CongestionEvent e;
      e.link = l;
      e.start = static_cast<Timestamp>(s) * data::kSlotSeconds;
      e.duration = duration(rng) * data::kSlotSeconds;
      e.severity = severity(rng);
      sim.events.push_back(e);
    }
  }
  sim.field = realize(config, net, free_flow, slots, sim.events);
  return sim;
}

std::vector<double> traverse(const SpeedField& field, const roadnet::RoadNetwork& net,
                             const roadnet::Route& route, double departure) {
  std::vector<double> times;
  times.reserve(route.size());
  double t = departure;
  for (LinkIndex l : route) {
    const double dt = net.link(l).length / (field.speed(l, t) / 3.6);
    times.push_back(dt);
    t += dt;
  }
  return times;
}

std::vector<data::LabeledTrip> sample_trips(const WorldConfig& config,
                                            const roadnet::RoadNetwork& net,
                                            const SpeedField& field) {
  auto rng = stream_rng(config.seed, Stream::Trips);
  const std::size_t junctions = config.grid * config.grid;
  std::uniform_int_distribution<std::size_t> pick(0, junctions - 1);
  const auto span = static_cast<Timestamp>(config.span_hours * 3600.0);
  std::uniform_int_distribution<Timestamp> when(config.warmup, config.warmup + span - 1);

  std::vector<Timestamp> departures(config.trips);
  for (auto& d : departures) d = when(rng);
  std::sort(departures.begin(), departures.end());

  std::vector<data::LabeledTrip> trips;
  trips.reserve(config.trips);
  std::vector<std::size_t> dist(junctions);
  std::vector<LinkIndex> choices;
  for (Timestamp departure : departures) {
    roadnet::Route route;
    while (route.empty()) {
      const auto from = static_cast<roadnet::JunctionId>(pick(rng));
      const auto to = static_cast<roadnet::JunctionId>(pick(rng));
      if (from == to) continue;
      // Hop distance of every junction to the destination.
      std::fill(dist.begin(), dist.end(), SIZE_MAX);
      std::queue<roadnet::JunctionId> q;
      dist[to] = 0;
      q.push(to);
      while (!q.empty()) {
        const auto j = q.front();
        q.pop();
        for (LinkIndex in : net.entering(j)) {
          const auto s = net.link(in).start;
          if (dist[s] == SIZE_MAX) {
            dist[s] = dist[j] + 1;
            q.push(s);
          }
        }
      }
      if (dist[from] == SIZE_MAX || dist[from] < config.min_route_links) continue;
      for (auto j = from; j != to;) {
        choices.clear();
        for (LinkIndex out : net.leaving(j))
          if (dist[net.link(out).end] + 1 == dist[j]) choices.push_back(out);
        std::uniform_int_distribution<std::size_t> c(0, choices.size() - 1);
        const LinkIndex next = choices[c(rng)];
        route.push_back(next);
        j = net.link(next).end;
      }
    }
    auto times = traverse(field, net, route, static_cast<double>(departure));
    trips.push_back(data::make_trip(std::move(route), departure, std::move(times)));
  }
  return trips;
}

std::vector<data::ProbeRecord> sample_probes(const WorldConfig& config, const SpeedField& field) {
  auto rng = stream_rng(config.seed, Stream::Probes);
  std::poisson_distribution<int> count(config.probe_rate);
  std::uniform_int_distribution<Timestamp> offset(0, data::kSlotSeconds - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<data::ProbeRecord> probes;
  std::vector<Timestamp> stamps;
  for (LinkIndex l = 0; l < field.link_count(); ++l) {
    for (std::size_t s = 0; s < field.slots(); ++s) {
      const int n = config.probe_rate > 0.0 ? count(rng) : 0;
      stamps.clear();
      for (int i = 0; i < n; ++i) stamps.push_back(static_cast<Timestamp>(s) * data::kSlotSeconds + offset(rng));
      std::sort(stamps.begin(), stamps.end());
      const double v = field.slot_speed(l, s);
      for (Timestamp t : stamps) {
        double speed = v;
        if (config.probe_noise > 0.0) speed = std::max(0.1, v + config.probe_noise * noise(rng));
        probes.push_back({l, t, speed});
      }
    }
  }
  return probes;
}

World generate_world(const WorldConfig& config) {
  auto drawn = draw_network(config);
  World w{roadnet::RoadNetwork(std::move(drawn.links)), std::move(drawn.free_flow), {}, {}, {}};
  // Leave room for the slowest trip that departs at the end of the span.
  const Timestamp horizon =
      config.warmup + static_cast<Timestamp>(config.span_hours * 3600.0) + 2 * 3600;
  w.sim = simulate(config, w.net, w.free_flow, horizon);
  w.trips = sample_trips(config, w.net, w.sim.field);
  w.probes = sample_probes(config, w.sim.field);
  return w;
}

void write_world(const std::filesystem::path& dir, const World& world, const WorldConfig& config) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("network.jsonl");
    roadnet::write_network(out, world.net);
  }
  {
    auto out = open("trips.tsv");
    data::write_trips(out, world.trips, world.net);
  }
  {
    auto out = open("probes.csv");
    data::write_probes(out, world.probes, world.net);
  }
  {
    auto out = open("world.json");
    write_config(out, config);
  }
}

}  // namespace eta::world
