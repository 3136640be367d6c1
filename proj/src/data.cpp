#include "eta/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "eta/error.hpp"

namespace eta::data {
namespace {

template <class T>
T parse_number(std::string_view s, std::string_view what, std::size_t line_no) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + std::string(what) + " '" +
                     std::string(s) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

bool is_blank(std::string_view s) { return s.find_first_not_of(" \t\r") == s.npos; }

bool looks_like_header(std::string_view s) {
  const auto p = s.find_first_not_of(" \t");
  return p != s.npos && !(std::isdigit(static_cast<unsigned char>(s[p])) || s[p] == '-');
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

LabeledTrip make_trip(Route route, Timestamp departure, std::vector<double> link_times) {
  LabeledTrip trip{std::move(route), departure, std::move(link_times), 0.0};
  if (!trip.link_times.empty()) {
    if (trip.link_times.size() != trip.route.size()) {
      throw LengthMismatch("trip has " + std::to_string(trip.route.size()) + " links but " +
                           std::to_string(trip.link_times.size()) + " link times");
    }
    for (double t : trip.link_times) {
      if (!(t > 0.0) || !std::isfinite(t)) throw NonPositiveLabel("link time must be > 0");
      trip.total_time += t;
    }
  }
  return trip;
}

SlotStats summarize(std::vector<double>& speeds) {
  SlotStats s;
  if (speeds.empty()) return s;
  std::sort(speeds.begin(), speeds.end());
  const std::size_t n = speeds.size();
  s.count = static_cast<std::uint32_t>(n);
  s.min = speeds.front();
  s.max = speeds.back();
  s.median = n % 2 ? speeds[n / 2] : 0.5 * (speeds[n / 2 - 1] + speeds[n / 2]);
  double total = 0.0;
  for (double v : speeds) total += v;
  s.mean = total / static_cast<double>(n);
  return s;
}

SlotStats slot_stats(std::span<const ProbeRecord> records, LinkIndex link, Timestamp slot_start) {
  std::vector<double> speeds;
  for (const ProbeRecord& r : records) {
    if (r.link == link && r.timestamp >= slot_start && r.timestamp < slot_start + kSlotSeconds) {
      speeds.push_back(r.speed);
    }
  }
  return summarize(speeds);
}

ProbeIndex::ProbeIndex(std::span<const ProbeRecord> records, std::size_t link_count)
    : by_link_(link_count), records_(records.size()) {
  for (const ProbeRecord& r : records) {
    if (r.link >= link_count) throw DataError("probe on unknown link index");
    if (!std::isfinite(r.speed) || r.speed < 0.0) {
      throw DataError("probe speed must be finite and non-negative");
    }
    by_link_[r.link].push_back({r.timestamp, r.speed});
  }
  for (auto& obs : by_link_) {
    std::sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.speed < b.speed;
    });
  }
}

std::span<const ProbeIndex::Observation> ProbeIndex::range(LinkIndex link, Timestamp from,
                                                           Timestamp to) const {
  const auto& obs = by_link_.at(link);
  auto by_time = [](const Observation& o, Timestamp t) { return o.timestamp < t; };
  auto lo = std::lower_bound(obs.begin(), obs.end(), from, by_time);
  auto hi = std::lower_bound(lo, obs.end(), to, by_time);
  return {obs.data() + (lo - obs.begin()), static_cast<std::size_t>(hi - lo)};
}

SlotStats ProbeIndex::slot_stats(LinkIndex link, Timestamp slot_start) const {
  std::vector<double> speeds;
  for (const Observation& o : range(link, slot_start, slot_start + kSlotSeconds)) {
    speeds.push_back(o.speed);
  }
  return summarize(speeds);
}

DynamicFeatures dynamic_window(const ProbeIndex& probes, LinkIndex link, Timestamp request_time) {
  DynamicFeatures dyn;
  const Timestamp first = request_time - static_cast<Timestamp>(kWindowSlots) * kSlotSeconds;
  for (std::size_t k = 0; k < kWindowSlots; ++k) {
    dyn[k] = probes.slot_stats(link, first + static_cast<Timestamp>(k) * kSlotSeconds);
  }
  return dyn;
}

std::array<double, kDynamicWidth> flatten_dynamic(const DynamicFeatures& dyn) {
  std::array<double, kDynamicWidth> out{};
  for (std::size_t k = 0; k < kWindowSlots; ++k) {
    double* o = out.data() + k * kStatsPerSlot;
    o[0] = dyn[k].median / 100.0;
    o[1] = dyn[k].max / 100.0;
    o[2] = dyn[k].min / 100.0;
    o[3] = dyn[k].mean / 100.0;
    o[4] = std::log1p(static_cast<double>(dyn[k].count));
  }
  return out;
}

std::size_t slot_of_week(Timestamp t) {
  const Timestamp in_week = ((t % kWeekSeconds) + kWeekSeconds) % kWeekSeconds;
  return static_cast<std::size_t>(in_week / kSlotSeconds);
}

FeatureScaling compute_scaling(const roadnet::RoadNetwork& net) {
  FeatureScaling s;
  const std::size_t n = net.size();
  if (n == 0) return s;
  auto field = [](const roadnet::Link& l, std::size_t f) {
    return f == 0 ? l.length : (f == 1 ? l.width : l.speed_limit);
  };
  for (std::size_t f = 0; f < kStaticNumeric; ++f) {
    double mean = 0.0;
    for (const auto& l : net.links()) mean += field(l, f);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& l : net.links()) var += (field(l, f) - mean) * (field(l, f) - mean);
    var /= static_cast<double>(n);
    s.mean[f] = mean;
    s.stddev[f] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

std::array<double, kStaticNumeric> static_numeric(const roadnet::Link& link,
                                                  const FeatureScaling& scaling) {
  const std::array<double, kStaticNumeric> raw{link.length, link.width, link.speed_limit};
  std::array<double, kStaticNumeric> out{};
  for (std::size_t f = 0; f < kStaticNumeric; ++f) {
    out[f] = (raw[f] - scaling.mean[f]) / scaling.stddev[f];
  }
  return out;
}

std::uint32_t lane_bucket(std::uint32_t lanes) {
  return std::min<std::uint32_t>(std::max<std::uint32_t>(lanes, 1), roadnet::kLaneBuckets) - 1;
}

FeatureTables zero_feature_tables(std::size_t d) {
  return FeatureTables{
      tensor::Tensor({roadnet::kRoadClasses, d}),
      tensor::Tensor({roadnet::kCrossingKinds, d}),
      tensor::Tensor({roadnet::kSignalKinds, d}),
      tensor::Tensor({roadnet::kLaneBuckets, d}),
      tensor::Tensor({kStaticNumeric, d}),
      tensor::Tensor({kDynamicWidth, d}),
      tensor::Tensor({roadnet::kHopCap + 1, d}),
      tensor::Tensor({2, d}),
      tensor::Tensor({kTimeOfWeekSlots, d}),
  };
}

std::vector<double> featurize(const roadnet::Link& link, const DynamicFeatures& dyn,
                              const LinkContext& ctx, const FeatureScaling& scaling,
                              const FeatureTables& tables, FeatureSwitches switches) {
  const std::size_t d = tables.road_class.cols();
  std::vector<double> x(d, 0.0);
  auto add_row = [&](const tensor::Tensor& table, std::size_t row) {
    for (std::size_t j = 0; j < d; ++j) x[j] += table.at(row, j);
  };
  add_row(tables.road_class, link.road_class);
  add_row(tables.crossing, link.crossing_kind);
  add_row(tables.signal, link.signal_kind);
  add_row(tables.lanes, lane_bucket(link.lanes));
  const auto numeric = static_numeric(link, scaling);
  for (std::size_t f = 0; f < kStaticNumeric; ++f)
    for (std::size_t j = 0; j < d; ++j) x[j] += numeric[f] * tables.numeric.at(f, j);
  const auto flat = flatten_dynamic(dyn);
  for (std::size_t f = 0; f < kDynamicWidth; ++f)
    for (std::size_t j = 0; j < d; ++j) x[j] += flat[f] * tables.dynamic.at(f, j);
  if (switches.position_encoding) {
    add_row(tables.position, std::min<std::uint32_t>(ctx.position, roadnet::kHopCap));
  }
  if (switches.route_identifier) add_row(tables.route_flag, ctx.on_route ? 1 : 0);
  add_row(tables.time_of_week, ctx.time_slot);
  return x;
}

std::vector<LabeledTrip> read_trips(std::istream& in, const roadnet::RoadNetwork& net) {
  std::vector<LabeledTrip> trips;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    if (line_no == 1 && looks_like_header(line)) continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 2 || cols.size() > 3) {
      throw ParseError("trips line " + std::to_string(line_no) + ": expected 2 or 3 columns");
    }
    Route route;
    for (auto tok : split(cols[0], ',')) {
      route.push_back(net.index_of(parse_number<roadnet::LinkId>(tok, "link id", line_no)));
    }
    if (auto bad = roadnet::validate_route(net, route)) {
      throw DataError("trips line " + std::to_string(line_no) + ": invalid route at index " +
                      std::to_string(bad->index) + " (" + bad->reason + ")");
    }
    const auto departure = parse_number<Timestamp>(cols[1], "departure", line_no);
    std::vector<double> times;
    if (cols.size() == 3 && !is_blank(cols[2])) {
      for (auto tok : split(cols[2], ',')) times.push_back(parse_number<double>(tok, "time", line_no));
    }
    try {
      trips.push_back(make_trip(std::move(route), departure, std::move(times)));
    } catch (const DataError& e) {
      throw DataError("trips line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trips;
}

void write_trips(std::ostream& out, std::span<const LabeledTrip> trips,
                 const roadnet::RoadNetwork& net) {
  out << "route\tdeparture\tlink_times\n";
  for (const LabeledTrip& t : trips) {
    for (std::size_t k = 0; k < t.route.size(); ++k) {
      if (k) out << ',';
      out << net.link(t.route[k]).id;
    }
    out << '\t' << t.departure << '\t';
    for (std::size_t k = 0; k < t.link_times.size(); ++k) {
      if (k) out << ',';
      out << format_double(t.link_times[k]);
    }
    out << '\n';
  }
}

std::vector<ProbeRecord> read_probes(std::istream& in, const roadnet::RoadNetwork& net) {
  std::vector<ProbeRecord> probes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    if (line_no == 1 && looks_like_header(line)) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 3) {
      throw ParseError("probes line " + std::to_string(line_no) + ": expected 3 columns");
    }
    ProbeRecord r;
    r.link = net.index_of(parse_number<roadnet::LinkId>(cols[0], "link id", line_no));
    r.timestamp = parse_number<Timestamp>(cols[1], "timestamp", line_no);
    r.speed = parse_number<double>(cols[2], "speed", line_no);
    if (!std::isfinite(r.speed) || r.speed < 0.0) {
      throw DataError("probes line " + std::to_string(line_no) + ": speed must be >= 0");
    }
    probes.push_back(r);
  }
  return probes;
}

void write_probes(std::ostream& out, std::span<const ProbeRecord> probes,
                  const roadnet::RoadNetwork& net) {
  out << "link_id,timestamp,speed\n";
  for (const ProbeRecord& r : probes) {
    out << net.link(r.link).id << ',' << r.timestamp << ',' << format_double(r.speed) << '\n';
  }
}

}  // namespace eta::data
