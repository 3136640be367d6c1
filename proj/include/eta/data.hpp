#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "eta/roadnet.hpp"
#include "eta/tensor.hpp"

namespace eta::data {

using roadnet::LinkIndex;
using roadnet::Route;
using Timestamp = std::int64_t;  // seconds since epoch

inline constexpr Timestamp kSlotSeconds = 300;
inline constexpr std::size_t kWindowSlots = 12;
inline constexpr std::size_t kStatsPerSlot = 5;
inline constexpr std::size_t kDynamicWidth = kWindowSlots * kStatsPerSlot;
inline constexpr std::size_t kStaticNumeric = 3;  // length, width, speed_limit
inline constexpr Timestamp kWeekSeconds = 7 * 24 * 3600;
inline constexpr std::size_t kTimeOfWeekSlots = kWeekSeconds / kSlotSeconds;  // 2016

struct ProbeRecord {
  LinkIndex link = 0;
  Timestamp timestamp = 0;
  double speed = 0.0;  // km/h

  friend bool operator==(const ProbeRecord&, const ProbeRecord&) = default;
};

/// Route with departure time and, when labeled, per-link travel times.
/// An empty `link_times` marks an unlabeled request.
struct LabeledTrip {
  Route route;
  Timestamp departure = 0;
  std::vector<double> link_times;  // seconds
  double total_time = 0.0;

  bool labeled() const noexcept { return !link_times.empty(); }
};

/// Builds a labeled trip; total_time is the sum of link_times.
/// Throws NonPositiveLabel / LengthMismatch on bad labels.
LabeledTrip make_trip(Route route, Timestamp departure, std::vector<double> link_times);

struct SlotStats {
  double median = 0.0;
  double max = 0.0;
  double min = 0.0;
  double mean = 0.0;
  std::uint32_t count = 0;

  friend bool operator==(const SlotStats&, const SlotStats&) = default;
};

using DynamicFeatures = std::array<SlotStats, kWindowSlots>;

/// Statistics of a speed sample; all zeros when empty. Reorders `speeds`.
SlotStats summarize(std::vector<double>& speeds);

/// Stats of records on `link` with slot_start <= t < slot_start + 300.
/// Linear scan; see ProbeIndex for repeated queries.
SlotStats slot_stats(std::span<const ProbeRecord> records, LinkIndex link, Timestamp slot_start);

/// Per-link time-sorted probe observations for range queries.
class ProbeIndex {
 public:
  struct Observation {
    Timestamp timestamp;
    double speed;
  };

  ProbeIndex() = default;
  ProbeIndex(std::span<const ProbeRecord> records, std::size_t link_count);

  std::size_t link_count() const noexcept { return by_link_.size(); }
  std::size_t record_count() const noexcept { return records_; }
  /// Observations on `link` with from <= t < to, in time order.
  std::span<const Observation> range(LinkIndex link, Timestamp from, Timestamp to) const;
  SlotStats slot_stats(LinkIndex link, Timestamp slot_start) const;

 private:
  std::vector<std::vector<Observation>> by_link_;
  std::size_t records_ = 0;
};

/// Twelve 300 s slots covering [request_time - 3600, request_time), oldest first.
DynamicFeatures dynamic_window(const ProbeIndex& probes, LinkIndex link, Timestamp request_time);

/// 60 model inputs, slot-major: median, max, min, mean (km/h / 100) and
/// log1p(count).
std::array<double, kDynamicWidth> flatten_dynamic(const DynamicFeatures& dyn);

std::size_t slot_of_week(Timestamp t);

/// Corpus statistics used to standardize static numeric link fields.
struct FeatureScaling {
  std::array<double, kStaticNumeric> mean{};
  std::array<double, kStaticNumeric> stddev{1.0, 1.0, 1.0};
};

FeatureScaling compute_scaling(const roadnet::RoadNetwork& net);
std::array<double, kStaticNumeric> static_numeric(const roadnet::Link& link,
                                                  const FeatureScaling& scaling);
std::uint32_t lane_bucket(std::uint32_t lanes);

/// Learnable feature tables. Row counts are the category cardinalities; all
/// tables have d_model columns. Templated so the same layout can hold tensors,
/// gradients, or tape handles.
template <class T>
struct FeatureTablesOf {
  T road_class;    // [4 x d]
  T crossing;      // [3 x d]
  T signal;        // [3 x d]
  T lanes;         // [4 x d]
  T numeric;       // [3 x d]   standardized numeric fields
  T dynamic;       // [60 x d]
  T position;      // [256 x d] hop buckets 0..255
  T route_flag;    // [2 x d]
  T time_of_week;  // [2016 x d]
};

using FeatureTables = FeatureTablesOf<tensor::Tensor>;

FeatureTables zero_feature_tables(std::size_t d_model);

struct FeatureSwitches {
  bool position_encoding = true;
  bool route_identifier = true;
};

/// Inputs of one link in one request context.
struct LinkContext {
  std::uint32_t position = 0;  // hop bucket from the route origin
  bool on_route = false;
  std::size_t time_slot = 0;   // slot of week of the departure
};

/// x = static(link) + W_dyn * flatten(dyn) + E_pos(position)
///   + E_route(on_route) + E_time(time_slot).
/// Disabled switches drop their summand.
std::vector<double> featurize(const roadnet::Link& link, const DynamicFeatures& dyn,
                              const LinkContext& ctx, const FeatureScaling& scaling,
                              const FeatureTables& tables, FeatureSwitches switches = {});

// Trips file: tab-separated "route<TAB>departure<TAB>link_times", route and
// link_times comma-separated, link ids as in the network file. The third
// column may be absent for unlabeled requests. Optional header line.
std::vector<LabeledTrip> read_trips(std::istream& in, const roadnet::RoadNetwork& net);
void write_trips(std::ostream& out, std::span<const LabeledTrip> trips,
                 const roadnet::RoadNetwork& net);

// Probe file: "link_id,timestamp,speed" per line, optional header line.
std::vector<ProbeRecord> read_probes(std::istream& in, const roadnet::RoadNetwork& net);
void write_probes(std::ostream& out, std::span<const ProbeRecord> probes,
                  const roadnet::RoadNetwork& net);

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace eta::data
