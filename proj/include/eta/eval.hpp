#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eta/data.hpp"
#include "eta/roadnet.hpp"

namespace eta::eval {

inline constexpr double kCongestionSpeed = 10.0;  // km/h, inclusive
inline constexpr double kFreeFlowFraction = 0.6;  // cold-start speed as a share of the limit

struct Metrics {
  double mae = 0.0;   // seconds
  double rmse = 0.0;  // seconds
  double mape = 0.0;  // fraction
  std::size_t count = 0;
};

/// MAE, RMSE and MAPE over paired predictions and labels. Throws
/// LengthMismatch on unequal or empty input and NonPositiveLabel on labels <= 0.
Metrics metrics(std::span<const double> predicted, std::span<const double> labels);

/// Per-(link, slot-of-week) mean travel time over a training corpus.
/// Lookups fall back to the link's mean over all slots, then to
/// length / (0.6 * speed_limit).
class AvgBaseline {
 public:
  AvgBaseline(const roadnet::RoadNetwork& net, std::span<const data::LabeledTrip> train);

  double link_time(roadnet::LinkIndex link, std::size_t slot) const;
  /// Sum of link_time over the route at the departure's slot of week.
  double predict(const roadnet::Route& route, data::Timestamp departure) const;

 private:
  struct Mean {
    double sum = 0.0;
    std::uint32_t count = 0;
  };
  static std::uint64_t key(roadnet::LinkIndex link, std::size_t slot) {
    return (static_cast<std::uint64_t>(link) << 16) | slot;
  }

  const roadnet::RoadNetwork* net_;
  std::unordered_map<std::uint64_t, Mean> by_slot_;
  std::vector<Mean> by_link_;
};

/// A trip is congested when any route link has mean probe speed <= 10 km/h
/// in the 5-minute grid slot containing the departure. Trips without probes
/// in that slot count as normal.
bool congested(const data::LabeledTrip& trip, const data::ProbeIndex& probes);
std::vector<bool> stratify(std::span<const data::LabeledTrip> trips,
                           const data::ProbeIndex& probes);

struct EvalReport {
  std::string model;
  Metrics overall;
  Metrics congested;
  Metrics normal;
};

/// Metrics of total-time predictions, overall and per stratum. Empty strata
/// report count 0 and zero metrics.
EvalReport evaluate(std::string model_name, std::span<const double> predicted,
                    std::span<const data::LabeledTrip> trips, const std::vector<bool>& congested);

/// One JSON line per stratum: model, stratum, count, mae, rmse, mape.
void write_report(std::ostream& out, const EvalReport& report);
/// Aligned human-readable table, MAPE shown in percent.
void print_table(std::ostream& out, std::span<const EvalReport> reports);

}  // namespace eta::eval
