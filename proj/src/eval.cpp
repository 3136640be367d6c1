#include "eta/eval.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "eta/error.hpp"

namespace eta::eval {

Metrics metrics(std::span<const double> predicted, std::span<const double> labels) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw LengthMismatch("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  Metrics m;
  m.count = labels.size();
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(labels[i] > 0.0)) throw NonPositiveLabel("metrics: label must be positive");
    const double e = predicted[i] - labels[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    pct_sum += std::abs(e) / labels[i];
  }
  const double n = static_cast<double>(m.count);
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = pct_sum / n;
  return m;
}

AvgBaseline::AvgBaseline(const roadnet::RoadNetwork& net,
                         std::span<const data::LabeledTrip> train)
    : net_(&net), by_link_(net.size()) {
  if (train.empty()) throw DataError("average baseline needs at least one training trip");
  for (const auto& trip : train) {
    if (!trip.labeled()) continue;
    const std::size_t slot = data::slot_of_week(trip.departure);
    for (std::size_t i = 0; i < trip.route.size(); ++i) {
      const auto link = trip.route[i];
      auto& s = by_slot_[key(link, slot)];
      s.sum += trip.link_times[i];
      ++s.count;
      by_link_[link].sum += trip.link_times[i];
      ++by_link_[link].count;
    }
  }
}

double AvgBaseline::link_time(roadnet::LinkIndex link, std::size_t slot) const {
  if (auto it = by_slot_.find(key(link, slot)); it != by_slot_.end())
    return it->second.sum / it->second.count;
  const Mean& m = by_link_.at(link);
  if (m.count > 0) return m.sum / m.count;
  const auto& l = net_->link(link);
  return l.length / (kFreeFlowFraction * l.speed_limit / 3.6);
}

double AvgBaseline::predict(const roadnet::Route& route, data::Timestamp departure) const {
  const std::size_t slot = data::slot_of_week(departure);
  double total = 0.0;
  for (auto link : route) total += link_time(link, slot);
  return total;
}

bool congested(const data::LabeledTrip& trip, const data::ProbeIndex& probes) {
  const data::Timestamp start =
      trip.departure - (((trip.departure % data::kSlotSeconds) + data::kSlotSeconds) %
                        data::kSlotSeconds);
  for (auto link : trip.route) {
    const auto s = probes.slot_stats(link, start);
    if (s.count > 0 && s.mean <= kCongestionSpeed) return true;
  }
  return false;
}

std::vector<bool> stratify(std::span<const data::LabeledTrip> trips,
                           const data::ProbeIndex& probes) {
  std::vector<bool> out;
  out.reserve(trips.size());
  for (const auto& t : trips) out.push_back(congested(t, probes));
  return out;
}

EvalReport evaluate(std::string model_name, std::span<const double> predicted,
                    std::span<const data::LabeledTrip> trips, const std::vector<bool>& flags) {
  if (predicted.size() != trips.size() || flags.size() != trips.size())
    throw LengthMismatch("evaluate: predictions, trips and strata differ in length");
  EvalReport r;
  r.model = std::move(model_name);
  std::vector<double> all_p, all_y, c_p, c_y, n_p, n_y;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    all_p.push_back(predicted[i]);
    all_y.push_back(trips[i].total_time);
    (flags[i] ? c_p : n_p).push_back(predicted[i]);
    (flags[i] ? c_y : n_y).push_back(trips[i].total_time);
  }
  if (!all_y.empty()) r.overall = metrics(all_p, all_y);
  if (!c_y.empty()) r.congested = metrics(c_p, c_y);
  if (!n_y.empty()) r.normal = metrics(n_p, n_y);
  return r;
}

void write_report(std::ostream& out, const EvalReport& report) {
  auto line = [&](const char* stratum, const Metrics& m) {
    nlohmann::ordered_json j;
    j["model"] = report.model;
    j["stratum"] = stratum;
    j["count"] = m.count;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    j["mape"] = m.mape;
    out << j.dump() << '\n';
  };
  line("overall", report.overall);
  line("congested", report.congested);
  line("normal", report.normal);
}

void print_table(std::ostream& out, std::span<const EvalReport> reports) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-20s %-10s %7s %10s %10s %9s\n", "model", "stratum", "trips",
                "MAE(s)", "RMSE(s)", "MAPE(%)");
  out << buf;
  for (const auto& r : reports) {
    const std::pair<const char*, const Metrics*> rows[] = {
        {"overall", &r.overall}, {"congested", &r.congested}, {"normal", &r.normal}};
    for (const auto& [name, m] : rows) {
      std::snprintf(buf, sizeof buf, "%-20s %-10s %7zu %10.2f %10.2f %9.2f\n", r.model.c_str(),
                    name, m->count, m->mae, m->rmse, 100.0 * m->mape);
      out << buf;
    }
  }
}

}  // namespace eta::eval
