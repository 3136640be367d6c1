#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace testing {

Link make_link(LinkId id, JunctionId start, JunctionId end, double length) {
  Link l;
  l.id = id;
  l.start = start;
  l.end = end;
  l.length = length;
  l.width = 7.0;
  l.lanes = 2;
  l.road_class = 1;
  l.speed_limit = 50.0;
  return l;
}

eta::roadnet::RoadNetwork chain_network(std::size_t n) {
  std::vector<Link> links;
  for (std::size_t k = 1; k <= n; ++k)
    links.push_back(make_link(static_cast<LinkId>(k), static_cast<JunctionId>(k - 1),
                              static_cast<JunctionId>(k)));
  return eta::roadnet::RoadNetwork(std::move(links));
}

Tensor random_tensor(std::mt19937_64& rng, eta::tensor::Shape shape, double scale) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double step) {
  Tensor g = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

ToyWorld toy_world() {
  using eta::roadnet::Relation;
  // 0 -> 1 -> 2 -> 3 with a reverse twin of the middle link, a side inflow
  // into junction 1 and a side outflow from junction 2.
  std::vector<Link> links = {
      make_link(10, 0, 1, 400.0), make_link(11, 1, 2, 250.0), make_link(12, 2, 3, 500.0),
      make_link(13, 2, 1, 250.0), make_link(14, 4, 1, 350.0), make_link(15, 2, 5, 300.0),
  };
  links[2].road_class = 0;
  links[2].speed_limit = 60.0;
  links[2].lanes = 3;
  links[2].width = 10.5;
  links[4].crossing_kind = 2;
  links[5].signal_kind = 1;
  links[5].lanes = 1;
  links[5].width = 3.5;
  ToyWorld w;
  w.net = eta::roadnet::RoadNetwork(links);

  const eta::data::Timestamp depart = 7 * 3600 + 125;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> speed(15.0, 55.0);
  for (eta::roadnet::LinkIndex l = 0; l < w.net.size(); ++l) {
    for (eta::data::Timestamp t = depart - 3600; t < depart; t += 137)
      w.probes.push_back({l, t, speed(rng)});
  }
  w.index = eta::data::ProbeIndex(w.probes, w.net.size());
  w.graph = eta::csgraph::first_order_graph(w.net);
  w.graph.add_edge(Relation::HighOrder, 0, 2, 1.5);
  w.graph.add_edge(Relation::HighOrder, 2, 0, 1.5);
  w.trip = eta::data::make_trip({0, 1, 2}, depart, {40.0, 25.0, 45.0});
  w.scaling = eta::data::compute_scaling(w.net);
  return w;
}

ChainScenario correlated_chain(std::size_t trips, eta::roadnet::LinkIndex a,
                               eta::roadnet::LinkIndex b, std::uint64_t seed) {
  ChainScenario s;
  s.net = chain_network(10);
  const eta::data::Timestamp first = 7200;
  const eta::data::Timestamp last = first + static_cast<eta::data::Timestamp>(trips - 1) * 3600;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dip(0.0, 25.0);
  std::vector<double> shared;
  for (eta::data::Timestamp t = 0; t < last; t += 300) shared.push_back(dip(rng));
  for (eta::roadnet::LinkIndex l = 0; l < s.net.size(); ++l) {
    for (std::size_t k = 0; k < shared.size(); ++k) {
      const double v = (l == a || l == b) ? 45.0 - shared[k] : 40.0;
      s.probes.push_back({l, static_cast<eta::data::Timestamp>(k) * 300 + 17, v});
    }
  }
  eta::roadnet::Route route(10);
  for (eta::roadnet::LinkIndex l = 0; l < 10; ++l) route[l] = l;
  for (std::size_t t = 0; t < trips; ++t)
    s.trips.push_back(eta::data::make_trip(
        route, first + static_cast<eta::data::Timestamp>(t) * 3600, std::vector<double>(10, 30.0)));
  return s;
}

eta::model::ModelParams dense_random_params(const eta::model::ModelConfig& config,
                                            std::uint64_t seed, double scale) {
  auto p = eta::model::zero_params(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  eta::model::visit_params(
      [&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
      },
      p);
  return p;
}

}  // namespace testing
