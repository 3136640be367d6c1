#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "eta/csgraph.hpp"
#include "eta/data.hpp"
#include "eta/model.hpp"
#include "eta/roadnet.hpp"
#include "eta/tensor.hpp"

namespace testing {

using eta::roadnet::JunctionId;
using eta::roadnet::Link;
using eta::roadnet::LinkId;
using eta::tensor::Tensor;

Link make_link(LinkId id, JunctionId start, JunctionId end, double length = 300.0);

/// Links 1..n, link k runs junction k-1 -> k.
eta::roadnet::RoadNetwork chain_network(std::size_t n);

Tensor random_tensor(std::mt19937_64& rng, eta::tensor::Shape shape, double scale = 1.0);

/// Central-difference gradient of f with respect to every element of x.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                        double step = 1e-5);

/// |a - b| / max(|a|, |b|, floor), maximized over elements.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8);

/// Six links around two junction pairs with probes, one labeled trip and a
/// graph with one high-order edge. Small enough for exhaustive checks.
struct ToyWorld {
  eta::roadnet::RoadNetwork net;
  std::vector<eta::data::ProbeRecord> probes;
  eta::data::ProbeIndex index;
  eta::csgraph::CongestionSensitiveGraph graph;
  eta::data::LabeledTrip trip;
  eta::data::FeatureScaling scaling;
};

ToyWorld toy_world();

/// Ten-link chain traversed end to end by `trips` trips one hour apart. Every
/// link has one probe per 5-minute slot at a constant speed, except links
/// `a` and `b`, which share a random slowdown pattern.
struct ChainScenario {
  eta::roadnet::RoadNetwork net;
  std::vector<eta::data::LabeledTrip> trips;
  std::vector<eta::data::ProbeRecord> probes;
};

ChainScenario correlated_chain(std::size_t trips, eta::roadnet::LinkIndex a,
                               eta::roadnet::LinkIndex b, std::uint64_t seed);

/// Parameters with every entry random, so no gradient path is trivially zero.
eta::model::ModelParams dense_random_params(const eta::model::ModelConfig& config,
                                            std::uint64_t seed, double scale = 0.3);

}  // namespace testing
