#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "eta/csgraph.hpp"
#include "eta/data.hpp"
#include "eta/model.hpp"
#include "eta/roadnet.hpp"

namespace eta::train {

using model::ModelParams;

struct TrainConfig {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double huber_delta = 30.0;  // seconds
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  model::AblationFlags flags;
  model::ModelConfig model;
  unsigned threads = 1;

  /// Throws UsageError on invalid values.
  void validate() const;
};

/// Outputs and labels of one trip, for value-level loss evaluation.
struct TripOutcome {
  std::vector<double> predicted_links;
  std::vector<double> label_links;
  double predicted_total = 0.0;
  double label_total = 0.0;
};

double huber(double predicted, double label, double delta);
/// |predicted - label| / label. Throws NonPositiveLabel for label <= 0.
double ape(double predicted, double label);
/// Batch mean over trips of (mean link Huber + route APE).
double total_loss(std::span<const TripOutcome> batch, double delta);

/// Differentiable per-trip loss: mean link Huber plus route APE.
tensor::Var trip_loss(const model::LinkTimes& out, const data::LabeledTrip& trip, double delta);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

/// One bias-corrected Adam update, elementwise over every parameter.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config);

/// Everything fit() reads. Trips must be labeled.
struct Dataset {
  const roadnet::RoadNetwork* net = nullptr;
  const csgraph::CongestionSensitiveGraph* graph = nullptr;
  const data::ProbeIndex* probes = nullptr;
  std::span<const data::LabeledTrip> train;
  std::span<const data::LabeledTrip> validation;
};

struct Example {
  model::RouteSubgraph subgraph;
  const data::LabeledTrip* trip = nullptr;
};

std::vector<Example> prepare_examples(const Dataset& data, std::span<const data::LabeledTrip> trips,
                                      const data::FeatureScaling& scaling, bool include_high_order);

struct EpochLog {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;  // mean per-trip loss over the epoch
  std::optional<double> val_mae, val_rmse, val_mape;
};

struct FitResult {
  model::Model model;
  std::vector<EpochLog> log;
};

/// Per-example gradient of the trip loss with respect to every parameter,
/// scaled by `weight`, accumulated into `grads`. Returns the unscaled loss.
double accumulate_gradient(const model::Model& m, const Example& ex, double delta, double weight,
                           ModelParams& grads);

/// Trains from a seeded initialization. Deterministic for a given config and
/// data regardless of `threads`. Writes one JSON line per epoch to `log` if
/// given. Throws NonFiniteLoss naming the step that diverged.
FitResult fit(const Dataset& data, const TrainConfig& config, std::ostream* log = nullptr);

/// Mean link travel time of the training corpus divided by ln 2, so an
/// untrained head (softplus(0) = ln 2) starts at the corpus mean.
double default_output_scale(std::span<const data::LabeledTrip> trips);

void write_log_line(std::ostream& out, const EpochLog& entry);

}  // namespace eta::train
