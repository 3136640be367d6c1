#include "eta/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

#include "eta/error.hpp"
#include "eta/eval.hpp"
#include "eta/ops.hpp"

namespace eta::train {

using tensor::Tensor;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw UsageError("learning rate must be positive");
  if (!(huber_delta > 0.0) || !std::isfinite(huber_delta))
    throw UsageError("huber delta must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw UsageError("adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw UsageError("adam epsilon must be positive");
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  if (threads == 0) throw UsageError("thread count must be at least 1");
}

double huber(double predicted, double label, double delta) {
  return tensor::huber(predicted - label, delta);
}

double ape(double predicted, double label) {
  if (!(label > 0.0)) throw NonPositiveLabel("ape: label must be positive");
  return std::abs(predicted - label) / label;
}

double total_loss(std::span<const TripOutcome> batch, double delta) {
  if (batch.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : batch) {
    if (t.predicted_links.size() != t.label_links.size() || t.label_links.empty())
      throw LengthMismatch("total_loss: link predictions and labels differ in length");
    double link = 0.0;
    for (std::size_t j = 0; j < t.label_links.size(); ++j)
      link += huber(t.predicted_links[j], t.label_links[j], delta);
    sum += link / static_cast<double>(t.label_links.size()) + ape(t.predicted_total, t.label_total);
  }
  return sum / static_cast<double>(batch.size());
}

tensor::Var trip_loss(const model::LinkTimes& out, const data::LabeledTrip& trip, double delta) {
  if (!trip.labeled()) throw DataError("training trip has no link times");
  return tensor::add(tensor::huber_mean(out.per_link, trip.link_times, delta),
                     tensor::ape(out.total, trip.total_time));
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  s.m = params;
  s.v = params;
  model::visit_params(
      [](const std::string&, Tensor& m, Tensor& v) {
        m.fill(0.0);
        v.fill(0.0);
      },
      s.m, s.v);
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double b1 = config.beta1, b2 = config.beta2;
  model::visit_params(
      [&](const std::string&, Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
        double* pd = p.data();
        const double* gd = g.data();
        double* md = m.data();
        double* vd = v.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
          md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
          vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
          const double mh = md[i] / c1;
          const double vh = vd[i] / c2;
          pd[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.epsilon);
        }
      },
      params, grads, state.m, state.v);
}

std::vector<Example> prepare_examples(const Dataset& data, std::span<const data::LabeledTrip> trips,
                                      const data::FeatureScaling& scaling,
                                      bool include_high_order) {
  std::vector<Example> out;
  out.reserve(trips.size());
  for (const auto& trip : trips) {
    out.push_back({model::build_subgraph(*data.net, *data.graph, *data.probes, trip.route,
                                         trip.departure, scaling, include_high_order),
                   &trip});
  }
  return out;
}

double accumulate_gradient(const model::Model& m, const Example& ex, double delta, double weight,
                           ModelParams& grads) {
  tensor::Tape tape;
  model::BoundParams p = model::bind(tape, m.params, &grads);
  model::LinkTimes out = model::forward(p, ex.subgraph, m.manifest);
  tensor::Var loss = trip_loss(out, *ex.trip, delta);
  tape.backward(loss, weight);
  return loss.value()[0];
}

double default_output_scale(std::span<const data::LabeledTrip> trips) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : trips) {
    for (double v : t.link_times) sum += v;
    n += t.link_times.size();
  }
  if (n == 0) return 1.0;
  return sum / static_cast<double>(n) / std::numbers::ln2;
}

void write_log_line(std::ostream& out, const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["step"] = e.step;
  j["loss"] = e.train_loss;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["val_mae"] = opt(e.val_mae);
  j["val_rmse"] = opt(e.val_rmse);
  j["val_mape"] = opt(e.val_mape);
  out << j.dump() << '\n';
}

namespace {

void zero(ModelParams& g) {
  model::visit_params([](const std::string&, Tensor& t) { t.fill(0.0); }, g);
}

void add_into(ModelParams& dst, const ModelParams& src) {
  model::visit_params(
      [](const std::string&, Tensor& d, const Tensor& s) {
        double* dd = d.data();
        const double* sd = s.data();
        for (std::size_t i = 0; i < d.size(); ++i) dd[i] += sd[i];
      },
      dst, src);
}

// Runs job(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure by index.
template <class Job>
void parallel_for(std::size_t n, unsigned threads, Job job) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w, std::size_t stride) {
    for (std::size_t i = w; i < n; i += stride) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

FitResult fit(const Dataset& data, const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (!data.net || !data.graph || !data.probes) throw UsageError("fit: incomplete dataset");
  if (data.train.empty()) throw DataError("fit: no training trips");

  const auto scaling = data::compute_scaling(*data.net);
  const bool high_order = !config.flags.no_high_order;
  const auto train_ex = prepare_examples(data, data.train, scaling, high_order);
  const auto val_ex = prepare_examples(data, data.validation, scaling, high_order);

  FitResult result;
  result.model.params = model::initialize_params(config.model, config.seed);
  result.model.manifest = {config.model, scaling, default_output_scale(data.train), config.flags};
  model::Model& m = result.model;

  AdamState adam = make_adam_state(m.params);
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t slots = std::min(config.batch_size, train_ex.size());
  std::vector<ModelParams> slot_grads(slots, m.params);
  ModelParams batch_grad = m.params;
  std::vector<double> losses(slots);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      const double weight = 1.0 / static_cast<double>(b);
      const std::uint64_t step = adam.step + 1;
      try {
        parallel_for(b, config.threads, [&](std::size_t i) {
          zero(slot_grads[i]);
          losses[i] = accumulate_gradient(m, train_ex[order[start + i]], config.huber_delta,
                                          weight, slot_grads[i]);
        });
      } catch (const NumericError& e) {
        throw NonFiniteLoss(step, e.what());
      }
      zero(batch_grad);
      for (std::size_t i = 0; i < b; ++i) {
        if (!std::isfinite(losses[i])) throw NonFiniteLoss(step, "trip loss");
        epoch_loss += losses[i];
        add_into(batch_grad, slot_grads[i]);
      }
      adam_step(m.params, batch_grad, adam, config);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.step = adam.step;
    entry.train_loss = epoch_loss / static_cast<double>(train_ex.size());
    if (!val_ex.empty()) {
      std::vector<double> pred(val_ex.size()), label(val_ex.size());
      parallel_for(val_ex.size(), config.threads, [&](std::size_t i) {
        pred[i] = model::predict(m, val_ex[i].subgraph).total;
        label[i] = val_ex[i].trip->total_time;
      });
      const auto met = eval::metrics(pred, label);
      entry.val_mae = met.mae;
      entry.val_rmse = met.rmse;
      entry.val_mape = met.mape;
    }
    if (log) {
      write_log_line(*log, entry);
      log->flush();
    }
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace eta::train
