#include "eta/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eta/csgraph.hpp"
#include "eta/data.hpp"
#include "eta/error.hpp"
#include "eta/eval.hpp"
#include "eta/model.hpp"
#include "eta/roadnet.hpp"
#include "eta/train.hpp"
#include "eta/world.hpp"

namespace eta::cli {
namespace fs = std::filesystem;

namespace {

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

// Inputs shared by the model-facing subcommands.
struct Corpus {
  roadnet::RoadNetwork net;
  std::vector<data::LabeledTrip> trips;
  std::vector<data::ProbeRecord> probes;
  data::ProbeIndex index;
  csgraph::CongestionSensitiveGraph graph;
};

struct CorpusPaths {
  std::string network, trips, probes, graph;
};

Corpus load_corpus(const CorpusPaths& p, bool need_graph) {
  Corpus c;
  {
    auto in = open_in(p.network);
    c.net = roadnet::read_network(in);
  }
  {
    auto in = open_in(p.trips);
    c.trips = data::read_trips(in, c.net);
  }
  if (!p.probes.empty()) {
    auto in = open_in(p.probes);
    c.probes = data::read_probes(in, c.net);
  }
  c.index = data::ProbeIndex(c.probes, c.net.size());
  if (need_graph) {
    auto in = open_in(p.graph);
    c.graph = csgraph::read_graph(in, c.net);
  }
  return c;
}

// Options of the training run, layered: defaults < --config file < flags.
struct TrainOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::size_t> epochs, layers, batch;
  std::optional<double> lr, delta;
  std::optional<std::size_t> split;
  bool no_high_order = false, no_route_identifier = false, no_position_encoding = false;
};

struct RunSettings {
  train::TrainConfig train;
  std::optional<std::size_t> split;
};

RunSettings resolve(const TrainOptions& o) {
  RunSettings s;
  auto& c = s.train;
  if (!o.config.empty()) {
    auto in = open_in(o.config);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("train config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw UsageError("train config must be a JSON object");
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "learning_rate") c.learning_rate = v.get<double>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "epsilon") c.epsilon = v.get<double>();
        else if (key == "huber_delta") c.huber_delta = v.get<double>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "epochs") c.epochs = v.get<std::size_t>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "threads") c.threads = v.get<unsigned>();
        else if (key == "layers") c.model.layers = v.get<std::size_t>();
        else if (key == "d_model") c.model.d_model = v.get<std::size_t>();
        else if (key == "heads") c.model.heads = v.get<std::size_t>();
        else if (key == "mlp_hidden") c.model.mlp_hidden = v.get<std::size_t>();
        else if (key == "split") s.split = v.get<std::size_t>();
        else if (key == "no_high_order") c.flags.no_high_order = v.get<bool>();
        else if (key == "no_route_identifier") c.flags.no_route_identifier = v.get<bool>();
        else if (key == "no_position_encoding") c.flags.no_position_encoding = v.get<bool>();
        else throw UsageError("train config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("train config: " + std::string(e.what()));
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.layers) c.model.layers = *o.layers;
  if (o.batch) c.batch_size = *o.batch;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.delta) c.huber_delta = *o.delta;
  if (o.split) s.split = *o.split;
  c.flags.no_high_order |= o.no_high_order;
  c.flags.no_route_identifier |= o.no_route_identifier;
  c.flags.no_position_encoding |= o.no_position_encoding;
  c.validate();
  return s;
}

// Trips are in departure order; the first `split` train, the rest test.
// Default holds out the last sixth.
std::size_t split_point(std::optional<std::size_t> split, std::size_t n) {
  const std::size_t s = split.value_or(n - n / 6);
  if (s == 0 || s > n)
    throw UsageError("split " + std::to_string(s) + " outside 1.." + std::to_string(n));
  return s;
}

std::vector<double> predict_totals(const model::Model& m, const Corpus& c,
                                   std::span<const data::LabeledTrip> trips, unsigned threads) {
  std::vector<double> out(trips.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < trips.size(); i += stride) {
      const auto& t = trips[i];
      auto g = model::build_subgraph(c.net, c.graph, c.index, t.route, t.departure,
                                     m.manifest.scaling, !m.manifest.flags.no_high_order);
      out[i] = model::predict(m, g).total;
    }
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  }
  return out;
}

std::vector<eval::EvalReport> evaluate_all(const model::Model& m, const std::string& name,
                                           const Corpus& c,
                                           std::span<const data::LabeledTrip> train,
                                           std::span<const data::LabeledTrip> test,
                                           unsigned threads) {
  for (const auto& t : test)
    if (!t.labeled()) throw DataError("evaluation trips must carry link times");
  const auto strata = eval::stratify(test, c.index);
  std::vector<eval::EvalReport> reports;
  reports.push_back(eval::evaluate(name, predict_totals(m, c, test, threads), test, strata));
  const eval::AvgBaseline avg(c.net, train);
  std::vector<double> base;
  for (const auto& t : test) base.push_back(avg.predict(t.route, t.departure));
  reports.push_back(eval::evaluate("avg", base, test, strata));
  return reports;
}

model::Model train_model(const Corpus& c, const RunSettings& s, const fs::path& out,
                         std::ostream* progress) {
  const std::size_t split = split_point(s.split, c.trips.size());
  const std::span<const data::LabeledTrip> all(c.trips);
  train::Dataset d{&c.net, &c.graph, &c.index, all.first(split), all.subspan(split)};
  auto log = open_out(fs::path(out.string() + ".log.jsonl"));
  auto result = train::fit(d, s.train, &log);
  model::save_model(out, result.model);
  if (progress) {
    for (const auto& e : result.log) train::write_log_line(*progress, e);
  }
  return std::move(result.model);
}

void add_corpus_options(CLI::App* cmd, CorpusPaths& p, bool graph) {
  cmd->add_option("--network", p.network, "Network file (JSON lines)")->required();
  cmd->add_option("--trips", p.trips, "Trips file (TSV)")->required();
  cmd->add_option("--probes", p.probes, "Probe file (CSV)");
  if (graph) cmd->add_option("--graph", p.graph, "Congestion-sensitive graph file")->required();
}

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--config", o.config, "Training config (JSON)");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--delta", o.delta, "Huber threshold in seconds");
  cmd->add_option("--layers", o.layers, "Aggregation layers");
  cmd->add_option("--batch", o.batch, "Trips per optimizer step");
  cmd->add_option("--split", o.split, "Number of leading trips used for training");
}

void add_ablation_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_flag("--no-high-order", o.no_high_order, "Drop mined high-order neighbors");
  cmd->add_flag("--no-route-identifier", o.no_route_identifier, "Drop the on-route embedding");
  cmd->add_flag("--no-position-encoding", o.no_position_encoding,
                "Drop the hop-distance embedding");
}

void print_deltas(std::ostream& out, const eval::EvalReport& full,
                  const std::vector<eval::EvalReport>& variants) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %-10s %10s %10s %10s\n", "variant", "stratum", "-dMAE",
                "-dRMSE", "-dMAPE(%)");
  out << buf;
  for (const auto& v : variants) {
    const std::pair<const char*, std::pair<const eval::Metrics*, const eval::Metrics*>> rows[] = {
        {"overall", {&full.overall, &v.overall}},
        {"congested", {&full.congested, &v.congested}},
        {"normal", {&full.normal, &v.normal}}};
    for (const auto& [name, m] : rows) {
      std::snprintf(buf, sizeof buf, "%-24s %-10s %10.2f %10.2f %10.2f\n", v.model.c_str(), name,
                    -(m.second->mae - m.first->mae), -(m.second->rmse - m.first->rmse),
                    -100.0 * (m.second->mape - m.first->mape));
      out << buf;
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Route travel-time estimation on a congestion-sensitive road graph", "eta"};
  app.require_subcommand(1);

  // gen
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic world");
  gen->add_option("--config", gen_config, "World config (JSON)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Random seed (overrides the config)");

  // build-graph
  CorpusPaths bg_paths;
  std::string bg_out;
  csgraph::MiningOptions mining;
  auto* bg = app.add_subcommand("build-graph", "Build the congestion-sensitive graph");
  add_corpus_options(bg, bg_paths, false);
  bg->add_option("--out", bg_out, "Graph file")->required();
  bg->add_option("--k", mining.top_k, "High-order neighbors kept per link");
  bg->add_option("--min-cooccurrence", mining.min_cooccurrence, "Routes a pair must share");
  bg->add_option("--threads", mining.threads, "Worker threads")->check(CLI::PositiveNumber);
  std::uint64_t unused_seed = 0;
  bg->add_option("--seed", unused_seed, "Accepted for uniformity; mining is not random");

  // train
  CorpusPaths tr_paths;
  TrainOptions tr_opts;
  std::string tr_out;
  auto* tr = app.add_subcommand("train", "Train a model");
  add_corpus_options(tr, tr_paths, true);
  add_train_options(tr, tr_opts);
  add_ablation_flags(tr, tr_opts);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();

  // eval
  CorpusPaths ev_paths;
  std::string ev_model, ev_out;
  std::optional<std::size_t> ev_split;
  unsigned ev_threads = 1;
  auto* ev = app.add_subcommand("eval", "Evaluate a model and the average baseline");
  add_corpus_options(ev, ev_paths, true);
  ev->add_option("--model", ev_model, "Checkpoint path")->required();
  ev->add_option("--out", ev_out, "Report file (JSON lines)")->required();
  ev->add_option("--split", ev_split, "Number of leading trips used for training");
  ev->add_option("--threads", ev_threads, "Worker threads")->check(CLI::PositiveNumber);
  ev->add_option("--seed", unused_seed, "Accepted for uniformity; evaluation is not random");

  // predict
  CorpusPaths pr_paths;
  std::string pr_model, pr_out;
  auto* pr = app.add_subcommand("predict", "Predict travel times for routes");
  add_corpus_options(pr, pr_paths, true);
  pr->add_option("--model", pr_model, "Checkpoint path")->required();
  pr->add_option("--out", pr_out, "Prediction file (TSV)")->required();

  // ablate
  CorpusPaths ab_paths;
  TrainOptions ab_opts;
  std::string ab_out;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate matched ablation pairs");
  add_corpus_options(ab, ab_paths, true);
  add_train_options(ab, ab_opts);
  add_ablation_flags(ab, ab_opts);
  ab->add_option("--out", ab_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*gen) {
      world::WorldConfig cfg;
      if (!gen_config.empty()) {
        auto in = open_in(gen_config);
        cfg = world::parse_config(in);
      }
      if (gen_seed) cfg.seed = *gen_seed;
      const auto w = world::generate_world(cfg);
      world::write_world(gen_out, w, cfg);
      out << "wrote " << w.net.size() << " links, " << w.trips.size() << " trips, "
          << w.probes.size() << " probes to " << gen_out << '\n';
    } else if (*bg) {
      auto c = load_corpus(bg_paths, false);
      const auto g = csgraph::build(c.net, c.trips, c.index, mining);
      auto o = open_out(bg_out);
      csgraph::write_graph(o, g, c.net);
      out << "graph: " << c.net.edge_count() << " first-order edges, "
          << g.edge_count(roadnet::Relation::HighOrder) << " high-order edges\n";
    } else if (*tr) {
      const auto settings = resolve(tr_opts);
      auto c = load_corpus(tr_paths, true);
      train_model(c, settings, tr_out, &out);
    } else if (*ev) {
      auto c = load_corpus(ev_paths, true);
      const auto m = model::load_model(ev_model);
      const std::size_t split = split_point(ev_split, c.trips.size());
      const std::span<const data::LabeledTrip> all(c.trips);
      const auto reports = evaluate_all(m, "eta", c, all.first(split), all.subspan(split), ev_threads);
      auto o = open_out(ev_out);
      for (const auto& r : reports) eval::write_report(o, r);
      eval::print_table(out, reports);
    } else if (*pr) {
      auto c = load_corpus(pr_paths, true);
      const auto m = model::load_model(pr_model);
      auto o = open_out(pr_out);
      o << "trip\ttotal\tlink_times\n";
      for (std::size_t i = 0; i < c.trips.size(); ++i) {
        const auto& t = c.trips[i];
        auto g = model::build_subgraph(c.net, c.graph, c.index, t.route, t.departure,
                                       m.manifest.scaling, !m.manifest.flags.no_high_order);
        const auto p = model::predict(m, g);
        o << i << '\t' << data::format_double(p.total) << '\t';
        for (std::size_t j = 0; j < p.link_times.size(); ++j)
          o << (j ? "," : "") << data::format_double(p.link_times[j]);
        o << '\n';
      }
      out << "wrote " << c.trips.size() << " predictions to " << pr_out << '\n';
    } else if (*ab) {
      const std::pair<bool, const char*> requested[] = {
          {ab_opts.no_high_order, "no_high_order"},
          {ab_opts.no_route_identifier, "no_route_identifier"},
          {ab_opts.no_position_encoding, "no_position_encoding"}};
      if (std::none_of(std::begin(requested), std::end(requested),
                       [](const auto& r) { return r.first; })) {
        throw UsageError(
            "ablate needs at least one of --no-high-order, --no-route-identifier, "
            "--no-position-encoding");
      }
      TrainOptions base = ab_opts;
      base.no_high_order = base.no_route_identifier = base.no_position_encoding = false;
      const auto full_settings = resolve(base);
      auto c = load_corpus(ab_paths, true);
      const fs::path dir(ab_out);
      fs::create_directories(dir);
      const std::size_t split = split_point(full_settings.split, c.trips.size());
      const std::span<const data::LabeledTrip> all(c.trips);
      const auto train = all.first(split), test = all.subspan(split);

      auto full = train_model(c, full_settings, dir / "full.ckpt", nullptr);
      auto reports = evaluate_all(full, "full", c, train, test, full_settings.train.threads);
      std::vector<eval::EvalReport> variants;
      for (const auto& [on, name] : requested) {
        if (!on) continue;
        auto settings = full_settings;
        settings.train.flags.no_high_order = std::string(name) == "no_high_order";
        settings.train.flags.no_route_identifier = std::string(name) == "no_route_identifier";
        settings.train.flags.no_position_encoding = std::string(name) == "no_position_encoding";
        auto m = train_model(c, settings, dir / (std::string(name) + ".ckpt"), nullptr);
        variants.push_back(evaluate_all(m, name, c, train, test, settings.train.threads).front());
      }
      reports.insert(reports.end(), variants.begin(), variants.end());
      auto o = open_out(dir / "report.jsonl");
      for (const auto& r : reports) eval::write_report(o, r);
      eval::print_table(out, reports);
      out << '\n';
      print_deltas(out, reports.front(), variants);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace eta::cli
