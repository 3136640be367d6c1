#include "eta/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "eta/checkpoint.hpp"
#include "eta/error.hpp"

namespace eta::model {
namespace {

using nlohmann::json;

Tensor uniform(std::mt19937_64& rng, tensor::Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

ModelParams zero_params(const ModelConfig& config) {
  const std::size_t d = config.d_model;
  if (d == 0 || config.heads == 0 || d % config.heads != 0)
    throw UsageError("d_model must be a positive multiple of the head count");
  ModelParams p;
  p.features = data::zero_feature_tables(d);
  p.layers.resize(config.layers);
  for (auto& layer : p.layers) {
    for (auto& rel : layer.relations) {
      rel.wq = Tensor({d, d});
      rel.bq = Tensor({d});
      rel.wk = Tensor({d, d});
      rel.bk = Tensor({d});
      rel.wv = Tensor({d, d});
      rel.bv = Tensor({d});
    }
  }
  p.conv_w = Tensor({3, d, d});
  p.conv_b = Tensor({d});
  p.mlp_w1 = Tensor({d, config.mlp_hidden});
  p.mlp_b1 = Tensor({config.mlp_hidden});
  p.mlp_w2 = Tensor({config.mlp_hidden, 1});
  p.mlp_b2 = Tensor({1});
  return p;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  visit_params([&](const std::string&, const Tensor& t) { n += t.size(); }, params);
  return n;
}

ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  p.features.numeric = uniform(rng, p.features.numeric.shape(), fan_in(data::kStaticNumeric));
  p.features.dynamic = uniform(rng, p.features.dynamic.shape(), fan_in(data::kDynamicWidth));
  p.features.position = uniform(rng, p.features.position.shape(), 0.1);
  p.features.route_flag = uniform(rng, p.features.route_flag.shape(), 0.1);
  for (auto& layer : p.layers) {
    for (auto& rel : layer.relations) {
      rel.wq = uniform(rng, {d, d}, fan_in(d));
      rel.wk = uniform(rng, {d, d}, fan_in(d));
      rel.wv = uniform(rng, {d, d}, fan_in(d));
    }
  }
  p.conv_w = uniform(rng, {3, d, d}, fan_in(3 * d));
  p.mlp_w1 = uniform(rng, {d, config.mlp_hidden}, fan_in(d));
  p.mlp_w2 = uniform(rng, {config.mlp_hidden, 1}, fan_in(config.mlp_hidden));
  return p;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".manifest.json";
  return p;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  std::vector<tensor::NamedTensor> entries;
  visit_params([&](const std::string& name, const Tensor& t) { entries.emplace_back(name, t); },
               model.params);
  tensor::save_checkpoint(path, entries);

  const Manifest& m = model.manifest;
  json j = json::object();
  j["d_model"] = m.config.d_model;
  j["heads"] = m.config.heads;
  j["layers"] = m.config.layers;
  j["mlp_hidden"] = m.config.mlp_hidden;
  j["position_buckets"] = roadnet::kHopCap + 1;
  j["time_of_week_buckets"] = data::kTimeOfWeekSlots;
  j["numeric_mean"] = m.scaling.mean;
  j["numeric_std"] = m.scaling.stddev;
  j["output_scale"] = m.output_scale;
  j["no_high_order"] = m.flags.no_high_order;
  j["no_route_identifier"] = m.flags.no_route_identifier;
  j["no_position_encoding"] = m.flags.no_position_encoding;
  std::ofstream out(manifest_path(path), std::ios::binary);
  if (!out) throw DataError("cannot write " + manifest_path(path).string());
  out << j.dump(2) << '\n';
}

Model load_model(const std::filesystem::path& path) {
  Model model;
  {
    std::ifstream in(manifest_path(path), std::ios::binary);
    if (!in) throw DataError("cannot read " + manifest_path(path).string());
    json j;
    try {
      in >> j;
      Manifest& m = model.manifest;
      m.config.d_model = j.at("d_model").get<std::size_t>();
      m.config.heads = j.at("heads").get<std::size_t>();
      m.config.layers = j.at("layers").get<std::size_t>();
      m.config.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
      m.scaling.mean = j.at("numeric_mean").get<std::array<double, data::kStaticNumeric>>();
      m.scaling.stddev = j.at("numeric_std").get<std::array<double, data::kStaticNumeric>>();
      m.output_scale = j.at("output_scale").get<double>();
      m.flags.no_high_order = j.at("no_high_order").get<bool>();
      m.flags.no_route_identifier = j.at("no_route_identifier").get<bool>();
      m.flags.no_position_encoding = j.at("no_position_encoding").get<bool>();
    } catch (const json::exception& e) {
      throw ParseError("manifest " + manifest_path(path).string() + ": " + e.what());
    }
  }
  model.params = zero_params(model.manifest.config);
  auto entries = tensor::load_checkpoint(path);
  std::unordered_map<std::string, Tensor*> slots;
  visit_params([&](const std::string& name, Tensor& t) { slots[name] = &t; }, model.params);
  if (entries.size() != slots.size())
    throw ParseError("checkpoint holds " + std::to_string(entries.size()) + " tensors, expected " +
                     std::to_string(slots.size()));
  for (auto& [name, value] : entries) {
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("unexpected checkpoint entry " + name);
    if (value.shape() != it->second->shape())
      throw ParseError("checkpoint entry " + name + " has shape " + tensor::to_string(value.shape()));
    *it->second = std::move(value);
  }
  return model;
}

RouteSubgraph build_subgraph(const roadnet::RoadNetwork& net,
                             const csgraph::CongestionSensitiveGraph& graph,
                             const data::ProbeIndex& probes, const roadnet::Route& route,
                             data::Timestamp departure, const data::FeatureScaling& scaling,
                             bool include_high_order) {
  if (route.empty()) throw DataError("empty route");
  const std::size_t relations =
      include_high_order ? roadnet::kRelationCount : roadnet::kFirstOrderRelations;

  RouteSubgraph g;
  std::unordered_map<LinkIndex, std::uint32_t> node_of;
  std::vector<LinkIndex> links;
  auto intern = [&](LinkIndex l) {
    auto [it, fresh] = node_of.try_emplace(l, static_cast<std::uint32_t>(links.size()));
    if (fresh) links.push_back(l);
    return it->second;
  };
  for (LinkIndex l : route) g.route_nodes.push_back(intern(l));
  const std::size_t route_count = links.size();
  for (std::size_t i = 0; i < route_count; ++i) {
    for (std::size_t r = 0; r < relations; ++r) {
      for (LinkIndex nb : graph.neighbors(roadnet::relation_from_slot(r), links[i])) intern(nb);
    }
  }

  std::vector<std::uint32_t> nbrs;
  for (std::size_t r = 0; r < roadnet::kRelationCount; ++r) {
    auto& adj = g.adjacency[r];
    for (LinkIndex l : links) {
      nbrs.clear();
      if (r < relations) {
        for (LinkIndex nb : graph.neighbors(roadnet::relation_from_slot(r), l)) {
          auto it = node_of.find(nb);
          if (it != node_of.end()) nbrs.push_back(it->second);
        }
      }
      adj.add_node(nbrs);
    }
  }

  const auto hops = roadnet::hop_distances(net, route.front());
  g.time_slot = data::slot_of_week(departure);
  g.nodes.resize(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    const roadnet::Link& link = net.link(links[i]);
    NodeInput& n = g.nodes[i];
    n.link = links[i];
    n.road_class = link.road_class;
    n.crossing = link.crossing_kind;
    n.signal = link.signal_kind;
    n.lane_bucket = data::lane_bucket(link.lanes);
    n.numeric = data::static_numeric(link, scaling);
    n.dynamic = data::flatten_dynamic(data::dynamic_window(probes, links[i], departure));
    n.position = std::min(hops[links[i]], roadnet::kHopCap);
    n.on_route = i < route_count;
  }
  return g;
}

BoundParams bind(tensor::Tape& tape, const ModelParams& params, ModelParams* grads) {
  BoundParams b;
  b.layers.resize(params.layers.size());
  if (grads) {
    visit_params([&](const std::string&, Var& v, const Tensor& t,
                     Tensor& g) { v = tape.parameter(t, g); },
                 b, params, *grads);
  } else {
    visit_params([&](const std::string&, Var& v, const Tensor& t) { v = tape.parameter(t); }, b,
                 params);
  }
  return b;
}

Var input_features(const BoundParams& p, const RouteSubgraph& g, data::FeatureSwitches switches) {
  const std::size_t n = g.nodes.size();
  std::vector<std::uint32_t> road(n), crossing(n), signal(n), lanes(n), pos(n), flag(n);
  Tensor numeric({n, data::kStaticNumeric});
  Tensor dynamic({n, data::kDynamicWidth});
  for (std::size_t i = 0; i < n; ++i) {
    const NodeInput& node = g.nodes[i];
    road[i] = node.road_class;
    crossing[i] = node.crossing;
    signal[i] = node.signal;
    lanes[i] = node.lane_bucket;
    pos[i] = node.position;
    flag[i] = node.on_route ? 1 : 0;
    std::copy(node.numeric.begin(), node.numeric.end(), numeric.data() + i * data::kStaticNumeric);
    std::copy(node.dynamic.begin(), node.dynamic.end(), dynamic.data() + i * data::kDynamicWidth);
  }
  tensor::Tape& tape = p.conv_w.tape();
  const auto& f = p.features;
  Var x = tensor::gather(f.road_class, std::move(road));
  x = tensor::add(x, tensor::gather(f.crossing, std::move(crossing)));
  x = tensor::add(x, tensor::gather(f.signal, std::move(signal)));
  x = tensor::add(x, tensor::gather(f.lanes, std::move(lanes)));
  x = tensor::add(x, tensor::matmul(tape.constant(std::move(numeric)), f.numeric));
  x = tensor::add(x, tensor::matmul(tape.constant(std::move(dynamic)), f.dynamic));
  if (switches.position_encoding) x = tensor::add(x, tensor::gather(f.position, std::move(pos)));
  if (switches.route_identifier) x = tensor::add(x, tensor::gather(f.route_flag, std::move(flag)));
  x = tensor::add(x, tensor::gather(f.time_of_week,
                                    std::vector<std::uint32_t>(
                                        n, static_cast<std::uint32_t>(g.time_slot))));
  return x;
}

Var layer(const LayerParamsOf<Var>& p, const RouteSubgraph& g, Var x, std::size_t heads) {
  Var agg;
  for (std::size_t r = 0; r < roadnet::kRelationCount; ++r) {
    const auto& adj = g.adjacency[r];
    if (adj.edges() == 0) continue;
    const auto& w = p.relations[r];
    Var q = tensor::add_row(tensor::matmul(x, w.wq), w.bq);
    Var k = tensor::add_row(tensor::matmul(x, w.wk), w.bk);
    Var v = tensor::add_row(tensor::matmul(x, w.wv), w.bv);
    Var h = tensor::graph_attention(q, k, v, adj, heads);
    agg = agg.valid() ? tensor::add(agg, h) : h;
  }
  if (!agg.valid()) return x;
  const double norm = 1.0 / static_cast<double>(roadnet::kRelationCount * heads);
  return tensor::add(x, tensor::scale(agg, norm));
}

Var encode_route(const BoundParams& p, const RouteSubgraph& g, Var x, std::size_t heads) {
  for (const auto& l : p.layers) x = layer(l, g, x, heads);
  return tensor::gather(x, g.route_nodes);
}

LinkTimes predict_link_times(const BoundParams& p, Var route_states, double output_scale) {
  Var c = tensor::conv1d(route_states, p.conv_w, p.conv_b);
  Var h = tensor::relu(tensor::add_row(tensor::matmul(c, p.mlp_w1), p.mlp_b1));
  Var z = tensor::add_row(tensor::matmul(h, p.mlp_w2), p.mlp_b2);
  Var y = tensor::scale(tensor::softplus(z), output_scale);
  return {y, tensor::sum(y)};
}

LinkTimes forward(const BoundParams& p, const RouteSubgraph& g, const Manifest& manifest) {
  Var x = input_features(p, g, manifest.flags.switches());
  Var h = encode_route(p, g, x, manifest.config.heads);
  return predict_link_times(p, h, manifest.output_scale);
}

Prediction predict(const Model& model, const RouteSubgraph& g) {
  tensor::Tape tape;
  BoundParams p = bind(tape, model.params);
  LinkTimes out = forward(p, g, model.manifest);
  Prediction pred;
  const Tensor& v = out.per_link.value();
  pred.link_times.assign(v.values().begin(), v.values().end());
  pred.total = out.total.value()[0];
  return pred;
}

HeadAttention attention_head(const Tensor& x, const RelationProjectionsOf<Tensor>& proj,
                             const tensor::Adjacency& adj, std::size_t node, std::size_t head,
                             std::size_t heads) {
  const std::size_t width = x.cols();
  const std::size_t d = width / heads;
  const std::size_t lo = head * d;
  auto project = [&](const Tensor& w, const Tensor& b, std::size_t row) {
    std::vector<double> out(d);
    for (std::size_t e = 0; e < d; ++e) {
      double s = b[lo + e];
      for (std::size_t k = 0; k < width; ++k) s += x.at(row, k) * w.at(k, lo + e);
      out[e] = s;
    }
    return out;
  };
  const auto q = project(proj.wq, proj.bq, node);
  const auto nbrs = adj.neighbors(node);
  HeadAttention result;
  result.mix.assign(d, 0.0);
  if (nbrs.empty()) return result;

  std::vector<double> logits;
  std::vector<std::vector<double>> values;
  for (std::uint32_t j : nbrs) {
    const auto k = project(proj.wk, proj.bk, j);
    double s = 0.0;
    for (std::size_t e = 0; e < d; ++e) s += q[e] * k[e];
    logits.push_back(s / std::sqrt(static_cast<double>(d)));
    values.push_back(project(proj.wv, proj.bv, j));
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) {
    result.weights.push_back(std::exp(l - top));
    total += result.weights.back();
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    result.weights[j] /= total;
    for (std::size_t e = 0; e < d; ++e) result.mix[e] += result.weights[j] * values[j][e];
  }
  return result;
}

}  // namespace eta::model
