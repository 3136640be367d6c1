#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "eta/error.hpp"
#include "eta/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace eta;
using namespace eta::model;
using tensor::Adjacency;
using tensor::Tape;

namespace {

Adjacency single_row(std::vector<std::uint32_t> nbrs, std::size_t extra_nodes) {
  Adjacency a;
  a.add_node(nbrs);
  for (std::size_t i = 0; i < extra_nodes; ++i) a.add_node({});
  return a;
}

RelationProjectionsOf<Tensor> scalar_projection() {
  return {Tensor({1, 1}, 1.0), Tensor({1}), Tensor({1, 1}, 1.0),
          Tensor({1}), Tensor({1, 1}, 1.0), Tensor({1})};
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.row(r).begin(), t.row(r).end());
  return out;
}

LayerParamsOf<Var> bind_layer(Tape& tape, const LayerParamsOf<Tensor>& p) {
  LayerParamsOf<Var> out;
  for (std::size_t r = 0; r < roadnet::kRelationCount; ++r) {
    const auto& s = p.relations[r];
    out.relations[r] = {tape.parameter(s.wq), tape.parameter(s.bq), tape.parameter(s.wk),
                        tape.parameter(s.bk), tape.parameter(s.wv), tape.parameter(s.bv)};
  }
  return out;
}

Manifest manifest_for(const ModelConfig& config, const data::FeatureScaling& scaling,
                      double output_scale) {
  Manifest m;
  m.config = config;
  m.scaling = scaling;
  m.output_scale = output_scale;
  return m;
}

}  // namespace

TEST_CASE("attention weights") {
  SUBCASE("a single neighbor gets all the weight") {
    const Tensor x({2, 1}, std::vector<double>{0.7, -1.3});
    const auto a = attention_head(x, scalar_projection(), single_row({1}, 1), 0, 0, 1);
    REQUIRE(a.weights.size() == 1);
    CHECK(a.weights[0] == 1.0);
    CHECK(a.mix[0] == doctest::Approx(-1.3));
  }
  SUBCASE("identical neighbors split evenly") {
    const Tensor x({3, 1}, std::vector<double>{2.0, 0.4, 0.4});
    const auto a = attention_head(x, scalar_projection(), single_row({1, 2}, 2), 0, 0, 1);
    CHECK(a.weights[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a.weights[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("logits 0, ln 2, ln 4") {
    const Tensor x({4, 1}, std::vector<double>{1.0, 0.0, std::log(2.0), std::log(4.0)});
    const auto a = attention_head(x, scalar_projection(), single_row({1, 2, 3}, 3), 0, 0, 1);
    CHECK(a.weights[0] == doctest::Approx(1.0 / 7.0).epsilon(1e-14));
    CHECK(a.weights[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-14));
    CHECK(a.weights[2] == doctest::Approx(4.0 / 7.0).epsilon(1e-14));
  }
  SUBCASE("a common key offset leaves the weights unchanged") {
    std::mt19937_64 rng(4);
    const auto x = testing::random_tensor(rng, {5, 8});
    RelationProjectionsOf<Tensor> p{testing::random_tensor(rng, {8, 8}),
                                    testing::random_tensor(rng, {8}),
                                    testing::random_tensor(rng, {8, 8}),
                                    testing::random_tensor(rng, {8}),
                                    testing::random_tensor(rng, {8, 8}),
                                    testing::random_tensor(rng, {8})};
    const auto adj = single_row({1, 2, 3, 4}, 4);
    const auto before = attention_head(x, p, adj, 0, 1, 2);
    for (std::size_t i = 0; i < 8; ++i) p.bk[i] += 3.0;
    const auto after = attention_head(x, p, adj, 0, 1, 2);
    double total = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(after.weights[j] == doctest::Approx(before.weights[j]).epsilon(1e-12));
      total += after.weights[j];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("aggregation layer") {
  const ModelConfig config;
  const auto params = testing::dense_random_params(config, 11);
  const auto net = testing::chain_network(3);
  const auto graph = csgraph::first_order_graph(net);
  const data::ProbeIndex probes({}, net.size());
  const auto g = build_subgraph(net, graph, probes, {0, 1, 2}, 7200, data::compute_scaling(net));
  std::mt19937_64 rng(12);
  const auto x0 = testing::random_tensor(rng, {g.nodes.size(), config.d_model});

  SUBCASE("3-link chain matches the dense-loop oracle") {
    Tape tape;
    const auto h = layer(bind_layer(tape, params.layers[0]), g, tape.constant(x0), config.heads);
    const auto expect = oracle::layer(rows_of(x0), params.layers[0], g, config.heads);
    double worst = 0.0;
    for (std::size_t i = 0; i < expect.size(); ++i)
      for (std::size_t c = 0; c < config.d_model; ++c)
        worst = std::max(worst, std::abs(h.value().at(i, c) - expect[i][c]));
    CHECK(worst < 1e-10);
  }
  SUBCASE("an isolated link keeps its input") {
    RouteSubgraph lone = g;
    for (auto& a : lone.adjacency) {
      a = Adjacency{};
      for (std::size_t i = 0; i < lone.nodes.size(); ++i) a.add_node({});
    }
    Tape tape;
    const auto h = layer(bind_layer(tape, params.layers[0]), lone, tape.constant(x0), config.heads);
    CHECK(h.value() == x0);
  }
  SUBCASE("zero value projections give the residual") {
    auto p = params.layers[0];
    for (auto& r : p.relations) {
      r.wv.fill(0.0);
      r.bv.fill(0.0);
    }
    Tape tape;
    const auto h = layer(bind_layer(tape, p), g, tape.constant(x0), config.heads);
    CHECK(h.value() == x0);
  }
  SUBCASE("neighbor order does not matter") {
    RouteSubgraph shuffled = g;
    std::mt19937_64 perm(3);
    for (auto& a : shuffled.adjacency)
      for (std::size_t i = 0; i < a.nodes(); ++i)
        std::shuffle(a.indices.begin() + a.offsets[i], a.indices.begin() + a.offsets[i + 1], perm);
    Tape tape;
    const auto lp = bind_layer(tape, params.layers[1]);
    const auto a = layer(lp, g, tape.constant(x0), config.heads);
    const auto b = layer(lp, shuffled, tape.constant(x0), config.heads);
    for (std::size_t i = 0; i < x0.size(); ++i)
      CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
  }
  SUBCASE("zero layers return the route rows of the input") {
    auto shallow = params;
    shallow.layers.clear();
    Tape tape;
    const auto bound = bind(tape, shallow);
    const auto states = encode_route(bound, g, tape.constant(x0), config.heads);
    REQUIRE(states.value().rows() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < config.d_model; ++c)
        CHECK(states.value().at(i, c) == x0.at(g.route_nodes[i], c));
  }
}

TEST_CASE("route subgraph") {
  const auto w = testing::toy_world();
  const auto g = build_subgraph(w.net, w.graph, w.index, w.trip.route, w.trip.departure, w.scaling);
  CHECK(g.route_nodes == std::vector<std::uint32_t>{0, 1, 2});
  std::set<LinkIndex> members;
  for (const auto& n : g.nodes) members.insert(n.link);
  CHECK(members.size() == g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) CHECK(g.nodes[i].on_route == (i < 3));
  // Closure: every graph neighbor of a route link is present.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t r = 0; r < roadnet::kRelationCount; ++r)
      for (auto nb : w.graph.neighbors(roadnet::relation_from_slot(r), g.nodes[i].link))
        CHECK(members.count(nb) == 1);
  const auto hops = roadnet::hop_distances(w.net, w.trip.route.front());
  for (const auto& n : g.nodes) CHECK(n.position == hops[n.link]);
  CHECK(g.adjacency[5].edges() == 2);
  CHECK(g.time_slot == data::slot_of_week(w.trip.departure));

  const auto plain =
      build_subgraph(w.net, w.graph, w.index, w.trip.route, w.trip.departure, w.scaling, false);
  CHECK(plain.adjacency[5].edges() == 0);
  for (std::size_t r = 0; r < 5; ++r) CHECK(plain.adjacency[r].indices == g.adjacency[r].indices);

  SUBCASE("repeated links collapse to one node") {
    const auto loop = build_subgraph(w.net, w.graph, w.index, {1, 3, 1}, w.trip.departure,
                                     w.scaling);
    CHECK(loop.route_nodes == std::vector<std::uint32_t>{0, 1, 0});
  }
}

TEST_CASE("input features") {
  const ModelConfig config;
  const auto params = testing::dense_random_params(config, 21);
  RouteSubgraph g;
  NodeInput n;
  n.road_class = 2;
  n.lane_bucket = 1;
  n.position = 4;
  g.nodes = {n, n};
  g.nodes[0].on_route = true;
  for (auto& a : g.adjacency)
    for (int i = 0; i < 2; ++i) a.add_node({});

  Tape tape;
  const auto p = bind(tape, params);
  const auto with = input_features(p, g, {}).value();
  CHECK_FALSE(std::equal(with.row(0).begin(), with.row(0).end(), with.row(1).begin()));
  const auto without = input_features(p, g, {true, false}).value();
  CHECK(std::equal(without.row(0).begin(), without.row(0).end(), without.row(1).begin()));

  SUBCASE("position table is read only when enabled") {
    auto moved = g;
    for (auto& node : moved.nodes) node.position = 9;
    const auto off_a = input_features(p, g, {false, true}).value();
    const auto off_b = input_features(p, moved, {false, true}).value();
    CHECK(off_a == off_b);
    CHECK_FALSE(input_features(p, moved, {}).value() == with);
  }
}

TEST_CASE("prediction head") {
  const ModelConfig config;
  const auto w = testing::toy_world();
  const auto g = build_subgraph(w.net, w.graph, w.index, w.trip.route, w.trip.departure, w.scaling);

  SUBCASE("all-zero parameters predict scale * ln 2 per link") {
    Model m{zero_params(config), manifest_for(config, w.scaling, 50.0)};
    const auto out = predict(m, g);
    REQUIRE(out.link_times.size() == 3);
    for (double t : out.link_times) CHECK(t == doctest::Approx(50.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(out.total == doctest::Approx(150.0 * std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("total is the sum of link times") {
    Model m{testing::dense_random_params(config, 5), manifest_for(config, w.scaling, 30.0)};
    const auto out = predict(m, g);
    double s = 0.0;
    for (double t : out.link_times) {
      CHECK(t > 0.0);
      s += t;
    }
    CHECK(out.total == doctest::Approx(s).epsilon(1e-14));
  }
  SUBCASE("a one-link route sees only the centre kernel slice") {
    auto params = testing::dense_random_params(config, 6);
    std::mt19937_64 rng(7);
    const auto states = testing::random_tensor(rng, {1, config.d_model});
    Tape tape;
    const auto bound = bind(tape, params);
    const auto lt = predict_link_times(bound, tape.constant(states), 1.0);
    // Reference: y = softplus(w2 . relu(w1^T (x K1 + b) + b1) + b2).
    const std::size_t d = config.d_model, hid = config.mlp_hidden;
    std::vector<double> conv(d);
    for (std::size_t o = 0; o < d; ++o) {
      conv[o] = params.conv_b[o];
      for (std::size_t k = 0; k < d; ++k) conv[o] += states[k] * params.conv_w[d * d + k * d + o];
    }
    double out = params.mlp_b2[0];
    for (std::size_t h = 0; h < hid; ++h) {
      double a = params.mlp_b1[h];
      for (std::size_t k = 0; k < d; ++k) a += conv[k] * params.mlp_w1[k * hid + h];
      out += std::max(a, 0.0) * params.mlp_w2[h];
    }
    CHECK(lt.per_link.value()[0] == doctest::Approx(std::log1p(std::exp(out))).epsilon(1e-13));
  }
}

TEST_CASE("initialization") {
  const ModelConfig config;
  const auto p = initialize_params(config, 1);
  CHECK(p.layers.size() == 2);
  const double bound = 1.0 / std::sqrt(32.0);
  for (double v : p.layers[0].relations[0].wq.values()) CHECK(std::abs(v) <= bound);
  for (double v : p.features.numeric.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));
  for (double v : p.features.position.values()) CHECK(std::abs(v) <= 0.1);
  for (double v : p.conv_b.values()) CHECK(v == 0.0);
  CHECK(initialize_params(config, 1).conv_w == p.conv_w);
  CHECK_FALSE(initialize_params(config, 2).conv_w == p.conv_w);
}

TEST_CASE("checkpoint round trip") {
  const ModelConfig config;
  const auto w = testing::toy_world();
  Model m{testing::dense_random_params(config, 8), manifest_for(config, w.scaling, 42.5)};
  m.manifest.flags.no_route_identifier = true;
  const auto dir = std::filesystem::temp_directory_path() / "eta_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  save_model(path, m);
  CHECK(std::filesystem::exists(manifest_path(path)));
  const auto back = load_model(path);
  CHECK(back.manifest.config == m.manifest.config);
  CHECK(back.manifest.flags == m.manifest.flags);
  CHECK(back.manifest.output_scale == 42.5);
  // Stored as float32: exact after rounding, and idempotent from then on.
  bool same = true;
  visit_params(
      [&](const std::string&, const Tensor& a, const Tensor& b) {
        same &= a.shape() == b.shape();
        for (std::size_t i = 0; i < a.size(); ++i)
          same &= a[i] == static_cast<double>(static_cast<float>(b[i]));
      },
      back.params, m.params);
  CHECK(same);
  const auto g = build_subgraph(w.net, w.graph, w.index, w.trip.route, w.trip.departure, w.scaling);
  CHECK(predict(back, g).total == doctest::Approx(predict(m, g).total).epsilon(1e-5));
  const auto again = dir / "again.ckpt";
  save_model(again, back);
  const auto twice = load_model(again);
  CHECK(predict(twice, g).total == predict(back, g).total);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(load_model(path), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("end-to-end gradient against finite differences") {
  const ModelConfig config;
  const auto w = testing::toy_world();
  const auto g = build_subgraph(w.net, w.graph, w.index, w.trip.route, w.trip.departure, w.scaling);
  const auto manifest = manifest_for(config, w.scaling, 40.0);
  auto params = testing::dense_random_params(config, 9, 0.25);

  auto total_of = [&](const ModelParams& p) {
    Tape tape;
    return forward(bind(tape, p), g, manifest).total.value()[0];
  };
  auto grads = zero_params(config);
  {
    Tape tape;
    const auto out = forward(bind(tape, params, &grads), g, manifest);
    tape.backward(out.total);
  }

  // Every entry of small tensors; a random sample plus all touched rows of
  // the large embedding tables.
  std::mt19937_64 rng(10);
  double worst = 0.0;
  std::size_t checked = 0;
  visit_params(
      [&](const std::string&, Tensor& value, const Tensor& grad) {
        std::vector<std::size_t> picks;
        if (value.size() <= 256) {
          for (std::size_t i = 0; i < value.size(); ++i) picks.push_back(i);
        } else {
          std::uniform_int_distribution<std::size_t> u(0, value.size() - 1);
          for (int k = 0; k < 40; ++k) picks.push_back(u(rng));
          for (std::size_t i = 0; i < grad.size() && picks.size() < 200; ++i)
            if (grad[i] != 0.0) picks.push_back(i);
        }
        for (std::size_t i : picks) {
          const double keep = value[i], h = 1e-5;
          value[i] = keep + h;
          const double up = total_of(params);
          value[i] = keep - h;
          const double down = total_of(params);
          value[i] = keep;
          const double numeric = (up - down) / (2 * h);
          const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-3});
          worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
          ++checked;
        }
      },
      params, grads);
  CHECK(checked > 1000);
  CHECK(worst < 1e-4);
}
