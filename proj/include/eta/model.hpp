#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eta/csgraph.hpp"
#include "eta/data.hpp"
#include "eta/ops.hpp"
#include "eta/roadnet.hpp"
#include "eta/tape.hpp"
#include "eta/tensor.hpp"

namespace eta::model {

using roadnet::LinkIndex;
using tensor::Tensor;
using tensor::Var;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t heads = 8;
  std::size_t layers = 2;
  std::size_t mlp_hidden = 64;

  std::size_t head_dim() const { return d_model / heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AblationFlags {
  bool no_high_order = false;
  bool no_route_identifier = false;
  bool no_position_encoding = false;

  data::FeatureSwitches switches() const {
    return {!no_position_encoding, !no_route_identifier};
  }
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Query/key/value projections of one relation; all heads stacked along the
/// output columns (head c owns columns [c*d, (c+1)*d)).
template <class T>
struct RelationProjectionsOf {
  T wq, bq, wk, bk, wv, bv;  // w*: [d_model x d_model], b*: [d_model]
};

template <class T>
struct LayerParamsOf {
  std::array<RelationProjectionsOf<T>, roadnet::kRelationCount> relations;
};

template <class T>
struct ParamSetOf {
  data::FeatureTablesOf<T> features;
  std::vector<LayerParamsOf<T>> layers;
  T conv_w;  // [3 x d_model x d_model]
  T conv_b;  // [d_model]
  T mlp_w1;  // [d_model x hidden]
  T mlp_b1;  // [hidden]
  T mlp_w2;  // [hidden x 1]
  T mlp_b2;  // [1]
};

using ModelParams = ParamSetOf<Tensor>;
using BoundParams = ParamSetOf<Var>;

/// Calls f(name, first.field, rest.field...) for every parameter in a fixed
/// order. All sets must have the same layer count.
template <class F, class First, class... Rest>
void visit_params(F&& f, First& first, Rest&... rest) {
  f("features.road_class", first.features.road_class, rest.features.road_class...);
  f("features.crossing", first.features.crossing, rest.features.crossing...);
  f("features.signal", first.features.signal, rest.features.signal...);
  f("features.lanes", first.features.lanes, rest.features.lanes...);
  f("features.numeric", first.features.numeric, rest.features.numeric...);
  f("features.dynamic", first.features.dynamic, rest.features.dynamic...);
  f("features.position", first.features.position, rest.features.position...);
  f("features.route_flag", first.features.route_flag, rest.features.route_flag...);
  f("features.time_of_week", first.features.time_of_week, rest.features.time_of_week...);
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    for (std::size_t r = 0; r < roadnet::kRelationCount; ++r) {
      const std::string p = "layer" + std::to_string(l) + ".rel" + std::to_string(r + 1) + ".";
      f(p + "wq", first.layers[l].relations[r].wq, rest.layers[l].relations[r].wq...);
      f(p + "bq", first.layers[l].relations[r].bq, rest.layers[l].relations[r].bq...);
      f(p + "wk", first.layers[l].relations[r].wk, rest.layers[l].relations[r].wk...);
      f(p + "bk", first.layers[l].relations[r].bk, rest.layers[l].relations[r].bk...);
      f(p + "wv", first.layers[l].relations[r].wv, rest.layers[l].relations[r].wv...);
      f(p + "bv", first.layers[l].relations[r].bv, rest.layers[l].relations[r].bv...);
    }
  }
  f("head.conv_w", first.conv_w, rest.conv_w...);
  f("head.conv_b", first.conv_b, rest.conv_b...);
  f("head.mlp_w1", first.mlp_w1, rest.mlp_w1...);
  f("head.mlp_b1", first.mlp_b1, rest.mlp_b1...);
  f("head.mlp_w2", first.mlp_w2, rest.mlp_w2...);
  f("head.mlp_b2", first.mlp_b2, rest.mlp_b2...);
}

ModelParams zero_params(const ModelConfig& config);
std::size_t parameter_count(const ModelParams& params);

/// Weights uniform in +-1/sqrt(fan_in); biases and embedding tables zero,
/// except position and route-identifier tables which get small random values.
ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed);

/// Everything needed besides the learnable arrays to run the model.
struct Manifest {
  ModelConfig config;
  data::FeatureScaling scaling;
  double output_scale = 1.0;  // seconds per unit of softplus output
  AblationFlags flags;
};

struct Model {
  ModelParams params;
  Manifest manifest;
};

/// Writes the checkpoint at `path` and the manifest as JSON at
/// manifest_path(path).
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

/// Per-node inputs of a route subgraph.
struct NodeInput {
  LinkIndex link = 0;
  std::uint32_t road_class = 0;
  std::uint32_t crossing = 0;
  std::uint32_t signal = 0;
  std::uint32_t lane_bucket = 0;
  std::array<double, data::kStaticNumeric> numeric{};
  std::array<double, data::kDynamicWidth> dynamic{};
  std::uint32_t position = 0;
  bool on_route = false;
};

/// Route links plus their one-hop closure over the congestion-sensitive
/// graph, with per-relation adjacency restricted to the closure.
struct RouteSubgraph {
  std::vector<NodeInput> nodes;
  std::vector<std::uint32_t> route_nodes;  // node index of each route position
  std::array<tensor::Adjacency, roadnet::kRelationCount> adjacency;
  std::size_t time_slot = 0;
};

/// Route links come first (in route order, repeats collapsed), followed by
/// closure links in discovery order. Relation 6 is skipped when
/// `include_high_order` is false.
RouteSubgraph build_subgraph(const roadnet::RoadNetwork& net,
                             const csgraph::CongestionSensitiveGraph& graph,
                             const data::ProbeIndex& probes, const roadnet::Route& route,
                             data::Timestamp departure, const data::FeatureScaling& scaling,
                             bool include_high_order = true);

/// Binds parameters to a tape. With `grads`, gradients accumulate there.
BoundParams bind(tensor::Tape& tape, const ModelParams& params, ModelParams* grads = nullptr);

/// Input feature matrix [nodes x d_model].
Var input_features(const BoundParams& p, const RouteSubgraph& g, data::FeatureSwitches switches);

/// One aggregation layer:
///   h_i = x_i + 1/(6C) * sum_r sum_c sum_j alpha^(r)_{c,i,j} v^(r)_{c,j}
/// with each head's d-dimensional output written into its column slice.
Var layer(const LayerParamsOf<Var>& p, const RouteSubgraph& g, Var x, std::size_t heads);

/// Stacks all layers over the whole subgraph, then returns the route rows in
/// route order [m x d_model].
Var encode_route(const BoundParams& p, const RouteSubgraph& g, Var x, std::size_t heads);

struct LinkTimes {
  Var per_link;  // [m x 1]
  Var total;     // [1]
};

/// Conv1D (window 3) over the route sequence, then a ReLU MLP per position
/// and softplus, scaled to seconds.
LinkTimes predict_link_times(const BoundParams& p, Var route_states, double output_scale);

/// Full forward pass on a fresh tape.
LinkTimes forward(const BoundParams& p, const RouteSubgraph& g, const Manifest& manifest);

struct Prediction {
  std::vector<double> link_times;
  double total = 0.0;
};

Prediction predict(const Model& model, const RouteSubgraph& g);

/// Attention of one (node, relation, head) evaluated directly from a feature
/// matrix: weights over the node's neighbors and the weighted value mix.
struct HeadAttention {
  std::vector<double> weights;
  std::vector<double> mix;  // head_dim entries
};

HeadAttention attention_head(const Tensor& x, const RelationProjectionsOf<Tensor>& proj,
                             const tensor::Adjacency& adj, std::size_t node, std::size_t head,
                             std::size_t heads);

}  // namespace eta::model
