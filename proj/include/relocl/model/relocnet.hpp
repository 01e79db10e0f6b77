// Message-passing relocation model over household snapshots.
//
// Objects and locations exchange messages along "is-in" edges for a fixed
// number of rounds. Three heads read the result: a per-object move
// classifier, a bilinear object-to-location scorer and a graph-level context
// vector that is pulled towards the embedding of the target time.
#ifndef RELOCL_MODEL_RELOCNET_HPP
#define RELOCL_MODEL_RELOCNET_HPP

#include "relocl/graph/graph.hpp"
#include "relocl/model/parameters.hpp"
#include "relocl/numcore/tape.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace relocl::model {

using num::Tape;
using num::Var;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int embedding_dim = 16;
  int rounds = 2;
  int hidden_dim = 32;
  double move_threshold = 0.5;
  int horizon_minutes = 10;

  void validate() const {
    if (embedding_dim < 2) throw ModelError("embedding_dim must be >= 2");
    if (rounds < 1) throw ModelError("rounds must be >= 1");
    if (hidden_dim < 1) throw ModelError("hidden_dim must be >= 1");
    if (!(move_threshold > 0.0 && move_threshold < 1.0)) throw ModelError("move_threshold must lie in (0, 1)");
    if (horizon_minutes <= 0) throw ModelError("horizon must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Positions of every tensor inside the ParameterSet built by init_parameters.
struct ParameterLayout {
  std::size_t object_embedding = 0;
  std::size_t location_embedding = 0;
  struct Round {
    std::size_t self, up, down, bias;
  };
  std::vector<Round> rounds;
  std::size_t edge_child = 0, edge_parent = 0, edge_bias = 0;
  std::size_t time_w1 = 0, time_b1 = 0, time_w2 = 0, time_b2 = 0, time_skip = 0;
  std::size_t move_edge = 0, move_time = 0, move_graph = 0, move_bias = 0, move_out = 0,
              move_out_bias = 0;
  std::size_t loc_edge = 0, loc_time = 0, loc_graph = 0, loc_bias = 0, loc_bilinear = 0;
  std::size_t ctx_w = 0, ctx_b = 0;
};

// Layout is a pure function of the config, so it is rebuilt rather than stored.
inline ParameterLayout layout_for(const ModelConfig& cfg) {
  ParameterLayout l;
  std::size_t i = 0;
  l.object_embedding = i++;
  l.location_embedding = i++;
  for (int r = 0; r < cfg.rounds; ++r) {
    l.rounds.push_back({i, i + 1, i + 2, i + 3});
    i += 4;
  }
  l.edge_child = i++;
  l.edge_parent = i++;
  l.edge_bias = i++;
  l.time_w1 = i++;
  l.time_b1 = i++;
  l.time_w2 = i++;
  l.time_b2 = i++;
  l.time_skip = i++;
  l.move_edge = i++;
  l.move_time = i++;
  l.move_graph = i++;
  l.move_bias = i++;
  l.move_out = i++;
  l.move_out_bias = i++;
  l.loc_edge = i++;
  l.loc_time = i++;
  l.loc_graph = i++;
  l.loc_bias = i++;
  l.loc_bilinear = i++;
  l.ctx_w = i++;
  l.ctx_b = i++;
  return l;
}

// Embedding tables uniform in +-1/sqrt(d); hidden weights Glorot-uniform;
// biases zero; the final layers of the move and location heads zero so a
// fresh model predicts move probability 0.5 and uniform locations.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, const graph::EntityCatalog& catalog,
                                     std::uint64_t seed) {
  cfg.validate();
  const Eigen::Index d = cfg.embedding_dim;
  const Eigen::Index h = cfg.hidden_dim;
  const Eigen::Index n_obj = catalog.object_count();
  const Eigen::Index n_loc = catalog.location_count();
  std::mt19937_64 rng(seed);

  auto uniform = [&](Eigen::Index r, Eigen::Index c, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix<Scalar> m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(u(rng));
    return m;
  };
  auto glorot = [&](Eigen::Index r, Eigen::Index c) {
    return uniform(r, c, std::sqrt(6.0 / static_cast<double>(r + c)));
  };
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return Matrix<Scalar>::Zero(r, c).eval(); };
  const double embed_bound = 1.0 / std::sqrt(static_cast<double>(d));

  ParameterSet<Scalar> p;
  p.add("embed.object", uniform(n_obj, d, embed_bound));
  p.add("embed.location", uniform(n_loc, d, embed_bound));
  for (int r = 0; r < cfg.rounds; ++r) {
    const std::string prefix = "mp" + std::to_string(r) + ".";
    p.add(prefix + "self", glorot(d, d));
    p.add(prefix + "up", glorot(d, d));
    p.add(prefix + "down", glorot(d, d));
    p.add(prefix + "bias", zeros(1, d));
  }
  p.add("edge.child", glorot(d, d));
  p.add("edge.parent", glorot(d, d));
  p.add("edge.bias", zeros(1, d));
  p.add("time.w1", glorot(graph::kTimeEncodingSize, h));
  p.add("time.b1", zeros(1, h));
  p.add("time.w2", glorot(h, d));
  p.add("time.b2", zeros(1, d));
  p.add("time.skip", glorot(graph::kTimeEncodingSize, d));
  p.add("move.edge", glorot(d, h));
  p.add("move.time", glorot(d, h));
  p.add("move.graph", glorot(d, h));
  p.add("move.bias", zeros(1, h));
  p.add("move.out", zeros(h, 2));
  p.add("move.out_bias", zeros(1, 2));
  p.add("loc.edge", glorot(d, h));
  p.add("loc.time", glorot(d, h));
  p.add("loc.graph", glorot(d, h));
  p.add("loc.bias", zeros(1, h));
  p.add("loc.bilinear", zeros(h, d));
  p.add("ctx.w", glorot(d, d));
  p.add("ctx.b", zeros(1, d));
  return p;
}

// Parameters recorded as leaves on one tape.
template <typename Scalar>
struct BoundParameters {
  std::vector<Var<Scalar>> leaves;
  ParameterLayout layout;

  [[nodiscard]] Var<Scalar> operator[](std::size_t i) const { return leaves[i]; }
};

template <typename Scalar>
BoundParameters<Scalar> bind(Tape<Scalar>& tape, const ParameterSet<Scalar>& params,
                             const ModelConfig& cfg) {
  BoundParameters<Scalar> b;
  b.layout = layout_for(cfg);
  b.leaves.reserve(params.size());
  for (const auto& v : params.values()) b.leaves.push_back(tape.leaf(v));
  return b;
}

// Node, edge and time embeddings of one snapshot (all of width d).
template <typename Scalar>
struct EncodedGraph {
  Var<Scalar> objects;    // n_obj x d
  Var<Scalar> locations;  // n_loc x d
  Var<Scalar> edges;      // n_obj x d, one per is-in edge
  Var<Scalar> time;       // 1 x d
};

template <typename Scalar>
struct EmbeddingBundle {
  Matrix<Scalar> nodes;  // objects then locations
  Matrix<Scalar> edges;
  Matrix<Scalar> time;   // 1 x d
};

namespace detail {

inline std::vector<int> parent_locations(const graph::GraphSnapshot& s, int expected_objects) {
  if (!s.catalog) throw ModelError("snapshot has no catalog");
  if (static_cast<int>(s.parent.size()) != expected_objects ||
      s.catalog->object_count() != expected_objects) {
    throw ModelError("snapshot catalog does not match the model's object table");
  }
  std::vector<int> out(s.parent.size());
  for (std::size_t o = 0; o < s.parent.size(); ++o) {
    if (!s.catalog->is_location(s.parent[o])) {
      throw ModelError("unknown or invalid parent for object '" + s.catalog->object(static_cast<int>(o)).id + "'");
    }
    out[o] = s.catalog->location_index(s.parent[o]);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> encoding_row(graph::Timestamp t) {
  const auto c = graph::time_encoding(t);
  Matrix<Scalar> row(1, static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = static_cast<Scalar>(c[i]);
  return row;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> embed_time(Tape<Scalar>& tape, const BoundParameters<Scalar>& p, graph::Timestamp t) {
  const auto& l = p.layout;
  auto c = tape.constant(detail::encoding_row<Scalar>(t));
  auto hidden = num::relu(num::matmul(c, p[l.time_w1]) + p[l.time_b1]);
  // The linear path keeps the embedding away from zero when every hidden unit is off.
  return num::matmul(hidden, p[l.time_w2]) + p[l.time_b2] + num::matmul(c, p[l.time_skip]);
}

template <typename Scalar>
EncodedGraph<Scalar> encode(Tape<Scalar>& tape, const BoundParameters<Scalar>& p,
                            const graph::GraphSnapshot& snapshot) {
  using namespace relocl::num;
  const auto& l = p.layout;
  const Eigen::Index n_obj = p[l.object_embedding].rows();
  const Eigen::Index n_loc = p[l.location_embedding].rows();
  if (snapshot.catalog && snapshot.catalog->location_count() != n_loc) {
    throw ModelError("snapshot catalog does not match the model's location table");
  }
  const auto parent = detail::parent_locations(snapshot, static_cast<int>(n_obj));

  Var<Scalar> objs = p[l.object_embedding];
  Var<Scalar> locs = p[l.location_embedding];
  for (const auto& r : l.rounds) {
    auto down = gather_rows(matmul(locs, p[r.down]), parent);
    auto up = scatter_add_rows(matmul(objs, p[r.up]), parent, n_loc);
    auto next_objs = objs + relu(matmul(objs, p[r.self]) + down + p[r.bias]);
    auto next_locs = locs + relu(matmul(locs, p[r.self]) + up + p[r.bias]);
    objs = next_objs;
    locs = next_locs;
  }
  objs = normalize_rows(objs);
  locs = normalize_rows(locs);
  auto edges = relu(matmul(objs, p[l.edge_child]) +
                    gather_rows(matmul(locs, p[l.edge_parent]), parent) + p[l.edge_bias]);
  return {objs, locs, edges, embed_time(tape, p, snapshot.time)};
}

template <typename Scalar>
EmbeddingBundle<Scalar> to_bundle(const EncodedGraph<Scalar>& g) {
  EmbeddingBundle<Scalar> b;
  b.nodes.resize(g.objects.rows() + g.locations.rows(), g.objects.cols());
  b.nodes << g.objects.value(), g.locations.value();
  b.edges = g.edges.value();
  b.time = g.time.value();
  return b;
}

template <typename Scalar>
EmbeddingBundle<Scalar> encode(const graph::GraphSnapshot& snapshot, const ParameterSet<Scalar>& params,
                               const ModelConfig& cfg) {
  Tape<Scalar> tape;
  auto p = bind(tape, params, cfg);
  return to_bundle(encode(tape, p, snapshot));
}

// Raw head outputs on a tape.
template <typename Scalar>
struct PredictionVars {
  EncodedGraph<Scalar> encoded;
  Var<Scalar> move_logits;      // n_obj x 2, column 1 = moves
  Var<Scalar> location_scores;  // n_obj x n_loc
  Var<Scalar> context;          // 1 x d
};

template <typename Scalar>
PredictionVars<Scalar> predict(Tape<Scalar>& tape, const BoundParameters<Scalar>& p,
                               const graph::GraphSnapshot& snapshot) {
  using namespace relocl::num;
  const auto& l = p.layout;
  auto enc = encode(tape, p, snapshot);
  const Scalar n_obj = static_cast<Scalar>(enc.objects.rows());
  const Scalar n_loc = static_cast<Scalar>(enc.locations.rows());
  const Scalar n_all = n_obj + n_loc;
  // mean over every node
  auto graph_vec = (n_obj / n_all) * mean_rows(enc.objects) + (n_loc / n_all) * mean_rows(enc.locations);

  auto move_row = matmul(enc.time, p[l.move_time]) + matmul(graph_vec, p[l.move_graph]) + p[l.move_bias];
  auto move_hidden = relu(matmul(enc.edges, p[l.move_edge]) + move_row);
  auto move_logits = matmul(move_hidden, p[l.move_out]) + p[l.move_out_bias];

  auto loc_row = matmul(enc.time, p[l.loc_time]) + matmul(graph_vec, p[l.loc_graph]) + p[l.loc_bias];
  auto query = relu(matmul(enc.edges, p[l.loc_edge]) + loc_row);
  auto scores = matmul_nt(matmul(query, p[l.loc_bilinear]), enc.locations);

  auto context = matmul(graph_vec, p[l.ctx_w]) + p[l.ctx_b];
  return {enc, move_logits, scores, context};
}

template <typename Scalar>
struct PredictedGraph {
  Matrix<Scalar> move_logits;
  Matrix<Scalar> location_scores;
  Matrix<Scalar> context;

  [[nodiscard]] int object_count() const { return static_cast<int>(move_logits.rows()); }

  // P(move) per object.
  [[nodiscard]] Vector<Scalar> move_probability() const {
    return num::softmax_rows<Scalar>(move_logits).col(1);
  }
  [[nodiscard]] Matrix<Scalar> location_distribution() const {
    return num::softmax_rows<Scalar>(location_scores);
  }
};

template <typename Scalar>
PredictedGraph<Scalar> predict(const graph::GraphSnapshot& snapshot, const ParameterSet<Scalar>& params,
                               const ModelConfig& cfg) {
  Tape<Scalar> tape;
  auto p = bind(tape, params, cfg);
  auto out = predict(tape, p, snapshot);
  return {out.move_logits.value(), out.location_scores.value(), out.context.value()};
}

template <typename Scalar>
struct LossVars {
  Var<Scalar> classification;
  Var<Scalar> location;
  Var<Scalar> context;
  Var<Scalar> total;
};

template <typename Scalar>
struct LossBreakdown {
  Scalar classification = 0;
  Scalar location = 0;
  Scalar context = 0;
  Scalar total = 0;
};

template <typename Scalar>
LossBreakdown<Scalar> values(const LossVars<Scalar>& v) {
  return {v.classification.scalar(), v.location.scalar(), v.context.scalar(), v.total.scalar()};
}

// Classification over every object (moved or not), location cross-entropy
// over moved objects only (zero when nothing moved), cosine agreement between
// the context vector and the target-time embedding.
template <typename Scalar>
LossVars<Scalar> model_loss(Var<Scalar> move_logits, Var<Scalar> location_scores, Var<Scalar> context,
                            Var<Scalar> target_time, const graph::GraphSnapshot& target,
                            const graph::GraphSnapshot& current) {
  using namespace relocl::num;
  Tape<Scalar>& tape = *move_logits.tape();
  if (!graph::same_catalog(target.catalog, current.catalog)) throw ModelError("model_loss: catalog mismatch");
  const int n_obj = static_cast<int>(move_logits.rows());
  const auto now = detail::parent_locations(current, n_obj);
  const auto next = detail::parent_locations(target, n_obj);

  std::vector<int> moved_label(static_cast<std::size_t>(n_obj));
  std::vector<int> moved_rows;
  std::vector<int> moved_targets;
  for (int o = 0; o < n_obj; ++o) {
    const bool moved = now[static_cast<std::size_t>(o)] != next[static_cast<std::size_t>(o)];
    moved_label[static_cast<std::size_t>(o)] = moved ? 1 : 0;
    if (moved) {
      moved_rows.push_back(o);
      moved_targets.push_back(next[static_cast<std::size_t>(o)]);
    }
  }
  auto cls = softmax_cross_entropy(move_logits, std::move(moved_label));
  Var<Scalar> loc = moved_rows.empty()
                        ? tape.constant(Matrix<Scalar>::Zero(1, 1))
                        : softmax_cross_entropy(gather_rows(location_scores, moved_rows), moved_targets);
  auto ctx = cosine_embedding_loss(context, target_time, 1);
  return {cls, loc, ctx, cls + loc + ctx};
}

template <typename Scalar>
LossVars<Scalar> model_loss(Tape<Scalar>& tape, const BoundParameters<Scalar>& p,
                            const PredictionVars<Scalar>& pred, const graph::GraphSnapshot& target,
                            const graph::GraphSnapshot& current) {
  return model_loss(pred.move_logits, pred.location_scores, pred.context, embed_time(tape, p, target.time),
                    target, current);
}

// Value-level loss for an already computed prediction. `target_time` is the
// model's embedding of the target timestamp.
template <typename Scalar>
LossBreakdown<Scalar> model_loss(const PredictedGraph<Scalar>& pred, const Matrix<Scalar>& target_time,
                                 const graph::GraphSnapshot& target, const graph::GraphSnapshot& current) {
  Tape<Scalar> tape;
  return values(model_loss(tape.constant(pred.move_logits), tape.constant(pred.location_scores),
                           tape.constant(pred.context), tape.constant(target_time), target, current));
}

// An object is predicted to move iff P(move) > threshold and its most likely
// location (lowest index on ties) differs from where it is now.
template <typename Scalar>
std::vector<graph::RelocationEvent> decode_relocations(const PredictedGraph<Scalar>& pred,
                                                       const graph::GraphSnapshot& current,
                                                       double threshold, int horizon_minutes = 0) {
  const auto now = detail::parent_locations(current, pred.object_count());
  const Vector<Scalar> p_move = pred.move_probability();
  std::vector<graph::RelocationEvent> out;
  for (int o = 0; o < pred.object_count(); ++o) {
    if (!(static_cast<double>(p_move(o)) > threshold)) continue;
    const auto row = pred.location_scores.row(o);
    int best = 0;
    for (int c = 1; c < row.cols(); ++c) {
      if (row(c) > row(best)) best = c;
    }
    if (best == now[static_cast<std::size_t>(o)]) continue;
    out.push_back({o, now[static_cast<std::size_t>(o)], best, current.time,
                   graph::Timestamp{current.time.minutes + horizon_minutes}});
  }
  return out;
}

// Total model loss and its gradient for one (current, target) pair.
template <typename Scalar>
struct LossAndGradient {
  LossBreakdown<Scalar> loss;
  std::vector<Matrix<Scalar>> gradient;
};

template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                          const graph::GraphSnapshot& current,
                                          const graph::GraphSnapshot& target, Scalar scale = Scalar(1)) {
  Tape<Scalar> tape;
  auto p = bind(tape, params, cfg);
  auto pred = predict(tape, p, current);
  auto loss = model_loss(tape, p, pred, target, current);
  auto objective = scale == Scalar(1) ? loss.total : scale * loss.total;
  return {values(loss), num::gradient<Scalar>(objective, p.leaves)};
}

}  // namespace relocl::model

#endif  // RELOCL_MODEL_RELOCNET_HPP
