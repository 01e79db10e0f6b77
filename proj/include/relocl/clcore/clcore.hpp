// Continual-learning pieces: diagonal Fisher importance, the quadratic
// consolidation penalty, mean-feature informativeness and the decaying replay
// buffer.
#ifndef RELOCL_CLCORE_CLCORE_HPP
#define RELOCL_CLCORE_CLCORE_HPP

#include "relocl/graph/graph.hpp"
#include "relocl/model/parameters.hpp"
#include "relocl/model/relocnet.hpp"
#include "relocl/numcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace relocl::cl {

using model::ParameterSet;
using num::Matrix;
using num::Tape;
using num::Var;
using num::Vector;

class CLError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CLHyperparams {
  double lambda = 200.0;
  double beta = 10.0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw CLError("lambda must be finite and >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw CLError("beta must be finite and > 0");
  }
  friend bool operator==(const CLHyperparams&, const CLHyperparams&) = default;
};

// One training sample: the snapshot at t and the snapshot at t + delta.
struct SnapshotPair {
  graph::GraphSnapshot input;
  graph::GraphSnapshot target;

  friend bool operator==(const SnapshotPair&, const SnapshotPair&) = default;
};

// Importance per parameter, in ParameterSet flattening order.
template <typename Scalar>
struct FisherDiagonal {
  Vector<Scalar> values;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

template <typename Scalar>
struct ConsolidationAnchor {
  ParameterSet<Scalar> theta_prev;
  FisherDiagonal<Scalar> fisher;

  void check() const {
    if (fisher.size() != theta_prev.flat_size()) throw CLError("anchor: Fisher length does not match parameters");
  }
};

// Fisher slice of tensor i reshaped to that tensor's shape.
template <typename Scalar>
Matrix<Scalar> fisher_block(const ConsolidationAnchor<Scalar>& anchor, std::size_t i) {
  const auto& shape = anchor.theta_prev[i];
  Matrix<Scalar> out(shape.rows(), shape.cols());
  out.template reshaped<Eigen::RowMajor>() =
      anchor.fisher.values.segment(static_cast<Eigen::Index>(anchor.theta_prev.offset(i)), shape.size());
  return out;
}

// (lambda / 2) * sum_i F_i (theta_i - theta_prev_i)^2, recorded on the tape.
template <typename Scalar>
Var<Scalar> consolidation_loss(Tape<Scalar>& tape, std::span<const Var<Scalar>> params,
                               const ConsolidationAnchor<Scalar>& anchor, double lambda) {
  anchor.check();
  if (params.size() != anchor.theta_prev.size()) throw CLError("consolidation_loss: parameter count mismatch");
  Var<Scalar> total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& prev = anchor.theta_prev[i];
    if (params[i].rows() != prev.rows() || params[i].cols() != prev.cols()) {
      throw CLError("consolidation_loss: shape mismatch for '" + anchor.theta_prev.name(i) + "'");
    }
    auto diff = params[i] - tape.constant(prev);
    auto term = num::sum(num::cwise_product(tape.constant(fisher_block(anchor, i)), num::cwise_product(diff, diff)));
    total = total.valid() ? total + term : term;
  }
  if (!total.valid()) return tape.constant(Matrix<Scalar>::Zero(1, 1));
  return static_cast<Scalar>(lambda / 2.0) * total;
}

template <typename Scalar>
Scalar consolidation_loss(const ParameterSet<Scalar>& theta, const ConsolidationAnchor<Scalar>& anchor,
                          double lambda) {
  anchor.check();
  if (theta.flat_size() != anchor.theta_prev.flat_size()) throw CLError("consolidation_loss: length mismatch");
  const Vector<Scalar> diff = theta.flatten() - anchor.theta_prev.flatten();
  return static_cast<Scalar>(lambda / 2.0) * (anchor.fisher.values.array() * diff.array().square()).sum();
}

// lambda * F (.) (theta - theta_prev), flattened.
template <typename Scalar>
Vector<Scalar> consolidation_gradient(const ParameterSet<Scalar>& theta, const ConsolidationAnchor<Scalar>& anchor,
                                      double lambda) {
  anchor.check();
  if (theta.flat_size() != anchor.theta_prev.flat_size()) throw CLError("consolidation_gradient: length mismatch");
  return static_cast<Scalar>(lambda) *
         (anchor.fisher.values.array() * (theta.flatten() - anchor.theta_prev.flatten()).array()).matrix();
}

// Adds lambda * F (.) (theta - theta_prev) to per-tensor gradients in place.
template <typename Scalar>
void add_consolidation_gradient(std::vector<Matrix<Scalar>>& grads, const ParameterSet<Scalar>& theta,
                                const ConsolidationAnchor<Scalar>& anchor, double lambda) {
  anchor.check();
  if (grads.size() != theta.size() || theta.size() != anchor.theta_prev.size()) {
    throw CLError("add_consolidation_gradient: tensor count mismatch");
  }
  const auto l = static_cast<Scalar>(lambda);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& t = theta[i];
    const auto& p = anchor.theta_prev[i];
    if (grads[i].size() != t.size() || p.size() != t.size()) throw CLError("add_consolidation_gradient: shape mismatch");
    const auto f = anchor.fisher.values.segment(off, t.size()).array();
    grads[i].template reshaped<Eigen::RowMajor>().array() +=
        l * f * (t.template reshaped<Eigen::RowMajor>().array() - p.template reshaped<Eigen::RowMajor>().array());
    off += t.size();
  }
}

// Mean over samples of the squared per-sample gradient. grad_fn(sample)
// returns one gradient tensor per parameter.
template <typename Scalar, typename Sample, typename GradFn>
FisherDiagonal<Scalar> fisher_diagonal(const ParameterSet<Scalar>& params, std::span<const Sample> samples,
                                       GradFn&& grad_fn) {
  if (samples.empty()) throw CLError("fisher_diagonal: no samples");
  Vector<Scalar> acc = Vector<Scalar>::Zero(static_cast<Eigen::Index>(params.flat_size()));
  for (const auto& s : samples) {
    const Vector<Scalar> g = ParameterSet<Scalar>::flatten(grad_fn(s));
    if (g.size() != acc.size()) throw CLError("fisher_diagonal: gradient length mismatch");
    acc.array() += g.array().square();
  }
  return {acc / static_cast<Scalar>(samples.size())};
}

template <typename Scalar>
struct MeanFeatureVector {
  Vector<Scalar> c;
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  std::size_t time_count = 0;

  friend bool operator==(const MeanFeatureVector&, const MeanFeatureVector&) = default;
};

namespace detail {

template <typename Scalar>
void accumulate(const model::EmbeddingBundle<Scalar>& b, Vector<Scalar>& sum, std::size_t& nodes,
                std::size_t& edges, std::size_t& times) {
  const auto d = sum.size();
  auto add = [&](const Matrix<Scalar>& m, std::size_t& count) {
    if (m.rows() == 0) return;
    if (m.cols() != d) throw CLError("embedding dimension mismatch");
    sum += m.colwise().sum().transpose();
    count += static_cast<std::size_t>(m.rows());
  };
  add(b.nodes, nodes);
  add(b.edges, edges);
  add(b.time, times);
}

template <typename Scalar>
Eigen::Index width(const model::EmbeddingBundle<Scalar>& b) {
  if (b.nodes.rows() > 0) return b.nodes.cols();
  if (b.edges.rows() > 0) return b.edges.cols();
  return b.time.cols();
}

}  // namespace detail

// Sum of every node, edge and time embedding over the bundles divided by how
// many there are.
template <typename Scalar>
MeanFeatureVector<Scalar> mean_feature_vector(std::span<const model::EmbeddingBundle<Scalar>> bundles) {
  if (bundles.empty()) throw CLError("mean_feature_vector: no bundles");
  MeanFeatureVector<Scalar> out;
  Vector<Scalar> sum = Vector<Scalar>::Zero(detail::width(bundles.front()));
  for (const auto& b : bundles) detail::accumulate(b, sum, out.node_count, out.edge_count, out.time_count);
  const std::size_t total = out.node_count + out.edge_count + out.time_count;
  if (total == 0) throw CLError("mean_feature_vector: bundles hold no embeddings");
  out.c = sum / static_cast<Scalar>(total);
  return out;
}

// Euclidean distance between a sample's mean embedding and c_l.
template <typename Scalar>
Scalar sample_informativeness(const model::EmbeddingBundle<Scalar>& bundle, const MeanFeatureVector<Scalar>& mean) {
  Vector<Scalar> sum = Vector<Scalar>::Zero(mean.c.size());
  std::size_t n = 0, e = 0, t = 0;
  detail::accumulate(bundle, sum, n, e, t);
  if (n + e + t == 0) throw CLError("sample_informativeness: empty bundle");
  return (sum / static_cast<Scalar>(n + e + t) - mean.c).norm();
}

struct BufferEntry {
  SnapshotPair sample;
  int session = 0;
  std::size_t index = 0;  // position of the sample inside its session's dataset
  double distance = 0.0;

  friend bool operator==(const BufferEntry&, const BufferEntry&) = default;
};

// Entries grouped by session in ascending order; within a session sorted by
// distance, then index.
struct MemoryBuffer {
  std::vector<BufferEntry> entries;
  std::vector<std::size_t> dataset_sizes;  // |D_j| as first seen
  std::vector<std::size_t> retained;       // entries per session

  [[nodiscard]] int sessions() const { return static_cast<int>(dataset_sizes.size()); }
  [[nodiscard]] std::size_t size() const { return entries.size(); }

  friend bool operator==(const MemoryBuffer&, const MemoryBuffer&) = default;
};

// Sizes kept at session k: |D_k| for the current session and
// round-half-up(|D_j| / (beta * (k - j))) for each past session j.
inline std::vector<std::size_t> buffer_quotas(std::span<const std::size_t> dataset_sizes, double beta, int k) {
  if (k < 0 || static_cast<std::size_t>(k) >= dataset_sizes.size()) throw CLError("buffer_quotas: bad session index");
  if (!(beta > 0.0)) throw CLError("buffer_quotas: beta must be > 0");
  std::vector<std::size_t> q(static_cast<std::size_t>(k) + 1);
  for (int j = 0; j < k; ++j) {
    const double share = static_cast<double>(dataset_sizes[static_cast<std::size_t>(j)]) / (beta * (k - j));
    q[static_cast<std::size_t>(j)] = static_cast<std::size_t>(std::floor(share + 0.5));
  }
  q[static_cast<std::size_t>(k)] = dataset_sizes[static_cast<std::size_t>(k)];
  return q;
}

namespace detail {

inline MemoryBuffer shrink(const MemoryBuffer& prev, std::span<const std::size_t> quotas) {
  MemoryBuffer out;
  std::size_t begin = 0;
  for (int j = 0; j < prev.sessions(); ++j) {
    const std::size_t have = prev.retained[static_cast<std::size_t>(j)];
    const std::size_t keep = std::min(have, quotas[static_cast<std::size_t>(j)]);
    out.entries.insert(out.entries.end(), prev.entries.begin() + static_cast<std::ptrdiff_t>(begin),
                       prev.entries.begin() + static_cast<std::ptrdiff_t>(begin + keep));
    out.dataset_sizes.push_back(prev.dataset_sizes[static_cast<std::size_t>(j)]);
    out.retained.push_back(keep);
    begin += have;
  }
  return out;
}

}  // namespace detail

// Past-session entries M_{k-1} would contribute to session k's training set,
// already cut down to their session-k quotas.
inline MemoryBuffer select_replay(const MemoryBuffer& prev, double beta, int k) {
  if (prev.sessions() != k) throw CLError("select_replay: buffer holds " + std::to_string(prev.sessions()) +
                                          " sessions, expected " + std::to_string(k));
  if (k == 0) return {};
  auto sizes = prev.dataset_sizes;
  sizes.push_back(0);
  const auto q = buffer_quotas(sizes, beta, k);
  return detail::shrink(prev, q);
}

// M_k from M_{k-1} and the whole of D_k with its distances to c_k.
inline MemoryBuffer buffer_update(const MemoryBuffer& prev, std::span<const SnapshotPair> current,
                                  std::span<const double> distances, const CLHyperparams& hyper, int k) {
  hyper.validate();
  if (current.size() != distances.size()) throw CLError("buffer_update: one distance per sample required");
  MemoryBuffer out = select_replay(prev, hyper.beta, k);
  std::vector<std::size_t> order(current.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  for (std::size_t i : order) out.entries.push_back({current[i], k, i, distances[i]});
  out.dataset_sizes.push_back(current.size());
  out.retained.push_back(current.size());
  return out;
}

template <typename Scalar>
MemoryBuffer buffer_update(const MemoryBuffer& prev, std::span<const SnapshotPair> current,
                           std::span<const model::EmbeddingBundle<Scalar>> bundles,
                           const MeanFeatureVector<Scalar>& mean, const CLHyperparams& hyper, int k) {
  if (bundles.size() != current.size()) throw CLError("buffer_update: one bundle per sample required");
  std::vector<double> dist;
  dist.reserve(bundles.size());
  for (const auto& b : bundles) dist.push_back(static_cast<double>(sample_informativeness(b, mean)));
  return buffer_update(prev, current, dist, hyper, k);
}

// Expected |M_k| for k = 0..sessions when every dataset has mean_size samples.
inline std::vector<double> buffer_size_forecast(double mean_size, double beta, int sessions) {
  if (sessions < 1) throw CLError("buffer_size_forecast: sessions must be >= 1");
  if (!(beta > 0.0)) throw CLError("buffer_size_forecast: beta must be > 0");
  std::vector<double> out;
  double harmonic = 0.0;
  for (int k = 0; k <= sessions; ++k) {
    if (k > 0) harmonic += 1.0 / k;
    out.push_back(mean_size * (1.0 + harmonic / beta));
  }
  return out;
}

}  // namespace relocl::cl

#endif  // RELOCL_CLCORE_CLCORE_HPP
