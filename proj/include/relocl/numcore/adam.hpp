#ifndef RELOCL_NUMCORE_ADAM_HPP
#define RELOCL_NUMCORE_ADAM_HPP

#include "relocl/numcore/tape.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace relocl::num {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

template <typename Scalar>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamHyper h) : hyper(h) {}

  // Allocates zeroed accumulators shaped like `params`.
  template <typename Range>
  void init(const Range& params) {
    first_moment.clear();
    second_moment.clear();
    for (const auto& p : params) {
      first_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      second_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
    step = 0;
  }
};

template <typename Scalar>
bool same_bits(const AdamState<Scalar>& a, const AdamState<Scalar>& b) {
  return a.hyper == b.hyper && a.step == b.step && same_bits(a.first_moment, b.first_moment) &&
         same_bits(a.second_moment, b.second_moment);
}

// One bias-corrected Adam update applied in place.
template <typename Scalar>
void adam_step(std::vector<Matrix<Scalar>>& params, const std::vector<Matrix<Scalar>>& grads,
               AdamState<Scalar>& state) {
  if (state.first_moment.empty() && !params.empty()) state.init(params);
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw NumError("adam_step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols() ||
        state.first_moment[i].rows() != params[i].rows() ||
        state.first_moment[i].cols() != params[i].cols()) {
      throw NumError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const auto& h = state.hyper;
  const Scalar b1 = static_cast<Scalar>(h.beta1);
  const Scalar b2 = static_cast<Scalar>(h.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(h.beta1, static_cast<double>(state.step)));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(h.beta2, static_cast<double>(state.step)));
  const Scalar lr = static_cast<Scalar>(h.lr);
  const Scalar eps = static_cast<Scalar>(h.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    params[i].array() -= lr * (m.array() / correction1) /
                         ((v.array() / correction2).sqrt() + eps);
  }
}

}  // namespace relocl::num

#endif  // RELOCL_NUMCORE_ADAM_HPP
