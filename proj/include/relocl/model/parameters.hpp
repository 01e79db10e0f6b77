#ifndef RELOCL_MODEL_PARAMETERS_HPP
#define RELOCL_MODEL_PARAMETERS_HPP

#include "relocl/numcore/tape.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace relocl::model {

using num::Matrix;
using num::Vector;

// Named parameter tensors with a stable flattening order (insertion order,
// each tensor row-major).
template <typename Scalar>
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix<Scalar> value) {
    for (const auto& n : names_) {
      if (n == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_.at(i); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] std::vector<Matrix<Scalar>>& values() { return values_; }
  [[nodiscard]] const std::vector<Matrix<Scalar>>& values() const { return values_; }
  [[nodiscard]] Matrix<Scalar>& operator[](std::size_t i) { return values_.at(i); }
  [[nodiscard]] const Matrix<Scalar>& operator[](std::size_t i) const { return values_.at(i); }

  [[nodiscard]] std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  // Offset of tensor i inside the flat view.
  [[nodiscard]] std::size_t offset(std::size_t i) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < i; ++k) off += static_cast<std::size_t>(values_[k].size());
    return off;
  }

  [[nodiscard]] std::size_t flat_size() const { return offset(values_.size()); }

  [[nodiscard]] Vector<Scalar> flatten() const { return flatten(values_); }

  static Vector<Scalar> flatten(const std::vector<Matrix<Scalar>>& tensors) {
    std::size_t n = 0;
    for (const auto& v : tensors) n += static_cast<std::size_t>(v.size());
    Vector<Scalar> flat(static_cast<Eigen::Index>(n));
    Eigen::Index off = 0;
    for (const auto& v : tensors) {
      flat.segment(off, v.size()) = v.template reshaped<Eigen::RowMajor>();
      off += v.size();
    }
    return flat;
  }

  void assign_flat(const Vector<Scalar>& flat) {
    if (static_cast<std::size_t>(flat.size()) != flat_size()) {
      throw std::invalid_argument("assign_flat: length mismatch");
    }
    Eigen::Index off = 0;
    for (auto& v : values_) {
      v.template reshaped<Eigen::RowMajor>() = flat.segment(off, v.size());
      off += v.size();
    }
  }

  // Same names, shapes and values bit for bit.
  [[nodiscard]] bool same_bits(const ParameterSet& other) const {
    return names_ == other.names_ && num::same_bits(values_, other.values_);
  }

  template <typename Other>
  [[nodiscard]] ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<Scalar>> values_;
};

}  // namespace relocl::model

#endif  // RELOCL_MODEL_PARAMETERS_HPP
