#pragma once

#include <span>
#include <string>

#include "mlpreg/errors.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n paired observations: inputs row t is Z_t (length q), targets row t is Y_t
/// (length d).
struct Dataset {
  RowMatrix inputs;
  RowMatrix targets;

  Dataset() = default;
  Dataset(RowMatrix z, RowMatrix y) : inputs(std::move(z)), targets(std::move(y)) { validate(); }

  Eigen::Index n() const { return inputs.rows(); }
  Eigen::Index q() const { return inputs.cols(); }
  Eigen::Index d() const { return targets.cols(); }

  void validate() const {
    if (inputs.rows() < 1) throw InvalidArgument("Dataset: need at least one observation");
    detail::require_dims(inputs.rows() == targets.rows(),
                         "Dataset: " + std::to_string(inputs.rows()) + " input rows vs " +
                             std::to_string(targets.rows()) + " target rows");
  }
};

namespace detail {

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index t) {
  return {m.data() + t * m.cols(), static_cast<size_t>(m.cols())};
}

}  // namespace detail
}  // namespace mlpreg
