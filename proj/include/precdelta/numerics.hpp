#pragma once

#include "precdelta/types.hpp"

namespace precdelta {

// Forward substitution for L X = B with L unit lower triangular (the
// (I + tril(.,-1)) systems behind the UT transform). No pivoting: the unit
// diagonal is guaranteed by construction of those systems. Entries above the
// diagonal and the stored diagonal of L are ignored.
template <class Scalar>
Mat<Scalar> solve_unit_lower_triangular(const Mat<Scalar>& L, const Mat<Scalar>& B) {
  if (L.rows() != L.cols()) throw std::invalid_argument("solve_unit_lower_triangular: L must be square");
  if (L.rows() != B.rows()) throw std::invalid_argument("solve_unit_lower_triangular: L and B row counts disagree");
  if (!L.allFinite() || !B.allFinite()) throw std::invalid_argument("solve_unit_lower_triangular: non-finite input");
  Mat<Scalar> X = B;
  L.template triangularView<Eigen::UnitLower>().solveInPlace(X);
  return X;
}

enum class PrefixMode { Inclusive, Exclusive };

// Elementwise running products down a gate sequence. Matrix input treats rows
// as time steps, columns independently. Exclusive starts from the empty
// product (= 1). Gates must be strictly positive.
template <class Scalar>
Mat<Scalar> prefix_products(const Mat<Scalar>& values, PrefixMode mode) {
  if ((values.array() <= Scalar(0)).any())
    throw std::invalid_argument("prefix_products: non-positive entry");
  Mat<Scalar> out(values.rows(), values.cols());
  Eigen::Array<Scalar, 1, Eigen::Dynamic> run = Eigen::Array<Scalar, 1, Eigen::Dynamic>::Ones(values.cols());
  for (Index t = 0; t < values.rows(); ++t) {
    if (mode == PrefixMode::Inclusive) {
      run *= values.row(t).array();
      out.row(t) = run.matrix();
    } else {
      out.row(t) = run.matrix();
      run *= values.row(t).array();
    }
  }
  return out;
}

template <class Scalar>
Vec<Scalar> prefix_products(const Vec<Scalar>& values, PrefixMode mode) {
  Mat<Scalar> m(values.size(), 1);
  m.col(0) = values;
  return prefix_products(m, mode).col(0);
}

}  // namespace precdelta
