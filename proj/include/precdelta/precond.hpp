#pragma once

#include "precdelta/types.hpp"

#include <cmath>
#include <utility>

namespace precdelta {

// ---------------------------------------------------------------------------
// Exact inverse-Gram state: P_t = (sum_i k_i k_i^T + lambda I)^{-1}, kept via
// Sherman-Morrison. Sequential only; there is no chunkwise form for it.
// ---------------------------------------------------------------------------

template <class Scalar>
struct ExactGramStateT {
  Mat<Scalar> P;  // d_k x d_k, symmetric positive definite

  static ExactGramStateT init(Index d_k, Scalar lambda) {
    if (lambda <= Scalar(0)) throw std::invalid_argument("ExactGramState: lambda must be > 0");
    return {Mat<Scalar>::Identity(d_k, d_k) / lambda};
  }
};

using ExactGramState = ExactGramStateT<double>;

// Write key k~ = P_{t-1} k / (1 + k^T P_{t-1} k), computed before the rank-1
// update, then P_t = P_{t-1} - (P_{t-1} k)(P_{t-1} k)^T / (1 + k^T P_{t-1} k).
template <class Scalar>
std::pair<ExactGramStateT<Scalar>, Vec<Scalar>> exact_update_and_write_key(const ExactGramStateT<Scalar>& state,
                                                                           const Vec<Scalar>& k) {
  if (k.size() != state.P.rows()) throw std::invalid_argument("exact_update_and_write_key: dimension mismatch");
  const Vec<Scalar> Pk = state.P * k;
  const Scalar denom = Scalar(1) + k.dot(Pk);
  Vec<Scalar> k_write = Pk / denom;
  ExactGramStateT<Scalar> next{state.P - Pk * k_write.transpose()};
  if (!next.P.allFinite() || !k_write.allFinite())
    throw std::runtime_error("exact_update_and_write_key: non-finite intermediate (lambda too small?)");
  return {std::move(next), std::move(k_write)};
}

// q-side transform for the ATQ path (applied after the token's key update).
template <class Scalar>
Vec<Scalar> exact_apply_query(const ExactGramStateT<Scalar>& state, const Vec<Scalar>& q) {
  if (q.size() != state.P.rows()) throw std::invalid_argument("exact_apply_query: dimension mismatch");
  return state.P * q;
}

// ---------------------------------------------------------------------------
// Diagonal Gram state: A_t = alphaP_t A_{t-1} + betaP_t (k (.) k).
// ---------------------------------------------------------------------------

template <class Scalar>
struct DiagGramStateT {
  Vec<Scalar> A;  // d_k coordinatewise second moments

  static DiagGramStateT Zero(Index d_k) { return {Vec<Scalar>::Zero(d_k)}; }
};

using DiagGramState = DiagGramStateT<double>;

template <class Scalar>
DiagGramStateT<Scalar> diag_update(const DiagGramStateT<Scalar>& state, const Vec<Scalar>& k, Scalar alphaP,
                                   Scalar betaP) {
  if (k.size() != state.A.size()) throw std::invalid_argument("diag_update: dimension mismatch");
  return {alphaP * state.A + betaP * k.cwiseProduct(k)};
}

// ---------------------------------------------------------------------------
// Stable squash: B = exp(-log(x) * r / (1 + |r|)), r = log(A) - mu.
// Maps the accumulator into (1/x, x), monotone decreasing per coordinate.
// A is clamped to >= kSquashClamp before the log; no ridge is needed here.
// ---------------------------------------------------------------------------

inline constexpr double kSquashClamp = 1e-12;

template <class Scalar>
struct SquashParamsT {
  Scalar mu = Scalar(1);  // log-space center, > 0
  Scalar x = Scalar(1.5);

  void validate() const {
    if (mu <= Scalar(0)) throw std::invalid_argument("SquashParams: mu must be > 0");
    if (x < Scalar(1)) throw std::invalid_argument("SquashParams: x must be >= 1");
  }
};

using SquashParams = SquashParamsT<double>;

template <class Scalar>
Vec<Scalar> squash(const Vec<Scalar>& A, const SquashParamsT<Scalar>& params) {
  params.validate();
  if ((A.array() < Scalar(0)).any()) throw std::invalid_argument("squash: negative accumulator entry");
  const auto r = A.array().max(Scalar(kSquashClamp)).log() - params.mu;
  const auto s = r / (Scalar(1) + r.abs());
  return (-std::log(params.x) * s).exp().matrix();
}

// Elementwise squash over stacked rows.
template <class Scalar>
Mat<Scalar> squash_rows(const Mat<Scalar>& A, const SquashParamsT<Scalar>& params) {
  params.validate();
  const auto r = A.array().max(Scalar(kSquashClamp)).log() - params.mu;
  const auto s = r / (Scalar(1) + r.abs());
  return (-std::log(params.x) * s).exp().matrix();
}

// ---------------------------------------------------------------------------
// Chunkwise prefix-scan forms of the diagonal preconditioner. The state update
// is an additive prefix-sum, so within-chunk rows come from decayed masks over
// the squared keys plus the carried boundary state.
//
//   AtqRaw      q~_t = q_t (/) (A_t + lambda)          inclusive mask
//   AtqStable   q~_t = B(A_t) (.) q_t                  inclusive mask
//   AtkUnstable k~_t = z_t / (1 + k_t . z_t),          exclusive (shifted) mask
//               z_t = k_t (/) (A_{t-1} + lambda)
//   AtkStable   k~_t = B(A_t) (.) k_t                  inclusive mask
// ---------------------------------------------------------------------------

enum class PrecondScanMode { AtqRaw, AtqStable, AtkUnstable, AtkStable };

template <class Scalar>
struct PrecondScanResult {
  Mat<Scalar> transformed;        // C x d_k
  DiagGramStateT<Scalar> boundary;  // end-of-chunk state
};

// keys drive the accumulator; target holds the rows being transformed
// (queries for the ATQ modes, the keys themselves for the ATK modes).
template <class Scalar>
PrecondScanResult<Scalar> chunk_precond_scan(const Mat<Scalar>& keys, const Mat<Scalar>& target,
                                             const DiagGramStateT<Scalar>& boundary, const Vec<Scalar>& alphaP,
                                             const Vec<Scalar>& betaP, PrecondScanMode mode,
                                             const SquashParamsT<Scalar>& params, Scalar lambda) {
  const Index C = keys.rows();
  const Index d = keys.cols();
  if (target.rows() != C || target.cols() != d) throw std::invalid_argument("chunk_precond_scan: target shape mismatch");
  if (boundary.A.size() != d) throw std::invalid_argument("chunk_precond_scan: boundary dimension mismatch");
  if (alphaP.size() < C || betaP.size() < C) throw std::invalid_argument("chunk_precond_scan: chunk longer than gates");

  // Within-chunk inclusive rows via the additive prefix scan
  // A_j = exp(L_j) A_bound + sum_{k<=j} exp(L_j - L_k) betaP_k k_k^2,
  // accumulated left to right so the ratio weights never materialize.
  Mat<Scalar> A_rows(C, d);
  {
    Vec<Scalar> acc = boundary.A;
    for (Index j = 0; j < C; ++j) {
      if (alphaP[j] <= Scalar(0)) throw std::invalid_argument("chunk_precond_scan: alphaP must be > 0");
      acc = alphaP[j] * acc + betaP[j] * keys.row(j).transpose().cwiseProduct(keys.row(j).transpose());
      A_rows.row(j) = acc.transpose();
    }
  }
  DiagGramStateT<Scalar> out_boundary{C > 0 ? Vec<Scalar>(A_rows.row(C - 1).transpose()) : boundary.A};

  Mat<Scalar> transformed(C, d);
  switch (mode) {
    case PrecondScanMode::AtqRaw:
      transformed = (target.array() / (A_rows.array() + lambda)).matrix();
      break;
    case PrecondScanMode::AtqStable:
      transformed = squash_rows(A_rows, params).cwiseProduct(target);
      break;
    case PrecondScanMode::AtkStable:
      transformed = squash_rows(A_rows, params).cwiseProduct(target);
      break;
    case PrecondScanMode::AtkUnstable: {
      // Shifted rows A^pre_j = A_{j-1}; first row carries the boundary state.
      Mat<Scalar> A_pre(C, d);
      if (C > 0) {
        A_pre.row(0) = boundary.A.transpose();
        if (C > 1) A_pre.bottomRows(C - 1) = A_rows.topRows(C - 1);
      }
      const Mat<Scalar> P_pre = (A_pre.array() + lambda).inverse().matrix();
      const Vec<Scalar> denom =
          (Vec<Scalar>::Ones(C).array() + (P_pre.cwiseProduct(keys.cwiseProduct(keys)) * Vec<Scalar>::Ones(d)).array())
              .matrix();
      transformed = P_pre.cwiseProduct(target);
      transformed.array().colwise() /= denom.array();
      break;
    }
  }
  return {std::move(transformed), std::move(out_boundary)};
}

}  // namespace precdelta
