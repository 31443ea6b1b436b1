#pragma once

#include "precdelta/precond.hpp"
#include "precdelta/types.hpp"

#include <optional>
#include <vector>

namespace precdelta {

// ---------------------------------------------------------------------------
// Single-token steps. Gates are plain numbers; scalar decay passes alpha,
// diagonal decay passes alpha_diag, neither means no decay.
// ---------------------------------------------------------------------------

template <class Scalar>
struct GatesT {
  Scalar beta = Scalar(1);
  std::optional<Scalar> alpha;            // scalar decay
  std::optional<Vec<Scalar>> alpha_diag;  // elementwise decay on the key dimension
};

using Gates = GatesT<double>;

template <class Scalar>
Mat<Scalar> apply_decay(const Mat<Scalar>& S, const GatesT<Scalar>& g) {
  if (g.alpha_diag) {
    if (g.alpha_diag->size() != S.cols()) throw std::invalid_argument("apply_decay: alpha_diag dimension mismatch");
    return S * g.alpha_diag->asDiagonal();
  }
  if (g.alpha) return *g.alpha * S;
  return S;
}

// Offline solve: S_t = alpha_t S_{t-1} + beta_t v_t k_t^T.
template <class Scalar>
StateMatrixT<Scalar> step_offline(const StateMatrixT<Scalar>& state, const Vec<Scalar>& k, const Vec<Scalar>& v,
                                  const GatesT<Scalar>& g) {
  if (k.size() != state.S.cols() || v.size() != state.S.rows())
    throw std::invalid_argument("step_offline: dimension mismatch");
  Mat<Scalar> S = apply_decay(state.S, g);
  S.noalias() += g.beta * v * k.transpose();
  return {std::move(S)};
}

// Online solve with a read/write key split:
//   S_t = alpha_t S_{t-1} + beta_t (v_t - alpha_t S_{t-1} k_read) k_write^T.
// k_write == k_read recovers DN/GDN/KDA.
template <class Scalar>
StateMatrixT<Scalar> step_online(const StateMatrixT<Scalar>& state, const Vec<Scalar>& k_read,
                                 const Vec<Scalar>& k_write, const Vec<Scalar>& v, const GatesT<Scalar>& g) {
  if (k_read.size() != state.S.cols() || k_write.size() != state.S.cols() || v.size() != state.S.rows())
    throw std::invalid_argument("step_online: dimension mismatch");
  Mat<Scalar> S = apply_decay(state.S, g);
  const Vec<Scalar> err = v - S * k_read;
  S.noalias() += g.beta * err * k_write.transpose();
  return {std::move(S)};
}

// Umbrella DPLR transition: S_t = S_{t-1} (diag(D) - a b^T) + v k^T. Every
// online-solve variant is reproducible by an appropriate (D, a, b) tying.
template <class Scalar>
struct DPLRStepT {
  Vec<Scalar> D;  // d_k diagonal
  Vec<Scalar> a;  // d_k
  Vec<Scalar> b;  // d_k
  Vec<Scalar> k;  // d_k write direction of the additive term
  Vec<Scalar> v;  // d_v
};

using DPLRStep = DPLRStepT<double>;

template <class Scalar>
StateMatrixT<Scalar> step_dplr(const StateMatrixT<Scalar>& state, const DPLRStepT<Scalar>& step) {
  const Index d_k = state.S.cols();
  if (step.D.size() != d_k || step.a.size() != d_k || step.b.size() != d_k || step.k.size() != d_k ||
      step.v.size() != state.S.rows())
    throw std::invalid_argument("step_dplr: dimension mismatch");
  Mat<Scalar> S = state.S * step.D.asDiagonal();
  S.noalias() -= (state.S * step.a) * step.b.transpose();
  S.noalias() += step.v * step.k.transpose();
  return {std::move(S)};
}

// Tying that reproduces step_online(k_read, k_write, v, g):
//   D = alpha 1, a = alpha beta k_read, b = k_write, write term = beta v k_write^T.
template <class Scalar>
DPLRStepT<Scalar> dplr_from_online(const Vec<Scalar>& k_read, const Vec<Scalar>& k_write, const Vec<Scalar>& v,
                                   const GatesT<Scalar>& g) {
  const Index d_k = k_read.size();
  Vec<Scalar> D;
  Scalar alpha_scalar = Scalar(1);
  if (g.alpha_diag) {
    D = *g.alpha_diag;
  } else {
    alpha_scalar = g.alpha.value_or(Scalar(1));
    D = Vec<Scalar>::Constant(d_k, alpha_scalar);
  }
  Vec<Scalar> a;
  if (g.alpha_diag) {
    // Diagonal decay: the erase term reads the decayed state, S diag(alpha) k.
    a = g.beta * g.alpha_diag->cwiseProduct(k_read);
  } else {
    a = g.beta * alpha_scalar * k_read;
  }
  return {std::move(D), std::move(a), k_write, k_write, g.beta * v};
}

// ---------------------------------------------------------------------------
// Full sequential runner. Per token:
//   1. preconditioner update + write-key / query transform (variant dependent)
//   2. main-state update (online or offline solve)
//   3. readout from the post-write state: o_t = S_t q_t (online) or S_t q~_t
//      (offline with preconditioning, the ATQ path)
// ---------------------------------------------------------------------------

// Per-token intermediates; doubles as the tape replayed by the backward sweep.
template <class Scalar>
struct PrecondTraceT {
  std::vector<Vec<Scalar>> A;        // diagonal accumulator after token t
  std::vector<Vec<Scalar>> B;        // squash output (stable path)
  std::vector<Mat<Scalar>> P;        // exact inverse Gram after token t
  std::vector<Vec<Scalar>> k_write;  // transformed write key (online paths)
  std::vector<Vec<Scalar>> q_tilde;  // transformed query (offline paths)
  std::vector<Mat<Scalar>> S;        // state after token t
  std::vector<Vec<Scalar>> err;      // v_t - alpha S_{t-1} k_t (online paths)
};

using PrecondTrace = PrecondTraceT<double>;

template <class Scalar>
struct RunResultT {
  Mat<Scalar> outputs;  // T x d_v
  StateMatrixT<Scalar> final_state;
};

using RunResult = RunResultT<double>;

template <class Scalar>
GatesT<Scalar> gates_at(const RecurrenceConfig& cfg, const SequenceBatchT<Scalar>& seq, Index t) {
  GatesT<Scalar> g;
  g.beta = seq.beta[t];
  if (cfg.decay == Decay::Scalar) g.alpha = seq.alpha[t];
  if (cfg.decay == Decay::Diagonal) g.alpha_diag = Vec<Scalar>(seq.alpha_diag.row(t).transpose());
  return g;
}

template <class Scalar>
RunResultT<Scalar> run_sequential(const RecurrenceConfig& cfg, const SequenceBatchT<Scalar>& seq,
                                  PrecondTraceT<Scalar>* trace = nullptr) {
  cfg.validate();
  seq.validate(cfg);
  const Index T = seq.T();
  Mat<Scalar> O = Mat<Scalar>::Zero(T, cfg.d_v);
  StateMatrixT<Scalar> state = StateMatrixT<Scalar>::Zero(cfg.d_v, cfg.d_k);

  DiagGramStateT<Scalar> diag = DiagGramStateT<Scalar>::Zero(cfg.d_k);
  ExactGramStateT<Scalar> exact;
  if (cfg.precond == Precond::Exact) exact = ExactGramStateT<Scalar>::init(cfg.d_k, Scalar(cfg.lambda));
  const SquashParamsT<Scalar> squash_params{seq.mu, Scalar(cfg.x)};

  if (trace) {
    *trace = PrecondTraceT<Scalar>{};
    trace->S.reserve(T);
  }

  for (Index t = 0; t < T; ++t) {
    const Vec<Scalar> k = seq.K.row(t).transpose();
    const Vec<Scalar> q = seq.Q.row(t).transpose();
    const Vec<Scalar> v = seq.V.row(t).transpose();
    const GatesT<Scalar> g = gates_at(cfg, seq, t);
    const Scalar aP = seq.alphaP_at(t);
    const Scalar bP = seq.betaP_at(t);

    // Preconditioner chain for this token.
    Vec<Scalar> k_write = k;
    Vec<Scalar> q_tilde = q;
    Vec<Scalar> B_t;
    switch (cfg.precond) {
      case Precond::None:
        break;
      case Precond::Exact: {
        auto [next, kw] = exact_update_and_write_key(exact, k);
        exact = std::move(next);
        k_write = std::move(kw);
        q_tilde = exact_apply_query(exact, q);
        break;
      }
      case Precond::DiagRaw: {
        if (cfg.solve == Solve::Online) {
          const Vec<Scalar> z = k.cwiseQuotient((diag.A.array() + Scalar(cfg.lambda)).matrix());
          k_write = z / (Scalar(1) + k.dot(z));
          diag = diag_update(diag, k, aP, bP);
        } else {
          diag = diag_update(diag, k, aP, bP);
          q_tilde = q.cwiseQuotient((diag.A.array() + Scalar(cfg.lambda)).matrix());
        }
        break;
      }
      case Precond::DiagStable: {
        diag = diag_update(diag, k, aP, bP);
        B_t = squash(diag.A, squash_params);
        if (cfg.solve == Solve::Online)
          k_write = B_t.cwiseProduct(k);
        else
          q_tilde = B_t.cwiseProduct(q);
        break;
      }
    }

    Vec<Scalar> err;
    if (cfg.solve == Solve::Online) {
      Mat<Scalar> S = apply_decay(state.S, g);
      err = v - S * k;
      S.noalias() += g.beta * err * k_write.transpose();
      state.S = std::move(S);
      O.row(t) = (state.S * q).transpose();
    } else {
      state = step_offline(state, k, v, g);
      O.row(t) = (state.S * q_tilde).transpose();
    }

    if (trace) {
      if (cfg.precond == Precond::DiagRaw || cfg.precond == Precond::DiagStable) trace->A.push_back(diag.A);
      if (cfg.precond == Precond::DiagStable) trace->B.push_back(B_t);
      if (cfg.precond == Precond::Exact) trace->P.push_back(exact.P);
      if (cfg.solve == Solve::Online) {
        trace->k_write.push_back(k_write);
        trace->err.push_back(err);
      } else {
        trace->q_tilde.push_back(q_tilde);
      }
      trace->S.push_back(state.S);
    }
  }
  return {std::move(O), std::move(state)};
}

}  // namespace precdelta
