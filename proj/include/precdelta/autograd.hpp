#pragma once

#include "precdelta/rng.hpp"
#include "precdelta/sequential.hpp"
#include "precdelta/types.hpp"

#include <cmath>

namespace precdelta {

// Reverse-mode gradients through the sequential recurrences. Supported
// preconditioners are none and diag-stable (the trainable paths); the exact
// Sherman-Morrison and raw-diagonal paths are verification-only and rejected.

template <class Scalar>
struct GradientBundleT {
  Mat<Scalar> dQ, dK, dV;
  Vec<Scalar> dbeta;
  Vec<Scalar> dalpha;        // scalar decay (zero-sized otherwise)
  Mat<Scalar> dalpha_diag;   // diagonal decay (zero-sized otherwise)
  Vec<Scalar> dalphaP, dbetaP;
  Scalar dmu = Scalar(0);
  Mat<Scalar> dS0;
};

using GradientBundle = GradientBundleT<double>;

namespace detail {

inline void check_autograd_cfg(const RecurrenceConfig& cfg) {
  if (cfg.precond == Precond::Exact || cfg.precond == Precond::DiagRaw)
    throw std::invalid_argument("backward_sequential: only precond none / diag-stable are differentiable");
}

}  // namespace detail

// tape: trace produced by run_sequential over the same (cfg, seq).
// grad_outputs: dL/do_t rows; returns gradients of sum_t <grad_outputs_t, o_t>.
template <class Scalar>
GradientBundleT<Scalar> backward_sequential(const RecurrenceConfig& cfg, const SequenceBatchT<Scalar>& seq,
                                            const PrecondTraceT<Scalar>& tape, const Mat<Scalar>& grad_outputs) {
  detail::check_autograd_cfg(cfg);
  cfg.validate();
  seq.validate(cfg);
  const Index T = seq.T();
  if (grad_outputs.rows() != T || grad_outputs.cols() != cfg.d_v)
    throw std::invalid_argument("backward_sequential: grad_outputs shape mismatch");
  if (static_cast<Index>(tape.S.size()) != T)
    throw std::invalid_argument("backward_sequential: tape/config mismatch");
  const bool stable = cfg.precond == Precond::DiagStable;
  const Scalar logx = std::log(Scalar(cfg.x));

  GradientBundleT<Scalar> g;
  g.dQ = Mat<Scalar>::Zero(T, cfg.d_k);
  g.dK = Mat<Scalar>::Zero(T, cfg.d_k);
  g.dV = Mat<Scalar>::Zero(T, cfg.d_v);
  g.dbeta = Vec<Scalar>::Zero(T);
  if (cfg.decay == Decay::Scalar) g.dalpha = Vec<Scalar>::Zero(T);
  if (cfg.decay == Decay::Diagonal) g.dalpha_diag = Mat<Scalar>::Zero(T, cfg.d_k);
  g.dalphaP = Vec<Scalar>::Zero(T);
  g.dbetaP = Vec<Scalar>::Zero(T);

  Mat<Scalar> dS = Mat<Scalar>::Zero(cfg.d_v, cfg.d_k);
  Vec<Scalar> dA = Vec<Scalar>::Zero(cfg.d_k);

  for (Index t = T - 1; t >= 0; --t) {
    const Vec<Scalar> k = seq.K.row(t).transpose();
    const Vec<Scalar> q = seq.Q.row(t).transpose();
    const Vec<Scalar> v = seq.V.row(t).transpose();
    const Scalar beta = seq.beta[t];
    const GatesT<Scalar> gates = gates_at(cfg, seq, t);
    const Mat<Scalar>& S_t = tape.S[t];
    const Mat<Scalar> S_prev = t > 0 ? tape.S[t - 1] : Mat<Scalar>::Zero(cfg.d_v, cfg.d_k);
    const Mat<Scalar> D = apply_decay(S_prev, gates);
    const Vec<Scalar> grad_o = grad_outputs.row(t).transpose();

    Vec<Scalar> dB = Vec<Scalar>::Zero(cfg.d_k);

    if (cfg.solve == Solve::Online) {
      // readout o_t = S_t q_t
      dS.noalias() += grad_o * q.transpose();
      g.dQ.row(t) = (S_t.transpose() * grad_o).transpose();

      // write S_t = D + beta e k~^T with e = v - D k
      const Vec<Scalar>& e = tape.err[t];
      const Vec<Scalar>& kw = tape.k_write[t];
      const Vec<Scalar> dSkw = dS * kw;
      const Vec<Scalar> de = beta * dSkw;
      const Vec<Scalar> dkw = beta * (dS.transpose() * e);
      g.dbeta[t] += e.dot(dSkw);
      Mat<Scalar> dD = dS;
      g.dV.row(t) += de.transpose();
      dD.noalias() -= de * k.transpose();
      g.dK.row(t) -= (D.transpose() * de).transpose();
      if (stable) {
        const Vec<Scalar>& B = tape.B[t];
        dB = dkw.cwiseProduct(k);
        g.dK.row(t) += dkw.cwiseProduct(B).transpose();
      } else {
        g.dK.row(t) += dkw.transpose();
      }
      dS = std::move(dD);
    } else {
      // readout o_t = S_t q~_t
      Vec<Scalar> q_tilde = q;
      if (stable) q_tilde = tape.q_tilde[t];
      dS.noalias() += grad_o * q_tilde.transpose();
      const Vec<Scalar> dqt = S_t.transpose() * grad_o;
      if (stable) {
        const Vec<Scalar>& B = tape.B[t];
        dB = dqt.cwiseProduct(q);
        g.dQ.row(t) += dqt.cwiseProduct(B).transpose();
      } else {
        g.dQ.row(t) += dqt.transpose();
      }

      // write S_t = D + beta v k^T
      const Vec<Scalar> dSk = dS * k;
      g.dV.row(t) += (beta * dSk).transpose();
      g.dK.row(t) += (beta * (dS.transpose() * v)).transpose();
      g.dbeta[t] += v.dot(dSk);
      // dD == dS, fall through
    }

    if (stable) {
      // squash chain: B = exp(-log(x) s), s = r / (1 + |r|), r = log(clamp(A)) - mu
      const Vec<Scalar>& A = tape.A[t];
      const Vec<Scalar>& B = tape.B[t];
      const Vec<Scalar> Ac = A.array().max(Scalar(kSquashClamp)).matrix();
      const Vec<Scalar> r = (Ac.array().log() - seq.mu).matrix();
      const Vec<Scalar> ds = (-logx) * dB.cwiseProduct(B);
      const Vec<Scalar> dr = (ds.array() / (Scalar(1) + r.array().abs()).square()).matrix();
      g.dmu -= dr.sum();
      Vec<Scalar> dA_from_B = dr.cwiseQuotient(Ac);
      for (Index j = 0; j < cfg.d_k; ++j)
        if (A[j] < Scalar(kSquashClamp)) dA_from_B[j] = Scalar(0);
      dA += dA_from_B;

      // A_t = alphaP A_{t-1} + betaP k (.) k
      const Vec<Scalar> A_prev = t > 0 ? tape.A[t - 1] : Vec<Scalar>::Zero(cfg.d_k);
      const Scalar aP = seq.alphaP_at(t);
      const Scalar bP = seq.betaP_at(t);
      g.dalphaP[t] = A_prev.dot(dA);
      g.dbetaP[t] = k.cwiseProduct(k).dot(dA);
      g.dK.row(t) += (Scalar(2) * bP * dA.cwiseProduct(k)).transpose();
      dA *= aP;
    }

    // decay: D = alpha S_{t-1} (scalar) / S_{t-1} diag(alpha) (diagonal)
    if (cfg.decay == Decay::Scalar) {
      g.dalpha[t] = (S_prev.array() * dS.array()).sum();
      dS *= gates.alpha.value();
    } else if (cfg.decay == Decay::Diagonal) {
      g.dalpha_diag.row(t) = (S_prev.array() * dS.array()).colwise().sum();
      dS = dS * gates.alpha_diag->asDiagonal();
    }
  }
  g.dS0 = dS;
  return g;
}

// Linearity helper over gradient bundles (used by tests).
template <class Scalar>
Scalar bundle_max_abs_diff(const GradientBundleT<Scalar>& a, const GradientBundleT<Scalar>& b) {
  Scalar m = Scalar(0);
  auto upd_m = [&m](Scalar v) { m = std::max(m, std::abs(v)); };
  auto upd = [&](const auto& x, const auto& y) {
    if (x.size()) upd_m((x - y).cwiseAbs().maxCoeff());
  };
  upd(a.dQ, b.dQ);
  upd(a.dK, b.dK);
  upd(a.dV, b.dV);
  upd(a.dbeta, b.dbeta);
  upd(a.dalpha, b.dalpha);
  upd(a.dalpha_diag, b.dalpha_diag);
  upd(a.dalphaP, b.dalphaP);
  upd(a.dbetaP, b.dbetaP);
  upd(a.dS0, b.dS0);
  upd_m(a.dmu - b.dmu);
  return m;
}

// Central-difference verification of backward_sequential over every scalar
// input. h = 1e-5 on unit-scaled inputs; relative error uses a
// max(|a|, |b|, 1e-8) denominator. Returns the worst relative error.
inline double finite_diff_check(const RecurrenceConfig& cfg, const SequenceBatch& seq, std::uint64_t seed,
                                double h = 1e-5) {
  detail::check_autograd_cfg(cfg);
  const Index T = seq.T();
  Rng rng(seed);
  Matd grad_outputs = rng.normal_mat(T, cfg.d_v);

  PrecondTrace tape;
  const RunResult base = run_sequential(cfg, seq, &tape);
  // Condition the probe: the backward is linear in grad_outputs, so shrinking
  // the functional shrinks central-difference cancellation noise by the same
  // factor while leaving relative errors of the true gradient untouched.
  const double abs_loss = (base.outputs.array() * grad_outputs.array()).abs().sum();
  if (abs_loss > 2e-3) grad_outputs *= 2e-3 / abs_loss;
  const GradientBundle g = backward_sequential(cfg, seq, tape, grad_outputs);

  const auto loss = [&](const SequenceBatch& s) {
    const RunResult r = run_sequential(cfg, s);
    return (r.outputs.array() * grad_outputs.array()).sum();
  };

  double max_rel = 0.0;
  const auto check = [&](double analytic, double* slot, SequenceBatch& s) {
    const double keep = *slot;
    *slot = keep + h;
    const double fp = loss(s);
    *slot = keep - h;
    const double fm = loss(s);
    *slot = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - analytic) / denom);
  };

  SequenceBatch s = seq;
  for (Index t = 0; t < T; ++t) {
    for (Index j = 0; j < cfg.d_k; ++j) {
      check(g.dQ(t, j), &s.Q(t, j), s);
      check(g.dK(t, j), &s.K(t, j), s);
    }
    for (Index j = 0; j < cfg.d_v; ++j) check(g.dV(t, j), &s.V(t, j), s);
    check(g.dbeta[t], &s.beta[t], s);
    if (cfg.decay == Decay::Scalar) check(g.dalpha[t], &s.alpha[t], s);
    if (cfg.decay == Decay::Diagonal)
      for (Index j = 0; j < cfg.d_k; ++j) check(g.dalpha_diag(t, j), &s.alpha_diag(t, j), s);
    if (cfg.precond == Precond::DiagStable && s.alphaP.size()) check(g.dalphaP[t], &s.alphaP[t], s);
    if (cfg.precond == Precond::DiagStable && s.betaP.size()) check(g.dbetaP[t], &s.betaP[t], s);
  }
  if (cfg.precond == Precond::DiagStable) check(g.dmu, &s.mu, s);
  return max_rel;
}

}  // namespace precdelta
