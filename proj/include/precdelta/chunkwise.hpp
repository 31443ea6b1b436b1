#pragma once

#include "precdelta/numerics.hpp"
#include "precdelta/parallel.hpp"
#include "precdelta/precond.hpp"
#include "precdelta/sequential.hpp"
#include "precdelta/types.hpp"

#include <cmath>
#include <array>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace precdelta {

// ---------------------------------------------------------------------------
// Chunk bookkeeping. The last chunk may be ragged; masks and decay tensors are
// truncated to the remainder length rather than padded, which keeps oracle
// equality exact.
// ---------------------------------------------------------------------------

struct ChunkPlan {
  Index C = 0;
  Index num_chunks = 0;
  Matd causal_mask;  // C x C lower triangular of ones (inclusive)
  Matd strict_mask;  // diagonal zeroed

  static ChunkPlan make(Index T, Index C) {
    if (C < 1) throw std::invalid_argument("ChunkPlan: chunk size must be >= 1");
    ChunkPlan p;
    p.C = C;
    p.num_chunks = T == 0 ? 0 : (T + C - 1) / C;
    p.causal_mask = Matd::Zero(C, C);
    for (Index r = 0; r < C; ++r) p.causal_mask.row(r).head(r + 1).setOnes();
    p.strict_mask = p.causal_mask;
    p.strict_mask.diagonal().setZero();
    return p;
  }
};

// Per-chunk cumulative log-decay. Ratio matrices are exponentials of
// cumulative-log differences rather than quotients of products, so long
// chunks of small gates cannot underflow the ratios.
template <class Scalar>
struct ChunkDecayT {
  Decay kind = Decay::None;
  Vec<Scalar> log_scalar;  // c, inclusive cumsum of log(alpha)
  Mat<Scalar> log_diag;    // c x d_k

  static ChunkDecayT none() { return {}; }

  static ChunkDecayT scalar(const Vec<Scalar>& alpha_chunk) {
    ChunkDecayT d;
    d.kind = Decay::Scalar;
    d.log_scalar.resize(alpha_chunk.size());
    Scalar run = Scalar(0);
    for (Index t = 0; t < alpha_chunk.size(); ++t) {
      if (alpha_chunk[t] <= Scalar(0)) throw std::invalid_argument("ChunkDecay: alpha must be > 0");
      run += std::log(alpha_chunk[t]);
      d.log_scalar[t] = run;
    }
    return d;
  }

  static ChunkDecayT diagonal(const Mat<Scalar>& alpha_chunk) {
    ChunkDecayT d;
    d.kind = Decay::Diagonal;
    if ((alpha_chunk.array() <= Scalar(0)).any()) throw std::invalid_argument("ChunkDecay: alpha must be > 0");
    d.log_diag = prefix_products(alpha_chunk, PrefixMode::Inclusive).array().log().matrix();
    return d;
  }

  // decay-to-position: Lambda_r (scalar gamma_r, or elementwise row)
  Vec<Scalar> lambda_row(Index r, Index d_k) const {
    switch (kind) {
      case Decay::None: return Vec<Scalar>::Ones(d_k);
      case Decay::Scalar: return Vec<Scalar>::Constant(d_k, std::exp(log_scalar[r]));
      default: return log_diag.row(r).array().exp().matrix().transpose();
    }
  }
};

using ChunkDecay = ChunkDecayT<double>;

// Masked decay-weighted inner products: out(r, t) = sum_d X(r,d) Y(t,d) ratio(r,t,d)
// for t <= r (or t < r when strict), zero elsewhere. ratio = exp(L_r - L_t).
//
// When the within-chunk log range allows, the ratio factorizes around the
// chunk midpoint, out = (X (.) e^{L - Lmid}) (Y (.) e^{Lmid - L})^T, one GEMM.
// Very aggressive decays fall back to pairwise exp of cumulative-log
// differences, which cannot under- or overflow.
template <class Scalar>
Mat<Scalar> masked_decay_scores(const Mat<Scalar>& X, const Mat<Scalar>& Y, const ChunkDecayT<Scalar>& decay,
                                bool strict) {
  const Index c = X.rows();
  Mat<Scalar> out = Mat<Scalar>::Zero(c, Y.rows());
  if (c == 0) return out;

  // Only the (inclusive) lower triangle is wanted; compute it in row blocks
  // so the work stays GEMM-shaped at roughly half the full-product flops.
  const auto lower_product = [&](const Mat<Scalar>& A, const Mat<Scalar>& B) {
    constexpr Index kBlock = 16;
    for (Index r0 = 0; r0 < c; r0 += kBlock) {
      const Index rows = std::min(kBlock, c - r0);
      const Index cols = std::min(r0 + rows, B.rows());
      out.block(r0, 0, rows, cols).noalias() = A.middleRows(r0, rows) * B.topRows(cols).transpose();
    }
  };
  if (decay.kind == Decay::None) {
    lower_product(X, Y);
  } else if (decay.kind == Decay::Scalar) {
    const Scalar mid = decay.log_scalar[c / 2];
    const Scalar spread = (decay.log_scalar.array() - mid).abs().maxCoeff();
    if (spread < Scalar(600)) {
      const Vec<Scalar> up = (decay.log_scalar.array() - mid).exp();
      const Vec<Scalar> dn = (mid - decay.log_scalar.array()).exp();
      lower_product(up.asDiagonal() * X, dn.asDiagonal() * Y);
    } else {
      out.noalias() = X * Y.transpose();
      for (Index r = 0; r < c; ++r) {
        const Index tmax = strict ? r : r + 1;
        for (Index t = 0; t < tmax; ++t) out(r, t) *= std::exp(decay.log_scalar[r] - decay.log_scalar[t]);
      }
    }
  } else {
    const Mat<Scalar>& L = decay.log_diag;
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> mid = L.row(c / 2).array();
    const Scalar spread = ((L.array().rowwise() - mid).abs()).maxCoeff();
    if (spread < Scalar(600)) {
      const Mat<Scalar> Xp = (X.array() * (L.array().rowwise() - mid).exp()).matrix();
      const Mat<Scalar> Ym = (Y.array() * (-(L.array().rowwise() - mid)).exp()).matrix();
      lower_product(Xp, Ym);
    } else {
      for (Index r = 0; r < c; ++r) {
        const Index tmax = strict ? r : r + 1;
        for (Index t = 0; t < tmax; ++t) {
          Scalar s = Scalar(0);
          for (Index d = 0; d < X.cols(); ++d) s += X(r, d) * Y(t, d) * std::exp(L(r, d) - L(t, d));
          out(r, t) = s;
        }
      }
      return out;
    }
  }
  for (Index r = 0; r < c; ++r)
    for (Index t = strict ? r : r + 1; t < out.cols(); ++t) out(r, t) = Scalar(0);
  return out;
}

// Rows scaled by decay-to-position: out(r,:) = X(r,:) .* Lambda_r.
template <class Scalar>
Mat<Scalar> decay_to_position(const Mat<Scalar>& X, const ChunkDecayT<Scalar>& decay) {
  Mat<Scalar> out = X;
  if (decay.kind == Decay::Scalar) {
    for (Index r = 0; r < X.rows(); ++r) out.row(r) *= std::exp(decay.log_scalar[r]);
  } else if (decay.kind == Decay::Diagonal) {
    out.array() *= decay.log_diag.array().exp();
  }
  return out;
}

// Rows scaled by decay-to-chunk-end: out(r,:) = X(r,:) .* (Lambda_last / Lambda_r).
template <class Scalar>
Mat<Scalar> decay_to_end(const Mat<Scalar>& X, const ChunkDecayT<Scalar>& decay) {
  Mat<Scalar> out = X;
  const Index c = X.rows();
  if (c == 0 || decay.kind == Decay::None) return out;
  if (decay.kind == Decay::Scalar) {
    const Scalar last = decay.log_scalar[c - 1];
    for (Index r = 0; r < c; ++r) out.row(r) *= std::exp(last - decay.log_scalar[r]);
  } else {
    const auto last = decay.log_diag.row(c - 1);
    for (Index r = 0; r < c; ++r)
      out.row(r).array() *= (last - decay.log_diag.row(r)).array().exp();
  }
  return out;
}

// ---------------------------------------------------------------------------
// UT transform for a chunk of online-solve (delta rule) transitions with a
// read/write key split:
//   T = (I + tril(diag(beta) G, -1))^{-1} diag(beta)
//   W = T K^       U = T V
// where G(r,t) = <k_r, k~_t> with decay ratios folded in, and K^ carries the
// decay-to-position factors (K^ = K when undecayed).
// ---------------------------------------------------------------------------

template <class Scalar>
struct UTFactorsT {
  Mat<Scalar> T;  // c x c
  Mat<Scalar> W;  // c x d_k
  Mat<Scalar> U;  // c x d_v
};

using UTFactors = UTFactorsT<double>;

template <class Scalar>
UTFactorsT<Scalar> ut_factors(const Mat<Scalar>& K, const Mat<Scalar>& K_write, const Mat<Scalar>& V,
                              const Vec<Scalar>& beta, const ChunkDecayT<Scalar>& decay, bool with_t = true) {
  const Index c = K.rows();
  if (K_write.rows() != c || V.rows() != c || beta.size() != c || K_write.cols() != K.cols())
    throw std::invalid_argument("ut_factors: dimension mismatch");
  Mat<Scalar> G = masked_decay_scores(K, K_write, decay, /*strict=*/true);
  G.array().colwise() *= beta.array();
  Mat<Scalar> M_sys = Mat<Scalar>::Identity(c, c) + G;

  Mat<Scalar> rhs(c, K.cols() + V.cols());
  rhs.leftCols(K.cols()) = decay_to_position(K, decay);
  rhs.rightCols(V.cols()) = V;
  rhs.array().colwise() *= beta.array();

  UTFactorsT<Scalar> f;
  const Mat<Scalar> WU = solve_unit_lower_triangular(M_sys, rhs);
  f.W = WU.leftCols(K.cols());
  f.U = WU.rightCols(V.cols());
  if (with_t) {
    Mat<Scalar> rhs_t = Mat<Scalar>::Zero(c, c);
    rhs_t.diagonal() = beta;
    f.T = solve_unit_lower_triangular(M_sys, rhs_t);
  }
  return f;
}

// ---------------------------------------------------------------------------
// One chunk of the online (delta-rule) form:
//   O = Q^ S0^T + ((Q K~^T) (.) mask-with-ratios)(U - W S0^T)
//   S1 = S0 decay + (U - W S0^T)^T K~^(to-end)
// Queries decay to their position, write keys decay to the chunk end.
// ---------------------------------------------------------------------------

template <class Scalar>
std::pair<Mat<Scalar>, StateMatrixT<Scalar>> chunk_forward_online(const Mat<Scalar>& Q, const Mat<Scalar>& K_write,
                                                                  const UTFactorsT<Scalar>& f,
                                                                  const StateMatrixT<Scalar>& boundary,
                                                                  const ChunkDecayT<Scalar>& decay) {
  const Index c = Q.rows();
  if (K_write.rows() != c || f.W.rows() != c || f.U.rows() != c)
    throw std::invalid_argument("chunk_forward_online: dimension mismatch");
  const Mat<Scalar> D = f.U - f.W * boundary.S.transpose();  // c x d_v
  Mat<Scalar> O = decay_to_position(Q, decay) * boundary.S.transpose();
  O.noalias() += masked_decay_scores(Q, K_write, decay, /*strict=*/false) * D;

  Mat<Scalar> S1 = boundary.S;
  if (c > 0 && decay.kind == Decay::Scalar) S1 *= std::exp(decay.log_scalar[c - 1]);
  if (c > 0 && decay.kind == Decay::Diagonal)
    S1 *= decay.log_diag.row(c - 1).array().exp().matrix().asDiagonal();
  S1.noalias() += D.transpose() * decay_to_end(K_write, decay);
  return {std::move(O), StateMatrixT<Scalar>{std::move(S1)}};
}

// One chunk of the offline form (gain folded into the value rows):
//   O = Q~^ S0^T + ((Q~ K^T) (.) mask-with-ratios) V
//   S1 = S0 decay + V^T K^(to-end)
template <class Scalar>
std::pair<Mat<Scalar>, StateMatrixT<Scalar>> chunk_forward_offline(const Mat<Scalar>& Q_tilde, const Mat<Scalar>& K,
                                                                   const Mat<Scalar>& V_gained,
                                                                   const StateMatrixT<Scalar>& boundary,
                                                                   const ChunkDecayT<Scalar>& decay) {
  const Index c = Q_tilde.rows();
  if (K.rows() != c || V_gained.rows() != c) throw std::invalid_argument("chunk_forward_offline: dimension mismatch");
  Mat<Scalar> O = decay_to_position(Q_tilde, decay) * boundary.S.transpose();
  O.noalias() += masked_decay_scores(Q_tilde, K, decay, /*strict=*/false) * V_gained;

  Mat<Scalar> S1 = boundary.S;
  if (c > 0 && decay.kind == Decay::Scalar) S1 *= std::exp(decay.log_scalar[c - 1]);
  if (c > 0 && decay.kind == Decay::Diagonal)
    S1 *= decay.log_diag.row(c - 1).array().exp().matrix().asDiagonal();
  S1.noalias() += V_gained.transpose() * decay_to_end(K, decay);
  return {std::move(O), StateMatrixT<Scalar>{std::move(S1)}};
}

// ---------------------------------------------------------------------------
// Full run: composes the chunkwise preconditioner scan with the chunkwise main
// recurrence. Exact preconditioning has no chunk-local affine transition and is
// rejected here (sequential only).
//
// Two-phase contract, materialized as a bounded pipeline: within-chunk work
// (transforms, UT factors, masked scores) has no cross-chunk dependence and
// runs ahead on a worker; the consumer advances the sequential boundary chain
// and writes outputs. PRECDELTA_THREADS=1 forces the serial path.
// ---------------------------------------------------------------------------

namespace detail {

// Producer half: the preconditioner scan and UT solves. The consumer half
// (scores, decays, outputs, boundary chain) stays with the state owner.
template <class Scalar>
struct ChunkStage {
  ChunkDecayT<Scalar> decay;
  Mat<Scalar> transformed;  // write keys (online) or transformed queries (offline)
  Mat<Scalar> W;            // UT factor (online only)
  Mat<Scalar> U;            // UT factor (online) / gained values (offline)
};

// Writes into w so ring-buffer slots keep their storage across chunks (all
// allocation traffic stays on the producing thread).
template <class Scalar>
void chunk_stage(const RecurrenceConfig& cfg, const SequenceBatchT<Scalar>& seq, Index start, Index c,
                 const DiagGramStateT<Scalar>& A_bound, const SquashParamsT<Scalar>& squash_params,
                 ChunkStage<Scalar>& w) {
  const bool online = cfg.solve == Solve::Online;
  const Mat<Scalar> Kc = seq.K.middleRows(start, c);
  const Vec<Scalar> betac = seq.beta.segment(start, c);
  if (cfg.decay == Decay::Scalar) w.decay = ChunkDecayT<Scalar>::scalar(seq.alpha.segment(start, c));
  if (cfg.decay == Decay::Diagonal) w.decay = ChunkDecayT<Scalar>::diagonal(seq.alpha_diag.middleRows(start, c));

  if (cfg.precond != Precond::None) {
    const Vec<Scalar> aP = seq.alphaP.size() ? Vec<Scalar>(seq.alphaP.segment(start, c)) : Vec<Scalar>::Ones(c);
    const Vec<Scalar> bP = seq.betaP.size() ? Vec<Scalar>(seq.betaP.segment(start, c)) : Vec<Scalar>::Ones(c);
    PrecondScanMode mode;
    if (online)
      mode = cfg.precond == Precond::DiagRaw ? PrecondScanMode::AtkUnstable : PrecondScanMode::AtkStable;
    else
      mode = cfg.precond == Precond::DiagRaw ? PrecondScanMode::AtqRaw : PrecondScanMode::AtqStable;
    const Mat<Scalar> target = online ? Kc : Mat<Scalar>(seq.Q.middleRows(start, c));
    w.transformed =
        chunk_precond_scan(Kc, target, A_bound, aP, bP, mode, squash_params, Scalar(cfg.lambda)).transformed;
  } else {
    w.transformed = online ? Kc : seq.Q.middleRows(start, c);
  }

  if (online) {
    const UTFactorsT<Scalar> f = ut_factors(Kc, w.transformed, Mat<Scalar>(seq.V.middleRows(start, c)), betac,
                                            w.decay, /*with_t=*/false);
    w.W = f.W;
    w.U = f.U;
  } else {
    w.U = seq.V.middleRows(start, c);
    w.U.array().colwise() *= betac.array();
  }
}

}  // namespace detail

template <class Scalar>
Mat<Scalar> full_chunkwise_run(const RecurrenceConfig& cfg, const SequenceBatchT<Scalar>& seq, Index C) {
  cfg.validate();
  seq.validate(cfg);
  if (cfg.precond == Precond::Exact)
    throw std::invalid_argument("full_chunkwise_run: exact preconditioning is sequential-only");
  if (C < 1) throw std::invalid_argument("full_chunkwise_run: chunk size must be >= 1");

  const Index T = seq.T();
  Mat<Scalar> O = Mat<Scalar>::Zero(T, cfg.d_v);
  const Index num_chunks = T == 0 ? 0 : (T + C - 1) / C;
  if (num_chunks == 0) return O;
  const SquashParamsT<Scalar> squash_params{seq.mu, Scalar(cfg.x)};
  const bool online = cfg.solve == Solve::Online;

  // A boundaries per chunk start (cheap sequential prefix).
  std::vector<DiagGramStateT<Scalar>> A_bound(num_chunks, DiagGramStateT<Scalar>::Zero(cfg.d_k));
  if (cfg.precond != Precond::None) {
    Vec<Scalar> A = Vec<Scalar>::Zero(cfg.d_k);
    for (Index i = 0; i < num_chunks; ++i) {
      A_bound[i].A = A;
      const Index start = i * C;
      const Index c = std::min(C, T - start);
      for (Index j = 0; j < c; ++j) {
        const auto k = seq.K.row(start + j);
        A = seq.alphaP_at(start + j) * A + seq.betaP_at(start + j) * k.cwiseProduct(k).transpose();
      }
    }
  }

  // Consumer: scores, outputs and the boundary chain for one chunk. The
  // workspace matrices persist across chunks.
  StateMatrixT<Scalar> state = StateMatrixT<Scalar>::Zero(cfg.d_v, cfg.d_k);
  Mat<Scalar> D, scores, Q_pos, K_end, Oc;
  const auto consume = [&](const detail::ChunkStage<Scalar>& w, Index i) {
    const Index start = i * C;
    const Index c = std::min(C, T - start);
    const Mat<Scalar> Qc = seq.Q.middleRows(start, c);
    if (online) {
      scores = masked_decay_scores(Qc, w.transformed, w.decay, /*strict=*/false);
      Q_pos = decay_to_position(Qc, w.decay);
      K_end = decay_to_end(w.transformed, w.decay);
      D = w.U;
      D.noalias() -= w.W * state.S.transpose();
    } else {
      const Mat<Scalar> Kc = seq.K.middleRows(start, c);
      scores = masked_decay_scores(w.transformed, Kc, w.decay, /*strict=*/false);
      Q_pos = decay_to_position(w.transformed, w.decay);
      K_end = decay_to_end(Kc, w.decay);
      D = w.U;
    }
    Oc = Q_pos * state.S.transpose();
    Oc.noalias() += scores * D;
    O.middleRows(start, c) = Oc;
    if (w.decay.kind == Decay::Scalar) state.S *= std::exp(w.decay.log_scalar[c - 1]);
    if (w.decay.kind == Decay::Diagonal)
      state.S *= w.decay.log_diag.row(c - 1).array().exp().matrix().asDiagonal();
    state.S.noalias() += D.transpose() * K_end;
  };

  const bool pipeline = max_threads() > 1 && num_chunks >= 8 && C * cfg.d_k >= 1024;
  if (!pipeline) {
    detail::ChunkStage<Scalar> w;
    for (Index i = 0; i < num_chunks; ++i) {
      detail::chunk_stage(cfg, seq, i * C, std::min(C, T - i * C), A_bound[i], squash_params, w);
      consume(w, i);
    }
    return O;
  }

  // Single producer stages chunks in order through a small ring of persistent
  // slots; the consumer drains it while advancing the boundary chain. Slots
  // keep their buffers, so no allocation crosses threads.
  constexpr Index kDepth = 3;
  std::array<detail::ChunkStage<Scalar>, kDepth> slots;
  std::mutex mtx;
  std::condition_variable cv;
  Index produced = 0, consumed = 0;
  std::exception_ptr producer_error;

  std::thread producer([&] {
    try {
      for (Index i = 0; i < num_chunks; ++i) {
        {
          std::unique_lock<std::mutex> lock(mtx);
          cv.wait(lock, [&] { return produced - consumed < kDepth; });
        }
        detail::chunk_stage(cfg, seq, i * C, std::min(C, T - i * C), A_bound[i], squash_params,
                            slots[produced % kDepth]);
        {
          std::unique_lock<std::mutex> lock(mtx);
          ++produced;
        }
        cv.notify_all();
      }
    } catch (...) {
      std::unique_lock<std::mutex> lock(mtx);
      producer_error = std::current_exception();
      cv.notify_all();
    }
  });

  bool failed = false;
  for (Index i = 0; i < num_chunks && !failed; ++i) {
    {
      std::unique_lock<std::mutex> lock(mtx);
      cv.wait(lock, [&] { return produced > consumed || producer_error; });
      failed = producer_error != nullptr;
    }
    if (failed) break;
    consume(slots[consumed % kDepth], i);
    {
      std::unique_lock<std::mutex> lock(mtx);
      ++consumed;
    }
    cv.notify_all();
  }
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
  return O;
}

}  // namespace precdelta
