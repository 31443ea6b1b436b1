#pragma once

#include "precdelta/rng.hpp"
#include "precdelta/sequential.hpp"
#include "precdelta/types.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace precdelta {

// ---------------------------------------------------------------------------
// Ground-truth ridge regression: S* solves S (K^T K + lambda I) = V^T K.
// ---------------------------------------------------------------------------

struct LeastSquaresOracle {
  Matd K_hist;  // t x d_k
  Matd V_hist;  // t x d_v
  double lambda = 0.0;
};

inline Matd least_squares_map(const LeastSquaresOracle& oracle) {
  if (oracle.K_hist.rows() != oracle.V_hist.rows())
    throw std::invalid_argument("least_squares_map: history row counts disagree");
  const Index d_k = oracle.K_hist.cols();
  Matd G = oracle.K_hist.transpose() * oracle.K_hist;
  G.diagonal().array() += oracle.lambda;
  const Matd C = oracle.V_hist.transpose() * oracle.K_hist;  // d_v x d_k
  Eigen::LDLT<Matd> ldlt(G);
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("least_squares_map: singular Gram");
  // S* = C G^{-1}  <=>  G S*^T = C^T (G symmetric).
  return ldlt.solve(C.transpose()).transpose();
}

// ---------------------------------------------------------------------------
// Check records.
// ---------------------------------------------------------------------------

struct TheoremReport {
  std::string name;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  long samples = 0;
  bool pass = false;
  std::vector<std::string> details;
};

inline TheoremReport make_report(std::string name, double max_dev, double tol, long samples) {
  TheoremReport r;
  r.name = std::move(name);
  r.max_deviation = max_dev;
  r.tolerance = tol;
  r.samples = samples;
  r.pass = max_dev < tol;
  return r;
}

// ---------------------------------------------------------------------------
// Theorem: with the exact inverse-Gram preconditioner, the online (PDN) state
// equals C_t P_t at every step and its outputs match the offline (PLA)
// readout C_t (P_t q_t).
// ---------------------------------------------------------------------------

inline TheoremReport check_theorem1(Index d_k, Index d_v, Index T, double lambda, std::uint64_t seed,
                                    double tolerance = 1e-9) {
  Rng rng(seed);
  RecurrenceConfig cfg{d_k, d_v, Solve::Online, Decay::None, Precond::Exact, lambda, 1.5, false};
  SequenceBatch seq;
  seq.Q.resize(T, d_k);
  seq.K.resize(T, d_k);
  seq.V = rng.normal_mat(T, d_v);
  for (Index t = 0; t < T; ++t) {
    seq.Q.row(t) = rng.sphere_vec(d_k).transpose();
    seq.K.row(t) = rng.sphere_vec(d_k).transpose();
  }
  seq.beta = Vecd::Ones(T);

  PrecondTrace trace;
  const RunResult run = run_sequential(cfg, seq, &trace);

  double max_dev = 0.0;
  Matd C = Matd::Zero(d_v, d_k);
  Matd G = lambda * Matd::Identity(d_k, d_k);
  for (Index t = 0; t < T; ++t) {
    const Vecd k = seq.K.row(t).transpose();
    const Vecd q = seq.Q.row(t).transpose();
    C.noalias() += seq.V.row(t).transpose() * k.transpose();
    G.noalias() += k * k.transpose();
    const Eigen::LDLT<Matd> ldlt(G);
    const Matd S_star = ldlt.solve(C.transpose()).transpose();  // C_t G_t^{-1}
    max_dev = std::max(max_dev, (trace.S[t] - S_star).cwiseAbs().maxCoeff());
    const Vecd o_pla = C * ldlt.solve(q);  // C_t (P_t q_t)
    max_dev = std::max(max_dev, (run.outputs.row(t).transpose() - o_pla).cwiseAbs().maxCoeff());
  }
  return make_report("theorem1", max_dev, tolerance, T);
}

// ---------------------------------------------------------------------------
// Fixed d = 2 counterexample showing ATQ != ATK under the diagonal
// approximation: lambda = 1, k_1 = v_1 = [1,1] give S_APLA = 1/2 11^T and
// S_APDN = 1/3 11^T. Bit-reproducible, no randomness.
// ---------------------------------------------------------------------------

struct CounterexampleResult {
  Matd S_apla;
  Matd S_apdn;
  bool differ = false;
};

inline CounterexampleResult counterexample_d2() {
  const double lambda = 1.0;
  const Vecd k = Vecd::Ones(2);
  const Vecd v = Vecd::Ones(2);

  // APLA: state C_1 = v k^T preconditioned by the inclusive diagonal Gram.
  DiagGramState A = DiagGramState::Zero(2);
  A = diag_update(A, k, 1.0, 1.0);
  const Matd C1 = v * k.transpose();
  Matd S_apla = C1;
  for (Index j = 0; j < 2; ++j) S_apla.col(j) /= A.A[j] + lambda;

  // APDN: write key from the pre-update state A_0 = 0 with ridge, normalized.
  const Vecd z = k.cwiseQuotient((Vecd::Zero(2).array() + lambda).matrix());
  const Vecd k_write = z / (1.0 + k.dot(z));
  const Matd S_apdn = v * k_write.transpose();

  CounterexampleResult res{S_apla, S_apdn, false};
  res.differ = (S_apla - S_apdn).cwiseAbs().maxCoeff() > 1e-12;
  return res;
}

// ---------------------------------------------------------------------------
// Monte-Carlo harness for the LA/DN least-squares comparison. Keys and queries
// are i.i.d. uniform on the sphere, v_t = S0 k_t (noiseless), lambda = 0, and
// exact least squares is only evaluated from t = d on (first invertible Gram).
// ---------------------------------------------------------------------------

struct Theorem2Record {
  Index t = 0;
  double e_la = 0.0;         // mean ||o_LA - o*||^2
  double e_dn = 0.0;         // mean ||o_DN - o*||^2
  double e_exact = 0.0;      // mean ||o_SM-chain - o*||^2 (zero at t = d, where the chain is its seed)
  double closed_form = 0.0;  // ||S0||_F^2 / d (1 - t/d + t(t-1)/d^2)
  double se_la = 0.0;        // standard error of e_la
};

struct Theorem2Result {
  std::vector<Theorem2Record> records;
  double s0_norm2 = 0.0;
};

inline Theorem2Result theorem2_montecarlo(Index d, Index t_max, long trials, std::uint64_t seed, double beta = 1.0) {
  if (trials < 100) throw std::invalid_argument("theorem2_montecarlo: need at least 100 trials");
  if (t_max < d) throw std::invalid_argument("theorem2_montecarlo: t_max must be >= d");
  Rng rng(seed);
  const Matd S0 = rng.normal_mat(d, d);  // fixed across trials
  const double s0n2 = S0.squaredNorm();

  const Index nrec = t_max - d + 1;
  std::vector<double> sum_la(nrec, 0.0), sum2_la(nrec, 0.0), sum_dn(nrec, 0.0), sum_ex(nrec, 0.0);
  std::vector<long> cnt_ex(nrec, 0);

  for (long trial = 0; trial < trials; ++trial) {
    Matd C = Matd::Zero(d, d);
    Matd G = Matd::Zero(d, d);
    Matd S_dn = Matd::Zero(d, d);
    // Sherman-Morrison chain, seeded by a dense factorization at the first
    // numerically well-conditioned Gram from t = d on. Gating the seed keeps
    // the chain's carried error at machine scale; near-singular Grams (which
    // occur with small probability for t close to d) delay it by a step.
    Matd P_chain;
    bool chained = false;
    Index t_seed = 0;
    for (Index t = 1; t <= t_max; ++t) {
      const Vecd k = rng.sphere_vec(d);
      const Vecd q = rng.sphere_vec(d);
      const Vecd v = S0 * k;
      C.noalias() += v * k.transpose();
      G.noalias() += k * k.transpose();
      S_dn += beta * (v - S_dn * k) * k.transpose();
      if (chained) {
        const Vecd Pk = P_chain * k;
        P_chain.noalias() -= Pk * Pk.transpose() / (1.0 + k.dot(Pk));
      }
      if (t >= d) {
        const Eigen::LDLT<Matd> ldlt(G);
        if (!chained && ldlt.info() == Eigen::Success) {
          const auto D = ldlt.vectorD();
          if (D.minCoeff() > 0.0 && D.minCoeff() / D.maxCoeff() > 1e-6) {
            P_chain = ldlt.solve(Matd::Identity(d, d));
            chained = true;
            t_seed = t;
          }
        }
        const Vecd o_star = C * ldlt.solve(q);
        const Index i = t - d;
        const double ela = (C * q - o_star).squaredNorm();
        sum_la[i] += ela;
        sum2_la[i] += ela * ela;
        sum_dn[i] += (S_dn * q - o_star).squaredNorm();
        if (chained && t > t_seed) {
          sum_ex[i] += (C * (P_chain * q) - o_star).squaredNorm();
          ++cnt_ex[i];
        }
      }
    }
  }

  Theorem2Result out;
  out.s0_norm2 = s0n2;
  for (Index i = 0; i < nrec; ++i) {
    const Index t = d + i;
    Theorem2Record rec;
    rec.t = t;
    rec.e_la = sum_la[i] / trials;
    rec.e_dn = sum_dn[i] / trials;
    rec.e_exact = cnt_ex[i] ? sum_ex[i] / cnt_ex[i] : 0.0;
    const double td = static_cast<double>(t);
    rec.closed_form = s0n2 / d * (1.0 - td / d + td * (td - 1.0) / (static_cast<double>(d) * d));
    const double var = std::max(0.0, sum2_la[i] / trials - rec.e_la * rec.e_la);
    rec.se_la = std::sqrt(var / trials);
    out.records.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transition spectrum of M = alpha (I - beta k k~^T) for unit read keys:
// alpha with multiplicity d-1 plus the write eigenvalue
// alpha (1 - beta k~^T k). Residuals compare the analytic pair against the
// dense trace and LU determinant of the explicit matrix.
// ---------------------------------------------------------------------------

struct TransitionEigs {
  double lambda_bulk = 0.0;
  double lambda_write = 0.0;
  double residual_trace = 0.0;
  double residual_det = 0.0;
};

inline TransitionEigs transition_eigs(double alpha, double beta, const Vecd& k, const Vecd& k_write) {
  if (k.size() != k_write.size()) throw std::invalid_argument("transition_eigs: dimension mismatch");
  if (std::abs(k.norm() - 1.0) > 1e-9) throw std::invalid_argument("transition_eigs: read key must be unit norm");
  const Index d = k.size();
  const Matd M = alpha * (Matd::Identity(d, d) - beta * k * k_write.transpose());
  TransitionEigs out;
  out.lambda_bulk = alpha;
  out.lambda_write = alpha * (1.0 - beta * k_write.dot(k));
  out.residual_trace = std::abs(M.trace() - ((d - 1) * alpha + out.lambda_write));
  out.residual_det = std::abs(M.determinant() - std::pow(alpha, double(d - 1)) * out.lambda_write);
  return out;
}

// Unit-disk sufficient condition: with B diagonal in [1/x, x], ||k|| = 1,
// alpha, beta in [0,1] and beta * x <= 2, every eigenvalue of
// alpha (I - beta k (Bk)^T) has modulus <= 1.
inline TheoremReport check_unit_disk(double beta, double x, long trials, std::uint64_t seed, Index d = 8) {
  Rng rng(seed);
  double worst = 0.0;
  for (long i = 0; i < trials; ++i) {
    const Vecd k = rng.sphere_vec(d);
    const double alpha = rng.uniform01();
    Vecd B(d);
    for (Index j = 0; j < d; ++j) B[j] = rng.uniform(1.0 / x, x);
    const Vecd kw = B.cwiseProduct(k);
    const double lw = alpha * (1.0 - beta * kw.dot(k));
    worst = std::max(worst, std::max(std::abs(lw), std::abs(alpha)));
  }
  TheoremReport r = make_report("unit_disk", std::max(0.0, worst - 1.0), 1e-12, trials);
  r.details.push_back("max |eigenvalue| = " + std::to_string(worst));
  return r;
}

// Negative write eigenvalue: B = xI with beta * x > 1 forces
// lambda_write = alpha (1 - beta x) < 0.
inline double negative_eig_construction(double alpha, double beta, double x, Index d, std::uint64_t seed) {
  Rng rng(seed);
  const Vecd k = rng.sphere_vec(d);
  const Vecd kw = x * k;
  return transition_eigs(alpha, beta, k, kw).lambda_write;
}

// ---------------------------------------------------------------------------
// POCP verifiers: each closed-form update must be a stationary point of its
// preconditioned online convex program. The proximal term is strictly convex
// (P^{-1} norm, P SPD), so stationarity certifies the minimizer. Gradients are
// measured by central finite differences on the objective.
// ---------------------------------------------------------------------------

enum class PocpVariant { PGDN, PLonghorn, KeyPrecondMamba2 };

inline const char* to_string(PocpVariant v) {
  switch (v) {
    case PocpVariant::PGDN: return "pgdn";
    case PocpVariant::PLonghorn: return "p-longhorn";
    default: return "key-precond-mamba2";
  }
}

namespace detail {

inline double pnorm2(const Matd& X, const Eigen::LDLT<Matd>& P_ldlt) {
  // tr(X P^{-1} X^T)
  const Matd Z = P_ldlt.solve(X.transpose());
  return (X * Z).trace();
}

}  // namespace detail

struct PocpCheck {
  Matd S_star;
  double grad_norm = 0.0;       // Frobenius norm of the FD gradient at S_star
  double min_perturb_gain = 0;  // min over random perturbations of L(S*+dS) - L(S*)
};

inline PocpCheck pocp_verify(PocpVariant variant, const Matd& S_prev, const Vecd& k, const Vecd& v, double alpha,
                             double beta, const Matd& P, std::uint64_t seed = 0, double h = 1e-5) {
  const Index d_v = S_prev.rows();
  const Index d_k = S_prev.cols();
  if (k.size() != d_k || v.size() != d_v || P.rows() != d_k || P.cols() != d_k)
    throw std::invalid_argument("pocp_verify: dimension mismatch");
  const Eigen::LDLT<Matd> P_ldlt(P);
  if (P_ldlt.info() != Eigen::Success || !(P_ldlt.vectorD().array() > 0.0).all())
    throw std::invalid_argument("pocp_verify: P must be symmetric positive definite");

  const auto objective = [&](const Matd& S) -> double {
    switch (variant) {
      case PocpVariant::PGDN: {
        const Vecd target = beta * (v - alpha * S_prev * k);
        return detail::pnorm2(S - alpha * S_prev, P_ldlt) - 2.0 * (S * k).dot(target);
      }
      case PocpVariant::PLonghorn:
        return detail::pnorm2(S - S_prev, P_ldlt) + beta * (S * k - v).squaredNorm();
      default:
        return detail::pnorm2(S - alpha * S_prev, P_ldlt) - 2.0 * (S * k).dot(v);
    }
  };

  Matd S_star;
  switch (variant) {
    case PocpVariant::PGDN:
      S_star = alpha * S_prev + beta * (v - alpha * S_prev * k) * (P * k).transpose();
      break;
    case PocpVariant::PLonghorn: {
      const double eps = beta / (1.0 + beta * k.dot(P * k));  // modified gain
      S_star = S_prev + eps * (v - S_prev * k) * (P * k).transpose();
      break;
    }
    default:
      S_star = alpha * S_prev + v * (P * k).transpose();
      break;
  }

  PocpCheck out;
  out.S_star = S_star;
  double g2 = 0.0;
  Matd S = S_star;
  for (Index i = 0; i < d_v; ++i) {
    for (Index j = 0; j < d_k; ++j) {
      const double keep = S(i, j);
      S(i, j) = keep + h;
      const double fp = objective(S);
      S(i, j) = keep - h;
      const double fm = objective(S);
      S(i, j) = keep;
      const double g = (fp - fm) / (2.0 * h);
      g2 += g * g;
    }
  }
  out.grad_norm = std::sqrt(g2);

  Rng rng(seed == 0 ? 1234567ULL : seed);
  const double f0 = objective(S_star);
  double min_gain = std::numeric_limits<double>::infinity();
  for (int p = 0; p < 16; ++p) {
    const Matd dS = 1e-2 * rng.normal_mat(d_v, d_k);
    min_gain = std::min(min_gain, objective(S_star + dS) - f0);
  }
  out.min_perturb_gain = min_gain;
  return out;
}

// Write-key boundedness for the exact Sherman-Morrison path: k^T k~ in [0, 1].
inline TheoremReport check_write_key_bounded(long trials, std::uint64_t seed, double tolerance = 1e-12) {
  Rng rng(seed);
  double worst = 0.0;
  long samples = 0;
  for (long i = 0; i < trials / 16 + 1 && samples < trials; ++i) {
    const Index d = 2 + static_cast<Index>(rng.integer(15));
    const double lambda = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
    ExactGramState st = ExactGramState::init(d, lambda);
    for (int t = 0; t < 16 && samples < trials; ++t) {
      const Vecd k = rng.normal_vec(d) * std::exp(rng.uniform(-1.0, 1.0));
      auto [next, kw] = exact_update_and_write_key(st, k);
      const double ip = k.dot(kw);
      worst = std::max(worst, std::max(-ip, ip - 1.0));
      st = std::move(next);
      ++samples;
    }
  }
  TheoremReport r = make_report("write_key_bounded", std::max(0.0, worst), tolerance, samples);
  return r;
}

}  // namespace precdelta
