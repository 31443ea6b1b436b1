#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace precdelta {

// Row-major dense storage throughout: per-token rows stack into T x d blocks.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;

using Index = Eigen::Index;

enum class Solve { Online, Offline };
enum class Decay { None, Scalar, Diagonal };
enum class Precond { None, Exact, DiagRaw, DiagStable };

inline const char* to_string(Solve s) { return s == Solve::Online ? "online" : "offline"; }
inline const char* to_string(Decay d) {
  switch (d) {
    case Decay::None: return "none";
    case Decay::Scalar: return "scalar";
    default: return "diagonal";
  }
}
inline const char* to_string(Precond p) {
  switch (p) {
    case Precond::None: return "none";
    case Precond::Exact: return "exact";
    case Precond::DiagRaw: return "diag-raw";
    default: return "diag-stable";
  }
}

struct RecurrenceConfig {
  Index d_k = 0;
  Index d_v = 0;
  Solve solve = Solve::Online;
  Decay decay = Decay::None;
  Precond precond = Precond::None;
  double lambda = 1e-4;  // ridge: exact Gram needs > 0, diagonal paths use it as the elementwise ridge
  double x = 1.5;        // squash bound, B in [1/x, x]
  bool normalize_qk = false;

  void validate() const {
    if (d_k <= 0 || d_v <= 0) throw std::invalid_argument("RecurrenceConfig: dims must be positive");
    if (precond == Precond::Exact) {
      if (lambda <= 0.0) throw std::invalid_argument("RecurrenceConfig: exact preconditioning requires lambda > 0");
      if (decay != Decay::None)
        throw std::invalid_argument("RecurrenceConfig: exact preconditioning is defined for the undecayed recurrence only");
    }
    if (precond == Precond::DiagStable && (x < 1.0 || x > 2.0))
      throw std::invalid_argument("RecurrenceConfig: stable squash requires x in [1, 2]");
    if (lambda < 0.0) throw std::invalid_argument("RecurrenceConfig: lambda must be >= 0");
  }
};

// Per-token inputs. Rows of Q/K/V are q_t, k_t, v_t. Gate vectors are taken as
// plain numbers here; squashing raw parameters into valid ranges lives in mqar.
template <class Scalar>
struct SequenceBatchT {
  Mat<Scalar> Q;           // T x d_k
  Mat<Scalar> K;           // T x d_k
  Mat<Scalar> V;           // T x d_v
  Vec<Scalar> beta;        // T, gain in [0,1]
  Vec<Scalar> alpha;       // T, scalar decay in (0,1] (empty unless decay == Scalar)
  Mat<Scalar> alpha_diag;  // T x d_k, elementwise decay (empty unless decay == Diagonal)
  Vec<Scalar> alphaP;      // T, preconditioner decay (empty -> all ones)
  Vec<Scalar> betaP;       // T, preconditioner gain (empty -> all ones)
  Scalar mu = Scalar(1);   // squash center, > 0

  Index T() const { return Q.rows(); }

  void validate(const RecurrenceConfig& cfg) const {
    const Index T = Q.rows();
    auto fail = [](const std::string& what) { throw std::invalid_argument("SequenceBatch: " + what); };
    if (K.rows() != T || V.rows() != T) fail("Q/K/V row counts disagree");
    if (Q.cols() != cfg.d_k || K.cols() != cfg.d_k) fail("Q/K column count != d_k");
    if (V.cols() != cfg.d_v) fail("V column count != d_v");
    if (beta.size() != T) fail("beta length != T");
    if (cfg.decay == Decay::Scalar && alpha.size() != T) fail("scalar decay requires alpha of length T");
    if (cfg.decay == Decay::Diagonal && (alpha_diag.rows() != T || alpha_diag.cols() != cfg.d_k))
      fail("diagonal decay requires alpha_diag of shape T x d_k");
    const bool needs_precond_gates = cfg.precond == Precond::DiagRaw || cfg.precond == Precond::DiagStable;
    if (needs_precond_gates) {
      if (alphaP.size() != 0 && alphaP.size() != T) fail("alphaP length != T");
      if (betaP.size() != 0 && betaP.size() != T) fail("betaP length != T");
    }
    if (!Q.allFinite() || !K.allFinite() || !V.allFinite()) fail("non-finite entries");
    if (cfg.normalize_qk && T > 0) {
      const double qerr = (Q.rowwise().norm().array() - 1.0).abs().maxCoeff();
      const double kerr = (K.rowwise().norm().array() - 1.0).abs().maxCoeff();
      if (qerr > 1e-6 || kerr > 1e-6) fail("normalize_qk set but Q/K rows are not unit-norm");
    }
  }

  Scalar alphaP_at(Index t) const { return alphaP.size() ? alphaP[t] : Scalar(1); }
  Scalar betaP_at(Index t) const { return betaP.size() ? betaP[t] : Scalar(1); }
};

using SequenceBatch = SequenceBatchT<double>;

// Recurrent associative map S_t, d_v x d_k, initialized to zero.
template <class Scalar>
struct StateMatrixT {
  Mat<Scalar> S;
  static StateMatrixT Zero(Index d_v, Index d_k) { return {Mat<Scalar>::Zero(d_v, d_k)}; }
};

using StateMatrix = StateMatrixT<double>;

}  // namespace precdelta
