#pragma once

#include "precdelta/rng.hpp"
#include "precdelta/types.hpp"

#include <string>
#include <vector>

namespace precdelta {

// The recurrence zoo, keyed by the CLI names. Preconditioned variants default
// to the stable squash parameterization; --precond overrides.
inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"la",  "mamba2",  "gla",  "dn",  "gdn",  "kda",
                                                 "pla", "pmamba2", "pgla", "pdn", "pgdn", "pkda"};
  return names;
}

inline RecurrenceConfig variant_config(const std::string& name, Index d_k, Index d_v,
                                       Precond precond_override = Precond::None, bool has_override = false) {
  RecurrenceConfig cfg;
  cfg.d_k = d_k;
  cfg.d_v = d_v;
  const bool preconditioned = !name.empty() && name[0] == 'p';
  const std::string base = preconditioned ? name.substr(1) : name;
  if (base == "la" || base == "mamba2" || base == "gla") {
    cfg.solve = Solve::Offline;
    cfg.decay = base == "la" ? Decay::None : base == "mamba2" ? Decay::Scalar : Decay::Diagonal;
  } else if (base == "dn" || base == "gdn" || base == "kda") {
    cfg.solve = Solve::Online;
    cfg.decay = base == "dn" ? Decay::None : base == "gdn" ? Decay::Scalar : Decay::Diagonal;
  } else {
    throw std::invalid_argument("unknown variant: " + name);
  }
  cfg.precond = preconditioned ? Precond::DiagStable : Precond::None;
  if (has_override) cfg.precond = precond_override;
  return cfg;
}

struct BatchOptions {
  bool unit_qk = false;
  double beta_lo = 0.0, beta_hi = 1.0;
  double alpha_lo = 0.5, alpha_hi = 1.0;
  double alphaP_lo = 0.8, alphaP_hi = 1.0;
  double betaP_lo = 0.0, betaP_hi = 1.0;
};

inline SequenceBatch random_batch(const RecurrenceConfig& cfg, Index T, Rng& rng, const BatchOptions& opt = {}) {
  SequenceBatch b;
  b.Q.resize(T, cfg.d_k);
  b.K.resize(T, cfg.d_k);
  if (opt.unit_qk) {
    for (Index t = 0; t < T; ++t) {
      b.Q.row(t) = rng.sphere_vec(cfg.d_k).transpose();
      b.K.row(t) = rng.sphere_vec(cfg.d_k).transpose();
    }
  } else {
    b.Q = rng.normal_mat(T, cfg.d_k) / std::sqrt(static_cast<double>(cfg.d_k));
    b.K = rng.normal_mat(T, cfg.d_k) / std::sqrt(static_cast<double>(cfg.d_k));
  }
  b.V = rng.normal_mat(T, cfg.d_v);
  b.beta = rng.uniform_vec(T, opt.beta_lo, opt.beta_hi);
  if (cfg.decay == Decay::Scalar) b.alpha = rng.uniform_vec(T, opt.alpha_lo, opt.alpha_hi);
  if (cfg.decay == Decay::Diagonal) {
    b.alpha_diag.resize(T, cfg.d_k);
    for (Index t = 0; t < T; ++t)
      for (Index j = 0; j < cfg.d_k; ++j) b.alpha_diag(t, j) = rng.uniform(opt.alpha_lo, opt.alpha_hi);
  }
  if (cfg.precond == Precond::DiagRaw || cfg.precond == Precond::DiagStable) {
    b.alphaP = rng.uniform_vec(T, opt.alphaP_lo, opt.alphaP_hi);
    b.betaP = rng.uniform_vec(T, opt.betaP_lo, opt.betaP_hi);
  }
  b.mu = 1.0;
  return b;
}

}  // namespace precdelta
