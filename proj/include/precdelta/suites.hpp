#pragma once

#include "precdelta/autograd.hpp"
#include "precdelta/chunkwise.hpp"
#include "precdelta/parallel.hpp"
#include "precdelta/theory.hpp"
#include "precdelta/variants.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace precdelta {

// Verification suites shared by the CLI and the acceptance harness. Every
// tolerance is pinned here.

// Chunkwise vs sequential over the full variant grid: the six base recurrences
// plus both diagonal preconditioners on each preconditioned variant,
// C in {1, 2, 7, 16, T}.
inline std::vector<TheoremReport> suite_equivalence(std::uint64_t seed, int instances = 200) {
  struct Combo {
    std::string name;
    Precond precond;
  };
  std::vector<Combo> combos;
  for (const char* n : {"la", "mamba2", "gla", "dn", "gdn", "kda"}) combos.push_back({n, Precond::None});
  for (const char* n : {"pla", "pmamba2", "pgla", "pdn", "pgdn", "pkda"}) {
    combos.push_back({n, Precond::DiagRaw});
    combos.push_back({n, Precond::DiagStable});
  }
  std::vector<TheoremReport> reports(combos.size());
  parallel_for(static_cast<long>(combos.size()), [&](long ci, int) {
    const Combo& combo = combos[ci];
    Rng rng(seed + 7919 * ci);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
      const Index dims[] = {4, 8, 16};
      RecurrenceConfig cfg = variant_config(combo.name, dims[rng.integer(3)], dims[rng.integer(3)], combo.precond, true);
      const Index T = 1 + static_cast<Index>(rng.integer(128));
      const SequenceBatch batch = random_batch(cfg, T, rng);
      const RunResult want = run_sequential(cfg, batch);
      for (const Index C : {Index(1), Index(2), Index(7), Index(16), T}) {
        const Matd got = full_chunkwise_run(cfg, batch, C);
        worst = std::max(worst, (got - want.outputs).cwiseAbs().maxCoeff());
      }
    }
    std::string label = "equivalence/" + combo.name;
    if (combo.precond == Precond::DiagRaw) label += "(diag-raw)";
    if (combo.precond == Precond::DiagStable) label += "(diag-stable)";
    reports[ci] = make_report(label, worst, 1e-10, instances * 5);
  });
  return reports;
}

// Exact-preconditioner identity S_t = C_t G_t^{-1} plus output agreement, over
// a randomized configuration grid with lambda in {0.1, 1, 10}; also the
// Sherman-Morrison write-key boundedness property.
inline std::vector<TheoremReport> suite_theorem1(std::uint64_t seed, int configs = 50) {
  Rng rng(seed);
  double worst = 0.0;
  const double lambdas[] = {0.1, 1.0, 10.0};
  std::vector<TheoremReport> out;
  for (int i = 0; i < configs; ++i) {
    const Index d_k = 2 + static_cast<Index>(rng.integer(31));
    const Index d_v = 2 + static_cast<Index>(rng.integer(15));
    const Index T = 1 + static_cast<Index>(rng.integer(256));
    worst = std::max(worst, check_theorem1(d_k, d_v, T, lambdas[i % 3], seed + 31 * i).max_deviation);
  }
  out.push_back(make_report("theorem1/identity-grid", worst, 1e-8, configs));
  out.push_back(check_write_key_bounded(10000, seed + 999));
  return out;
}

// Monte-Carlo LA/DN comparison against the closed-form LA error.
inline std::vector<TheoremReport> suite_theorem2(std::uint64_t seed, long trials = 10000) {
  std::vector<TheoremReport> out;
  for (const Index d : {Index(4), Index(8)}) {
    const Theorem2Result res = theorem2_montecarlo(d, 4 * d, trials, seed + d);
    double worst_z = 0.0, worst_gap = 0.0, worst_exact = 0.0;
    for (const auto& rec : res.records) {
      worst_z = std::max(worst_z, std::abs(rec.e_la - rec.closed_form) / (3.0 * rec.se_la));
      if (rec.t >= d + 1) worst_gap = std::max(worst_gap, rec.e_dn - rec.e_la);
      worst_exact = std::max(worst_exact, rec.e_exact);
    }
    const std::string sfx = "(d=" + std::to_string(d) + ")";
    TheoremReport closed = make_report("theorem2/closed-form-within-3se" + sfx, worst_z, 1.0, trials);
    out.push_back(closed);
    TheoremReport gap = make_report("theorem2/dn-below-la" + sfx, std::max(0.0, worst_gap), 1e-12, trials);
    out.push_back(gap);
    out.push_back(make_report("theorem2/exact-chain-machine-zero" + sfx, worst_exact, 1e-16, trials));
  }
  return out;
}

// Transition-spectrum residuals, the unit-disk condition (x = 2 boundary
// included) and the constructed negative-eigenvalue violation for beta x > 1.
inline std::vector<TheoremReport> suite_eigs(std::uint64_t seed, long trials = 10000) {
  std::vector<TheoremReport> out;
  Rng rng(seed);
  double worst = 0.0;
  for (long i = 0; i < trials; ++i) {
    const Index d = 2 + static_cast<Index>(rng.integer(15));
    const auto e = transition_eigs(rng.uniform01(), rng.uniform01(), rng.sphere_vec(d),
                                   Vecd(rng.uniform_vec(d, 1.0 / 1.5, 1.5).cwiseProduct(rng.sphere_vec(d))));
    worst = std::max(worst, std::max(e.residual_trace, e.residual_det));
  }
  out.push_back(make_report("eigs/trace-det-residuals", worst, 1e-10, trials));

  double worst_disk = 0.0;
  long n = 0;
  for (const auto& [beta, x] : std::vector<std::pair<double, double>>{{1.0, 2.0}, {1.0, 1.5}, {0.5, 2.0}, {0.25, 1.2}}) {
    const TheoremReport r = check_unit_disk(beta, x, trials / 4, seed + n++);
    worst_disk = std::max(worst_disk, r.max_deviation);
  }
  out.push_back(make_report("eigs/unit-disk(beta*x<=2)", worst_disk, 1e-12, trials));

  const double lw = negative_eig_construction(1.0, 1.0, 3.0, 8, seed + 17);
  TheoremReport viol = make_report("eigs/negative-write-eig(beta*x>1)", lw, 0.0, 1);
  viol.details.push_back("lambda_write = " + std::to_string(lw) + " (B = xI, x = 3, beta = 1)");
  out.push_back(viol);
  return out;
}

// POCP closed forms: FD-gradient stationarity and the P = I reductions.
inline std::vector<TheoremReport> suite_pocp(std::uint64_t seed, int instances = 20) {
  Rng rng(seed);
  double worst_grad = 0.0;
  for (int i = 0; i < instances; ++i) {
    const Index d_k = 2 + static_cast<Index>(rng.integer(7));
    const Index d_v = 2 + static_cast<Index>(rng.integer(7));
    const Matd S_prev = rng.normal_mat(d_v, d_k);
    const Vecd k = rng.sphere_vec(d_k);
    const Vecd v = rng.normal_vec(d_v);
    const double alpha = rng.uniform(0.5, 1.0), beta = rng.uniform01();
    Matd P;
    if (i % 3 == 0) {
      P = Matd::Identity(d_k, d_k);
    } else if (i % 3 == 1) {
      P = rng.uniform_vec(d_k, 1.0 / 1.5, 1.5).asDiagonal();
    } else {
      P = rng.normal_mat(d_k, d_k);
      P = P * P.transpose() + 0.3 * Matd::Identity(d_k, d_k);
    }
    for (const auto variant : {PocpVariant::PGDN, PocpVariant::PLonghorn, PocpVariant::KeyPrecondMamba2}) {
      const PocpCheck c = pocp_verify(variant, S_prev, k, v, alpha, beta, P, seed + i);
      worst_grad = std::max(worst_grad, c.grad_norm);
    }
  }
  std::vector<TheoremReport> out;
  out.push_back(make_report("pocp/stationarity-grad-norm", worst_grad, 1e-7, instances * 3));

  // Table-2 reduction: P = I Longhorn gain beta / (1 + beta k^T k).
  double worst_red = 0.0;
  for (int i = 0; i < instances; ++i) {
    const Index d = 2 + static_cast<Index>(rng.integer(7));
    const Matd S_prev = rng.normal_mat(d, d);
    const Vecd k = rng.normal_vec(d);
    const Vecd v = rng.normal_vec(d);
    const double beta = rng.uniform01();
    const PocpCheck lh = pocp_verify(PocpVariant::PLonghorn, S_prev, k, v, 1.0, beta, Matd(Matd::Identity(d, d)));
    const double eps = beta / (1.0 + beta * k.dot(k));
    const Matd expect = S_prev + eps * (v - S_prev * k) * k.transpose();
    worst_red = std::max(worst_red, (lh.S_star - expect).cwiseAbs().maxCoeff());
    // PGDN with diagonal P ties to step_online with k_write = P k.
    const Vecd B = rng.uniform_vec(d, 0.5, 1.5);
    const double alpha = rng.uniform(0.5, 1.0);
    const PocpCheck pg = pocp_verify(PocpVariant::PGDN, S_prev, k, v, alpha, beta, Matd(B.asDiagonal()));
    Gates g;
    g.beta = beta;
    g.alpha = alpha;
    const auto tied = step_online(StateMatrix{S_prev}, k, Vecd(B.cwiseProduct(k)), v, g);
    worst_red = std::max(worst_red, (pg.S_star - tied.S).cwiseAbs().maxCoeff());
  }
  out.push_back(make_report("pocp/p-identity-reductions", worst_red, 1e-10, instances * 2));
  return out;
}

// Full gradient grid: all twelve variants (preconditioned ones on the stable
// path) x T in 1..16 x d in {2, 4, 8}, relative tolerance 1e-5.
inline std::vector<TheoremReport> suite_gradcheck(std::uint64_t seed) {
  struct Case {
    std::string name;
    Index T, d;
  };
  std::vector<Case> cases;
  for (const auto& name : variant_names())
    for (Index T = 1; T <= 16; ++T)
      for (const Index d : {Index(2), Index(4), Index(8)}) cases.push_back({name, T, d});

  std::vector<double> errs(cases.size(), 0.0);
  parallel_for(static_cast<long>(cases.size()), [&](long i, int) {
    const Case& c = cases[i];
    Rng rng(seed + 104729 * i);
    RecurrenceConfig cfg = variant_config(c.name, c.d, c.d);
    BatchOptions opt;
    opt.beta_lo = 0.05;
    opt.beta_hi = 0.95;
    opt.alpha_lo = 0.55;
    opt.alpha_hi = 0.95;
    opt.alphaP_lo = 0.7;
    opt.alphaP_hi = 0.95;
    opt.betaP_lo = 0.1;
    opt.betaP_hi = 0.9;
    const SequenceBatch batch = random_batch(cfg, c.T, rng, opt);
    errs[i] = finite_diff_check(cfg, batch, seed + i);
  });
  double worst = 0.0;
  long fails = 0;
  for (const double e : errs) {
    worst = std::max(worst, e);
    if (e >= 1e-5) ++fails;
  }
  TheoremReport r = make_report("gradcheck/variant-grid", worst, 1e-5, static_cast<long>(cases.size()));
  r.details.push_back("failing cases: " + std::to_string(fails) + " of " + std::to_string(cases.size()));
  return {r};
}

// Appendix D.2 counterexample, exact values.
inline std::vector<TheoremReport> suite_counterexample() {
  const CounterexampleResult r = counterexample_d2();
  double dev = 0.0;
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) {
      dev = std::max(dev, std::abs(r.S_apla(i, j) - 0.5));
      dev = std::max(dev, std::abs(r.S_apdn(i, j) - 1.0 / 3.0));
    }
  if (!r.differ) dev = 1.0;
  TheoremReport rep = make_report("counterexample/apla-vs-apdn", dev, 1e-15, 1);
  rep.details.push_back("S_APLA entries = " + std::to_string(r.S_apla(0, 0)));
  rep.details.push_back("S_APDN entries = " + std::to_string(r.S_apdn(0, 0)));
  return {rep};
}

// Wall-clock comparison used by the bench command and the CPU performance
// criterion. Median of `repeats` runs, one warmup each.
struct BenchRow {
  std::string variant;
  Index T, C;
  double chunkwise_ns = 0.0;
  double sequential_ns = 0.0;
};

inline BenchRow bench_variant(const std::string& name, Index d_k, Index d_v, Index T, Index C, int repeats,
                              std::uint64_t seed) {
  Rng rng(seed);
  const RecurrenceConfig cfg = variant_config(name, d_k, d_v);
  const SequenceBatch batch = random_batch(cfg, T, rng);
  const auto timed = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count();
  };
  // Interleaved samples so ambient load hits both arms alike; medians reported.
  full_chunkwise_run(cfg, batch, C);
  run_sequential(cfg, batch);
  std::vector<double> chunk_ns, seq_ns;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    chunk_ns.push_back(timed([&] { full_chunkwise_run(cfg, batch, C); }));
    seq_ns.push_back(timed([&] { run_sequential(cfg, batch); }));
  }
  std::sort(chunk_ns.begin(), chunk_ns.end());
  std::sort(seq_ns.begin(), seq_ns.end());
  BenchRow row{name, T, C, 0.0, 0.0};
  row.chunkwise_ns = chunk_ns[chunk_ns.size() / 2];
  row.sequential_ns = seq_ns[seq_ns.size() / 2];
  return row;
}

}  // namespace precdelta
