// Acceptance suite: one line per criterion, exit 0 iff all selected pass.
//   acceptance [--only N] [--skip N] [--quick]
// --quick shrinks trial counts for local smoke runs (not the shipped gate).

#include "precdelta/mqar.hpp"
#include "precdelta/suites.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

using namespace precdelta;

namespace {

struct CriterionResult {
  bool pass = false;
  std::string detail;
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

bool g_quick = false;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

CriterionResult from_reports(const std::vector<TheoremReport>& reports) {
  CriterionResult r;
  r.pass = true;
  double worst_margin = -1e300;
  std::string worst;
  for (const auto& rep : reports) {
    r.pass = r.pass && rep.pass;
    const double margin = rep.max_deviation - rep.tolerance;
    if (margin > worst_margin) {
      worst_margin = margin;
      worst = rep.name + " max_dev=" + fmt(rep.max_deviation) + " tol=" + fmt(rep.tolerance);
    }
  }
  r.detail = worst;
  return r;
}

// 1. Theorem 3.1 identity over >= 50 configurations, < 1e-8, < 30 s.
CriterionResult criterion1() {
  const double t0 = now_s();
  const auto reports = suite_theorem1(20260809, g_quick ? 10 : 50);
  CriterionResult r = from_reports({reports[0]});
  const double dt = now_s() - t0;
  r.pass = r.pass && dt < 30.0;
  r.detail += " runtime=" + fmt(dt) + "s(<30s)";
  return r;
}

// 2. Appendix D.2 counterexample, exact values, bit-level deterministic.
CriterionResult criterion2() {
  CriterionResult r = from_reports(suite_counterexample());
  const CounterexampleResult a = counterexample_d2();
  const CounterexampleResult b = counterexample_d2();
  const bool bitrep = (a.S_apla - b.S_apla).norm() == 0.0 && (a.S_apdn - b.S_apdn).norm() == 0.0;
  r.pass = r.pass && bitrep;
  r.detail += bitrep ? " bit-reproducible" : " NOT bit-reproducible";
  return r;
}

// 3. Closed-form LA error within 3 SE (d in {4,8}, t in [d,4d], >= 1e4 trials)
//    and E_DN <= E_LA for t >= d+1; < 5 min.
CriterionResult criterion3() {
  const double t0 = now_s();
  CriterionResult r = from_reports(suite_theorem2(424242, g_quick ? 1000 : 10000));
  const double dt = now_s() - t0;
  r.pass = r.pass && dt < 300.0;
  r.detail += " runtime=" + fmt(dt) + "s(<300s)";
  return r;
}

// 4. Chunkwise <-> sequential over every supported variant/preconditioner,
//    C in {1,2,7,16,T}, 200 instances each, < 1e-10; < 2 min.
CriterionResult criterion4() {
  const double t0 = now_s();
  CriterionResult r = from_reports(suite_equivalence(1337, g_quick ? 20 : 200));
  const double dt = now_s() - t0;
  r.pass = r.pass && dt < 120.0;
  r.detail += " runtime=" + fmt(dt) + "s(<120s)";
  return r;
}

// 5. Eigenvalue lemmas: residuals < 1e-10, unit disk for beta x <= 2 over 1e4
//    draws, constructed violation for beta x > 1.
CriterionResult criterion5() { return from_reports(suite_eigs(271828, g_quick ? 1000 : 10000)); }

// 6. POCP stationarity (< 1e-7) and Table-2 P = I reductions.
CriterionResult criterion6() { return from_reports(suite_pocp(314159, g_quick ? 5 : 20)); }

// 7. Gradient grid 100% at 1e-5 relative; < 1 min.
CriterionResult criterion7() {
  const double t0 = now_s();
  CriterionResult r = from_reports(suite_gradcheck(161803));
  const double dt = now_s() - t0;
  r.pass = r.pass && dt < 60.0;
  r.detail += " runtime=" + fmt(dt) + "s(<60s)";
  return r;
}

// 8. Write-key boundedness over 1e4 draws.
CriterionResult criterion8() { return from_reports({check_write_key_bounded(10000, 57721)}); }

// 9. MQAR desk scale. DN > 0.9 on (4 pairs, len 64) within 3000 steps; PDN
//    (x = 1.5) mean final accuracy >= DN on (16 pairs, len 256) over 3 seeds.
//    Directional only; < 30 min.
ModelConfig mqar_model_config(const std::string& variant, int vocab, std::uint64_t seed) {
  ModelConfig mc;
  mc.rec = variant_config(variant, 32, 32);
  mc.rec.x = 1.5;
  mc.vocab_size = vocab;
  mc.d_model = 64;
  mc.d_hidden = 64;
  mc.seed = seed;
  return mc;
}

TrainResult run_mqar(const std::string& variant, int pairs, int len, int steps, double stop_at, std::uint64_t seed) {
  MqarConfig dc;
  dc.vocab_size = 64;
  dc.num_kv_pairs = pairs;
  dc.seq_len = len;
  dc.num_examples = 8192;
  dc.seed = seed;
  const MqarDataset train_ds = generate_mqar(dc);
  dc.num_examples = 512;
  dc.seed = seed + 1000003;
  const MqarDataset eval_ds = generate_mqar(dc);

  TinyModel model(mqar_model_config(variant, 64, seed * 31 + 7));
  TrainConfig tc;
  tc.steps = steps;
  tc.batch = 64;
  tc.lr = 1e-3;
  tc.warmup = 100;
  tc.eval_interval = 50;
  tc.stop_at_accuracy = stop_at;
  tc.seed = seed;
  return train(model, train_ds, eval_ds, tc);
}

CriterionResult criterion9() {
  const double t0 = now_s();
  CriterionResult r;

  const TrainResult easy = run_mqar("dn", 4, 64, g_quick ? 300 : 3000, 0.9, 1);
  const bool easy_ok = !easy.diverged && easy.final_accuracy > 0.9 && easy.steps_run <= 3000;
  std::printf("  criterion 9a: DN (4 pairs, len 64) accuracy %.4f after %d steps -> %s\n", easy.final_accuracy,
              easy.steps_run, easy_ok ? "ok" : "FAIL");

  double dn_mean = 0.0, pdn_mean = 0.0;
  const int hard_steps = g_quick ? 100 : 700;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const TrainResult dn = run_mqar("dn", 16, 256, hard_steps, -1.0, seed);
    const TrainResult pdn = run_mqar("pdn", 16, 256, hard_steps, -1.0, seed);
    std::printf("  criterion 9b: seed %llu DN %.4f PDN %.4f\n", static_cast<unsigned long long>(seed),
                dn.final_accuracy, pdn.final_accuracy);
    dn_mean += dn.final_accuracy / 3.0;
    pdn_mean += pdn.final_accuracy / 3.0;
  }
  const bool hard_ok = pdn_mean >= dn_mean;
  const double dt = now_s() - t0;
  r.pass = easy_ok && hard_ok && dt < 1800.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "easy=%.4f hard DN mean=%.4f PDN mean=%.4f runtime=%.0fs(<1800s)",
                easy.final_accuracy, dn_mean, pdn_mean, dt);
  r.detail = buf;
  return r;
}

// 10. CPU performance: chunkwise PGDN-stable strictly faster than sequential
//     at T = 4096, d = 64.
CriterionResult criterion10() {
  const BenchRow row = bench_variant("pgdn", 64, 64, g_quick ? 1024 : 4096, 64, 9, 8086);
  CriterionResult r;
  r.pass = row.chunkwise_ns < row.sequential_ns;
  r.detail = "chunkwise=" + fmt(row.chunkwise_ns / 1e6) + "ms sequential=" + fmt(row.sequential_ns / 1e6) + "ms";
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skip;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--skip") && i + 1 < argc) skip.insert(std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--quick")) g_quick = true;
    else {
      std::fprintf(stderr, "usage: acceptance [--only N] [--skip N] [--quick]\n");
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<CriterionResult()>>> criteria = {
      {"theorem-3.1 exact-precondition identity", criterion1},
      {"appendix D.2 counterexample values", criterion2},
      {"closed-form LA error + DN dominance (Monte Carlo)", criterion3},
      {"chunkwise/sequential equivalence grid", criterion4},
      {"transition eigenvalue lemmas", criterion5},
      {"POCP closed-form stationarity", criterion6},
      {"gradient suite (variants x sizes)", criterion7},
      {"Sherman-Morrison write-key boundedness", criterion8},
      {"MQAR desk-scale training", criterion9},
      {"CPU chunkwise-vs-sequential wall time", criterion10},
  };

  bool all_pass = true;
  for (int i = 0; i < static_cast<int>(criteria.size()); ++i) {
    const int n = i + 1;
    if (!only.empty() && !only.count(n)) continue;
    if (skip.count(n)) continue;
    const double t0 = now_s();
    const CriterionResult res = criteria[i].second();
    std::printf("[%s] criterion %2d: %s  (%s) [%.1fs]\n", res.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(),
                res.detail.c_str(), now_s() - t0);
    std::fflush(stdout);
    all_pass = all_pass && res.pass;
  }
  return all_pass ? 0 : 1;
}
