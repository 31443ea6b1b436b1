// Command-line front end: verification suites, CPU benchmarks, and the MQAR
// data/train/eval harness. Exit codes: 0 pass, 1 check failure, 2 usage error.

#include "precdelta/mqar_io.hpp"
#include "precdelta/report.hpp"
#include "precdelta/suites.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace precdelta;

namespace {

Precond parse_precond(const std::string& s) {
  if (s == "none") return Precond::None;
  if (s == "exact") return Precond::Exact;
  if (s == "diag-raw") return Precond::DiagRaw;
  if (s == "diag-stable") return Precond::DiagStable;
  throw CLI::ValidationError("--precond", "unknown preconditioner: " + s);
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  long trials = 10000;
  Index d = 0, dv = 0, T = 0;
  double lambda = 1.0;
  double x = 1.5;
  std::string out;
  std::string format = "json";
};

int run_verify(const VerifyArgs& a) {
  std::vector<TheoremReport> checks;
  const auto add = [&checks](const std::vector<TheoremReport>& more) {
    checks.insert(checks.end(), more.begin(), more.end());
  };
  const bool all = a.suite == "all";
  if (all || a.suite == "theorem1") {
    if (a.d > 0 || a.T > 0) {
      const Index d = a.d > 0 ? a.d : 8;
      checks.push_back(check_theorem1(d, a.dv > 0 ? a.dv : d, a.T > 0 ? a.T : 64, a.lambda, a.seed));
    } else {
      add(suite_theorem1(a.seed));
    }
  }
  if (all || a.suite == "theorem2") add(suite_theorem2(a.seed, a.trials));
  if (all || a.suite == "equivalence") add(suite_equivalence(a.seed));
  if (all || a.suite == "eigs") add(suite_eigs(a.seed, a.trials));
  if (all || a.suite == "pocp") add(suite_pocp(a.seed));
  if (all || a.suite == "gradcheck") add(suite_gradcheck(a.seed));
  if (all || a.suite == "counterexample") add(suite_counterexample());
  if (checks.empty()) throw CLI::ValidationError("--suite", "unknown suite: " + a.suite);

  nlohmann::json echo;
  echo["command"] = "verify";
  echo["suite"] = a.suite;
  echo["seed"] = a.seed;
  echo["trials"] = a.trials;
  echo["d"] = a.d;
  echo["dv"] = a.dv;
  echo["T"] = a.T;
  echo["lambda"] = a.lambda;
  echo["x"] = a.x;
  const nlohmann::json envelope = report_envelope(echo, checks);

  bool pass = true;
  std::string first_fail;
  for (const auto& c : checks) {
    std::printf("[%s] %-44s max_dev=%s tol=%s samples=%ld\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                format_double(c.max_deviation).c_str(), format_double(c.tolerance).c_str(), c.samples);
    if (!c.pass && first_fail.empty()) first_fail = c.name;
    pass = pass && c.pass;
  }
  if (!a.out.empty()) {
    if (a.format == "csv")
      write_report_csv(envelope, a.out);
    else
      write_report_json(envelope, a.out);
  }
  if (!pass) std::fprintf(stderr, "first failing check: %s\n", first_fail.c_str());
  return pass ? 0 : 1;
}

struct BenchArgs {
  std::string variant = "pgdn";
  std::vector<Index> T{4096};
  std::vector<Index> C{64};
  int repeats = 9;
  Index d = 64, dv = 64;
  std::uint64_t seed = 0;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw std::runtime_error("cannot open " + a.out);
    os = &file;
  }
  *os << "variant,T,C,median_ns,sequential_ns,note\n";
  for (const Index T : a.T) {
    for (const Index C : a.C) {
      const BenchRow row = bench_variant(a.variant, a.d, a.dv, T, C, a.repeats, a.seed + T + C);
      *os << row.variant << "," << row.T << "," << row.C << "," << format_double(row.chunkwise_ns) << ","
          << format_double(row.sequential_ns) << "," << (a.repeats <= 1 ? "noisy" : "") << "\n";
    }
  }
  return 0;
}

struct MqarArgs {
  std::string variant = "dn";
  std::string precond;
  int pairs = 4, len = 64, n = 10000, vocab = 64;
  std::uint64_t seed = 0;
  double x = 1.5, lr = 1e-3;
  int steps = 3000, batch = 64, eval_interval = 50, warmup = 100;
  int d_model = 64, d_k = 32, d_v = 32, d_hidden = 64;
  Index chunk = 0;  // eval: use the chunkwise path when > 0
  std::string data, eval_data, out, ckpt;
};

MqarDataset dataset_from_args(const MqarArgs& a, std::uint64_t seed_offset, int n_override) {
  MqarConfig dc;
  dc.vocab_size = a.vocab;
  dc.num_kv_pairs = a.pairs;
  dc.seq_len = a.len;
  dc.num_examples = n_override > 0 ? n_override : a.n;
  dc.seed = a.seed + seed_offset;
  return generate_mqar(dc);
}

int run_mqar_gen(const MqarArgs& a) {
  if (a.out.empty()) throw CLI::ValidationError("--out", "gen requires an output path");
  save_dataset_jsonl(dataset_from_args(a, 0, 0), a.out);
  std::printf("wrote %d examples to %s\n", a.n, a.out.c_str());
  return 0;
}

int run_mqar_train(const MqarArgs& a) {
  ModelConfig mc;
  mc.rec = variant_config(a.variant, a.d_k, a.d_v, a.precond.empty() ? Precond::None : parse_precond(a.precond),
                          !a.precond.empty());
  mc.rec.x = a.x;
  mc.vocab_size = a.vocab;
  mc.d_model = a.d_model;
  mc.d_hidden = a.d_hidden;
  mc.seed = a.seed * 31 + 7;
  TinyModel model(mc);

  const MqarDataset train_ds = a.data.empty() ? dataset_from_args(a, 0, 0) : load_dataset_jsonl(a.data);
  const MqarDataset eval_ds =
      a.eval_data.empty() ? dataset_from_args(a, 1000003, 512) : load_dataset_jsonl(a.eval_data);

  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.warmup = a.warmup;
  tc.eval_interval = a.eval_interval;
  tc.seed = a.seed;
  const TrainResult res = train(model, train_ds, eval_ds, tc);

  const std::string prefix = a.out.empty() ? "mqar_run" : a.out;
  {
    std::ofstream curve(prefix + ".curve.csv");
    curve << "step,loss,accuracy\n";
    for (const auto& p : res.curve)
      curve << p.step << "," << format_double(p.loss) << "," << format_double(p.accuracy) << "\n";
  }
  save_checkpoint(model, prefix + ".ckpt");
  nlohmann::json metrics;
  metrics["tool_version"] = kToolVersion;
  metrics["variant"] = a.variant;
  metrics["model"] = model_config_json(mc);
  metrics["train"] = {{"steps", a.steps}, {"batch", a.batch}, {"lr", a.lr},      {"warmup", a.warmup},
                      {"seed", a.seed},   {"pairs", a.pairs}, {"len", a.len},    {"examples", a.n}};
  metrics["final_accuracy"] = res.final_accuracy;
  metrics["steps_run"] = res.steps_run;
  metrics["diverged"] = res.diverged;
  write_report_json(metrics, prefix + ".metrics.json");
  std::printf("final accuracy %.4f after %d steps%s; wrote %s.{curve.csv,ckpt,metrics.json}\n", res.final_accuracy,
              res.steps_run, res.diverged ? " (DIVERGED)" : "", prefix.c_str());
  return res.diverged ? 1 : 0;
}

int run_mqar_eval(const MqarArgs& a) {
  if (a.ckpt.empty()) throw CLI::ValidationError("--ckpt", "eval requires a checkpoint");
  const TinyModel model = load_checkpoint(a.ckpt);
  const MqarDataset ds = a.data.empty() ? dataset_from_args(a, 1000003, 512) : load_dataset_jsonl(a.data);
  const double acc = evaluate(model, ds, a.chunk > 0, a.chunk > 0 ? a.chunk : 16);
  std::printf("accuracy %.6f over %ld examples%s\n", acc, static_cast<long>(ds.tokens.rows()),
              a.chunk > 0 ? " (chunkwise path)" : "");
  if (!a.out.empty()) {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["accuracy"] = acc;
    j["examples"] = ds.tokens.rows();
    j["chunk"] = a.chunk;
    write_report_json(j, a.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"precdelta: preconditioned linear recurrences - verifiers, benchmarks, MQAR harness"};
  app.require_subcommand(1);

  VerifyArgs va;
  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  verify->add_option("--suite", va.suite,
                     "one of equivalence|theorem1|theorem2|eigs|pocp|gradcheck|counterexample|all");
  verify->add_option("--seed", va.seed, "RNG seed");
  verify->add_option("--trials", va.trials, "Monte-Carlo trial count");
  verify->add_option("--d", va.d, "key dimension (theorem1 single-config mode)");
  verify->add_option("--dv", va.dv, "value dimension");
  verify->add_option("--T", va.T, "sequence length");
  verify->add_option("--lambda", va.lambda, "ridge");
  verify->add_option("--x", va.x, "squash bound");
  verify->add_option("--out", va.out, "report file");
  verify->add_option("--format", va.format, "json|csv")->check(CLI::IsMember({"json", "csv"}));

  BenchArgs ba;
  CLI::App* bench = app.add_subcommand("bench", "chunkwise vs sequential wall time");
  bench->add_option("--variant", ba.variant, "recurrence variant");
  bench->add_option("--T", ba.T, "sequence lengths");
  bench->add_option("--C", ba.C, "chunk sizes");
  bench->add_option("--repeats", ba.repeats, "samples per median");
  bench->add_option("--d", ba.d, "key dimension");
  bench->add_option("--dv", ba.dv, "value dimension");
  bench->add_option("--seed", ba.seed, "RNG seed");
  bench->add_option("--out", ba.out, "CSV file (default stdout)");

  MqarArgs ma;
  CLI::App* mqar = app.add_subcommand("mqar", "associative-recall data/train/eval");
  mqar->require_subcommand(1);
  CLI::App* gen = mqar->add_subcommand("gen", "generate a JSONL dataset");
  CLI::App* train_cmd = mqar->add_subcommand("train", "train the two-layer model");
  CLI::App* eval_cmd = mqar->add_subcommand("eval", "evaluate a checkpoint");
  for (CLI::App* sub : {gen, train_cmd, eval_cmd}) {
    sub->add_option("--pairs", ma.pairs, "key-value pairs per example");
    sub->add_option("--len", ma.len, "sequence length");
    sub->add_option("--n", ma.n, "number of examples");
    sub->add_option("--vocab", ma.vocab, "vocabulary size (pad + keys + values)");
    sub->add_option("--seed", ma.seed, "RNG seed");
    sub->add_option("--out", ma.out, "output path (gen: dataset, train: prefix, eval: report)");
    sub->add_option("--data", ma.data, "JSONL dataset path");
  }
  for (CLI::App* sub : {train_cmd, eval_cmd}) {
    sub->add_option("--variant", ma.variant, "la|mamba2|gla|dn|gdn|kda|pla|pmamba2|pgla|pdn|pgdn|pkda")
        ->check(CLI::IsMember(variant_names()));
    sub->add_option("--precond", ma.precond, "none|exact|diag-raw|diag-stable (override)");
  }
  train_cmd->add_option("--x", ma.x, "squash bound");
  train_cmd->add_option("--lr", ma.lr, "peak learning rate");
  train_cmd->add_option("--steps", ma.steps, "training steps");
  train_cmd->add_option("--batch", ma.batch, "batch size");
  train_cmd->add_option("--warmup", ma.warmup, "warmup steps");
  train_cmd->add_option("--eval-interval", ma.eval_interval, "steps between evals");
  train_cmd->add_option("--eval-data", ma.eval_data, "JSONL eval dataset");
  train_cmd->add_option("--d-model", ma.d_model, "model width");
  train_cmd->add_option("--dk", ma.d_k, "key head dim");
  train_cmd->add_option("--dv", ma.d_v, "value head dim");
  eval_cmd->add_option("--ckpt", ma.ckpt, "checkpoint path");
  eval_cmd->add_option("--C", ma.chunk, "evaluate through the chunkwise path with this chunk size");

  try {
    app.parse(argc, argv);
    if (*verify) return run_verify(va);
    if (*bench) return run_bench(ba);
    if (*gen) return run_mqar_gen(ma);
    if (*train_cmd) return run_mqar_train(ma);
    if (*eval_cmd) return run_mqar_eval(ma);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
