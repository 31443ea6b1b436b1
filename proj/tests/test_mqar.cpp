#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "precdelta/mqar.hpp"
#include "precdelta/mqar_io.hpp"
#include "precdelta/variants.hpp"

#include <cstdio>

using namespace precdelta;

TEST_CASE("generator: single pair layout [k, v, k, pad]") {
  MqarConfig cfg;
  cfg.vocab_size = 9;
  cfg.num_kv_pairs = 1;
  cfg.seq_len = 4;
  cfg.num_examples = 3;
  cfg.seed = 5;
  const MqarDataset ds = generate_mqar(cfg);
  for (Index n = 0; n < 3; ++n) {
    const int k = ds.tokens(n, 0), v = ds.tokens(n, 1);
    CHECK(k >= cfg.key_base());
    CHECK(k < cfg.key_base() + cfg.num_keys());
    CHECK(v >= cfg.value_base());
    CHECK(ds.tokens(n, 2) == k);
    CHECK(ds.tokens(n, 3) == 0);
    CHECK(ds.labels(n, 2) == v);
    CHECK(ds.labels(n, 0) == kIgnoreIndex);
    CHECK(ds.labels(n, 3) == kIgnoreIndex);
  }
}

TEST_CASE("generator: determinism and query-before-pair scan over 1e4 examples") {
  MqarConfig cfg;
  cfg.vocab_size = 64;
  cfg.num_kv_pairs = 8;
  cfg.seq_len = 48;
  cfg.num_examples = 10000;
  cfg.seed = 11;
  const MqarDataset a = generate_mqar(cfg);
  const MqarDataset b = generate_mqar(cfg);
  CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0);
  CHECK((a.labels - b.labels).cwiseAbs().maxCoeff() == 0);

  for (Index n = 0; n < a.tokens.rows(); ++n) {
    for (Index t = 0; t < a.tokens.cols(); ++t) {
      if (a.labels(n, t) == kIgnoreIndex) continue;
      const int key = a.tokens(n, t);
      int seen = 0;
      for (Index s = 0; s < t; ++s)
        if (a.tokens(n, s) == key) {
          // key token position: paired value must follow and match the label
          if (s % 2 == 0 && s < 2 * cfg.num_kv_pairs) {
            ++seen;
            CHECK(a.tokens(n, s + 1) == a.labels(n, t));
          }
        }
      CHECK(seen == 1);  // appeared earlier exactly once as a written key
    }
  }
}

TEST_CASE("generator: vocab too small is rejected") {
  MqarConfig cfg;
  cfg.vocab_size = 9;  // 4 keys
  cfg.num_kv_pairs = 5;
  cfg.seq_len = 32;
  cfg.num_examples = 1;
  CHECK_THROWS_AS(generate_mqar(cfg), std::invalid_argument);
}

namespace {

ModelConfig tiny_model_config(const std::string& variant, int vocab, std::uint64_t seed) {
  ModelConfig mc;
  mc.rec = variant_config(variant, 4, 6);
  mc.rec.lambda = 1e-4;
  mc.vocab_size = vocab;
  mc.d_model = 8;
  mc.d_hidden = 8;
  mc.seed = seed;
  return mc;
}

}  // namespace

TEST_CASE("whole-model gradient matches finite differences") {
  for (const std::string variant : {"dn", "pgdn"}) {
    const ModelConfig mc = tiny_model_config(variant, 13, 21);
    TinyModel model(mc);
    MqarConfig dc;
    dc.vocab_size = 13;
    dc.num_kv_pairs = 2;
    dc.seq_len = 8;
    dc.num_examples = 4;
    dc.seed = 3;
    const MqarDataset ds = generate_mqar(dc);
    std::vector<int> idx = {0, 1, 2, 3};

    Vecd grad(model.num_params());
    const BatchStats st = batch_gradient(model, ds, idx, &grad);
    CHECK(st.labeled > 0);

    const double h = 1e-6;
    double worst = 0.0;
    for (Index i = 0; i < model.num_params(); i += 7) {
      const double keep = model.params()[i];
      model.params()[i] = keep + h;
      const double fp = batch_gradient(model, ds, idx, nullptr).loss;
      model.params()[i] = keep - h;
      const double fm = batch_gradient(model, ds, idx, nullptr).loss;
      model.params()[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      worst = std::max(worst, rel);
    }
    CAPTURE(variant);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("untrained model sits near chance; loss decreases after one small step") {
  const ModelConfig mc = tiny_model_config("dn", 33, 7);
  TinyModel model(mc);
  MqarConfig dc;
  dc.vocab_size = 33;
  dc.num_kv_pairs = 3;
  dc.seq_len = 16;
  dc.num_examples = 256;
  dc.seed = 9;
  const MqarDataset ds = generate_mqar(dc);
  const double acc = evaluate(model, ds);
  CHECK(acc < 0.2);  // chance is ~1/33 against the full vocab

  std::vector<int> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  Vecd grad(model.num_params());
  const BatchStats before = batch_gradient(model, ds, idx, &grad);
  model.params() -= 1e-3 * grad;
  const BatchStats after = batch_gradient(model, ds, idx, nullptr);
  CHECK(after.loss < before.loss);
}

TEST_CASE("tiny DN run memorizes 1-pair recall; eval is chunk-path invariant") {
  ModelConfig mc = tiny_model_config("dn", 17, 2);
  mc.d_model = 16;
  mc.d_hidden = 16;
  TinyModel model(mc);
  MqarConfig dc;
  dc.vocab_size = 17;
  dc.num_kv_pairs = 1;
  dc.seq_len = 8;
  dc.num_examples = 512;
  dc.seed = 13;
  const MqarDataset train_ds = generate_mqar(dc);
  dc.seed = 14;
  dc.num_examples = 128;
  const MqarDataset eval_ds = generate_mqar(dc);

  TrainConfig tc;
  tc.steps = 400;
  tc.batch = 32;
  tc.lr = 3e-3;
  tc.warmup = 20;
  tc.eval_interval = 40;
  tc.stop_at_accuracy = 0.999;
  tc.seed = 123;
  const TrainResult res = train(model, train_ds, eval_ds, tc);
  CHECK_FALSE(res.diverged);
  CHECK(res.final_accuracy == doctest::Approx(1.0));

  const double seq_acc = evaluate(model, eval_ds, false);
  for (const Index C : {Index(1), Index(5), Index(8)}) {
    CHECK(evaluate(model, eval_ds, true, C) == doctest::Approx(seq_acc));
  }
}

TEST_CASE("dataset JSONL and checkpoint round trips") {
  MqarConfig dc;
  dc.vocab_size = 15;
  dc.num_kv_pairs = 2;
  dc.seq_len = 9;
  dc.num_examples = 17;
  dc.seed = 31;
  const MqarDataset ds = generate_mqar(dc);
  const std::string dpath = "/tmp/precdelta_test_ds.jsonl";
  save_dataset_jsonl(ds, dpath);
  const MqarDataset back = load_dataset_jsonl(dpath);
  CHECK((ds.tokens - back.tokens).cwiseAbs().maxCoeff() == 0);
  CHECK((ds.labels - back.labels).cwiseAbs().maxCoeff() == 0);
  std::remove(dpath.c_str());

  const ModelConfig mc = tiny_model_config("pdn", 15, 77);
  TinyModel model(mc);
  const std::string cpath = "/tmp/precdelta_test_ckpt.bin";
  save_checkpoint(model, cpath);
  const TinyModel loaded = load_checkpoint(cpath);
  CHECK((model.params() - loaded.params()).norm() == 0.0);
  CHECK(loaded.config().rec.precond == Precond::DiagStable);
  std::remove(cpath.c_str());
}
