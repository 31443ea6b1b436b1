#pragma once

#include "precdelta/autograd.hpp"
#include "precdelta/chunkwise.hpp"
#include "precdelta/parallel.hpp"
#include "precdelta/rng.hpp"
#include "precdelta/sequential.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace precdelta {

// ---------------------------------------------------------------------------
// Multi-query associative recall data. Token 0 is padding; the remaining
// vocabulary splits into disjoint key and value halves. An example lays out
// num_kv_pairs (key, value) pairs as alternating tokens followed by the seen
// keys again in random order as queries; labels carry the paired value at
// query positions and kIgnoreIndex elsewhere.
// ---------------------------------------------------------------------------

inline constexpr int kIgnoreIndex = -100;

struct MqarConfig {
  int vocab_size = 64;
  int num_kv_pairs = 4;
  int seq_len = 64;
  int num_examples = 10000;
  std::uint64_t seed = 0;

  int num_keys() const { return (vocab_size - 1) / 2; }
  int num_values() const { return (vocab_size - 1) / 2; }
  int key_base() const { return 1; }
  int value_base() const { return 1 + num_keys(); }

  void validate() const {
    if (vocab_size < 5) throw std::invalid_argument("MqarConfig: vocab too small");
    if (num_kv_pairs < 1 || num_kv_pairs > num_keys())
      throw std::invalid_argument("MqarConfig: vocab too small for pair count");
    if (seq_len < 3 * num_kv_pairs) throw std::invalid_argument("MqarConfig: seq_len < 2*pairs + queries");
    if (num_examples < 1) throw std::invalid_argument("MqarConfig: need at least one example");
  }
};

using TokenMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MqarDataset {
  TokenMat tokens;  // N x seq_len
  TokenMat labels;  // N x seq_len, kIgnoreIndex at non-query positions
};

inline MqarDataset generate_mqar(const MqarConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  MqarDataset ds;
  ds.tokens = TokenMat::Zero(cfg.num_examples, cfg.seq_len);
  ds.labels = TokenMat::Constant(cfg.num_examples, cfg.seq_len, kIgnoreIndex);

  std::vector<int> keys(cfg.num_keys());
  std::iota(keys.begin(), keys.end(), cfg.key_base());
  std::vector<int> order(cfg.num_kv_pairs);

  for (int n = 0; n < cfg.num_examples; ++n) {
    // Distinct keys via partial Fisher-Yates.
    for (int i = 0; i < cfg.num_kv_pairs; ++i) {
      const int j = i + static_cast<int>(rng.integer(keys.size() - i));
      std::swap(keys[i], keys[j]);
    }
    std::vector<int> values(cfg.num_kv_pairs);
    for (int i = 0; i < cfg.num_kv_pairs; ++i)
      values[i] = cfg.value_base() + static_cast<int>(rng.integer(cfg.num_values()));
    for (int i = 0; i < cfg.num_kv_pairs; ++i) {
      ds.tokens(n, 2 * i) = keys[i];
      ds.tokens(n, 2 * i + 1) = values[i];
    }
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < cfg.num_kv_pairs - 1; ++i) {
      const int j = i + static_cast<int>(rng.integer(order.size() - i));
      std::swap(order[i], order[j]);
    }
    for (int i = 0; i < cfg.num_kv_pairs; ++i) {
      const int pos = 2 * cfg.num_kv_pairs + i;
      ds.tokens(n, pos) = keys[order[i]];
      ds.labels(n, pos) = values[order[i]];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Minimal trainable model: token embedding, two sequence-mixing layers (the
// recurrence under test) and two gated-MLP channel-mixing layers, residual
// throughout, linear readout. No short convolution and no RMSNorm; raw gate
// projections map into the valid ranges via sigmoid (beta) and
// exp(-softplus) (alpha).
// ---------------------------------------------------------------------------

struct ModelConfig {
  RecurrenceConfig rec;  // d_k/d_v are the head dims
  int vocab_size = 64;
  int d_model = 64;
  int d_hidden = 64;  // gated MLP width
  std::uint64_t seed = 1;
};

namespace detail {

struct ParamInfo {
  std::string name;
  Index rows = 0, cols = 0;
  Index offset = 0;
  bool decayed = true;  // weight decay applies (matrices yes, biases/scalars no)
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

}  // namespace detail

class TinyModel {
 public:
  explicit TinyModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.rec.validate();
    const Index dm = cfg_.d_model, dk = cfg_.rec.d_k, dv = cfg_.rec.d_v, dh = cfg_.d_hidden, V = cfg_.vocab_size;
    add_param("embed", V, dm);
    for (int l = 0; l < 2; ++l) {
      const std::string p = "mix" + std::to_string(l) + ".";
      add_param(p + "Wq", dm, dk);
      add_param(p + "Wk", dm, dk);
      add_param(p + "Wv", dm, dv);
      add_param(p + "Wo", dv, dm);
      add_param(p + "wbeta", dm, 1);
      add_param(p + "bbeta", 1, 1, false);
      if (cfg_.rec.decay != Decay::None) {
        add_param(p + "walpha", dm, cfg_.rec.decay == Decay::Diagonal ? dk : 1);
        add_param(p + "balpha", 1, cfg_.rec.decay == Decay::Diagonal ? dk : 1, false);
      }
      if (cfg_.rec.precond == Precond::DiagStable) {
        add_param(p + "wbetaP", dm, 1);
        add_param(p + "bbetaP", 1, 1, false);
        add_param(p + "walphaP", dm, 1);
        add_param(p + "balphaP", 1, 1, false);
        add_param(p + "mu_raw", 1, 1, false);
      }
      const std::string c = "chan" + std::to_string(l) + ".";
      add_param(c + "W1", dm, dh);
      add_param(c + "W2", dm, dh);
      add_param(c + "W3", dh, dm);
    }
    add_param("Wout", dm, V);
    theta_ = Vecd::Zero(total_);
    init_params();
  }

  const ModelConfig& config() const { return cfg_; }
  Vecd& params() { return theta_; }
  const Vecd& params() const { return theta_; }
  Index num_params() const { return total_; }
  const std::vector<detail::ParamInfo>& param_infos() const { return infos_; }

  Eigen::Map<Matd> view(const std::string& name) { return view_in(theta_, name); }
  Eigen::Map<const Matd> view(const std::string& name) const {
    const detail::ParamInfo& i = info(name);
    return Eigen::Map<const Matd>(theta_.data() + i.offset, i.rows, i.cols);
  }

  // Forward + loss (+ optional gradient into dtheta) for one example.
  // Returns (sum of CE over labeled positions, number labeled, correct count).
  struct ExampleStats {
    double loss_sum = 0.0;
    long labeled = 0;
    long correct = 0;
  };

  ExampleStats example_pass(const int* tokens, const int* labels, Index T, Vecd* dtheta,
                            bool use_chunkwise = false, Index chunk_size = 16) const {
    const Index dm = cfg_.d_model, V = cfg_.vocab_size;
    Matd x(T, dm);
    Eigen::Map<const Matd> E(theta_.data() + info("embed").offset, V, dm);
    for (Index t = 0; t < T; ++t) x.row(t) = E.row(tokens[t]);

    struct MixTape {
      Matd x_in, q_raw, k_raw;
      Vecd qn, kn;  // row norms
      SequenceBatch batch;
      PrecondTrace trace;
      Matd O;
      Vecd beta_raw, betaP_raw, alphaP_raw;
      Matd alpha_raw;
    };
    struct ChanTape {
      Matd x_in, h1, h2, act;
    };
    std::vector<MixTape> mix(2);
    std::vector<ChanTape> chan(2);

    for (int l = 0; l < 2; ++l) {
      // --- sequence mixing ---
      MixTape& m = mix[l];
      m.x_in = x;
      const std::string p = "mix" + std::to_string(l) + ".";
      m.q_raw.noalias() = x * view(p + "Wq");
      m.k_raw.noalias() = x * view(p + "Wk");
      Matd v;
      v.noalias() = x * view(p + "Wv");
      m.qn.resize(T);
      m.kn.resize(T);
      SequenceBatch& b = m.batch;
      b.Q.resize(T, cfg_.rec.d_k);
      b.K.resize(T, cfg_.rec.d_k);
      for (Index t = 0; t < T; ++t) {
        m.qn[t] = std::sqrt(m.q_raw.row(t).squaredNorm() + kNormEps);
        m.kn[t] = std::sqrt(m.k_raw.row(t).squaredNorm() + kNormEps);
        b.Q.row(t) = m.q_raw.row(t) / m.qn[t];
        b.K.row(t) = m.k_raw.row(t) / m.kn[t];
      }
      b.V = std::move(v);
      m.beta_raw.noalias() = x * view(p + "wbeta").col(0);
      m.beta_raw.array() += view(p + "bbeta")(0, 0);
      b.beta = m.beta_raw.unaryExpr([](double z) { return detail::sigmoid(z); });
      if (cfg_.rec.decay != Decay::None) {
        m.alpha_raw.noalias() = x * view(p + "walpha");
        m.alpha_raw.rowwise() += view(p + "balpha").row(0);
        const Matd a = m.alpha_raw.unaryExpr([](double z) { return std::exp(-detail::softplus(z)); });
        if (cfg_.rec.decay == Decay::Scalar)
          b.alpha = a.col(0);
        else
          b.alpha_diag = a;
      }
      if (cfg_.rec.precond == Precond::DiagStable) {
        m.betaP_raw.noalias() = x * view(p + "wbetaP").col(0);
        m.betaP_raw.array() += view(p + "bbetaP")(0, 0);
        b.betaP = m.betaP_raw.unaryExpr([](double z) { return detail::sigmoid(z); });
        m.alphaP_raw.noalias() = x * view(p + "walphaP").col(0);
        m.alphaP_raw.array() += view(p + "balphaP")(0, 0);
        b.alphaP = m.alphaP_raw.unaryExpr([](double z) { return std::exp(-detail::softplus(z)); });
        b.mu = std::exp(view(p + "mu_raw")(0, 0));
      }
      if (use_chunkwise && dtheta == nullptr) {
        m.O = full_chunkwise_run(cfg_.rec, b, chunk_size);
      } else {
        const RunResult r = run_sequential(cfg_.rec, b, dtheta ? &m.trace : nullptr);
        m.O = r.outputs;
      }
      x.noalias() += m.O * view(p + "Wo");

      // --- channel mixing ---
      ChanTape& c = chan[l];
      c.x_in = x;
      const std::string cn = "chan" + std::to_string(l) + ".";
      c.h1.noalias() = x * view(cn + "W1");
      c.h2.noalias() = x * view(cn + "W2");
      c.act = c.h1.unaryExpr([](double z) { return z * detail::sigmoid(z); }).cwiseProduct(c.h2);
      x.noalias() += c.act * view(cn + "W3");
    }

    Matd logits;
    logits.noalias() = x * view("Wout");

    // Softmax CE at labeled positions.
    ExampleStats stats;
    Matd dlogits;
    if (dtheta) dlogits = Matd::Zero(T, V);
    for (Index t = 0; t < T; ++t) {
      const int y = labels[t];
      if (y == kIgnoreIndex) continue;
      const auto row = logits.row(t);
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      stats.loss_sum += lse - row[y];
      ++stats.labeled;
      Index argmax = 0;
      row.maxCoeff(&argmax);
      if (static_cast<int>(argmax) == y) ++stats.correct;
      if (dtheta) {
        dlogits.row(t) = (row.array() - lse).exp();
        dlogits(t, y) -= 1.0;
      }
    }
    if (!dtheta) return stats;

    // ------------------------- backward -------------------------
    Matd dx;
    dx.noalias() = dlogits * view("Wout").transpose();
    view_in(*dtheta, "Wout").noalias() += x.transpose() * dlogits;

    for (int l = 1; l >= 0; --l) {
      // channel mixing backward
      const ChanTape& c = chan[l];
      const std::string cn = "chan" + std::to_string(l) + ".";
      const Matd dact = dx * view(cn + "W3").transpose();
      view_in(*dtheta, cn + "W3").noalias() += c.act.transpose() * dx;
      const Matd silu1 = c.h1.unaryExpr([](double z) { return z * detail::sigmoid(z); });
      const Matd dh2 = dact.cwiseProduct(silu1);
      const Matd dsilu = dact.cwiseProduct(c.h2);
      const Matd dh1 = dsilu.cwiseProduct(c.h1.unaryExpr([](double z) {
        const double s = detail::sigmoid(z);
        return s * (1.0 + z * (1.0 - s));
      }));
      view_in(*dtheta, cn + "W1").noalias() += c.x_in.transpose() * dh1;
      view_in(*dtheta, cn + "W2").noalias() += c.x_in.transpose() * dh2;
      dx.noalias() += dh1 * view(cn + "W1").transpose();
      dx.noalias() += dh2 * view(cn + "W2").transpose();

      // sequence mixing backward
      const MixTape& m = mix[l];
      const std::string p = "mix" + std::to_string(l) + ".";
      const Matd dO = dx * view(p + "Wo").transpose();
      view_in(*dtheta, p + "Wo").noalias() += m.O.transpose() * dx;
      const GradientBundle gb = backward_sequential(cfg_.rec, m.batch, m.trace, dO);

      // gates
      Vecd dbeta_raw = gb.dbeta.cwiseProduct(
          m.beta_raw.unaryExpr([](double z) {
            const double s = detail::sigmoid(z);
            return s * (1.0 - s);
          }));
      view_in(*dtheta, p + "wbeta").col(0).noalias() += m.x_in.transpose() * dbeta_raw;
      view_in(*dtheta, p + "bbeta")(0, 0) += dbeta_raw.sum();
      Matd dx_mix;
      dx_mix.noalias() = dbeta_raw * view(p + "wbeta").col(0).transpose();
      if (cfg_.rec.decay != Decay::None) {
        Matd dalpha = cfg_.rec.decay == Decay::Scalar ? Matd(gb.dalpha) : gb.dalpha_diag;
        const Matd dalpha_raw = dalpha.cwiseProduct(m.alpha_raw.unaryExpr([](double z) {
          return -std::exp(-detail::softplus(z)) * detail::sigmoid(z);
        }));
        view_in(*dtheta, p + "walpha").noalias() += m.x_in.transpose() * dalpha_raw;
        view_in(*dtheta, p + "balpha").row(0) += dalpha_raw.colwise().sum();
        dx_mix.noalias() += dalpha_raw * view(p + "walpha").transpose();
      }
      if (cfg_.rec.precond == Precond::DiagStable) {
        const Vecd dbetaP_raw = gb.dbetaP.cwiseProduct(m.betaP_raw.unaryExpr([](double z) {
          const double s = detail::sigmoid(z);
          return s * (1.0 - s);
        }));
        view_in(*dtheta, p + "wbetaP").col(0).noalias() += m.x_in.transpose() * dbetaP_raw;
        view_in(*dtheta, p + "bbetaP")(0, 0) += dbetaP_raw.sum();
        dx_mix.noalias() += dbetaP_raw * view(p + "wbetaP").col(0).transpose();
        const Vecd dalphaP_raw = gb.dalphaP.cwiseProduct(m.alphaP_raw.unaryExpr([](double z) {
          return -std::exp(-detail::softplus(z)) * detail::sigmoid(z);
        }));
        view_in(*dtheta, p + "walphaP").col(0).noalias() += m.x_in.transpose() * dalphaP_raw;
        view_in(*dtheta, p + "balphaP")(0, 0) += dalphaP_raw.sum();
        dx_mix.noalias() += dalphaP_raw * view(p + "walphaP").col(0).transpose();
        view_in(*dtheta, p + "mu_raw")(0, 0) += gb.dmu * m.batch.mu;
      }

      // q/k row normalization: y = z / n, dz = dy/n - z (z . dy) / n^3
      Matd dq_raw(T, cfg_.rec.d_k), dk_raw(T, cfg_.rec.d_k);
      for (Index t = 0; t < T; ++t) {
        const double qn = m.qn[t], kn = m.kn[t];
        const auto zq = m.q_raw.row(t);
        const auto zk = m.k_raw.row(t);
        dq_raw.row(t) = gb.dQ.row(t) / qn - zq * (zq.dot(gb.dQ.row(t)) / (qn * qn * qn));
        dk_raw.row(t) = gb.dK.row(t) / kn - zk * (zk.dot(gb.dK.row(t)) / (kn * kn * kn));
      }
      view_in(*dtheta, p + "Wq").noalias() += m.x_in.transpose() * dq_raw;
      view_in(*dtheta, p + "Wk").noalias() += m.x_in.transpose() * dk_raw;
      view_in(*dtheta, p + "Wv").noalias() += m.x_in.transpose() * gb.dV;
      dx_mix.noalias() += dq_raw * view(p + "Wq").transpose();
      dx_mix.noalias() += dk_raw * view(p + "Wk").transpose();
      dx_mix.noalias() += gb.dV * view(p + "Wv").transpose();

      dx.noalias() += dx_mix;
    }

    // embedding scatter
    Eigen::Map<Matd> dE(dtheta->data() + info("embed").offset, V, dm);
    for (Index t = 0; t < T; ++t) dE.row(tokens[t]) += dx.row(t);
    return stats;
  }

 private:
  static constexpr double kNormEps = 1e-12;

  void add_param(const std::string& name, Index rows, Index cols, bool decayed = true) {
    infos_.push_back({name, rows, cols, total_, decayed});
    total_ += rows * cols;
  }

  const detail::ParamInfo& info(const std::string& name) const {
    for (const auto& i : infos_)
      if (i.name == name) return i;
    throw std::logic_error("TinyModel: unknown parameter " + name);
  }

  Eigen::Map<Matd> view_in(Vecd& buf, const std::string& name) const {
    const detail::ParamInfo& i = info(name);
    return Eigen::Map<Matd>(buf.data() + i.offset, i.rows, i.cols);
  }

  void init_params() {
    Rng rng(cfg_.seed);
    const double bbeta0 = std::getenv("PRECDELTA_INIT_BBETA") ? std::atof(std::getenv("PRECDELTA_INIT_BBETA")) : 0.0;
    const bool tie_qk = std::getenv("PRECDELTA_INIT_TIEQK") != nullptr;
    for (const auto& i : infos_) {
      Eigen::Map<Matd> m(theta_.data() + i.offset, i.rows, i.cols);
      if (i.name == "embed") {
        for (Index r = 0; r < i.rows; ++r)
          for (Index c = 0; c < i.cols; ++c) m(r, c) = rng.normal();
      } else if (i.name.find(".b") != std::string::npos || i.name.find("mu_raw") != std::string::npos) {
        m.setZero();
        if (i.name.find("bbeta") != std::string::npos && i.name.find("bbetaP") == std::string::npos)
          m.setConstant(bbeta0);
        if (i.name.find("balpha") != std::string::npos) m.setConstant(-4.0);  // alpha starts near 1
      } else {
        const double scale = 1.0 / std::sqrt(static_cast<double>(i.rows));
        for (Index r = 0; r < i.rows; ++r)
          for (Index c = 0; c < i.cols; ++c) m(r, c) = scale * rng.normal();
      }
    }
    if (tie_qk) {
      for (int l = 0; l < 2; ++l) {
        const std::string p = "mix" + std::to_string(l) + ".";
        view(p + "Wq") = view_in(theta_, p + "Wk");
      }
    }
  }

  ModelConfig cfg_;
  std::vector<detail::ParamInfo> infos_;
  Index total_ = 0;
  Vecd theta_;
};

// ---------------------------------------------------------------------------
// Batched loss/gradient, AdamW, training loop.
// ---------------------------------------------------------------------------

struct BatchStats {
  double loss = 0.0;
  double accuracy = 0.0;
  long labeled = 0;
};

inline BatchStats batch_gradient(const TinyModel& model, const MqarDataset& data, const std::vector<int>& idx,
                                 Vecd* grad) {
  const int nthreads = max_threads();
  std::vector<Vecd> tgrad;
  std::vector<TinyModel::ExampleStats> tstats(std::max(1, nthreads));
  if (grad) tgrad.assign(std::max(1, nthreads), Vecd::Zero(model.num_params()));
  const Index T = data.tokens.cols();

  parallel_for(static_cast<long>(idx.size()), [&](long i, int tid) {
    const int n = idx[i];
    const auto s = model.example_pass(data.tokens.row(n).data(), data.labels.row(n).data(), T,
                                      grad ? &tgrad[tid] : nullptr);
    tstats[tid].loss_sum += s.loss_sum;
    tstats[tid].labeled += s.labeled;
    tstats[tid].correct += s.correct;
  });

  TinyModel::ExampleStats total;
  for (const auto& s : tstats) {
    total.loss_sum += s.loss_sum;
    total.labeled += s.labeled;
    total.correct += s.correct;
  }
  if (grad) {
    grad->setZero();
    for (const auto& tg : tgrad) *grad += tg;
    if (total.labeled > 0) *grad /= static_cast<double>(total.labeled);
  }
  BatchStats out;
  out.labeled = total.labeled;
  out.loss = total.labeled ? total.loss_sum / total.labeled : 0.0;
  out.accuracy = total.labeled ? static_cast<double>(total.correct) / total.labeled : 0.0;
  return out;
}

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;
  Vecd m, v;
  long step = 0;

  void update(TinyModel& model, const Vecd& grad, double lr_now) {
    if (m.size() == 0) {
      m = Vecd::Zero(grad.size());
      v = Vecd::Zero(grad.size());
    }
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    Vecd& theta = model.params();
    // decoupled weight decay on matrix parameters only
    for (const auto& info : model.param_infos()) {
      if (!info.decayed) continue;
      theta.segment(info.offset, info.rows * info.cols) *= 1.0 - lr_now * weight_decay;
    }
    theta.array() -= lr_now * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
};

struct TrainConfig {
  int steps = 3000;
  int batch = 64;
  double lr = 1e-3;
  double lr_final_frac = 0.1;
  int warmup = 100;
  double weight_decay = 0.01;
  double clip = 1.0;
  int eval_interval = 50;
  int eval_examples = 512;
  double stop_at_accuracy = -1.0;  // early stop once eval accuracy exceeds this
  std::uint64_t seed = 0;
};

struct CurvePoint {
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  double final_accuracy = 0.0;
  int steps_run = 0;
  bool diverged = false;
};

inline double evaluate(const TinyModel& model, const MqarDataset& data, bool use_chunkwise = false,
                       Index chunk_size = 16) {
  const Index T = data.tokens.cols();
  const long N = data.tokens.rows();
  std::vector<TinyModel::ExampleStats> tstats(std::max(1, max_threads()));
  parallel_for(N, [&](long n, int tid) {
    const auto s =
        model.example_pass(data.tokens.row(n).data(), data.labels.row(n).data(), T, nullptr, use_chunkwise, chunk_size);
    tstats[tid].labeled += s.labeled;
    tstats[tid].correct += s.correct;
  });
  long labeled = 0, correct = 0;
  for (const auto& s : tstats) {
    labeled += s.labeled;
    correct += s.correct;
  }
  return labeled ? static_cast<double>(correct) / labeled : 0.0;
}

inline TrainResult train(TinyModel& model, const MqarDataset& train_data, const MqarDataset& eval_data,
                         const TrainConfig& tc) {
  Rng rng(tc.seed ^ 0x5eed5eedULL);
  AdamW opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  Vecd grad(model.num_params());
  TrainResult res;
  std::vector<int> idx(tc.batch);

  for (int step = 1; step <= tc.steps; ++step) {
    for (int& i : idx) i = static_cast<int>(rng.integer(train_data.tokens.rows()));
    const BatchStats bs = batch_gradient(model, train_data, idx, &grad);
    if (!std::isfinite(bs.loss)) {
      res.diverged = true;
      res.steps_run = step;
      return res;
    }
    const double gnorm = grad.norm();
    if (tc.clip > 0.0 && gnorm > tc.clip) grad *= tc.clip / gnorm;
    double lr_now;
    if (step <= tc.warmup) {
      lr_now = tc.lr * step / std::max(1, tc.warmup);
    } else {
      const double prog = static_cast<double>(step - tc.warmup) / std::max(1, tc.steps - tc.warmup);
      lr_now = tc.lr * (tc.lr_final_frac + (1.0 - tc.lr_final_frac) * 0.5 * (1.0 + std::cos(M_PI * prog)));
    }
    opt.update(model, grad, lr_now);

    if (step % tc.eval_interval == 0 || step == tc.steps) {
      const double acc = evaluate(model, eval_data);
      res.curve.push_back({step, bs.loss, acc});
      res.final_accuracy = acc;
      res.steps_run = step;
      if (tc.stop_at_accuracy > 0.0 && acc > tc.stop_at_accuracy) return res;
    }
  }
  res.steps_run = tc.steps;
  return res;
}

// ---------------------------------------------------------------------------
// File formats: JSONL datasets ({"tokens": [...], "labels": [...]}) and
// checkpoints (8-byte little-endian header length, JSON header, raw 64-bit
// parameters).
// ---------------------------------------------------------------------------

inline void save_dataset_jsonl(const MqarDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (Index n = 0; n < ds.tokens.rows(); ++n) {
    out << "{\"tokens\":[";
    for (Index t = 0; t < ds.tokens.cols(); ++t) out << (t ? "," : "") << ds.tokens(n, t);
    out << "],\"labels\":[";
    for (Index t = 0; t < ds.labels.cols(); ++t) out << (t ? "," : "") << ds.labels(n, t);
    out << "]}\n";
  }
}

MqarDataset load_dataset_jsonl(const std::string& path);  // defined with the CLI (uses the JSON parser)

}  // namespace precdelta
