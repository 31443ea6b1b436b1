#pragma once

#include "precdelta/mqar.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace precdelta {

inline MqarDataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<int>> tokens, labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    tokens.push_back(j.at("tokens").get<std::vector<int>>());
    labels.push_back(j.at("labels").get<std::vector<int>>());
    if (tokens.back().size() != labels.back().size())
      throw std::runtime_error("dataset record with mismatched token/label lengths");
  }
  if (tokens.empty()) throw std::runtime_error("empty dataset " + path);
  MqarDataset ds;
  const Index N = static_cast<Index>(tokens.size());
  const Index T = static_cast<Index>(tokens.front().size());
  ds.tokens.resize(N, T);
  ds.labels.resize(N, T);
  for (Index n = 0; n < N; ++n) {
    if (static_cast<Index>(tokens[n].size()) != T) throw std::runtime_error("ragged dataset rows");
    for (Index t = 0; t < T; ++t) {
      ds.tokens(n, t) = tokens[n][t];
      ds.labels(n, t) = labels[n][t];
    }
  }
  return ds;
}

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
  return nlohmann::json{{"vocab_size", cfg.vocab_size},
                        {"d_model", cfg.d_model},
                        {"d_hidden", cfg.d_hidden},
                        {"d_k", cfg.rec.d_k},
                        {"d_v", cfg.rec.d_v},
                        {"solve", to_string(cfg.rec.solve)},
                        {"decay", to_string(cfg.rec.decay)},
                        {"precond", to_string(cfg.rec.precond)},
                        {"lambda", cfg.rec.lambda},
                        {"x", cfg.rec.x},
                        {"seed", cfg.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_hidden = j.at("d_hidden").get<int>();
  cfg.rec.d_k = j.at("d_k").get<Index>();
  cfg.rec.d_v = j.at("d_v").get<Index>();
  const std::string solve = j.at("solve").get<std::string>();
  cfg.rec.solve = solve == "online" ? Solve::Online : Solve::Offline;
  const std::string decay = j.at("decay").get<std::string>();
  cfg.rec.decay = decay == "none" ? Decay::None : decay == "scalar" ? Decay::Scalar : Decay::Diagonal;
  const std::string precond = j.at("precond").get<std::string>();
  cfg.rec.precond = precond == "none"       ? Precond::None
                    : precond == "exact"    ? Precond::Exact
                    : precond == "diag-raw" ? Precond::DiagRaw
                                            : Precond::DiagStable;
  cfg.rec.lambda = j.at("lambda").get<double>();
  cfg.rec.x = j.at("x").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

// Checkpoint: [u64 header length][JSON header][raw little-endian doubles].
inline void save_checkpoint(const TinyModel& model, const std::string& path) {
  nlohmann::json header;
  header["format"] = "precdelta-checkpoint-v1";
  header["model"] = model_config_json(model.config());
  auto shapes = nlohmann::json::array();
  for (const auto& p : model.param_infos())
    shapes.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}});
  header["params"] = shapes;
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.num_params() * sizeof(double)));
}

inline TinyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(htext);
  if (header.at("format").get<std::string>() != "precdelta-checkpoint-v1")
    throw std::runtime_error("unknown checkpoint format");
  TinyModel model(model_config_from_json(header.at("model")));
  for (const auto& p : header.at("params")) {
    bool found = false;
    for (const auto& q : model.param_infos())
      found = found || (q.name == p.at("name").get<std::string>() && q.rows == p.at("rows").get<Index>() &&
                        q.cols == p.at("cols").get<Index>());
    if (!found) throw std::runtime_error("checkpoint parameter mismatch: " + p.at("name").get<std::string>());
  }
  in.read(reinterpret_cast<char*>(model.params().data()),
          static_cast<std::streamsize>(model.num_params() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  return model;
}

}  // namespace precdelta
