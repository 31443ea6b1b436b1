#pragma once

#include "precdelta/theory.hpp"
#include "precdelta/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace precdelta {

inline constexpr const char* kToolVersion = "precdelta 0.1.0";

// Floats serialized with 17 significant digits (round-trip exact at 64-bit).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// FNV-1a 64, used as the content hash of the configuration echo.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::json report_json(const TheoremReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["max_deviation"] = r.max_deviation;
  j["tolerance"] = r.tolerance;
  j["samples"] = r.samples;
  j["pass"] = r.pass;
  if (!r.details.empty()) j["details"] = r.details;
  return j;
}

// Top-level report envelope: tool version, configuration echo and its hash,
// then the per-check records. No timestamps, so reports are byte-identical
// for a given seed.
inline nlohmann::json report_envelope(const nlohmann::json& config_echo, const std::vector<TheoremReport>& checks) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["config_echo"] = config_echo;
  j["input_hash"] = hex64(fnv1a(config_echo.dump()));
  auto arr = nlohmann::json::array();
  bool all_pass = true;
  for (const auto& c : checks) {
    arr.push_back(report_json(c));
    all_pass = all_pass && c.pass;
  }
  j["checks"] = arr;
  j["pass"] = all_pass;
  return j;
}

inline void write_report_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

inline void write_report_csv(const nlohmann::json& envelope, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "tool_version,input_hash,name,max_deviation,tolerance,samples,pass\n";
  for (const auto& c : envelope.at("checks")) {
    out << envelope.at("tool_version").get<std::string>() << "," << envelope.at("input_hash").get<std::string>() << ","
        << c.at("name").get<std::string>() << "," << format_double(c.at("max_deviation").get<double>()) << ","
        << format_double(c.at("tolerance").get<double>()) << "," << c.at("samples").get<long>() << ","
        << (c.at("pass").get<bool>() ? "true" : "false") << "\n";
  }
}

}  // namespace precdelta
