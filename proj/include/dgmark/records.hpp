#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decoder.hpp"
#include "detector.hpp"
#include "error.hpp"

namespace dgmark {

// Decode output record: {"id", "mode", "k", "block_size", "seed", "tokens",
// "order", "fallback_steps"}.
inline nlohmann::json decode_record(const std::string& id, const DecodeConfig& config, const DecodeResult& result) {
  nlohmann::json j;
  j["id"] = id;
  j["mode"] = std::string(to_string(config.mode));
  j["k"] = config.beam;
  j["block_size"] = config.effective_block_size();
  j["seed"] = config.seed;
  j["tokens"] = result.tokens;
  j["order"] = result.trace.order;
  j["fallback_steps"] = result.trace.fallback_steps;
  return j;
}

inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

// Detection report record: {"id", "n", "G", "z", "p_value", "z_win",
// "decisions": {"z": bool, "z_win": bool}}, plus "windows" (the G_s list)
// when requested.
inline nlohmann::json detection_record(const std::string& id, const DetectionReport& report, bool with_windows) {
  nlohmann::json j;
  j["id"] = id;
  j["n"] = report.n;
  j["G"] = report.match_count;
  j["z"] = json_number(report.z);
  j["p_value"] = json_number(report.p_value);
  j["z_win"] = json_number(report.z_win);
  nlohmann::json decisions = nlohmann::json::object();
  if (report.decisions.global) decisions["z"] = *report.decisions.global;
  if (report.decisions.window) decisions["z_win"] = *report.decisions.window;
  j["decisions"] = decisions;
  if (with_windows) {
    std::vector<std::size_t> counts;
    counts.reserve(report.windows.size());
    for (const auto& w : report.windows) counts.push_back(w.match_count);
    j["windows"] = counts;
  }
  return j;
}

inline nlohmann::json error_record(const std::string& id, const std::string& message) {
  return {{"id", id}, {"error", message}};
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read '" + path + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::io, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

}  // namespace dgmark
