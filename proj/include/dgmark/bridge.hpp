#pragma once

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "predictor.hpp"

namespace dgmark {

// Wire frames of the predictor bridge: newline-delimited JSON over the stdio
// of a child process.
//   request  {"id", "op": "predict"|"meta", "prompt", "n", "revealed": [[pos, tok]...], "positions", "top_k"}
//   response {"id", "ok": true, "dists": [{"pos", "tokens", "probs"}], "truncated", "meta"}
//   error    {"id", "ok": false, "error"}
namespace bridge {

inline constexpr std::size_t kDefaultTopK = 64;

inline nlohmann::json predict_request(std::uint64_t id, const PartialSequence& state,
                                      std::span<const Position> positions, std::size_t top_k) {
  nlohmann::json revealed = nlohmann::json::array();
  for (const auto& [pos, tok] : state.revealed()) revealed.push_back({pos, tok});
  return {{"id", id},
          {"op", "predict"},
          {"prompt", state.prompt()},
          {"n", state.length()},
          {"revealed", revealed},
          {"positions", std::vector<Position>(positions.begin(), positions.end())},
          {"top_k", top_k}};
}

inline nlohmann::json meta_request(std::uint64_t id) { return {{"id", id}, {"op", "meta"}}; }

// Distributions of a predict response, validated against the query. An
// optional per-dist "mass" reports the pre-renormalization coverage.
inline std::vector<PredictiveDistribution> parse_predict_response(const nlohmann::json& frame,
                                                                  std::span<const Position> positions) {
  if (!frame.value("ok", false)) {
    throw Error(ErrorKind::predictor_failure, "bridge error: " + frame.value("error", std::string("unknown")));
  }
  const bool truncated = frame.value("truncated", false);
  const auto& dists = frame.at("dists");
  if (dists.size() != positions.size()) throw Error(ErrorKind::protocol, "bridge returned wrong number of dists");
  std::vector<PredictiveDistribution> out;
  out.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const auto& d = dists[i];
    PredictiveDistribution dist;
    dist.position = d.at("pos").get<Position>();
    if (dist.position != positions[i]) throw Error(ErrorKind::protocol, "bridge dists out of query order");
    const auto tokens = d.at("tokens").get<std::vector<Token>>();
    const auto probs = d.at("probs").get<std::vector<double>>();
    if (tokens.size() != probs.size() || tokens.empty()) throw Error(ErrorKind::protocol, "malformed dist entry");
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (probs[k] < 0.0 || (k > 0 && probs[k] > probs[k - 1])) {
        throw Error(ErrorKind::protocol, "bridge probabilities must be non-negative and descending");
      }
      dist.entries.push_back({tokens[k], probs[k]});
    }
    dist.truncated = truncated;
    dist.covered_mass = d.value("mass", truncated ? 0.0 : 1.0);
    out.push_back(std::move(dist));
  }
  return out;
}

}  // namespace bridge

// Predictor served by a child process speaking the bridge protocol.
// Requests are serialized; the child handles them in order.
class BridgePredictor final : public Predictor {
 public:
  explicit BridgePredictor(std::vector<std::string> command, std::size_t top_k = bridge::kDefaultTopK)
      : top_k_(top_k) {
    if (command.empty()) throw Error(ErrorKind::config, "bridge command is empty");
    if (top_k_ == 0) throw Error(ErrorKind::config, "bridge top_k must be >= 1");
    spawn(command);
    try {
      const auto meta = roundtrip(bridge::meta_request(next_id_++));
      if (!meta.value("ok", false)) throw Error(ErrorKind::protocol, "bridge meta request failed");
      meta_ = meta.at("meta");
      vocab_ = meta_.at("vocab_size").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      shutdown();
      throw Error(ErrorKind::protocol, std::string("bad bridge meta frame: ") + e.what());
    } catch (...) {
      shutdown();
      throw;
    }
  }

  BridgePredictor(const BridgePredictor&) = delete;
  BridgePredictor& operator=(const BridgePredictor&) = delete;

  ~BridgePredictor() override { shutdown(); }

  std::size_t vocab_size() const override { return vocab_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  // Raw frame exchange; exposed for protocol tests.
  nlohmann::json roundtrip(const nlohmann::json& request) const {
    std::lock_guard lock(mutex_);
    const std::string line = request.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() || std::fflush(to_child_) != 0) {
      throw Error(ErrorKind::io, "bridge write failed");
    }
    std::string reply;
    for (;;) {
      const int c = std::fgetc(from_child_);
      if (c == EOF) throw Error(ErrorKind::io, "bridge closed its output");
      if (c == '\n') break;
      reply.push_back(static_cast<char>(c));
    }
    nlohmann::json frame;
    try {
      frame = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::protocol, std::string("unparseable bridge frame: ") + e.what());
    }
    if (request.contains("id") && frame.value("id", nlohmann::json()) != request.at("id")) {
      throw Error(ErrorKind::protocol, "bridge response id does not match request");
    }
    return frame;
  }

  // Writes an arbitrary line (not necessarily JSON) and returns the reply frame.
  nlohmann::json send_raw(const std::string& line) const {
    std::lock_guard lock(mutex_);
    const std::string out = line + "\n";
    std::fwrite(out.data(), 1, out.size(), to_child_);
    std::fflush(to_child_);
    std::string reply;
    for (int c; (c = std::fgetc(from_child_)) != EOF && c != '\n';) reply.push_back(static_cast<char>(c));
    return nlohmann::json::parse(reply);
  }

 protected:
  std::vector<PredictiveDistribution> predict_masked(const PartialSequence& state,
                                                     std::span<const Position> positions) const override {
    std::uint64_t id;
    {
      std::lock_guard lock(mutex_);
      id = next_id_++;
    }
    const auto frame = roundtrip(bridge::predict_request(id, state, positions, top_k_));
    return bridge::parse_predict_response(frame, positions);
  }

 private:
  // Closing the child's stdin is its signal to exit.
  void shutdown() noexcept {
    if (to_child_) std::fclose(to_child_);
    if (from_child_) std::fclose(from_child_);
    to_child_ = from_child_ = nullptr;
    if (child_ > 0) {
      int status = 0;
      waitpid(child_, &status, 0);
      child_ = -1;
    }
  }

  void spawn(const std::vector<std::string>& command) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw Error(ErrorKind::io, "pipe() failed");
    std::signal(SIGPIPE, SIG_IGN);
    child_ = fork();
    if (child_ < 0) throw Error(ErrorKind::io, "fork() failed");
    if (child_ == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      std::vector<char*> argv;
      for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      execvp(argv[0], argv.data());
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = fdopen(in_pipe[1], "w");
    from_child_ = fdopen(out_pipe[0], "r");
    if (!to_child_ || !from_child_) throw Error(ErrorKind::io, "fdopen() failed");
  }

  std::size_t top_k_;
  std::size_t vocab_ = 0;
  nlohmann::json meta_;
  pid_t child_ = -1;
  FILE* to_child_ = nullptr;
  FILE* from_child_ = nullptr;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 1;
};

}  // namespace dgmark
