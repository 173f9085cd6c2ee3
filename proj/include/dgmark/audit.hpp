#pragma once

#include <bit>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "decoder.hpp"
#include "predictor.hpp"

namespace dgmark {

// One predict() call as seen by the wrapped model.
struct RecordedCall {
  PartialSequence state;
  std::vector<Position> positions;
  std::vector<PredictiveDistribution> output;
};

// Pass-through predictor that records every query and its answer. Used to
// prove that decoding never alters what the model reports.
class AuditingPredictor final : public Predictor {
 public:
  explicit AuditingPredictor(const Predictor& inner) : inner_(inner) {}

  std::size_t vocab_size() const override { return inner_.vocab_size(); }

  std::vector<RecordedCall> calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

  void clear() {
    std::lock_guard lock(mutex_);
    calls_.clear();
  }

 protected:
  std::vector<PredictiveDistribution> predict_masked(const PartialSequence& state,
                                                     std::span<const Position> positions) const override {
    auto out = inner_.predict(state, positions);
    std::lock_guard lock(mutex_);
    calls_.push_back({state, {positions.begin(), positions.end()}, out});
    return out;
  }

 private:
  const Predictor& inner_;
  mutable std::mutex mutex_;
  mutable std::vector<RecordedCall> calls_;
};

struct AuditReport {
  std::size_t calls_checked = 0;
  std::size_t commits_checked = 0;
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

inline bool same_bits(double a, double b) noexcept {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

// Checks a finished decode against the recorded predictor traffic:
//  - every query carried the original prompt and length, and its revealed
//    tokens were either exactly the committed prefix of the decode order or
//    that prefix plus one hypothetical lookahead commit;
//  - every committed token's logged probability is bit-identical to what the
//    predictor reported for that token in the state it was committed from.
inline AuditReport audit_decode(const DecodeResult& result, std::span<const Token> prompt,
                                std::span<const RecordedCall> calls) {
  AuditReport report;
  const auto& order = result.trace.order;
  const auto& tokens = result.tokens;
  const std::size_t n = tokens.size();
  const std::vector<Token> expected_prompt(prompt.begin(), prompt.end());

  std::vector<std::size_t> step_of(n, n);  // commit step of each position
  for (std::size_t t = 0; t < order.size(); ++t) {
    if (order[t] >= n || step_of[order[t]] != n) {
      report.violations.push_back("decode order is not a permutation");
      return report;
    }
    step_of[order[t]] = t;
  }

  auto violation = [&](std::size_t call, const std::string& what) {
    report.violations.push_back("call " + std::to_string(call) + ": " + what);
  };

  // Main-state call index per step.
  std::vector<std::size_t> main_call(order.size(), calls.size());
  for (std::size_t c = 0; c < calls.size(); ++c) {
    const auto& call = calls[c];
    ++report.calls_checked;
    if (call.state.prompt() != expected_prompt) violation(c, "prompt differs from the decode prompt");
    if (call.state.length() != n) violation(c, "length differs from the decode length");
    const std::size_t t = call.state.revealed_count();
    // Revealed entries that agree with the committed prefix of length m.
    auto prefix_hits = [&](std::size_t m) {
      std::size_t hits = 0;
      for (Position p = 0; p < call.state.length() && p < n; ++p) {
        if (call.state.is_revealed(p) && step_of[p] < m && call.state.token(p) == tokens[p]) ++hits;
      }
      return hits;
    };
    if (prefix_hits(t) == t) {
      if (t < main_call.size() && main_call[t] == calls.size()) main_call[t] = c;
    } else if (t == 0 || prefix_hits(t - 1) != t - 1) {
      violation(c, "revealed tokens are neither the committed prefix nor a one-step lookahead of it");
    }
  }

  for (std::size_t t = 0; t < order.size(); ++t) {
    ++report.commits_checked;
    if (main_call[t] == calls.size()) {
      report.violations.push_back("step " + std::to_string(t) + ": no predictor call on the committed prefix");
      continue;
    }
    const auto& call = calls[main_call[t]];
    const auto& log = result.trace.call_log.at(t);
    if (log.position != order[t] || log.candidate != tokens[order[t]]) {
      report.violations.push_back("step " + std::to_string(t) + ": call log disagrees with committed token");
      continue;
    }
    bool found = false;
    for (const auto& dist : call.output) {
      if (dist.position != log.position) continue;
      for (const auto& e : dist.entries) {
        if (e.token != log.candidate) continue;
        found = true;
        if (!same_bits(e.prob, log.candidate_prob)) {
          report.violations.push_back("step " + std::to_string(t) + ": logged probability differs from predictor");
        }
      }
    }
    if (!found) report.violations.push_back("step " + std::to_string(t) + ": committed token absent from predictor output");
  }
  return report;
}

}  // namespace dgmark
