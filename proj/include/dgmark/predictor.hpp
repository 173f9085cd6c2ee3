#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parity.hpp"

namespace dgmark {

using Position = std::size_t;

// Diffusion state: prompt x, response length n and the revealed tokens y_I.
class PartialSequence {
 public:
  static constexpr Token kMasked = -1;

  PartialSequence() = default;
  PartialSequence(std::vector<Token> prompt, std::size_t length)
      : prompt_(std::move(prompt)), slots_(length, kMasked) {
    if (length == 0) throw Error(ErrorKind::invalid_input, "response length must be positive");
  }

  PartialSequence(std::vector<Token> prompt, std::size_t length, const std::map<Position, Token>& revealed)
      : PartialSequence(std::move(prompt), length) {
    for (const auto& [pos, tok] : revealed) reveal(pos, tok);
  }

  const std::vector<Token>& prompt() const noexcept { return prompt_; }
  std::size_t length() const noexcept { return slots_.size(); }

  bool is_revealed(Position pos) const { return at(pos) != kMasked; }
  bool is_masked(Position pos) const { return at(pos) == kMasked; }
  Token token(Position pos) const { return at(pos); }

  void reveal(Position pos, Token tok) {
    if (pos >= slots_.size()) {
      throw Error(ErrorKind::invalid_input, "revealed position " + std::to_string(pos) + " >= length");
    }
    if (tok < 0) throw Error(ErrorKind::invalid_token, "negative token id");
    if (slots_[pos] != kMasked) {
      throw Error(ErrorKind::invalid_input, "position " + std::to_string(pos) + " revealed twice");
    }
    slots_[pos] = tok;
    ++revealed_count_;
  }

  std::size_t revealed_count() const noexcept { return revealed_count_; }

  std::map<Position, Token> revealed() const {
    std::map<Position, Token> out;
    for (Position i = 0; i < slots_.size(); ++i) {
      if (slots_[i] != kMasked) out.emplace(i, slots_[i]);
    }
    return out;
  }

  std::vector<Position> masked_positions() const {
    std::vector<Position> out;
    for (Position i = 0; i < slots_.size(); ++i) {
      if (slots_[i] == kMasked) out.push_back(i);
    }
    return out;
  }

  // Slot view: kMasked where unrevealed.
  const std::vector<Token>& slots() const noexcept { return slots_; }

  friend bool operator==(const PartialSequence&, const PartialSequence&) = default;

 private:
  Token at(Position pos) const {
    if (pos >= slots_.size()) throw Error(ErrorKind::invalid_input, "position out of range");
    return slots_[pos];
  }

  std::vector<Token> prompt_;
  std::vector<Token> slots_;
  std::size_t revealed_count_ = 0;
};

struct TokenProb {
  Token token;
  double prob;

  friend bool operator==(const TokenProb&, const TokenProb&) = default;
};

// p(y_j | y_I, x) at one position. Entries are sorted by descending
// probability, ties by ascending token id.
struct PredictiveDistribution {
  Position position = 0;
  std::vector<TokenProb> entries;
  bool truncated = false;
  // Probability mass the entries covered before renormalization; 1 when full.
  double covered_mass = 1.0;

  double prob_of(Token token) const {
    for (const auto& e : entries) {
      if (e.token == token) return e.prob;
    }
    return 0.0;
  }

  friend bool operator==(const PredictiveDistribution&, const PredictiveDistribution&) = default;
};

inline void sort_entries(std::vector<TokenProb>& entries) {
  std::sort(entries.begin(), entries.end(), [](const TokenProb& a, const TokenProb& b) {
    return a.prob != b.prob ? a.prob > b.prob : a.token < b.token;
  });
}

// Checks non-negativity, ordering and (for full distributions) normalization.
inline bool is_valid_distribution(const PredictiveDistribution& dist, double tolerance = 1e-9) {
  if (dist.entries.empty()) return false;
  double total = 0.0;
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    const auto& e = dist.entries[i];
    if (!(e.prob >= 0.0) || !std::isfinite(e.prob)) return false;
    if (i > 0 && e.prob > dist.entries[i - 1].prob) return false;
    total += e.prob;
  }
  return std::abs(total - 1.0) <= tolerance;
}

// Conditional predictor over arbitrary revealed subsets. predict() validates
// the query; implementations provide predict_masked() and may assume every
// queried position is masked.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::size_t vocab_size() const = 0;

  std::vector<PredictiveDistribution> predict(const PartialSequence& state, std::span<const Position> positions) const {
    for (Position pos : positions) {
      if (pos >= state.length()) {
        throw Error(ErrorKind::invalid_query, "queried position " + std::to_string(pos) + " >= length");
      }
      if (state.is_revealed(pos)) {
        throw Error(ErrorKind::invalid_query, "queried position " + std::to_string(pos) + " is already revealed");
      }
    }
    return predict_masked(state, positions);
  }

 protected:
  virtual std::vector<PredictiveDistribution> predict_masked(const PartialSequence& state,
                                                             std::span<const Position> positions) const = 0;
};

// Context-independent model: position j always gets q_j.
class FactorizedToyModel final : public Predictor {
 public:
  explicit FactorizedToyModel(std::vector<std::vector<double>> per_position) {
    if (per_position.empty()) throw Error(ErrorKind::invalid_input, "factorized model needs at least one position");
    vocab_ = per_position.front().size();
    if (vocab_ < 2) throw Error(ErrorKind::invalid_vocabulary, "factorized model vocabulary must be >= 2");
    dists_.reserve(per_position.size());
    for (std::size_t j = 0; j < per_position.size(); ++j) {
      const auto& q = per_position[j];
      if (q.size() != vocab_) throw Error(ErrorKind::invalid_input, "ragged factorized distributions");
      PredictiveDistribution dist;
      dist.position = j;
      for (std::size_t v = 0; v < q.size(); ++v) dist.entries.push_back({static_cast<Token>(v), q[v]});
      sort_entries(dist.entries);
      if (!is_valid_distribution(dist)) {
        throw Error(ErrorKind::invalid_input, "q_" + std::to_string(j) + " is not a distribution");
      }
      dists_.push_back(std::move(dist));
    }
  }

  // Same q at every one of `length` positions.
  static FactorizedToyModel repeated(const std::vector<double>& q, std::size_t length) {
    return FactorizedToyModel(std::vector<std::vector<double>>(length, q));
  }

  static FactorizedToyModel uniform(std::size_t vocab_size, std::size_t length) {
    return repeated(std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)), length);
  }

  std::size_t vocab_size() const override { return vocab_; }
  std::size_t length() const noexcept { return dists_.size(); }

  const PredictiveDistribution& distribution(Position j) const { return dists_.at(j); }

 protected:
  std::vector<PredictiveDistribution> predict_masked(const PartialSequence& state,
                                                     std::span<const Position> positions) const override {
    if (state.length() > dists_.size()) {
      throw Error(ErrorKind::invalid_query, "sequence length " + std::to_string(state.length()) +
                                                " exceeds factorized model length " + std::to_string(dists_.size()));
    }
    std::vector<PredictiveDistribution> out;
    out.reserve(positions.size());
    for (Position pos : positions) out.push_back(dists_[pos]);
    return out;
  }

 private:
  std::size_t vocab_ = 0;
  std::vector<PredictiveDistribution> dists_;
};

}  // namespace dgmark
