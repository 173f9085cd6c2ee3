#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "error.hpp"
#include "predictor.hpp"

namespace dgmark {

// Mixture weights by which neighbors of a position are revealed.
struct ContextMixWeights {
  double both_left = 0.45;
  double both_right = 0.45;
  double both_unigram = 0.10;
  double one_bigram = 0.8;
  double one_unigram = 0.2;
};

// Order-sensitive toy predictor built from unigram, left-bigram and
// right-bigram counts. The left neighbor of response position 0 is the last
// prompt token, if any; position n-1 has no right neighbor.
class ContextMixToyModel final : public Predictor {
 public:
  ContextMixToyModel(std::size_t vocab_size, double alpha, std::vector<std::uint64_t> unigram,
                     std::vector<std::uint64_t> bigram, ContextMixWeights weights = {})
      : vocab_(vocab_size), alpha_(alpha), weights_(weights), unigram_(std::move(unigram)),
        bigram_(std::move(bigram)) {
    if (vocab_ < 2) throw Error(ErrorKind::invalid_vocabulary, "context-mix vocabulary must be >= 2");
    if (!(alpha_ >= 0.0)) throw Error(ErrorKind::training, "smoothing alpha must be >= 0");
    if (unigram_.size() != vocab_ || bigram_.size() != vocab_ * vocab_) {
      throw Error(ErrorKind::training, "count tables do not match vocabulary size");
    }
    left_total_.assign(vocab_, 0);
    right_total_.assign(vocab_, 0);
    for (std::size_t l = 0; l < vocab_; ++l) {
      for (std::size_t r = 0; r < vocab_; ++r) {
        left_total_[l] += bigram_[l * vocab_ + r];
        right_total_[r] += bigram_[l * vocab_ + r];
      }
    }
    for (auto c : unigram_) total_ += c;
    if (total_ == 0 && alpha_ == 0.0) throw Error(ErrorKind::training, "corpus holds no tokens");
    const std::size_t contexts = (vocab_ + 1) * (vocab_ + 1);
    if (contexts * vocab_ <= kTableLimit) {
      table_.reserve(contexts);
      for (std::size_t key = 0; key < contexts; ++key) {
        table_.push_back(mix(decode_side(key / (vocab_ + 1)), decode_side(key % (vocab_ + 1))));
      }
    }
  }

  std::size_t vocab_size() const override { return vocab_; }
  double alpha() const noexcept { return alpha_; }

  std::uint64_t unigram_count(Token v) const { return unigram_.at(index(v)); }
  std::uint64_t bigram_count(Token left, Token right) const { return bigram_.at(index(left) * vocab_ + index(right)); }

  double unigram_prob(Token v) const {
    return (static_cast<double>(unigram_count(v)) + alpha_) /
           (static_cast<double>(total_) + alpha_ * static_cast<double>(vocab_));
  }

  // P(y_i = v | y_{i-1} = left); unigram when the context was never seen.
  double left_bigram_prob(Token left, Token v) const {
    const double denom = static_cast<double>(left_total_.at(index(left))) + alpha_ * static_cast<double>(vocab_);
    if (denom == 0.0) return unigram_prob(v);
    return (static_cast<double>(bigram_count(left, v)) + alpha_) / denom;
  }

  // P(y_i = v | y_{i+1} = right); unigram when the context was never seen.
  double right_bigram_prob(Token right, Token v) const {
    const double denom = static_cast<double>(right_total_.at(index(right))) + alpha_ * static_cast<double>(vocab_);
    if (denom == 0.0) return unigram_prob(v);
    return (static_cast<double>(bigram_count(v, right)) + alpha_) / denom;
  }

  // Conditional at one position given its neighbor tokens (nullopt = masked
  // or absent).
  PredictiveDistribution conditional(std::optional<Token> left, std::optional<Token> right) const {
    if (!table_.empty()) {
      const std::size_t l = left ? index(*left) + 1 : 0;
      const std::size_t r = right ? index(*right) + 1 : 0;
      return table_[l * (vocab_ + 1) + r];
    }
    return mix(left, right);
  }

 protected:
  std::vector<PredictiveDistribution> predict_masked(const PartialSequence& state,
                                                     std::span<const Position> positions) const override {
    std::vector<PredictiveDistribution> out;
    out.reserve(positions.size());
    for (Position pos : positions) {
      std::optional<Token> left, right;
      if (pos > 0) {
        if (state.is_revealed(pos - 1)) left = state.token(pos - 1);
      } else if (!state.prompt().empty()) {
        left = state.prompt().back();
      }
      if (pos + 1 < state.length() && state.is_revealed(pos + 1)) right = state.token(pos + 1);
      auto dist = conditional(left, right);
      dist.position = pos;
      out.push_back(std::move(dist));
    }
    return out;
  }

 private:
  static constexpr std::size_t kTableLimit = std::size_t{1} << 22;

  std::size_t index(Token v) const {
    if (v < 0 || static_cast<std::size_t>(v) >= vocab_) {
      throw Error(ErrorKind::invalid_token, "token " + std::to_string(v) + " outside model vocabulary");
    }
    return static_cast<std::size_t>(v);
  }

  std::optional<Token> decode_side(std::size_t code) const {
    if (code == 0) return std::nullopt;
    return static_cast<Token>(code - 1);
  }

  PredictiveDistribution mix(std::optional<Token> left, std::optional<Token> right) const {
    PredictiveDistribution dist;
    dist.entries.reserve(vocab_);
    for (std::size_t v = 0; v < vocab_; ++v) {
      const auto tok = static_cast<Token>(v);
      double p;
      if (left && right) {
        p = weights_.both_left * left_bigram_prob(*left, tok) + weights_.both_right * right_bigram_prob(*right, tok) +
            weights_.both_unigram * unigram_prob(tok);
      } else if (left) {
        p = weights_.one_bigram * left_bigram_prob(*left, tok) + weights_.one_unigram * unigram_prob(tok);
      } else if (right) {
        p = weights_.one_bigram * right_bigram_prob(*right, tok) + weights_.one_unigram * unigram_prob(tok);
      } else {
        p = unigram_prob(tok);
      }
      dist.entries.push_back({tok, p});
    }
    sort_entries(dist.entries);
    return dist;
  }

  std::size_t vocab_;
  double alpha_;
  ContextMixWeights weights_;
  std::vector<std::uint64_t> unigram_;
  std::vector<std::uint64_t> bigram_;  // row = left token, column = right token
  std::vector<std::uint64_t> left_total_;
  std::vector<std::uint64_t> right_total_;
  std::uint64_t total_ = 0;
  std::vector<PredictiveDistribution> table_;
};

// Counts unigrams and adjacent pairs. Vocabulary is max token id + 1 unless a
// larger vocab_size is given.
inline ContextMixToyModel train_context_mix(const std::vector<std::vector<Token>>& corpus, double alpha,
                                            std::optional<std::size_t> vocab_size = std::nullopt,
                                            ContextMixWeights weights = {}) {
  if (corpus.empty()) throw Error(ErrorKind::training, "empty corpus");
  Token max_token = -1;
  for (const auto& seq : corpus) {
    for (Token t : seq) {
      if (t < 0) throw Error(ErrorKind::training, "negative token id in corpus");
      max_token = std::max(max_token, t);
    }
  }
  if (max_token < 0) throw Error(ErrorKind::training, "corpus holds no tokens");
  std::size_t vocab = static_cast<std::size_t>(max_token) + 1;
  if (vocab_size) {
    if (*vocab_size < vocab) {
      throw Error(ErrorKind::training, "vocab_size " + std::to_string(*vocab_size) + " smaller than corpus ids");
    }
    vocab = *vocab_size;
  }
  vocab = std::max<std::size_t>(vocab, 2);
  std::vector<std::uint64_t> unigram(vocab, 0), bigram(vocab * vocab, 0);
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      ++unigram[static_cast<std::size_t>(seq[i])];
      if (i + 1 < seq.size()) ++bigram[static_cast<std::size_t>(seq[i]) * vocab + static_cast<std::size_t>(seq[i + 1])];
    }
  }
  return ContextMixToyModel(vocab, alpha, std::move(unigram), std::move(bigram), weights);
}

}  // namespace dgmark
