#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "parity.hpp"
#include "predictor.hpp"
#include "rng.hpp"
#include "strategy.hpp"

namespace dgmark {

enum class DecodeMode { plain, dgmark, lookahead };

inline std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::plain: return "plain";
    case DecodeMode::dgmark: return "dgmark";
    case DecodeMode::lookahead: return "lookahead";
  }
  return "unknown";
}

inline DecodeMode parse_decode_mode(std::string_view text) {
  if (text == "plain") return DecodeMode::plain;
  if (text == "dgmark") return DecodeMode::dgmark;
  if (text == "lookahead") return DecodeMode::lookahead;
  throw Error(ErrorKind::config, "unknown decode mode '" + std::string(text) + "'");
}

struct DecodeConfig {
  DecodeMode mode = DecodeMode::dgmark;
  std::size_t length = 0;
  std::size_t block_size = 0;  // 0 means one block of the full length
  std::size_t beam = 1;
  StrategySpec strategy;
  std::uint64_t seed = 0;

  std::size_t effective_block_size() const noexcept { return block_size == 0 ? length : block_size; }

  void validate() const {
    if (length == 0) throw Error(ErrorKind::config, "length must be positive");
    const auto block = effective_block_size();
    if (block > length) throw Error(ErrorKind::config, "block_size exceeds length");
    if (length % block != 0) {
      throw Error(ErrorKind::config, "length " + std::to_string(length) + " is not divisible by block_size " +
                                         std::to_string(block));
    }
    if (beam == 0) throw Error(ErrorKind::config, "beam must be >= 1");
    strategy.validate();
  }
};

// What the decoder saw and used for the token it committed at one step.
struct CommitRecord {
  Position position = 0;
  Token candidate = 0;
  double candidate_prob = 0.0;

  friend bool operator==(const CommitRecord&, const CommitRecord&) = default;
};

// One member of the lookahead beam T at a step.
struct LookaheadScore {
  Position position = 0;
  Token candidate = 0;
  double reward = 0.0;
  std::size_t next_matches = 0;  // g^(j)

  friend bool operator==(const LookaheadScore&, const LookaheadScore&) = default;
};

struct LookaheadStep {
  std::size_t step = 0;
  std::vector<LookaheadScore> beam;

  friend bool operator==(const LookaheadStep&, const LookaheadStep&) = default;
};

struct DecodeTrace {
  std::vector<Position> order;
  std::vector<std::size_t> fallback_steps;
  std::vector<std::uint8_t> match_bits;  // empty when decoded without a partition
  std::vector<std::size_t> candidate_set_sizes;
  std::vector<CommitRecord> call_log;
  std::vector<LookaheadStep> lookahead;  // only steps where |T| > 1

  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

struct DecodeResult {
  std::vector<Token> tokens;
  DecodeTrace trace;

  std::size_t match_count() const {
    std::size_t g = 0;
    for (auto b : trace.match_bits) g += b;
    return g;
  }
  double match_ratio() const {
    return tokens.empty() ? 0.0 : static_cast<double>(match_count()) / static_cast<double>(tokens.size());
  }
};

namespace detail {

inline std::vector<PredictiveDistribution> query(const Predictor& model, const PartialSequence& state,
                                                 std::span<const Position> positions, std::size_t step) {
  try {
    return model.predict(state, positions);
  } catch (const std::exception& e) {
    throw DecodeAborted(step, e.what());
  }
}

inline bool better_reward(const Proposal& a, const Proposal& b) {
  return a.reward != b.reward ? a.reward > b.reward : a.position < b.position;
}

// Runs the strategy on `state` over `positions` and counts parity matches.
inline std::size_t next_match_count(const Predictor& model, const StrategySpec& strategy,
                                    const ParityPartition& partition, const PartialSequence& state,
                                    std::span<const Position> positions, RngStream rng, std::size_t step) {
  if (positions.empty()) return 0;
  const auto dists = query(model, state, positions, step);
  const auto props = propose(strategy, dists, rng);
  std::size_t count = 0;
  for (const auto& p : props) count += partition.in_matching_set(p.position, p.candidate) ? 1 : 0;
  return count;
}

}  // namespace detail

// Sequential decoding over the response. Blocks are decoded left to right;
// inside a block each step:
//   plain:     commit the max-reward masked position with its candidate;
//   dgmark:    restrict to positions whose candidate is parity-matching,
//              falling back to all masked positions when there are none;
//   lookahead: as dgmark, then among the top-`beam` by reward commit the one
//              that leaves the most parity-matching candidates one step ahead
//              (ties: larger reward, then lower position).
// Rewards tie toward the lower position. One RNG stream seeded with
// config.seed drives all proposals; lookahead rollouts use forked streams.
inline DecodeResult decode(const Predictor& model, const DecodeConfig& config, std::span<const Token> prompt,
                           const ParityPartition* partition) {
  config.validate();
  if (config.mode != DecodeMode::plain && partition == nullptr) {
    throw Error(ErrorKind::config, "watermarked decoding needs a parity partition");
  }
  if (partition != nullptr && partition->vocab_size() != model.vocab_size()) {
    throw Error(ErrorKind::config, "partition vocab_size " + std::to_string(partition->vocab_size()) +
                                       " does not match model vocab_size " + std::to_string(model.vocab_size()));
  }
  for (Token t : prompt) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size()) {
      throw Error(ErrorKind::invalid_token, "prompt token " + std::to_string(t) + " outside model vocabulary");
    }
  }

  const std::size_t n = config.length;
  const std::size_t block = config.effective_block_size();
  PartialSequence state(std::vector<Token>(prompt.begin(), prompt.end()), n);
  RngStream rng(config.seed);
  DecodeResult result;
  auto& trace = result.trace;
  trace.order.reserve(n);
  trace.call_log.reserve(n);
  trace.candidate_set_sizes.reserve(n);

  std::vector<Position> masked;
  std::vector<std::size_t> pool;  // indices into proposals
  std::size_t step = 0;
  for (std::size_t start = 0; start < n; start += block) {
    for (std::size_t inner = 0; inner < block; ++inner, ++step) {
      masked.clear();
      for (Position p = start; p < start + block; ++p) {
        if (state.is_masked(p)) masked.push_back(p);
      }
      const auto dists = detail::query(model, state, masked, step);
      if (dists.size() != masked.size()) throw DecodeAborted(step, "predictor returned wrong number of distributions");
      const auto props = propose(config.strategy, dists, rng);
      for (const auto& p : props) {
        if (p.candidate < 0 || static_cast<std::size_t>(p.candidate) >= model.vocab_size()) {
          throw DecodeAborted(step, "predictor proposed token outside vocabulary");
        }
      }

      pool.clear();
      if (config.mode != DecodeMode::plain) {
        for (std::size_t i = 0; i < props.size(); ++i) {
          if (partition->in_matching_set(props[i].position, props[i].candidate)) pool.push_back(i);
        }
        if (pool.empty()) trace.fallback_steps.push_back(step);
      }
      if (pool.empty()) {
        for (std::size_t i = 0; i < props.size(); ++i) pool.push_back(i);
      }
      trace.candidate_set_sizes.push_back(pool.size());

      std::size_t chosen;
      if (config.mode == DecodeMode::lookahead && config.beam > 1 && pool.size() > 1) {
        std::sort(pool.begin(), pool.end(),
                  [&](std::size_t a, std::size_t b) { return detail::better_reward(props[a], props[b]); });
        const std::size_t width = std::min(config.beam, pool.size());
        LookaheadStep record{step, {}};
        std::vector<Position> remaining;
        for (std::size_t t = 0; t < width; ++t) {
          const auto& cand = props[pool[t]];
          PartialSequence hypothetical = state;
          hypothetical.reveal(cand.position, cand.candidate);
          remaining.clear();
          for (Position p : masked) {
            if (p != cand.position) remaining.push_back(p);
          }
          const auto g = detail::next_match_count(model, config.strategy, *partition, hypothetical, remaining,
                                                  rng.fork(step, cand.position), step);
          record.beam.push_back({cand.position, cand.candidate, cand.reward, g});
        }
        // Beam is in (reward desc, position asc) order, so the first max wins ties.
        std::size_t best = 0;
        for (std::size_t t = 1; t < width; ++t) {
          if (record.beam[t].next_matches > record.beam[best].next_matches) best = t;
        }
        chosen = pool[best];
        trace.lookahead.push_back(std::move(record));
      } else {
        chosen = pool.front();
        for (std::size_t i : pool) {
          if (detail::better_reward(props[i], props[chosen])) chosen = i;
        }
      }

      const auto& commit = props[chosen];
      state.reveal(commit.position, commit.candidate);
      trace.order.push_back(commit.position);
      trace.call_log.push_back({commit.position, commit.candidate, commit.candidate_prob});
    }
  }

  result.tokens = state.slots();
  if (partition != nullptr) trace.match_bits = partition->match_bits(result.tokens);
  return result;
}

inline DecodeResult decode_plain(const Predictor& model, DecodeConfig config, std::span<const Token> prompt,
                                 const ParityPartition* partition = nullptr) {
  config.mode = DecodeMode::plain;
  return decode(model, config, prompt, partition);
}

inline DecodeResult decode_watermarked(const Predictor& model, DecodeConfig config, std::span<const Token> prompt,
                                       const ParityPartition& partition) {
  config.mode = DecodeMode::dgmark;
  return decode(model, config, prompt, &partition);
}

inline DecodeResult decode_lookahead(const Predictor& model, DecodeConfig config, std::span<const Token> prompt,
                                     const ParityPartition& partition) {
  config.mode = DecodeMode::lookahead;
  return decode(model, config, prompt, &partition);
}

// Block-wise wrapper: same as decode() with config.block_size set.
inline DecodeResult decode_blockwise(const Predictor& model, DecodeConfig config, std::size_t block_size,
                                     std::span<const Token> prompt, const ParityPartition* partition) {
  if (block_size == 0) throw Error(ErrorKind::config, "block_size must be positive");
  config.block_size = block_size;
  return decode(model, config, prompt, partition);
}

}  // namespace dgmark
