#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "parity.hpp"
#include "rng.hpp"

namespace dgmark {

enum class AttackKind { insert, remove, substitute };

inline std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::insert: return "insert";
    case AttackKind::remove: return "delete";
    case AttackKind::substitute: return "substitute";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(std::string_view text) {
  if (text == "insert") return AttackKind::insert;
  if (text == "delete") return AttackKind::remove;
  if (text == "substitute") return AttackKind::substitute;
  throw Error(ErrorKind::config, "unknown attack kind '" + std::string(text) + "'");
}

struct AttackSpec {
  AttackKind kind = AttackKind::substitute;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 0;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error(ErrorKind::config, "epsilon must lie in [0, 1]");
    if (kind != AttackKind::remove && vocab_size < 2) {
      throw Error(ErrorKind::config, "attack needs vocab_size >= 2 to sample tokens");
    }
  }
};

// round-half-up of epsilon * n
inline std::size_t edit_count(double epsilon, std::size_t n) {
  return static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(n) + 0.5));
}

namespace detail {

// `count` distinct indices from [0, n), in ascending order (partial Fisher-Yates).
inline std::vector<std::size_t> distinct_positions(std::size_t n, std::size_t count, RngStream& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

// Random token-level edits at budget epsilon.
//  insert:     round(eps*n) uniform tokens into gaps drawn with replacement
//              from the n+1 gaps of the input;
//  delete:     round(eps*n) distinct positions removed;
//  substitute: round(eps*n) distinct positions replaced by a uniform token
//              different from the original.
inline std::vector<Token> apply_attack(std::span<const Token> tokens, const AttackSpec& spec) {
  spec.validate();
  if (tokens.empty()) throw Error(ErrorKind::invalid_input, "cannot attack an empty sequence");
  const std::size_t n = tokens.size();
  const std::size_t count = edit_count(spec.epsilon, n);
  RngStream rng(spec.seed);
  std::vector<Token> out;

  switch (spec.kind) {
    case AttackKind::insert: {
      std::vector<std::size_t> gaps(count);
      std::vector<Token> inserted(count);
      for (std::size_t e = 0; e < count; ++e) {
        gaps[e] = static_cast<std::size_t>(rng.uniform_below(n + 1));
        inserted[e] = static_cast<Token>(rng.uniform_below(spec.vocab_size));
      }
      std::vector<std::size_t> idx(count);
      for (std::size_t e = 0; e < count; ++e) idx[e] = e;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return gaps[a] < gaps[b]; });
      out.reserve(n + count);
      std::size_t next = 0;
      for (std::size_t gap = 0; gap <= n; ++gap) {
        while (next < count && gaps[idx[next]] == gap) out.push_back(inserted[idx[next++]]);
        if (gap < n) out.push_back(tokens[gap]);
      }
      break;
    }
    case AttackKind::remove: {
      if (count >= n && count > 0) {
        throw Error(ErrorKind::degenerate_attack, "deleting " + std::to_string(count) + " of " + std::to_string(n) +
                                                      " tokens leaves nothing");
      }
      const auto drop = detail::distinct_positions(n, count, rng);
      out.reserve(n - count);
      std::size_t d = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d < drop.size() && drop[d] == i) {
          ++d;
          continue;
        }
        out.push_back(tokens[i]);
      }
      break;
    }
    case AttackKind::substitute: {
      out.assign(tokens.begin(), tokens.end());
      const auto where = detail::distinct_positions(n, count, rng);
      for (std::size_t pos : where) {
        const Token original = out[pos];
        if (original < 0 || static_cast<std::size_t>(original) >= spec.vocab_size) {
          throw Error(ErrorKind::invalid_token, "token " + std::to_string(original) + " outside attack vocabulary");
        }
        auto replacement = static_cast<Token>(rng.uniform_below(spec.vocab_size - 1));
        if (replacement >= original) ++replacement;
        out[pos] = replacement;
      }
      break;
    }
  }
  return out;
}

}  // namespace dgmark
