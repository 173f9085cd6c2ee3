#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace dgmark {

using Token = std::int32_t;

// Secret key material for the keyed partition.
struct WatermarkKey {
  std::string key_id;
  std::vector<std::uint8_t> bytes;

  static constexpr std::size_t kMinBytes = 16;

  void validate() const {
    if (bytes.size() < kMinBytes) {
      throw Error(ErrorKind::config, "watermark key must hold at least 16 bytes, got " +
                                         std::to_string(bytes.size()));
    }
    if (key_id.empty() || key_id.find_first_of(" \t\r\n") != std::string::npos) {
      throw Error(ErrorKind::config, "key_id must be a non-empty label without whitespace");
    }
  }
};

namespace detail {

inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace detail

inline std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

inline std::vector<std::uint8_t> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorKind::config, "hex string has odd length");
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = detail::hex_value(hex[2 * i]);
    const int lo = detail::hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorKind::config, "invalid hex digit in key bytes");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

// Key file: a single record "<key_id> <hex bytes>". Blank lines and lines
// starting with '#' are ignored.
inline WatermarkKey parse_key(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    WatermarkKey key;
    std::string hex, extra;
    if (!(fields >> key.key_id >> hex) || (fields >> extra)) {
      throw Error(ErrorKind::config, "key record must be '<key_id> <hex>'");
    }
    key.bytes = from_hex(hex);
    key.validate();
    return key;
  }
  throw Error(ErrorKind::config, "key file holds no record");
}

inline std::string format_key(const WatermarkKey& key) {
  key.validate();
  return key.key_id + " " + to_hex(key.bytes) + "\n";
}

inline WatermarkKey read_key_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot read key file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_key(buffer.str());
}

inline void write_key_file(const std::string& path, const WatermarkKey& key) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write key file '" + path + "'");
  out << format_key(key);
}

// Deterministic key derived from a seed; for fixtures and tests.
inline WatermarkKey make_key(std::string key_id, std::uint64_t seed, std::size_t length = 32) {
  WatermarkKey key{std::move(key_id), {}};
  key.bytes.resize(length);
  std::uint64_t state = seed;
  for (std::size_t i = 0; i < length; ++i) {
    if (i % 8 == 0) state = mix64(state);
    key.bytes[i] = static_cast<std::uint8_t>(state >> (8 * (i % 8)));
  }
  return key;
}

enum class PartitionMode { keyed, token_id_mod_2 };

inline std::string_view to_string(PartitionMode mode) {
  return mode == PartitionMode::keyed ? "keyed" : "token-id-mod-2";
}

inline PartitionMode parse_partition_mode(std::string_view text) {
  if (text == "keyed") return PartitionMode::keyed;
  if (text == "token-id-mod-2") return PartitionMode::token_id_mod_2;
  throw Error(ErrorKind::config, "unknown partition mode '" + std::string(text) + "'");
}

// Keyed 64-bit mix of a token id.
//
// The key bytes are absorbed 8 at a time (little-endian, last word
// zero-padded, byte length folded in first) through the splitmix64
// finalizer into a 64-bit key state s. A token t then maps to
//   mix64(mix64(t ^ s) ^ rotl(s, 32)).
class KeyedMixer {
 public:
  explicit KeyedMixer(const WatermarkKey& key) {
    std::uint64_t state = mix64(key.bytes.size());
    for (std::size_t i = 0; i < key.bytes.size(); i += 8) {
      std::uint64_t word = 0;
      for (std::size_t b = 0; b < 8 && i + b < key.bytes.size(); ++b) {
        word |= std::uint64_t{key.bytes[i + b]} << (8 * b);
      }
      state = mix64(state ^ word);
    }
    state_ = state;
  }

  std::uint64_t operator()(std::uint64_t token) const noexcept {
    const std::uint64_t rotated = (state_ << 32) | (state_ >> 32);
    return mix64(mix64(token ^ state_) ^ rotated);
  }

 private:
  std::uint64_t state_ = 0;
};

// Balanced binary labeling of the vocabulary. Matching set of response
// position i is G_i = {v : bit_of(v) == i mod 2}; positions are 0-based over
// the response.
class ParityPartition {
 public:
  ParityPartition(const WatermarkKey& key, std::size_t vocab_size, PartitionMode mode)
      : vocab_size_(vocab_size), mode_(mode), bits_(vocab_size) {
    if (vocab_size < 2) {
      throw Error(ErrorKind::invalid_vocabulary, "vocab_size must be >= 2, got " + std::to_string(vocab_size));
    }
    if (mode == PartitionMode::token_id_mod_2) {
      for (std::size_t v = 0; v < vocab_size; ++v) bits_[v] = static_cast<std::uint8_t>(v & 1U);
    } else {
      key.validate();
      const KeyedMixer mixer(key);
      std::vector<std::pair<std::uint64_t, std::uint32_t>> ranked(vocab_size);
      for (std::size_t v = 0; v < vocab_size; ++v) ranked[v] = {mixer(v), static_cast<std::uint32_t>(v)};
      std::sort(ranked.begin(), ranked.end());
      for (std::size_t r = 0; r < vocab_size; ++r) bits_[ranked[r].second] = static_cast<std::uint8_t>(r & 1U);
    }
    ones_ = static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  PartitionMode mode() const noexcept { return mode_; }

  int bit_of(Token token) const {
    check(token);
    return bits_[static_cast<std::size_t>(token)];
  }

  bool in_matching_set(std::size_t position, Token token) const {
    return static_cast<std::size_t>(bit_of(token)) == (position & 1U);
  }

  // |G_i| for the parity class of `position`.
  std::size_t matching_set_size(std::size_t position) const noexcept {
    return (position & 1U) ? ones_ : vocab_size_ - ones_;
  }

  // Null probability that a uniform token lands in G_i.
  double match_probability(std::size_t position) const noexcept {
    return static_cast<double>(matching_set_size(position)) / static_cast<double>(vocab_size_);
  }

  bool balanced_even() const noexcept { return 2 * ones_ == vocab_size_; }

  // m_i for every position of a response.
  std::vector<std::uint8_t> match_bits(const std::vector<Token>& tokens) const {
    std::vector<std::uint8_t> bits(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) bits[i] = in_matching_set(i, tokens[i]) ? 1 : 0;
    return bits;
  }

 private:
  void check(Token token) const {
    if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_) {
      throw Error(ErrorKind::invalid_token, "token " + std::to_string(token) + " outside vocabulary of size " +
                                                std::to_string(vocab_size_));
    }
  }

  std::size_t vocab_size_;
  PartitionMode mode_;
  std::vector<std::uint8_t> bits_;
  std::size_t ones_ = 0;
};

inline ParityPartition build_partition(const WatermarkKey& key, std::size_t vocab_size,
                                       PartitionMode mode = PartitionMode::keyed) {
  return ParityPartition(key, vocab_size, mode);
}

}  // namespace dgmark
