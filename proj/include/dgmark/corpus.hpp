#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "parity.hpp"
#include "rng.hpp"

namespace dgmark {

struct CorpusRecord {
  std::string id;
  std::vector<Token> tokens;
};

// JSONL corpus: one {"id": string, "tokens": [int, ...]} per line.
inline std::vector<CorpusRecord> parse_corpus_jsonl(std::istream& in, const std::string& source = "<stream>") {
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.tokens = j.at("tokens").get<std::vector<Token>>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::io, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<CorpusRecord> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read corpus '" + path + "'");
  return parse_corpus_jsonl(in, path);
}

inline void write_corpus_jsonl(std::ostream& out, const std::vector<CorpusRecord>& corpus) {
  for (const auto& rec : corpus) {
    out << nlohmann::json{{"id", rec.id}, {"tokens", rec.tokens}}.dump() << '\n';
  }
}

inline std::vector<std::vector<Token>> corpus_tokens(const std::vector<CorpusRecord>& corpus) {
  std::vector<std::vector<Token>> out;
  out.reserve(corpus.size());
  for (const auto& rec : corpus) out.push_back(rec.tokens);
  return out;
}

struct MarkovCorpusSpec {
  std::size_t vocab_size = 32;
  std::size_t sequences = 400;
  std::size_t length = 64;
  std::size_t branching = 4;  // successors with non-zero weight per token
  std::uint64_t seed = 7;
};

// Sequences from a random sparse first-order Markov chain. Each token gets
// `branching` distinct successors with weights drawn uniformly from [0.2, 1.2).
inline std::vector<CorpusRecord> synthetic_markov_corpus(const MarkovCorpusSpec& spec) {
  if (spec.vocab_size < 2 || spec.branching == 0 || spec.branching > spec.vocab_size) {
    throw Error(ErrorKind::config, "invalid synthetic corpus parameters");
  }
  RngStream rng(derive_seed(spec.seed, "synthetic-markov", "transitions"));
  std::vector<std::vector<std::pair<Token, double>>> successors(spec.vocab_size);
  for (std::size_t v = 0; v < spec.vocab_size; ++v) {
    std::vector<Token> pool(spec.vocab_size);
    for (std::size_t u = 0; u < spec.vocab_size; ++u) pool[u] = static_cast<Token>(u);
    for (std::size_t b = 0; b < spec.branching; ++b) {
      const auto pick = b + rng.uniform_below(spec.vocab_size - b);
      std::swap(pool[b], pool[pick]);
      successors[v].emplace_back(pool[b], 0.2 + rng.uniform01());
    }
  }
  RngStream walk(derive_seed(spec.seed, "synthetic-markov", "walk"));
  std::vector<CorpusRecord> out;
  out.reserve(spec.sequences);
  for (std::size_t s = 0; s < spec.sequences; ++s) {
    CorpusRecord rec{"syn-" + std::to_string(s), {}};
    Token cur = static_cast<Token>(walk.uniform_below(spec.vocab_size));
    rec.tokens.push_back(cur);
    while (rec.tokens.size() < spec.length) {
      const auto& next = successors[static_cast<std::size_t>(cur)];
      double total = 0.0;
      for (const auto& [tok, w] : next) total += w;
      double u = walk.uniform01() * total;
      cur = next.back().first;
      for (const auto& [tok, w] : next) {
        if (u < w) {
          cur = tok;
          break;
        }
        u -= w;
      }
      rec.tokens.push_back(cur);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dgmark
