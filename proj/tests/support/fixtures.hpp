#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "dgmark/dgmark.hpp"

namespace dgmark::testing {

// Corpus behind the context-mix fixture model used across tests and the
// acceptance suite.
inline MarkovCorpusSpec context_fixture_spec() {
  MarkovCorpusSpec spec;
  spec.vocab_size = 32;
  spec.sequences = 400;
  spec.length = 64;
  spec.branching = 4;
  spec.seed = 7;
  return spec;
}

inline constexpr double kContextFixtureAlpha = 0.05;

inline const ContextMixToyModel& context_fixture() {
  static const ContextMixToyModel model = train_context_mix(
      corpus_tokens(synthetic_markov_corpus(context_fixture_spec())), kContextFixtureAlpha,
      context_fixture_spec().vocab_size);
  return model;
}

inline WatermarkKey fixture_key() { return make_key("fixture", 0x5eed); }

inline double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_sd(const std::vector<double>& xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace dgmark::testing
