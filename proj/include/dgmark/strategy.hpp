#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "predictor.hpp"
#include "rng.hpp"

namespace dgmark {

enum class StrategyKind { random, confidence, entropy, margin };
enum class Selection { greedy, multinomial };

inline std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::random: return "random";
    case StrategyKind::confidence: return "confidence";
    case StrategyKind::entropy: return "entropy";
    case StrategyKind::margin: return "margin";
  }
  return "unknown";
}

inline std::string_view to_string(Selection selection) {
  return selection == Selection::greedy ? "greedy" : "multinomial";
}

inline StrategyKind parse_strategy_kind(std::string_view text) {
  if (text == "random") return StrategyKind::random;
  if (text == "confidence") return StrategyKind::confidence;
  if (text == "entropy") return StrategyKind::entropy;
  if (text == "margin") return StrategyKind::margin;
  throw Error(ErrorKind::config, "unknown strategy kind '" + std::string(text) + "'");
}

inline Selection parse_selection(std::string_view text) {
  if (text == "greedy") return Selection::greedy;
  if (text == "multinomial") return Selection::multinomial;
  throw Error(ErrorKind::config, "unknown selection '" + std::string(text) + "'");
}

struct StrategySpec {
  StrategyKind kind = StrategyKind::confidence;
  Selection selection = Selection::multinomial;
  double temperature = 1.0;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw Error(ErrorKind::config, "temperature must be a positive finite number");
    }
    if (kind == StrategyKind::margin && selection != Selection::greedy) {
      throw Error(ErrorKind::config, "margin strategy requires greedy selection");
    }
  }
};

struct Proposal {
  Position position = 0;
  double reward = 0.0;
  Token candidate = 0;
  double candidate_prob = 0.0;  // as reported by the predictor

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

// Entropy is only defined when the entries carry (almost) all of the mass.
inline constexpr double kEntropyMinCoveredMass = 0.999;

namespace detail {

// Index of the argmax entry; lowest token id among ties.
inline std::size_t argmax_entry(const PredictiveDistribution& dist) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.entries.size(); ++i) {
    const auto& e = dist.entries[i];
    const auto& b = dist.entries[best];
    if (e.prob > b.prob || (e.prob == b.prob && e.token < b.token)) best = i;
  }
  return best;
}

inline std::size_t sample_entry(const PredictiveDistribution& dist, double temperature, RngStream& rng) {
  const double u = rng.uniform01();
  const auto& entries = dist.entries;
  std::size_t last_positive = 0;
  if (temperature == 1.0) {
    double total = 0.0;
    for (const auto& e : entries) total += e.prob;
    double target = u * total;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].prob <= 0.0) continue;
      last_positive = i;
      if (target < entries[i].prob) return i;
      target -= entries[i].prob;
    }
    return last_positive;
  }
  std::vector<double> weights(entries.size());
  double total = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    weights[i] = entries[i].prob > 0.0 ? std::pow(entries[i].prob, 1.0 / temperature) : 0.0;
    total += weights[i];
  }
  double target = u * total;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (target < weights[i]) return i;
    target -= weights[i];
  }
  return last_positive;
}

}  // namespace detail

// Reward r_j and candidate v_j for every distribution, in input order.
// RNG consumption per distribution: random kind draws its reward first, then
// multinomial selection draws one uniform. Nothing is drawn otherwise.
inline std::vector<Proposal> propose(const StrategySpec& spec, std::span<const PredictiveDistribution> dists,
                                     RngStream& rng) {
  spec.validate();
  if (dists.empty()) throw Error(ErrorKind::invalid_input, "propose needs at least one distribution");
  std::vector<Proposal> out;
  out.reserve(dists.size());
  for (const auto& dist : dists) {
    if (dist.entries.empty()) throw Error(ErrorKind::invalid_input, "empty predictive distribution");
    if (spec.kind == StrategyKind::entropy && dist.truncated && dist.covered_mass < kEntropyMinCoveredMass) {
      throw Error(ErrorKind::truncation, "entropy strategy needs full support at position " +
                                             std::to_string(dist.position));
    }
    Proposal p;
    p.position = dist.position;
    if (spec.kind == StrategyKind::random) p.reward = rng.uniform01();

    const bool greedy = spec.selection == Selection::greedy || spec.kind == StrategyKind::margin;
    const std::size_t chosen = greedy ? detail::argmax_entry(dist) : detail::sample_entry(dist, spec.temperature, rng);
    p.candidate = dist.entries[chosen].token;
    p.candidate_prob = dist.entries[chosen].prob;

    switch (spec.kind) {
      case StrategyKind::random:
        break;
      case StrategyKind::confidence:
        p.reward = p.candidate_prob;
        break;
      case StrategyKind::entropy: {
        double neg_entropy = 0.0;
        for (const auto& e : dist.entries) {
          if (e.prob > 0.0) neg_entropy += e.prob * std::log(e.prob);
        }
        p.reward = neg_entropy;
        break;
      }
      case StrategyKind::margin: {
        const double top1 = dist.entries[chosen].prob;
        double top2 = 0.0;
        for (std::size_t i = 0; i < dist.entries.size(); ++i) {
          if (i != chosen) top2 = std::max(top2, dist.entries[i].prob);
        }
        p.reward = top1 - top2;
        break;
      }
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace dgmark
