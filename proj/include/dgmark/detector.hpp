#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "parity.hpp"
#include "rng.hpp"

namespace dgmark {

// Null success probabilities of the two parity classes (even / odd positions).
struct ParityNull {
  double p_even = 0.5;
  double p_odd = 0.5;

  static ParityNull of(const ParityPartition& partition) {
    return {partition.match_probability(0), partition.match_probability(1)};
  }

  bool fair() const noexcept { return p_even == 0.5 && p_odd == 0.5; }
  double at(std::size_t position) const noexcept { return (position & 1U) ? p_odd : p_even; }

  // Mean and variance of the match count over positions [start, start + len).
  std::pair<double, double> moments(std::size_t start, std::size_t len) const noexcept {
    const std::size_t first_even = (start & 1U) == 0 ? 1 : 0;
    const std::size_t evens = (len + first_even) / 2;
    const std::size_t odds = len - evens;
    const double mean = static_cast<double>(evens) * p_even + static_cast<double>(odds) * p_odd;
    const double var = static_cast<double>(evens) * p_even * (1 - p_even) + static_cast<double>(odds) * p_odd * (1 - p_odd);
    return {mean, var};
  }

  // Standardized count; the fair case is exactly (G - len/2) / sqrt(len/4).
  double z(std::size_t count, std::size_t start, std::size_t len) const {
    const double g = static_cast<double>(count);
    const double l = static_cast<double>(len);
    if (fair()) return (g - l / 2.0) / std::sqrt(l / 4.0);
    const auto [mean, var] = moments(start, len);
    return (g - mean) / std::sqrt(var);
  }
};

namespace detail {

inline std::vector<double> binomial_pmf(std::size_t n, double p) {
  std::vector<double> pmf(n + 1, 0.0);
  if (p <= 0.0) {
    pmf[0] = 1.0;
    return pmf;
  }
  if (p >= 1.0) {
    pmf[n] = 1.0;
    return pmf;
  }
  const double ln_p = std::log(p), ln_q = std::log1p(-p);
  const double ln_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  for (std::size_t k = 0; k <= n; ++k) {
    const double kd = static_cast<double>(k);
    const double log_term = ln_n1 - std::lgamma(kd + 1.0) - std::lgamma(static_cast<double>(n - k) + 1.0) +
                            kd * ln_p + static_cast<double>(n - k) * ln_q;
    pmf[k] = std::exp(log_term);
  }
  return pmf;
}

}  // namespace detail

// Exact null distribution of the match count over n positions starting at
// response index 0: the sum of two binomials, one per parity class.
class MatchCountNull {
 public:
  MatchCountNull(std::size_t n, ParityNull null) : n_(n) {
    const std::size_t evens = (n + 1) / 2, odds = n / 2;
    if (null.p_even == null.p_odd) {
      pmf_ = detail::binomial_pmf(n, null.p_even);
    } else {
      const auto a = detail::binomial_pmf(evens, null.p_even);
      const auto b = detail::binomial_pmf(odds, null.p_odd);
      pmf_.assign(n + 1, 0.0);
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) pmf_[i + j] += a[i] * b[j];
      }
    }
    // Upper tails summed from the top so small tails keep full precision.
    tail_.assign(n + 2, 0.0);
    for (std::size_t k = n + 1; k-- > 0;) tail_[k] = tail_[k + 1] + pmf_[k];
    for (auto& t : tail_) t = std::min(t, 1.0);
  }

  std::size_t n() const noexcept { return n_; }
  double pmf(std::size_t g) const { return g <= n_ ? pmf_[g] : 0.0; }
  // P(G >= g).
  double upper_tail(std::size_t g) const { return g <= n_ ? tail_[g] : 0.0; }

 private:
  std::size_t n_;
  std::vector<double> pmf_;
  std::vector<double> tail_;
};

struct GlobalResult {
  std::size_t n = 0;
  std::size_t match_count = 0;  // G
  double z = 0.0;
  double p_value = 1.0;  // P(Bin >= G) under the null
};

struct Window {
  std::size_t start = 0;
  std::size_t match_count = 0;  // G_s
  double z = 0.0;               // z_s

  friend bool operator==(const Window&, const Window&) = default;
};

struct WindowScan {
  std::vector<Window> windows;
  double z_win = 0.0;  // mean of z_s^2
};

struct DetectorConfig {
  std::size_t window = 8;
  std::size_t stride = 1;
  std::optional<double> z_threshold;
  std::optional<double> z_win_threshold;

  void validate() const {
    if (window == 0) throw Error(ErrorKind::config, "window must be positive");
    if (stride == 0) throw Error(ErrorKind::config, "stride must be positive");
  }
};

struct Decisions {
  std::optional<bool> global;  // z >= z_threshold
  std::optional<bool> window;  // z_win >= z_win_threshold
};

struct DetectionReport {
  std::size_t n = 0;
  std::size_t match_count = 0;
  double z = 0.0;
  double p_value = 1.0;
  std::vector<Window> windows;
  double z_win = 0.0;
  Decisions decisions;
};

inline std::vector<std::uint8_t> match_bits(std::span<const Token> tokens, const ParityPartition& partition) {
  std::vector<std::uint8_t> bits(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) bits[i] = partition.in_matching_set(i, tokens[i]) ? 1 : 0;
  return bits;
}

inline GlobalResult global_z_bits(std::span<const std::uint8_t> bits, ParityNull null) {
  if (bits.empty()) throw Error(ErrorKind::invalid_input, "cannot score an empty sequence");
  GlobalResult r;
  r.n = bits.size();
  for (auto b : bits) r.match_count += b;
  r.z = null.z(r.match_count, 0, r.n);
  r.p_value = MatchCountNull(r.n, null).upper_tail(r.match_count);
  return r;
}

// Global one-sided test: G = sum of m_i, z standardized under the null.
inline GlobalResult global_z(std::span<const Token> tokens, const ParityPartition& partition) {
  if (tokens.empty()) throw Error(ErrorKind::invalid_input, "cannot score an empty sequence");
  const auto bits = match_bits(tokens, partition);
  return global_z_bits(bits, ParityNull::of(partition));
}

inline WindowScan window_scan_bits(std::span<const std::uint8_t> bits, std::size_t window, std::size_t stride,
                                   ParityNull null = {}) {
  if (window == 0 || stride == 0) throw Error(ErrorKind::invalid_window, "window and stride must be positive");
  if (window > bits.size()) {
    throw Error(ErrorKind::invalid_window, "window " + std::to_string(window) + " exceeds sequence length " +
                                               std::to_string(bits.size()));
  }
  WindowScan scan;
  scan.windows.reserve((bits.size() - window) / stride + 1);
  // Prefix sums keep each window O(1).
  std::vector<std::size_t> prefix(bits.size() + 1, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) prefix[i + 1] = prefix[i] + bits[i];
  double sum_sq = 0.0;
  for (std::size_t s = 0; s + window <= bits.size(); s += stride) {
    Window w{s, prefix[s + window] - prefix[s], 0.0};
    w.z = null.z(w.match_count, s, window);
    sum_sq += w.z * w.z;
    scan.windows.push_back(w);
  }
  scan.z_win = sum_sq / static_cast<double>(scan.windows.size());
  return scan;
}

// Sliding windows of length w at the given stride; z_win is the mean of the
// squared window z-scores (two-sided in each window).
inline WindowScan window_scan(std::span<const Token> tokens, const ParityPartition& partition,
                              const DetectorConfig& config) {
  config.validate();
  const auto bits = match_bits(tokens, partition);
  return window_scan_bits(bits, config.window, config.stride, ParityNull::of(partition));
}

inline Decisions decide(double z, double z_win, const DetectorConfig& config) {
  Decisions d;
  if (config.z_threshold) d.global = z >= *config.z_threshold;
  if (config.z_win_threshold) d.window = z_win >= *config.z_win_threshold;
  return d;
}

inline void decide(DetectionReport& report, const DetectorConfig& config) {
  report.decisions = decide(report.z, report.z_win, config);
}

// Full report from tokens and the partition alone.
inline DetectionReport detect(std::span<const Token> tokens, const ParityPartition& partition,
                              const DetectorConfig& config) {
  config.validate();
  const auto bits = match_bits(tokens, partition);
  const auto null = ParityNull::of(partition);
  const auto global = global_z_bits(bits, null);
  DetectionReport report;
  report.n = global.n;
  report.match_count = global.match_count;
  report.z = global.z;
  report.p_value = global.p_value;
  if (config.window <= bits.size()) {
    auto scan = window_scan_bits(bits, config.window, config.stride, null);
    report.windows = std::move(scan.windows);
    report.z_win = scan.z_win;
  } else {
    throw Error(ErrorKind::invalid_window, "window " + std::to_string(config.window) + " exceeds sequence length " +
                                               std::to_string(bits.size()));
  }
  decide(report, config);
  return report;
}

// ---------------------------------------------------------------------------
// Calibration

enum class NullModel { exact_binomial, monte_carlo };
enum class Statistic { global_z, window_z };

inline std::string_view to_string(NullModel m) { return m == NullModel::exact_binomial ? "exact-binomial" : "monte-carlo"; }
inline std::string_view to_string(Statistic s) { return s == Statistic::global_z ? "z" : "z_win"; }

inline NullModel parse_null_model(std::string_view text) {
  if (text == "exact-binomial" || text == "exact") return NullModel::exact_binomial;
  if (text == "monte-carlo") return NullModel::monte_carlo;
  throw Error(ErrorKind::config, "unknown null model '" + std::string(text) + "'");
}

inline Statistic parse_statistic(std::string_view text) {
  if (text == "z") return Statistic::global_z;
  if (text == "z_win") return Statistic::window_z;
  throw Error(ErrorKind::config, "unknown statistic '" + std::string(text) + "'");
}

struct CalibrationRequest {
  NullModel null_model = NullModel::exact_binomial;
  Statistic statistic = Statistic::global_z;
  std::size_t n = 256;
  std::size_t window = 8;
  std::size_t stride = 1;
  double target_fpr = 1e-4;
  std::size_t trials = 100000;  // monte-carlo only
  std::uint64_t seed = 0;       // monte-carlo only
  ParityNull null;
};

struct Threshold {
  Statistic statistic = Statistic::global_z;
  double value = 0.0;                      // in z (global) or z_win units; decide with >=
  std::optional<std::size_t> match_count;  // global only: minimal G flagged
  double null_exceedance = 0.0;            // exact or empirical null P(stat >= value)
};

namespace detail {

// Null match bits for one sequence of length n.
inline void simulate_null_bits(std::vector<std::uint8_t>& bits, const ParityNull& null, RngStream& rng) {
  if (null.fair()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (i % 64 == 0) word = rng.next_u64();
      bits[i] = static_cast<std::uint8_t>((word >> (i % 64)) & 1U);
    }
    return;
  }
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng.uniform01() < null.at(i) ? 1 : 0;
}

// Smallest sample value v with #(x >= v) <= allowed; `values` sorted descending.
inline std::pair<double, std::size_t> empirical_threshold(const std::vector<double>& values, std::size_t allowed) {
  double threshold = std::nextafter(values.front(), std::numeric_limits<double>::infinity());
  std::size_t exceed = 0;
  std::size_t i = 0;
  while (i < values.size()) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    if (j > allowed) break;
    threshold = values[i];
    exceed = j;
    i = j;
  }
  return {threshold, exceed};
}

}  // namespace detail

// Smallest threshold whose null exceedance probability is <= target_fpr.
inline Threshold calibrate(const CalibrationRequest& req) {
  if (!(req.target_fpr > 0.0 && req.target_fpr <= 0.5)) {
    throw Error(ErrorKind::config, "target_fpr must lie in (0, 0.5]");
  }
  if (req.n == 0) throw Error(ErrorKind::config, "n must be positive");
  Threshold out;
  out.statistic = req.statistic;

  if (req.statistic == Statistic::global_z && req.null_model == NullModel::exact_binomial) {
    const MatchCountNull dist(req.n, req.null);
    if (dist.upper_tail(req.n) > req.target_fpr) {
      throw CalibrationInfeasible("target FPR unreachable at n=" + std::to_string(req.n), dist.upper_tail(req.n));
    }
    std::size_t g = req.n;
    while (g > 0 && dist.upper_tail(g - 1) <= req.target_fpr) --g;
    out.match_count = g;
    out.value = req.null.z(g, 0, req.n);
    out.null_exceedance = dist.upper_tail(g);
    return out;
  }
  if (req.null_model == NullModel::exact_binomial) {
    throw Error(ErrorKind::config, "z_win has no exact null; use monte-carlo calibration");
  }

  if (req.trials == 0) throw Error(ErrorKind::config, "monte-carlo calibration needs trials > 0");
  const double resolution = 1.0 / static_cast<double>(req.trials);
  if (req.target_fpr < resolution) {
    throw CalibrationInfeasible("target FPR below monte-carlo resolution of " + std::to_string(req.trials) + " trials",
                                resolution);
  }
  if (req.statistic == Statistic::window_z && (req.window == 0 || req.window > req.n || req.stride == 0)) {
    throw Error(ErrorKind::invalid_window, "window must satisfy 0 < w <= n with positive stride");
  }
  RngStream rng(derive_seed(req.seed, "calibrate", to_string(req.statistic)));
  std::vector<std::uint8_t> bits(req.n);
  std::vector<double> values(req.trials);
  for (std::size_t t = 0; t < req.trials; ++t) {
    detail::simulate_null_bits(bits, req.null, rng);
    if (req.statistic == Statistic::global_z) {
      std::size_t g = 0;
      for (auto b : bits) g += b;
      values[t] = static_cast<double>(g);
    } else {
      values[t] = window_scan_bits(bits, req.window, req.stride, req.null).z_win;
    }
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(req.target_fpr * static_cast<double>(req.trials)));
  const auto [threshold, exceed] = detail::empirical_threshold(values, allowed);
  out.null_exceedance = static_cast<double>(exceed) * resolution;
  if (req.statistic == Statistic::global_z) {
    const auto g = static_cast<std::size_t>(std::ceil(threshold));
    out.match_count = g;
    out.value = req.null.z(g, 0, req.n);
  } else {
    out.value = threshold;
  }
  return out;
}

}  // namespace dgmark
