#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace dgmark {

// Statistics of watermarked (positives) and plain (negatives) sequences.
struct ScoreSet {
  std::vector<double> positives;
  std::vector<double> negatives;
};

struct Confusion {
  double threshold = 0.0;
  double fpr = 0.0;
  double tnr = 1.0;
  double tpr = 0.0;
  double fnr = 1.0;
};

namespace detail {

inline double fraction_at_least(std::span<const double> values, double threshold) {
  std::size_t hits = 0;
  for (double v : values) hits += v >= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(values.size());
}

inline void require_both(const ScoreSet& scores) {
  if (scores.positives.empty() || scores.negatives.empty()) {
    throw Error(ErrorKind::invalid_input, "score set needs both positives and negatives");
  }
}

}  // namespace detail

// Rates at one cut; a sequence is flagged when its score is >= threshold.
inline Confusion confusion(const ScoreSet& scores, double threshold) {
  detail::require_both(scores);
  if (!std::isfinite(threshold)) throw Error(ErrorKind::invalid_input, "threshold must be finite");
  Confusion c;
  c.threshold = threshold;
  c.tpr = detail::fraction_at_least(scores.positives, threshold);
  c.fpr = detail::fraction_at_least(scores.negatives, threshold);
  c.fnr = 1.0 - c.tpr;
  c.tnr = 1.0 - c.fpr;
  return c;
}

struct TprAtFpr {
  double level = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
  double achieved_fpr = 0.0;
  bool under_resolved = false;  // fewer than 10/level negatives
};

// Empirical operating point: the threshold is the smallest negative score
// (or the value just above the largest negative) whose empirical FPR is
// <= level.
inline TprAtFpr tpr_at_fpr(const ScoreSet& scores, double level) {
  detail::require_both(scores);
  if (!(level > 0.0 && level <= 1.0)) throw Error(ErrorKind::invalid_input, "FPR level must lie in (0, 1]");
  std::vector<double> neg = scores.negatives;
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const double n_neg = static_cast<double>(neg.size());
  const auto allowed = static_cast<std::size_t>(std::floor(level * n_neg + 1e-9));

  double threshold = std::nextafter(neg.front(), std::numeric_limits<double>::infinity());
  std::size_t exceed = 0;
  for (std::size_t i = 0; i < neg.size();) {
    std::size_t j = i;
    while (j < neg.size() && neg[j] == neg[i]) ++j;
    if (j > allowed) break;
    threshold = neg[i];
    exceed = j;
    i = j;
  }
  TprAtFpr out;
  out.level = level;
  out.threshold = threshold;
  out.achieved_fpr = static_cast<double>(exceed) / n_neg;
  out.tpr = detail::fraction_at_least(scores.positives, threshold);
  out.under_resolved = n_neg < 10.0 / level;
  return out;
}

inline std::vector<TprAtFpr> tpr_at_fpr(const ScoreSet& scores, std::span<const double> levels) {
  std::vector<TprAtFpr> out;
  out.reserve(levels.size());
  for (double level : levels) out.push_back(tpr_at_fpr(scores, level));
  return out;
}

// Probability that a random positive outranks a random negative; ties count 1/2.
inline double roc_auc(const ScoreSet& scores) {
  detail::require_both(scores);
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(scores.positives.size() + scores.negatives.size());
  for (double s : scores.positives) all.push_back({s, true});
  for (double s : scores.negatives) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Mann-Whitney with midranks.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) pos_in_group += all[j++].positive ? 1 : 0;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    rank_sum += midrank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(scores.positives.size());
  const double nn = static_cast<double>(scores.negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

// One point per distinct score, thresholds descending, starting at (0, 0).
inline std::vector<RocPoint> roc_curve(const ScoreSet& scores) {
  detail::require_both(scores);
  std::vector<double> cuts = scores.positives;
  cuts.insert(cuts.end(), scores.negatives.begin(), scores.negatives.end());
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (double t : cuts) {
    out.push_back({t, detail::fraction_at_least(scores.negatives, t), detail::fraction_at_least(scores.positives, t)});
  }
  return out;
}

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges over [0, 1]
  std::vector<std::size_t> counts;

  std::size_t mode_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
};

// Bins window match ratios G_s / w over [0, 1]; a ratio of exactly 1 falls in
// the top bin.
inline Histogram match_ratio_histogram(std::span<const double> ratios, std::size_t bins) {
  if (bins == 0) throw Error(ErrorKind::invalid_input, "histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::invalid_input, "match ratio outside [0, 1]");
    auto b = static_cast<std::size_t>(std::floor(r * static_cast<double>(bins)));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h, const std::string& label = "") {
  out << "label,bin_low,bin_high,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << label << ',' << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
  }
}

inline void write_roc_csv(std::ostream& out, std::span<const RocPoint> points) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

inline constexpr double kDefaultFprLevels[] = {0.10, 0.01, 0.001, 0.0001};

struct EvalReport {
  std::string statistic;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<Confusion> confusion;
  std::vector<TprAtFpr> tpr_at_fpr;
  double auc = 0.0;
  std::optional<Histogram> positive_histogram;
  std::optional<Histogram> negative_histogram;
  std::optional<double> positive_mean_ppl;
  std::optional<double> negative_mean_ppl;
  std::vector<std::string> warnings;
};

inline EvalReport evaluate(const ScoreSet& scores, std::string statistic, std::span<const double> thresholds,
                           std::span<const double> levels) {
  EvalReport report;
  report.statistic = std::move(statistic);
  report.positives = scores.positives.size();
  report.negatives = scores.negatives.size();
  for (double t : thresholds) report.confusion.push_back(confusion(scores, t));
  std::vector<double> sorted_levels(levels.begin(), levels.end());
  std::sort(sorted_levels.begin(), sorted_levels.end(), std::greater<>());
  report.tpr_at_fpr = tpr_at_fpr(scores, sorted_levels);
  for (std::size_t i = 0; i < report.tpr_at_fpr.size(); ++i) {
    const auto& r = report.tpr_at_fpr[i];
    if (r.under_resolved) {
      report.warnings.push_back("TPR@FPR=" + std::to_string(r.level) + " under-resolved: " +
                                std::to_string(report.negatives) + " negatives < 10/level");
    }
    if (i > 0 && r.tpr > report.tpr_at_fpr[i - 1].tpr) {
      report.warnings.push_back("non-monotone TPR@FPR at level " + std::to_string(r.level));
    }
  }
  report.auc = roc_auc(scores);
  return report;
}

inline nlohmann::json to_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["statistic"] = r.statistic;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  j["confusion"] = nlohmann::json::array();
  for (const auto& c : r.confusion) {
    j["confusion"].push_back({{"threshold", c.threshold}, {"fpr", c.fpr}, {"tnr", c.tnr}, {"tpr", c.tpr}, {"fnr", c.fnr}});
  }
  j["tpr_at_fpr"] = nlohmann::json::array();
  for (const auto& t : r.tpr_at_fpr) {
    j["tpr_at_fpr"].push_back({{"level", t.level},
                               {"tpr", t.tpr},
                               {"threshold", std::isfinite(t.threshold) ? nlohmann::json(t.threshold) : nlohmann::json()},
                               {"achieved_fpr", t.achieved_fpr},
                               {"under_resolved", t.under_resolved}});
  }
  j["auc"] = r.auc;
  if (r.positive_histogram) j["positive_histogram"] = to_json(*r.positive_histogram);
  if (r.negative_histogram) j["negative_histogram"] = to_json(*r.negative_histogram);
  if (r.positive_mean_ppl) j["positive_mean_ppl"] = *r.positive_mean_ppl;
  if (r.negative_mean_ppl) j["negative_mean_ppl"] = *r.negative_mean_ppl;
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace dgmark
