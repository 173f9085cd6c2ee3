// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Workers come from DGMARK_WORKERS (default 1); results do not depend on it.
#include <algorithm>
#include <atomic>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "dgmark/dgmark.hpp"
#include "support/fixtures.hpp"
#include "support/lookahead_oracle.hpp"

namespace {

using namespace dgmark;

constexpr std::uint64_t kRoot = 0x6d61726b;

std::size_t g_workers = 1;
int g_failures = 0;

// Collected from every audited decode; criterion 7 reports the totals.
struct AuditTally {
  std::mutex mutex;
  std::size_t decodes = 0;
  std::size_t calls = 0;
  std::size_t commits = 0;
  std::vector<std::string> violations;
} g_audit;

void report(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  std::printf("criterion %d %-28s %s  %s  (%.1fs)\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

template <typename... Args>
std::string fmt(const char* pattern, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::uint64_t seed_for(const std::string& stage, std::size_t index) {
  return derive_seed(kRoot, stage, std::to_string(index));
}

// Decodes through an auditing wrapper and records the audit outcome.
DecodeResult audited_decode(const Predictor& model, const DecodeConfig& config, const ParityPartition* partition) {
  AuditingPredictor audited(model);
  auto result = decode(audited, config, {}, partition);
  const auto audit = audit_decode(result, {}, audited.calls());
  std::lock_guard lock(g_audit.mutex);
  ++g_audit.decodes;
  g_audit.calls += audit.calls_checked;
  g_audit.commits += audit.commits_checked;
  for (const auto& v : audit.violations) {
    if (g_audit.violations.size() < 5) g_audit.violations.push_back(v);
  }
  return result;
}

DecodeConfig context_config(DecodeMode mode, std::size_t length, std::uint64_t seed) {
  DecodeConfig c;
  c.mode = mode;
  c.length = length;
  c.seed = seed;
  c.strategy = {StrategyKind::confidence, Selection::multinomial, 1.0};
  return c;
}

double mean_of(const std::vector<double>& xs) { return testing::mean(xs); }

double se_of_mean(const std::vector<double>& xs) {
  return testing::sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

// ---------------------------------------------------------------------------

void null_calibration() {
  Timer timer;
  constexpr std::size_t kSequences = 100000, kLength = 256, kVocab = 1000;
  const auto partition = build_partition(make_key("acceptance-null", kRoot), kVocab);
  const auto flags = parallel_map(kSequences, g_workers, [&](std::size_t i) {
    RngStream rng(seed_for("null", i));
    std::vector<Token> tokens(kLength);
    for (auto& t : tokens) t = static_cast<Token>(rng.uniform_below(kVocab));
    return global_z(tokens, partition).z >= 4.0 ? 1 : 0;
  });
  std::size_t flagged = 0;
  for (int f : flags) flagged += f;
  const double fraction = static_cast<double>(flagged) / kSequences;
  const double p0 = MatchCountNull(kLength, ParityNull::of(partition)).upper_tail(160);
  // Exact two-sided binomial test of flagged ~ Bin(kSequences, p0).
  const boost::math::binomial_distribution<double> bin(static_cast<double>(kSequences), p0);
  const double lower = boost::math::cdf(bin, static_cast<double>(flagged));
  const double upper = flagged == 0 ? 1.0 : boost::math::cdf(boost::math::complement(bin, static_cast<double>(flagged - 1)));
  const double p_value = std::min(1.0, 2.0 * std::min(lower, upper));
  const bool pass = fraction <= 1.2e-4 && p_value >= 0.001;
  report(1, "null-calibration", pass,
         fmt("flagged %zu/%zu = %.2e (<= 1.2e-04), exact tail %.4e, binomial p=%.3f (>= 0.001)", flagged,
             kSequences, fraction, p0, p_value),
         timer.seconds());
}

void analytic_lift() {
  Timer timer;
  constexpr std::size_t kSeeds = 500, kLength = 256, kVocab = 64;
  const auto model = FactorizedToyModel::uniform(kVocab, kLength);
  const auto partition = build_partition(make_key("acceptance-lift", kRoot), kVocab);
  const auto ratios = parallel_map(kSeeds, g_workers, [&](std::size_t i) {
    return audited_decode(model, context_config(DecodeMode::dgmark, kLength, seed_for("lift", i)), &partition)
        .match_ratio();
  });
  const double expected = (kLength - 1.0 + std::pow(2.0, -static_cast<double>(kLength))) / kLength;
  const double m = mean_of(ratios);
  report(2, "analytic-lift", std::abs(m - expected) <= 0.005,
         fmt("mean ratio %.5f, closed form %.5f, |diff| %.5f (<= 0.005)", m, expected, std::abs(m - expected)),
         timer.seconds());
}

struct ContextRuns {
  std::vector<DecodeResult> watermarked;
  std::vector<DecodeResult> plain;
};

ContextRuns context_detectability(const ParityPartition& partition) {
  Timer timer;
  constexpr std::size_t kSeeds = 500, kLength = 256;
  const auto& model = testing::context_fixture();
  ContextRuns runs;
  runs.watermarked = parallel_map(kSeeds, g_workers, [&](std::size_t i) {
    return audited_decode(model, context_config(DecodeMode::dgmark, kLength, seed_for("ctx-wm", i)), &partition);
  });
  runs.plain = parallel_map(kSeeds, g_workers, [&](std::size_t i) {
    return audited_decode(model, context_config(DecodeMode::plain, kLength, seed_for("ctx-plain", i)), &partition);
  });
  CalibrationRequest req;
  req.n = kLength;
  req.target_fpr = 1e-4;
  req.null = ParityNull::of(partition);
  const auto threshold = calibrate(req);
  std::size_t detected = 0;
  for (const auto& r : runs.watermarked) detected += global_z(r.tokens, partition).z >= threshold.value ? 1 : 0;
  std::vector<double> plain_ratios;
  for (const auto& r : runs.plain) plain_ratios.push_back(r.match_ratio());
  const double tpr = static_cast<double>(detected) / kSeeds;
  const double plain_mean = mean_of(plain_ratios);
  report(3, "context-detectability", tpr >= 0.95 && std::abs(plain_mean - 0.5) <= 0.02,
         fmt("TPR %.3f at z >= %.4f (G >= %zu) (>= 0.95), plain mean ratio %.4f (0.5 +- 0.02)", tpr, threshold.value,
             *threshold.match_count, plain_mean),
         timer.seconds());
  return runs;
}

void lookahead_dominance(const ParityPartition& partition) {
  Timer timer;
  const auto& model = testing::context_fixture();
  constexpr std::size_t kLength = 256, kEquivSeeds = 100, kPairedSeeds = 200;

  const auto identical = parallel_map(kEquivSeeds, g_workers, [&](std::size_t i) {
    const auto standard =
        audited_decode(model, context_config(DecodeMode::dgmark, kLength, seed_for("equiv", i)), &partition);
    auto c = context_config(DecodeMode::lookahead, kLength, seed_for("equiv", i));
    c.beam = 1;
    const auto look = audited_decode(model, c, &partition);
    return standard.tokens == look.tokens && standard.trace == look.trace ? 1 : 0;
  });
  std::size_t same = 0;
  for (int x : identical) same += x;

  const auto diffs = parallel_map(kPairedSeeds, g_workers, [&](std::size_t i) {
    auto c = context_config(DecodeMode::lookahead, kLength, seed_for("beam", i));
    c.beam = 1;
    const double one = audited_decode(model, c, &partition).match_ratio();
    c.beam = 3;
    const double three = audited_decode(model, c, &partition).match_ratio();
    return three - one;
  });
  // Paired one-sided t-test, H1: k=3 has the larger mean match ratio.
  const double m = mean_of(diffs);
  const double t = m / se_of_mean(diffs);
  const boost::math::students_t dist(static_cast<double>(kPairedSeeds - 1));
  const double p = boost::math::cdf(boost::math::complement(dist, t));
  report(4, "lookahead-dominance", same == kEquivSeeds && p < 0.01,
         fmt("k=1 identical to dgMARK %zu/%zu; mean(k3-k1) %+.5f, t=%.2f, one-sided p=%.2e (< 0.01)", same,
             kEquivSeeds, m, t, p),
         timer.seconds());
}

// Every context-mix model trained on a single length-4 sequence over
// vocabularies 2..4, every n in 1..5 and beam in 1..5, three greedy strategies.
void lookahead_oracle() {
  Timer timer;
  struct Instance {
    std::size_t vocab;
    std::size_t corpus_index;
  };
  std::vector<Instance> instances;
  for (std::size_t vocab = 2; vocab <= 4; ++vocab) {
    const std::size_t count = vocab * vocab * vocab * vocab;
    for (std::size_t i = 0; i < count; ++i) instances.push_back({vocab, i});
  }
  struct Outcome {
    std::size_t decodes = 0;
    std::size_t g_checked = 0;
    std::vector<std::string> mismatches;
  };
  const auto outcomes = parallel_map(instances.size(), g_workers, [&](std::size_t idx) {
    const auto [vocab, code] = instances[idx];
    std::vector<Token> seq(4);
    std::size_t rest = code;
    for (auto& t : seq) {
      t = static_cast<Token>(rest % vocab);
      rest /= vocab;
    }
    const auto model = train_context_mix({seq}, 0.5, vocab);
    const auto partition = build_partition(make_key("oracle", 1), vocab, PartitionMode::token_id_mod_2);
    Outcome out;
    for (auto kind : {StrategyKind::confidence, StrategyKind::entropy, StrategyKind::margin}) {
      for (std::size_t n = 1; n <= 5; ++n) {
        for (std::size_t k = 1; k <= 5; ++k) {
          DecodeConfig c;
          c.mode = DecodeMode::lookahead;
          c.length = n;
          c.beam = k;
          c.strategy = {kind, Selection::greedy, 1.0};
          const auto result = decode(model, c, {}, &partition);
          const auto check = testing::check_lookahead_decode(model, c, {}, result);
          ++out.decodes;
          out.g_checked += check.g_values_checked;
          for (const auto& m : check.mismatches) {
            if (out.mismatches.size() < 3) out.mismatches.push_back(m);
          }
        }
      }
    }
    return out;
  });
  std::size_t decodes = 0, checked = 0, mismatches = 0;
  std::string first;
  for (const auto& o : outcomes) {
    decodes += o.decodes;
    checked += o.g_checked;
    mismatches += o.mismatches.size();
    if (first.empty() && !o.mismatches.empty()) first = o.mismatches.front();
  }
  report(5, "lookahead-oracle", mismatches == 0 && checked > 0,
         fmt("%zu decodes, %zu g values recomputed, %zu mismatches%s%s", decodes, checked, mismatches,
             first.empty() ? "" : "; first: ", first.c_str()),
         timer.seconds());
}

void edit_robustness(const ContextRuns& runs, const ParityPartition& partition) {
  Timer timer;
  DetectorConfig dc;
  dc.window = 8;
  dc.stride = 1;
  std::vector<double> negatives;
  for (const auto& r : runs.plain) negatives.push_back(window_scan(r.tokens, partition, dc).z_win);

  bool pass = true;
  std::ostringstream detail;
  for (auto kind : {AttackKind::insert, AttackKind::remove, AttackKind::substitute}) {
    const auto positives = parallel_map(runs.watermarked.size(), g_workers, [&](std::size_t i) {
      AttackSpec spec{kind, 0.2, seed_for(std::string("attack-") + std::string(to_string(kind)), i),
                      partition.vocab_size()};
      return window_scan(apply_attack(runs.watermarked[i].tokens, spec), partition, dc).z_win;
    });
    const double auc = roc_auc({positives, negatives});
    pass = pass && auc >= 0.90;
    detail << to_string(kind) << " AUC " << fmt("%.4f", auc) << ", ";
  }

  // 200 positions under token-id-mod-2: every 20th position mismatching
  // (ratio 0.95), then one token inserted mid-sequence.
  const auto mod2 = build_partition(make_key("unused", 0), 2, PartitionMode::token_id_mod_2);
  constexpr std::size_t kLength = 200, kInsertAt = 100;
  std::vector<Token> tokens(kLength);
  for (std::size_t i = 0; i < kLength; ++i) tokens[i] = static_cast<Token>((i % 20 == 19) ? 1 - (i % 2) : i % 2);
  const double before = static_cast<double>(global_z(tokens, mod2).match_count) / kLength;
  tokens.insert(tokens.begin() + kInsertAt, 0);
  const auto scan = window_scan(tokens, mod2, dc);
  double post_sum = 0.0;
  std::size_t post_windows = 0;
  for (const auto& w : scan.windows) {
    if (w.start > kInsertAt) {
      post_sum += static_cast<double>(w.match_count) / dc.window;
      ++post_windows;
    }
  }
  const double post_mean = post_sum / static_cast<double>(post_windows);
  pass = pass && before == 0.95 && post_mean <= 0.10;
  detail << fmt("(>= 0.90); synthetic ratio %.2f, post-insertion window mean ratio %.4f (<= 0.10)", before, post_mean);
  report(6, "edit-robustness", pass, detail.str(), timer.seconds());
}

void length_scaling(const ParityPartition& partition) {
  Timer timer;
  const auto& model = testing::context_fixture();
  constexpr std::size_t kSeeds = 300;
  const std::vector<std::size_t> lengths = {16, 32, 64, 128, 256};
  std::vector<double> tpr, se;
  std::ostringstream detail;
  for (std::size_t n : lengths) {
    CalibrationRequest req;
    req.n = n;
    req.target_fpr = 1e-4;
    req.null = ParityNull::of(partition);
    const auto threshold = calibrate(req);
    const auto hits = parallel_map(kSeeds, g_workers, [&](std::size_t i) {
      const auto r = audited_decode(model, context_config(DecodeMode::dgmark, n, seed_for("length", i)), &partition);
      return global_z(r.tokens, partition).z >= threshold.value ? 1.0 : 0.0;
    });
    const double p = mean_of(hits);
    tpr.push_back(p);
    se.push_back(std::sqrt(p * (1 - p) / kSeeds));
    detail << fmt("n=%zu TPR %.3f (G >= %zu)  ", n, p, *threshold.match_count);
  }
  bool pass = true;
  for (std::size_t i = 1; i < tpr.size(); ++i) {
    pass = pass && tpr[i] >= tpr[i - 1] - std::sqrt(se[i] * se[i] + se[i - 1] * se[i - 1]);
  }
  report(8, "length-scaling", pass, detail.str() + "(non-decreasing within 1 SE)", timer.seconds());
}

void block_size(const ParityPartition& partition) {
  Timer timer;
  const auto& model = testing::context_fixture();
  constexpr std::size_t kSeeds = 300, kLength = 256;
  const std::vector<std::size_t> blocks = {8, 16, 32};
  std::vector<double> means, ses;
  std::ostringstream detail;
  for (std::size_t b : blocks) {
    const auto ratios = parallel_map(kSeeds, g_workers, [&](std::size_t i) {
      auto c = context_config(DecodeMode::dgmark, kLength, seed_for("block", i));
      c.block_size = b;
      return audited_decode(model, c, &partition).match_ratio();
    });
    means.push_back(mean_of(ratios));
    ses.push_back(se_of_mean(ratios));
    detail << fmt("block %zu ratio %.4f +- %.4f  ", b, means.back(), ses.back());
  }
  bool pass = true;
  for (std::size_t i = 1; i < means.size(); ++i) {
    pass = pass && means[i] >= means[i - 1] - std::sqrt(ses[i] * ses[i] + ses[i - 1] * ses[i - 1]);
  }
  report(9, "block-size", pass, detail.str() + "(non-decreasing within 1 SE)", timer.seconds());
}

// Totals from every audited decode above, plus a tampered log the audit must reject.
void no_reweighting() {
  Timer timer;
  const auto& model = testing::context_fixture();
  const auto partition = build_partition(testing::fixture_key(), model.vocab_size());
  AuditingPredictor audited(model);
  auto result = decode(audited, context_config(DecodeMode::dgmark, 32, 1), {}, &partition);
  result.trace.call_log[7].candidate_prob *= 1.0 + 1e-12;
  const bool tamper_caught = !audit_decode(result, {}, audited.calls()).ok();

  std::lock_guard lock(g_audit.mutex);
  const bool pass = g_audit.violations.empty() && g_audit.decodes > 0 && tamper_caught;
  report(7, "no-reweighting-audit", pass,
         fmt("%zu decodes, %zu predictor calls, %zu commits audited, %zu violations; tampered log rejected: %s",
             g_audit.decodes, g_audit.calls, g_audit.commits, g_audit.violations.size(),
             tamper_caught ? "yes" : "no") +
             (g_audit.violations.empty() ? "" : "; first: " + g_audit.violations.front()),
         timer.seconds());
}

}  // namespace

int main() {
  g_workers = resolve_workers(std::nullopt);
  std::printf("dgmark acceptance, %zu worker(s)\n", g_workers);
  try {
    const auto partition = build_partition(testing::fixture_key(), testing::context_fixture().vocab_size());
    null_calibration();
    analytic_lift();
    const auto runs = context_detectability(partition);
    lookahead_dominance(partition);
    lookahead_oracle();
    edit_robustness(runs, partition);
    length_scaling(partition);
    block_size(partition);
    no_reweighting();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d failing criteria\n", g_failures == 0 ? "ALL PASS" : "FAILURES", g_failures);
  return g_failures == 0 ? 0 : 1;
}
