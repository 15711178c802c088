#ifndef MEMSEED_EVALKIT_HPP
#define MEMSEED_EVALKIT_HPP

// Evaluation statistics: rank correlation, split-half consistency of recall
// matrices, the sensitivity index d', band-stratified perplexity, the
// forgetting-curve fit, and factor-vs-recall correlation tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/lm.hpp"
#include "memseed/verbalize.hpp"

namespace memseed {

// ---------------------------------------------------------------------------
// Rank correlation.
// ---------------------------------------------------------------------------

namespace detail {

// Average ranks (1-based); ties share the mean of the positions they span.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ValidationError("correlation of a constant sequence is undefined");
  return sxy / std::sqrt(sxx * syy);
}

inline void require_paired(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw ValidationError("correlation inputs must have equal length");
  if (xs.size() < 2)
    throw ValidationError("correlation needs at least two observations");
  for (double v : xs)
    if (!std::isfinite(v)) throw ValidationError("correlation input is not finite");
  for (double v : ys)
    if (!std::isfinite(v)) throw ValidationError("correlation input is not finite");
}

}  // namespace detail

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::require_paired(xs, ys);
  return detail::pearson(detail::average_ranks(xs), detail::average_ranks(ys));
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::require_paired(xs, ys);
  return detail::pearson(xs, ys);
}

// ---------------------------------------------------------------------------
// Recall matrices and split-half consistency.
// ---------------------------------------------------------------------------

struct RecallMatrix {
  // recalls[p][a] = 1 when participant p recalled ad a.
  std::vector<std::vector<int>> recalls;
  std::vector<double> delay_hours;  // per participant; may be empty
  std::vector<std::string> ad_ids;  // per ad; may be empty

  std::size_t participants() const { return recalls.size(); }
  std::size_t ads() const { return recalls.empty() ? 0 : recalls[0].size(); }
};

// Shape and entry validation. A matrix with no participants or no ads is
// rejected; all-zero rows/columns are legal data (an ad nobody recalled is
// an observation, and constant halves are handled by trial skipping).
inline void validate(const RecallMatrix& m) {
  if (m.recalls.empty() || m.recalls[0].empty())
    throw ValidationError("recall matrix must have at least one participant and one ad");
  const std::size_t ads = m.recalls[0].size();
  for (const auto& row : m.recalls) {
    if (row.size() != ads) throw ValidationError("recall matrix rows must have equal length");
    for (int v : row)
      if (v != 0 && v != 1) throw ValidationError("recall entries must be 0 or 1");
  }
  if (!m.delay_hours.empty() && m.delay_hours.size() != m.recalls.size())
    throw ValidationError("delay_hours must match the participant count");
  if (!m.ad_ids.empty() && m.ad_ids.size() != ads)
    throw ValidationError("ad_ids must match the ad count");
}

struct SplitHalfResult {
  double mean_rho = 0.0;
  std::vector<double> trial_rhos;  // one per completed trial
  std::size_t skipped_trials = 0;  // degenerate (constant) halves
};

inline SplitHalfResult split_half_consistency(const RecallMatrix& m, int trials = 25,
                                              std::uint64_t seed = 1) {
  validate(m);
  if (trials < 1) throw ValidationError("at least one split-half trial is required");
  if (m.participants() < 2)
    throw ValidationError("split-half consistency needs at least two participants");
  if (m.ads() < 3) throw ValidationError("split-half consistency needs at least three ads");

  SplitHalfResult out;
  const std::size_t n = m.participants();
  const std::size_t ads = m.ads();
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, "trial." + std::to_string(t)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t half = n / 2;

    std::vector<double> mean_a(ads, 0.0), mean_b(ads, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double>& target = i < half ? mean_a : mean_b;
      const double weight = i < half ? 1.0 / static_cast<double>(half)
                                     : 1.0 / static_cast<double>(n - half);
      for (std::size_t a = 0; a < ads; ++a)
        target[a] += weight * static_cast<double>(m.recalls[order[i]][a]);
    }
    try {
      out.trial_rhos.push_back(spearman(mean_a, mean_b));
    } catch (const ValidationError&) {
      ++out.skipped_trials;  // a constant half-vector has no rank order
    }
  }
  if (out.trial_rhos.empty())
    throw ValidationError("every split-half trial was degenerate");
  double sum = 0.0;
  for (double r : out.trial_rhos) sum += r;
  out.mean_rho = sum / static_cast<double>(out.trial_rhos.size());
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity index.
// ---------------------------------------------------------------------------

namespace detail {

// Acklam's rational approximation of the standard-normal quantile, sharpened
// with one Halley step against the erfc-based CDF.
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("normal quantile requires a probability strictly inside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement: e = Phi(x) - p.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

}  // namespace detail

// z(hit rate) - z(false-alarm rate). Exact 0/1 rates are admissible only with
// a positive trial count, which applies the 1/(2N) log-linear correction.
inline double d_prime(double hit_rate, double false_alarm_rate, int trials = 0) {
  auto correct = [&](double rate) {
    if (!(rate >= 0.0 && rate <= 1.0))
      throw ValidationError("rates must lie in [0,1]");
    if (trials > 0) {
      const double nudge = 1.0 / (2.0 * static_cast<double>(trials));
      if (rate == 0.0) rate = nudge;
      if (rate == 1.0) rate = 1.0 - nudge;
    }
    if (rate <= 0.0 || rate >= 1.0)
      throw ValidationError("extreme rates need a trial count for correction");
    return rate;
  };
  const double h = correct(hit_rate);
  const double f = correct(false_alarm_rate);
  return detail::inverse_normal_cdf(h) - detail::inverse_normal_cdf(f);
}

// ---------------------------------------------------------------------------
// Band-stratified perplexity.
// ---------------------------------------------------------------------------

enum class BandMode { tercile, fixed };

struct StratifiedPerplexity {
  double low = 0.0;
  double medium = 0.0;
  double high = 0.0;
  std::size_t n_low = 0;
  std::size_t n_medium = 0;
  std::size_t n_high = 0;
};

// Perplexity of each ad's canonical script, grouped by memorability band.
// Tercile mode ranks the scores and cuts into equal thirds (extra records go
// to the lower bands); fixed mode applies the 44/65 thresholds.
inline StratifiedPerplexity stratified_perplexity(const ModelHandle& m,
                                                  const std::vector<AdRecord>& ads,
                                                  BandMode mode = BandMode::tercile,
                                                  const CategoryMask& mask = {}) {
  if (ads.empty()) throw ValidationError("stratified perplexity needs a non-empty ad list");
  for (const AdRecord& ad : ads)
    if (!ad.score)
      throw ValidationError("stratified perplexity needs scored ads (missing: " + ad.id + ")");

  std::vector<std::vector<int>> docs[3];
  if (mode == BandMode::tercile) {
    std::vector<std::size_t> order(ads.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return *ads[a].score < *ads[b].score;
    });
    const std::size_t n = ads.size();
    const std::size_t base = n / 3, extra = n % 3;
    const std::size_t n_low = base + (extra > 0 ? 1 : 0);
    const std::size_t n_med = base + (extra > 1 ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t band = i < n_low ? 0 : (i < n_low + n_med ? 1 : 2);
      docs[band].push_back(tokenize(render_ad_script(ads[order[i]], mask), m.vocab()));
    }
  } else {
    for (const AdRecord& ad : ads) {
      const MemBand band = band_of(*ad.score);
      const std::size_t slot = band == MemBand::low ? 0 : (band == MemBand::medium ? 1 : 2);
      docs[slot].push_back(tokenize(render_ad_script(ad, mask), m.vocab()));
    }
  }

  for (int b = 0; b < 3; ++b)
    if (docs[b].empty())
      throw ValidationError("stratified perplexity has an empty band");

  StratifiedPerplexity out;
  out.low = perplexity(m, docs[0]);
  out.medium = perplexity(m, docs[1]);
  out.high = perplexity(m, docs[2]);
  out.n_low = docs[0].size();
  out.n_medium = docs[1].size();
  out.n_high = docs[2].size();
  return out;
}

// ---------------------------------------------------------------------------
// Forgetting curve.
// ---------------------------------------------------------------------------

struct ForgettingFit {
  double r0 = 0.0;  // recall at delay zero
  double k = 0.0;   // decay per day
};

// Least squares for r(t) = r0 * exp(-k t) in log space, t in days.
inline ForgettingFit fit_forgetting(const std::vector<double>& delays_hours,
                                    const std::vector<double>& recalls) {
  if (delays_hours.size() != recalls.size())
    throw ValidationError("delays and recalls must have equal length");
  if (delays_hours.size() < 3)
    throw ValidationError("forgetting fit needs at least three observations");
  std::vector<double> distinct = delays_hours;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3)
    throw ValidationError("forgetting fit needs at least three distinct delays");
  for (double r : recalls)
    if (!(r > 0.0 && r <= 1.0))
      throw ValidationError("recalls must lie in (0,1] for a log-space fit");

  const double n = static_cast<double>(recalls.size());
  double mt = 0.0, my = 0.0;
  std::vector<double> t(recalls.size()), y(recalls.size());
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    t[i] = delays_hours[i] / 24.0;
    y[i] = std::log(recalls[i]);
    mt += t[i];
    my += y[i];
  }
  mt /= n;
  my /= n;
  double stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    stt += (t[i] - mt) * (t[i] - mt);
    sty += (t[i] - mt) * (y[i] - my);
  }
  const double slope = sty / stt;
  ForgettingFit fit;
  fit.k = -slope;
  fit.r0 = std::exp(my - slope * mt);
  return fit;
}

// ---------------------------------------------------------------------------
// Factor correlations.
// ---------------------------------------------------------------------------

struct Factor {
  std::string name;
  std::function<double(const AdRecord&)> value;
};

struct FactorCorrelation {
  std::string name;
  double rho = 0.0;
  bool skipped = false;
  std::string note;
};

enum class CorrelationKind { spearman, pearson };

inline std::vector<Factor> built_in_factors() {
  auto audio_ratio = [](const AdRecord& ad, bool speech, bool music, bool silent) {
    double hits = 0.0;
    for (const SceneFeatures& s : ad.scenes) {
      switch (s.audio_type) {
        case AudioType::speech: hits += speech ? 1.0 : 0.0; break;
        case AudioType::music: hits += music ? 1.0 : 0.0; break;
        case AudioType::music_and_speech: hits += (speech || music) ? 1.0 : 0.0; break;
        case AudioType::silent: hits += silent ? 1.0 : 0.0; break;
      }
    }
    return ad.scenes.empty() ? 0.0 : hits / static_cast<double>(ad.scenes.size());
  };
  std::vector<Factor> factors;
  factors.push_back({"duration", [](const AdRecord& ad) {
                       return static_cast<double>(ad.duration_s);
                     }});
  factors.push_back({"scene_count", [](const AdRecord& ad) {
                       return static_cast<double>(ad.scenes.size());
                     }});
  factors.push_back({"speech_ratio", [audio_ratio](const AdRecord& ad) {
                       return audio_ratio(ad, true, false, false);
                     }});
  factors.push_back({"music_ratio", [audio_ratio](const AdRecord& ad) {
                       return audio_ratio(ad, false, true, false);
                     }});
  factors.push_back({"silence_ratio", [audio_ratio](const AdRecord& ad) {
                       return audio_ratio(ad, false, false, true);
                     }});
  factors.push_back({"negative_emotion", [](const AdRecord& ad) {
                       for (const SceneFeatures& s : ad.scenes)
                         for (const std::string& e : s.emotions)
                           if (is_negative_emotion(e)) return 1.0;
                       return 0.0;
                     }});
  // Records carry no popularity signal; the extractor reports "unavailable"
  // so the skip-with-diagnostic path stays exercised end to end.
  factors.push_back({"popularity", [](const AdRecord&) {
                       return std::numeric_limits<double>::quiet_NaN();
                     }});
  return factors;
}

inline std::vector<FactorCorrelation> factor_correlations(
    const std::vector<AdRecord>& ads, const std::vector<Factor>& factors,
    const std::vector<double>& recall,
    CorrelationKind kind = CorrelationKind::spearman) {
  if (ads.size() != recall.size())
    throw ValidationError("recall values must match the ad list");
  if (ads.size() < 2)
    throw ValidationError("factor correlation needs at least two ads");

  std::vector<FactorCorrelation> table;
  for (const Factor& factor : factors) {
    FactorCorrelation row;
    row.name = factor.name;
    std::vector<double> values;
    values.reserve(ads.size());
    std::string bad_id;
    for (const AdRecord& ad : ads) {
      const double v = factor.value(ad);
      if (!std::isfinite(v) && bad_id.empty()) bad_id = ad.id;
      values.push_back(v);
    }
    if (!bad_id.empty()) {
      row.skipped = true;
      row.note = "non-finite value for record '" + bad_id + "'";
    } else {
      try {
        row.rho = kind == CorrelationKind::spearman ? spearman(values, recall)
                                                    : pearson(values, recall);
      } catch (const ValidationError& e) {
        row.skipped = true;
        row.note = e.what();
      }
    }
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace memseed

#endif  // MEMSEED_EVALKIT_HPP
