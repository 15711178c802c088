#ifndef MEMSEED_SEED_HPP
#define MEMSEED_SEED_HPP

// Self-rewarding curation loop: judge-label raw records, keep the
// marketing-like high-memorability ones, fine-tune on them, and measure how
// the model's fresh generations move — including the per-band delta table.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/henry.hpp"
#include "memseed/judge.hpp"
#include "memseed/lm.hpp"

namespace memseed {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

// A held-out generation prompt: the loop is evaluated on scripts it writes
// for these, never on records it curated (which would reward memorization).
struct SeedTriple {
  std::string brand;
  std::string title;
  int duration_s = 15;
};

struct SeedConfig {
  int iterations = 1;
  int min_score = 65;            // keep only scores strictly above this
  bool include_seed_high = false;  // fold in high-band human-labeled records
  TaskMix task_mix{TaskMode::cs_only, 0.5};
  TrainConfig train;             // fine-tuning schedule (shape comes from the handle)
  CategoryMask mask;             // verbalization ablation for prompts/targets
  GenerationParams generation;   // sampling knobs for fresh generations
  std::vector<SeedTriple> eval_triples;  // required, non-empty
  std::vector<AdRecord> delta_test;      // optional: scored ads for the delta table
  std::uint64_t seed = 1;
};

inline void validate(const SeedConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("seed loop needs at least one iteration");
  if (cfg.min_score < 0 || cfg.min_score > 99)
    throw ConfigError("min_score must lie in [0,99]");
  if (cfg.eval_triples.empty())
    throw ConfigError("seed loop needs held-out generation triples");
  for (const SeedTriple& t : cfg.eval_triples) {
    if (t.brand.empty() || t.title.empty() || t.duration_s <= 0)
      throw ConfigError("generation triple needs brand, title, and a positive duration");
  }
  validate(cfg.task_mix);
}

// ---------------------------------------------------------------------------
// Self-instruction: judge-label raw records.
// ---------------------------------------------------------------------------

struct LabelingResult {
  // Input order preserved. Successfully labeled records carry the judge score
  // and `judge_labeled` provenance; failed ones are returned untouched.
  std::vector<AdRecord> ads;
  std::vector<std::uint8_t> failed;     // aligned with ads; 1 = transport failure
  std::vector<std::string> failed_ids;  // transport failures, never dropped
};

inline LabelingResult self_instruct(const std::vector<AdRecord>& raw, JudgeClient& judge) {
  LabelingResult out;
  out.ads.reserve(raw.size());
  out.failed.reserve(raw.size());
  for (const AdRecord& record : raw) {
    AdRecord labeled = record;
    bool ok = true;
    try {
      labeled.score = judge.score_memorability(record);
      labeled.source = Source::judge_labeled;
    } catch (const TransportError&) {
      ok = false;
      out.failed_ids.push_back(record.id);
    }
    out.ads.push_back(std::move(labeled));
    out.failed.push_back(ok ? 0 : 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Self-curation: marketing filter, then the memorability threshold.
// ---------------------------------------------------------------------------

// Text shown to the marketing-vs-politics filter. The brand plays the role of
// the posting page; the content is everything a reader of the ad would see.
inline std::string marketing_filter_content(const AdRecord& ad) {
  std::string content = ad.title;
  if (ad.voiceover && !ad.voiceover->empty()) content += " " + *ad.voiceover;
  for (const SceneFeatures& s : ad.scenes) {
    if (!s.caption.empty()) content += " " + s.caption;
    for (const std::string& line : s.ocr) content += " " + line;
  }
  return content;
}

struct CurationResult {
  std::vector<AdRecord> kept;
  std::vector<AdRecord> rejected_marketing;
  std::vector<AdRecord> rejected_score;
};

inline CurationResult curate(const std::vector<AdRecord>& labeled, JudgeClient& filter,
                             int min_score) {
  CurationResult out;
  for (const AdRecord& ad : labeled) {
    if (!ad.score)
      throw ValidationError("curation requires scored records (missing: " + ad.id + ")");
    if (!filter.is_marketing(ad.brand, marketing_filter_content(ad))) {
      out.rejected_marketing.push_back(ad);
    } else if (*ad.score > min_score) {
      out.kept.push_back(ad);
    } else {
      out.rejected_score.push_back(ad);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delta-memorability table.
// ---------------------------------------------------------------------------

struct DeltaTable {
  double low = 0.0;      // mean (new - original) over ads whose original band is low
  double medium = 0.0;
  double high = 0.0;
  double average = 0.0;  // mean over all test ads
  std::size_t n_low = 0;
  std::size_t n_medium = 0;
  std::size_t n_high = 0;
  std::size_t parse_failures = 0;
};

// Regenerate each test ad from its (brand, title, duration) triple, score the
// regeneration with the oracle, and aggregate new - original by the original
// band. A generation that fails to parse counts as score 0, i.e. delta is
// -original: unparseable output must never look like an improvement.
inline DeltaTable delta_memorability(const ModelHandle& model, JudgeClient& oracle,
                                     const std::vector<AdRecord>& test,
                                     const GenerationParams& params = {}) {
  if (test.empty()) throw ValidationError("delta table needs a non-empty test set");
  DeltaTable table;
  double sums[3] = {0.0, 0.0, 0.0};
  std::size_t counts[3] = {0, 0, 0};
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const AdRecord& ad = test[i];
    if (!ad.score)
      throw ValidationError("delta table requires original scores (missing: " + ad.id + ")");
    GenerationParams p = params;
    p.seed = derive_seed(params.seed, "delta." + std::to_string(i));
    const GeneratedAd g = generate_ad(model, ad.brand, ad.title,
                                      static_cast<int>(std::lround(ad.duration_s)), p);
    int fresh_score = 0;
    if (g.parse_ok) {
      fresh_score = oracle.score_memorability(g.parsed);
    } else {
      ++table.parse_failures;
    }
    const double delta = static_cast<double>(fresh_score - *ad.score);
    const std::size_t band = static_cast<std::size_t>(band_of(*ad.score));
    sums[band] += delta;
    ++counts[band];
    total += delta;
  }
  table.low = counts[0] ? sums[0] / static_cast<double>(counts[0]) : 0.0;
  table.medium = counts[1] ? sums[1] / static_cast<double>(counts[1]) : 0.0;
  table.high = counts[2] ? sums[2] / static_cast<double>(counts[2]) : 0.0;
  table.average = total / static_cast<double>(test.size());
  table.n_low = counts[0];
  table.n_medium = counts[1];
  table.n_high = counts[2];
  return table;
}

// ---------------------------------------------------------------------------
// The iteration loop.
// ---------------------------------------------------------------------------

struct IterationReport {
  int iteration = 0;  // 1-based
  std::size_t labeled = 0;
  std::size_t label_failures = 0;
  std::size_t curated = 0;
  std::size_t rejected_marketing = 0;
  std::size_t rejected_score = 0;
  std::size_t fine_tune_pairs = 0;
  double mean_judge_score = 0.0;     // fresh generations after this iteration
  std::size_t parse_failures = 0;    // among those fresh generations
  bool has_delta = false;
  DeltaTable delta;
  // Carried for shard export; not part of the serialized report.
  std::vector<AdRecord> curated_records;
};

struct SeedReport {
  double baseline_mean_judge_score = 0.0;  // fresh generations before iteration 1
  std::size_t baseline_parse_failures = 0;
  std::vector<IterationReport> iterations;
};

namespace detail {

struct FreshEval {
  double mean_score = 0.0;
  std::size_t parse_failures = 0;
};

inline FreshEval judge_fresh_generations(const ModelHandle& m, JudgeClient& judge,
                                         const SeedConfig& cfg, int iteration) {
  FreshEval out;
  double total = 0.0;
  for (std::size_t i = 0; i < cfg.eval_triples.size(); ++i) {
    const SeedTriple& t = cfg.eval_triples[i];
    GenerationParams params = cfg.generation;
    params.seed = derive_seed(cfg.seed, "gen." + std::to_string(iteration) + "." +
                                            std::to_string(i));
    const GeneratedAd g = generate_ad(m, t.brand, t.title, t.duration_s, params);
    if (g.parse_ok) {
      total += static_cast<double>(judge.score_memorability(g.parsed));
    } else {
      ++out.parse_failures;  // contributes score 0
    }
  }
  out.mean_score = total / static_cast<double>(cfg.eval_triples.size());
  return out;
}

}  // namespace detail

// One full SEED run: per iteration, label the raw pool, curate, fine-tune the
// current handle on the curated records, then judge fresh generations from
// the held-out triples. The raw pool is re-labeled each iteration (the loop
// never feeds its own curated output back in as raw data).
inline std::pair<ModelHandle, SeedReport> seed_iterate(const ModelHandle& base,
                                                       const std::vector<AdRecord>& raw,
                                                       const std::vector<AdRecord>& seed_high,
                                                       JudgeClient& judge,
                                                       const SeedConfig& cfg) {
  validate(cfg);
  if (raw.empty()) throw ConfigError("seed loop needs a non-empty raw pool");

  ModelHandle handle = base;
  SeedReport report;
  const detail::FreshEval baseline = detail::judge_fresh_generations(handle, judge, cfg, 0);
  report.baseline_mean_judge_score = baseline.mean_score;
  report.baseline_parse_failures = baseline.parse_failures;

  for (int k = 1; k <= cfg.iterations; ++k) {
    IterationReport entry;
    entry.iteration = k;

    LabelingResult labeling = self_instruct(raw, judge);
    entry.label_failures = labeling.failed_ids.size();
    std::vector<AdRecord> labeled;
    labeled.reserve(labeling.ads.size());
    for (std::size_t i = 0; i < labeling.ads.size(); ++i)
      if (!labeling.failed[i]) labeled.push_back(std::move(labeling.ads[i]));
    entry.labeled = labeled.size();

    CurationResult curation = curate(labeled, judge, cfg.min_score);
    entry.curated = curation.kept.size();
    entry.rejected_marketing = curation.rejected_marketing.size();
    entry.rejected_score = curation.rejected_score.size();
    if (curation.kept.empty())
      throw ConfigError("iteration " + std::to_string(k) +
                        ": empty curated set (filters too strict)");

    std::vector<AdRecord> train_records = curation.kept;
    if (cfg.include_seed_high) {
      for (const AdRecord& ad : seed_high)
        if (ad.score && band_of(*ad.score) == MemBand::high) train_records.push_back(ad);
    }

    const TrainingSet pairs = build_training_pairs(
        train_records, cfg.task_mix, cfg.mask,
        derive_seed(cfg.seed, "pairs." + std::to_string(k)));
    entry.fine_tune_pairs = pairs.pairs.size();
    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, "train." + std::to_string(k));
    handle = train(tokenize_pairs(pairs.pairs, handle.vocab()), handle.vocab(), tcfg,
                   &handle);

    const detail::FreshEval fresh = detail::judge_fresh_generations(handle, judge, cfg, k);
    entry.mean_judge_score = fresh.mean_score;
    entry.parse_failures = fresh.parse_failures;

    if (!cfg.delta_test.empty()) {
      GenerationParams delta_params = cfg.generation;
      delta_params.seed = derive_seed(cfg.seed, "delta." + std::to_string(k));
      entry.delta = delta_memorability(handle, judge, cfg.delta_test, delta_params);
      entry.has_delta = true;
    }

    entry.curated_records = std::move(curation.kept);
    report.iterations.push_back(std::move(entry));
  }
  return {std::move(handle), std::move(report)};
}

// ---------------------------------------------------------------------------
// Report serialization (stable key order; no timestamps, so fixed seeds give
// byte-identical reports).
// ---------------------------------------------------------------------------

inline ordered_json to_json(const DeltaTable& t) {
  ordered_json j;
  j["low"] = t.low;
  j["medium"] = t.medium;
  j["high"] = t.high;
  j["average"] = t.average;
  j["n_low"] = t.n_low;
  j["n_medium"] = t.n_medium;
  j["n_high"] = t.n_high;
  j["parse_failures"] = t.parse_failures;
  return j;
}

inline ordered_json to_json(const SeedReport& r) {
  ordered_json j;
  j["schema"] = "seed-report/v1";
  j["baseline_mean_judge_score"] = r.baseline_mean_judge_score;
  j["baseline_parse_failures"] = r.baseline_parse_failures;
  ordered_json entries = ordered_json::array();
  for (const IterationReport& it : r.iterations) {
    ordered_json e;
    e["iteration"] = it.iteration;
    e["labeled"] = it.labeled;
    e["label_failures"] = it.label_failures;
    e["curated"] = it.curated;
    e["rejected_marketing"] = it.rejected_marketing;
    e["rejected_score"] = it.rejected_score;
    e["fine_tune_pairs"] = it.fine_tune_pairs;
    e["mean_judge_score"] = it.mean_judge_score;
    e["parse_failures"] = it.parse_failures;
    e["delta"] = it.has_delta ? to_json(it.delta) : ordered_json(nullptr);
    entries.push_back(std::move(e));
  }
  j["iterations"] = std::move(entries);
  return j;
}

}  // namespace memseed

#endif  // MEMSEED_SEED_HPP
