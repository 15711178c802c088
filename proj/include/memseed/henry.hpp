#ifndef MEMSEED_HENRY_HPP
#define MEMSEED_HENRY_HPP

// Task orchestration on top of the language model: building training pairs
// for score prediction (BS) and script generation (CS) with deterministic
// task interleaving, predicting memorability scores through constrained
// decoding, and generating ad scripts that are re-parsed into records.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/lm.hpp"
#include "memseed/verbalize.hpp"

namespace memseed {

// ---------------------------------------------------------------------------
// Task mixing.
// ---------------------------------------------------------------------------

enum class TaskMode { bs_only, cs_only, mixed };

inline std::string to_string(TaskMode m) {
  switch (m) {
    case TaskMode::bs_only: return "bs";
    case TaskMode::cs_only: return "cs";
    case TaskMode::mixed: return "mixed";
  }
  throw ValidationError("unknown task mode");
}

inline TaskMode task_mode_from_string(const std::string& s) {
  if (s == "bs" || s == "bs_only") return TaskMode::bs_only;
  if (s == "cs" || s == "cs_only") return TaskMode::cs_only;
  if (s == "mixed") return TaskMode::mixed;
  throw ConfigError("unknown task mode: " + s);
}

struct TaskMix {
  TaskMode mode = TaskMode::bs_only;
  // Fraction of mixed-mode pairs assigned to the BS task; ignored otherwise.
  double mixing_ratio = 0.5;
};

inline void validate(const TaskMix& mix) {
  if (mix.mode == TaskMode::mixed &&
      !(mix.mixing_ratio > 0.0 && mix.mixing_ratio < 1.0)) {
    throw ConfigError("mixing_ratio must lie strictly between 0 and 1");
  }
}

enum class TaskKind { bs, cs };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::bs ? "bs" : "cs";
}

struct TrainingPair {
  std::string prompt;
  std::string target;
  TaskKind task = TaskKind::bs;
  std::string ad_id;
};

struct TrainingSet {
  std::vector<TrainingPair> pairs;
  std::size_t skipped_bs = 0;  // ads ineligible for a requested BS pair
  std::size_t skipped_cs = 0;  // ads ineligible for a requested CS pair

  std::size_t total_skipped() const { return skipped_bs + skipped_cs; }
};

namespace detail {

inline bool bs_eligible(const AdRecord& ad) {
  return ad.score.has_value() && !ad.scenes.empty();
}

inline bool cs_eligible(const AdRecord& ad) {
  return !ad.scenes.empty() && !ad.brand.empty() && !ad.title.empty() &&
         ad.duration_s > 0;
}

inline TrainingPair make_bs_pair(const AdRecord& ad, const CategoryMask& mask) {
  TrainingPair p;
  p.prompt = render_bs_prompt(ad, mask).prompt;
  p.target = two_digit_score(*ad.score);
  p.task = TaskKind::bs;
  p.ad_id = ad.id;
  return p;
}

inline TrainingPair make_cs_pair(const AdRecord& ad, const CategoryMask& mask) {
  TrainingPair p;
  p.prompt = render_cs_prompt(ad);
  p.target = render_ad_script(ad, mask);
  p.task = TaskKind::cs;
  p.ad_id = ad.id;
  return p;
}

// Slot i of the merged sequence carries a BS pair iff the running count
// floor((i+1)*ratio) advances; this spreads the two tasks as evenly as an
// integer schedule allows for any ratio in (0,1).
inline bool bs_slot(std::size_t i, double ratio) {
  const double lo = std::floor(static_cast<double>(i) * ratio);
  const double hi = std::floor(static_cast<double>(i + 1) * ratio);
  return hi > lo;
}

}  // namespace detail

inline TrainingSet build_training_pairs(const std::vector<AdRecord>& ads,
                                        const TaskMix& mix,
                                        const CategoryMask& mask = {},
                                        std::uint64_t seed = 1) {
  validate(mix);
  const bool want_bs = mix.mode != TaskMode::cs_only;
  const bool want_cs = mix.mode != TaskMode::bs_only;

  TrainingSet out;
  std::vector<std::size_t> bs_pool, cs_pool;
  for (std::size_t i = 0; i < ads.size(); ++i) {
    if (want_bs) {
      if (detail::bs_eligible(ads[i])) bs_pool.push_back(i);
      else ++out.skipped_bs;
    }
    if (want_cs) {
      if (detail::cs_eligible(ads[i])) cs_pool.push_back(i);
      else ++out.skipped_cs;
    }
  }

  if (mix.mode == TaskMode::bs_only) {
    for (std::size_t i : bs_pool) out.pairs.push_back(detail::make_bs_pair(ads[i], mask));
  } else if (mix.mode == TaskMode::cs_only) {
    for (std::size_t i : cs_pool) out.pairs.push_back(detail::make_cs_pair(ads[i], mask));
  } else {
    Rng bs_rng(derive_seed(seed, "bs-pool"));
    Rng cs_rng(derive_seed(seed, "cs-pool"));
    bs_rng.shuffle(bs_pool);
    cs_rng.shuffle(cs_pool);
    std::size_t bi = 0, ci = 0;
    const std::size_t total = bs_pool.size() + cs_pool.size();
    for (std::size_t slot = 0; slot < total; ++slot) {
      const bool take_bs =
          (detail::bs_slot(slot, mix.mixing_ratio) && bi < bs_pool.size()) ||
          ci >= cs_pool.size();
      if (take_bs) out.pairs.push_back(detail::make_bs_pair(ads[bs_pool[bi++]], mask));
      else out.pairs.push_back(detail::make_cs_pair(ads[cs_pool[ci++]], mask));
    }
  }

  if (out.pairs.empty()) {
    throw ConfigError("no eligible records for task mode " + to_string(mix.mode));
  }
  return out;
}

// Every prompt and target, for vocabulary construction.
inline std::vector<std::string> training_texts(const TrainingSet& set) {
  std::vector<std::string> texts;
  texts.reserve(set.pairs.size() * 2);
  for (const TrainingPair& p : set.pairs) {
    texts.push_back(p.prompt);
    texts.push_back(p.target);
  }
  return texts;
}

inline std::vector<TokenPair> tokenize_pairs(const std::vector<TrainingPair>& pairs,
                                             const Vocab& vocab) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (const TrainingPair& p : pairs) {
    out.push_back({tokenize(p.prompt, vocab), tokenize(p.target, vocab)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction.
// ---------------------------------------------------------------------------

inline int predict_memorability(const ModelHandle& m, const AdRecord& ad,
                                const CategoryMask& mask = {},
                                ScoreMode mode = ScoreMode::greedy) {
  const std::string prompt = render_bs_prompt(ad, mask).prompt;
  std::vector<int> ids;
  ids.push_back(Vocab::kBot);
  for (int id : tokenize(prompt, m.vocab())) ids.push_back(id);
  return constrained_score(m, ids, mode);
}

// ---------------------------------------------------------------------------
// Generation.
// ---------------------------------------------------------------------------

struct GenerationParams {
  double temperature = 0.8;
  int max_tokens = 0;  // 0: whatever the context window still allows
  std::uint64_t seed = 1;
};

struct GeneratedAd {
  std::string script;
  AdRecord parsed;
  bool parse_ok = false;
  std::vector<std::string> unparsed;
};

inline GeneratedAd generate_ad(const ModelHandle& m, const std::string& brand,
                               const std::string& title, int duration_s,
                               const GenerationParams& params = {}) {
  const std::string prompt = render_cs_prompt(brand, title, duration_s);
  std::vector<int> ids;
  ids.push_back(Vocab::kBot);
  for (int id : tokenize(prompt, m.vocab())) ids.push_back(id);
  const int room = m.dims().context_limit - static_cast<int>(ids.size());
  if (room <= 0) throw SizingError("generation prompt fills the context window");
  const int budget =
      params.max_tokens > 0 ? std::min(params.max_tokens, room) : room;

  GeneratedAd out;
  out.script = detokenize(generate(m, ids, budget, params.temperature, params.seed),
                          m.vocab());
  try {
    ParsedScript parsed = parse_ad_script(out.script);
    out.parsed = std::move(parsed.record);
    out.unparsed = std::move(parsed.unparsed);
    out.parse_ok = true;
  } catch (const ParseError&) {
    out.parsed = AdRecord{};
    out.parse_ok = false;
  }
  out.parsed.brand = brand;
  out.parsed.title = title;
  out.parsed.duration_s = duration_s;
  out.parsed.source = Source::generated;
  return out;
}

// ---------------------------------------------------------------------------
// Record shapes for prediction / generation output streams.
// ---------------------------------------------------------------------------

inline ordered_json prediction_json(const AdRecord& ad, int score,
                                    const CategoryMask& mask = {}) {
  ordered_json j;
  j["id"] = ad.id;
  j["predicted_score"] = score;
  j["band"] = to_string(band_of(score));
  j["mask"] = mask.excluded();
  return j;
}

inline ordered_json generation_json(const GeneratedAd& g, const std::string& brand,
                                    const std::string& title, int duration_s) {
  ordered_json j;
  j["brand"] = brand;
  j["title"] = title;
  j["duration_s"] = duration_s;
  j["script"] = g.script;
  j["parse_ok"] = g.parse_ok;
  return j;
}

}  // namespace memseed

#endif  // MEMSEED_HENRY_HPP
