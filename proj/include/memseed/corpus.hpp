// Ad corpus data model: scene features, ad records, JSONL round-tripping,
// memorability banding, dataset splits, and the capped epoch sampler.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memseed/colors.hpp"
#include "memseed/common.hpp"

namespace memseed {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Enums and their wire names.
// ---------------------------------------------------------------------------

enum class Orientation { landscape, portrait, square };
enum class Pace { slow, medium, fast };
enum class Level { low, medium, high };
enum class AudioType { silent, music, speech, music_and_speech };
enum class Source { human_study, judge_labeled, generated };
enum class MemBand { low, medium, high };

inline const char* to_string(Orientation v) {
  switch (v) {
    case Orientation::landscape: return "landscape";
    case Orientation::portrait: return "portrait";
    default: return "square";
  }
}
inline const char* to_string(Pace v) {
  switch (v) {
    case Pace::slow: return "slow";
    case Pace::medium: return "medium";
    default: return "fast";
  }
}
inline const char* to_string(Level v) {
  switch (v) {
    case Level::low: return "low";
    case Level::medium: return "medium";
    default: return "high";
  }
}
inline const char* to_string(AudioType v) {
  switch (v) {
    case AudioType::silent: return "silent";
    case AudioType::music: return "music";
    case AudioType::speech: return "speech";
    default: return "music_and_speech";
  }
}
inline const char* to_string(Source v) {
  switch (v) {
    case Source::human_study: return "human_study";
    case Source::judge_labeled: return "judge_labeled";
    default: return "generated";
  }
}
inline const char* to_string(MemBand v) {
  switch (v) {
    case MemBand::low: return "low";
    case MemBand::medium: return "medium";
    default: return "high";
  }
}

template <typename E>
E enum_from_string(std::string_view s);

template <>
inline Orientation enum_from_string<Orientation>(std::string_view s) {
  if (s == "landscape") return Orientation::landscape;
  if (s == "portrait") return Orientation::portrait;
  if (s == "square") return Orientation::square;
  throw ValidationError("unknown orientation: '" + std::string(s) + "'");
}
template <>
inline Pace enum_from_string<Pace>(std::string_view s) {
  if (s == "slow") return Pace::slow;
  if (s == "medium") return Pace::medium;
  if (s == "fast") return Pace::fast;
  throw ValidationError("unknown pace: '" + std::string(s) + "'");
}
template <>
inline Level enum_from_string<Level>(std::string_view s) {
  if (s == "low") return Level::low;
  if (s == "medium") return Level::medium;
  if (s == "high") return Level::high;
  throw ValidationError("unknown level: '" + std::string(s) + "'");
}
template <>
inline AudioType enum_from_string<AudioType>(std::string_view s) {
  if (s == "silent") return AudioType::silent;
  if (s == "music") return AudioType::music;
  if (s == "speech") return AudioType::speech;
  if (s == "music_and_speech") return AudioType::music_and_speech;
  throw ValidationError("unknown audio_type: '" + std::string(s) + "'");
}
template <>
inline Source enum_from_string<Source>(std::string_view s) {
  if (s == "human_study") return Source::human_study;
  if (s == "judge_labeled") return Source::judge_labeled;
  if (s == "generated") return Source::generated;
  throw ValidationError("unknown source: '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Records.
// ---------------------------------------------------------------------------

struct SceneFeatures {
  std::string caption;  // required, non-empty
  std::vector<std::string> ocr;
  std::optional<std::string> asr;
  std::vector<std::string> emotions;
  std::vector<std::string> tags;
  std::vector<std::string> fg_colors;  // registry names
  std::vector<std::string> bg_colors;  // registry names
  std::string tone;                    // empty means unknown/omitted
  std::optional<Level> clutter;
  std::optional<Level> aesthetics;
  std::string photo_style;     // empty means unknown/omitted
  std::string human_presence;  // empty means unknown/omitted
  AudioType audio_type = AudioType::silent;
  bool logo_present = false;

  bool operator==(const SceneFeatures&) const = default;
};

struct AdRecord {
  std::string id;  // unique within a corpus file
  std::string brand;
  std::string title;
  double duration_s = 0.0;  // seconds, > 0
  Orientation orientation = Orientation::landscape;
  Pace pace = Pace::medium;
  std::vector<SceneFeatures> scenes;
  std::optional<std::string> voiceover;
  std::optional<int> score;  // integer memorability in [0, 99]
  Source source = Source::generated;
  std::string dataset_tag;

  bool operator==(const AdRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Banding and score normalization.
// ---------------------------------------------------------------------------

// Memorability bands: scores below 44 are low, 44..65 inclusive are medium,
// above 65 are high.
inline MemBand band_of(int score) {
  if (score < 0 || score > 99) throw ValidationError("score out of range [0,99]: " + std::to_string(score));
  if (score < 44) return MemBand::low;
  if (score <= 65) return MemBand::medium;
  return MemBand::high;
}

// Emotion labels treated as negatively valenced throughout the toolkit
// (mock judging, valence factor analysis). Lowercase, whole-word matched.
inline const std::vector<std::string>& negative_emotion_lexicon() {
  static const std::vector<std::string> lexicon = {
      "anger", "danger", "dread", "fear", "grief",
      "panic", "shock", "tension", "threat", "warning",
  };
  return lexicon;
}

inline bool is_negative_emotion(const std::string& word) {
  const std::string w = lowercase(trim(word));
  const auto& lex = negative_emotion_lexicon();
  return std::find(lex.begin(), lex.end(), w) != lex.end();
}

// Map a raw fraction in [0,1] onto the integer score scale 0..99
// (round half to even, so 0.675 -> 67).
inline int normalize_score(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ValidationError("score fraction out of range [0,1]: " + format_double(fraction));
  double scaled = fraction * 99.0;
  double rounded = std::nearbyint(scaled);  // default FP mode: ties to even
  return static_cast<int>(rounded);
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

inline void validate(const SceneFeatures& s, const std::string& where) {
  if (s.caption.empty()) throw ValidationError(where + ": scene caption must be non-empty");
  for (const auto& c : s.fg_colors)
    if (!is_registry_color(c)) throw ValidationError(where + ": unknown foreground color '" + c + "'");
  for (const auto& c : s.bg_colors)
    if (!is_registry_color(c)) throw ValidationError(where + ": unknown background color '" + c + "'");
}

inline void validate(const AdRecord& ad) {
  const std::string where = "ad '" + ad.id + "'";
  if (ad.id.empty()) throw ValidationError("ad id must be non-empty");
  if (!(ad.duration_s > 0.0)) throw ValidationError(where + ": duration_s must be positive");
  if (ad.score) {
    if (*ad.score < 0 || *ad.score > 99)
      throw ValidationError(where + ": score out of range [0,99]: " + std::to_string(*ad.score));
  } else if (ad.source == Source::human_study || ad.source == Source::judge_labeled) {
    throw ValidationError(where + ": source '" + to_string(ad.source) + "' requires a score");
  }
  for (std::size_t i = 0; i < ad.scenes.size(); ++i)
    validate(ad.scenes[i], where + " scene " + std::to_string(i + 1));
}

// ---------------------------------------------------------------------------
// JSON (canonical field order; optional fields are absent keys; list fields
// are always present; strings are canonicalized UTF-8).
// ---------------------------------------------------------------------------

inline ordered_json to_json(const SceneFeatures& s) {
  ordered_json j;
  j["caption"] = s.caption;
  j["ocr"] = s.ocr;
  if (s.asr) j["asr"] = *s.asr;
  j["emotions"] = s.emotions;
  j["tags"] = s.tags;
  j["fg_colors"] = s.fg_colors;
  j["bg_colors"] = s.bg_colors;
  if (!s.tone.empty()) j["tone"] = s.tone;
  if (s.clutter) j["clutter"] = to_string(*s.clutter);
  if (s.aesthetics) j["aesthetics"] = to_string(*s.aesthetics);
  if (!s.photo_style.empty()) j["photo_style"] = s.photo_style;
  if (!s.human_presence.empty()) j["human_presence"] = s.human_presence;
  j["audio_type"] = to_string(s.audio_type);
  j["logo_present"] = s.logo_present;
  return j;
}

inline ordered_json to_json(const AdRecord& ad) {
  ordered_json j;
  j["id"] = ad.id;
  j["brand"] = ad.brand;
  j["title"] = ad.title;
  j["duration_s"] = ad.duration_s;
  j["orientation"] = to_string(ad.orientation);
  j["pace"] = to_string(ad.pace);
  ordered_json scenes = ordered_json::array();
  for (const auto& s : ad.scenes) scenes.push_back(to_json(s));
  j["scenes"] = std::move(scenes);
  if (ad.voiceover) j["voiceover"] = *ad.voiceover;
  if (ad.score) j["score"] = *ad.score;
  j["source"] = to_string(ad.source);
  j["dataset_tag"] = ad.dataset_tag;
  return j;
}

namespace detail {

inline std::string canon_string_field(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.at(key).is_string()) throw ValidationError(where + ": field '" + key + "' must be a string");
  return canonical_utf8(j.at(key).get<std::string>());
}

inline std::vector<std::string> canon_string_list(const ordered_json& j, const char* key,
                                                  const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_array())
    throw ValidationError(where + ": list field '" + key + "' must be present");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw ValidationError(where + ": field '" + key + "' must contain strings");
    out.push_back(canonical_utf8(v.get<std::string>()));
  }
  return out;
}

}  // namespace detail

inline SceneFeatures scene_from_json(const ordered_json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": scene must be an object");
  SceneFeatures s;
  if (!j.contains("caption")) throw ValidationError(where + ": missing scene caption");
  s.caption = detail::canon_string_field(j, "caption", where);
  s.ocr = detail::canon_string_list(j, "ocr", where);
  if (j.contains("asr")) s.asr = detail::canon_string_field(j, "asr", where);
  s.emotions = detail::canon_string_list(j, "emotions", where);
  s.tags = detail::canon_string_list(j, "tags", where);
  s.fg_colors = detail::canon_string_list(j, "fg_colors", where);
  s.bg_colors = detail::canon_string_list(j, "bg_colors", where);
  if (j.contains("tone")) s.tone = detail::canon_string_field(j, "tone", where);
  if (j.contains("clutter"))
    s.clutter = enum_from_string<Level>(j.at("clutter").get<std::string>());
  if (j.contains("aesthetics"))
    s.aesthetics = enum_from_string<Level>(j.at("aesthetics").get<std::string>());
  if (j.contains("photo_style")) s.photo_style = detail::canon_string_field(j, "photo_style", where);
  if (j.contains("human_presence"))
    s.human_presence = detail::canon_string_field(j, "human_presence", where);
  if (j.contains("audio_type"))
    s.audio_type = enum_from_string<AudioType>(j.at("audio_type").get<std::string>());
  if (j.contains("logo_present")) {
    if (!j.at("logo_present").is_boolean())
      throw ValidationError(where + ": logo_present must be a boolean");
    s.logo_present = j.at("logo_present").get<bool>();
  }
  return s;
}

inline AdRecord ad_from_json(const ordered_json& j, const std::string& where = "ad") {
  if (!j.is_object()) throw ValidationError(where + ": record must be a JSON object");
  AdRecord ad;
  for (const char* key : {"id", "brand", "title", "duration_s", "orientation", "pace", "scenes",
                          "source", "dataset_tag"})
    if (!j.contains(key)) throw ValidationError(where + ": missing field '" + std::string(key) + "'");
  ad.id = detail::canon_string_field(j, "id", where);
  ad.brand = detail::canon_string_field(j, "brand", where);
  ad.title = detail::canon_string_field(j, "title", where);
  if (!j.at("duration_s").is_number()) throw ValidationError(where + ": duration_s must be a number");
  ad.duration_s = j.at("duration_s").get<double>();
  ad.orientation = enum_from_string<Orientation>(j.at("orientation").get<std::string>());
  ad.pace = enum_from_string<Pace>(j.at("pace").get<std::string>());
  if (!j.at("scenes").is_array()) throw ValidationError(where + ": scenes must be a list");
  std::size_t scene_no = 0;
  for (const auto& sj : j.at("scenes"))
    ad.scenes.push_back(scene_from_json(sj, where + " scene " + std::to_string(++scene_no)));
  if (j.contains("voiceover")) ad.voiceover = detail::canon_string_field(j, "voiceover", where);
  if (j.contains("score")) {
    if (!j.at("score").is_number_integer())
      throw ValidationError(where + ": score must be an integer");
    ad.score = j.at("score").get<int>();
  }
  ad.source = enum_from_string<Source>(j.at("source").get<std::string>());
  ad.dataset_tag = detail::canon_string_field(j, "dataset_tag", where);
  validate(ad);
  return ad;
}

// ---------------------------------------------------------------------------
// JSONL corpus files. One compact-dumped record per line; unknown keys are
// tolerated on read (provenance-annotated shards), never emitted on write.
// ---------------------------------------------------------------------------

inline std::vector<AdRecord> parse_jsonl(std::string_view text, const std::string& origin) {
  std::vector<AdRecord> records;
  std::set<std::string> seen_ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i != text.size() && text[i] != '\n') continue;
    std::string_view line = text.substr(start, i - start);
    start = i + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ParseError(origin + " line " + std::to_string(line_no) + ": invalid JSON");
    AdRecord ad;
    try {
      ad = ad_from_json(j, "record");
    } catch (const Error& e) {
      throw ValidationError(origin + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(ad.id).second)
      throw ValidationError(origin + " line " + std::to_string(line_no) + ": duplicate ad id '" +
                            ad.id + "'");
    records.push_back(std::move(ad));
    if (i == text.size()) break;
  }
  return records;
}

inline std::vector<AdRecord> load_jsonl(const std::string& path) {
  return parse_jsonl(read_file(path), path);
}

inline std::string dump_jsonl(const std::vector<AdRecord>& records) {
  std::string out;
  for (const auto& ad : records) {
    validate(ad);
    out += to_json(ad).dump();
    out += '\n';
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<AdRecord>& records) {
  write_file(path, dump_jsonl(records));
}

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------

enum class SplitMode { random, brand, time };

inline const char* to_string(SplitMode m) {
  switch (m) {
    case SplitMode::random: return "random";
    case SplitMode::brand: return "brand";
    default: return "time";
  }
}
template <>
inline SplitMode enum_from_string<SplitMode>(std::string_view s) {
  if (s == "random") return SplitMode::random;
  if (s == "brand") return SplitMode::brand;
  if (s == "time") return SplitMode::time;
  throw ValidationError("unknown split mode: '" + std::string(s) + "'");
}

struct Split {
  std::vector<AdRecord> train, val, test;
  SplitMode mode = SplitMode::random;
  double test_fraction = 0.0, val_fraction = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_split_fractions(double test_fraction, double val_fraction) {
  if (test_fraction < 0.0 || val_fraction < 0.0 || test_fraction + val_fraction >= 1.0)
    throw ValidationError("split fractions must be non-negative and sum below 1");
}

}  // namespace detail

// Partition a corpus into train/val/test.
//   random: seeded permutation, then counts llround(n * fraction).
//   brand:  whole brands are assigned to one part each (no brand straddles).
//   time:   positional cutoff in file order (records assumed chronological):
//           earliest records train, then val, latest records test.
inline Split split(const std::vector<AdRecord>& corpus, double test_fraction, double val_fraction,
                   std::uint64_t seed, SplitMode mode = SplitMode::random) {
  detail::check_split_fractions(test_fraction, val_fraction);
  const std::size_t n = corpus.size();
  std::set<std::string> ids;
  for (const auto& ad : corpus)
    if (!ids.insert(ad.id).second) throw ValidationError("duplicate ad id '" + ad.id + "' in corpus");

  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (test_fraction > 0.0 && n_test == 0)
    throw SizingError("corpus too small for a nonempty test split");
  if (val_fraction > 0.0 && n_val == 0)
    throw SizingError("corpus too small for a nonempty val split");
  if (n_test + n_val >= n) throw SizingError("corpus too small: train split would be empty");

  Split out;
  out.mode = mode;
  out.test_fraction = test_fraction;
  out.val_fraction = val_fraction;
  out.seed = seed;

  if (mode == SplitMode::random) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "split.random"));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < n; ++i) {
      const AdRecord& ad = corpus[idx[i]];
      if (i < n_test)
        out.test.push_back(ad);
      else if (i < n_test + n_val)
        out.val.push_back(ad);
      else
        out.train.push_back(ad);
    }
  } else if (mode == SplitMode::brand) {
    std::map<std::string, std::vector<std::size_t>> by_brand;
    for (std::size_t i = 0; i < n; ++i) by_brand[corpus[i].brand].push_back(i);
    std::vector<std::string> brands;
    for (const auto& [brand, _] : by_brand) brands.push_back(brand);
    Rng rng(derive_seed(seed, "split.brand"));
    rng.shuffle(brands);
    std::size_t taken_test = 0, taken_val = 0, brand_i = 0;
    std::vector<std::size_t> test_idx, val_idx, train_idx;
    for (; brand_i < brands.size() && taken_test < n_test; ++brand_i) {
      for (std::size_t i : by_brand[brands[brand_i]]) test_idx.push_back(i);
      taken_test += by_brand[brands[brand_i]].size();
    }
    for (; brand_i < brands.size() && taken_val < n_val; ++brand_i) {
      for (std::size_t i : by_brand[brands[brand_i]]) val_idx.push_back(i);
      taken_val += by_brand[brands[brand_i]].size();
    }
    for (; brand_i < brands.size(); ++brand_i)
      for (std::size_t i : by_brand[brands[brand_i]]) train_idx.push_back(i);
    if (train_idx.empty()) throw SizingError("brand split left the train part empty");
    if (n_test > 0 && test_idx.empty()) throw SizingError("brand split left the test part empty");
    // Keep file order inside each part for stable output.
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    for (std::size_t i : train_idx) out.train.push_back(corpus[i]);
    for (std::size_t i : val_idx) out.val.push_back(corpus[i]);
    for (std::size_t i : test_idx) out.test.push_back(corpus[i]);
  } else {  // time
    const std::size_t n_train = n - n_test - n_val;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train)
        out.train.push_back(corpus[i]);
      else if (i < n_train + n_val)
        out.val.push_back(corpus[i]);
      else
        out.test.push_back(corpus[i]);
    }
  }
  return out;
}

// Split manifest (.split.json): member ids per part plus the knobs that
// produced them, so a split can be re-applied to the same corpus file.
inline ordered_json split_manifest(const Split& s) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["mode"] = to_string(s.mode);
  j["test_fraction"] = s.test_fraction;
  j["val_fraction"] = s.val_fraction;
  j["seed"] = s.seed;
  auto ids = [](const std::vector<AdRecord>& part) {
    ordered_json a = ordered_json::array();
    for (const auto& ad : part) a.push_back(ad.id);
    return a;
  };
  j["train_ids"] = ids(s.train);
  j["val_ids"] = ids(s.val);
  j["test_ids"] = ids(s.test);
  return j;
}

inline void save_split_manifest(const std::string& path, const Split& s) {
  write_file(path, split_manifest(s).dump(2) + "\n");
}

// Re-apply a saved split manifest to a corpus (ids must all resolve).
inline Split apply_split_manifest(const std::vector<AdRecord>& corpus, const ordered_json& manifest) {
  std::map<std::string, const AdRecord*> by_id;
  for (const auto& ad : corpus) by_id[ad.id] = &ad;
  Split out;
  out.mode = enum_from_string<SplitMode>(manifest.at("mode").get<std::string>());
  out.test_fraction = manifest.at("test_fraction").get<double>();
  out.val_fraction = manifest.at("val_fraction").get<double>();
  out.seed = manifest.at("seed").get<std::uint64_t>();
  auto fill = [&](const char* key, std::vector<AdRecord>& part) {
    for (const auto& idj : manifest.at(key)) {
      auto it = by_id.find(idj.get<std::string>());
      if (it == by_id.end())
        throw ValidationError("split manifest references unknown ad id '" +
                              idj.get<std::string>() + "'");
      part.push_back(*it->second);
    }
  };
  fill("train_ids", out.train);
  fill("val_ids", out.val);
  fill("test_ids", out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Epoch sampling with per-dataset caps.
// ---------------------------------------------------------------------------

// Per-dataset mixing caps: fraction of each tagged pool drawn per epoch.
using DatasetMix = std::map<std::string, double>;

// Default caps for the named source datasets the score scale was built from.
inline DatasetMix default_dataset_mix() {
  return {
      {"lamem", 0.50},   {"memcat", 1.00},    {"sun", 1.00},      {"videomem", 0.75},
      {"memento", 0.75}, {"adsdata", 1.00},   {"mediaeval", 1.00},
  };
}

// Draw one epoch's worth of records: for every tag in the mix, exactly
// floor(cap * pool_size) records sampled without replacement from that tag's
// pool, then a seeded global shuffle of the concatenation. Pools without a
// mix entry are not sampled.
inline std::vector<AdRecord> epoch_sample(const std::map<std::string, std::vector<AdRecord>>& pools,
                                          const DatasetMix& mix, std::uint64_t seed) {
  std::vector<AdRecord> out;
  for (const auto& [tag, cap] : mix) {
    if (cap < 0.0 || cap > 1.0)
      throw ConfigError("mixing cap for tag '" + tag + "' out of range [0,1]: " + format_double(cap));
    auto it = pools.find(tag);
    if (it == pools.end()) throw ConfigError("mix references unknown dataset tag '" + tag + "'");
    const auto& pool = it->second;
    const auto take = static_cast<std::size_t>(cap * static_cast<double>(pool.size()));
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "epoch." + tag));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[idx[i]]);
  }
  Rng rng(derive_seed(seed, "epoch.order"));
  rng.shuffle(out);
  return out;
}

}  // namespace memseed
