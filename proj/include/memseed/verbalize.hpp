// Verbalization: turning structured ad records into the fixed sentence
// templates the sequence model consumes, and back.
//
//  * render_scene        — one scene as templated sentences (maskable)
//  * render_bs_prompt    — score-prediction prompt + two-digit target
//  * render_cs_prompt    — script-generation prompt
//  * render_ad_script    — canonical multi-scene script text
//  * parse_ad_script     — tolerant inverse of render_ad_script
//  * extract_features    — perception backend hook (mock provided)
#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/scenes.hpp"

namespace memseed {

// ---------------------------------------------------------------------------
// Category mask. The caption is the backbone of every rendering and may not
// be excluded; everything else can be ablated.
// ---------------------------------------------------------------------------

struct CategoryMask {
  bool colors = true;  // fg/bg colors and dominant tone
  bool photo_style = true;
  bool clutter = true;
  bool emotions = true;
  bool tags = true;
  bool ocr = true;
  bool asr = true;
  bool audio_type = true;
  bool human_presence = true;
  bool logo = true;
  bool aesthetics = true;

  bool operator==(const CategoryMask&) const = default;

  // Names of the excluded categories, in canonical order.
  std::vector<std::string> excluded() const {
    std::vector<std::string> out;
    auto add = [&](bool on, const char* name) {
      if (!on) out.push_back(name);
    };
    add(colors, "colors");
    add(photo_style, "photo_style");
    add(clutter, "clutter");
    add(emotions, "emotions");
    add(tags, "tags");
    add(ocr, "ocr");
    add(asr, "asr");
    add(audio_type, "audio_type");
    add(human_presence, "human_presence");
    add(logo, "logo");
    add(aesthetics, "aesthetics");
    return out;
  }
};

// Build a mask from a list of category names to exclude.
inline CategoryMask mask_excluding(const std::vector<std::string>& categories) {
  CategoryMask m;
  for (const auto& raw : categories) {
    std::string name = trim(raw);
    if (name.empty()) continue;
    if (name == "caption") throw ValidationError("the caption category may not be excluded");
    if (name == "colors")
      m.colors = false;
    else if (name == "photo_style")
      m.photo_style = false;
    else if (name == "clutter")
      m.clutter = false;
    else if (name == "emotions")
      m.emotions = false;
    else if (name == "tags")
      m.tags = false;
    else if (name == "ocr")
      m.ocr = false;
    else if (name == "asr")
      m.asr = false;
    else if (name == "audio_type")
      m.audio_type = false;
    else if (name == "human_presence")
      m.human_presence = false;
    else if (name == "logo")
      m.logo = false;
    else if (name == "aesthetics")
      m.aesthetics = false;
    else
      throw ValidationError("unknown verbalization category: '" + name + "'");
  }
  return m;
}

inline CategoryMask mask_from_ablate_list(const std::string& comma_separated) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : comma_separated) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return mask_excluding(parts);
}

// ---------------------------------------------------------------------------
// Scene sentences.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string quote_join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += "'" + items[i] + "'";
  }
  return out;
}

}  // namespace detail

// Sentences for one scene, in canonical order. Excluded or empty categories
// contribute no sentence, so a caption-only scene renders as one sentence.
inline std::vector<std::string> scene_sentences(const SceneFeatures& scene,
                                                const CategoryMask& mask = {}) {
  if (scene.caption.empty()) throw ValidationError("scene caption must be non-empty");
  std::vector<std::string> out;
  out.push_back("The scene shows " + scene.caption + ".");

  if (mask.colors) {
    if (!scene.fg_colors.empty() && !scene.bg_colors.empty())
      out.push_back("The foreground colors of the scene are " + join(scene.fg_colors, ", ") +
                    " and the background colors are " + join(scene.bg_colors, ", ") + ".");
    else if (!scene.fg_colors.empty())
      out.push_back("The foreground colors of the scene are " + join(scene.fg_colors, ", ") + ".");
    else if (!scene.bg_colors.empty())
      out.push_back("The background colors of the scene are " + join(scene.bg_colors, ", ") + ".");
    if (!scene.tone.empty())
      out.push_back("The dominant tone of the scene is " + scene.tone + ".");
  }
  if (mask.photo_style && !scene.photo_style.empty())
    out.push_back("The photography style of the scene is " + scene.photo_style + ".");
  if (mask.clutter && scene.clutter)
    out.push_back(std::string("The clutter in the scene is ") + to_string(*scene.clutter) + ".");
  if (mask.emotions && !scene.emotions.empty())
    out.push_back("The emotion of the scene is " + join(scene.emotions, ", ") + ".");
  if (mask.tags && !scene.tags.empty())
    out.push_back("This scene is categorized by the tags: " + join(scene.tags, ", ") + ".");
  if (mask.ocr && !scene.ocr.empty())
    out.push_back("The text shown in the scene is " + detail::quote_join(scene.ocr) + ".");
  if (mask.asr && scene.asr && !scene.asr->empty())
    out.push_back("The audio in the scene is '" + *scene.asr + "'.");
  if (mask.audio_type && scene.audio_type != AudioType::silent) {
    const char* audio = scene.audio_type == AudioType::music_and_speech ? "music and speech"
                        : scene.audio_type == AudioType::music          ? "music"
                                                                        : "speech";
    out.push_back(std::string("The scene has ") + audio + ".");
  }
  if (mask.human_presence && !scene.human_presence.empty())
    out.push_back("The scene has " + scene.human_presence + ".");
  if (mask.logo && scene.logo_present) out.push_back("There is a logo in the scene.");
  if (mask.aesthetics && scene.aesthetics)
    out.push_back(std::string("The image has ") + to_string(*scene.aesthetics) +
                  " aesthetic value.");
  return out;
}

// Flat rendering: the scene sentences joined by single spaces.
inline std::string render_scene(const SceneFeatures& scene, const CategoryMask& mask = {}) {
  return join(scene_sentences(scene, mask), " ");
}

// ---------------------------------------------------------------------------
// Score-prediction (behavior simulation) prompt.
// ---------------------------------------------------------------------------

struct BsPrompt {
  std::string prompt;
  std::optional<std::string> target;  // two-digit zero-padded score

  const std::string& require_target() const {
    if (!target) throw ValidationError("score prompt target requested for an unscored ad");
    return *target;
  }
};

inline std::string two_digit_score(int score) {
  if (score < 0 || score > 99) throw ValidationError("score out of range [0,99]");
  char buf[3];
  std::snprintf(buf, sizeof buf, "%02d", score);
  return std::string(buf, 2);
}

// The full viewing-study prompt: preamble, ad header, per-scene sentence
// blocks, and the closing question. The target is the zero-padded two-digit
// score when the ad carries one.
inline BsPrompt render_bs_prompt(const AdRecord& ad, const CategoryMask& mask = {}) {
  if (ad.scenes.empty())
    throw ValidationError("ad '" + ad.id + "': score prompt needs at least one scene");
  std::string p;
  p += "Students are shown ads and their memorability is tested after 1 to 3 days. For the given ad:\n";
  p += "<video> .. </video>\n";
  p += "They watch a " + format_duration(ad.duration_s) + " second advertisement for " + ad.brand +
       ".\n";
  p += "The title of the advertisement is \"" + ad.title + "\".\n";
  p += std::string("The ad is shot in ") + to_string(ad.orientation) + " orientation, at a " +
       to_string(ad.pace) + " pace.\n";
  if (ad.voiceover && !ad.voiceover->empty())
    p += "The audio in the ad says: " + *ad.voiceover + "\n";
  else
    p += "The audio in the ad is silent.\n";
  p += "Following are the descriptions of each scene:\n";
  for (std::size_t i = 0; i < ad.scenes.size(); ++i) {
    p += "    Scene " + std::to_string(i + 1) + ":\n";
    for (const auto& sentence : scene_sentences(ad.scenes[i], mask))
      p += "        " + sentence + "\n";
  }
  p += "What would be the memorability score of this video?";

  BsPrompt out;
  out.prompt = std::move(p);
  if (ad.score) out.target = two_digit_score(*ad.score);
  return out;
}

// ---------------------------------------------------------------------------
// Script-generation (content simulation) prompt.
// ---------------------------------------------------------------------------

inline std::string render_cs_prompt(const std::string& brand, const std::string& title,
                                    double duration_s) {
  if (brand.empty()) throw ValidationError("script prompt: brand must be non-empty");
  if (title.empty()) throw ValidationError("script prompt: title must be non-empty");
  if (!(duration_s > 0.0)) throw ValidationError("script prompt: duration must be positive");
  return "Generate the detailed description of a " + format_duration(duration_s) +
         " second memorable advertisement titled \"" + title + "\" for the brand " + brand;
}

inline std::string render_cs_prompt(const AdRecord& ad) {
  return render_cs_prompt(ad.brand, ad.title, ad.duration_s);
}

// ---------------------------------------------------------------------------
// Canonical ad script: the generation target format.
// ---------------------------------------------------------------------------

// Shot preamble plus one block per scene, blocks separated by blank lines.
// Per-scene field lines follow the canonical order Scene/Emotions/Tags/
// Voiceover/Colors/OCR; empty or masked fields are omitted.
inline std::string render_ad_script(const AdRecord& ad, const CategoryMask& mask = {}) {
  if (ad.scenes.empty())
    throw ValidationError("ad '" + ad.id + "': script rendering needs at least one scene");
  std::string out;
  out += std::string("The ad is shot in ") + to_string(ad.orientation) + " orientation, at a " +
         to_string(ad.pace) + " pace.\n";
  for (std::size_t i = 0; i < ad.scenes.size(); ++i) {
    const SceneFeatures& s = ad.scenes[i];
    if (s.caption.empty()) throw ValidationError("scene caption must be non-empty");
    out += "\n";
    out += "Scene " + std::to_string(i + 1) + ": The scene shows " + s.caption + "\n";
    if (mask.emotions && !s.emotions.empty()) out += "Emotions: " + join(s.emotions, ", ") + "\n";
    if (mask.tags && !s.tags.empty()) out += "Tags: " + join(s.tags, ", ") + "\n";
    if (mask.asr && s.asr && !s.asr->empty()) out += "Voiceover: \"" + *s.asr + "\"\n";
    if (mask.colors && !s.fg_colors.empty()) out += "Colors: " + join(s.fg_colors, ", ") + "\n";
    if (mask.ocr && !s.ocr.empty())
      out += "The text shown in the scene is " + detail::quote_join(s.ocr) + ".\n";
  }
  // No trailing newline: the script is a string value, files add their own.
  out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Script parsing (tolerant inverse).
// ---------------------------------------------------------------------------

struct ParsedScript {
  AdRecord record;                    // structural fields only; id/brand/title
                                      // /duration are the caller's to fill
  std::vector<std::string> unparsed;  // lines (or tokens) that did not parse
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      std::string item = trim(cur);
      if (!item.empty()) out.push_back(item);
      cur.clear();
    } else {
      cur += c;
    }
  }
  std::string item = trim(cur);
  if (!item.empty()) out.push_back(item);
  return out;
}

// "Scene 12:" prefix -> scene number and the rest of the line.
inline bool match_scene_header(const std::string& line, std::string& rest) {
  if (!starts_with(line, "Scene ")) return false;
  std::size_t i = 6;
  std::size_t digits = 0;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9') {
    ++i;
    ++digits;
  }
  if (digits == 0 || i >= line.size() || line[i] != ':') return false;
  rest = trim(line.substr(i + 1));
  return true;
}

// Quoted OCR list: 'A', 'B' (optionally ending with a period).
inline std::vector<std::string> parse_quoted_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '\'') {
      std::size_t close = text.find('\'', i + 1);
      if (close == std::string_view::npos) break;
      out.emplace_back(text.substr(i + 1, close - i - 1));
      i = close + 1;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace detail

// Parse a script back into structural fields. Unrecognized lines are
// preserved verbatim in `unparsed`; a script without a single scene block is
// a parse error. The returned record is deliberately partial (no id, brand,
// title, duration, or score) and is not validated here.
inline ParsedScript parse_ad_script(const std::string& text) {
  ParsedScript out;
  AdRecord& ad = out.record;
  SceneFeatures* scene = nullptr;

  for (const std::string& raw : split_lines(text)) {
    std::string line = trim(raw);
    if (line.empty()) continue;

    std::string rest;
    if (detail::match_scene_header(line, rest)) {
      ad.scenes.emplace_back();
      scene = &ad.scenes.back();
      if (starts_with(rest, "The scene shows ")) rest = rest.substr(16);
      if (!rest.empty() && rest.back() == '.') rest.pop_back();
      scene->caption = trim(rest);
      continue;
    }

    if (scene == nullptr) {
      // Preamble region: the shot line or noise.
      bool matched = false;
      if (starts_with(line, "The ad is shot in ")) {
        for (Orientation o : {Orientation::landscape, Orientation::portrait, Orientation::square})
          for (Pace pc : {Pace::slow, Pace::medium, Pace::fast}) {
            std::string want = std::string("The ad is shot in ") + to_string(o) +
                               " orientation, at a " + to_string(pc) + " pace.";
            if (line == want) {
              ad.orientation = o;
              ad.pace = pc;
              matched = true;
            }
          }
      }
      if (!matched) out.unparsed.push_back(raw);
      continue;
    }

    if (starts_with(line, "Emotions:")) {
      scene->emotions = detail::split_list(line.substr(9));
    } else if (starts_with(line, "Tags:")) {
      scene->tags = detail::split_list(line.substr(5));
    } else if (starts_with(line, "Voiceover:")) {
      std::string v = trim(line.substr(10));
      if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
      scene->asr = v;
    } else if (starts_with(line, "Colors:")) {
      for (const auto& name : detail::split_list(line.substr(7))) {
        if (is_registry_color(name))
          scene->fg_colors.push_back(name);
        else
          out.unparsed.push_back("color: " + name);
      }
    } else if (starts_with(line, "The text shown in the scene is ")) {
      scene->ocr = detail::parse_quoted_list(std::string_view(line).substr(31));
    } else {
      out.unparsed.push_back(raw);
    }
  }

  if (ad.scenes.empty()) throw ParseError("script has no scene blocks");
  for (std::size_t i = 0; i < ad.scenes.size(); ++i)
    if (ad.scenes[i].caption.empty())
      throw ParseError("scene " + std::to_string(i + 1) + " has an empty caption");
  return out;
}

// ---------------------------------------------------------------------------
// Feature extraction from frames (perception backend seam).
// ---------------------------------------------------------------------------

class PerceptionBackend {
 public:
  virtual ~PerceptionBackend() = default;
  virtual SceneFeatures extract(const Frame& frame,
                                const std::optional<std::string>& transcript) = 0;
};

// Deterministic stand-in for the perception stack. Color, tone, clutter and
// aesthetics are derived from the pixels; free-text categories come from a
// lookup keyed by the frame's byte hash, with documented defaults.
class MockPerceptionBackend : public PerceptionBackend {
 public:
  struct SceneOverrides {
    std::optional<std::string> caption;
    std::optional<std::vector<std::string>> emotions;
    std::optional<std::vector<std::string>> tags;
    std::optional<std::vector<std::string>> ocr;
    std::optional<std::string> photo_style;
    std::optional<std::string> human_presence;
    std::optional<bool> logo_present;
    std::optional<std::string> fail_category;  // injected failure for tests
  };

  void add_override(const Frame& frame, SceneOverrides o) {
    overrides_[frame_hash(frame)] = std::move(o);
  }

  static std::uint64_t frame_hash(const Frame& f) { return fnv1a64(f.rgb.data(), f.rgb.size()); }

  SceneFeatures extract(const Frame& frame, const std::optional<std::string>& transcript) override {
    detail::validate_frame(frame, "extract_features");
    const SceneOverrides* ov = nullptr;
    if (auto it = overrides_.find(frame_hash(frame)); it != overrides_.end()) ov = &it->second;
    if (ov && ov->fail_category)
      throw ExtractionError(*ov->fail_category, "injected backend failure");

    SceneFeatures s;
    s.caption = ov && ov->caption ? *ov->caption : "a scene from the advertisement";
    s.emotions = ov && ov->emotions ? *ov->emotions : std::vector<std::string>{"neutral"};
    s.tags = ov && ov->tags ? *ov->tags : std::vector<std::string>{"scene"};
    s.ocr = ov && ov->ocr ? *ov->ocr : std::vector<std::string>{};
    s.photo_style = ov && ov->photo_style ? *ov->photo_style : "commercial photography";
    s.human_presence = ov && ov->human_presence ? *ov->human_presence : "";
    s.logo_present = ov && ov->logo_present ? *ov->logo_present : false;

    quantize_colors(frame, s);
    derive_scalars(frame, s);

    if (transcript && !transcript->empty()) {
      s.asr = *transcript;
      s.audio_type = AudioType::speech;
    } else {
      s.audio_type = AudioType::silent;
    }
    return s;
  }

 private:
  // Dominant registry colors: center region feeds fg, the border ring bg.
  static void quantize_colors(const Frame& f, SceneFeatures& s) {
    const auto& reg = color_registry();
    std::vector<long> center_count(reg.size(), 0), border_count(reg.size(), 0);
    const int bx = std::max(1, f.width / 4), by = std::max(1, f.height / 4);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        std::size_t i = static_cast<std::size_t>(y) * f.width + x;
        const RegistryColor& c =
            nearest_registry_color(f.rgb[3 * i], f.rgb[3 * i + 1], f.rgb[3 * i + 2]);
        std::size_t ci = static_cast<std::size_t>(&c - reg.data());
        bool border = x < bx || x >= f.width - bx || y < by || y >= f.height - by;
        (border ? border_count : center_count)[ci]++;
      }
    auto top2 = [&](const std::vector<long>& counts) {
      std::vector<std::string> out;
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 0) order.push_back(i);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] != counts[b] ? counts[a] > counts[b] : a < b;
      });
      for (std::size_t k = 0; k < order.size() && k < 2; ++k)
        out.push_back(reg[order[k]].name);
      return out;
    };
    s.fg_colors = top2(center_count);
    s.bg_colors = top2(border_count);
  }

  // Tone from mean value, aesthetics from mean saturation, clutter from edge
  // density; thirds of each scale, documented and fixed.
  static void derive_scalars(const Frame& f, SceneFeatures& s) {
    detail::FrameAnalysis a = detail::analyze_frame(f);
    double v_sum = 0.0, s_sum = 0.0;
    long edges = 0;
    const std::size_t n = a.v.size();
    for (std::size_t i = 0; i < n; ++i) {
      v_sum += a.v[i];
      s_sum += a.s[i];
      edges += a.edge[i] ? 1 : 0;
    }
    double v_mean = v_sum / n, s_mean = s_sum / n;
    double edge_density = static_cast<double>(edges) / n;
    s.tone = v_mean < 1.0 / 3.0 ? "dark" : v_mean < 2.0 / 3.0 ? "neutral" : "bright";
    s.aesthetics = s_mean < 1.0 / 3.0 ? Level::low : s_mean < 2.0 / 3.0 ? Level::medium : Level::high;
    s.clutter = edge_density < 1.0 / 3.0 ? Level::low
                : edge_density < 2.0 / 3.0 ? Level::medium
                                           : Level::high;
  }

  std::map<std::uint64_t, SceneOverrides> overrides_;
};

// Run the backend and validate the result so malformed extractions fail here,
// not later in rendering.
inline SceneFeatures extract_features(const Frame& frame,
                                      const std::optional<std::string>& transcript,
                                      PerceptionBackend& backend) {
  SceneFeatures s = backend.extract(frame, transcript);
  validate(s, "extracted scene");
  return s;
}

}  // namespace memseed
