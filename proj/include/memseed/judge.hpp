#ifndef MEMSEED_JUDGE_HPP
#define MEMSEED_JUDGE_HPP

// Judge clients for ad quality: memorability scoring, consistency rating,
// pairwise preference, and the marketing/politics filter. Three transports:
// a deterministic mock (fixed heuristics so curation tests have an oracle),
// a local model handle, and an HTTP completion endpoint with bounded retries
// and an in-flight cap.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <semaphore>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/henry.hpp"
#include "memseed/verbalize.hpp"

// httplib drags in <resolv.h>, whose _res macro corrupts any header parsed
// after it that uses that token; Eigen must be fully included first, and the
// macro must not leak further.
#include <httplib.h>
#ifdef _res
#undef _res
#endif

namespace memseed {

// ---------------------------------------------------------------------------
// Request renderers. Byte-exact: tests pin them against golden files.
// ---------------------------------------------------------------------------

inline std::string render_consistency_prompt(const std::string& script_text) {
  if (script_text.empty()) throw ValidationError("consistency rating needs a non-empty script");
  return
      "You are now a seasoned marketer that judges the consistency of an "
      "advertisement well. The consistency of an Ad can be determied by a few "
      "metrics (in no particular order) such as:\n"
      "1. Does the voiceover match with the Scenes in the Ad?\n"
      "2. Do the scene description make a good story?\n"
      "3. Are the emotions depicted in the scenes consistent with the overall ad?\n"
      "4. Does the ad represent the product and the brand well?\n"
      "\n"
      "Rate the consistency of the following ad out of 10. Give me the rating "
      "only and nothing else, or you will be penalized.\n" +
      script_text;
}

inline std::string render_preference_prompt(const std::string& ad_a_text,
                                            const std::string& ad_b_text) {
  if (ad_a_text.empty() || ad_b_text.empty())
    throw ValidationError("preference judging needs two non-empty ad texts");
  return
      "As a seasoned marketer, evaluate the effectiveness of the following two "
      "ads using a comprehensive set of metrics:\n"
      "\n"
      "Creativity and Innovation: Originality and uniqueness in conveying the "
      "message. Use of unexpected ideas or elements that grab viewers' attention.\n"
      "\n"
      "Emotional Connection: Ability to evoke strong, relevant emotions in the "
      "target audience. Establishing a connection between the brand and the "
      "viewers' emotions.\n"
      "\n"
      "Storytelling: Crafting a compelling narrative that engages and retains "
      "the audience. Creating a memorable experience through a coherent and "
      "impactful story.\n"
      "\n"
      "Visual Appeal: Use of strong visual elements, such as striking visuals, "
      "colors, and graphics. Ensuring that the visual elements align with the "
      "overall message and brand image.\n"
      "\n"
      "Brand Alignment: How well the ad aligns with the values, mission, and "
      "personality of the brand. Consistency with the brand's visual identity, "
      "tone, and messaging. The ad's ability to leave a lasting impression on "
      "viewers regarding the brand. Incorporating brand elements that make it "
      "easy for the audience to remember and recognize.\n"
      "\n"
      "Target Demographics: Relevance of the ad content and message to the "
      "target audience. Appropriateness of visuals, language, and themes for "
      "the specific demographic group.\n"
      "\n"
      "Based on these criteria, analyze and determine which of the two ads is "
      "more effective. I will provide you with the Voiceover, followed by their "
      "scene-by-scene descriptions, including the emotions shown in the scene, "
      "the text, objects, colors, and style of the image.\n"
      "\n"
      "Ad (A): " + ad_a_text + "\n"
      "\n"
      "Ad (B): " + ad_b_text + "\n"
      "\n"
      "Give me your answer in a json format, with the following keys:\n"
      "- ad_a_score: Score between 0 and 10 for Ad A\n"
      "- ad_b_score Score between 0 and 10 for Ad B\n"
      "- winner The winner of the two ads\n"
      "- reason line separated Reasons for the winner in not more than 3 lines";
}

inline std::string render_marketing_filter_prompt(const std::string& page_name,
                                                  const std::string& content) {
  if (content.empty()) throw ValidationError("marketing filter needs non-empty content");
  return
      "Based on the topic_tags_vocab = {'politics': 'The art and science of "
      "governing societies and making decisions that affect collective "
      "interests.', 'marketing': 'The process of promoting, selling, and "
      "distributing products or services to consumers, often involving market "
      "research, advertising, and branding strategies.'} provided, please "
      "identify the top most relevant topic tag from the topic_tags_vocab keys "
      "that represent the following advertisement based on content and "
      "page_name. Please use only the most relevant tag and make sure to "
      "choose from provided topic tags only. Do not include any other tags not "
      "mentioned in the prompt.Answer with the most relevant topic tag only. "
      "The advertisement is posted by the page " + page_name +
      " and has the following content : ['" + content +
      "']. Answer in only politics or marketing.";
}

// ---------------------------------------------------------------------------
// Client interface.
// ---------------------------------------------------------------------------

enum class JudgeTransport { local_model, http, mock };

inline std::string to_string(JudgeTransport t) {
  switch (t) {
    case JudgeTransport::local_model: return "local_model";
    case JudgeTransport::http: return "http";
    case JudgeTransport::mock: return "mock";
  }
  throw ValidationError("unknown judge transport");
}

enum class Winner { A, B, tie };

inline std::string to_string(Winner w) {
  switch (w) {
    case Winner::A: return "A";
    case Winner::B: return "B";
    case Winner::tie: return "tie";
  }
  throw ValidationError("unknown winner value");
}

struct JudgeVerdict {
  double ad_a_score = 0.0;
  double ad_b_score = 0.0;
  Winner winner = Winner::tie;
  std::string reason;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual JudgeTransport transport() const = 0;
  virtual int score_memorability(const AdRecord& ad) = 0;
  virtual int rate_consistency(const std::string& script_text) = 0;
  virtual JudgeVerdict prefer(const std::string& ad_a_text, const std::string& ad_b_text) = 0;
  virtual bool is_marketing(const std::string& page_name, const std::string& content) = 0;
};

namespace detail {

inline void require_scenes(const AdRecord& ad) {
  if (ad.scenes.empty())
    throw ValidationError("judging requires an ad with at least one scene");
}

// Strict integer parse of a trimmed response; nullopt on anything else.
inline bool parse_strict_int(const std::string& text, long* out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  std::size_t i = (t[0] == '-' || t[0] == '+') ? 1 : 0;
  if (i == t.size()) return false;
  for (std::size_t k = i; k < t.size(); ++k)
    if (t[k] < '0' || t[k] > '9') return false;
  *out = std::strtol(t.c_str(), nullptr, 10);
  return true;
}

inline std::set<std::string> word_set(const std::string& text) {
  std::set<std::string> out;
  for (const std::string& w : alpha_words(lowercase(text))) out.insert(w);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deterministic mock.
// ---------------------------------------------------------------------------

// Pure-function judge with documented heuristics:
//  - memorability: 20 + 38*negative-emotion scene fraction + 14*logo scene
//    fraction + 8*OCR scene fraction + 3*min(scene count, 5), rounded and
//    clamped to [0,99] (negative emotions score highest, mirroring the
//    observation that negative valence aids recall);
//  - consistency: 10 * fraction of voiceover words covered by scene captions
//    and tags (10 when there is no voiceover, 0 for unparseable scripts);
//  - preference: per-ad strength = min(10, scene count + 2*[has voiceover] +
//    negative-term count), higher strength wins, equal is a tie;
//  - marketing filter: political-term count vs marketing-term count over the
//    page name and content, politics winning ties.
class MockJudge : public JudgeClient {
 public:
  JudgeTransport transport() const override { return JudgeTransport::mock; }

  int score_memorability(const AdRecord& ad) override {
    detail::require_scenes(ad);
    const double n = static_cast<double>(ad.scenes.size());
    double neg = 0.0, logo = 0.0, ocr = 0.0;
    for (const SceneFeatures& s : ad.scenes) {
      bool has_neg = false;
      for (const std::string& e : s.emotions) has_neg = has_neg || is_negative_emotion(e);
      neg += has_neg ? 1.0 : 0.0;
      logo += s.logo_present ? 1.0 : 0.0;
      ocr += s.ocr.empty() ? 0.0 : 1.0;
    }
    const double raw = 20.0 + 38.0 * (neg / n) + 14.0 * (logo / n) +
                       8.0 * (ocr / n) + 3.0 * std::min(n, 5.0);
    return std::clamp(static_cast<int>(std::lround(raw)), 0, 99);
  }

  int rate_consistency(const std::string& script_text) override {
    if (script_text.empty()) throw ValidationError("consistency rating needs a non-empty script");
    AdRecord parsed;
    try {
      parsed = parse_ad_script(script_text).record;
    } catch (const ParseError&) {
      return 0;
    }
    std::set<std::string> covered;
    std::vector<std::string> voiceover_words;
    for (const SceneFeatures& s : parsed.scenes) {
      for (const std::string& w : alpha_words(lowercase(s.caption))) covered.insert(w);
      for (const std::string& tag : s.tags)
        for (const std::string& w : alpha_words(lowercase(tag))) covered.insert(w);
      if (s.asr)
        for (const std::string& w : alpha_words(lowercase(*s.asr))) voiceover_words.push_back(w);
    }
    if (voiceover_words.empty()) return 10;  // nothing to contradict
    double hit = 0.0;
    for (const std::string& w : voiceover_words) hit += covered.count(w) ? 1.0 : 0.0;
    return static_cast<int>(std::lround(10.0 * hit / static_cast<double>(voiceover_words.size())));
  }

  JudgeVerdict prefer(const std::string& ad_a_text, const std::string& ad_b_text) override {
    if (ad_a_text.empty() || ad_b_text.empty())
      throw ValidationError("preference judging needs two non-empty ad texts");
    JudgeVerdict v;
    v.ad_a_score = strength(ad_a_text);
    v.ad_b_score = strength(ad_b_text);
    if (v.ad_a_score > v.ad_b_score) v.winner = Winner::A;
    else if (v.ad_b_score > v.ad_a_score) v.winner = Winner::B;
    else v.winner = Winner::tie;
    v.reason = "deterministic heuristic: scene count, voiceover presence, and "
               "negative-emotion terms";
    return v;
  }

  bool is_marketing(const std::string& page_name, const std::string& content) override {
    if (content.empty()) throw ValidationError("marketing filter needs non-empty content");
    static const std::set<std::string> political = {
        "ballot", "campaign", "congress", "election", "governor", "policy",
        "politician", "president", "rally", "senator", "vote", "voter",
    };
    static const std::set<std::string> marketing = {
        "brand", "buy", "deal", "discount", "free", "limited",
        "offer", "price", "product", "sale", "shop", "store",
    };
    std::size_t p = 0, m = 0;
    for (const std::string& w : alpha_words(lowercase(page_name + " " + content))) {
      p += political.count(w);
      m += marketing.count(w);
    }
    return m > p;  // politics wins ties
  }

 private:
  static double strength(const std::string& text) {
    double scenes = 0.0;
    const std::vector<std::string> lines = split_lines(text);
    for (const std::string& line : lines)
      scenes += starts_with(trim(line), "Scene ") ? 1.0 : 0.0;
    double neg = 0.0;
    for (const std::string& w : alpha_words(lowercase(text)))
      neg += is_negative_emotion(w) ? 1.0 : 0.0;
    const double voice = text.find("Voiceover:") != std::string::npos ? 2.0 : 0.0;
    return std::min(10.0, scenes + voice + neg);
  }
};

// ---------------------------------------------------------------------------
// Local-model judge.
// ---------------------------------------------------------------------------

// Scores ads with a trained model handle; the other roles have no local
// counterpart and are rejected.
class LocalJudge : public JudgeClient {
 public:
  explicit LocalJudge(ModelHandle handle, CategoryMask mask = {},
                      ScoreMode mode = ScoreMode::greedy)
      : handle_(std::move(handle)), mask_(std::move(mask)), mode_(mode) {}

  JudgeTransport transport() const override { return JudgeTransport::local_model; }

  int score_memorability(const AdRecord& ad) override {
    detail::require_scenes(ad);
    return predict_memorability(handle_, ad, mask_, mode_);
  }

  int rate_consistency(const std::string&) override {
    throw ConfigError("local judge implements memorability scoring only");
  }
  JudgeVerdict prefer(const std::string&, const std::string&) override {
    throw ConfigError("local judge implements memorability scoring only");
  }
  bool is_marketing(const std::string&, const std::string&) override {
    throw ConfigError("local judge implements memorability scoring only");
  }

 private:
  ModelHandle handle_;
  CategoryMask mask_;
  ScoreMode mode_;
};

// ---------------------------------------------------------------------------
// HTTP judge.
// ---------------------------------------------------------------------------

struct HttpJudgeOptions {
  std::string url;      // e.g. http://127.0.0.1:8080/complete
  std::string api_key;  // sent as a bearer token when non-empty
  int retries = 3;
  int backoff_ms = 500;  // doubled after each failed attempt
  int timeout_ms = 10000;
  int max_in_flight = 4;
  int max_tokens = 16;
  double temperature = 0.0;
};

inline HttpJudgeOptions http_judge_options_from_env() {
  HttpJudgeOptions opt;
  const char* url = std::getenv("MEMSEED_JUDGE_URL");
  if (url == nullptr || *url == '\0')
    throw ConfigError("MEMSEED_JUDGE_URL is not set");
  opt.url = url;
  if (const char* key = std::getenv("MEMSEED_JUDGE_KEY")) opt.api_key = key;
  return opt;
}

// POSTs {prompt, max_tokens, temperature} and reads {completion}. Bounded
// retries with exponential backoff; at most max_in_flight requests at once.
class HttpJudge : public JudgeClient {
 public:
  explicit HttpJudge(HttpJudgeOptions options) : options_(std::move(options)) {
    if (options_.url.empty()) throw ConfigError("judge url must be non-empty");
    if (options_.retries < 1) throw ConfigError("retries must be at least 1");
    if (options_.max_in_flight < 1) throw ConfigError("max_in_flight must be at least 1");
    const std::string::size_type scheme = options_.url.find("://");
    const std::string::size_type path_start =
        options_.url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
      base_ = options_.url;
      path_ = "/";
    } else {
      base_ = options_.url.substr(0, path_start);
      path_ = options_.url.substr(path_start);
    }
    slots_ = std::make_unique<std::counting_semaphore<>>(options_.max_in_flight);
  }

  JudgeTransport transport() const override { return JudgeTransport::http; }

  int score_memorability(const AdRecord& ad) override {
    detail::require_scenes(ad);
    const std::string completion = complete(render_bs_prompt(ad, CategoryMask{}).prompt);
    long value = 0;
    if (!detail::parse_strict_int(completion, &value) || value < 0 || value > 99)
      throw ParseError("judge returned a non-score response: '" + completion + "'");
    return static_cast<int>(value);
  }

  int rate_consistency(const std::string& script_text) override {
    const std::string completion = complete(render_consistency_prompt(script_text));
    long value = 0;
    if (!detail::parse_strict_int(completion, &value) || value < 0 || value > 10)
      throw ParseError("judge returned a non-rating response: '" + completion + "'");
    return static_cast<int>(value);
  }

  JudgeVerdict prefer(const std::string& ad_a_text, const std::string& ad_b_text) override {
    const std::string completion = complete(render_preference_prompt(ad_a_text, ad_b_text));
    ordered_json j;
    try {
      j = ordered_json::parse(completion);
    } catch (const nlohmann::json::exception&) {
      throw ParseError("judge verdict is not valid JSON: '" + completion + "'");
    }
    JudgeVerdict v;
    try {
      v.ad_a_score = j.at("ad_a_score").get<double>();
      v.ad_b_score = j.at("ad_b_score").get<double>();
      const std::string w = lowercase(trim(j.at("winner").get<std::string>()));
      if (w == "a") v.winner = Winner::A;
      else if (w == "b") v.winner = Winner::B;
      else if (w == "tie") v.winner = Winner::tie;
      else throw ParseError("unknown winner label: '" + w + "'");
      v.reason = j.value("reason", "");
    } catch (const nlohmann::json::exception&) {
      throw ParseError("judge verdict is missing required keys: '" + completion + "'");
    }
    if ((v.ad_a_score > v.ad_b_score && v.winner != Winner::A) ||
        (v.ad_b_score > v.ad_a_score && v.winner != Winner::B)) {
      throw ParseError("judge verdict winner contradicts its scores: '" + completion + "'");
    }
    return v;
  }

  bool is_marketing(const std::string& page_name, const std::string& content) override {
    const std::string completion =
        complete(render_marketing_filter_prompt(page_name, content));
    const std::string label = lowercase(trim(completion));
    if (label == "marketing") return true;
    if (label == "politics") return false;
    throw ParseError("judge answered outside {politics, marketing}: '" + completion + "'");
  }

 private:
  std::string complete(const std::string& prompt) {
    slots_->acquire();
    struct Release {
      std::counting_semaphore<>* s;
      ~Release() { s->release(); }
    } release{slots_.get()};

    ordered_json body;
    body["prompt"] = prompt;
    body["max_tokens"] = options_.max_tokens;
    body["temperature"] = options_.temperature;
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 1; attempt <= options_.retries; ++attempt) {
      if (attempt > 1) {
        const int wait = options_.backoff_ms << (attempt - 2);
        std::this_thread::sleep_for(std::chrono::milliseconds(wait));
      }
      httplib::Client client(base_);
      client.set_connection_timeout(0, options_.timeout_ms * 1000);
      client.set_read_timeout(0, options_.timeout_ms * 1000);
      httplib::Headers headers;
      if (!options_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + options_.api_key);
      httplib::Result result = client.Post(path_, headers, payload, "application/json");
      if (!result) {
        last_error = "connection failed: " + httplib::to_string(result.error());
        continue;
      }
      if (result->status < 200 || result->status >= 300) {
        last_error = "status " + std::to_string(result->status);
        continue;
      }
      try {
        ordered_json response = ordered_json::parse(result->body);
        return response.at("completion").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw ParseError("judge response lacks a completion field: '" + result->body + "'");
      }
    }
    throw TransportError("judge request failed after " +
                         std::to_string(options_.retries) + " attempts (" +
                         last_error + ")");
  }

  HttpJudgeOptions options_;
  std::string base_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

// ---------------------------------------------------------------------------
// Position-bias control.
// ---------------------------------------------------------------------------

// Judges twice with the ads swapped and averages mirrored scores, removing
// any constant preference for one slot.
inline JudgeVerdict prefer_balanced(JudgeClient& client, const std::string& ad_a_text,
                                    const std::string& ad_b_text) {
  const JudgeVerdict forward = client.prefer(ad_a_text, ad_b_text);
  const JudgeVerdict swapped = client.prefer(ad_b_text, ad_a_text);
  JudgeVerdict v;
  v.ad_a_score = 0.5 * (forward.ad_a_score + swapped.ad_b_score);
  v.ad_b_score = 0.5 * (forward.ad_b_score + swapped.ad_a_score);
  if (v.ad_a_score > v.ad_b_score) v.winner = Winner::A;
  else if (v.ad_b_score > v.ad_a_score) v.winner = Winner::B;
  else v.winner = Winner::tie;
  v.reason = "order-balanced: " + forward.reason;
  return v;
}

}  // namespace memseed

#endif  // MEMSEED_JUDGE_HPP
