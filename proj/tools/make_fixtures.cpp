// Regenerates the committed fixtures/ tree deterministically: the scored toy
// corpus, the unscored raw pool, the banded eval set, the held-out generation
// triples, and the synthetic cut video. Running it twice produces identical
// bytes, so `git diff` after a rerun shows exactly what changed.
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memseed/corpus.hpp"
#include "memseed/judge.hpp"
#include "memseed/scenes.hpp"

using namespace memseed;

namespace {

SceneFeatures scene(const std::string& caption, const std::string& emotion,
                    std::vector<std::string> tags, bool logo,
                    std::vector<std::string> ocr) {
  SceneFeatures s;
  s.caption = caption;
  s.emotions = {emotion};
  s.tags = std::move(tags);
  s.ocr = std::move(ocr);
  s.logo_present = logo;
  s.audio_type = AudioType::speech;
  return s;
}

// Scene archetypes. The mock judge scores a record from its scenes' negative
// emotions, logos, on-screen text, and scene count, so these ladders fan the
// corpus out across the low/medium/high bands.
SceneFeatures plain_scene(int v) {
  static const char* captions[] = {
      "a person holding a product", "a gadget on a wooden table",
      "a person pouring a bottle", "a person folding a jacket"};
  return scene(captions[v % 4], v % 2 ? "joy" : "calm", {"person", "product"}, false, {});
}

SceneFeatures ocr_scene(int v) {
  static const char* banners[] = {"sale today", "half price", "limited offer"};
  SceneFeatures s = plain_scene(v);
  s.ocr = {banners[v % 3]};
  s.tags = {"store", "sale"};
  return s;
}

SceneFeatures logo_scene(int v) {
  SceneFeatures s = plain_scene(v);
  s.logo_present = true;
  return s;
}

SceneFeatures hot_scene(int v) {
  static const char* captions[] = {"a person fleeing a burning store",
                                   "a crowd rushing a closing market",
                                   "a person gripping a cracked gadget"};
  SceneFeatures s = scene(captions[v % 3], v % 2 ? "fear" : "tension",
                          {"person", "store"}, false, {});
  return s;
}

const std::vector<std::string>& brand_pool() {
  static const std::vector<std::string> brands = {"Acme",  "Bolt", "Cedar", "Dune",
                                                  "Ember", "Flint", "Glade", "Harbor",
                                                  "Iris",  "Juno", "Kite",  "Lumen"};
  return brands;
}

AdRecord base_ad(const std::string& id, const std::string& brand, const std::string& title,
                 double duration_s, std::vector<SceneFeatures> scenes,
                 const std::string& voiceover) {
  AdRecord ad;
  ad.id = id;
  ad.brand = brand;
  ad.title = title;
  ad.duration_s = duration_s;
  ad.orientation = Orientation::landscape;
  ad.pace = Pace::medium;
  ad.scenes = std::move(scenes);
  ad.voiceover = voiceover;
  ad.dataset_tag = "toy";
  return ad;
}

std::string marketing_voiceover(const std::string& brand, int v) {
  switch (v % 3) {
    case 0: return "Buy " + brand + " today.";
    case 1: return "Shop the " + brand + " deal now.";
    default: return "The " + brand + " offer ends soon.";
  }
}

// Ten ladders spanning the mock-score range (roughly 23 up to 83).
std::vector<SceneFeatures> ladder_scenes(int archetype, int v) {
  switch (archetype) {
    case 0: return {plain_scene(v)};
    case 1: return {ocr_scene(v)};
    case 2: return {logo_scene(v)};
    case 3: return {plain_scene(v), ocr_scene(v + 1)};
    case 4: {
      SceneFeatures s = logo_scene(v);
      s.ocr = {"limited offer"};
      return {s};
    }
    case 5: return {hot_scene(v), plain_scene(v + 1)};
    case 6: return {hot_scene(v)};
    case 7: {
      SceneFeatures a = hot_scene(v);
      SceneFeatures b = hot_scene(v + 1);
      a.logo_present = true;
      return {a, b};
    }
    case 8: {
      SceneFeatures s = hot_scene(v);
      s.logo_present = true;
      return {s};
    }
    default: {
      SceneFeatures s = hot_scene(v);
      s.logo_present = true;
      s.ocr = {"sale today"};
      return {s};
    }
  }
}

AdRecord political_ad(const std::string& id, int v) {
  static const char* slots[] = {"senator", "governor", "president"};
  const std::string role = slots[v % 3];
  SceneFeatures s = scene("a politician speaking at a campaign rally", "tension",
                          {"campaign", "rally"}, false, {});
  AdRecord ad = base_ad(id, "Forward", "Vote in the " + role + " election", 20.0, {s},
                        "Vote for your " + role + " at the ballot.");
  return ad;
}

std::vector<AdRecord> build_corpus(MockJudge& judge) {
  std::vector<AdRecord> ads;
  static const char* durations[] = {"15", "20", "30"};
  for (int i = 0; i < 50; ++i) {
    const int archetype = i % 10;
    const std::string& brand = brand_pool()[i % brand_pool().size()];
    const std::string title =
        i == 49 ? brand + " encore spot" : brand + " launch spot";
    AdRecord ad = base_ad("toy-" + std::to_string(i), brand, title,
                          std::stod(durations[i % 3]), ladder_scenes(archetype, i),
                          marketing_voiceover(brand, i));
    ad.score = judge.score_memorability(ad);
    ad.source = Source::human_study;
    ads.push_back(std::move(ad));
  }
  return ads;
}

std::vector<AdRecord> build_raw() {
  std::vector<AdRecord> ads;
  // 28 hot records the curation step should keep...
  for (int i = 0; i < 28; ++i) {
    const int archetype = 7 + i % 3;  // the three high ladders
    const std::string& brand = brand_pool()[(i + 5) % brand_pool().size()];
    AdRecord ad = base_ad("raw-hot-" + std::to_string(i), brand, brand + " holiday promo",
                          15.0, ladder_scenes(archetype, i), marketing_voiceover(brand, i));
    ads.push_back(std::move(ad));
  }
  // ...24 mild records the score filter should reject...
  for (int i = 0; i < 24; ++i) {
    const int archetype = i % 5;  // the low/medium ladders
    const std::string& brand = brand_pool()[(i + 2) % brand_pool().size()];
    AdRecord ad = base_ad("raw-mild-" + std::to_string(i), brand, brand + " summer sale",
                          20.0, ladder_scenes(archetype, i), marketing_voiceover(brand, i + 1));
    ads.push_back(std::move(ad));
  }
  // ...and 8 political records the marketing filter should reject.
  for (int i = 0; i < 8; ++i)
    ads.push_back(political_ad("raw-pol-" + std::to_string(i), i));
  return ads;
}

std::vector<AdRecord> build_eval(MockJudge& judge) {
  // Four records per fixed band: archetypes 0/1 are low, 4/6 medium, 8/9 high.
  static const int archetypes[] = {0, 1, 0, 1, 4, 6, 4, 6, 8, 9, 8, 9};
  std::vector<AdRecord> ads;
  for (int i = 0; i < 12; ++i) {
    const std::string& brand = brand_pool()[(i + 7) % brand_pool().size()];
    AdRecord ad = base_ad("eval-" + std::to_string(i), brand, brand + " launch spot", 15.0,
                          ladder_scenes(archetypes[i], i), marketing_voiceover(brand, i));
    ad.score = judge.score_memorability(ad);
    ad.source = Source::human_study;
    ads.push_back(std::move(ad));
  }
  return ads;
}

ordered_json triples_json() {
  // Held-out generation prompts: in-vocabulary brands, a title pattern that
  // never occurs in the raw pool (so curated records can never match).
  ordered_json out = ordered_json::array();
  for (int i = 0; i < 6; ++i) {
    ordered_json t;
    t["brand"] = brand_pool()[i];
    t["title"] = brand_pool()[i] + " encore spot";
    t["duration_s"] = 15;
    out.push_back(std::move(t));
  }
  return out;
}

FrameSequence cut_video() {
  // Four visually distinct segments -> three cuts well above the default
  // threshold; frames within a segment are identical (delta exactly zero).
  const Frame a = solid_frame(16, 12, 0, 0, 0);
  const Frame b = stripe_frame(16, 12, 2, 255, 0, 0, 255, 255, 255, true);
  const Frame c = solid_frame(16, 12, 0, 0, 255);
  const Frame d = stripe_frame(16, 12, 2, 0, 255, 0, 0, 0, 0, false);
  FrameSequence seq;
  seq.fps = 10.0;
  for (const Frame* f : {&a, &b, &c, &d})
    for (int i = 0; i < 5; ++i) seq.frames.push_back(*f);
  return seq;
}

void write_triples(const std::string& path) {
  const ordered_json triples = triples_json();
  std::string text;
  for (const auto& t : triples) text += t.dump() + "\n";
  write_file(path, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regenerate the bundled fixtures deterministically"};
  std::string out_dir = "fixtures";
  app.add_option("--out", out_dir, "output directory (default: fixtures)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    MockJudge judge;
    save_jsonl(out_dir + "/toy_corpus.jsonl", build_corpus(judge));
    save_jsonl(out_dir + "/toy_raw.jsonl", build_raw());
    save_jsonl(out_dir + "/toy_eval.jsonl", build_eval(judge));
    write_triples(out_dir + "/toy_triples.jsonl");
    write_fseq(out_dir + "/cut_video.fseq", cut_video());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "make_fixtures: %s\n", e.what());
    return 1;
  }
  std::printf("fixtures written to %s\n", out_dir.c_str());
  return 0;
}
