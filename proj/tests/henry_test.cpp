#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "memseed/henry.hpp"
#include "support/builders.hpp"

using namespace memseed;

namespace {

std::vector<AdRecord> scored_ads(int n, int base_score = 20) {
  std::vector<AdRecord> ads;
  for (int i = 0; i < n; ++i) {
    AdRecord ad = testsupport::make_ad("ad-" + std::to_string(i),
                                       (base_score + 7 * i) % 100);
    ads.push_back(ad);
  }
  return ads;
}

// Trains a model until it reproduces the given pairs nearly exactly.
ModelHandle memorize(const std::vector<TrainingPair>& pairs, int epochs,
                     int context_limit, double lr = 3e-3) {
  TrainingSet set;
  set.pairs = pairs;
  Vocab vocab = build_vocab(training_texts(set));
  TrainConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.context_limit = context_limit;
  cfg.dropout = 0.0;
  cfg.epochs = epochs;
  cfg.batch_size = 1;
  cfg.warmup_steps = 10;
  cfg.learning_rate = lr;
  cfg.seed = 11;
  return train(tokenize_pairs(pairs, vocab), vocab, cfg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Training-pair construction.
// ---------------------------------------------------------------------------

TEST_CASE("bs_only builds one scored pair per ad in input order") {
  std::vector<AdRecord> ads = scored_ads(10);
  TrainingSet set = build_training_pairs(ads, {TaskMode::bs_only});
  REQUIRE(set.pairs.size() == 10);
  CHECK(set.total_skipped() == 0);
  for (std::size_t i = 0; i < set.pairs.size(); ++i) {
    const TrainingPair& p = set.pairs[i];
    CHECK(p.task == TaskKind::bs);
    CHECK(p.ad_id == ads[i].id);
    CHECK(p.prompt == render_bs_prompt(ads[i], CategoryMask{}).prompt);
    CHECK(p.target == two_digit_score(*ads[i].score));
  }
}

TEST_CASE("unscored ads are skipped with a count, not an error") {
  std::vector<AdRecord> ads = scored_ads(3);
  ads[1].score.reset();
  TrainingSet set = build_training_pairs(ads, {TaskMode::bs_only});
  CHECK(set.pairs.size() == 2);
  CHECK(set.skipped_bs == 1);
  CHECK(set.skipped_cs == 0);
}

TEST_CASE("cs_only renders prompt and canonical script target") {
  std::vector<AdRecord> ads = scored_ads(4);
  ads[2].score.reset();  // CS does not need a score
  TrainingSet set = build_training_pairs(ads, {TaskMode::cs_only});
  REQUIRE(set.pairs.size() == 4);
  CHECK(set.skipped_cs == 0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(set.pairs[i].task == TaskKind::cs);
    CHECK(set.pairs[i].prompt == render_cs_prompt(ads[i]));
    CHECK(set.pairs[i].target == render_ad_script(ads[i], CategoryMask{}));
  }
}

TEST_CASE("mixed mode interleaves tasks by ratio") {
  std::vector<AdRecord> ads = scored_ads(10);
  TaskMix mix{TaskMode::mixed, 0.5};
  TrainingSet set = build_training_pairs(ads, mix, CategoryMask{}, 3);
  REQUIRE(set.pairs.size() == 20);  // every ad is eligible for both tasks
  for (std::size_t i = 0; i < set.pairs.size(); ++i) {
    const TaskKind expect = (i % 2 == 0) ? TaskKind::cs : TaskKind::bs;
    CHECK(set.pairs[i].task == expect);
  }

  // Ratio 0.25 with a 5-vs-20 pool: one BS slot in every four while both
  // pools last, and everything is consumed.
  std::vector<AdRecord> lopsided = scored_ads(20);
  for (std::size_t i = 5; i < lopsided.size(); ++i) lopsided[i].score.reset();
  TrainingSet quarter = build_training_pairs(lopsided, {TaskMode::mixed, 0.25});
  REQUIRE(quarter.pairs.size() == 25);
  std::size_t bs_count = 0;
  for (std::size_t i = 0; i < quarter.pairs.size(); ++i) {
    if (quarter.pairs[i].task == TaskKind::bs) {
      ++bs_count;
      CHECK(i % 4 == 3);
    }
  }
  CHECK(bs_count == 5);

  // Deterministic under the seed; the pool order reacts to the seed.
  TrainingSet again = build_training_pairs(ads, mix, CategoryMask{}, 3);
  REQUIRE(again.pairs.size() == set.pairs.size());
  for (std::size_t i = 0; i < set.pairs.size(); ++i) {
    CHECK(again.pairs[i].ad_id == set.pairs[i].ad_id);
    CHECK(again.pairs[i].task == set.pairs[i].task);
  }
}

TEST_CASE("mixed mode drains the longer pool after the shorter one ends") {
  std::vector<AdRecord> ads = scored_ads(6);
  for (std::size_t i = 3; i < 6; ++i) ads[i].score.reset();  // CS-only tail
  TrainingSet set = build_training_pairs(ads, {TaskMode::mixed, 0.5});
  CHECK(set.pairs.size() == 9);  // 3 BS + 6 CS
  CHECK(set.skipped_bs == 3);
  std::size_t bs_count = 0;
  for (const TrainingPair& p : set.pairs) bs_count += p.task == TaskKind::bs;
  CHECK(bs_count == 3);
}

TEST_CASE("pair construction validates mode and eligibility") {
  std::vector<AdRecord> ads = scored_ads(3);
  for (auto& ad : ads) ad.score.reset();
  CHECK_THROWS_AS(build_training_pairs(ads, {TaskMode::bs_only}), ConfigError);
  CHECK_THROWS_AS(build_training_pairs(ads, {TaskMode::mixed, 0.0}), ConfigError);
  CHECK_THROWS_AS(build_training_pairs(ads, {TaskMode::mixed, 1.0}), ConfigError);
  CHECK_THROWS_AS(build_training_pairs({}, {TaskMode::cs_only}), ConfigError);
  CHECK(task_mode_from_string("mixed") == TaskMode::mixed);
  CHECK_THROWS_AS(task_mode_from_string("both"), ConfigError);
}

TEST_CASE("category masks remove whole sentences from built pairs") {
  std::vector<AdRecord> ads = scored_ads(1);
  TrainingSet full = build_training_pairs(ads, {TaskMode::bs_only});
  TrainingSet masked = build_training_pairs(ads, {TaskMode::bs_only},
                                            mask_excluding({"emotions"}));
  const std::string& fp = full.pairs[0].prompt;
  const std::string& mp = masked.pairs[0].prompt;
  CHECK(fp != mp);
  CHECK(fp.find("The emotion of the scene is") != std::string::npos);
  CHECK(mp.find("The emotion of the scene is") == std::string::npos);
}

// ---------------------------------------------------------------------------
// Prediction.
// ---------------------------------------------------------------------------

TEST_CASE("prediction is a pure function of the rendered prompt") {
  std::vector<AdRecord> ads = scored_ads(2);
  ads[1] = ads[0];
  ads[1].id = "other-id";  // identical content, different id
  TrainingSet set = build_training_pairs(ads, {TaskMode::bs_only});
  Vocab vocab = build_vocab(training_texts(set));
  TrainConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.context_limit = 512;
  ModelHandle m = initialize_model(vocab, cfg);

  const int a = predict_memorability(m, ads[0]);
  const int b = predict_memorability(m, ads[1]);
  CHECK(a == b);
  CHECK(a == 0);  // exactly uniform digits -> lowest-digit tie-break twice
  CHECK(predict_memorability(m, ads[0], CategoryMask{}, ScoreMode::expectation) == 50);

  TrainConfig tiny = cfg;
  tiny.context_limit = 16;
  ModelHandle small = initialize_model(vocab, tiny);
  CHECK_THROWS_AS(predict_memorability(small, ads[0]), SizingError);
}

TEST_CASE("a memorized scored ad is predicted exactly") {
  AdRecord chanel = ad_from_json(
      ordered_json::parse(read_file(testsupport::fixtures_dir() + "/goldens/chanel_ad.json")));
  REQUIRE(chanel.score.has_value());
  REQUIRE(*chanel.score == 71);

  TrainingSet set = build_training_pairs({chanel}, {TaskMode::bs_only});
  Vocab vocab = build_vocab(training_texts(set));
  std::vector<TokenPair> pairs = tokenize_pairs(set.pairs, vocab);

  TrainConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.context_limit = static_cast<int>(pairs[0].prompt.size()) + 8;
  cfg.dropout = 0.0;
  cfg.epochs = 60;
  cfg.batch_size = 1;
  cfg.warmup_steps = 10;
  cfg.learning_rate = 3e-3;
  cfg.seed = 11;
  ModelHandle m = train(pairs, vocab, cfg);

  CHECK(predict_memorability(m, chanel) == 71);
  CHECK(predict_memorability(m, chanel) == 71);  // determinism
}

// ---------------------------------------------------------------------------
// Generation.
// ---------------------------------------------------------------------------

TEST_CASE("a memorized script is regenerated byte-exactly at temperature zero") {
  std::string golden = read_file(testsupport::fixtures_dir() + "/goldens/maytag_script.txt");
  if (!golden.empty() && golden.back() == '\n') golden.pop_back();

  TrainingPair pair;
  pair.prompt = render_cs_prompt("Costco", "Maytag", 18);
  pair.target = golden;
  pair.task = TaskKind::cs;
  pair.ad_id = "maytag";
  ModelHandle m = memorize({pair}, 200, 640);

  GenerationParams params;
  params.temperature = 0.0;
  GeneratedAd g = generate_ad(m, "Costco", "Maytag", 18, params);
  CHECK(g.script == golden);
  CHECK(g.parse_ok);
  REQUIRE(g.parsed.scenes.size() == 4);
  CHECK(g.parsed.source == Source::generated);
  CHECK(g.parsed.brand == "Costco");
  CHECK(g.parsed.title == "Maytag");
  CHECK(g.parsed.duration_s == 18);
  // Round-trip: re-rendering the parsed record reproduces the script.
  CHECK(render_ad_script(g.parsed, CategoryMask{}) == golden);

  GeneratedAd h = generate_ad(m, "Costco", "Maytag", 18, params);
  CHECK(h.script == g.script);
}

TEST_CASE("an untrained model essentially never produces a parseable script") {
  Vocab vocab = build_vocab({render_cs_prompt("Brand", "Title", 10),
                             "The ad is shot in landscape orientation, at a medium pace.\n"
                             "\nScene 1: The scene shows a thing.\n"});
  TrainConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.context_limit = 96;
  ModelHandle m = initialize_model(vocab, cfg);

  int failures = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GenerationParams params;
    params.temperature = 0.8;
    params.seed = seed;
    params.max_tokens = 40;
    GeneratedAd g = generate_ad(m, "Brand", "Title", 10, params);
    failures += g.parse_ok ? 0 : 1;
    CHECK(g.parsed.source == Source::generated);
  }
  CHECK(failures == 20);
}

TEST_CASE("generation validates its inputs and context budget") {
  Vocab vocab = build_vocab({render_cs_prompt("Brand", "Title", 10)});
  TrainConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.context_limit = 8;  // smaller than the prompt
  ModelHandle m = initialize_model(vocab, cfg);
  CHECK_THROWS_AS(generate_ad(m, "Brand", "Title", 10), SizingError);
  CHECK_THROWS_AS(generate_ad(m, "", "Title", 10), ValidationError);
  CHECK_THROWS_AS(generate_ad(m, "Brand", "Title", 0), ValidationError);
}

// ---------------------------------------------------------------------------
// Output record shapes.
// ---------------------------------------------------------------------------

TEST_CASE("prediction and generation records expose the documented fields") {
  AdRecord ad = testsupport::make_ad("shape-check", 50);
  ordered_json p = prediction_json(ad, 71, mask_excluding({"emotions"}));
  CHECK(p["id"] == "shape-check");
  CHECK(p["predicted_score"] == 71);
  CHECK(p["band"] == "high");
  CHECK(p["mask"] == std::vector<std::string>{"emotions"});
  std::vector<std::string> pkeys;
  for (auto it = p.begin(); it != p.end(); ++it) pkeys.push_back(it.key());
  CHECK(pkeys == std::vector<std::string>{"id", "predicted_score", "band", "mask"});

  GeneratedAd g;
  g.script = "text";
  g.parse_ok = false;
  ordered_json q = generation_json(g, "Brand", "Title", 12);
  std::vector<std::string> qkeys;
  for (auto it = q.begin(); it != q.end(); ++it) qkeys.push_back(it.key());
  CHECK(qkeys == std::vector<std::string>{"brand", "title", "duration_s", "script", "parse_ok"});
  CHECK(q["parse_ok"] == false);
}
