// End-to-end tests for the command-line tool: every command must agree with
// the library call it wraps, honor the exit-code contract (0 ok, 2 validation,
// 3 I/O), and be bit-reproducible under a fixed --seed. The binary path comes
// from MEMSEED_CLI_BIN (set by the test harness).
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "memseed/corpus.hpp"
#include "memseed/evalkit.hpp"
#include "memseed/henry.hpp"
#include "memseed/lm.hpp"
#include "memseed/scenes.hpp"
#include "memseed/verbalize.hpp"

#include "support/builders.hpp"

using namespace memseed;
using Catch::Matchers::ContainsSubstring;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const char* bin = std::getenv("MEMSEED_CLI_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Per-process scratch directory (the OS temp cleaner reaps it eventually).
const std::string& tmp_dir() {
  static const std::string dir = [] {
    auto p = std::filesystem::temp_directory_path() /
             ("memseed-cli-test-" + std::to_string(::getpid()));
    std::filesystem::create_directories(p);
    return p.string();
  }();
  return dir;
}

std::string corpus_path() { return testsupport::fixtures_dir() + "/toy_corpus.jsonl"; }
std::string eval_path() { return testsupport::fixtures_dir() + "/toy_eval.jsonl"; }
std::string raw_path() { return testsupport::fixtures_dir() + "/toy_raw.jsonl"; }
std::string video_path() { return testsupport::fixtures_dir() + "/cut_video.fseq"; }

ordered_json read_json(const std::string& path) {
  return ordered_json::parse(read_file(path));
}

// Small flags shared by every training run in this suite; one epoch on the
// 50-record corpus keeps each run well under a second.
const char* kTinyTrain =
    "--epochs 1 --batch-size 4 --d-model 16 --n-heads 2 --n-layers 1 "
    "--context-limit 384 --dropout 0 --warmup-steps 2";

// One shared checkpoint, trained through the CLI itself on first use.
const std::string& tiny_checkpoint() {
  static const std::string path = [] {
    const std::string ckpt = tmp_dir() + "/shared.ckpt";
    CliResult r = run_cli("train --task mixed --data " + corpus_path() + " --ratio 0.5 " +
                          kTinyTrain + " --seed 7 --out " + ckpt);
    REQUIRE(r.exit_code == 0);
    return ckpt;
  }();
  return path;
}

}  // namespace

TEST_CASE("scenes command matches the library cut detector") {
  const std::string out = tmp_dir() + "/spans.json";
  CliResult r = run_cli("scenes --video " + video_path() + " --out " + out);
  REQUIRE(r.exit_code == 0);

  const FrameSequence seq = read_fseq(video_path());
  const std::vector<SceneSpan> expected = detect_cuts(seq);
  const ordered_json body = read_json(out);
  CHECK(body["schema"] == "scene-spans/v1");
  CHECK(body["fps"].get<double>() == seq.fps);
  CHECK(body["frame_count"].get<std::size_t>() == seq.frames.size());
  REQUIRE(body["spans"].size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(body["spans"][i]["start"].get<int>() == expected[i].start);
    CHECK(body["spans"][i]["end"].get<int>() == expected[i].end);
    CHECK(body["spans"][i]["dominant"].get<int>() == expected[i].dominant);
  }

  // A manifest lands alongside the output.
  const ordered_json manifest = read_json(out + ".manifest.json");
  CHECK(manifest["command"] == "scenes");
  CHECK(manifest["config"]["threshold"].get<double>() == kDefaultCutThreshold);
  CHECK(manifest["inputs"].size() == 1);
}

TEST_CASE("scenes command finds two spans in a two-shot video") {
  // Two visually distinct segments -> exactly one cut.
  FrameSequence seq;
  seq.fps = 10.0;
  const Frame a = solid_frame(16, 12, 0, 0, 0);
  const Frame b = stripe_frame(16, 12, 2, 255, 0, 0, 255, 255, 255, true);
  for (int i = 0; i < 5; ++i) seq.frames.push_back(a);
  for (int i = 0; i < 5; ++i) seq.frames.push_back(b);
  const std::string video = tmp_dir() + "/two_shot.fseq";
  write_fseq(video, seq);

  const std::string out = tmp_dir() + "/two_shot_spans.json";
  CliResult r = run_cli("scenes --video " + video + " --out " + out);
  REQUIRE(r.exit_code == 0);
  CHECK(read_json(out)["spans"].size() == 2);
}

TEST_CASE("scenes command exit codes and threshold behavior") {
  const std::string missing = tmp_dir() + "/no_such_video.fseq";
  CliResult gone = run_cli("scenes --video " + missing + " --out " + tmp_dir() + "/x.json");
  CHECK(gone.exit_code == 3);
  CHECK_THAT(gone.output, ContainsSubstring(missing));

  const std::string out = tmp_dir() + "/one_span.json";
  CliResult full = run_cli("scenes --video " + video_path() + " --threshold 1.0 --out " + out);
  REQUIRE(full.exit_code == 0);
  CHECK(read_json(out)["spans"].size() == 1);

  CliResult bad = run_cli("scenes --video " + video_path() + " --threshold 2.5 --out " + out);
  CHECK(bad.exit_code == 2);
}

TEST_CASE("train is deterministic and the manifest records the task mix") {
  const std::string a = tmp_dir() + "/det_a.ckpt";
  const std::string b = tmp_dir() + "/det_b.ckpt";
  const std::string flags = "train --task mixed --data " + corpus_path() + " --ratio 0.5 " +
                            kTinyTrain + " --seed 11 --out ";
  REQUIRE(run_cli(flags + a).exit_code == 0);
  REQUIRE(run_cli(flags + b).exit_code == 0);
  CHECK(read_file(a) == read_file(b));

  const ordered_json manifest = read_json(a + ".manifest.json");
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["task"] == "mixed");
  CHECK(manifest["config"]["mixing_ratio"].get<double>() == 0.5);
  CHECK(manifest["config"]["train"]["epochs"].get<int>() == 1);
  CHECK(manifest["seed"].get<std::uint64_t>() == 11);

  // The checkpoint loads and predicts a valid score.
  const ModelHandle m = load_checkpoint(a);
  const std::vector<AdRecord> ads = load_jsonl(eval_path());
  const int score = predict_memorability(m, ads.front());
  CHECK(score >= 0);
  CHECK(score <= 99);
}

TEST_CASE("predict matches the library and records the ablation mask") {
  const std::string out = tmp_dir() + "/predictions.json";
  CliResult r = run_cli("predict --model " + tiny_checkpoint() + " --data " + eval_path() +
                        " --ablate emotions --out " + out);
  REQUIRE(r.exit_code == 0);

  const ModelHandle m = load_checkpoint(tiny_checkpoint());
  const CategoryMask mask = mask_from_ablate_list("emotions");
  const std::vector<AdRecord> ads = load_jsonl(eval_path());
  const ordered_json body = read_json(out);
  REQUIRE(body["records"].size() == ads.size());
  for (std::size_t i = 0; i < ads.size(); ++i) {
    CHECK(body["records"][i]["id"] == ads[i].id);
    CHECK(body["records"][i]["predicted_score"].get<int>() ==
          predict_memorability(m, ads[i], mask));
  }

  const ordered_json manifest = read_json(out + ".manifest.json");
  CHECK(manifest["config"]["ablate"] == ordered_json::array({"emotions"}));
}

TEST_CASE("generate at temperature zero matches the library") {
  const std::string out = tmp_dir() + "/gen.json";
  CliResult r = run_cli("generate --model " + tiny_checkpoint() +
                        " --brand Acme --title \"Acme encore spot\" --duration 15"
                        " --temperature 0 --seed 5 --out " + out);
  REQUIRE(r.exit_code == 0);

  const ModelHandle m = load_checkpoint(tiny_checkpoint());
  GenerationParams params;
  params.temperature = 0.0;
  params.seed = derive_seed(5, "gen.0");  // batch index 0
  const GeneratedAd g = generate_ad(m, "Acme", "Acme encore spot", 15, params);

  const ordered_json body = read_json(out);
  REQUIRE(body["records"].size() == 1);
  CHECK(body["records"][0]["script"] == g.script);
  CHECK(body["records"][0]["parse_ok"].get<bool>() == g.parse_ok);
}

TEST_CASE("eval perplexity matches the library in both banding modes") {
  const ModelHandle m = load_checkpoint(tiny_checkpoint());
  const std::vector<AdRecord> ads = load_jsonl(eval_path());

  for (const std::string bands : {"tercile", "fixed"}) {
    const std::string out = tmp_dir() + "/eval_" + bands + ".json";
    CliResult r = run_cli("eval perplexity --model " + tiny_checkpoint() + " --data " +
                          eval_path() + " --bands " + bands + " --out " + out);
    REQUIRE(r.exit_code == 0);

    const BandMode mode = bands == "tercile" ? BandMode::tercile : BandMode::fixed;
    const StratifiedPerplexity p = stratified_perplexity(m, ads, mode);
    const ordered_json body = read_json(out);
    CHECK(body["schema"] == "eval-report/v1");
    CHECK(body["values"]["low"].get<double>() == p.low);
    CHECK(body["values"]["medium"].get<double>() == p.medium);
    CHECK(body["values"]["high"].get<double>() == p.high);
    CHECK(body["counts"]["low"].get<std::size_t>() == p.n_low);
    CHECK(body["counts"]["medium"].get<std::size_t>() == p.n_medium);
    CHECK(body["counts"]["high"].get<std::size_t>() == p.n_high);
  }
}

TEST_CASE("seed run writes one report entry per iteration, bit-identically") {
  const std::string a = tmp_dir() + "/seed_a.json";
  const std::string b = tmp_dir() + "/seed_b.json";
  const std::string flags = "seed run --model " + tiny_checkpoint() + " --raw " + raw_path() +
                            " --iterations 2 --judge mock --temperature 0 " + kTinyTrain +
                            " --seed 9 --out ";
  REQUIRE(run_cli(flags + a).exit_code == 0);
  REQUIRE(run_cli(flags + b).exit_code == 0);
  CHECK(read_file(a) == read_file(b));

  const ordered_json report = read_json(a);
  CHECK(report["schema"] == "seed-report/v1");
  REQUIRE(report["iterations"].size() == 2);
  CHECK(report["iterations"][0]["iteration"].get<int>() == 1);
  CHECK(report["iterations"][1]["iteration"].get<int>() == 2);

  const ordered_json manifest = read_json(a + ".manifest.json");
  CHECK(manifest["config"]["judge"] == "mock");
  CHECK(manifest["config"]["iterations"].get<int>() == 2);
  // Default evaluation triples are synthesized from raw-pool brands with a
  // held-out title pattern.
  REQUIRE(manifest["config"]["eval_triples"].size() > 0);
  for (const auto& t : manifest["config"]["eval_triples"])
    CHECK_THAT(t["title"].get<std::string>(), ContainsSubstring("encore spot"));
}

TEST_CASE("config file fills unset options and explicit flags beat it") {
  const std::string conf = tmp_dir() + "/train.conf";
  write_file(conf,
             "# schedule\n"
             "epochs = 1\n"
             "batch_size = 4\n"
             "d_model = 16\n"
             "n_heads = 2\n"
             "n_layers = 1\n"
             "context_limit = 384\n"
             "dropout = 0\n"
             "warmup_steps = 2\n");

  const std::string from_file = tmp_dir() + "/from_file.ckpt";
  REQUIRE(run_cli("train --task mixed --data " + corpus_path() + " --config " + conf +
                  " --seed 7 --out " + from_file)
              .exit_code == 0);
  // Identical settings via config file and via flags give identical bytes.
  CHECK(read_file(from_file) == read_file(tiny_checkpoint()));

  const std::string overridden = tmp_dir() + "/overridden.ckpt";
  REQUIRE(run_cli("train --task mixed --data " + corpus_path() + " --config " + conf +
                  " --epochs 2 --seed 7 --out " + overridden)
              .exit_code == 0);
  const ordered_json manifest = read_json(overridden + ".manifest.json");
  CHECK(manifest["config"]["train"]["epochs"].get<int>() == 2);     // flag wins
  CHECK(manifest["config"]["train"]["d_model"].get<int>() == 16);   // file applied

  CliResult typo = run_cli("train --task mixed --data " + corpus_path() + " --config " + conf +
                           " --out " + tmp_dir() + "/x.ckpt --epochs 1 --seed 7");
  CHECK(typo.exit_code == 0);

  const std::string bad_conf = tmp_dir() + "/bad.conf";
  write_file(bad_conf, "epochz = 1\n");
  CliResult unknown = run_cli("train --task mixed --data " + corpus_path() + " --config " +
                              bad_conf + " --out " + tmp_dir() + "/x.ckpt");
  CHECK(unknown.exit_code == 2);
  CHECK_THAT(unknown.output, ContainsSubstring("epochz"));
}

TEST_CASE("worker count never changes outputs or their order") {
  const std::string one = tmp_dir() + "/pred_w1.json";
  const std::string four = tmp_dir() + "/pred_w4.json";
  REQUIRE(run_cli("predict --model " + tiny_checkpoint() + " --data " + eval_path() +
                  " --workers 1 --out " + one)
              .exit_code == 0);
  REQUIRE(run_cli("predict --model " + tiny_checkpoint() + " --data " + eval_path() +
                  " --workers 4 --out " + four)
              .exit_code == 0);
  CHECK(read_file(one) == read_file(four));

  const std::vector<AdRecord> ads = load_jsonl(eval_path());
  const ordered_json body = read_json(four);
  REQUIRE(body["records"].size() == ads.size());
  for (std::size_t i = 0; i < ads.size(); ++i) CHECK(body["records"][i]["id"] == ads[i].id);
}

TEST_CASE("verbalize matches the library renderers") {
  const std::vector<AdRecord> ads = load_jsonl(eval_path());

  const std::string bs_out = tmp_dir() + "/verb_bs.json";
  REQUIRE(run_cli("verbalize --data " + eval_path() + " --kind bs --out " + bs_out)
              .exit_code == 0);
  const ordered_json bs = read_json(bs_out);
  REQUIRE(bs["records"].size() == ads.size());
  for (std::size_t i = 0; i < ads.size(); ++i) {
    const BsPrompt p = render_bs_prompt(ads[i]);
    CHECK(bs["records"][i]["prompt"] == p.prompt);
    REQUIRE(p.target.has_value());
    CHECK(bs["records"][i]["target"] == *p.target);
  }

  const std::string script_out = tmp_dir() + "/verb_script.json";
  REQUIRE(run_cli("verbalize --data " + eval_path() + " --kind script --out " + script_out)
              .exit_code == 0);
  const ordered_json scripts = read_json(script_out);
  for (std::size_t i = 0; i < ads.size(); ++i)
    CHECK(scripts["records"][i]["script"] == render_ad_script(ads[i]));

  CHECK(run_cli("verbalize --data " + eval_path() + " --kind nope --out " + tmp_dir() +
                "/x.json")
            .exit_code == 2);
}

TEST_CASE("workdir resolves every relative path") {
  const std::string out = tmp_dir() + "/wd_spans.json";
  CliResult r = run_cli("scenes --workdir " + testsupport::fixtures_dir() +
                        " --video cut_video.fseq --out " + out);
  REQUIRE(r.exit_code == 0);
  CHECK(read_json(out)["spans"].size() == 4);
}
