// Command-line front end over the header library. One subcommand per pipeline
// stage (scenes, verbalize, train, predict, generate, seed run, eval
// perplexity); every command writes its primary output plus a
// <out>.manifest.json recording the resolved configuration, input digests,
// seed, and timing. Reports are bit-identical under a fixed seed; manifests
// carry wall-clock fields and are exempt from that guarantee.
//
// Exit codes: 0 success, 2 validation/config error, 3 I/O error, 4 transport
// error.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "memseed/corpus.hpp"
#include "memseed/evalkit.hpp"
#include "memseed/henry.hpp"
#include "memseed/judge.hpp"
#include "memseed/lm.hpp"
#include "memseed/scenes.hpp"
#include "memseed/seed.hpp"
#include "memseed/verbalize.hpp"

#include <CLI11.hpp>

namespace {

using namespace memseed;

// ---------------------------------------------------------------------------
// Run manifest.
// ---------------------------------------------------------------------------

// Collects everything a command resolved before running, then lands next to
// the primary output as <out>.manifest.json.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed) : seed_(seed) {
    body_["schema"] = "run-manifest/v1";
    body_["command"] = std::move(command);
    body_["version"] = kToolVersion;
    start_ = std::chrono::steady_clock::now();
    body_["started_at_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
  }

  ordered_json& config() { return config_; }

  void add_input(const std::string& path) { inputs_[path] = file_digest(path); }

  void write(const std::string& out_path) {
    body_["config"] = config_;
    body_["inputs"] = inputs_;
    body_["seed"] = seed_;
    body_["wall_clock_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start_)
            .count();
    write_file(out_path + ".manifest.json", body_.dump(2) + "\n");
  }

 private:
  ordered_json body_;
  ordered_json config_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Shared option plumbing.
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string workdir;
  std::string out;
  std::string ablate;  // comma-separated category names to exclude
  std::uint64_t seed = 1;
  int workers = 1;
};

// All paths on the command line resolve relative to --workdir.
std::string resolve(const CommonOpts& c, const std::string& path) {
  if (path.empty() || c.workdir.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(c.workdir) / p).string();
}

void add_workdir(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--workdir", c.workdir, "directory all relative paths resolve against");
}

void add_seed(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--seed", c.seed, "random seed (all commands are deterministic under it)");
}

void add_workers(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--workers", c.workers, "parallel per-record workers; output order stays input order")
      ->check(CLI::PositiveNumber);
}

void add_ablate(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--ablate", c.ablate,
                  "comma-separated verbalization categories to exclude (e.g. emotions,ocr)");
}

CategoryMask mask_of(const CommonOpts& c) {
  return c.ablate.empty() ? CategoryMask{} : mask_from_ablate_list(c.ablate);
}

// Run fn(i) for i in [0, n) on `workers` threads; exceptions rethrow on the
// caller. Results must be written by index so output order matches input.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const int used = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (used == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(used));
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// One entry per option a config file may set: the file key, the CLI option
// (to honor flag-beats-file precedence via count()), and a typed setter.
struct ConfigKey {
  std::string key;
  CLI::Option* opt;
  std::function<void(const std::string&)> set;
};

int config_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

double config_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("config key '" + key + "': expected true or false, got '" + value + "'");
}

ConfigKey int_key(CLI::Option* opt, std::string key, int& dest) {
  return {key, opt, [key, &dest](const std::string& v) { dest = config_int(key, v); }};
}

ConfigKey double_key(CLI::Option* opt, std::string key, double& dest) {
  return {key, opt, [key, &dest](const std::string& v) { dest = config_double(key, v); }};
}

ConfigKey bool_key(CLI::Option* opt, std::string key, bool& dest) {
  return {key, opt, [key, &dest](const std::string& v) { dest = config_bool(key, v); }};
}

ConfigKey string_key(CLI::Option* opt, std::string key, std::string& dest) {
  return {key, opt, [&dest](const std::string& v) { dest = v; }};
}

// Parse a `key = value` config file (one pair per line; # and ; start
// comments; blank lines ignored; dotted keys name nested fields) and apply
// every pair whose option was not given on the command line. Unknown keys are
// an error so typos never pass silently.
void apply_config_file(const std::string& path, const std::vector<ConfigKey>& keys) {
  const std::string text = read_file(path);
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.resize(comment);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(keys.begin(), keys.end(),
                           [&](const ConfigKey& k) { return k.key == key; });
    if (it == keys.end())
      throw ParseError(path + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
    if (it->opt != nullptr && it->opt->count() > 0) continue;  // flag wins
    it->set(value);
  }
}

void add_train_flags(CLI::App* cmd, TrainConfig& t, std::vector<ConfigKey>& keys,
                     const std::string& prefix) {
  auto* lr = cmd->add_option("--learning-rate", t.learning_rate, "peak learning rate");
  auto* ep = cmd->add_option("--epochs", t.epochs, "training epochs");
  auto* bs = cmd->add_option("--batch-size", t.batch_size, "sequences per step");
  auto* wu = cmd->add_option("--warmup-steps", t.warmup_steps, "linear warmup steps");
  auto* dr = cmd->add_option("--dropout", t.dropout, "residual dropout probability");
  auto* gc = cmd->add_option("--grad-clip", t.grad_clip, "global-norm gradient clip (0 disables)");
  auto* dm = cmd->add_option("--d-model", t.d_model, "embedding width");
  auto* nh = cmd->add_option("--n-heads", t.n_heads, "attention heads");
  auto* nl = cmd->add_option("--n-layers", t.n_layers, "transformer blocks");
  auto* cl = cmd->add_option("--context-limit", t.context_limit, "maximum sequence length");
  keys.push_back(double_key(lr, prefix + "learning_rate", t.learning_rate));
  keys.push_back(int_key(ep, prefix + "epochs", t.epochs));
  keys.push_back(int_key(bs, prefix + "batch_size", t.batch_size));
  keys.push_back(int_key(wu, prefix + "warmup_steps", t.warmup_steps));
  keys.push_back(double_key(dr, prefix + "dropout", t.dropout));
  keys.push_back(double_key(gc, prefix + "grad_clip", t.grad_clip));
  keys.push_back(int_key(dm, prefix + "d_model", t.d_model));
  keys.push_back(int_key(nh, prefix + "n_heads", t.n_heads));
  keys.push_back(int_key(nl, prefix + "n_layers", t.n_layers));
  keys.push_back(int_key(cl, prefix + "context_limit", t.context_limit));
}

ordered_json train_config_json(const TrainConfig& t) {
  ordered_json j;
  j["learning_rate"] = t.learning_rate;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["warmup_steps"] = t.warmup_steps;
  j["dropout"] = t.dropout;
  j["grad_clip"] = t.grad_clip;
  j["seed"] = t.seed;
  j["d_model"] = t.d_model;
  j["n_heads"] = t.n_heads;
  j["n_layers"] = t.n_layers;
  j["context_limit"] = t.context_limit;
  return j;
}

std::unique_ptr<JudgeClient> make_judge(const std::string& kind,
                                        const std::string& judge_model_path) {
  if (kind == "mock") return std::make_unique<MockJudge>();
  if (kind == "local") {
    if (judge_model_path.empty())
      throw ConfigError("--judge local needs --judge-model <checkpoint>");
    return std::make_unique<LocalJudge>(load_checkpoint(judge_model_path));
  }
  if (kind == "http") {
    HttpJudgeOptions opt = http_judge_options_from_env();
    if (opt.url.empty())
      throw ConfigError("--judge http needs MEMSEED_JUDGE_URL in the environment");
    return std::make_unique<HttpJudge>(std::move(opt));
  }
  throw ConfigError("unknown judge kind: '" + kind + "' (expected mock, local, or http)");
}

std::vector<SeedTriple> load_triples(const std::string& path) {
  std::vector<SeedTriple> out;
  const std::string text = read_file(path);
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    SeedTriple t;
    t.brand = j.value("brand", "");
    t.title = j.value("title", "");
    t.duration_s = j.value("duration_s", 15);
    out.push_back(std::move(t));
  }
  return out;
}

// When the user gives no --triples, synthesize held-out prompts from the raw
// pool's brands. The "encore spot" title pattern never occurs in raw records,
// so evaluation can never regurgitate a curated record verbatim by its title.
std::vector<SeedTriple> default_triples(const std::vector<AdRecord>& raw) {
  std::vector<SeedTriple> out;
  std::vector<std::string> seen;
  for (const AdRecord& ad : raw) {
    if (std::find(seen.begin(), seen.end(), ad.brand) != seen.end()) continue;
    seen.push_back(ad.brand);
    out.push_back({ad.brand, ad.brand + " encore spot", 15});
    if (out.size() == 6) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// scenes
// ---------------------------------------------------------------------------

struct ScenesOpts {
  CommonOpts common;
  std::string video;
  double threshold = kDefaultCutThreshold;
};

int run_scenes(const ScenesOpts& o) {
  Manifest manifest("scenes", o.common.seed);
  const std::string video = resolve(o.common, o.video);
  const std::string out = resolve(o.common, o.common.out);
  FrameSequence seq = read_fseq(video);
  manifest.add_input(video);
  manifest.config()["video"] = o.video;
  manifest.config()["threshold"] = o.threshold;

  std::vector<SceneSpan> spans = detect_cuts(seq, o.threshold);
  ordered_json body;
  body["schema"] = "scene-spans/v1";
  body["fps"] = seq.fps;
  body["frame_count"] = seq.frames.size();
  body["spans"] = ordered_json::array();
  for (const SceneSpan& s : spans) {
    ordered_json j;
    j["start"] = s.start;
    j["end"] = s.end;
    j["dominant"] = s.dominant;
    j["start_s"] = s.start / seq.fps;
    j["end_s"] = s.end / seq.fps;
    body["spans"].push_back(std::move(j));
  }
  write_file(out, body.dump(2) + "\n");
  manifest.write(out);
  std::printf("scenes: %zu span(s) -> %s\n", spans.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// verbalize
// ---------------------------------------------------------------------------

struct VerbalizeOpts {
  CommonOpts common;
  std::string data;
  std::string kind = "bs";  // bs | cs | script
};

int run_verbalize(const VerbalizeOpts& o) {
  if (o.kind != "bs" && o.kind != "cs" && o.kind != "script")
    throw ConfigError("unknown verbalization kind: '" + o.kind + "' (expected bs, cs, or script)");
  Manifest manifest("verbalize", o.common.seed);
  const std::string data = resolve(o.common, o.data);
  const std::string out = resolve(o.common, o.common.out);
  const CategoryMask mask = mask_of(o.common);
  std::vector<AdRecord> ads = load_jsonl(data);
  manifest.add_input(data);
  manifest.config()["data"] = o.data;
  manifest.config()["kind"] = o.kind;
  manifest.config()["ablate"] = mask.excluded();

  std::vector<ordered_json> rows(ads.size());
  parallel_for(ads.size(), o.common.workers, [&](std::size_t i) {
    const AdRecord& ad = ads[i];
    ordered_json j;
    j["id"] = ad.id;
    if (o.kind == "bs") {
      BsPrompt p = render_bs_prompt(ad, mask);
      j["prompt"] = p.prompt;
      if (p.target) j["target"] = *p.target;
    } else if (o.kind == "cs") {
      j["prompt"] = render_cs_prompt(ad);
    } else {
      j["script"] = render_ad_script(ad, mask);
    }
    rows[i] = std::move(j);
  });

  ordered_json body;
  body["schema"] = "verbalized/v1";
  body["kind"] = o.kind;
  body["records"] = rows;
  write_file(out, body.dump(2) + "\n");
  manifest.write(out);
  std::printf("verbalize: %zu record(s) -> %s\n", ads.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  CommonOpts common;
  std::string task = "bs";
  std::string data;
  std::string val;
  std::string config;
  double ratio = 0.5;
  TrainConfig train;
};

TaskMix mix_of(const std::string& task, double ratio) {
  TaskMix mix;
  mix.mode = task_mode_from_string(task);
  mix.mixing_ratio = ratio;
  validate(mix);
  return mix;
}

int run_train(const TrainOpts& o) {
  Manifest manifest("train", o.common.seed);
  const std::string data = resolve(o.common, o.data);
  const std::string out = resolve(o.common, o.common.out);
  const CategoryMask mask = mask_of(o.common);
  const TaskMix mix = mix_of(o.task, o.ratio);

  std::vector<AdRecord> ads = load_jsonl(data);
  manifest.add_input(data);
  if (!o.config.empty()) manifest.add_input(resolve(o.common, o.config));
  TrainConfig tcfg = o.train;
  tcfg.seed = o.common.seed;

  manifest.config()["task"] = to_string(mix.mode);
  manifest.config()["mixing_ratio"] = mix.mixing_ratio;
  manifest.config()["ablate"] = mask.excluded();
  manifest.config()["train"] = train_config_json(tcfg);
  manifest.config()["data"] = o.data;

  TrainingSet set = build_training_pairs(ads, mix, mask, o.common.seed);
  if (set.pairs.empty()) throw ValidationError("no eligible training pairs in " + data);
  Vocab vocab = build_vocab(training_texts(set));
  ModelHandle model = train(tokenize_pairs(set.pairs, vocab), vocab, tcfg);
  save_checkpoint(model, out);

  manifest.config()["pairs"] = set.pairs.size();
  manifest.config()["skipped_bs"] = set.skipped_bs;
  manifest.config()["skipped_cs"] = set.skipped_cs;
  manifest.config()["vocab_size"] = vocab.size();

  if (!o.val.empty()) {
    const std::string val = resolve(o.common, o.val);
    std::vector<AdRecord> val_ads = load_jsonl(val);
    manifest.add_input(val);
    std::vector<std::vector<int>> docs;
    docs.reserve(val_ads.size());
    for (const AdRecord& ad : val_ads)
      docs.push_back(tokenize(render_ad_script(ad, mask), vocab));
    manifest.config()["validation_perplexity"] = perplexity(model, docs);
  }

  manifest.write(out);
  std::printf("train: %zu pair(s), vocab %d -> %s\n", set.pairs.size(), vocab.size(),
              out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictOpts {
  CommonOpts common;
  std::string model;
  std::string data;
};

int run_predict(const PredictOpts& o) {
  Manifest manifest("predict", o.common.seed);
  const std::string model_path = resolve(o.common, o.model);
  const std::string data = resolve(o.common, o.data);
  const std::string out = resolve(o.common, o.common.out);
  const CategoryMask mask = mask_of(o.common);

  ModelHandle model = load_checkpoint(model_path);
  std::vector<AdRecord> ads = load_jsonl(data);
  manifest.add_input(model_path);
  manifest.add_input(data);
  manifest.config()["model"] = o.model;
  manifest.config()["data"] = o.data;
  manifest.config()["ablate"] = mask.excluded();
  manifest.config()["workers"] = o.common.workers;

  std::vector<ordered_json> rows(ads.size());
  parallel_for(ads.size(), o.common.workers, [&](std::size_t i) {
    rows[i] = prediction_json(ads[i], predict_memorability(model, ads[i], mask), mask);
  });

  ordered_json body;
  body["schema"] = "predictions/v1";
  body["records"] = rows;
  write_file(out, body.dump(2) + "\n");
  manifest.write(out);
  std::printf("predict: %zu record(s) -> %s\n", ads.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOpts {
  CommonOpts common;
  std::string model;
  std::string triples;  // batch mode; otherwise brand/title/duration
  std::string brand;
  std::string title;
  int duration_s = 15;
  double temperature = 0.8;
  int max_tokens = 0;
};

int run_generate(const GenerateOpts& o) {
  Manifest manifest("generate", o.common.seed);
  const std::string model_path = resolve(o.common, o.model);
  const std::string out = resolve(o.common, o.common.out);

  ModelHandle model = load_checkpoint(model_path);
  manifest.add_input(model_path);
  manifest.config()["model"] = o.model;
  manifest.config()["temperature"] = o.temperature;
  manifest.config()["max_tokens"] = o.max_tokens;

  std::vector<SeedTriple> triples;
  if (!o.triples.empty()) {
    const std::string path = resolve(o.common, o.triples);
    triples = load_triples(path);
    manifest.add_input(path);
    manifest.config()["triples"] = o.triples;
  } else {
    if (o.brand.empty() || o.title.empty())
      throw ConfigError("generate needs --brand and --title (or --triples)");
    triples.push_back({o.brand, o.title, o.duration_s});
  }

  std::vector<ordered_json> rows(triples.size());
  parallel_for(triples.size(), o.common.workers, [&](std::size_t i) {
    GenerationParams params;
    params.temperature = o.temperature;
    params.max_tokens = o.max_tokens;
    params.seed = derive_seed(o.common.seed, "gen." + std::to_string(i));
    const SeedTriple& t = triples[i];
    GeneratedAd g = generate_ad(model, t.brand, t.title, t.duration_s, params);
    rows[i] = generation_json(g, t.brand, t.title, t.duration_s);
  });

  ordered_json body;
  body["schema"] = "generations/v1";
  body["records"] = rows;
  write_file(out, body.dump(2) + "\n");
  manifest.write(out);
  std::printf("generate: %zu script(s) -> %s\n", triples.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// seed run
// ---------------------------------------------------------------------------

struct SeedOpts {
  CommonOpts common;
  std::string model;
  std::string raw;
  std::string judge = "mock";
  std::string judge_model;
  std::string triples;
  std::string seed_high;
  std::string delta_test;
  std::string save_model;
  std::string config;
  int iterations = 1;
  int min_score = 65;
  bool include_seed_high = false;
  std::string task = "cs";
  double ratio = 0.5;
  double temperature = 0.8;
  int max_tokens = 0;
  TrainConfig train;
};

int run_seed(const SeedOpts& o) {
  Manifest manifest("seed run", o.common.seed);
  const std::string model_path = resolve(o.common, o.model);
  const std::string raw_path = resolve(o.common, o.raw);
  const std::string out = resolve(o.common, o.common.out);

  ModelHandle base = load_checkpoint(model_path);
  std::vector<AdRecord> raw = load_jsonl(raw_path);
  manifest.add_input(model_path);
  manifest.add_input(raw_path);
  if (!o.config.empty()) manifest.add_input(resolve(o.common, o.config));

  SeedConfig cfg;
  cfg.iterations = o.iterations;
  cfg.min_score = o.min_score;
  cfg.include_seed_high = o.include_seed_high;
  cfg.task_mix = mix_of(o.task, o.ratio);
  cfg.train = o.train;
  cfg.train.seed = o.common.seed;
  cfg.mask = mask_of(o.common);
  cfg.generation.temperature = o.temperature;
  cfg.generation.max_tokens = o.max_tokens;
  cfg.generation.seed = o.common.seed;
  cfg.seed = o.common.seed;

  if (!o.triples.empty()) {
    const std::string path = resolve(o.common, o.triples);
    cfg.eval_triples = load_triples(path);
    manifest.add_input(path);
  } else {
    cfg.eval_triples = default_triples(raw);
  }

  std::vector<AdRecord> seed_high;
  if (!o.seed_high.empty()) {
    const std::string path = resolve(o.common, o.seed_high);
    seed_high = load_jsonl(path);
    manifest.add_input(path);
  }
  if (!o.delta_test.empty()) {
    const std::string path = resolve(o.common, o.delta_test);
    cfg.delta_test = load_jsonl(path);
    manifest.add_input(path);
  }

  manifest.config()["raw"] = o.raw;
  manifest.config()["model"] = o.model;
  manifest.config()["judge"] = o.judge;
  manifest.config()["iterations"] = cfg.iterations;
  manifest.config()["min_score"] = cfg.min_score;
  manifest.config()["include_seed_high"] = cfg.include_seed_high;
  manifest.config()["task"] = to_string(cfg.task_mix.mode);
  manifest.config()["mixing_ratio"] = cfg.task_mix.mixing_ratio;
  manifest.config()["temperature"] = cfg.generation.temperature;
  manifest.config()["ablate"] = cfg.mask.excluded();
  manifest.config()["train"] = train_config_json(cfg.train);
  {
    ordered_json triples = ordered_json::array();
    for (const SeedTriple& t : cfg.eval_triples) {
      ordered_json j;
      j["brand"] = t.brand;
      j["title"] = t.title;
      j["duration_s"] = t.duration_s;
      triples.push_back(std::move(j));
    }
    manifest.config()["eval_triples"] = std::move(triples);
  }

  std::unique_ptr<JudgeClient> judge = make_judge(o.judge, resolve(o.common, o.judge_model));
  auto [model, report] = seed_iterate(base, raw, seed_high, *judge, cfg);

  write_file(out, to_json(report).dump(2) + "\n");
  if (!o.save_model.empty()) {
    const std::string path = resolve(o.common, o.save_model);
    save_checkpoint(model, path);
    manifest.config()["save_model"] = o.save_model;
  }
  manifest.write(out);
  std::printf("seed: %d iteration(s), baseline mean %.2f", cfg.iterations,
              report.baseline_mean_judge_score);
  for (const IterationReport& it : report.iterations)
    std::printf(" -> %.2f", it.mean_judge_score);
  std::printf(" -> %s\n", out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval perplexity
// ---------------------------------------------------------------------------

struct EvalOpts {
  CommonOpts common;
  std::string model;
  std::string data;
  std::string bands = "tercile";
};

int run_eval_perplexity(const EvalOpts& o) {
  Manifest manifest("eval perplexity", o.common.seed);
  const std::string model_path = resolve(o.common, o.model);
  const std::string data = resolve(o.common, o.data);
  const std::string out = resolve(o.common, o.common.out);
  const CategoryMask mask = mask_of(o.common);

  BandMode mode;
  if (o.bands == "tercile")
    mode = BandMode::tercile;
  else if (o.bands == "fixed")
    mode = BandMode::fixed;
  else
    throw ConfigError("unknown banding: '" + o.bands + "' (expected tercile or fixed)");

  ModelHandle model = load_checkpoint(model_path);
  std::vector<AdRecord> ads = load_jsonl(data);
  manifest.add_input(model_path);
  manifest.add_input(data);
  manifest.config()["model"] = o.model;
  manifest.config()["data"] = o.data;
  manifest.config()["bands"] = o.bands;
  manifest.config()["ablate"] = mask.excluded();

  StratifiedPerplexity p = stratified_perplexity(model, ads, mode, mask);

  ordered_json body;
  body["schema"] = "eval-report/v1";
  body["metric"] = "stratified_perplexity";
  body["bands"] = o.bands;
  body["values"]["low"] = p.low;
  body["values"]["medium"] = p.medium;
  body["values"]["high"] = p.high;
  body["counts"]["low"] = p.n_low;
  body["counts"]["medium"] = p.n_medium;
  body["counts"]["high"] = p.n_high;
  body["inputs"]["model"] = file_digest(model_path);
  body["inputs"]["data"] = file_digest(data);
  body["seed"] = o.common.seed;
  write_file(out, body.dump(2) + "\n");
  manifest.write(out);
  std::printf("eval perplexity (%s): low %.4f medium %.4f high %.4f -> %s\n", o.bands.c_str(),
              p.low, p.medium, p.high, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ad-memorability toolkit: scene cuts, verbalization, score prediction,"
               " script generation, self-rewarding curation, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  ScenesOpts scenes_opts;
  CLI::App* scenes = app.add_subcommand("scenes", "detect shot boundaries in an .fseq video");
  scenes->add_option("--video", scenes_opts.video, "frame-sequence file")->required();
  scenes->add_option("--threshold", scenes_opts.threshold, "cut threshold in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  scenes->add_option("--out", scenes_opts.common.out, "output spans JSON")
      ->default_val("spans.json");
  add_workdir(scenes, scenes_opts.common);
  add_seed(scenes, scenes_opts.common);

  VerbalizeOpts verb_opts;
  CLI::App* verbalize = app.add_subcommand("verbalize", "render records as prompts or scripts");
  verbalize->add_option("--data", verb_opts.data, "records JSONL")->required();
  verbalize->add_option("--kind", verb_opts.kind, "bs (score prompt), cs (script prompt), script");
  verbalize->add_option("--out", verb_opts.common.out, "output JSON")
      ->default_val("verbalized.json");
  add_workdir(verbalize, verb_opts.common);
  add_seed(verbalize, verb_opts.common);
  add_workers(verbalize, verb_opts.common);
  add_ablate(verbalize, verb_opts.common);

  TrainOpts train_opts;
  std::vector<ConfigKey> train_keys;
  CLI::App* train = app.add_subcommand("train", "train a model on verbalized records");
  CLI::Option* train_task =
      train->add_option("--task", train_opts.task, "bs | cs | mixed")->required();
  train->add_option("--data", train_opts.data, "training records JSONL")->required();
  train->add_option("--val", train_opts.val, "validation records JSONL");
  CLI::Option* train_ratio =
      train->add_option("--ratio", train_opts.ratio, "score-prediction fraction for mixed task");
  train->add_option("--out", train_opts.common.out, "checkpoint path")
      ->default_val("model.ckpt");
  train->add_option("--config", train_opts.config,
                    "key = value config file (flags override file, file overrides defaults)");
  add_train_flags(train, train_opts.train, train_keys, "");
  train_keys.push_back(string_key(train_task, "task", train_opts.task));
  train_keys.push_back(double_key(train_ratio, "ratio", train_opts.ratio));
  add_workdir(train, train_opts.common);
  add_seed(train, train_opts.common);
  add_ablate(train, train_opts.common);

  PredictOpts predict_opts;
  CLI::App* predict = app.add_subcommand("predict", "predict scores for records");
  predict->add_option("--model", predict_opts.model, "checkpoint path")->required();
  predict->add_option("--data", predict_opts.data, "records JSONL")->required();
  predict->add_option("--out", predict_opts.common.out, "output predictions JSON")
      ->default_val("predictions.json");
  add_workdir(predict, predict_opts.common);
  add_seed(predict, predict_opts.common);
  add_workers(predict, predict_opts.common);
  add_ablate(predict, predict_opts.common);

  GenerateOpts gen_opts;
  CLI::App* generate = app.add_subcommand("generate", "generate ad scripts");
  generate->add_option("--model", gen_opts.model, "checkpoint path")->required();
  generate->add_option("--brand", gen_opts.brand, "brand name");
  generate->add_option("--title", gen_opts.title, "ad title");
  generate->add_option("--duration", gen_opts.duration_s, "duration in seconds");
  generate->add_option("--triples", gen_opts.triples, "JSONL of {brand,title,duration_s}");
  generate->add_option("--temperature", gen_opts.temperature, "sampling temperature");
  generate->add_option("--max-tokens", gen_opts.max_tokens, "generation budget (0 = context)");
  generate->add_option("--out", gen_opts.common.out, "output generations JSON")
      ->default_val("generations.json");
  add_workdir(generate, gen_opts.common);
  add_seed(generate, gen_opts.common);
  add_workers(generate, gen_opts.common);

  SeedOpts seed_opts;
  std::vector<ConfigKey> seed_keys;
  CLI::App* seed = app.add_subcommand("seed", "self-rewarding curation loop");
  CLI::App* seed_run = seed->add_subcommand("run", "label, curate, fine-tune, evaluate");
  seed->require_subcommand(1);
  seed_run->add_option("--model", seed_opts.model, "base checkpoint")->required();
  seed_run->add_option("--raw", seed_opts.raw, "unscored records JSONL")->required();
  CLI::Option* s_iter =
      seed_run->add_option("--iterations", seed_opts.iterations, "loop iterations");
  CLI::Option* s_judge = seed_run->add_option("--judge", seed_opts.judge, "mock | local | http");
  seed_run->add_option("--judge-model", seed_opts.judge_model,
                       "checkpoint backing --judge local");
  CLI::Option* s_min =
      seed_run->add_option("--min-score", seed_opts.min_score, "keep only scores strictly above");
  CLI::Option* s_high =
      seed_run->add_flag("--include-seed-high", seed_opts.include_seed_high,
                         "fold high-band records from --seed-high into fine-tuning");
  seed_run->add_option("--seed-high", seed_opts.seed_high, "scored records JSONL for the fold");
  CLI::Option* s_task =
      seed_run->add_option("--task", seed_opts.task, "fine-tuning task: bs | cs | mixed");
  CLI::Option* s_ratio =
      seed_run->add_option("--ratio", seed_opts.ratio, "score-prediction fraction for mixed task");
  seed_run->add_option("--triples", seed_opts.triples,
                       "held-out {brand,title,duration_s} JSONL for fresh generations");
  seed_run->add_option("--delta-test", seed_opts.delta_test, "scored records JSONL for the delta table");
  CLI::Option* s_temp =
      seed_run->add_option("--temperature", seed_opts.temperature, "generation temperature");
  CLI::Option* s_max =
      seed_run->add_option("--max-tokens", seed_opts.max_tokens, "generation budget (0 = context)");
  seed_run->add_option("--save-model", seed_opts.save_model, "write the final checkpoint here");
  seed_run->add_option("--out", seed_opts.common.out, "output report JSON")
      ->default_val("seed.report.json");
  seed_run->add_option("--config", seed_opts.config,
                       "key = value config file (flags override file, file overrides defaults)");
  add_train_flags(seed_run, seed_opts.train, seed_keys, "train.");
  seed_keys.push_back(int_key(s_iter, "iterations", seed_opts.iterations));
  seed_keys.push_back(string_key(s_judge, "judge", seed_opts.judge));
  seed_keys.push_back(int_key(s_min, "min_score", seed_opts.min_score));
  seed_keys.push_back(bool_key(s_high, "include_seed_high", seed_opts.include_seed_high));
  seed_keys.push_back(string_key(s_task, "task", seed_opts.task));
  seed_keys.push_back(double_key(s_ratio, "ratio", seed_opts.ratio));
  seed_keys.push_back(double_key(s_temp, "temperature", seed_opts.temperature));
  seed_keys.push_back(int_key(s_max, "max_tokens", seed_opts.max_tokens));
  add_workdir(seed_run, seed_opts.common);
  add_seed(seed_run, seed_opts.common);
  add_ablate(seed_run, seed_opts.common);

  EvalOpts eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "evaluation metrics");
  CLI::App* eval_ppl = eval->add_subcommand("perplexity", "band-stratified script perplexity");
  eval->require_subcommand(1);
  eval_ppl->add_option("--model", eval_opts.model, "checkpoint path")->required();
  eval_ppl->add_option("--data", eval_opts.data, "scored records JSONL")->required();
  eval_ppl->add_option("--bands", eval_opts.bands, "tercile | fixed");
  eval_ppl->add_option("--out", eval_opts.common.out, "output report JSON")
      ->default_val("eval.report.json");
  add_workdir(eval_ppl, eval_opts.common);
  add_seed(eval_ppl, eval_opts.common);
  add_ablate(eval_ppl, eval_opts.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 2;
  }

  try {
    if (*scenes) return run_scenes(scenes_opts);
    if (*verbalize) return run_verbalize(verb_opts);
    if (*train) {
      if (!train_opts.config.empty())
        apply_config_file(resolve(train_opts.common, train_opts.config), train_keys);
      train_opts.train.seed = train_opts.common.seed;
      return run_train(train_opts);
    }
    if (*predict) return run_predict(predict_opts);
    if (*generate) return run_generate(gen_opts);
    if (*seed_run) {
      if (!seed_opts.config.empty())
        apply_config_file(resolve(seed_opts.common, seed_opts.config), seed_keys);
      return run_seed(seed_opts);
    }
    if (*eval_ppl) return run_eval_perplexity(eval_opts);
    std::fprintf(stderr, "no command selected\n");
    return 2;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
    return 4;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
