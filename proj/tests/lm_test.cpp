#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "memseed/lm.hpp"
#include "support/builders.hpp"

using namespace memseed;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.context_limit = 64;
  cfg.dropout = 0.0;
  cfg.warmup_steps = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  cfg.seed = 7;
  return cfg;
}

// A bare ten-token vocabulary ("0".."9") for closed-form perplexity checks.
Vocab digits_only_vocab() {
  Vocab v;
  for (int d = 0; d < 10; ++d) {
    v.tokens.push_back(std::string(1, static_cast<char>('0' + d)));
    v.digit_ids[static_cast<std::size_t>(d)] = d;
  }
  for (int i = 0; i < 10; ++i) v.index.emplace(v.tokens[static_cast<std::size_t>(i)], i);
  return v;
}

// Randomize the output head so distributions stop being uniform (the body
// weights already carry seeded noise from initialization).
void roughen(ModelHandle& m, std::uint64_t seed) {
  Rng rng(seed);
  auto& p = m.mutable_params();
  for (Eigen::Index i = 0; i < p.w_out.size(); ++i) p.w_out.data()[i] = 0.5 * rng.normal();
  for (Eigen::Index i = 0; i < p.b_out.size(); ++i) p.b_out.data()[i] = 0.1 * rng.normal();
}

std::vector<int> random_ids(Rng& rng, int vocab_size, int len) {
  std::vector<int> out;
  for (int i = 0; i < len; ++i)
    out.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab_size))));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokenizer.
// ---------------------------------------------------------------------------

TEST_CASE("tokenizer keeps digits bare and attaches spaces to words") {
  Vocab v = build_vocab({"score 71 now\nbuy it, now", "cafe costs 9.50"});
  // "71" -> single digit tokens.
  std::vector<int> ids = tokenize("71", v);
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.digit_id(7));
  CHECK(ids[1] == v.digit_id(1));
  CHECK(tokenize("", v).empty());

  // Specials first, then the ten digits, then sorted pieces.
  CHECK(v.tokens[0] == "<bot>");
  CHECK(v.tokens[1] == "<eot>");
  CHECK(v.tokens[2] == "<unk>");
  for (int d = 0; d < 10; ++d) CHECK(v.tokens[static_cast<std::size_t>(3 + d)] == std::string(1, static_cast<char>('0' + d)));
  for (std::size_t i = 14; i < v.tokens.size(); ++i) CHECK(v.tokens[i - 1] < v.tokens[i]);

  // Space attaches to letter runs, not digits; newline is its own token.
  auto pieces = detail::split_pieces("score 71 now\nx");
  CHECK(pieces == std::vector<std::string>{"score", " ", "7", "1", " now", "\n", "x"});
  auto pieces2 = detail::split_pieces("a  b");
  CHECK(pieces2 == std::vector<std::string>{"a", " ", " b"});
}

TEST_CASE("tokenizer round-trips losslessly") {
  const std::string corpus1 = "The ad is shot in landscape orientation, at a medium pace.";
  const std::string corpus2 = "Scene 1: The scene shows a red ball.\nTags: ball, toy";
  Vocab v = build_vocab({corpus1, corpus2});
  for (const std::string& text : {corpus1, corpus2, std::string("Tags: ball, toy 42")}) {
    std::vector<int> ids = tokenize(text, v);
    CHECK(detokenize(ids, v) == text);
    CHECK(tokenize(detokenize(ids, v), v) == ids);
  }
  // Unknown pieces map to <unk>.
  std::vector<int> unk = tokenize("zzz-unknown", v);
  CHECK(std::count(unk.begin(), unk.end(), Vocab::kUnk) >= 1);
}

// ---------------------------------------------------------------------------
// Gradients vs central finite differences.
// ---------------------------------------------------------------------------

TEST_CASE("analytic gradients match finite differences") {
  Vocab v = build_vocab({"a b c d", "e f 1 2"});
  TrainConfig cfg = tiny_config();
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.context_limit = 8;
  ModelHandle m = initialize_model(v, cfg);
  roughen(m, 99);

  TokenPair pair;
  pair.prompt = tokenize("a b", v);
  pair.target = tokenize(" c 1", v);
  detail::PackedPair pp = detail::pack_pair(pair, cfg.context_limit, 0);

  // Analytic gradients (loss summed over target tokens; no dropout).
  detail::ForwardCache cache;
  Eigen::MatrixXd dlogits;
  detail::pair_loss(m.dims(), m.params(), pp, &cache, nullptr, 0.0, &dlogits);
  detail::Params grads = detail::Params::zeros(m.dims());
  detail::backward(m.dims(), m.params(), cache, dlogits, grads);

  std::vector<std::pair<double*, Eigen::Index>> param_spans, grad_spans;
  m.mutable_params().for_each(
      [&](double* p, Eigen::Index n) { param_spans.emplace_back(p, n); });
  grads.for_each([&](double* p, Eigen::Index n) { grad_spans.emplace_back(p, n); });

  const double h = 1e-5;
  Rng pick(1234);
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t s = 0; s < param_spans.size(); ++s) {
    const Eigen::Index n = param_spans[s].second;
    // Sample a handful of coordinates per tensor (all for small tensors).
    const Eigen::Index samples = std::min<Eigen::Index>(n, 6);
    for (Eigen::Index k = 0; k < samples; ++k) {
      const Eigen::Index i =
          (n <= 6) ? k : static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(n)));
      double* slot = param_spans[s].first + i;
      const double saved = *slot;
      *slot = saved + h;
      const double up = detail::pair_loss(m.dims(), m.params(), pp, nullptr, nullptr, 0.0, nullptr);
      *slot = saved - h;
      const double dn = detail::pair_loss(m.dims(), m.params(), pp, nullptr, nullptr, 0.0, nullptr);
      *slot = saved;
      const double numeric = (up - dn) / (2.0 * h);
      const double analytic = grad_spans[s].first[i];
      const double denom = std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
      ++checked;
    }
  }
  INFO("coordinates checked: " << checked << ", worst relative error: " << worst);
  CHECK(checked > 100);
  CHECK(worst < 1e-5);
}

// ---------------------------------------------------------------------------
// Distributions and likelihoods.
// ---------------------------------------------------------------------------

TEST_CASE("untrained model is exactly uniform and all distributions normalize") {
  Vocab v = build_vocab({"alpha beta gamma 7"});
  ModelHandle fresh = initialize_model(v, tiny_config());

  std::vector<double> lp = next_token_logprobs(fresh, tokenize("alpha", v));
  double mx = -1e300, mn = 1e300, sum = 0.0;
  for (double x : lp) {
    mx = std::max(mx, std::exp(x));
    mn = std::min(mn, std::exp(x));
    sum += std::exp(x);
  }
  CHECK(mx / mn == 1.0);  // zero output head -> exactly uniform
  CHECK(std::abs(sum - 1.0) <= 1e-12);

  ModelHandle rough = fresh;
  roughen(rough, 5);
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<int> prefix = random_ids(rng, v.size(), 1 + static_cast<int>(rng.below(10)));
    std::vector<double> lp2 = next_token_logprobs(rough, prefix);
    long double s = 0.0L;
    for (double x : lp2) s += std::exp(static_cast<long double>(x));
    CHECK(std::abs(static_cast<double>(s) - 1.0) <= 1e-12);
  }

  CHECK_THROWS_AS(next_token_logprobs(fresh, {}), ValidationError);
  std::vector<int> too_long(static_cast<std::size_t>(fresh.dims().context_limit) + 1, 3);
  CHECK_THROWS_AS(next_token_logprobs(fresh, too_long), SizingError);
}

TEST_CASE("loglikelihood matches a token-by-token brute-force oracle") {
  Rng rng(2024);
  for (std::uint64_t model_seed : {11ULL, 22ULL, 33ULL}) {
    Vocab v = build_vocab({"a b c d e f g h 1 2 3"});
    TrainConfig cfg = tiny_config();
    cfg.seed = model_seed;
    ModelHandle m = initialize_model(v, cfg);
    roughen(m, model_seed * 101);

    for (int trial = 0; trial < 6; ++trial) {
      std::vector<int> x = random_ids(rng, v.size(), 1 + static_cast<int>(rng.below(6)));
      std::vector<int> y = random_ids(rng, v.size(), 1 + static_cast<int>(rng.below(6)));
      const double fast = loglikelihood(m, x, y);

      // Oracle: separate forward per target token via next_token_logprobs.
      double slow = 0.0;
      std::vector<int> prefix = x;
      for (int tok : y) {
        slow += next_token_logprobs(m, prefix)[static_cast<std::size_t>(tok)];
        prefix.push_back(tok);
      }
      CHECK(std::abs(fast - slow) <= 1e-9 * std::max(1.0, std::abs(slow)));
      CHECK(fast <= 0.0);
    }
  }
}

TEST_CASE("loglikelihood validates inputs and honors closed forms") {
  Vocab v = build_vocab({"p q r"});
  ModelHandle m = initialize_model(v, tiny_config());
  CHECK_THROWS_AS(loglikelihood(m, {3}, {}), ValidationError);

  // Uniform model: |y| = m tokens -> m * log(1/V).
  const int V = v.size();
  std::vector<int> y = {3, 4, 5};
  const double expected = -3.0 * std::log(static_cast<double>(V));
  CHECK(loglikelihood(m, {Vocab::kBot}, y) == Catch::Approx(expected).epsilon(1e-12));
  // Empty x conditions on <bot>.
  CHECK(loglikelihood(m, {}, y) == Catch::Approx(expected).epsilon(1e-12));

  std::vector<int> long_y(100, 3);
  CHECK_THROWS_AS(loglikelihood(m, {3}, long_y), SizingError);
}

TEST_CASE("uniform model over ten tokens has perplexity exactly ten") {
  Vocab v = digits_only_vocab();
  TrainConfig cfg = tiny_config();
  cfg.d_model = 8;
  ModelHandle m = initialize_model(v, cfg);

  Rng rng(3);
  std::vector<std::vector<int>> docs;
  for (int i = 0; i < 50; ++i) docs.push_back(random_ids(rng, 10, 1 + static_cast<int>(rng.below(8))));
  const double ppl = perplexity(m, docs);
  CHECK(ppl == 10.0);  // exact, not approximate

  CHECK_THROWS_AS(perplexity(m, {}), ValidationError);
  CHECK_THROWS_AS(perplexity(m, {{1, 2}, {}}), ValidationError);
}

TEST_CASE("perplexity equals the hand-computed token-weighted mean") {
  Vocab v = build_vocab({"m n o p"});
  TrainConfig cfg = tiny_config();
  ModelHandle m = initialize_model(v, cfg);
  roughen(m, 42);

  std::vector<std::vector<int>> docs = {{3, 5}, {4, 6, 7}};
  long double total = 0.0L;
  std::size_t n_tokens = 0;
  for (const auto& doc : docs) {
    std::vector<int> prefix = {Vocab::kBot};
    for (int tok : doc) {
      total += next_token_logprobs(m, prefix)[static_cast<std::size_t>(tok)];
      prefix.push_back(tok);
      ++n_tokens;
    }
  }
  const double oracle = std::exp(static_cast<double>(-total / static_cast<long double>(n_tokens)));
  CHECK(perplexity(m, docs) == Catch::Approx(oracle).epsilon(1e-9));
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

TEST_CASE("training memorizes a single association") {
  Vocab v = build_vocab({"ab c"});
  TrainConfig cfg = tiny_config();
  cfg.epochs = 150;
  cfg.batch_size = 1;
  cfg.warmup_steps = 10;

  TokenPair pair{tokenize("ab", v), tokenize(" c", v)};
  ModelHandle m = train({pair}, v, cfg);

  std::vector<int> prefix = {Vocab::kBot};
  for (int id : pair.prompt) prefix.push_back(id);
  std::vector<double> lp = next_token_logprobs(m, prefix);
  const int target = pair.target[0];
  CHECK(std::exp(lp[static_cast<std::size_t>(target)]) > 0.99);
  CHECK(m.metadata()["final_loss"].get<double>() <= m.metadata()["initial_loss"].get<double>());
}

TEST_CASE("training loss is monotone over epochs on a repeated pair") {
  Vocab v = build_vocab({"marker answer"});
  TokenPair pair{tokenize("marker", v), tokenize(" answer", v)};
  std::vector<TokenPair> pairs(4, pair);

  double prev = 1e300;
  for (int epochs : {1, 2, 4, 8, 16}) {
    TrainConfig cfg = tiny_config();
    cfg.epochs = epochs;
    ModelHandle m = train(pairs, v, cfg);
    const double loss = evaluate_loss(m, pairs);
    CHECK(loss <= prev + 1e-6);
    prev = loss;
  }
}

TEST_CASE("training validates its configuration and corpus") {
  Vocab v = build_vocab({"x y"});
  TokenPair pair{tokenize("x", v), tokenize(" y", v)};
  CHECK_THROWS_AS(train({}, v, tiny_config()), ConfigError);

  TrainConfig bad = tiny_config();
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train({pair}, v, bad), ConfigError);
  bad = tiny_config();
  bad.dropout = 1.0;
  CHECK_THROWS_AS(train({pair}, v, bad), ConfigError);
  bad = tiny_config();
  bad.d_model = 10;
  bad.n_heads = 4;  // not divisible
  CHECK_THROWS_AS(train({pair}, v, bad), ConfigError);

  TrainConfig small = tiny_config();
  small.context_limit = 4;
  TokenPair huge{tokenize("x y x y x y", v), tokenize(" y", v)};
  CHECK_THROWS_AS(train({huge}, v, small), SizingError);

  TokenPair empty_target{tokenize("x", v), {}};
  CHECK_THROWS_AS(train({empty_target}, v, tiny_config()), ValidationError);
}

TEST_CASE("same seed and config produce byte-identical checkpoints") {
  Vocab v = build_vocab({"one two three 4"});
  std::vector<TokenPair> pairs = {
      {tokenize("one", v), tokenize(" two", v)},
      {tokenize("two", v), tokenize(" three", v)},
      {tokenize("three", v), tokenize("4", v)},
  };
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.dropout = 0.1;  // exercise the seeded dropout stream too

  ModelHandle a = train(pairs, v, cfg);
  ModelHandle b = train(pairs, v, cfg);
  const std::string pa = "/tmp/memseed_ckpt_a.bin", pb = "/tmp/memseed_ckpt_b.bin";
  save_checkpoint(a, pa);
  save_checkpoint(b, pb);
  CHECK(read_file(pa) == read_file(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

// ---------------------------------------------------------------------------
// Decoding.
// ---------------------------------------------------------------------------

TEST_CASE("incremental decoding agrees with the batched forward pass") {
  Vocab v = build_vocab({"u v w x y z 5"});
  ModelHandle m = initialize_model(v, tiny_config());
  roughen(m, 314);

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> prefix = random_ids(rng, v.size(), 3 + static_cast<int>(rng.below(8)));

    Decoder dec(m);
    Eigen::RowVectorXd logits = dec.prime({prefix[0]});
    for (std::size_t i = 1; i < prefix.size(); ++i) logits = dec.step(prefix[i]);

    std::vector<double> batched = next_token_logprobs(m, prefix);
    const long double lse = detail::logsumexp_row(logits);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double incremental = static_cast<double>(static_cast<long double>(logits(i)) - lse);
      CHECK(std::abs(incremental - batched[static_cast<std::size_t>(i)]) <= 1e-9);
    }
  }
}

TEST_CASE("constrained decoding always yields a valid two-digit score") {
  Vocab v = build_vocab({"some prompt words 3"});
  ModelHandle fresh = initialize_model(v, tiny_config());

  // Exactly uniform logits: argmax tie resolves to the lowest digit -> 00.
  CHECK(constrained_score(fresh, tokenize("some prompt", v)) == 0);
  // Expectation mode on uniform digits: 10*4.5 + 4.5 -> 50.
  CHECK(constrained_score(fresh, tokenize("some prompt", v), ScoreMode::expectation) == 50);

  ModelHandle rough = fresh;
  roughen(rough, 77);
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> prompt = random_ids(rng, v.size(), 1 + static_cast<int>(rng.below(12)));
    const int s = constrained_score(rough, prompt);
    CHECK(s >= 0);
    CHECK(s <= 99);
  }

  // The masked distribution is a real distribution.
  std::vector<double> lp = next_token_logprobs(rough, tokenize("words", v));
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(lp.size()));
  for (std::size_t i = 0; i < lp.size(); ++i) row(static_cast<Eigen::Index>(i)) = lp[i];
  std::array<double, 10> dist = digit_distribution(row, v);
  double sum = 0.0;
  for (double p : dist) sum += p;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("generation is greedy at temperature zero and seeded otherwise") {
  Vocab v = build_vocab({"go stop now"});
  TrainConfig cfg = tiny_config();
  cfg.epochs = 200;
  cfg.batch_size = 1;
  TokenPair pair{tokenize("go", v), tokenize(" stop now", v)};
  ModelHandle m = train({pair}, v, cfg);

  std::vector<int> prompt;
  prompt.push_back(Vocab::kBot);
  for (int id : pair.prompt) prompt.push_back(id);
  std::vector<int> out = generate(m, prompt, 20, 0.0, 1);
  CHECK(out == pair.target);  // stops at <eot> after the memorized target
  CHECK(detokenize(out, v) == " stop now");

  CHECK(generate(m, prompt, 0, 0.0, 1).empty());
  CHECK(generate(m, prompt, 20, 0.0, 5) == generate(m, prompt, 20, 0.0, 9));
  CHECK(generate(m, prompt, 20, 0.8, 123) == generate(m, prompt, 20, 0.8, 123));
  CHECK_THROWS_AS(generate(m, prompt, 5, -0.1, 1), ValidationError);
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

TEST_CASE("checkpoints round-trip distributions bit-exactly") {
  Vocab v = build_vocab({"alpha beta 9 gamma"});
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  std::vector<TokenPair> pairs = {{tokenize("alpha", v), tokenize(" beta", v)}};
  ModelHandle m = train(pairs, v, cfg);

  const std::string path = "/tmp/memseed_ckpt_rt.bin";
  save_checkpoint(m, path);
  ModelHandle loaded = load_checkpoint(path);
  CHECK(loaded.vocab().tokens == m.vocab().tokens);
  CHECK(loaded.dims() == m.dims());
  CHECK(loaded.metadata() == m.metadata());

  Rng rng(666);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> prefix = random_ids(rng, v.size(), 1 + static_cast<int>(rng.below(10)));
    std::vector<double> a = next_token_logprobs(m, prefix);
    std::vector<double> b = next_token_logprobs(loaded, prefix);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loading rejects corruption and wrong vocabularies") {
  Vocab v = build_vocab({"aa bb"});
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  ModelHandle m = train({{tokenize("aa", v), tokenize(" bb", v)}}, v, cfg);
  const std::string path = "/tmp/memseed_ckpt_bad.bin";
  save_checkpoint(m, path);
  const std::string blob = read_file(path);

  write_file(path, "NOT-A-CHECKPOINT" + blob);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  write_file(path, blob.substr(0, blob.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  write_file(path, blob + "junk");
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  write_file(path, blob);
  std::vector<std::string> other_tokens = v.tokens;
  other_tokens.push_back("extra");
  CHECK_THROWS_AS(load_checkpoint_checked(path, other_tokens), ValidationError);
  CHECK(load_checkpoint_checked(path, v.tokens).vocab().tokens == v.tokens);
  std::remove(path.c_str());
}

TEST_CASE("fine-tuning starts from the initial model's parameters") {
  Vocab v = build_vocab({"cue one cue two"});
  TrainConfig cfg = tiny_config();
  cfg.epochs = 60;
  cfg.batch_size = 1;
  ModelHandle base = train({{tokenize("cue", v), tokenize(" one", v)}}, v, cfg);

  TrainConfig ft = cfg;
  ft.epochs = 5;
  ft.learning_rate = 1e-3;
  ModelHandle tuned = train({{tokenize("cue", v), tokenize(" one", v)}}, Vocab{}, ft, &base);
  CHECK(tuned.metadata()["fine_tuned"].get<bool>());
  // Starting from the memorized model, the initial loss is already tiny.
  CHECK(tuned.metadata()["initial_loss"].get<double>() ==
        Catch::Approx(base.metadata()["final_loss"].get<double>()).margin(1e-9));

  Vocab wrong = build_vocab({"entirely different words"});
  CHECK_THROWS_AS(train({{tokenize("cue", v), tokenize(" one", v)}}, wrong, ft, &base),
                  ConfigError);
}
