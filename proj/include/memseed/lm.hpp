// Compact trainable autoregressive language model over a closed vocabulary.
//
// The model is a small pre-LN transformer decoder (token + learned positional
// embeddings, multi-head causal attention, GELU MLP, untied output head)
// trained from scratch with manual backprop on one CPU core. It exposes:
//
//   * build_vocab / tokenize / detokenize — lossless word-piece tokenizer
//     with single-character digit tokens (the numeric mask needs them)
//   * train                 — full-vocabulary cross-entropy on target tokens
//   * next_token_logprobs   — per-token distribution access
//   * loglikelihood         — sum log P(y_i | x, y_<i) in one forward pass
//   * perplexity            — exp of token-weighted mean NLL over documents
//   * generate              — greedy/temperature sampling with KV cache
//   * constrained_score     — two digit steps masked to the ten digit tokens
//   * save / load           — byte-stable checkpoints
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "memseed/common.hpp"

namespace memseed {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer.
// ---------------------------------------------------------------------------

struct Vocab {
  static constexpr int kBot = 0;  // "<bot>"
  static constexpr int kEot = 1;  // "<eot>"
  static constexpr int kUnk = 2;  // "<unk>"

  std::vector<std::string> tokens;  // id -> token string
  std::unordered_map<std::string, int> index;
  std::array<int, 10> digit_ids{};  // ids of "0".."9"

  int size() const { return static_cast<int>(tokens.size()); }
  int digit_id(int d) const { return digit_ids[static_cast<std::size_t>(d)]; }

  int id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
  }

  bool operator==(const Vocab& o) const { return tokens == o.tokens; }
};

namespace detail {

inline bool is_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

// Lossless piece split. Rules:
//   * digits are always bare single-character pieces,
//   * a space attaches to an immediately following letter run (" word"),
//   * newline and standalone space are their own pieces,
//   * any other character is a single-character piece.
// Concatenating the pieces reproduces the input byte for byte.
inline std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == ' ' && i + 1 < n && is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      std::size_t j = i + 1;
      while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(text.substr(i, 1));
      ++i;
    }
  }
  return out;
}

}  // namespace detail

// Vocabulary over a text corpus: specials, the ten digits, then every other
// discovered piece in lexicographic order (stable across runs).
inline Vocab build_vocab(const std::vector<std::string>& texts) {
  Vocab v;
  v.tokens = {"<bot>", "<eot>", "<unk>"};
  for (int d = 0; d < 10; ++d) v.tokens.push_back(std::string(1, static_cast<char>('0' + d)));
  std::map<std::string, bool> discovered;
  for (const auto& t : texts)
    for (auto& piece : detail::split_pieces(t)) discovered.emplace(std::move(piece), true);
  for (const auto& [piece, _] : discovered) {
    if (piece.size() == 1 && piece[0] >= '0' && piece[0] <= '9') continue;  // already present
    v.tokens.push_back(piece);
  }
  for (int i = 0; i < v.size(); ++i) v.index.emplace(v.tokens[i], i);
  for (int d = 0; d < 10; ++d) v.digit_ids[d] = v.index.at(std::string(1, static_cast<char>('0' + d)));
  return v;
}

inline std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& piece : detail::split_pieces(text)) ids.push_back(vocab.id_of(piece));
  return ids;
}

// Concatenation of token strings; special tokens render as nothing. The
// inverse property tokenize(detokenize(s)) == s holds for tokenizer-produced
// sequences (arbitrary id sequences can abut two letter runs, which would
// re-tokenize as one piece).
inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size())
      throw ValidationError("detokenize: token id out of range: " + std::to_string(id));
    if (id == Vocab::kBot || id == Vocab::kEot || id == Vocab::kUnk) continue;
    out += vocab.tokens[static_cast<std::size_t>(id)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  // Optimization.
  double learning_rate = 3e-3;
  int epochs = 8;
  int batch_size = 8;
  int warmup_steps = 20;
  double dropout = 0.25;  // residual dropout on attention/MLP branch outputs
  double grad_clip = 1.0; // global-norm clip; 0 disables
  std::uint64_t seed = 1;
  // Model shape (used when training from scratch; an init handle wins).
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int context_limit = 512;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (c.epochs <= 0) throw ConfigError("epochs must be positive");
  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (c.warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
  if (c.grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
  if (c.d_model <= 0 || c.n_heads <= 0 || c.n_layers <= 0 || c.context_limit <= 0)
    throw ConfigError("model dimensions must be positive");
  if (c.d_model % c.n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

struct ModelDims {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_layers = 0;
  int context_limit = 0;
  int d_head() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }
  bool operator==(const ModelDims&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

namespace detail {

struct LayerParams {
  Eigen::VectorXd ln1_g, ln1_b;
  Eigen::MatrixXd w_qkv;  // d x 3d
  Eigen::VectorXd b_qkv;  // 3d
  Eigen::MatrixXd w_o;    // d x d
  Eigen::VectorXd b_o;    // d
  Eigen::VectorXd ln2_g, ln2_b;
  Eigen::MatrixXd w1;  // d x 4d
  Eigen::VectorXd b1;  // 4d
  Eigen::MatrixXd w2;  // 4d x d
  Eigen::VectorXd b2;  // d
};

struct Params {
  Eigen::MatrixXd tok_emb;  // V x d
  Eigen::MatrixXd pos_emb;  // C x d
  std::vector<LayerParams> layers;
  Eigen::VectorXd lnf_g, lnf_b;
  Eigen::MatrixXd w_out;  // d x V
  Eigen::VectorXd b_out;  // V

  // Visits every tensor in the fixed serialization order.
  template <class F>
  void for_each(F&& f) {
    f(tok_emb.data(), tok_emb.size());
    f(pos_emb.data(), pos_emb.size());
    for (auto& l : layers) {
      f(l.ln1_g.data(), l.ln1_g.size());
      f(l.ln1_b.data(), l.ln1_b.size());
      f(l.w_qkv.data(), l.w_qkv.size());
      f(l.b_qkv.data(), l.b_qkv.size());
      f(l.w_o.data(), l.w_o.size());
      f(l.b_o.data(), l.b_o.size());
      f(l.ln2_g.data(), l.ln2_g.size());
      f(l.ln2_b.data(), l.ln2_b.size());
      f(l.w1.data(), l.w1.size());
      f(l.b1.data(), l.b1.size());
      f(l.w2.data(), l.w2.size());
      f(l.b2.data(), l.b2.size());
    }
    f(lnf_g.data(), lnf_g.size());
    f(lnf_b.data(), lnf_b.size());
    f(w_out.data(), w_out.size());
    f(b_out.data(), b_out.size());
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<Params*>(this)->for_each([&](double* p, Eigen::Index n) {
      f(static_cast<const double*>(p), n);
    });
  }

  static Params zeros(const ModelDims& d) {
    Params p;
    p.tok_emb = Eigen::MatrixXd::Zero(d.vocab_size, d.d_model);
    p.pos_emb = Eigen::MatrixXd::Zero(d.context_limit, d.d_model);
    p.layers.resize(static_cast<std::size_t>(d.n_layers));
    for (auto& l : p.layers) {
      l.ln1_g = Eigen::VectorXd::Zero(d.d_model);
      l.ln1_b = Eigen::VectorXd::Zero(d.d_model);
      l.w_qkv = Eigen::MatrixXd::Zero(d.d_model, 3 * d.d_model);
      l.b_qkv = Eigen::VectorXd::Zero(3 * d.d_model);
      l.w_o = Eigen::MatrixXd::Zero(d.d_model, d.d_model);
      l.b_o = Eigen::VectorXd::Zero(d.d_model);
      l.ln2_g = Eigen::VectorXd::Zero(d.d_model);
      l.ln2_b = Eigen::VectorXd::Zero(d.d_model);
      l.w1 = Eigen::MatrixXd::Zero(d.d_model, d.d_ff());
      l.b1 = Eigen::VectorXd::Zero(d.d_ff());
      l.w2 = Eigen::MatrixXd::Zero(d.d_ff(), d.d_model);
      l.b2 = Eigen::VectorXd::Zero(d.d_model);
    }
    p.lnf_g = Eigen::VectorXd::Zero(d.d_model);
    p.lnf_b = Eigen::VectorXd::Zero(d.d_model);
    p.w_out = Eigen::MatrixXd::Zero(d.d_model, d.vocab_size);
    p.b_out = Eigen::VectorXd::Zero(d.vocab_size);
    return p;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&](const double*, Eigen::Index m) { n += static_cast<std::size_t>(m); });
    return n;
  }
};

inline Params init_params(const ModelDims& d, std::uint64_t seed) {
  Params p = Params::zeros(d);
  Rng rng(derive_seed(seed, "init"));
  auto fill_normal = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.02 * rng.normal();
  };
  fill_normal(p.tok_emb);
  fill_normal(p.pos_emb);
  for (auto& l : p.layers) {
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
    fill_normal(l.w_qkv);
    fill_normal(l.w_o);
    fill_normal(l.w1);
    fill_normal(l.w2);
  }
  p.lnf_g.setOnes();
  // w_out/b_out stay zero: a fresh model's next-token distribution is exactly
  // uniform, which the perplexity and decoding oracles rely on.
  return p;
}

constexpr double kLnEps = 1e-5;

}  // namespace detail

// ---------------------------------------------------------------------------
// Model handle.
// ---------------------------------------------------------------------------

class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(Vocab vocab, ModelDims dims, detail::Params params, ordered_json metadata)
      : vocab_(std::move(vocab)),
        dims_(dims),
        params_(std::move(params)),
        metadata_(std::move(metadata)) {}

  const Vocab& vocab() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  const ordered_json& metadata() const { return metadata_; }
  const detail::Params& params() const { return params_; }
  detail::Params& mutable_params() { return params_; }
  ordered_json& mutable_metadata() { return metadata_; }
  bool empty() const { return dims_.vocab_size == 0; }

 private:
  Vocab vocab_;
  ModelDims dims_;
  detail::Params params_;
  ordered_json metadata_;
};

// ---------------------------------------------------------------------------
// Forward pass (batched) with optional training cache.
// ---------------------------------------------------------------------------

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// Row-wise layer norm. Returns the normalized rows (pre gamma/beta) and the
// inverse std per row for the backward pass.
inline Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                                  const Eigen::VectorXd& b, Eigen::MatrixXd* xhat_out,
                                  Eigen::VectorXd* inv_std_out) {
  const Eigen::Index T = x.rows(), d = x.cols();
  Eigen::MatrixXd out(T, d);
  Eigen::MatrixXd xhat(T, d);
  Eigen::VectorXd inv_std(T);
  for (Eigen::Index i = 0; i < T; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * is;
    out.row(i) = xhat.row(i).cwiseProduct(g.transpose()) + b.transpose();
    inv_std(i) = is;
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return out;
}

// Backward through layer norm given cached xhat and inv_std.
inline Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                           const Eigen::VectorXd& inv_std, const Eigen::VectorXd& g,
                                           Eigen::VectorXd& dg, Eigen::VectorXd& db) {
  const Eigen::Index T = dy.rows(), d = dy.cols();
  Eigen::MatrixXd dx(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    dg += dy.row(i).cwiseProduct(xhat.row(i)).transpose();
    db += dy.row(i).transpose();
    const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(g.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

struct LayerCache {
  Eigen::MatrixXd block_in;                // T x d, input to the attention block
  Eigen::MatrixXd ln1_xhat;                // T x d
  Eigen::VectorXd ln1_inv_std;             // T
  Eigen::MatrixXd qkv;                     // T x 3d
  std::vector<Eigen::MatrixXd> attn;       // per head, T x T lower-triangular
  Eigen::MatrixXd attn_concat;             // T x d, before the output projection
  Eigen::MatrixXd attn_drop;               // T x d mask (empty when dropout off)
  Eigen::MatrixXd mid;                     // T x d, input to the MLP block
  Eigen::MatrixXd ln2_xhat;                // T x d
  Eigen::VectorXd ln2_inv_std;             // T
  Eigen::MatrixXd mlp_pre;                 // T x 4d
  Eigen::MatrixXd mlp_act;                 // T x 4d
  Eigen::MatrixXd mlp_drop;                // T x d mask
};

struct ForwardCache {
  std::vector<int> ids;
  Eigen::MatrixXd x0;  // T x d embeddings
  std::vector<LayerCache> layers;
  Eigen::MatrixXd lnf_xhat;
  Eigen::VectorXd lnf_inv_std;
  Eigen::MatrixXd final_normed;  // T x d after the final layer norm
};

// Per-layer key/value tensors for incremental decoding.
struct KvCache {
  std::vector<Eigen::MatrixXd> k;  // per layer, C x d (first `len` rows valid)
  std::vector<Eigen::MatrixXd> v;
  int len = 0;
};

// Full forward over `ids`. When `cache` is given, intermediate activations
// are stored for backprop and dropout is applied using `drop_rng` (train
// mode). When `kv` is given, per-layer K/V rows are recorded for later
// incremental steps. Returns T x V logits.
inline Eigen::MatrixXd forward(const ModelDims& dims, const Params& p, const std::vector<int>& ids,
                               ForwardCache* cache, Rng* drop_rng, double dropout, KvCache* kv) {
  const int T = static_cast<int>(ids.size());
  if (T == 0) throw ValidationError("forward: empty token sequence");
  if (T > dims.context_limit)
    throw SizingError("sequence length " + std::to_string(T) + " exceeds context limit " +
                      std::to_string(dims.context_limit));
  const int d = dims.d_model, H = dims.n_heads, dh = dims.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd x(T, d);
  for (int i = 0; i < T; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= dims.vocab_size)
      throw ValidationError("forward: token id out of range: " + std::to_string(id));
    x.row(i) = p.tok_emb.row(id) + p.pos_emb.row(i);
  }
  if (cache) {
    cache->ids = ids;
    cache->x0 = x;
    cache->layers.assign(static_cast<std::size_t>(dims.n_layers), {});
  }
  if (kv) {
    kv->k.assign(static_cast<std::size_t>(dims.n_layers),
                 Eigen::MatrixXd::Zero(dims.context_limit, d));
    kv->v.assign(static_cast<std::size_t>(dims.n_layers),
                 Eigen::MatrixXd::Zero(dims.context_limit, d));
    kv->len = T;
  }

  auto make_drop_mask = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    const double keep = 1.0 - dropout;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        m(i, j) = drop_rng->uniform() < keep ? 1.0 / keep : 0.0;
    return m;
  };
  const bool training_dropout = cache && drop_rng && dropout > 0.0;

  for (int layer = 0; layer < dims.n_layers; ++layer) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(layer)];
    LayerCache* lc = cache ? &cache->layers[static_cast<std::size_t>(layer)] : nullptr;
    if (lc) lc->block_in = x;

    Eigen::MatrixXd ln1 = layer_norm(x, lp.ln1_g, lp.ln1_b, lc ? &lc->ln1_xhat : nullptr,
                                     lc ? &lc->ln1_inv_std : nullptr);
    Eigen::MatrixXd qkv = (ln1 * lp.w_qkv).rowwise() + lp.b_qkv.transpose();
    if (lc) lc->qkv = qkv;
    if (kv) {
      kv->k[static_cast<std::size_t>(layer)].topRows(T) = qkv.middleCols(d, d);
      kv->v[static_cast<std::size_t>(layer)].topRows(T) = qkv.middleCols(2 * d, d);
    }

    Eigen::MatrixXd concat(T, d);
    if (lc) lc->attn.assign(static_cast<std::size_t>(H), Eigen::MatrixXd::Zero(T, T));
    for (int h = 0; h < H; ++h) {
      const auto Q = qkv.middleCols(h * dh, dh);
      const auto K = qkv.middleCols(d + h * dh, dh);
      const auto V = qkv.middleCols(2 * d + h * dh, dh);
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        Eigen::RowVectorXd scores = (Q.row(i) * K.topRows(i + 1).transpose()) * scale;
        const double mx = scores.maxCoeff();
        Eigen::RowVectorXd e = (scores.array() - mx).exp();
        A.row(i).head(i + 1) = e / e.sum();
      }
      concat.middleCols(h * dh, dh) = A * V;
      if (lc) lc->attn[static_cast<std::size_t>(h)] = std::move(A);
    }
    if (lc) lc->attn_concat = concat;
    Eigen::MatrixXd attn_out = (concat * lp.w_o).rowwise() + lp.b_o.transpose();
    if (training_dropout) {
      Eigen::MatrixXd mask = make_drop_mask(T, d);
      attn_out = attn_out.cwiseProduct(mask);
      lc->attn_drop = std::move(mask);
    }
    x += attn_out;

    if (lc) lc->mid = x;
    Eigen::MatrixXd ln2 = layer_norm(x, lp.ln2_g, lp.ln2_b, lc ? &lc->ln2_xhat : nullptr,
                                     lc ? &lc->ln2_inv_std : nullptr);
    Eigen::MatrixXd pre = (ln2 * lp.w1).rowwise() + lp.b1.transpose();
    Eigen::MatrixXd act = pre.unaryExpr([](double v) { return gelu(v); });
    if (lc) {
      lc->mlp_pre = pre;
      lc->mlp_act = act;
    }
    Eigen::MatrixXd mlp_out = (act * lp.w2).rowwise() + lp.b2.transpose();
    if (training_dropout) {
      Eigen::MatrixXd mask = make_drop_mask(T, d);
      mlp_out = mlp_out.cwiseProduct(mask);
      lc->mlp_drop = std::move(mask);
    }
    x += mlp_out;
  }

  Eigen::MatrixXd normed = layer_norm(x, p.lnf_g, p.lnf_b, cache ? &cache->lnf_xhat : nullptr,
                                      cache ? &cache->lnf_inv_std : nullptr);
  if (cache) cache->final_normed = normed;
  return (normed * p.w_out).rowwise() + p.b_out.transpose();
}

// Backward pass. `dlogits` is T x V; gradients accumulate into `g`.
inline void backward(const ModelDims& dims, const Params& p, const ForwardCache& c,
                     const Eigen::MatrixXd& dlogits, Params& g) {
  const int T = static_cast<int>(c.ids.size());
  const int d = dims.d_model, H = dims.n_heads, dh = dims.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  g.w_out += c.final_normed.transpose() * dlogits;
  g.b_out += dlogits.colwise().sum().transpose();
  Eigen::MatrixXd d_normed = dlogits * p.w_out.transpose();
  Eigen::MatrixXd dx =
      layer_norm_backward(d_normed, c.lnf_xhat, c.lnf_inv_std, p.lnf_g, g.lnf_g, g.lnf_b);

  for (int layer = dims.n_layers - 1; layer >= 0; --layer) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(layer)];
    LayerParams& lg = g.layers[static_cast<std::size_t>(layer)];
    const LayerCache& lc = c.layers[static_cast<std::size_t>(layer)];

    // MLP block: x = mid + drop(act(w1 ln2(mid)) w2).
    Eigen::MatrixXd d_mlp_out = lc.mlp_drop.size() ? dx.cwiseProduct(lc.mlp_drop) : dx;
    lg.w2 += lc.mlp_act.transpose() * d_mlp_out;
    lg.b2 += d_mlp_out.colwise().sum().transpose();
    Eigen::MatrixXd d_act = d_mlp_out * lp.w2.transpose();
    Eigen::MatrixXd d_pre =
        d_act.cwiseProduct(lc.mlp_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    // ln2's output is needed for w1's gradient; reconstruct it from the cache.
    Eigen::MatrixXd ln2_full(T, d);
    for (int i = 0; i < T; ++i)
      ln2_full.row(i) = lc.ln2_xhat.row(i).cwiseProduct(lp.ln2_g.transpose()) + lp.ln2_b.transpose();
    lg.w1 += ln2_full.transpose() * d_pre;
    lg.b1 += d_pre.colwise().sum().transpose();
    Eigen::MatrixXd d_ln2 = d_pre * lp.w1.transpose();
    Eigen::MatrixXd d_mid =
        layer_norm_backward(d_ln2, lc.ln2_xhat, lc.ln2_inv_std, lp.ln2_g, lg.ln2_g, lg.ln2_b);
    d_mid += dx;  // residual branch

    // Attention block: mid = block_in + drop(attn(ln1(block_in)) w_o).
    Eigen::MatrixXd d_attn_out = lc.attn_drop.size() ? d_mid.cwiseProduct(lc.attn_drop) : d_mid;
    lg.w_o += lc.attn_concat.transpose() * d_attn_out;
    lg.b_o += d_attn_out.colwise().sum().transpose();
    Eigen::MatrixXd d_concat = d_attn_out * lp.w_o.transpose();

    Eigen::MatrixXd d_qkv = Eigen::MatrixXd::Zero(T, 3 * d);
    for (int h = 0; h < H; ++h) {
      const auto Q = lc.qkv.middleCols(h * dh, dh);
      const auto K = lc.qkv.middleCols(d + h * dh, dh);
      const auto V = lc.qkv.middleCols(2 * d + h * dh, dh);
      const Eigen::MatrixXd& A = lc.attn[static_cast<std::size_t>(h)];
      const auto d_ctx = d_concat.middleCols(h * dh, dh);

      Eigen::MatrixXd dA = d_ctx * V.transpose();
      d_qkv.middleCols(2 * d + h * dh, dh) += A.transpose() * d_ctx;
      // Softmax backward, row-wise; masked columns have A == 0 so dS == 0.
      Eigen::MatrixXd dS(T, T);
      for (int i = 0; i < T; ++i) {
        const double dot = dA.row(i).cwiseProduct(A.row(i)).sum();
        dS.row(i) = (A.row(i).array() * (dA.row(i).array() - dot)).matrix();
      }
      d_qkv.middleCols(h * dh, dh) += dS * K * scale;
      d_qkv.middleCols(d + h * dh, dh) += dS.transpose() * Q * scale;
    }
    Eigen::MatrixXd ln1_full(T, d);
    for (int i = 0; i < T; ++i)
      ln1_full.row(i) = lc.ln1_xhat.row(i).cwiseProduct(lp.ln1_g.transpose()) + lp.ln1_b.transpose();
    lg.w_qkv += ln1_full.transpose() * d_qkv;
    lg.b_qkv += d_qkv.colwise().sum().transpose();
    Eigen::MatrixXd d_ln1 = d_qkv * lp.w_qkv.transpose();
    Eigen::MatrixXd d_block_in =
        layer_norm_backward(d_ln1, lc.ln1_xhat, lc.ln1_inv_std, lp.ln1_g, lg.ln1_g, lg.ln1_b);
    dx = d_block_in + d_mid;  // residual branch
  }

  for (int i = 0; i < T; ++i) {
    g.tok_emb.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    g.pos_emb.row(i) += dx.row(i);
  }
}

// Long-double log-softmax pieces. logsumexp over a logits row; the extra
// precision keeps aggregate perplexities exactly round-trippable (see the
// uniform-model contract).
inline long double logsumexp_row(const Eigen::RowVectorXd& logits) {
  const double mx = logits.maxCoeff();
  long double s = 0.0L;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    s += std::exp(static_cast<long double>(logits(i) - mx));
  return static_cast<long double>(mx) + std::log(s);
}

struct NeumaierSum {
  long double sum = 0.0L, comp = 0.0L;
  void add(long double x) {
    const long double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  long double value() const { return sum + comp; }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference: distributions, likelihoods, perplexity.
// ---------------------------------------------------------------------------

inline std::vector<double> next_token_logprobs(const ModelHandle& m, const std::vector<int>& prefix) {
  if (prefix.empty()) throw ValidationError("next_token_logprobs: prefix must be non-empty");
  Eigen::MatrixXd logits =
      detail::forward(m.dims(), m.params(), prefix, nullptr, nullptr, 0.0, nullptr);
  const Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
  const long double lse = detail::logsumexp_row(row);
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i)
    out[static_cast<std::size_t>(i)] =
        static_cast<double>(static_cast<long double>(row(i)) - lse);
  return out;
}

namespace detail {

// Sum over y of log P(y_i | x, y_<i), in long double. One forward pass:
// concatenate x and y, drop the final token, log-softmax the last |y| rows.
inline long double loglikelihood_ld(const ModelHandle& m, const std::vector<int>& x,
                                    const std::vector<int>& y) {
  if (y.empty()) throw ValidationError("loglikelihood: y must be non-empty");
  std::vector<int> cond = x;
  if (cond.empty()) cond.push_back(Vocab::kBot);  // unconditional == <bot>-conditioned
  const std::size_t n = cond.size() + y.size();
  if (static_cast<int>(n) > m.dims().context_limit + 1)
    throw SizingError("loglikelihood: |x|+|y| = " + std::to_string(n) + " exceeds context limit " +
                      std::to_string(m.dims().context_limit));
  std::vector<int> seq = cond;
  seq.insert(seq.end(), y.begin(), y.end());
  seq.pop_back();  // discard the final token; row i predicts seq[i+1]
  Eigen::MatrixXd logits = forward(m.dims(), m.params(), seq, nullptr, nullptr, 0.0, nullptr);
  NeumaierSum total;
  const std::size_t first_row = cond.size() - 1;  // predicts y[0]
  for (std::size_t j = 0; j < y.size(); ++j) {
    const Eigen::RowVectorXd row = logits.row(static_cast<Eigen::Index>(first_row + j));
    const long double lse = logsumexp_row(row);
    total.add(static_cast<long double>(row(y[j])) - lse);
  }
  return total.value();
}

}  // namespace detail

inline double loglikelihood(const ModelHandle& m, const std::vector<int>& x,
                            const std::vector<int>& y) {
  return static_cast<double>(detail::loglikelihood_ld(m, x, y));
}

// exp( −(Σ_j log P(doc_j)) / Σ_j N_j ), each document conditioned on <bot>.
inline double perplexity(const ModelHandle& m, const std::vector<std::vector<int>>& docs) {
  if (docs.empty()) throw ValidationError("perplexity: document list must be non-empty");
  detail::NeumaierSum total;
  std::size_t n_tokens = 0;
  for (std::size_t j = 0; j < docs.size(); ++j) {
    if (docs[j].empty())
      throw ValidationError("perplexity: document " + std::to_string(j) + " is empty");
    total.add(detail::loglikelihood_ld(m, {Vocab::kBot}, docs[j]));
    n_tokens += docs[j].size();
  }
  const long double mean_nll = -total.value() / static_cast<long double>(n_tokens);
  return static_cast<double>(std::exp(mean_nll));
}

// ---------------------------------------------------------------------------
// Incremental decoder (KV cache).
// ---------------------------------------------------------------------------

class Decoder {
 public:
  explicit Decoder(const ModelHandle& m) : model_(&m) {}

  // Run the prompt through the model in one batched pass; returns logits for
  // the next position.
  Eigen::RowVectorXd prime(const std::vector<int>& prompt) {
    if (prompt.empty()) throw ValidationError("decoder: prompt must be non-empty");
    Eigen::MatrixXd logits =
        detail::forward(model_->dims(), model_->params(), prompt, nullptr, nullptr, 0.0, &kv_);
    // Keep the residual stream's final-row recomputation cheap: store prompt.
    history_ = prompt;
    return logits.row(logits.rows() - 1);
  }

  // Append one token and return logits for the following position.
  Eigen::RowVectorXd step(int token_id) {
    const ModelDims& dims = model_->dims();
    if (kv_.len >= dims.context_limit)
      throw SizingError("decoder: context limit " + std::to_string(dims.context_limit) +
                        " reached");
    if (token_id < 0 || token_id >= dims.vocab_size)
      throw ValidationError("decoder: token id out of range: " + std::to_string(token_id));
    const detail::Params& p = model_->params();
    const int d = dims.d_model, H = dims.n_heads, dh = dims.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int pos = kv_.len;

    Eigen::RowVectorXd x = p.tok_emb.row(token_id) + p.pos_emb.row(pos);
    for (int layer = 0; layer < dims.n_layers; ++layer) {
      const detail::LayerParams& lp = p.layers[static_cast<std::size_t>(layer)];
      Eigen::RowVectorXd ln1 = norm_row(x, lp.ln1_g, lp.ln1_b);
      Eigen::RowVectorXd qkv = ln1 * lp.w_qkv + lp.b_qkv.transpose();
      Eigen::MatrixXd& K = kv_.k[static_cast<std::size_t>(layer)];
      Eigen::MatrixXd& V = kv_.v[static_cast<std::size_t>(layer)];
      K.row(pos) = qkv.segment(d, d);
      V.row(pos) = qkv.segment(2 * d, d);

      Eigen::RowVectorXd concat(d);
      for (int h = 0; h < H; ++h) {
        const auto q = qkv.segment(h * dh, dh).transpose();
        const auto Kh = K.block(0, h * dh, pos + 1, dh);
        const auto Vh = V.block(0, h * dh, pos + 1, dh);
        Eigen::VectorXd scores = Kh * q * scale;
        const double mx = scores.maxCoeff();
        Eigen::VectorXd e = (scores.array() - mx).exp();
        Eigen::VectorXd a = e / e.sum();
        concat.segment(h * dh, dh) = (a.transpose() * Vh);
      }
      x += concat * lp.w_o + lp.b_o.transpose();
      Eigen::RowVectorXd ln2 = norm_row(x, lp.ln2_g, lp.ln2_b);
      Eigen::RowVectorXd act =
          (ln2 * lp.w1 + lp.b1.transpose()).unaryExpr([](double v) { return detail::gelu(v); });
      x += act * lp.w2 + lp.b2.transpose();
    }
    kv_.len = pos + 1;
    history_.push_back(token_id);
    Eigen::RowVectorXd normed = norm_row(x, p.lnf_g, p.lnf_b);
    return normed * p.w_out + p.b_out.transpose();
  }

  int length() const { return kv_.len; }

 private:
  static Eigen::RowVectorXd norm_row(const Eigen::RowVectorXd& x, const Eigen::VectorXd& g,
                                     const Eigen::VectorXd& b) {
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + detail::kLnEps);
    return (((x.array() - mu) * is).matrix().cwiseProduct(g.transpose())) + b.transpose();
  }

  const ModelHandle* model_;
  detail::KvCache kv_;
  std::vector<int> history_;
};

// ---------------------------------------------------------------------------
// Generation and constrained numeric decoding.
// ---------------------------------------------------------------------------

// Greedy (temperature 0) or seeded temperature sampling. Output excludes the
// end-of-text token. Generation stops silently at the context limit.
inline std::vector<int> generate(const ModelHandle& m, const std::vector<int>& prompt,
                                 int max_tokens, double temperature, std::uint64_t seed) {
  if (temperature < 0.0) throw ValidationError("generate: temperature must be >= 0");
  if (max_tokens < 0) throw ValidationError("generate: max_tokens must be >= 0");
  std::vector<int> out;
  if (max_tokens == 0) return out;
  Decoder dec(m);
  Eigen::RowVectorXd logits = dec.prime(prompt);
  Rng rng(derive_seed(seed, "generate"));
  for (int t = 0; t < max_tokens; ++t) {
    int next;
    if (temperature == 0.0) {
      Eigen::Index arg;
      logits.maxCoeff(&arg);
      // Ties resolve to the lowest id.
      next = static_cast<int>(arg);
      for (Eigen::Index i = 0; i < arg; ++i)
        if (logits(i) == logits(arg)) {
          next = static_cast<int>(i);
          break;
        }
    } else {
      Eigen::RowVectorXd scaled = logits / temperature;
      const double mx = scaled.maxCoeff();
      Eigen::RowVectorXd probs = (scaled.array() - mx).exp();
      probs /= probs.sum();
      double u = rng.uniform(), acc = 0.0;
      next = static_cast<int>(probs.size()) - 1;
      for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == Vocab::kEot) break;
    out.push_back(next);
    if (t + 1 >= max_tokens) break;
    if (dec.length() >= m.dims().context_limit) break;  // best-effort stop
    logits = dec.step(next);
  }
  return out;
}

enum class ScoreMode { greedy, expectation };

// Distribution over the ten digits from one logits row: softmax restricted to
// the digit token ids (all other tokens carry exactly zero mass).
inline std::array<double, 10> digit_distribution(const Eigen::RowVectorXd& logits,
                                                 const Vocab& vocab) {
  std::array<double, 10> masked{};
  double mx = -std::numeric_limits<double>::infinity();
  for (int d = 0; d < 10; ++d) mx = std::max(mx, logits(vocab.digit_id(d)));
  double sum = 0.0;
  for (int d = 0; d < 10; ++d) {
    masked[static_cast<std::size_t>(d)] = std::exp(logits(vocab.digit_id(d)) - mx);
    sum += masked[static_cast<std::size_t>(d)];
  }
  for (double& v : masked) v /= sum;
  return masked;
}

// Two decoding steps, each masked to the digit tokens. Greedy mode takes the
// per-step argmax (ties -> lowest digit); expectation mode rounds
// 10*E[first digit] + E[second digit], with the greedy first digit fed back.
inline int constrained_score(const ModelHandle& m, const std::vector<int>& prompt,
                             ScoreMode mode = ScoreMode::greedy) {
  if (static_cast<int>(prompt.size()) > m.dims().context_limit - 2)
    throw SizingError("constrained_score: prompt too long for two decoding steps");
  Decoder dec(m);
  Eigen::RowVectorXd logits = dec.prime(prompt);

  auto greedy_digit = [](const std::array<double, 10>& p) {
    int best = 0;
    for (int d = 1; d < 10; ++d)
      if (p[static_cast<std::size_t>(d)] > p[static_cast<std::size_t>(best)]) best = d;
    return best;
  };
  auto expected_digit = [](const std::array<double, 10>& p) {
    double e = 0.0;
    for (int d = 0; d < 10; ++d) e += d * p[static_cast<std::size_t>(d)];
    return e;
  };

  const std::array<double, 10> p1 = digit_distribution(logits, m.vocab());
  const int d1 = greedy_digit(p1);
  logits = dec.step(m.vocab().digit_id(d1));
  const std::array<double, 10> p2 = digit_distribution(logits, m.vocab());
  if (mode == ScoreMode::greedy) return 10 * d1 + greedy_digit(p2);
  const double e = 10.0 * expected_digit(p1) + expected_digit(p2);
  return static_cast<int>(std::min(99.0, std::max(0.0, std::floor(e + 0.5))));
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TokenPair {
  std::vector<int> prompt;
  std::vector<int> target;
};

namespace detail {

struct PackedPair {
  std::vector<int> seq;     // <bot> + prompt + target + <eot>, final token dropped
  std::vector<int> labels;  // label per row of seq (or -1 to skip)
  int n_targets = 0;
};

inline PackedPair pack_pair(const TokenPair& pair, int context_limit, std::size_t index) {
  if (pair.target.empty())
    throw ValidationError("training pair " + std::to_string(index) + " has an empty target");
  PackedPair p;
  std::vector<int> full;
  full.reserve(pair.prompt.size() + pair.target.size() + 2);
  full.push_back(Vocab::kBot);
  full.insert(full.end(), pair.prompt.begin(), pair.prompt.end());
  full.insert(full.end(), pair.target.begin(), pair.target.end());
  full.push_back(Vocab::kEot);
  if (static_cast<int>(full.size()) - 1 > context_limit)
    throw SizingError("training pair " + std::to_string(index) + " needs " +
                      std::to_string(full.size() - 1) + " positions, context limit is " +
                      std::to_string(context_limit));
  p.seq.assign(full.begin(), full.end() - 1);
  p.labels.assign(p.seq.size(), -1);
  const std::size_t first_target_row = 1 + pair.prompt.size() - 1;  // predicts target[0]
  for (std::size_t i = first_target_row; i < p.seq.size(); ++i) {
    p.labels[i] = full[i + 1];
    ++p.n_targets;
  }
  return p;
}

// Mean NLL per target token over a packed pair, plus optional dlogits.
inline double pair_loss(const ModelDims& dims, const Params& params, const PackedPair& pp,
                        ForwardCache* cache, Rng* drop_rng, double dropout,
                        Eigen::MatrixXd* dlogits_out) {
  Eigen::MatrixXd logits = forward(dims, params, pp.seq, cache, drop_rng, dropout, nullptr);
  double nll = 0.0;
  if (dlogits_out) *dlogits_out = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int label = pp.labels[static_cast<std::size_t>(i)];
    if (label < 0) continue;
    const Eigen::RowVectorXd row = logits.row(i);
    const double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    const double z = e.sum();
    nll -= (row(label) - mx) - std::log(z);
    if (dlogits_out) {
      Eigen::RowVectorXd soft = e / z;
      soft(label) -= 1.0;
      dlogits_out->row(i) = soft;
    }
  }
  return nll;
}

struct AdamState {
  Params m, v;
  long t = 0;
};

}  // namespace detail

// A freshly initialized (untrained) model. The output head starts at zero,
// so the next-token distribution is exactly uniform over the vocabulary.
inline ModelHandle initialize_model(const Vocab& vocab, const TrainConfig& cfg) {
  validate(cfg);
  if (vocab.tokens.empty()) throw ConfigError("initialize_model: empty vocabulary");
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.d_model = cfg.d_model;
  dims.n_heads = cfg.n_heads;
  dims.n_layers = cfg.n_layers;
  dims.context_limit = cfg.context_limit;
  return ModelHandle(vocab, dims, detail::init_params(dims, cfg.seed), ordered_json::object());
}

// Mean NLL per target token across a pair list (no dropout). Useful for
// monotone-training checks and recorded as training metadata.
inline double evaluate_loss(const ModelHandle& model, const std::vector<TokenPair>& pairs) {
  if (pairs.empty()) throw ConfigError("evaluate_loss: empty pair list");
  double total = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    detail::PackedPair pp = detail::pack_pair(pairs[i], model.dims().context_limit, i);
    total += detail::pair_loss(model.dims(), model.params(), pp, nullptr, nullptr, 0.0, nullptr);
    n += pp.n_targets;
  }
  return total / static_cast<double>(n);
}

// Train from scratch (or fine-tune when `init` is given; the initial model's
// vocabulary and dimensions then apply). Deterministic for a fixed seed.
inline ModelHandle train(const std::vector<TokenPair>& pairs, const Vocab& vocab,
                         const TrainConfig& cfg, const ModelHandle* init = nullptr) {
  validate(cfg);
  if (pairs.empty()) throw ConfigError("train: empty training corpus");

  ModelDims dims;
  detail::Params params;
  if (init) {
    dims = init->dims();
    params = init->params();
  } else {
    dims.vocab_size = vocab.size();
    dims.d_model = cfg.d_model;
    dims.n_heads = cfg.n_heads;
    dims.n_layers = cfg.n_layers;
    dims.context_limit = cfg.context_limit;
    params = detail::init_params(dims, cfg.seed);
  }
  const Vocab& effective_vocab = init ? init->vocab() : vocab;
  if (init && !vocab.tokens.empty() && vocab.tokens != init->vocab().tokens)
    throw ConfigError("train: supplied vocabulary differs from the initial model's");
  if (effective_vocab.size() != dims.vocab_size)
    throw ConfigError("train: vocabulary size does not match model dimensions");

  // Pre-pack (also validates sizing up front).
  std::vector<detail::PackedPair> packed;
  packed.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    packed.push_back(detail::pack_pair(pairs[i], dims.context_limit, i));

  ModelHandle working(effective_vocab, dims, std::move(params), ordered_json::object());
  const double initial_loss = evaluate_loss(working, pairs);

  detail::AdamState adam;
  adam.m = detail::Params::zeros(dims);
  adam.v = detail::Params::zeros(dims);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  Rng drop_rng(derive_seed(cfg.seed, "dropout"));
  std::vector<std::size_t> order(packed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  detail::Params& w = working.mutable_params();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, "order." + std::to_string(epoch)));
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      detail::Params grads = detail::Params::zeros(dims);
      long batch_targets = 0;
      for (std::size_t k = start; k < end; ++k)
        batch_targets += packed[order[k]].n_targets;
      for (std::size_t k = start; k < end; ++k) {
        const detail::PackedPair& pp = packed[order[k]];
        detail::ForwardCache cache;
        Eigen::MatrixXd dlogits;
        detail::pair_loss(dims, w, pp, &cache, &drop_rng, cfg.dropout, &dlogits);
        dlogits /= static_cast<double>(batch_targets);
        detail::backward(dims, w, cache, dlogits, grads);
      }

      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        grads.for_each([&](const double* p, Eigen::Index n) {
          for (Eigen::Index i = 0; i < n; ++i) sq += p[i] * p[i];
        });
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const double s = cfg.grad_clip / norm;
          grads.for_each([&](double* p, Eigen::Index n) {
            for (Eigen::Index i = 0; i < n; ++i) p[i] *= s;
          });
        }
      }

      ++adam.t;
      const double warm =
          cfg.warmup_steps > 0
              ? std::min(1.0, static_cast<double>(adam.t) / static_cast<double>(cfg.warmup_steps))
              : 1.0;
      const double lr = cfg.learning_rate * warm;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.t));

      // Walk the three structures in lockstep (identical traversal order).
      struct Cursor {
        std::vector<std::pair<double*, Eigen::Index>> spans;
      };
      Cursor cw, cg, cm, cv;
      w.for_each([&](double* p, Eigen::Index n) { cw.spans.emplace_back(p, n); });
      grads.for_each([&](double* p, Eigen::Index n) { cg.spans.emplace_back(p, n); });
      adam.m.for_each([&](double* p, Eigen::Index n) { cm.spans.emplace_back(p, n); });
      adam.v.for_each([&](double* p, Eigen::Index n) { cv.spans.emplace_back(p, n); });
      for (std::size_t s = 0; s < cw.spans.size(); ++s) {
        double* wp = cw.spans[s].first;
        double* gp = cg.spans[s].first;
        double* mp = cm.spans[s].first;
        double* vp = cv.spans[s].first;
        const Eigen::Index n = cw.spans[s].second;
        for (Eigen::Index i = 0; i < n; ++i) {
          mp[i] = kBeta1 * mp[i] + (1.0 - kBeta1) * gp[i];
          vp[i] = kBeta2 * vp[i] + (1.0 - kBeta2) * gp[i] * gp[i];
          const double mhat = mp[i] / bc1;
          const double vhat = vp[i] / bc2;
          wp[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
      }
    }
  }

  const double final_loss = evaluate_loss(working, pairs);
  ordered_json meta = ordered_json::object();
  if (init) meta["fine_tuned"] = true;
  meta["seed"] = cfg.seed;
  meta["epochs"] = cfg.epochs;
  meta["pairs"] = pairs.size();
  meta["task_mix"] = "unspecified";
  meta["initial_loss"] = initial_loss;
  meta["final_loss"] = final_loss;
  working.mutable_metadata() = std::move(meta);
  return working;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "MEMSEED-CKPT v1\n";

inline void save_checkpoint(const ModelHandle& m, const std::string& path) {
  if (m.empty()) throw ValidationError("save_checkpoint: empty model handle");
  ordered_json header;
  header["format_version"] = 1;
  header["vocab"] = m.vocab().tokens;
  header["dims"] = {{"vocab_size", m.dims().vocab_size},
                    {"d_model", m.dims().d_model},
                    {"n_heads", m.dims().n_heads},
                    {"n_layers", m.dims().n_layers},
                    {"context_limit", m.dims().context_limit}};
  header["metadata"] = m.metadata().is_null() ? ordered_json::object() : m.metadata();
  const std::string header_str = header.dump();

  std::string blob;
  blob += kCheckpointMagic;
  const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
  char lenbuf[4];
  std::memcpy(lenbuf, &hlen, 4);  // little-endian hosts only (x86/ARM64)
  blob.append(lenbuf, 4);
  blob += header_str;
  m.params().for_each([&](const double* p, Eigen::Index n) {
    blob.append(reinterpret_cast<const char*>(p), static_cast<std::size_t>(n) * sizeof(double));
  });
  write_file(path, blob);
}

inline ModelHandle load_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (blob.size() < magic_len + 4 || blob.compare(0, magic_len, kCheckpointMagic) != 0)
    throw FormatError("checkpoint '" + path + "': bad magic");
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + magic_len, 4);
  if (blob.size() < magic_len + 4 + hlen)
    throw FormatError("checkpoint '" + path + "': truncated header");
  ordered_json header;
  try {
    header = ordered_json::parse(blob.substr(magic_len + 4, hlen));
  } catch (const std::exception& e) {
    throw FormatError("checkpoint '" + path + "': unreadable header: " + e.what());
  }
  if (header.value("format_version", -1) != 1)
    throw FormatError("checkpoint '" + path + "': unsupported format version");

  Vocab vocab;
  try {
    vocab.tokens = header.at("vocab").get<std::vector<std::string>>();
  } catch (const std::exception&) {
    throw FormatError("checkpoint '" + path + "': missing vocabulary");
  }
  if (vocab.tokens.size() < 13 || vocab.tokens[0] != "<bot>" || vocab.tokens[1] != "<eot>" ||
      vocab.tokens[2] != "<unk>")
    throw FormatError("checkpoint '" + path + "': corrupt vocabulary block");
  for (int i = 0; i < vocab.size(); ++i) vocab.index.emplace(vocab.tokens[i], i);
  for (int d = 0; d < 10; ++d) {
    auto it = vocab.index.find(std::string(1, static_cast<char>('0' + d)));
    if (it == vocab.index.end())
      throw FormatError("checkpoint '" + path + "': vocabulary lacks digit tokens");
    vocab.digit_ids[d] = it->second;
  }

  ModelDims dims;
  try {
    const auto& dj = header.at("dims");
    dims.vocab_size = dj.at("vocab_size").get<int>();
    dims.d_model = dj.at("d_model").get<int>();
    dims.n_heads = dj.at("n_heads").get<int>();
    dims.n_layers = dj.at("n_layers").get<int>();
    dims.context_limit = dj.at("context_limit").get<int>();
  } catch (const std::exception&) {
    throw FormatError("checkpoint '" + path + "': missing model dimensions");
  }
  if (dims.vocab_size != vocab.size())
    throw FormatError("checkpoint '" + path + "': dimension/vocabulary disagreement");
  if (dims.d_model <= 0 || dims.n_heads <= 0 || dims.d_model % dims.n_heads != 0 ||
      dims.n_layers <= 0 || dims.context_limit <= 0)
    throw FormatError("checkpoint '" + path + "': invalid model dimensions");

  detail::Params params = detail::Params::zeros(dims);
  const std::size_t expected = params.scalar_count() * sizeof(double);
  const std::size_t off = magic_len + 4 + hlen;
  if (blob.size() - off != expected)
    throw FormatError("checkpoint '" + path + "': parameter block has " +
                      std::to_string(blob.size() - off) + " bytes, expected " +
                      std::to_string(expected));
  std::size_t pos = off;
  params.for_each([&](double* p, Eigen::Index n) {
    std::memcpy(p, blob.data() + pos, static_cast<std::size_t>(n) * sizeof(double));
    pos += static_cast<std::size_t>(n) * sizeof(double);
  });
  return ModelHandle(std::move(vocab), dims, std::move(params),
                     header.value("metadata", ordered_json::object()));
}

// Load and insist on a specific vocabulary (e.g. the one derived from the
// corpus the caller is about to tokenize with).
inline ModelHandle load_checkpoint_checked(const std::string& path,
                                           const std::vector<std::string>& expected_tokens) {
  ModelHandle m = load_checkpoint(path);
  if (m.vocab().tokens != expected_tokens)
    throw ValidationError("checkpoint '" + path +
                          "': vocabulary mismatch with the expected token set");
  return m;
}

}  // namespace memseed
