#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dkf/corpus.hpp"
#include "dkf/matrix.hpp"
#include "dkf/tokenizer.hpp"

namespace dkf {

struct EncoderConfig {
  std::size_t d = 32;       // model width
  std::size_t d_ff = 64;    // feed-forward inner width
  std::size_t heads = 2;    // attention heads; d must be divisible by heads
  std::size_t layers = 2;   // transformer blocks, >= 1
  std::size_t max_len = 128;
};

/// Input segment: dialogue-history texts use segment 0, slot texts segment 1.
enum class Segment : int { kHistory = 0, kSlot = 1 };

struct FfnWeights {
  Matrix w1;               // d x d_ff
  std::vector<double> b1;  // d_ff
  Matrix w2;               // d_ff x d
  std::vector<double> b2;  // d
};

struct EncoderLayer {
  Matrix wq, wk, wv, wo;  // d x d each
  FfnWeights ffn;
};

/// All trainable tensors of the encoder plus its tokenizer. A value type:
/// copying a model copies the checkpoint.
struct EncoderModel {
  EncoderConfig cfg;
  std::uint64_t seed = 7;
  Tokenizer tokenizer;
  Matrix token_embeddings;     // vocab x d
  Matrix position_embeddings;  // max_len x d
  Matrix segment_embeddings;   // 2 x d
  std::vector<EncoderLayer> layers;

  std::size_t head_dim() const { return cfg.d / cfg.heads; }

  void validate() const {
    if (cfg.layers < 1) throw std::invalid_argument("encoder needs at least one layer");
    if (cfg.heads == 0 || cfg.d % cfg.heads != 0)
      throw std::invalid_argument("model width must be divisible by the head count");
    if (layers.size() != cfg.layers)
      throw std::invalid_argument("layer count does not match the configuration");
    auto check = [](const Matrix& m, const char* name) {
      if (!m.all_finite())
        throw NumericError(std::string("non-finite values in tensor ") + name);
    };
    check(token_embeddings, "token_embeddings");
    check(position_embeddings, "position_embeddings");
    check(segment_embeddings, "segment_embeddings");
    for (const auto& l : layers) {
      check(l.wq, "wq");
      check(l.wk, "wk");
      check(l.wv, "wv");
      check(l.wo, "wo");
      check(l.ffn.w1, "w1");
      check(l.ffn.w2, "w2");
    }
  }
};

/// Uniform init in [-0.05, 0.05] drawn from `rng`; biases start at zero. The
/// fill order is fixed so a seed pins every weight.
inline EncoderModel init_encoder(const Corpus& corpus, const EncoderConfig& cfg, Rng& rng) {
  if (cfg.layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  if (cfg.heads == 0 || cfg.d % cfg.heads != 0)
    throw std::invalid_argument("model width must be divisible by the head count");
  EncoderModel m;
  m.cfg = cfg;
  m.tokenizer = build_tokenizer(corpus, cfg.max_len);
  auto init = [&rng](Matrix& mat, std::size_t r, std::size_t c) {
    mat = Matrix(r, c);
    for (auto& v : mat.data) v = rng.uniform(-0.05, 0.05);
  };
  init(m.token_embeddings, m.tokenizer.vocab_size(), cfg.d);
  init(m.position_embeddings, cfg.max_len, cfg.d);
  init(m.segment_embeddings, 2, cfg.d);
  m.layers.resize(cfg.layers);
  for (auto& l : m.layers) {
    init(l.wq, cfg.d, cfg.d);
    init(l.wk, cfg.d, cfg.d);
    init(l.wv, cfg.d, cfg.d);
    init(l.wo, cfg.d, cfg.d);
    init(l.ffn.w1, cfg.d, cfg.d_ff);
    l.ffn.b1.assign(cfg.d_ff, 0.0);
    init(l.ffn.w2, cfg.d_ff, cfg.d);
    l.ffn.b2.assign(cfg.d, 0.0);
  }
  return m;
}

inline EncoderModel init_encoder(const Corpus& corpus, const EncoderConfig& cfg,
                                 std::uint64_t seed) {
  Rng rng(seed);
  EncoderModel m = init_encoder(corpus, cfg, rng);
  m.seed = seed;
  return m;
}

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// Row-wise softmax of Q K^T / sqrt(d_k). Every row sums to 1.
inline Matrix attention_scores(const Matrix& q, const Matrix& k) {
  require_shape(q.cols == k.cols && q.cols > 0, "attention query/key width");
  Matrix p = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  for (auto& v : p.data) v *= scale;
  for (std::size_t i = 0; i < p.rows; ++i) softmax_row(p.row(i), p.cols);
  return p;
}

/// Scaled dot-product attention: Softmax(Q K^T / sqrt(d_k)) V.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  require_shape(k.rows == v.rows, "attention key/value length");
  return matmul(attention_scores(q, k), v);
}

/// Position-wise feed-forward: ReLU(x W1 + b1) W2 + b2.
inline Matrix ffn(const Matrix& x, const FfnWeights& w) {
  require_shape(x.cols == w.w1.rows && w.w1.cols == w.b1.size() &&
                    w.w2.rows == w.b1.size() && w.w2.cols == w.b2.size(),
                "ffn weights");
  Matrix z = matmul(x, w.w1);
  for (std::size_t i = 0; i < z.rows; ++i)
    for (std::size_t j = 0; j < z.cols; ++j) z(i, j) = std::max(0.0, z(i, j) + w.b1[j]);
  Matrix out = matmul(z, w.w2);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += w.b2[j];
  return out;
}

namespace detail {

inline Matrix slice_cols(const Matrix& m, std::size_t c0, std::size_t width) {
  Matrix out(m.rows, width);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = m(i, c0 + j);
  return out;
}

inline void put_cols(Matrix& dst, const Matrix& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.rows; ++i)
    for (std::size_t j = 0; j < src.cols; ++j) dst(i, c0 + j) = src(i, j);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward pass with trace (needed to backpropagate)
// ---------------------------------------------------------------------------

struct LayerTrace {
  Matrix q, k, v;             // n x d projections
  std::vector<Matrix> probs;  // per head: n x n attention weights
  Matrix heads;               // n x d concatenated head outputs
  Matrix x1;                  // post-attention residual
  Matrix z1;                  // FFN pre-activation, n x d_ff
  Matrix h;                   // block output
};

struct ForwardTrace {
  std::vector<int> tokens;
  Segment segment = Segment::kHistory;
  Matrix h0;  // embedded input
  std::vector<LayerTrace> layers;
};

/// One full forward pass; returns the first-token row of the last block.
/// Block structure: multi-head attention with a residual connection, then the
/// feed-forward transform with a residual connection.
inline std::vector<double> encode_with_trace(const EncoderModel& m, const std::string& text,
                                             Segment segment, ForwardTrace* trace) {
  const std::size_t d = m.cfg.d;
  const std::size_t dk = m.head_dim();
  const std::vector<int> tokens = m.tokenizer.tokenize(text);
  const std::size_t n = tokens.size();

  Matrix h(n, d);
  const int seg = static_cast<int>(segment);
  for (std::size_t i = 0; i < n; ++i) {
    const double* te = m.token_embeddings.row(static_cast<std::size_t>(tokens[i]));
    const double* pe = m.position_embeddings.row(i);
    const double* se = m.segment_embeddings.row(static_cast<std::size_t>(seg));
    double* hi = h.row(i);
    for (std::size_t j = 0; j < d; ++j) hi[j] = te[j] + pe[j] + se[j];
  }
  if (trace) {
    trace->tokens = tokens;
    trace->segment = segment;
    trace->h0 = h;
    trace->layers.clear();
    trace->layers.reserve(m.layers.size());
  }

  for (const auto& layer : m.layers) {
    LayerTrace lt;
    lt.q = matmul(h, layer.wq);
    lt.k = matmul(h, layer.wk);
    lt.v = matmul(h, layer.wv);
    lt.heads = Matrix(n, d);
    lt.probs.reserve(m.cfg.heads);
    for (std::size_t hd = 0; hd < m.cfg.heads; ++hd) {
      Matrix qh = detail::slice_cols(lt.q, hd * dk, dk);
      Matrix kh = detail::slice_cols(lt.k, hd * dk, dk);
      Matrix vh = detail::slice_cols(lt.v, hd * dk, dk);
      Matrix p = attention_scores(qh, kh);
      detail::put_cols(lt.heads, matmul(p, vh), hd * dk);
      lt.probs.push_back(std::move(p));
    }
    Matrix attn_out = matmul(lt.heads, layer.wo);

    lt.x1 = h;
    add_inplace(lt.x1, attn_out);

    lt.z1 = matmul(lt.x1, layer.ffn.w1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m.cfg.d_ff; ++j) lt.z1(i, j) += layer.ffn.b1[j];
    Matrix a1 = lt.z1;
    for (auto& v : a1.data) v = std::max(0.0, v);
    Matrix f = matmul(a1, layer.ffn.w2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) f(i, j) += layer.ffn.b2[j];

    lt.h = lt.x1;
    add_inplace(lt.h, f);
    h = lt.h;
    if (trace) trace->layers.push_back(std::move(lt));
  }

  return std::vector<double>(h.row(0), h.row(0) + d);
}

inline std::vector<double> encode(const EncoderModel& m, const std::string& text,
                                  Segment segment) {
  return encode_with_trace(m, text, segment, nullptr);
}

/// Relevance score: logistic of the dot product of two encodings. Strictly
/// inside (0, 1) and monotone in the dot product, so thresholding the score
/// and thresholding the raw dot product rank identically.
inline double sim(const std::vector<double>& u, const std::vector<double>& v) {
  const double x = dot(u, v);
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

struct LayerGradients {
  Matrix wq, wk, wv, wo;
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
};

struct Gradients {
  Matrix token_embeddings, position_embeddings, segment_embeddings;
  std::vector<LayerGradients> layers;

  static Gradients zeros_like(const EncoderModel& m) {
    Gradients g;
    g.token_embeddings = Matrix(m.token_embeddings.rows, m.token_embeddings.cols);
    g.position_embeddings = Matrix(m.position_embeddings.rows, m.position_embeddings.cols);
    g.segment_embeddings = Matrix(m.segment_embeddings.rows, m.segment_embeddings.cols);
    g.layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& src = m.layers[l];
      auto& dst = g.layers[l];
      dst.wq = Matrix(src.wq.rows, src.wq.cols);
      dst.wk = Matrix(src.wk.rows, src.wk.cols);
      dst.wv = Matrix(src.wv.rows, src.wv.cols);
      dst.wo = Matrix(src.wo.rows, src.wo.cols);
      dst.w1 = Matrix(src.ffn.w1.rows, src.ffn.w1.cols);
      dst.b1.assign(src.ffn.b1.size(), 0.0);
      dst.w2 = Matrix(src.ffn.w2.rows, src.ffn.w2.cols);
      dst.b2.assign(src.ffn.b2.size(), 0.0);
    }
    return g;
  }

  void clear() {
    token_embeddings.fill(0.0);
    position_embeddings.fill(0.0);
    segment_embeddings.fill(0.0);
    for (auto& l : layers) {
      l.wq.fill(0.0);
      l.wk.fill(0.0);
      l.wv.fill(0.0);
      l.wo.fill(0.0);
      l.w1.fill(0.0);
      std::fill(l.b1.begin(), l.b1.end(), 0.0);
      l.w2.fill(0.0);
      std::fill(l.b2.begin(), l.b2.end(), 0.0);
    }
  }

  double squared_norm() const {
    auto mat = [](const Matrix& m) {
      double s = 0.0;
      for (double v : m.data) s += v * v;
      return s;
    };
    auto vec = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x * x;
      return s;
    };
    double s = mat(token_embeddings) + mat(position_embeddings) + mat(segment_embeddings);
    for (const auto& l : layers)
      s += mat(l.wq) + mat(l.wk) + mat(l.wv) + mat(l.wo) + mat(l.w1) + vec(l.b1) + mat(l.w2) +
           vec(l.b2);
    return s;
  }

  void scale(double s) {
    auto mat = [s](Matrix& m) {
      for (double& v : m.data) v *= s;
    };
    auto vec = [s](std::vector<double>& v) {
      for (double& x : v) x *= s;
    };
    mat(token_embeddings);
    mat(position_embeddings);
    mat(segment_embeddings);
    for (auto& l : layers) {
      mat(l.wq);
      mat(l.wk);
      mat(l.wv);
      mat(l.wo);
      mat(l.w1);
      vec(l.b1);
      mat(l.w2);
      vec(l.b2);
    }
  }
};

/// Backpropagates d(loss)/d(first-token output) through a traced forward pass,
/// accumulating into `grads`.
inline void backward(const EncoderModel& m, const ForwardTrace& trace,
                     const std::vector<double>& d_output, Gradients& grads) {
  const std::size_t d = m.cfg.d;
  const std::size_t dk = m.head_dim();
  const std::size_t n = trace.tokens.size();
  require_shape(d_output.size() == d, "backward output gradient width");

  Matrix dh(n, d);
  for (std::size_t j = 0; j < d; ++j) dh(0, j) = d_output[j];

  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& layer = m.layers[li];
    const auto& lt = trace.layers[li];
    auto& lg = grads.layers[li];
    const Matrix& h_prev = li == 0 ? trace.h0 : trace.layers[li - 1].h;

    // h = x1 + ffn(x1): the residual passes dh straight through to x1.
    Matrix a1 = lt.z1;
    for (auto& v : a1.data) v = std::max(0.0, v);
    add_matmul_tn(lg.w2, a1, dh);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) lg.b2[j] += dh(i, j);
    Matrix dz1 = matmul_nt(dh, layer.ffn.w2);
    for (std::size_t i = 0; i < dz1.data.size(); ++i)
      if (lt.z1.data[i] <= 0.0) dz1.data[i] = 0.0;
    add_matmul_tn(lg.w1, lt.x1, dz1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m.cfg.d_ff; ++j) lg.b1[j] += dz1(i, j);
    Matrix dx1 = dh;
    add_inplace(dx1, matmul_nt(dz1, layer.ffn.w1));

    // x1 = h_prev + heads * wo
    add_matmul_tn(lg.wo, lt.heads, dx1);
    Matrix dheads = matmul_nt(dx1, layer.wo);

    Matrix dq(n, d), dkm(n, d), dv(n, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t hd = 0; hd < m.cfg.heads; ++hd) {
      const Matrix& p = lt.probs[hd];
      Matrix kh = detail::slice_cols(lt.k, hd * dk, dk);
      Matrix qh = detail::slice_cols(lt.q, hd * dk, dk);
      Matrix vh = detail::slice_cols(lt.v, hd * dk, dk);
      Matrix doh = detail::slice_cols(dheads, hd * dk, dk);

      detail::put_cols(dv, matmul_tn(p, doh), hd * dk);

      Matrix dp = matmul_nt(doh, vh);
      // softmax backward, row-wise: ds = p .* (dp - rowsum(dp .* p))
      Matrix ds(n, p.cols);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) acc += dp(i, j) * p(i, j);
        for (std::size_t j = 0; j < p.cols; ++j) ds(i, j) = p(i, j) * (dp(i, j) - acc);
      }
      Matrix dqh = matmul(ds, kh);
      Matrix dkh = matmul_tn(ds, qh);
      for (auto& v : dqh.data) v *= scale;
      for (auto& v : dkh.data) v *= scale;
      detail::put_cols(dq, dqh, hd * dk);
      detail::put_cols(dkm, dkh, hd * dk);
    }

    add_matmul_tn(lg.wq, h_prev, dq);
    add_matmul_tn(lg.wk, h_prev, dkm);
    add_matmul_tn(lg.wv, h_prev, dv);

    Matrix dh_prev = dx1;
    add_inplace(dh_prev, matmul_nt(dq, layer.wq));
    add_inplace(dh_prev, matmul_nt(dkm, layer.wk));
    add_inplace(dh_prev, matmul_nt(dv, layer.wv));
    dh = std::move(dh_prev);
  }

  const std::size_t seg = static_cast<std::size_t>(static_cast<int>(trace.segment));
  for (std::size_t i = 0; i < n; ++i) {
    const double* di = dh.row(i);
    double* te = grads.token_embeddings.row(static_cast<std::size_t>(trace.tokens[i]));
    double* pe = grads.position_embeddings.row(i);
    double* se = grads.segment_embeddings.row(seg);
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += di[j];
      pe[j] += di[j];
      se[j] += di[j];
    }
  }
}

/// theta += s * g for every trainable tensor (s = -learning_rate for SGD).
inline void apply_update(EncoderModel& m, double s, const Gradients& g) {
  axpy(m.token_embeddings, s, g.token_embeddings);
  axpy(m.position_embeddings, s, g.position_embeddings);
  axpy(m.segment_embeddings, s, g.segment_embeddings);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& dst = m.layers[l];
    const auto& src = g.layers[l];
    axpy(dst.wq, s, src.wq);
    axpy(dst.wk, s, src.wk);
    axpy(dst.wv, s, src.wv);
    axpy(dst.wo, s, src.wo);
    axpy(dst.ffn.w1, s, src.w1);
    axpy(dst.ffn.b1, s, src.b1);
    axpy(dst.ffn.w2, s, src.w2);
    axpy(dst.ffn.b2, s, src.b2);
  }
}

}  // namespace dkf
