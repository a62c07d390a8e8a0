// SPDX-License-Identifier: Apache-2.0
#include "rence/policy.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "rence/rng.hpp"

namespace rence {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGreedyTemp = 1e-12;
constexpr std::size_t kMaxTabularParams = 1u << 24;

// ---------------------------------------------------------------------------
// Neural policy: parameter layout and kernels
// ---------------------------------------------------------------------------

struct BlockOffsets {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
};

struct NeuralLayout {
  int v, l, d, h, n_layers;
  std::vector<BlockOffsets> blocks;
  std::size_t wte, wpe, lnf_g, lnf_b, head_w, head_b;
  std::size_t total;

  explicit NeuralLayout(const ArchDescriptor& a)
      : v(a.vocab_size), l(a.max_len), d(a.embed_dim), h(a.hidden_dim), n_layers(a.n_layers) {
    if (v < 2 || l < 2 || d < 1 || h < 1 || n_layers < 1) {
      throw std::invalid_argument("invalid neural architecture descriptor");
    }
    std::size_t off = 0;
    const auto take = [&off](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    wte = take(std::size_t(v) * d);
    wpe = take(std::size_t(l) * d);
    blocks.resize(n_layers);
    for (auto& b : blocks) {
      b.ln1_g = take(d); b.ln1_b = take(d);
      b.wq = take(std::size_t(d) * d); b.bq = take(d);
      b.wk = take(std::size_t(d) * d); b.bk = take(d);
      b.wv = take(std::size_t(d) * d); b.bv = take(d);
      b.wo = take(std::size_t(d) * d); b.bo = take(d);
      b.ln2_g = take(d); b.ln2_b = take(d);
      b.w1 = take(std::size_t(h) * d); b.b1 = take(h);
      b.w2 = take(std::size_t(d) * h); b.b2 = take(d);
    }
    lnf_g = take(d);
    lnf_b = take(d);
    head_w = take(std::size_t(v) * d);
    head_b = take(v);
    total = off;
  }
};

// y[t] = W x[t] + b for all t; W is row-major [out][in].
void linear_forward(int T, int out_dim, int in_dim, const double* w, const double* b,
                    const double* x, double* y) {
  for (int t = 0; t < T; ++t) {
    const double* xt = x + std::size_t(t) * in_dim;
    double* yt = y + std::size_t(t) * out_dim;
    for (int i = 0; i < out_dim; ++i) {
      const double* wi = w + std::size_t(i) * in_dim;
      double acc = b[i];
      for (int j = 0; j < in_dim; ++j) acc += wi[j] * xt[j];
      yt[i] = acc;
    }
  }
}

void linear_backward(int T, int out_dim, int in_dim, const double* w, const double* x,
                     const double* dy, double* dw, double* db, double* dx) {
  for (int i = 0; i < out_dim; ++i) {
    double* dwi = dw + std::size_t(i) * in_dim;
    double dbi = 0.0;
    for (int t = 0; t < T; ++t) {
      const double g = dy[std::size_t(t) * out_dim + i];
      if (g == 0.0) continue;
      const double* xt = x + std::size_t(t) * in_dim;
      for (int j = 0; j < in_dim; ++j) dwi[j] += g * xt[j];
      dbi += g;
    }
    db[i] += dbi;
  }
  if (dx != nullptr) {
    for (int t = 0; t < T; ++t) {
      const double* dyt = dy + std::size_t(t) * out_dim;
      double* dxt = dx + std::size_t(t) * in_dim;
      for (int i = 0; i < out_dim; ++i) {
        const double g = dyt[i];
        if (g == 0.0) continue;
        const double* wi = w + std::size_t(i) * in_dim;
        for (int j = 0; j < in_dim; ++j) dxt[j] += g * wi[j];
      }
    }
  }
}

void layernorm_forward(int T, int d, const double* g, const double* b, const double* x, double* y,
                       double* mean, double* rstd) {
  for (int t = 0; t < T; ++t) {
    const double* xt = x + std::size_t(t) * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xt[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xt[j] - m) * (xt[j] - m);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[t] = m;
    rstd[t] = rs;
    double* yt = y + std::size_t(t) * d;
    for (int j = 0; j < d; ++j) yt[j] = (xt[j] - m) * rs * g[j] + b[j];
  }
}

void layernorm_backward(int T, int d, const double* g, const double* x, const double* mean,
                        const double* rstd, const double* dy, double* dg, double* db, double* dx) {
  for (int t = 0; t < T; ++t) {
    const double* xt = x + std::size_t(t) * d;
    const double* dyt = dy + std::size_t(t) * d;
    double* dxt = dx + std::size_t(t) * d;
    const double m = mean[t], rs = rstd[t];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xt[j] - m) * rs;
      const double dxhat = dyt[j] * g[j];
      dg[j] += dyt[j] * xhat;
      db[j] += dyt[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_d = 1.0 / d;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xt[j] - m) * rs;
      const double dxhat = dyt[j] * g[j];
      dxt[j] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct BlockTape {
  std::vector<double> x_in;  // T*d, block input
  std::vector<double> a;     // T*d, ln1 output
  std::vector<double> ln1_mean, ln1_rstd;
  std::vector<double> q, k, v;   // T*d
  std::vector<double> attw;      // T*T causal softmax rows
  std::vector<double> attn;      // T*d
  std::vector<double> x_mid;     // T*d, after attention residual
  std::vector<double> b;         // T*d, ln2 output
  std::vector<double> ln2_mean, ln2_rstd;
  std::vector<double> f_pre, f;  // T*h
  std::vector<double> x_out;     // T*d, block output
};

struct Tape {
  int T = 0;
  std::vector<int> tok;
  std::vector<BlockTape> blocks;
  std::vector<double> lnf_mean, lnf_rstd;
  std::vector<double> y;  // T*d, final ln output
};

void check_tokens(std::span<const int> toks, int vocab) {
  for (const int t : toks) {
    if (t < 0 || t >= vocab) throw std::invalid_argument("token id outside vocabulary");
  }
}

// Trunk = embeddings through the final layernorm. The head is applied
// separately so callers can project only the positions they need.
void trunk_forward(const NeuralLayout& ly, const double* p, std::span<const int> tok, Tape& tape) {
  const int T = static_cast<int>(tok.size());
  const int d = ly.d, h = ly.h;
  tape.T = T;
  tape.tok.assign(tok.begin(), tok.end());
  tape.blocks.resize(ly.n_layers);
  tape.blocks[0].x_in.resize(std::size_t(T) * d);
  for (int t = 0; t < T; ++t) {
    const double* te = p + ly.wte + std::size_t(tok[t]) * d;
    const double* pe = p + ly.wpe + std::size_t(t) * d;
    double* xt = tape.blocks[0].x_in.data() + std::size_t(t) * d;
    for (int j = 0; j < d; ++j) xt[j] = te[j] + pe[j];
  }
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int li = 0; li < ly.n_layers; ++li) {
    const BlockOffsets& bo = ly.blocks[li];
    BlockTape& bt = tape.blocks[li];
    bt.a.resize(std::size_t(T) * d);
    bt.ln1_mean.resize(T);
    bt.ln1_rstd.resize(T);
    layernorm_forward(T, d, p + bo.ln1_g, p + bo.ln1_b, bt.x_in.data(), bt.a.data(),
                      bt.ln1_mean.data(), bt.ln1_rstd.data());
    bt.q.resize(std::size_t(T) * d);
    bt.k.resize(std::size_t(T) * d);
    bt.v.resize(std::size_t(T) * d);
    linear_forward(T, d, d, p + bo.wq, p + bo.bq, bt.a.data(), bt.q.data());
    linear_forward(T, d, d, p + bo.wk, p + bo.bk, bt.a.data(), bt.k.data());
    linear_forward(T, d, d, p + bo.wv, p + bo.bv, bt.a.data(), bt.v.data());
    bt.attw.assign(std::size_t(T) * T, 0.0);
    bt.attn.assign(std::size_t(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
      double* wrow = bt.attw.data() + std::size_t(t) * T;
      const double* qt = bt.q.data() + std::size_t(t) * d;
      double max_e = -1e300;
      for (int j = 0; j <= t; ++j) {
        const double* kj = bt.k.data() + std::size_t(j) * d;
        double e = 0.0;
        for (int c = 0; c < d; ++c) e += qt[c] * kj[c];
        wrow[j] = e * att_scale;
        max_e = std::max(max_e, wrow[j]);
      }
      double denom = 0.0;
      for (int j = 0; j <= t; ++j) {
        wrow[j] = std::exp(wrow[j] - max_e);
        denom += wrow[j];
      }
      const double inv = 1.0 / denom;
      double* at = bt.attn.data() + std::size_t(t) * d;
      for (int j = 0; j <= t; ++j) {
        wrow[j] *= inv;
        const double* vj = bt.v.data() + std::size_t(j) * d;
        const double wj = wrow[j];
        for (int c = 0; c < d; ++c) at[c] += wj * vj[c];
      }
    }
    bt.x_mid.resize(std::size_t(T) * d);
    linear_forward(T, d, d, p + bo.wo, p + bo.bo, bt.attn.data(), bt.x_mid.data());
    for (std::size_t i = 0; i < bt.x_mid.size(); ++i) bt.x_mid[i] += bt.x_in[i];
    bt.b.resize(std::size_t(T) * d);
    bt.ln2_mean.resize(T);
    bt.ln2_rstd.resize(T);
    layernorm_forward(T, d, p + bo.ln2_g, p + bo.ln2_b, bt.x_mid.data(), bt.b.data(),
                      bt.ln2_mean.data(), bt.ln2_rstd.data());
    bt.f_pre.resize(std::size_t(T) * h);
    linear_forward(T, h, d, p + bo.w1, p + bo.b1, bt.b.data(), bt.f_pre.data());
    bt.f.resize(std::size_t(T) * h);
    for (std::size_t i = 0; i < bt.f.size(); ++i) bt.f[i] = gelu(bt.f_pre[i]);
    bt.x_out.resize(std::size_t(T) * d);
    linear_forward(T, d, h, p + bo.w2, p + bo.b2, bt.f.data(), bt.x_out.data());
    for (std::size_t i = 0; i < bt.x_out.size(); ++i) bt.x_out[i] += bt.x_mid[i];
    if (li + 1 < ly.n_layers) tape.blocks[li + 1].x_in = bt.x_out;
  }
  const std::vector<double>& last = tape.blocks.back().x_out;
  tape.y.resize(std::size_t(T) * d);
  tape.lnf_mean.resize(T);
  tape.lnf_rstd.resize(T);
  layernorm_forward(T, d, p + ly.lnf_g, p + ly.lnf_b, last.data(), tape.y.data(),
                    tape.lnf_mean.data(), tape.lnf_rstd.data());
}

// Backpropagates dy (gradient at the final layernorm output) through the
// trunk, accumulating parameter gradients into `grad`.
void trunk_backward(const NeuralLayout& ly, const double* p, const Tape& tape,
                    const std::vector<double>& dy, double* grad) {
  const int T = tape.T, d = ly.d, h = ly.h;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> dx(std::size_t(T) * d, 0.0);
  layernorm_backward(T, d, p + ly.lnf_g, tape.blocks.back().x_out.data(), tape.lnf_mean.data(),
                     tape.lnf_rstd.data(), dy.data(), grad + ly.lnf_g, grad + ly.lnf_b, dx.data());
  for (int li = ly.n_layers - 1; li >= 0; --li) {
    const BlockOffsets& bo = ly.blocks[li];
    const BlockTape& bt = tape.blocks[li];
    // dx holds the gradient at the block output (x_mid + ffn result)
    std::vector<double> df(std::size_t(T) * h, 0.0);
    linear_backward(T, d, h, p + bo.w2, bt.f.data(), dx.data(), grad + bo.w2, grad + bo.b2,
                    df.data());
    for (std::size_t i = 0; i < df.size(); ++i) df[i] *= gelu_grad(bt.f_pre[i]);
    std::vector<double> db_ln(std::size_t(T) * d, 0.0);
    linear_backward(T, h, d, p + bo.w1, bt.b.data(), df.data(), grad + bo.w1, grad + bo.b1,
                    db_ln.data());
    // dx continues to hold the residual path gradient into x_mid
    layernorm_backward(T, d, p + bo.ln2_g, bt.x_mid.data(), bt.ln2_mean.data(), bt.ln2_rstd.data(),
                       db_ln.data(), grad + bo.ln2_g, grad + bo.ln2_b, dx.data());
    // x_mid = x_in + Wo attn + bo
    std::vector<double> dattn(std::size_t(T) * d, 0.0);
    linear_backward(T, d, d, p + bo.wo, bt.attn.data(), dx.data(), grad + bo.wo, grad + bo.bo,
                    dattn.data());
    std::vector<double> dq(std::size_t(T) * d, 0.0), dk(std::size_t(T) * d, 0.0),
        dv(std::size_t(T) * d, 0.0), dw(T);
    for (int t = 0; t < T; ++t) {
      const double* wrow = bt.attw.data() + std::size_t(t) * T;
      const double* dat = dattn.data() + std::size_t(t) * d;
      // dv and d(weights)
      double dsum = 0.0;
      for (int j = 0; j <= t; ++j) {
        const double* vj = bt.v.data() + std::size_t(j) * d;
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += dat[c] * vj[c];
        dw[j] = acc;
        dsum += wrow[j] * acc;
        double* dvj = dv.data() + std::size_t(j) * d;
        const double wj = wrow[j];
        for (int c = 0; c < d; ++c) dvj[c] += wj * dat[c];
      }
      // softmax backward, then into q and k
      const double* qt = bt.q.data() + std::size_t(t) * d;
      double* dqt = dq.data() + std::size_t(t) * d;
      for (int j = 0; j <= t; ++j) {
        const double de = wrow[j] * (dw[j] - dsum) * att_scale;
        if (de == 0.0) continue;
        const double* kj = bt.k.data() + std::size_t(j) * d;
        double* dkj = dk.data() + std::size_t(j) * d;
        for (int c = 0; c < d; ++c) {
          dqt[c] += de * kj[c];
          dkj[c] += de * qt[c];
        }
      }
    }
    std::vector<double> da(std::size_t(T) * d, 0.0);
    linear_backward(T, d, d, p + bo.wq, bt.a.data(), dq.data(), grad + bo.wq, grad + bo.bq,
                    da.data());
    linear_backward(T, d, d, p + bo.wk, bt.a.data(), dk.data(), grad + bo.wk, grad + bo.bk,
                    da.data());
    linear_backward(T, d, d, p + bo.wv, bt.a.data(), dv.data(), grad + bo.wv, grad + bo.bv,
                    da.data());
    // dx currently holds the gradient into x_mid; the residual feeds x_in too
    layernorm_backward(T, d, p + bo.ln1_g, bt.x_in.data(), bt.ln1_mean.data(), bt.ln1_rstd.data(),
                       da.data(), grad + bo.ln1_g, grad + bo.ln1_b, dx.data());
  }
  // dx is now the gradient at the embedding sum
  for (int t = 0; t < T; ++t) {
    const double* dxt = dx.data() + std::size_t(t) * d;
    double* gte = grad + ly.wte + std::size_t(tape.tok[t]) * d;
    double* gpe = grad + ly.wpe + std::size_t(t) * d;
    for (int j = 0; j < d; ++j) {
      gte[j] += dxt[j];
      gpe[j] += dxt[j];
    }
  }
}

void head_logits(const NeuralLayout& ly, const double* p, const Tape& tape, int t,
                 double* logits) {
  const double* yt = tape.y.data() + std::size_t(t) * ly.d;
  for (int i = 0; i < ly.v; ++i) {
    const double* wi = p + ly.head_w + std::size_t(i) * ly.d;
    double acc = p[ly.head_b + i];
    for (int j = 0; j < ly.d; ++j) acc += wi[j] * yt[j];
    logits[i] = acc;
  }
}

void log_softmax_inplace(double* logits, int n) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += std::exp(logits[i] - m);
  const double lse = m + std::log(denom);
  for (int i = 0; i < n; ++i) logits[i] -= lse;
}

struct TeacherForward {
  Tape tape;
  std::vector<double> logprob_rows;  // n_gen * V log-softmax rows
  std::vector<double> per_token;     // n_gen
  double total = 0.0;
  int p0 = 0;  // first predicted position
};

TeacherForward neural_teacher_forward(const NeuralLayout& ly, const double* p,
                                      std::span<const int> prompt, std::span<const int> gen) {
  if (prompt.empty()) throw std::invalid_argument("prompt must be non-empty");
  check_tokens(prompt, ly.v);
  check_tokens(gen, ly.v);
  const int T = static_cast<int>(prompt.size() + gen.size());
  if (T > ly.l) throw std::invalid_argument("sequence exceeds max_len");
  std::vector<int> tok(prompt.begin(), prompt.end());
  tok.insert(tok.end(), gen.begin(), gen.end());
  TeacherForward out;
  trunk_forward(ly, p, tok, out.tape);
  out.p0 = static_cast<int>(prompt.size()) - 1;
  const int n_gen = static_cast<int>(gen.size());
  out.logprob_rows.resize(std::size_t(n_gen) * ly.v);
  out.per_token.resize(n_gen);
  for (int g = 0; g < n_gen; ++g) {
    double* row = out.logprob_rows.data() + std::size_t(g) * ly.v;
    head_logits(ly, p, out.tape, out.p0 + g, row);
    log_softmax_inplace(row, ly.v);
    out.per_token[g] = row[gen[g]];
    out.total += out.per_token[g];
  }
  return out;
}

// Seeds the head backward with per-generated-token weights and finishes the
// trunk backward. d(sum_g w_g * lp_g)/dlogits = w_g * (onehot - softmax).
void neural_teacher_backward(const NeuralLayout& ly, const double* p, const TeacherForward& fwd,
                             std::span<const int> gen, std::span<const double> weights, double scale,
                             double* grad) {
  const int T = fwd.tape.T, d = ly.d, v = ly.v;
  std::vector<double> dy(std::size_t(T) * d, 0.0);
  const int n_gen = static_cast<int>(gen.size());
  std::vector<double> dlogits(v);
  for (int g = 0; g < n_gen; ++g) {
    const double w = scale * weights[g];
    if (w == 0.0) continue;
    const double* row = fwd.logprob_rows.data() + std::size_t(g) * v;
    for (int i = 0; i < v; ++i) dlogits[i] = -w * std::exp(row[i]);
    dlogits[gen[g]] += w;
    const int t = fwd.p0 + g;
    const double* yt = fwd.tape.y.data() + std::size_t(t) * d;
    double* dyt = dy.data() + std::size_t(t) * d;
    for (int i = 0; i < v; ++i) {
      const double gl = dlogits[i];
      if (gl == 0.0) continue;
      double* gw = grad + ly.head_w + std::size_t(i) * d;
      const double* wi = p + ly.head_w + std::size_t(i) * d;
      for (int j = 0; j < d; ++j) {
        gw[j] += gl * yt[j];
        dyt[j] += gl * wi[j];
      }
      grad[ly.head_b + i] += gl;
    }
  }
  trunk_backward(ly, p, fwd.tape, dy, grad);
}

// Forward-only pass returning the next-token logits at the last position.
// Layers before the last are evaluated at every position, but in the last
// layer only keys/values need the full context; the query, attention mix,
// feed-forward and head run at the final position alone.
std::vector<double> neural_next_logits(const NeuralLayout& ly, const double* p,
                                       std::span<const int> context) {
  const int T = static_cast<int>(context.size());
  const int d = ly.d, h = ly.h;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> x(std::size_t(T) * d);
  for (int t = 0; t < T; ++t) {
    const double* te = p + ly.wte + std::size_t(context[t]) * d;
    const double* pe = p + ly.wpe + std::size_t(t) * d;
    double* xt = x.data() + std::size_t(t) * d;
    for (int j = 0; j < d; ++j) xt[j] = te[j] + pe[j];
  }
  std::vector<double> a(std::size_t(T) * d), q(std::size_t(T) * d), k(std::size_t(T) * d),
      v(std::size_t(T) * d), mean(T), rstd(T), wrow(T);
  for (int li = 0; li < ly.n_layers; ++li) {
    const BlockOffsets& bo = ly.blocks[li];
    const bool last_layer = li + 1 == ly.n_layers;
    layernorm_forward(T, d, p + bo.ln1_g, p + bo.ln1_b, x.data(), a.data(), mean.data(),
                      rstd.data());
    linear_forward(T, d, d, p + bo.wk, p + bo.bk, a.data(), k.data());
    linear_forward(T, d, d, p + bo.wv, p + bo.bv, a.data(), v.data());
    const int t_begin = last_layer ? T - 1 : 0;
    const int rows = T - t_begin;
    linear_forward(rows, d, d, p + bo.wq, p + bo.bq, a.data() + std::size_t(t_begin) * d,
                   q.data() + std::size_t(t_begin) * d);
    std::vector<double> attn(std::size_t(rows) * d, 0.0);
    for (int t = t_begin; t < T; ++t) {
      const double* qt = q.data() + std::size_t(t) * d;
      double max_e = -1e300;
      for (int j = 0; j <= t; ++j) {
        const double* kj = k.data() + std::size_t(j) * d;
        double e = 0.0;
        for (int c = 0; c < d; ++c) e += qt[c] * kj[c];
        wrow[j] = e * att_scale;
        max_e = std::max(max_e, wrow[j]);
      }
      double denom = 0.0;
      for (int j = 0; j <= t; ++j) {
        wrow[j] = std::exp(wrow[j] - max_e);
        denom += wrow[j];
      }
      const double inv = 1.0 / denom;
      double* at = attn.data() + std::size_t(t - t_begin) * d;
      for (int j = 0; j <= t; ++j) {
        const double wj = wrow[j] * inv;
        const double* vj = v.data() + std::size_t(j) * d;
        for (int c = 0; c < d; ++c) at[c] += wj * vj[c];
      }
    }
    std::vector<double> o(std::size_t(rows) * d);
    linear_forward(rows, d, d, p + bo.wo, p + bo.bo, attn.data(), o.data());
    for (int t = t_begin; t < T; ++t) {
      double* xt = x.data() + std::size_t(t) * d;
      const double* ot = o.data() + std::size_t(t - t_begin) * d;
      for (int j = 0; j < d; ++j) xt[j] += ot[j];
    }
    std::vector<double> b(std::size_t(rows) * d), f(std::size_t(rows) * h);
    layernorm_forward(rows, d, p + bo.ln2_g, p + bo.ln2_b, x.data() + std::size_t(t_begin) * d,
                      b.data(), mean.data(), rstd.data());
    linear_forward(rows, h, d, p + bo.w1, p + bo.b1, b.data(), f.data());
    for (double& fv : f) fv = gelu(fv);
    std::vector<double> g(std::size_t(rows) * d);
    linear_forward(rows, d, h, p + bo.w2, p + bo.b2, f.data(), g.data());
    for (int t = t_begin; t < T; ++t) {
      double* xt = x.data() + std::size_t(t) * d;
      const double* gt = g.data() + std::size_t(t - t_begin) * d;
      for (int j = 0; j < d; ++j) xt[j] += gt[j];
    }
  }
  std::vector<double> y(d), m1(1), r1(1);
  layernorm_forward(1, d, p + ly.lnf_g, p + ly.lnf_b, x.data() + std::size_t(T - 1) * d, y.data(),
                    m1.data(), r1.data());
  std::vector<double> logits(ly.v);
  for (int i = 0; i < ly.v; ++i) {
    const double* wi = p + ly.head_w + std::size_t(i) * d;
    double acc = p[ly.head_b + i];
    for (int j = 0; j < d; ++j) acc += wi[j] * y[j];
    logits[i] = acc;
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Tabular policy: one logit row per end-of-sequence-free generation prefix
// ---------------------------------------------------------------------------

struct TabularShape {
  int v, l, eos;
  std::size_t nodes;

  explicit TabularShape(const ArchDescriptor& a) : v(a.vocab_size), l(a.max_len), eos(a.eos_id) {
    if (v < 2 || l < 1 || eos < 0 || eos >= v) {
      throw std::invalid_argument("invalid tabular architecture descriptor");
    }
    nodes = 0;
    std::size_t level = 1;
    for (int depth = 0; depth < l; ++depth) {
      nodes += level;
      if (nodes * std::size_t(v) > kMaxTabularParams) {
        throw std::invalid_argument("tabular policy too large to materialize");
      }
      level *= std::size_t(v - 1);
    }
  }

  std::size_t total() const { return nodes * std::size_t(v); }

  std::size_t child(std::size_t node, int tok) const {
    const int rank = tok > eos ? tok - 1 : tok;
    return node * std::size_t(v - 1) + std::size_t(rank) + 1;
  }
};

std::vector<double> tabular_row_logprobs(const TabularShape& sh, const double* p, std::size_t node) {
  std::vector<double> row(p + node * sh.v, p + (node + 1) * sh.v);
  log_softmax_inplace(row.data(), sh.v);
  return row;
}

void tabular_walk_check(const TabularShape& sh, std::span<const int> gen) {
  check_tokens(gen, sh.v);
  if (static_cast<int>(gen.size()) > sh.l) throw std::invalid_argument("sequence exceeds max_len");
  for (std::size_t i = 0; i + 1 < gen.size(); ++i) {
    if (gen[i] == sh.eos) throw std::invalid_argument("token after end-of-sequence");
  }
}

void tabular_enumerate(const TabularShape& sh, const double* p, std::size_t node, int depth,
                       std::vector<int>& prefix, std::vector<double>& lps, double total,
                       std::vector<Trajectory>& out) {
  const std::vector<double> row = tabular_row_logprobs(sh, p, node);
  for (int tok = 0; tok < sh.v; ++tok) {
    prefix.push_back(tok);
    lps.push_back(row[tok]);
    const double t2 = total + row[tok];
    if (tok == sh.eos || depth + 1 == sh.l) {
      Trajectory tr;
      tr.gen_tokens = prefix;
      tr.per_token_logprobs = lps;
      tr.total_logprob = t2;
      out.push_back(std::move(tr));
    } else {
      tabular_enumerate(sh, p, sh.child(node, tok), depth + 1, prefix, lps, t2, out);
    }
    prefix.pop_back();
    lps.pop_back();
  }
}

// ---------------------------------------------------------------------------

int draw_from_logits(std::span<const double> logits, double temperature, Rng& rng) {
  const int n = static_cast<int>(logits.size());
  if (temperature < kGreedyTemp) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    return best;
  }
  double m = logits[0] / temperature;
  std::vector<double> probs(n);
  for (int i = 0; i < n; ++i) {
    probs[i] = logits[i] / temperature;
    m = std::max(m, probs[i]);
  }
  for (int i = 0; i < n; ++i) probs[i] = std::exp(probs[i] - m);
  return static_cast<int>(rng.categorical(probs));
}

}  // namespace

bool operator==(const ArchDescriptor& a, const ArchDescriptor& b) {
  return a.mode == b.mode && a.vocab_size == b.vocab_size && a.max_len == b.max_len &&
         a.embed_dim == b.embed_dim && a.n_layers == b.n_layers && a.hidden_dim == b.hidden_dim &&
         a.eos_id == b.eos_id;
}

std::size_t param_count(const ArchDescriptor& arch) {
  if (arch.mode == PolicyMode::tabular) return TabularShape(arch).total();
  return NeuralLayout(arch).total;
}

PolicyParams init_params(const ArchDescriptor& arch, std::uint64_t seed, double init_std) {
  PolicyParams out;
  out.arch = arch;
  out.values.assign(param_count(arch), 0.0);
  if (arch.mode == PolicyMode::tabular) return out;
  const NeuralLayout ly(arch);
  Rng rng(derive_seed(seed, "policy-init"));
  const auto fill_normal = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out.values[off + i] = rng.normal() * init_std;
  };
  const auto fill_one = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out.values[off + i] = 1.0;
  };
  fill_normal(ly.wte, std::size_t(ly.v) * ly.d);
  fill_normal(ly.wpe, std::size_t(ly.l) * ly.d);
  for (const auto& b : ly.blocks) {
    fill_one(b.ln1_g, ly.d);
    fill_normal(b.wq, std::size_t(ly.d) * ly.d);
    fill_normal(b.wk, std::size_t(ly.d) * ly.d);
    fill_normal(b.wv, std::size_t(ly.d) * ly.d);
    fill_normal(b.wo, std::size_t(ly.d) * ly.d);
    fill_one(b.ln2_g, ly.d);
    fill_normal(b.w1, std::size_t(ly.h) * ly.d);
    fill_normal(b.w2, std::size_t(ly.d) * ly.h);
  }
  fill_one(ly.lnf_g, ly.d);
  // head stays zero: the untrained next-token distribution is exactly uniform
  return out;
}

PolicyParams init_params_markov(const ArchDescriptor& arch, std::span<const double> transition_logits,
                                std::uint64_t seed, double noise_std, double embed_scale) {
  if (arch.mode != PolicyMode::neural) {
    throw std::invalid_argument("init_params_markov requires a neural policy");
  }
  const NeuralLayout ly(arch);
  if (ly.d < ly.v) throw std::invalid_argument("embed_dim must be at least vocab_size");
  if (transition_logits.size() != std::size_t(ly.v) * ly.v) {
    throw std::invalid_argument("transition matrix must be vocab_size x vocab_size");
  }
  PolicyParams out = init_params(arch, seed, noise_std);
  // scaled one-hot token embeddings: coordinate t carries token t
  for (int t = 0; t < ly.v; ++t) {
    out.values[ly.wte + std::size_t(t) * ly.d + t] += embed_scale;
  }
  // After the (zero-beta, unit-gamma) final layernorm of x = s*e_cur + noise,
  // coordinate cur sits near s*(v'-1)/v' / (s*sqrt(v'-1)/v') with v' = d; the
  // head row picks it up. Scale so the realized logit gap matches the
  // requested transition logits.
  const double dd = static_cast<double>(ly.d);
  const double y_cur = (embed_scale * (dd - 1.0) / dd) / (embed_scale * std::sqrt(dd - 1.0) / dd);
  for (int next = 0; next < ly.v; ++next) {
    for (int cur = 0; cur < ly.v; ++cur) {
      out.values[ly.head_w + std::size_t(next) * ly.d + cur] +=
          transition_logits[std::size_t(next) * ly.v + cur] / y_cur;
    }
  }
  return out;
}

PolicyParams clone_params(const PolicyParams& params) { return params; }

Trajectory sample(const PolicyParams& params, std::span<const int> prompt_tokens, double temperature,
                  std::uint64_t seed) {
  if (temperature < 0.0) throw std::invalid_argument("temperature must be nonnegative");
  Trajectory out;
  out.prompt_tokens.assign(prompt_tokens.begin(), prompt_tokens.end());
  Rng rng(derive_seed(seed, "sample"));
  if (params.arch.mode == PolicyMode::tabular) {
    const TabularShape sh(params.arch);
    check_tokens(prompt_tokens, sh.v);
    std::size_t node = 0;
    for (int depth = 0; depth < sh.l; ++depth) {
      std::vector<double> row(params.values.begin() + node * sh.v,
                              params.values.begin() + (node + 1) * sh.v);
      const int tok = draw_from_logits(row, temperature, rng);
      log_softmax_inplace(row.data(), sh.v);
      out.gen_tokens.push_back(tok);
      out.per_token_logprobs.push_back(row[tok]);
      out.total_logprob += row[tok];
      if (tok == sh.eos) break;
      node = sh.child(node, tok);
    }
    return out;
  }
  const NeuralLayout ly(params.arch);
  if (prompt_tokens.empty()) throw std::invalid_argument("prompt must be non-empty");
  if (static_cast<int>(prompt_tokens.size()) >= ly.l) throw std::invalid_argument("prompt too long");
  check_tokens(prompt_tokens, ly.v);
  std::vector<int> ctx(prompt_tokens.begin(), prompt_tokens.end());
  while (static_cast<int>(ctx.size()) < ly.l) {
    std::vector<double> logits = neural_next_logits(ly, params.values.data(), ctx);
    const int tok = draw_from_logits(logits, temperature, rng);
    log_softmax_inplace(logits.data(), ly.v);
    out.gen_tokens.push_back(tok);
    out.per_token_logprobs.push_back(logits[tok]);
    out.total_logprob += logits[tok];
    ctx.push_back(tok);
    if (tok == params.arch.eos_id) break;
  }
  return out;
}

std::pair<double, std::vector<double>> logprob(const PolicyParams& params,
                                               std::span<const int> prompt_tokens,
                                               std::span<const int> gen_tokens) {
  if (params.arch.mode == PolicyMode::tabular) {
    const TabularShape sh(params.arch);
    tabular_walk_check(sh, gen_tokens);
    std::vector<double> per;
    double total = 0.0;
    std::size_t node = 0;
    for (std::size_t i = 0; i < gen_tokens.size(); ++i) {
      const std::vector<double> row = tabular_row_logprobs(sh, params.values.data(), node);
      per.push_back(row[gen_tokens[i]]);
      total += row[gen_tokens[i]];
      if (gen_tokens[i] != sh.eos && i + 1 < gen_tokens.size()) {
        node = sh.child(node, gen_tokens[i]);
      }
    }
    return {total, std::move(per)};
  }
  const NeuralLayout ly(params.arch);
  if (gen_tokens.empty()) return {0.0, {}};
  TeacherForward fwd = neural_teacher_forward(ly, params.values.data(), prompt_tokens, gen_tokens);
  return {fwd.total, std::move(fwd.per_token)};
}

std::vector<double> grad_logprob(const PolicyParams& params, std::span<const int> prompt_tokens,
                                 std::span<const int> gen_tokens) {
  std::vector<double> grad(params.values.size(), 0.0);
  const std::vector<double> ones(gen_tokens.size(), 1.0);
  accumulate_weighted_grad_logprob(params, prompt_tokens, gen_tokens, ones, 1.0, grad);
  return grad;
}

void accumulate_weighted_grad_logprob(const PolicyParams& params, std::span<const int> prompt_tokens,
                                      std::span<const int> gen_tokens, std::span<const double> weights,
                                      double scale, std::vector<double>& grad_accum) {
  if (grad_accum.size() != params.values.size()) {
    throw std::invalid_argument("gradient accumulator size mismatch");
  }
  if (weights.size() != gen_tokens.size()) {
    throw std::invalid_argument("per-token weight length mismatch");
  }
  if (gen_tokens.empty()) return;
  if (params.arch.mode == PolicyMode::tabular) {
    const TabularShape sh(params.arch);
    tabular_walk_check(sh, gen_tokens);
    std::size_t node = 0;
    for (std::size_t i = 0; i < gen_tokens.size(); ++i) {
      const std::vector<double> row = tabular_row_logprobs(sh, params.values.data(), node);
      const double w = scale * weights[i];
      double* g = grad_accum.data() + node * sh.v;
      for (int tok = 0; tok < sh.v; ++tok) {
        g[tok] += w * ((tok == gen_tokens[i] ? 1.0 : 0.0) - std::exp(row[tok]));
      }
      if (gen_tokens[i] != sh.eos && i + 1 < gen_tokens.size()) {
        node = sh.child(node, gen_tokens[i]);
      }
    }
    return;
  }
  const NeuralLayout ly(params.arch);
  const TeacherForward fwd = neural_teacher_forward(ly, params.values.data(), prompt_tokens, gen_tokens);
  neural_teacher_backward(ly, params.values.data(), fwd, gen_tokens, weights, scale,
                          grad_accum.data());
}

struct SequenceEval::Impl {
  const PolicyParams* params;
  std::vector<int> prompt;
  std::vector<int> gen;
  bool neural;
  // neural state
  std::unique_ptr<NeuralLayout> layout;
  std::unique_ptr<TeacherForward> fwd;
  // tabular state
  double total = 0.0;
  std::vector<double> per_token;
};

SequenceEval::SequenceEval(const PolicyParams& params, std::span<const int> prompt_tokens,
                           std::span<const int> gen_tokens)
    : impl_(new Impl) {
  impl_->params = &params;
  impl_->prompt.assign(prompt_tokens.begin(), prompt_tokens.end());
  impl_->gen.assign(gen_tokens.begin(), gen_tokens.end());
  impl_->neural = params.arch.mode == PolicyMode::neural;
  if (impl_->neural) {
    impl_->layout = std::make_unique<NeuralLayout>(params.arch);
    impl_->fwd = std::make_unique<TeacherForward>(
        neural_teacher_forward(*impl_->layout, params.values.data(), prompt_tokens, gen_tokens));
    impl_->total = impl_->fwd->total;
    impl_->per_token = impl_->fwd->per_token;
  } else {
    auto [total, per] = logprob(params, prompt_tokens, gen_tokens);
    impl_->total = total;
    impl_->per_token = std::move(per);
  }
}

SequenceEval::~SequenceEval() { delete impl_; }
SequenceEval::SequenceEval(SequenceEval&& other) noexcept : impl_(other.impl_) { other.impl_ = nullptr; }
SequenceEval& SequenceEval::operator=(SequenceEval&& other) noexcept {
  if (this != &other) {
    delete impl_;
    impl_ = other.impl_;
    other.impl_ = nullptr;
  }
  return *this;
}

double SequenceEval::total_logprob() const { return impl_->total; }

const std::vector<double>& SequenceEval::per_token_logprobs() const { return impl_->per_token; }

void SequenceEval::accumulate_grad(std::span<const double> weights, double scale,
                                   std::vector<double>& grad_accum) const {
  if (grad_accum.size() != impl_->params->values.size()) {
    throw std::invalid_argument("gradient accumulator size mismatch");
  }
  if (weights.size() != impl_->gen.size()) {
    throw std::invalid_argument("per-token weight length mismatch");
  }
  if (impl_->gen.empty()) return;
  if (impl_->neural) {
    neural_teacher_backward(*impl_->layout, impl_->params->values.data(), *impl_->fwd, impl_->gen,
                            weights, scale, grad_accum.data());
  } else {
    accumulate_weighted_grad_logprob(*impl_->params, impl_->prompt, impl_->gen, weights, scale,
                                     grad_accum);
  }
}

std::vector<Trajectory> enumerate_trajectories(const PolicyParams& params) {
  if (params.arch.mode != PolicyMode::tabular) {
    throw std::invalid_argument("enumerate_trajectories requires a tabular policy");
  }
  const TabularShape sh(params.arch);
  double count_estimate = 1.0;
  for (int i = 0; i < sh.l; ++i) count_estimate = count_estimate * (sh.v - 1) + 1;
  if (count_estimate > 2e6) throw std::invalid_argument("trajectory space too large to enumerate");
  std::vector<Trajectory> out;
  std::vector<int> prefix;
  std::vector<double> lps;
  tabular_enumerate(sh, params.values.data(), 0, 0, prefix, lps, 0.0, out);
  return out;
}

const char* to_string(PolicyMode m) { return m == PolicyMode::neural ? "neural" : "tabular"; }

PolicyMode policy_mode_from_string(const std::string& s) {
  if (s == "neural") return PolicyMode::neural;
  if (s == "tabular") return PolicyMode::tabular;
  throw std::invalid_argument("unknown policy mode: " + s);
}

}  // namespace rence
