#pragma once
// Loop-only re-implementation of the decoder forward pass and masked
// cross-entropy, templated on the scalar type. Independent of the autodiff
// tape; used as the finite-difference oracle for gradient checks.

#include <cmath>
#include <cstddef>
#include <quadmath.h>
#include <vector>

#include "attnlab/model.hpp"

namespace ref {

using quad = __float128;

inline double r_exp(double x) { return std::exp(x); }
inline double r_log(double x) { return std::log(x); }
inline double r_sqrt(double x) { return std::sqrt(x); }
inline double r_tanh(double x) { return std::tanh(x); }
inline long double r_exp(long double x) { return std::exp(x); }
inline long double r_log(long double x) { return std::log(x); }
inline long double r_sqrt(long double x) { return std::sqrt(x); }
inline long double r_tanh(long double x) { return std::tanh(x); }
inline quad r_exp(quad x) { return expq(x); }
inline quad r_log(quad x) { return logq(x); }
inline quad r_sqrt(quad x) { return sqrtq(x); }
inline quad r_tanh(quad x) { return tanhq(x); }

// Where a perturbation lands. kind: param coordinate, or an entry of one
// head's post-softmax attention matrix.
struct Nudge {
  enum Kind { none, param, attn } kind = none;
  std::size_t tensor = 0, index = 0;  // param
  int layer = 0, head = 0, row = 0, col = 0;  // attn
};

template <class S>
class ReferenceModel {
 public:
  ReferenceModel(const attnlab::Model& m, std::vector<int> inputs, std::vector<int> targets, std::vector<bool> mask)
      : cfg_(m.config()), in_(std::move(inputs)), tg_(std::move(targets)), mask_(std::move(mask)) {
    for (const auto& nt : m.params().named()) {
      const auto v = std::as_const(nt.tensor).value();
      p_.emplace_back(v.begin(), v.end());
    }
    T_ = in_.size();
    d_ = static_cast<std::size_t>(cfg_.d_model);
    cache_.assign(static_cast<std::size_t>(cfg_.n_layers) + 1, {});
    Nudge none;
    base_ = run(none, -1, 0, true);
  }

  S base_loss() const { return base_; }
  std::size_t n_tensors() const { return p_.size(); }
  std::size_t tensor_size(std::size_t k) const { return p_[k].size(); }

  // Loss with parameter coordinate (k, i) shifted by delta.
  S loss_param(std::size_t k, std::size_t i, S delta) {
    const S saved = p_[k][i];
    p_[k][i] = saved + delta;
    Nudge n;
    n.kind = Nudge::param;
    n.tensor = k;
    n.index = i;
    const int start = first_layer(k);
    const S out = run(n, start, 0, false);
    p_[k][i] = saved;
    return out;
  }

  // Loss with Γ[layer][head](row, col) shifted by delta after the softmax.
  S loss_attn(int layer, int head, int row, int col, S delta) {
    Nudge n;
    n.kind = Nudge::attn;
    n.layer = layer;
    n.head = head;
    n.row = row;
    n.col = col;
    return run(n, layer, delta, false);
  }

 private:
  // Layer index whose input is the first activation touched by tensor k;
  // embeddings restart from scratch (-1), the final norm from the top.
  int first_layer(std::size_t k) const {
    if (k < 2) return -1;
    const std::size_t per = 13;
    const std::size_t l = (k - 2) / per;
    if (l >= static_cast<std::size_t>(cfg_.n_layers)) return cfg_.n_layers;
    return static_cast<int>(l);
  }

  const std::vector<S>& P(std::size_t k) const { return p_[k]; }
  const std::vector<S>& LP(int l, int j) const { return p_[2 + static_cast<std::size_t>(l) * 13 + static_cast<std::size_t>(j)]; }

  void layer_norm(const std::vector<S>& x, const std::vector<S>& g, const std::vector<S>& b, std::vector<S>& out) const {
    out.assign(x.size(), S(0));
    for (std::size_t r = 0; r < T_; ++r) {
      const S* xr = &x[r * d_];
      S mean = 0;
      for (std::size_t c = 0; c < d_; ++c) mean += xr[c];
      mean /= S(d_);
      S var = 0;
      for (std::size_t c = 0; c < d_; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= S(d_);
      const S inv = S(1) / r_sqrt(var + S(1e-5));
      for (std::size_t c = 0; c < d_; ++c) out[r * d_ + c] = (xr[c] - mean) * inv * g[c] + b[c];
    }
  }

  // out (T x m) = x (T x n) * w (n x m)
  void matmul(const std::vector<S>& x, std::size_t n, const std::vector<S>& w, std::size_t m, std::vector<S>& out) const {
    out.assign(T_ * m, S(0));
    for (std::size_t r = 0; r < T_; ++r) {
      S* o = &out[r * m];
      for (std::size_t k = 0; k < n; ++k) {
        const S a = x[r * n + k];
        const S* wr = &w[k * m];
        for (std::size_t c = 0; c < m; ++c) o[c] += a * wr[c];
      }
    }
  }

  void block(int l, std::vector<S>& x, const Nudge& n, S attn_delta) const {
    const std::size_t H = static_cast<std::size_t>(cfg_.n_heads), dh = d_ / H, f = 4 * d_;
    std::vector<S> h, q, k, v, cat(T_ * d_, S(0)), tmp;
    layer_norm(x, LP(l, 0), LP(l, 1), h);
    matmul(h, d_, LP(l, 2), d_, q);
    matmul(h, d_, LP(l, 3), d_, k);
    matmul(h, d_, LP(l, 4), d_, v);
    const S scale = S(1) / r_sqrt(S(dh));
    std::vector<S> gamma(T_ * T_);
    for (std::size_t hd = 0; hd < H; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < T_; ++i) {
        S mx = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          S s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i * d_ + off + c] * k[j * d_ + off + c];
          s *= scale;
          gamma[i * T_ + j] = s;
          if (j == 0 || s > mx) mx = s;
        }
        S z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          gamma[i * T_ + j] = r_exp(gamma[i * T_ + j] - mx);
          z += gamma[i * T_ + j];
        }
        for (std::size_t j = 0; j <= i; ++j) gamma[i * T_ + j] /= z;
      }
      if (n.kind == Nudge::attn && n.layer == l && static_cast<std::size_t>(n.head) == hd) {
        gamma[static_cast<std::size_t>(n.row) * T_ + static_cast<std::size_t>(n.col)] += attn_delta;
      }
      for (std::size_t i = 0; i < T_; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const S a = gamma[i * T_ + j];
          for (std::size_t c = 0; c < dh; ++c) cat[i * d_ + off + c] += a * v[j * d_ + off + c];
        }
      }
    }
    matmul(cat, d_, LP(l, 5), d_, tmp);
    const auto& bo = LP(l, 6);
    for (std::size_t r = 0; r < T_; ++r)
      for (std::size_t c = 0; c < d_; ++c) x[r * d_ + c] += tmp[r * d_ + c] + bo[c];
    layer_norm(x, LP(l, 7), LP(l, 8), h);
    std::vector<S> u;
    matmul(h, d_, LP(l, 9), f, u);
    const auto& b1 = LP(l, 10);
    const S k0 = S(0.7978845608028654);  // sqrt(2/pi), same literal as the library
    for (std::size_t r = 0; r < T_; ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        const S z = u[r * f + c] + b1[c];
        u[r * f + c] = S(0.5) * z * (S(1) + r_tanh(k0 * (z + S(0.044715) * z * z * z)));
      }
    }
    matmul(u, f, LP(l, 11), d_, tmp);
    const auto& b2 = LP(l, 12);
    for (std::size_t r = 0; r < T_; ++r)
      for (std::size_t c = 0; c < d_; ++c) x[r * d_ + c] += tmp[r * d_ + c] + b2[c];
  }

  S run(const Nudge& n, int start, S attn_delta, bool fill_cache) {
    std::vector<S> x;
    const int L = cfg_.n_layers;
    if (start < 0) {
      x.assign(T_ * d_, S(0));
      for (std::size_t r = 0; r < T_; ++r)
        for (std::size_t c = 0; c < d_; ++c)
          x[r * d_ + c] = P(0)[static_cast<std::size_t>(in_[r]) * d_ + c] + P(1)[r * d_ + c];
      start = 0;
    } else {
      x = cache_[static_cast<std::size_t>(start)];
    }
    for (int l = start; l < L; ++l) {
      if (fill_cache) cache_[static_cast<std::size_t>(l)] = x;
      block(l, x, n, attn_delta);
    }
    if (fill_cache) cache_[static_cast<std::size_t>(L)] = x;
    std::vector<S> xf;
    layer_norm(x, P(p_.size() - 2), P(p_.size() - 1), xf);
    const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
    S total = 0;
    std::size_t count = 0;
    std::vector<S> z(V);
    for (std::size_t r = 0; r < T_; ++r) {
      if (!mask_[r]) continue;
      ++count;
      S mx = 0;
      for (std::size_t t = 0; t < V; ++t) {
        S s = 0;
        for (std::size_t c = 0; c < d_; ++c) s += xf[r * d_ + c] * P(0)[t * d_ + c];
        z[t] = s;
        if (t == 0 || s > mx) mx = s;
      }
      S denom = 0;
      for (std::size_t t = 0; t < V; ++t) denom += r_exp(z[t] - mx);
      total += r_log(denom) + mx - z[static_cast<std::size_t>(tg_[r])];
    }
    return total / S(count);
  }

  attnlab::ModelConfig cfg_;
  std::vector<int> in_, tg_;
  std::vector<bool> mask_;
  std::vector<std::vector<S>> p_;
  std::vector<std::vector<S>> cache_;
  std::size_t T_ = 0, d_ = 0;
  S base_ = 0;
};

}  // namespace ref
