#include "attnlab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "attnlab/error.hpp"

namespace attnlab::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

MatMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    fail(ErrorKind::dimension, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::dimension,
         std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape) {
    if (d == 0) fail(ErrorKind::dimension, "tensor dimensions must be positive: " + shape_str(shape));
  }
  const std::size_t n = product(shape);
  impl_->shape = std::move(shape);
  impl_->value.assign(n, 0.0);
  impl_->grad.assign(n, 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : Tensor(std::move(shape), requires_grad) {
  if (values.size() != impl_->value.size()) {
    fail(ErrorKind::dimension, "tensor " + shape_str(impl_->shape) + " given " +
                                   std::to_string(values.size()) + " values");
  }
  impl_->value = std::move(values);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

std::size_t Tensor::rows() const { return impl_->shape.size() == 1 ? 1 : impl_->shape[0]; }

std::size_t Tensor::cols() const { return impl_->shape.back(); }

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::dimension, "item() on non-scalar tensor " + shape_str(shape()));
  return impl_->value[0];
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->requires_grad);
  out.impl_->value = impl_->value;
  return out;
}

void Graph::record(std::function<void()> backward_fn) {
  if (ran_) fail(ErrorKind::state, "cannot record into a graph that has already run backward; reset() first");
  tape_.push_back(std::move(backward_fn));
}

void Graph::backward(const Tensor& loss) {
  if (ran_) fail(ErrorKind::state, "backward already ran on this graph; reset() before another pass");
  if (loss.size() != 1) fail(ErrorKind::dimension, "backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) fail(ErrorKind::state, "loss does not depend on any tensor requiring grad");
  ran_ = true;
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  visited_ = 0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    (*it)();
    ++visited_;
  }
}

void Graph::reset() {
  tape_.clear();
  visited_ = 0;
  ran_ = false;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    fail(ErrorKind::dimension, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n}, any_grad({&a, &b}));
  as_matrix(out.value(), m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  if (out.requires_grad()) {
    g.record([a = Tensor(a), b = Tensor(b), out, m, k, n]() mutable {
      auto go = as_matrix(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_matrix(a.grad(), m, k).noalias() += go * as_matrix(std::as_const(b).value(), k, n).transpose();
      if (b.requires_grad()) as_matrix(b.grad(), k, n).noalias() += as_matrix(std::as_const(a).value(), m, k).transpose() * go;
    });
  }
  return out;
}

Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    fail(ErrorKind::dimension,
         "matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n}, any_grad({&a, &b}));
  as_matrix(out.value(), m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), n, k).transpose();
  if (out.requires_grad()) {
    g.record([a = Tensor(a), b = Tensor(b), out, m, k, n]() mutable {
      auto go = as_matrix(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_matrix(a.grad(), m, k).noalias() += go * as_matrix(std::as_const(b).value(), n, k);
      if (b.requires_grad()) as_matrix(b.grad(), n, k).noalias() += go.transpose() * as_matrix(std::as_const(a).value(), m, k);
    });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), any_grad({&a, &b}));
  auto o = out.value();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  if (out.requires_grad()) {
    g.record([a = Tensor(a), b = Tensor(b), out]() mutable {
      auto go = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), any_grad({&a, &b}));
  auto o = out.value();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  if (out.requires_grad()) {
    g.record([a = Tensor(a), b = Tensor(b), out]() mutable {
      auto go = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& x, double c) {
  Tensor out(x.shape(), x.requires_grad());
  auto o = out.value();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * c;
  if (out.requires_grad()) {
    g.record([x = Tensor(x), out, c]() mutable {
      auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  Tensor out = Tensor::scalar(s, x.requires_grad());
  if (out.requires_grad()) {
    g.record([x = Tensor(x), out]() mutable {
      const double go = std::as_const(out).grad()[0];
      for (double& v : x.grad()) v += go;
    });
  }
  return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    fail(ErrorKind::dimension, "add_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  Tensor out(x.shape(), any_grad({&x, &bias}));
  auto o = out.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) o[r * n + c] = x[r * n + c] + bias[c];
  if (out.requires_grad()) {
    g.record([x = Tensor(x), bias = Tensor(bias), out, m, n]() mutable {
      auto go = std::as_const(out).grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += go[r * n + c];
      }
    });
  }
  return out;
}

Tensor gelu(Graph& g, const Tensor& x) {
  constexpr double kScale = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kCubic = 0.044715;
  Tensor out(x.shape(), x.requires_grad());
  auto o = out.value();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x[i];
    o[i] = 0.5 * v * (1.0 + std::tanh(kScale * (v + kCubic * v * v * v)));
  }
  if (out.requires_grad()) {
    g.record([x = Tensor(x), out]() mutable {
      auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double v = x[i];
        const double t = std::tanh(kScale * (v + kCubic * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kScale * (1.0 + 3.0 * kCubic * v * v);
        gx[i] += go[i] * d;
      }
    });
  }
  return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    fail(ErrorKind::dimension, "layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                                   " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape(), any_grad({&x, &gain, &bias}));
  std::vector<double> xhat(x.size());
  std::vector<double> rstd(rows);
  auto o = out.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * rstd[r];
      o[r * d + c] = xhat[r * d + c] * gain[c] + bias[c];
    }
  }
  if (out.requires_grad()) {
    g.record([x = Tensor(x), gain = Tensor(gain), bias = Tensor(bias), out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
      auto go = std::as_const(out).grad();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gg[c] += go[r * d + c] * xhat[r * d + c];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gb[c] += go[r * d + c];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dxh = go[r * d + c] * gain[c];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[r * d + c];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const double dxh = go[r * d + c] * gain[c];
            gx[r * d + c] += rstd[r] * (dxh - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding");
  if (ids.empty()) fail(ErrorKind::input, "embedding: empty id sequence");
  const std::size_t vocab = table.rows(), d = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      fail(ErrorKind::range, "embedding: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
  }
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), d}, table.requires_grad());
  auto o = out.value();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    const auto src = table.value().subspan(static_cast<std::size_t>(idx[t]) * d, d);
    std::copy(src.begin(), src.end(), o.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  if (out.requires_grad()) {
    g.record([table = Tensor(table), out, idx = std::move(idx), d]() mutable {
      auto go = std::as_const(out).grad();
      auto gt = table.grad();
      for (std::size_t t = 0; t < idx.size(); ++t)
        for (std::size_t c = 0; c < d; ++c) gt[static_cast<std::size_t>(idx[t]) * d + c] += go[t * d + c];
    });
  }
  return out;
}

Tensor slice_cols(Graph& g, const Tensor& x, std::size_t offset, std::size_t width) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (width == 0 || offset + width > n) {
    fail(ErrorKind::dimension, "slice_cols: [" + std::to_string(offset) + ", +" + std::to_string(width) +
                                   ") out of " + shape_str(x.shape()));
  }
  Tensor out({m, width}, x.requires_grad());
  auto o = out.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < width; ++c) o[r * width + c] = x[r * n + offset + c];
  if (out.requires_grad()) {
    g.record([x = Tensor(x), out, m, n, offset, width]() mutable {
      auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < width; ++c) gx[r * n + offset + c] += go[r * width + c];
    });
  }
  return out;
}

Tensor concat_cols(Graph& g, std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) fail(ErrorKind::dimension, "concat_cols: row count mismatch " + shape_str(p.shape()));
    n += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out({m, n}, needs_grad);
  auto o = out.value();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) o[r * n + offset + c] = p[r * w + c];
    offset += w;
  }
  if (out.requires_grad()) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    g.record([inputs = std::move(inputs), out, m, n]() mutable {
      auto go = std::as_const(out).grad();
      std::size_t off = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += go[r * n + off + c];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor masked_softmax_rows(Graph& g, const Tensor& scores) {
  require_2d(scores, "masked_softmax_rows");
  const std::size_t t = scores.rows();
  if (scores.cols() != t) fail(ErrorKind::dimension, "masked_softmax_rows: non-square " + shape_str(scores.shape()));
  Tensor out({t, t}, scores.requires_grad());
  auto p = out.value();
  for (std::size_t i = 0; i < t; ++i) {
    const double* s = scores.value().data() + i * t;
    double mx = s[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, s[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      p[i * t + j] = std::exp(s[j] - mx);
      denom += p[i * t + j];
    }
    for (std::size_t j = 0; j <= i; ++j) p[i * t + j] /= denom;
  }
  if (out.requires_grad()) {
    g.record([scores = Tensor(scores), out, t]() mutable {
      auto go = std::as_const(out).grad();
      auto pv = std::as_const(out).value();
      auto gs = scores.grad();
      for (std::size_t i = 0; i < t; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += pv[i * t + j] * go[i * t + j];
        for (std::size_t j = 0; j <= i; ++j) gs[i * t + j] += pv[i * t + j] * (go[i * t + j] - dot);
      }
    });
  }
  return out;
}

Tensor causal_attend(Graph& g, const Tensor& attn, const Tensor& v) {
  require_2d(attn, "causal_attend");
  require_2d(v, "causal_attend");
  const std::size_t t = attn.rows(), d = v.cols();
  if (attn.cols() != t || v.rows() != t) {
    fail(ErrorKind::dimension, "causal_attend: " + shape_str(attn.shape()) + " with values " + shape_str(v.shape()));
  }
  Tensor out({t, d}, any_grad({&attn, &v}));
  auto o = out.value();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double a = attn[i * t + j];
      for (std::size_t c = 0; c < d; ++c) o[i * d + c] += a * v[j * d + c];
    }
  if (out.requires_grad()) {
    g.record([attn = Tensor(attn), v = Tensor(v), out, t, d]() mutable {
      auto go = std::as_const(out).grad();
      if (attn.requires_grad()) {
        auto ga = attn.grad();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += go[i * d + c] * v[j * d + c];
            ga[i * t + j] += s;
          }
      }
      if (v.requires_grad()) {
        auto gv = v.grad();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j <= i; ++j) {
            const double a = attn[i * t + j];
            for (std::size_t c = 0; c < d; ++c) gv[j * d + c] += a * go[i * d + c];
          }
      }
    });
  }
  return out;
}

Tensor cross_entropy_masked(Graph& g, const Tensor& logits, std::span<const int> targets,
                            const std::vector<bool>& mask) {
  require_2d(logits, "cross_entropy_masked");
  const std::size_t t = logits.rows(), vocab = logits.cols();
  if (targets.size() != t || mask.size() != t) {
    fail(ErrorKind::dimension, "cross_entropy_masked: logits " + shape_str(logits.shape()) + " with " +
                                   std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                                   " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      fail(ErrorKind::range, "cross_entropy_masked: target id " + std::to_string(targets[i]) + " at position " +
                                 std::to_string(i) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  if (count == 0) fail(ErrorKind::degenerate_input, "cross_entropy_masked: loss mask selects no positions");

  std::vector<double> probs(t * vocab, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    const double* z = logits.value().data() + i * vocab;
    const double mx = *std::max_element(z, z + vocab);
    double denom = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[i * vocab + c] = std::exp(z[c] - mx);
      denom += probs[i * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) probs[i * vocab + c] /= denom;
    total += std::log(denom) + mx - z[targets[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(count), logits.requires_grad());
  if (out.requires_grad()) {
    std::vector<int> tg(targets.begin(), targets.end());
    g.record([logits = Tensor(logits), out, probs = std::move(probs), tg = std::move(tg), mask, count, t, vocab]() mutable {
      const double go = std::as_const(out).grad()[0] / static_cast<double>(count);
      auto gl = logits.grad();
      for (std::size_t i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        for (std::size_t c = 0; c < vocab; ++c) {
          const double onehot = static_cast<int>(c) == tg[i] ? 1.0 : 0.0;
          gl[i * vocab + c] += go * (probs[i * vocab + c] - onehot);
        }
      }
    });
  }
  return out;
}

}  // namespace attnlab::ad
