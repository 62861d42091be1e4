#include <cmath>
#include <functional>
#include <quadmath.h>
#include <random>
#include <vector>

#include "doctest.h"

#include "attnlab/autodiff.hpp"
#include "attnlab/error.hpp"

using namespace attnlab;
using namespace attnlab::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t(std::move(shape), grad);
  for (auto& v : t.value()) v = nd(rng);
  return t;
}

bool throws_kind(const std::function<void()>& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

// Central differences of `loss` over every coordinate of every input; returns
// the worst relative error against the analytic gradients on coordinates
// whose reference magnitude exceeds `floor`.
double worst_fd_error(std::vector<Tensor>& inputs, const std::function<Tensor(Graph&)>& loss, double floor = 1e-8) {
  for (auto& t : inputs) t.zero_grad();
  Graph g;
  g.backward(loss(g));
  const double h = 1e-6;
  double worst = 0.0;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      Graph gp;
      const double up = loss(gp).item();
      t[i] = saved - h;
      Graph gm;
      const double down = loss(gm).item();
      t[i] = saved;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) <= floor) continue;
      worst = std::max(worst, std::abs(t.grad()[i] - fd) / std::abs(fd));
    }
  }
  return worst;
}

using quad = __float128;

// Loop form of the composed graph in the next-to-last test case.
quad composed_reference(const std::vector<std::vector<quad>>& p, const std::vector<int>& ids,
                        const std::vector<int>& targets, const std::vector<bool>& mask, std::size_t T, std::size_t d,
                        std::size_t V) {
  const auto& pos = p[0];
  const auto &wq = p[1], &wk = p[2], &wv = p[3], &bias = p[4], &gain = p[5], &beta = p[6], &emb = p[7];
  std::vector<quad> h(T * d), q(T * 3, 0), k(T * 3, 0), v(T * d, 0), o(T * d, 0);
  for (std::size_t r = 0; r < T; ++r) {
    std::vector<quad> x(d);
    quad mean = 0, var = 0;
    for (std::size_t c = 0; c < d; ++c) {
      x[c] = pos[r * d + c] + emb[static_cast<std::size_t>(ids[r]) * d + c];
      mean += x[c];
    }
    mean /= d;
    for (std::size_t c = 0; c < d; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= d;
    for (std::size_t c = 0; c < d; ++c) h[r * d + c] = (x[c] - mean) / sqrtq(var + quad(1e-5)) * gain[c] + beta[c];
  }
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < d; ++j) {
        if (c < 3) q[r * 3 + c] += h[r * d + j] * wq[j * d + c];
        if (c < 3) k[r * 3 + c] += h[r * d + j] * wk[j * d + c];
        v[r * d + c] += h[r * d + j] * wv[j * d + c];
      }
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<quad> a(i + 1);
    quad z = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      quad s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += q[i * 3 + c] * k[j * 3 + c];
      a[j] = expq(s * quad(0.5));
      z += a[j];
    }
    for (std::size_t c = 0; c < d; ++c) {
      quad acc = 0;
      for (std::size_t j = 0; j <= i; ++j) acc += a[j] / z * v[j * d + c];
      o[i * d + c] = acc + bias[c];
    }
  }
  quad total = 0;
  int count = 0;
  for (std::size_t r = 0; r < T; ++r) {
    if (!mask[r]) continue;
    std::vector<quad> feat(d);
    for (std::size_t c = 0; c < d; ++c) {
      const quad u = o[r * d + c];
      feat[c] = c < 2 ? quad(0.5) * u * (1 + tanhq(quad(0.7978845608028654) * (u + quad(0.044715) * u * u * u))) : o[r * d + c];
    }
    quad lse = 0, tgt = 0;
    for (std::size_t t = 0; t < V; ++t) {
      quad s = 0;
      for (std::size_t c = 0; c < d; ++c) s += feat[c] * emb[t * d + c];
      lse += expq(s);
      if (static_cast<int>(t) == targets[r]) tgt = s;
    }
    total += logq(lse) - tgt;
    ++count;
  }
  return total / count;
}

}  // namespace

TEST_CASE("tensor starts with zero grad and resets") {
  Tensor t({2, 3}, true);
  CHECK(t.size() == 6);
  CHECK(t.grad().size() == 6);
  for (double g : t.grad()) CHECK(g == 0.0);
  t.grad()[2] = 5.0;
  t.zero_grad();
  for (double g : t.grad()) CHECK(g == 0.0);
  CHECK(throws_kind([] { Tensor({2, 0}); }, ErrorKind::dimension));
  CHECK(throws_kind([] { Tensor({2, 2}, {1.0, 2.0}); }, ErrorKind::dimension));
}

TEST_CASE("matmul hand examples") {
  Graph g;
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  auto r = matmul(g, eye, a);
  CHECK(std::vector<double>(r.value().begin(), r.value().end()) == std::vector<double>{1, 2, 3, 4});
  auto s = matmul(g, Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  CHECK(s.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  try {
    matmul(g, Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul backward of sum(A×B) matches finite differences") {
  std::mt19937_64 rng(11);
  std::vector<Tensor> in{random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)};
  Graph g0;
  g0.backward(sum(g0, matmul(g0, in[0], in[1])));
  // sum(A×B) evaluated by loops in long double, differenced at step 1e-6
  auto ref = [&](std::size_t which, std::size_t idx, long double dh) {
    long double s = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) {
          long double a = in[0].at(i, k), b = in[1].at(k, j);
          if (which == 0 && idx == i * 3 + k) a += dh;
          if (which == 1 && idx == k * 3 + j) b += dh;
          s += a * b;
        }
    return s;
  };
  double worst = 0;
  for (std::size_t w = 0; w < 2; ++w)
    for (std::size_t i = 0; i < 9; ++i) {
      const double fd = static_cast<double>((ref(w, i, 1e-6L) - ref(w, i, -1e-6L)) / 2e-6L);
      worst = std::max(worst, std::abs(in[w].grad()[i] - fd) / std::abs(fd));
    }
  CHECK(worst < 1e-8);

  // matmul_nt agrees with matmul against an explicit transpose
  Tensor bt({3, 3});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) bt.at(r, c) = in[1].at(c, r);
  Graph g;
  auto x = matmul(g, in[0], in[1]);
  auto y = matmul_nt(g, in[0], bt);
  for (std::size_t i = 0; i < 9; ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-14));
}

TEST_CASE("masked softmax examples") {
  Graph g;
  Tensor s({2, 2}, {0.0, 123.0, 0.0, 0.0});
  auto p = masked_softmax_rows(g, s);
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor s2({2, 2}, {0.0, 0.0, 0.0, std::log(3.0)});
  auto p2 = masked_softmax_rows(g, s2);
  CHECK(std::abs(p2.at(1, 0) - 0.25) < 1e-15);
  CHECK(std::abs(p2.at(1, 1) - 0.75) < 1e-15);

  CHECK(throws_kind([&] { masked_softmax_rows(g, Tensor({2, 3})); }, ErrorKind::dimension));
}

TEST_CASE("masked softmax rows are distributions with exact zeros") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 1 + static_cast<std::size_t>(trial % 9);
    Graph g;
    auto s = random_tensor({T, T}, rng, false);
    for (auto& v : s.value()) v *= 30.0;
    auto p = masked_softmax_rows(g, s);
    for (std::size_t i = 0; i < T; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        const double v = p.at(i, j);
        if (j > i) CHECK(v == 0.0);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        row += v;
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer norm examples and gradient") {
  Graph g;
  Tensor one({2}, {1, 1}), zero({2}, {0, 0});
  auto y = layer_norm(g, Tensor({1, 2}, {1, 3}), one, zero);
  CHECK(std::abs(y[0] + 1.0) < 1e-5);
  CHECK(std::abs(y[1] - 1.0) < 1e-5);
  auto flat = layer_norm(g, Tensor({1, 4}, {1, 1, 1, 1}), Tensor({4}, {1, 1, 1, 1}), Tensor({4}, {0, 0, 0, 0}));
  for (double v : flat.value()) CHECK(v == 0.0);

  std::mt19937_64 rng(8);
  std::vector<Tensor> in{random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)};
  auto w = random_tensor({3, 5}, rng, false);
  auto loss = [&](Graph& gg) { return sum(gg, mul(gg, layer_norm(gg, in[0], in[1], in[2]), w)); };
  CHECK(worst_fd_error(in, loss) < 1e-6);
}

TEST_CASE("cross entropy examples and errors") {
  Graph g;
  Tensor uniform({1, 4}, {0.5, 0.5, 0.5, 0.5});
  std::vector<int> t0{2};
  CHECK(std::abs(cross_entropy_masked(g, uniform, t0, {true}).item() - std::log(4.0)) < 1e-15);

  Tensor sharp({1, 3}, {0.0, 800.0, 0.0});
  std::vector<int> t1{1};
  CHECK(cross_entropy_masked(g, sharp, t1, {true}).item() < 1e-300);

  Tensor two({3, 3}, {0.1, 0.7, -0.2, 1.5, 0.0, 0.3, -1.0, 2.0, 0.5});
  std::vector<int> t2{0, 2, 1};
  const double a = cross_entropy_masked(g, two, t2, {true, false, false}).item();
  const double b = cross_entropy_masked(g, two, t2, {false, false, true}).item();
  const double both = cross_entropy_masked(g, two, t2, {true, false, true}).item();
  CHECK(both == doctest::Approx((a + b) / 2).epsilon(1e-15));

  CHECK(throws_kind([&] { cross_entropy_masked(g, two, t2, {false, false, false}); }, ErrorKind::degenerate_input));
  std::vector<int> bad{0, 3, 1};
  CHECK(throws_kind([&] { cross_entropy_masked(g, two, bad, {true, true, true}); }, ErrorKind::range));
}

TEST_CASE("backward basics") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Graph g;
  g.backward(sum(g, x));
  for (double v : x.grad()) CHECK(v == 1.0);

  Tensor s = Tensor::scalar(3.0, true);
  Graph g2;
  g2.backward(mul(g2, s, s));
  CHECK(s.grad()[0] == 6.0);
}

TEST_CASE("second backward without reset is a state error") {
  Tensor x = Tensor::scalar(2.0, true);
  Graph g;
  auto l = mul(g, x, x);
  g.backward(l);
  CHECK(throws_kind([&] { g.backward(l); }, ErrorKind::state));
  CHECK(throws_kind([&] { scale(g, x, 2.0); }, ErrorKind::state));
  g.reset();
  CHECK(g.size() == 0);
}

TEST_CASE("reverse traversal visits every recorded op once") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({2, 3}, rng), b = random_tensor({3, 2}, rng);
  Graph g;
  auto l = sum(g, gelu(g, matmul(g, a, b)));
  const auto n = g.size();
  g.backward(l);
  CHECK(n == 3);
  CHECK(g.visited() == n);
}

TEST_CASE("gradient accumulation is additive") {
  std::mt19937_64 rng(21);
  auto x = random_tensor({2, 4}, rng);
  auto w1 = random_tensor({4, 3}, rng, false), w2 = random_tensor({4, 3}, rng, false);
  auto c2 = random_tensor({2, 3}, rng, false), gain = random_tensor({3}, rng, false);
  // x feeds each loss once, so the reduction order per coordinate is fixed
  auto l1 = [&](Graph& g) { return sum(g, gelu(g, matmul(g, x, w1))); };
  auto l2 = [&](Graph& g) { return sum(g, mul(g, layer_norm(g, matmul(g, x, w2), gain, gain), c2)); };

  x.zero_grad();
  Graph ga;
  ga.backward(l1(ga));
  Graph gb;
  gb.backward(l2(gb));
  std::vector<double> two_pass(x.grad().begin(), x.grad().end());

  x.zero_grad();
  Graph gc;
  auto a = l1(gc);
  auto b = l2(gc);
  gc.backward(add(gc, a, b));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == two_pass[i]);
}

TEST_CASE("composed attention-style graph matches finite differences") {
  std::mt19937_64 rng(17);
  const std::size_t T = 5, d = 6, V = 7;
  std::vector<Tensor> in{random_tensor({T, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng),
                         random_tensor({d, d}, rng), random_tensor({d}, rng),    random_tensor({d}, rng),
                         random_tensor({d}, rng),    random_tensor({V, d}, rng)};
  for (auto& v : in[1].value()) v *= 0.4;
  for (auto& v : in[2].value()) v *= 0.4;
  std::vector<int> targets{1, 4, 0, 6, 2};
  std::vector<bool> mask{false, true, true, false, true};
  std::vector<int> ids{3, 0, 6, 6, 2};
  auto loss = [&](Graph& g) {
    auto x = add(g, in[0], embedding(g, in[7], ids));
    auto h = layer_norm(g, x, in[5], in[6]);
    auto q = slice_cols(g, matmul(g, h, in[1]), 0, 3);
    auto k = slice_cols(g, matmul(g, h, in[2]), 0, 3);
    auto v = matmul(g, h, in[3]);
    auto attn = masked_softmax_rows(g, scale(g, matmul_nt(g, q, k), 0.5));
    auto o = add_bias(g, causal_attend(g, attn, v), in[4]);
    std::vector<Tensor> parts{slice_cols(g, gelu(g, o), 0, 2), slice_cols(g, o, 2, 4)};
    auto cat = concat_cols(g, parts);
    return cross_entropy_masked(g, matmul_nt(g, cat, in[7]), targets, mask);
  };
  for (auto& t : in) t.zero_grad();
  Graph g;
  g.backward(loss(g));

  // Double-precision differences lose ~1e-10 absolute to cancellation, which
  // is too coarse for small coordinates; the reference runs in quad.
  std::vector<std::vector<quad>> p;
  for (const auto& t : in) p.emplace_back(t.value().begin(), t.value().end());
  const quad h = 1e-6;
  double worst = 0.0;
  std::size_t compared = 0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    for (std::size_t i = 0; i < in[k].size(); ++i) {
      const quad saved = p[k][i];
      p[k][i] = saved + h;
      const quad up = composed_reference(p, ids, targets, mask, T, d, V);
      p[k][i] = saved - h;
      const quad down = composed_reference(p, ids, targets, mask, T, d, V);
      p[k][i] = saved;
      const double fd = static_cast<double>((up - down) / (2 * h));
      if (std::abs(fd) <= 1e-8) continue;
      ++compared;
      worst = std::max(worst, std::abs(in[k].grad()[i] - fd) / std::abs(fd));
    }
  }
  CHECK(compared > 150);
  CHECK(worst < 1e-5);
}

TEST_CASE("causal attend ignores the upper triangle") {
  std::mt19937_64 rng(2);
  auto attn = random_tensor({3, 3}, rng);
  auto v = random_tensor({3, 2}, rng);
  Graph g;
  auto o1 = causal_attend(g, attn, v);
  auto attn2 = attn.clone();
  attn2.at(0, 2) += 10.0;
  attn2.at(1, 2) -= 3.0;
  Graph g2;
  auto o2 = causal_attend(g2, attn2, v);
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1[i] == o2[i]);
  Graph g3;
  g3.backward(sum(g3, causal_attend(g3, attn, v)));
  CHECK(attn.grad()[2] == 0.0);
  CHECK(attn.grad()[5] == 0.0);
  CHECK(attn.grad()[1] == 0.0);
}

TEST_CASE("identical inputs give bitwise identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto a = random_tensor({4, 5}, rng), b = random_tensor({5, 4}, rng);
    Graph g;
    auto l = sum(g, gelu(g, matmul(g, a, b)));
    g.backward(l);
    std::vector<double> out{l.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  CHECK(run() == run());
}
