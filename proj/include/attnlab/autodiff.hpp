#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace attnlab::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Shared handle to a dense row-major float64 array with a gradient slot.
// Copies of a Tensor alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> value() { return impl_->value; }
  std::span<const double> value() const { return impl_->value; }
  std::span<double> grad() { return impl_->grad; }
  std::span<const double> grad() const { return impl_->grad; }

  double& operator[](std::size_t i) { return impl_->value[i]; }
  double operator[](std::size_t i) const { return impl_->value[i]; }
  double& at(std::size_t r, std::size_t c) { return impl_->value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return impl_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Tape of recorded operations. Backward replays the tape once, in reverse
// recording order; a second backward requires reset().
class Graph {
 public:
  void record(std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return tape_.size(); }
  std::size_t visited() const { return visited_; }
  bool has_run() const { return ran_; }

 private:
  std::vector<std::function<void()>> tape_;
  std::size_t visited_ = 0;
  bool ran_ = false;
};

// a[m×k] · b[k×n]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
// a[m×k] · b[n×k]ᵀ
Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double c);
Tensor sum(Graph& g, const Tensor& x);
// x[m×n] + bias[n] broadcast over rows.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);
Tensor gelu(Graph& g, const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias);

// Gathers rows of table[V×d] for the given ids.
Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids);
Tensor slice_cols(Graph& g, const Tensor& x, std::size_t offset, std::size_t width);
Tensor concat_cols(Graph& g, std::span<const Tensor> parts);

// Causal softmax over each row: row i is normalized over columns 0..i,
// columns above the diagonal are exactly zero.
Tensor masked_softmax_rows(Graph& g, const Tensor& scores);
// out_i = Σ_{j≤i} attn_ij · v_j. Only the lower triangle of attn is read or
// receives gradient.
Tensor causal_attend(Graph& g, const Tensor& attn, const Tensor& v);

// Mean negative log-likelihood over positions where mask is true.
Tensor cross_entropy_masked(Graph& g, const Tensor& logits, std::span<const int> targets,
                            const std::vector<bool>& mask);

}  // namespace attnlab::ad
