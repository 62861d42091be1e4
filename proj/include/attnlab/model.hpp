#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnlab/autodiff.hpp"
#include "attnlab/json_io.hpp"

namespace attnlab {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int vocab_size = 32;
  int max_seq_len = 32;
  std::uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return 4 * d_model; }
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, wk, wv, wo, bo;
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor w1, b1, w2, b2;
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct Parameters {
  ad::Tensor tok_emb;  // [V×d], tied with the output projection
  ad::Tensor pos_emb;  // [T_max×d]
  std::vector<LayerParams> layers;
  ad::Tensor lnf_gain, lnf_bias;

  // Canonical enumeration; fixes optimizer, checkpoint and reduction order.
  std::vector<NamedTensor> named() const;
  std::size_t count() const;
};

// Adam moment buffers, aligned with Parameters::named().
struct OptimizerState {
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  bool empty() const { return m.empty(); }
};

class Model {
 public:
  static Model init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  OptimizerState& optimizer() { return optimizer_; }
  const OptimizerState& optimizer() const { return optimizer_; }

  void zero_grad();
  void set_requires_grad(bool flag);
  // Deep copy: parameters, step and optimizer state; gradients start at zero.
  Model clone() const;
  bool same_parameters(const Model& other) const;

 private:
  ModelConfig config_;
  Parameters params_;
  std::int64_t step_ = 0;
  OptimizerState optimizer_;
};

struct AttentionCapture {
  int layer = 0;
  int head = 0;
  ad::Tensor attn;  // post-softmax Γ [T×T]; its grad slot holds ∂L/∂Γ after backward
  bool grad_ready = false;  // set once a backward pass has filled attn's grad

  std::span<const double> attn_grad() const { return attn.grad(); }
};

struct ForwardResult {
  ad::Tensor logits;  // [T×V]
  std::vector<AttentionCapture> captures;  // layer-major, head-minor
};

struct LossResult {
  double loss = 0.0;
  std::vector<AttentionCapture> captures;
};

ForwardResult forward_capture(ad::Graph& graph, const Model& model, std::span<const int> tokens);

// Next-token loss over masked-in targets, then backward. Parameter gradients
// accumulate into the model; capture grads hold ∂loss/∂Γ.
LossResult loss_backward(Model& model, std::span<const int> inputs, std::span<const int> targets,
                         const std::vector<bool>& loss_mask);

// Convenience for a full instance sequence: inputs = tokens[:-1],
// targets = tokens[1:], mask = loss_mask[1:].
LossResult loss_backward(Model& model, std::span<const int> tokens, const std::vector<bool>& loss_mask);

inline constexpr int kCheckpointFormatVersion = 1;

Json model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j, const std::string& where = {});

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace attnlab
