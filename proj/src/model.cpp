#include "attnlab/model.hpp"

#include <cmath>
#include <random>

#include "attnlab/error.hpp"
#include "attnlab/json_io.hpp"

namespace attnlab {

using ad::Tensor;

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 1 || max_seq_len < 1) {
    fail(ErrorKind::config, "model config fields must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorKind::config,
         "d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::vector<NamedTensor> Parameters::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"tok_emb", tok_emb});
  out.push_back({"pos_emb", pos_emb});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.push_back({pre + "ln1_gain", p.ln1_gain});
    out.push_back({pre + "ln1_bias", p.ln1_bias});
    out.push_back({pre + "wq", p.wq});
    out.push_back({pre + "wk", p.wk});
    out.push_back({pre + "wv", p.wv});
    out.push_back({pre + "wo", p.wo});
    out.push_back({pre + "bo", p.bo});
    out.push_back({pre + "ln2_gain", p.ln2_gain});
    out.push_back({pre + "ln2_bias", p.ln2_bias});
    out.push_back({pre + "w1", p.w1});
    out.push_back({pre + "b1", p.b1});
    out.push_back({pre + "w2", p.w2});
    out.push_back({pre + "b2", p.b2});
  }
  out.push_back({"lnf_gain", lnf_gain});
  out.push_back({"lnf_bias", lnf_bias});
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& nt : named()) n += nt.tensor.size();
  return n;
}

namespace {

Parameters allocate(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.ffn_dim());
  Parameters p;
  p.tok_emb = Tensor({static_cast<std::size_t>(c.vocab_size), d}, true);
  p.pos_emb = Tensor({static_cast<std::size_t>(c.max_seq_len), d}, true);
  for (int l = 0; l < c.n_layers; ++l) {
    LayerParams lp;
    lp.ln1_gain = Tensor({d}, true);
    lp.ln1_bias = Tensor({d}, true);
    lp.wq = Tensor({d, d}, true);
    lp.wk = Tensor({d, d}, true);
    lp.wv = Tensor({d, d}, true);
    lp.wo = Tensor({d, d}, true);
    lp.bo = Tensor({d}, true);
    lp.ln2_gain = Tensor({d}, true);
    lp.ln2_bias = Tensor({d}, true);
    lp.w1 = Tensor({d, f}, true);
    lp.b1 = Tensor({f}, true);
    lp.w2 = Tensor({f, d}, true);
    lp.b2 = Tensor({d}, true);
    p.layers.push_back(std::move(lp));
  }
  p.lnf_gain = Tensor({d}, true);
  p.lnf_bias = Tensor({d}, true);
  return p;
}

bool is_gain(const std::string& name) { return name.ends_with("_gain"); }
bool is_bias(const std::string& name) {
  return name.ends_with("_bias") || name.ends_with(".bo") || name.ends_with(".b1") || name.ends_with(".b2");
}

}  // namespace

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  m.params_ = allocate(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& nt : m.params_.named()) {
    auto v = nt.tensor.value();
    if (is_gain(nt.name)) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (!is_bias(nt.name)) {
      for (double& x : v) x = normal(rng);
    }
  }
  return m;
}

void Model::zero_grad() {
  for (auto& nt : params_.named()) nt.tensor.zero_grad();
}

void Model::set_requires_grad(bool flag) {
  for (auto& nt : params_.named()) nt.tensor.set_requires_grad(flag);
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  m.params_ = allocate(config_);
  auto src = params_.named();
  auto dst = m.params_.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = std::as_const(src[i].tensor).value();
    std::copy(s.begin(), s.end(), dst[i].tensor.value().begin());
    dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
  }
  m.step_ = step_;
  m.optimizer_ = optimizer_;
  return m;
}

bool Model::same_parameters(const Model& other) const {
  if (!(config_ == other.config_)) return false;
  auto a = params_.named();
  auto b = other.params_.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto va = std::as_const(a[i].tensor).value();
    auto vb = std::as_const(b[i].tensor).value();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

ForwardResult forward_capture(ad::Graph& g, const Model& model, std::span<const int> tokens) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  if (tokens.empty()) fail(ErrorKind::input, "forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    fail(ErrorKind::input, "forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                               std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
      fail(ErrorKind::input, "forward: token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                                 " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
  const std::size_t t = tokens.size();
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);

  ForwardResult res;
  res.captures.reserve(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads));
  Tensor x = ad::add(g, ad::embedding(g, p.tok_emb, tokens), ad::embedding(g, p.pos_emb, positions));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = p.layers[static_cast<std::size_t>(l)];
    Tensor h = ad::layer_norm(g, x, lp.ln1_gain, lp.ln1_bias);
    Tensor q = ad::matmul(g, h, lp.wq);
    Tensor k = ad::matmul(g, h, lp.wk);
    Tensor v = ad::matmul(g, h, lp.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const std::size_t off = static_cast<std::size_t>(hd) * dh;
      Tensor qh = ad::slice_cols(g, q, off, dh);
      Tensor kh = ad::slice_cols(g, k, off, dh);
      Tensor vh = ad::slice_cols(g, v, off, dh);
      Tensor scores = ad::scale(g, ad::matmul_nt(g, qh, kh), inv_sqrt_dh);
      Tensor attn = ad::masked_softmax_rows(g, scores);
      // Γ always receives ∂L/∂Γ, even when parameters are frozen.
      attn.set_requires_grad(true);
      res.captures.push_back({l, hd, attn, false});
      heads.push_back(ad::causal_attend(g, attn, vh));
    }
    Tensor attn_out = ad::add_bias(g, ad::matmul(g, ad::concat_cols(g, heads), lp.wo), lp.bo);
    x = ad::add(g, x, attn_out);
    Tensor h2 = ad::layer_norm(g, x, lp.ln2_gain, lp.ln2_bias);
    Tensor ff = ad::gelu(g, ad::add_bias(g, ad::matmul(g, h2, lp.w1), lp.b1));
    x = ad::add(g, x, ad::add_bias(g, ad::matmul(g, ff, lp.w2), lp.b2));
  }
  Tensor xf = ad::layer_norm(g, x, p.lnf_gain, p.lnf_bias);
  res.logits = ad::matmul_nt(g, xf, p.tok_emb);
  return res;
}

LossResult loss_backward(Model& model, std::span<const int> inputs, std::span<const int> targets,
                         const std::vector<bool>& loss_mask) {
  ad::Graph g;
  auto fwd = forward_capture(g, model, inputs);
  Tensor loss = ad::cross_entropy_masked(g, fwd.logits, targets, loss_mask);
  g.backward(loss);
  for (auto& c : fwd.captures) c.grad_ready = true;
  return {loss.item(), std::move(fwd.captures)};
}

LossResult loss_backward(Model& model, std::span<const int> tokens, const std::vector<bool>& loss_mask) {
  if (tokens.size() < 2 || loss_mask.size() != tokens.size()) {
    fail(ErrorKind::input, "instance needs >= 2 tokens and a mask of equal length");
  }
  std::vector<bool> mask(loss_mask.begin() + 1, loss_mask.end());
  return loss_backward(model, tokens.first(tokens.size() - 1), tokens.subspan(1), mask);
}

namespace {

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorKind::format, std::string("missing field '") + key + "'", where);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("bad field '") + key + "': " + e.what(), where);
  }
}

void read_array_into(const Json& arr, std::span<double> dst, const std::string& name, const std::string& where) {
  if (!arr.is_array() || arr.size() != dst.size()) {
    fail(ErrorKind::format, "array '" + name + "' has wrong length", where);
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (!arr[i].is_number()) fail(ErrorKind::format, "array '" + name + "' holds a non-number", where);
    dst[i] = arr[i].get<double>();
  }
}

}  // namespace

Json model_config_json(const ModelConfig& c) {
  return Json{{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
              {"d_model", c.d_model},       {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len}, {"seed", c.seed}};
}

// Missing fields keep their defaults.
ModelConfig model_config_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::config, "model config is not a JSON object", where);
  ModelConfig c;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_model = j.value("d_model", c.d_model);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("model config: ") + e.what(), where);
  }
  c.validate();
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["config"] = model_config_json(model.config());
  doc["seed"] = model.config().seed;
  doc["step"] = model.step();
  Json params = Json::object();
  const auto named = model.params().named();
  for (const auto& nt : named) {
    const auto v = std::as_const(nt.tensor).value();
    params[nt.name] = Json{{"shape", nt.tensor.shape()}, {"values", std::vector<double>(v.begin(), v.end())}};
  }
  doc["params"] = std::move(params);
  const auto& opt = model.optimizer();
  if (!opt.empty()) {
    Json m = Json::object(), v = Json::object();
    for (std::size_t i = 0; i < named.size(); ++i) {
      m[named[i].name] = opt.m[i];
      v[named[i].name] = opt.v[i];
    }
    doc["optimizer"] = Json{{"kind", "adam"}, {"t", opt.t}, {"m", std::move(m)}, {"v", std::move(v)}};
  }
  write_text(path, dump_json(doc));
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  const Json doc = read_json(path);
  if (!doc.is_object()) fail(ErrorKind::format, "checkpoint is not a JSON object", where);
  const int version = field<int>(doc, "format_version", where);
  if (version != kCheckpointFormatVersion) {
    fail(ErrorKind::format,
         "checkpoint format_version " + std::to_string(version) + " (expected " +
             std::to_string(kCheckpointFormatVersion) + ")",
         where);
  }
  const Json& cj = doc.contains("config") ? doc.at("config") : Json();
  ModelConfig cfg;
  cfg.n_layers = field<int>(cj, "n_layers", where);
  cfg.n_heads = field<int>(cj, "n_heads", where);
  cfg.d_model = field<int>(cj, "d_model", where);
  cfg.vocab_size = field<int>(cj, "vocab_size", where);
  cfg.max_seq_len = field<int>(cj, "max_seq_len", where);
  cfg.seed = field<std::uint64_t>(doc, "seed", where);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, e.what(), where);
  }
  Model model = Model::init(cfg);
  model.set_step(field<std::int64_t>(doc, "step", where));
  if (!doc.contains("params") || !doc.at("params").is_object()) fail(ErrorKind::format, "missing params", where);
  const Json& pj = doc.at("params");
  auto named = model.params().named();
  if (pj.size() != named.size()) fail(ErrorKind::format, "unexpected parameter count", where);
  for (auto& nt : named) {
    if (!pj.contains(nt.name)) fail(ErrorKind::format, "missing parameter '" + nt.name + "'", where);
    const Json& entry = pj.at(nt.name);
    if (field<ad::Shape>(entry, "shape", where) != nt.tensor.shape()) {
      fail(ErrorKind::format, "parameter '" + nt.name + "' has the wrong shape", where);
    }
    read_array_into(entry.contains("values") ? entry.at("values") : Json(), nt.tensor.value(), nt.name, where);
  }
  if (doc.contains("optimizer")) {
    const Json& oj = doc.at("optimizer");
    if (!oj.is_object() || !oj.contains("m") || !oj.contains("v") || !oj.at("m").is_object() || !oj.at("v").is_object()) {
      fail(ErrorKind::format, "optimizer state needs m and v objects", where);
    }
    auto& opt = model.optimizer();
    opt.t = field<std::int64_t>(oj, "t", where);
    opt.m.resize(named.size());
    opt.v.resize(named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
      opt.m[i].resize(named[i].tensor.size());
      opt.v[i].resize(named[i].tensor.size());
      read_array_into(oj.at("m").value(named[i].name, Json()), opt.m[i], named[i].name, where);
      read_array_into(oj.at("v").value(named[i].name, Json()), opt.v[i], named[i].name, where);
    }
  }
  return model;
}

}  // namespace attnlab
