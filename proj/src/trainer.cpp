#include "attnlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "attnlab/error.hpp"
#include "attnlab/stats.hpp"
#include "attnlab/strategies.hpp"

namespace attnlab {

void TrainConfig::validate() const {
  if (steps < 1) fail(ErrorKind::config, "train config: steps must be >= 1");
  if (batch_size < 1) fail(ErrorKind::config, "train config: batch_size must be >= 1");
  if (checkpoint_every < 1) fail(ErrorKind::config, "train config: checkpoint_every must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::config, "train config: learning_rate must be finite and >= 0");
  }
}

Json train_config_json(const TrainConfig& c) {
  return Json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"betas", {c.beta1, c.beta2}},
              {"eps", c.eps}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::sgd;
    } else {
      fail(ErrorKind::config, "unknown optimizer '" + opt + "'");
    }
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2) fail(ErrorKind::config, "betas needs two entries");
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    c.eps = j.value("eps", c.eps);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("train config: ") + e.what());
  }
  return c;
}

CheckpointSink memory_sink(std::vector<Checkpoint>& out) {
  return [&out](const Checkpoint& c) { out.push_back({c.step, c.train_loss, c.model.clone()}); };
}

CheckpointSink directory_sink(const std::filesystem::path& run_dir) {
  return [run_dir](const Checkpoint& c) {
    const auto dir = run_dir / "checkpoints";
    save_checkpoint(c.model, dir / ("step_" + std::to_string(c.step) + ".json"));
    write_text(dir / ("step_" + std::to_string(c.step) + ".loss"), format_double(c.train_loss) + "\n");
  };
}

std::vector<std::size_t> batch_indices(std::size_t n, int batch_size, std::uint64_t seed, std::int64_t global_step) {
  if (n == 0) fail(ErrorKind::degenerate_input, "empty training set");
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> perm;
  std::int64_t cached_epoch = -1;
  const auto first = static_cast<std::uint64_t>(global_step) * static_cast<std::uint64_t>(batch_size);
  for (std::uint64_t pos = first; pos < first + static_cast<std::uint64_t>(batch_size); ++pos) {
    const auto epoch = static_cast<std::int64_t>(pos / n);
    if (epoch != cached_epoch) {
      perm.resize(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

namespace {

double instance_loss(const Model& frozen, const Instance& inst) {
  const std::span<const int> tokens(inst.tokens);
  const std::vector<bool> mask(inst.loss_mask.begin() + 1, inst.loss_mask.end());
  ad::Graph g;
  auto fwd = forward_capture(g, frozen, tokens.first(tokens.size() - 1));
  return ad::cross_entropy_masked(g, fwd.logits, tokens.subspan(1), mask).item();
}

void apply_update(Model& model, const TrainConfig& cfg) {
  auto named = model.params().named();
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (auto& nt : named) {
      auto v = nt.tensor.value();
      auto g = std::as_const(nt.tensor).grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.learning_rate * g[i];
    }
    return;
  }
  auto& opt = model.optimizer();
  if (opt.empty()) {
    opt.m.resize(named.size());
    opt.v.resize(named.size());
    for (std::size_t k = 0; k < named.size(); ++k) {
      opt.m[k].assign(named[k].tensor.size(), 0.0);
      opt.v[k].assign(named[k].tensor.size(), 0.0);
    }
  }
  ++opt.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto v = named[k].tensor.value();
    auto g = std::as_const(named[k].tensor).grad();
    auto& m1 = opt.m[k];
    auto& m2 = opt.v[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      v[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace

double batch_loss(const Model& model, const Dataset& data, std::span<const std::size_t> indices) {
  Model frozen = model.clone();
  frozen.set_requires_grad(false);
  double total = 0.0;
  for (auto i : indices) total += instance_loss(frozen, data.instances[i]);
  return total / static_cast<double>(indices.size());
}

double dataset_loss(const Model& model, const Dataset& data) {
  if (data.empty()) fail(ErrorKind::degenerate_input, "dataset_loss: empty dataset");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return batch_loss(model, data, all);
}

TrainResult sft(Model& model, const Dataset& train_set, const TrainConfig& cfg, const CheckpointSink& sink) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorKind::degenerate_input, "sft: empty training set");
  model.set_requires_grad(true);
  TrainResult res;
  const std::int64_t start = model.step();
  for (int s = 0; s <= cfg.steps; ++s) {
    const std::int64_t global = start + s;
    const auto batch = batch_indices(train_set.size(), cfg.batch_size, cfg.seed, global);
    const bool due = s % cfg.checkpoint_every == 0 || s == cfg.steps;
    double loss = 0.0;
    if (s == cfg.steps) {
      loss = batch_loss(model, train_set, batch);
    } else {
      model.zero_grad();
      for (auto i : batch) {
        const auto& inst = train_set.instances[i];
        loss += loss_backward(model, inst.tokens, inst.loss_mask).loss;
      }
      loss /= static_cast<double>(batch.size());
    }
    if (!std::isfinite(loss)) {
      fail(ErrorKind::numeric, "training diverged: non-finite loss at step " + std::to_string(global),
           "step=" + std::to_string(global));
    }
    if (due) {
      res.checkpoint_steps.push_back(global);
      if (sink) sink(Checkpoint{global, loss, model});
    }
    if (s == cfg.steps) {
      res.final_loss = loss;
      break;
    }
    res.step_losses.push_back(loss);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& nt : model.params().named()) {
      for (double& g : nt.tensor.grad()) g *= inv;
    }
    apply_update(model, cfg);
    model.set_step(global + 1);
  }
  model.zero_grad();
  return res;
}

std::vector<TrajectoryPoint> trajectory(const std::vector<Checkpoint>& checkpoints, const Dataset& probe,
                                        AttributionMode mode) {
  if (checkpoints.size() < 2) fail(ErrorKind::degenerate_input, "trajectory: needs at least two checkpoints");
  std::vector<const Checkpoint*> ordered;
  for (const auto& c : checkpoints) ordered.push_back(&c);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->step < b->step; });
  const auto base = activation_pattern(ordered.front()->model, probe, mode);
  std::vector<TrajectoryPoint> out;
  for (const auto* c : ordered) {
    const auto ap = c == ordered.front() ? base : activation_pattern(c->model, probe, mode);
    out.push_back({c->step - ordered.front()->step, stats::correlation(ap, base), stats::mse(ap, base), c->train_loss});
  }
  return out;
}

std::string trajectory_csv(const std::vector<TrajectoryPoint>& points) {
  std::string out = std::string(kTrajectoryCsvHeader) + "\n";
  for (const auto& p : points) {
    out += std::to_string(p.step) + "," + format_double(p.corr_to_base) + "," + format_double(p.mse_to_base) + "," +
           format_double(p.train_loss) + "\n";
  }
  return out;
}

std::vector<Checkpoint> load_run_checkpoints(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::data, "run has no checkpoints directory", dir.string());
  static const std::regex pattern(R"(step_(\d+)\.json)");
  std::vector<Checkpoint> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    Checkpoint c;
    c.step = std::stoll(m[1].str());
    c.model = load_checkpoint(entry.path());
    const auto loss_file = dir / ("step_" + m[1].str() + ".loss");
    if (std::filesystem::exists(loss_file)) c.train_loss = std::stod(read_text(loss_file));
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.step < b.step; });
  return out;
}

Dataset sample_mixture(const MixPlan& plan, const std::map<std::string, Dataset>& basic_sets, std::uint64_t seed) {
  Dataset mix;
  mix.id = "mixture";
  for (std::size_t e = 0; e < plan.entries.size(); ++e) {
    const auto& entry = plan.entries[e];
    if (entry.count == 0) continue;
    const auto it = basic_sets.find(entry.task_id);
    if (it == basic_sets.end()) fail(ErrorKind::data, "no instance pool for task '" + entry.task_id + "'");
    const auto& pool = it->second;
    if (static_cast<std::int64_t>(pool.size()) < entry.count) {
      fail(ErrorKind::data, "task '" + entry.task_id + "' pool has " + std::to_string(pool.size()) +
                                " instances, plan needs " + std::to_string(entry.count));
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(e)};
    std::mt19937_64 rng(seq);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::int64_t i = 0; i < entry.count; ++i) mix.instances.push_back(pool.instances[idx[static_cast<std::size_t>(i)]]);
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(mix.instances.begin(), mix.instances.end(), rng);
  return mix;
}

Model two_stage(const Model& base, const MixPlan& plan, const std::map<std::string, Dataset>& basic_sets,
                const Dataset& complex_set, const TrainConfig& stage1, const TrainConfig& stage2) {
  Model model = base.clone();
  const Dataset mix = sample_mixture(plan, basic_sets, stage1.seed);
  if (stage1.steps > 0) sft(model, mix, stage1);
  // Adam moments from stage 1 do not carry over.
  model.optimizer() = {};
  if (stage2.steps > 0) sft(model, complex_set, stage2);
  return model;
}

}  // namespace attnlab
