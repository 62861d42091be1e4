// attnlab: command-line front end. Every command writes its outputs plus one
// manifest; failures print {code, message, context} on stderr.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnlab/error.hpp"
#include "attnlab/heatmap.hpp"
#include "attnlab/json_io.hpp"
#include "attnlab/model.hpp"
#include "attnlab/profiler.hpp"
#include "attnlab/regression.hpp"
#include "attnlab/stats.hpp"
#include "attnlab/strategies.hpp"
#include "attnlab/tasks.hpp"
#include "attnlab/trainer.hpp"
#include "attnlab/version.hpp"

namespace fs = std::filesystem;
using namespace attnlab;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
    case ErrorKind::parameter:
    case ErrorKind::config:
      return 2;
    case ErrorKind::format:
    case ErrorKind::data:
    case ErrorKind::input:
    case ErrorKind::compatibility:
    case ErrorKind::dimension:
    case ErrorKind::range:
      return 3;
    case ErrorKind::domain:
    case ErrorKind::numeric:
    case ErrorKind::degenerate_input:
    case ErrorKind::state:
      return 4;
  }
  return 4;
}

void print_error(std::string_view code, const std::string& message, const std::string& context) {
  std::cerr << dump_json(Json{{"code", code}, {"message", message}, {"context", context}}) << "\n";
}

struct Manifest {
  std::string command;
  std::vector<std::string> arguments;
  Json seeds = Json::object();
  Json config_sources = Json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  fs::path path;
};

void write_manifest(const Manifest& m, std::chrono::steady_clock::time_point t0, std::time_t started) {
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started));
  const Json doc{{"command", m.command},
                 {"arguments", m.arguments},
                 {"seeds", m.seeds},
                 {"config_sources", m.config_sources},
                 {"inputs", m.inputs},
                 {"outputs", m.outputs},
                 {"tool_version", kToolVersion},
                 {"started_utc", stamp},
                 {"wall_clock_seconds", secs}};
  write_text(m.path, dump_json(doc, true));
}

fs::path manifest_beside(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// Inputs are never rewritten.
void guard_outputs(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs) {
    for (const auto& i : inputs) {
      std::error_code ec;
      if (o == i || (fs::exists(o) && fs::exists(i) && fs::equivalent(o, i, ec))) {
        fail(ErrorKind::usage, "output would overwrite input", o);
      }
    }
  }
}

// Patterns and deltas both load as plain grids.
HeadGrid load_grid(const fs::path& p) { return import_delta(p); }

std::vector<fs::path> json_files_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::data, "not a directory", dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto& p = e.path();
    const std::string name = p.filename().string();
    if (p.extension() == ".json" && name.find(".manifest.") == std::string::npos && name != "manifest.json") {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorKind::data, "no .json files", dir.string());
  return out;
}

Dataset load_data(const fs::path& p) {
  auto res = load_dataset(p);
  for (const auto& w : res.warnings) std::cerr << dump_json(Json{{"warning", w}, {"context", p.string()}}) << "\n";
  return std::move(res.dataset);
}

// A checkpoint file, or a model config (initialised from its seed).
Model load_model(const fs::path& p) {
  const Json j = read_json(p);
  if (j.is_object() && j.contains("params")) return load_checkpoint(p);
  return Model::init(model_config_from_json(j, p.string()));
}

// Defaults < config file < flags; `sources` records where each field came from.
TrainConfig resolve_train_config(const std::optional<std::string>& file, const std::map<std::string, CLI::Option*>& flags,
                                 const TrainConfig& flag_values, Json& sources) {
  TrainConfig c;
  Json fj = Json::object();
  if (file) {
    fj = read_json(*file);
    if (!fj.is_object()) fail(ErrorKind::config, "train config is not a JSON object", *file);
    c = train_config_from_json(fj);
  }
  for (const auto& key : {"steps", "batch_size", "learning_rate", "seed", "checkpoint_every", "optimizer", "betas", "eps"}) {
    sources[key] = fj.contains(key) ? "config_file" : "default";
  }
  auto take = [&](const char* key, auto member) {
    const auto it = flags.find(key);
    if (it != flags.end() && it->second->count() > 0) {
      c.*member = flag_values.*member;
      sources[key] = "flag";
    }
  };
  take("steps", &TrainConfig::steps);
  take("batch_size", &TrainConfig::batch_size);
  take("learning_rate", &TrainConfig::learning_rate);
  take("seed", &TrainConfig::seed);
  take("checkpoint_every", &TrainConfig::checkpoint_every);
  c.validate();
  return c;
}

struct TrainFlags {
  TrainConfig values;
  std::map<std::string, CLI::Option*> opts;
};

void add_train_flags(CLI::App* sc, TrainFlags& f, const std::string& prefix = "") {
  f.opts["steps"] = sc->add_option("--" + prefix + "steps", f.values.steps, "optimizer steps");
  f.opts["batch_size"] = sc->add_option("--" + prefix + "batch-size", f.values.batch_size, "instances per step");
  f.opts["learning_rate"] = sc->add_option("--" + prefix + "lr", f.values.learning_rate, "learning rate");
  f.opts["seed"] = sc->add_option("--" + prefix + "seed", f.values.seed, "data-order seed");
  f.opts["checkpoint_every"] = sc->add_option("--" + prefix + "checkpoint-every", f.values.checkpoint_every, "checkpoint period");
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::time_t started = std::time(nullptr);

  CLI::App app{"attention-head activation patterns for small decoder transformers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Manifest man;
  for (int i = 1; i < argc; ++i) man.arguments.emplace_back(argv[i]);
  std::function<void()> action;

  // gen-tasks
  std::string spec_path, split_name_s = "train", out;
  std::size_t n = 0;
  std::optional<std::uint64_t> seed_flag;
  auto* gen = app.add_subcommand("gen-tasks", "generate a task dataset (JSONL)");
  gen->add_option("--spec", spec_path, "task spec JSON")->required();
  gen->add_option("--n", n, "instances")->required();
  gen->add_option("--split", split_name_s, "train|probe|eval");
  gen->add_option("--seed", seed_flag, "overrides the spec seed");
  gen->add_option("--out", out, "output .jsonl")->required();
  gen->callback([&] {
    action = [&] {
      TaskSpec spec = task_spec_from_json(read_json(spec_path));
      man.config_sources["seed"] = seed_flag ? "flag" : "config_file";
      if (seed_flag) spec.seed = *seed_flag;
      if (n < 1) fail(ErrorKind::parameter, "--n must be >= 1");
      const Dataset ds = generate(spec, n, parse_split(split_name_s));
      save_dataset(ds, out);
      man.seeds["task"] = spec.seed;
      man.inputs = {spec_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // train
  std::string model_path, data_path, probe_path;
  std::optional<std::string> config_path;
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "supervised fine-tuning with checkpoints");
  train->add_option("--model", model_path, "checkpoint or model config JSON")->required();
  train->add_option("--data", data_path, "training JSONL")->required();
  train->add_option("--config", config_path, "train config JSON");
  train->add_option("--probe", probe_path, "also write trajectory.csv on this probe set");
  train->add_option("--out", out, "run directory")->required();
  add_train_flags(train, tf);
  train->callback([&] {
    action = [&] {
      const TrainConfig cfg = resolve_train_config(config_path, tf.opts, tf.values, man.config_sources);
      Model model = load_model(model_path);
      const Dataset data = load_data(data_path);
      const fs::path run(out);
      fs::create_directories(run);
      write_text(run / "config.json",
                 dump_json(Json{{"model", model_config_json(model.config())},
                                {"start_step", model.step()},
                                {"train", train_config_json(cfg)},
                                {"data", data_path},
                                {"n_train", data.size()}},
                           true));
      const auto res = sft(model, data, cfg, directory_sink(run));
      std::string log = "step,train_loss\n";
      for (std::size_t i = 0; i < res.step_losses.size(); ++i) {
        log += std::to_string(i) + "," + format_double(res.step_losses[i]) + "\n";
      }
      write_text(run / "train_log.csv", log);
      man.outputs = {(run / "config.json").string(), (run / "checkpoints").string(), (run / "train_log.csv").string()};
      if (!probe_path.empty()) {
        const auto pts = trajectory(load_run_checkpoints(run), load_data(probe_path));
        write_text(run / "trajectory.csv", trajectory_csv(pts));
        man.outputs.push_back((run / "trajectory.csv").string());
        man.inputs.push_back(probe_path);
      }
      man.seeds["data_order"] = cfg.seed;
      man.seeds["model_init"] = model.config().seed;
      man.inputs.insert(man.inputs.begin(), {model_path, data_path});
      if (config_path) man.inputs.push_back(*config_path);
      man.path = run / "manifest.json";
      std::cout << dump_json(Json{{"final_loss", res.final_loss}, {"checkpoints", res.checkpoint_steps}}) << "\n";
    };
  });

  // eval
  std::string ckpt_path;
  auto* eval = app.add_subcommand("eval", "mean masked loss of a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval->add_option("--data", data_path, "JSONL")->required();
  eval->add_option("--out", out, "output JSON")->required();
  eval->callback([&] {
    action = [&] {
      const Model model = load_checkpoint(ckpt_path);
      const Dataset data = load_data(data_path);
      write_text(out, dump_json(Json{{"checkpoint", ckpt_path}, {"data", data_path}, {"n", data.size()},
                                     {"loss", dataset_loss(model, data)}},
                                true));
      man.inputs = {ckpt_path, data_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // profile
  std::string mode_s = "abs_per_instance", model_ref, per_sample_dir;
  auto* profile = app.add_subcommand("profile", "activation pattern of a checkpoint on a probe set");
  profile->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  profile->add_option("--probe", probe_path, "probe JSONL")->required();
  profile->add_option("--mode", mode_s, "abs_per_instance|signed|abs_of_mean");
  profile->add_option("--model-ref", model_ref, "label stored in the pattern (default: checkpoint step)");
  auto* prof_out = profile->add_option("--out", out, "output pattern JSON");
  auto* prof_ps = profile->add_option("--per-sample-dir", per_sample_dir, "write one pattern per probe instance");
  prof_out->excludes(prof_ps);
  profile->callback([&] {
    action = [&] {
      if (out.empty() == per_sample_dir.empty()) fail(ErrorKind::usage, "give exactly one of --out or --per-sample-dir");
      const AttributionMode mode = parse_mode(mode_s);
      const Model model = load_checkpoint(ckpt_path);
      const Dataset probe = load_data(probe_path);
      man.inputs = {ckpt_path, probe_path};
      if (!out.empty()) {
        export_pattern(activation_pattern(model, probe, mode, model_ref), out);
        man.outputs = {out};
        man.path = manifest_beside(out);
      } else {
        const auto pats = per_sample_patterns(model, probe, mode);
        for (std::size_t i = 0; i < pats.size(); ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "sample_%05zu.json", i);
          export_pattern(pats[i], fs::path(per_sample_dir) / name);
        }
        man.outputs = {per_sample_dir};
        man.path = fs::path(per_sample_dir) / "manifest.json";
      }
    };
  });

  // stats
  std::vector<std::string> ap_paths;
  std::string ap2_path;
  auto* st = app.add_subcommand("stats", "Gini / CV / kurtosis, or correlation and MSE against --ap2");
  st->add_option("--ap", ap_paths, "pattern JSON (repeatable)")->required();
  st->add_option("--ap2", ap2_path, "second pattern: write a comparison instead");
  st->add_option("--out", out, "output CSV")->required();
  st->callback([&] {
    action = [&] {
      std::string csv;
      if (!ap2_path.empty()) {
        if (ap_paths.size() != 1) fail(ErrorKind::usage, "--ap2 compares against exactly one --ap");
        const HeadGrid a = load_grid(ap_paths[0]), b = load_grid(ap2_path);
        csv = "pattern_a,pattern_b,correlation,mse\n" + fs::path(ap_paths[0]).stem().string() + "," +
              fs::path(ap2_path).stem().string() + "," + format_double(stats::correlation(a, b)) + "," +
              format_double(stats::mse(a, b)) + "\n";
        man.inputs = {ap_paths[0], ap2_path};
      } else {
        csv = std::string(stats::kSummaryCsvHeader) + "\n";
        std::vector<stats::PatternSummary> all;
        for (const auto& p : ap_paths) {
          all.push_back(stats::summarize(load_grid(p)));
          csv += stats::summary_csv_row(fs::path(p).stem().string(), all.back()) + "\n";
        }
        if (all.size() > 1) csv += stats::summary_csv_row("mean", stats::average(all)) + "\n";
        man.inputs = ap_paths;
      }
      write_text(out, csv);
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // fit
  std::string dep_path;
  std::vector<std::string> indep_paths, labels;
  auto* fitc = app.add_subcommand("fit", "least-squares fit of a delta by basic-task deltas");
  fitc->add_option("--dep", dep_path, "dependent pattern/delta")->required();
  fitc->add_option("--indep", indep_paths, "independent patterns/deltas")->required();
  fitc->add_option("--labels", labels, "task ids for --indep (default: file stems)");
  fitc->add_option("--out", out, "output JSON")->required();
  fitc->callback([&] {
    action = [&] {
      if (!labels.empty() && labels.size() != indep_paths.size()) fail(ErrorKind::usage, "--labels must match --indep");
      std::vector<LabeledGrid> xs;
      for (std::size_t i = 0; i < indep_paths.size(); ++i) {
        xs.push_back({labels.empty() ? fs::path(indep_paths[i]).stem().string() : labels[i], load_grid(indep_paths[i])});
      }
      Json doc = fit_json(fit(load_grid(dep_path), xs));
      doc["dependent_id"] = fs::path(dep_path).stem().string();
      write_text(out, dump_json(doc, true));
      man.inputs = indep_paths;
      man.inputs.insert(man.inputs.begin(), dep_path);
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // scan
  std::string cand_dir;
  int k = 2;
  auto* scan = app.add_subcommand("scan", "fit every size-k subset of candidate deltas");
  scan->add_option("--dep", dep_path, "dependent pattern/delta")->required();
  scan->add_option("--candidates", cand_dir, "directory of candidate JSON files")->required();
  scan->add_option("--k", k, "subset size");
  scan->add_option("--out", out, "output JSON")->required();
  scan->callback([&] {
    action = [&] {
      std::vector<LabeledGrid> xs;
      for (const auto& p : json_files_in(cand_dir)) {
        xs.push_back({p.stem().string(), load_grid(p)});
        man.inputs.push_back(p.string());
      }
      const auto rows = combo_scan(load_grid(dep_path), xs, k);
      write_text(out, dump_json(scan_report_json(fs::path(dep_path).stem().string(), rows), true));
      man.inputs.insert(man.inputs.begin(), dep_path);
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // mix
  std::string fit_path;
  std::int64_t total = 0;
  int top_k = 2;
  auto* mix = app.add_subcommand("mix", "allocate basic-task instances from fit coefficients");
  mix->add_option("--fit", fit_path, "fit JSON")->required();
  mix->add_option("--n", total, "total instances")->required();
  mix->add_option("--top-k", top_k, "coefficients kept");
  mix->add_option("--out", out, "output JSON")->required();
  mix->callback([&] {
    action = [&] {
      const auto plan = mix_plan(total, fit_from_json(read_json(fit_path), fit_path), top_k);
      write_text(out, dump_json(mix_plan_json(plan), true));
      man.inputs = {fit_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // select
  std::string target_path;
  std::size_t m = 0;
  auto* sel = app.add_subcommand("select", "rank candidate patterns by correlation with a target");
  sel->add_option("--target", target_path, "target pattern")->required();
  sel->add_option("--candidates", cand_dir, "directory of per-sample patterns")->required();
  sel->add_option("--m", m, "how many to select")->required();
  sel->add_option("--out", out, "output JSON")->required();
  sel->callback([&] {
    action = [&] {
      const auto files = json_files_in(cand_dir);
      std::vector<HeadGrid> grids;
      Json names = Json::array();
      for (const auto& p : files) {
        grids.push_back(load_grid(p));
        names.push_back(p.filename().string());
        man.inputs.push_back(p.string());
      }
      Json doc = selection_json(fs::path(target_path).stem().string(),
                                select_top_m(load_grid(target_path), std::span<const HeadGrid>(grids), m));
      doc["candidate_files"] = std::move(names);
      write_text(out, dump_json(doc, true));
      man.inputs.insert(man.inputs.begin(), target_path);
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // trajectory
  std::string run_dir;
  auto* traj = app.add_subcommand("trajectory", "correlation/MSE of each checkpoint's pattern to the first");
  traj->add_option("--run", run_dir, "run directory")->required();
  traj->add_option("--probe", probe_path, "probe JSONL")->required();
  traj->add_option("--mode", mode_s, "attribution mode");
  traj->add_option("--out", out, "output CSV")->required();
  traj->callback([&] {
    action = [&] {
      const auto pts = trajectory(load_run_checkpoints(run_dir), load_data(probe_path), parse_mode(mode_s));
      write_text(out, trajectory_csv(pts));
      man.inputs = {run_dir, probe_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // heatmap
  std::string ap_path, title;
  auto* heat = app.add_subcommand("heatmap", "SVG heatmap of a pattern");
  heat->add_option("--ap", ap_path, "pattern or delta JSON")->required();
  heat->add_option("--title", title, "caption");
  heat->add_option("--out", out, "output SVG")->required();
  heat->callback([&] {
    action = [&] {
      write_text(out, heatmap_svg(load_grid(ap_path), title));
      man.inputs = {ap_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // delta
  std::string after_path, before_path, delta_mode_s = "absolute";
  auto* dl = app.add_subcommand("delta", "elementwise change between two patterns");
  dl->add_option("--after", after_path, "pattern after")->required();
  dl->add_option("--before", before_path, "pattern before")->required();
  dl->add_option("--mode", delta_mode_s, "absolute|relative");
  dl->add_option("--out", out, "output JSON")->required();
  dl->callback([&] {
    action = [&] {
      export_delta(delta(import_pattern(after_path), import_pattern(before_path), parse_delta_mode(delta_mode_s)), out);
      man.inputs = {after_path, before_path};
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  // two-stage
  std::string base_path, plan_path, complex_path;
  std::vector<std::string> basic_specs;
  std::optional<std::string> cfg1_path, cfg2_path;
  TrainFlags tf1, tf2;
  auto* ts = app.add_subcommand("two-stage", "mix-plan pretraining, then fine-tuning on the complex task");
  ts->add_option("--base", base_path, "base checkpoint or model config")->required();
  ts->add_option("--plan", plan_path, "mix plan JSON")->required();
  ts->add_option("--basic", basic_specs, "TASK=pool.jsonl (repeatable)")->required();
  ts->add_option("--complex", complex_path, "complex-task JSONL")->required();
  ts->add_option("--config1", cfg1_path, "stage-1 train config");
  ts->add_option("--config2", cfg2_path, "stage-2 train config");
  add_train_flags(ts, tf1, "s1-");
  add_train_flags(ts, tf2, "s2-");
  ts->add_option("--out", out, "output checkpoint")->required();
  ts->callback([&] {
    action = [&] {
      Json src1 = Json::object(), src2 = Json::object();
      const TrainConfig c1 = resolve_train_config(cfg1_path, tf1.opts, tf1.values, src1);
      const TrainConfig c2 = resolve_train_config(cfg2_path, tf2.opts, tf2.values, src2);
      man.config_sources = Json{{"stage1", src1}, {"stage2", src2}};
      std::map<std::string, Dataset> pools;
      for (const auto& s : basic_specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) fail(ErrorKind::usage, "--basic expects TASK=path", s);
        pools[s.substr(0, eq)] = load_data(s.substr(eq + 1));
        man.inputs.push_back(s.substr(eq + 1));
      }
      const Model model = two_stage(load_model(base_path), mix_plan_from_json(read_json(plan_path), plan_path), pools,
                                    load_data(complex_path), c1, c2);
      save_checkpoint(model, out);
      man.seeds = Json{{"stage1", c1.seed}, {"stage2", c2.seed}};
      man.inputs.insert(man.inputs.begin(), {base_path, plan_path, complex_path});
      man.outputs = {out};
      man.path = manifest_beside(out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(to_string(ErrorKind::usage), e.what(), "arguments");
    return 2;
  }

  try {
    man.command = app.get_subcommands().front()->get_name();
    std::vector<std::string> ins = {spec_path, model_path, data_path, ckpt_path, probe_path, ap2_path, dep_path,
                                    fit_path, target_path, after_path, before_path, base_path, plan_path, complex_path,
                                    ap_path};
    ins.insert(ins.end(), ap_paths.begin(), ap_paths.end());
    ins.insert(ins.end(), indep_paths.begin(), indep_paths.end());
    std::erase(ins, std::string());
    if (!out.empty()) guard_outputs(ins, {out});
    action();
    write_manifest(man, t0, started);
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what(), e.context());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    print_error(to_string(ErrorKind::data), e.what(), e.path1().string());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    print_error(to_string(ErrorKind::format), e.what(), "");
    return 3;
  } catch (const std::exception& e) {
    print_error("internal_error", e.what(), "");
    return 4;
  }
  return 0;
}
