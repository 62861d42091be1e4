#include "attnlab/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "attnlab/error.hpp"

namespace attnlab {

namespace {

constexpr BasicKind kAllBasic[] = {BasicKind::copy, BasicKind::reverse, BasicKind::increment, BasicKind::sort};

BasicKind parse_basic(const std::string& s) {
  for (auto k : kAllBasic) {
    if (basic_name(k) == s) return k;
  }
  fail(ErrorKind::config, "unknown task kind '" + s + "'");
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::string_view basic_name(BasicKind k) {
  switch (k) {
    case BasicKind::copy: return "COPY";
    case BasicKind::reverse: return "REVERSE";
    case BasicKind::increment: return "INCREMENT";
    case BasicKind::sort: return "SORT";
  }
  return "?";
}

std::vector<int> apply_basic(BasicKind k, std::span<const int> digits) {
  std::vector<int> out(digits.begin(), digits.end());
  switch (k) {
    case BasicKind::copy: break;
    case BasicKind::reverse: std::reverse(out.begin(), out.end()); break;
    case BasicKind::increment:
      for (int& d : out) d = (d + 1) % 10;
      break;
    case BasicKind::sort: std::sort(out.begin(), out.end()); break;
  }
  return out;
}

TaskKind TaskKind::parse(const std::string& raw) {
  const std::string name = trim(raw);
  if (name.rfind("COMPOSE(", 0) == 0 && name.back() == ')') {
    const std::string inner = name.substr(8, name.size() - 9);
    const auto comma = inner.find(',');
    if (comma == std::string::npos) fail(ErrorKind::config, "COMPOSE needs two kinds: '" + name + "'");
    return compose(parse_basic(trim(inner.substr(0, comma))), parse_basic(trim(inner.substr(comma + 1))));
  }
  return basic(parse_basic(name));
}

int TaskKind::tag_token() const {
  if (!second) return vocab::kBasicTagBase + static_cast<int>(first);
  return vocab::kComposeTagBase + 4 * static_cast<int>(first) + static_cast<int>(*second);
}

std::string TaskKind::name() const {
  if (!second) return std::string(basic_name(first));
  return "COMPOSE(" + std::string(basic_name(first)) + "," + std::string(basic_name(*second)) + ")";
}

std::vector<int> TaskKind::apply(std::span<const int> digits) const {
  auto out = apply_basic(first, digits);
  if (second) out = apply_basic(*second, out);
  return out;
}

void TaskSpec::validate() const {
  if (min_len < 1 || max_len < min_len) {
    fail(ErrorKind::config, "invalid seq_len_range [" + std::to_string(min_len) + "," + std::to_string(max_len) + "]");
  }
  if (max_len > max_seq_len / 2 - 2) {
    fail(ErrorKind::config, "max length " + std::to_string(max_len) + " does not fit max_seq_len " +
                                std::to_string(max_seq_len) + " (limit " + std::to_string(max_seq_len / 2 - 2) + ")");
  }
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::probe: return "probe";
    case Split::eval: return "eval";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "probe") return Split::probe;
  if (s == "eval") return Split::eval;
  fail(ErrorKind::config, "unknown split '" + s + "' (train|probe|eval)");
}

Split split_of_prompt(std::span<const int> digits) {
  // FNV-1a over (length, digits); 3/5 train, 1/5 probe, 1/5 eval.
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&](std::uint64_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  mix(digits.size());
  for (int d : digits) mix(static_cast<std::uint64_t>(d) + 1);
  switch (h % 5) {
    case 3: return Split::probe;
    case 4: return Split::eval;
    default: return Split::train;
  }
}

Instance make_instance(const TaskKind& kind, std::span<const int> digits, Split split) {
  Instance inst;
  inst.task = kind.name();
  inst.split = std::string(split_name(split));
  inst.tokens.push_back(kind.tag_token());
  inst.tokens.insert(inst.tokens.end(), digits.begin(), digits.end());
  inst.tokens.push_back(vocab::kSep);
  const auto completion = kind.apply(digits);
  inst.tokens.insert(inst.tokens.end(), completion.begin(), completion.end());
  inst.tokens.push_back(vocab::kEos);
  inst.loss_mask.assign(inst.tokens.size(), false);
  std::fill(inst.loss_mask.begin() + static_cast<std::ptrdiff_t>(digits.size() + 2), inst.loss_mask.end(), true);
  return inst;
}

std::vector<int> prompt_digits(const Instance& inst) {
  const auto sep = std::find(inst.tokens.begin(), inst.tokens.end(), vocab::kSep);
  return {inst.tokens.begin() + 1, sep};
}

std::vector<int> completion_digits(const Instance& inst) {
  const auto sep = std::find(inst.tokens.begin(), inst.tokens.end(), vocab::kSep);
  return {sep + 1, inst.tokens.end() - 1};
}

Dataset generate(const TaskSpec& spec, std::size_t n, Split split) {
  spec.validate();
  if (n < 1) fail(ErrorKind::config, "generate: n must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(spec.kind.tag_token())};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> digit_dist(0, 9);

  Dataset ds;
  ds.id = spec.kind.name() + "/" + std::string(split_name(split)) + "/seed" + std::to_string(spec.seed) + "/n" +
          std::to_string(n);
  ds.instances.reserve(n);
  std::vector<int> digits;
  int rejected = 0;
  while (ds.instances.size() < n) {
    digits.resize(static_cast<std::size_t>(len_dist(rng)));
    for (int& d : digits) d = digit_dist(rng);
    if (split_of_prompt(digits) != split) {
      if (++rejected > 100000) fail(ErrorKind::config, "length range admits no prompts for this split");
      continue;
    }
    rejected = 0;
    ds.instances.push_back(make_instance(spec.kind, digits, split));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::string out;
  for (const auto& inst : ds.instances) {
    Json line;
    line["tokens"] = inst.tokens;
    line["loss_mask"] = inst.loss_mask;
    line["task"] = inst.task;
    line["split"] = inst.split;
    out += line.dump();
    out += '\n';
  }
  write_text(path, out);
}

LoadResult load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::data, "cannot open dataset", path.string());
  LoadResult res;
  res.dataset.id = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    Instance inst;
    try {
      const Json j = Json::parse(line);
      inst.tokens = j.at("tokens").get<std::vector<int>>();
      inst.loss_mask = j.at("loss_mask").get<std::vector<bool>>();
      inst.task = j.at("task").get<std::string>();
      inst.split = j.at("split").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, "line " + std::to_string(lineno) + ": " + e.what(), where);
    }
    if (inst.tokens.size() != inst.loss_mask.size()) {
      fail(ErrorKind::format, "line " + std::to_string(lineno) + ": loss_mask length differs from tokens length",
           where);
    }
    if (inst.tokens.size() < 2) fail(ErrorKind::format, "line " + std::to_string(lineno) + ": fewer than 2 tokens", where);
    for (int tok : inst.tokens) {
      if (tok < 0 || tok >= vocab::kSize) {
        fail(ErrorKind::format, "line " + std::to_string(lineno) + ": token " + std::to_string(tok) + " out of range",
             where);
      }
    }
    res.dataset.instances.push_back(std::move(inst));
  }
  if (res.dataset.empty()) res.warnings.push_back("empty dataset: " + path.string());
  return res;
}

Json task_spec_json(const TaskSpec& spec) {
  return Json{{"kind", spec.kind.name()},
              {"seq_len_range", {spec.min_len, spec.max_len}},
              {"digit_alphabet", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}},
              {"seed", spec.seed},
              {"max_seq_len", spec.max_seq_len}};
}

TaskSpec task_spec_from_json(const Json& j) {
  TaskSpec spec;
  try {
    spec.kind = TaskKind::parse(j.at("kind").get<std::string>());
    if (j.contains("seq_len_range")) {
      const auto r = j.at("seq_len_range").get<std::vector<int>>();
      if (r.size() != 2) fail(ErrorKind::config, "seq_len_range must have two entries");
      spec.min_len = r[0];
      spec.max_len = r[1];
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.max_seq_len = j.value("max_seq_len", 32);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("task spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace attnlab
