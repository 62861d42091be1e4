#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json_io.hpp"

namespace attnlab {

enum class BasicKind { copy = 0, reverse = 1, increment = 2, sort = 3 };

enum class Split { train, probe, eval };

// Closed vocabulary: digits 0-9, SEP, EOS, one tag per basic kind and one tag
// per ordered pair of basic kinds. 32 tokens in total.
namespace vocab {
inline constexpr int kSep = 10;
inline constexpr int kEos = 11;
inline constexpr int kBasicTagBase = 12;
inline constexpr int kComposeTagBase = 16;
inline constexpr int kSize = 32;
}  // namespace vocab

struct TaskKind {
  BasicKind first = BasicKind::copy;
  std::optional<BasicKind> second;  // set for COMPOSE(first, second)

  static TaskKind basic(BasicKind k) { return {k, std::nullopt}; }
  static TaskKind compose(BasicKind a, BasicKind b) { return {a, b}; }
  static TaskKind parse(const std::string& name);

  bool composed() const { return second.has_value(); }
  int tag_token() const;
  std::string name() const;
  // The completion digits for the given prompt digits.
  std::vector<int> apply(std::span<const int> digits) const;
  bool operator==(const TaskKind&) const = default;
};

std::string_view basic_name(BasicKind k);
std::vector<int> apply_basic(BasicKind k, std::span<const int> digits);

struct TaskSpec {
  TaskKind kind;
  int min_len = 2;
  int max_len = 6;
  std::uint64_t seed = 0;
  int max_seq_len = 32;

  void validate() const;
};

std::string_view split_name(Split s);
Split parse_split(const std::string& s);

struct Instance {
  std::vector<int> tokens;       // TAG d.. SEP c.. EOS
  std::vector<bool> loss_mask;   // true on completion digits and EOS
  std::string task;
  std::string split;

  bool operator==(const Instance&) const = default;
};

struct Dataset {
  std::string id;
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
};

// Which split a prompt belongs to; partitions the prompt space so the three
// splits never share a sequence.
Split split_of_prompt(std::span<const int> digits);

Dataset generate(const TaskSpec& spec, std::size_t n, Split split);

Instance make_instance(const TaskKind& kind, std::span<const int> digits, Split split);
// Recovers the prompt digits of an instance.
std::vector<int> prompt_digits(const Instance& inst);
std::vector<int> completion_digits(const Instance& inst);

struct LoadResult {
  Dataset dataset;
  std::vector<std::string> warnings;
};

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
LoadResult load_dataset(const std::filesystem::path& path);

Json task_spec_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const Json& j);

}  // namespace attnlab
