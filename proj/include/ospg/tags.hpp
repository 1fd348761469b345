#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ospg/error.hpp"

// Task/attribute tag registry, the structured-output grammar
//   output := task_tag+ content? attribute_tag*
// and the character-level tokenizer with atomic tag tokens.
namespace ospg::tags {

enum class Task : std::uint8_t { Asr, Srwt, Ved, Ser, Ssr, Sgc, Sap, Sttc };
inline constexpr std::array<Task, 8> kAllTasks{Task::Asr, Task::Srwt, Task::Ved, Task::Ser,
                                              Task::Ssr, Task::Sgc,  Task::Sap, Task::Sttc};

enum class Attribute : std::uint8_t {
  Child, Adult, Old,
  Male, Female,
  Happy, Sad, Angry, Neutral, Surprise,
  News, Chat, Story,
  Laugh, Cough, Noise, None,
};
inline constexpr int kAttributeCount = 17;

std::string_view surface(Task task);       // "<asr>"
std::string_view name(Task task);          // "asr"
std::string_view surface(Attribute attr);  // "<ADULT>"
Task owner(Attribute attr);
// Closed label set of a task; empty for tasks without attribute output.
std::vector<Attribute> attributes_of(Task task);

std::optional<Task> task_from_name(std::string_view name);
// Accepts registered surfaces and the "<age>" alias for "<sap>".
std::optional<Task> task_from_surface(std::string_view surface);
std::optional<Attribute> attribute_from_surface(std::string_view surface);

struct StructuredOutput {
  std::vector<Task> tasks;
  std::string content;
  std::vector<Attribute> attributes;

  friend bool operator==(const StructuredOutput&, const StructuredOutput&) = default;
};

enum class ParseErrorKind { MissingTaskTag, UnknownTag, OrphanAttribute, DuplicateTask, MisplacedTag };
std::string_view to_string(ParseErrorKind kind);

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, const std::string& message)
      : Error("parse", std::string(to_string(kind)) + ": " + message), kind_(kind) {}
  ParseErrorKind parse_kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

StructuredOutput parse_output(std::string_view text);

// Throws ValueError when `o` breaks its invariants.
void validate(const StructuredOutput& o);
std::string render_target(const StructuredOutput& o);

enum class InstructionForm { Fixed, Natural };
std::string_view to_string(InstructionForm form);
InstructionForm form_from_string(std::string_view text);

struct Instruction {
  std::string text;
  InstructionForm form = InstructionForm::Natural;
  std::vector<Task> intended_tasks;  // sorted, unique
};

// Tag-only prompt, e.g. "<asr><sap>".
std::string fixed_prompt(const std::vector<Task>& tasks);
// True when text is a nonempty concatenation of task-tag surfaces.
bool is_fixed_prompt(std::string_view text);

std::vector<Task> sorted_unique(std::vector<Task> tasks);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  // PAD, BOS, EOS, every task tag, every attribute tag, then the character set.
  static Vocabulary standard();
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;

  bool is_task_tag(int id) const;
  bool is_attribute_tag(int id) const;
  bool is_special(int id) const { return id == kPad || id == kBos || id == kEos; }

  // Greedy longest match over tag surfaces, falling back to single characters.
  std::vector<int> tokenize(std::string_view text) const;
  // Special tokens render as nothing.
  std::string detokenize(std::span<const int> ids) const;

  std::vector<std::uint8_t> task_identifier_positions(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::uint8_t> kind_;  // 0 plain, 1 task tag, 2 attribute tag, 3 special
  std::size_t longest_tag_ = 0;
};

// Characters a Vocabulary::standard() can represent.
std::string_view character_set();

}  // namespace ospg::tags
