#include "ospg/tags.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace ospg::tags {

namespace {

struct TaskInfo {
  std::string_view name;
  std::string_view surface;
};
constexpr std::array<TaskInfo, 8> kTasks{{{"asr", "<asr>"},
                                          {"srwt", "<srwt>"},
                                          {"ved", "<ved>"},
                                          {"ser", "<ser>"},
                                          {"ssr", "<ssr>"},
                                          {"sgc", "<sgc>"},
                                          {"sap", "<sap>"},
                                          {"sttc", "<sttc>"}}};

struct AttributeInfo {
  std::string_view surface;
  Task owner;
};
constexpr std::array<AttributeInfo, kAttributeCount> kAttributes{{
    {"<CHILD>", Task::Sap},   {"<ADULT>", Task::Sap},   {"<OLD>", Task::Sap},
    {"<MALE>", Task::Sgc},    {"<FEMALE>", Task::Sgc},
    {"<HAPPY>", Task::Ser},   {"<SAD>", Task::Ser},     {"<ANGRY>", Task::Ser},
    {"<NEUTRAL>", Task::Ser}, {"<SURPRISE>", Task::Ser},
    {"<NEWS>", Task::Ssr},    {"<CHAT>", Task::Ssr},    {"<STORY>", Task::Ssr},
    {"<LAUGH>", Task::Ved},   {"<COUGH>", Task::Ved},   {"<NOISE>", Task::Ved},
    {"<NONE>", Task::Ved},
}};

constexpr std::string_view kCharacters = "abcdefghijklmnopqrstuvwxyz0123456789 .,-|?";
constexpr std::string_view kAgeAlias = "<age>";

constexpr std::uint8_t kPlain = 0, kTaskTag = 1, kAttrTag = 2, kSpecial = 3;

}  // namespace

std::string_view surface(Task task) { return kTasks[static_cast<std::size_t>(task)].surface; }
std::string_view name(Task task) { return kTasks[static_cast<std::size_t>(task)].name; }
std::string_view surface(Attribute attr) { return kAttributes[static_cast<std::size_t>(attr)].surface; }
Task owner(Attribute attr) { return kAttributes[static_cast<std::size_t>(attr)].owner; }

std::vector<Attribute> attributes_of(Task task) {
  std::vector<Attribute> out;
  for (int i = 0; i < kAttributeCount; ++i) {
    if (kAttributes[i].owner == task) out.push_back(static_cast<Attribute>(i));
  }
  return out;
}

std::optional<Task> task_from_name(std::string_view text) {
  for (std::size_t i = 0; i < kTasks.size(); ++i) {
    if (kTasks[i].name == text) return static_cast<Task>(i);
  }
  return std::nullopt;
}

std::optional<Task> task_from_surface(std::string_view text) {
  if (text == kAgeAlias) return Task::Sap;
  for (std::size_t i = 0; i < kTasks.size(); ++i) {
    if (kTasks[i].surface == text) return static_cast<Task>(i);
  }
  return std::nullopt;
}

std::optional<Attribute> attribute_from_surface(std::string_view text) {
  for (int i = 0; i < kAttributeCount; ++i) {
    if (kAttributes[i].surface == text) return static_cast<Attribute>(i);
  }
  return std::nullopt;
}

std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::MissingTaskTag: return "MissingTaskTag";
    case ParseErrorKind::UnknownTag: return "UnknownTag";
    case ParseErrorKind::OrphanAttribute: return "OrphanAttribute";
    case ParseErrorKind::DuplicateTask: return "DuplicateTask";
    case ParseErrorKind::MisplacedTag: return "MisplacedTag";
  }
  return "ParseError";
}

namespace {

struct Piece {
  bool is_tag;
  std::string_view text;
};

std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      const auto close = text.find('>', i);
      if (close == std::string_view::npos) {
        throw ParseError(ParseErrorKind::UnknownTag, "unterminated tag at offset " + std::to_string(i));
      }
      pieces.push_back({true, text.substr(i, close - i + 1)});
      i = close + 1;
    } else {
      const auto next = std::min(text.find('<', i), text.size());
      pieces.push_back({false, text.substr(i, next - i)});
      i = next;
    }
  }
  return pieces;
}

}  // namespace

StructuredOutput parse_output(std::string_view text) {
  const auto pieces = split_pieces(text);
  for (const auto& p : pieces) {
    if (p.is_tag && !task_from_surface(p.text) && !attribute_from_surface(p.text)) {
      throw ParseError(ParseErrorKind::UnknownTag, "unregistered tag " + std::string(p.text));
    }
  }
  StructuredOutput out;
  std::size_t head = 0;
  for (; head < pieces.size() && pieces[head].is_tag; ++head) {
    const auto task = task_from_surface(pieces[head].text);
    if (!task) break;
    if (std::find(out.tasks.begin(), out.tasks.end(), *task) != out.tasks.end()) {
      throw ParseError(ParseErrorKind::DuplicateTask, "task tag " + std::string(surface(*task)) + " repeated");
    }
    out.tasks.push_back(*task);
  }
  if (out.tasks.empty()) throw ParseError(ParseErrorKind::MissingTaskTag, "output does not start with a task tag");

  std::size_t tail = pieces.size();
  while (tail > head && pieces[tail - 1].is_tag && attribute_from_surface(pieces[tail - 1].text)) --tail;
  for (std::size_t i = head; i < tail; ++i) {
    if (pieces[i].is_tag) {
      throw ParseError(ParseErrorKind::MisplacedTag, "tag " + std::string(pieces[i].text) + " inside content");
    }
    out.content += pieces[i].text;
  }
  for (std::size_t i = tail; i < pieces.size(); ++i) {
    const Attribute attr = *attribute_from_surface(pieces[i].text);
    if (std::find(out.tasks.begin(), out.tasks.end(), owner(attr)) == out.tasks.end()) {
      throw ParseError(ParseErrorKind::OrphanAttribute, std::string(surface(attr)) + " requires task " +
                                                            std::string(surface(owner(attr))));
    }
    out.attributes.push_back(attr);
  }
  return out;
}

void validate(const StructuredOutput& o) {
  if (o.tasks.empty()) throw ValueError("structured output needs at least one task");
  for (std::size_t i = 0; i < o.tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < o.tasks.size(); ++j) {
      if (o.tasks[i] == o.tasks[j]) throw ValueError("duplicate task " + std::string(surface(o.tasks[i])));
    }
  }
  if (o.content.find_first_of("<>") != std::string::npos) {
    throw ValueError("content may not contain angle brackets");
  }
  for (Attribute a : o.attributes) {
    if (std::find(o.tasks.begin(), o.tasks.end(), owner(a)) == o.tasks.end()) {
      throw ValueError("attribute " + std::string(surface(a)) + " without its task " + std::string(surface(owner(a))));
    }
  }
}

std::string render_target(const StructuredOutput& o) {
  validate(o);
  std::string out;
  for (Task t : o.tasks) out += surface(t);
  out += o.content;
  for (Attribute a : o.attributes) out += surface(a);
  return out;
}

std::string_view to_string(InstructionForm form) { return form == InstructionForm::Fixed ? "fixed" : "natural"; }

InstructionForm form_from_string(std::string_view text) {
  if (text == "fixed") return InstructionForm::Fixed;
  if (text == "natural") return InstructionForm::Natural;
  throw ValueError("unknown instruction form '" + std::string(text) + "'");
}

std::string fixed_prompt(const std::vector<Task>& tasks) {
  std::string out;
  for (Task t : tasks) out += surface(t);
  return out;
}

bool is_fixed_prompt(std::string_view text) {
  if (text.empty()) return false;
  try {
    for (const auto& p : split_pieces(text)) {
      if (!p.is_tag || !task_from_surface(p.text)) return false;
    }
  } catch (const ParseError&) {
    return false;
  }
  return true;
}

std::vector<Task> sorted_unique(std::vector<Task> tasks) {
  std::sort(tasks.begin(), tasks.end());
  tasks.erase(std::unique(tasks.begin(), tasks.end()), tasks.end());
  return tasks;
}

std::string_view character_set() { return kCharacters; }

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  static const std::array<std::string_view, 3> kSpecials{"<pad>", "<bos>", "<eos>"};
  if (tokens_.size() < 3) throw ValueError("vocabulary needs at least the three special tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& tok = tokens_[i];
    if (!ids_.emplace(tok, static_cast<int>(i)).second) throw ValueError("duplicate vocabulary token '" + tok + "'");
    std::uint8_t kind = kPlain;
    if (i < 3) {
      if (tok != kSpecials[i]) throw ValueError("vocabulary id " + std::to_string(i) + " must be " + std::string(kSpecials[i]));
      kind = kSpecial;
    } else if (tok != kAgeAlias && task_from_surface(tok)) {
      kind = kTaskTag;
    } else if (attribute_from_surface(tok)) {
      kind = kAttrTag;
    } else if (tok.size() != 1 || tok == "<" || tok == ">") {
      throw ValueError("vocabulary token '" + tok + "' is neither a registered tag nor a single character");
    }
    if (kind == kTaskTag || kind == kAttrTag) longest_tag_ = std::max(longest_tag_, tok.size());
    kind_.push_back(kind);
  }
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>"};
  for (Task t : kAllTasks) tokens.emplace_back(surface(t));
  for (int i = 0; i < kAttributeCount; ++i) tokens.emplace_back(surface(static_cast<Attribute>(i)));
  for (char c : kCharacters) tokens.emplace_back(1, c);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ValueError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::optional<int> Vocabulary::find(std::string_view tok) const {
  const auto it = ids_.find(std::string(tok));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view tok) const {
  const auto found = find(tok);
  if (!found) throw ValueError("token '" + std::string(tok) + "' not in vocabulary");
  return *found;
}

bool Vocabulary::is_task_tag(int id) const { return id >= 0 && id < size() && kind_[id] == kTaskTag; }
bool Vocabulary::is_attribute_tag(int id) const { return id >= 0 && id < size() && kind_[id] == kAttrTag; }

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::set<char> missing;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (std::size_t len = std::min(longest_tag_, text.size() - i); len >= 2 && !matched; --len) {
      const auto it = ids_.find(std::string(text.substr(i, len)));
      if (it != ids_.end() && (kind_[it->second] == kTaskTag || kind_[it->second] == kAttrTag)) {
        ids.push_back(it->second);
        i += len;
        matched = true;
      }
    }
    if (matched) continue;
    const auto it = ids_.find(std::string(1, text[i]));
    if (it != ids_.end() && kind_[it->second] == kPlain) {
      ids.push_back(it->second);
    } else {
      missing.insert(text[i]);
    }
    ++i;
  }
  if (!missing.empty()) {
    std::string listed;
    for (char c : missing) {
      if (!listed.empty()) listed += ", ";
      listed += '\'';
      listed += c;
      listed += '\'';
    }
    throw ValueError("tokenize: unrepresentable characters " + listed);
  }
  return ids;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (is_special(id)) continue;
    out += token(id);
  }
  return out;
}

std::vector<std::uint8_t> Vocabulary::task_identifier_positions(std::span<const int> ids) const {
  std::vector<std::uint8_t> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = is_task_tag(ids[i]) ? 1 : 0;
  return mask;
}

}  // namespace ospg::tags
