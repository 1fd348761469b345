#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ospg/tags.hpp"

namespace ospg::eval {

using tags::Attribute;
using tags::Instruction;
using tags::Task;

struct JudgeVerdict {
  bool correct = false;
  std::string rationale;
};

struct IfrReport {
  long n_correct = 0;
  long n_total = 0;
  double ifr_percent = 0.0;
};

// Correct iff the output parses and its task set equals the intended one.
JudgeVerdict rule_judge(const Instruction& instruction, std::string_view output);

IfrReport compute_ifr(const std::vector<JudgeVerdict>& verdicts);

// 100·(S+D+I)/|ref|.
double compute_wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
// WER over single-character tokens.
double compute_cer(std::string_view ref, std::string_view hyp);
std::vector<std::string> split_words(std::string_view text);

// Minimum number of substitutions, deletions and insertions.
std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

using AttributePair = std::pair<std::vector<Attribute>, std::vector<Attribute>>;  // (target, predicted)
// Percentage of pairs whose attribute sets match, ignoring order.
double task_accuracy(const std::vector<AttributePair>& samples);

// Anything that answers an instruction about a piece of audio.
struct EvalItem {
  std::string id;
  std::vector<Task> tasks;
  Instruction instruction;
  std::string audio;  // shared key: FIXED and NATURAL variants of one item carry the same value
  std::string target;
};

using Responder = std::function<std::string(const EvalItem&)>;

struct FiNlRow {
  Task task = Task::Asr;
  std::string test_name;
  std::string metric;  // "WER" or "ACC"
  double metric_fi = 0.0;
  double metric_nl = 0.0;
  double delta = 0.0;  // metric_nl − metric_fi
};

// Per-task metric of a set of (item, output) pairs; WER for ASR/SRWT,
// attribute accuracy otherwise.
struct TaskMetric {
  Task task = Task::Asr;
  std::string metric;
  double value = 0.0;
  long n = 0;
};
std::vector<TaskMetric> task_metrics(const std::vector<EvalItem>& items, const std::vector<std::string>& outputs);

// Runs every item under both forms and reports one row per task, in task order.
std::vector<FiNlRow> fi_vs_nl_report(const Responder& model, const std::vector<EvalItem>& items,
                                     const std::string& test_name = "synthetic");
std::string render_table(const std::vector<FiNlRow>& rows);
std::string to_json_line(const FiNlRow& row);
std::string to_json_line(const IfrReport& report);
std::string ifr_summary(const IfrReport& report);

struct JudgeEndpoint {
  std::string url;  // http://host:port/path
  std::chrono::milliseconds timeout{5000};
};

std::string judge_prompt(const Instruction& instruction, std::string_view output);
// Posts the judge prompt and reads a leading YES/NO from the reply.
JudgeVerdict llm_judge_request(const Instruction& instruction, std::string_view output, const JudgeEndpoint& endpoint);
// Parses a judge reply body; throws on anything without a leading YES/NO.
JudgeVerdict parse_judge_reply(std::string_view body);

}  // namespace ospg::eval
