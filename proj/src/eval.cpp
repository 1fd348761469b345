#include "ospg/eval.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace ospg::eval {

namespace {

std::string task_list(const std::vector<Task>& tasks) {
  std::string out;
  for (Task t : tasks) out += tags::surface(t);
  return out.empty() ? "(none)" : out;
}

}  // namespace

JudgeVerdict rule_judge(const Instruction& instruction, std::string_view output) {
  tags::StructuredOutput parsed;
  try {
    parsed = tags::parse_output(output);
  } catch (const tags::ParseError& e) {
    return {false, std::string("output does not parse: ") + e.what()};
  }
  const auto intended = tags::sorted_unique(instruction.intended_tasks);
  const auto got = tags::sorted_unique(parsed.tasks);
  if (got != intended) return {false, "task mismatch: intended " + task_list(intended) + ", got " + task_list(got)};
  return {true, "executed " + task_list(got)};
}

IfrReport compute_ifr(const std::vector<JudgeVerdict>& verdicts) {
  if (verdicts.empty()) throw ValueError("compute_ifr: no verdicts");
  IfrReport r;
  r.n_total = static_cast<long>(verdicts.size());
  r.n_correct = std::count_if(verdicts.begin(), verdicts.end(), [](const JudgeVerdict& v) { return v.correct; });
  r.ifr_percent = 100.0 * static_cast<double>(r.n_correct) / static_cast<double>(r.n_total);
  return r;
}

std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double compute_wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw ValueError("compute_wer: empty reference");
  return 100.0 * static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double compute_cer(std::string_view ref, std::string_view hyp) {
  const auto chars = [](std::string_view s) {
    std::vector<std::string> out;
    for (char c : s) out.emplace_back(1, c);
    return out;
  };
  return compute_wer(chars(ref), chars(hyp));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double task_accuracy(const std::vector<AttributePair>& samples) {
  if (samples.empty()) throw ValueError("task_accuracy: no samples");
  long hits = 0;
  for (const auto& [target, predicted] : samples) {
    const std::set<Attribute> a(target.begin(), target.end()), b(predicted.begin(), predicted.end());
    if (a == b) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace {

bool uses_wer(Task t) { return t == Task::Asr || t == Task::Srwt; }

std::vector<Attribute> owned_by(const std::vector<Attribute>& attrs, Task t) {
  std::vector<Attribute> out;
  for (Attribute a : attrs) {
    if (tags::owner(a) == t) out.push_back(a);
  }
  return out;
}

}  // namespace

std::vector<TaskMetric> task_metrics(const std::vector<EvalItem>& items, const std::vector<std::string>& outputs) {
  if (items.size() != outputs.size()) throw ValueError("task_metrics: item and output counts differ");
  struct Acc {
    std::size_t edits = 0, ref_words = 0;
    std::vector<AttributePair> pairs;
    long n = 0;
  };
  std::map<Task, Acc> acc;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto gold = tags::parse_output(items[i].target);
    tags::StructuredOutput hyp;
    try {
      hyp = tags::parse_output(outputs[i]);
    } catch (const tags::ParseError&) {
      // Unparseable output scores as an empty answer.
    }
    for (Task t : gold.tasks) {
      if (t == Task::Sttc) continue;
      auto& a = acc[t];
      ++a.n;
      if (uses_wer(t)) {
        const auto ref = split_words(gold.content);
        if (ref.empty()) throw ValueError("task_metrics: item " + items[i].id + " has an empty reference");
        a.edits += edit_distance(ref, split_words(hyp.content));
        a.ref_words += ref.size();
      } else {
        a.pairs.emplace_back(owned_by(gold.attributes, t), owned_by(hyp.attributes, t));
      }
    }
  }
  std::vector<TaskMetric> out;
  for (const auto& [task, a] : acc) {
    TaskMetric m{task, uses_wer(task) ? "WER" : "ACC", 0.0, a.n};
    m.value = uses_wer(task) ? 100.0 * static_cast<double>(a.edits) / static_cast<double>(a.ref_words)
                             : task_accuracy(a.pairs);
    out.push_back(m);
  }
  return out;
}

std::vector<FiNlRow> fi_vs_nl_report(const Responder& model, const std::vector<EvalItem>& items,
                                     const std::string& test_name) {
  std::vector<EvalItem> fi, nl;
  std::map<std::string, std::pair<int, int>> forms;  // audio key → (fixed, natural) counts
  for (const auto& item : items) {
    auto& f = forms[item.audio];
    if (item.instruction.form == tags::InstructionForm::Fixed) {
      fi.push_back(item);
      ++f.first;
    } else {
      nl.push_back(item);
      ++f.second;
    }
  }
  for (const auto& [key, counts] : forms) {
    if (counts.first == 0 || counts.second == 0) {
      throw ValueError("fi_vs_nl_report: item '" + key + "' lacks its " + (counts.first == 0 ? "FIXED" : "NATURAL") +
                       " variant");
    }
  }
  const auto run = [&](const std::vector<EvalItem>& part) {
    std::vector<std::string> outputs;
    outputs.reserve(part.size());
    for (const auto& item : part) outputs.push_back(model(item));
    return task_metrics(part, outputs);
  };
  const auto fi_metrics = run(fi);
  const auto nl_metrics = run(nl);
  std::map<Task, const TaskMetric*> nl_by_task;
  for (const auto& m : nl_metrics) nl_by_task[m.task] = &m;
  if (fi_metrics.size() != nl_metrics.size()) throw ValueError("fi_vs_nl_report: a task is missing one form");
  std::vector<FiNlRow> rows;
  for (const auto& m : fi_metrics) {
    const auto it = nl_by_task.find(m.task);
    if (it == nl_by_task.end()) {
      throw ValueError("fi_vs_nl_report: task " + std::string(tags::name(m.task)) + " has no NATURAL items");
    }
    rows.push_back({m.task, test_name, m.metric, m.value, it->second->value, it->second->value - m.value});
  }
  return rows;
}

std::string render_table(const std::vector<FiNlRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(6) << "Task" << std::setw(12) << "Test" << std::setw(8) << "Metric" << std::right
      << std::setw(9) << "FI" << std::setw(9) << "NL" << std::setw(9) << "Delta" << '\n';
  out << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    out << std::left << std::setw(6) << tags::name(r.task) << std::setw(12) << r.test_name << std::setw(8) << r.metric
        << std::right << std::setw(9) << r.metric_fi << std::setw(9) << r.metric_nl << std::setw(9) << std::showpos
        << r.delta << std::noshowpos << '\n';
  }
  return out.str();
}

std::string to_json_line(const FiNlRow& row) {
  nlohmann::ordered_json j;
  j["task"] = std::string(tags::name(row.task));
  j["test"] = row.test_name;
  j["metric"] = row.metric;
  j["fi"] = row.metric_fi;
  j["nl"] = row.metric_nl;
  j["delta"] = row.delta;
  return j.dump();
}

std::string to_json_line(const IfrReport& report) {
  nlohmann::ordered_json j;
  j["n_correct"] = report.n_correct;
  j["n_total"] = report.n_total;
  j["ifr_percent"] = report.ifr_percent;
  return j.dump();
}

std::string ifr_summary(const IfrReport& report) {
  std::ostringstream out;
  out << "IFR: " << std::fixed << std::setprecision(1) << report.ifr_percent << "% (" << report.n_correct << "/"
      << report.n_total << ")";
  return out.str();
}

std::string judge_prompt(const Instruction& instruction, std::string_view output) {
  return "Instruction: " + instruction.text + "\nModel output: " + std::string(output) +
         "\nQuestion: Does the output fulfill the instruction? Answer YES or NO with a reason.\n";
}

JudgeVerdict parse_judge_reply(std::string_view body) {
  std::size_t i = 0;
  while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
  std::string head;
  while (i < body.size() && std::isalpha(static_cast<unsigned char>(body[i]))) {
    head += static_cast<char>(std::toupper(static_cast<unsigned char>(body[i++])));
  }
  if (head != "YES" && head != "NO") {
    throw ValueError("judge reply has no leading YES/NO: \"" + std::string(body.substr(0, 80)) + "\"");
  }
  while (i < body.size() && (std::isspace(static_cast<unsigned char>(body[i])) || body[i] == ':' || body[i] == ',' ||
                             body[i] == '.' || body[i] == '-')) {
    ++i;
  }
  std::string reason(body.substr(i));
  while (!reason.empty() && std::isspace(static_cast<unsigned char>(reason.back()))) reason.pop_back();
  const bool yes = head == "YES";
  if (reason.empty()) reason = yes ? "judge answered YES" : "judge answered NO without a reason";
  return {yes, reason};
}

JudgeVerdict llm_judge_request(const Instruction& instruction, std::string_view output, const JudgeEndpoint& endpoint) {
  static const std::string kScheme = "http://";
  if (endpoint.url.rfind(kScheme, 0) != 0) {
    throw ConfigError("judge endpoint must be an http:// URL, got '" + endpoint.url + "'");
  }
  const auto slash = endpoint.url.find('/', kScheme.size());
  const std::string origin = endpoint.url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : endpoint.url.substr(slash);

  httplib::Client client(origin);
  const auto ms = endpoint.timeout.count();
  client.set_connection_timeout(std::chrono::milliseconds(ms));
  client.set_read_timeout(std::chrono::milliseconds(ms));
  client.set_write_timeout(std::chrono::milliseconds(ms));
  const auto res = client.Post(path, judge_prompt(instruction, output), "text/plain; charset=utf-8");
  if (!res) {
    throw IoError("judge endpoint " + endpoint.url + ": transport error: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw IoError("judge endpoint " + endpoint.url + ": HTTP status " + std::to_string(res->status));
  }
  return parse_judge_reply(res->body);
}

}  // namespace ospg::eval
