#include "riskeval/pipeline.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <regex>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "riskeval/rng.hpp"

namespace riskeval {

using nlohmann::json;

namespace {

class TransportError : public Error {
 public:
  using Error::Error;
};

const char* to_string(DatasetKind k) {
  return k == DatasetKind::multiple_choice ? "multiple_choice" : "free_form";
}
const char* to_string(ParserMode m) {
  return m == ParserMode::rule_based ? "rule_based" : "model_assisted";
}
const char* to_string(JudgeMode m) {
  return m == JudgeMode::exact_match ? "exact_match" : "model_graded";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "multiple_choice") return DatasetKind::multiple_choice;
  if (s == "free_form") return DatasetKind::free_form;
  throw ParseError(fmt::format("unknown dataset_kind '{}'", s));
}
ParserMode parser_mode_from_string(const std::string& s) {
  if (s == "rule_based") return ParserMode::rule_based;
  if (s == "model_assisted") return ParserMode::model_assisted;
  throw ParseError(fmt::format("unknown parser_mode '{}'", s));
}
JudgeMode judge_mode_from_string(const std::string& s) {
  if (s == "exact_match") return JudgeMode::exact_match;
  if (s == "model_graded") return JudgeMode::model_graded;
  throw ParseError(fmt::format("unknown judge_mode '{}'", s));
}

std::string iso_utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(
      static_cast<unsigned char>(ch)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_edge_punct(char ch) {
  static const std::string punct = ".,;:!?'\"()[]{}<>*`";
  return punct.find(ch) != std::string::npos;
}

// Case, whitespace, and token-edge punctuation are normalized; interior
// punctuation (7.5, doesn't) survives.
std::string normalize_answer_text(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])))
      ++j;
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && is_edge_punct(s[b])) ++b;
    while (e > b && is_edge_punct(s[e - 1])) --e;
    if (e > b) {
      if (!out.empty()) out += ' ';
      for (std::size_t k = b; k < e; ++k)
        out += static_cast<char>(
            std::tolower(static_cast<unsigned char>(s[k])));
    }
    i = j;
  }
  return out;
}

std::string options_block(const std::vector<McOption>& options) {
  std::string text;
  for (const auto& opt : options) {
    text += fmt::format("{}. {}\n", opt.letter, opt.text);
  }
  if (!text.empty()) text.pop_back();
  return text;
}

}  // namespace

const std::vector<double>& default_penalty_grid() {
  static const std::vector<double> grid = {0,  0.1, 0.5, 1,  2,
                                           5,  10,  20,  50, 100};
  return grid;
}

std::string format_penalty(double penalty) {
  return fmt::format("{}", penalty);
}

std::string solver_system_prompt(Strategy strategy, double penalty) {
  if (!(penalty >= 0.0)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
  std::string prompt = fmt::format(
      "You are a careful expert test-taker. Scoring: +1 for a correct "
      "answer, -{} for an incorrect answer, and 0 for 'ABSTAIN'. Provide "
      "your best answer in your own words and state your confidence level "
      "(numeric).",
      format_penalty(penalty));
  if (strategy == Strategy::use_confidence) {
    prompt +=
        " Use your confidence to decide whether to answer or ABSTAIN. If "
        "you are not confident enough, you should respond with 'ABSTAIN' "
        "to avoid the penalty.";
  }
  return prompt;
}

ChatPrompt render_solver_prompt(Strategy strategy, double penalty,
                                const DatasetItem& item) {
  ChatPrompt prompt;
  prompt.system = solver_system_prompt(strategy, penalty);
  prompt.user = item.question_text;
  if (!item.options.empty()) {
    prompt.user += "\n\nOptions:\n" + options_block(item.options);
  }
  return prompt;
}

ChatPrompt parser_prompt(const std::string& raw_response,
                         const std::vector<McOption>& options) {
  ChatPrompt prompt;
  prompt.system =
      "Extract the model's final committed answer, its stated confidence "
      "(verbal or numeric), and its reasoning trace from the given "
      "response. Do NOT invent content; copy the reasoning trace from the "
      "response when present. Return strictly JSON.";
  std::string user;
  if (!options.empty()) {
    user += "OPTIONS:\n" + options_block(options) + "\n\n";
  }
  user += "MODEL RESPONSE:\n" + raw_response + "\n\n";
  user +=
      "TASK: Return strictly JSON with fields: final_answer (string; "
      "'ABSTAIN' if they declined), confidence (number in 0..1 OR null if "
      "not provided), reasoning_trace (string).";
  prompt.user = user;
  return prompt;
}

ChatPrompt grader_prompt(const DatasetItem& item,
                         const std::string& parsed_answer) {
  ChatPrompt prompt;
  prompt.system =
      "You are a strict grader. Decide if the model's final answer matches "
      "the ground truth. Consider both letter choices and textual answers. "
      "Normalize obvious formatting. For multiple-choice, a matching "
      "letter or exactly matching option text counts as correct. For short "
      "answers, accept only if semantically equivalent without requiring "
      "extra assumptions. Return JSON.";
  std::string user = "QUESTION:\n" + item.question_text + "\n\n";
  if (!item.options.empty()) {
    user += "OPTIONS:\n" + options_block(item.options) + "\n\n";
  }
  user += "GOLD ANSWER:\n" + item.gold_answer.value_or("") + "\n\n";
  user += "MODEL FINAL ANSWER:\n" + parsed_answer + "\n\n";
  user +=
      "TASK: Return JSON\n{\n  \"correct\": true | false,\n  "
      "\"normalized_model_answer\": string\n}.";
  prompt.user = user;
  return prompt;
}

std::optional<double> map_verbal_confidence(const std::string& phrase) {
  static const std::vector<std::pair<std::string, double>> table = {
      {"almost certain", 0.95},
      {"very high", 0.9},
      {"very confident", 0.9},
      {"high", 0.8},
      {"confident", 0.8},
      {"fairly confident", 0.7},
      {"moderate", 0.6},
      {"somewhat confident", 0.6},
      {"uncertain", 0.4},
      {"unsure", 0.4},
      {"low", 0.3},
      {"very low", 0.2},
      {"guess", 0.1},
      {"no idea", 0.1},
  };
  const std::string key = normalize_answer_text(phrase);
  if (key.empty()) return std::nullopt;
  for (const auto& [name, value] : table) {
    if (key == name) return value;
  }
  return std::nullopt;
}

namespace {

const std::regex kAbstainRe{R"(\babstain\b)", std::regex::icase};

// "confidence" (or confident/confidently) followed shortly by a number,
// optionally a percent sign. The gap may span filler words ("level is")
// but not clause punctuation, so a verbal grade followed by an unrelated
// number is not misread.
const std::regex kConfNumberRe{
    R"(confiden[a-z]*[^0-9\n%.,;]{0,16}([0-9]+(?:\.[0-9]+)?)\s*(%?))",
    std::regex::icase};

// "90% sure" style without the confidence keyword.
const std::regex kPercentSureRe{
    R"**(([0-9]+(?:\.[0-9]+)?)\s*%\s*(?:sure|confident|confidence|certain|certainty))**",
    std::regex::icase};

// Verbal confidence: the words following the confidence keyword.
const std::regex kConfVerbalRe{
    R"(confiden[a-z]*(?:\s+level)?\s*(?:is)?\s*[:\-]?\s*([a-zA-Z][a-zA-Z ]{0,30}))",
    std::regex::icase};

// "Answer:" style committed-answer marker.
const std::regex kAnswerMarkerRe{
    R"((?:final\s+answer|answer)\b\s*(?:is)?\s*[:\-]?\s*)",
    std::regex::icase};

// Trailing confidence clause to strip off an extracted answer.
const std::regex kTrailingConfRe{
    R"**([.,;(\s]*(?:\bconfiden|\bi\s*(?:am|'m)\s*[0-9]|[0-9]+(?:\.[0-9]+)?\s*%\s*(?:sure|confident|certain)))**",
    std::regex::icase};

std::optional<double> interpret_confidence_number(double value,
                                                  bool has_percent) {
  if (has_percent || value > 1.0) value /= 100.0;
  if (value < 0.0 || value > 1.0) return std::nullopt;
  return value;
}

std::optional<double> extract_confidence(const std::string& raw) {
  // Last numeric pattern wins, scanning both forms by position.
  std::optional<double> best;
  std::ptrdiff_t best_pos = -1;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kConfNumberRe);
       it != std::sregex_iterator(); ++it) {
    const auto value = interpret_confidence_number(
        std::stod((*it)[1].str()), (*it)[2].length() > 0);
    if (value && it->position() >= best_pos) {
      best = value;
      best_pos = it->position();
    }
  }
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kPercentSureRe);
       it != std::sregex_iterator(); ++it) {
    const auto value =
        interpret_confidence_number(std::stod((*it)[1].str()), true);
    if (value && it->position() >= best_pos) {
      best = value;
      best_pos = it->position();
    }
  }
  if (best) return best;

  // Fall back to a mapped verbal phrase after the confidence keyword.
  std::smatch verbal;
  std::string::const_iterator searched = raw.begin();
  std::smatch last;
  while (std::regex_search(searched, raw.end(), verbal, kConfVerbalRe)) {
    last = verbal;
    searched = verbal[0].second;
  }
  if (!last.empty()) {
    std::string phrase = trim(last[1].str());
    // Try the whole phrase, then shrinking word prefixes.
    while (!phrase.empty()) {
      if (auto mapped = map_verbal_confidence(phrase)) return mapped;
      const auto cut = phrase.find_last_of(' ');
      if (cut == std::string::npos) break;
      phrase = trim(phrase.substr(0, cut));
    }
  }
  return std::nullopt;
}

std::string strip_confidence_clause(const std::string& text) {
  std::smatch m;
  if (std::regex_search(text, m, kTrailingConfRe)) {
    return text.substr(0, m.position());
  }
  return text;
}

std::string trim_answer(std::string text) {
  text = trim(text);
  while (!text.empty() && is_edge_punct(text.back())) text.pop_back();
  while (!text.empty() && (text.front() == '"' || text.front() == '\'' ||
                           text.front() == '*' || text.front() == '`'))
    text.erase(text.begin());
  return trim(text);
}

std::string last_nonempty_line(const std::string& raw) {
  std::size_t end = raw.size();
  while (end > 0) {
    std::size_t begin = raw.find_last_of('\n', end - 1);
    const std::size_t start = begin == std::string::npos ? 0 : begin + 1;
    const std::string line = trim(raw.substr(start, end - start));
    if (!line.empty()) return line;
    if (begin == std::string::npos) break;
    end = begin;
  }
  return {};
}

std::string raw_tail(const std::string& raw) {
  constexpr std::size_t kTail = 240;
  const std::string t = trim(raw);
  return t.size() <= kTail ? t : t.substr(t.size() - kTail);
}

}  // namespace

ParsedResponse parse_response(const std::string& raw,
                              const std::vector<McOption>& options) {
  (void)options;  // letters are resolved at the judge stage
  ParsedResponse parsed;
  parsed.confidence = extract_confidence(raw);

  if (std::regex_search(raw, kAbstainRe)) {
    parsed.decision = Decision::abstain;
    return parsed;
  }
  parsed.decision = Decision::answer;

  // Last "Answer:"-style marker wins; otherwise the last non-empty line.
  std::string candidate;
  std::smatch m;
  std::string::const_iterator searched = raw.begin();
  std::ptrdiff_t candidate_pos = -1;
  while (std::regex_search(searched, raw.end(), m, kAnswerMarkerRe)) {
    candidate_pos = m[0].second - raw.begin();
    searched = m[0].second;
  }
  if (candidate_pos >= 0) {
    const std::size_t line_end = raw.find('\n', candidate_pos);
    candidate = raw.substr(candidate_pos,
                           line_end == std::string::npos
                               ? std::string::npos
                               : line_end - candidate_pos);
  } else {
    candidate = last_nonempty_line(raw);
    candidate = strip_confidence_clause(candidate);
    if (trim_answer(candidate).empty()) {
      // No marker and the tail is just a confidence statement; take the
      // whole trimmed tail so nothing is dropped silently.
      parsed.answer_text = raw_tail(raw);
      parsed.diagnostic = "parser: no committed answer found";
      return parsed;
    }
  }
  candidate = trim_answer(strip_confidence_clause(candidate));
  if (candidate.empty()) {
    parsed.answer_text = raw_tail(raw);
    parsed.diagnostic = "parser: no committed answer found";
    return parsed;
  }
  parsed.answer_text = candidate;
  return parsed;
}

Correctness judge_exact_match(const DatasetItem& item,
                              const std::string& parsed_answer) {
  if (!item.gold_answer) return Correctness::ungraded;
  const std::string gold = normalize_answer_text(*item.gold_answer);
  const std::string answer = normalize_answer_text(parsed_answer);
  if (answer.empty()) return Correctness::incorrect;
  if (answer == gold) return Correctness::correct;
  for (const auto& opt : item.options) {
    const std::string letter = normalize_answer_text(opt.letter);
    const std::string text = normalize_answer_text(opt.text);
    const bool is_gold_option = letter == gold || text == gold;
    if (!is_gold_option) continue;
    if (answer == letter || answer == text ||
        answer == letter + " " + text) {
      return Correctness::correct;
    }
  }
  return Correctness::incorrect;
}

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("invalid run config JSON: {}", e.what()));
  }
  RunConfig config;
  try {
    config.model_id = j.at("model_id").get<std::string>();
    config.endpoint_url = j.at("endpoint_url").get<std::string>();
    config.api_key_env_name = j.value("api_key_env_name", std::string{});
    config.dataset_path = j.at("dataset_path").get<std::string>();
    config.dataset_kind =
        dataset_kind_from_string(j.at("dataset_kind").get<std::string>());
    if (j.contains("penalty_grid")) {
      config.penalty_grid = j.at("penalty_grid").get<std::vector<double>>();
    } else {
      config.penalty_grid = default_penalty_grid();
    }
    config.strategy =
        strategy_from_string(j.value("strategy", std::string{"base"}));
    if (j.contains("subset_size"))
      config.subset_size = j.at("subset_size").get<std::size_t>();
    config.seed = j.value("seed", std::uint64_t{0});
    config.max_output_tokens =
        j.value("max_output_tokens", std::size_t{1024});
    config.max_in_flight = j.value("max_in_flight", std::size_t{1});
    config.parser_mode = parser_mode_from_string(
        j.value("parser_mode", std::string{"rule_based"}));
    config.judge_mode = judge_mode_from_string(
        j.value("judge_mode", std::string{"exact_match"}));
    if (j.contains("judge_model_id"))
      config.judge_model_id = j.at("judge_model_id").get<std::string>();
    config.output_path = j.at("output_path").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("bad run config field: {}", e.what()));
  }

  if (config.model_id.empty()) throw ConfigError("model_id must be non-empty");
  if (config.endpoint_url.empty())
    throw ConfigError("endpoint_url must be non-empty");
  if (config.output_path.empty())
    throw ConfigError("output_path must be non-empty");
  if (config.penalty_grid.empty())
    throw ConfigError("penalty_grid must be non-empty");
  for (std::size_t i = 0; i < config.penalty_grid.size(); ++i) {
    if (!(config.penalty_grid[i] >= 0.0))
      throw ConfigError("penalty_grid entries must be >= 0");
    if (i > 0 && !(config.penalty_grid[i] > config.penalty_grid[i - 1]))
      throw ConfigError("penalty_grid must be strictly ascending");
  }
  if (config.max_in_flight == 0)
    throw ConfigError("max_in_flight must be >= 1");
  if (config.max_output_tokens == 0)
    throw ConfigError("max_output_tokens must be >= 1");
  if (config.subset_size && *config.subset_size == 0)
    throw ConfigError("subset_size must be >= 1 when present");
  if (config.judge_mode == JudgeMode::model_graded && !config.judge_model_id)
    throw ConfigError("model_graded judging requires judge_model_id");
  return config;
}

std::string run_config_to_json_text(const RunConfig& config) {
  json j;
  j["model_id"] = config.model_id;
  j["endpoint_url"] = config.endpoint_url;
  j["api_key_env_name"] = config.api_key_env_name;
  j["dataset_path"] = config.dataset_path;
  j["dataset_kind"] = to_string(config.dataset_kind);
  j["penalty_grid"] = config.penalty_grid;
  j["strategy"] = to_string(config.strategy);
  if (config.subset_size) j["subset_size"] = *config.subset_size;
  j["seed"] = config.seed;
  j["max_output_tokens"] = config.max_output_tokens;
  j["max_in_flight"] = config.max_in_flight;
  j["parser_mode"] = to_string(config.parser_mode);
  j["judge_mode"] = to_string(config.judge_mode);
  if (config.judge_model_id) j["judge_model_id"] = *config.judge_model_id;
  j["output_path"] = config.output_path;
  return j.dump(2);
}

std::vector<DatasetItem> read_dataset(const std::filesystem::path& path,
                                      DatasetKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<DatasetItem> items;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(
          fmt::format("{}:{}: invalid JSON: {}", path.string(), line_no,
                      e.what()));
    }
    DatasetItem item;
    try {
      item.item_id = j.at("item_id").get<std::string>();
      item.question_text = j.at("question_text").get<std::string>();
      if (j.contains("options")) {
        for (const auto& o : j.at("options")) {
          McOption opt;
          if (o.is_array() && o.size() == 2) {
            opt.letter = o.at(0).get<std::string>();
            opt.text = o.at(1).get<std::string>();
          } else if (o.is_object()) {
            opt.letter = o.at("letter").get<std::string>();
            opt.text = o.at("text").get<std::string>();
          } else {
            throw ParseError("option must be a [letter, text] pair");
          }
          item.options.push_back(std::move(opt));
        }
      }
      if (j.contains("gold_answer") && !j.at("gold_answer").is_null())
        item.gold_answer = j.at("gold_answer").get<std::string>();
      item.has_image = j.value("has_image", false);
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: bad dataset field: {}",
                                   path.string(), line_no, e.what()));
    }
    if (!seen.insert(item.item_id).second) {
      throw ParseError(fmt::format("{}:{}: duplicate item_id '{}'",
                                   path.string(), line_no, item.item_id));
    }
    if (kind == DatasetKind::multiple_choice && !item.has_image &&
        item.options.size() < 2) {
      throw ParseError(
          fmt::format("{}:{}: multiple-choice item '{}' needs >= 2 options",
                      path.string(), line_no, item.item_id));
    }
    items.push_back(std::move(item));
  }
  if (in.bad()) throw IoError(fmt::format("read error on {}", path.string()));
  return items;
}

std::vector<DatasetItem> select_subset(std::vector<DatasetItem> items,
                                       std::optional<std::size_t> subset_size,
                                       std::uint64_t seed) {
  std::sort(items.begin(), items.end(),
            [](const DatasetItem& a, const DatasetItem& b) {
              return a.item_id < b.item_id;
            });
  // Fisher-Yates with the portable generator so every penalty sees the same
  // subset and any reimplementation can reproduce it.
  SplitMix64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t k = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[k]);
  }
  if (subset_size && *subset_size < items.size()) {
    items.resize(*subset_size);
  }
  return items;
}

std::string run_manifest_path(const std::string& output_path) {
  return output_path + ".manifest.json";
}

namespace {

// Minimal chat-completions client over the configured base URL.
class ChatClient {
 public:
  ChatClient(const std::string& endpoint_url, std::string api_key)
      : api_key_(std::move(api_key)) {
    const auto scheme_end = endpoint_url.find("://");
    std::size_t path_start = std::string::npos;
    if (scheme_end != std::string::npos) {
      path_start = endpoint_url.find('/', scheme_end + 3);
    }
    if (path_start == std::string::npos) {
      base_ = endpoint_url;
      path_ = "/v1/chat/completions";
    } else {
      base_ = endpoint_url.substr(0, path_start);
      path_ = endpoint_url.substr(path_start);
      if (path_.find("chat/completions") == std::string::npos) {
        if (path_.back() == '/') path_.pop_back();
        path_ += "/chat/completions";
      }
    }
  }

  std::string complete(const std::string& model, const ChatPrompt& prompt,
                       std::size_t max_tokens) const {
    json body;
    body["model"] = model;
    body["messages"] = json::array({
        json{{"role", "system"}, {"content", prompt.system}},
        json{{"role", "user"}, {"content", prompt.user}},
    });
    body["max_tokens"] = max_tokens;
    body["temperature"] = 0;
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(kBackoffBase * (1 << (attempt - 1)));
      }
      httplib::Client client(base_);
      client.set_connection_timeout(10, 0);
      client.set_read_timeout(120, 0);
      httplib::Headers headers;
      if (!api_key_.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key_);
      }
      auto res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = fmt::format("connection error ({})",
                                 httplib::to_string(res.error()));
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = fmt::format("HTTP {}", res->status);
        continue;
      }
      if (res->status != 200) {
        throw TransportError(
            fmt::format("HTTP {}: {}", res->status, res->body));
      }
      try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content")
            .get<std::string>();
      } catch (const json::exception& e) {
        throw TransportError(
            fmt::format("malformed completion response: {}", e.what()));
      }
    }
    throw TransportError(fmt::format("{} after {} attempts", last_error,
                                     kMaxAttempts));
  }

 private:
  static constexpr int kMaxAttempts = 3;
  static constexpr std::chrono::milliseconds kBackoffBase{250};
  std::string base_;
  std::string path_;
  std::string api_key_;
};

std::string strip_code_fences(const std::string& text) {
  std::string t = trim(text);
  if (t.rfind("```", 0) == 0) {
    const auto first_newline = t.find('\n');
    const auto last_fence = t.rfind("```");
    if (first_newline != std::string::npos && last_fence > first_newline) {
      t = trim(t.substr(first_newline + 1, last_fence - first_newline - 1));
    }
  }
  return t;
}

ParsedResponse model_assisted_parse(const ChatClient& client,
                                    const std::string& parser_model,
                                    std::size_t max_tokens,
                                    const std::string& raw,
                                    const std::vector<McOption>& options) {
  std::string note;
  try {
    const std::string content = client.complete(
        parser_model, parser_prompt(raw, options), max_tokens);
    const json j = json::parse(strip_code_fences(content));
    ParsedResponse parsed;
    const std::string final_answer =
        j.at("final_answer").get<std::string>();
    if (normalize_answer_text(final_answer) == "abstain") {
      parsed.decision = Decision::abstain;
    } else {
      parsed.decision = Decision::answer;
      parsed.answer_text = final_answer;
    }
    if (j.contains("confidence") && j.at("confidence").is_number()) {
      const double c = j.at("confidence").get<double>();
      if (c >= 0.0 && c <= 1.0) {
        parsed.confidence = c;
      } else {
        parsed.diagnostic = "parser: model-assisted confidence out of range";
      }
    }
    return parsed;
  } catch (const TransportError& e) {
    note = fmt::format("parser: model-assisted call failed ({}); "
                       "fell back to rule-based",
                       e.what());
  } catch (const json::exception& e) {
    note = fmt::format("parser: model-assisted output malformed ({}); "
                       "fell back to rule-based",
                       e.what());
  }
  ParsedResponse parsed = parse_response(raw, options);
  parsed.diagnostic = parsed.diagnostic
                          ? *parsed.diagnostic + "; " + note
                          : note;
  return parsed;
}

struct JudgeVerdict {
  Correctness correctness = Correctness::ungraded;
  std::optional<std::string> note;
  bool grade_usable = false;
};

JudgeVerdict model_graded_judge(const ChatClient& client,
                                const std::string& judge_model,
                                std::size_t max_tokens,
                                const DatasetItem& item,
                                const std::string& answer) {
  JudgeVerdict verdict;
  std::string last_error;
  // One retry on malformed grader output.
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      const std::string content = client.complete(
          judge_model, grader_prompt(item, answer), max_tokens);
      const json j = json::parse(strip_code_fences(content));
      verdict.correctness = j.at("correct").get<bool>()
                                ? Correctness::correct
                                : Correctness::incorrect;
      verdict.grade_usable = true;
      return verdict;
    } catch (const TransportError& e) {
      last_error = e.what();
    } catch (const json::exception& e) {
      last_error = e.what();
    }
  }
  verdict.note = fmt::format("judge_failed: {}", last_error);
  return verdict;
}

}  // namespace

RunSummary execute_run(const RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started_at = iso_utc_now();

  if (config.max_in_flight == 0)
    throw ConfigError("max_in_flight must be >= 1");
  if (config.penalty_grid.empty())
    throw ConfigError("penalty_grid must be non-empty");

  std::string api_key;
  if (!config.api_key_env_name.empty()) {
    const char* value = std::getenv(config.api_key_env_name.c_str());
    if (!value || !*value) {
      throw ConfigError(fmt::format("environment variable {} is not set",
                                    config.api_key_env_name));
    }
    api_key = value;
  }

  RunSummary summary;
  std::vector<DatasetItem> items =
      read_dataset(config.dataset_path, config.dataset_kind);
  summary.n_dataset_items = items.size();
  std::erase_if(items, [&](const DatasetItem& item) {
    if (item.has_image) {
      ++summary.n_skipped_image;
      return true;
    }
    return false;
  });
  items = select_subset(std::move(items), config.subset_size, config.seed);
  summary.n_subset_items = items.size();
  summary.n_pairs = items.size() * config.penalty_grid.size();

  const std::string dataset_id =
      std::filesystem::path(config.dataset_path).stem().string();

  // Resume: whatever is already on disk for this (model, strategy) is done.
  // Transport failures do not count as completed; a later run retries them
  // and the re-emitted record wins on read (last-occurrence semantics).
  std::unordered_set<std::string> completed;
  if (std::filesystem::exists(config.output_path)) {
    const ReadResult existing = read_records(config.output_path);
    for (const auto& rec : existing.records) {
      if (rec.model_id == config.model_id &&
          rec.strategy == config.strategy && !is_transport_failed(rec)) {
        completed.insert(fmt::format("{}\x1f{}", rec.item_id, rec.penalty));
      }
    }
  }

  struct Task {
    const DatasetItem* item;
    double penalty;
  };
  std::vector<Task> tasks;
  for (double penalty : config.penalty_grid) {
    for (const auto& item : items) {
      if (!completed.contains(
              fmt::format("{}\x1f{}", item.item_id, penalty))) {
        tasks.push_back({&item, penalty});
      }
    }
  }
  summary.n_already_complete = summary.n_pairs - tasks.size();

  const ChatClient client(config.endpoint_url, api_key);
  RecordWriter writer(config.output_path, WriteMode::append);
  std::mutex writer_mutex;
  std::atomic<std::size_t> next_task{0};
  std::atomic<std::size_t> transport_failed{0};

  auto process = [&](const Task& task) {
    const ChatPrompt prompt = render_solver_prompt(
        config.strategy, task.penalty, *task.item);

    ItemRecord rec;
    rec.item_id = task.item->item_id;
    rec.dataset_id = dataset_id;
    rec.model_id = config.model_id;
    rec.strategy = config.strategy;
    rec.penalty = task.penalty;

    std::string raw;
    try {
      raw = client.complete(config.model_id, prompt,
                            config.max_output_tokens);
    } catch (const TransportError& e) {
      rec.decision = Decision::abstain;
      rec.correctness = Correctness::ungraded;
      rec.gold_available = task.item->gold_answer.has_value();
      rec.judge_note =
          fmt::format("{}: {}", kTransportFailedMarker, e.what());
      ++transport_failed;
      std::scoped_lock lock(writer_mutex);
      writer.append(rec);
      return;
    }

    ParsedResponse parsed;
    if (config.parser_mode == ParserMode::model_assisted) {
      parsed = model_assisted_parse(
          client, config.judge_model_id.value_or(config.model_id),
          config.max_output_tokens, raw, task.item->options);
    } else {
      parsed = parse_response(raw, task.item->options);
    }

    rec.decision = parsed.decision;
    rec.confidence = parsed.confidence;
    rec.raw_response = raw;
    std::optional<std::string> note = parsed.diagnostic;

    if (parsed.decision == Decision::abstain) {
      rec.correctness = Correctness::ungraded;
      rec.gold_available = task.item->gold_answer.has_value();
    } else {
      rec.answer_text = parsed.answer_text.value_or("");
      if (!task.item->gold_answer) {
        rec.correctness = Correctness::ungraded;
        rec.gold_available = false;
      } else if (config.judge_mode == JudgeMode::exact_match) {
        rec.correctness = judge_exact_match(*task.item, *rec.answer_text);
        rec.gold_available = true;
      } else {
        const JudgeVerdict verdict = model_graded_judge(
            client, *config.judge_model_id, config.max_output_tokens,
            *task.item, *rec.answer_text);
        rec.correctness = verdict.correctness;
        // A failed grade leaves the record usable for abstention statistics
        // but not gradable, which gold_available records.
        rec.gold_available = verdict.grade_usable;
        if (verdict.note) {
          note = note ? *note + "; " + *verdict.note : *verdict.note;
        }
      }
    }
    rec.judge_note = note;

    std::scoped_lock lock(writer_mutex);
    writer.append(rec);
  };

  const std::size_t n_workers =
      std::min<std::size_t>(config.max_in_flight, tasks.size());
  if (n_workers <= 1) {
    for (const Task& task : tasks) process(task);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next_task.fetch_add(1); i < tasks.size();
             i = next_task.fetch_add(1)) {
          process(tasks[i]);
        }
      });
    }
    for (auto& worker : workers) worker.join();
  }

  summary.n_new = tasks.size();
  summary.n_transport_failed = transport_failed.load();
  summary.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  json manifest;
  manifest["config"] = json::parse(run_config_to_json_text(config));
  manifest["dataset_id"] = dataset_id;
  manifest["counts"] = {
      {"dataset_items", summary.n_dataset_items},
      {"skipped_image", summary.n_skipped_image},
      {"subset_items", summary.n_subset_items},
      {"pairs", summary.n_pairs},
      {"already_complete", summary.n_already_complete},
      {"new", summary.n_new},
      {"transport_failed", summary.n_transport_failed},
  };
  manifest["rng"] = "splitmix64";
  manifest["elapsed_seconds"] = summary.elapsed_seconds;
  manifest["started_at"] = started_at;
  manifest["finished_at"] = iso_utc_now();
  std::ofstream mf(run_manifest_path(config.output_path));
  if (!mf) {
    throw IoError(fmt::format("cannot write manifest next to {}",
                              config.output_path));
  }
  mf << manifest.dump(2) << '\n';
  return summary;
}

}  // namespace riskeval
