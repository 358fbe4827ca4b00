#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "riskeval/record.hpp"
#include "riskeval/types.hpp"

namespace riskeval {

enum class DatasetKind { multiple_choice, free_form };
enum class ParserMode { rule_based, model_assisted };
enum class JudgeMode { exact_match, model_graded };

struct McOption {
  std::string letter;
  std::string text;
  bool operator==(const McOption&) const = default;
};

struct DatasetItem {
  std::string item_id;
  std::string question_text;
  std::vector<McOption> options;  // >= 2 entries for multiple choice
  std::optional<std::string> gold_answer;
  bool has_image = false;
};

// A fully reproducible evaluation run. Every field is echoed verbatim into
// the run manifest; the evaluated subset is a deterministic function of
// (seed, dataset) and is shared by every penalty in the grid.
struct RunConfig {
  std::string model_id;
  std::string endpoint_url;        // chat-completions base URL
  std::string api_key_env_name;    // env var holding the bearer token
  std::string dataset_path;
  DatasetKind dataset_kind = DatasetKind::free_form;
  std::vector<double> penalty_grid;  // defaulted when omitted
  Strategy strategy = Strategy::base;
  std::optional<std::size_t> subset_size;
  std::uint64_t seed = 0;
  std::size_t max_output_tokens = 1024;
  std::size_t max_in_flight = 1;
  ParserMode parser_mode = ParserMode::rule_based;
  JudgeMode judge_mode = JudgeMode::exact_match;
  std::optional<std::string> judge_model_id;
  std::string output_path;
};

// Grid used when a config omits penalty_grid: spans 0 through 100 with four
// points in the high-penalty regime.
const std::vector<double>& default_penalty_grid();

RunConfig run_config_from_json_text(const std::string& text);  // validates
std::string run_config_to_json_text(const RunConfig& config);

std::vector<DatasetItem> read_dataset(const std::filesystem::path& path,
                                      DatasetKind kind);

// Sorts by item_id, shuffles with SplitMix64(seed), takes the first
// subset_size items. Identity when subset_size is absent or >= size.
std::vector<DatasetItem> select_subset(std::vector<DatasetItem> items,
                                       std::optional<std::size_t> subset_size,
                                       std::uint64_t seed);

// Penalty rendering for prompts: shortest decimal form, no trailing zeros
// (10 not 10.0; 0.1 stays 0.1).
std::string format_penalty(double penalty);

struct ChatPrompt {
  std::string system;
  std::string user;
};

// The solver's system prompt with the penalty substituted. The decision
// threshold tau(lambda) never appears anywhere in solver input.
std::string solver_system_prompt(Strategy strategy, double penalty);

// Full solver payload: the system template plus the question (and lettered
// options for multiple choice) as the user message. Gold answers are never
// included.
ChatPrompt render_solver_prompt(Strategy strategy, double penalty,
                                const DatasetItem& item);

// Extraction prompt for model-assisted parsing.
ChatPrompt parser_prompt(const std::string& raw_response,
                         const std::vector<McOption>& options);

// Grading prompt for the model-graded judge.
ChatPrompt grader_prompt(const DatasetItem& item,
                         const std::string& parsed_answer);

struct ParsedResponse {
  Decision decision = Decision::answer;
  std::optional<std::string> answer_text;  // absent on abstain
  std::optional<double> confidence;
  // Set when the response resisted parsing; the record is kept, flagged.
  std::optional<std::string> diagnostic;
};

// Rule-based extraction: a standalone ABSTAIN token (case-insensitive)
// decides abstention; confidence comes from the last "confidence <number>"
// or "<number>% sure/confident/certain" pattern (percent forms divided by
// 100) or from a mapped verbal phrase; the committed answer is the last
// "Answer:"-style line, else the last non-empty line, with any trailing
// confidence clause stripped.
ParsedResponse parse_response(const std::string& raw,
                              const std::vector<McOption>& options = {});

// Fixed deterministic verbal-confidence table (case-insensitive whole
// phrase): almost certain 0.95; very high / very confident 0.9; high /
// confident 0.8; fairly confident 0.7; moderate / somewhat confident 0.6;
// uncertain / unsure 0.4; low 0.3; very low 0.2; guess / no idea 0.1.
// Unknown phrases map to absent.
std::optional<double> map_verbal_confidence(const std::string& phrase);

// Exact-match grading: case, whitespace, and edge punctuation are
// normalized; a matching gold letter or exactly matching option text counts
// as correct. Items without a gold answer grade ungraded.
Correctness judge_exact_match(const DatasetItem& item,
                              const std::string& parsed_answer);

struct RunSummary {
  std::size_t n_dataset_items = 0;
  std::size_t n_skipped_image = 0;
  std::size_t n_subset_items = 0;
  std::size_t n_pairs = 0;             // subset items x grid penalties
  std::size_t n_already_complete = 0;  // resumed from the output file
  std::size_t n_new = 0;               // solver calls issued this run
  std::size_t n_transport_failed = 0;
  double elapsed_seconds = 0.0;
};

// Runs solve -> parse -> judge for every (item, penalty) pair not already
// present in output_path, appending each record as it completes and writing
// a manifest (config, counts, elapsed) next to the output. Endpoint
// failures are retried with exponential backoff, then recorded as
// transport-failed. Stages share only the declared fields; the solver never
// sees gold answers, thresholds, or judge output.
RunSummary execute_run(const RunConfig& config);

std::string run_manifest_path(const std::string& output_path);

}  // namespace riskeval
