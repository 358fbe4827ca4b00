#include <doctest.h>

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "riskeval/decision.hpp"
#include "riskeval/metrics.hpp"
#include "riskeval/pipeline.hpp"
#include "support/mock_endpoint.hpp"

using namespace riskeval;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path test_dir() { return fs::path(RISKEVAL_TEST_DIR); }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "riskeval_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Four multiple-choice items; the scripted mock reply rides inside the
// question text.
fs::path write_mc_dataset(const fs::path& dir) {
  const fs::path path = dir / "quiz.jsonl";
  std::ofstream out(path);
  auto item = [&](const std::string& id, const std::string& reply,
                  const std::string& gold) {
    json j;
    j["item_id"] = id;
    j["question_text"] =
        fmt::format("Question {} [[mock:{}]]", id, reply);
    j["options"] = json::array({json::array({"A", "first choice"}),
                                json::array({"B", "second choice"})});
    j["gold_answer"] = gold;
    out << j.dump() << '\n';
  };
  item("q1", "Answer: B. Confidence: 0.9", "B");
  item("q2", "Answer: A. Confidence: 0.8", "B");
  item("q3", "I must ABSTAIN here. Confidence: 0.3", "A");
  item("q4", "Answer: second choice. Confidence: 0.6", "B");
  return path;
}

RunConfig base_config(const std::string& endpoint, const fs::path& dataset,
                      const fs::path& out) {
  RunConfig config;
  config.model_id = "mock-model";
  config.endpoint_url = endpoint;
  config.dataset_path = dataset.string();
  config.dataset_kind = DatasetKind::multiple_choice;
  config.penalty_grid = {0.1, 10.0};
  config.strategy = Strategy::base;
  config.seed = 42;
  config.max_output_tokens = 256;
  config.max_in_flight = 1;
  config.output_path = (out / "records.jsonl").string();
  return config;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("penalty formatting drops trailing zeros") {
  CHECK(format_penalty(10.0) == "10");
  CHECK(format_penalty(0.1) == "0.1");
  CHECK(format_penalty(100.0) == "100");
  CHECK(format_penalty(0.5) == "0.5");
  CHECK(format_penalty(2.0) == "2");
  CHECK(format_penalty(0.0) == "0");
}

TEST_CASE("solver prompts byte-match the golden templates") {
  for (const double penalty : {0.1, 1.0, 10.0, 100.0}) {
    const std::string suffix = format_penalty(penalty) + ".txt";
    CHECK(solver_system_prompt(Strategy::base, penalty) ==
          slurp(test_dir() / "golden" / ("solver_base_" + suffix)));
    CHECK(solver_system_prompt(Strategy::use_confidence, penalty) ==
          slurp(test_dir() / "golden" /
                ("solver_use_confidence_" + suffix)));
  }
}

TEST_CASE("solver payloads never leak gold answers or thresholds") {
  DatasetItem item;
  item.item_id = "q";
  item.question_text = "Pick the right option.";
  item.options = {{"A", "first"}, {"B", "second"}};
  item.gold_answer = "XGOLDX";
  for (const double penalty : {0.1, 1.0, 10.0, 100.0}) {
    for (const Strategy strategy :
         {Strategy::base, Strategy::use_confidence}) {
      const ChatPrompt prompt =
          render_solver_prompt(strategy, penalty, item);
      const std::string payload = prompt.system + "\n" + prompt.user;
      CHECK(payload.find("XGOLDX") == std::string::npos);
      const double tau = optimal_threshold(penalty);
      if (tau > 0.0) {
        CHECK(payload.find(fmt::format("{:.4f}", tau)) == std::string::npos);
        CHECK(payload.find(fmt::format("{}", tau)) == std::string::npos);
      }
    }
  }
}

TEST_CASE("rule-based parsing of the canonical forms") {
  ParsedResponse p = parse_response("I ABSTAIN.");
  CHECK(p.decision == Decision::abstain);
  CHECK_FALSE(p.answer_text.has_value());
  CHECK_FALSE(p.confidence.has_value());

  p = parse_response("Answer: 42. Confidence: 0.8");
  CHECK(p.decision == Decision::answer);
  CHECK(*p.answer_text == "42");
  CHECK(*p.confidence == doctest::Approx(0.8));

  p = parse_response("Final answer B, I am 90% sure");
  CHECK(p.decision == Decision::answer);
  CHECK(*p.answer_text == "B");
  CHECK(*p.confidence == doctest::Approx(0.9));
}

TEST_CASE("rule-based parsing covers spread-out formats") {
  ParsedResponse p = parse_response(
      "Let me think about this.\nThe key fact is X.\nAnswer: Paris\n"
      "My confidence level is 75%");
  CHECK(*p.answer_text == "Paris");
  CHECK(*p.confidence == doctest::Approx(0.75));

  p = parse_response("The capital is Paris.");
  CHECK(p.decision == Decision::answer);
  CHECK(*p.answer_text == "The capital is Paris");
  CHECK_FALSE(p.confidence.has_value());

  p = parse_response("Confidence: high. Answer: B");
  CHECK(*p.answer_text == "B");
  CHECK(*p.confidence == doctest::Approx(0.8));

  // Last numeric confidence wins.
  p = parse_response("confidence 0.2 at first... final Answer: A, "
                     "confidence 0.7");
  CHECK(*p.answer_text == "A");
  CHECK(*p.confidence == doctest::Approx(0.7));

  // ABSTAIN with a stated confidence keeps the confidence.
  p = parse_response("Too risky, I ABSTAIN. Confidence: 0.4");
  CHECK(p.decision == Decision::abstain);
  CHECK(*p.confidence == doctest::Approx(0.4));
}

TEST_CASE("unparseable responses are flagged, not dropped") {
  const ParsedResponse p = parse_response("Confidence: 0.9");
  CHECK(p.decision == Decision::answer);
  REQUIRE(p.diagnostic.has_value());
  CHECK(p.answer_text.has_value());
}

TEST_CASE("verbal confidence table") {
  CHECK(*map_verbal_confidence("almost certain") == doctest::Approx(0.95));
  CHECK(*map_verbal_confidence("very high") == doctest::Approx(0.9));
  CHECK(*map_verbal_confidence("very confident") == doctest::Approx(0.9));
  CHECK(*map_verbal_confidence("High") == doctest::Approx(0.8));
  CHECK(*map_verbal_confidence("confident") == doctest::Approx(0.8));
  CHECK(*map_verbal_confidence("fairly confident") == doctest::Approx(0.7));
  CHECK(*map_verbal_confidence("moderate") == doctest::Approx(0.6));
  CHECK(*map_verbal_confidence("somewhat confident") == doctest::Approx(0.6));
  CHECK(*map_verbal_confidence("uncertain") == doctest::Approx(0.4));
  CHECK(*map_verbal_confidence("unsure") == doctest::Approx(0.4));
  CHECK(*map_verbal_confidence("low") == doctest::Approx(0.3));
  CHECK(*map_verbal_confidence("VERY LOW") == doctest::Approx(0.2));
  CHECK(*map_verbal_confidence("guess") == doctest::Approx(0.1));
  CHECK(*map_verbal_confidence("no idea") == doctest::Approx(0.1));
  CHECK_FALSE(map_verbal_confidence("banana").has_value());
}

TEST_CASE("exact-match judging") {
  DatasetItem item;
  item.item_id = "q";
  item.question_text = "pick";
  item.options = {{"A", "3.2 eV"}, {"B", "7.5 eV"}};
  item.gold_answer = "B";
  CHECK(judge_exact_match(item, "b.") == Correctness::correct);
  CHECK(judge_exact_match(item, "7.5 eV") == Correctness::correct);
  CHECK(judge_exact_match(item, "B. 7.5 eV") == Correctness::correct);
  CHECK(judge_exact_match(item, "A") == Correctness::incorrect);
  CHECK(judge_exact_match(item, "3.2 eV") == Correctness::incorrect);

  item.gold_answer.reset();
  CHECK(judge_exact_match(item, "B") == Correctness::ungraded);

  DatasetItem free;
  free.item_id = "f";
  free.question_text = "sum";
  free.gold_answer = "42";
  CHECK(judge_exact_match(free, " 42. ") == Correctness::correct);
  CHECK(judge_exact_match(free, "41") == Correctness::incorrect);
}

TEST_CASE("dataset reading validates structure") {
  const fs::path dir = fresh_dir("dataset");
  const fs::path path = write_mc_dataset(dir);
  const auto items = read_dataset(path, DatasetKind::multiple_choice);
  REQUIRE(items.size() == 4);
  CHECK(items[0].options.size() == 2);
  CHECK(items[0].gold_answer == "B");

  {
    std::ofstream out(path, std::ios::app);
    out << R"({"item_id":"q1","question_text":"dup"})" << '\n';
  }
  CHECK_THROWS_WITH_AS(read_dataset(path, DatasetKind::free_form),
                       doctest::Contains("duplicate item_id"), ParseError);

  const fs::path bad = dir / "bad.jsonl";
  {
    std::ofstream out(bad);
    out << R"({"item_id":"x","question_text":"no options"})" << '\n';
  }
  CHECK_THROWS_AS(read_dataset(bad, DatasetKind::multiple_choice),
                  ParseError);
  CHECK_NOTHROW(read_dataset(bad, DatasetKind::free_form));
}

TEST_CASE("subset selection is a pure function of seed and ids") {
  std::vector<DatasetItem> items;
  for (int i = 0; i < 20; ++i) {
    DatasetItem item;
    item.item_id = fmt::format("id-{:02d}", i);
    item.question_text = "q";
    items.push_back(item);
  }
  const auto a = select_subset(items, 8, 99);
  const auto b = select_subset(items, 8, 99);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].item_id == b[i].item_id);
  }
  const auto c = select_subset(items, 8, 100);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].item_id != c[i].item_id) differs = true;
  }
  CHECK(differs);
  CHECK(select_subset(items, std::nullopt, 1).size() == items.size());
}

TEST_CASE("run config defaults and validation") {
  const std::string minimal = R"({
    "model_id": "m", "endpoint_url": "http://localhost:1",
    "dataset_path": "d.jsonl", "dataset_kind": "free_form",
    "output_path": "out.jsonl"
  })";
  const RunConfig config = run_config_from_json_text(minimal);
  CHECK(config.penalty_grid == default_penalty_grid());
  CHECK(config.penalty_grid.front() == 0.0);
  CHECK(config.penalty_grid.back() == 100.0);
  CHECK(config.strategy == Strategy::base);
  CHECK(config.max_in_flight == 1);
  CHECK(config.parser_mode == ParserMode::rule_based);
  CHECK(config.judge_mode == JudgeMode::exact_match);

  CHECK_THROWS_AS(run_config_from_json_text("{}"), ParseError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({
    "model_id": "m", "endpoint_url": "e", "dataset_path": "d",
    "dataset_kind": "free_form", "output_path": "o",
    "penalty_grid": [5, 1]
  })"),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({
    "model_id": "m", "endpoint_url": "e", "dataset_path": "d",
    "dataset_kind": "free_form", "output_path": "o",
    "judge_mode": "model_graded"
  })"),
                  ConfigError);

  // The manifest embeds the config verbatim.
  const RunConfig round =
      run_config_from_json_text(run_config_to_json_text(config));
  CHECK(round.model_id == config.model_id);
  CHECK(round.penalty_grid == config.penalty_grid);
  CHECK(round.seed == config.seed);
}

TEST_CASE("execute_run grades and persists every pair") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_basic");
  const fs::path dataset = write_mc_dataset(dir);
  const RunConfig config = base_config(endpoint.url(), dataset, dir);

  const RunSummary summary = execute_run(config);
  CHECK(summary.n_pairs == 8);
  CHECK(summary.n_new == 8);
  CHECK(summary.n_already_complete == 0);
  CHECK(summary.n_transport_failed == 0);
  CHECK(endpoint.solver_calls() == 8);

  const ReadResult result = read_records(config.output_path);
  REQUIRE(result.records.size() == 8);
  std::size_t correct = 0, abstained = 0;
  for (const auto& rec : result.records) {
    CHECK(rec.model_id == "mock-model");
    CHECK(rec.dataset_id == "quiz");
    if (rec.correctness == Correctness::correct) ++correct;
    if (rec.decision == Decision::abstain) ++abstained;
  }
  // q1 (letter match) and q4 (option-text match) are correct at both
  // penalties; q3 abstains at both.
  CHECK(correct == 4);
  CHECK(abstained == 2);

  const json manifest =
      json::parse(slurp(run_manifest_path(config.output_path)));
  CHECK(manifest.at("counts").at("pairs") == 8);
  CHECK(manifest.at("counts").at("new") == 8);
  CHECK(manifest.at("config").at("model_id") == "mock-model");
}

TEST_CASE("resume issues exactly the missing solver calls") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_resume");
  const fs::path dataset = write_mc_dataset(dir);
  RunConfig config = base_config(endpoint.url(), dataset, dir);

  execute_run(config);
  const std::string full = slurp(config.output_path);
  REQUIRE(endpoint.solver_calls() == 8);

  // Interrupting after k line-atomic appends leaves the first k lines.
  std::vector<std::string> lines;
  std::istringstream stream(full);
  for (std::string line; std::getline(stream, line);) lines.push_back(line);
  REQUIRE(lines.size() == 8);
  const fs::path resumed = dir / "resumed.jsonl";
  {
    std::ofstream out(resumed);
    for (std::size_t i = 0; i < 5; ++i) out << lines[i] << '\n';
  }
  config.output_path = resumed.string();
  const RunSummary summary = execute_run(config);
  CHECK(summary.n_already_complete == 5);
  CHECK(summary.n_new == 3);
  CHECK(endpoint.solver_calls() == 11);
  CHECK(slurp(resumed) == full);

  // A completed run resumes to zero new calls and leaves the file alone.
  const RunSummary idle = execute_run(config);
  CHECK(idle.n_new == 0);
  CHECK(endpoint.solver_calls() == 11);
  CHECK(slurp(resumed) == full);
}

TEST_CASE("record sets are independent of completion order") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_parallel");
  const fs::path dataset = write_mc_dataset(dir);

  RunConfig serial = base_config(endpoint.url(), dataset, dir);
  serial.output_path = (dir / "serial.jsonl").string();
  execute_run(serial);

  RunConfig parallel = base_config(endpoint.url(), dataset, dir);
  parallel.max_in_flight = 4;
  parallel.output_path = (dir / "parallel.jsonl").string();
  execute_run(parallel);

  auto keyed = [](const std::vector<ItemRecord>& recs) {
    std::map<std::string, ItemRecord> m;
    for (const auto& r : recs) m[record_key(r)] = r;
    return m;
  };
  const auto a = keyed(read_records(serial.output_path).records);
  const auto b = keyed(read_records(parallel.output_path).records);
  CHECK(a == b);
}

TEST_CASE("solver payloads stay isolated from gold and judge data") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_isolation");
  const fs::path dataset = write_mc_dataset(dir);
  const RunConfig config = base_config(endpoint.url(), dataset, dir);
  execute_run(config);

  for (const std::string& payload : endpoint.solver_payloads()) {
    const json body = json::parse(payload);
    const std::string system =
        body.at("messages").at(0).at("content").get<std::string>();
    CHECK(system.rfind("You are a careful expert test-taker", 0) == 0);
    // Gold letters appear only as enumerated options, never as an answer
    // key; scan for the judge-side vocabulary and threshold digits.
    CHECK(payload.find("GOLD ANSWER") == std::string::npos);
    CHECK(payload.find("gold_answer") == std::string::npos);
    CHECK(payload.find("correct\":") == std::string::npos);
    for (const double penalty : config.penalty_grid) {
      const double tau = optimal_threshold(penalty);
      if (tau > 0.0) {
        CHECK(payload.find(fmt::format("{:.4f}", tau)) == std::string::npos);
      }
    }
  }
}

TEST_CASE("endpoint failures become transport-failed records") {
  mock::Endpoint endpoint;
  endpoint.fail_solver_with_500(true);
  const fs::path dir = fresh_dir("run_fail");
  const fs::path dataset = write_mc_dataset(dir);
  RunConfig config = base_config(endpoint.url(), dataset, dir);
  config.penalty_grid = {1.0};

  const RunSummary summary = execute_run(config);
  CHECK(summary.n_transport_failed == 4);
  const ReadResult result = read_records(config.output_path);
  REQUIRE(result.records.size() == 4);
  for (const auto& rec : result.records) {
    CHECK(is_transport_failed(rec));
  }
  // Excluded from every metric population.
  CHECK(summarize(result.records).at(0).n_total == 0);

  // Failed pairs do not count as completed: once the endpoint recovers, a
  // rerun retries all of them and the fresh records win on read.
  endpoint.fail_solver_with_500(false);
  const RunSummary retry = execute_run(config);
  CHECK(retry.n_already_complete == 0);
  CHECK(retry.n_new == 4);
  CHECK(retry.n_transport_failed == 0);
  const ReadResult merged = read_records(config.output_path);
  CHECK(merged.warnings.size() == 4);  // one duplicate-key note per retry
  REQUIRE(merged.records.size() == 4);
  for (const auto& rec : merged.records) {
    CHECK_FALSE(is_transport_failed(rec));
  }
  CHECK(summarize(merged.records).at(0).n_total == 4);
}

TEST_CASE("image items are skipped and counted") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_image");
  const fs::path dataset = dir / "mixed.jsonl";
  {
    std::ofstream out(dataset);
    out << R"({"item_id":"t1","question_text":"text [[mock:Answer: 42. Confidence: 0.9]]","gold_answer":"42"})"
        << '\n';
    out << R"({"item_id":"v1","question_text":"image","has_image":true,"gold_answer":"x"})"
        << '\n';
  }
  RunConfig config = base_config(endpoint.url(), dataset, dir);
  config.dataset_kind = DatasetKind::free_form;
  config.penalty_grid = {1.0};
  const RunSummary summary = execute_run(config);
  CHECK(summary.n_dataset_items == 2);
  CHECK(summary.n_skipped_image == 1);
  CHECK(summary.n_subset_items == 1);
  CHECK(read_records(config.output_path).records.size() == 1);
  const json manifest =
      json::parse(slurp(run_manifest_path(config.output_path)));
  CHECK(manifest.at("counts").at("skipped_image") == 1);
}

TEST_CASE("model-assisted parsing and model-graded judging") {
  mock::Endpoint endpoint;
  endpoint.set_solver_responder([](const std::string& user) {
    return mock::Endpoint::scripted_reply(user, "unused");
  });
  // Keys come from the MODEL RESPONSE block, which carries the raw solver
  // reply verbatim.
  endpoint.set_parser_responder([](const std::string& user) -> std::string {
    if (user.find("Berlin maybe?") != std::string::npos) {
      return R"({"final_answer": "Berlin", "confidence": 0.55, "reasoning_trace": "t"})";
    }
    if (user.find("I pass.") != std::string::npos) {
      return R"({"final_answer": "ABSTAIN", "confidence": 0.2, "reasoning_trace": "t"})";
    }
    return R"({"final_answer": "Paris", "confidence": 0.95, "reasoning_trace": "t"})";
  });
  endpoint.set_judge_responder([](const std::string& user) -> std::string {
    const bool right = user.find("MODEL FINAL ANSWER:\nParis") !=
                       std::string::npos;
    return fmt::format(
        R"({{"correct": {}, "normalized_model_answer": "x"}})", right);
  });

  const fs::path dir = fresh_dir("run_model_stages");
  const fs::path dataset = dir / "free.jsonl";
  {
    std::ofstream out(dataset);
    out << R"({"item_id":"a1","question_text":"capital? [[mock:The capital is Paris, I think.]]","gold_answer":"Paris"})"
        << '\n';
    out << R"({"item_id":"a2","question_text":"capital? [[mock:Berlin maybe?]]","gold_answer":"Paris"})"
        << '\n';
    out << R"({"item_id":"a3","question_text":"capital? [[mock:I pass.]]","gold_answer":"Paris"})"
        << '\n';
  }
  RunConfig config = base_config(endpoint.url(), dataset, dir);
  config.dataset_kind = DatasetKind::free_form;
  config.penalty_grid = {2.0};
  config.parser_mode = ParserMode::model_assisted;
  config.judge_mode = JudgeMode::model_graded;
  config.judge_model_id = "mock-judge";

  execute_run(config);
  const auto records = read_records(config.output_path).records;
  REQUIRE(records.size() == 3);
  std::map<std::string, ItemRecord> by_id;
  for (const auto& r : records) by_id[r.item_id] = r;

  CHECK(by_id["a1"].decision == Decision::answer);
  CHECK(by_id["a1"].correctness == Correctness::correct);
  CHECK(*by_id["a1"].confidence == doctest::Approx(0.95));
  CHECK(by_id["a2"].correctness == Correctness::incorrect);
  CHECK(by_id["a3"].decision == Decision::abstain);
  CHECK(*by_id["a3"].confidence == doctest::Approx(0.2));
  // Abstentions never reach the judge: only the two answers did.
  CHECK(endpoint.judge_calls() == 2);
  CHECK(endpoint.parser_calls() == 3);
}

TEST_CASE("malformed helper-model output degrades gracefully") {
  mock::Endpoint endpoint;
  endpoint.set_parser_responder(
      [](const std::string&) -> std::string { return "not json at all"; });
  endpoint.set_judge_responder(
      [](const std::string&) -> std::string { return "{broken"; });

  const fs::path dir = fresh_dir("run_fallbacks");
  const fs::path dataset = dir / "free.jsonl";
  {
    std::ofstream out(dataset);
    out << R"({"item_id":"b1","question_text":"sum? [[mock:Answer: 42. Confidence: 0.8]]","gold_answer":"42"})"
        << '\n';
  }
  RunConfig config = base_config(endpoint.url(), dataset, dir);
  config.dataset_kind = DatasetKind::free_form;
  config.penalty_grid = {1.0};
  config.parser_mode = ParserMode::model_assisted;
  config.judge_mode = JudgeMode::model_graded;
  config.judge_model_id = "mock-judge";

  execute_run(config);
  const auto records = read_records(config.output_path).records;
  REQUIRE(records.size() == 1);
  const ItemRecord& rec = records[0];
  // Parser output was garbage, so the rule-based path extracted the answer.
  CHECK(rec.decision == Decision::answer);
  CHECK(*rec.answer_text == "42");
  CHECK(*rec.confidence == doctest::Approx(0.8));
  // Grader stayed malformed through its retry: ungraded, flagged, and the
  // record no longer claims a usable gold grade.
  CHECK(rec.correctness == Correctness::ungraded);
  CHECK_FALSE(rec.gold_available);
  REQUIRE(rec.judge_note.has_value());
  CHECK(rec.judge_note->find("fell back to rule-based") !=
        std::string::npos);
  CHECK(rec.judge_note->find("judge_failed") != std::string::npos);
  CHECK(endpoint.judge_calls() == 2);  // one retry
}

TEST_CASE("missing api key env var aborts before any request") {
  mock::Endpoint endpoint;
  const fs::path dir = fresh_dir("run_nokey");
  const fs::path dataset = write_mc_dataset(dir);
  RunConfig config = base_config(endpoint.url(), dataset, dir);
  config.api_key_env_name = "RISKEVAL_TEST_KEY_THAT_DOES_NOT_EXIST";
  CHECK_THROWS_AS(execute_run(config), ConfigError);
  CHECK(endpoint.solver_calls() == 0);
  CHECK_FALSE(fs::exists(config.output_path));
}

}  // TEST_SUITE
