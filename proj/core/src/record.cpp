#include "riskeval/record.hpp"

#include <fmt/format.h>

#include <fstream>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

namespace riskeval {

using nlohmann::json;

const char* to_string(Strategy s) {
  return s == Strategy::base ? "base" : "use_confidence";
}

const char* to_string(Decision d) {
  return d == Decision::answer ? "answer" : "abstain";
}

const char* to_string(Correctness c) {
  switch (c) {
    case Correctness::correct:
      return "correct";
    case Correctness::incorrect:
      return "incorrect";
    default:
      return "ungraded";
  }
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "base") return Strategy::base;
  if (s == "use_confidence") return Strategy::use_confidence;
  throw ParseError(fmt::format("unknown strategy '{}'", s));
}

Decision decision_from_string(const std::string& s) {
  if (s == "answer") return Decision::answer;
  if (s == "abstain") return Decision::abstain;
  throw ParseError(fmt::format("unknown decision '{}'", s));
}

Correctness correctness_from_string(const std::string& s) {
  if (s == "correct") return Correctness::correct;
  if (s == "incorrect") return Correctness::incorrect;
  if (s == "ungraded") return Correctness::ungraded;
  throw ParseError(fmt::format("unknown correctness '{}'", s));
}

PenaltyContext make_penalty_context(double penalty) {
  if (!(penalty >= 0.0)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
  return PenaltyContext{penalty, penalty / (1.0 + penalty)};
}

std::string record_key(const ItemRecord& rec) {
  return fmt::format("{}\x1f{}\x1f{}\x1f{}", rec.item_id, rec.model_id,
                     to_string(rec.strategy), rec.penalty);
}

const ItemRecord& validate_record(const ItemRecord& rec) {
  if (!(rec.penalty >= 0.0)) {
    throw ValidationError(
        fmt::format("penalty must be >= 0, got {} (item {})", rec.penalty,
                    rec.item_id));
  }
  if (rec.confidence && !(*rec.confidence >= 0.0 && *rec.confidence <= 1.0)) {
    throw ValidationError(fmt::format("confidence out of [0,1]: {} (item {})",
                                      *rec.confidence, rec.item_id));
  }
  if (rec.decision == Decision::abstain) {
    if (rec.correctness != Correctness::ungraded) {
      throw ValidationError(
          fmt::format("abstain must be ungraded (item {})", rec.item_id));
    }
    if (rec.answer_text) {
      throw ValidationError(fmt::format(
          "abstain must not carry answer_text (item {})", rec.item_id));
    }
  } else if (rec.gold_available && rec.correctness == Correctness::ungraded) {
    throw ValidationError(fmt::format(
        "answered record with gold available must be graded (item {})",
        rec.item_id));
  }
  return rec;
}

bool is_transport_failed(const ItemRecord& rec) {
  return rec.judge_note &&
         rec.judge_note->rfind(kTransportFailedMarker, 0) == 0;
}

std::string to_jsonl_line(const ItemRecord& rec) {
  json j;
  j["item_id"] = rec.item_id;
  j["dataset_id"] = rec.dataset_id;
  j["model_id"] = rec.model_id;
  j["strategy"] = to_string(rec.strategy);
  j["penalty"] = rec.penalty;
  j["decision"] = to_string(rec.decision);
  if (rec.answer_text) j["answer_text"] = *rec.answer_text;
  if (rec.confidence) j["confidence"] = *rec.confidence;
  j["correctness"] = to_string(rec.correctness);
  j["gold_available"] = rec.gold_available;
  if (rec.raw_response) j["raw_response"] = *rec.raw_response;
  if (rec.judge_note) j["judge_note"] = *rec.judge_note;
  return j.dump();
}

ItemRecord record_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("invalid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw ParseError("record line is not a JSON object");
  ItemRecord rec;
  try {
    rec.item_id = j.at("item_id").get<std::string>();
    rec.dataset_id = j.at("dataset_id").get<std::string>();
    rec.model_id = j.at("model_id").get<std::string>();
    rec.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    rec.penalty = j.at("penalty").get<double>();
    rec.decision = decision_from_string(j.at("decision").get<std::string>());
    if (j.contains("answer_text"))
      rec.answer_text = j.at("answer_text").get<std::string>();
    if (j.contains("confidence"))
      rec.confidence = j.at("confidence").get<double>();
    rec.correctness =
        correctness_from_string(j.at("correctness").get<std::string>());
    rec.gold_available = j.at("gold_available").get<bool>();
    if (j.contains("raw_response"))
      rec.raw_response = j.at("raw_response").get<std::string>();
    if (j.contains("judge_note"))
      rec.judge_note = j.at("judge_note").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("bad record field: {}", e.what()));
  }
  return rec;
}

ReadResult read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));

  ReadResult result;
  std::unordered_map<std::string, std::size_t> index_by_key;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ItemRecord rec;
    try {
      rec = record_from_json_text(line);
      validate_record(rec);
    } catch (const ParseError& e) {
      throw ParseError(
          fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(
          fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    const std::string key = record_key(rec);
    auto [it, inserted] = index_by_key.emplace(key, result.records.size());
    if (inserted) {
      result.records.push_back(std::move(rec));
    } else {
      // Resume overwrite semantics: the re-emitted record wins.
      result.warnings.push_back(fmt::format(
          "{}:{}: duplicate key (item_id={}, model_id={}, strategy={}, "
          "penalty={}); keeping the later record",
          path.string(), line_no, rec.item_id, rec.model_id,
          to_string(rec.strategy), rec.penalty));
      result.records[it->second] = std::move(rec);
    }
  }
  if (in.bad()) throw IoError(fmt::format("read error on {}", path.string()));
  return result;
}

std::size_t write_records(const std::filesystem::path& path,
                          std::span<const ItemRecord> recs, WriteMode mode) {
  RecordWriter writer(path, mode);
  for (const ItemRecord& rec : recs) writer.append(rec);
  return writer.count();
}

RecordWriter::RecordWriter(const std::filesystem::path& path, WriteMode mode)
    : out_(path, mode == WriteMode::append
                     ? std::ios::out | std::ios::app
                     : std::ios::out | std::ios::trunc),
      path_(path) {
  if (!out_) throw IoError(fmt::format("cannot open {}", path.string()));
}

void RecordWriter::append(const ItemRecord& rec) {
  validate_record(rec);
  // Whole line plus flush, so an interrupted process leaves only complete
  // records behind.
  out_ << to_jsonl_line(rec) << '\n';
  out_.flush();
  if (!out_) throw IoError(fmt::format("write error on {}", path_.string()));
  ++count_;
}

}  // namespace riskeval
