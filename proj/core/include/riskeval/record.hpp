#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskeval/types.hpp"

namespace riskeval {

// One evaluated question at one penalty level: the decision taken, the
// reported confidence, the graded outcome, and provenance. This is the unit
// shared by the simulator, the live pipeline, and the metrics engine.
//
// Invariants enforced by validate_record():
//   - decision == abstain implies correctness == ungraded and no answer_text
//   - decision == answer with gold_available implies a correct/incorrect grade
//   - confidence, when present, lies in [0, 1]; penalty >= 0
struct ItemRecord {
  std::string item_id;
  std::string dataset_id;
  std::string model_id;
  Strategy strategy = Strategy::base;
  double penalty = 0.0;
  Decision decision = Decision::answer;
  std::optional<std::string> answer_text;
  std::optional<double> confidence;
  Correctness correctness = Correctness::ungraded;
  bool gold_available = false;
  std::optional<std::string> raw_response;
  std::optional<std::string> judge_note;

  bool operator==(const ItemRecord&) const = default;
};

// A penalty with its induced decision threshold tau = penalty / (1 + penalty).
struct PenaltyContext {
  double penalty = 0.0;
  double threshold = 0.0;
};

PenaltyContext make_penalty_context(double penalty);

// Composite key unique within a run file.
std::string record_key(const ItemRecord& rec);

// Returns rec unchanged iff every invariant holds; throws ValidationError
// naming the violated rule otherwise.
const ItemRecord& validate_record(const ItemRecord& rec);

// Prefix of judge_note set by the pipeline when the endpoint call failed
// after all retries. Such records stay on disk for accounting but are
// excluded from every metric population.
inline constexpr const char* kTransportFailedMarker = "transport_failed";

bool is_transport_failed(const ItemRecord& rec);

// One JSON object per record, UTF-8, optional fields omitted when absent.
std::string to_jsonl_line(const ItemRecord& rec);
ItemRecord record_from_json_text(const std::string& text);

struct ReadResult {
  std::vector<ItemRecord> records;
  // One entry per duplicate key encountered (last occurrence wins).
  std::vector<std::string> warnings;
};

// Reads a JSONL record file in file order, validating each record.
// Malformed lines throw ParseError and invariant violations throw
// ValidationError, both citing the 1-based line number. A duplicate
// (item_id, model_id, strategy, penalty) key keeps the last occurrence in
// the first occurrence's position and adds a warning, matching how a
// resumed run re-emits its in-flight item.
ReadResult read_records(const std::filesystem::path& path);

enum class WriteMode { truncate, append };

// Writes records one per line; each line is flushed whole so an interrupted
// writer leaves a prefix of complete lines. Returns the count written.
std::size_t write_records(const std::filesystem::path& path,
                          std::span<const ItemRecord> recs, WriteMode mode);

// The single serialized append channel used for incremental persistence.
class RecordWriter {
 public:
  explicit RecordWriter(const std::filesystem::path& path,
                        WriteMode mode = WriteMode::append);

  void append(const ItemRecord& rec);
  std::size_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t count_ = 0;
};

}  // namespace riskeval
