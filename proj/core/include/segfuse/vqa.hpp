#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace segfuse {

// One raw report row: JSONL {id, image, text}.
struct ReportRecord {
  std::string id;
  std::string image;
  std::string text;
};

// One converted chat row. Serialized as two turns: the human turn is
// "<image>\n" + prompt, the assistant turn is the findings text.
struct ChatRecord {
  std::string id;
  std::string image;
  std::string prompt;
  std::string findings;
};

// Text between a case-insensitive "FINDINGS:" header and the following
// "IMPRESSION:" header (or the end), with whitespace runs collapsed to
// single spaces. Empty result when the header is missing or the section
// is blank; such records are skipped rather than imputed.
std::optional<std::string> extract_findings(const std::string& raw);

// Picks the prompt uniformly by a seeded hash of the record id, so a record
// keeps its prompt across runs with the same seed no matter how the corpus
// is ordered. Propagates the skip signal from extract_findings.
std::optional<ChatRecord> to_single_turn(const ReportRecord& rec,
                                         const std::vector<std::string>& prompts,
                                         std::uint64_t seed);

std::string chat_record_to_json(const ChatRecord& rec);

struct ConvertOutcome {
  std::int64_t read = 0;
  std::int64_t written = 0;
  std::int64_t skipped = 0;
};

// Streams the corpus: output order matches input order, one JSON line per
// kept record. Lines that are not valid JSON objects with id/image/text
// fail the whole run (garbage input is a caller bug, not data to skip).
ConvertOutcome convert_vqa(std::istream& in, std::ostream& out,
                           const std::vector<std::string>& prompts,
                           std::uint64_t seed);
ConvertOutcome convert_vqa_file(const std::string& in_path,
                                const std::string& out_path,
                                std::uint64_t seed,
                                const std::string& prompts_path = "");

struct CorpusViolation {
  std::int64_t line = 0;  // 1-based
  std::string message;
};

struct ValidationReport {
  std::int64_t records = 0;
  std::vector<CorpusViolation> violations;
  bool ok() const { return violations.empty(); }
};

// Checks every chat-record invariant: two turns, "human" then "gpt", the
// human turn is "<image>" + newline + a known prompt, the assistant turn is
// nonempty. Malformed JSON is a violation with its line number.
ValidationReport validate_corpus(std::istream& in,
                                 const std::vector<std::string>& prompts);
ValidationReport validate_corpus_file(const std::string& path,
                                      const std::string& prompts_path = "");

}  // namespace segfuse
