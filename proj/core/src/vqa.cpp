#include "segfuse/vqa.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/ontology.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {
namespace {

using nlohmann::json;

// Case-insensitive substring search, returns npos or the match offset.
size_t ifind(const std::string& hay, const std::string& needle, size_t from) {
  auto it = std::search(hay.begin() + static_cast<std::ptrdiff_t>(from),
                        hay.end(), needle.begin(), needle.end(),
                        [](char a, char b) {
                          return std::tolower(static_cast<unsigned char>(a)) ==
                                 std::tolower(static_cast<unsigned char>(b));
                        });
  return it == hay.end() ? std::string::npos
                         : static_cast<size_t>(it - hay.begin());
}

std::string squeeze_whitespace(const std::string& s) {
  std::string out;
  bool in_gap = true;  // leading whitespace drops
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_gap = true;
    } else {
      if (in_gap && !out.empty()) out.push_back(' ');
      in_gap = false;
      out.push_back(c);
    }
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::optional<std::string> extract_findings(const std::string& raw) {
  const size_t start = ifind(raw, "FINDINGS:", 0);
  if (start == std::string::npos) return std::nullopt;
  const size_t body = start + std::string("FINDINGS:").size();
  size_t end = ifind(raw, "IMPRESSION:", body);
  if (end == std::string::npos) end = raw.size();
  std::string section = squeeze_whitespace(raw.substr(body, end - body));
  if (section.empty()) return std::nullopt;
  return section;
}

std::optional<ChatRecord> to_single_turn(const ReportRecord& rec,
                                         const std::vector<std::string>& prompts,
                                         std::uint64_t seed) {
  if (prompts.empty()) throw std::invalid_argument("empty prompt list");
  std::optional<std::string> findings = extract_findings(rec.text);
  if (!findings) return std::nullopt;
  // Whitening the id hash through the generator keeps the pick exactly
  // uniform (below() rejects, it does not take a modulus).
  Rng pick(fnv1a(rec.id) ^ (seed * 0x9e3779b97f4a7c15ULL));
  ChatRecord out;
  out.id = rec.id;
  out.image = rec.image;
  out.prompt = prompts[pick.below(static_cast<std::uint64_t>(prompts.size()))];
  out.findings = std::move(*findings);
  return out;
}

std::string chat_record_to_json(const ChatRecord& rec) {
  json turns = json::array();
  turns.push_back({{"from", "human"}, {"value", "<image>\n" + rec.prompt}});
  turns.push_back({{"from", "gpt"}, {"value", rec.findings}});
  json row;
  row["id"] = rec.id;
  row["image"] = rec.image;
  row["conversations"] = std::move(turns);
  return row.dump();
}

ConvertOutcome convert_vqa(std::istream& in, std::ostream& out,
                           const std::vector<std::string>& prompts,
                           std::uint64_t seed) {
  ConvertOutcome stats;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
      ReportRecord rec{row.at("id").get<std::string>(),
                       row.at("image").get<std::string>(),
                       row.at("text").get<std::string>()};
      ++stats.read;
      if (std::optional<ChatRecord> chat = to_single_turn(rec, prompts, seed)) {
        out << chat_record_to_json(*chat) << '\n';
        ++stats.written;
      } else {
        ++stats.skipped;
      }
    } catch (const json::exception& e) {
      throw IoError("report corpus line " + std::to_string(lineno) + ": " +
                    e.what());
    }
  }
  return stats;
}

ConvertOutcome convert_vqa_file(const std::string& in_path,
                                const std::string& out_path,
                                std::uint64_t seed,
                                const std::string& prompts_path) {
  std::ifstream in(in_path);
  if (!in) throw IoError("cannot open report corpus " + in_path);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write chat corpus " + out_path);
  ConvertOutcome stats =
      convert_vqa(in, out, load_findings_prompts(prompts_path), seed);
  out.flush();
  if (!out) throw IoError("short write to chat corpus " + out_path);
  return stats;
}

ValidationReport validate_corpus(std::istream& in,
                                 const std::vector<std::string>& prompts) {
  const std::set<std::string> known(prompts.begin(), prompts.end());
  ValidationReport report;
  std::string line;
  std::int64_t lineno = 0;
  auto flag = [&](const std::string& msg) {
    report.violations.push_back({lineno, msg});
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++report.records;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      flag(std::string("malformed JSON: ") + e.what());
      continue;
    }
    try {
      if (row.at("id").get<std::string>().empty()) flag("empty id");
      row.at("image").get<std::string>();
      const json& turns = row.at("conversations");
      if (!turns.is_array() || turns.size() != 2) {
        flag("expected exactly two conversation turns");
        continue;
      }
      const std::string from0 = turns[0].at("from").get<std::string>();
      const std::string from1 = turns[1].at("from").get<std::string>();
      if (from0 != "human" || from1 != "gpt")
        flag("turns must come as human, then gpt");
      const std::string human = turns[0].at("value").get<std::string>();
      const std::string tag = "<image>\n";
      if (human.rfind(tag, 0) != 0) {
        flag("human turn does not start with the <image> tag");
      } else if (!known.count(human.substr(tag.size()))) {
        flag("human turn prompt is not one of the packaged templates");
      }
      if (turns[1].at("value").get<std::string>().empty())
        flag("assistant turn is empty");
    } catch (const json::exception& e) {
      flag(std::string("missing field: ") + e.what());
    }
  }
  return report;
}

ValidationReport validate_corpus_file(const std::string& path,
                                      const std::string& prompts_path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open chat corpus " + path);
  return validate_corpus(in, load_findings_prompts(prompts_path));
}

}  // namespace segfuse
