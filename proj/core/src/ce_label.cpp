#include "segfuse/ce_label.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "segfuse/errors.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/ontology.hpp"

namespace segfuse {

namespace {

// True when `phrase` occurs in `sent` starting at a position with no
// negation cue starting anywhere before it.
bool affirmed_in(const std::vector<std::string>& sent,
                 const std::vector<std::vector<std::string>>& cues,
                 const std::vector<std::string>& phrase) {
  if (phrase.empty() || sent.size() < phrase.size()) return false;

  auto seq_at = [&](const std::vector<std::string>& seq, std::size_t pos) {
    if (pos + seq.size() > sent.size()) return false;
    for (std::size_t k = 0; k < seq.size(); ++k) {
      if (sent[pos + k] != seq[k]) return false;
    }
    return true;
  };

  for (std::size_t pos = 0; pos + phrase.size() <= sent.size(); ++pos) {
    if (!seq_at(phrase, pos)) continue;
    bool negated = false;
    for (std::size_t before = 0; before < pos && !negated; ++before) {
      for (const auto& cue : cues) {
        if (seq_at(cue, before)) {
          negated = true;
          break;
        }
      }
    }
    if (!negated) return true;
  }
  return false;
}

}  // namespace

int finding_index(std::string_view name) {
  for (std::size_t i = 0; i < kFindingNames.size(); ++i) {
    if (kFindingNames[i] == name) return static_cast<int>(i);
  }
  return -1;
}

CeLexicon load_ce_lexicon(const std::string& path) {
  const std::string file = path.empty() ? data_file("ce_lexicon.json") : path;
  std::ifstream in(file);
  if (!in) {
    throw IoError("cannot open lexicon " + file);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + file + ": " + e.what());
  }

  CeLexicon lex;
  for (const auto& cue : doc.at("negation_cues")) {
    lex.negation_cues.push_back(cue.get<std::string>());
  }
  const auto& findings = doc.at("findings");
  for (std::size_t f = 0; f < kFindingNames.size(); ++f) {
    const std::string key(kFindingNames[f]);
    if (!findings.contains(key)) {
      throw std::invalid_argument("lexicon " + file + ": missing finding \"" +
                                  key + "\"");
    }
    for (const auto& phrase : findings.at(key)) {
      lex.synonyms[f].push_back(phrase.get<std::string>());
    }
  }
  return lex;
}

CEVector keyword_labeler(const std::string& report, const CeLexicon& lex) {
  std::vector<std::vector<std::string>> cue_tokens;
  for (const auto& cue : lex.negation_cues) {
    cue_tokens.push_back(tokenize(cue));
  }

  CEVector out{};
  for (const std::string& sentence : split_sentences(report)) {
    const Tokens sent = tokenize(sentence);
    if (sent.empty()) continue;
    for (std::size_t f = 0; f < kFindingNames.size(); ++f) {
      if (out[f]) continue;
      for (const auto& phrase : lex.synonyms[f]) {
        if (affirmed_in(sent, cue_tokens, tokenize(phrase))) {
          out[f] = true;
          break;
        }
      }
    }
  }

  bool any = false;
  for (std::size_t f = 0; f < kFindingNames.size(); ++f) {
    if (f != kNoFindingIndex && out[f]) any = true;
  }
  out[kNoFindingIndex] = !any;
  return out;
}

CeScores ce_scores(const std::vector<CEVector>& preds,
                   const std::vector<CEVector>& golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("ce_scores: " + std::to_string(preds.size()) +
                                " predictions vs " +
                                std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) {
    throw std::invalid_argument("ce_scores: empty corpus");
  }
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t f = 0; f < preds[i].size(); ++f) {
      if (preds[i][f] && golds[i][f]) ++tp;
      if (preds[i][f] && !golds[i][f]) ++fp;
      if (!preds[i][f] && golds[i][f]) ++fn;
    }
  }
  CeScores s;
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  s.f1 = s.precision + s.recall == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace segfuse
