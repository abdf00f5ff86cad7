#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace segfuse {

// The 14 findings tracked by clinical-efficacy scoring, in canonical
// (alphabetical) order. Label vectors index into this list.
inline constexpr std::array<std::string_view, 14> kFindingNames = {
    "Atelectasis",     "Cardiomegaly",  "Consolidation",
    "Edema",           "Enlarged Cardiomediastinum",
    "Fracture",        "Lung Lesion",   "Lung Opacity",
    "No Finding",      "Pleural Effusion",
    "Pleural Other",   "Pneumonia",     "Pneumothorax",
    "Support Devices"};

inline constexpr int kNoFindingIndex = 8;

using CEVector = std::array<bool, 14>;

// Position of `name` in kFindingNames, or -1.
int finding_index(std::string_view name);

// Synonym phrases per finding plus the negation cues that flip a mention
// to negative when they precede it in the same sentence.
struct CeLexicon {
  std::vector<std::string> negation_cues;
  std::array<std::vector<std::string>, 14> synonyms;
};

CeLexicon load_ce_lexicon(const std::string& path = "");

// Rule-based report labeler: a finding is positive iff some synonym
// occurs in a sentence with no negation cue earlier in that sentence.
// "No Finding" is derived: positive iff the other 13 are all negative.
CEVector keyword_labeler(const std::string& report, const CeLexicon& lex);

struct CeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged precision/recall/F1 over all 14*N label decisions.
CeScores ce_scores(const std::vector<CEVector>& preds,
                   const std::vector<CEVector>& golds);

}  // namespace segfuse
