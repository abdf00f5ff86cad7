#pragma once

#include <string>
#include <vector>

#include "segfuse/ce_label.hpp"

namespace segfuse {

using Tokens = std::vector<std::string>;

// Lowercases, splits on whitespace, strips punctuation off token edges
// (hyphens survive, so "CVC - Normal" keeps its standalone "-"), drops
// tokens that were punctuation-only. Digits are kept.
Tokens tokenize(const std::string& text);

// Sentence segments of `text`, split on . ; ! ? — used for negation
// scoping in the labeler.
std::vector<std::string> split_sentences(const std::string& text);

// Light suffix-stripping stemmer: removes one of "ing", "ed", "es", "s"
// (longest first) when at least 3 characters remain.
std::string stem(const std::string& token);

// Corpus BLEU with one reference per candidate: geometric mean of
// clipped modified n-gram precisions (no smoothing; any zero order
// zeroes the score) times the brevity penalty exp(1 - r/c) when c < r.
double bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs,
            int max_n);

// Mean per-pair LCS F-score with beta = 1.2.
double rouge_l(const std::vector<Tokens>& cands,
               const std::vector<Tokens>& refs);

// Unigram-alignment score: exact matches first, then stem matches;
// F = 10PR/(R+9P) discounted by the chunk fragmentation penalty
// 0.5 * (chunks/m)^3.
double meteor_lite(const std::vector<Tokens>& cands,
                   const std::vector<Tokens>& refs);

// Consensus TF-IDF similarity over 1..4-grams, IDF taken over the
// reference corpus, with a Gaussian length penalty (sigma = 6).
// Range [0, 10].
double cider_d(const std::vector<Tokens>& cands,
               const std::vector<Tokens>& refs);

struct EvalSummary {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rougeL = 0.0;
  double meteor = 0.0;
  double ciderD = 0.0;
  CeScores ce;
};

// Runs the full metric battery on raw candidate/reference text.
EvalSummary evaluate_corpus(const std::vector<std::string>& cands,
                            const std::vector<std::string>& refs,
                            const CeLexicon& lex);

// 6-decimal fixed-format JSON rendering, stable for golden files.
std::string to_json(const EvalSummary& s);

}  // namespace segfuse
