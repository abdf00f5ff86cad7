#include "segfuse/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace segfuse {

namespace {

bool strippable(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) && c != '-';
}

void require_corpus(const std::vector<Tokens>& cands,
                    const std::vector<Tokens>& refs, const char* op) {
  if (cands.size() != refs.size()) {
    throw std::invalid_argument(std::string(op) + ": " +
                                std::to_string(cands.size()) +
                                " candidates vs " + std::to_string(refs.size()) +
                                " references");
  }
  if (cands.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty corpus");
  }
}

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const Tokens& doc, int n) {
  NgramCounts counts;
  if (static_cast<int>(doc.size()) >= n) {
    for (std::size_t i = 0; i + n <= doc.size(); ++i) {
      counts[std::vector<std::string>(doc.begin() + i, doc.begin() + i + n)]++;
    }
  }
  return counts;
}

int lcs_length(const Tokens& a, const Tokens& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

Tokens tokenize(const std::string& text) {
  Tokens out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    std::size_t b = 0, e = word.size();
    while (b < e && strippable(word[b])) ++b;
    while (e > b && strippable(word[e - 1])) --e;
    if (e > b) out.push_back(word.substr(b, e - b));
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '.' || c == ';' || c == '!' || c == '?') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string stem(const std::string& token) {
  static const char* kSuffixes[] = {"ing", "ed", "es", "s"};
  for (const char* suf : kSuffixes) {
    const std::size_t len = std::string(suf).size();
    if (token.size() >= len + 3 &&
        token.compare(token.size() - len, len, suf) == 0) {
      return token.substr(0, token.size() - len);
    }
  }
  return token;
}

double bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs,
            int max_n) {
  require_corpus(cands, refs, "bleu");
  if (max_n < 1) {
    throw std::invalid_argument("bleu: max_n must be >= 1");
  }

  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    cand_len += cands[i].size();
    ref_len += refs[i].size();
  }
  if (cand_len == 0) return 0.0;

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    std::int64_t clipped = 0, total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const NgramCounts cc = count_ngrams(cands[i], n);
      const NgramCounts rc = count_ngrams(refs[i], n);
      for (const auto& [gram, count] : cc) {
        total += count;
        auto it = rc.find(gram);
        if (it != rc.end()) clipped += std::min(count, it->second);
      }
    }
    if (clipped == 0 || total == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }

  const double bp =
      cand_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len)
          : 1.0;
  return bp * std::exp(log_sum / max_n);
}

double rouge_l(const std::vector<Tokens>& cands,
               const std::vector<Tokens>& refs) {
  require_corpus(cands, refs, "rouge_l");
  constexpr double kBeta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const int l = lcs_length(cands[i], refs[i]);
    if (l == 0 || cands[i].empty() || refs[i].empty()) continue;
    const double p = static_cast<double>(l) / cands[i].size();
    const double r = static_cast<double>(l) / refs[i].size();
    sum += ((1.0 + kBeta2) * p * r) / (r + kBeta2 * p);
  }
  return sum / cands.size();
}

double meteor_lite(const std::vector<Tokens>& cands,
                   const std::vector<Tokens>& refs) {
  require_corpus(cands, refs, "meteor_lite");
  double sum = 0.0;
  for (std::size_t pair = 0; pair < cands.size(); ++pair) {
    const Tokens& c = cands[pair];
    const Tokens& r = refs[pair];
    if (c.empty() || r.empty()) continue;

    // align[i] = matched reference position of candidate token i
    std::vector<int> align(c.size(), -1);
    std::vector<bool> ref_used(r.size(), false);

    // stage 1: exact matches, in order
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (!ref_used[j] && c[i] == r[j]) {
          align[i] = static_cast<int>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
    // stage 2: stem matches over what remains
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (align[i] >= 0) continue;
      const std::string cs = stem(c[i]);
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (!ref_used[j] && cs == stem(r[j])) {
          align[i] = static_cast<int>(j);
          ref_used[j] = true;
          break;
        }
      }
    }

    int m = 0, chunks = 0;
    int prev_cand = -2, prev_ref = -2;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (align[i] < 0) continue;
      ++m;
      if (static_cast<int>(i) != prev_cand + 1 || align[i] != prev_ref + 1) {
        ++chunks;
      }
      prev_cand = static_cast<int>(i);
      prev_ref = align[i];
    }
    if (m == 0) continue;

    const double p = static_cast<double>(m) / c.size();
    const double rr = static_cast<double>(m) / r.size();
    const double f = 10.0 * p * rr / (rr + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    sum += f * (1.0 - 0.5 * frag * frag * frag);
  }
  return sum / cands.size();
}

double cider_d(const std::vector<Tokens>& cands,
               const std::vector<Tokens>& refs) {
  require_corpus(cands, refs, "cider_d");
  if (refs.size() < 2) {
    throw std::invalid_argument(
        "cider_d: document frequencies need a corpus of at least 2");
  }
  constexpr int kMaxN = 4;
  constexpr double kSigma = 6.0;
  const double log_n = std::log(static_cast<double>(refs.size()));

  // document frequencies over the reference corpus, per n-gram order
  std::vector<NgramCounts> df(kMaxN);
  for (const Tokens& ref : refs) {
    for (int n = 1; n <= kMaxN; ++n) {
      for (const auto& [gram, count] : count_ngrams(ref, n)) {
        (void)count;
        df[n - 1][gram]++;
      }
    }
  }
  auto idf = [&](int n, const std::vector<std::string>& gram) {
    auto it = df[n - 1].find(gram);
    const double d = it == df[n - 1].end() ? 0.0 : it->second;
    return log_n - std::log(std::max(1.0, d));
  };

  double corpus_sum = 0.0;
  for (std::size_t pair = 0; pair < cands.size(); ++pair) {
    const double delta = static_cast<double>(cands[pair].size()) -
                         static_cast<double>(refs[pair].size());
    const double length_penalty =
        std::exp(-delta * delta / (2.0 * kSigma * kSigma));
    double pair_sum = 0.0;
    for (int n = 1; n <= kMaxN; ++n) {
      const NgramCounts cc = count_ngrams(cands[pair], n);
      const NgramCounts rc = count_ngrams(refs[pair], n);
      double dot = 0.0, cnorm = 0.0, rnorm = 0.0;
      for (const auto& [gram, count] : cc) {
        const double w = count * idf(n, gram);
        cnorm += w * w;
      }
      for (const auto& [gram, count] : rc) {
        const double w = count * idf(n, gram);
        rnorm += w * w;
        auto it = cc.find(gram);
        if (it != cc.end()) {
          dot += std::min(static_cast<double>(it->second),
                          static_cast<double>(count)) *
                 idf(n, gram) * w;
        }
      }
      if (cnorm > 0.0 && rnorm > 0.0) {
        pair_sum += dot / (std::sqrt(cnorm) * std::sqrt(rnorm)) *
                    length_penalty;
      }
    }
    corpus_sum += 10.0 * pair_sum / kMaxN;
  }
  return corpus_sum / cands.size();
}

EvalSummary evaluate_corpus(const std::vector<std::string>& cands,
                            const std::vector<std::string>& refs,
                            const CeLexicon& lex) {
  if (cands.size() != refs.size()) {
    throw std::invalid_argument("evaluate_corpus: size mismatch");
  }
  std::vector<Tokens> ct, rt;
  ct.reserve(cands.size());
  rt.reserve(refs.size());
  for (const auto& c : cands) ct.push_back(tokenize(c));
  for (const auto& r : refs) rt.push_back(tokenize(r));

  EvalSummary s;
  s.bleu1 = bleu(ct, rt, 1);
  s.bleu4 = bleu(ct, rt, 4);
  s.rougeL = rouge_l(ct, rt);
  s.meteor = meteor_lite(ct, rt);
  s.ciderD = refs.size() >= 2 ? cider_d(ct, rt) : 0.0;

  std::vector<CEVector> preds, golds;
  preds.reserve(cands.size());
  golds.reserve(refs.size());
  for (const auto& c : cands) preds.push_back(keyword_labeler(c, lex));
  for (const auto& r : refs) golds.push_back(keyword_labeler(r, lex));
  s.ce = ce_scores(preds, golds);
  return s;
}

std::string to_json(const EvalSummary& s) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"bleu1\": %.6f, \"bleu4\": %.6f, \"rougeL\": %.6f, "
                "\"meteor\": %.6f, \"ciderD\": %.6f, "
                "\"ce\": {\"precision\": %.6f, \"recall\": %.6f, \"f1\": %.6f}}",
                s.bleu1, s.bleu4, s.rougeL, s.meteor, s.ciderD,
                s.ce.precision, s.ce.recall, s.ce.f1);
  return buf;
}

}  // namespace segfuse
