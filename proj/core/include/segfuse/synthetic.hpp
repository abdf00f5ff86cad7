#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "segfuse/ce_label.hpp"
#include "segfuse/projector.hpp"
#include "segfuse/segstack.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

// Sentence-aware vocabulary over the report-template assets. Token id 0 is
// the end marker; "." is an ordinary token so generated sequences carry
// sentence boundaries, and decode() re-attaches it to the preceding word so
// labeling and metrics see real sentences.
struct Vocab {
  std::vector<std::string> words;  // id -> token; words[0] == "</s>"
  std::unordered_map<std::string, int> ids;

  int eos() const { return 0; }
  int size() const { return static_cast<int>(words.size()); }
  int id(const std::string& word) const;          // -1 when absent
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& token_ids) const;
};

// Deterministic: collects tokens from every template sentence plus the fixed
// prompt, sorts them, and prepends the end marker.
Vocab build_vocab();

inline constexpr const char* kToyPrompt = "Describe the findings in the image.";

struct SyntheticSample {
  std::string id;
  CEVector z{};                 // finding presence; the no-finding slot is derived
  TensorF R;                    // [d_R] report feature vector
  TensorF F_I;                  // [T_v, D] stand-in vision tokens
  MaskStack masks;              // full ontology, 212 x 64 x 64
  std::string report_text;
  std::vector<int> report_ids;  // encoded report, no end marker
  std::vector<int> prompt_ids;
};

struct SyntheticDataset {
  Vocab vocab;
  std::vector<SyntheticSample> samples;
};

// Seeded corpus generation.
//
// Per sample: finding presence is Bernoulli(0.25) per real finding with the
// no-finding slot derived; each present mapped finding paints one filled
// rectangle into one of its segmentation classes, placed inside a
// finding-specific home region on top of a fixed anatomical template;
// R = A z + 0.05 noise for a fixed seeded A whose columns are damped for the
// findings that paint masks (report features and masks complement each other,
// neither alone covers all findings); F_I is a fixed seeded projection
// of the 8x8-downsampled mask union plus 0.05 noise; the report is assembled
// from per-finding template sentences (positives for present findings,
// seeded negations for some absent ones) and inverts exactly under the
// keyword labeler.
SyntheticDataset gen_synthetic_dataset(int n, const Dims& dims,
                                       std::uint64_t seed);

// Directory layout: masks/<id>.sstk, tensors/<id>.{R,F_I}.tnsr, and
// index.jsonl with one record per sample (id, z, report, file paths).
void save_dataset(const SyntheticDataset& ds, const std::string& dir);
SyntheticDataset load_dataset(const std::string& dir);

}  // namespace segfuse
