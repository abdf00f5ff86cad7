#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/tape.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

// Toy autoregressive decoder standing in for the language model. It is a
// mean-pooled bag predictor: the hidden state is the mean of the projected
// multimodal prefix tokens plus the mean of the embedded text tokens, and
// logits are one linear layer away. Deliberately linear so that end-to-end
// gradients through the fusion projector stay hand-verifiable.
struct ToyLMParams {
  int64_t V = 0;      // vocabulary size
  int64_t D_llm = 0;  // embedding width, matches the projector output
  TensorF E;          // [V, D_llm] token embeddings
  TensorF U;          // [D_llm, V] output matrix
  TensorF bias;       // [V]

  std::vector<std::pair<std::string, TensorF*>> named_tensors();
  std::vector<std::pair<std::string, const TensorF*>> named_tensors() const;
};

// E and U are drawn N(0, 0.02); the bias starts at zero.
ToyLMParams make_toylm(int64_t V, int64_t D_llm, std::uint64_t seed);

struct BoundToyLM {
  Var E, U, bias;
};
BoundToyLM bind(Tape& tape, const ToyLMParams& params);

// Next-token logits [V] for a multimodal prefix [T_out, D_llm] and the text
// so far. An empty text means the hidden state is the prefix mean alone.
Var toylm_logits(Tape& t, const BoundToyLM& bound, Var prefix,
                 const std::vector<int>& text_ids);

// Tape-free forward for generation loops.
TensorF toylm_logits_value(const ToyLMParams& params, const TensorF& prefix,
                           const std::vector<int>& text_ids);

struct GenConfig {
  double temperature = 0.2;
  int max_new_tokens = 1024;
  bool greedy = false;
};

// Autoregressive sampling: logits are softened by the temperature and sampled
// (or argmaxed when greedy), stopping at eos_id or max_new_tokens. The prompt
// conditions the text mean but is not part of the return value. Deterministic
// given the seed.
std::vector<int> generate_tokens(const ToyLMParams& params,
                                 const TensorF& prefix,
                                 const std::vector<int>& prompt_ids, int eos_id,
                                 const GenConfig& gen, std::uint64_t seed);

}  // namespace segfuse
