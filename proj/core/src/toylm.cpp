#include "segfuse/toylm.hpp"

#include <algorithm>
#include <stdexcept>

#include "segfuse/ops.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

std::vector<std::pair<std::string, TensorF*>> ToyLMParams::named_tensors() {
  return {{"E", &E}, {"U", &U}, {"bias", &bias}};
}

std::vector<std::pair<std::string, const TensorF*>> ToyLMParams::named_tensors()
    const {
  return {{"E", &E}, {"U", &U}, {"bias", &bias}};
}

ToyLMParams make_toylm(int64_t V, int64_t D_llm, std::uint64_t seed) {
  if (V < 2) throw std::invalid_argument("toylm: vocabulary needs at least 2 tokens");
  if (D_llm < 1) throw std::invalid_argument("toylm: embedding width must be positive");
  ToyLMParams p;
  p.V = V;
  p.D_llm = D_llm;
  p.E = zeros({V, D_llm});
  p.U = zeros({D_llm, V});
  p.bias = zeros({V});
  Rng rng(seed);
  for (double& x : p.E.data) x = rng.normal(0.0, 0.02);
  for (double& x : p.U.data) x = rng.normal(0.0, 0.02);
  return p;
}

BoundToyLM bind(Tape& tape, const ToyLMParams& params) {
  return {tape.input(params.E), tape.input(params.U), tape.input(params.bias)};
}

Var toylm_logits(Tape& t, const BoundToyLM& bound, Var prefix,
                 const std::vector<int>& text_ids) {
  Var h = t.mean_rows(prefix);
  if (!text_ids.empty()) h = t.add(h, t.embed_mean(bound.E, text_ids));
  return t.linear(h, bound.U, bound.bias);
}

TensorF toylm_logits_value(const ToyLMParams& params, const TensorF& prefix,
                           const std::vector<int>& text_ids) {
  TensorF h = mean_rows(prefix);
  if (!text_ids.empty()) h = add(h, embed_mean(params.E, text_ids));
  return linear_forward(h, params.U, params.bias);
}

std::vector<int> generate_tokens(const ToyLMParams& params,
                                 const TensorF& prefix,
                                 const std::vector<int>& prompt_ids, int eos_id,
                                 const GenConfig& gen, std::uint64_t seed) {
  if (!gen.greedy && !(gen.temperature > 0.0))
    throw std::invalid_argument(
        "generate: temperature must be positive unless greedy");
  if (gen.max_new_tokens < 0)
    throw std::invalid_argument("generate: max_new_tokens must be nonnegative");
  if (eos_id < 0 || eos_id >= params.V)
    throw std::invalid_argument("generate: eos id out of vocabulary");

  Rng rng(seed);
  std::vector<int> text = prompt_ids;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(gen.max_new_tokens));
  while (static_cast<int>(out.size()) < gen.max_new_tokens) {
    const TensorF logits = toylm_logits_value(params, prefix, text);
    int next;
    if (gen.greedy) {
      next = static_cast<int>(std::max_element(logits.data.begin(),
                                               logits.data.end()) -
                              logits.data.begin());
    } else {
      const std::vector<double> probs = softmax(logits, gen.temperature);
      const double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<int>(probs.size()) - 1;
      for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == eos_id) break;
    out.push_back(next);
    text.push_back(next);
  }
  return out;
}

}  // namespace segfuse
