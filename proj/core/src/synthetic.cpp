#include "segfuse/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/ontology.hpp"
#include "segfuse/ops.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

constexpr int kMaskSide = 64;
constexpr int kOntologyClasses = 212;
constexpr double kNoiseScale = 0.05;
constexpr double kFindingPrior = 0.25;
// Findings that paint segmentation masks get damped columns in the report
// feature mix, so R and the masks carry complementary information: a model
// without the mask branch can barely recover those findings from R alone.
constexpr double kMappedColumnGain = 0.15;

struct ReportTemplates {
  std::map<std::string, std::vector<std::string>> positive;
  std::map<std::string, std::vector<std::string>> negative;
  std::vector<std::string> normal;
  std::vector<std::string> filler;
};

ReportTemplates load_report_templates() {
  const std::string path = data_file("report_templates.json");
  std::ifstream f(path);
  if (!f) throw IoError("cannot open report templates [" + path + "]");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("report templates are not valid JSON [" + path +
                  "]: " + e.what());
  }
  ReportTemplates t;
  for (const auto& [name, arr] : j.at("positive").items())
    t.positive[name] = arr.get<std::vector<std::string>>();
  for (const auto& [name, arr] : j.at("negative").items())
    t.negative[name] = arr.get<std::vector<std::string>>();
  t.normal = j.at("normal").get<std::vector<std::string>>();
  t.filler = j.at("filler").get<std::vector<std::string>>();
  for (std::string_view name : kFindingNames) {
    if (name == kFindingNames[kNoFindingIndex]) continue;
    const std::string key(name);
    if (t.positive.count(key) == 0 || t.positive.at(key).empty() ||
        t.negative.count(key) == 0 || t.negative.at(key).empty())
      throw std::invalid_argument("report templates missing sentences for " +
                                  key);
  }
  if (t.normal.empty())
    throw std::invalid_argument("report templates need normal sentences");
  return t;
}

void fill_rect(MaskStack& m, int cls, int y0, int x0, int h, int w) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) m.set(cls, y, x, true);
}

// Fixed anatomy shared by every sample: spine and trachea columns, heart,
// a diaphragm band, both lungs and the umbrella lung class.
void paint_anatomy(MaskStack& m) {
  fill_rect(m, 0, 0, 30, 64, 5);      // spine
  fill_rect(m, 172, 2, 29, 16, 6);    // trachea
  fill_rect(m, 121, 30, 24, 22, 16);  // heart
  fill_rect(m, 105, 50, 6, 8, 52);    // diaphragm
  fill_rect(m, 138, 10, 36, 40, 22);  // right lung
  fill_rect(m, 139, 10, 6, 40, 22);   // left lung
  fill_rect(m, 137, 10, 6, 40, 52);   // lung
}

// Each finding owns one cell of a 4x4 grid over the frame, so pathology
// masks carry class identity in their position as well as their plane.
void finding_home(int finding, int* y0, int* x0) {
  *x0 = 16 * (finding % 4);
  *y0 = 16 * (finding / 4);
}

TensorF union_plane(const MaskStack& m) {
  const size_t bpc = m.bytes_per_class();
  std::vector<uint8_t> acc(bpc, 0);
  for (int c = 0; c < m.n_cls; ++c)
    for (size_t b = 0; b < bpc; ++b)
      acc[b] |= m.bits[static_cast<size_t>(c) * bpc + b];
  TensorF plane = zeros({m.h, m.w});
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const size_t px = static_cast<size_t>(y) * static_cast<size_t>(m.w) +
                        static_cast<size_t>(x);
      plane(y, x) = (acc[px / 8] >> (px % 8)) & 1u ? 1.0 : 0.0;
    }
  return plane;
}

std::string join_sentences(const std::vector<std::string>& sents) {
  std::string out;
  for (const auto& s : sents) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

}  // namespace

int Vocab::id(const std::string& word) const {
  auto it = ids.find(word);
  return it == ids.end() ? -1 : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  const int dot = id(".");
  for (const std::string& sentence : split_sentences(text)) {
    const Tokens toks = tokenize(sentence);
    if (toks.empty()) continue;
    for (const std::string& w : toks) {
      const int i = id(w);
      if (i < 0)
        throw std::invalid_argument("vocabulary does not contain \"" + w + "\"");
      out.push_back(i);
    }
    out.push_back(dot);
  }
  return out;
}

std::string Vocab::decode(const std::vector<int>& token_ids) const {
  std::string out;
  for (int i : token_ids) {
    if (i < 0 || i >= size())
      throw std::invalid_argument("token id " + std::to_string(i) +
                                  " outside vocabulary of " +
                                  std::to_string(size()));
    if (i == eos()) break;
    const std::string& w = words[static_cast<size_t>(i)];
    if (w == ".") {
      out += '.';
    } else {
      if (!out.empty()) out += ' ';
      out += w;
    }
  }
  return out;
}

Vocab build_vocab() {
  const ReportTemplates t = load_report_templates();
  std::set<std::string> bag;
  auto absorb = [&](const std::string& sentence) {
    for (const std::string& w : tokenize(sentence)) bag.insert(w);
  };
  for (const auto& [name, sents] : t.positive)
    for (const auto& s : sents) absorb(s);
  for (const auto& [name, sents] : t.negative)
    for (const auto& s : sents) absorb(s);
  for (const auto& s : t.normal) absorb(s);
  for (const auto& s : t.filler) absorb(s);
  absorb(kToyPrompt);
  bag.insert(".");

  Vocab v;
  v.words.push_back("</s>");
  for (const std::string& w : bag) v.words.push_back(w);
  for (size_t i = 0; i < v.words.size(); ++i)
    v.ids[v.words[i]] = static_cast<int>(i);
  return v;
}

SyntheticDataset gen_synthetic_dataset(int n, const Dims& dims,
                                       std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("dataset size must be at least 1");
  dims.validate();

  SyntheticDataset ds;
  ds.vocab = build_vocab();
  if (ds.vocab.size() < 40)
    throw std::invalid_argument(
        "template vocabulary implausibly small: " +
        std::to_string(ds.vocab.size()) + " tokens (need at least 40)");
  const FindingSegmap segmap = load_finding_segmap();
  const ReportTemplates tmpl = load_report_templates();
  const std::vector<int> prompt_ids = ds.vocab.encode(kToyPrompt);

  const Rng root(seed);
  // Fixed mixing matrices shared by the whole corpus.
  Rng a_rng = root.fork(1);
  TensorF A = zeros({dims.d_R, 14});
  for (double& x : A.data) x = a_rng.normal();
  for (int f = 0; f < 14; ++f) {
    if (f == kNoFindingIndex || segmap.classes[static_cast<size_t>(f)].empty())
      continue;
    for (int64_t j = 0; j < dims.d_R; ++j) A(j, f) *= kMappedColumnGain;
  }
  Rng p_rng = root.fork(2);
  TensorF P_fix = zeros({dims.T_v * dims.D, 64});
  for (double& x : P_fix.data) x = p_rng.normal(0.0, 0.125);

  ds.samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(1000 + static_cast<std::uint64_t>(i));
    SyntheticSample s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "sample-%06d", i);
    s.id = idbuf;

    bool any = false;
    for (int f = 0; f < 14; ++f) {
      if (f == kNoFindingIndex) continue;
      s.z[static_cast<size_t>(f)] = rng.bernoulli(kFindingPrior);
      any = any || s.z[static_cast<size_t>(f)];
    }
    s.z[kNoFindingIndex] = !any;

    s.masks = MaskStack::zeros(kOntologyClasses, kMaskSide, kMaskSide);
    paint_anatomy(s.masks);
    for (int f = 0; f < 14; ++f) {
      if (f == kNoFindingIndex || !s.z[static_cast<size_t>(f)]) continue;
      const auto& classes = segmap.classes[static_cast<size_t>(f)];
      if (classes.empty()) continue;
      const int cls = classes[rng.below(classes.size())];
      int hy = 0, hx = 0;
      finding_home(f, &hy, &hx);
      const int h = 4 + static_cast<int>(rng.below(7));
      const int w = 4 + static_cast<int>(rng.below(7));
      const int y = hy + static_cast<int>(rng.below(static_cast<uint64_t>(16 - h + 1)));
      const int x = hx + static_cast<int>(rng.below(static_cast<uint64_t>(16 - w + 1)));
      fill_rect(s.masks, cls, y, x, h, w);
    }

    s.R = zeros({dims.d_R});
    for (int64_t j = 0; j < dims.d_R; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 14; ++k)
        if (s.z[static_cast<size_t>(k)]) acc += A(j, k);
      s.R(j) = acc + kNoiseScale * rng.normal();
    }

    const TensorF pooled = adaptive_avg_pool2d(union_plane(s.masks), 8, 8);
    TensorF u = zeros({64, 1});
    std::copy(pooled.data.begin(), pooled.data.end(), u.data.begin());
    TensorF flat = matmul(P_fix, u);
    s.F_I = zeros({dims.T_v, dims.D});
    for (size_t idx = 0; idx < s.F_I.data.size(); ++idx)
      s.F_I.data[idx] = flat.data[idx] + kNoiseScale * rng.normal();

    std::vector<std::string> sents;
    if (s.z[kNoFindingIndex]) {
      std::vector<std::string> normals = tmpl.normal;
      rng.shuffle(normals);
      sents.assign(normals.begin(), normals.begin() + 2);
    } else {
      for (int f = 0; f < 14; ++f) {
        if (f == kNoFindingIndex || !s.z[static_cast<size_t>(f)]) continue;
        const auto& pool = tmpl.positive.at(std::string(kFindingNames[static_cast<size_t>(f)]));
        sents.push_back(pool[rng.below(pool.size())]);
      }
    }
    for (int f = 0; f < 14; ++f) {
      if (f == kNoFindingIndex || s.z[static_cast<size_t>(f)]) continue;
      if (!rng.bernoulli(0.3)) continue;
      const auto& pool = tmpl.negative.at(std::string(kFindingNames[static_cast<size_t>(f)]));
      sents.push_back(pool[rng.below(pool.size())]);
    }
    if (rng.bernoulli(0.25))
      sents.push_back(tmpl.filler[rng.below(tmpl.filler.size())]);
    rng.shuffle(sents);
    s.report_text = join_sentences(sents);
    s.report_ids = ds.vocab.encode(s.report_text);
    s.prompt_ids = prompt_ids;

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const SyntheticDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "masks", ec);
  fs::create_directories(fs::path(dir) / "tensors", ec);
  if (ec)
    throw IoError("cannot create dataset directories under [" + dir + "]: " +
                  ec.message());

  std::ofstream index((fs::path(dir) / "index.jsonl").string());
  if (!index) throw IoError("cannot open dataset index for writing [" + dir + "]");
  for (const SyntheticSample& s : ds.samples) {
    const std::string mask_rel = "masks/" + s.id + ".sstk";
    const std::string r_rel = "tensors/" + s.id + ".R.tnsr";
    const std::string f_rel = "tensors/" + s.id + ".F_I.tnsr";
    save_segstack(s.masks, (fs::path(dir) / mask_rel).string());
    save_tnsr((fs::path(dir) / r_rel).string(), s.R);
    save_tnsr((fs::path(dir) / f_rel).string(), s.F_I);
    nlohmann::json j;
    j["id"] = s.id;
    std::vector<int> zint;
    for (bool b : s.z) zint.push_back(b ? 1 : 0);
    j["z"] = zint;
    j["report"] = s.report_text;
    j["masks"] = mask_rel;
    j["R"] = r_rel;
    j["F_I"] = f_rel;
    index << j.dump() << "\n";
  }
  if (!index) throw IoError("dataset index write failed [" + dir + "]");
}

SyntheticDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  SyntheticDataset ds;
  ds.vocab = build_vocab();
  const std::vector<int> prompt_ids = ds.vocab.encode(kToyPrompt);

  const std::string index_path = (fs::path(dir) / "index.jsonl").string();
  std::ifstream index(index_path);
  if (!index) throw IoError("cannot open dataset index [" + index_path + "]");
  std::string line;
  int lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset index line " + std::to_string(lineno) +
                    " is not valid JSON [" + index_path + "]: " + e.what());
    }
    SyntheticSample s;
    try {
      s.id = j.at("id").get<std::string>();
      const auto zint = j.at("z").get<std::vector<int>>();
      if (zint.size() != s.z.size())
        throw std::invalid_argument("z must have " + std::to_string(s.z.size()) +
                                    " entries");
      for (size_t k = 0; k < zint.size(); ++k) s.z[k] = zint[k] != 0;
      s.report_text = j.at("report").get<std::string>();
      s.masks = load_segstack((fs::path(dir) / j.at("masks").get<std::string>()).string());
      s.R = load_tnsr((fs::path(dir) / j.at("R").get<std::string>()).string());
      s.F_I = load_tnsr((fs::path(dir) / j.at("F_I").get<std::string>()).string());
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset index line " + std::to_string(lineno) +
                    " is missing fields [" + index_path + "]: " + e.what());
    } catch (const std::invalid_argument& e) {
      throw IoError("dataset index line " + std::to_string(lineno) + ": " +
                    e.what() + " [" + index_path + "]");
    }
    s.report_ids = ds.vocab.encode(s.report_text);
    s.prompt_ids = prompt_ids;
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty())
    throw IoError("dataset index has no samples [" + index_path + "]");
  return ds;
}

}  // namespace segfuse
