#include "segfuse/commands.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "segfuse/ce_label.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/grad_check.hpp"
#include "segfuse/ontology.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/synthetic.hpp"
#include "segfuse/tape.hpp"
#include "segfuse/toylm.hpp"

namespace segfuse {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string utc_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string slurp(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(std::string("cannot open ") + what + " " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path, const char* what) {
  const std::string text = slurp(path, what);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string(what) + " " + path + ": " + e.what());
  }
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  f.flush();
  if (!f) throw IoError("short write to " + path);
}

std::string variant_name(const FusionVariant& v) {
  std::string s = to_string(v.kind);
  if (v.use_segmaps) s += "+segmaps";
  return s;
}

// Deterministic evaluation settings shared by eval and the ablation so the
// two commands stay comparable.
GenConfig eval_gen_config() {
  GenConfig gen;
  gen.temperature = 0.2;
  gen.max_new_tokens = 64;
  return gen;
}

void check_dataset_shapes(const SyntheticDataset& ds, const Dims& dims) {
  if (ds.samples.empty()) throw std::invalid_argument("dataset is empty");
  const SyntheticSample& s = ds.samples.front();
  if (s.F_I.shape != std::vector<int64_t>{dims.T_v, dims.D} ||
      static_cast<int64_t>(s.R.data.size()) != dims.d_R) {
    throw std::invalid_argument(
        "dataset tensors do not match the checkpoint's sizes");
  }
}

EvalSummary score_generated(const SyntheticDataset& ds,
                            const std::vector<int>& idx,
                            const EvalOutput& out) {
  std::vector<std::string> refs;
  refs.reserve(idx.size());
  for (int i : idx) refs.push_back(ds.samples[static_cast<size_t>(i)].report_text);
  EvalSummary summary = evaluate_corpus(out.generated, refs, load_ce_lexicon());
  // The labeler-vs-truth scores are the ones the synthetic task defines;
  // prefer them over labeler-vs-labeler when ground truth is at hand.
  summary.ce.precision = out.ce_precision;
  summary.ce.recall = out.ce_recall;
  summary.ce.f1 = out.ce_f1;
  return summary;
}

std::vector<int> all_indices(const SyntheticDataset& ds) {
  std::vector<int> idx(ds.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

}  // namespace

void write_manifest(const RunManifest& m, const std::string& dir) {
  fs::create_directories(dir);
  json doc;
  doc["command"] = m.command;
  doc["config_hash"] = m.config_hash;
  doc["seed"] = m.seed;
  doc["variant"] = m.variant;
  doc["checkpoints"] = m.checkpoints;
  doc["outputs"] = m.outputs;
  doc["created"] = m.created;
  spill(dir + "/manifest.json", doc.dump(2) + "\n");
}

void save_pipeline(const PipelineParams& pipe, const std::string& dir) {
  fs::create_directories(dir);
  save_checkpoint(pipe.projector, dir + "/projector.asrg");
  save_tnsr(dir + "/decoder.E.tnsr", pipe.decoder.E);
  save_tnsr(dir + "/decoder.U.tnsr", pipe.decoder.U);
  save_tnsr(dir + "/decoder.bias.tnsr", pipe.decoder.bias);
}

PipelineParams load_pipeline(const std::string& dir) {
  PipelineParams pipe;
  pipe.projector = load_checkpoint(dir + "/projector.asrg");
  pipe.decoder.E = load_tnsr(dir + "/decoder.E.tnsr");
  pipe.decoder.U = load_tnsr(dir + "/decoder.U.tnsr");
  pipe.decoder.bias = load_tnsr(dir + "/decoder.bias.tnsr");
  if (pipe.decoder.E.shape.size() != 2 || pipe.decoder.U.shape.size() != 2 ||
      pipe.decoder.bias.shape.size() != 1) {
    throw IoError("checkpoint " + dir + " holds misshapen decoder tensors");
  }
  pipe.decoder.V = pipe.decoder.E.shape[0];
  pipe.decoder.D_llm = pipe.decoder.E.shape[1];
  if (pipe.decoder.D_llm != pipe.projector.dims.D_llm ||
      pipe.decoder.U.shape != std::vector<int64_t>{pipe.decoder.D_llm,
                                                   pipe.decoder.V} ||
      pipe.decoder.bias.shape != std::vector<int64_t>{pipe.decoder.V}) {
    throw std::invalid_argument("checkpoint " + dir +
                                ": decoder tensors disagree on sizes");
  }
  return pipe;
}

TrainSpec parse_train_spec(const std::string& config_path) {
  const std::string bytes = slurp(config_path, "config");
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::exception& e) {
    throw IoError("config " + config_path + ": " + e.what());
  }
  TrainSpec spec;
  spec.config_hash = fnv1a_hex(bytes);
  try {
    if (doc.contains("dataset")) {
      const json& d = doc["dataset"];
      if (d.contains("path")) spec.dataset_path = d["path"].get<std::string>();
      if (d.contains("n")) spec.dataset_n = d["n"].get<int>();
      if (d.contains("seed")) spec.dataset_seed = d["seed"].get<std::uint64_t>();
    }
    if (doc.contains("fusion"))
      spec.kind = fusion_kind_from_string(doc["fusion"].get<std::string>());
    if (doc.contains("use_segmaps"))
      spec.use_segmaps = doc["use_segmaps"].get<bool>();
    if (doc.contains("alpha_init"))
      spec.alpha_init = doc["alpha_init"].get<double>();
    if (doc.contains("branch_seed"))
      spec.branch_seed = doc["branch_seed"].get<std::uint64_t>();
    if (doc.contains("train")) {
      const json& t = doc["train"];
      if (t.contains("base_lr")) spec.train.base_lr = t["base_lr"].get<double>();
      if (t.contains("warmup_ratio"))
        spec.train.warmup_ratio = t["warmup_ratio"].get<double>();
      if (t.contains("batch_size"))
        spec.train.batch_size = t["batch_size"].get<int>();
      if (t.contains("epochs_per_stage"))
        spec.train.epochs_per_stage = t["epochs_per_stage"].get<int>();
      if (t.contains("seed")) spec.train.seed = t["seed"].get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + config_path + ": " + e.what());
  }
  return spec;
}

RunManifest cmd_train(const TrainSpec& spec, const Dims& dims,
                      const std::string& out_dir) {
  if (spec.use_segmaps && spec.kind != FusionKind::Concatenation) {
    throw std::invalid_argument(
        "segmentation tokens require the concatenation variant");
  }
  SyntheticDataset ds =
      spec.dataset_path.empty()
          ? gen_synthetic_dataset(spec.dataset_n, dims, spec.dataset_seed)
          : load_dataset(spec.dataset_path);
  check_dataset_shapes(ds, dims);

  // Model seeds are forked off the run seed so one number pins the run.
  Rng root(spec.train.seed);
  const std::uint64_t proj_seed = root.fork(1).next_u64();
  const std::uint64_t dec_seed = root.fork(2).next_u64();

  PipelineParams pipe;
  pipe.projector =
      make_projector(dims, {spec.kind, false, spec.alpha_init}, proj_seed);
  pipe.decoder = make_toylm(ds.vocab.size(), dims.D_llm, dec_seed);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config_hash = spec.config_hash;
  manifest.seed = spec.train.seed;
  manifest.variant =
      variant_name({spec.kind, spec.use_segmaps, spec.alpha_init});
  manifest.checkpoints = {out_dir + "/stage1"};
  if (spec.use_segmaps) manifest.checkpoints.push_back(out_dir + "/stage2");
  manifest.outputs = {out_dir + "/loss_curve.csv", out_dir + "/eval.json"};
  manifest.created = utc_now();
  write_manifest(manifest, out_dir);

  const SplitIndices split =
      split_dataset(static_cast<int>(ds.samples.size()), spec.train.seed);
  TrainResult r1 = train_stage(pipe, ds, split.train, spec.train, Stage::Stage1);
  save_pipeline(pipe, out_dir + "/stage1");

  std::vector<LossRow> curve = r1.curve;
  if (spec.use_segmaps) {
    add_segmap_branch(pipe.projector, spec.branch_seed);
    TrainResult r2 =
        train_stage(pipe, ds, split.train, spec.train, Stage::Stage2,
                    static_cast<int>(r1.curve.size()));
    save_pipeline(pipe, out_dir + "/stage2");
    curve.insert(curve.end(), r2.curve.begin(), r2.curve.end());
  }
  write_loss_csv(out_dir + "/loss_curve.csv", curve);

  EvalOutput out = evaluate_model(pipe, ds, split.test, eval_gen_config(),
                                  spec.train.seed);
  spill(out_dir + "/eval.json", to_json(score_generated(ds, split.test, out)));
  return manifest;
}

EvalSummary cmd_eval(const std::string& ckpt_dir,
                     const std::string& dataset_dir,
                     const std::string& out_dir, std::uint64_t seed,
                     std::optional<std::uint64_t> shuffle_seed) {
  PipelineParams pipe = load_pipeline(ckpt_dir);
  SyntheticDataset ds = load_dataset(dataset_dir);
  check_dataset_shapes(ds, pipe.projector.dims);

  const std::vector<int> idx = all_indices(ds);
  if (!out_dir.empty()) {
    RunManifest manifest;
    manifest.command = "eval";
    manifest.config_hash = "-";
    manifest.seed = seed;
    manifest.variant = variant_name(pipe.projector.variant);
    manifest.checkpoints = {ckpt_dir};
    manifest.outputs = {out_dir + "/eval.json"};
    manifest.created = utc_now();
    write_manifest(manifest, out_dir);
  }
  EvalOutput out =
      evaluate_model(pipe, ds, idx, eval_gen_config(), seed, shuffle_seed);
  EvalSummary summary = score_generated(ds, idx, out);
  if (!out_dir.empty()) spill(out_dir + "/eval.json", to_json(summary));
  return summary;
}

AblateResult cmd_ablate_shuffle(const std::string& ckpt_dir,
                                const std::string& dataset_dir,
                                const std::string& out_dir,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) {
    throw std::invalid_argument(
        "the ablation needs at least two seeds for a variance estimate");
  }
  PipelineParams pipe = load_pipeline(ckpt_dir);
  if (!pipe.projector.variant.use_segmaps) {
    throw std::invalid_argument(
        "the shuffle ablation needs a checkpoint with segmentation tokens");
  }
  SyntheticDataset ds = load_dataset(dataset_dir);
  check_dataset_shapes(ds, pipe.projector.dims);
  const std::vector<int> idx = all_indices(ds);

  if (!out_dir.empty()) {
    RunManifest manifest;
    manifest.command = "ablate-shuffle";
    manifest.config_hash = "-";
    manifest.seed = seeds.front();
    manifest.variant = variant_name(pipe.projector.variant);
    manifest.checkpoints = {ckpt_dir};
    manifest.outputs = {out_dir + "/ablate.json"};
    manifest.created = utc_now();
    write_manifest(manifest, out_dir);
  }

  AblateResult result;
  result.sorted.label = "sorted";
  result.shuffled.label = "shuffled";
  const GenConfig gen = eval_gen_config();
  for (std::uint64_t seed : seeds) {
    EvalOutput sorted = evaluate_model(pipe, ds, idx, gen, seed);
    EvalOutput shuffled = evaluate_model(pipe, ds, idx, gen, seed,
                                         seed * 0x9e3779b97f4a7c15ULL + 1);
    result.sorted.scores.push_back(sorted.ce_f1);
    result.shuffled.scores.push_back(shuffled.ce_f1);
  }
  result.test = welch_test(result.sorted, result.shuffled, Sided::Greater);

  if (!out_dir.empty()) {
    json doc;
    doc["sorted"] = result.sorted.scores;
    doc["shuffled"] = result.shuffled.scores;
    doc["t"] = result.test.t;
    doc["df"] = result.test.df;
    doc["p"] = result.test.p;
    spill(out_dir + "/ablate.json", doc.dump(2) + "\n");
  }
  return result;
}

StatsOutput cmd_stats(const std::string& json_path) {
  const json doc = parse_json_file(json_path, "scores file");
  std::vector<RunGroup> groups;
  try {
    for (const json& g : doc.at("groups")) {
      RunGroup group;
      group.label = g.at("label").get<std::string>();
      for (const json& s : g.at("scores")) group.scores.push_back(s.get<double>());
      groups.push_back(std::move(group));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("scores file " + json_path + ": " + e.what());
  }
  auto find = [&](const std::string& label) -> const RunGroup& {
    for (const RunGroup& g : groups)
      if (g.label == label) return g;
    throw std::invalid_argument("scores file names no group \"" + label + "\"");
  };

  std::ostringstream table;
  json rows = json::array();
  table << "comparison                                      t        df         p\n";
  try {
    for (const json& c : doc.at("comparisons")) {
      if (!c.is_array() || c.size() != 3) {
        throw std::invalid_argument(
            "each comparison must be [groupA, groupB, sidedness]");
      }
      const std::string a = c[0].get<std::string>();
      const std::string b = c[1].get<std::string>();
      const Sided sided = sided_from_string(c[2].get<std::string>());
      const TestResult r = welch_test(find(a), find(b), sided);
      char line[160];
      std::snprintf(line, sizeof line, "%-40s %8.4f %9.4f %9.6f\n",
                    (a + " vs " + b + " (" + to_string(sided) + ")").c_str(),
                    r.t, r.df, r.p);
      table << line;
      rows.push_back({{"a", a},
                      {"b", b},
                      {"sided", to_string(sided)},
                      {"t", r.t},
                      {"df", r.df},
                      {"p", r.p}});
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("scores file " + json_path + ": " + e.what());
  }
  StatsOutput out;
  out.table = table.str();
  out.json = json{{"comparisons", rows}}.dump(2) + "\n";
  return out;
}

std::vector<GroundRow> cmd_ground(const std::string& report_path,
                                  const std::string& stack_path,
                                  const std::string& mapping_path) {
  const std::string report = slurp(report_path, "report");
  const MaskStack stack = load_segstack(stack_path);
  const FindingSegmap segmap = load_finding_segmap(mapping_path);
  const CEVector z = keyword_labeler(report, load_ce_lexicon());
  const std::vector<ClassPresence> pres = presence(stack);

  std::vector<GroundRow> rows;
  for (size_t f = 0; f < kFindingNames.size(); ++f) {
    GroundRow row;
    row.finding = std::string(kFindingNames[f]);
    if (!segmap.mapped(static_cast<int>(f))) {
      row.label = "unmapped";
    } else {
      bool seg = false;
      for (int cls : segmap.classes[f]) {
        if (cls < 0 || cls >= stack.n_cls) {
          throw std::invalid_argument(
              "mask stack has " + std::to_string(stack.n_cls) +
              " classes but the mapping references class " +
              std::to_string(cls));
        }
        seg = seg || pres[static_cast<size_t>(cls)].present;
      }
      if (z[f] && seg) {
        row.label = "both-positive";
      } else if (z[f]) {
        row.label = "report-only";
      } else if (seg) {
        row.label = "segmentation-only";
      } else {
        row.label = "both-negative";
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ground_table(const std::vector<GroundRow>& rows) {
  std::ostringstream out;
  for (const GroundRow& row : rows) {
    char line[80];
    std::snprintf(line, sizeof line, "%-28s %s\n", row.finding.c_str(),
                  row.label.c_str());
    out << line;
  }
  return out.str();
}

std::string ground_json(const std::vector<GroundRow>& rows) {
  json arr = json::array();
  for (const GroundRow& row : rows)
    arr.push_back({{"finding", row.finding}, {"label", row.label}});
  return json{{"rows", arr}}.dump(2) + "\n";
}

std::string demo_fusion(const Dims& dims, std::uint64_t seed) {
  std::ostringstream out;
  const std::vector<FusionVariant> variants = {
      {FusionKind::Baseline, false, 0.0},
      {FusionKind::Replace, false, 0.0},
      {FusionKind::LearnedMixing, false, 0.0},
      {FusionKind::WeightedAddition, false, 0.0},
      {FusionKind::Concatenation, false, 0.0},
      {FusionKind::Concatenation, true, 0.0},
  };
  Rng rng(seed);
  TensorF F_I({dims.T_v, dims.D});
  for (double& v : F_I.data) v = rng.normal();
  TensorF R({1, dims.d_R});
  for (double& v : R.data) v = rng.normal();
  TensorF S({dims.n_cls, dims.g * dims.g});
  for (double& v : S.data) v = rng.uniform();

  for (const FusionVariant& variant : variants) {
    ProjectorParams params = make_projector(dims, variant, seed);
    Tape t;
    BoundProjector bound = bind(t, params);
    Var y = projector_forward(
        t, params, bound, t.input(F_I), t.input(R),
        variant.use_segmaps ? std::optional<Var>(t.input(S)) : std::nullopt);
    const TensorF& val = t.val(y);
    const ParamBudget budget = count_params(dims, variant);
    char buf[256];
    out << variant_name(variant) << "\n";
    std::snprintf(buf, sizeof buf,
                  "  tokens in -> out: %" PRId64 " -> %" PRId64
                  "   output [%" PRId64 ", %" PRId64 "]\n",
                  dims.T_v, fused_tokens(dims, variant), val.shape[0],
                  val.shape[1]);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "  params: feature %" PRId64 ", segmap %" PRId64
                  ", shared %" PRId64 ", added %" PRId64 " (%.6f%% of the "
                  "backbone)\n",
                  budget.feature, budget.segmap, budget.projector, budget.added,
                  100.0 * budget.added_fraction);
    out << buf;
  }
  return out.str();
}

GradCheckSummary grad_check_all(const Dims& dims, std::uint64_t seed) {
  SyntheticDataset ds = gen_synthetic_dataset(1, dims, seed);
  const SyntheticSample& s = ds.samples.front();
  const SegGridder gridder(dims);
  const TensorF S = gridder.grid(s.masks);
  const int target = s.report_ids.empty() ? 0 : s.report_ids.front();

  const std::vector<FusionVariant> variants = {
      {FusionKind::Baseline, false, 0.0},
      {FusionKind::Replace, false, 0.0},
      {FusionKind::LearnedMixing, false, 0.0},
      {FusionKind::WeightedAddition, false, 0.5},
      {FusionKind::Concatenation, false, 0.0},
      {FusionKind::Concatenation, true, 0.0},
  };

  GradCheckSummary summary;
  summary.pass = true;
  std::ostringstream out;
  for (const FusionVariant& variant : variants) {
    PipelineParams pipe;
    pipe.projector = make_projector(dims, variant, seed + 11);
    pipe.decoder = make_toylm(ds.vocab.size(), dims.D_llm, seed + 12);

    auto run = [&](std::vector<TensorF>* grads) {
      Tape t;
      BoundProjector bp = bind(t, pipe.projector);
      BoundToyLM bd = bind(t, pipe.decoder);
      TensorF r_row({1, dims.d_R});
      r_row.data = s.R.data;
      Var prefix = projector_forward(
          t, pipe.projector, bp, t.input(s.F_I), t.input(std::move(r_row)),
          variant.use_segmaps ? std::optional<Var>(t.input(S)) : std::nullopt);
      Var loss = t.xent(toylm_logits(t, bd, prefix, s.prompt_ids), target);
      if (grads) {
        t.backward(loss);
        grads->clear();
        for (const auto& [name, var] : bp.vars) grads->push_back(t.grad(var));
        grads->push_back(t.grad(bd.E));
        grads->push_back(t.grad(bd.U));
        grads->push_back(t.grad(bd.bias));
      }
      return t.val(loss).data[0];
    };

    std::vector<ParamRef> refs;
    for (auto& [name, ptr] : pipe.projector.named_tensors())
      refs.push_back({name, ptr});
    refs.push_back({"decoder.E", &pipe.decoder.E});
    refs.push_back({"decoder.U", &pipe.decoder.U});
    refs.push_back({"decoder.bias", &pipe.decoder.bias});

    const CheckReport report = grad_check(
        [&] { return run(nullptr); },
        [&] {
          std::vector<TensorF> g;
          run(&g);
          return g;
        },
        refs);
    summary.pass = summary.pass && report.pass;
    char line[160];
    std::snprintf(line, sizeof line,
                  "%-24s %s  entries %" PRId64 "  max rel err %.3e%s%s\n",
                  variant_name(variant).c_str(),
                  report.pass ? "pass" : "FAIL", report.entries_checked,
                  report.max_rel_err, report.pass ? "" : "  worst ",
                  report.pass ? "" : report.worst_param.c_str());
    out << line;
  }
  summary.report = out.str();
  return summary;
}

}  // namespace segfuse
