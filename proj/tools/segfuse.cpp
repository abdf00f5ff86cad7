#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segfuse/commands.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/synthetic.hpp"
#include "segfuse/vqa.hpp"

namespace {

segfuse::Dims preset_dims(const std::string& preset) {
  if (preset == "desk") return segfuse::Dims::desk();
  if (preset == "paper") return segfuse::Dims::paper();
  throw std::invalid_argument("unknown preset \"" + preset + "\"");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-assisted fusion projector toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "run-out";
  std::string preset = "desk";
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file")
      ->configurable(false);
  app.add_option("--out", out_dir, "run directory for outputs");
  app.add_option("--seed", seed, "run seed");
  app.add_option("--preset", preset, "model size: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));

  CLI::App* train = app.add_subcommand(
      "train", "Train on synthetic data per the --config run description");
  bool seed_given = false;
  train->callback([&] { seed_given = app.count("--seed") > 0; });

  CLI::App* eval = app.add_subcommand(
      "eval", "Score a checkpoint directory against a dataset directory");
  std::string ckpt_dir, dataset_dir;
  std::string shuffle_seed_opt = "none";
  eval->add_option("checkpoint", ckpt_dir, "checkpoint directory")->required();
  eval->add_option("dataset", dataset_dir, "dataset directory")->required();
  eval->add_option("--shuffle-seed", shuffle_seed_opt,
                   "permute segmentation planes with this seed, or \"none\"");

  CLI::App* ablate = app.add_subcommand(
      "ablate-shuffle",
      "Paired sorted-vs-shuffled mask evaluation with a Welch test");
  std::string ab_ckpt, ab_dataset;
  std::vector<std::uint64_t> ab_seeds = {0, 1, 2, 3};
  ablate->add_option("checkpoint", ab_ckpt)->required();
  ablate->add_option("dataset", ab_dataset)->required();
  ablate->add_option("--seeds", ab_seeds, "evaluation seeds");

  CLI::App* convert = app.add_subcommand(
      "convert-vqa", "Convert report JSONL into single-turn chat JSONL");
  std::string conv_in, conv_out;
  convert->add_option("input", conv_in, "report JSONL")->required();
  convert->add_option("output", conv_out, "chat JSONL")->required();

  CLI::App* stats = app.add_subcommand(
      "stats", "Welch comparisons over a JSON file of score groups");
  std::string stats_path;
  stats->add_option("scores", stats_path, "scores JSON")->required();

  CLI::App* ground = app.add_subcommand(
      "ground", "Report/segmentation agreement for one report and mask stack");
  std::string report_path, stack_path, mapping_path;
  ground->add_option("report", report_path, "report text file")->required();
  ground->add_option("masks", stack_path, "mask stack file")->required();
  ground->add_option("--mapping", mapping_path,
                     "finding-to-class mapping JSON (packaged default)");

  CLI::App* demo = app.add_subcommand(
      "demo-fusion", "Walk every fusion variant: shapes and parameter bills");

  CLI::App* gradcheck = app.add_subcommand(
      "grad-check", "Finite-difference verification of every fusion variant");

  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic dataset directory");
  int gen_n = 64;
  gen->add_option("-n,--samples", gen_n, "sample count");

  // Global flags may come before or after the subcommand name.
  for (CLI::App* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const segfuse::Dims dims = preset_dims(preset);
    if (*train) {
      if (config_path.empty())
        throw std::invalid_argument("train needs --config");
      segfuse::TrainSpec spec = segfuse::parse_train_spec(config_path);
      if (seed_given) spec.train.seed = seed;
      segfuse::cmd_train(spec, dims, out_dir);
      std::printf("trained %s into %s\n", spec.use_segmaps ? "two stages"
                                                           : "one stage",
                  out_dir.c_str());
    } else if (*eval) {
      std::optional<std::uint64_t> shuffle;
      if (shuffle_seed_opt != "none") {
        try {
          shuffle = std::stoull(shuffle_seed_opt);
        } catch (const std::exception&) {
          throw std::invalid_argument("--shuffle-seed wants a seed or \"none\", got \"" +
                                      shuffle_seed_opt + "\"");
        }
      }
      segfuse::EvalSummary s =
          segfuse::cmd_eval(ckpt_dir, dataset_dir, out_dir, seed, shuffle);
      std::printf("%s", segfuse::to_json(s).c_str());
    } else if (*ablate) {
      segfuse::AblateResult r =
          segfuse::cmd_ablate_shuffle(ab_ckpt, ab_dataset, out_dir, ab_seeds);
      std::printf("sorted mean F1 vs shuffled: t=%.4f df=%.4f p=%.6f\n",
                  r.test.t, r.test.df, r.test.p);
    } else if (*convert) {
      segfuse::ConvertOutcome c =
          segfuse::convert_vqa_file(conv_in, conv_out, seed);
      std::printf("read %lld, wrote %lld, skipped %lld\n",
                  static_cast<long long>(c.read),
                  static_cast<long long>(c.written),
                  static_cast<long long>(c.skipped));
    } else if (*stats) {
      segfuse::StatsOutput s = segfuse::cmd_stats(stats_path);
      std::printf("%s", s.table.c_str());
    } else if (*ground) {
      std::vector<segfuse::GroundRow> rows =
          segfuse::cmd_ground(report_path, stack_path, mapping_path);
      std::printf("%s", segfuse::ground_table(rows).c_str());
    } else if (*demo) {
      std::printf("%s", segfuse::demo_fusion(dims, seed).c_str());
    } else if (*gradcheck) {
      segfuse::GradCheckSummary s = segfuse::grad_check_all(dims, seed);
      std::printf("%s", s.report.c_str());
      if (!s.pass) {
        std::fprintf(stderr, "gradient check failed\n");
        return 2;
      }
    } else if (*gen) {
      segfuse::SyntheticDataset ds =
          segfuse::gen_synthetic_dataset(gen_n, dims, seed);
      segfuse::save_dataset(ds, out_dir);
      std::printf("wrote %zu samples to %s\n", ds.samples.size(),
                  out_dir.c_str());
    }
    return 0;
  } catch (const segfuse::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
