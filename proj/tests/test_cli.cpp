#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "segfuse/segstack.hpp"
#include "segfuse/stats.hpp"

using namespace segfuse;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

const char* cli_path() {
  const char* path = std::getenv("SEGFUSE_CLI_PATH");
  REQUIRE_MESSAGE(path != nullptr, "SEGFUSE_CLI_PATH must point at the binary");
  return path;
}

RunResult run(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult result;
  char buf[512];
  while (fgets(buf, sizeof buf, pipe)) result.out += buf;
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

// Scratch tree shared by the workflow case, wiped up front.
struct Scratch {
  Scratch() {
    fs::remove_all("cli_scratch");
    fs::create_directories("cli_scratch");
  }
  std::string operator/(const std::string& leaf) const {
    return "cli_scratch/" + leaf;
  }
};

}  // namespace

TEST_CASE("exit codes separate usage, validation, and i/o failures") {
  CHECK(run("").code == 2);                      // no subcommand
  CHECK(run("no-such-command").code == 2);       // unknown subcommand
  CHECK(run("--help").code == 0);
  CHECK(run("demo-fusion --preset galaxy").code == 2);
  CHECK(run("train").code == 2);                 // --config missing
  CHECK(run("eval missing-ckpt missing-data").code == 3);
  CHECK(run("ground no-report.txt no-masks.sstk").code == 3);
  CHECK(run("stats no-scores.json").code == 3);
  CHECK(run("convert-vqa no-input.jsonl out.jsonl").code == 3);
}

TEST_CASE("the full workflow: generate, train, evaluate, ablate") {
  Scratch s;
  write_file(s / "cfg.json", R"({
    "dataset": {"n": 32, "seed": 1},
    "fusion": "concatenation",
    "use_segmaps": true,
    "branch_seed": 7,
    "train": {"warmup_ratio": 0.3, "batch_size": 8, "seed": 9}
  })");

  RunResult gen = run("gen-data -n 32 --seed 1 --out " + (s / "data"));
  CHECK(gen.code == 0);
  CHECK(fs::exists(s / "data/index.jsonl"));

  RunResult train =
      run("train --config " + (s / "cfg.json") + " --out " + (s / "run"));
  CHECK(train.code == 0);
  CHECK(fs::exists(s / "run/manifest.json"));
  CHECK(fs::exists(s / "run/stage1/projector.asrg"));
  CHECK(fs::exists(s / "run/stage2/decoder.E.tnsr"));
  CHECK(fs::exists(s / "run/eval.json"));
  const std::string manifest = slurp(s / "run/manifest.json");
  CHECK(manifest.find("\"variant\": \"concatenation+segmaps\"") !=
        std::string::npos);
  CHECK(manifest.find("\"config_hash\": \"-\"") == std::string::npos);
  const std::string curve = slurp(s / "run/loss_curve.csv");
  CHECK(curve.rfind("step,stage,lr,loss", 0) == 0);

  // Same seed, same scores, and an unset shuffle seed written out literally
  // matches the default bit for bit.
  const std::string ckpt = s / "run/stage2";
  const std::string data = s / "data";
  CHECK(run("eval " + ckpt + " " + data + " --seed 4 --out " + (s / "e1")).code == 0);
  CHECK(run("eval " + ckpt + " " + data + " --seed 4 --out " + (s / "e2") +
            " --shuffle-seed none").code == 0);
  CHECK(slurp(s / "e1/eval.json") == slurp(s / "e2/eval.json"));
  CHECK(run("eval " + ckpt + " " + data + " --seed 4 --shuffle-seed what")
            .code == 2);

  RunResult ablate = run("ablate-shuffle " + ckpt + " " + data + " --seeds 0 1" +
                         " --out " + (s / "ab"));
  CHECK(ablate.code == 0);
  const std::string ab = slurp(s / "ab/ablate.json");
  CHECK(ab.find("\"sorted\"") != std::string::npos);
  CHECK(ab.find("\"shuffled\"") != std::string::npos);
  CHECK(ab.find("\"p\"") != std::string::npos);

  // A features-only checkpoint refuses the ablation.
  CHECK(run("ablate-shuffle " + (s / "run/stage1") + " " + data + " --out " +
            (s / "ab2")).code == 2);
}

TEST_CASE("stats prints the table the library computes") {
  Scratch s;
  write_file(s / "scores.json", R"({
    "groups": [{"label": "full", "scores": [0.4117, 0.4155, 0.4123, 0.4201]},
               {"label": "base", "scores": [0.3827, 0.3899, 0.3854, 0.3908]}],
    "comparisons": [["full", "base", "greater"]]
  })");
  RunResult r = run("stats " + (s / "scores.json"));
  CHECK(r.code == 0);

  const TestResult expect =
      welch_test({"full", {0.4117, 0.4155, 0.4123, 0.4201}},
                 {"base", {0.3827, 0.3899, 0.3854, 0.3908}}, Sided::Greater);
  char line[160];
  std::snprintf(line, sizeof line, "%-40s %8.4f %9.4f %9.6f",
                "full vs base (greater)", expect.t, expect.df, expect.p);
  CHECK(r.out.find(line) != std::string::npos);

  write_file(s / "bad.json", R"({"groups": [], "comparisons": [["a","b","greater"]]})");
  CHECK(run("stats " + (s / "bad.json")).code == 2);
  write_file(s / "garbage.json", "{nope");
  CHECK(run("stats " + (s / "garbage.json")).code == 3);
}

TEST_CASE("grounding reproduces the agreement cases") {
  Scratch s;
  auto blob = [&](int cls) {
    // presence() wants at least 0.1% of the image; a 4x4 block clears it.
    MaskStack stack = MaskStack::zeros(212, 64, 64);
    if (cls >= 0) {
      for (int y = 20; y < 24; ++y)
        for (int x = 30; x < 34; ++x) stack.set(cls, y, x, true);
    }
    return stack;
  };

  save_segstack(blob(182), s / "effusion.sstk");
  write_file(s / "effusion.txt", "There is a left pleural effusion.\n");
  RunResult a = run("ground " + (s / "effusion.txt") + " " + (s / "effusion.sstk"));
  CHECK(a.code == 0);
  CHECK(a.out.find("Pleural Effusion             both-positive") !=
        std::string::npos);

  save_segstack(blob(-1), s / "empty.sstk");
  write_file(s / "quiet.txt", "Unremarkable surfaces.\n");
  RunResult b = run("ground " + (s / "quiet.txt") + " " + (s / "empty.sstk"));
  CHECK(b.code == 0);
  CHECK(b.out.find("Pneumothorax                 both-negative") !=
        std::string::npos);

  // The skepticism case: the report asserts atelectasis, the masks never
  // predict it.
  write_file(s / "atel.txt", "There is atelectasis at the left base.\n");
  RunResult c = run("ground " + (s / "atel.txt") + " " + (s / "empty.sstk"));
  CHECK(c.code == 0);
  CHECK(c.out.find("Atelectasis                  report-only") !=
        std::string::npos);

  save_segstack(blob(177), s / "atel.sstk");
  RunResult d = run("ground " + (s / "quiet.txt") + " " + (s / "atel.sstk"));
  CHECK(d.out.find("Atelectasis                  segmentation-only") !=
        std::string::npos);
  CHECK(d.out.find("Edema                        unmapped") != std::string::npos);
}

TEST_CASE("conversion through the binary is deterministic") {
  Scratch s;
  std::ostringstream corpus;
  for (int i = 0; i < 8; ++i) {
    corpus << R"({"id": "r)" << i << R"(", "image": "i.png", "text": )";
    corpus << (i % 4 == 3 ? R"("no header")"
                          : R"("FINDINGS: Clear lungs, case )" +
                                std::to_string(i) + R"(. IMPRESSION: ok")");
    corpus << "}\n";
  }
  write_file(s / "reports.jsonl", corpus.str());

  RunResult r1 = run("convert-vqa " + (s / "reports.jsonl") + " " +
                     (s / "chats1.jsonl") + " --seed 3");
  CHECK(r1.code == 0);
  CHECK(r1.out.find("read 8, wrote 6, skipped 2") != std::string::npos);
  RunResult r2 = run("convert-vqa " + (s / "reports.jsonl") + " " +
                     (s / "chats2.jsonl") + " --seed 3");
  CHECK(r2.code == 0);
  CHECK(slurp(s / "chats1.jsonl") == slurp(s / "chats2.jsonl"));
}

TEST_CASE("the fusion walkthrough is seeded and covers every variant") {
  RunResult a = run("demo-fusion --seed 5");
  CHECK(a.code == 0);
  for (const char* name :
       {"baseline", "replace", "learned-mixing", "weighted-addition",
        "concatenation", "concatenation+segmaps"}) {
    CHECK(a.out.find(name) != std::string::npos);
  }
  RunResult b = run("demo-fusion --seed 5");
  CHECK(a.out == b.out);
}
