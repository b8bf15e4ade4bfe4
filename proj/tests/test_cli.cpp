#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"

namespace fs = std::filesystem;
using testsupport::CmdResult;
using testsupport::fresh_dir;
using testsupport::read_file;
using testsupport::run_cmd;
using testsupport::same_bytes;

namespace {

std::string cli_path() {
  const char* p = std::getenv("URPCA_CLI");
  REQUIRE_MESSAGE(p != nullptr, "URPCA_CLI must point at the command-line binary");
  return p;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Writes a small dataset + checkpoint once; several cases reuse them.
struct Fixture {
  fs::path data = fresh_dir("cli_data");
  fs::path run = fresh_dir("cli_run");
  std::string cli = cli_path();

  Fixture() {
    CmdResult synth = run_cmd(cli + " synth --out " + q(data) +
                              " --count 2 --size 24 --targets 1 --seed 3 --split train");
    REQUIRE(synth.exit_code == 0);
    CmdResult also_test = run_cmd(cli + " synth --out " + q(data) +
                                  " --count 1 --size 24 --targets 1 --seed 4 --split test");
    REQUIRE(also_test.exit_code == 0);
    CmdResult train = run_cmd(cli + " train --data " + q(data) + " --out " + q(run) +
                              " --size 0 --stages 1 --channels 4 --bem-layers 1 --tem-layers 1"
                              " --irm-layers 1 --epochs 2 --batch 2 --seed 5");
    REQUIRE_MESSAGE(train.exit_code == 0, train.output);
  }

  fs::path ckpt() const { return run / "checkpoint.uckp"; }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("cli help lists every subcommand") {
  CmdResult r = run_cmd(cli_path() + " --help");
  CHECK(r.exit_code == 0);
  for (const char* cmd : {"synth", "train", "eval", "decompose", "baseline"})
    CHECK(r.output.find(cmd) != std::string::npos);

  CmdResult bare = run_cmd(cli_path());
  CHECK(bare.exit_code != 0);
}

TEST_CASE("synth output is byte-identical across runs of the same seed") {
  const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b"), c = fresh_dir("synth_c");
  // 48px leaves room for two targets at the default minimum separation.
  const std::string flags = " --count 3 --size 48 --targets 1..2 --seed 11";
  CHECK(run_cmd(cli_path() + " synth --out " + q(a) + flags).exit_code == 0);
  CHECK(run_cmd(cli_path() + " synth --out " + q(b) + flags).exit_code == 0);
  CHECK(run_cmd(cli_path() + " synth --out " + q(c) +
                " --count 3 --size 48 --targets 1..2 --seed 12")
            .exit_code == 0);

  const std::string manifest = read_file(a / "manifest.txt");
  CHECK(manifest.find("train/images/synth_0000.png") != std::string::npos);
  CHECK(manifest.find("train/masks/synth_0002.png") != std::string::npos);
  CHECK(manifest == read_file(b / "manifest.txt"));

  bool any_differs_from_c = false;
  for (const char* rel :
       {"train/images/synth_0000.png", "train/masks/synth_0000.png",
        "train/images/synth_0001.png", "train/images/synth_0002.png"}) {
    CHECK(same_bytes(a / rel, b / rel));
    any_differs_from_c |= !same_bytes(a / rel, c / rel);
  }
  CHECK(any_differs_from_c);
}

TEST_CASE("seed precedence: flag beats environment beats default") {
  const auto flag5 = fresh_dir("seed_flag5"), env5 = fresh_dir("seed_env5"),
             both = fresh_dir("seed_both"), plain = fresh_dir("seed_plain");
  const std::string flags = " --count 1 --size 32 --targets 1";
  CHECK(run_cmd(cli_path() + " synth --out " + q(flag5) + flags + " --seed 5").exit_code == 0);
  CHECK(run_cmd("UNFOLD_RPCA_SEED=5 " + cli_path() + " synth --out " + q(env5) + flags)
            .exit_code == 0);
  CHECK(run_cmd("UNFOLD_RPCA_SEED=9 " + cli_path() + " synth --out " + q(both) + flags +
                " --seed 5")
            .exit_code == 0);
  CHECK(run_cmd(cli_path() + " synth --out " + q(plain) + flags).exit_code == 0);  // seed 0

  const std::string rel = "train/images/synth_0000.png";
  CHECK(same_bytes(flag5 / rel, env5 / rel));
  CHECK(same_bytes(flag5 / rel, both / rel));
  CHECK_FALSE(same_bytes(flag5 / rel, plain / rel));
}

TEST_CASE("config files feed defaults and reject unknown keys") {
  const auto dir = fresh_dir("cfg");
  std::ofstream(dir / "synth.cfg") << "count=2\nsize=32\ntargets=1\nseed=21\n";
  CmdResult ok = run_cmd(cli_path() + " synth --config " + q(dir / "synth.cfg") + " --out " +
                         q(dir / "out"));
  REQUIRE_MESSAGE(ok.exit_code == 0, ok.output);
  CHECK(fs::exists(dir / "out" / "train" / "images" / "synth_0001.png"));
  CHECK_FALSE(fs::exists(dir / "out" / "train" / "images" / "synth_0002.png"));

  // Flags still win over file entries.
  CmdResult override_count = run_cmd(cli_path() + " synth --config " + q(dir / "synth.cfg") +
                                     " --count 1 --out " + q(dir / "out2"));
  CHECK(override_count.exit_code == 0);
  CHECK_FALSE(fs::exists(dir / "out2" / "train" / "images" / "synth_0001.png"));

  std::ofstream(dir / "bad.cfg") << "count=2\nsize=32\ntargets=1\nbogus_knob=7\n";
  CmdResult bad = run_cmd(cli_path() + " synth --config " + q(dir / "bad.cfg") + " --out " +
                          q(dir / "out3"));
  CHECK(bad.exit_code != 0);
  CHECK(bad.output.find("bogus_knob") != std::string::npos);
}

TEST_CASE("train reports a missing dataset root") {
  const auto dir = fresh_dir("missing");
  CmdResult r = run_cmd(cli_path() + " train --data " + q(dir / "nope") + " --out " +
                        q(dir / "out") + " --epochs 1");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("nope") != std::string::npos);
}

TEST_CASE("train writes checkpoint, history and manifest") {
  Fixture& f = fixture();
  CHECK(fs::exists(f.ckpt()));
  const std::string history = read_file(f.run / "history.csv");
  CHECK(history.find("epoch,iter,lr,loss_total,loss_seg,loss_fid") == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') == 3);  // header + 2 iterations
  const std::string manifest = read_file(f.run / "manifest.txt");
  CHECK(manifest.find("checkpoint.uckp") != std::string::npos);
  CHECK(manifest.find("history.csv") != std::string::npos);
}

TEST_CASE("eval writes metric and roc tables") {
  Fixture& f = fixture();
  const auto out = fresh_dir("eval_out");
  CmdResult r = run_cmd(f.cli + " eval --ckpt " + q(f.ckpt()) + " --data " + q(f.data) +
                        " --out " + q(out) + " --split test --size 0 --roc-points 5");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  const std::string metrics = read_file(out / "metrics.csv");
  CHECK(metrics.find("metric,value") == 0);
  for (const char* key : {"miou,", "f1,", "pd,", "fa,", "auc,"})
    CHECK(metrics.find(key) != std::string::npos);
  const std::string roc = read_file(out / "roc.csv");
  CHECK(std::count(roc.begin(), roc.end(), '\n') == 6);  // header + 5 thresholds

  // roc-points 0 skips the sweep entirely.
  const auto out2 = fresh_dir("eval_noroc");
  CmdResult r2 = run_cmd(f.cli + " eval --ckpt " + q(f.ckpt()) + " --data " + q(f.data) +
                         " --out " + q(out2) + " --split test --size 0 --roc-points 0");
  REQUIRE(r2.exit_code == 0);
  CHECK_FALSE(fs::exists(out2 / "roc.csv"));
  CHECK(read_file(out2 / "metrics.csv").find("auc,") == std::string::npos);

  CmdResult missing = run_cmd(f.cli + " eval --ckpt " + q(f.run / "gone.uckp") + " --data " +
                              q(f.data) + " --out " + q(fresh_dir("eval_gone")) + " --size 0");
  CHECK(missing.exit_code != 0);
}

TEST_CASE("decompose traces stage maps from a checkpoint") {
  Fixture& f = fixture();
  const auto out = fresh_dir("dec_out");
  const fs::path image = f.data / "test" / "images" / "synth_0000.png";
  CmdResult r = run_cmd(f.cli + " decompose --image " + q(image) + " --ckpt " + q(f.ckpt()) +
                        " --trace --out " + q(out));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  for (const char* name :
       {"B_k1.png", "T_k1.png", "target.png", "background.png", "reconstruction.png"})
    CHECK(fs::exists(out / name));
  CHECK_FALSE(fs::exists(out / "B_k2.png"));  // one stage in this checkpoint
  const std::string manifest = read_file(out / "manifest.txt");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 5);
}

TEST_CASE("decompose validates its mode flags") {
  Fixture& f = fixture();
  const fs::path image = f.data / "test" / "images" / "synth_0000.png";
  CmdResult neither = run_cmd(f.cli + " decompose --image " + q(image) + " --out " +
                              q(fresh_dir("dec_n")));
  CHECK(neither.exit_code != 0);
  CHECK(neither.output.find("exactly one") != std::string::npos);

  CmdResult both = run_cmd(f.cli + " decompose --image " + q(image) + " --ckpt " + q(f.ckpt()) +
                           " --baseline pcp --out " + q(fresh_dir("dec_b")));
  CHECK(both.exit_code != 0);

  CmdResult trace_baseline = run_cmd(f.cli + " decompose --image " + q(image) +
                                     " --baseline tophat --trace --out " + q(fresh_dir("dec_t")));
  CHECK(trace_baseline.exit_code != 0);

  CmdResult unknown = run_cmd(f.cli + " decompose --image " + q(image) +
                              " --baseline sobel --out " + q(fresh_dir("dec_u")));
  CHECK(unknown.exit_code != 0);
}

TEST_CASE("decompose runs the classical baselines") {
  Fixture& f = fixture();
  const fs::path image = f.data / "test" / "images" / "synth_0000.png";
  for (const std::string method : {"pcp", "tophat"}) {
    const auto out = fresh_dir("dec_" + method);
    CmdResult r = run_cmd(f.cli + " decompose --image " + q(image) + " --baseline " + method +
                          " --out " + q(out));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    for (const char* name : {"target.png", "background.png", "reconstruction.png"})
      CHECK(fs::exists(out / name));
  }
  // ipi with a patch fitting the 24x24 image
  const auto out = fresh_dir("dec_ipi");
  CmdResult r = run_cmd(f.cli + " decompose --image " + q(image) +
                        " --baseline ipi --patch-size 12 --slide-step 6 --out " + q(out));
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(fs::exists(out / "target.png"));
}

TEST_CASE("baseline subcommand scores a split") {
  Fixture& f = fixture();
  const auto out = fresh_dir("base_out");
  CmdResult r = run_cmd(f.cli + " baseline --method tophat --data " + q(f.data) + " --out " +
                        q(out) + " --split test --size 0 --roc-points 4");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(r.output.find("tophat") != std::string::npos);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "roc.csv"));

  CmdResult bad = run_cmd(f.cli + " baseline --method sobel --data " + q(f.data) + " --out " +
                          q(fresh_dir("base_bad")) + " --split test --size 0");
  CHECK(bad.exit_code != 0);
}

TEST_CASE("train resumes from an explicit checkpoint") {
  Fixture& f = fixture();
  const auto out = fresh_dir("resume_out");
  CmdResult r = run_cmd(f.cli + " train --data " + q(f.data) + " --out " + q(out) +
                        " --resume " + q(f.ckpt()) +
                        " --size 0 --stages 1 --channels 4 --bem-layers 1 --tem-layers 1"
                        " --irm-layers 1 --epochs 4 --batch 2 --seed 5");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  // 2 epochs already done, so the resumed run logs exactly 2 more iterations.
  const std::string history = read_file(out / "history.csv");
  CHECK(std::count(history.begin(), history.end(), '\n') == 3);
  CHECK(history.find("\n3,3,") != std::string::npos);

  // Resuming under a different architecture is rejected.
  CmdResult bad = run_cmd(f.cli + " train --data " + q(f.data) + " --out " +
                          q(fresh_dir("resume_bad")) + " --resume " + q(f.ckpt()) +
                          " --size 0 --stages 2 --channels 4 --bem-layers 1 --tem-layers 1"
                          " --irm-layers 1 --epochs 4 --batch 2 --seed 5");
  CHECK(bad.exit_code != 0);
}
