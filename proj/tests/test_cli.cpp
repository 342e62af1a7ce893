#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "mimlab/csv.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

struct RunOut {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunOut run_cli(const std::string& args) {
  const char* bin = MIMLAB_CLI_PATH;  // compile-time path to the built binary
  static int counter = 0;
  fs::path cap = fs::temp_directory_path() / ("mimlab-cli-cap-" + std::to_string(counter++));
  fs::create_directories(cap);
  std::string cmd = std::string("\"") + bin + "\" " + args + " > \"" + (cap / "out").string() + "\" 2> \"" +
                    (cap / "err").string() + "\"";
  int st = std::system(cmd.c_str());
  RunOut r;
  r.code = (st >= 0 && WIFEXITED(st)) ? WEXITSTATUS(st) : -1;
  r.out = slurp(cap / "out");
  r.err = slurp(cap / "err");
  return r;
}

// Shared tiny-run overrides; every training invocation here finishes in seconds.
const std::string kTiny =
    " --set model.patch_size=8 --set model.image_size=16 --set model.embed_dim=16"
    " --set model.encoder_depth=1 --set model.decoder_depth=1 --set model.num_heads=2"
    " --set model.mlp_ratio=2 --set model.vocab_size=16"
    " --set data.synth_train=16 --set data.synth_test=8 --set data.synth_size=16"
    " --set schedule.epochs=1 --set train.batch=4";

}  // namespace

TEST_CASE("help and version exit cleanly; a bare invocation does not") {
  RunOut help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("pretrain") != std::string::npos);
  CHECK(help.out.find("plot") != std::string::npos);

  RunOut ver = run_cli("--version");
  CHECK(ver.code == 0);
  CHECK(ver.out.find("0.1.0") != std::string::npos);

  RunOut bare = run_cli("");
  CHECK(bare.code != 0);
}

TEST_CASE("configuration mistakes exit with code 2 and name the problem") {
  fs::path d = fresh_dir("mimlab-cli-cfg");
  RunOut unknown = run_cli("pretrain" + kTiny + " --set bogus.key=1 --out \"" + (d / "r1").string() + "\"");
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("kind=config") != std::string::npos);
  CHECK(unknown.err.find("bogus.key") != std::string::npos);

  RunOut missing = run_cli("pretrain --config /nonexistent/mimlab.conf --out \"" + (d / "r2").string() + "\"");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("kind=config") != std::string::npos);

  RunOut bad = run_cli("pretrain" + kTiny + " --set mask.ratio=2 --out \"" + (d / "r3").string() + "\"");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("kind=config") != std::string::npos);
  CHECK(bad.err.find("mask.ratio") != std::string::npos);
}

TEST_CASE("data problems exit with code 3 and numeric blowups with code 4") {
  fs::path d = fresh_dir("mimlab-cli-err");
  RunOut data = run_cli("pretrain" + kTiny +
                        " --set data.kind=folder --set data.manifest_train=/nonexistent/manifest.tsv"
                        " --out \"" + (d / "r1").string() + "\"");
  CHECK(data.code == 3);
  CHECK(data.err.find("kind=data") != std::string::npos);

  fs::path blow = d / "r2";
  RunOut numeric = run_cli("pretrain" + kTiny +
                           " --set optim.peak_lr=1e38 --set optim.weight_decay=0 --set schedule.warmup_frac=0"
                           " --out \"" + blow.string() + "\"");
  CHECK(numeric.code == 4);
  CHECK(numeric.err.find("kind=numeric") != std::string::npos);
  CHECK(fs::exists(blow / "diagnostic.smck"));
}

TEST_CASE("synth, pretrain, finetune, probe, and plot chain together") {
  fs::path d = fresh_dir("mimlab-cli-pipe");
  fs::path data = d / "data";
  RunOut synth = run_cli("synth --set data.synth_train=16 --set data.synth_test=8 --set data.synth_size=16"
                         " --set data.num_classes=4 --out \"" + data.string() + "\"");
  CHECK(synth.code == 0);
  REQUIRE(fs::exists(data / "train" / "manifest.tsv"));
  REQUIRE(fs::exists(data / "test" / "manifest.tsv"));

  fs::path pre = d / "pre";
  std::string folder_sets = " --set data.kind=folder --set data.manifest_train=\"" +
                            (data / "train" / "manifest.tsv").string() + "\" --set data.manifest_test=\"" +
                            (data / "test" / "manifest.tsv").string() + "\"";
  RunOut p = run_cli("pretrain" + kTiny + folder_sets + " --set train.log_every=1 --out \"" + pre.string() + "\"");
  CHECK(p.code == 0);
  CHECK(p.out.find("pretrain:") != std::string::npos);
  REQUIRE(fs::exists(pre / "metrics.csv"));
  REQUIRE(fs::exists(pre / "model.smck"));
  CHECK(fs::exists(pre / "vocab.pvoc"));
  CHECK(fs::exists(pre / "config.resolved.conf"));

  fs::path ft = d / "ft";
  RunOut f = run_cli("finetune" + kTiny + folder_sets + " --set train.checkpoint=\"" +
                     (pre / "model.smck").string() + "\" --out \"" + ft.string() + "\"");
  CHECK(f.code == 0);
  CHECK(f.out.find("top1_best") != std::string::npos);
  CHECK(fs::exists(ft / "eval.csv"));

  fs::path pb = d / "probe";
  RunOut pr = run_cli("probe" + kTiny + folder_sets + " --set train.checkpoint=\"" +
                      (pre / "model.smck").string() + "\" --out \"" + pb.string() + "\"");
  CHECK(pr.code == 0);
  CHECK(pr.out.find("probe: layer 0") != std::string::npos);
  CHECK(pr.out.find("probe: layer 1") != std::string::npos);

  RunOut pl1 = run_cli("plot --csv \"" + (pre / "metrics.csv").string() + "\" --out \"" + (d / "a.svg").string() + "\"");
  CHECK(pl1.code == 0);
  RunOut pl2 = run_cli("plot --csv \"" + (pre / "metrics.csv").string() + "\" --out \"" + (d / "b.svg").string() + "\"");
  CHECK(pl2.code == 0);
  CHECK(slurp(d / "a.svg") == slurp(d / "b.svg"));
  CHECK(slurp(d / "a.svg").find("<svg") == 0);

  RunOut plbad = run_cli("plot --csv /nonexistent.csv --out \"" + (d / "c.svg").string() + "\"");
  CHECK(plbad.code == 3);
}

TEST_CASE("fit-tokenizer saves a vocabulary and a k-means trace") {
  fs::path d = fresh_dir("mimlab-cli-tok");
  RunOut fit = run_cli("fit-tokenizer" + kTiny +
                       " --set tokenizer.kind=kmeans --set model.vocab_size=8 --set tokenizer.kmeans_iters=5"
                       " --out \"" + d.string() + "\"");
  CHECK(fit.code == 0);
  REQUIRE(fs::exists(d / "vocab.pvoc"));
  REQUIRE(fs::exists(d / "kmeans_trace.csv"));
  CsvTable t = read_csv((d / "kmeans_trace.csv").string());
  REQUIRE(!t.rows.empty());
  double prev = 1e300;
  for (const auto& row : t.rows) {
    double obj = std::stod(row[1]);
    CHECK(obj <= prev + 1e-9);
    prev = obj;
  }
}

TEST_CASE("sweep runs cells from config axes and reports a summary") {
  fs::path d = fresh_dir("mimlab-cli-sweep");
  RunOut sw = run_cli("sweep" + kTiny +
                      " --set sweep.epochs=[1] --set sweep.seeds=[5] --set sweep.eval_epochs=1"
                      " --out \"" + d.string() + "\"");
  CHECK(sw.code == 0);
  CHECK(sw.out.find("sweep: 1 cells") != std::string::npos);
  REQUIRE(fs::exists(d / "results.csv"));
  CsvTable t = read_csv((d / "results.csv").string());
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][7] == "ok");
}

TEST_CASE("gradcheck audits every op through the cli") {
  RunOut gc = run_cli("gradcheck --seed 7");
  CHECK(gc.code == 0);
  CHECK(gc.out.find("all passed") != std::string::npos);
  CHECK(gc.out.find("matmul") != std::string::npos);
  CHECK(gc.out.find("full_splitmask_step") != std::string::npos);
}
