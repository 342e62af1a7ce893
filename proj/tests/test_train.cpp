#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mimlab/csv.hpp"
#include "mimlab/sweep.hpp"
#include "mimlab/train.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small enough that every case here runs in seconds on one core.
RunConfig tiny_rc() {
  RunConfig rc;
  rc.seed = 11;
  rc.model.patch_size = 8;
  rc.model.image_size = 16;
  rc.model.embed_dim = 16;
  rc.model.encoder_depth = 1;
  rc.model.decoder_depth = 1;
  rc.model.num_heads = 2;
  rc.model.mlp_ratio = 2;
  rc.model.vocab_size = 16;
  rc.data.synth_seed = 3;
  rc.data.synth_train = 16;
  rc.data.synth_test = 8;
  rc.data.num_classes = 4;
  rc.data.synth_size = 16;
  rc.schedule.epochs = 2;
  rc.schedule.cap = 5000;
  rc.batch = 4;
  rc.log_every = 1;
  return rc;
}

}  // namespace

TEST_CASE("run config round trips through the key-value form") {
  Config empty = Config::parse_string("");
  RunConfig rc = RunConfig::from_config(empty);
  empty.ensure_consumed();  // every key was either read or recorded

  Config a, b;
  rc.to_config(a);
  Config parsed = Config::parse_string(a.serialize());
  RunConfig back = RunConfig::from_config(parsed);
  back.to_config(b);
  CHECK(a.serialize() == b.serialize());
  CHECK(rc.peak_lr() == doctest::Approx(1.5e-3 * 64 / 256.0));
}

TEST_CASE("pretrain is bit-identical across reruns of the same config") {
  RunConfig rc = tiny_rc();
  fs::path da = fresh_dir("mimlab-pre-a");
  fs::path db = fresh_dir("mimlab-pre-b");
  PretrainResult ra = pretrain(rc, da.string());
  PretrainResult rb = pretrain(rc, db.string());

  CHECK(ra.epochs == 2);
  CHECK(ra.steps == 2 * 4);  // 16 images / batch 4, two epochs
  CHECK(std::isfinite(ra.final_total));
  CHECK(ra.final_total > 0);
  CHECK(slurp(ra.metrics_path) == slurp(rb.metrics_path));
  CHECK(slurp(ra.checkpoint_path) == slurp(rb.checkpoint_path));
  CHECK(slurp(ra.vocab_path) == slurp(rb.vocab_path));

  CsvTable t = read_csv(ra.metrics_path);
  CHECK(t.header == std::vector<std::string>{"step", "epoch", "lr", "loss_total", "loss_mim", "loss_nce", "images_per_sec"});
  REQUIRE(t.rows.size() == 8);  // log_every = 1
  for (const auto& row : t.rows) {
    CHECK(!row[3].empty());
    CHECK(!row[4].empty());
    CHECK(!row[5].empty());
    CHECK(row[6].empty());  // throughput column stays empty unless asked for
  }

  // a different seed moves the numbers
  RunConfig rc2 = tiny_rc();
  rc2.seed = 12;
  fs::path dc = fresh_dir("mimlab-pre-c");
  PretrainResult rc_res = pretrain(rc2, dc.string());
  CHECK(slurp(rc_res.metrics_path) != slurp(ra.metrics_path));
}

TEST_CASE("disabled loss terms leave their metrics cells empty") {
  RunConfig rc = tiny_rc();
  rc.schedule.epochs = 1;
  rc.lambda_mim = 0.0;  // match only
  fs::path d1 = fresh_dir("mimlab-pre-match");
  PretrainResult r1 = pretrain(rc, d1.string());
  CsvTable t1 = read_csv(r1.metrics_path);
  REQUIRE(!t1.rows.empty());
  for (const auto& row : t1.rows) {
    CHECK(row[4].empty());   // loss_mim
    CHECK(!row[5].empty());  // loss_nce
  }
  CHECK(r1.final_mim == 0.0);
  CHECK(r1.final_nce > 0);

  RunConfig rc2 = tiny_rc();
  rc2.schedule.epochs = 1;
  rc2.lambda_nce = 0.0;  // inpaint only
  fs::path d2 = fresh_dir("mimlab-pre-inpaint");
  PretrainResult r2 = pretrain(rc2, d2.string());
  CsvTable t2 = read_csv(r2.metrics_path);
  for (const auto& row : t2.rows) {
    CHECK(!row[4].empty());
    CHECK(row[5].empty());
  }
}

TEST_CASE("epoch budget scales pretrain epochs and respects the cap") {
  RunConfig rc = tiny_rc();
  rc.schedule.epochs = 4;
  rc.schedule.reference_size = 32;  // twice the 16-image split
  rc.log_every = 100;
  fs::path d = fresh_dir("mimlab-pre-budget");
  PretrainResult r = pretrain(rc, d.string());
  CHECK(r.epochs == 8);

  rc.schedule.cap = 3;
  fs::path d2 = fresh_dir("mimlab-pre-cap");
  PretrainResult r2 = pretrain(rc, d2.string());
  CHECK(r2.epochs == 3);
}

TEST_CASE("a numeric blowup saves a diagnostic checkpoint and surfaces as a numeric error") {
  RunConfig rc = tiny_rc();
  rc.optim.peak_lr = 1e38;  // guarantees overflow in the first matmul of step 2
  rc.optim.weight_decay = 0;
  rc.schedule.warmup_frac = 0;
  fs::path d = fresh_dir("mimlab-pre-blowup");
  try {
    pretrain(rc, d.string());
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Numeric);
  }
  CHECK(fs::exists(d / "diagnostic.smck"));
}

TEST_CASE("a fitted vocabulary can be reloaded by path and is shape-checked") {
  RunConfig rc = tiny_rc();
  rc.schedule.epochs = 1;
  fs::path d = fresh_dir("mimlab-pre-vocab");
  PretrainResult r = pretrain(rc, d.string());

  RunConfig rc2 = tiny_rc();
  rc2.schedule.epochs = 1;
  rc2.tokenizer.path = r.vocab_path;
  fs::path d2 = fresh_dir("mimlab-pre-vocab2");
  PretrainResult r2 = pretrain(rc2, d2.string());
  CHECK(slurp(r2.vocab_path) == slurp(r.vocab_path));  // reload then re-save

  RunConfig rc3 = tiny_rc();
  rc3.model.vocab_size = 32;  // disagrees with the saved vocabulary
  rc3.tokenizer.path = r.vocab_path;
  fs::path d3 = fresh_dir("mimlab-pre-vocab3");
  try {
    pretrain(rc3, d3.string());
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Config);
  }
}

TEST_CASE("finetune from random init beats chance on separable synthetic classes") {
  RunConfig rc = tiny_rc();
  rc.mode = RunMode::Finetune;
  rc.data.synth_train = 96;
  rc.data.synth_test = 48;
  rc.schedule.epochs = 6;
  rc.batch = 8;
  rc.optim.peak_lr = 3e-3;
  rc.log_every = 12;
  fs::path d = fresh_dir("mimlab-ft");
  FinetuneResult r = finetune(rc, d.string());
  REQUIRE(r.per_epoch.size() == 6);
  CHECK(r.top1_best > 0.25);  // 4 classes
  CHECK(r.top1_final == r.per_epoch.back());
  CHECK(r.top1_best == *std::max_element(r.per_epoch.begin(), r.per_epoch.end()));

  CsvTable ev = read_csv(r.eval_path);
  CHECK(ev.header == std::vector<std::string>{"tag", "seed", "metric", "value"});
  REQUIRE(ev.rows.size() == 6 + 2);  // per-epoch rows plus best and final
  CHECK(ev.rows[0][2] == "top1_epoch_0");
  CHECK(ev.rows[6][2] == "top1_best");
  CHECK(ev.rows[7][2] == "top1_final");
  CHECK(fs::exists(r.checkpoint_path));
}

TEST_CASE("finetune rejects a checkpoint whose architecture disagrees") {
  RunConfig rc = tiny_rc();
  rc.schedule.epochs = 1;
  rc.data.synth_train = 8;
  fs::path d = fresh_dir("mimlab-ft-mismatch-pre");
  PretrainResult pre = pretrain(rc, d.string());

  RunConfig ft = tiny_rc();
  ft.mode = RunMode::Finetune;
  ft.model.embed_dim = 32;
  ft.model.num_heads = 4;
  ft.schedule.epochs = 1;
  ft.checkpoint = pre.checkpoint_path;
  fs::path d2 = fresh_dir("mimlab-ft-mismatch");
  try {
    finetune(ft, d2.string());
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Config);
  }
}

TEST_CASE("probe reports one accuracy per encoder layer, deterministically") {
  RunConfig rc = tiny_rc();
  rc.schedule.epochs = 1;
  rc.data.synth_train = 32;
  fs::path d = fresh_dir("mimlab-probe-pre");
  PretrainResult pre = pretrain(rc, d.string());

  RunConfig pr = tiny_rc();
  pr.mode = RunMode::Probe;
  pr.data.synth_train = 32;
  pr.schedule.epochs = 2;
  pr.batch = 8;
  pr.checkpoint = pre.checkpoint_path;
  fs::path d1 = fresh_dir("mimlab-probe-1");
  ProbeResult r1 = probe(pr, d1.string());
  CHECK(r1.layers == std::vector<int>{0, 1});  // embeddings plus one encoder block
  REQUIRE(r1.top1.size() == 2);
  for (double a : r1.top1) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CsvTable ev = read_csv(r1.eval_path);
  REQUIRE(ev.rows.size() == 2);
  CHECK(ev.rows[0][2] == "probe_top1_layer0");
  CHECK(ev.rows[1][2] == "probe_top1_layer1");

  fs::path d2 = fresh_dir("mimlab-probe-2");
  ProbeResult r2 = probe(pr, d2.string());
  CHECK(slurp(r1.eval_path) == slurp(r2.eval_path));

  pr.probe_layer = 1;  // a single chosen layer
  fs::path d3 = fresh_dir("mimlab-probe-3");
  ProbeResult r3 = probe(pr, d3.string());
  CHECK(r3.layers == std::vector<int>{1});
  CHECK(r3.top1[0] == r1.top1[1]);
}

TEST_CASE("subset_fraction keeps a deterministic prefix of a seeded shuffle") {
  RunConfig rc = tiny_rc();
  rc.data.synth_train = 40;
  LabeledDataset ds = load_train_split(rc);
  LabeledDataset half = subset_fraction(ds, 0.5, 9);
  CHECK(half.images.size() == 20);
  CHECK(half.labels.size() == 20);
  LabeledDataset again = subset_fraction(ds, 0.5, 9);
  CHECK(half.labels == again.labels);
  for (size_t i = 0; i < half.images.size(); ++i) CHECK(half.images[i].pix == again.images[i].pix);

  LabeledDataset other = subset_fraction(ds, 0.5, 10);
  CHECK(half.labels != other.labels);  // different seed, different subset

  LabeledDataset all = subset_fraction(ds, 1.0, 9);
  CHECK(all.images.size() == ds.images.size());
  CHECK(all.labels == ds.labels);

  LabeledDataset tinyest = subset_fraction(ds, 0.001, 9);
  CHECK(tinyest.images.size() == 1);  // clamped to at least one image
  CHECK_THROWS_AS(subset_fraction(ds, 0.0, 9), Error);
  CHECK_THROWS_AS(subset_fraction(ds, 1.5, 9), Error);
}

TEST_CASE("sweep runs every cell, resumes finished ones, and records failures") {
  RunConfig base = tiny_rc();
  base.data.synth_train = 8;
  base.data.synth_test = 8;
  base.log_every = 100;

  SweepSpec spec;
  spec.fractions = {1.0};
  spec.epochs = {1, 2};
  spec.lambda_mim = {1.0};
  spec.lambda_nce = {1.0};
  spec.mask_kinds = {"block"};
  spec.seeds = {5};
  spec.eval = "finetune";
  spec.eval_epochs = 1;

  fs::path d = fresh_dir("mimlab-sweep");
  SweepResult r = sweep(base, spec, d.string());
  CHECK(r.cells_total == 2);
  CHECK(r.cells_run == 2);
  CHECK(r.cells_skipped == 0);
  CHECK(r.cells_failed == 0);
  CsvTable t = read_csv(r.results_path);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.header[0] == "cell");
  for (const auto& row : t.rows) {
    CHECK(row[7] == "ok");
    CHECK(!row[11].empty());  // top1_best filled in
  }

  // second invocation resumes: nothing left to run
  SweepResult r2 = sweep(base, spec, d.string());
  CHECK(r2.cells_run == 0);
  CHECK(r2.cells_skipped == 2);
  CHECK(slurp(r2.results_path) == slurp(r.results_path));

  // a bad cell records a failure without aborting its siblings: with a
  // reference size of 1 image, one training epoch resolves to a zero budget
  RunConfig base2 = base;
  base2.schedule.reference_size = 1;
  SweepSpec bad = spec;
  bad.epochs = {1, 8};
  fs::path d2 = fresh_dir("mimlab-sweep-bad");
  SweepResult r3 = sweep(base2, bad, d2.string());
  CHECK(r3.cells_total == 2);
  CHECK(r3.cells_failed == 1);
  CsvTable t3 = read_csv(r3.results_path);
  int ok = 0, failed = 0;
  for (const auto& row : t3.rows) {
    if (row[7] == "ok") ++ok;
    if (row[7] == "failed") {
      ++failed;
      CHECK(row[8] == "config");
      CHECK(row[11].empty());
    }
  }
  CHECK(ok == 1);
  CHECK(failed == 1);
}

TEST_CASE("folder data kind needs manifests and accuracy helper counts hits") {
  RunConfig rc = tiny_rc();
  rc.data.kind = "folder";
  CHECK_THROWS_AS(load_train_split(rc), Error);
  CHECK_THROWS_AS(load_test_split(rc), Error);

  Tensor logits = Tensor::from({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4});
  std::vector<int64_t> labels = {0, 1, 1};
  CHECK(accuracy_top1(logits, labels) == doctest::Approx(2.0 / 3.0));
}
