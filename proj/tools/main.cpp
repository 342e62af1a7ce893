#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimlab/csv.hpp"
#include "mimlab/gradsuite.hpp"
#include "mimlab/plot.hpp"
#include "mimlab/sweep.hpp"
#include "mimlab/train.hpp"

namespace fs = std::filesystem;
using namespace mimlab;

namespace {

int exit_code(ErrKind k) {
  switch (k) {
    case ErrKind::Config: return 2;
    case ErrKind::Data:
    case ErrKind::Io:
    case ErrKind::Capacity: return 3;
    case ErrKind::Numeric: return 4;
    default: return 1;
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "config file of dotted key = value lines");
    app->add_option("--set", sets, "override, key=value; repeatable")->take_all();
  }

  Config load() const {
    Config cfg = config_path.empty() ? Config::parse_string("", "<cli>") : Config::parse_file(config_path);
    for (const auto& a : sets) cfg.apply_override(a);
    return cfg;
  }
};

// Forces the mode, resolves every key, rejects leftovers, and freezes the
// resolved state to out_dir/config.resolved.conf.
RunConfig resolve_run(Common& common, const char* mode, const std::string& out_dir) {
  Config cfg = common.load();
  cfg.set("run.mode", mode);
  RunConfig rc = RunConfig::from_config(cfg);
  cfg.ensure_consumed();
  rc.validate();
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "config.resolved.conf").string());
  return rc;
}

int cmd_synth(Common& common, const std::string& out_dir) {
  Config cfg = common.load();
  uint64_t seed = static_cast<uint64_t>(cfg.get_int("data.synth_seed", 1));
  int64_t n_train = cfg.get_int("data.synth_train", 512);
  int64_t n_test = cfg.get_int("data.synth_test", 256);
  int64_t classes = cfg.get_int("data.num_classes", 4);
  int size = static_cast<int>(cfg.get_int("data.synth_size", 32));
  cfg.ensure_consumed();

  auto [train, test] = synth_generate(seed, n_train, n_test, classes, size);
  save_dataset(train, (fs::path(out_dir) / "train").string());
  save_dataset(test, (fs::path(out_dir) / "test").string());
  std::printf("synth: %lld train + %lld test images, %lld classes, %dx%d, at %s\n",
              (long long)n_train, (long long)n_test, (long long)classes, size, size, out_dir.c_str());
  return 0;
}

int cmd_fit_tokenizer(Common& common, const std::string& out_dir) {
  Config cfg = common.load();
  cfg.set("run.mode", "pretrain");
  RunConfig rc = RunConfig::from_config(cfg);
  cfg.ensure_consumed();
  rc.tokenizer.path.clear();  // always fit, never load
  LabeledDataset train = load_train_split(rc);
  train = subset_fraction(train, rc.data.fraction, rc.seed);

  KMeansTrace trace;
  Vocabulary vocab = obtain_vocabulary(rc, train, &trace);
  fs::create_directories(out_dir);
  std::string vocab_path = (fs::path(out_dir) / "vocab.pvoc").string();
  save_vocabulary(vocab, vocab_path);
  if (!trace.objective.empty()) {
    CsvWriter w((fs::path(out_dir) / "kmeans_trace.csv").string(), {"iter", "objective"});
    for (size_t i = 0; i < trace.objective.size(); ++i)
      w.row({std::to_string(i), format_double(trace.objective[i])});
  }
  std::printf("tokenizer: kind=%s V=%lld d=%lld -> %s\n", vocab_kind_name(vocab.kind), (long long)vocab.V,
              (long long)vocab.d, vocab_path.c_str());
  return 0;
}

int cmd_pretrain(Common& common, const std::string& out_dir) {
  RunConfig rc = resolve_run(common, "pretrain", out_dir);
  PretrainResult r = pretrain(rc, out_dir);
  std::printf("pretrain: %lld steps over %lld epochs, loss_total=%.6f (mim=%.6f nce=%.6f)\n",
              (long long)r.steps, (long long)r.epochs, r.final_total, r.final_mim, r.final_nce);
  std::printf("pretrain: checkpoint %s\n", r.checkpoint_path.c_str());
  return 0;
}

int cmd_finetune(Common& common, const std::string& out_dir) {
  RunConfig rc = resolve_run(common, "finetune", out_dir);
  FinetuneResult r = finetune(rc, out_dir);
  std::printf("finetune: top1_best=%.4f top1_final=%.4f over %zu epochs\n", r.top1_best, r.top1_final,
              r.per_epoch.size());
  return 0;
}

int cmd_probe(Common& common, const std::string& out_dir) {
  RunConfig rc = resolve_run(common, "probe", out_dir);
  ProbeResult r = probe(rc, out_dir);
  for (size_t i = 0; i < r.layers.size(); ++i)
    std::printf("probe: layer %d top1=%.4f\n", r.layers[i], r.top1[i]);
  return 0;
}

int cmd_sweep(Common& common, const std::string& out_dir) {
  Config cfg = common.load();
  cfg.set("run.mode", "pretrain");
  RunConfig base = RunConfig::from_config(cfg);
  SweepSpec spec = SweepSpec::from_config(cfg);
  cfg.ensure_consumed();
  base.validate();
  spec.validate();
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "config.resolved.conf").string());
  SweepResult r = sweep(base, spec, out_dir);
  std::printf("sweep: %lld cells (%lld run, %lld resumed, %lld failed) -> %s\n", (long long)r.cells_total,
              (long long)r.cells_run, (long long)r.cells_skipped, (long long)r.cells_failed,
              r.results_path.c_str());
  return r.cells_failed == 0 ? 0 : 1;
}

int cmd_gradcheck(uint64_t seed) {
  auto reports = gradient_suite(seed);
  bool all = true;
  for (const auto& r : reports) {
    std::printf("%-22s max_rel_err=%.3e tol=%.0e %s\n", r.op.c_str(), r.max_rel_err, r.tol,
                r.passed ? "ok" : "FAIL");
    all = all && r.passed;
  }
  std::printf("gradcheck: %zu checks, %s\n", reports.size(), all ? "all passed" : "FAILURES");
  return all ? 0 : 4;
}

int cmd_plot(const std::string& csv, const std::string& kind, const std::string& out) {
  render_plot(csv, kind, out);
  std::printf("plot: %s (%s) -> %s\n", csv.c_str(), kind.c_str(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for masked-image self-supervised pre-training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  std::string out_dir = "out";
  uint64_t gc_seed = 12345;
  std::string plot_csv, plot_kind = "loss_curve", plot_out;

  auto add_run = [&](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    common.attach(sub);
    sub->add_option("--out", out_dir, "output directory");
    return sub;
  };

  CLI::App* synth = add_run("synth", "generate the procedural shapes dataset to disk");
  CLI::App* fit = add_run("fit-tokenizer", "fit a patch vocabulary and save it");
  CLI::App* pre = add_run("pretrain", "self-supervised pre-training");
  CLI::App* ft = add_run("finetune", "supervised fine-tuning from a checkpoint (or scratch)");
  CLI::App* pr = add_run("probe", "linear probes on frozen per-layer features");
  CLI::App* sw = add_run("sweep", "grid of pre-train + eval cells with resume");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference audit of every differentiable op");
  gc->add_option("--seed", gc_seed, "rng seed");

  CLI::App* pl = app.add_subcommand("plot", "render a csv to svg");
  pl->add_option("--csv", plot_csv, "input csv")->required();
  pl->add_option("--kind", plot_kind, "loss_curve | sweep_curve | probe_curve");
  pl->add_option("--out", plot_out, "output svg path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(common, out_dir);
    if (fit->parsed()) return cmd_fit_tokenizer(common, out_dir);
    if (pre->parsed()) return cmd_pretrain(common, out_dir);
    if (ft->parsed()) return cmd_finetune(common, out_dir);
    if (pr->parsed()) return cmd_probe(common, out_dir);
    if (sw->parsed()) return cmd_sweep(common, out_dir);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (pl->parsed()) return cmd_plot(plot_csv, plot_kind, plot_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error kind=%s msg=\"%s\"\n", err_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error kind=unknown msg=\"%s\"\n", e.what());
    return 1;
  }
  return 0;
}
