#include "mimlab/sweep.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "mimlab/csv.hpp"

namespace mimlab {

namespace fs = std::filesystem;

SweepSpec SweepSpec::from_config(Config& cfg) {
  SweepSpec s;
  s.fractions = cfg.get_double_list("sweep.fractions", {});
  s.epochs = cfg.get_int_list("sweep.epochs", {});
  s.lambda_mim = cfg.get_double_list("sweep.lambda_mim", {});
  s.lambda_nce = cfg.get_double_list("sweep.lambda_nce", {});
  s.mask_kinds = cfg.get_list("sweep.mask_kinds", {});
  s.seeds = cfg.get_int_list("sweep.seeds", {});
  s.eval = cfg.get_str("sweep.eval", "finetune");
  s.eval_epochs = cfg.get_int("sweep.eval_epochs", 0);
  return s;
}

void SweepSpec::to_config(Config& cfg) const {
  std::vector<std::string> f, e, lm, ln, sd;
  for (double v : fractions) f.push_back(format_double(v));
  for (int64_t v : epochs) e.push_back(std::to_string(v));
  for (double v : lambda_mim) lm.push_back(format_double(v));
  for (double v : lambda_nce) ln.push_back(format_double(v));
  for (int64_t v : seeds) sd.push_back(std::to_string(v));
  cfg.set_list("sweep.fractions", f);
  cfg.set_list("sweep.epochs", e);
  cfg.set_list("sweep.lambda_mim", lm);
  cfg.set_list("sweep.lambda_nce", ln);
  cfg.set_list("sweep.mask_kinds", mask_kinds);
  cfg.set_list("sweep.seeds", sd);
  cfg.set("sweep.eval", eval);
  cfg.set_int("sweep.eval_epochs", eval_epochs);
}

void SweepSpec::validate() const {
  if (lambda_mim.size() != lambda_nce.size())
    raise(ErrKind::Config, "sweep.lambda_mim and sweep.lambda_nce must pair up (equal lengths)");
  if (eval != "finetune" && eval != "probe") raise(ErrKind::Config, "sweep.eval must be finetune or probe");
  if (eval_epochs < 0) raise(ErrKind::Config, "sweep.eval_epochs must be >= 0");
  for (double v : fractions)
    if (!(v > 0 && v <= 1)) raise(ErrKind::Config, "sweep.fractions entries must lie in (0, 1]");
  for (int64_t v : epochs)
    if (v < 1) raise(ErrKind::Config, "sweep.epochs entries must be >= 1");
  for (const auto& m : mask_kinds) mask_kind_from_name(m);
}

std::vector<SweepCell> sweep_cells(const RunConfig& base, const SweepSpec& spec) {
  spec.validate();
  std::vector<double> fr = spec.fractions.empty() ? std::vector<double>{base.data.fraction} : spec.fractions;
  std::vector<int64_t> ep = spec.epochs.empty() ? std::vector<int64_t>{base.schedule.epochs} : spec.epochs;
  std::vector<std::pair<double, double>> lp;
  if (spec.lambda_mim.empty())
    lp.emplace_back(base.lambda_mim, base.lambda_nce);
  else
    for (size_t i = 0; i < spec.lambda_mim.size(); ++i) lp.emplace_back(spec.lambda_mim[i], spec.lambda_nce[i]);
  std::vector<MaskKind> mk;
  if (spec.mask_kinds.empty())
    mk.push_back(base.mask.kind);
  else
    for (const auto& m : spec.mask_kinds) mk.push_back(mask_kind_from_name(m));
  std::vector<uint64_t> sd;
  if (spec.seeds.empty())
    sd.push_back(base.seed);
  else
    for (int64_t s : spec.seeds) sd.push_back(static_cast<uint64_t>(s));

  std::vector<SweepCell> cells;
  for (double f : fr)
    for (int64_t e : ep)
      for (auto [lm, ln] : lp)
        for (MaskKind m : mk)
          for (uint64_t s : sd) {
            SweepCell c;
            c.fraction = f;
            c.epochs = e;
            c.lambda_mim = lm;
            c.lambda_nce = ln;
            c.mask_kind = m;
            c.seed = s;
            c.pre = base;
            c.pre.mode = RunMode::Pretrain;
            c.pre.data.fraction = f;
            c.pre.schedule.epochs = e;
            c.pre.lambda_mim = lm;
            c.pre.lambda_nce = ln;
            c.pre.mask.kind = m;
            c.pre.seed = s;
            c.pre.validate();
            Config cc;
            c.pre.to_config(cc);
            cc.set("sweep.eval", spec.eval);
            cc.set_int("sweep.eval_epochs", spec.eval_epochs);
            c.hash = cc.content_hash();
            c.pre.tag = "cell-" + c.hash;
            cells.push_back(std::move(c));
          }
  return cells;
}

namespace {

const std::vector<std::string> kResultHeader = {
    "cell",       "fraction", "epochs",    "lambda_mim", "lambda_nce",     "mask_kind", "seed",
    "status",     "error",    "pre_steps", "pre_loss",   "top1_best",      "top1_final"};

std::vector<std::string> run_cell(const SweepCell& cell, const SweepSpec& spec, const std::string& cell_dir) {
  std::vector<std::string> row = {cell.hash,
                                  format_double(cell.fraction),
                                  std::to_string(cell.epochs),
                                  format_double(cell.lambda_mim),
                                  format_double(cell.lambda_nce),
                                  mask_kind_name(cell.mask_kind),
                                  std::to_string(cell.seed),
                                  "ok",
                                  "",
                                  "",
                                  "",
                                  "",
                                  ""};
  try {
    fs::create_directories(cell_dir);
    Config pc;
    cell.pre.to_config(pc);
    pc.save((fs::path(cell_dir) / "config.pretrain.conf").string());
    PretrainResult pre = pretrain(cell.pre, (fs::path(cell_dir) / "pre").string());
    row[9] = std::to_string(pre.steps);
    row[10] = format_double(pre.final_total);

    RunConfig ev = cell.pre;
    ev.checkpoint = pre.checkpoint_path;
    if (spec.eval_epochs > 0) ev.schedule.epochs = spec.eval_epochs;
    if (spec.eval == "finetune") {
      ev.mode = RunMode::Finetune;
      Config ec;
      ev.to_config(ec);
      ec.save((fs::path(cell_dir) / "config.eval.conf").string());
      FinetuneResult fr = finetune(ev, (fs::path(cell_dir) / "eval").string());
      row[11] = format_double(fr.top1_best);
      row[12] = format_double(fr.top1_final);
    } else {
      ev.mode = RunMode::Probe;
      Config ec;
      ev.to_config(ec);
      ec.save((fs::path(cell_dir) / "config.eval.conf").string());
      ProbeResult pr = probe(ev, (fs::path(cell_dir) / "eval").string());
      double best = 0;
      for (double a : pr.top1) best = std::max(best, a);
      row[11] = format_double(best);
      row[12] = format_double(pr.top1.back());
    }
  } catch (const Error& err) {
    row[7] = "failed";
    row[8] = err_kind_name(err.kind());
  } catch (const std::exception&) {
    row[7] = "failed";
    row[8] = "unexpected";
  }
  return row;
}

int worker_count() {
  const char* env = std::getenv("MIMLAB_WORKERS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

}  // namespace

SweepResult sweep(const RunConfig& base, const SweepSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::vector<SweepCell> cells = sweep_cells(base, spec);
  fs::create_directories(fs::path(out_dir) / "cells");
  SweepResult res;
  res.cells_total = static_cast<int64_t>(cells.size());

  std::vector<int> todo;
  for (size_t i = 0; i < cells.size(); ++i) {
    fs::path done = fs::path(out_dir) / "cells" / cells[i].hash / "result.csv";
    bool finished = false;
    if (fs::exists(done)) {
      CsvTable t = read_csv(done.string());
      finished = t.rows.size() == 1 && t.header == kResultHeader && t.rows[0][7] == "ok";
    }
    if (finished)
      ++res.cells_skipped;
    else
      todo.push_back(static_cast<int>(i));
  }

  std::atomic<size_t> next{0};
  auto work = [&]() {
    for (;;) {
      size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      const SweepCell& cell = cells[static_cast<size_t>(todo[k])];
      std::string cell_dir = (fs::path(out_dir) / "cells" / cell.hash).string();
      std::vector<std::string> row = run_cell(cell, spec, cell_dir);
      CsvWriter w((fs::path(cell_dir) / "result.csv").string(), kResultHeader);
      w.row(row);
      w.flush();
      std::printf("cell %s %s\n", cell.hash.c_str(), row[7].c_str());
      std::fflush(stdout);
    }
  };
  int workers = std::min<int>(worker_count(), static_cast<int>(todo.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  res.results_path = (fs::path(out_dir) / "results.csv").string();
  CsvWriter out(res.results_path, kResultHeader);
  for (const auto& cell : cells) {
    CsvTable t = read_csv((fs::path(out_dir) / "cells" / cell.hash / "result.csv").string());
    if (t.rows.size() != 1 || t.header != kResultHeader)
      raise(ErrKind::Data, "malformed cell result for " + cell.hash);
    out.row(t.rows[0]);
    if (t.rows[0][7] == "failed") ++res.cells_failed;
  }
  out.flush();
  res.cells_run = static_cast<int64_t>(todo.size());
  return res;
}

}  // namespace mimlab
