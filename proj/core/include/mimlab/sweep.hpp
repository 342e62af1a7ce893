#pragma once

#include "mimlab/train.hpp"

namespace mimlab {

// Grid axes over the base run config. Empty axes inherit the base value.
// lambda_mim/lambda_nce are zipped into (mim, nce) pairs and must have equal
// lengths. Each cell pre-trains, then evaluates with `eval`.
struct SweepSpec {
  std::vector<double> fractions;
  std::vector<int64_t> epochs;
  std::vector<double> lambda_mim;
  std::vector<double> lambda_nce;
  std::vector<std::string> mask_kinds;
  std::vector<int64_t> seeds;
  std::string eval = "finetune";  // finetune | probe
  int64_t eval_epochs = 0;        // 0 = base schedule.epochs

  static SweepSpec from_config(Config& cfg);
  void to_config(Config& cfg) const;
  void validate() const;
};

struct SweepCell {
  std::string hash;  // content hash of the resolved cell config
  double fraction;
  int64_t epochs;
  double lambda_mim;
  double lambda_nce;
  MaskKind mask_kind;
  uint64_t seed;
  RunConfig pre;  // fully resolved pre-training config for this cell
};

struct SweepResult {
  std::string results_path;
  int64_t cells_total = 0;
  int64_t cells_run = 0;
  int64_t cells_skipped = 0;  // already finished (resume)
  int64_t cells_failed = 0;
};

// Deterministic cell enumeration (fraction-major, then epochs, lambda pair,
// mask kind, seed).
std::vector<SweepCell> sweep_cells(const RunConfig& base, const SweepSpec& spec);

// Runs every cell not already finished under out_dir/cells/<hash>, then
// assembles results.csv in enumeration order. A failing cell records its
// error and does not abort the sweep. Honors the MIMLAB_WORKERS environment
// variable (>= 1); results are identical for any worker count.
SweepResult sweep(const RunConfig& base, const SweepSpec& spec, const std::string& out_dir);

}  // namespace mimlab
