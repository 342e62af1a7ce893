#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mimlab/model.hpp"

namespace mimlab {

// Linear warmup 0 -> peak over `warmup` steps, then a half-cosine from peak
// to `floor` at `total`. Endpoints are exact; never negative.
double cosine_lr(int64_t step, int64_t warmup, int64_t total, double peak, double floor);

// Constant-update rule: epochs = min(cap, round(reference_epochs *
// reference_size / dataset_size)).
int64_t epoch_budget(int64_t dataset_size, int64_t reference_size, int64_t reference_epochs, int64_t cap);
// Fraction form of the same rule: epochs = min(cap, round(reference_epochs /
// fraction)); exact for published subset scalings (0.1 -> 10x, 0.01 -> 100x).
int64_t epoch_budget_fraction(double fraction, int64_t reference_epochs, int64_t cap);

struct EpochPreset {
  int64_t train_size;
  int64_t epochs;
};
// Published per-dataset pre-training schedules, keyed by dataset name
// (imagenet, inat18, inat19, food101, cars, clipart, painting, sketch,
// ade20k, coco). These override the budget formula where rounding to a
// published figure is ambiguous.
std::optional<EpochPreset> epoch_preset(const std::string& dataset);

// Decoupled weight decay: decayed parameters shrink multiplicatively by
// (1 - lr*wd) before the bias-corrected moment update. Parameters flagged
// decay=false (positional embeddings, layernorm affines, mask token) are
// never decayed.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update using the gradients accumulated on `tape`; missing
  // gradients count as zero. The parameter list must be the same (count and
  // shapes) on every call.
  void step(std::vector<ParamDef>& params, Tape& tape, double lr, double weight_decay);

  int64_t step_count() const { return t_; }
  // Per-parameter flags from the most recent step, for instrumentation:
  // true iff a decay factor was applied to that tensor.
  const std::vector<uint8_t>& last_decay_applied() const { return decay_applied_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  std::vector<uint8_t> decay_applied_;
  int64_t t_ = 0;
  double b1_, b2_, eps_;
};

}  // namespace mimlab
