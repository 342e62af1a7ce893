#pragma once

#include <string>
#include <vector>

#include "mimlab/config.hpp"
#include "mimlab/data.hpp"
#include "mimlab/losses.hpp"
#include "mimlab/masking.hpp"
#include "mimlab/model.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/tokenizer.hpp"

namespace mimlab {

enum class RunMode { Pretrain, Finetune, Probe };
RunMode run_mode_from_name(const std::string& name);
const char* run_mode_name(RunMode m);

enum class MaskKind { Block, Uniform };
MaskKind mask_kind_from_name(const std::string& name);
const char* mask_kind_name(MaskKind k);

struct DataSpec {
  std::string kind = "synth";  // synth | folder
  std::string manifest_train;
  std::string manifest_test;
  int64_t num_classes = 4;
  uint64_t synth_seed = 1;
  int64_t synth_train = 512;
  int64_t synth_test = 256;
  int synth_size = 32;
  double fraction = 1.0;  // kept prefix of a seeded shuffle of the train split
  AugmentPolicy augment = AugmentPolicy::Basic;
};

struct TokenizerSpec {
  VocabKind kind = VocabKind::RandomProjection;
  bool center = false;
  uint64_t seed = 7;
  int64_t sample_budget = 200000;
  int kmeans_iters = 25;
  double kmeans_tol = 1e-4;
  std::string path;  // nonempty: load this vocabulary instead of fitting
};

struct MaskSpec {
  MaskKind kind = MaskKind::Block;
  double ratio = 0.5;
  int64_t min_block = 0;  // 0 = grid-scaled default
  int64_t max_block = 0;
};

struct OptimSpec {
  double base_lr = 1.5e-3;  // peak per 256 images of batch
  double peak_lr = 0;       // explicit peak; 0 derives base_lr * batch / 256
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ScheduleSpec {
  int64_t epochs = 100;        // reference epochs fed to the budget rule
  int64_t reference_size = 0;  // 0 = train size itself (budget is identity)
  int64_t cap = 5000;
  double warmup_frac = 0.05;
  double floor = 1e-6;
};

struct RunConfig {
  RunMode mode = RunMode::Pretrain;
  uint64_t seed = 42;
  std::string tag = "run";
  ModelConfig model;
  DataSpec data;
  TokenizerSpec tokenizer;
  MaskSpec mask;
  double tau = 0.2;
  double lambda_mim = 1.0;
  double lambda_nce = 1.0;
  OptimSpec optim;
  ScheduleSpec schedule;
  int64_t batch = 64;
  std::string checkpoint;  // finetune/probe starting point; empty = fresh init
  int probe_layer = -1;    // -1 = every encoder layer
  int64_t log_every = 10;
  int64_t checkpoint_every = 0;  // steps between snapshots; 0 = final only
  bool log_throughput = false;   // wall-clock column breaks bit-identity; off by default

  double peak_lr() const;
  void validate() const;

  // Reads every known key (recording defaults); callers then reject unknown
  // keys via cfg.ensure_consumed().
  static RunConfig from_config(Config& cfg);
  void to_config(Config& cfg) const;
};

struct PretrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  std::string vocab_path;
  int64_t steps = 0;
  int64_t epochs = 0;
  double final_total = 0;
  double final_mim = 0;
  double final_nce = 0;
};

struct FinetuneResult {
  double top1_best = 0;
  double top1_final = 0;
  std::vector<double> per_epoch;
  std::string eval_path;
  std::string checkpoint_path;
};

struct ProbeResult {
  std::vector<int> layers;
  std::vector<double> top1;
  std::string eval_path;
};

// Self-supervised optimization of total_loss with the epoch-budget rule;
// writes metrics.csv, the fitted vocabulary, and model.smck under out_dir.
PretrainResult pretrain(const RunConfig& rc, const std::string& out_dir);

// Supervised training of all weights behind a fresh classifier head; reports
// test top-1 after every epoch plus best and final.
FinetuneResult finetune(const RunConfig& rc, const std::string& out_dir);

// Linear classifiers on frozen mean-pooled features per encoder layer.
ProbeResult probe(const RunConfig& rc, const std::string& out_dir);

// Shared plumbing (exposed for tests and the cli).
LabeledDataset load_train_split(const RunConfig& rc);
LabeledDataset load_test_split(const RunConfig& rc);
LabeledDataset subset_fraction(const LabeledDataset& ds, double fraction, uint64_t seed);
Vocabulary obtain_vocabulary(const RunConfig& rc, const LabeledDataset& train, KMeansTrace* trace = nullptr);
MaskPlan draw_mask(const MaskSpec& spec, int rows, int cols, Rng& rng);
double accuracy_top1(const Tensor& logits, std::span<const int64_t> labels);

}  // namespace mimlab
