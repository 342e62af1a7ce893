#include "mimlab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "mimlab/csv.hpp"

namespace mimlab {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

RunMode run_mode_from_name(const std::string& name) {
  if (name == "pretrain") return RunMode::Pretrain;
  if (name == "finetune") return RunMode::Finetune;
  if (name == "probe") return RunMode::Probe;
  raise(ErrKind::Config, "unknown run mode: " + name);
}

const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::Pretrain: return "pretrain";
    case RunMode::Finetune: return "finetune";
    default: return "probe";
  }
}

MaskKind mask_kind_from_name(const std::string& name) {
  if (name == "block") return MaskKind::Block;
  if (name == "uniform") return MaskKind::Uniform;
  raise(ErrKind::Config, "unknown mask kind: " + name);
}

const char* mask_kind_name(MaskKind k) { return k == MaskKind::Block ? "block" : "uniform"; }

double RunConfig::peak_lr() const {
  if (optim.peak_lr > 0) return optim.peak_lr;
  return optim.base_lr * static_cast<double>(batch) / 256.0;
}

void RunConfig::validate() const {
  model.validate();
  if (batch < 1) raise(ErrKind::Config, "train.batch must be >= 1");
  if (!(tau > 0)) raise(ErrKind::Config, "loss.tau must be > 0");
  if (lambda_mim < 0 || lambda_nce < 0) raise(ErrKind::Config, "loss weights must be >= 0");
  if (mode == RunMode::Pretrain) {
    if (lambda_mim == 0 && lambda_nce == 0) raise(ErrKind::Config, "loss.lambda_mim and loss.lambda_nce are both zero");
    if (model.mode == ModelMode::Beit && lambda_nce != 0)
      raise(ErrKind::Config, "beit mode has no descriptor pair; set loss.lambda_nce = 0");
  }
  if (!(mask.ratio > 0 && mask.ratio < 1)) raise(ErrKind::Config, "mask.ratio must lie in (0, 1)");
  if (mask.min_block < 0 || mask.max_block < 0) raise(ErrKind::Config, "mask block bounds must be >= 0");
  if (mask.min_block > 0 && mask.max_block > 0 && mask.min_block > mask.max_block)
    raise(ErrKind::Config, "mask.min_block exceeds mask.max_block");
  if (!(data.fraction > 0 && data.fraction <= 1)) raise(ErrKind::Config, "data.fraction must lie in (0, 1]");
  if (data.kind != "synth" && data.kind != "folder") raise(ErrKind::Config, "data.kind must be synth or folder");
  if (schedule.epochs < 1) raise(ErrKind::Config, "schedule.epochs must be >= 1");
  if (schedule.cap < 1) raise(ErrKind::Config, "schedule.cap must be >= 1");
  if (schedule.reference_size < 0) raise(ErrKind::Config, "schedule.reference_size must be >= 0");
  if (!(schedule.warmup_frac >= 0 && schedule.warmup_frac <= 1))
    raise(ErrKind::Config, "schedule.warmup_frac must lie in [0, 1]");
  if (schedule.floor < 0) raise(ErrKind::Config, "schedule.floor must be >= 0");
  if (!(peak_lr() > 0)) raise(ErrKind::Config, "peak learning rate must be > 0");
  if (optim.weight_decay < 0) raise(ErrKind::Config, "optim.weight_decay must be >= 0");
  if (tokenizer.sample_budget < 1) raise(ErrKind::Config, "tokenizer.sample_budget must be >= 1");
  if (tokenizer.kmeans_iters < 1) raise(ErrKind::Config, "tokenizer.kmeans_iters must be >= 1");
  if (tokenizer.kmeans_tol < 0) raise(ErrKind::Config, "tokenizer.kmeans_tol must be >= 0");
  if (log_every < 1) raise(ErrKind::Config, "train.log_every must be >= 1");
  if (checkpoint_every < 0) raise(ErrKind::Config, "train.checkpoint_every must be >= 0");
  if (probe_layer < -1 || probe_layer > model.encoder_depth)
    raise(ErrKind::Config, "train.probe_layer must lie in [-1, encoder_depth]");
}

RunConfig RunConfig::from_config(Config& cfg) {
  RunConfig rc;
  rc.mode = run_mode_from_name(cfg.get_str("run.mode", "pretrain"));
  rc.seed = static_cast<uint64_t>(cfg.get_int("run.seed", 42));
  rc.tag = cfg.get_str("run.tag", "run");

  rc.model.patch_size = static_cast<int>(cfg.get_int("model.patch_size", 8));
  rc.model.image_size = static_cast<int>(cfg.get_int("model.image_size", 32));
  rc.model.embed_dim = cfg.get_int("model.embed_dim", 64);
  rc.model.encoder_depth = static_cast<int>(cfg.get_int("model.encoder_depth", 4));
  rc.model.decoder_depth = static_cast<int>(cfg.get_int("model.decoder_depth", 2));
  rc.model.num_heads = static_cast<int>(cfg.get_int("model.num_heads", 4));
  rc.model.mlp_ratio = cfg.get_int("model.mlp_ratio", 4);
  rc.model.vocab_size = cfg.get_int("model.vocab_size", 512);
  rc.model.mode = model_mode_from_name(cfg.get_str("model.mode", "splitmask"));
  rc.model.normalize_descriptor = cfg.get_bool("model.normalize_descriptor", true);
  rc.model.ln_eps = cfg.get_double("model.ln_eps", 1e-6);

  rc.data.kind = cfg.get_str("data.kind", "synth");
  rc.data.manifest_train = cfg.get_str("data.manifest_train", "");
  rc.data.manifest_test = cfg.get_str("data.manifest_test", "");
  rc.data.num_classes = cfg.get_int("data.num_classes", 4);
  rc.data.synth_seed = static_cast<uint64_t>(cfg.get_int("data.synth_seed", 1));
  rc.data.synth_train = cfg.get_int("data.synth_train", 512);
  rc.data.synth_test = cfg.get_int("data.synth_test", 256);
  rc.data.synth_size = static_cast<int>(cfg.get_int("data.synth_size", 32));
  rc.data.fraction = cfg.get_double("data.fraction", 1.0);
  rc.data.augment = augment_policy_from_name(cfg.get_str("data.augment", "basic"));

  rc.tokenizer.kind = vocab_kind_from_name(cfg.get_str("tokenizer.kind", "random_projection"));
  rc.tokenizer.center = cfg.get_bool("tokenizer.center", false);
  rc.tokenizer.seed = static_cast<uint64_t>(cfg.get_int("tokenizer.seed", 7));
  rc.tokenizer.sample_budget = cfg.get_int("tokenizer.sample_budget", 200000);
  rc.tokenizer.kmeans_iters = static_cast<int>(cfg.get_int("tokenizer.kmeans_iters", 25));
  rc.tokenizer.kmeans_tol = cfg.get_double("tokenizer.kmeans_tol", 1e-4);
  rc.tokenizer.path = cfg.get_str("tokenizer.path", "");

  rc.mask.kind = mask_kind_from_name(cfg.get_str("mask.kind", "block"));
  rc.mask.ratio = cfg.get_double("mask.ratio", 0.5);
  rc.mask.min_block = cfg.get_int("mask.min_block", 0);
  rc.mask.max_block = cfg.get_int("mask.max_block", 0);

  rc.tau = cfg.get_double("loss.tau", 0.2);
  rc.lambda_mim = cfg.get_double("loss.lambda_mim", 1.0);
  rc.lambda_nce = cfg.get_double("loss.lambda_nce", 1.0);

  rc.optim.base_lr = cfg.get_double("optim.base_lr", 1.5e-3);
  rc.optim.peak_lr = cfg.get_double("optim.peak_lr", 0.0);
  rc.optim.weight_decay = cfg.get_double("optim.weight_decay", 0.05);
  rc.optim.beta1 = cfg.get_double("optim.beta1", 0.9);
  rc.optim.beta2 = cfg.get_double("optim.beta2", 0.999);
  rc.optim.eps = cfg.get_double("optim.eps", 1e-8);

  rc.schedule.epochs = cfg.get_int("schedule.epochs", 100);
  rc.schedule.reference_size = cfg.get_int("schedule.reference_size", 0);
  rc.schedule.cap = cfg.get_int("schedule.cap", 5000);
  rc.schedule.warmup_frac = cfg.get_double("schedule.warmup_frac", 0.05);
  rc.schedule.floor = cfg.get_double("schedule.floor", 1e-6);

  rc.batch = cfg.get_int("train.batch", 64);
  rc.checkpoint = cfg.get_str("train.checkpoint", "");
  rc.probe_layer = static_cast<int>(cfg.get_int("train.probe_layer", -1));
  rc.log_every = cfg.get_int("train.log_every", 10);
  rc.checkpoint_every = cfg.get_int("train.checkpoint_every", 0);
  rc.log_throughput = cfg.get_bool("train.log_throughput", false);
  return rc;
}

void RunConfig::to_config(Config& cfg) const {
  cfg.set("run.mode", run_mode_name(mode));
  cfg.set_int("run.seed", static_cast<int64_t>(seed));
  cfg.set("run.tag", tag);
  cfg.set_int("model.patch_size", model.patch_size);
  cfg.set_int("model.image_size", model.image_size);
  cfg.set_int("model.embed_dim", model.embed_dim);
  cfg.set_int("model.encoder_depth", model.encoder_depth);
  cfg.set_int("model.decoder_depth", model.decoder_depth);
  cfg.set_int("model.num_heads", model.num_heads);
  cfg.set_int("model.mlp_ratio", model.mlp_ratio);
  cfg.set_int("model.vocab_size", model.vocab_size);
  cfg.set("model.mode", model_mode_name(model.mode));
  cfg.set_bool("model.normalize_descriptor", model.normalize_descriptor);
  cfg.set_double("model.ln_eps", model.ln_eps);
  cfg.set("data.kind", data.kind);
  cfg.set("data.manifest_train", data.manifest_train);
  cfg.set("data.manifest_test", data.manifest_test);
  cfg.set_int("data.num_classes", data.num_classes);
  cfg.set_int("data.synth_seed", static_cast<int64_t>(data.synth_seed));
  cfg.set_int("data.synth_train", data.synth_train);
  cfg.set_int("data.synth_test", data.synth_test);
  cfg.set_int("data.synth_size", data.synth_size);
  cfg.set_double("data.fraction", data.fraction);
  cfg.set("data.augment", augment_policy_name(data.augment));
  cfg.set("tokenizer.kind", vocab_kind_name(tokenizer.kind));
  cfg.set_bool("tokenizer.center", tokenizer.center);
  cfg.set_int("tokenizer.seed", static_cast<int64_t>(tokenizer.seed));
  cfg.set_int("tokenizer.sample_budget", tokenizer.sample_budget);
  cfg.set_int("tokenizer.kmeans_iters", tokenizer.kmeans_iters);
  cfg.set_double("tokenizer.kmeans_tol", tokenizer.kmeans_tol);
  cfg.set("tokenizer.path", tokenizer.path);
  cfg.set("mask.kind", mask_kind_name(mask.kind));
  cfg.set_double("mask.ratio", mask.ratio);
  cfg.set_int("mask.min_block", mask.min_block);
  cfg.set_int("mask.max_block", mask.max_block);
  cfg.set_double("loss.tau", tau);
  cfg.set_double("loss.lambda_mim", lambda_mim);
  cfg.set_double("loss.lambda_nce", lambda_nce);
  cfg.set_double("optim.base_lr", optim.base_lr);
  cfg.set_double("optim.peak_lr", optim.peak_lr);
  cfg.set_double("optim.weight_decay", optim.weight_decay);
  cfg.set_double("optim.beta1", optim.beta1);
  cfg.set_double("optim.beta2", optim.beta2);
  cfg.set_double("optim.eps", optim.eps);
  cfg.set_int("schedule.epochs", schedule.epochs);
  cfg.set_int("schedule.reference_size", schedule.reference_size);
  cfg.set_int("schedule.cap", schedule.cap);
  cfg.set_double("schedule.warmup_frac", schedule.warmup_frac);
  cfg.set_double("schedule.floor", schedule.floor);
  cfg.set_int("train.batch", batch);
  cfg.set("train.checkpoint", checkpoint);
  cfg.set_int("train.probe_layer", probe_layer);
  cfg.set_int("train.log_every", log_every);
  cfg.set_int("train.checkpoint_every", checkpoint_every);
  cfg.set_bool("train.log_throughput", log_throughput);
}

LabeledDataset load_train_split(const RunConfig& rc) {
  if (rc.data.kind == "synth")
    return synth_generate(rc.data.synth_seed, rc.data.synth_train, rc.data.synth_test, rc.data.num_classes,
                          rc.data.synth_size)
        .first;
  if (rc.data.manifest_train.empty()) raise(ErrKind::Config, "data.manifest_train is required for data.kind = folder");
  return load_image_folder(rc.data.manifest_train, rc.data.num_classes, "train");
}

LabeledDataset load_test_split(const RunConfig& rc) {
  if (rc.data.kind == "synth")
    return synth_generate(rc.data.synth_seed, rc.data.synth_train, rc.data.synth_test, rc.data.num_classes,
                          rc.data.synth_size)
        .second;
  if (rc.data.manifest_test.empty()) raise(ErrKind::Config, "data.manifest_test is required for data.kind = folder");
  return load_image_folder(rc.data.manifest_test, rc.data.num_classes, "test");
}

LabeledDataset subset_fraction(const LabeledDataset& ds, double fraction, uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) raise(ErrKind::Config, "fraction must lie in (0, 1]");
  int64_t n = static_cast<int64_t>(ds.images.size());
  if (fraction == 1.0 || n == 0) return ds;
  int64_t k = std::clamp<int64_t>(std::llround(fraction * static_cast<double>(n)), 1, n);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed_str(seed, "subset"));
  rng.shuffle(idx);
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  for (int64_t i : idx) {
    out.images.push_back(ds.images[static_cast<size_t>(i)]);
    out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
  }
  return out;
}

Vocabulary obtain_vocabulary(const RunConfig& rc, const LabeledDataset& train, KMeansTrace* trace) {
  int64_t d = rc.model.patch_dim();
  if (!rc.tokenizer.path.empty()) {
    Vocabulary v = load_vocabulary(rc.tokenizer.path);
    if (v.V != rc.model.vocab_size || v.d != d)
      raise(ErrKind::Config, "vocabulary " + rc.tokenizer.path + " does not match model.vocab_size/patch size");
    return v;
  }
  switch (rc.tokenizer.kind) {
    case VocabKind::RandomProjection:
      return build_random_projection(rc.model.vocab_size, d, rc.tokenizer.seed, rc.tokenizer.center);
    case VocabKind::RandomPatches:
      return build_random_patches(train, rc.model.vocab_size, rc.model.patch_size, rc.tokenizer.seed,
                                  rc.tokenizer.center);
    default:
      return build_kmeans(train, rc.model.vocab_size, rc.model.patch_size, rc.tokenizer.sample_budget,
                          rc.tokenizer.kmeans_iters, rc.tokenizer.seed, rc.tokenizer.center, trace);
  }
}

MaskPlan draw_mask(const MaskSpec& spec, int rows, int cols, Rng& rng) {
  if (spec.kind == MaskKind::Uniform) return uniform_mask_grid(rows, cols, spec.ratio, rng);
  auto [lo, hi] = scaled_block_bounds(static_cast<int64_t>(rows) * cols);
  if (spec.min_block > 0) lo = spec.min_block;
  if (spec.max_block > 0) hi = spec.max_block;
  if (lo > hi) raise(ErrKind::Config, "mask block bounds are inverted for this grid");
  return block_mask(rows, cols, spec.ratio, lo, hi, rng);
}

double accuracy_top1(const Tensor& logits, std::span<const int64_t> labels) {
  if (logits.dim(0) != static_cast<int64_t>(labels.size())) raise(ErrKind::Shape, "labels do not match logit rows");
  std::vector<int64_t> pred = ops::argmax_rows(logits);
  int64_t hit = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

struct LossCells {
  double total = 0, mim = 0, nce = 0;
  bool has_mim = false, has_nce = false;
};

// Augmented (or center-resized) patch rows for the chosen images.
Tensor batch_patches(const LabeledDataset& ds, std::span<const int64_t> idx, const RunConfig& rc, int64_t epoch,
                     bool train_augment) {
  int64_t n = rc.model.n_patches(), d = rc.model.patch_dim();
  int64_t B = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros({B * n, d});
  auto dst = out.f32_mut();
  for (int64_t b = 0; b < B; ++b) {
    int64_t i = idx[static_cast<size_t>(b)];
    Rng arng(mix_seed_str(rc.seed, "augment", static_cast<uint64_t>(epoch), static_cast<uint64_t>(i)));
    AugmentPolicy policy = train_augment ? rc.data.augment : AugmentPolicy::None;
    Image im = augment(ds.images[static_cast<size_t>(i)], policy, rc.model.image_size, arng);
    PatchSequence ps = patchify(im, rc.model.patch_size);
    auto src = ps.patches.f32();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<size_t>(b * n * d));
  }
  return out;
}

std::vector<int64_t> batch_labels(const LabeledDataset& ds, std::span<const int64_t> idx) {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(ds.labels[static_cast<size_t>(i)]);
  return out;
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch, uint64_t seed, int64_t epoch) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed_str(seed, "order", static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> out;
  for (int64_t at = 0; at < n; at += batch) {
    int64_t end = std::min(n, at + batch);
    out.emplace_back(order.begin() + at, order.begin() + end);
  }
  return out;
}

std::string fmt_metric(double v) { return format_double(v); }

class StepLogger {
 public:
  StepLogger(const std::string& path, bool throughput)
      : writer_(path, {"step", "epoch", "lr", "loss_total", "loss_mim", "loss_nce", "images_per_sec"}),
        throughput_(throughput),
        window_start_(Clock::now()) {}

  void log(int64_t step, int64_t epoch, double lr, const LossCells& cells, int64_t images) {
    images_ += images;
    std::string ips;
    if (throughput_) {
      double secs = std::chrono::duration<double>(Clock::now() - window_start_).count();
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", secs > 0 ? static_cast<double>(images_) / secs : 0.0);
      ips = buf;
    }
    writer_.row({std::to_string(step), std::to_string(epoch), fmt_metric(lr), fmt_metric(cells.total),
                 cells.has_mim ? fmt_metric(cells.mim) : "", cells.has_nce ? fmt_metric(cells.nce) : "", ips});
    writer_.flush();
    images_ = 0;
    window_start_ = Clock::now();
  }

  void count(int64_t images) { images_ += images; }

 private:
  CsvWriter writer_;
  bool throughput_;
  int64_t images_ = 0;
  Clock::time_point window_start_;
};

void save_diagnostic(const Model& model, const std::string& out_dir, int64_t step, const std::string& what) {
  std::map<std::string, std::string> meta = {{"run.abort_step", std::to_string(step)}, {"run.abort_reason", what}};
  save_checkpoint((fs::path(out_dir) / "diagnostic.smck").string(), model, meta);
}

int64_t effective_epochs(const RunConfig& rc, int64_t train_size) {
  int64_t ref = rc.schedule.reference_size > 0 ? rc.schedule.reference_size : train_size;
  int64_t e = epoch_budget(train_size, ref, rc.schedule.epochs, rc.schedule.cap);
  if (e < 1)
    raise(ErrKind::Config, "epoch budget resolves to zero epochs (reference smaller than the dataset); raise schedule.epochs");
  return e;
}

}  // namespace

PretrainResult pretrain(const RunConfig& rc, const std::string& out_dir) {
  rc.validate();
  if (rc.mode != RunMode::Pretrain) raise(ErrKind::Usage, "pretrain() needs run.mode = pretrain");
  fs::create_directories(out_dir);
  LabeledDataset ds = subset_fraction(load_train_split(rc), rc.data.fraction, rc.seed);
  int64_t n = static_cast<int64_t>(ds.images.size());
  if (n == 0) raise(ErrKind::Data, "training split is empty");
  Vocabulary vocab = obtain_vocabulary(rc, ds);
  PretrainResult res;
  res.vocab_path = (fs::path(out_dir) / "vocab.pvoc").string();
  save_vocabulary(vocab, res.vocab_path);

  ModelConfig mc = rc.model;
  mc.num_classes = 0;
  Model model(mc, rc.seed);

  res.epochs = effective_epochs(rc, n);
  int64_t steps_per_epoch = (n + rc.batch - 1) / rc.batch;
  int64_t total_steps = res.epochs * steps_per_epoch;
  int64_t warmup = std::clamp<int64_t>(std::llround(rc.schedule.warmup_frac * static_cast<double>(total_steps)), 0,
                                       total_steps);
  double peak = rc.peak_lr();
  AdamW opt(rc.optim.beta1, rc.optim.beta2, rc.optim.eps);
  res.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  StepLogger logger(res.metrics_path, rc.log_throughput);

  int rows = mc.grid_side(), cols = mc.grid_side();
  int64_t gstep = 0;
  LossCells cells;
  for (int64_t epoch = 0; epoch < res.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(n, rc.batch, rc.seed, epoch)) {
      ++gstep;
      int64_t B = static_cast<int64_t>(idx.size());
      Tensor patches = batch_patches(ds, idx, rc, epoch, true);
      std::vector<MaskPlan> plans;
      plans.reserve(idx.size());
      for (int64_t i : idx) {
        Rng mrng(mix_seed_str(rc.seed, "mask", static_cast<uint64_t>(epoch), static_cast<uint64_t>(i)));
        plans.push_back(draw_mask(rc.mask, rows, cols, mrng));
      }
      double lr = cosine_lr(gstep, warmup, total_steps, peak, rc.schedule.floor);
      try {
        Tape tape;
        cells = LossCells{};
        Tensor total;
        if (mc.mode == ModelMode::SplitMask) {
          SplitForward fwd = model.forward_splitmask(&tape, patches, plans, vocab);
          LossBreakdown lb = total_loss(&tape, fwd.a, fwd.b, fwd.targets, rc.tau, rc.lambda_mim, rc.lambda_nce);
          total = lb.total;
          cells.total = lb.total.item();
          cells.has_mim = rc.lambda_mim > 0;
          cells.has_nce = rc.lambda_nce > 0;
          if (cells.has_mim) cells.mim = lb.mim.item();
          if (cells.has_nce) cells.nce = lb.nce.item();
        } else {
          BeitForward fwd = model.forward_beit(&tape, patches, plans, vocab);
          Tensor mim = mim_loss_single(&tape, fwd.logits, fwd.positions, fwd.targets, B);
          total = ops::scale(&tape, mim, rc.lambda_mim);
          cells.total = total.item();
          cells.has_mim = true;
          cells.mim = mim.item();
        }
        tape.backward(total);
        opt.step(model.params(), tape, lr, rc.optim.weight_decay);
      } catch (const Error& err) {
        if (err.kind() == ErrKind::Numeric) save_diagnostic(model, out_dir, gstep, err.what());
        throw;
      }
      logger.count(B);
      if (gstep % rc.log_every == 0 || gstep == total_steps) logger.log(gstep, epoch, lr, cells, 0);
      if (rc.checkpoint_every > 0 && gstep % rc.checkpoint_every == 0 && gstep != total_steps) {
        std::map<std::string, std::string> meta = {{"run.tag", rc.tag},
                                                   {"run.mode", "pretrain"},
                                                   {"run.step", std::to_string(gstep)},
                                                   {"run.version", std::string(kVersion)}};
        save_checkpoint((fs::path(out_dir) / ("ckpt_step" + std::to_string(gstep) + ".smck")).string(), model, meta);
      }
    }
  }
  res.steps = gstep;
  res.final_total = cells.total;
  res.final_mim = cells.has_mim ? cells.mim : 0.0;
  res.final_nce = cells.has_nce ? cells.nce : 0.0;
  res.checkpoint_path = (fs::path(out_dir) / "model.smck").string();
  std::map<std::string, std::string> meta = {
      {"run.tag", rc.tag},
      {"run.mode", "pretrain"},
      {"run.seed", std::to_string(rc.seed)},
      {"run.steps", std::to_string(res.steps)},
      {"run.epochs", std::to_string(res.epochs)},
      {"run.loss_total", fmt_metric(res.final_total)},
      {"run.version", std::string(kVersion)},
  };
  save_checkpoint(res.checkpoint_path, model, meta);
  return res;
}

namespace {

double evaluate_classifier(const Model& model, const LabeledDataset& test, const RunConfig& rc) {
  int64_t n = static_cast<int64_t>(test.images.size());
  if (n == 0) raise(ErrKind::Data, "test split is empty");
  int64_t hit = 0;
  for (int64_t at = 0; at < n; at += rc.batch) {
    int64_t end = std::min(n, at + rc.batch);
    std::vector<int64_t> idx(static_cast<size_t>(end - at));
    std::iota(idx.begin(), idx.end(), at);
    Tensor patches = batch_patches(test, idx, rc, 0, false);
    Tensor logits = model.class_logits(nullptr, patches, end - at);
    std::vector<int64_t> pred = ops::argmax_rows(logits);
    for (size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == test.labels[static_cast<size_t>(idx[i])]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

FinetuneResult finetune(const RunConfig& rc, const std::string& out_dir) {
  rc.validate();
  if (rc.mode != RunMode::Finetune) raise(ErrKind::Usage, "finetune() needs run.mode = finetune");
  fs::create_directories(out_dir);
  LabeledDataset train = subset_fraction(load_train_split(rc), rc.data.fraction, rc.seed);
  LabeledDataset test = load_test_split(rc);
  if (train.num_classes != test.num_classes) raise(ErrKind::Data, "train/test class counts disagree");
  int64_t n = static_cast<int64_t>(train.images.size());
  if (n == 0) raise(ErrKind::Data, "training split is empty");

  ModelConfig mc = rc.model;
  mc.num_classes = 0;
  Model base = rc.checkpoint.empty() ? Model(mc, rc.seed) : load_checkpoint_matching(rc.checkpoint, mc);
  Model model = base.with_classes(train.num_classes, mix_seed_str(rc.seed, "head"));

  int64_t epochs = rc.schedule.epochs;
  int64_t steps_per_epoch = (n + rc.batch - 1) / rc.batch;
  int64_t total_steps = epochs * steps_per_epoch;
  int64_t warmup = std::clamp<int64_t>(std::llround(rc.schedule.warmup_frac * static_cast<double>(total_steps)), 0,
                                       total_steps);
  double peak = rc.peak_lr();
  AdamW opt(rc.optim.beta1, rc.optim.beta2, rc.optim.eps);
  StepLogger logger((fs::path(out_dir) / "metrics.csv").string(), rc.log_throughput);
  FinetuneResult res;
  res.eval_path = (fs::path(out_dir) / "eval.csv").string();
  CsvWriter eval(res.eval_path, {"tag", "seed", "metric", "value"});

  int64_t gstep = 0;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& idx : epoch_batches(n, rc.batch, rc.seed, epoch)) {
      ++gstep;
      Tensor patches = batch_patches(train, idx, rc, epoch, true);
      std::vector<int64_t> labels = batch_labels(train, idx);
      double lr = cosine_lr(gstep, warmup, total_steps, peak, rc.schedule.floor);
      LossCells cells;
      try {
        Tape tape;
        Tensor logits = model.class_logits(&tape, patches, static_cast<int64_t>(idx.size()));
        Tensor loss = ops::cross_entropy_logits(&tape, logits, labels);
        cells.total = loss.item();
        tape.backward(loss);
        opt.step(model.params(), tape, lr, rc.optim.weight_decay);
      } catch (const Error& err) {
        if (err.kind() == ErrKind::Numeric) save_diagnostic(model, out_dir, gstep, err.what());
        throw;
      }
      logger.count(static_cast<int64_t>(idx.size()));
      if (gstep % rc.log_every == 0 || gstep == total_steps) logger.log(gstep, epoch, lr, cells, 0);
    }
    double acc = evaluate_classifier(model, test, rc);
    res.per_epoch.push_back(acc);
    eval.row({rc.tag, std::to_string(rc.seed), "top1_epoch_" + std::to_string(epoch), fmt_metric(acc)});
    eval.flush();
  }
  res.top1_final = res.per_epoch.back();
  res.top1_best = *std::max_element(res.per_epoch.begin(), res.per_epoch.end());
  eval.row({rc.tag, std::to_string(rc.seed), "top1_best", fmt_metric(res.top1_best)});
  eval.row({rc.tag, std::to_string(rc.seed), "top1_final", fmt_metric(res.top1_final)});
  eval.flush();
  res.checkpoint_path = (fs::path(out_dir) / "model.smck").string();
  std::map<std::string, std::string> meta = {
      {"run.tag", rc.tag},
      {"run.mode", "finetune"},
      {"run.seed", std::to_string(rc.seed)},
      {"run.top1_best", fmt_metric(res.top1_best)},
      {"run.top1_final", fmt_metric(res.top1_final)},
      {"run.version", std::string(kVersion)},
  };
  save_checkpoint(res.checkpoint_path, model, meta);
  return res;
}

namespace {

// Frozen mean-pooled features for every image of a split, one row each.
Tensor layer_features(const Model& model, const LabeledDataset& ds, const RunConfig& rc, int layer) {
  int64_t n = static_cast<int64_t>(ds.images.size());
  Tensor out = Tensor::zeros({n, model.cfg().embed_dim});
  auto dst = out.f32_mut();
  int64_t d = model.cfg().embed_dim;
  for (int64_t at = 0; at < n; at += rc.batch) {
    int64_t end = std::min(n, at + rc.batch);
    std::vector<int64_t> idx(static_cast<size_t>(end - at));
    std::iota(idx.begin(), idx.end(), at);
    Tensor patches = batch_patches(ds, idx, rc, 0, false);
    Tensor f = model.features_at_layer(nullptr, patches, end - at, layer);
    auto src = f.f32();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<size_t>(at * d));
  }
  return out;
}

}  // namespace

ProbeResult probe(const RunConfig& rc, const std::string& out_dir) {
  rc.validate();
  if (rc.mode != RunMode::Probe) raise(ErrKind::Usage, "probe() needs run.mode = probe");
  fs::create_directories(out_dir);
  LabeledDataset train = subset_fraction(load_train_split(rc), rc.data.fraction, rc.seed);
  LabeledDataset test = load_test_split(rc);
  int64_t n = static_cast<int64_t>(train.images.size());
  if (n == 0) raise(ErrKind::Data, "training split is empty");

  ModelConfig mc = rc.model;
  mc.num_classes = 0;
  Model model = rc.checkpoint.empty() ? Model(mc, rc.seed) : load_checkpoint_matching(rc.checkpoint, mc);
  model.set_requires_grad(false);

  ProbeResult res;
  res.eval_path = (fs::path(out_dir) / "eval.csv").string();
  CsvWriter eval(res.eval_path, {"tag", "seed", "metric", "value"});
  std::vector<int> layers;
  if (rc.probe_layer >= 0)
    layers.push_back(rc.probe_layer);
  else
    for (int l = 0; l <= mc.encoder_depth; ++l) layers.push_back(l);

  int64_t epochs = rc.schedule.epochs;
  int64_t steps_per_epoch = (n + rc.batch - 1) / rc.batch;
  int64_t total_steps = epochs * steps_per_epoch;
  int64_t warmup = std::clamp<int64_t>(std::llround(rc.schedule.warmup_frac * static_cast<double>(total_steps)), 0,
                                       total_steps);
  double peak = rc.peak_lr();
  int64_t C = train.num_classes, D = mc.embed_dim;

  for (int layer : layers) {
    Tensor ftrain = layer_features(model, train, rc, layer);
    Tensor ftest = layer_features(model, test, rc, layer);
    std::vector<ParamDef> head;
    Tensor w = Tensor::zeros({D, C});
    Tensor b = Tensor::zeros({C});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    head.push_back({"probe.w", w, true});
    head.push_back({"probe.b", b, true});
    AdamW opt(rc.optim.beta1, rc.optim.beta2, rc.optim.eps);
    int64_t gstep = 0;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
      std::vector<int64_t> order(static_cast<size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      Rng rng(mix_seed_str(rc.seed, "probe-order", static_cast<uint64_t>(layer), static_cast<uint64_t>(epoch)));
      rng.shuffle(order);
      for (int64_t at = 0; at < n; at += rc.batch) {
        ++gstep;
        int64_t end = std::min(n, at + rc.batch);
        std::vector<int64_t> idx(order.begin() + at, order.begin() + end);
        Tape tape;
        Tensor fb = ops::gather_rows(&tape, ftrain, idx);
        Tensor logits = ops::add_bias(&tape, ops::matmul(&tape, fb, head[0].value), head[1].value);
        std::vector<int64_t> labels = batch_labels(train, idx);
        Tensor loss = ops::cross_entropy_logits(&tape, logits, labels);
        tape.backward(loss);
        double lr = cosine_lr(gstep, warmup, total_steps, peak, rc.schedule.floor);
        opt.step(head, tape, lr, rc.optim.weight_decay);
      }
    }
    Tensor logits = ops::add_bias(nullptr, ops::matmul(nullptr, ftest, head[0].value), head[1].value);
    double acc = accuracy_top1(logits, test.labels);
    res.layers.push_back(layer);
    res.top1.push_back(acc);
    eval.row({rc.tag, std::to_string(rc.seed), "probe_top1_layer" + std::to_string(layer), fmt_metric(acc)});
    eval.flush();
  }
  return res;
}

}  // namespace mimlab
