#pragma once

#include <map>
#include <string>
#include <vector>

#include "mimlab/masking.hpp"
#include "mimlab/ops.hpp"
#include "mimlab/tokenizer.hpp"

namespace mimlab {

enum class ModelMode { SplitMask, Beit };

ModelMode model_mode_from_name(const std::string& name);
const char* model_mode_name(ModelMode m);

struct ModelConfig {
  int patch_size = 8;
  int image_size = 32;
  int64_t embed_dim = 64;
  int encoder_depth = 4;
  int decoder_depth = 2;  // splitmask mode only
  int num_heads = 4;
  int64_t mlp_ratio = 4;
  int64_t vocab_size = 512;
  ModelMode mode = ModelMode::SplitMask;
  int64_t num_classes = 0;  // > 0 attaches a classifier head
  bool normalize_descriptor = true;
  double ln_eps = 1e-6;

  int grid_side() const { return image_size / patch_size; }
  int64_t n_patches() const { return static_cast<int64_t>(grid_side()) * grid_side(); }
  int64_t patch_dim() const { return static_cast<int64_t>(3) * patch_size * patch_size; }
  void validate() const;
  bool same_architecture(const ModelConfig& other) const;  // ignores num_classes
};

struct ParamDef {
  std::string name;
  Tensor value;
  bool decay;  // false for positional embeddings, layernorm affines, mask token
};

// Optional forward-pass instrumentation.
struct Instrument {
  bool capture_attention = false;
  std::vector<int64_t> encoder_lengths;  // per-image token count of each encoder call
  std::vector<Tensor> attention;         // softmax outputs, [B*heads, m, m]
};

struct BranchOutput {
  Tensor decoder_out;              // [B*n, embed_dim]
  Tensor logits;                   // [B*miss, vocab], rows follow `positions`
  Tensor descriptors;              // [B, embed_dim]
  std::vector<int64_t> positions;  // missing grid positions, per image, ascending
};

struct SplitForward {
  BranchOutput a;  // encodes observed set, predicts masked positions
  BranchOutput b;  // encodes masked set, predicts observed positions
  std::vector<int64_t> targets;  // [B*n] visual words in grid order
};

struct BeitForward {
  Tensor logits;  // [B*miss, vocab]
  std::vector<int64_t> positions;
  std::vector<int64_t> targets;
};

// ViT with absolute positional embeddings, pre-norm blocks, GELU MLPs, no
// class token (pooling is always the mean over positions). splitmask mode
// adds a decoder of the same width plus a learnable mask token; both modes
// share the patch embedding, encoder, and MIM head parameter layout.
class Model {
 public:
  Model() = default;
  // Fresh initialization: truncated normal (sigma 0.02, clip 2) for weights
  // and embeddings, zeros for biases, ones for layernorm gains.
  Model(const ModelConfig& cfg, uint64_t seed, DType dtype = DType::F32);

  const ModelConfig& cfg() const { return cfg_; }
  DType dtype() const { return dtype_; }

  std::vector<ParamDef>& params() { return params_; }
  const std::vector<ParamDef>& params() const { return params_; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void set_requires_grad(bool v);

  int64_t param_count() const;
  static int64_t param_count(const ModelConfig& cfg);
  // Attention-matrix FLOPs per image (score + context products, forward),
  // assuming the pipeline's 50% split in splitmask mode.
  static int64_t attention_flops(const ModelConfig& cfg);

  // Copies shared parameters into a model with a (re)initialized classifier
  // head for num_classes outputs.
  Model with_classes(int64_t num_classes, uint64_t head_seed) const;

  // Patch projection plus positional embeddings for B concatenated images:
  // [B*n, patch_dim] -> [B*n, embed_dim].
  Tensor embed_all(Tape* tape, const Tensor& patches, int64_t B) const;

  // Pre-norm encoder blocks only (no final layernorm): depth 0 is identity.
  Tensor encode(Tape* tape, const Tensor& tokens, int64_t B, int64_t m, Instrument* instr = nullptr) const;

  // Full-length sequence where observed positions carry encoder outputs and
  // missing ones carry mask_token + positional embedding. vis/miss partition
  // {0..n-1} per image.
  Tensor insert_mask_tokens(Tape* tape, const Tensor& encoded, int64_t B, const std::vector<std::vector<int64_t>>& vis,
                            const std::vector<std::vector<int64_t>>& miss) const;

  BranchOutput decode_branch(Tape* tape, const Tensor& full_seq, int64_t B,
                             const std::vector<std::vector<int64_t>>& miss, Instrument* instr = nullptr) const;

  SplitForward forward_splitmask(Tape* tape, const Tensor& patches, const std::vector<MaskPlan>& plans,
                                 const Vocabulary& vocab, Instrument* instr = nullptr) const;
  BeitForward forward_beit(Tape* tape, const Tensor& patches, const std::vector<MaskPlan>& plans,
                           const Vocabulary& vocab, Instrument* instr = nullptr) const;

  // Mean-pooled activations after `layer` encoder blocks on the full
  // unmasked sequence (layer 0 = pooled patch embeddings); the encoder's
  // final layernorm applies only at layer == encoder_depth. Returns [B, D].
  Tensor features_at_layer(Tape* tape, const Tensor& patches, int64_t B, int layer,
                           Instrument* instr = nullptr) const;

  // Classifier head on features_at_layer(encoder_depth): [B, num_classes].
  Tensor class_logits(Tape* tape, const Tensor& patches, int64_t B) const;

 private:
  Tensor block(Tape* tape, Tensor x, int64_t B, int64_t m, const std::string& prefix, Instrument* instr) const;
  Tensor final_ln(Tape* tape, const Tensor& x, const std::string& prefix) const;
  void add_param(const std::string& name, Tensor value, bool decay);

  ModelConfig cfg_;
  DType dtype_ = DType::F32;
  std::vector<ParamDef> params_;
  std::map<std::string, size_t> index_;
};

// Checkpoint: "SMCK", u32 version, u64 metadata length, metadata text
// (key=value lines; includes the model config), u64 record count, then per
// parameter: u32 name length, name, u8 dtype, u32 rank, u64 dims, u64 payload
// bytes, raw little-endian payload. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& model, const std::map<std::string, std::string>& extra_meta);
Model load_checkpoint(const std::string& path, std::map<std::string, std::string>* meta_out = nullptr);
// Raises a config-mismatch error unless the stored architecture equals
// `expected` (num_classes excluded from the comparison).
Model load_checkpoint_matching(const std::string& path, const ModelConfig& expected,
                               std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace mimlab
