#include "mimlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mimlab {

ModelMode model_mode_from_name(const std::string& name) {
  if (name == "splitmask") return ModelMode::SplitMask;
  if (name == "beit") return ModelMode::Beit;
  raise(ErrKind::Config, "unknown model mode: " + name);
}

const char* model_mode_name(ModelMode m) { return m == ModelMode::SplitMask ? "splitmask" : "beit"; }

void ModelConfig::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    raise(ErrKind::Config, "image size must be a positive multiple of patch size");
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
    raise(ErrKind::Config, "embed_dim must be a positive multiple of num_heads");
  if (encoder_depth < 0) raise(ErrKind::Config, "encoder_depth must be >= 0");
  if (mode == ModelMode::SplitMask && decoder_depth < 1)
    raise(ErrKind::Config, "splitmask mode needs decoder_depth >= 1");
  if (mlp_ratio < 1) raise(ErrKind::Config, "mlp_ratio must be >= 1");
  if (vocab_size < 2) raise(ErrKind::Config, "vocab_size must be >= 2");
  if (num_classes < 0) raise(ErrKind::Config, "num_classes must be >= 0");
  if (ln_eps <= 0) raise(ErrKind::Config, "ln_eps must be > 0");
}

bool ModelConfig::same_architecture(const ModelConfig& other) const {
  return patch_size == other.patch_size && image_size == other.image_size && embed_dim == other.embed_dim &&
         encoder_depth == other.encoder_depth && decoder_depth == other.decoder_depth &&
         num_heads == other.num_heads && mlp_ratio == other.mlp_ratio && vocab_size == other.vocab_size &&
         mode == other.mode && normalize_descriptor == other.normalize_descriptor && ln_eps == other.ln_eps;
}

void Model::add_param(const std::string& name, Tensor value, bool decay) {
  value.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, std::move(value), decay});
}

namespace {

Tensor trunc_normal_tensor(Shape shape, Rng& rng, DType dt, double sigma = 0.02) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  if (dt == DType::F32)
    for (auto& v : t.f32_mut()) v = static_cast<float>(rng.trunc_normal(sigma));
  else
    for (auto& v : t.f64_mut()) v = rng.trunc_normal(sigma);
  return t;
}

}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t seed, DType dtype) : cfg_(cfg), dtype_(dtype) {
  cfg_.validate();
  Rng rng(mix_seed_str(seed, "model-init"));
  int64_t D = cfg_.embed_dim, V = cfg_.vocab_size, pd = cfg_.patch_dim(), n = cfg_.n_patches();
  int64_t H = cfg_.mlp_ratio * D;

  add_param("embed.w", trunc_normal_tensor({pd, D}, rng, dtype_), true);
  add_param("embed.b", Tensor::zeros({D}, dtype_), true);
  add_param("pos", trunc_normal_tensor({n, D}, rng, dtype_), false);
  add_param("mask_token", trunc_normal_tensor({D}, rng, dtype_), false);

  auto add_block = [&](const std::string& p) {
    add_param(p + ".ln1.g", Tensor::full({D}, 1.0, dtype_), false);
    add_param(p + ".ln1.b", Tensor::zeros({D}, dtype_), false);
    for (const char* w : {"wq", "wk", "wv", "wo"}) add_param(p + ".attn." + w, trunc_normal_tensor({D, D}, rng, dtype_), true);
    for (const char* b : {"bq", "bk", "bv", "bo"}) add_param(p + ".attn." + b, Tensor::zeros({D}, dtype_), true);
    add_param(p + ".ln2.g", Tensor::full({D}, 1.0, dtype_), false);
    add_param(p + ".ln2.b", Tensor::zeros({D}, dtype_), false);
    add_param(p + ".mlp.w1", trunc_normal_tensor({D, H}, rng, dtype_), true);
    add_param(p + ".mlp.b1", Tensor::zeros({H}, dtype_), true);
    add_param(p + ".mlp.w2", trunc_normal_tensor({H, D}, rng, dtype_), true);
    add_param(p + ".mlp.b2", Tensor::zeros({D}, dtype_), true);
  };

  for (int i = 0; i < cfg_.encoder_depth; ++i) add_block("enc" + std::to_string(i));
  add_param("enc.ln.g", Tensor::full({D}, 1.0, dtype_), false);
  add_param("enc.ln.b", Tensor::zeros({D}, dtype_), false);
  if (cfg_.mode == ModelMode::SplitMask) {
    for (int i = 0; i < cfg_.decoder_depth; ++i) add_block("dec" + std::to_string(i));
    add_param("dec.ln.g", Tensor::full({D}, 1.0, dtype_), false);
    add_param("dec.ln.b", Tensor::zeros({D}, dtype_), false);
  }
  add_param("head.mim.w", trunc_normal_tensor({D, V}, rng, dtype_), true);
  add_param("head.mim.b", Tensor::zeros({V}, dtype_), true);
  if (cfg_.num_classes > 0) {
    add_param("head.cls.w", trunc_normal_tensor({D, cfg_.num_classes}, rng, dtype_), true);
    add_param("head.cls.b", Tensor::zeros({cfg_.num_classes}, dtype_), true);
  }
}

Tensor& Model::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) raise(ErrKind::Usage, "unknown parameter: " + name);
  return params_[it->second].value;
}

const Tensor& Model::at(const std::string& name) const { return const_cast<Model*>(this)->at(name); }

void Model::set_requires_grad(bool v) {
  for (auto& p : params_) p.value.set_requires_grad(v);
}

int64_t Model::param_count() const {
  int64_t c = 0;
  for (const auto& p : params_) c += p.value.numel();
  return c;
}

int64_t Model::param_count(const ModelConfig& cfg) {
  int64_t D = cfg.embed_dim, V = cfg.vocab_size, pd = cfg.patch_dim(), n = cfg.n_patches();
  int64_t H = cfg.mlp_ratio * D;
  int64_t block = 4 * D            // two layernorm affines
                  + 4 * D * D + 4 * D  // attention projections
                  + D * H + H + H * D + D;  // mlp
  int64_t total = pd * D + D + n * D + D;   // embed + pos + mask token
  total += cfg.encoder_depth * block + 2 * D;
  if (cfg.mode == ModelMode::SplitMask) total += cfg.decoder_depth * block + 2 * D;
  total += D * V + V;
  if (cfg.num_classes > 0) total += D * cfg.num_classes + cfg.num_classes;
  return total;
}

int64_t Model::attention_flops(const ModelConfig& cfg) {
  int64_t n = cfg.n_patches(), D = cfg.embed_dim;
  auto per_layer = [D](int64_t m) { return 4 * m * m * D; };  // scores + context
  if (cfg.mode == ModelMode::Beit) return cfg.encoder_depth * per_layer(n);
  int64_t vb = n / 2, va = n - vb;  // the pipeline's 50% split
  return cfg.encoder_depth * (per_layer(va) + per_layer(vb)) + cfg.decoder_depth * 2 * per_layer(n);
}

Model Model::with_classes(int64_t num_classes, uint64_t head_seed) const {
  if (num_classes <= 0) raise(ErrKind::Config, "with_classes: need num_classes > 0");
  ModelConfig cfg = cfg_;
  cfg.num_classes = num_classes;
  Model out(cfg, head_seed, dtype_);
  for (auto& p : out.params_) {
    if (p.name.rfind("head.cls.", 0) == 0) continue;
    p.value = at(p.name).clone();
    p.value.set_requires_grad(true);
  }
  return out;
}

Tensor Model::embed_all(Tape* tape, const Tensor& patches, int64_t B) const {
  int64_t n = cfg_.n_patches();
  if (patches.rank() != 2 || patches.dim(0) != B * n || patches.dim(1) != cfg_.patch_dim())
    raise(ErrKind::Shape, "embed_all: expected [" + std::to_string(B * n) + ", " + std::to_string(cfg_.patch_dim()) +
                              "], got " + shape_str(patches.shape()));
  Tensor x = patches.dtype() == dtype_ ? patches : patches.astype(dtype_);
  Tensor proj = ops::add_bias(tape, ops::matmul(tape, x, at("embed.w")), at("embed.b"));
  std::vector<int64_t> tiled(static_cast<size_t>(B * n));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < n; ++p) tiled[static_cast<size_t>(b * n + p)] = p;
  return ops::add(tape, proj, ops::gather_rows(tape, at("pos"), tiled));
}

Tensor Model::block(Tape* tape, Tensor x, int64_t B, int64_t m, const std::string& prefix, Instrument* instr) const {
  int64_t D = cfg_.embed_dim, H = cfg_.num_heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(D / H));
  Tensor h = ops::layernorm(tape, x, at(prefix + ".ln1.g"), at(prefix + ".ln1.b"), cfg_.ln_eps);
  Tensor q = ops::split_heads(tape, ops::add_bias(tape, ops::matmul(tape, h, at(prefix + ".attn.wq")), at(prefix + ".attn.bq")), B, m, H);
  Tensor k = ops::split_heads(tape, ops::add_bias(tape, ops::matmul(tape, h, at(prefix + ".attn.wk")), at(prefix + ".attn.bk")), B, m, H);
  Tensor v = ops::split_heads(tape, ops::add_bias(tape, ops::matmul(tape, h, at(prefix + ".attn.wv")), at(prefix + ".attn.bv")), B, m, H);
  Tensor probs = ops::softmax(tape, ops::scale(tape, ops::bmm_nt(tape, q, k), att_scale), -1);
  if (instr && instr->capture_attention) instr->attention.push_back(probs.clone());
  Tensor ctx = ops::merge_heads(tape, ops::bmm(tape, probs, v), B, m, H);
  Tensor att = ops::add_bias(tape, ops::matmul(tape, ctx, at(prefix + ".attn.wo")), at(prefix + ".attn.bo"));
  x = ops::add(tape, x, att);
  Tensor h2 = ops::layernorm(tape, x, at(prefix + ".ln2.g"), at(prefix + ".ln2.b"), cfg_.ln_eps);
  Tensor m1 = ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, h2, at(prefix + ".mlp.w1")), at(prefix + ".mlp.b1")));
  Tensor m2 = ops::add_bias(tape, ops::matmul(tape, m1, at(prefix + ".mlp.w2")), at(prefix + ".mlp.b2"));
  return ops::add(tape, x, m2);
}

Tensor Model::final_ln(Tape* tape, const Tensor& x, const std::string& prefix) const {
  return ops::layernorm(tape, x, at(prefix + ".g"), at(prefix + ".b"), cfg_.ln_eps);
}

Tensor Model::encode(Tape* tape, const Tensor& tokens, int64_t B, int64_t m, Instrument* instr) const {
  if (m < 1) raise(ErrKind::Shape, "encode: empty sequence");
  if (tokens.dim(0) != B * m || tokens.dim(1) != cfg_.embed_dim)
    raise(ErrKind::Shape, "encode: expected [" + std::to_string(B * m) + ", " + std::to_string(cfg_.embed_dim) + "]");
  if (instr) instr->encoder_lengths.push_back(m);
  Tensor x = tokens;
  for (int i = 0; i < cfg_.encoder_depth; ++i) x = block(tape, x, B, m, "enc" + std::to_string(i), instr);
  return x;
}

namespace {

void check_partition(const std::vector<std::vector<int64_t>>& vis, const std::vector<std::vector<int64_t>>& miss,
                     int64_t n) {
  if (vis.size() != miss.size()) raise(ErrKind::Usage, "vis/miss batch sizes disagree");
  for (size_t b = 0; b < vis.size(); ++b) {
    if (vis[b].empty()) raise(ErrKind::Usage, "insert_mask_tokens: observed set is empty for image " + std::to_string(b));
    if (vis[b].size() != vis[0].size() || miss[b].size() != miss[0].size())
      raise(ErrKind::Usage, "subset sizes must be equal across the batch");
    std::vector<uint8_t> seen(static_cast<size_t>(n), 0);
    for (int64_t p : vis[b]) {
      if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) raise(ErrKind::Usage, "vis/miss do not partition the grid");
      seen[static_cast<size_t>(p)] = 1;
    }
    for (int64_t p : miss[b]) {
      if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) raise(ErrKind::Usage, "vis/miss do not partition the grid");
      seen[static_cast<size_t>(p)] = 1;
    }
    for (uint8_t s : seen)
      if (!s) raise(ErrKind::Usage, "vis/miss do not cover the grid");
  }
}

std::vector<int64_t> flatten_local(const std::vector<std::vector<int64_t>>& lists) {
  std::vector<int64_t> out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

std::vector<int64_t> flatten_global(const std::vector<std::vector<int64_t>>& lists, int64_t n) {
  std::vector<int64_t> out;
  for (size_t b = 0; b < lists.size(); ++b)
    for (int64_t p : lists[b]) out.push_back(static_cast<int64_t>(b) * n + p);
  return out;
}

}  // namespace

Tensor Model::insert_mask_tokens(Tape* tape, const Tensor& encoded, int64_t B,
                                 const std::vector<std::vector<int64_t>>& vis,
                                 const std::vector<std::vector<int64_t>>& miss) const {
  int64_t n = cfg_.n_patches();
  if (static_cast<int64_t>(vis.size()) != B) raise(ErrKind::Usage, "insert_mask_tokens: batch size mismatch");
  check_partition(vis, miss, n);
  int64_t v = static_cast<int64_t>(vis[0].size());
  int64_t m = static_cast<int64_t>(miss[0].size());
  if (encoded.dim(0) != B * v) raise(ErrKind::Usage, "insert_mask_tokens: encoded rows do not match observed count");
  Tensor cat = encoded;
  if (m > 0) {
    Tensor mask_rows = ops::add(tape, ops::repeat_row(tape, at("mask_token"), B * m),
                                ops::gather_rows(tape, at("pos"), flatten_local(miss)));
    cat = ops::concat_rows(tape, encoded, mask_rows);
  }
  std::vector<int64_t> perm(static_cast<size_t>(B * n));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t r = 0; r < v; ++r) perm[static_cast<size_t>(b * n + vis[static_cast<size_t>(b)][static_cast<size_t>(r)])] = b * v + r;
    for (int64_t r = 0; r < m; ++r)
      perm[static_cast<size_t>(b * n + miss[static_cast<size_t>(b)][static_cast<size_t>(r)])] = B * v + b * m + r;
  }
  return ops::gather_rows(tape, cat, perm);
}

BranchOutput Model::decode_branch(Tape* tape, const Tensor& full_seq, int64_t B,
                                  const std::vector<std::vector<int64_t>>& miss, Instrument* instr) const {
  if (cfg_.mode != ModelMode::SplitMask) raise(ErrKind::Usage, "decode_branch requires splitmask mode");
  int64_t n = cfg_.n_patches();
  if (full_seq.dim(0) != B * n) raise(ErrKind::Shape, "decode_branch: expected a full-length sequence");
  Tensor x = full_seq;
  for (int i = 0; i < cfg_.decoder_depth; ++i) x = block(tape, x, B, n, "dec" + std::to_string(i), instr);
  x = final_ln(tape, x, "dec.ln");
  BranchOutput out;
  out.decoder_out = x;
  out.positions = flatten_local(miss);
  Tensor miss_rows = ops::gather_rows(tape, x, flatten_global(miss, n));
  out.logits = ops::add_bias(tape, ops::matmul(tape, miss_rows, at("head.mim.w")), at("head.mim.b"));
  Tensor desc = ops::group_mean_rows(tape, x, B);
  out.descriptors = cfg_.normalize_descriptor ? ops::l2_normalize_rows(tape, desc) : desc;
  return out;
}

SplitForward Model::forward_splitmask(Tape* tape, const Tensor& patches, const std::vector<MaskPlan>& plans,
                                      const Vocabulary& vocab, Instrument* instr) const {
  if (cfg_.mode != ModelMode::SplitMask) raise(ErrKind::Usage, "forward_splitmask requires splitmask mode");
  int64_t B = static_cast<int64_t>(plans.size());
  int64_t n = cfg_.n_patches();
  if (B < 1) raise(ErrKind::Usage, "empty batch");
  std::vector<std::vector<int64_t>> obs(plans.size()), msk(plans.size());
  for (size_t b = 0; b < plans.size(); ++b) {
    if (plans[b].n() != n) raise(ErrKind::Shape, "mask plan size does not match the patch grid");
    auto [a_idx, b_idx] = split(plans[b]);
    obs[b] = std::move(a_idx);
    msk[b] = std::move(b_idx);
  }
  if (static_cast<int64_t>(vocab.d) != cfg_.patch_dim()) raise(ErrKind::Shape, "vocabulary dimension does not match patches");

  SplitForward out;
  out.targets = tokenize_rows(patches, vocab);
  Tensor emb = embed_all(tape, patches, B);

  auto run_branch = [&](const std::vector<std::vector<int64_t>>& vis, const std::vector<std::vector<int64_t>>& miss) {
    Tensor enc_in = ops::gather_rows(tape, emb, flatten_global(vis, n));
    Tensor enc_out = encode(tape, enc_in, B, static_cast<int64_t>(vis[0].size()), instr);
    enc_out = final_ln(tape, enc_out, "enc.ln");
    Tensor full = insert_mask_tokens(tape, enc_out, B, vis, miss);
    return decode_branch(tape, full, B, miss, instr);
  };
  out.a = run_branch(obs, msk);
  out.b = run_branch(msk, obs);
  return out;
}

BeitForward Model::forward_beit(Tape* tape, const Tensor& patches, const std::vector<MaskPlan>& plans,
                                const Vocabulary& vocab, Instrument* instr) const {
  int64_t B = static_cast<int64_t>(plans.size());
  int64_t n = cfg_.n_patches();
  if (B < 1) raise(ErrKind::Usage, "empty batch");
  std::vector<std::vector<int64_t>> obs(plans.size()), msk(plans.size());
  for (size_t b = 0; b < plans.size(); ++b) {
    if (plans[b].n() != n) raise(ErrKind::Shape, "mask plan size does not match the patch grid");
    auto [a_idx, b_idx] = split(plans[b]);
    obs[b] = std::move(a_idx);
    msk[b] = std::move(b_idx);
  }
  if (static_cast<int64_t>(vocab.d) != cfg_.patch_dim()) raise(ErrKind::Shape, "vocabulary dimension does not match patches");

  BeitForward out;
  out.targets = tokenize_rows(patches, vocab);
  Tensor emb = embed_all(tape, patches, B);
  Tensor vis_rows = ops::gather_rows(tape, emb, flatten_global(obs, n));
  Tensor full = insert_mask_tokens(tape, vis_rows, B, obs, msk);
  Tensor enc = encode(tape, full, B, n, instr);
  enc = final_ln(tape, enc, "enc.ln");
  out.positions = flatten_local(msk);
  Tensor miss_rows = ops::gather_rows(tape, enc, flatten_global(msk, n));
  out.logits = ops::add_bias(tape, ops::matmul(tape, miss_rows, at("head.mim.w")), at("head.mim.b"));
  return out;
}

Tensor Model::features_at_layer(Tape* tape, const Tensor& patches, int64_t B, int layer, Instrument* instr) const {
  if (layer < 0 || layer > cfg_.encoder_depth)
    raise(ErrKind::Index, "layer index " + std::to_string(layer) + " out of [0, " + std::to_string(cfg_.encoder_depth) + "]");
  int64_t n = cfg_.n_patches();
  Tensor x = embed_all(tape, patches, B);
  if (layer > 0 && instr) instr->encoder_lengths.push_back(n);
  for (int i = 0; i < layer; ++i) x = block(tape, x, B, n, "enc" + std::to_string(i), instr);
  if (layer == cfg_.encoder_depth) x = final_ln(tape, x, "enc.ln");
  return ops::group_mean_rows(tape, x, B);
}

Tensor Model::class_logits(Tape* tape, const Tensor& patches, int64_t B) const {
  if (cfg_.num_classes <= 0) raise(ErrKind::Usage, "model has no classifier head");
  Tensor f = features_at_layer(tape, patches, B, cfg_.encoder_depth);
  return ops::add_bias(tape, ops::matmul(tape, f, at("head.cls.w")), at("head.cls.b"));
}

// ---- checkpoint io ----

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::map<std::string, std::string> config_kv(const ModelConfig& cfg) {
  return {
      {"model.patch_size", std::to_string(cfg.patch_size)},
      {"model.image_size", std::to_string(cfg.image_size)},
      {"model.embed_dim", std::to_string(cfg.embed_dim)},
      {"model.encoder_depth", std::to_string(cfg.encoder_depth)},
      {"model.decoder_depth", std::to_string(cfg.decoder_depth)},
      {"model.num_heads", std::to_string(cfg.num_heads)},
      {"model.mlp_ratio", std::to_string(cfg.mlp_ratio)},
      {"model.vocab_size", std::to_string(cfg.vocab_size)},
      {"model.mode", model_mode_name(cfg.mode)},
      {"model.num_classes", std::to_string(cfg.num_classes)},
      {"model.normalize_descriptor", cfg.normalize_descriptor ? "1" : "0"},
      {"model.ln_eps", fmt_double(cfg.ln_eps)},
  };
}

std::string meta_fetch(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) raise(ErrKind::Data, "checkpoint missing key " + key + ": " + path);
  return it->second;
}

ModelConfig config_from_kv(const std::map<std::string, std::string>& kv, const std::string& path) {
  ModelConfig cfg;
  cfg.patch_size = std::stoi(meta_fetch(kv, "model.patch_size", path));
  cfg.image_size = std::stoi(meta_fetch(kv, "model.image_size", path));
  cfg.embed_dim = std::stoll(meta_fetch(kv, "model.embed_dim", path));
  cfg.encoder_depth = std::stoi(meta_fetch(kv, "model.encoder_depth", path));
  cfg.decoder_depth = std::stoi(meta_fetch(kv, "model.decoder_depth", path));
  cfg.num_heads = std::stoi(meta_fetch(kv, "model.num_heads", path));
  cfg.mlp_ratio = std::stoll(meta_fetch(kv, "model.mlp_ratio", path));
  cfg.vocab_size = std::stoll(meta_fetch(kv, "model.vocab_size", path));
  cfg.mode = model_mode_from_name(meta_fetch(kv, "model.mode", path));
  cfg.num_classes = std::stoll(meta_fetch(kv, "model.num_classes", path));
  cfg.normalize_descriptor = meta_fetch(kv, "model.normalize_descriptor", path) == "1";
  cfg.ln_eps = std::stod(meta_fetch(kv, "model.ln_eps", path));
  return cfg;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) raise(ErrKind::Data, "truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = config_kv(model.cfg());
  for (const auto& [k, v] : extra_meta) {
    if (meta.contains(k)) raise(ErrKind::Usage, "metadata key collides with model config: " + k);
    if (k.find('\n') != std::string::npos || k.find('=') != std::string::npos || v.find('\n') != std::string::npos)
      raise(ErrKind::Usage, "metadata keys/values must be single-line and '='-free in keys: " + k);
    meta[k] = v;
  }
  std::ostringstream metastream;
  for (const auto& [k, v] : meta) metastream << k << "=" << v << "\n";
  std::string metastr = metastream.str();

  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrKind::Io, "cannot write checkpoint: " + path);
  out.write("SMCK", 4);
  put<uint32_t>(out, 1);
  put<uint64_t>(out, metastr.size());
  out.write(metastr.data(), static_cast<std::streamsize>(metastr.size()));
  put<uint64_t>(out, model.params().size());
  for (const auto& p : model.params()) {
    put<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<uint8_t>(out, p.value.dtype() == DType::F32 ? 0 : 1);
    put<uint32_t>(out, static_cast<uint32_t>(p.value.rank()));
    for (int64_t dsz : p.value.shape()) put<uint64_t>(out, static_cast<uint64_t>(dsz));
    if (p.value.dtype() == DType::F32) {
      auto s = p.value.f32();
      put<uint64_t>(out, s.size() * sizeof(float));
      out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(float)));
    } else {
      auto s = p.value.f64();
      put<uint64_t>(out, s.size() * sizeof(double));
      out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(double)));
    }
  }
  if (!out) raise(ErrKind::Io, "short write: " + path);
}

Model load_checkpoint(const std::string& path, std::map<std::string, std::string>* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrKind::Data, "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SMCK", 4) != 0) raise(ErrKind::Data, "not a checkpoint file: " + path);
  uint32_t version = get<uint32_t>(in, path);
  if (version != 1) raise(ErrKind::Data, "unsupported checkpoint version " + std::to_string(version) + ": " + path);
  uint64_t metalen = get<uint64_t>(in, path);
  std::string metastr(metalen, '\0');
  in.read(metastr.data(), static_cast<std::streamsize>(metalen));
  if (!in) raise(ErrKind::Data, "truncated checkpoint: " + path);
  std::map<std::string, std::string> meta;
  std::istringstream lines(metastr);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) raise(ErrKind::Data, "malformed checkpoint metadata: " + path);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig cfg = config_from_kv(meta, path);

  uint64_t count = get<uint64_t>(in, path);
  struct Rec {
    std::string name;
    Tensor value;
  };
  std::vector<Rec> recs;
  recs.reserve(count);
  DType dt = DType::F32;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = get<uint32_t>(in, path);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    uint8_t dtype_tag = get<uint8_t>(in, path);
    uint32_t rank = get<uint32_t>(in, path);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(get<uint64_t>(in, path));
    uint64_t bytes = get<uint64_t>(in, path);
    Tensor t = Tensor::zeros(shape, dtype_tag == 0 ? DType::F32 : DType::F64);
    dt = t.dtype();
    size_t expect = static_cast<size_t>(t.numel()) * dtype_size(t.dtype());
    if (bytes != expect) raise(ErrKind::Data, "parameter payload size mismatch for " + name + ": " + path);
    if (t.dtype() == DType::F32)
      in.read(reinterpret_cast<char*>(t.f32_mut().data()), static_cast<std::streamsize>(bytes));
    else
      in.read(reinterpret_cast<char*>(t.f64_mut().data()), static_cast<std::streamsize>(bytes));
    if (!in) raise(ErrKind::Data, "truncated checkpoint: " + path);
    recs.push_back({std::move(name), std::move(t)});
  }

  Model model(cfg, 0, dt);
  if (recs.size() != model.params().size())
    raise(ErrKind::Data, "checkpoint parameter count does not match its config: " + path);
  for (size_t i = 0; i < recs.size(); ++i) {
    Tensor& dst = model.at(recs[i].name);  // raises on unknown names
    if (dst.shape() != recs[i].value.shape())
      raise(ErrKind::Data, "parameter shape mismatch for " + recs[i].name + ": " + path);
    recs[i].value.set_requires_grad(true);
    dst = recs[i].value;
  }
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

Model load_checkpoint_matching(const std::string& path, const ModelConfig& expected,
                               std::map<std::string, std::string>* meta_out) {
  Model m = load_checkpoint(path, meta_out);
  if (!m.cfg().same_architecture(expected))
    raise(ErrKind::Config, "checkpoint architecture does not match the requested config: " + path);
  return m;
}

}  // namespace mimlab
