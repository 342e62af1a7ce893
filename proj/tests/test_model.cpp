#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mimlab/model.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.image_size = 16;  // 2x2 grid, n = 4
  cfg.embed_dim = 16;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.vocab_size = 8;
  return cfg;
}

Tensor random_patches(const ModelConfig& cfg, int64_t B, Rng& rng, DType dt = DType::F32) {
  Tensor t = Tensor::zeros({B * cfg.n_patches(), cfg.patch_dim()}, dt);
  if (dt == DType::F32)
    for (auto& v : t.f32_mut()) v = static_cast<float>(rng.normal() * 0.5);
  else
    for (auto& v : t.f64_mut()) v = rng.normal() * 0.5;
  return t;
}

MaskPlan plan_from(std::vector<uint8_t> masked, int rows, int cols) {
  MaskPlan p;
  p.rows = rows;
  p.cols = cols;
  p.masked = std::move(masked);
  return p;
}

}  // namespace

TEST_CASE("initialization is deterministic and parameter count matches the closed form") {
  ModelConfig cfg = tiny_cfg();
  Model a(cfg, 5), b(cfg, 5), c(cfg, 6);
  REQUIRE(a.params().size() == b.params().size());
  int64_t counted = 0;
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    auto x = a.params()[i].value.f32();
    auto y = b.params()[i].value.f32();
    for (size_t j = 0; j < x.size(); ++j) CHECK(x[j] == y[j]);
    counted += a.params()[i].value.numel();
  }
  CHECK(counted == Model::param_count(cfg));
  CHECK(a.param_count() == Model::param_count(cfg));

  bool any_diff = false;
  for (size_t i = 0; i < a.params().size() && !any_diff; ++i) {
    auto x = a.params()[i].value.f32();
    auto y = c.params()[i].value.f32();
    for (size_t j = 0; j < x.size(); ++j)
      if (x[j] != y[j]) {
        any_diff = true;
        break;
      }
  }
  CHECK(any_diff);

  // beit mode drops the decoder stack but keeps the mask token
  ModelConfig bc = tiny_cfg();
  bc.mode = ModelMode::Beit;
  Model bm(bc, 5);
  CHECK(bm.param_count() == Model::param_count(bc));
  CHECK(Model::param_count(bc) < Model::param_count(cfg));
}

TEST_CASE("weight decay exclusions cover positions, mask token, and layernorm affines") {
  Model m(tiny_cfg(), 1);
  for (const auto& p : m.params()) {
    bool excluded = p.name == "pos" || p.name == "mask_token" || p.name.find("ln") != std::string::npos;
    CHECK(p.decay == !excluded);
  }
}

TEST_CASE("config validation rejects inconsistent settings") {
  ModelConfig cfg = tiny_cfg();
  cfg.embed_dim = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_cfg();
  cfg.decoder_depth = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_cfg();
  cfg.image_size = 20;  // not a multiple of patch size
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_cfg();
  cfg.vocab_size = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("depth-zero encoder is the identity") {
  ModelConfig cfg = tiny_cfg();
  cfg.encoder_depth = 0;
  Model m(cfg, 2);
  Rng rng(3);
  Tensor x = Tensor::zeros({4, cfg.embed_dim}, DType::F32);
  for (auto& v : x.f32_mut()) v = static_cast<float>(rng.normal());
  Tensor y = m.encode(nullptr, x, 1, 4);
  auto xv = x.f32();
  auto yv = y.f32();
  for (size_t i = 0; i < xv.size(); ++i) CHECK(xv[i] == yv[i]);
}

TEST_CASE("embedding selections are consistent across index subsets") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 4);
  Rng rng(5);
  Tensor patches = random_patches(cfg, 1, rng);
  Tensor full = m.embed_all(nullptr, patches, 1);
  CHECK(full.shape() == Shape{4, cfg.embed_dim});

  std::vector<int64_t> a = {0, 2}, b = {1, 3};
  Tensor ra = ops::gather_rows(nullptr, full, a);
  Tensor rb = ops::gather_rows(nullptr, full, b);
  auto fv = full.f32();
  auto rav = ra.f32();
  auto rbv = rb.f32();
  for (int64_t j = 0; j < cfg.embed_dim; ++j) {
    CHECK(rav[j] == fv[0 * cfg.embed_dim + j]);
    CHECK(rav[cfg.embed_dim + j] == fv[2 * cfg.embed_dim + j]);
    CHECK(rbv[j] == fv[1 * cfg.embed_dim + j]);
    CHECK(rbv[cfg.embed_dim + j] == fv[3 * cfg.embed_dim + j]);
  }

  // permuting indices permutes rows identically
  std::vector<int64_t> perm = {3, 0, 2, 1};
  Tensor rp = ops::gather_rows(nullptr, full, perm);
  auto rpv = rp.f32();
  for (size_t r = 0; r < perm.size(); ++r)
    for (int64_t j = 0; j < cfg.embed_dim; ++j)
      CHECK(rpv[static_cast<int64_t>(r) * cfg.embed_dim + j] == fv[perm[r] * cfg.embed_dim + j]);
}

TEST_CASE("attention rows sum to one under instrumentation") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 7);
  Rng rng(8);
  Tensor patches = random_patches(cfg, 2, rng);
  Instrument instr;
  instr.capture_attention = true;
  Tensor emb = m.embed_all(nullptr, patches, 2);
  m.encode(nullptr, emb, 2, 4, &instr);
  REQUIRE(instr.attention.size() == static_cast<size_t>(cfg.encoder_depth));
  for (const Tensor& probs : instr.attention) {
    REQUIRE(probs.rank() == 3);
    auto pv = probs.f32();
    int64_t g = probs.dim(0), r = probs.dim(1), c = probs.dim(2);
    for (int64_t i = 0; i < g * r; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < c; ++j) acc += pv[i * c + j];
      CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("mask token insertion: reorder case, rejection, and positional differences") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 9);
  Rng rng(10);
  Tensor patches = random_patches(cfg, 1, rng);
  Tensor emb = m.embed_all(nullptr, patches, 1);

  // no missing positions: output equals the encoded rows in grid order
  Tensor same = m.insert_mask_tokens(nullptr, emb, 1, {{0, 1, 2, 3}}, {{}});
  auto sv = same.f32();
  auto ev = emb.f32();
  for (size_t i = 0; i < sv.size(); ++i) CHECK(sv[i] == ev[i]);

  // visible rows supplied out of grid order are scattered back to it
  Tensor shuffled = ops::gather_rows(nullptr, emb, std::vector<int64_t>{2, 0, 3, 1});
  Tensor reordered = m.insert_mask_tokens(nullptr, shuffled, 1, {{2, 0, 3, 1}}, {{}});
  auto rv = reordered.f32();
  for (size_t i = 0; i < rv.size(); ++i) CHECK(rv[i] == ev[i]);

  // empty visible side is rejected
  CHECK_THROWS_AS(m.insert_mask_tokens(nullptr, Tensor::zeros({0, cfg.embed_dim}), 1, {{}}, {{0, 1, 2, 3}}), Error);

  // masked rows differ across positions only by the positional embedding
  Tensor vis = ops::gather_rows(nullptr, emb, std::vector<int64_t>{0});
  Tensor out = m.insert_mask_tokens(nullptr, vis, 1, {{0}}, {{1, 2, 3}});
  auto ov = out.f32();
  auto pos = m.at("pos").f32();
  int64_t D = cfg.embed_dim;
  for (int64_t i : {2L, 3L})
    for (int64_t j = 0; j < D; ++j) {
      float diff_rows = ov[i * D + j] - ov[1 * D + j];
      float diff_pos = pos[i * D + j] - pos[1 * D + j];
      CHECK(diff_rows == doctest::Approx(diff_pos).epsilon(1e-5));
    }
}

TEST_CASE("splitmask forward: branch shapes, partition, encoder never sees masked tokens") {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.image_size = 32;  // n = 16
  cfg.embed_dim = 16;
  cfg.encoder_depth = 1;
  cfg.decoder_depth = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.vocab_size = 8;
  Model m(cfg, 11);
  Vocabulary vocab = build_random_projection(cfg.vocab_size, cfg.patch_dim(), 12);
  Rng rng(13);
  Tensor patches = random_patches(cfg, 2, rng);

  Rng mrng(14);
  std::vector<MaskPlan> plans = {uniform_mask_grid(4, 4, 0.5, mrng), uniform_mask_grid(4, 4, 0.5, mrng)};

  Instrument instr;
  SplitForward fwd = m.forward_splitmask(nullptr, patches, plans, vocab, &instr);

  CHECK(fwd.a.logits.shape() == Shape{16, 8});  // 2 images x 8 masked each
  CHECK(fwd.b.logits.shape() == Shape{16, 8});
  CHECK(fwd.a.decoder_out.shape() == Shape{32, 16});
  CHECK(fwd.a.descriptors.shape() == Shape{2, 16});
  CHECK(fwd.targets.size() == 32);

  // encoder call lengths: each branch runs on 8 tokens per image, never 16
  REQUIRE(instr.encoder_lengths.size() == 2);  // one entry per branch
  for (int64_t len : instr.encoder_lengths) CHECK(len == 8);

  // predicted positions partition the grid per image
  for (int img = 0; img < 2; ++img) {
    std::vector<uint8_t> seen(16, 0);
    for (int k = 0; k < 8; ++k) {
      seen[static_cast<size_t>(fwd.a.positions[img * 8 + k])]++;
      seen[static_cast<size_t>(fwd.b.positions[img * 8 + k])]++;
    }
    for (uint8_t s : seen) CHECK(s == 1);
  }

  // descriptors are unit length
  auto dv = fwd.a.descriptors.f32();
  for (int img = 0; img < 2; ++img) {
    double norm = 0;
    for (int64_t j = 0; j < 16; ++j) norm += static_cast<double>(dv[img * 16 + j]) * dv[img * 16 + j];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
  }

  // complementing the plan swaps the branches
  std::vector<MaskPlan> flipped = plans;
  for (auto& p : flipped)
    for (auto& v : p.masked) v = v ? 0 : 1;
  SplitForward fwd2 = m.forward_splitmask(nullptr, patches, flipped, vocab);
  CHECK(fwd2.a.positions == fwd.b.positions);
  CHECK(fwd2.b.positions == fwd.a.positions);
  auto l1 = fwd.a.logits.f32();
  auto l2 = fwd2.b.logits.f32();
  for (size_t i = 0; i < l1.size(); ++i) CHECK(l1[i] == doctest::Approx(l2[i]).epsilon(1e-6));
}

TEST_CASE("gradients reach the patch embedding through the descriptor alone") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 15);
  m.set_requires_grad(true);
  Vocabulary vocab = build_random_projection(cfg.vocab_size, cfg.patch_dim(), 16);
  Rng rng(17);
  Tensor patches = random_patches(cfg, 1, rng);
  std::vector<MaskPlan> plans = {plan_from({0, 1, 1, 0}, 2, 2)};

  Tape tape;
  SplitForward fwd = m.forward_splitmask(&tape, patches, plans, vocab);
  Tensor loss = ops::sum(&tape, fwd.a.descriptors);
  tape.backward(loss);
  Tensor g = tape.grad(m.at("embed.w"));
  double max_abs = 0;
  for (float v : g.f32()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  CHECK(max_abs > 0.0);
}

TEST_CASE("beit forward predicts exactly the masked positions and rejects empty masks") {
  ModelConfig cfg = tiny_cfg();
  cfg.mode = ModelMode::Beit;
  Model m(cfg, 18);
  Vocabulary vocab = build_random_projection(cfg.vocab_size, cfg.patch_dim(), 19);
  Rng rng(20);
  Tensor patches = random_patches(cfg, 1, rng);

  BeitForward fwd = m.forward_beit(nullptr, patches, {plan_from({0, 1, 0, 1}, 2, 2)}, vocab);
  CHECK(fwd.logits.shape() == Shape{2, 8});
  CHECK(fwd.positions == std::vector<int64_t>{1, 3});
  CHECK(fwd.targets.size() == 4);

  CHECK_THROWS_AS(m.forward_beit(nullptr, patches, {plan_from({0, 0, 0, 0}, 2, 2)}, vocab), Error);
}

TEST_CASE("splitmask attention flops do not exceed the beit-plus-decoder pipeline at a 50% split") {
  for (int side : {2, 4, 6}) {  // even grids, where the 50% split is exact
    ModelConfig cfg = tiny_cfg();
    cfg.image_size = cfg.patch_size * side;
    int64_t sm = Model::attention_flops(cfg);
    ModelConfig bc = cfg;
    bc.mode = ModelMode::Beit;
    bc.encoder_depth = cfg.encoder_depth + cfg.decoder_depth;  // same total stack depth
    int64_t be = Model::attention_flops(bc);
    CHECK(sm <= be);
  }
}

TEST_CASE("features per layer: shapes, pooled embeddings at layer zero, range errors") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 21);
  Rng rng(22);
  Tensor patches = random_patches(cfg, 3, rng);

  Tensor f0 = m.features_at_layer(nullptr, patches, 3, 0);
  CHECK(f0.shape() == Shape{3, cfg.embed_dim});
  Tensor emb = m.embed_all(nullptr, patches, 3);
  Tensor pooled = ops::group_mean_rows(nullptr, emb, 3);
  auto fv = f0.f32();
  auto pv = pooled.f32();
  for (size_t i = 0; i < fv.size(); ++i) CHECK(fv[i] == doctest::Approx(pv[i]).epsilon(1e-6));

  for (int layer = 0; layer <= cfg.encoder_depth; ++layer)
    CHECK(m.features_at_layer(nullptr, patches, 3, layer).shape() == Shape{3, cfg.embed_dim});

  try {
    m.features_at_layer(nullptr, patches, 3, cfg.encoder_depth + 1);
    FAIL("expected an index error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Index);
  }
}

TEST_CASE("checkpoints round trip bit exactly and enforce matching architecture") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 23);
  fs::path dir = fs::temp_directory_path() / "mimlab-test-ckpt";
  fs::create_directories(dir);
  std::string path = (dir / "m.smck").string();
  save_checkpoint(path, m, {{"run.step", "17"}, {"note", "hello"}});

  std::map<std::string, std::string> meta;
  Model back = load_checkpoint(path, &meta);
  CHECK(meta.at("run.step") == "17");
  CHECK(meta.at("note") == "hello");
  CHECK(back.cfg().embed_dim == cfg.embed_dim);
  REQUIRE(back.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i) {
    auto x = m.params()[i].value.f32();
    auto y = back.params()[i].value.f32();
    REQUIRE(x.size() == y.size());
    for (size_t j = 0; j < x.size(); ++j) CHECK(x[j] == y[j]);
  }

  // byte-identical files when saved twice
  save_checkpoint((dir / "m2.smck").string(), m, {{"run.step", "17"}, {"note", "hello"}});
  std::ifstream f1(path, std::ios::binary), f2((dir / "m2.smck").string(), std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  ModelConfig other = cfg;
  other.embed_dim = 32;
  try {
    load_checkpoint_matching(path, other);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Config);
  }

  // num_classes differences alone do not block loading
  ModelConfig with_head = cfg;
  with_head.num_classes = 4;
  Model loaded = load_checkpoint_matching(path, with_head);
  CHECK(loaded.cfg().embed_dim == cfg.embed_dim);
}

TEST_CASE("with_classes keeps the trunk and reinitializes only the head") {
  ModelConfig cfg = tiny_cfg();
  Model m(cfg, 24);
  Model cls = m.with_classes(4, 25);
  CHECK(cls.cfg().num_classes == 4);
  for (const auto& p : m.params()) {
    auto x = p.value.f32();
    auto y = cls.at(p.name).f32();
    for (size_t j = 0; j < x.size(); ++j) CHECK(x[j] == y[j]);
  }
  Rng rng(26);
  Tensor patches = random_patches(cfg, 2, rng);
  Tensor logits = cls.class_logits(nullptr, patches, 2);
  CHECK(logits.shape() == Shape{2, 4});

  // different head seeds change only the classifier weights
  Model cls2 = m.with_classes(4, 26);
  auto w1 = cls.at("head.cls.w").f32();
  auto w2 = cls2.at("head.cls.w").f32();
  bool differ = false;
  for (size_t j = 0; j < w1.size(); ++j)
    if (w1[j] != w2[j]) differ = true;
  CHECK(differ);
}
