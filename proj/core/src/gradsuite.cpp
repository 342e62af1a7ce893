#include "mimlab/gradsuite.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "mimlab/losses.hpp"
#include "mimlab/masking.hpp"
#include "mimlab/model.hpp"

namespace mimlab {

namespace {

constexpr double kLinearTol = 1e-6;
constexpr double kGeneralTol = 1e-4;

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), DType::F64);
  for (auto& v : t.f64_mut()) v = rng.normal() * scale;
  return t;
}

Tensor leaf(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t = randn(std::move(shape), rng, scale);
  t.set_requires_grad(true);
  return t;
}

// Fixed random weights fold an op's output into a scalar with nontrivial
// upstream gradients.
Tensor fold(Tape* tape, const Tensor& y, const Tensor& c) { return ops::sum(tape, ops::mul(tape, y, c)); }

struct Case {
  std::string name;
  double tol;
  std::function<Tensor(Tape*)> f;
  std::vector<Tensor> leaves;
};

}  // namespace

std::vector<OpGradReport> gradient_suite(uint64_t seed) {
  Rng rng(mix_seed_str(seed, "gradsuite"));
  std::vector<Case> cases;
  auto add = [&](std::string name, double tol, std::vector<Tensor> leaves, std::function<Tensor(Tape*)> f) {
    cases.push_back({std::move(name), tol, std::move(f), std::move(leaves)});
  };

  {
    Tensor a = leaf({5, 4}, rng), b = leaf({4, 3}, rng), c = randn({5, 3}, rng);
    add("matmul", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::matmul(t, a, b), c); });
  }
  {
    Tensor a = leaf({5, 4}, rng), b = leaf({3, 4}, rng), c = randn({5, 3}, rng);
    add("matmul_nt", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::matmul_nt(t, a, b), c); });
  }
  {
    Tensor a = leaf({2, 3, 4}, rng), b = leaf({2, 4, 5}, rng), c = randn({2, 3, 5}, rng);
    add("bmm", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::bmm(t, a, b), c); });
  }
  {
    Tensor a = leaf({2, 3, 4}, rng), b = leaf({2, 5, 4}, rng), c = randn({2, 3, 5}, rng);
    add("bmm_nt", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::bmm_nt(t, a, b), c); });
  }
  {
    Tensor a = leaf({3, 4}, rng), b = leaf({3, 4}, rng), c = randn({3, 4}, rng);
    add("add", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::add(t, a, b), c); });
    Tensor a2 = leaf({3, 4}, rng), b2 = leaf({3, 4}, rng);
    add("sub", kLinearTol, {a2, b2}, [=](Tape* t) { return fold(t, ops::sub(t, a2, b2), c); });
    Tensor a3 = leaf({3, 4}, rng), b3 = leaf({3, 4}, rng);
    add("mul", kLinearTol, {a3, b3}, [=](Tape* t) { return fold(t, ops::mul(t, a3, b3), c); });
    Tensor a4 = leaf({3, 4}, rng);
    add("scale", kLinearTol, {a4}, [=](Tape* t) { return fold(t, ops::scale(t, a4, -1.7), c); });
  }
  {
    Tensor x = leaf({4, 6}, rng), b = leaf({6}, rng), c = randn({4, 6}, rng);
    add("add_bias", kLinearTol, {x, b}, [=](Tape* t) { return fold(t, ops::add_bias(t, x, b), c); });
  }
  {
    Tensor x = leaf({3, 5}, rng), c = randn({3, 5}, rng);
    add("gelu", kGeneralTol, {x}, [=](Tape* t) { return fold(t, ops::gelu(t, x), c); });
    Tensor x2 = leaf({3, 5}, rng);
    add("softmax", kGeneralTol, {x2}, [=](Tape* t) { return fold(t, ops::softmax(t, x2, -1), c); });
  }
  {
    Tensor x = leaf({4, 6}, rng), g = leaf({6}, rng), b = leaf({6}, rng), c = randn({4, 6}, rng);
    add("layernorm", kGeneralTol, {x, g, b}, [=](Tape* t) { return fold(t, ops::layernorm(t, x, g, b), c); });
  }
  {
    Tensor x = leaf({4, 7}, rng);
    std::vector<int64_t> targets = {2, 0, 6, 3};
    add("cross_entropy_logits", kGeneralTol, {x},
        [=](Tape* t) { return ops::cross_entropy_logits(t, x, targets); });
    Tensor x2 = leaf({4, 7}, rng);
    Tensor p = leaf({4, 7}, rng, 0.3);
    for (auto& v : p.f64_mut()) v = std::abs(v) + 0.05;
    add("cross_entropy_soft", kGeneralTol, {x2, p}, [=](Tape* t) { return ops::cross_entropy_soft(t, x2, p); });
  }
  {
    Tensor x = leaf({6, 4}, rng), c = randn({2, 4}, rng);
    add("group_mean_rows", kLinearTol, {x}, [=](Tape* t) { return fold(t, ops::group_mean_rows(t, x, 2), c); });
    Tensor x2 = leaf({3, 5}, rng), c2 = randn({3, 5}, rng);
    add("l2_normalize_rows", kGeneralTol, {x2}, [=](Tape* t) { return fold(t, ops::l2_normalize_rows(t, x2), c2); });
  }
  {
    Tensor x = leaf({5, 3}, rng), c = randn({4, 3}, rng);
    std::vector<int64_t> idx = {4, 0, 2, 0};
    add("gather_rows", kLinearTol, {x}, [=](Tape* t) { return fold(t, ops::gather_rows(t, x, idx), c); });
  }
  {
    Tensor a = leaf({2, 3}, rng), b = leaf({4, 3}, rng), c = randn({6, 3}, rng);
    add("concat_rows", kLinearTol, {a, b}, [=](Tape* t) { return fold(t, ops::concat_rows(t, a, b), c); });
    Tensor v = leaf({5}, rng), c2 = randn({3, 5}, rng);
    add("repeat_row", kLinearTol, {v}, [=](Tape* t) { return fold(t, ops::repeat_row(t, v, 3), c2); });
  }
  {
    Tensor x = leaf({3, 4}, rng), c = randn({2, 6}, rng);
    add("reshape", kLinearTol, {x}, [=](Tape* t) { return fold(t, ops::reshape(t, x, {2, 6}), c); });
    Tensor x2 = leaf({3, 4}, rng), c2 = randn({4, 3}, rng);
    add("transpose", kLinearTol, {x2}, [=](Tape* t) { return fold(t, ops::transpose(t, x2), c2); });
    Tensor x3 = leaf({3, 4}, rng);
    add("sum", kLinearTol, {x3}, [=](Tape* t) { return ops::sum(t, x3); });
    Tensor x4 = leaf({3, 4}, rng);
    add("mean", kLinearTol, {x4}, [=](Tape* t) { return ops::mean(t, x4); });
  }
  {
    Tensor x = leaf({6, 8}, rng), c = randn({6, 8}, rng);  // batch 2, rows 3, heads 2
    add("split_merge_heads", kLinearTol, {x}, [=](Tape* t) {
      Tensor y = ops::merge_heads(t, ops::split_heads(t, x, 2, 3, 2), 2, 3, 2);
      return fold(t, y, c);
    });
  }
  {
    Tensor xa = leaf({3, 4}, rng), xb = leaf({3, 4}, rng);
    add("infonce", kGeneralTol, {xa, xb}, [=](Tape* t) { return infonce(t, xa, xb, 0.2); });
  }
  {
    // full pipeline: two images, split forward, combined objective
    ModelConfig mc;
    mc.patch_size = 8;
    mc.image_size = 16;
    mc.embed_dim = 8;
    mc.encoder_depth = 1;
    mc.decoder_depth = 1;
    mc.num_heads = 2;
    mc.mlp_ratio = 2;
    mc.vocab_size = 8;
    auto model = std::make_shared<Model>(mc, seed, DType::F64);
    auto vocab = std::make_shared<Vocabulary>(build_random_projection(mc.vocab_size, mc.patch_dim(), seed + 1));
    Tensor patches = randn({2 * mc.n_patches(), mc.patch_dim()}, rng, 0.5);
    Rng mrng(mix_seed_str(seed, "gradsuite-mask"));
    auto plans = std::make_shared<std::vector<MaskPlan>>();
    plans->push_back(uniform_mask_grid(mc.grid_side(), mc.grid_side(), 0.5, mrng));
    plans->push_back(uniform_mask_grid(mc.grid_side(), mc.grid_side(), 0.5, mrng));
    std::vector<Tensor> leaves;
    for (auto& p : model->params()) leaves.push_back(p.value);
    add("full_splitmask_step", kGeneralTol, leaves, [=](Tape* t) {
      SplitForward fwd = model->forward_splitmask(t, patches, *plans, *vocab);
      LossBreakdown lb = total_loss(t, fwd.a, fwd.b, fwd.targets, 0.2, 1.0, 1.0);
      return lb.total;
    });
  }

  std::vector<OpGradReport> out;
  for (auto& c : cases) {
    GradCheckReport rep = grad_check(c.f, c.leaves, 1e-5, c.tol);
    out.push_back({c.name, rep.max_rel_err, c.tol, rep.passed});
  }
  return out;
}

}  // namespace mimlab
