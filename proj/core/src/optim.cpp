#include "mimlab/optim.hpp"

#include <cmath>
#include <map>

namespace mimlab {

double cosine_lr(int64_t step, int64_t warmup, int64_t total, double peak, double floor) {
  if (step < 0 || total < 0 || step > total) raise(ErrKind::Usage, "cosine_lr: need 0 <= step <= total");
  if (warmup < 0 || warmup > total) raise(ErrKind::Usage, "cosine_lr: need 0 <= warmup <= total");
  if (warmup > 0 && step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step == warmup) return peak;
  if (step == total) return floor;
  double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

int64_t epoch_budget(int64_t dataset_size, int64_t reference_size, int64_t reference_epochs, int64_t cap) {
  if (dataset_size <= 0 || reference_size <= 0 || reference_epochs <= 0 || cap <= 0)
    raise(ErrKind::Usage, "epoch_budget: all inputs must be positive");
  double e = static_cast<double>(reference_epochs) * static_cast<double>(reference_size) /
             static_cast<double>(dataset_size);
  return std::min<int64_t>(cap, std::llround(e));
}

int64_t epoch_budget_fraction(double fraction, int64_t reference_epochs, int64_t cap) {
  if (!(fraction > 0) || fraction > 1 || reference_epochs <= 0 || cap <= 0)
    raise(ErrKind::Usage, "epoch_budget_fraction: need 0 < fraction <= 1 and positive epochs/cap");
  return std::min<int64_t>(cap, std::llround(static_cast<double>(reference_epochs) / fraction));
}

std::optional<EpochPreset> epoch_preset(const std::string& dataset) {
  static const std::map<std::string, EpochPreset> kPresets = {
      {"imagenet", {1281167, 300}}, {"inat18", {437513, 800}}, {"inat19", {265240, 1400}},
      {"food101", {75750, 5000}},   {"cars", {8144, 5000}},    {"clipart", {34019, 5000}},
      {"painting", {52867, 5000}},  {"sketch", {49115, 5000}}, {"ade20k", {20210, 21000}},
      {"coco", {118287, 3000}},
  };
  auto it = kPresets.find(dataset);
  if (it == kPresets.end()) return std::nullopt;
  return it->second;
}

AdamW::AdamW(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0))
    raise(ErrKind::Config, "adamw: need betas in [0,1) and eps > 0");
}

void AdamW::step(std::vector<ParamDef>& params, Tape& tape, double lr, double weight_decay) {
  if (lr < 0 || weight_decay < 0) raise(ErrKind::Usage, "adamw: lr and weight_decay must be >= 0");
  if (slots_.empty()) {
    slots_.reserve(params.size());
    for (const auto& p : params) slots_.push_back({Tensor::zeros(p.value.shape(), DType::F64),
                                                   Tensor::zeros(p.value.shape(), DType::F64)});
    decay_applied_.assign(params.size(), 0);
  }
  if (slots_.size() != params.size()) raise(ErrKind::Usage, "adamw: parameter list changed size");
  ++t_;
  double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    if (slots_[i].m.shape() != p.shape()) raise(ErrKind::Shape, "adamw: parameter shape changed");
    Tensor g = tape.has_grad(p) ? tape.grad(p) : Tensor::zeros(p.shape(), p.dtype());
    if (g.shape() != p.shape()) raise(ErrKind::Shape, "adamw: gradient shape mismatch");
    auto m = slots_[i].m.f64_mut();
    auto v = slots_[i].v.f64_mut();
    bool decay = params[i].decay && weight_decay > 0 && lr > 0;
    decay_applied_[i] = decay ? 1 : 0;
    double shrink = 1.0 - lr * weight_decay;
    auto update = [&](auto pw, auto gw) {
      for (size_t k = 0; k < pw.size(); ++k) {
        double pk = static_cast<double>(pw[k]);
        if (decay) pk *= shrink;
        double gk = static_cast<double>(gw[k]);
        m[k] = b1_ * m[k] + (1.0 - b1_) * gk;
        v[k] = b2_ * v[k] + (1.0 - b2_) * gk * gk;
        double mhat = m[k] / c1;
        double vhat = v[k] / c2;
        pw[k] = static_cast<std::remove_reference_t<decltype(pw[0])>>(pk - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    };
    if (p.dtype() == DType::F32)
      update(p.f32_mut(), g.f32());
    else
      update(p.f64_mut(), g.f64());
  }
}

}  // namespace mimlab
