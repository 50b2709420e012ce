#include "spontts/optimizer.h"

#include <cmath>

namespace spontts {

double GradientNorm(const ad::ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store.all()) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

Adam::Adam(const ad::ParameterStore* store, AdamConfig cfg)
    : store_(store), cfg_(cfg) {
  for (const auto& p : store_->all()) {
    m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  lr_scales_.assign(store_->all().size(), 1.0);
}

void Adam::SetLearningRateScale(const std::string& prefix, double scale) {
  const auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name().rfind(prefix, 0) == 0) lr_scales_[i] = scale;
  }
}

double Adam::Step() {
  const double norm = GradientNorm(*store_);
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    const ad::Matrix g = p.grad * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p.value.array() -= cfg_.learning_rate * lr_scales_[i] * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
  }
  return norm;
}

}  // namespace spontts
