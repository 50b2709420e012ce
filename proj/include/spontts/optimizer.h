#ifndef SPONTTS_OPTIMIZER_H_
#define SPONTTS_OPTIMIZER_H_

#include <string>
#include <vector>

#include "spontts/autodiff.h"

namespace spontts {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Adam over every parameter in a store. Reads Parameter::grad and updates
// Parameter::value; gradients are left untouched.
class Adam {
 public:
  Adam(const ad::ParameterStore* store, AdamConfig cfg);

  // Returns the global gradient norm before clipping.
  double Step();

  // Multiplies the learning rate of every parameter whose name starts with
  // `prefix`.
  void SetLearningRateScale(const std::string& prefix, double scale);

  int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  // Moment buffers, aligned with store->all().
  std::vector<ad::Matrix>& first_moments() { return m_; }
  std::vector<ad::Matrix>& second_moments() { return v_; }
  void set_steps(int64_t steps) { steps_ = steps; }

 private:
  const ad::ParameterStore* store_;
  AdamConfig cfg_;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
  std::vector<double> lr_scales_;
  int64_t steps_ = 0;
};

double GradientNorm(const ad::ParameterStore& store);

}  // namespace spontts

#endif  // SPONTTS_OPTIMIZER_H_
