#ifndef SPONTTS_CONTEXT_H_
#define SPONTTS_CONTEXT_H_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/autodiff.h"
#include "spontts/nn.h"

namespace spontts {

class Rng;

struct ContextConfig {
  int mel_dim = 16;
  std::vector<int> conv_channels = {8, 8, 16, 16};
  int reference_dim = 32;
  int num_tokens = 10;
  int num_heads = 4;
  int embed_dim = 64;  // D_e
  int classifier_hidden = 32;
  int num_speakers = 2;
  int next_layers = 3;
  int next_hidden = 64;

  // Width of the GRU input after the convolution stack.
  int ConvOutputDim() const;
  nlohmann::json ToJson() const;
  static ContextConfig FromJson(const nlohmann::json& j);
  void Validate() const;
};

struct StyleOutput {
  ad::Var embedding;  // [1 x D_e]
  ad::Var weights;    // [heads x tokens], each row a simplex
};

// Reference encoder (3x3 stride-2 convolutions, then a GRU whose final state
// is r), a global style token layer and a speaker classifier that reads r.
// Any T >= 1 is accepted; zero padding keeps short inputs valid.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(const ContextConfig& cfg, ad::ParameterStore* store,
                 const std::string& prefix, Rng* rng);

  ad::Var Reference(ad::Tape& tape, ad::Var mel) const;
  // With `forced_weights` ([1 x tokens] or [heads x tokens]) the attention
  // is replaced by the given rows.
  StyleOutput Style(ad::Tape& tape, ad::Var reference,
                    const Eigen::MatrixXd* forced_weights = nullptr) const;
  ad::Var Embed(ad::Tape& tape, ad::Var mel) const;

  // Logits [1 x speakers]. The classifier sees r through a gradient-reversal
  // layer of the given scale unless `reverse` is false.
  ad::Var SpeakerLogits(ad::Tape& tape, ad::Var reference, double grl_scale,
                        bool reverse = true) const;

  // Rescales each convolution so that, over `mels`, its pre-activations have
  // zero mean and unit variance per channel. Relative scale between
  // utterances is preserved.
  void InitializeFromData(const std::vector<const Eigen::MatrixXd*>& mels);

  // Value projection of token k: what the layer outputs when every head
  // attends only to k.
  Eigen::MatrixXd TokenOutput(int k) const;

  const ContextConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  ContextConfig cfg_;
  std::string prefix_;
  struct Conv {
    ad::Parameter* weight = nullptr;
    ad::Parameter* bias = nullptr;
    int in_channels = 0;
    int freq = 0;
  };
  std::vector<Conv> convs_;
  nn::Gru rnn_;
  ad::Parameter* tokens_ = nullptr;
  nn::Linear query_;
  nn::Linear key_;
  nn::Linear value_;
  nn::Linear output_;
  nn::Mlp classifier_;
};

// Cross-entropy of speaker logits [1 x S] against `speaker_id`.
ad::Var SpeakerLoss(ad::Var logits, int speaker_id);

// Feed-forward map D_e -> D_e: g * e + MLP(e), with a learned per-dimension
// skip gate g that starts at zero.
class NextPredictor {
 public:
  NextPredictor() = default;
  NextPredictor(const ContextConfig& cfg, ad::ParameterStore* store,
                const std::string& prefix, Rng* rng);

  ad::Var Forward(ad::Tape& tape, ad::Var e_prev) const;
  // Opens the gate and zeroes the last layer so the map is exactly the identity.
  void SetIdentity();

 private:
  int dim_ = 0;
  nn::Mlp mlp_;
  ad::Parameter* skip_ = nullptr;
};

// Mean squared difference; the target is detached so no gradient reaches it.
ad::Var EmbeddingLoss(ad::Var predicted, ad::Var target);
double EmbeddingLoss(const Eigen::RowVectorXd& predicted,
                     const Eigen::RowVectorXd& target);

}  // namespace spontts

#endif  // SPONTTS_CONTEXT_H_
