#ifndef SPONTTS_TAGGER_H_
#define SPONTTS_TAGGER_H_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/autodiff.h"
#include "spontts/checkpoint.h"
#include "spontts/corpus.h"
#include "spontts/frontend.h"
#include "spontts/nn.h"

namespace spontts {

// [M x 4] class probabilities in BehaviorTag index order.
struct TagDistribution {
  Eigen::MatrixXd probs;
  int tokens() const { return static_cast<int>(probs.rows()); }
};

struct TaggerConfig {
  int sem_dim = 32;
  int fc_dim = 64;
  int lstm_hidden = 32;  // per direction
  int epochs = 60;
  int batch_size = 10;
  double learning_rate = 3e-3;
  bool class_weighting = true;
  uint64_t seed = 1;

  nlohmann::json ToJson() const;
  static TaggerConfig FromJson(const nlohmann::json& j);
};

// Three fully connected layers, two bidirectional LSTM layers and a 4-way
// output layer over per-token [semantic embedding, word boundary, prosody
// one-hot] features.
class TaggerModel {
 public:
  explicit TaggerModel(const TaggerConfig& cfg);
  TaggerModel(const TaggerModel&) = delete;
  TaggerModel& operator=(const TaggerModel&) = delete;

  static int InputDim(int sem_dim) { return sem_dim + 1 + 4; }

  // Token features [M x InputDim]. Throws ValidationError when the provider
  // width does not match sem_dim.
  Eigen::MatrixXd Features(std::span<const TextToken> tokens,
                           const EmbeddingProvider& provider) const;
  ad::Var Logits(ad::Tape& tape, const Eigen::MatrixXd& features) const;
  TagDistribution Predict(std::span<const TextToken> tokens,
                          const EmbeddingProvider& provider) const;

  const TaggerConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  // Mean training loss per epoch, filled by TrainTagger.
  std::vector<double> epoch_losses;

  Checkpoint ToCheckpoint() const;
  static std::unique_ptr<TaggerModel> FromCheckpoint(const Checkpoint& ckpt);

 private:
  TaggerConfig cfg_;
  ad::ParameterStore store_;
  nn::Mlp front_;
  nn::Bidirectional<nn::Lstm> lstm1_;
  nn::Bidirectional<nn::Lstm> lstm2_;
  nn::Linear output_;
};

// Per-row argmax over all four classes; ties go to the lowest index.
std::vector<BehaviorTag> ArgmaxTags(const TagDistribution& dist);

// Frequency-controlled selection: the floor(p * M) tokens with the highest
// best-behavior probability receive that behavior, the rest NONE. Sort ties
// go to the lower token index; label ties to FILLED_PAUSE, then
// PROLONGATION, then BOTH. Throws ValidationError for p outside [0, 1].
std::vector<BehaviorTag> SelectBehaviors(const TagDistribution& dist, double p);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;    // gold count
  int predicted = 0;  // predicted count
  int true_positive = 0;
};

struct TagMetrics {
  std::array<ClassMetrics, kNumBehaviorTags> per_class;
  double accuracy = 0.0;
  int tokens = 0;
};

// One-vs-rest precision / recall / F1 per class over all sentences.
TagMetrics EvaluateTags(const std::vector<std::vector<BehaviorTag>>& pred,
                        const std::vector<std::vector<BehaviorTag>>& gold);

// Weighted cross-entropy training with Adam; class weights are inverse
// frequencies of the gold tags when enabled. epochs == 0 returns the freshly
// initialised model.
std::unique_ptr<TaggerModel> TrainTagger(
    const std::vector<std::vector<TextToken>>& sentences,
    const EmbeddingProvider& provider, const TaggerConfig& cfg);

std::vector<double> InverseFrequencyWeights(
    const std::vector<std::vector<TextToken>>& sentences);

}  // namespace spontts

#endif  // SPONTTS_TAGGER_H_
