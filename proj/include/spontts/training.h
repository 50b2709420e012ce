#ifndef SPONTTS_TRAINING_H_
#define SPONTTS_TRAINING_H_

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/acoustic.h"
#include "spontts/checkpoint.h"
#include "spontts/context.h"
#include "spontts/corpus.h"
#include "spontts/frontend.h"
#include "spontts/optimizer.h"

namespace spontts {

struct LossParts {
  double rcon = 0.0;
  double speaker_ce = 0.0;
  double embedding = 0.0;
  double stop = 0.0;
};

struct LossBreakdown {
  double l_rcon = 0.0;
  double l_speaker_ce = 0.0;
  double l_embedding = 0.0;
  double l_stop = 0.0;
  double total = 0.0;
  double lambda = 1.0;
  double beta = 1.0;

  nlohmann::json ToJson() const;
};

// total = rcon + lambda * speaker_ce + beta * embedding + stop. Throws
// NumericalError on a non-finite part and ValidationError on a negative one.
LossBreakdown TotalLoss(const LossParts& parts, double lambda, double beta);

enum class Stage { kPretrain, kFinetune };
const char* StageName(Stage stage);
Stage ParseStage(const std::string& name);

struct TrainConfig {
  double lambda = 1.0;
  double beta = 1.0;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  int batch_size = 4;
  int pretrain_epochs = 10;
  int epochs = 20;  // finetune
  uint64_t seed = 1;
  double grl_warmup_fraction = 0.1;
  Stage stage = Stage::kFinetune;
  bool use_grl = true;
  // Learning-rate multiplier for the speaker classifiers, so the adversary
  // keeps up with the encoders it is trained against.
  double classifier_lr_scale = 10.0;

  nlohmann::json ToJson() const;
  static TrainConfig FromJson(const nlohmann::json& j);
  void Validate() const;
};

struct TtsModelConfig {
  AcousticConfig acoustic;
  ContextConfig context;
  uint64_t init_seed = 7;

  nlohmann::json ToJson() const;
  static TtsModelConfig FromJson(const nlohmann::json& j);
};

// Everything trained jointly: the acoustic model, the previous-utterance
// encoder f_p, the current-utterance encoder f_c and the next predictor h.
// Parameter prefixes: text_encoder., semantic_encoder., speaker_table,
// decoder., f_p., f_c., next.
class TtsSystem {
 public:
  explicit TtsSystem(const TtsModelConfig& cfg);

  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }
  const TtsModelConfig& config() const { return cfg_; }
  const AcousticModel& acoustic() const { return *acoustic_; }
  const ContextEncoder& f_p() const { return f_p_; }
  const ContextEncoder& f_c() const { return f_c_; }
  const NextPredictor& next() const { return next_; }
  NextPredictor& mutable_next() { return next_; }

  // Data-dependent initialization of both reference encoders.
  void InitializeContextFromData(const std::vector<const Eigen::MatrixXd*>& mels);

  // f_p applied to a mel, as a plain row vector.
  Eigen::RowVectorXd PreviousEmbedding(const Mel& mel) const;

  Checkpoint ToCheckpoint() const;
  static std::unique_ptr<TtsSystem> FromCheckpoint(const Checkpoint& ckpt);

 private:
  TtsModelConfig cfg_;
  ad::ParameterStore store_;
  std::unique_ptr<AcousticModel> acoustic_;
  ContextEncoder f_p_;
  ContextEncoder f_c_;
  NextPredictor next_;
};

// Model-ready inputs for one utterance.
struct PreparedUtterance {
  std::string utt_id;
  int speaker_id = 0;
  std::vector<LinguisticFrame> frames;
  Eigen::MatrixXd semantic;
  std::optional<Mel> mel;
};

// With `strip_tags` every token is treated as NONE.
PreparedUtterance Prepare(const Utterance& utt, const Lexicon& lexicon,
                          const EmbeddingProvider& provider, bool strip_tags = false);

struct PreparedPair {
  PreparedUtterance previous;
  PreparedUtterance current;
};

std::vector<PreparedPair> PreparePairs(std::span<const ConversationPair> pairs,
                                       const Lexicon& lexicon,
                                       const EmbeddingProvider& provider);

// Decoder steps appended past the target end during training; their frames
// are stop-token positives and do not enter L_rcon.
inline constexpr int kStopPaddingSteps = 3;

// Teacher-forced decode of `utt` conditioned on `context` ([1 x D_e]);
// returns the predicted mel trimmed to the target length plus the loss parts.
struct TeacherForcedOutput {
  ad::Var mel;
  ad::Var rcon;
  ad::Var stop;
};
TeacherForcedOutput TeacherForced(ad::Tape& tape, const TtsSystem& system,
                                  const PreparedUtterance& utt, ad::Var context,
                                  Rng* dropout_rng);

// Forward and backward for one pair; gradients are added with weight
// `scale` into the store. `grl_scale` is the current reversal strength.
LossBreakdown AccumulatePair(TtsSystem& system, const PreparedPair& pair,
                             const TrainConfig& cfg, double grl_scale,
                             Rng* dropout_rng, double scale);
// Same for a flat pretraining utterance with zero context.
LossBreakdown AccumulateUtterance(TtsSystem& system, const PreparedUtterance& utt,
                                  Rng* dropout_rng, double scale);

// GRL strength after `step` of `total_steps`: linear ramp over the first
// warm-up fraction, then 1.
double GrlScale(int64_t step, int64_t total_steps, double warmup_fraction);

class Trainer {
 public:
  Trainer(TtsSystem* system, const TrainConfig& cfg);

  // One optimizer update on a batch; returns the batch-mean breakdown.
  LossBreakdown Step(std::span<const PreparedPair> batch, int64_t total_steps);
  LossBreakdown PretrainStep(std::span<const PreparedUtterance> batch);
  // Runs the reference encoders' data-dependent initialization on the mels
  // of `pairs`. Only valid before the first finetune step.
  void InitializeContext(std::span<const PreparedPair> pairs);

  Adam& optimizer() { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  const TtsSystem& system() const { return *system_; }
  int64_t steps() const { return adam_.steps(); }
  double last_grad_norm() const { return last_grad_norm_; }

  Checkpoint ToCheckpoint() const;
  // Restores parameters, optimizer moments and the step count.
  void Restore(const Checkpoint& ckpt);

 private:
  TtsSystem* system_;
  TrainConfig cfg_;
  Adam adam_;
  double last_grad_norm_ = 0.0;
};

// Indices of epoch `epoch` in a deterministic shuffled order.
std::vector<int> EpochOrder(int count, uint64_t seed, int epoch);

// Mean teacher-forced L_rcon without dropout. With `zero_context` the
// decoder sees a zero embedding instead of f_p(previous).
double EvaluateRcon(const TtsSystem& system, std::span<const PreparedPair> pairs,
                    bool zero_context = false);
double EvaluateRcon(const TtsSystem& system, std::span<const PreparedUtterance> utts);
// Mean embedding loss of h(f_p(previous)) against f_c(current).
double EvaluateEmbedding(const TtsSystem& system, std::span<const PreparedPair> pairs);

using LogFn = std::function<void(const nlohmann::json&)>;

// Runs whole epochs of one stage. Returns per-epoch validation loss (or the
// training loss when `validation` is empty).
std::vector<double> TrainFinetune(Trainer& trainer, std::span<const PreparedPair> train,
                                  std::span<const PreparedPair> validation, int epochs,
                                  const LogFn& log);
std::vector<double> TrainPretrain(Trainer& trainer,
                                  std::span<const PreparedUtterance> train, int epochs,
                                  const LogFn& log);

struct ScheduleResult {
  Checkpoint pretrain;
  Checkpoint final;
  std::vector<double> pretrain_eval;
  std::vector<double> finetune_eval;
};

// Pretrain on flat utterances with zero context and all-NONE tags, write
// `<out_dir>/pretrain.ckpt`, then finetune on pairs from that checkpoint and
// write `<out_dir>/final.ckpt`. With zero finetune epochs the final
// checkpoint is the pretrain checkpoint unchanged. An empty out_dir skips
// writing.
ScheduleResult RunSchedule(const TtsModelConfig& model_cfg, const TrainConfig& cfg,
                           std::span<const PreparedUtterance> pretrain,
                           std::span<const PreparedPair> train,
                           std::span<const PreparedPair> validation,
                           const std::string& out_dir, const LogFn& log);

// Finetune stage alone, starting from a pretrain checkpoint on disk.
Checkpoint RunFinetuneFrom(const std::string& pretrain_path, const TrainConfig& cfg,
                           std::span<const PreparedPair> train,
                           std::span<const PreparedPair> validation,
                           std::vector<double>* eval, const LogFn& log);

}  // namespace spontts

#endif  // SPONTTS_TRAINING_H_
