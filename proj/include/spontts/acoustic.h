#ifndef SPONTTS_ACOUSTIC_H_
#define SPONTTS_ACOUSTIC_H_

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/autodiff.h"
#include "spontts/corpus.h"
#include "spontts/frontend.h"
#include "spontts/nn.h"

namespace spontts {

class Rng;

struct AcousticConfig {
  int num_phonemes = 8;
  int num_tones = 5;
  int phoneme_embed_dim = 32;
  int tone_embed_dim = 8;
  int text_dim = 64;      // D_enc
  int semantic_in_dim = 32;  // D_sem
  int semantic_dim = 32;  // D_b
  int num_speakers = 2;
  int speaker_dim = 32;
  int context_dim = 64;   // D_e
  int mel_dim = 16;
  int reduction = 2;
  std::vector<int> prenet_dims = {64, 32};
  double prenet_dropout = 0.5;
  int attention_rnn_dim = 128;
  int decoder_rnn_dim = 128;
  int gmm_components = 3;

  int memory_dim() const { return text_dim + semantic_dim; }
  nlohmann::json ToJson() const;
  static AcousticConfig FromJson(const nlohmann::json& j);
  void Validate() const;
};

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kAlignmentFloor = 1e-8;

// Mixture state carried between decoder steps. `means` is [1 x K].
struct AttentionState {
  ad::Var means;
};

struct AttentionStepResult {
  ad::Var weights;  // [1 x N]
  ad::Var mixture;  // [1 x K], simplex
  ad::Var means;    // [1 x K]
  ad::Var sigmas;   // [1 x K]
};

// GMM attention with softplus mean advance. `raw` is [1 x 3K] laid out as
// (mixture logits, mean advance, width); the means move by softplus(advance)
// and widths are softplus(width) + kSigmaFloor.
AttentionStepResult AttentionFromRaw(ad::Var raw, const AttentionState& state,
                                     int memory_length);

struct DecodeOptions {
  // Teacher-forced when set; output then has ceil(T / r) * r frames.
  const Mel* teacher = nullptr;
  int max_frames = 400;
  // Extra teacher-forced steps past the end of the target, fed with the last
  // target frame. Training uses them as stop-token positives, the way padded
  // batches do.
  int teacher_padding_steps = 0;
  // Prenet dropout is active only when an rng is supplied.
  Rng* dropout_rng = nullptr;
  bool record_alignment = false;
};

struct DecodeResult {
  ad::Var mel;          // [frames x mel_dim]
  ad::Var stop_logits;  // [frames x 1]
  bool overflow = false;  // free run hit max_frames without a stop
  std::vector<Eigen::RowVectorXd> alignments;
  std::vector<Eigen::RowVectorXd> attention_means;
};

// Text encoder, semantic encoder, speaker table and the attention decoder.
// Parameters live in a caller-owned store under the prefixes text_encoder.,
// semantic_encoder., speaker_table and decoder.
class AcousticModel {
 public:
  AcousticModel(const AcousticConfig& cfg, ad::ParameterStore* store, Rng* rng);

  ad::Var EncodeText(ad::Tape& tape,
                     std::span<const LinguisticFrame> frames) const;
  ad::Var EncodeSemantic(ad::Tape& tape, const Eigen::MatrixXd& semantic) const;
  ad::Var SpeakerEmbedding(ad::Tape& tape, int speaker_id) const;

  // text [N x D_enc] and semantic [N x D_b] are concatenated into the
  // attention memory; speaker [1 x S] and context [1 x D_e] join every
  // decoder step's recurrent inputs.
  DecodeResult Decode(ad::Tape& tape, ad::Var text, ad::Var speaker,
                      ad::Var context, ad::Var semantic,
                      const DecodeOptions& options) const;

  const AcousticConfig& config() const { return cfg_; }

 private:
  AcousticConfig cfg_;
  ad::Parameter* phoneme_table_ = nullptr;
  ad::Parameter* tone_table_ = nullptr;
  ad::Parameter* speaker_table_ = nullptr;
  nn::Cbhg text_encoder_;
  nn::Cbhg semantic_encoder_;
  nn::Mlp prenet_;
  nn::Gru attention_rnn_;
  nn::Linear attention_params_;
  nn::Gru decoder_rnn_;
  nn::Linear frame_proj_;
  nn::Linear stop_proj_;
};

// Mean squared error over all entries; shapes must match.
double ReconstructionLoss(const Mel& predicted, const Mel& target);
ad::Var ReconstructionLoss(ad::Var predicted, ad::Var target);

// Stop targets for a padded teacher-forced output: 1 from frame T-1 onward.
Eigen::MatrixXd StopTargets(int target_frames, int output_frames);

// Number of frames a free-running decode keeps: up to and including the first
// frame whose stop probability exceeds 0.5.
int FramesUntilStop(const Eigen::MatrixXd& stop_logits);

}  // namespace spontts

#endif  // SPONTTS_ACOUSTIC_H_
