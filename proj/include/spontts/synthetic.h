#ifndef SPONTTS_SYNTHETIC_H_
#define SPONTTS_SYNTHETIC_H_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/corpus.h"
#include "spontts/frontend.h"
#include "spontts/rng.h"

namespace spontts {

// Rendering rules of the synthetic conversation corpus. These constants are
// the ground truth that the acceptance checks compare against.
inline constexpr int kFramesPerPhoneme = 4;
inline constexpr int kFillerFrames = 6;
inline constexpr double kFillerValue = 0.5;
inline constexpr double kEntrainment = 0.8;

struct SynthConfig {
  int conversations = 20;
  int turns = 4;
  int min_tokens = 4;
  int max_tokens = 8;
  int mel_dim = 16;
  double gamma_min = 0.6;
  double gamma_max = 1.4;
  double gamma_noise = 0.05;  // std-dev of the per-turn innovation
  double speaker_offset_scale = 0.3;
  // false renders every token untagged (used for the pretraining set).
  bool tag_behaviors = true;

  void Validate() const;
  nlohmann::json ToJson() const;
  static SynthConfig FromJson(const nlohmann::json& j);
};

struct SyntheticCorpus {
  std::vector<Conversation> conversations;
  // gammas[c][n] is the entrainment scale of turn n + 1 in conversation c.
  std::vector<std::vector<double>> gammas;
};

// Feature vector of one phoneme frame: fixed pseudorandom values in [0, 1].
Eigen::RowVectorXd PhonemeFeature(int phoneme_id, int tone_id, int mel_dim);
// Additive per-speaker offset.
Eigen::RowVectorXd SpeakerOffset(int speaker_id, int mel_dim,
                                 double scale = 0.3);

// Tokens breaking at prosody level >= 2 get a behavior chosen by a hash of
// char_id; all others are NONE.
BehaviorTag OracleTag(const TextToken& token);

// Frames rendered for one token: phonemes * 4, doubled by prolongation, plus
// 6 filler frames for a filled pause.
int OracleTokenFrames(const TextToken& token, const Lexicon& lexicon);
int OracleFrameCount(std::span<const TextToken> tokens, const Lexicon& lexicon);

// Renders gamma * (phoneme frames + filler frames + speaker offset), rounded
// to float32.
Eigen::MatrixXd RenderOracleMel(std::span<const TextToken> tokens,
                                int speaker_id, double gamma,
                                const Lexicon& lexicon, int mel_dim,
                                double speaker_offset_scale = 0.3);

// Random untagged-or-oracle-tagged token sequence (final token breaks at 3).
std::vector<TextToken> SampleTokens(Rng& rng, const SynthConfig& cfg,
                                    const Lexicon& lexicon);

// Deterministic in (cfg, seed); each conversation draws from its own stream
// derived from the seed and its index.
SyntheticCorpus GenerateSyntheticCorpus(const SynthConfig& cfg, uint64_t seed,
                                        const Lexicon& lexicon = Lexicon::Default());

}  // namespace spontts

#endif  // SPONTTS_SYNTHETIC_H_
