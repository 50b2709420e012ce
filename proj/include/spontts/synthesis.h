#ifndef SPONTTS_SYNTHESIS_H_
#define SPONTTS_SYNTHESIS_H_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "spontts/corpus.h"
#include "spontts/frontend.h"
#include "spontts/tagger.h"
#include "spontts/training.h"

namespace spontts {

struct ScriptTurn {
  int speaker_id = 0;
  std::vector<TextToken> tokens;
};

struct SynthesisRequest {
  std::vector<ScriptTurn> turns;
  double p = 0.0;
  // Keep the tags already on the tokens instead of running the tagger.
  bool use_script_tags = false;
  int max_frames = 400;
};

struct SynthesizedTurn {
  Mel mel;
  std::vector<BehaviorTag> tags;
  Eigen::RowVectorXd context;  // e_{n-1} the decoder was conditioned on
  bool overflow = false;
};

// Turn 1 is decoded with a zero context; turn n >= 2 with f_p applied to the
// synthesized mel of turn n - 1 (after float32 rounding, i.e. exactly what
// is written to disk). Tags come from the tagger's distribution and
// SelectBehaviors at frequency p.
std::vector<SynthesizedTurn> SynthConversation(const TtsSystem& system,
                                               const TaggerModel* tagger,
                                               const EmbeddingProvider& provider,
                                               const Lexicon& lexicon,
                                               const SynthesisRequest& request);

// Free-running decode of one utterance with explicit tags and context.
SynthesizedTurn SynthUtterance(const TtsSystem& system, const EmbeddingProvider& provider,
                               const Lexicon& lexicon, int speaker_id,
                               const std::vector<TextToken>& tokens,
                               const Eigen::RowVectorXd& context, int max_frames);

// Script <-> JSON: {"turns": [{"speaker_id": s, "tokens": [{"char_id": ..,
// "word_boundary": .., "prosody_level": .., "tag": ..}, ...]}, ...]}.
std::vector<ScriptTurn> ScriptFromJson(const nlohmann::json& j);
nlohmann::json ScriptToJson(const std::vector<ScriptTurn>& turns);
std::vector<ScriptTurn> ScriptFromConversation(const Conversation& conv);
void ValidateScript(const std::vector<ScriptTurn>& turns);

struct DurationRow {
  double p = 0.0;
  double mean_frames = 0.0;
  int samples = 0;
  int overflows = 0;
};

struct DurationReport {
  std::vector<DurationRow> rows;
  nlohmann::json ToJson() const;
};

// Mean free-running frame count per p over every turn of every script.
DurationReport DurationCurve(const TtsSystem& system, const TaggerModel& tagger,
                             const EmbeddingProvider& provider, const Lexicon& lexicon,
                             const std::vector<std::vector<ScriptTurn>>& scripts,
                             const std::vector<double>& p_grid, int max_frames = 400);

// Trains a fresh two-layer probe on a seeded 70/30 split of `embeddings`
// (one row per sample) and returns its accuracy on the 30%.
double ProbeSpeaker(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                    uint64_t seed, int epochs = 300);

// Spearman rank correlation with average ranks for ties.
double SpearmanCorrelation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace spontts

#endif  // SPONTTS_SYNTHESIS_H_
