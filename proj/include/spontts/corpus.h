#ifndef SPONTTS_CORPUS_H_
#define SPONTTS_CORPUS_H_

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spontts {

// Per-token spontaneous behavior. The integer value is the class index used
// by the tagger's output distribution.
enum class BehaviorTag : int {
  kNone = 0,
  kFilledPause = 1,
  kProlongation = 2,
  kBoth = 3,
};

inline constexpr int kNumBehaviorTags = 4;
inline constexpr std::array<BehaviorTag, 4> kAllBehaviorTags = {
    BehaviorTag::kNone, BehaviorTag::kFilledPause, BehaviorTag::kProlongation,
    BehaviorTag::kBoth};

std::string_view TagName(BehaviorTag tag);
// Accepts the names produced by TagName ("NONE", "FILLED_PAUSE", ...).
BehaviorTag ParseTag(std::string_view name);
BehaviorTag TagFromIndex(int index);
inline int TagIndex(BehaviorTag tag) { return static_cast<int>(tag); }
inline bool HasProlongation(BehaviorTag t) {
  return t == BehaviorTag::kProlongation || t == BehaviorTag::kBoth;
}
inline bool HasFilledPause(BehaviorTag t) {
  return t == BehaviorTag::kFilledPause || t == BehaviorTag::kBoth;
}

struct TextToken {
  int char_id = 0;
  bool word_boundary = false;
  int prosody_level = 0;  // break index after the token, 0..3
  BehaviorTag tag = BehaviorTag::kNone;

  bool operator==(const TextToken&) const = default;
};

// [frames x mel_dim] spectrogram.
struct Mel {
  Eigen::MatrixXd data;
  double frame_shift_ms = 12.5;

  int frames() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }
  bool operator==(const Mel& other) const {
    return data.rows() == other.data.rows() && data.cols() == other.data.cols() &&
           data == other.data;
  }
};

struct Utterance {
  std::string utt_id;
  int speaker_id = 0;
  std::vector<TextToken> tokens;
  std::optional<Mel> mel;
  std::string conv_id;
  int turn_index = 1;

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string conv_id;
  std::vector<Utterance> utterances;

  bool operator==(const Conversation&) const = default;
};

struct ConversationPair {
  Utterance previous;
  Utterance current;
};

// Throws ValidationError naming the conversation when speakers do not
// alternate or turn indices are not 1, 2, ..., n.
void ValidateConversation(const Conversation& conv);
// Token-level checks: prosody in 0..3 and 3 on the final token.
void ValidateTokens(const std::vector<TextToken>& tokens,
                    const std::string& where);
// Finite entries and at least one frame.
void ValidateMel(const Mel& mel, const std::string& where);

// One pair per adjacent (previous, current) utterance in order.
std::vector<ConversationPair> MakePairs(const Conversation& conv);
std::vector<ConversationPair> MakePairs(const std::vector<Conversation>& convs);

}  // namespace spontts

#endif  // SPONTTS_CORPUS_H_
