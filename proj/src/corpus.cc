#include "spontts/corpus.h"

#include <cmath>

#include "spontts/errors.h"

namespace spontts {

std::string_view TagName(BehaviorTag tag) {
  switch (tag) {
    case BehaviorTag::kNone:
      return "NONE";
    case BehaviorTag::kFilledPause:
      return "FILLED_PAUSE";
    case BehaviorTag::kProlongation:
      return "PROLONGATION";
    case BehaviorTag::kBoth:
      return "BOTH";
  }
  return "NONE";
}

BehaviorTag ParseTag(std::string_view name) {
  for (BehaviorTag t : kAllBehaviorTags) {
    if (TagName(t) == name) return t;
  }
  throw ValidationError("unknown behavior tag '" + std::string(name) + "'");
}

BehaviorTag TagFromIndex(int index) {
  if (index < 0 || index >= kNumBehaviorTags) {
    throw ValidationError("behavior class index out of range: " +
                          std::to_string(index));
  }
  return static_cast<BehaviorTag>(index);
}

void ValidateTokens(const std::vector<TextToken>& tokens,
                    const std::string& where) {
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int level = tokens[i].prosody_level;
    if (level < 0 || level > 3) {
      throw ValidationError(where + ": token " + std::to_string(i) +
                            " has prosody_level " + std::to_string(level));
    }
  }
  if (!tokens.empty() && tokens.back().prosody_level != 3) {
    throw ValidationError(where + ": final token must have prosody_level 3");
  }
}

void ValidateMel(const Mel& mel, const std::string& where) {
  if (mel.frames() < 1 || mel.dim() < 1) {
    throw ValidationError(where + ": mel must have at least one frame");
  }
  if (!mel.data.allFinite()) {
    throw ValidationError(where + ": mel contains non-finite values");
  }
}

void ValidateConversation(const Conversation& conv) {
  for (size_t i = 0; i < conv.utterances.size(); ++i) {
    const Utterance& u = conv.utterances[i];
    if (u.turn_index != static_cast<int>(i) + 1) {
      throw ValidationError("conversation " + conv.conv_id +
                            ": expected turn_index " + std::to_string(i + 1) +
                            ", found " + std::to_string(u.turn_index));
    }
    if (u.speaker_id < 0 || u.speaker_id > 1) {
      throw ValidationError("conversation " + conv.conv_id + ": speaker_id " +
                            std::to_string(u.speaker_id) + " out of range");
    }
    if (i > 0 && conv.utterances[i - 1].speaker_id == u.speaker_id) {
      throw ValidationError("conversation " + conv.conv_id + ": turns " +
                            std::to_string(i) + " and " + std::to_string(i + 1) +
                            " share speaker " + std::to_string(u.speaker_id));
    }
  }
}

std::vector<ConversationPair> MakePairs(const Conversation& conv) {
  std::vector<ConversationPair> pairs;
  for (size_t i = 1; i < conv.utterances.size(); ++i) {
    pairs.push_back({conv.utterances[i - 1], conv.utterances[i]});
  }
  return pairs;
}

std::vector<ConversationPair> MakePairs(const std::vector<Conversation>& convs) {
  std::vector<ConversationPair> pairs;
  for (const Conversation& c : convs) {
    auto p = MakePairs(c);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()),
                 std::make_move_iterator(p.end()));
  }
  return pairs;
}

}  // namespace spontts
