#include "spontts/synthetic.h"

#include <cstdio>

#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/rng.h"

namespace spontts {

namespace {
constexpr uint64_t kPhonemeSalt = 0xA11CE;
constexpr uint64_t kSpeakerSalt = 0x5BEA1;
constexpr uint64_t kTagSalt = 0x7A65;
}  // namespace

void SynthConfig::Validate() const {
  if (conversations < 0) throw ValidationError("conversations must be >= 0");
  if (turns < 1) throw ValidationError("turns must be >= 1");
  if (min_tokens < 1 || max_tokens < min_tokens) {
    throw ValidationError("tokens per utterance must satisfy 1 <= min <= max");
  }
  if (mel_dim < 1) throw ValidationError("mel_dim must be >= 1");
  if (!(gamma_min <= gamma_max)) throw ValidationError("gamma_min > gamma_max");
  if (gamma_noise < 0.0) throw ValidationError("gamma_noise must be >= 0");
}

Eigen::RowVectorXd PhonemeFeature(int phoneme_id, int tone_id, int mel_dim) {
  Eigen::RowVectorXd v(mel_dim);
  const uint64_t base = HashCombine(
      HashCombine(kPhonemeSalt, static_cast<uint64_t>(phoneme_id)),
      static_cast<uint64_t>(tone_id));
  for (int d = 0; d < mel_dim; ++d) {
    v(d) = HashToUnit(HashCombine(base, static_cast<uint64_t>(d)));
  }
  return v;
}

Eigen::RowVectorXd SpeakerOffset(int speaker_id, int mel_dim, double scale) {
  Eigen::RowVectorXd v(mel_dim);
  const uint64_t base = HashCombine(kSpeakerSalt, static_cast<uint64_t>(speaker_id));
  for (int d = 0; d < mel_dim; ++d) {
    v(d) = scale * (2.0 * HashToUnit(HashCombine(base, static_cast<uint64_t>(d))) - 1.0);
  }
  return v;
}

nlohmann::json SynthConfig::ToJson() const {
  return {{"conversations", conversations},
          {"turns", turns},
          {"min_tokens", min_tokens},
          {"max_tokens", max_tokens},
          {"mel_dim", mel_dim},
          {"gamma_min", gamma_min},
          {"gamma_max", gamma_max},
          {"gamma_noise", gamma_noise},
          {"speaker_offset_scale", speaker_offset_scale},
          {"tag_behaviors", tag_behaviors}};
}

SynthConfig SynthConfig::FromJson(const nlohmann::json& j) {
  SynthConfig c;
  c.conversations = j.value("conversations", c.conversations);
  c.turns = j.value("turns", c.turns);
  c.min_tokens = j.value("min_tokens", c.min_tokens);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.mel_dim = j.value("mel_dim", c.mel_dim);
  c.gamma_min = j.value("gamma_min", c.gamma_min);
  c.gamma_max = j.value("gamma_max", c.gamma_max);
  c.gamma_noise = j.value("gamma_noise", c.gamma_noise);
  c.speaker_offset_scale = j.value("speaker_offset_scale", c.speaker_offset_scale);
  c.tag_behaviors = j.value("tag_behaviors", c.tag_behaviors);
  c.Validate();
  return c;
}

BehaviorTag OracleTag(const TextToken& token) {
  if (token.prosody_level < 2) return BehaviorTag::kNone;
  const uint64_t h = HashCombine(kTagSalt, static_cast<uint64_t>(token.char_id));
  return TagFromIndex(1 + static_cast<int>(h % 3));
}

int OracleTokenFrames(const TextToken& token, const Lexicon& lexicon) {
  const int phonemes = static_cast<int>(lexicon.Lookup(token.char_id).size());
  int frames = phonemes * kFramesPerPhoneme;
  if (HasProlongation(token.tag)) frames *= 2;
  if (HasFilledPause(token.tag)) frames += kFillerFrames;
  return frames;
}

int OracleFrameCount(std::span<const TextToken> tokens, const Lexicon& lexicon) {
  int total = 0;
  for (const TextToken& t : tokens) total += OracleTokenFrames(t, lexicon);
  return total;
}

Eigen::MatrixXd RenderOracleMel(std::span<const TextToken> tokens,
                                int speaker_id, double gamma,
                                const Lexicon& lexicon, int mel_dim,
                                double speaker_offset_scale) {
  Eigen::MatrixXd mel(OracleFrameCount(tokens, lexicon), mel_dim);
  const Eigen::RowVectorXd filler = Eigen::RowVectorXd::Constant(mel_dim, kFillerValue);
  int row = 0;
  for (const TextToken& token : tokens) {
    const int repeat = HasProlongation(token.tag) ? 2 * kFramesPerPhoneme
                                                  : kFramesPerPhoneme;
    for (const Phone& p : lexicon.Lookup(token.char_id)) {
      const Eigen::RowVectorXd feature = PhonemeFeature(p.phoneme_id, p.tone_id, mel_dim);
      for (int i = 0; i < repeat; ++i) mel.row(row++) = feature;
    }
    if (HasFilledPause(token.tag)) {
      for (int i = 0; i < kFillerFrames; ++i) mel.row(row++) = filler;
    }
  }
  mel.rowwise() += SpeakerOffset(speaker_id, mel_dim, speaker_offset_scale);
  mel *= gamma;
  return RoundToFloat(mel);
}

std::vector<TextToken> SampleTokens(Rng& rng, const SynthConfig& cfg,
                                    const Lexicon& lexicon) {
  const int span = cfg.max_tokens - cfg.min_tokens + 1;
  const int count = cfg.min_tokens + static_cast<int>(rng.Below(span));
  std::vector<TextToken> tokens(count);
  for (int i = 0; i < count; ++i) {
    TextToken& t = tokens[i];
    t.char_id = static_cast<int>(rng.Below(lexicon.num_chars()));
    if (i + 1 == count) {
      t.prosody_level = 3;
    } else {
      const double u = rng.Uniform();
      t.prosody_level = u < 0.55 ? 0 : (u < 0.8 ? 1 : 2);
    }
    const bool extra_boundary = rng.Bernoulli(0.3);
    t.word_boundary = t.prosody_level >= 1 || extra_boundary;
    t.tag = cfg.tag_behaviors ? OracleTag(t) : BehaviorTag::kNone;
  }
  return tokens;
}

SyntheticCorpus GenerateSyntheticCorpus(const SynthConfig& cfg, uint64_t seed,
                                        const Lexicon& lexicon) {
  cfg.Validate();
  SyntheticCorpus corpus;
  for (int c = 0; c < cfg.conversations; ++c) {
    Rng rng(HashCombine(seed, static_cast<uint64_t>(c)));
    Conversation conv;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "conv%04d", c);
    conv.conv_id = buf;
    const int first_speaker = static_cast<int>(rng.Below(2));
    std::vector<double> gammas;
    double gamma = rng.Uniform(cfg.gamma_min, cfg.gamma_max);
    for (int n = 1; n <= cfg.turns; ++n) {
      if (n > 1) gamma = kEntrainment * gamma + cfg.gamma_noise * rng.Normal();
      Utterance u;
      u.conv_id = conv.conv_id;
      u.turn_index = n;
      u.speaker_id = (first_speaker + n - 1) % 2;
      std::snprintf(buf, sizeof(buf), "_t%02d", n);
      u.utt_id = conv.conv_id + buf;
      u.tokens = SampleTokens(rng, cfg, lexicon);
      Mel mel;
      mel.data = RenderOracleMel(u.tokens, u.speaker_id, gamma, lexicon,
                                 cfg.mel_dim, cfg.speaker_offset_scale);
      u.mel = std::move(mel);
      gammas.push_back(gamma);
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
    corpus.gammas.push_back(std::move(gammas));
  }
  return corpus;
}

}  // namespace spontts
