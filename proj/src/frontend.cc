#include "spontts/frontend.h"

#include <filesystem>

#include "json.hpp"
#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/rng.h"

namespace spontts {

using json = nlohmann::json;

namespace {

// Kept in sync with data/lexicon.json (checked by frontend_test).
const std::vector<std::vector<std::pair<int, int>>> kDefaultTable = {
    {{2, 0}, {1, 0}},          {{4, 4}},
    {{3, 3}, {1, 2}, {2, 1}},  {{3, 4}, {3, 0}, {6, 4}},
    {{2, 2}},                  {{1, 3}, {0, 3}},
    {{0, 3}, {3, 1}},          {{0, 2}, {0, 1}},
    {{2, 2}, {6, 4}},          {{4, 0}},
    {{7, 2}, {3, 0}},          {{3, 3}, {5, 3}, {6, 3}},
    {{2, 3}, {6, 2}, {2, 1}},  {{7, 4}, {4, 2}},
    {{3, 3}, {6, 4}, {7, 2}},  {{0, 3}, {0, 0}},
    {{5, 1}, {5, 0}},          {{0, 3}, {7, 2}},
    {{5, 0}},                  {{1, 1}, {5, 4}},
    {{4, 1}},                  {{5, 0}},
    {{5, 3}, {6, 2}},          {{3, 4}},
    {{1, 2}, {5, 4}},          {{0, 0}, {3, 2}},
    {{6, 0}},                  {{1, 4}, {3, 1}, {3, 0}},
    {{4, 2}},                  {{4, 1}},
    {{4, 0}, {7, 4}},          {{0, 1}},
    {{0, 0}},                  {{6, 0}, {0, 1}, {1, 1}},
    {{2, 2}, {6, 2}, {1, 2}},  {{2, 0}, {7, 1}, {1, 3}},
    {{3, 3}},                  {{1, 1}, {1, 0}, {4, 4}},
    {{4, 4}},                  {{7, 2}, {1, 2}, {7, 3}},
};

}  // namespace

const Lexicon& Lexicon::Default() {
  static const Lexicon lexicon = [] {
    std::map<int, std::vector<Phone>> entries;
    for (size_t c = 0; c < kDefaultTable.size(); ++c) {
      for (const auto& [p, t] : kDefaultTable[c]) {
        entries[static_cast<int>(c)].push_back({p, t});
      }
    }
    return Lexicon(8, 5, std::move(entries));
  }();
  return lexicon;
}

Lexicon::Lexicon(int num_phonemes, int num_tones,
                 std::map<int, std::vector<Phone>> entries)
    : num_phonemes_(num_phonemes),
      num_tones_(num_tones),
      entries_(std::move(entries)) {
  for (const auto& [c, phones] : entries_) {
    if (phones.empty() || phones.size() > 3) {
      throw ValidationError("lexicon entry " + std::to_string(c) +
                            " must have 1..3 phonemes");
    }
    for (const Phone& p : phones) {
      if (p.phoneme_id < 0 || p.phoneme_id >= num_phonemes_ || p.tone_id < 0 ||
          p.tone_id >= num_tones_) {
        throw ValidationError("lexicon entry " + std::to_string(c) +
                              " has an out-of-range phoneme or tone");
      }
    }
  }
}

Lexicon Lexicon::FromJson(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::map<int, std::vector<Phone>> entries;
    for (const auto& [key, list] : j.at("entries").items()) {
      std::vector<Phone> phones;
      for (const json& pair : list) {
        phones.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
      }
      entries[std::stoi(key)] = std::move(phones);
    }
    return Lexicon(j.at("num_phonemes").get<int>(), j.at("num_tones").get<int>(),
                   std::move(entries));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("lexicon: ") + e.what());
  }
}

Lexicon Lexicon::FromFile(const std::string& path) {
  return FromJson(ReadFileBytes(path));
}

std::string Lexicon::ToJson() const {
  json entries = json::object();
  for (const auto& [c, phones] : entries_) {
    json list = json::array();
    for (const Phone& p : phones) list.push_back({p.phoneme_id, p.tone_id});
    entries[std::to_string(c)] = std::move(list);
  }
  return json{{"num_phonemes", num_phonemes_},
              {"num_tones", num_tones_},
              {"entries", std::move(entries)}}
      .dump();
}

const std::vector<Phone>& Lexicon::Lookup(int char_id) const {
  auto it = entries_.find(char_id);
  if (it == entries_.end()) {
    throw ValidationError("unknown char_id " + std::to_string(char_id));
  }
  return it->second;
}

std::vector<Phone> Phonemize(const TextToken& token, const Lexicon& lexicon) {
  return lexicon.Lookup(token.char_id);
}

std::vector<LinguisticFrame> ExpandTags(std::span<const TextToken> tokens,
                                        const Lexicon& lexicon) {
  std::vector<LinguisticFrame> frames;
  for (const TextToken& token : tokens) {
    const int pl = HasProlongation(token.tag) ? 1 : 0;
    const int fp = HasFilledPause(token.tag) ? 1 : 0;
    for (const Phone& p : Phonemize(token, lexicon)) {
      frames.push_back({p.phoneme_id, p.tone_id, token.prosody_level, pl, fp});
    }
  }
  return frames;
}

std::vector<int> PhonemeOwners(std::span<const TextToken> tokens,
                               const Lexicon& lexicon) {
  std::vector<int> owners;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const size_t n = lexicon.Lookup(tokens[i].char_id).size();
    owners.insert(owners.end(), n, static_cast<int>(i));
  }
  return owners;
}

HashEmbeddingProvider::HashEmbeddingProvider(int dim, uint64_t salt)
    : dim_(dim), salt_(salt) {
  if (dim <= 0) throw ValidationError("embedding dim must be positive");
}

Eigen::MatrixXd HashEmbeddingProvider::Embed(
    std::span<const TextToken> tokens) const {
  Eigen::MatrixXd out(static_cast<int>(tokens.size()), dim_);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].char_id < 0) {
      throw EmbeddingError(static_cast<int>(i), "negative char_id");
    }
    const uint64_t base = HashCombine(salt_, static_cast<uint64_t>(tokens[i].char_id));
    for (int d = 0; d < dim_; ++d) {
      out(static_cast<int>(i), d) =
          2.0 * HashToUnit(HashCombine(base, static_cast<uint64_t>(d))) - 1.0;
    }
  }
  return out;
}

Eigen::MatrixXd PrecomputedEmbeddingProvider::Embed(
    std::span<const TextToken> tokens) const {
  if (static_cast<Eigen::Index>(tokens.size()) != matrix_.rows()) {
    throw ValidationError("precomputed embedding has " +
                          std::to_string(matrix_.rows()) + " rows for " +
                          std::to_string(tokens.size()) + " tokens");
  }
  return matrix_;
}

bool EmbeddingCache::Has(const std::string& utt_id) const {
  return std::filesystem::exists(std::filesystem::path(dir_) / (utt_id + ".mel"));
}

Eigen::MatrixXd EmbeddingCache::Load(const std::string& utt_id) const {
  return ReadMelf((std::filesystem::path(dir_) / (utt_id + ".mel")).string());
}

void EmbeddingCache::Store(const std::string& utt_id,
                           const Eigen::MatrixXd& m) const {
  WriteMelf((std::filesystem::path(dir_) / (utt_id + ".mel")).string(), m);
}

Eigen::MatrixXd UpsampleSemantic(std::span<const TextToken> tokens,
                                 const EmbeddingProvider& provider,
                                 const Lexicon& lexicon) {
  const std::vector<int> owners = PhonemeOwners(tokens, lexicon);
  Eigen::MatrixXd embeddings;
  try {
    embeddings = provider.Embed(tokens);
  } catch (const EmbeddingError& e) {
    throw ValidationError("embedding provider failed at token " +
                          std::to_string(e.token_index()) + ": " + e.what());
  }
  if (embeddings.rows() != static_cast<Eigen::Index>(tokens.size()) ||
      embeddings.cols() != provider.dim()) {
    throw ValidationError("embedding provider returned " +
                          std::to_string(embeddings.rows()) + "x" +
                          std::to_string(embeddings.cols()) + " for " +
                          std::to_string(tokens.size()) + " tokens");
  }
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!embeddings.row(static_cast<int>(i)).allFinite()) {
      throw ValidationError("embedding provider produced non-finite values at token " +
                            std::to_string(i));
    }
  }
  Eigen::MatrixXd out(static_cast<int>(owners.size()), provider.dim());
  for (size_t i = 0; i < owners.size(); ++i) {
    out.row(static_cast<int>(i)) = embeddings.row(owners[i]);
  }
  return out;
}

}  // namespace spontts
