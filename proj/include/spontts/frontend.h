#ifndef SPONTTS_FRONTEND_H_
#define SPONTTS_FRONTEND_H_

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spontts/corpus.h"

namespace spontts {

struct Phone {
  int phoneme_id = 0;
  int tone_id = 0;
  bool operator==(const Phone&) const = default;
};

// Toy pronunciation lexicon: char_id -> 1..3 (phoneme, tone) pairs.
class Lexicon {
 public:
  // The built-in 40-character table (8 phonemes, 5 tones); identical to
  // data/lexicon.json.
  static const Lexicon& Default();
  static Lexicon FromJson(const std::string& text);
  static Lexicon FromFile(const std::string& path);
  std::string ToJson() const;

  Lexicon(int num_phonemes, int num_tones,
          std::map<int, std::vector<Phone>> entries);

  // Throws ValidationError for an unknown char_id.
  const std::vector<Phone>& Lookup(int char_id) const;
  bool Contains(int char_id) const { return entries_.count(char_id) > 0; }
  int num_phonemes() const { return num_phonemes_; }
  int num_tones() const { return num_tones_; }
  int num_chars() const { return static_cast<int>(entries_.size()); }

 private:
  int num_phonemes_;
  int num_tones_;
  std::map<int, std::vector<Phone>> entries_;
};

// Phoneme-level input row of the text encoder.
struct LinguisticFrame {
  int phoneme_id = 0;
  int tone_id = 0;
  int prosody_level = 0;
  int pl_flag = 0;
  int fp_flag = 0;
  bool operator==(const LinguisticFrame&) const = default;
};

std::vector<Phone> Phonemize(const TextToken& token, const Lexicon& lexicon);

// Copies each token's behavior flags and prosody level onto every phoneme of
// the token.
std::vector<LinguisticFrame> ExpandTags(std::span<const TextToken> tokens,
                                        const Lexicon& lexicon);

// Index of the owning token for every phoneme.
std::vector<int> PhonemeOwners(std::span<const TextToken> tokens,
                               const Lexicon& lexicon);

// Raised by providers that cannot embed a token.
class EmbeddingError : public std::runtime_error {
 public:
  EmbeddingError(int token_index, const std::string& what)
      : std::runtime_error(what), token_index_(token_index) {}
  int token_index() const { return token_index_; }

 private:
  int token_index_;
};

// Character-level embedding source.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // [tokens x dim()]; must be deterministic in the token content.
  virtual Eigen::MatrixXd Embed(std::span<const TextToken> tokens) const = 0;
  virtual int dim() const = 0;
};

// char_id -> fixed pseudorandom vector with entries in [-1, 1]. Negative
// char_ids are rejected.
class HashEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(int dim = 32, uint64_t salt = 0x5EED);
  Eigen::MatrixXd Embed(std::span<const TextToken> tokens) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
  uint64_t salt_;
};

// Serves one precomputed matrix (e.g. from an on-disk embedding cache); the
// token count must match its row count.
class PrecomputedEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit PrecomputedEmbeddingProvider(Eigen::MatrixXd matrix)
      : matrix_(std::move(matrix)) {}
  Eigen::MatrixXd Embed(std::span<const TextToken> tokens) const override;
  int dim() const override { return static_cast<int>(matrix_.cols()); }

 private:
  Eigen::MatrixXd matrix_;
};

// Embedding cache directory holding `<utt_id>.mel` MELF matrices.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string dir) : dir_(std::move(dir)) {}
  bool Has(const std::string& utt_id) const;
  Eigen::MatrixXd Load(const std::string& utt_id) const;
  void Store(const std::string& utt_id, const Eigen::MatrixXd& m) const;

 private:
  std::string dir_;
};

// [phonemes x D_sem]: row i is the embedding of the token owning phoneme i.
Eigen::MatrixXd UpsampleSemantic(std::span<const TextToken> tokens,
                                 const EmbeddingProvider& provider,
                                 const Lexicon& lexicon);

}  // namespace spontts

#endif  // SPONTTS_FRONTEND_H_
