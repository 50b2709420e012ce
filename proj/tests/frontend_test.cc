#include "doctest.h"
#include "spontts/errors.h"
#include "spontts/frontend.h"
#include "spontts/io.h"
#include "spontts/rng.h"

using namespace spontts;

TEST_CASE("phonemize uses the lexicon table") {
  const Lexicon& lex = Lexicon::Default();
  CHECK(lex.num_chars() == 40);
  CHECK(lex.num_phonemes() == 8);
  CHECK(lex.num_tones() == 5);
  const auto phones = Phonemize({0, true, 3, BehaviorTag::kNone}, lex);
  REQUIRE(phones.size() == 2);
  CHECK(phones[0] == Phone{2, 0});
  CHECK(phones[1] == Phone{1, 0});
  CHECK(Phonemize({7, false, 0, BehaviorTag::kNone}, lex) ==
        Phonemize({7, true, 2, BehaviorTag::kBoth}, lex));
  CHECK_THROWS_AS(Phonemize({40, true, 3, BehaviorTag::kNone}, lex), ValidationError);
  for (int c = 0; c < 40; ++c) {
    const auto n = lex.Lookup(c).size();
    CHECK(n >= 1);
    CHECK(n <= 3);
  }
}

TEST_CASE("shipped lexicon file equals the built-in table") {
  const Lexicon file = Lexicon::FromFile(std::string(SPONTTS_SOURCE_DIR) + "/data/lexicon.json");
  CHECK(file.ToJson() == Lexicon::Default().ToJson());
}

TEST_CASE("expand_tags replicates flags per phoneme") {
  const Lexicon& lex = Lexicon::Default();
  // char 0 -> 2 phonemes, char 2 -> 3 phonemes.
  std::vector<TextToken> fp = {{0, true, 3, BehaviorTag::kFilledPause}};
  auto frames = ExpandTags(fp, lex);
  REQUIRE(frames.size() == 2);
  for (const auto& f : frames) {
    CHECK(f.fp_flag == 1);
    CHECK(f.pl_flag == 0);
    CHECK(f.prosody_level == 3);
  }
  std::vector<TextToken> none = {{0, true, 3, BehaviorTag::kNone}};
  for (const auto& f : ExpandTags(none, lex)) CHECK((f.fp_flag == 0 && f.pl_flag == 0));
  std::vector<TextToken> both = {{2, true, 3, BehaviorTag::kBoth}};
  frames = ExpandTags(both, lex);
  REQUIRE(frames.size() == 3);
  for (const auto& f : frames) CHECK((f.fp_flag == 1 && f.pl_flag == 1));
}

TEST_CASE("changing one tag changes exactly that token's frames") {
  const Lexicon& lex = Lexicon::Default();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TextToken> tokens(2 + rng.Below(6));
    for (auto& t : tokens) {
      t.char_id = static_cast<int>(rng.Below(40));
      t.prosody_level = static_cast<int>(rng.Below(3));
      t.tag = TagFromIndex(static_cast<int>(rng.Below(4)));
    }
    tokens.back().prosody_level = 3;
    const auto base = ExpandTags(tokens, lex);
    const auto owners = PhonemeOwners(tokens, lex);
    const size_t k = rng.Below(tokens.size());
    auto changed = tokens;
    changed[k].tag = TagFromIndex((TagIndex(tokens[k].tag) + 1 + rng.Below(3)) % 4);
    const auto after = ExpandTags(changed, lex);
    REQUIRE(after.size() == base.size());
    for (size_t i = 0; i < base.size(); ++i) {
      CHECK((base[i] == after[i]) == (owners[i] != static_cast<int>(k)));
    }
    // Alignment of the two phoneme-level streams.
    HashEmbeddingProvider provider(8);
    CHECK(UpsampleSemantic(tokens, provider, lex).rows() ==
          static_cast<Eigen::Index>(base.size()));
  }
}

TEST_CASE("upsample_semantic replicates token rows") {
  const Lexicon& lex = Lexicon::Default();
  HashEmbeddingProvider provider(32);
  // char 0 -> 2 phonemes, char 1 -> 1 phoneme.
  std::vector<TextToken> tokens = {{0, true, 1, BehaviorTag::kNone},
                                   {1, true, 3, BehaviorTag::kNone}};
  const Eigen::MatrixXd emb = provider.Embed(tokens);
  const Eigen::MatrixXd up = UpsampleSemantic(tokens, provider, lex);
  REQUIRE(up.rows() == 3);
  CHECK(up.row(0) == emb.row(0));
  CHECK(up.row(1) == emb.row(0));
  CHECK(up.row(2) == emb.row(1));

  std::vector<TextToken> one = {{1, true, 3, BehaviorTag::kNone}};
  CHECK(UpsampleSemantic(one, provider, lex) == provider.Embed(one));

  const Eigen::MatrixXd empty = UpsampleSemantic({}, provider, lex);
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 32);
  CHECK(provider.Embed(tokens) == provider.Embed(tokens));
}

TEST_CASE("embedding failures name the token") {
  class Failing : public EmbeddingProvider {
   public:
    Eigen::MatrixXd Embed(std::span<const TextToken>) const override {
      throw EmbeddingError(1, "offline");
    }
    int dim() const override { return 4; }
  };
  std::vector<TextToken> tokens = {{0, true, 1, BehaviorTag::kNone},
                                   {1, true, 3, BehaviorTag::kNone}};
  try {
    UpsampleSemantic(tokens, Failing{}, Lexicon::Default());
    FAIL("expected failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("token 1") != std::string::npos);
  }
  PrecomputedEmbeddingProvider wrong(Eigen::MatrixXd::Zero(3, 4));
  CHECK_THROWS_AS(UpsampleSemantic(tokens, wrong, Lexicon::Default()), ValidationError);
}
