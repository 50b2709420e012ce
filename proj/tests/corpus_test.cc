#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "doctest.h"
#include "spontts/corpus.h"
#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/synthetic.h"
#include "test_util.h"

using namespace spontts;
using spontts::testing::ScratchDir;

namespace {

std::string Line(const std::string& conv, int turn, int speaker) {
  return "{\"conv_id\":\"" + conv + "\",\"turn_index\":" + std::to_string(turn) +
         ",\"speaker_id\":" + std::to_string(speaker) +
         ",\"tokens\":[{\"char_id\":3,\"word_boundary\":true,\"prosody_level\":3,"
         "\"tag\":\"NONE\"}],\"mel_path\":\"\"}";
}

void WriteLines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

double Pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("load_manifest groups a single conversation") {
  ScratchDir dir("manifest1");
  WriteLines(dir / "m.jsonl", {Line("c", 1, 0), Line("c", 2, 1), Line("c", 3, 0)});
  const auto convs = LoadManifest(dir / "m.jsonl");
  REQUIRE(convs.size() == 1);
  CHECK(convs[0].utterances.size() == 3);
  CHECK(convs[0].utterances[2].speaker_id == 0);
}

TEST_CASE("load_manifest sorts interleaved conversations by turn") {
  ScratchDir dir("manifest2");
  const std::vector<std::pair<std::string, int>> records = {
      {"x", 2}, {"y", 1}, {"x", 1}, {"y", 3}, {"x", 3}, {"y", 2}};
  std::vector<std::string> lines;
  for (auto [c, t] : records) lines.push_back(Line(c, t, (t + (c == "y")) % 2));
  WriteLines(dir / "m.jsonl", lines);

  // Oracle: stable sort by (first appearance of conv, turn), then group.
  std::map<std::string, std::vector<int>> expected;
  for (auto [c, t] : records) expected[c].push_back(t);
  for (auto& [c, turns] : expected) std::sort(turns.begin(), turns.end());

  const auto convs = LoadManifest(dir / "m.jsonl");
  REQUIRE(convs.size() == 2);
  CHECK(convs[0].conv_id == "x");
  CHECK(convs[1].conv_id == "y");
  for (const auto& conv : convs) {
    std::vector<int> turns;
    for (const auto& u : conv.utterances) turns.push_back(u.turn_index);
    CHECK(turns == expected[conv.conv_id]);
  }
}

TEST_CASE("load_manifest rejects same-speaker consecutive turns") {
  ScratchDir dir("manifest3");
  WriteLines(dir / "m.jsonl", {Line("bad_conv", 1, 0), Line("bad_conv", 2, 1),
                               Line("bad_conv", 3, 1)});
  try {
    LoadManifest(dir / "m.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("bad_conv") != std::string::npos);
  }
}

TEST_CASE("load_manifest reports the line of a parse error") {
  ScratchDir dir("manifest4");
  WriteLines(dir / "m.jsonl", {Line("c", 1, 0), "{not json"});
  try {
    LoadManifest(dir / "m.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("m.jsonl:2") != std::string::npos);
  }
  WriteLines(dir / "m2.jsonl",
             {"{\"conv_id\":\"c\",\"turn_index\":1,\"speaker_id\":0,\"tokens\":"
              "[{\"char_id\":1,\"word_boundary\":true,\"prosody_level\":3,"
              "\"tag\":\"HUH\"}],\"mel_path\":\"\"}"});
  CHECK_THROWS_AS(LoadManifest(dir / "m2.jsonl"), ValidationError);
}

TEST_CASE("make_pairs enumerates adjacent turns") {
  Conversation conv;
  conv.conv_id = "c";
  for (int t = 1; t <= 3; ++t) {
    Utterance u;
    u.utt_id = "u" + std::to_string(t);
    u.turn_index = t;
    u.speaker_id = (t + 1) % 2;
    conv.utterances.push_back(u);
  }
  const auto pairs = MakePairs(conv);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].previous.utt_id == "u1");
  CHECK(pairs[0].current.utt_id == "u2");
  CHECK(pairs[1].previous.utt_id == "u2");
  CHECK(pairs[1].current.utt_id == "u3");

  Conversation single;
  single.utterances.push_back(conv.utterances[0]);
  CHECK(MakePairs(single).empty());
  CHECK(MakePairs(Conversation{}).empty());
}

TEST_CASE("MELF layout is bit-exact") {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6.5;
  const std::string bytes = EncodeMelf(m);
  REQUIRE(bytes.size() == 12 + 24);
  CHECK(bytes.substr(0, 4) == "MELF");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);
  // 6.5f = 0x40D00000, little-endian, last value.
  CHECK(static_cast<unsigned char>(bytes[35]) == 0x40);
  CHECK(static_cast<unsigned char>(bytes[34]) == 0xD0);
  CHECK(DecodeMelf(bytes, "mem") == m);
  CHECK_THROWS_AS(DecodeMelf(bytes.substr(0, 20), "mem"), ValidationError);
}

TEST_CASE("oracle duration rules") {
  const Lexicon& lex = Lexicon::Default();
  // char 0 has two phonemes.
  TextToken pl{0, true, 3, BehaviorTag::kProlongation};
  CHECK(OracleTokenFrames(pl, lex) == 16);
  // char 1 has one phoneme.
  TextToken fp{1, true, 3, BehaviorTag::kFilledPause};
  CHECK(OracleTokenFrames(fp, lex) == 10);
  TextToken both{1, true, 3, BehaviorTag::kBoth};
  CHECK(OracleTokenFrames(both, lex) == 14);

  const std::vector<TextToken> tokens = {{1, false, 0, BehaviorTag::kFilledPause},
                                         {0, true, 3, BehaviorTag::kNone}};
  const Eigen::MatrixXd mel = RenderOracleMel(tokens, 0, 1.0, lex, 16);
  REQUIRE(mel.rows() == 18);
  // Filler rows are 0.5 + speaker offset.
  const Eigen::RowVectorXd off = SpeakerOffset(0, 16);
  for (int r = 4; r < 10; ++r) {
    CHECK((mel.row(r) - (Eigen::RowVectorXd::Constant(16, 0.5) + off)).cwiseAbs().maxCoeff() <
          1e-6);
  }
}

TEST_CASE("synthetic corpus is deterministic and obeys its rules") {
  SynthConfig cfg;
  cfg.conversations = 60;
  cfg.turns = 5;
  const auto a = GenerateSyntheticCorpus(cfg, 17);
  const auto b = GenerateSyntheticCorpus(cfg, 17);
  ScratchDir da("synth_a"), db("synth_b");
  WriteManifest(da / "manifest.jsonl", a.conversations);
  WriteManifest(db / "manifest.jsonl", b.conversations);
  CHECK(ReadFileBytes(da / "manifest.jsonl") == ReadFileBytes(db / "manifest.jsonl"));
  CHECK(ReadFileBytes(da / "mels/conv0003_t02.mel") ==
        ReadFileBytes(db / "mels/conv0003_t02.mel"));

  // Round trip.
  CHECK(LoadManifest(da / "manifest.jsonl") == a.conversations);

  std::vector<double> prev, cur;
  for (size_t c = 0; c < a.conversations.size(); ++c) {
    const Conversation& conv = a.conversations[c];
    ValidateConversation(conv);
    for (const Utterance& u : conv.utterances) {
      CHECK(u.mel->frames() == OracleFrameCount(u.tokens, Lexicon::Default()));
      CHECK(u.tokens.back().prosody_level == 3);
      for (const TextToken& t : u.tokens) CHECK(t.tag == OracleTag(t));
    }
    const auto pairs = MakePairs(conv);
    CHECK(pairs.size() == conv.utterances.size() - 1);
    for (const auto& p : pairs) CHECK(p.previous.speaker_id != p.current.speaker_id);
    for (size_t n = 1; n < a.gammas[c].size(); ++n) {
      prev.push_back(a.gammas[c][n - 1]);
      cur.push_back(a.gammas[c][n]);
    }
  }
  REQUIRE(prev.size() >= 200);
  CHECK(Pearson(prev, cur) > 0.6);

  const auto other = GenerateSyntheticCorpus(cfg, 18);
  CHECK_FALSE(other.conversations == a.conversations);
}

TEST_CASE("synthetic config validation") {
  SynthConfig cfg;
  cfg.mel_dim = 0;
  CHECK_THROWS_AS(GenerateSyntheticCorpus(cfg, 1), ValidationError);
  cfg = SynthConfig{};
  cfg.min_tokens = 5;
  cfg.max_tokens = 3;
  CHECK_THROWS_AS(GenerateSyntheticCorpus(cfg, 1), ValidationError);
}
